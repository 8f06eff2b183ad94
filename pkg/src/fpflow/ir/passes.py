"""Accuracy-oriented graph rewrites: adder-tree balancing and FMA fusion."""

from __future__ import annotations

from .graph import Edge, Graph, Node, check
from .types import FixedT, FloatT, FusedT


def _chain_key(n: Node):
    return (n.out, n.attrs.get("rounding", "rne"), n.attrs.get("overflow", "wrap"))


def balance_adder_tree(g: Graph) -> Graph:
    """Replace linear chains of additions by balanced binary trees.

    An add is absorbed into its consumer when the consumer is an add of the
    same type and rounding, the connecting edge has no sample delay, and the add
    has no other fan-out. The rewrite changes rounding order, hence results.
    """
    check(g)
    out = g.copy()
    fan = out.fanout_map()
    ops = out.operand_map()

    def absorbed(nid: str) -> bool:
        n = out.nodes[nid]
        if n.kind != "add" or len(fan.get(nid, [])) != 1:
            return False
        e = fan[nid][0]
        c = out.nodes[e.dst]
        return c.kind == "add" and e.sample_delay == 0 and e.regs == 0 and _chain_key(c) == _chain_key(n)

    roots = [n for n in out.nodes.values() if n.kind == "add" and not absorbed(n.id)]
    for root in roots:
        leaves: list[Edge] = []
        interior: list[str] = []
        depth = 0

        def walk(nid, d):
            nonlocal depth
            depth = max(depth, d)
            for e in ops[nid]:
                if absorbed(e.src) and out.nodes[e.src].kind == "add":
                    interior.append(e.src)
                    walk(e.src, d + 1)
                else:
                    leaves.append(e)

        walk(root.id, 1)
        n = len(leaves)
        if n < 3 or depth <= (n - 1).bit_length():
            continue
        for nid in interior:
            del out.nodes[nid]
        gone = set(interior) | {root.id}
        out.edges = [e for e in out.edges if e.dst not in gone]
        terms = [(e.src, e.sample_delay, e.regs) for e in leaves]
        while len(terms) > 2:
            nxt = []
            for i in range(0, len(terms) - 1, 2):
                nid = out.fresh_id(f"{root.id}_t")
                out.add_node(Node(nid, "add", root.out, dict(root.attrs)))
                for port, (src, d, r) in enumerate(terms[i:i + 2]):
                    out.connect(src, nid, port, d, r)
                nxt.append((nid, 0, 0))
            if len(terms) % 2:
                nxt.append(terms[-1])
            terms = nxt
        for port, (src, d, r) in enumerate(terms):
            out.connect(src, root.id, port, d, r)
    return check(out)


def fuse_mul_add(g: Graph) -> Graph:
    """Merge a floating-point multiply into the add it solely feeds (one rounding)."""
    check(g)
    out = g.copy()
    fan = out.fanout_map()
    ops = out.operand_map()
    for add in list(out.nodes.values()):
        if add.kind != "add" or not isinstance(add.out, FloatT):
            continue
        for e in ops[add.id]:
            m = out.nodes.get(e.src)
            if (m is None or m.kind != "mul" or m.out != add.out
                    or m.attrs.get("rounding", "rne") != add.attrs.get("rounding", "rne")
                    or len(fan.get(m.id, [])) != 1 or e.sample_delay or e.regs):
                continue
            other = next(x for x in ops[add.id] if x is not e)
            mul_ops = ops[m.id]
            del out.nodes[m.id]
            out.edges = [x for x in out.edges if x.dst not in (m.id, add.id)]
            add.kind = "fma"
            for port, src in enumerate(mul_ops):
                out.connect(src.src, add.id, port, src.sample_delay, src.regs)
            out.connect(other.src, add.id, 2, other.sample_delay, other.regs)
            fan = out.fanout_map()
            ops = out.operand_map()
            break
    return check(out)


def fuse_float_ops(g: Graph, guard: int = 2, max_level: int = 6) -> Graph:
    """Carry chains of rounded float add/sub/mul in the fused format.

    Operands entering a region are cast once; multipliers take level-0 values
    (a deeper operand is normalized first); adders equalize levels by adding a
    fused zero to the shallower operand. Values leaving the region (to other
    kinds, outputs or sample-delayed edges) are normalized and cast back under
    the original node id, so ports and external references are unchanged.
    """
    from ..fusedfp import FusedFormat

    check(g)
    ops = g.operand_map()
    fan = g.fanout_map()

    def fusable(n: Node) -> bool:
        return (n.kind in ("add", "sub", "mul") and isinstance(n.out, FloatT)
                and n.attrs.get("rounding", "rne") == "rne"
                and all(g.nodes[e.src].out == n.out for e in ops.get(n.id, [])))

    region = {nid for nid, n in g.nodes.items() if fusable(n)}
    if not region:
        return g.copy()
    out = Graph(g.name)
    out.ports = list(g.ports)
    out.attrs = dict(g.attrs)

    def add(kind, t, *operands, **attrs):
        nid = out.fresh_id(f"fz_{kind}")
        out.add_node(Node(nid, kind, t, attrs))
        for port, (src, d) in enumerate(operands):
            out.connect(src, nid, port, d)
        return nid

    fmt_of = {}
    rep: dict = {}       # region node -> (fused node id, level)
    casts: dict = {}

    def fmt0(n):
        return FusedFormat(n.out.fmt, guard, 0)

    def entering(e, f0):
        key = (e.src, e.sample_delay)
        if key not in casts:
            casts[key] = add("cast", FusedT(f0), key, to="fused")
        return casts[key], 0

    def promote(x, lvl, target, f0):
        while lvl < target:
            z = add("const", FusedT(f0.at_level(lvl)), value=0)
            x = add("fused_add", FusedT(f0.at_level(lvl + 1)), (x, 0), (z, 0))
            lvl += 1
        return x

    def level0(x, lvl, f0):
        return (x, 0) if lvl == 0 else (add("normalize", FusedT(f0), (x, 0)), 0)

    for n in g.nodes.values():
        if n.id not in region:
            out.add_node(Node(n.id, n.kind, n.out, dict(n.attrs)))
    for nid in g.combinational_order():
        if nid not in region:
            continue
        n = g.nodes[nid]
        f0 = fmt0(n)
        args = []
        for e in ops[nid]:
            if e.src in region and e.sample_delay == 0 and e.regs == 0:
                args.append(rep[e.src])
            else:
                args.append(entering(e, f0))
        if n.kind == "mul":
            a, b = (level0(x, lvl, f0)[0] for x, lvl in args)
            rep[nid] = (add("fused_mul", FusedT(f0), (a, 0), (b, 0), form="level0"), 0)
        else:
            (a, la), (b, lb) = args
            top = max(la, lb)
            if top + 1 > max_level:
                a, b = (level0(x, lvl, f0)[0] for x, lvl in args)
                la = lb = top = 0
            a, b = promote(a, la, top, f0), promote(b, lb, top, f0)
            kind = "fused_add" if n.kind == "add" else "fused_sub"
            rep[nid] = (add(kind, FusedT(f0.at_level(top + 1)), (a, 0), (b, 0)), top + 1)
        fmt_of[nid] = f0
    for nid in region:
        leaves = any(e.dst not in region or e.sample_delay or e.regs for e in fan.get(nid, []))
        if not leaves:
            continue
        x, lvl = rep[nid]
        if lvl:
            x = add("normalize", FusedT(fmt_of[nid]), (x, 0))
        out.add_node(Node(nid, "cast", g.nodes[nid].out, {"to": "ieee"}))
        out.connect(x, nid, 0)
    for e in g.edges:
        if e.dst not in region:
            out.connect(e.src, e.dst, e.port, e.sample_delay, e.regs)
    # region nodes that neither leave nor feed anything are dropped
    return check(out)
