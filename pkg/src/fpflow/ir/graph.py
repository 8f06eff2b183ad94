"""Dataflow graph: typed nodes, operand edges with sample delays, named ports."""

from __future__ import annotations

import copy
import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .types import BitsT, FixedT, FloatT, FusedT, SignalType, parse_type, type_str

# operand count per kind; None means variadic (checked by the kind itself)
ARITY = {
    "input": 0, "output": 1, "const": 0, "register": 1, "counter": 0,
    "add": 2, "sub": 2, "mul": 2, "div": 2, "fma": 3, "neg": 1,
    "fused_add": 2, "fused_sub": 2, "fused_mul": 2, "normalize": 1, "cast": 1,
    "convert": 1, "reinterpret": 1, "mux": None, "rom_lookup": 1, "slice": 1,
    "concat": 2, "cmp": 2, "func": 1, "func_reduce": 1, "func_reconstruct": 2,
    # bit-level primitives of lowered netlists
    "u_add": 2, "u_sub": 2, "u_mul": 2, "u_and": 2, "u_or": 2, "u_xor": 2,
    "u_not": 1, "u_shl": 2, "u_shr": 2, "u_lzc": 1, "u_eq": 2, "u_ult": 2,
    "u_slt": 2, "u_orr": 1, "u_resize": 1, "u_divu": 2, "u_modu": 2,
}

ARITH_KINDS = ("add", "sub", "mul", "div", "fma", "neg")
FUSED_KINDS = ("fused_add", "fused_sub", "fused_mul", "normalize")


@dataclass
class Node:
    id: str
    kind: str
    out: SignalType
    attrs: dict = field(default_factory=dict)

    def is_fixed_op(self) -> bool:
        return isinstance(self.out, FixedT) and self.kind in ARITH_KINDS


@dataclass
class Edge:
    src: str
    dst: str
    port: int
    sample_delay: int = 0
    regs: int = 0  # pipeline registers requested by a timing pass


@dataclass
class Port:
    name: str
    direction: str  # "in" | "out"
    type: SignalType
    length: Optional[int] = None  # None for scalars


Operand = Union[str, tuple]


class Graph:
    def __init__(self, name: str = "design"):
        self.name = name
        self.nodes: dict[str, Node] = {}
        self.edges: list[Edge] = []
        self.ports: list[Port] = []
        self.attrs: dict = {}

    # -- structure -----------------------------------------------------------
    def add_node(self, node: Node) -> str:
        if node.id in self.nodes:
            raise ValueError(f"duplicate node id {node.id!r}")
        self.nodes[node.id] = node
        return node.id

    def connect(self, src: str, dst: str, port: int, sample_delay: int = 0, regs: int = 0):
        self.edges.append(Edge(src, dst, port, sample_delay, regs))

    def in_edges(self, nid: str) -> list[Edge]:
        return sorted((e for e in self.edges if e.dst == nid), key=lambda e: e.port)

    def out_edges(self, nid: str) -> list[Edge]:
        return [e for e in self.edges if e.src == nid]

    def operand_map(self) -> dict[str, list[Edge]]:
        ops: dict[str, list[Edge]] = defaultdict(list)
        for e in self.edges:
            ops[e.dst].append(e)
        for v in ops.values():
            v.sort(key=lambda e: e.port)
        return ops

    def fanout_map(self) -> dict[str, list[Edge]]:
        outs: dict[str, list[Edge]] = defaultdict(list)
        for e in self.edges:
            outs[e.src].append(e)
        return outs

    def inputs(self) -> list[Node]:
        return [n for n in self.nodes.values() if n.kind == "input"]

    def outputs(self) -> list[Node]:
        return [n for n in self.nodes.values() if n.kind == "output"]

    def port(self, name: str) -> Port:
        for p in self.ports:
            if p.name == name:
                return p
        raise KeyError(name)

    def io_nodes(self, name: str) -> list[Node]:
        """I/O nodes of a port, ordered by vector index."""
        found = [n for n in self.nodes.values()
                 if n.kind in ("input", "output") and n.attrs.get("port") == name]
        return sorted(found, key=lambda n: n.attrs.get("index") or 0)

    def copy(self) -> "Graph":
        return copy.deepcopy(self)

    def fresh_id(self, stem: str) -> str:
        i = len(self.nodes)
        while f"{stem}{i}" in self.nodes:
            i += 1
        return f"{stem}{i}"

    def signature(self) -> list[tuple]:
        return [(p.name, p.direction, str(p.type), p.length) for p in self.ports]

    def count_kinds(self) -> dict[str, int]:
        counts: dict[str, int] = defaultdict(int)
        for n in self.nodes.values():
            counts[n.kind] += 1
        return dict(counts)

    def combinational_order(self) -> list[str]:
        """Topological order over zero-delay dependencies.

        Raises ``ValueError`` naming the nodes of a combinational loop.
        """
        deps: dict[str, set] = {nid: set() for nid in self.nodes}
        for e in self.edges:
            if e.sample_delay == 0 and self.nodes[e.dst].kind != "register":
                deps[e.dst].add(e.src)
            elif self.nodes[e.dst].kind == "register" and e.sample_delay == 0 \
                    and self.nodes[e.dst].attrs.get("depth", 1) == 0:
                deps[e.dst].add(e.src)
        order, state = [], {}
        for start in self.nodes:
            if start in state:
                continue
            stack = [(start, iter(sorted(deps[start])))]
            state[start] = 1
            while stack:
                nid, it = stack[-1]
                nxt = next(it, None)
                if nxt is None:
                    stack.pop()
                    state[nid] = 2
                    order.append(nid)
                    continue
                st = state.get(nxt)
                if st == 1:
                    loop = [s for s, _ in stack]
                    loop = loop[loop.index(nxt):]
                    raise ValueError(f"combinational loop through {' -> '.join(loop)}")
                if st is None:
                    state[nxt] = 1
                    stack.append((nxt, iter(sorted(deps[nxt]))))
        return order

    # -- serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "attrs": self.attrs,
            "ports": [{"name": p.name, "direction": p.direction, "type": type_str(p.type),
                       "length": p.length} for p in self.ports],
            "nodes": [{"id": n.id, "kind": n.kind, "type": type_str(n.out),
                       "attrs": _encode_attrs(n.attrs)} for n in self.nodes.values()],
            "edges": [{"from": e.src, "to": e.dst, "port": e.port,
                       "sample_delay": e.sample_delay, **({"regs": e.regs} if e.regs else {})}
                      for e in self.edges],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=False) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "Graph":
        g = cls(d.get("name", "design"))
        g.attrs = dict(d.get("attrs", {}))
        for p in d.get("ports", []):
            g.ports.append(Port(p["name"], p["direction"], parse_type(p["type"]), p.get("length")))
        for n in d["nodes"]:
            g.add_node(Node(n["id"], n["kind"], parse_type(n["type"]), _decode_attrs(n.get("attrs", {}))))
        for e in d["edges"]:
            g.connect(e["from"], e["to"], e["port"], e.get("sample_delay", 0), e.get("regs", 0))
        return g

    @classmethod
    def from_json(cls, text: str) -> "Graph":
        return cls.from_dict(json.loads(text))

    def __repr__(self):
        return f"Graph({self.name!r}, {len(self.nodes)} nodes, {len(self.edges)} edges)"


_HEX_KEYS = ("value",)


def _encode_attrs(attrs: dict) -> dict:
    out = {}
    for k, v in attrs.items():
        if k in _HEX_KEYS and isinstance(v, int):
            out[k] = hex(v)
        elif k == "contents":
            out[k] = [hex(x) for x in v]
        else:
            out[k] = v
    return out


def _decode_attrs(attrs: dict) -> dict:
    out = {}
    for k, v in attrs.items():
        if k in _HEX_KEYS and isinstance(v, str):
            out[k] = int(v, 16)
        elif k == "contents":
            out[k] = [int(x, 16) if isinstance(x, str) else x for x in v]
        else:
            out[k] = v
    return out


class GraphBuilder:
    """Incremental construction helper; operands are node ids or ``(id, delay)``."""

    def __init__(self, name: str = "design"):
        self.g = Graph(name)
        self._n = 0

    def _id(self, stem: str) -> str:
        self._n += 1
        nid = f"{stem}{self._n}"
        while nid in self.g.nodes:
            self._n += 1
            nid = f"{stem}{self._n}"
        return nid

    def op(self, kind: str, out: SignalType, *operands: Operand, name: Optional[str] = None,
           **attrs) -> str:
        nid = name or self._id(kind)
        self.g.add_node(Node(nid, kind, out, dict(attrs)))
        for i, o in enumerate(operands):
            src, delay = (o, 0) if isinstance(o, str) else o
            self.g.connect(src, nid, i, delay)
        return nid

    def input(self, name: str, t: SignalType) -> str:
        self.g.ports.append(Port(name, "in", t))
        return self.op("input", t, name=f"in_{name}", port=name, index=None)

    def vector_input(self, name: str, t: SignalType, length: int) -> list[str]:
        self.g.ports.append(Port(name, "in", t, length))
        return [self.op("input", t, name=f"in_{name}_{i}", port=name, index=i)
                for i in range(length)]

    def output(self, name: str, src: Operand) -> str:
        sid = src if isinstance(src, str) else src[0]
        t = self.g.nodes[sid].out
        self.g.ports.append(Port(name, "out", t))
        return self.op("output", t, src, name=f"out_{name}", port=name, index=None)

    def vector_output(self, name: str, srcs: list) -> list[str]:
        t = self.g.nodes[srcs[0] if isinstance(srcs[0], str) else srcs[0][0]].out
        self.g.ports.append(Port(name, "out", t, len(srcs)))
        return [self.op("output", t, s, name=f"out_{name}_{i}", port=name, index=i)
                for i, s in enumerate(srcs)]

    def const(self, t: SignalType, value: int) -> str:
        return self.op("const", t, value=value)

    def fused_zero(self, fmt) -> str:
        return self.op("const", FusedT(fmt), value=0)

    def build(self) -> Graph:
        return self.g


# -- validation ----------------------------------------------------------------

def _same_fixed(t) -> bool:
    return isinstance(t, FixedT)


def _check_node(g: Graph, n: Node, ops: list[Edge], diags: list[str]):
    kind = n.kind
    if kind not in ARITY:
        diags.append(f"node {n.id}: unknown kind {kind!r}")
        return
    want = ARITY[kind]
    if want is not None and len(ops) != want:
        diags.append(f"node {n.id} ({kind}): expects {want} operands, has {len(ops)}")
        return
    ports = [e.port for e in ops]
    if ports != list(range(len(ops))):
        diags.append(f"node {n.id}: operand ports {ports} are not 0..{len(ops) - 1}")
        return
    ts = [g.nodes[e.src].out for e in ops]
    a = n.attrs

    def mismatch(what, t1, t2):
        diags.append(f"node {n.id} ({kind}): {what} type mismatch: {t1} vs {t2}")

    if kind in ("add", "sub", "mul", "div", "fma", "neg"):
        if isinstance(n.out, FloatT):
            for t in ts:
                if t != n.out:
                    mismatch("operand", t, n.out)
        elif isinstance(n.out, FixedT):
            if kind in ("div", "fma"):
                diags.append(f"node {n.id}: fixed-point {kind} is not supported")
            for t in ts:
                if not isinstance(t, FixedT):
                    mismatch("operand", t, n.out)
        else:
            diags.append(f"node {n.id}: {kind} cannot produce {n.out}")
    elif kind in ("fused_add", "fused_sub"):
        if ts[0] != ts[1]:
            mismatch("operand", ts[0], ts[1])
        elif not isinstance(ts[0], FusedT):
            diags.append(f"node {n.id}: fused adder fed by {ts[0]}")
        elif n.out != FusedT(ts[0].fmt.at_level(ts[0].fmt.level + 1)):
            mismatch("output", n.out, FusedT(ts[0].fmt.at_level(ts[0].fmt.level + 1)))
    elif kind == "fused_mul":
        if ts[0] != ts[1] or not isinstance(ts[0], FusedT) or ts[0].fmt.level != 0:
            mismatch("operand", ts[0], ts[1])
    elif kind == "normalize":
        if not isinstance(ts[0], FusedT) or not isinstance(n.out, FusedT) or n.out.fmt.level != 0:
            mismatch("operand", ts[0], n.out)
    elif kind == "cast":
        to = a.get("to")
        if to == "fused":
            if not (isinstance(ts[0], FloatT) and isinstance(n.out, FusedT)
                    and n.out.fmt.base == ts[0].fmt and n.out.fmt.level == 0):
                mismatch("cast", ts[0], n.out)
        elif to == "ieee":
            if not (isinstance(ts[0], FusedT) and isinstance(n.out, FloatT)
                    and ts[0].fmt.base == n.out.fmt and ts[0].fmt.level == 0):
                mismatch("cast", ts[0], n.out)
        else:
            diags.append(f"node {n.id}: cast needs to=fused|ieee")
    elif kind == "reinterpret":
        if ts[0].width != n.out.width:
            mismatch("reinterpret width", ts[0], n.out)
    elif kind == "rom_lookup":
        contents = a.get("contents")
        if contents is None:
            diags.append(f"node {n.id}: ROM without contents")
        elif len(contents) < (1 << ts[0].width):
            diags.append(f"node {n.id}: ROM of {len(contents)} words addressed by "
                         f"{ts[0].width} bits (addresses out of range)")
        elif any(not 0 <= c < (1 << n.out.width) for c in contents):
            diags.append(f"node {n.id}: ROM word wider than {n.out}")
    elif kind == "mux":
        if len(ops) < 2:
            diags.append(f"node {n.id}: mux needs a select and at least one input")
        else:
            for t in ts[1:]:
                if t.width != n.out.width:
                    mismatch("mux data", t, n.out)
    elif kind == "register":
        if a.get("depth", 1) < 0:
            diags.append(f"node {n.id}: negative register depth")
    elif kind == "const":
        if not 0 <= a.get("value", 0) < (1 << n.out.width):
            diags.append(f"node {n.id}: constant does not fit {n.out}")
    elif kind == "output":
        if ts[0] != n.out:
            mismatch("output", ts[0], n.out)
    elif kind == "slice":
        lo = a.get("lo", 0)
        if lo < 0 or lo + n.out.width > ts[0].width:
            diags.append(f"node {n.id}: slice [{lo}+{n.out.width}) outside {ts[0]}")
    elif kind == "concat":
        if ts[0].width + ts[1].width != n.out.width:
            mismatch("concat width", f"{ts[0]}+{ts[1]}", n.out)


def validate(g: Graph) -> list[str]:
    """Structural diagnostics; empty iff the graph is well formed."""
    diags: list[str] = []
    ops: dict[str, list[Edge]] = defaultdict(list)
    for e in g.edges:
        bad = [x for x in (e.src, e.dst) if x not in g.nodes]
        if bad:
            diags.append(f"edge {e.src} -> {e.dst}: dangling reference to {', '.join(bad)}")
            continue
        ops[e.dst].append(e)
    for lst in ops.values():
        lst.sort(key=lambda e: e.port)
    for n in g.nodes.values():
        _check_node(g, n, ops.get(n.id, []), diags)
    port_names = {p.name for p in g.ports}
    for n in g.nodes.values():
        if n.kind in ("input", "output") and n.attrs.get("port") not in port_names:
            diags.append(f"node {n.id}: refers to undeclared port {n.attrs.get('port')!r}")
    for p in g.ports:
        kind = "input" if p.direction == "in" else "output"
        found = [n for n in g.io_nodes(p.name) if n.kind == kind]
        expect = 1 if p.length is None else p.length
        if len(found) != expect:
            diags.append(f"port {p.name}: expected {expect} {kind} nodes, found {len(found)}")
        for n in found:
            if n.out != p.type:
                diags.append(f"port {p.name}: node {n.id} typed {n.out}, port typed {p.type}")
    if not diags:
        try:
            g.combinational_order()
        except ValueError as exc:
            diags.append(str(exc))
    return diags


def check(g: Graph) -> Graph:
    diags = validate(g)
    if diags:
        raise ValueError("invalid graph:\n  " + "\n  ".join(diags))
    return g
