"""Resource sharing when the clock runs ``f`` times faster than the data.

Two strategies are provided. :func:`tdm_fold` time-multiplexes compatible
operators onto shared units chosen by simulated annealing and emits a folded
graph (slot counter, operand multiplexers, capture registers). :func:`alu_fold`
compiles the design into a program for a small custom processor whose
functional units are allocated greedily; :func:`run_alu_program` interprets
it.
"""

from __future__ import annotations

import functools
import itertools
import json
import math
import random
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from .analysis import tile_multiplier
from .ir.graph import Graph, Node, check
from .ir.sim import BEHAVIORAL_KERNELS, run, simulate_behavioral
from .ir.trace import Trace
from .ir.types import BitsT, FixedT, FloatT, FusedT, type_str
from .pipeline import absorb_registers
from .softfloat import FixedFormat


class FoldError(ValueError):
    pass


@dataclass
class FoldConfig:
    f: int
    mode: str = "auto"                 # tdm | alu | auto
    t0: Optional[float] = None         # initial temperature; default 5% of the flat cost
    cooling: float = 0.95
    proposals_per_node: int = 200
    seed: int = 0
    dsp_cost: int = 600
    tile_set: tuple = ((18, 18),)
    shareable: tuple = ("mul", "add", "sub", "fma", "div")

    def __post_init__(self):
        if self.f < 1:
            raise FoldError("folding factor must be >= 1")
        if self.mode not in ("tdm", "alu", "auto"):
            raise FoldError(f"unknown folding mode {self.mode!r}")

    def resolved_mode(self) -> str:
        if self.mode != "auto":
            return self.mode
        if self.f < 10:
            return "tdm"
        if self.f > 100:
            return "alu"
        warnings.warn(f"f={self.f} lies between the TDM and ALU regimes; using TDM")
        return "tdm"


def _bits(n: int) -> int:
    return max(1, (n - 1).bit_length())


# -- sharing classes and costs ---------------------------------------------------------------

@dataclass(frozen=True)
class _OpInfo:
    """Per-node data for the sharing model."""

    nid: str
    cls: tuple
    port_widths: tuple      # operand widths after sign extension / alignment
    port_shift: tuple       # left shift aligning each operand (fixed add/sub)
    port_signed: tuple
    out_width: int          # raw unit result width
    raw_frac: int           # fraction bits of the raw result (fixed ops)


def _op_info(g: Graph, n: Node, shareable) -> Optional[_OpInfo]:
    if n.kind not in shareable:
        return None
    ins = [g.nodes[e.src].out for e in g.in_edges(n.id)]
    if isinstance(n.out, FixedT) and n.kind in ("mul", "add", "sub"):
        if not all(isinstance(t, FixedT) for t in ins):
            return None
        fmts = [t.fmt for t in ins]
        signed = tuple(f.signed for f in fmts)
        if n.kind == "mul":
            widths = tuple(f.width + (0 if f.signed else 1) for f in fmts)
            shifts = (0, 0)
            w = max(widths)
            return _OpInfo(n.id, ("fixed", "mul"), widths, shifts, signed, 2 * w,
                           sum(f.frac for f in fmts))
        fr = max(f.frac for f in fmts)
        shifts = tuple(fr - f.frac for f in fmts)
        widths = tuple(f.width + s + (0 if f.signed else 1) for f, s in zip(fmts, shifts))
        w = max(widths) + 1
        return _OpInfo(n.id, ("fixed", n.kind), widths, shifts, signed, w, fr)
    if isinstance(n.out, FloatT) and all(t == n.out for t in ins):
        key = (n.kind, n.out.fmt.name, n.attrs.get("rounding", "rne"))
        w = n.out.width
        return _OpInfo(n.id, ("float",) + key, tuple(w for _ in ins), tuple(0 for _ in ins),
                       tuple(False for _ in ins), w, 0)
    return None


@functools.lru_cache(maxsize=None)
def _tiles(a: int, b: int, tile_set: tuple) -> int:
    return tile_multiplier(a, b, tile_set).cost[0]


class CostModel:
    def __init__(self, infos: dict, cfg: FoldConfig):
        self.infos = infos
        self.cfg = cfg

    def unit_width(self, group) -> int:
        return max(max(self.infos[v].port_widths) for v in group)

    def unit_cost(self, group) -> int:
        info = self.infos[group[0]]
        w = self.unit_width(group)
        cls = info.cls
        if cls[0] == "fixed":
            if cls[1] == "mul":
                return _tiles(w, w, self.cfg.tile_set) * self.cfg.dsp_cost
            return w + 1
        kind = cls[1]
        p = int(cls[2].split("m")[1]) + 1
        if kind in ("mul", "fma"):
            return _tiles(p, p, self.cfg.tile_set) * self.cfg.dsp_cost + 4 * w
        if kind == "div":
            return 2 * _tiles(p, p, self.cfg.tile_set) * self.cfg.dsp_cost + 8 * w
        return 8 * w

    def group_cost(self, group) -> int:
        c = self.unit_cost(group)
        if len(group) > 1:
            g = len(group)
            info = self.infos[group[0]]
            w = self.unit_width(group)
            outw = max(self.infos[v].out_width for v in group)
            c += len(info.port_widths) * g * w          # operand multiplexers
            c += g * outw                               # clock-enabled capture registers
        return c

    def cost(self, groups) -> int:
        total = sum(self.group_cost(gp) for gp in groups)
        if any(len(gp) > 1 for gp in groups):
            total += _bits(self.cfg.f)                    # slot counter
        return total


# -- slot scheduling ------------------------------------------------------------------------------

def _zero_delay_ancestors(g: Graph, nodes: set) -> dict:
    """For each node in ``nodes``: members of ``nodes`` upstream over zero-delay edges."""
    ops = g.operand_map()
    memo: dict = {}

    def anc(v):
        if v in memo:
            return memo[v]
        memo[v] = frozenset()
        acc = set()
        for e in ops.get(v, []):
            if e.sample_delay == 0:
                if e.src in nodes:
                    acc.add(e.src)
                acc |= anc(e.src)
        memo[v] = frozenset(acc)
        return memo[v]

    for v in g.combinational_order():
        anc(v)
    return {v: memo[v] for v in nodes}


def list_schedule(groups, anc: dict, f: Optional[int] = None) -> tuple[dict, int]:
    """Slot per shared op; one op per group per slot; predecessors strictly earlier."""
    shared = [v for gp in groups if len(gp) > 1 for v in gp]
    sset = set(shared)
    preds = {v: [a for a in anc[v] if a in sset] for v in shared}
    succs = defaultdict(list)
    for v, ps in preds.items():
        for p in ps:
            succs[p].append(v)
    height: dict = {}

    def h(v):
        if v not in height:
            height[v] = 1 + max((h(s) for s in succs[v]), default=0)
        return height[v]

    group_of = {v: i for i, gp in enumerate(groups) for v in gp}
    slot: dict = {}
    t = 0
    remaining = set(shared)
    while remaining:
        busy = set()
        for v in sorted(remaining, key=lambda v: (-h(v), v)):
            gi = group_of[v]
            if gi in busy:
                continue
            if all(p in slot and slot[p] < t for p in preds[v]):
                slot[v] = t
                busy.add(gi)
        remaining -= {v for v in list(remaining) if v in slot}
        t += 1
    return slot, (max(slot.values()) + 1 if slot else 0)


# -- assignment search ------------------------------------------------------------------------------

@dataclass
class SharingAssignment:
    groups: list
    slots: dict
    cost: int
    flat_cost: int
    makespan: int = 0

    def units(self, cls=None) -> int:
        return len(self.groups)

    def to_dict(self) -> dict:
        return {"groups": self.groups, "slots": self.slots, "cost": self.cost,
                "flat_cost": self.flat_cost, "makespan": self.makespan}


class _Problem:
    def __init__(self, g: Graph, cfg: FoldConfig):
        self.g = absorb_registers(g)
        for e in self.g.edges:
            if e.sample_delay < 0:
                raise FoldError("fold the logical graph: negative sample delays remain")
        self.cfg = cfg
        self.infos = {}
        for n in self.g.nodes.values():
            info = _op_info(self.g, n, cfg.shareable)
            if info is not None:
                self.infos[n.id] = info
        self.model = CostModel(self.infos, cfg)
        self.anc = _zero_delay_ancestors(self.g, set(self.infos))
        self.classes = defaultdict(list)
        for v, info in sorted(self.infos.items()):
            self.classes[info.cls].append(v)

    def evaluate(self, groups) -> tuple[float, dict, int]:
        if any(len(gp) > self.cfg.f for gp in groups):
            return math.inf, {}, 0
        slots, span = list_schedule(groups, self.anc)
        c = self.model.cost(groups)
        if span > self.cfg.f:
            c += 10 ** 6 * (span - self.cfg.f)
        return c, slots, span

    def flat(self) -> list:
        return [[v] for v in sorted(self.infos)]


def _set_partitions(items, cap):
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest, cap):
        for i in range(len(part)):
            if len(part[i]) < cap:
                yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def exhaustive_assignment(g: Graph, cfg: FoldConfig) -> SharingAssignment:
    """Minimum-cost assignment by enumerating every partition of every class."""
    pb = _Problem(g, cfg)
    flat = pb.model.cost(pb.flat())
    per_class = [list(_set_partitions(vs, cfg.f)) for vs in pb.classes.values()]
    best = None
    for combo in itertools.product(*per_class):
        groups = [gp for part in combo for gp in part]
        c, slots, span = pb.evaluate(groups)
        if best is None or c < best[0]:
            best = (c, groups, slots, span)
    c, groups, slots, span = best
    return SharingAssignment(_canonical(groups), slots, c, flat, span)


def _canonical(groups):
    return sorted((sorted(gp) for gp in groups), key=lambda gp: gp[0])


def anneal_assignment(g: Graph, cfg: FoldConfig) -> SharingAssignment:
    pb = _Problem(g, cfg)
    rng = random.Random(cfg.seed)
    state = pb.flat()
    flat_cost = pb.model.cost(state)
    cur, _, _ = pb.evaluate(state)
    best = (cur, [list(gp) for gp in state])
    nodes = sorted(pb.infos)
    if len(nodes) < 2 or cfg.f == 1:
        c, slots, span = pb.evaluate(state)
        return SharingAssignment(_canonical(state), slots, c, flat_cost, span)
    T = cfg.t0 if cfg.t0 is not None else 0.05 * max(flat_cost, 1)
    n_prop = cfg.proposals_per_node * len(nodes)
    per_step = max(1, len(nodes))
    cls_of = {v: pb.infos[v].cls for v in nodes}
    for it in range(n_prop):
        cand = _propose(state, rng, cls_of, cfg.f)
        if cand is None:
            continue
        c, _, _ = pb.evaluate(cand)
        if c <= cur or (T > 0 and rng.random() < math.exp(-(c - cur) / T)):
            state, cur = cand, c
            if c < best[0]:
                best = (c, [list(gp) for gp in cand])
        if (it + 1) % per_step == 0:
            T *= cfg.cooling
    c, slots, span = pb.evaluate(best[1])
    return SharingAssignment(_canonical(best[1]), slots, c, flat_cost, span)


def _propose(state, rng, cls_of, f):
    groups = [list(gp) for gp in state]
    move = rng.choice(("move", "swap", "merge", "split"))
    idx = list(range(len(groups)))
    if move == "move":
        i = rng.choice(idx)
        v = rng.choice(groups[i])
        targets = [j for j in idx if j != i and cls_of[groups[j][0]] == cls_of[v] and len(groups[j]) < f]
        groups[i].remove(v)
        if targets and rng.random() < 0.8:
            groups[rng.choice(targets)].append(v)
        else:
            groups.append([v])
    elif move == "swap":
        i, j = rng.sample(idx, 2) if len(idx) > 1 else (0, 0)
        if i == j or cls_of[groups[i][0]] != cls_of[groups[j][0]]:
            return None
        a, b = rng.choice(groups[i]), rng.choice(groups[j])
        groups[i][groups[i].index(a)] = b
        groups[j][groups[j].index(b)] = a
    elif move == "merge":
        pairs = [(i, j) for i in idx for j in idx if i < j and cls_of[groups[i][0]] == cls_of[groups[j][0]]
                 and len(groups[i]) + len(groups[j]) <= f]
        if not pairs:
            return None
        i, j = rng.choice(pairs)
        groups[i] += groups[j]
        del groups[j]
    else:
        big = [i for i in idx if len(groups[i]) > 1]
        if not big:
            return None
        i = rng.choice(big)
        members = groups[i][:]
        rng.shuffle(members)
        cut = rng.randint(1, len(members) - 1)
        groups[i] = members[:cut]
        groups.append(members[cut:])
    return [gp for gp in groups if gp]


# -- folded graph construction ------------------------------------------------------------------

def _scaled(attrs: dict, f: int, only_start: bool = False) -> dict:
    """Attributes with a data-rate start cycle rescaled to clock cycles."""
    out = {} if only_start else dict(attrs)
    if attrs.get("start_cycle"):
        out["start_cycle"] = attrs["start_cycle"] * f
    return out


def build_folded(g: Graph, assignment: SharingAssignment, cfg: FoldConfig) -> Graph:
    pb = _Problem(g, cfg)
    src = pb.g
    f = cfg.f
    out = Graph(f"{src.name}_fold{f}")
    out.ports = list(src.ports)
    out.attrs = dict(src.attrs, fold=f)
    shared_groups = [gp for gp in assignment.groups if len(gp) > 1]
    shared = {v for gp in shared_groups for v in gp}
    for n in src.nodes.values():
        if n.kind == "counter":
            raise FoldError(f"node {n.id}: data-rate counters cannot be folded")
        if n.id not in shared:
            out.add_node(Node(n.id, n.kind, n.out, _scaled(n.attrs, f)))
    cw = _bits(f)

    def new(kind, t, *operands, **attrs):
        nid = out.fresh_id(attrs.pop("stem", kind))
        out.add_node(Node(nid, kind, t, attrs))
        for i, o in enumerate(operands):
            s, d = (o, 0) if isinstance(o, str) else o
            out.connect(s, nid, i, d)
        return nid

    ctr = new("counter", BitsT(cw), modulus=f, stem="fold_slot")

    @functools.lru_cache(maxsize=None)
    def const_bits(value, width):
        return new("const", BitsT(width), value=value, stem="fold_k")

    @functools.lru_cache(maxsize=None)
    def at_slot(s):
        return new("cmp", BitsT(1), ctr, const_bits(s, cw), op="eq", stem=f"fold_at{s}_")

    def hold_node(t):
        # value latched in the last slot of a sample, read one cycle later
        nid = out.fresh_id("fold_hold")
        out.add_node(Node(nid, "mux", t, {}))
        return nid

    holds: dict = {}

    def delayed(u: str, s: int) -> str:
        """Node whose one-cycle-delayed output is ``u`` from ``s`` samples back."""
        if (u, s) in holds:
            return holds[(u, s)]
        t = src.nodes[u].out
        prev = (u, 0) if s == 1 else (delayed(u, s - 1), 1)
        h = hold_node(t)
        out.connect(at_slot(f - 1), h, 0)
        out.connect(h, h, 1, 1)
        out.connect(prev[0], h, 2, prev[1])
        holds[(u, s)] = h
        return h

    # Shared results reach the shared units only through registered copies (valid
    # from the slot after their own); everything else sees the transparent copy.
    feeding = set()
    stack = list(shared)
    zops = src.operand_map()
    while stack:
        v = stack.pop()
        for e in zops.get(v, []):
            if e.sample_delay == 0 and e.src not in shared and e.src not in feeding:
                feeding.add(e.src)
                stack.append(e.src)

    def operand(e):
        if e.sample_delay == 0 or f == 1:
            if e.sample_delay == 0 and e.src in shared and (e.dst in shared or e.dst in feeding):
                return f"{e.src}__r", 0
            return e.src, e.sample_delay
        return delayed(e.src, e.sample_delay), 1

    for e in src.edges:
        if e.dst not in shared:
            s, d = operand(e)
            out.connect(s, e.dst, e.port, d, e.regs)

    ops = src.operand_map()
    model = pb.model
    for gi, gp in enumerate(shared_groups):
        order = sorted(gp, key=lambda v: assignment.slots[v])
        info0 = pb.infos[order[0]]
        rep = src.nodes[order[0]]
        sel_w = _bits(len(order))
        contents = [0] * (1 << cw)
        for i, v in enumerate(order):
            contents[assignment.slots[v]] = i
        sel = new("rom_lookup", BitsT(sel_w), ctr, contents=contents, stem=f"u{gi}_sel")
        fixed = info0.cls[0] == "fixed"
        w = model.unit_width(order)
        outw = max(pb.infos[v].out_width for v in order) if fixed else rep.out.width
        uw = outw if fixed and info0.cls[1] == "mul" else w
        port_mux = []
        for p in range(len(info0.port_widths)):
            inputs = []
            for v in order:
                e = ops[v][p]
                s, d = operand(e)
                if fixed:
                    info = pb.infos[v]
                    tw = src.nodes[e.src].out.width
                    x = new("reinterpret", BitsT(tw), (s, d), stem=f"u{gi}_in")
                    if info.port_shift[p]:
                        z = const_bits(0, info.port_shift[p])
                        x = new("concat", BitsT(tw + info.port_shift[p]), x, z, stem=f"u{gi}_al")
                    # multiplier operands are sign-extended to the product width
                    x = new("u_resize", BitsT(uw), x, signed=info.port_signed[p], stem=f"u{gi}_ext")
                    inputs.append(x)
                else:
                    inputs.append((s, d))
            t = BitsT(uw) if fixed else rep.out
            port_mux.append(new("mux", t, sel, *inputs, stem=f"u{gi}_p{p}_"))
        if fixed:
            kind = {"mul": "u_mul", "add": "u_add", "sub": "u_sub"}[info0.cls[1]]
            unit = new(kind, BitsT(outw), *port_mux, stem=f"unit{gi}_")
        else:
            unit = new(rep.kind, rep.out, *port_mux, stem=f"unit{gi}_", **dict(rep.attrs))
        for v in order:
            node = src.nodes[v]
            info = pb.infos[v]
            cap_t = BitsT(outw) if fixed else node.out
            slot_sel = at_slot(assignment.slots[v])
            reg_id = f"{v}__r"
            cap_r = reg_id if not fixed else out.fresh_id(f"{v}_capr")
            out.add_node(Node(cap_r, "mux", cap_t, {}))
            out.connect(slot_sel, cap_r, 0, 1)
            out.connect(cap_r, cap_r, 1, 1)
            out.connect(unit, cap_r, 2, 1)
            cap_o = v if not fixed else out.fresh_id(f"{v}_capo")
            out.add_node(Node(cap_o, "mux", cap_t, {} if fixed else _scaled(node.attrs, f, only_start=True)))
            out.connect(slot_sel, cap_o, 0)
            out.connect(cap_r, cap_o, 1)
            out.connect(unit, cap_o, 2)
            if fixed:
                raw_t = FixedT(FixedFormat(True, outw, min(info.raw_frac, outw)))
                attrs = {"overflow": node.attrs.get("overflow", "wrap")}
                for cap, nid in ((cap_r, reg_id), (cap_o, v)):
                    raw = new("reinterpret", raw_t, cap, stem=f"{v}_raw")
                    start = _scaled(node.attrs, f, only_start=True) if nid == v else {}
                    out.add_node(Node(nid, "convert", node.out, dict(attrs, **start)))
                    out.connect(raw, nid, 0)
    return check(out)


def tdm_fold(g: Graph, cfg: FoldConfig, m=None, exhaustive: bool = False):
    """Fold ``g`` by ``cfg.f``; returns ``(folded graph, assignment)``.

    ``m`` (a latency model) is accepted for interface symmetry with the
    pipelining passes; slot scheduling treats every shared operation as one
    clock cycle.
    """
    if cfg.f == 1:
        pb = _Problem(g, cfg)
        flat = pb.model.cost(pb.flat())
        return g, SharingAssignment(_canonical(pb.flat()), {}, flat, flat, 0)
    a = exhaustive_assignment(g, cfg) if exhaustive else anneal_assignment(g, cfg)
    if a.makespan > cfg.f:
        raise FoldError(f"no sharing schedule fits f={cfg.f}")
    return build_folded(g, a, cfg), a


def simulate_folded(gf: Graph, stim: Trace, f: int) -> Trace:
    """Hold each input sample for ``f`` cycles; read outputs in the last cycle of each sample."""
    if f < 1:
        raise FoldError("folding factor must be >= 1")
    n = stim.cycles
    fast = Trace({k: [x for x in v for _ in range(f)] for k, v in stim.ports.items()})
    tr = run(gf, fast, n * f)
    return Trace({k: [v[i * f + f - 1] for i in range(n)] for k, v in tr.ports.items()})


def shared_unit_counts(g: Graph, assignment: SharingAssignment) -> dict:
    """Units per operator kind after folding (singleton groups count as units)."""
    out: dict = defaultdict(int)
    for gp in assignment.groups:
        out[g.nodes[gp[0]].kind] += 1
    return dict(out)


# -- ALU folding ------------------------------------------------------------------------------------

UNIT_CLASS = {
    "mul": "mul", "u_mul": "mul", "fma": "mul", "fused_mul": "mul",
    "add": "add", "sub": "add", "neg": "add", "u_add": "add", "u_sub": "add",
    "fused_add": "add", "fused_sub": "add",
    "div": "div", "u_divu": "div", "u_modu": "div",
    "func": "func",
}
UNIT_LATENCY = {"mul": 2, "add": 1, "div": 4, "func": 4, "logic": 1}
_FREE = ("input", "const", "output")


def unit_class(kind: str) -> str:
    return UNIT_CLASS.get(kind, "logic")


@dataclass
class Instruction:
    slot: int
    unit: str           # e.g. "mul#0"
    node: str
    srcs: list
    dst: int
    producers: list = field(default_factory=list)   # instruction node per source, None if preloaded

    def to_dict(self) -> dict:
        return {"slot": self.slot, "unit": self.unit, "node": self.node, "srcs": self.srcs, "dst": self.dst,
                "producers": self.producers}


@dataclass
class AluProgram:
    f: int
    units: dict                    # class -> {"count", "latency", "width"}
    instructions: list
    n_registers: int
    length: int
    nodes: dict                    # node id -> Node executed by instructions
    operand_types: dict            # node id -> list of operand types
    input_regs: dict               # port -> reg or list of regs
    output_regs: dict              # port -> reg or list of regs
    const_regs: dict               # reg -> value
    state: list = field(default_factory=list)   # (source reg, [state regs oldest last])

    def unit_count(self) -> int:
        return sum(u["count"] for u in self.units.values())

    def to_dict(self) -> dict:
        return {
            "f": self.f, "length": self.length, "registers": self.n_registers,
            "units": self.units,
            "instructions": [i.to_dict() for i in self.instructions],
            "nodes": {k: {"kind": n.kind, "type": type_str(n.out), "attrs": n.attrs}
                      for k, n in self.nodes.items()},
            "inputs": self.input_regs, "outputs": self.output_regs,
            "constants": {str(r): v for r, v in self.const_regs.items()},
            "state": self.state,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=str) + "\n"


def _alu_schedule(g: Graph, counts: dict):
    """List schedule of every computing node; returns (issue slot per node, length)."""
    ops = g.operand_map()
    fan = g.fanout_map()
    work = [n.id for n in g.nodes.values() if n.kind not in _FREE]
    lat = {v: UNIT_LATENCY[unit_class(g.nodes[v].kind)] for v in work}
    order = g.combinational_order()
    prio: dict = {}
    for v in reversed(order):
        if v in lat:
            prio[v] = lat[v] + max((prio.get(e.dst, 0) for e in fan.get(v, []) if e.sample_delay == 0),
                                   default=0)
    ready_at = {n.id: 0 for n in g.nodes.values() if n.kind in ("input", "const")}
    issue: dict = {}
    unit_of: dict = {}
    pending = set(work)
    t = 0
    busy = defaultdict(set)   # slot -> set of (class, index)
    while pending:
        cands = []
        for v in pending:
            ok = True
            for e in ops.get(v, []):
                if e.sample_delay:
                    continue
                r = ready_at.get(e.src)
                if r is None or r > t:
                    ok = False
                    break
            if ok:
                cands.append(v)
        cands.sort(key=lambda v: (-prio[v], v))
        for v in cands:
            cls = unit_class(g.nodes[v].kind)
            for k in range(counts[cls]):
                if (cls, k) not in busy[t]:
                    busy[t].add((cls, k))
                    issue[v] = t
                    unit_of[v] = (cls, k)
                    ready_at[v] = t + lat[v]
                    pending.discard(v)
                    break
        t += 1
        if t > 100 * (len(work) + 10):
            raise FoldError("ALU scheduling did not converge")
    length = max((issue[v] + lat[v] for v in issue), default=0)
    return issue, unit_of, length


def alu_fold(g: Graph, cfg: FoldConfig) -> AluProgram:
    g = absorb_registers(g)
    for e in g.edges:
        if e.sample_delay < 0:
            raise FoldError("fold the logical graph: negative sample delays remain")
    per_class: dict = defaultdict(int)
    for n in g.nodes.values():
        if n.kind not in _FREE:
            per_class[unit_class(n.kind)] += 1
    # with one unit per operation the schedule is the latency-weighted critical path
    floor = _alu_schedule(g, dict(per_class))[2]
    if floor > cfg.f:
        raise FoldError(f"no schedule of length <= f={cfg.f}; minimal achievable length is {floor}")
    counts = {c: 1 for c in per_class}
    issue, unit_of, length = _alu_schedule(g, counts)
    while length > cfg.f:
        best = None
        for c in per_class:
            if counts[c] >= per_class[c]:
                continue
            res = _alu_schedule(g, dict(counts, **{c: counts[c] + 1}))
            if best is None or res[2] < best[1][2]:
                best = (c, res)
        if best[1][2] >= length:
            # no single unit helps: grow the most loaded class
            c = max((c for c in per_class if counts[c] < per_class[c]),
                    key=lambda c: per_class[c] / counts[c])
            best = (c, _alu_schedule(g, dict(counts, **{c: counts[c] + 1})))
        counts[best[0]] += 1
        issue, unit_of, length = best[1]
    return _emit_program(g, cfg.f, counts, issue, unit_of, length)


def _emit_program(g: Graph, f: int, counts, issue, unit_of, length) -> AluProgram:
    ops = g.operand_map()
    fan = g.fanout_map()
    lat = {v: UNIT_LATENCY[unit_class(g.nodes[v].kind)] for v in issue}
    # value lifetimes: [ready, last read]; outputs and delayed sources live to the end
    ready = {n.id: 0 for n in g.nodes.values() if n.kind == "input"}
    for v, t in issue.items():
        ready[v] = t + lat[v]
    last = defaultdict(int)
    keep = set()
    for e in g.edges:
        if g.nodes[e.src].kind == "const":
            continue
        if e.sample_delay or g.nodes[e.dst].kind == "output":
            keep.add(e.src)
        elif e.dst in issue:
            last[e.src] = max(last[e.src], issue[e.dst])
    intervals = []
    for v, r in ready.items():
        end = length if v in keep else max(last[v], r)
        intervals.append((r, end, v))
    intervals.sort()
    reg_of: dict = {}
    free_at: list = []     # (free after slot, reg)
    n_regs = 0
    active = []
    for r, end, v in intervals:
        active.sort()
        reuse = None
        for i, (e_end, reg) in enumerate(active):
            if e_end < r:
                reuse = reg
                del active[i]
                break
        if reuse is None:
            reuse = n_regs
            n_regs += 1
        reg_of[v] = reuse
        active.append((end, reuse))
    const_regs = {}
    for n in g.nodes.values():
        if n.kind == "const":
            reg_of[n.id] = n_regs
            const_regs[n_regs] = n.attrs.get("value", 0)
            n_regs += 1
    # state registers for sample-delayed operands
    state_of: dict = {}
    state = []
    for e in g.edges:
        if e.sample_delay and (e.src, e.sample_delay) not in state_of:
            depth = max(x.sample_delay for x in g.edges if x.src == e.src)
            if e.src not in {s[0] for s in state}:
                regs = list(range(n_regs, n_regs + depth))
                n_regs += depth
                state.append((e.src, regs))
            chain = next(r for s, r in state if s == e.src)
            for d in range(1, depth + 1):
                state_of[(e.src, d)] = chain[d - 1]
    instrs = []
    for v in sorted(issue, key=lambda v: (issue[v], v)):
        srcs, prods = [], []
        for e in ops.get(v, []):
            srcs.append(state_of[(e.src, e.sample_delay)] if e.sample_delay else reg_of[e.src])
            prods.append(e.src if not e.sample_delay and e.src in issue else None)
        cls, k = unit_of[v]
        instrs.append(Instruction(issue[v], f"{cls}#{k}", v, srcs, reg_of[v], prods))

    def port_regs(direction):
        out = {}
        for p in g.ports:
            if p.direction != direction:
                continue
            nodes = sorted(g.io_nodes(p.name), key=lambda n: n.attrs.get("index") or 0)
            regs = []
            for n in nodes:
                if direction == "in":
                    regs.append(reg_of[n.id])
                else:
                    (e,) = ops[n.id]
                    regs.append(state_of[(e.src, e.sample_delay)] if e.sample_delay else reg_of[e.src])
            out[p.name] = regs if p.length is not None else regs[0]
        return out

    widths = defaultdict(int)
    for v in issue:
        widths[unit_class(g.nodes[v].kind)] = max(widths[unit_class(g.nodes[v].kind)], g.nodes[v].out.width)
    units = {c: {"count": counts[c], "latency": UNIT_LATENCY[c], "width": widths[c]}
             for c in counts}
    return AluProgram(
        f=f, units=units, instructions=instrs, n_registers=n_regs, length=length,
        nodes={v: g.nodes[v] for v in issue},
        operand_types={v: [g.nodes[e.src].out for e in ops.get(v, [])] for v in issue},
        input_regs=port_regs("in"), output_regs=port_regs("out"), const_regs=const_regs,
        state=[(reg_of[s], regs) for s, regs in state],
    )


def validate_program(p: AluProgram) -> list[str]:
    """Structural and data hazards; an empty list means the program is valid.

    Units are pipelined: each accepts one instruction per slot. A result is
    readable from slot ``issue + latency``.
    """
    errs = []
    seen = set()
    done = {}
    writes = defaultdict(list)      # reg -> [(ready slot, node)]
    for ins in p.instructions:
        if (ins.slot, ins.unit) in seen:
            errs.append(f"unit {ins.unit} issued twice in slot {ins.slot}")
        seen.add((ins.slot, ins.unit))
        t = ins.slot + p.units[ins.unit.split("#")[0]]["latency"]
        done[ins.node] = t
        writes[ins.dst].append((t, ins.node))
        if t > p.length:
            errs.append(f"{ins.node} completes after the program ends")
    for ins in p.instructions:
        for r, prod in zip(ins.srcs, ins.producers or [None] * len(ins.srcs)):
            # the latest write to r visible at this slot must come from the intended producer
            visible = [(t, n) for t, n in writes.get(r, []) if t <= ins.slot]
            last = max(visible, default=None)
            if prod is None:
                if last is not None:
                    errs.append(f"{ins.node}: preloaded r{r} overwritten by {last[1]} before slot {ins.slot}")
            elif done[prod] > ins.slot:
                errs.append(f"{ins.node} reads r{r} at slot {ins.slot} before {prod} completes")
            elif last is None or last[1] != prod:
                errs.append(f"{ins.node}: r{r} holds {last and last[1]} instead of {prod} at slot {ins.slot}")
    if p.length > p.f:
        errs.append(f"program length {p.length} exceeds f={p.f}")
    return errs


def run_alu_program(p: AluProgram, samples: list) -> list:
    """Execute ``p`` once per sample; ``samples`` are dicts port -> value (tuple for vectors)."""
    regs = [0] * p.n_registers
    for r, v in p.const_regs.items():
        regs[r] = v
    by_slot = defaultdict(list)
    for ins in p.instructions:
        by_slot[ins.slot].append(ins)
    outputs = []
    for n, sample in enumerate(samples):
        for port, r in p.input_regs.items():
            if isinstance(r, list):
                for reg, val in zip(r, sample[port]):
                    regs[reg] = val
            else:
                regs[r] = sample[port]
        writes = defaultdict(list)
        for t in range(p.length + 1):
            for reg, val in writes.pop(t, []):
                regs[reg] = val
            for ins in by_slot.get(t, []):
                node = p.nodes[ins.node]
                args = [regs[r] for r in ins.srcs]
                val = BEHAVIORAL_KERNELS[node.kind](node, args, p.operand_types[ins.node], n)
                lat = p.units[ins.unit.split("#")[0]]["latency"]
                writes[t + lat].append((ins.dst, val))
        for t in sorted(writes):
            for reg, val in writes[t]:
                regs[reg] = val
        res = {}
        for port, r in p.output_regs.items():
            res[port] = tuple(regs[x] for x in r) if isinstance(r, list) else regs[r]
        outputs.append(res)
        for src, chain in p.state:
            for i in range(len(chain) - 1, 0, -1):
                regs[chain[i]] = regs[chain[i - 1]]
            regs[chain[0]] = regs[src]
    return outputs


def fold(g: Graph, cfg: FoldConfig, m=None):
    """Dispatch on ``cfg.resolved_mode()``."""
    if cfg.resolved_mode() == "alu":
        return alu_fold(g, cfg)
    return tdm_fold(g, cfg, m)
