"""Register insertion, delay-balancing scheduling and retiming.

Graphs here are *logical*: each edge has a sample delay ``s`` (possibly
negative before scheduling) and a count ``regs`` of pipeline registers it must
receive. A schedule assigns each node an integer time ``t``; the realized
register depth of an edge ``u -> v`` is then ``t(v) - t(u) + s``. Applying a
schedule yields a *physical* graph whose sample delays are those realized depths
and whose nodes stay silent (zero) until their start cycle, so the physical
graph reproduces the logical one delayed by the output latency, bit for bit.

Retiming by labels ``r`` is the same operation: rescheduling with ``t + r``.
"""

from __future__ import annotations

import heapq
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Optional

from .ir.graph import Graph, check
from .ir.types import FloatT, FusedT


class InfeasiblePeriod(ValueError):
    pass


class SchedulingError(ValueError):
    pass


# -- latency model -----------------------------------------------------------------

def _sig(t) -> int:
    """Significand-like width of a signal type."""
    if isinstance(t, FloatT):
        return t.fmt.p
    if isinstance(t, FusedT):
        return t.fmt.frac_width
    return t.width


# (base ns, ns per bit, width measure)
DEFAULT_TABLE = {
    "add": (0.10, 0.004, "out"),
    "mul": (0.45, 0.002, "in_sum"),
    "fp_add": (1.20, 0.020, "sig"),
    "fp_mul": (0.95, 0.004, "sig"),
    "fp_div": (3.00, 0.100, "sig"),
    "fp_fma": (2.20, 0.024, "sig"),
    "fused_add": (0.45, 0.004, "sig"),
    "fused_mul": (0.75, 0.004, "sig"),
    "normalize": (0.80, 0.010, "sig"),
    "cast": (0.30, 0.0, "out"),
    "convert": (0.50, 0.010, "out"),
    "mux": (0.15, 0.0, "out"),
    "logic": (0.15, 0.0, "out"),
    "shift": (0.20, 0.002, "out"),
    "lzc": (0.20, 0.002, "in_sum"),
    "cmp": (0.15, 0.002, "in_sum"),
    "rom": (0.30, 0.0, "out"),
    "func": (6.00, 0.0, "out"),
    "wire": (0.0, 0.0, "out"),
}

DEFAULT_ROUTING = {"rom": 0.25}

_CLASS = {
    "input": "wire", "output": "wire", "const": "wire", "register": "wire",
    "reinterpret": "wire", "slice": "wire", "concat": "wire", "counter": "wire",
    "mux": "mux", "rom_lookup": "rom", "cmp": "cmp", "convert": "convert", "cast": "cast",
    "fused_add": "fused_add", "fused_sub": "fused_add", "fused_mul": "fused_mul",
    "normalize": "normalize", "func": "func", "func_reduce": "convert",
    "func_reconstruct": "convert",
    "u_add": "add", "u_sub": "add", "u_mul": "mul", "u_and": "logic", "u_or": "logic",
    "u_xor": "logic", "u_not": "logic", "u_shl": "shift", "u_shr": "shift", "u_lzc": "lzc",
    "u_eq": "cmp", "u_ult": "cmp", "u_slt": "cmp", "u_orr": "logic", "u_resize": "wire",
    "u_divu": "fp_div", "u_modu": "fp_div",
}


@dataclass
class LatencyModel:
    """Sub-cycle delay (ns) per node class: ``base + per_bit * width + routing``."""

    table: dict = field(default_factory=lambda: dict(DEFAULT_TABLE))
    routing: dict = field(default_factory=lambda: dict(DEFAULT_ROUTING))

    @staticmethod
    def node_class(g: Graph, node) -> str:
        k = node.kind
        if k in ("add", "sub", "neg"):
            return "fp_add" if isinstance(node.out, FloatT) else "add"
        if k == "mul":
            return "fp_mul" if isinstance(node.out, FloatT) else "mul"
        if k == "div":
            return "fp_div"
        if k == "fma":
            return "fp_fma"
        return _CLASS.get(k, "logic")

    def delay(self, g: Graph, node, operand_types=None) -> float:
        cls = self.node_class(g, node)
        base, per_bit, measure = self.table[cls]
        if measure == "sig":
            width = _sig(node.out)
        elif measure == "in_sum":
            if operand_types is None:
                operand_types = [g.nodes[e.src].out for e in g.in_edges(node.id)]
            width = sum(_sig(t) if cls == "mul" else t.width for t in operand_types)
        else:
            width = node.out.width
        return base + per_bit * width + self.routing.get(cls, 0.0)

    def delays(self, g: Graph) -> dict:
        ops = g.operand_map()
        return {nid: self.delay(g, n, [g.nodes[e.src].out for e in ops.get(nid, [])])
                for nid, n in g.nodes.items()}

    def to_json(self) -> str:
        return json.dumps({"table": {k: list(v) for k, v in self.table.items()},
                           "routing": self.routing}, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "LatencyModel":
        d = json.loads(text)
        table = dict(DEFAULT_TABLE)
        for k, v in d.get("table", {}).items():
            table[k] = (float(v[0]), float(v[1]), v[2] if len(v) > 2 else "out")
        for k, (b, pb, _) in table.items():
            if b < 0 or pb < 0:
                raise ValueError(f"negative delay for {k!r}")
        return cls(table, dict(d.get("routing", DEFAULT_ROUTING)))


@dataclass(frozen=True)
class ClockSpec:
    period: float  # ns

    def __post_init__(self):
        if self.period <= 0:
            raise ValueError("clock period must be positive")

    @classmethod
    def from_fmax(cls, mhz: float) -> "ClockSpec":
        return cls(1000.0 / mhz)


# -- graph preparation ------------------------------------------------------------------

def absorb_registers(g: Graph) -> Graph:
    """Fold explicit register nodes into the sample delays of their fan-out edges."""
    regs = [n for n in g.nodes.values() if n.kind == "register"]
    if not regs:
        return g
    out = g.copy()
    for r in regs:
        if r.attrs.get("init", 0):
            raise ValueError(f"register {r.id} has a non-zero initial value; cannot absorb it")
        (src,) = out.in_edges(r.id)
        depth = r.attrs.get("depth", 1)
        for e in out.out_edges(r.id):
            e.src = src.src
            e.sample_delay += src.sample_delay + depth
            e.regs = max(e.regs, src.regs)
        out.edges = [e for e in out.edges if e is not src]
        del out.nodes[r.id]
    return out


def _succ(g: Graph):
    succ = defaultdict(list)
    for i, e in enumerate(g.edges):
        succ[e.src].append(i)
    return succ


def _zero_or_negative_cycle(g: Graph) -> Optional[list[str]]:
    """A cycle whose total sample delay is <= 0, if any."""
    n = len(g.nodes)
    scale = n + 1
    arcs = [(e.src, e.dst, e.sample_delay * scale - 1) for e in g.edges]
    return _negative_cycle(list(g.nodes), arcs)


def _negative_cycle(nodes, arcs) -> Optional[list]:
    """Bellman-Ford from a virtual source; returns a negative cycle or None."""
    dist = {v: 0 for v in nodes}
    pred: dict = {}
    last = None
    for _ in range(len(nodes)):
        last = None
        for u, v, w in arcs:
            if dist[u] + w < dist[v]:
                dist[v] = dist[u] + w
                pred[v] = u
                last = v
        if last is None:
            return None
    x = last
    for _ in range(len(nodes)):
        x = pred[x]
    cycle = [x]
    y = pred[x]
    while y != x:
        cycle.append(y)
        y = pred[y]
    return cycle[::-1]


def scc_ids(g: Graph) -> dict:
    """Strongly connected component label per node (iterative Tarjan)."""
    succ = defaultdict(list)
    for e in g.edges:
        succ[e.src].append(e.dst)
    index: dict = {}
    low: dict = {}
    comp: dict = {}
    stack, on = [], set()
    counter = 0
    for root in sorted(g.nodes):
        if root in index:
            continue
        work = [(root, iter(succ[root]))]
        index[root] = low[root] = counter
        counter += 1
        stack.append(root)
        on.add(root)
        while work:
            v, it = work[-1]
            w = next(it, None)
            if w is not None:
                if w not in index:
                    index[w] = low[w] = counter
                    counter += 1
                    stack.append(w)
                    on.add(w)
                    work.append((w, iter(succ[w])))
                elif w in on:
                    low[v] = min(low[v], index[w])
                continue
            work.pop()
            if work:
                low[work[-1][0]] = min(low[work[-1][0]], low[v])
            if low[v] == index[v]:
                while True:
                    x = stack.pop()
                    on.discard(x)
                    comp[x] = v
                    if x == v:
                        break
    return comp


def break_loops(g: Graph):
    """Cut every cycle at its sample-delay edges.

    Returns ``(graph, broken, comp)``: ``broken`` lists the indices of edges
    with a sample delay inside a strongly connected component (removing them
    leaves a DAG, since every cycle carries a delay) and ``comp`` the
    component label per node. A cycle whose sample delays sum to zero or less
    is a combinational loop and raises ``ValueError``.
    """
    bad = _zero_or_negative_cycle(g)
    if bad:
        raise ValueError(f"combinational loop (no sample delay) through {' -> '.join(bad)}")
    comp = scc_ids(g)
    broken = [i for i, e in enumerate(g.edges)
              if e.sample_delay > 0 and comp[e.src] == comp[e.dst]]
    return g, broken, comp


def _topo_without(g: Graph, skip: set) -> list[str]:
    indeg = {nid: 0 for nid in g.nodes}
    succ = defaultdict(list)
    for i, e in enumerate(g.edges):
        if i in skip:
            continue
        indeg[e.dst] += 1
        succ[e.src].append(e.dst)
    ready = sorted(nid for nid, d in indeg.items() if d == 0)
    order = []
    heapq.heapify(ready)
    while ready:
        nid = heapq.heappop(ready)
        order.append(nid)
        for v in succ[nid]:
            indeg[v] -= 1
            if indeg[v] == 0:
                heapq.heappush(ready, v)
    return order


# -- register insertion ------------------------------------------------------------------

def greedy_insert(g: Graph, clk: ClockSpec, m: LatencyModel) -> Graph:
    """Sub-cycle latency accumulation; a register goes on the input edges of
    any node that would push the accumulated delay past the period.

    Sample delays are ignored when accumulating. Loop edges that carry a
    sample delay get one register each, which cuts every cycle; inside a loop
    further registers go on entering edges when that suffices.
    """
    check(g)
    g = absorb_registers(g)
    out, broken, comp = break_loops(g.copy())
    T = clk.period
    d = m.delays(out)
    for nid, x in sorted(d.items()):
        if x > T + 1e-12:
            raise InfeasiblePeriod(f"node {nid} ({out.nodes[nid].kind}) needs {x:.3f} ns "
                                   f"> period {T:.3f} ns")
    skip = set(broken)
    for i in broken:
        out.edges[i].regs = max(out.edges[i].regs, 1)
    ins = defaultdict(list)
    for i, e in enumerate(out.edges):
        if i not in skip:
            ins[e.dst].append(i)
    arrival: dict = {}
    for nid in _topo_without(out, skip):
        start = 0.0
        for i in ins[nid]:
            e = out.edges[i]
            if e.regs == 0:
                start = max(start, arrival[e.src])
        if start + d[nid] > T + 1e-12:
            # registers inside a loop use up its sample delays; cut entering edges first
            inner = 0.0
            for i in ins[nid]:
                e = out.edges[i]
                if e.regs == 0 and comp[e.src] == comp[nid]:
                    inner = max(inner, arrival[e.src])
            for i in ins[nid]:
                e = out.edges[i]
                if e.regs or arrival[e.src] <= 0:
                    continue
                if comp[e.src] != comp[nid] or inner + d[nid] > T + 1e-12:
                    e.regs = 1
            arrival[nid] = d[nid] if inner + d[nid] > T + 1e-12 else inner + d[nid]
        else:
            arrival[nid] = start + d[nid]
    return out


def threshold_insert(g: Graph, clk: ClockSpec, m: LatencyModel, theta: float = 0.25) -> Graph:
    """Baseline strategy: register after every node slower than ``theta * T``.

    Runs of faster nodes are cut every ``floor(1 / theta)`` nodes, which keeps
    every register-free path within the period without sub-cycle bookkeeping.
    Edges inside a loop can only hold as many registers as the loop has
    sample delays, so there the rule yields to delay accounting.
    """
    check(g)
    g = absorb_registers(g)
    out, broken, comp = break_loops(g.copy())
    T = clk.period
    d = m.delays(out)
    for nid, x in d.items():
        if x > T + 1e-12:
            raise InfeasiblePeriod(f"node {nid} needs {x:.3f} ns > period {T:.3f} ns")
    skip = set(broken)
    for i in broken:
        out.edges[i].regs = max(out.edges[i].regs, 1)
    run_cap = max(1, int(math.floor(1 / theta)))
    ins = defaultdict(list)
    outs = defaultdict(list)
    for i, e in enumerate(out.edges):
        if i not in skip:
            ins[e.dst].append(i)
            outs[e.src].append(i)

    def internal(e):
        return comp[e.src] == comp[e.dst]

    run: dict = {}
    arrival: dict = {}
    for nid in _topo_without(out, skip):
        slow = d[nid] > theta * T
        if slow:
            for i in ins[nid]:
                e = out.edges[i]
                if e.regs == 0 and run[e.src] > 0 and not internal(e):
                    e.regs = 1
        start = max((arrival[out.edges[i].src] for i in ins[nid] if out.edges[i].regs == 0),
                    default=0.0)
        if start + d[nid] > T + 1e-12:
            for i in ins[nid]:
                e = out.edges[i]
                if e.regs == 0 and arrival[e.src] > 0:
                    e.regs = 1
            start = 0.0
        arrival[nid] = start + d[nid]
        r = max((run[out.edges[i].src] for i in ins[nid] if out.edges[i].regs == 0), default=0)
        if slow:
            r = run_cap
        elif d[nid] > 0:
            r += 1
        if r >= run_cap:
            cut = [i for i in outs[nid] if not internal(out.edges[i])]
            for i in cut:
                out.edges[i].regs = max(out.edges[i].regs, 1)
            if len(cut) == len(outs[nid]):
                r = 0
        run[nid] = r
    return out


# -- scheduling ---------------------------------------------------------------------------

@dataclass
class Schedule:
    times: dict
    depths: list  # realized register depth per edge (same order as graph edges)
    latency: int
    register_bits: int

    def to_dict(self) -> dict:
        return {"times": self.times, "depths": self.depths, "latency": self.latency,
                "register_bits": self.register_bits}


def register_bits(g: Graph, depths: list) -> int:
    """Registers on a fan-out net are shared: each source pays its deepest tap."""
    deepest: dict = defaultdict(int)
    for e, d in zip(g.edges, depths):
        deepest[e.src] = max(deepest[e.src], d)
    return sum(g.nodes[u].out.width * d for u, d in deepest.items())


def schedule(g: Graph) -> Schedule:
    """ASAP times from ``t(v) - t(u) >= regs(e) - s(e)``; outputs share one latency."""
    check_refs = {e.src for e in g.edges} | {e.dst for e in g.edges}
    missing = check_refs - set(g.nodes)
    if missing:
        raise SchedulingError(f"edges reference unknown nodes {sorted(missing)}")
    g = absorb_registers(g)
    arcs = [(e.src, e.dst, -(e.regs - e.sample_delay)) for e in g.edges]
    cyc = _negative_cycle(list(g.nodes), arcs)
    if cyc:
        raise SchedulingError("unsatisfiable delay constraints around cycle "
                              + " -> ".join(cyc) + " (more registers requested than sample delays)")
    t = {nid: 0 for nid in g.nodes}
    order = _topo_without(g, set())
    if len(order) < len(g.nodes):
        order += [nid for nid in g.nodes if nid not in set(order)]
    pos = {nid: i for i, nid in enumerate(order)}
    edges = sorted(g.edges, key=lambda e: pos[e.src])
    changed = True
    while changed:
        changed = False
        for e in edges:
            need = t[e.src] + e.regs - e.sample_delay
            if need > t[e.dst]:
                t[e.dst] = need
                changed = True
    outs = [n.id for n in g.nodes.values() if n.kind == "output"]
    L = max((t[o] for o in outs), default=0)
    for o in outs:
        t[o] = L
    depths = [t[e.dst] - t[e.src] + e.sample_delay for e in g.edges]
    return Schedule(t, depths, L, register_bits(g, depths))


def apply_schedule(g: Graph, times: dict) -> Graph:
    """Physical graph realizing ``times``: edge delays become realized depths."""
    g = absorb_registers(g)
    out = g.copy()
    for e in out.edges:
        d = times[e.dst] - times[e.src] + e.sample_delay
        if d < 0:
            raise SchedulingError(f"edge {e.src} -> {e.dst} would need {d} registers")
        e.sample_delay = d
        e.regs = 0
    for nid, n in out.nodes.items():
        start = n.attrs.get("start_cycle", 0) + times[nid]
        if start > 0:
            n.attrs["start_cycle"] = start
        else:
            n.attrs.pop("start_cycle", None)
        if n.kind == "counter":
            ph = n.attrs.get("phase", 0) + times[nid]
            if ph:
                n.attrs["phase"] = ph
            else:
                n.attrs.pop("phase", None)
    out.attrs = dict(out.attrs)
    lat = max((times[n.id] for n in out.nodes.values() if n.kind == "output"), default=0)
    out.attrs["latency"] = g.attrs.get("latency", 0) + lat
    return out


def pipeline(g: Graph, clk: ClockSpec, m: LatencyModel, strategy: str = "subcycle"):
    """Insert registers, schedule, and realize. Returns ``(physical graph, schedule)``."""
    if strategy not in ("subcycle", "threshold"):
        raise ValueError(f"unknown pipelining strategy {strategy!r}")
    return pipeline_with(g, clk, m, strategy)


# -- timing analysis ------------------------------------------------------------------------

def combinational_delay(g: Graph, m: LatencyModel) -> float:
    """Longest register-free path delay of a physical graph."""
    d = m.delays(g)
    arr: dict = {}
    for nid in g.combinational_order():
        best = 0.0
        for e in g.in_edges(nid):
            if e.sample_delay == 0:
                best = max(best, arr[e.src])
        arr[nid] = best + d[nid]
    return max(arr.values(), default=0.0)


# -- retiming --------------------------------------------------------------------------------

@dataclass
class Retiming:
    r: dict
    achieved_period: Optional[float]
    feasible: bool = True
    evidence: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"r": self.r, "achieved_period": self.achieved_period,
                "feasible": self.feasible, "evidence": self.evidence}


def _io_nodes(g: Graph) -> list[str]:
    return [n.id for n in g.nodes.values() if n.kind in ("input", "output")]


def wd_matrices(g: Graph, m: LatencyModel):
    """All-pairs W (fewest registers) and D (largest delay among those paths).

    Edge weights are ``(w(e), -d(u))`` compared lexicographically.
    """
    d = m.delays(g)
    nodes = sorted(g.nodes)
    INF = (math.inf, 0.0)
    best: dict = {u: {} for u in nodes}
    for u in nodes:
        best[u][u] = (0, 0.0)
    for e in g.edges:
        if e.sample_delay < 0:
            raise ValueError("retiming needs a scheduled graph (negative sample delay found)")
        cand = (e.sample_delay, -d[e.src])
        if cand < best[e.src].get(e.dst, INF) and e.src != e.dst:
            best[e.src][e.dst] = cand
    for k in nodes:
        bk = best[k]
        for i in nodes:
            bik = best[i].get(k)
            if bik is None:
                continue
            bi = best[i]
            for j, bkj in bk.items():
                c = (bik[0] + bkj[0], bik[1] + bkj[1])
                if c < bi.get(j, INF):
                    bi[j] = c
    W, D = {}, {}
    for u in nodes:
        for v, (w, nd) in best[u].items():
            W[u, v] = w
            D[u, v] = d[v] - nd
    return W, D


def _solve_retiming(g: Graph, W, D, c: float):
    host = "__host__"
    nodes = list(g.nodes) + [host]
    arcs = []
    for e in g.edges:
        arcs.append((e.dst, e.src, e.sample_delay))      # r(u) - r(v) <= w(e)
    for (u, v), dv in D.items():
        if dv > c + 1e-12:
            arcs.append((v, u, W[u, v] - 1))            # r(u) - r(v) <= W - 1
    for io in _io_nodes(g):
        arcs.append((host, io, 0))
        arcs.append((io, host, 0))
    cyc = _negative_cycle(nodes, arcs)
    if cyc:
        return None, [x for x in cyc if x != host]
    dist = {v: 0 for v in nodes}
    for _ in range(len(nodes)):
        changed = False
        for u, v, w in arcs:
            if dist[u] + w < dist[v]:
                dist[v] = dist[u] + w
                changed = True
        if not changed:
            break
    off = dist[host]
    return {v: dist[v] - off for v in g.nodes}, []


def retimed_weights(g: Graph, r: dict) -> list[int]:
    return [e.sample_delay + r[e.dst] - r[e.src] for e in g.edges]


def _period_of(g: Graph, m: LatencyModel, r: dict) -> float:
    return combinational_delay(apply_schedule(g, r), m)


def retime(g: Graph, clk: ClockSpec, m: LatencyModel, _wd=None) -> Retiming:
    """Leiserson-Saxe retiming of a physical graph for period ``clk.period``.

    Inputs and outputs keep label zero, so I/O latency is preserved.
    """
    g = absorb_registers(g)
    W, D = _wd or wd_matrices(g, m)
    r, evidence = _solve_retiming(g, W, D, clk.period)
    if r is None:
        return Retiming({}, None, False, evidence)
    return Retiming(r, _period_of(g, m, r))


def apply_retiming(g: Graph, ret: Retiming) -> Graph:
    if not ret.feasible:
        raise ValueError("cannot apply an infeasible retiming")
    return apply_schedule(g, ret.r)


def min_period(g: Graph, m: LatencyModel):
    """Least feasible period over the candidate set of path delays D(u, v)."""
    g = absorb_registers(g)
    W, D = wd_matrices(g, m)
    cands = sorted({round(x, 12) for x in D.values()})
    lo, hi = 0, len(cands) - 1
    best = None
    while lo <= hi:
        mid = (lo + hi) // 2
        ret = retime(g, ClockSpec(max(cands[mid], 1e-9)), m, (W, D))
        if ret.feasible:
            best = (cands[mid], ret)
            hi = mid - 1
        else:
            lo = mid + 1
    if best is None:
        raise InfeasiblePeriod("no candidate period is feasible")
    return best


# -- strategy comparison ----------------------------------------------------------------------

def compare_strategies(corpus: list, clk: ClockSpec, m: LatencyModel, theta: float = 0.25) -> dict:
    """Latency of threshold vs sub-cycle register insertion per design."""
    rows = []
    for g in corpus:
        _, s_thr = pipeline_with(g, clk, m, "threshold", theta)
        _, s_sub = pipeline_with(g, clk, m, "subcycle", theta)
        rows.append({"design": g.name, "threshold": s_thr.latency, "subcycle": s_sub.latency})

    def hist(key):
        h: dict = defaultdict(int)
        for r in rows:
            h[r[key]] += 1
        return dict(sorted(h.items()))

    return {
        "designs": rows,
        "total": {"threshold": sum(r["threshold"] for r in rows),
                  "subcycle": sum(r["subcycle"] for r in rows)},
        "histogram": {"threshold": hist("threshold"), "subcycle": hist("subcycle")},
    }


def pipeline_with(g, clk, m, strategy, theta=0.25):
    if strategy == "threshold":
        marked = threshold_insert(g, clk, m, theta)
    else:
        marked = greedy_insert(g, clk, m)
    s = schedule(marked)
    return apply_schedule(marked, s.times), s
