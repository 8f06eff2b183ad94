"""Static accuracy and resource estimation."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

from .ir.graph import Graph, GraphBuilder
from .ir.types import BitsT, FixedT, FloatT, FusedT
from .softfloat import FpFormat, RoundingMode, unit_roundoff


# -- error model --------------------------------------------------------------------

@dataclass
class ErrorEstimate:
    K: Fraction
    u: Fraction
    invalid_bits: int
    warnings: list = field(default_factory=list)

    @property
    def bound(self) -> Fraction:
        return self.K * self.u

    def to_dict(self) -> dict:
        return {"K": str(self.K), "u": str(self.u), "bound": float(self.bound),
                "invalid_bits": self.invalid_bits, "warnings": self.warnings}


def rounding_count(g: Graph, node) -> int:
    """Roundings a node contributes to the error path."""
    k = node.kind
    if k in ("add", "sub", "mul", "div", "fma"):
        return 1 if isinstance(node.out, FloatT) else 0
    if k == "convert":
        return 1 if isinstance(node.out, FloatT) else 0
    if k == "fused_mul":
        return 1 if node.attrs.get("form", "level0") == "level0" else 0
    if k in ("normalize", "func"):
        return 1
    return 0


def invalid_bits(K) -> int:
    return 0 if K <= 1 else math.ceil(math.log2(K))


def error_bound(g: Graph, fmt: Optional[FpFormat] = None,
                mode: RoundingMode = RoundingMode.NEAREST_EVEN) -> ErrorEstimate:
    """Worst path count of roundings, each worth one unit roundoff.

    Loops are cut at edges with a sample delay (the estimate is per sample).
    """
    if fmt is None:
        fmts = [n.out.fmt for n in g.nodes.values() if isinstance(n.out, FloatT)]
        if not fmts:
            raise ValueError("no floating-point signals; pass a format")
        fmt = max(fmts, key=lambda f: f.w_f) if len({f.w_f for f in fmts}) > 1 else fmts[0]
    K: dict = {}
    ops = g.operand_map()
    warnings = []
    for nid in _acyclic_order(g):
        n = g.nodes[nid]
        preds = [K[e.src] for e in ops.get(nid, []) if e.sample_delay <= 0 and e.src in K]
        K[nid] = max(preds, default=0) + rounding_count(g, n)
        if n.kind in ("sub", "fused_sub") and isinstance(n.out, (FloatT, FusedT)):
            warnings.append(f"{nid}: subtraction may cancel and amplify earlier errors")
    worst = max((K[n.id] for n in g.nodes.values() if n.kind == "output"), default=0)
    return ErrorEstimate(Fraction(worst), unit_roundoff(fmt, mode), invalid_bits(worst), warnings)


def _acyclic_order(g: Graph) -> list[str]:
    indeg = {nid: 0 for nid in g.nodes}
    succ = defaultdict(list)
    for e in g.edges:
        if e.sample_delay <= 0:
            indeg[e.dst] += 1
            succ[e.src].append(e.dst)
    ready = sorted(nid for nid, d in indeg.items() if d == 0)
    order = []
    while ready:
        nid = ready.pop()
        order.append(nid)
        for v in succ[nid]:
            indeg[v] -= 1
            if indeg[v] == 0:
                ready.append(v)
    return order


# -- wide adder splitting ----------------------------------------------------------------

def split_wide_adder(width: int, max_adder_width: int) -> list[int]:
    """Near-equal segments, least significant first."""
    if width < 1 or max_adder_width < 1:
        raise ValueError("widths must be positive")
    n = -(-width // max_adder_width)
    base, extra = divmod(width, n)
    return [base + 1 if i < extra else base for i in range(n)]


def max_adder_width(clk_period: float, model) -> int:
    """Widest ripple adder meeting the period under ``model``'s add delay."""
    base, per_bit, _ = model.table["add"]
    if per_bit <= 0:
        return 1 << 16
    return max(1, int((clk_period - base) / per_bit))


def build_accumulator(width: int, segments: Optional[Sequence[int]] = None) -> Graph:
    """Running sum modulo ``2**width`` of the ``x`` stream.

    With ``segments`` the adder is split into carry-registered slices: slice
    ``i`` works on the sample from ``i`` cycles earlier and the outputs are
    deskewed, so the split accumulator equals the plain one delayed by
    ``len(segments) - 1`` cycles.
    """
    b = GraphBuilder(f"acc{width}" + ("" if segments is None else "_split"))
    x = b.input("x", BitsT(width))
    if segments is None:
        s = b.op("u_add", BitsT(width), x, x, name="acc")
        b.g.edges = [e for e in b.g.edges if e.dst != "acc"]
        b.g.connect("acc", "acc", 0, 1)
        b.g.connect(x, "acc", 1, 0)
        b.output("y", s)
        g = b.build()
        g.attrs["latency"] = 0
        return g
    if sum(segments) != width:
        raise ValueError("segments must add up to the width")
    k = len(segments)
    accs = []
    lo = 0
    carry = None
    for i, w in enumerate(segments):
        xi = b.op("slice", BitsT(w), x, lo=lo)
        xz = b.op("u_resize", BitsT(w + 1), (xi, i), signed=False)
        part = b.op("u_add", BitsT(w + 1), xz, xz, name=f"sum{i}")
        b.g.edges = [e for e in b.g.edges if e.dst != part]
        acc = b.op("slice", BitsT(w), part, lo=0, name=f"acc{i}")
        prev = b.op("u_resize", BitsT(w + 1), (acc, 1), signed=False)
        b.g.connect(prev, part, 0)
        if carry is None:
            b.g.connect(xz, part, 1)
        else:
            cz = b.op("u_resize", BitsT(w + 1), (carry, 1), signed=False)
            both = b.op("u_add", BitsT(w + 1), xz, cz)
            b.g.connect(both, part, 1)
        carry = b.op("slice", BitsT(1), part, lo=w)
        accs.append(acc)
        lo += w
    # deskew: slice i holds sample c - i at cycle c
    aligned = [b.op("u_resize", BitsT(w), (a, k - 1 - i), signed=False)
               for i, (a, w) in enumerate(zip(accs, segments))]
    y = aligned[-1]
    for a in reversed(aligned[:-1]):
        y = b.op("concat", BitsT(b.g.nodes[y].out.width + b.g.nodes[a].out.width), y, a)
    b.output("y", y)
    g = b.build()
    g.attrs["latency"] = k - 1
    return g


# -- multiplier tiling ------------------------------------------------------------------------

@dataclass(frozen=True)
class Tile:
    x: int
    y: int
    wa: int
    wb: int
    kind: str  # "dsp" | "lut"


@dataclass
class Tiling:
    wa: int
    wb: int
    tiles: list
    exhaustive: bool = True

    @property
    def cost(self) -> tuple:
        dsp = sum(1 for t in self.tiles if t.kind == "dsp")
        lut = sum(t.wa * t.wb for t in self.tiles if t.kind == "lut")
        return dsp, lut

    def to_dict(self) -> dict:
        return {"wa": self.wa, "wb": self.wb, "cost": list(self.cost),
                "tiles": [[t.x, t.y, t.wa, t.wb, t.kind] for t in self.tiles]}


def _tile_kind(a: int, b: int, thr: int) -> str:
    return "lut" if min(a, b) <= thr else "dsp"


def _candidates(grid, x, y, wa, wb, shapes):
    """Tiles anchored at (x, y), truncated at the rectangle and at covered cells."""
    free_w = 0
    while x + free_w < wa and not grid[y][x + free_w]:
        free_w += 1
    out = []
    for s1, s2 in shapes:
        a = min(s1, free_w)
        b = 0
        while b < s2 and y + b < wb and not any(grid[y + b][x:x + a]):
            b += 1
        if a and b:
            out.append((a, b))
    return sorted(set(out), key=lambda t: -t[0] * t[1])


def _first_free(grid, wa, wb, start):
    for idx in range(start, wa * wb):
        y, x = divmod(idx, wa)
        if not grid[y][x]:
            return idx
    return None


def _mark(grid, x, y, a, b, val):
    for j in range(y, y + b):
        row = grid[j]
        for i in range(x, x + a):
            row[i] = val


def tile_multiplier(wa: int, wb: int, tile_set: Sequence[tuple] = ((18, 18),),
                    lut_threshold: int = 0, budget: int = 200_000) -> Tiling:
    """Exact cover of the ``wa x wb`` partial-product rectangle.

    Tiles are DSP shapes from ``tile_set`` (either orientation) anchored at the
    first uncovered cell in row-major order and truncated where they would
    leave the rectangle or overlap. A tile whose narrow side is at most
    ``lut_threshold`` is built from LUTs. Cost is ``(dsp count, LUT bits)``,
    minimized lexicographically by branch and bound; past ``budget`` search
    nodes the best cover found so far is returned (greedy first descent).
    """
    if not tile_set:
        raise ValueError("empty tile set")
    shapes = sorted({(a, b) for s in tile_set for a, b in (s, s[::-1])})
    if wa <= 0 or wb <= 0:
        return Tiling(wa, wb, [])
    grid = [[False] * wa for _ in range(wb)]
    best: list = [None, None]
    nodes = [0]

    def rec(start, tiles, dsp, lut):
        nodes[0] += 1
        if best[0] is not None and (dsp, lut) >= best[0]:
            return
        idx = _first_free(grid, wa, wb, start)
        if idx is None:
            best[0], best[1] = (dsp, lut), list(tiles)
            return
        if nodes[0] > budget and best[0] is not None:
            return
        y, x = divmod(idx, wa)
        for a, b in _candidates(grid, x, y, wa, wb, shapes):
            kind = _tile_kind(a, b, lut_threshold)
            _mark(grid, x, y, a, b, True)
            tiles.append(Tile(x, y, a, b, kind))
            rec(idx + 1, tiles, dsp + (kind == "dsp"), lut + (a * b if kind == "lut" else 0))
            tiles.pop()
            _mark(grid, x, y, a, b, False)

    rec(0, [], 0, 0)
    return Tiling(wa, wb, best[1], exhaustive=nodes[0] <= budget)


def check_cover(t: Tiling) -> bool:
    seen = set()
    for tile in t.tiles:
        for i in range(tile.x, tile.x + tile.wa):
            for j in range(tile.y, tile.y + tile.wb):
                if (i, j) in seen or not (0 <= i < t.wa and 0 <= j < t.wb):
                    return False
                seen.add((i, j))
    return len(seen) == t.wa * t.wb


# -- resource estimation -----------------------------------------------------------------------

def multiplier_operand_widths(g: Graph, node) -> Optional[tuple]:
    k = node.kind
    if k in ("mul", "fma") and isinstance(node.out, FloatT):
        return node.out.fmt.p, node.out.fmt.p
    if k == "fused_mul":
        ins = g.in_edges(node.id)
        w = g.nodes[ins[0].src].out.fmt.frac_width
        return w, w
    if k in ("mul", "u_mul"):
        a, b = (g.nodes[e.src].out.width for e in g.in_edges(node.id))
        return a, b
    return None


@dataclass
class ResourceReport:
    node_counts: dict
    multipliers: int
    dsp_tiles: int
    lut_mult_bits: int
    rom_bits: int
    register_bits: int
    latency: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def estimate_resources(g: Graph, tile_set: Sequence[tuple] = ((18, 18),),
                       lut_threshold: int = 0) -> ResourceReport:
    counts: dict = defaultdict(int)
    mults = dsp = lut = rom = 0
    cache: dict = {}
    for n in g.nodes.values():
        counts[n.kind] += 1
        w = multiplier_operand_widths(g, n)
        if w is not None:
            if n.kind == "u_mul" and n.attrs.get("origin_kind") in ("div",):
                continue
            mults += 1
            key = tuple(sorted(w))
            if key not in cache:
                cache[key] = tile_multiplier(key[0], key[1], tile_set, lut_threshold).cost
            d, l = cache[key]
            dsp += d
            lut += l
        if n.kind == "rom_lookup":
            rom += len(n.attrs["contents"]) * n.out.width
    deepest: dict = defaultdict(int)
    for e in g.edges:
        deepest[e.src] = max(deepest[e.src], max(e.sample_delay, 0))
    regs = sum(g.nodes[u].out.width * d for u, d in deepest.items())
    regs += sum(n.attrs.get("depth", 1) * n.out.width for n in g.nodes.values() if n.kind == "register")
    return ResourceReport(dict(sorted(counts.items())), mults, dsp, lut, rom, regs,
                          int(g.attrs.get("latency", 0)))
