"""Example designs used by the tests, the acceptance suite and the CLI."""

from __future__ import annotations

import functools
import random
from fractions import Fraction

import mpmath

from .funcgen import PolySpec, PolyTable, generate_poly_table, horner_nodes
from .fusedfp import build_dot_product
from .ir.graph import Graph, GraphBuilder, check
from .ir.types import BitsT, FixedT, FloatT
from .softfloat import FixedFormat, FpFormat, encode_fraction, parse_fixed

__all__ = [
    "build_dot_product", "nr_rsqrt", "nr_seed_table", "qrd_graph", "inverter_controller",
    "fir", "chain_accumulator", "random_fixed_graph", "random_float_graph", "small_share_instance",
    "EXAMPLES", "example",
]

NR_FMT = parse_fixed("s18.14")


@functools.lru_cache(maxsize=None)
def nr_seed_table(fmt: FixedFormat = NR_FMT) -> PolyTable:
    """Quadratic 1/sqrt(x) seed on [1, 2) with about 8 correct bits."""
    out = FixedFormat(True, fmt.width, fmt.frac - 2)
    spec = PolySpec(1, 2, 2, 0, fmt, out, Fraction(1, 1 << 9))
    return generate_poly_table(lambda x: 1 / mpmath.sqrt(x), spec)


def nr_rsqrt(fmt: FixedFormat = NR_FMT, iterations: int = 2) -> Graph:
    """Fixed-point 1/sqrt(x) for x in [1, 2): table seed plus Newton-Raphson.

    Each iteration is ``y <- 1.5*y - 0.5*x*y**3`` with five multipliers; with
    the quadratic seed (two multipliers) and two iterations the design has 12.
    """
    b = GraphBuilder(f"nr_rsqrt_{fmt.name}")
    t = FixedT(fmt)
    x = b.input("x", t)
    seed = horner_nodes(b, nr_seed_table(fmt), x, stem="seed")
    y = b.op("convert", t, seed, name="y0", overflow="saturate")
    half = b.const(t, fmt.from_int(1 << (fmt.frac - 1)))
    three_half = b.const(t, fmt.from_int(3 << (fmt.frac - 1)))
    for i in range(iterations):
        y2 = b.op("mul", t, y, y, name=f"it{i}_y2", overflow="saturate")
        y3 = b.op("mul", t, y2, y, name=f"it{i}_y3", overflow="saturate")
        xy3 = b.op("mul", t, x, y3, name=f"it{i}_xy3", overflow="saturate")
        h = b.op("mul", t, half, xy3, name=f"it{i}_h", overflow="saturate")
        ty = b.op("mul", t, three_half, y, name=f"it{i}_ty", overflow="saturate")
        y = b.op("sub", t, ty, h, name=f"it{i}_y", overflow="saturate")
    b.output("y", y)
    return check(b.build())


def qrd_graph(n: int, fmt: FpFormat) -> Graph:
    """Givens-rotation QR of an ``n x n`` matrix (port ``A``, row-major) into ``R``.

    ``1/sqrt(a*a + b*b)`` comes from a ``func`` rsqrt node. A rotation whose
    lower element is exactly zero is bypassed (c = 1, s = 0), so inputs that
    are already triangular pass through unchanged.
    """
    b = GraphBuilder(f"qrd{n}_{fmt.name}")
    ft = FloatT(fmt)
    cells = b.vector_input("A", ft, n * n)
    A = [[cells[r * n + c] for c in range(n)] for r in range(n)]
    zero = b.const(ft, 0)
    one = b.const(ft, encode_fraction(Fraction(1), fmt).bits)
    for j in range(n - 1):
        for i in range(n - 1, j, -1):
            top, bot = A[i - 1][j], A[i][j]
            ss = b.op("add", ft, b.op("mul", ft, top, top), b.op("mul", ft, bot, bot))
            inv = b.op("func", ft, ss, fn="rsqrt")
            skip = b.op("cmp", BitsT(1), bot, zero, op="eq")
            c = b.op("mux", ft, skip, b.op("mul", ft, top, inv), one)
            s = b.op("mux", ft, skip, b.op("mul", ft, bot, inv), zero)
            new_top, new_bot = list(A[i - 1]), list(A[i])
            new_top[j] = b.op("mux", ft, skip, b.op("mul", ft, ss, inv), top)
            new_bot[j] = zero
            for col in range(j + 1, n):
                u, v = A[i - 1][col], A[i][col]
                new_top[col] = b.op("add", ft, b.op("mul", ft, c, u), b.op("mul", ft, s, v))
                new_bot[col] = b.op("sub", ft, b.op("mul", ft, c, v), b.op("mul", ft, s, u))
            A[i - 1], A[i] = new_top, new_bot
    b.vector_output("R", [A[r][c] for r in range(n) for c in range(n)])
    return check(b.build())


def inverter_controller(fmt: FixedFormat = NR_FMT) -> Graph:
    """Grid-tie inverter style control loop: PI current control plus PWM compare.

    Ports: ``v`` and ``i`` (measured voltage and current), ``ref`` (current
    reference) and ``carrier`` (PWM ramp); outputs the modulation index
    ``duty``, the gate signal ``gate`` and the instantaneous power ``p``.
    """
    b = GraphBuilder("inverter_ctrl")
    t = FixedT(fmt)
    v, i, ref, carrier = (b.input(nm, t) for nm in ("v", "i", "ref", "carrier"))

    def k(x):
        return b.const(t, fmt.from_int(round(x * (1 << fmt.frac))))

    err = b.op("sub", t, ref, i, overflow="saturate")
    ki_err = b.op("mul", t, k(0.05), err, overflow="saturate")
    integ = b.op("add", t, ki_err, ki_err, name="integ", overflow="saturate")
    b.g.edges = [e for e in b.g.edges if e.dst != "integ"]
    b.g.connect(ki_err, "integ", 0)
    b.g.connect("integ", "integ", 1, 1)
    kp_err = b.op("mul", t, k(0.8), err, overflow="saturate")
    ff = b.op("mul", t, k(0.02), v, overflow="saturate")
    u = b.op("add", t, b.op("add", t, kp_err, integ, overflow="saturate"), ff, overflow="saturate")
    hi, lo = k(0.95), k(-0.95)
    over = b.op("cmp", BitsT(1), u, hi, op="gt")
    under = b.op("cmp", BitsT(1), u, lo, op="lt")
    clamped = b.op("mux", t, over, b.op("mux", t, under, u, lo), hi)
    duty = b.op("add", t, b.op("mul", t, k(0.5), clamped, overflow="saturate"), k(0.5), overflow="saturate")
    gate = b.op("cmp", BitsT(1), duty, carrier, op="gt")
    p = b.op("mul", t, v, i, overflow="saturate")
    b.output("duty", duty)
    b.output("gate", gate)
    b.output("p", p)
    return check(b.build())


def fir(taps: list, fmt: FixedFormat = NR_FMT) -> Graph:
    """Direct-form FIR filter with a delay line on the input."""
    b = GraphBuilder(f"fir{len(taps)}")
    t = FixedT(fmt)
    x = b.input("x", t)
    acc = None
    for d, c in enumerate(taps):
        coef = b.const(t, fmt.from_int(round(c * (1 << fmt.frac))))
        term = b.op("mul", t, coef, (x, d), overflow="saturate")
        acc = term if acc is None else b.op("add", t, acc, term, overflow="saturate")
    b.output("y", acc)
    return check(b.build())


def chain_accumulator(n: int, fmt: FpFormat) -> Graph:
    """Floating-point running sum of an ``n``-element vector per sample."""
    b = GraphBuilder(f"chain{n}_{fmt.name}")
    ft = FloatT(fmt)
    xs = b.vector_input("x", ft, n)
    acc = xs[0]
    for x in xs[1:]:
        acc = b.op("add", ft, acc, x)
    b.output("y", acc)
    return check(b.build())


def random_fixed_graph(seed: int, n_ops: int = 10, fmt: FixedFormat = parse_fixed("s16.8"),
                       loop_prob: float = 0.2, max_delay: int = 2) -> Graph:
    """Random fixed-point dataflow graph; loops always carry a sample delay."""
    rng = random.Random(seed)
    b = GraphBuilder(f"rand_fixed_{seed}")
    t = FixedT(fmt)
    pool = [b.input(f"x{i}", t) for i in range(rng.randint(1, 3))]
    ops = []
    for _ in range(n_ops):
        kind = rng.choice(["add", "add", "sub", "mul", "mul", "neg"])
        arity = 1 if kind == "neg" else 2
        srcs = [(rng.choice(pool), rng.choice([0, 0, 0, rng.randint(0, max_delay)])) for _ in range(arity)]
        nid = b.op(kind, t, *srcs, overflow="wrap")
        ops.append(nid)
        pool.append(nid)
    # feedback edges: replace an operand of an early op by a later op, delayed
    for nid in ops:
        if rng.random() < loop_prob:
            later = ops[ops.index(nid) + 1:]
            if later:
                src = rng.choice(later)
                e = b.g.in_edges(nid)[0]
                e.src, e.sample_delay = src, rng.randint(1, max_delay + 1)
    sinks = [o for o in ops if not b.g.out_edges(o)] or ops[-1:]
    for i, s in enumerate(sinks):
        b.output(f"y{i}", s)
    return check(b.build())


def random_float_graph(seed: int, n_ops: int = 10, fmt: FpFormat = None) -> Graph:
    """Random floating-point DAG with occasional sample delays."""
    from .softfloat import parse_format
    fmt = fmt or parse_format("f16m10")
    rng = random.Random(seed)
    b = GraphBuilder(f"rand_float_{seed}")
    ft = FloatT(fmt)
    pool = [b.input(f"x{i}", ft) for i in range(rng.randint(2, 3))]
    ops = []
    for _ in range(n_ops):
        kind = rng.choice(["add", "sub", "mul", "mul", "fma", "neg"])
        arity = {"neg": 1, "fma": 3}.get(kind, 2)
        srcs = [(rng.choice(pool), rng.choice([0, 0, 0, 1])) for _ in range(arity)]
        nid = b.op(kind, ft, *srcs)
        ops.append(nid)
        pool.append(nid)
    sinks = [o for o in ops if not b.g.out_edges(o)] or ops[-1:]
    for i, s in enumerate(sinks):
        b.output(f"y{i}", s)
    return check(b.build())


def small_share_instance(seed: int) -> Graph:
    """Few multipliers and adders: small enough for exhaustive sharing search."""
    rng = random.Random(1000 + seed)
    fmt = parse_fixed("s12.6")
    b = GraphBuilder(f"share_{seed}")
    t = FixedT(fmt)
    pool = [b.input(f"x{i}", t) for i in range(3)]
    for _ in range(rng.randint(4, 6)):
        kind = rng.choice(["mul", "mul", "add"])
        pool.append(b.op(kind, t, rng.choice(pool), rng.choice(pool), overflow="wrap"))
    b.output("y", pool[-1])
    used = {e.src for e in b.g.edges}
    for i, nid in enumerate(n for n in pool[3:-1] if n not in used):
        b.output(f"z{i}", nid)
    return check(b.build())


def _dot16(style):
    from .softfloat import parse_format
    return lambda: build_dot_product(16, parse_format("f32m23"), style)


EXAMPLES = {
    "dot16_fused": _dot16("fused"),
    "dot16_ieee": _dot16("ieee_assembly"),
    "nr_rsqrt": nr_rsqrt,
    "inverter": inverter_controller,
    "fir8": lambda: fir([0.1, -0.2, 0.3, 0.4, 0.4, 0.3, -0.2, 0.1]),
}


def example(name: str) -> Graph:
    try:
        return EXAMPLES[name]()
    except KeyError:
        raise ValueError(f"unknown example {name!r}; known: {', '.join(sorted(EXAMPLES))}") from None
