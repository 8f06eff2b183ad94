"""Cycle-stepped simulation of dataflow graphs.

Every signal is held as its raw bit pattern. Node kernels decode operands
according to the operand types, compute, and re-encode; this lets behavioral
nodes and lowered bit-level primitives coexist in one graph (which is how
subsystem-scoped bit-accurate simulation works).

Timing model: nodes are combinational; an edge with sample delay ``d`` reads
its source ``d`` cycles back; a ``register`` node adds ``depth`` cycles. Values
before cycle 0, and a node's output before its ``start_cycle`` attribute, are
all-zero bit patterns; a register shows its ``init`` attribute (default
zero) until data reaches it.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Callable, Optional

from .. import fusedfp as ff
from ..softfloat import (
    FAITHFUL, RNE, FpValue, fp_add, fp_convert, fp_div, fp_fma, fp_mul, fp_neg,
    fp_sub, fixed_quantize, round_dyadic,
)
from .graph import Graph, check
from .trace import Trace
from .types import BitsT, FixedT, FloatT, FusedT

Kernel = Callable[..., int]


class SimulationError(RuntimeError):
    pass


def _mode(node):
    return FAITHFUL if node.attrs.get("rounding", "rne") == "faithful" else RNE


def _mask(w):
    return (1 << w) - 1


# -- fixed point helpers -------------------------------------------------------

def _fx(bits, t):
    """(signed integer, fraction length) of a fixed or raw-bits operand."""
    if isinstance(t, FixedT):
        return t.fmt.to_int(bits), t.fmt.frac
    return bits, 0


def _fx_out(n_int, frac, out: FixedT, overflow):
    f = out.fmt
    shift = frac - f.frac
    q = n_int >> shift if shift >= 0 else n_int << -shift  # floor
    return f.from_int(q, overflow)


def _fixed_arith(node, args, ts, c):
    ov = node.attrs.get("overflow", "wrap")
    vals = [_fx(a, t) for a, t in zip(args, ts)]
    k = node.kind
    if k == "neg":
        n, f = vals[0]
        return _fx_out(-n, f, node.out, ov)
    (na, fa), (nb, fb) = vals
    if k == "mul":
        return _fx_out(na * nb, fa + fb, node.out, ov)
    f = max(fa, fb)
    na <<= f - fa
    nb <<= f - fb
    return _fx_out(na + nb if k == "add" else na - nb, f, node.out, ov)


# -- behavioral kernels ----------------------------------------------------------

_FLOAT_BIN = {"add": fp_add, "sub": fp_sub, "mul": fp_mul, "div": fp_div}


def k_arith(node, args, ts, c):
    if isinstance(node.out, FixedT):
        return _fixed_arith(node, args, ts, c)
    fmt = node.out.fmt
    vals = [FpValue(fmt, a) for a in args]
    k = node.kind
    if k == "neg":
        return fp_neg(vals[0]).bits
    if k == "fma":
        return fp_fma(*vals, _mode(node)).bits
    return _FLOAT_BIN[k](vals[0], vals[1], _mode(node)).bits


def _fv(bits, t):
    return ff.FusedValue.unpack(bits, t.fmt)


def k_fused(node, args, ts, c):
    k = node.kind
    if k == "fused_add":
        return ff.fused_add(_fv(args[0], ts[0]), _fv(args[1], ts[1])).pack()
    if k == "fused_sub":
        return ff.fused_sub(_fv(args[0], ts[0]), _fv(args[1], ts[1])).pack()
    if k == "fused_mul":
        form = node.attrs.get("form", "level0")
        return ff.fused_mul(_fv(args[0], ts[0]), _fv(args[1], ts[1]), form).pack()
    return ff.normalize(_fv(args[0], ts[0])).pack()


def k_cast(node, args, ts, c):
    if node.attrs["to"] == "fused":
        return ff.cast_from_ieee(FpValue(ts[0].fmt, args[0]), node.out.fmt.g).pack()
    return ff.cast_to_ieee(_fv(args[0], ts[0])).bits


def k_convert(node, args, ts, c):
    src, dst = ts[0], node.out
    mode = _mode(node)
    if isinstance(src, FloatT) and isinstance(dst, FloatT):
        return fp_convert(FpValue(src.fmt, args[0]), dst.fmt, mode).bits
    if isinstance(src, FixedT) and isinstance(dst, FloatT):
        n, f = _fx(args[0], src)
        if n == 0:
            return 0
        return round_dyadic(1 if n < 0 else 0, abs(n), -f, dst.fmt, mode).bits
    if isinstance(src, FloatT) and isinstance(dst, FixedT):
        v = FpValue(src.fmt, args[0])
        ov = node.attrs.get("overflow", "saturate")
        if v.is_nan():
            return 0
        if v.is_inf():
            big = Fraction(1 << (dst.fmt.width + 1))
            return fixed_quantize(-big if v.sign else big, dst.fmt, "saturate")
        return fixed_quantize(v.to_fraction(), dst.fmt, ov)
    if isinstance(dst, FixedT):
        n, f = _fx(args[0], src)
        return _fx_out(n, f, dst, node.attrs.get("overflow", "wrap"))
    raise SimulationError(f"node {node.id}: unsupported conversion {src} -> {dst}")


def k_cmp(node, args, ts, c):
    op = node.attrs.get("op", "lt")
    t = ts[0]
    if isinstance(t, FloatT):
        va, vb = FpValue(t.fmt, args[0]), FpValue(t.fmt, args[1])
        if va.is_nan() or vb.is_nan():
            return 1 if op == "ne" else 0
        a, b = _float_key(va), _float_key(vb)
    elif isinstance(t, FixedT):
        (na, fa), (nb, fb) = _fx(args[0], ts[0]), _fx(args[1], ts[1])
        f = max(fa, fb)
        a, b = na << (f - fa), nb << (f - fb)
    else:
        a, b = args
    return int({"lt": a < b, "le": a <= b, "eq": a == b, "ne": a != b,
                "gt": a > b, "ge": a >= b}[op])


def _float_key(v: FpValue):
    if v.is_inf():
        return Fraction(-1 if v.sign else 1) * Fraction(2) ** (v.fmt.emax + 2)
    return v.to_fraction()


def k_func(node, args, ts, c):
    from ..funcgen import eval_func_node
    return eval_func_node(node, args[0], ts[0])


def k_func_reduce(node, args, ts, c):
    from ..funcgen import reduce_kernel
    return reduce_kernel(node, args[0], ts[0])


def k_func_reconstruct(node, args, ts, c):
    from ..funcgen import reconstruct_kernel
    return reconstruct_kernel(node, args, ts)


# -- kernels shared by both tiers ---------------------------------------------------

def k_const(node, args, ts, c):
    return node.attrs.get("value", 0)


def k_pass(node, args, ts, c):
    return args[0]


def k_counter(node, args, ts, c):
    return (c - node.attrs.get("phase", 0)) % node.attrs["modulus"]


def k_mux(node, args, ts, c):
    sel = args[0]
    if sel >= len(args) - 1:
        raise SimulationError(f"node {node.id}: select {sel} out of range")
    return args[1 + sel]


def k_rom(node, args, ts, c):
    return node.attrs["contents"][args[0]]


def k_slice(node, args, ts, c):
    return (args[0] >> node.attrs.get("lo", 0)) & _mask(node.out.width)


def k_concat(node, args, ts, c):
    return (args[0] << ts[1].width) | args[1]


def _u(fn):
    def kernel(node, args, ts, c):
        return fn(node, args, ts) & _mask(node.out.width)
    return kernel


def _signed(x, w):
    return x - (1 << w) if x >> (w - 1) else x


def _lzc(node, a, ts):
    w = ts[0].width
    return w - a[0].bit_length()


def _resize(node, a, ts):
    x = a[0]
    if node.attrs.get("signed"):
        x = _signed(x, ts[0].width)
    return x


def _divu(node, a, ts):
    return a[0] // a[1] if a[1] else _mask(node.out.width)


def _modu(node, a, ts):
    return a[0] % a[1] if a[1] else a[0]


SHARED_KERNELS: dict[str, Kernel] = {
    "const": k_const, "register": k_pass, "output": k_pass, "counter": k_counter,
    "mux": k_mux, "rom_lookup": k_rom, "slice": k_slice, "concat": k_concat,
    "reinterpret": k_pass,
    "func_reduce": k_func_reduce, "func_reconstruct": k_func_reconstruct,
    "u_add": _u(lambda n, a, t: a[0] + a[1]),
    "u_sub": _u(lambda n, a, t: a[0] - a[1]),
    "u_mul": _u(lambda n, a, t: a[0] * a[1]),
    "u_and": _u(lambda n, a, t: a[0] & a[1]),
    "u_or": _u(lambda n, a, t: a[0] | a[1]),
    "u_xor": _u(lambda n, a, t: a[0] ^ a[1]),
    "u_not": _u(lambda n, a, t: ~a[0]),
    "u_shl": _u(lambda n, a, t: a[0] << a[1] if a[1] < n.out.width else 0),
    "u_shr": _u(lambda n, a, t: a[0] >> a[1]),
    "u_lzc": _u(_lzc),
    "u_eq": _u(lambda n, a, t: int(a[0] == a[1])),
    "u_ult": _u(lambda n, a, t: int(a[0] < a[1])),
    "u_slt": _u(lambda n, a, t: int(_signed(a[0], t[0].width) < _signed(a[1], t[1].width))),
    "u_orr": _u(lambda n, a, t: int(a[0] != 0)),
    "u_resize": _u(_resize),
    "u_divu": _u(_divu),
    "u_modu": _u(_modu),
}

# fixed-point arithmetic, comparisons and fixed<->fixed conversion are
# already bit-level; they are legal in lowered netlists.
BEHAVIORAL_KERNELS: dict[str, Kernel] = {
    **SHARED_KERNELS,
    "add": k_arith, "sub": k_arith, "mul": k_arith, "div": k_arith, "fma": k_arith,
    "neg": k_arith, "fused_add": k_fused, "fused_sub": k_fused, "fused_mul": k_fused,
    "normalize": k_fused, "cast": k_cast, "convert": k_convert, "cmp": k_cmp,
    "func": k_func,
}


def is_lowered_node(g: Graph, node) -> bool:
    k = node.kind
    if k in SHARED_KERNELS or k == "input":
        return True
    if k in ("add", "sub", "mul", "neg") and isinstance(node.out, FixedT):
        return True
    if k == "convert" and isinstance(node.out, FixedT):
        ins = [g.nodes[e.src].out for e in g.in_edges(node.id)]
        return all(not isinstance(t, (FloatT, FusedT)) for t in ins)
    if k == "cmp":
        ins = [g.nodes[e.src].out for e in g.in_edges(node.id)]
        return all(not isinstance(t, (FloatT, FusedT)) for t in ins)
    return False


def is_lowered(g: Graph) -> bool:
    return all(is_lowered_node(g, n) for n in g.nodes.values())


def _bit_kernel(kind):
    def kernel(node, args, ts, c):
        return BEHAVIORAL_KERNELS[kind](node, args, ts, c)
    return kernel


def run(g: Graph, stim: Trace, cycles: Optional[int] = None,
        kernels: Optional[dict] = None, probe: Optional[list] = None) -> Trace:
    """Core cycle loop. ``probe`` adds internal node ids to the returned trace."""
    kernels = kernels or BEHAVIORAL_KERNELS
    for e in g.edges:
        if e.sample_delay < 0:
            raise SimulationError(
                f"edge {e.src} -> {e.dst} has sample delay {e.sample_delay}; "
                "schedule the graph before simulating")
    if cycles is None:
        cycles = stim.cycles if stim.ports else 0
    order = g.combinational_order()
    opmap = g.operand_map()
    index = {nid: i for i, nid in enumerate(order)}
    plan = []
    for nid in order:
        n = g.nodes[nid]
        ops = opmap.get(nid, [])
        depth = n.attrs.get("depth", 1) if n.kind == "register" else 0
        srcs = [(index[e.src], e.sample_delay + depth) for e in ops]
        ts = [g.nodes[e.src].out for e in ops]
        start = n.attrs.get("start_cycle", 0)
        if n.kind == "register":
            # a register shows its initial value until real data arrives
            start = max(start, srcs[0][1])
        if n.kind == "input":
            port = n.attrs["port"]
            if port not in stim.ports:
                raise SimulationError(f"no stimulus for input port {port!r}")
            seq = stim.ports[port]
            if len(seq) < cycles:
                raise SimulationError(f"stimulus for {port!r} has {len(seq)} cycles, need {cycles}")
            plan.append((n, None, srcs, ts, start, seq, n.attrs.get("index")))
            continue
        fn = kernels.get(n.kind)
        if fn is None:
            raise SimulationError(f"node {nid}: kind {n.kind!r} not supported by this simulator")
        plan.append((n, fn, srcs, ts, start, None, None))
    hist = [[] for _ in order]
    for c in range(cycles):
        for i, (n, fn, srcs, ts, start, seq, idx) in enumerate(plan):
            if c < start:
                hist[i].append(n.attrs.get("init", 0) if n.kind == "register" else 0)
                continue
            if fn is None:
                x = seq[c]
                hist[i].append(x if idx is None else x[idx])
                continue
            args = []
            for s, d in srcs:
                t = c - d
                args.append(hist[s][t] if t >= 0 else 0)
            hist[i].append(fn(n, args, ts, c))
    out: dict = {}
    for p in g.ports:
        if p.direction != "out":
            continue
        nodes = g.io_nodes(p.name)
        cols = [hist[index[n.id]] for n in nodes if n.kind == "output"]
        if p.length is None:
            out[p.name] = list(cols[0])
        else:
            out[p.name] = [tuple(col[c] for col in cols) for c in range(cycles)]
    for nid in probe or ():
        out[nid] = list(hist[index[nid]])
    return Trace(out)


def simulate_behavioral(g: Graph, stim: Trace, cycles: Optional[int] = None) -> Trace:
    check(g)
    return run(g, stim, cycles, BEHAVIORAL_KERNELS)


BIT_KERNELS: dict[str, Kernel] = {**SHARED_KERNELS}
for _k in ("add", "sub", "mul", "neg", "convert", "cmp"):
    BIT_KERNELS[_k] = BEHAVIORAL_KERNELS[_k]


def simulate_bit_accurate(g_lowered: Graph, stim: Trace, cycles: Optional[int] = None) -> Trace:
    """Interpret a lowered netlist over integers."""
    check(g_lowered)
    bad = [n.id for n in g_lowered.nodes.values() if not is_lowered_node(g_lowered, n)]
    if bad:
        raise SimulationError(f"graph is not lowered; behavioral nodes remain: {', '.join(bad[:5])}")
    return run(g_lowered, stim, cycles, BIT_KERNELS)
