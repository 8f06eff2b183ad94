"""Silver-reference evaluation, error metrics, testbenches and the QRD study."""

from __future__ import annotations

import dataclasses
import json
import math
import random
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Optional, Sequence

from .funcgen import exact_func
from .fusedfp import FusedFormat
from .ir.graph import Graph, Node, check
from .ir.sim import BEHAVIORAL_KERNELS, run, simulate_behavioral, simulate_bit_accurate
from .ir.trace import Trace
from .ir.types import FixedT, FloatT, FusedT
from .softfloat import FpFormat, FpValue, encode_fraction, fp_convert, make_format


@dataclass(frozen=True)
class SilverConfig:
    w_e: int = 20
    w_f: int = 256

    @property
    def fmt(self) -> FpFormat:
        return make_format(self.w_e, self.w_f)


def _widest_wf(g: Graph) -> int:
    ws = [0]
    for n in g.nodes.values():
        if isinstance(n.out, FloatT):
            ws.append(n.out.fmt.w_f)
        elif isinstance(n.out, FusedT):
            ws.append(n.out.fmt.base.w_f)
    return max(ws)


def retype(g: Graph, fmt: FpFormat) -> Graph:
    """The same graph with every floating-point signal carried in ``fmt``.

    Fused signals keep their guard bits and tree level on the new base format.
    Float constants are converted exactly (the new format must be wider).
    """
    out = g.copy()
    for n in out.nodes.values():
        t = n.out
        if isinstance(t, FloatT):
            if n.kind == "const":
                n.attrs["value"] = fp_convert(FpValue(t.fmt, n.attrs.get("value", 0)), fmt).bits
            n.out = FloatT(fmt)
        elif isinstance(t, FusedT):
            n.out = FusedT(FusedFormat(fmt, t.fmt.g, t.fmt.level))
        if n.attrs.get("fmt") and isinstance(n.out, FloatT):
            n.attrs["fmt"] = fmt.name
    for p in out.ports:
        if isinstance(p.type, FloatT):
            p.type = FloatT(fmt)
    return out


def _k_func_exact(node, args, ts, c):
    return exact_func(node.attrs["fn"], args[0], node.out.fmt)


SILVER_KERNELS = {**BEHAVIORAL_KERNELS, "func": _k_func_exact}


def convert_stimulus(g: Graph, stim: Trace, fmt: FpFormat) -> Trace:
    ports = {}
    for p in g.ports:
        if p.direction != "in" or p.name not in stim.ports:
            continue
        seq = stim[p.name]
        if isinstance(p.type, FloatT):
            def conv(x, src=p.type.fmt):
                return fp_convert(FpValue(src, x), fmt).bits
            seq = [tuple(conv(v) for v in x) if isinstance(x, tuple) else conv(x) for x in seq]
        ports[p.name] = list(seq)
    return Trace(ports)


def silver_eval(g: Graph, stim: Trace, config: SilverConfig = SilverConfig()) -> tuple[Trace, Graph]:
    """Evaluate ``g`` with every float signal at reference precision.

    Returns the reference trace and the retyped graph (whose port types decode
    it). Elementary-function nodes are correctly rounded at that precision.
    """
    fmt = config.fmt
    if fmt.w_f < 4 * _widest_wf(g):
        raise ValueError(f"reference fraction width {fmt.w_f} is below 4x the design's widest")
    sg = retype(g, fmt)
    return run(sg, convert_stimulus(g, stim, fmt), kernels=SILVER_KERNELS), sg


# -- metrics ----------------------------------------------------------------------------------

def decode_value(bits: int, t):
    """Exact value of a bit pattern: Fraction, ``None`` for NaN, +-inf as float."""
    if isinstance(t, FloatT):
        v = FpValue(t.fmt, bits)
        if v.is_nan():
            return None
        if v.is_inf():
            return -math.inf if v.sign else math.inf
        return v.to_fraction()
    if isinstance(t, FixedT):
        return Fraction(t.fmt.to_int(bits), 1 << t.fmt.frac)
    return Fraction(bits)


def decode_trace(trace: Trace, g: Graph, direction: str = "out") -> dict:
    """Flat per-port lists of exact values (vector elements in cycle-major order)."""
    out = {}
    for p in g.ports:
        if p.direction != direction or p.name not in trace.ports:
            continue
        vals = []
        for x in trace[p.name]:
            for v in (x if isinstance(x, tuple) else (x,)):
                vals.append(decode_value(v, p.type))
        out[p.name] = vals
    return out


@dataclass
class ErrorMetrics:
    rms_rel: float
    max_rel: float
    min_rel: float
    max_ulp: float
    mismatches: int
    count: int

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _rel(t, r):
    if t is None or r is None:
        return None if (t is None) != (r is None) else 0.0
    if isinstance(t, float) or isinstance(r, float):
        return 0.0 if t == r else math.inf
    if r == 0:
        return float(abs(t))
    return float(abs(t - r) / abs(r))


def _ulp_err(t, r, fmt: Optional[FpFormat]):
    if fmt is None or not isinstance(t, Fraction) or not isinstance(r, Fraction):
        return 0.0
    ref = encode_fraction(r, fmt)
    if ref.is_inf():
        return math.inf
    return float(abs(t - r) / ref.ulp())


def error_metrics(test: Sequence, ref: Sequence, fmt: Optional[FpFormat] = None) -> ErrorMetrics:
    """Relative error per element; ``ref == 0`` elements are compared absolutely.

    ``test`` and ``ref`` hold exact values as produced by :func:`decode_value`.
    A NaN on one side only counts as an infinite error.
    """
    if len(test) != len(ref):
        raise ValueError(f"length mismatch: {len(test)} vs {len(ref)}")
    rels, ulps = [], []
    mism = 0
    for t, r in zip(test, ref):
        if t != r:
            mism += 1
        e = _rel(t, r)
        rels.append(math.inf if e is None else e)
        ulps.append(_ulp_err(t, r, fmt))
    if not rels:
        return ErrorMetrics(0.0, 0.0, 0.0, 0.0, 0, 0)
    rms = math.sqrt(math.fsum(e * e for e in rels) / len(rels))
    return ErrorMetrics(rms, max(rels), min(rels), max(ulps), mism, len(rels))


def spectrum_relative_metrics(test: Sequence, ref: Sequence) -> ErrorMetrics:
    """Per-bin error normalized by the RMS magnitude of the whole reference spectrum."""
    if len(test) != len(ref):
        raise ValueError(f"length mismatch: {len(test)} vs {len(ref)}")
    if not ref:
        return ErrorMetrics(0.0, 0.0, 0.0, 0.0, 0, 0)
    power = math.sqrt(math.fsum(float(r) ** 2 for r in ref) / len(ref))
    scale = power if power else 1.0
    errs = [float(abs(Fraction(t) - Fraction(r))) / scale for t, r in zip(test, ref)]
    rms = math.sqrt(math.fsum(e * e for e in errs) / len(errs))
    mism = sum(1 for t, r in zip(test, ref) if t != r)
    return ErrorMetrics(rms, max(errs), min(errs), 0.0, mism, len(errs))


def compare_to_silver(g: Graph, stim: Trace, config: SilverConfig = SilverConfig(),
                      test: Optional[Trace] = None) -> ErrorMetrics:
    """Metrics of the design's behavioral outputs against its silver reference."""
    test = test or simulate_behavioral(g, stim)
    ref, sg = silver_eval(g, stim, config)
    tv, rv = decode_trace(test, g), decode_trace(ref, sg)
    fmts = [p.type.fmt for p in g.ports if p.direction == "out" and isinstance(p.type, FloatT)]
    flat_t = [v for k in sorted(tv) for v in tv[k]]
    flat_r = [v for k in sorted(rv) for v in rv[k]]
    return error_metrics(flat_t, flat_r, fmts[0] if fmts else None)


def random_stimulus(g: Graph, samples: int, seed: int = 0, exp_span: int = 4) -> Trace:
    """Random data-rate stimulus for every input port.

    Float ports get finite values with exponents within ``exp_span`` of zero
    (random sign and fraction); other ports get uniform random bit patterns.
    """
    rng = random.Random(seed)

    def word(t):
        if isinstance(t, FloatT):
            f = t.fmt
            e = f.bias + rng.randint(-exp_span, exp_span)
            e = min(max(e, 1), (1 << f.w_e) - 2)
            return (rng.getrandbits(1) << (f.w_e + f.w_f)) | (e << f.w_f) | rng.getrandbits(f.w_f)
        return rng.getrandbits(t.width)

    ports = {}
    for p in g.ports:
        if p.direction != "in":
            continue
        if p.length is None:
            ports[p.name] = [word(p.type) for _ in range(samples)]
        else:
            ports[p.name] = [tuple(word(p.type) for _ in range(p.length)) for _ in range(samples)]
    return Trace(ports)


# -- testbenches ---------------------------------------------------------------------------------

def _widths(g: Graph) -> dict:
    return {p.name: p.type.width for p in g.ports}


def gen_testbench(g: Graph, stim: Trace, out_dir, fold: int = 1,
                  expected: Optional[Trace] = None) -> Path:
    """Write graph, stimulus, expected outputs and a manifest; returns the manifest path.

    Traces are at the data rate. For a folded graph pass its folding factor;
    replay then holds each sample for ``fold`` clock cycles.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if expected is None:
        if fold > 1:
            from .folding import simulate_folded
            expected = simulate_folded(g, stim, fold)
        else:
            expected = simulate_behavioral(g, stim)
    w = _widths(g)
    (out / "graph.json").write_text(g.to_json())
    (out / "stimulus.csv").write_text(stim.to_csv(w))
    (out / "expected.csv").write_text(expected.to_csv(w))
    manifest = {
        "graph": "graph.json",
        "stimulus": "stimulus.csv",
        "expected": "expected.csv",
        "cycles": stim.cycles,
        "fold": fold,
        "ports": [{"name": p.name, "direction": p.direction, "type": str(p.type),
                   "length": p.length} for p in g.ports],
    }
    path = out / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


@dataclass
class Mismatch:
    cycle: int
    port: str
    index: Optional[int]
    expected: int
    got: int

    def __str__(self):
        where = self.port if self.index is None else f"{self.port}[{self.index}]"
        return f"cycle {self.cycle} port {where}: expected {self.expected:#x}, got {self.got:#x}"


def load_testbench(manifest) -> tuple[Graph, Trace, Trace]:
    path = Path(manifest)
    m = json.loads(path.read_text())
    base = path.parent
    g = Graph.from_json((base / m["graph"]).read_text())
    stim = Trace.from_csv((base / m["stimulus"]).read_text())
    exp = Trace.from_csv((base / m["expected"]).read_text())
    return g, stim, exp


def check_testbench(manifest) -> list[Mismatch]:
    """Replay a testbench on the bit-accurate simulator and list mismatches."""
    from .ir.lower import lower
    g, stim, exp = load_testbench(manifest)
    fold = json.loads(Path(manifest).read_text()).get("fold", 1)
    if fold > 1:
        from .folding import simulate_folded
        got = simulate_folded(lower(g), stim, fold)
    else:
        got = simulate_bit_accurate(lower(g), stim)
    out = []
    for name, seq in exp.ports.items():
        for c, want in enumerate(seq):
            have = got[name][c]
            if isinstance(want, tuple):
                for i, (a, b) in enumerate(zip(want, have)):
                    if a != b:
                        out.append(Mismatch(c, name, i, a, b))
            elif want != have:
                out.append(Mismatch(c, name, None, want, have))
    return out


# -- QR decomposition study ------------------------------------------------------------------------

TABLE2_FORMATS = ("f16m10", "f26m17", "f32m23", "f35m26", "f46m35", "f64m52")


def qrd_matrix(n: int, seed: int) -> list[Fraction]:
    """Fixed-seed matrix with entries uniform in [-1, 1) on a 2**-60 grid."""
    rng = random.Random(seed)
    return [Fraction(rng.randrange(-(1 << 60), 1 << 60), 1 << 60) for _ in range(n * n)]


def qrd_demo(n: int = 8, fmt: FpFormat = None, seed: int = 0, matrix: Optional[Sequence] = None,
             config: SilverConfig = SilverConfig()) -> ErrorMetrics:
    """Metrics of the ``fmt`` Givens QR against the silver evaluation of the same graph.

    The input matrix is rounded to ``fmt`` first, so both evaluations see the
    same inputs and only arithmetic error is measured.
    """
    from .designs import qrd_graph
    from .softfloat import parse_format
    fmt = fmt or parse_format("f32m23")
    vals = list(matrix) if matrix is not None else qrd_matrix(n, seed)
    g = qrd_graph(n, fmt)
    stim = Trace({"A": [tuple(encode_fraction(Fraction(v), fmt).bits for v in vals)]})
    return compare_to_silver(g, stim, config)
