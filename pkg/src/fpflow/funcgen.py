"""Piecewise-polynomial function generation with Horner evaluation.

A :class:`PolyTable` splits ``[a, b)`` into ``2**k`` equal subintervals and
stores one set of fixed-point coefficients per subinterval. The top ``k``
bits of the offset ``x - a`` select the row, the remaining bits form the
reduced argument ``t``, and the polynomial is evaluated as
``((c_d t + c_{d-1}) t + ...) t + c_0`` with each product truncated to
``out.frac + 2`` fractional bits. The rounding constant for the final
truncation is folded into ``c_0``.

Floating-point functions (exp, log, the rsqrt seed and a seeded
Newton-Raphson rsqrt) combine a range-reduction primitive, a Horner core and a
reconstruction primitive.
"""

from __future__ import annotations

import functools
import json
import random
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional

import mpmath

from .ir.graph import Graph, GraphBuilder, Node, check
from .ir.types import BitsT, FixedT, FloatT
from .softfloat import (
    RNE, FixedFormat, FpFormat, FpValue, encode_fraction, parse_fixed, parse_format,
    round_dyadic,
)

GUARD_BITS = 2      # extra fractional bits kept by every Horner product
COEF_GUARD = 3      # extra fractional bits of every coefficient column
EXHAUSTIVE_BITS = 16
DEFAULT_SAMPLES = 10 ** 6


class FuncGenError(ValueError):
    pass


def _frac(x) -> str:
    x = Fraction(x)
    return str(x.numerator) if x.denominator == 1 else f"{x.numerator}/{x.denominator}"


def _mpf_to_fraction(v) -> Fraction:
    v = mpmath.mpf(v)
    if not v:
        return Fraction(0)
    man, exp = int(v.man), int(v.exp)
    sign = -1 if v < 0 else 1
    return sign * (Fraction(abs(man)) * (Fraction(2) ** exp))


def _mpf(x: Fraction):
    return mpmath.mpf(x.numerator) / x.denominator


@dataclass(frozen=True)
class PolySpec:
    a: Fraction
    b: Fraction
    degree: int
    k: int
    in_fmt: FixedFormat
    out_fmt: FixedFormat
    target_error: Optional[Fraction] = None  # None: faithful (< 1 ulp)

    def __post_init__(self):
        object.__setattr__(self, "a", Fraction(self.a))
        object.__setattr__(self, "b", Fraction(self.b))
        if self.b <= self.a:
            raise FuncGenError("interval must satisfy b > a")
        if self.degree < 0 or self.k < 0:
            raise FuncGenError("degree and k must be non-negative")
        span = (self.b - self.a) * (1 << self.in_fmt.frac)
        if span.denominator != 1 or span.numerator & (span.numerator - 1):
            raise FuncGenError("(b - a) * 2**in_frac must be a power of two")
        if (self.a * (1 << self.in_fmt.frac)).denominator != 1:
            raise FuncGenError("a must be representable in the input format")

    @property
    def offset_bits(self) -> int:
        return ((self.b - self.a) * (1 << self.in_fmt.frac)).numerator.bit_length() - 1

    @property
    def ulp(self) -> Fraction:
        return Fraction(1, 1 << self.out_fmt.frac)

    def within_target(self, err: Fraction) -> bool:
        if self.target_error is None:
            return err < self.ulp
        return err <= self.target_error

    def with_k(self, k: int) -> "PolySpec":
        return PolySpec(self.a, self.b, self.degree, k, self.in_fmt, self.out_fmt, self.target_error)

    def to_dict(self) -> dict:
        return {"a": _frac(self.a), "b": _frac(self.b), "degree": self.degree, "k": self.k,
                "in_fmt": self.in_fmt.name, "out_fmt": self.out_fmt.name,
                "target_error": None if self.target_error is None else _frac(self.target_error)}

    @classmethod
    def from_dict(cls, d: dict) -> "PolySpec":
        te = d.get("target_error")
        return cls(Fraction(d["a"]), Fraction(d["b"]), d["degree"], d["k"],
                   parse_fixed(d["in_fmt"]), parse_fixed(d["out_fmt"]),
                   None if te is None else Fraction(te))


@dataclass
class PolyTable:
    spec: PolySpec
    columns: list            # FixedFormat per coefficient column c_0..c_d
    rows: list               # rows[j][i]: signed integer of c_i (c_0 includes the rounding bias)
    prod_fmt: FixedFormat
    acc_fmt: FixedFormat
    measured_error: Fraction = Fraction(0)
    validated: str = ""       # "exhaustive" | "sampled"

    @property
    def k(self) -> int:
        return self.spec.k

    @property
    def degree(self) -> int:
        return self.spec.degree

    @property
    def rom_word_width(self) -> int:
        return sum(c.width for c in self.columns)

    @property
    def rom_bits(self) -> int:
        return len(self.rows) * self.rom_word_width

    def rom_contents(self) -> list[int]:
        out = []
        for row in self.rows:
            word, lo = 0, 0
            for c, fmt in zip(row, self.columns):
                word |= fmt.from_int(c) << lo
                lo += fmt.width
            out.append(word)
        return out

    def to_dict(self) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "columns": [c.name for c in self.columns],
            "prod_fmt": self.prod_fmt.name,
            "acc_fmt": self.acc_fmt.name,
            "rows": [[hex(fmt.from_int(c)) for c, fmt in zip(row, self.columns)] for row in self.rows],
            "measured_error": _frac(self.measured_error),
            "validated": self.validated,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "PolyTable":
        cols = [parse_fixed(c) for c in d["columns"]]
        rows = [[fmt.to_int(int(h, 16)) for h, fmt in zip(r, cols)] for r in d["rows"]]
        return cls(PolySpec.from_dict(d["spec"]), cols, rows, parse_fixed(d["prod_fmt"]),
                   parse_fixed(d["acc_fmt"]), Fraction(d["measured_error"]), d.get("validated", ""))

    @classmethod
    def from_json(cls, text: str) -> "PolyTable":
        return cls.from_dict(json.loads(text))


# -- evaluation ---------------------------------------------------------------------------

def _split(table: PolyTable, x: int) -> tuple[int, int]:
    """(row, reduced argument integer) of an input bit pattern."""
    s = table.spec
    n = s.in_fmt.to_int(x)
    off = n - int(s.a * (1 << s.in_fmt.frac))
    w = s.offset_bits
    if not 0 <= off < (1 << w):
        raise FuncGenError(f"input {Fraction(n, 1 << s.in_fmt.frac)} outside [{s.a}, {s.b})")
    tw = w - s.k
    return off >> tw, off & ((1 << tw) - 1)


def horner_eval(table: PolyTable, x: int) -> int:
    """Evaluate the table at input pattern ``x``; returns an ``out_fmt`` pattern."""
    s = table.spec
    row, t = _split(table, x)
    coefs = table.rows[row]
    fc = table.acc_fmt.frac
    fp = table.prod_fmt.frac
    fin = s.in_fmt.frac
    acc = coefs[-1] << (fc - table.columns[-1].frac)
    for i in range(s.degree - 1, -1, -1):
        p = table.prod_fmt.to_int(table.prod_fmt.from_int((acc * t) >> (fc + fin - fp)))
        acc = p * (1 << (fc - fp)) + (coefs[i] << (fc - table.columns[i].frac))
        acc = table.acc_fmt.to_int(table.acc_fmt.from_int(acc))
    q = acc >> (fc - s.out_fmt.frac)
    return s.out_fmt.from_int(q, "saturate")


def horner_value(table: PolyTable, x: int) -> Fraction:
    return Fraction(table.spec.out_fmt.to_int(horner_eval(table, x)), 1 << table.spec.out_fmt.frac)


# -- generation ---------------------------------------------------------------------------

def _cheb_coeffs(f, x0: Fraction, h: Fraction, d: int):
    """Monomial coefficients in ``t = x - x0`` of the Chebyshev-node interpolant on [x0, x0+h]."""
    if d == 0:
        return [f(_mpf(x0 + h / 2))]
    hm = _mpf(h)
    nodes = [hm / 2 * (1 + mpmath.cos((2 * i + 1) * mpmath.pi / (2 * (d + 1)))) for i in range(d + 1)]
    A = mpmath.matrix([[t ** j for j in range(d + 1)] for t in nodes])
    y = mpmath.matrix([f(_mpf(x0) + t) for t in nodes])
    sol = mpmath.lu_solve(A, y)
    return [sol[j] for j in range(d + 1)]


def _bits_for(mag: Fraction) -> int:
    """Integer bits (excluding sign) needed to hold magnitudes up to ``mag``."""
    n = 0
    while Fraction(1 << n) <= mag:
        n += 1
    return n


def _quantize_table(f, spec: PolySpec) -> PolyTable:
    d, k = spec.degree, spec.k
    h = (spec.b - spec.a) / (1 << k)
    fo = spec.out_fmt.frac
    fc = fo + (COEF_GUARD if d > 0 else 1)
    fp = fo + GUARD_BITS
    real = [_cheb_coeffs(f, spec.a + j * h, h, d) for j in range(1 << k)]
    rows = [[int(mpmath.nint(c * (mpmath.mpf(2) ** fc))) for c in r] for r in real]
    bias = 1 << (fc - fo - 1)
    for r in rows:
        r[0] += bias
    cols = []
    for i in range(d + 1):
        mag = max(Fraction(abs(r[i]), 1 << fc) for r in rows)
        cols.append(FixedFormat(True, 1 + _bits_for(mag) + fc, fc))
    # magnitude bound of the running Horner value
    bound = Fraction(0)
    for i in range(d, -1, -1):
        mag = max(Fraction(abs(r[i]), 1 << fc) for r in rows)
        bound = bound * h + mag + Fraction(1, 1 << fp)
    ib = _bits_for(bound) + 1
    prod = FixedFormat(True, 1 + ib + fp, fp)
    acc = FixedFormat(True, 1 + ib + fc, fc)
    return PolyTable(spec, cols, rows, prod, acc)


class _Inputs:
    """Validation inputs of a spec with cached oracle values."""

    def __init__(self, f, spec: PolySpec, samples: int, seed: int):
        self.f = f
        self.spec = spec
        w = spec.offset_bits
        self.base = int(spec.a * (1 << spec.in_fmt.frac))
        self.offsets: set = set()
        self.patterns: list = []
        self.values: list = []
        if w <= EXHAUSTIVE_BITS or (1 << w) <= samples:
            self.kind = "exhaustive"
            self._add(range(1 << w))
        else:
            self.kind = "sampled"
            rng = random.Random(seed)
            step = (1 << w) // samples
            self._add(i * step + rng.randrange(step) for i in range(samples))

    def _add(self, offs):
        scale = mpmath.mpf(2) ** -self.spec.in_fmt.frac
        for o in offs:
            if o in self.offsets:
                continue
            self.offsets.add(o)
            self.patterns.append(self.spec.in_fmt.from_int(self.base + o))
            self.values.append(self.f((self.base + o) * scale))

    def add_endpoints(self, k: int):
        """First and last input of every subinterval at split ``k``."""
        if self.kind == "exhaustive":
            return
        tw = self.spec.offset_bits - k
        self._add(o for j in range(1 << k) for o in (j << tw, ((j + 1) << tw) - 1))


def measure_error(table: PolyTable, inputs: _Inputs) -> Fraction:
    fo = table.spec.out_fmt.frac
    worst = mpmath.mpf(0)
    for x, fx in zip(inputs.patterns, inputs.values):
        y = mpmath.mpf(table.spec.out_fmt.to_int(horner_eval(table, x))) / (1 << fo)
        e = abs(y - fx)
        if e > worst:
            worst = e
    return _mpf_to_fraction(worst)


def approximate(f: Callable, spec: PolySpec, samples: int = DEFAULT_SAMPLES, seed: int = 0) -> PolyTable:
    """Table at exactly ``spec.k`` with its measured error, without the target check."""
    prec = max(64, spec.out_fmt.frac + spec.in_fmt.width + 40)
    with mpmath.workprec(prec):
        inputs = _Inputs(f, spec, samples, seed)
        inputs.add_endpoints(spec.k)
        t = _quantize_table(f, spec)
        t.measured_error = measure_error(t, inputs)
        t.validated = inputs.kind
    return t


def generate_poly_table(f: Callable, spec: PolySpec, retry: bool = True, k_max: Optional[int] = None,
                        samples: int = DEFAULT_SAMPLES, seed: int = 0) -> PolyTable:
    """Build and validate a table; on failure retry with ``k + 1`` up to ``k_max``.

    ``f`` maps an mpmath number to an mpmath number and is evaluated at a
    working precision well above the output format.
    """
    prec = max(64, spec.out_fmt.frac + spec.in_fmt.width + 40)
    w = spec.offset_bits
    if k_max is None:
        k_max = min(w, spec.k + 16)
    k_max = min(k_max, w)
    if spec.k > w:
        raise FuncGenError(f"k={spec.k} exceeds the {w} offset bits of the input")
    best = None
    with mpmath.workprec(prec):
        inputs = _Inputs(f, spec, samples, seed)
        k = spec.k
        while True:
            inputs.add_endpoints(k)
            t = _quantize_table(f, spec.with_k(k))
            t.measured_error = measure_error(t, inputs)
            t.validated = inputs.kind
            if best is None or t.measured_error < best.measured_error:
                best = t
            if t.spec.within_target(t.measured_error):
                return t
            if not retry or k >= k_max:
                break
            k += 1
    raise FuncGenError(
        f"target error not reached with degree {spec.degree}, k <= {k_max}: best "
        f"{float(best.measured_error):.3e} at k={best.k} (ulp {float(spec.ulp):.3e})")


# -- graph construction -------------------------------------------------------------------------

def horner_nodes(b: GraphBuilder, table: PolyTable, x: str, stem: str = "h") -> str:
    """Emit the ROM + Horner datapath for ``table`` reading fixed-point node ``x``."""
    s = table.spec
    w = s.offset_bits
    fin = s.in_fmt.frac
    if s.a == 0:
        off = b.op("slice", BitsT(w), x, lo=0, name=b._id(f"{stem}_off"))
    else:
        a_const = b.op("const", FixedT(s.in_fmt), name=b._id(f"{stem}_a"),
                       value=s.in_fmt.from_int(int(s.a * (1 << fin))))
        diff = b.op("sub", FixedT(FixedFormat(False, w, min(fin, w))), x, a_const,
                    name=b._id(f"{stem}_off"), overflow="wrap")
        off = b.op("reinterpret", BitsT(w), diff, name=b._id(f"{stem}_offb"))
    tw = w - s.k
    if s.k:
        idx = b.op("slice", BitsT(s.k), off, lo=tw, name=b._id(f"{stem}_idx"))
    else:
        idx = b.op("const", BitsT(1), name=b._id(f"{stem}_idx"), value=0)
    contents = table.rom_contents()
    if not s.k:
        contents = contents * 2  # a single row still needs a 1-bit address
    rom = b.op("rom_lookup", BitsT(table.rom_word_width), idx, name=b._id(f"{stem}_rom"),
               contents=contents)
    coefs, lo = [], 0
    for i, fmt in enumerate(table.columns):
        sl = b.op("slice", BitsT(fmt.width), rom, lo=lo, name=b._id(f"{stem}_s{i}_"))
        coefs.append(b.op("reinterpret", FixedT(fmt), sl, name=b._id(f"{stem}_c{i}_")))
        lo += fmt.width
    acc = coefs[-1]
    if s.degree:
        tfmt = FixedFormat(False, max(tw, fin, 1), fin)
        if tw:
            tb = b.op("slice", BitsT(tw), off, lo=0, name=b._id(f"{stem}_tb"))
            if tfmt.width > tw:
                tb = b.op("u_resize", BitsT(tfmt.width), tb, name=b._id(f"{stem}_tz"), signed=False)
            t = b.op("reinterpret", FixedT(tfmt), tb, name=b._id(f"{stem}_t"))
        else:
            t = b.op("const", FixedT(tfmt), name=b._id(f"{stem}_t"), value=0)
    for i in range(s.degree - 1, -1, -1):
        p = b.op("mul", FixedT(table.prod_fmt), acc, t, name=b._id(f"{stem}_m{i}_"), overflow="wrap")
        acc = b.op("add", FixedT(table.acc_fmt), p, coefs[i], name=b._id(f"{stem}_a{i}_"),
                   overflow="wrap")
    return b.op("convert", FixedT(s.out_fmt), acc, name=b._id(f"{stem}_y"), overflow="saturate")


def build_horner_graph(table: PolyTable, name: str = "horner") -> Graph:
    b = GraphBuilder(name)
    x = b.input("x", FixedT(table.spec.in_fmt))
    b.output("y", horner_nodes(b, table, x))
    return check(b.build())


# -- floating-point functions ------------------------------------------------------------------

SUPPORTED = ("exp", "log", "rsqrt_seed", "rsqrt")
ORACLES = {
    "exp": mpmath.exp,
    "log": mpmath.log,
    "rsqrt": lambda x: 1 / mpmath.sqrt(x),
    "rsqrt_seed": lambda x: 1 / mpmath.sqrt(x),
}
SEED_BITS = 9        # index bits of the rsqrt seed table
NEWTON_STEPS = 2


def _canon(name: str) -> str:
    n = name.replace("-", "_")
    if n not in SUPPORTED:
        raise FuncGenError(f"unsupported function {name!r}; supported: {', '.join(SUPPORTED)}")
    return n


def _log1p_over(t):
    return mpmath.log1p(t) / t if t else mpmath.mpf(1)


def _inv_sqrt1p(t):
    return 1 / mpmath.sqrt(1 + t)


@dataclass(frozen=True)
class FloatFnPlan:
    """Bit layout shared by the reduction, the table and the reconstruction."""

    name: str
    fmt: FpFormat
    F: int          # fraction bits of the reduced argument
    Fo: int         # fraction bits of the table output
    degree: int
    kw: int         # width of the integer field (k, e or e//2)

    @property
    def arg_fmt(self) -> FixedFormat:
        return FixedFormat(True, self.F + 1, self.F)

    @property
    def out_fmt(self) -> FixedFormat:
        return FixedFormat(False, self.Fo + 1, self.Fo)

    @property
    def packed_width(self) -> int:
        return self.F + 1 + self.kw + 1 + 2

    def pack(self, code: int, integer: int = 0, odd: int = 0, arg: int = 0) -> int:
        w = self.F + 1
        return ((code << (w + self.kw + 1)) | (odd << (w + self.kw))
                | ((integer & ((1 << self.kw) - 1)) << w) | (arg & ((1 << w) - 1)))

    def unpack(self, bits: int) -> tuple[int, int, int, int]:
        w = self.F + 1
        arg = bits & ((1 << w) - 1)
        integer = (bits >> w) & ((1 << self.kw) - 1)
        if integer >> (self.kw - 1):
            integer -= 1 << self.kw
        odd = (bits >> (w + self.kw)) & 1
        code = bits >> (w + self.kw + 1)
        return code, integer, odd, arg

    def table_spec(self) -> tuple[Callable, PolySpec]:
        af, of = self.arg_fmt, self.out_fmt
        if self.name == "exp":
            return mpmath.exp, PolySpec(Fraction(-1, 2), Fraction(1, 2), self.degree, 1, af, of)
        if self.name == "log":
            return _log1p_over, PolySpec(Fraction(-1, 4), Fraction(3, 4), self.degree, 1, af, of)
        return _inv_sqrt1p, PolySpec(0, 1, 0, self.F, af, of, Fraction(1, 1 << (self.F + 1)))


@functools.lru_cache(maxsize=None)
def plan_for(name: str, fmt: FpFormat) -> FloatFnPlan:
    name = _canon(name)
    if name == "rsqrt":
        name = "rsqrt_seed"
    p = fmt.p
    kw = (2 * fmt.emax + p + 8).bit_length() + 1
    if name == "exp":
        return FloatFnPlan(name, fmt, p + 4, p + 3, 2 if p <= 16 else 3, kw)
    if name == "log":
        return FloatFnPlan(name, fmt, p, p + 3, 2 if p <= 16 else 3, kw)
    return FloatFnPlan(name, fmt, SEED_BITS, SEED_BITS + 4, 0, kw)


@functools.lru_cache(maxsize=None)
def table_for(plan: FloatFnPlan) -> PolyTable:
    f, spec = plan.table_spec()
    return generate_poly_table(f, spec, samples=200_000 if plan.F > 20 else DEFAULT_SAMPLES)


_LN2_BITS = 16


def _ln2(bits: int) -> int:
    with mpmath.workprec(bits + 20):
        return int(mpmath.nint(mpmath.ln2 * (mpmath.mpf(2) ** bits)))


def _reduce(plan: FloatFnPlan, bits: int) -> int:
    v = FpValue(plan.fmt, bits)
    fmt = plan.fmt
    if plan.name == "exp":
        if v.is_nan():
            return plan.pack(3)
        if v.is_inf():
            return plan.pack(2 if v.sign else 1)
        x = v.to_fraction()
        hi = Fraction(fmt.emax + 2) * Fraction(7, 10)           # > (emax+1) ln2
        lo = -Fraction(fmt.bias + fmt.w_f + 3)                   # < (emin - p - 1) ln2 / ln2... bound below
        if x > hi:
            return plan.pack(1)
        if x < lo * Fraction(7, 10):
            return plan.pack(2)
        G = plan.F + 8
        L = G + _LN2_BITS
        xf = (x.numerator << L) // x.denominator                  # floor(x * 2**L)
        ln2 = _ln2(L)
        k = (2 * xf + ln2) // (2 * ln2)
        r = (xf - k * ln2) >> (L - plan.F)                        # floor to F bits
        return plan.pack(0, k, 0, plan.arg_fmt.from_int(r))
    if plan.name == "log":
        if v.is_nan() or (v.sign and not v.is_zero()):
            return plan.pack(3)
        if v.is_zero():
            return plan.pack(2)
        if v.is_inf():
            return plan.pack(1)
        _, m, e = v.integer_form()
        lead = e + m.bit_length() - 1
        # choose E with x / 2**E in [0.75, 1.5)
        E = lead
        if 2 * m >= 3 << (m.bit_length() - 1):    # m / 2**lead >= 1.5
            E = lead + 1
        t_num = Fraction(m) * Fraction(2) ** (e - E) - 1
        t = t_num * (1 << plan.F)
        assert t.denominator == 1
        return plan.pack(0, E, 0, plan.arg_fmt.from_int(int(t)))
    # rsqrt seed: x = (1 + t) * 2**e, t in [0, 1)
    if v.is_nan() or (v.sign and not v.is_zero()):
        return plan.pack(3)
    if v.is_zero():
        return plan.pack(1)
    if v.is_inf():
        return plan.pack(2)
    _, m, e = v.integer_form()
    lead = e + m.bit_length() - 1
    frac_bits = m.bit_length() - 1
    tf = m - (1 << frac_bits)
    t = tf >> (frac_bits - plan.F) if frac_bits >= plan.F else tf << (plan.F - frac_bits)
    return plan.pack(0, lead >> 1, lead & 1, t)


def _reconstruct(plan: FloatFnPlan, y: int, packed: int) -> int:
    fmt = plan.fmt
    code, integer, odd, arg = plan.unpack(packed)
    if plan.name == "exp":
        if code == 3:
            return fmt.nan().bits
        if code == 1:
            return fmt.inf(0).bits
        if code == 2:
            return fmt.zero(0).bits
        return round_dyadic(0, y, integer - plan.Fo, fmt, RNE).bits
    if plan.name == "log":
        if code == 3:
            return fmt.nan().bits
        if code == 1:
            return fmt.inf(0).bits
        if code == 2:
            return fmt.inf(1).bits
        t = plan.arg_fmt.to_int(arg)
        L = plan.F + plan.Fo + 8
        total = integer * _ln2(L) + ((t * y) << 8)
        if total == 0:
            return fmt.zero(0).bits
        return round_dyadic(int(total < 0), abs(total), -L, fmt, RNE).bits
    if code == 3:
        return fmt.nan().bits
    if code == 1:
        return fmt.inf(0).bits
    if code == 2:
        return fmt.zero(0).bits
    if odd:
        S = plan.Fo + 8
        with mpmath.workprec(S + 20):
            c = int(mpmath.nint(mpmath.sqrt(mpmath.mpf(2)) / 2 * (mpmath.mpf(2) ** S)))
        return round_dyadic(0, y * c, -integer - plan.Fo - S, fmt, RNE).bits
    return round_dyadic(0, y, -integer - plan.Fo, fmt, RNE).bits


def _rsqrt_fixup(fmt: FpFormat, y: int, x: int) -> int:
    """Exact results for the special operands of the Newton-Raphson rsqrt."""
    v = FpValue(fmt, x)
    if v.is_nan() or (v.sign and not v.is_zero()):
        return fmt.nan().bits
    if v.is_zero():
        return fmt.inf(0).bits
    if v.is_inf():
        return fmt.zero(0).bits
    return y


def _node_plan(node) -> FloatFnPlan:
    return plan_for(node.attrs["fn"], parse_format(node.attrs["fmt"]))


def reduce_kernel(node, bits: int, t) -> int:
    return _reduce(_node_plan(node), bits)


def reconstruct_kernel(node, args, ts) -> int:
    if node.attrs["fn"] == "rsqrt_fixup":
        return _rsqrt_fixup(node.out.fmt, args[0], args[1])
    return _reconstruct(_node_plan(node), args[0], args[1])


def float_function_nodes(b: GraphBuilder, name: str, fmt: FpFormat, x: str, stem: str = "f") -> str:
    """Emit the datapath of ``name`` on float node ``x``; returns the result node."""
    name = _canon(name)
    ft = FloatT(fmt)
    if name == "rsqrt":
        y = float_function_nodes(b, "rsqrt_seed", fmt, x, stem)
        half = b.op("const", ft, name=b._id(f"{stem}_half"), value=encode_fraction(Fraction(1, 2), fmt).bits)
        three_half = b.op("const", ft, name=b._id(f"{stem}_c15"),
                          value=encode_fraction(Fraction(3, 2), fmt).bits)
        for i in range(NEWTON_STEPS):
            xy = b.op("mul", ft, x, y, name=b._id(f"{stem}_xy{i}_"))
            xyy = b.op("mul", ft, xy, y, name=b._id(f"{stem}_xyy{i}_"))
            h = b.op("mul", ft, half, xyy, name=b._id(f"{stem}_h{i}_"))
            s = b.op("sub", ft, three_half, h, name=b._id(f"{stem}_s{i}_"))
            y = b.op("mul", ft, y, s, name=b._id(f"{stem}_y{i}_"))
        return b.op("func_reconstruct", ft, y, x, name=b._id(f"{stem}_fix"),
                    fn="rsqrt_fixup", fmt=fmt.name)
    plan = plan_for(name, fmt)
    table = table_for(plan)
    attrs = {"fn": plan.name, "fmt": fmt.name}
    red = b.op("func_reduce", BitsT(plan.packed_width), x, name=b._id(f"{stem}_red"), **attrs)
    argb = b.op("slice", BitsT(plan.F + 1), red, lo=0, name=b._id(f"{stem}_argb"))
    arg = b.op("reinterpret", FixedT(plan.arg_fmt), argb, name=b._id(f"{stem}_arg"))
    y = horner_nodes(b, table, arg, stem=f"{stem}_h")
    yb = b.op("reinterpret", BitsT(plan.out_fmt.width), y, name=b._id(f"{stem}_yb"))
    return b.op("func_reconstruct", ft, yb, red, name=b._id(f"{stem}_rec"), **attrs)


def build_float_function(name: str, fmt: FpFormat) -> Graph:
    """Float-in/float-out graph ``y = name(x)``."""
    name = _canon(name)
    b = GraphBuilder(f"{name}_{fmt.name}")
    x = b.input("x", FloatT(fmt))
    b.output("y", float_function_nodes(b, name, fmt, x))
    return check(b.build())


# -- func nodes ---------------------------------------------------------------------------------

@functools.lru_cache(maxsize=None)
def _expansion(name: str, fmt: FpFormat) -> Graph:
    return build_float_function(name, fmt)


def eval_func_node(node, bits: int, t) -> int:
    """Behavioral value of a ``func`` node: its expansion evaluated combinationally."""
    from .ir.sim import run
    from .ir.trace import Trace
    g = _expansion(_canon(node.attrs["fn"]), node.out.fmt)
    return run(g, Trace({"x": [bits]}), 1)["y"][0]


def exact_func(name: str, bits: int, fmt: FpFormat) -> int:
    """Correctly rounded ``name(x)`` (reference tier)."""
    name = _canon(name)
    v = FpValue(fmt, bits)
    if name == "exp":
        if v.is_nan():
            return fmt.nan().bits
        if v.is_inf():
            return (fmt.zero(0) if v.sign else fmt.inf(0)).bits
    else:
        if v.is_nan() or (v.sign and not v.is_zero()):
            return fmt.nan().bits
        if v.is_zero():
            return (fmt.inf(1) if name == "log" else fmt.inf(0)).bits
        if v.is_inf():
            return (fmt.inf(0) if name == "log" else fmt.zero(0)).bits
    x = v.to_fraction()
    if name == "log" and x == 1:
        return fmt.zero(0).bits
    if name == "exp" and x == 0:
        return encode_fraction(Fraction(1), fmt).bits
    prec = fmt.p + 64
    with mpmath.workprec(prec):
        xm = _mpf(x)
        if name == "exp":
            lim = (fmt.emax + 2) * 0.7
            if xm > lim:
                return fmt.inf(0).bits
            if xm < -(fmt.bias + fmt.w_f + 3) * 0.7:
                return fmt.zero(0).bits
        r = ORACLES[name](xm)
        # exact results (powers of 4 under rsqrt) must not be nudged by a sticky bit
        q = _mpf_to_fraction(r)
        return encode_fraction(q, fmt).bits


def expand_func_nodes(g: Graph, only: Optional[set] = None) -> Graph:
    """Replace ``func`` nodes by their datapaths; the result keeps the node id."""
    targets = [n for n in g.nodes.values() if n.kind == "func" and (only is None or n.id in only)]
    if not targets:
        return g
    out = g.copy()
    for n in targets:
        sub = _expansion(_canon(n.attrs["fn"]), n.out.fmt)
        (edge,) = out.in_edges(n.id)
        out.edges = [e for e in out.edges if e.dst != n.id]
        pre = f"{n.id}__"
        ids = {}
        src_of_y = None
        for sn in sub.nodes.values():
            if sn.kind == "input":
                ids[sn.id] = None
                continue
            if sn.kind == "output":
                continue
            nid = out.fresh_id(pre + sn.id)
            attrs = dict(sn.attrs, origin=n.id, origin_kind="func")
            if "start_cycle" in n.attrs:
                attrs["start_cycle"] = n.attrs["start_cycle"]
            out.add_node(Node(nid, sn.kind, sn.out, attrs))
            ids[sn.id] = nid
        for e in sub.edges:
            dst = sub.nodes[e.dst]
            if dst.kind == "output":
                src_of_y = ids[e.src]
                continue
            if ids[e.src] is None:
                out.connect(edge.src, ids[e.dst], e.port, edge.sample_delay + e.sample_delay, edge.regs)
            else:
                out.connect(ids[e.src], ids[e.dst], e.port, e.sample_delay)
        keep = {k: v for k, v in n.attrs.items() if k == "start_cycle"}
        out.nodes[n.id] = Node(n.id, "reinterpret", n.out, keep)
        out.connect(src_of_y, n.id, 0)
    return check(out)
