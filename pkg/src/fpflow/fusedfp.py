"""Fused floating-point datapath arithmetic.

Inside a fused datapath values carry explicit exception wires, a two's
complement exponent ``g`` bits wider than the IEEE one, and an unnormalized
fraction that grows one integer bit and one fractional bit per adder level::

    level l fraction: (1 + l) integer bits . (w_F + l) fractional bits

Only ``normalize`` rounds; adders and wide multipliers truncate with a sticky
bit ORed into the least significant retained position.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace
from fractions import Fraction

from .softfloat import FpClass, FpFormat, FpValue, RNE, round_dyadic


class Exc(enum.IntEnum):
    ZERO = 0b000
    NORMAL = 0b001
    INF = 0b010
    NAN = 0b011


@dataclass(frozen=True)
class FusedFormat:
    base: FpFormat
    g: int = 2
    level: int = 0

    def __post_init__(self):
        if self.g < 1:
            raise ValueError("need at least one exponent guard bit")
        if self.level < 0:
            raise ValueError("negative tree level")

    @property
    def exp_width(self) -> int:
        return self.base.w_e + self.g

    @property
    def exp_lo(self) -> int:
        return -(1 << (self.exp_width - 1))

    @property
    def exp_hi(self) -> int:
        return (1 << (self.exp_width - 1)) - 1

    @property
    def int_bits(self) -> int:
        return 1 + self.level

    @property
    def frac_bits(self) -> int:
        """Fractional bits of the fraction field."""
        return self.base.w_f + self.level

    @property
    def frac_width(self) -> int:
        return 1 + self.base.w_f + 2 * self.level

    @property
    def packed_width(self) -> int:
        return 3 + 1 + self.exp_width + self.frac_width

    def at_level(self, level: int) -> "FusedFormat":
        return replace(self, level=level)


@dataclass(frozen=True)
class FusedValue:
    fmt: FusedFormat
    exc: Exc
    sign: int = 0
    exp: int = 0
    frac: int = 0

    def __post_init__(self):
        if not 0 <= self.frac < (1 << self.fmt.frac_width):
            raise ValueError(f"fraction {self.frac:#x} exceeds {self.fmt.frac_width} bits")
        if not self.fmt.exp_lo <= self.exp <= self.fmt.exp_hi:
            raise ValueError(f"exponent {self.exp} outside {self.fmt.exp_width}-bit range")

    def value(self) -> Fraction:
        if self.exc is Exc.ZERO:
            return Fraction(0)
        if self.exc is not Exc.NORMAL:
            raise ValueError("value of a non-finite fused value")
        v = Fraction(self.frac) * Fraction(2) ** (self.exp - self.fmt.base.bias - self.fmt.frac_bits)
        return -v if self.sign else v

    @property
    def is_normalized(self) -> bool:
        if self.fmt.level != 0:
            return False
        if self.exc is not Exc.NORMAL:
            return True
        return self.frac >> self.fmt.base.w_f == 1

    def pack(self) -> int:
        """Wire layout ``exc | sign | exponent (two's complement) | fraction``."""
        f = self.fmt
        if self.exc is Exc.NORMAL:
            e, m = self.exp & ((1 << f.exp_width) - 1), self.frac
        else:
            e, m = 0, 0
        word = int(self.exc)
        word = (word << 1) | self.sign
        word = (word << f.exp_width) | e
        return (word << f.frac_width) | m

    @classmethod
    def unpack(cls, bits: int, fmt: FusedFormat) -> "FusedValue":
        m = bits & ((1 << fmt.frac_width) - 1)
        bits >>= fmt.frac_width
        e = bits & ((1 << fmt.exp_width) - 1)
        if e >> (fmt.exp_width - 1):
            e -= 1 << fmt.exp_width
        bits >>= fmt.exp_width
        sign = bits & 1
        exc = Exc(bits >> 1)
        if exc is not Exc.NORMAL:
            return cls(fmt, exc, sign)
        return cls(fmt, exc, sign, e, m)


def zero(fmt: FusedFormat, sign: int = 0) -> FusedValue:
    return FusedValue(fmt, Exc.ZERO, sign)


def _special(fmt, exc, sign=0):
    return FusedValue(fmt, exc, sign if exc is not Exc.NAN else 0)


def _ranged(fmt: FusedFormat, sign: int, exp: int, frac: int) -> FusedValue:
    """Build a normal value, saturating exponents the wire cannot hold."""
    if frac == 0:
        return zero(fmt)
    if exp > fmt.exp_hi:
        return _special(fmt, Exc.INF, sign)
    if exp < fmt.exp_lo:
        return zero(fmt, sign)
    return FusedValue(fmt, Exc.NORMAL, sign, exp, frac)


def cast_from_ieee(v: FpValue, g: int = 2) -> FusedValue:
    base = v.fmt
    fmt = FusedFormat(base, g, 0)
    c = v.cls
    if c is FpClass.NAN:
        return _special(fmt, Exc.NAN)
    if c is FpClass.INF:
        return _special(fmt, Exc.INF, v.sign)
    if c is FpClass.ZERO:
        return zero(fmt, v.sign)
    if c is FpClass.NORMAL:
        return FusedValue(fmt, Exc.NORMAL, v.sign, v.exp_field, v.frac_field | (1 << base.w_f))
    # subnormal: move the leading one up to the hidden position
    f = v.frac_field
    shift = base.w_f + 1 - f.bit_length()
    return FusedValue(fmt, Exc.NORMAL, v.sign, 1 - shift, f << shift)


def _combine_add(a: FusedValue, b: FusedValue, out: FusedFormat):
    """Exception algebra of addition; returns a value or None for the numeric path."""
    if a.exc is Exc.NAN or b.exc is Exc.NAN:
        return _special(out, Exc.NAN)
    if a.exc is Exc.INF and b.exc is Exc.INF:
        return _special(out, Exc.NAN) if a.sign != b.sign else _special(out, Exc.INF, a.sign)
    if a.exc is Exc.INF:
        return _special(out, Exc.INF, a.sign)
    if b.exc is Exc.INF:
        return _special(out, Exc.INF, b.sign)
    if a.exc is Exc.ZERO and b.exc is Exc.ZERO:
        return zero(out, a.sign & b.sign)
    return None


def fused_add(a: FusedValue, b: FusedValue) -> FusedValue:
    fa, fb = a.fmt, b.fmt
    if fa != fb:
        raise ValueError(f"fused adder operands disagree: level {fa.level} vs {fb.level}"
                         if fa.base == fb.base and fa.g == fb.g else "fused format mismatch")
    out = fa.at_level(fa.level + 1)
    special = _combine_add(a, b, out)
    if special is not None:
        return special
    if a.exc is Exc.ZERO:
        return FusedValue(out, Exc.NORMAL, b.sign, b.exp, b.frac << 1)
    if b.exc is Exc.ZERO:
        return FusedValue(out, Exc.NORMAL, a.sign, a.exp, a.frac << 1)
    # a is the operand with the larger exponent (a on ties)
    if b.exp > a.exp:
        a, b = b, a
    d = a.exp - b.exp
    x = a.frac << 1
    y = b.frac << 1
    if d:
        if d > out.frac_width:
            y = 1 if y else 0
        else:
            lost = y & ((1 << d) - 1)
            y = (y >> d) | (1 if lost else 0)
    if a.sign == b.sign:
        return FusedValue(out, Exc.NORMAL, a.sign, a.exp, x + y)
    r = x - y
    if r == 0:
        return zero(out)
    if r < 0:
        return FusedValue(out, Exc.NORMAL, b.sign, a.exp, -r)
    return FusedValue(out, Exc.NORMAL, a.sign, a.exp, r)


def fused_neg(a: FusedValue) -> FusedValue:
    if a.exc is Exc.NAN:
        return a
    return replace(a, sign=a.sign ^ 1)


def fused_sub(a: FusedValue, b: FusedValue) -> FusedValue:
    return fused_add(a, fused_neg(b))


def fused_mul(a: FusedValue, b: FusedValue, form: str = "level0") -> FusedValue:
    """Multiply two level-0 values.

    ``form="level0"`` produces a normalized, round-to-nearest-even level-0
    result (one-bit normalization only). ``form="wide"`` keeps the product
    unnormalized on ``1 + 1 + w_F + 1`` bits, i.e. a level-1 value.
    """
    fmt = a.fmt
    if fmt.level != 0 or b.fmt != fmt:
        raise ValueError("fused multiplier expects two level-0 operands of one format")
    if form not in ("level0", "wide"):
        raise ValueError(f"unknown multiplier output form {form!r}")
    out = fmt if form == "level0" else fmt.at_level(1)
    sign = a.sign ^ b.sign
    ea, eb = a.exc, b.exc
    if Exc.NAN in (ea, eb):
        return _special(out, Exc.NAN)
    if Exc.INF in (ea, eb):
        if Exc.ZERO in (ea, eb):
            return _special(out, Exc.NAN)
        return _special(out, Exc.INF, sign)
    if Exc.ZERO in (ea, eb):
        return zero(out, sign)
    w_f = fmt.base.w_f
    p = a.frac * b.frac  # 2 + 2 w_F bits, weight 2**-(2 w_F)
    e = a.exp + b.exp - fmt.base.bias
    if form == "wide":
        keep = p >> (w_f - 1)
        if p & ((1 << (w_f - 1)) - 1):
            keep |= 1
        return _ranged(out, sign, e, keep)
    if p >> (2 * w_f + 1):
        e += 1
        shift = w_f + 1
    else:
        shift = w_f
    m = p >> shift
    rest = p & ((1 << shift) - 1)
    half = 1 << (shift - 1)
    if rest > half or (rest == half and m & 1):
        m += 1
        if m >> (w_f + 1):
            m >>= 1
            e += 1
    return _ranged(out, sign, e, m)


def normalize(v: FusedValue) -> FusedValue:
    """Find the leading one, shift, and round to nearest even on ``w_F`` bits."""
    fmt = v.fmt
    out = fmt.at_level(0)
    if v.exc is not Exc.NORMAL:
        return FusedValue(out, v.exc, v.sign if v.exc is not Exc.NAN else 0)
    if v.frac == 0:
        return zero(out)
    w_f = fmt.base.w_f
    n = v.frac.bit_length()
    shift = n - (w_f + 1)
    e = v.exp + shift - fmt.level
    if shift <= 0:
        m = v.frac << -shift
    else:
        m = v.frac >> shift
        rest = v.frac & ((1 << shift) - 1)
        half = 1 << (shift - 1)
        if rest > half or (rest == half and m & 1):
            m += 1
            if m >> (w_f + 1):
                m >>= 1
                e += 1
    return _ranged(out, v.sign, e, m)


def cast_to_ieee(v: FusedValue) -> FpValue:
    if not v.is_normalized:
        raise ValueError("cast to IEEE requires a normalized level-0 value")
    base = v.fmt.base
    if v.exc is Exc.NAN:
        return base.nan()
    if v.exc is Exc.INF:
        return base.inf(v.sign)
    if v.exc is Exc.ZERO:
        return base.zero(v.sign)
    if v.exp >= base.exp_ones:
        return base.inf(v.sign)
    if v.exp >= 1:
        bits = (v.sign << (base.width - 1)) | (v.exp << base.w_f) | (v.frac - (1 << base.w_f))
        return FpValue(base, bits)
    return round_dyadic(v.sign, v.frac, v.exp - base.bias - base.w_f, base, RNE)


def build_dot_product(n: int, fmt: FpFormat, style: str = "fused", g: int = 2,
                      rounding: str = "rne"):
    """Dot product of two length-``n`` vector ports ``a`` and ``b`` into port ``y``.

    ``ieee_assembly`` uses rounded multipliers and a balanced tree of rounded
    adders; ``fused`` casts once, multiplies and sums without intermediate
    normalization, then normalizes and casts back at the root.
    """
    from .ir.graph import GraphBuilder
    from .ir.types import FloatT, FusedT

    if n < 1:
        raise ValueError("dot product needs at least one element")
    if style not in ("ieee_assembly", "fused"):
        raise ValueError(f"unknown dot-product style {style!r}")
    b = GraphBuilder(f"dot{n}_{style}_{fmt.name}")
    ft = FloatT(fmt)
    xa = b.vector_input("a", ft, n)
    xb = b.vector_input("b", ft, n)
    if style == "ieee_assembly":
        terms = [b.op("mul", ft, xa[i], xb[i], rounding=rounding) for i in range(n)]
        while len(terms) > 1:
            nxt = [b.op("add", ft, terms[i], terms[i + 1], rounding=rounding)
                   for i in range(0, len(terms) - 1, 2)]
            if len(terms) % 2:
                nxt.append(terms[-1])
            terms = nxt
        b.output("y", terms[0])
        return b.build()
    f0 = FusedFormat(fmt, g, 0)
    terms = []
    for i in range(n):
        ca = b.op("cast", FusedT(f0), xa[i], to="fused")
        cb = b.op("cast", FusedT(f0), xb[i], to="fused")
        terms.append((b.op("fused_mul", FusedT(f0), ca, cb, form="level0"), 0))
    while len(terms) > 1:
        nxt = []
        for i in range(0, len(terms) - 1, 2):
            (u, lu), (v, lv) = terms[i], terms[i + 1]
            # an odd leftover is promoted until levels match
            while lu < lv:
                u = b.op("fused_add", FusedT(f0.at_level(lu + 1)), u, b.fused_zero(f0.at_level(lu)))
                lu += 1
            while lv < lu:
                v = b.op("fused_add", FusedT(f0.at_level(lv + 1)), v, b.fused_zero(f0.at_level(lv)))
                lv += 1
            nxt.append((b.op("fused_add", FusedT(f0.at_level(lu + 1)), u, v), lu + 1))
        if len(terms) % 2:
            nxt.append(terms[-1])
        terms = nxt
    root, _ = terms[0]
    norm = b.op("normalize", FusedT(f0), root)
    b.output("y", b.op("cast", ft, norm, to="ieee"))
    return b.build()
