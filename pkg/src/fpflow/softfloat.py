"""Parametrized binary floating-point and fixed-point arithmetic.

Values are plain bit patterns tagged with a format. Arithmetic is exact on
integers (``m * 2**e``) followed by a single rounding step, so results do not
depend on the host float type and any width is supported.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Optional

__all__ = [
    "RoundingMode", "FpClass", "FpFormat", "FpValue", "FixedFormat",
    "PRESETS", "make_format", "parse_format", "decode", "encode_fraction",
    "round_dyadic", "unit_roundoff", "fp_add", "fp_sub", "fp_mul", "fp_div",
    "fp_fma", "fp_neg", "fp_convert", "fixed_quantize", "fixed_value",
    "fixed_from_float",
]


class RoundingMode(enum.Enum):
    NEAREST_EVEN = "rne"
    FAITHFUL = "faithful"


RNE = RoundingMode.NEAREST_EVEN
FAITHFUL = RoundingMode.FAITHFUL


class FpClass(enum.Enum):
    ZERO = "zero"
    SUBNORMAL = "subnormal"
    NORMAL = "normal"
    INF = "inf"
    NAN = "nan"


@dataclass(frozen=True)
class FpFormat:
    """IEEE-style binary format with ``w_e`` exponent and ``w_f`` fraction bits."""

    w_e: int
    w_f: int

    def __post_init__(self):
        if self.w_e < 2:
            raise ValueError(f"exponent width {self.w_e} too narrow (need >= 2)")
        if self.w_f < 1:
            raise ValueError(f"fraction width {self.w_f} too narrow (need >= 1)")

    @property
    def bias(self) -> int:
        return (1 << (self.w_e - 1)) - 1

    @property
    def p(self) -> int:
        return self.w_f + 1

    @property
    def width(self) -> int:
        return 1 + self.w_e + self.w_f

    @property
    def emin(self) -> int:
        return 1 - self.bias

    @property
    def emax(self) -> int:
        return self.bias

    @property
    def exp_ones(self) -> int:
        return (1 << self.w_e) - 1

    @property
    def name(self) -> str:
        for key, (e, f) in PRESETS.items():
            if (e, f) == (self.w_e, self.w_f):
                return key
        return f"custom({self.w_e},{self.w_f})"

    def __str__(self):
        return self.name

    # constructors for special values
    def zero(self, sign: int = 0) -> "FpValue":
        return FpValue(self, sign << (self.width - 1))

    def inf(self, sign: int = 0) -> "FpValue":
        return FpValue(self, (sign << (self.width - 1)) | (self.exp_ones << self.w_f))

    def nan(self) -> "FpValue":
        return FpValue(self, (self.exp_ones << self.w_f) | (1 << (self.w_f - 1)))

    def max_finite(self, sign: int = 0) -> "FpValue":
        return FpValue(self, (sign << (self.width - 1)) | ((self.exp_ones << self.w_f) - 1))

    def from_fraction(self, x, mode: RoundingMode = RNE) -> "FpValue":
        return encode_fraction(Fraction(x), self, mode)

    def from_float(self, x: float, mode: RoundingMode = RNE) -> "FpValue":
        x = float(x)
        if math.isnan(x):
            return self.nan()
        if math.isinf(x):
            return self.inf(1 if x < 0 else 0)
        if x == 0.0:
            return self.zero(1 if math.copysign(1.0, x) < 0 else 0)
        return encode_fraction(Fraction(x), self, mode)


PRESETS = {
    "f16m10": (5, 10),
    "f26m17": (8, 17),
    "f32m23": (8, 23),
    "f35m26": (8, 26),
    "f46m35": (10, 35),
    "f55m44": (10, 44),
    "f64m52": (11, 52),
}

_CUSTOM_RE = re.compile(r"^custom\(\s*(\d+)\s*,\s*(\d+)\s*\)$")


def make_format(w_e: int, w_f: int) -> FpFormat:
    return FpFormat(w_e, w_f)


def parse_format(name: str) -> FpFormat:
    """Accept a preset name (``f32m23``) or ``custom(e,f)``."""
    key = name.strip()
    if key in PRESETS:
        return FpFormat(*PRESETS[key])
    m = _CUSTOM_RE.match(key)
    if m:
        return FpFormat(int(m.group(1)), int(m.group(2)))
    raise ValueError(f"unknown floating-point format {name!r}; expected one of "
                     f"{', '.join(PRESETS)} or custom(e,f)")


class Decoded(NamedTuple):
    sign: int
    cls: FpClass
    value: Optional[Fraction]


@dataclass(frozen=True)
class FpValue:
    fmt: FpFormat
    bits: int

    def __post_init__(self):
        if not 0 <= self.bits < (1 << self.fmt.width):
            raise ValueError(f"bit pattern {self.bits:#x} does not fit {self.fmt}")

    @property
    def sign(self) -> int:
        return self.bits >> (self.fmt.width - 1)

    @property
    def exp_field(self) -> int:
        return (self.bits >> self.fmt.w_f) & self.fmt.exp_ones

    @property
    def frac_field(self) -> int:
        return self.bits & ((1 << self.fmt.w_f) - 1)

    @property
    def cls(self) -> FpClass:
        e, f = self.exp_field, self.frac_field
        if e == self.fmt.exp_ones:
            return FpClass.NAN if f else FpClass.INF
        if e == 0:
            return FpClass.SUBNORMAL if f else FpClass.ZERO
        return FpClass.NORMAL

    def is_nan(self) -> bool:
        return self.cls is FpClass.NAN

    def is_inf(self) -> bool:
        return self.cls is FpClass.INF

    def is_zero(self) -> bool:
        return self.cls is FpClass.ZERO

    def is_finite(self) -> bool:
        return self.exp_field != self.fmt.exp_ones

    def integer_form(self) -> tuple[int, int, int]:
        """(sign, m, e) with value ``(-1)**sign * m * 2**e``; finite values only."""
        fmt = self.fmt
        e, f = self.exp_field, self.frac_field
        if e == fmt.exp_ones:
            raise ValueError("integer form of a non-finite value")
        if e == 0:
            return self.sign, f, fmt.emin - fmt.w_f
        return self.sign, f | (1 << fmt.w_f), e - fmt.bias - fmt.w_f

    def to_fraction(self) -> Fraction:
        s, m, e = self.integer_form()
        v = Fraction(m) * (Fraction(2) ** e)
        return -v if s else v

    def __float__(self) -> float:
        c = self.cls
        if c is FpClass.NAN:
            return math.nan
        if c is FpClass.INF:
            return -math.inf if self.sign else math.inf
        s, m, e = self.integer_form()
        try:
            v = math.ldexp(float(m), e) if m.bit_length() <= 53 else float(self.to_fraction())
        except OverflowError:
            v = math.inf
        return -v if s else v

    def ulp(self) -> Fraction:
        fmt = self.fmt
        e = max(self.exp_field, 1)
        return Fraction(2) ** (e - fmt.bias - fmt.w_f)

    def __repr__(self):
        digits = (self.fmt.width + 3) // 4
        return f"FpValue({self.fmt.name}, 0x{self.bits:0{digits}x})"


def decode(bits: int, fmt: FpFormat) -> Decoded:
    v = FpValue(fmt, bits)
    c = v.cls
    if c in (FpClass.NAN, FpClass.INF):
        return Decoded(v.sign, c, None)
    return Decoded(v.sign, c, v.to_fraction())


def round_dyadic(sign: int, m: int, e: int, fmt: FpFormat, mode: RoundingMode,
                 sticky: bool = False) -> FpValue:
    """Round ``(-1)**sign * (m + δ) * 2**e`` into ``fmt``.

    ``sticky`` means the true magnitude lies strictly between ``m*2**e`` and
    ``(m+1)*2**e``; callers must then supply ``m`` with at least ``p + 2``
    significant bits so the sticky information sits below the round bit.
    """
    if m == 0 and not sticky:
        return fmt.zero(sign)
    w_f = fmt.w_f
    lead = e + m.bit_length() - 1
    eq = max(lead, fmt.emin)
    shift = eq - w_f - e
    if shift <= 0:
        mant = m << -shift
        up = False
    else:
        mant = m >> shift
        rest = m & ((1 << shift) - 1)
        if mode is RNE:
            half = 1 << (shift - 1)
            up = rest > half or (rest == half and (sticky or bool(mant & 1)))
        else:
            up = False
    if up:
        mant += 1
        if mant >> (w_f + 1):
            mant >>= 1
            eq += 1
    if eq > fmt.emax:
        return fmt.inf(sign)
    if mant >> w_f:
        bits = ((eq + fmt.bias) << w_f) | (mant & ((1 << w_f) - 1))
    else:
        bits = mant
    return FpValue(fmt, (sign << (fmt.width - 1)) | bits)


def encode_fraction(x: Fraction, fmt: FpFormat, mode: RoundingMode = RNE) -> FpValue:
    """Round an exact rational into ``fmt``; zero is encoded as +0."""
    sign = 1 if x < 0 else 0
    a = -x if sign else x
    if a == 0:
        return fmt.zero(0)
    num, den = a.numerator, a.denominator
    if den & (den - 1) == 0:
        return round_dyadic(sign, num, -(den.bit_length() - 1), fmt, mode)
    # enough quotient bits for a clean sticky below the round bit
    s = max(0, fmt.p + 3 + den.bit_length() - num.bit_length())
    q, r = divmod(num << s, den)
    return round_dyadic(sign, q, -s, fmt, mode, sticky=r != 0)


def unit_roundoff(fmt: FpFormat, mode: RoundingMode) -> Fraction:
    if mode is RNE:
        return Fraction(1, 1 << (fmt.w_f + 1))
    return Fraction(1, 1 << fmt.w_f)


def _add_exact(s1: int, m1: int, e1: int, s2: int, m2: int, e2: int, p: int):
    """Exact signed sum of two dyadics, short-circuiting far-apart exponents.

    Returns ``(sign, m, e, sticky)``; ``m == 0 and not sticky`` means exact zero
    (sign is then meaningless and left to the caller).
    """
    if m1 == 0:
        return s2, m2, e2, False
    if m2 == 0:
        return s1, m1, e1, False
    lead1 = e1 + m1.bit_length()
    lead2 = e2 + m2.bit_length()
    if lead1 < lead2:
        s1, m1, e1, lead1, s2, m2, e2, lead2 = s2, m2, e2, lead2, s1, m1, e1, lead1
    k = max(0, p + 2 - m1.bit_length())
    if lead1 - lead2 > p + 3 and k <= e1 - lead2:
        # small operand is below one unit of ``m1 << k``: it only sets sticky
        big = m1 << k
        if s1 == s2:
            return s1, big, e1 - k, True
        return s1, big - 1, e1 - k, True
    e0 = min(e1, e2)
    a = m1 << (e1 - e0)
    b = m2 << (e2 - e0)
    va = -a if s1 else a
    vb = -b if s2 else b
    t = va + vb
    return (1 if t < 0 else 0), abs(t), e0, False


def fp_add(a: FpValue, b: FpValue, mode: RoundingMode = RNE) -> FpValue:
    fmt = a.fmt
    if b.fmt != fmt:
        raise ValueError(f"format mismatch: {a.fmt} vs {b.fmt}")
    ca, cb = a.cls, b.cls
    if ca is FpClass.NAN or cb is FpClass.NAN:
        return fmt.nan()
    if ca is FpClass.INF or cb is FpClass.INF:
        if ca is FpClass.INF and cb is FpClass.INF and a.sign != b.sign:
            return fmt.nan()
        return a if ca is FpClass.INF else b
    if ca is FpClass.ZERO and cb is FpClass.ZERO:
        return fmt.zero(a.sign & b.sign)
    if ca is FpClass.ZERO:
        return b
    if cb is FpClass.ZERO:
        return a
    s1, m1, e1 = a.integer_form()
    s2, m2, e2 = b.integer_form()
    s, m, e, sticky = _add_exact(s1, m1, e1, s2, m2, e2, fmt.p)
    if m == 0 and not sticky:
        return fmt.zero(0)
    return round_dyadic(s, m, e, fmt, mode, sticky)


def fp_neg(a: FpValue) -> FpValue:
    if a.is_nan():
        return a
    return FpValue(a.fmt, a.bits ^ (1 << (a.fmt.width - 1)))


def fp_sub(a: FpValue, b: FpValue, mode: RoundingMode = RNE) -> FpValue:
    return fp_add(a, fp_neg(b), mode)


def fp_mul(a: FpValue, b: FpValue, mode: RoundingMode = RNE) -> FpValue:
    fmt = a.fmt
    if b.fmt != fmt:
        raise ValueError(f"format mismatch: {a.fmt} vs {b.fmt}")
    ca, cb = a.cls, b.cls
    sign = a.sign ^ b.sign
    if ca is FpClass.NAN or cb is FpClass.NAN:
        return fmt.nan()
    if ca is FpClass.INF or cb is FpClass.INF:
        if ca is FpClass.ZERO or cb is FpClass.ZERO:
            return fmt.nan()
        return fmt.inf(sign)
    if ca is FpClass.ZERO or cb is FpClass.ZERO:
        return fmt.zero(sign)
    _, m1, e1 = a.integer_form()
    _, m2, e2 = b.integer_form()
    return round_dyadic(sign, m1 * m2, e1 + e2, fmt, mode)


def fp_div(a: FpValue, b: FpValue, mode: RoundingMode = RNE) -> FpValue:
    fmt = a.fmt
    if b.fmt != fmt:
        raise ValueError(f"format mismatch: {a.fmt} vs {b.fmt}")
    ca, cb = a.cls, b.cls
    sign = a.sign ^ b.sign
    if ca is FpClass.NAN or cb is FpClass.NAN:
        return fmt.nan()
    if ca is FpClass.INF:
        return fmt.nan() if cb is FpClass.INF else fmt.inf(sign)
    if cb is FpClass.INF:
        return fmt.zero(sign)
    if cb is FpClass.ZERO:
        return fmt.nan() if ca is FpClass.ZERO else fmt.inf(sign)
    if ca is FpClass.ZERO:
        return fmt.zero(sign)
    _, m1, e1 = a.integer_form()
    _, m2, e2 = b.integer_form()
    s = max(0, fmt.p + 3 + m2.bit_length() - m1.bit_length())
    q, r = divmod(m1 << s, m2)
    return round_dyadic(sign, q, e1 - e2 - s, fmt, mode, sticky=r != 0)


def fp_fma(a: FpValue, b: FpValue, c: FpValue, mode: RoundingMode = RNE) -> FpValue:
    """``a*b + c`` with a single rounding."""
    fmt = a.fmt
    if b.fmt != fmt or c.fmt != fmt:
        raise ValueError("format mismatch in fma operands")
    ca, cb, cc = a.cls, b.cls, c.cls
    psign = a.sign ^ b.sign
    if FpClass.NAN in (ca, cb, cc):
        return fmt.nan()
    if ca is FpClass.INF or cb is FpClass.INF:
        if ca is FpClass.ZERO or cb is FpClass.ZERO:
            return fmt.nan()
        if cc is FpClass.INF and c.sign != psign:
            return fmt.nan()
        return fmt.inf(psign)
    if cc is FpClass.INF:
        return c
    pzero = ca is FpClass.ZERO or cb is FpClass.ZERO
    if pzero and cc is FpClass.ZERO:
        return fmt.zero(psign & c.sign)
    if pzero:
        return c
    _, m1, e1 = a.integer_form()
    _, m2, e2 = b.integer_form()
    if cc is FpClass.ZERO:
        return round_dyadic(psign, m1 * m2, e1 + e2, fmt, mode)
    s3, m3, e3 = c.integer_form()
    s, m, e, sticky = _add_exact(psign, m1 * m2, e1 + e2, s3, m3, e3, fmt.p)
    if m == 0 and not sticky:
        return fmt.zero(0)
    return round_dyadic(s, m, e, fmt, mode, sticky)


def fp_convert(v: FpValue, to: FpFormat, mode: RoundingMode = RNE) -> FpValue:
    c = v.cls
    if c is FpClass.NAN:
        return to.nan()
    if c is FpClass.INF:
        return to.inf(v.sign)
    if c is FpClass.ZERO:
        return to.zero(v.sign)
    s, m, e = v.integer_form()
    return round_dyadic(s, m, e, to, mode)


@dataclass(frozen=True)
class FixedFormat:
    """Two's-complement (or unsigned) fixed point: ``width`` bits, ``frac`` of them fractional."""

    signed: bool
    width: int
    frac: int

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("fixed-point width must be >= 1")
        if not 0 <= self.frac <= self.width:
            raise ValueError(f"fraction length {self.frac} outside [0, {self.width}]")

    @property
    def int_min(self) -> int:
        return -(1 << (self.width - 1)) if self.signed else 0

    @property
    def int_max(self) -> int:
        return (1 << (self.width - 1)) - 1 if self.signed else (1 << self.width) - 1

    @property
    def mask(self) -> int:
        return (1 << self.width) - 1

    @property
    def name(self) -> str:
        return f"{'s' if self.signed else 'u'}{self.width}.{self.frac}"

    def __str__(self):
        return self.name

    def to_int(self, pattern: int) -> int:
        """Signed integer held by a bit pattern."""
        if self.signed and pattern >> (self.width - 1):
            return pattern - (1 << self.width)
        return pattern

    def from_int(self, n: int, overflow: str = "wrap") -> int:
        if overflow == "saturate":
            n = min(max(n, self.int_min), self.int_max)
        elif overflow != "wrap":
            raise ValueError(f"unknown overflow policy {overflow!r}")
        return n & self.mask


_FIXED_RE = re.compile(r"^([su])(\d+)\.(\d+)$")


def parse_fixed(name: str) -> FixedFormat:
    m = _FIXED_RE.match(name.strip())
    if not m:
        raise ValueError(f"bad fixed-point format {name!r} (expected e.g. s18.14)")
    return FixedFormat(m.group(1) == "s", int(m.group(2)), int(m.group(3)))


def fixed_quantize(x, fmt: FixedFormat, overflow: str = "wrap") -> int:
    """Truncate ``x * 2**frac`` toward minus infinity and apply the overflow policy."""
    x = Fraction(x)
    n = math.floor(x * (1 << fmt.frac))
    return fmt.from_int(n, overflow)


def fixed_value(pattern: int, fmt: FixedFormat) -> Fraction:
    return Fraction(fmt.to_int(pattern), 1 << fmt.frac)


def fixed_from_float(x: float, fmt: FixedFormat, overflow: str = "saturate") -> int:
    return fixed_quantize(Fraction(x), fmt, overflow)
