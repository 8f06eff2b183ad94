"""Signal types carried on graph edges."""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from ..fusedfp import FusedFormat
from ..softfloat import FixedFormat, FpFormat, parse_fixed, parse_format


@dataclass(frozen=True)
class FloatT:
    fmt: FpFormat

    @property
    def width(self) -> int:
        return self.fmt.width

    def __str__(self):
        return self.fmt.name


@dataclass(frozen=True)
class FixedT:
    fmt: FixedFormat

    @property
    def width(self) -> int:
        return self.fmt.width

    def __str__(self):
        return f"fixed:{self.fmt.name}"


@dataclass(frozen=True)
class FusedT:
    fmt: FusedFormat

    @property
    def width(self) -> int:
        return self.fmt.packed_width

    def __str__(self):
        f = self.fmt
        return f"fused:{f.base.name}:g{f.g}:l{f.level}"


@dataclass(frozen=True)
class BitsT:
    width: int

    def __post_init__(self):
        if self.width < 1:
            raise ValueError("bit vectors need width >= 1")

    def __str__(self):
        return f"bits:{self.width}"


SignalType = Union[FloatT, FixedT, FusedT, BitsT]

_FUSED_RE = re.compile(r"^fused:(.+):g(\d+):l(\d+)$")


def parse_type(text: str) -> SignalType:
    text = text.strip()
    if text.startswith("bits:"):
        return BitsT(int(text[5:]))
    if text.startswith("fixed:"):
        return FixedT(parse_fixed(text[6:]))
    m = _FUSED_RE.match(text)
    if m:
        return FusedT(FusedFormat(parse_format(m.group(1)), int(m.group(2)), int(m.group(3))))
    return FloatT(parse_format(text))


def type_str(t: SignalType) -> str:
    return str(t)
