import math
import random
from fractions import Fraction

import pytest

from fpflow.fusedfp import (
    Exc, FusedFormat, FusedValue, build_dot_product, cast_from_ieee, cast_to_ieee, fused_add,
    fused_mul, fused_neg, fused_sub, normalize, zero,
)
from fpflow.ir.sim import simulate_behavioral
from fpflow.ir.trace import Trace
from fpflow.ir.types import FusedT
from fpflow.softfloat import RNE, FpFormat, FpValue, fp_mul

F32 = FpFormat(8, 23)
F0 = FusedFormat(F32, 2, 0)


def rand_f32(rng, lo=100, hi=154):
    e = rng.randint(lo, hi)
    return FpValue(F32, (rng.getrandbits(1) << 31) | (e << 23) | rng.getrandbits(23))


def fz(x: float) -> FusedValue:
    return cast_from_ieee(F32.from_float(x))


class TestFormat:
    def test_widths_grow_with_level(self):
        assert F0.frac_width == 24
        assert F0.at_level(1).frac_width == 26
        assert F0.at_level(4).frac_width == 32
        assert F0.exp_width == 10

    def test_pack_roundtrip(self, rng):
        for _ in range(200):
            v = cast_from_ieee(rand_f32(rng, 1, 254))
            assert FusedValue.unpack(v.pack(), F0) == v
        for exc in (Exc.ZERO, Exc.INF, Exc.NAN):
            v = FusedValue(F0, exc, 1 if exc is Exc.INF else 0)
            assert FusedValue.unpack(v.pack(), F0) == v

    def test_rejects_bad_fields(self):
        with pytest.raises(ValueError):
            FusedValue(F0, Exc.NORMAL, 0, 0, 1 << 24)
        with pytest.raises(ValueError):
            FusedFormat(F32, 0)


class TestCasts:
    def test_cast_is_exact(self, rng):
        for _ in range(500):
            x = rand_f32(rng, 0, 254)
            v = cast_from_ieee(x)
            assert v.value() == x.to_fraction()
            assert v.is_normalized

    def test_subnormal_becomes_normalized(self):
        x = FpValue(F32, 1)  # smallest subnormal
        v = cast_from_ieee(x)
        assert v.value() == x.to_fraction()
        assert v.frac >> 23 == 1

    def test_specials(self):
        assert cast_from_ieee(F32.from_float(math.inf)).exc is Exc.INF
        assert cast_from_ieee(F32.nan()).exc is Exc.NAN
        assert cast_from_ieee(F32.from_float(0.0)).exc is Exc.ZERO
        assert cast_to_ieee(FusedValue(F0, Exc.INF, 1)).bits == F32.from_float(-math.inf).bits

    def test_roundtrip(self, rng):
        for _ in range(20000):
            x = FpValue(F32, rng.getrandbits(32))
            if x.is_nan():
                continue
            assert cast_to_ieee(normalize(cast_from_ieee(x))).bits == x.bits

    def test_local_overflow_is_representable(self):
        big = fz(2.0 ** 100)
        p = fused_mul(big, big)                       # 2^200: beyond f32, inside the fused range
        assert p.exc is Exc.NORMAL and p.value() == Fraction(2) ** 200
        back = fused_mul(p, fz(2.0 ** -140))
        assert cast_to_ieee(back).to_fraction() == 2 ** 60
        assert cast_to_ieee(p).is_inf()


class TestArithmetic:
    def test_add_relative_error(self, rng):
        worst = Fraction(0)
        for _ in range(5000):
            a, b = rand_f32(rng), rand_f32(rng)
            exact = a.to_fraction() + b.to_fraction()
            r = fused_add(cast_from_ieee(a), cast_from_ieee(b))
            assert r.fmt.level == 1
            if exact:
                worst = max(worst, abs(r.value() - exact) / abs(exact))
        assert worst < Fraction(1, 1 << 24)

    def test_add_then_normalize_is_faithful(self, rng):
        for _ in range(3000):
            a, b = rand_f32(rng), rand_f32(rng)
            exact = a.to_fraction() + b.to_fraction()
            s = cast_to_ieee(normalize(fused_add(cast_from_ieee(a), cast_from_ieee(b))))
            if exact:
                assert abs(s.to_fraction() - exact) < s.ulp()

    def test_equal_exponents_exact(self):
        r = fused_add(fz(1.5), fz(1.25))
        assert r.value() == Fraction(11, 4)
        assert fused_sub(fz(1.5), fz(1.5)).exc is Exc.ZERO

    def test_level_mismatch(self):
        with pytest.raises(ValueError):
            fused_add(fz(1.0), fused_add(fz(1.0), fz(1.0)))

    def test_mul_matches_ieee_in_range(self, rng):
        for _ in range(5000):
            a, b = rand_f32(rng), rand_f32(rng)
            assert cast_to_ieee(fused_mul(cast_from_ieee(a), cast_from_ieee(b))).bits == \
                fp_mul(a, b, RNE).bits

    def test_mul_requires_level0(self):
        with pytest.raises(ValueError):
            fused_mul(fused_add(fz(1.0), fz(1.0)), fz(1.0))

    def test_wide_product_is_exact_enough(self, rng):
        for _ in range(500):
            a, b = rand_f32(rng), rand_f32(rng)
            p = fused_mul(cast_from_ieee(a), cast_from_ieee(b), form="wide")
            exact = a.to_fraction() * b.to_fraction()
            assert p.fmt.level == 1
            assert abs(p.value() - exact) / abs(exact) < Fraction(1, 1 << 24)

    def test_exceptions(self):
        inf, ninf = fz(math.inf), fz(-math.inf)
        assert fused_add(inf, ninf).exc is Exc.NAN
        assert fused_add(inf, fz(1.0)).exc is Exc.INF
        assert fused_mul(inf, zero(F0)).exc is Exc.NAN
        assert fused_mul(ninf, fz(2.0)).sign == 1
        assert fused_neg(fz(3.0)).value() == -3

    def test_normalize_idempotent(self, rng):
        for _ in range(300):
            v = fused_add(cast_from_ieee(rand_f32(rng)), cast_from_ieee(rand_f32(rng)))
            n = normalize(v)
            assert n.is_normalized
            assert normalize(n) == n


class TestDotProduct:
    def test_root_fraction_width(self):
        g = build_dot_product(16, F32, "fused")
        roots = [n for n in g.nodes.values() if n.kind == "normalize"]
        (root,) = roots
        (e,) = g.in_edges(root.id)
        src = g.nodes[e.src].out
        assert isinstance(src, FusedT)
        assert src.fmt.frac_width == 32

    def test_styles_agree_on_exact_data(self):
        # small integers: every intermediate is exact in both builds
        n = 8
        a = [F32.from_float(float(i + 1)).bits for i in range(n)]
        b = [F32.from_float(float(2 * i - 5)).bits for i in range(n)]
        stim = Trace({"a": [tuple(a)], "b": [tuple(b)]})
        want = sum((i + 1) * (2 * i - 5) for i in range(n))
        for style in ("fused", "ieee_assembly"):
            y = simulate_behavioral(build_dot_product(n, F32, style), stim)["y"][0]
            assert FpValue(F32, y).to_fraction() == want

    def test_fused_not_worse_than_ieee(self):
        rng = random.Random(3)
        n, samples = 16, 300
        gs = {s: build_dot_product(n, F32, s) for s in ("fused", "ieee_assembly")}
        vecs = [[rand_f32(rng, 120, 130) for _ in range(2 * n)] for _ in range(samples)]
        stim = Trace({"a": [tuple(v.bits for v in x[:n]) for x in vecs],
                      "b": [tuple(v.bits for v in x[n:]) for x in vecs]})
        errs = {}
        for s, g in gs.items():
            ys = simulate_behavioral(g, stim)["y"]
            tot = 0.0
            for x, y in zip(vecs, ys):
                exact = sum(x[i].to_fraction() * x[n + i].to_fraction() for i in range(n))
                tot += float((FpValue(F32, y).to_fraction() - exact) / exact) ** 2
            errs[s] = math.sqrt(tot / samples)
        assert errs["fused"] <= 2 * errs["ieee_assembly"]

    def test_bad_arguments(self):
        with pytest.raises(ValueError):
            build_dot_product(0, F32)
        with pytest.raises(ValueError):
            build_dot_product(4, F32, "other")
