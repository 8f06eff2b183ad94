import math
import random
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fpflow.softfloat import (
    FAITHFUL, RNE, FixedFormat, FpClass, FpFormat, FpValue, PRESETS, decode,
    fixed_quantize, fixed_value, fp_add, fp_convert, fp_div, fp_fma, fp_mul,
    fp_sub, make_format, parse_format, unit_roundoff,
)

from oracles import op_oracle, round_oracle

F32 = FpFormat(8, 23)
F44 = FpFormat(4, 4)
OPS = {"add": fp_add, "sub": fp_sub, "mul": fp_mul, "div": fp_div}


def f32(x):
    return F32.from_float(x)


class TestFormats:
    def test_presets(self):
        assert [PRESETS[k] for k in PRESETS] == [
            (5, 10), (8, 17), (8, 23), (8, 26), (10, 35), (10, 44), (11, 52)]
        assert make_format(8, 23).bias == 127
        assert make_format(5, 10).bias == 15
        assert make_format(8, 23).p == 24

    def test_reject_narrow(self):
        with pytest.raises(ValueError):
            make_format(1, 10)
        with pytest.raises(ValueError):
            make_format(8, 0)

    def test_parse(self):
        assert parse_format("f32m23") == F32
        assert parse_format("custom(4, 4)") == F44
        assert F44.name == "custom(4,4)"
        with pytest.raises(ValueError):
            parse_format("f31m22")

    def test_unit_roundoff(self):
        assert unit_roundoff(F32, FAITHFUL) == Fraction(1, 2**23)
        assert unit_roundoff(FpFormat(8, 17), FAITHFUL) == Fraction(1, 2**17)
        assert unit_roundoff(F32, RNE) == Fraction(1, 2**24)
        assert float(unit_roundoff(F32, FAITHFUL)) == pytest.approx(1.19e-7, rel=5e-3)
        assert float(unit_roundoff(FpFormat(8, 17), FAITHFUL)) == pytest.approx(7.63e-6, rel=5e-3)


class TestDecode:
    def test_examples(self):
        assert decode(0x3F800000, F32) == (0, FpClass.NORMAL, Fraction(1))
        assert decode(0, F32) == (0, FpClass.ZERO, Fraction(0))
        assert decode(0x7F800000, F32).cls is FpClass.INF
        d = decode(1, F32)
        assert d.cls is FpClass.SUBNORMAL and d.value == Fraction(1, 2**149)

    def test_roundtrip_all_small(self):
        for bits in range(1 << F44.width):
            v = FpValue(F44, bits)
            if v.is_nan():
                assert F44.from_fraction(0).bits == 0
                continue
            if v.is_inf():
                continue
            back = F44.from_fraction(v.to_fraction())
            # exact zero re-encodes as +0
            assert back.bits == (bits if not v.is_zero() else 0)

    @given(st.integers(0, 2**32 - 1))
    def test_matches_host_single(self, bits):
        v = FpValue(F32, bits)
        host = np.array([bits], dtype=np.uint32).view(np.float32)[0]
        if v.is_nan():
            assert math.isnan(host)
        else:
            assert float(v) == float(host)


class TestArithmetic:
    def test_examples(self):
        assert fp_add(f32(0.5), f32(0.25)) == f32(0.75)
        assert fp_add(f32(1.0), f32(2.0**-24)) == f32(1.0)
        assert fp_add(f32(1.0), f32(2.0**-24 * 3)).bits == f32(1.0).bits + 2  # tie to even
        assert fp_sub(f32(3.0), f32(3.0)).bits == 0
        assert fp_div(f32(1.0), f32(3.0)) == f32(np.float32(1) / np.float32(3))

    def test_faithful_brackets(self):
        a = f32(1.0)
        b = f32(2.0**-23 * 0.75)
        r = fp_add(a, b, FAITHFUL)
        assert r == f32(1.0)

    @pytest.mark.parametrize("op", sorted(OPS))
    def test_exhaustive_rne_smoke(self, op):
        # a strided slice of the exhaustive sweep; the full sweep is in the acceptance suite
        fn = OPS[op]
        n = 1 << F44.width
        for a in range(0, n, 7):
            va = FpValue(F44, a)
            for b in range(0, n, 5):
                vb = FpValue(F44, b)
                assert fn(va, vb).bits == op_oracle(op, va, vb), (op, a, b)

    @pytest.mark.parametrize("op", ["add", "mul", "div"])
    def test_faithful_small_exhaustive(self, op):
        fn = OPS[op]
        n = 1 << F44.width
        for a in range(0, n, 3):
            va = FpValue(F44, a)
            for b in range(0, n, 3):
                vb = FpValue(F44, b)
                assert fn(va, vb, FAITHFUL).bits == op_oracle(op, va, vb, faithful=True)

    def test_random_single_vs_host(self, rng):
        nrng = np.random.default_rng(7)
        bits = nrng.integers(0, 2**32, size=(4000, 2), dtype=np.uint64).astype(np.uint32)
        xs = bits.view(np.float32)
        with np.errstate(all="ignore"):
            ref = {"add": xs[:, 0] + xs[:, 1], "sub": xs[:, 0] - xs[:, 1],
                   "mul": xs[:, 0] * xs[:, 1], "div": xs[:, 0] / xs[:, 1]}
        for op, fn in OPS.items():
            rbits = ref[op].view(np.uint32)
            for i in range(len(bits)):
                got = fn(FpValue(F32, int(bits[i, 0])), FpValue(F32, int(bits[i, 1])))
                want = int(rbits[i])
                if got.is_nan():
                    assert FpValue(F32, want).is_nan()
                else:
                    assert got.bits == want, (op, hex(bits[i, 0]), hex(bits[i, 1]))

    def test_fma_exhaustive_sample(self, rng):
        for _ in range(3000):
            a, b, c = (FpValue(F44, rng.randrange(1 << F44.width)) for _ in range(3))
            got = fp_fma(a, b, c)
            if any(v.is_nan() or v.is_inf() for v in (a, b, c)):
                continue
            x = a.to_fraction() * b.to_fraction() + c.to_fraction()
            zs = (a.sign ^ b.sign) & c.sign if x == 0 and (a.is_zero() or b.is_zero()) and c.is_zero() else 0
            assert got.bits == round_oracle(x, F44, zero_sign=zs), (a, b, c)

    def test_identities(self, rng):
        one = f32(1.0)
        for _ in range(500):
            x = FpValue(F32, rng.randrange(0, F32.exp_ones << 23))
            y = FpValue(F32, rng.randrange(0, F32.exp_ones << 23))
            assert fp_add(x, y) == fp_add(y, x)
            assert fp_mul(x, y) == fp_mul(y, x)
            assert fp_mul(x, one) == x
            assert fp_sub(x, x).bits == 0

    def test_exceptions(self):
        inf, ninf, nan = F32.inf(), F32.inf(1), F32.nan()
        assert fp_add(inf, f32(1.0)) == inf
        assert fp_sub(inf, inf).is_nan()
        assert fp_mul(f32(0.0), inf).is_nan()
        assert fp_add(nan, f32(1.0)).is_nan()
        assert fp_mul(f32(2.0**100), f32(2.0**100)) == inf
        assert fp_add(ninf, ninf) == ninf

    def test_error_bounds_sampled(self, rng):
        u_c, u_f = unit_roundoff(F32, RNE), unit_roundoff(F32, FAITHFUL)
        for _ in range(2000):
            x = f32(rng.uniform(-1e3, 1e3))
            y = f32(rng.uniform(-1e3, 1e3))
            exact = x.to_fraction() + y.to_fraction()
            if exact == 0:
                continue
            rc = fp_add(x, y, RNE).to_fraction()
            rf = fp_add(x, y, FAITHFUL).to_fraction()
            assert abs(rc - exact) / abs(exact) <= u_c
            assert abs(rf - exact) / abs(exact) <= u_f
            assert abs(rf - rc) <= fp_add(x, y).ulp()


class TestConvert:
    def test_examples(self):
        wide = FpFormat(10, 35)
        assert fp_convert(f32(1.0), wide).to_fraction() == 1
        x = f32(1 + 2.0**-20)
        assert fp_convert(x, FpFormat(8, 17)).to_fraction() == 1

    def test_widening_exact(self, rng):
        wide = FpFormat(11, 52)
        for _ in range(2000):
            v = FpValue(F32, rng.randrange(0, F32.exp_ones << 23))
            assert fp_convert(v, wide).to_fraction() == v.to_fraction()

    def test_narrowing_vs_oracle(self, rng):
        for _ in range(3000):
            v = FpValue(F32, rng.randrange(0, 1 << 32))
            got = fp_convert(v, F44)
            if v.is_nan():
                assert got.is_nan()
            elif v.is_inf():
                assert got.is_inf() and got.sign == v.sign
            else:
                assert got.bits == round_oracle(v.to_fraction(), F44, zero_sign=v.sign)

    def test_overflow_and_underflow(self):
        assert fp_convert(f32(1e30), FpFormat(5, 10)).is_inf()
        assert fp_convert(f32(1e-30), FpFormat(5, 10)).is_zero()


class TestFixed:
    def test_examples(self):
        s8_4 = FixedFormat(True, 8, 4)
        assert fixed_quantize(Fraction(3, 2), s8_4) == 0x18
        assert fixed_quantize(200, FixedFormat(True, 8, 0), "saturate") == 127
        assert fixed_quantize(-200, FixedFormat(True, 8, 0), "saturate") == 0x80
        assert fixed_quantize(200, FixedFormat(True, 8, 0), "wrap") == 200

    def test_sweep_vs_integer_math(self):
        fmt = FixedFormat(True, 6, 2)
        for num in range(-300, 300):
            x = Fraction(num, 7)
            n = (num * 4) // 7  # floor on integers
            assert fixed_quantize(x, fmt) == n % 64
            sat = min(max(n, -32), 31)
            assert fixed_value(fixed_quantize(x, fmt, "saturate"), fmt) == Fraction(sat, 4)

    def test_range(self):
        fmt = FixedFormat(True, 8, 4)
        assert fixed_value(0x7F, fmt) == Fraction(127, 16)
        assert fixed_value(0x80, fmt) == -8
        with pytest.raises(ValueError):
            FixedFormat(True, 4, 5)
