from fractions import Fraction

import mpmath
import pytest

from fpflow.funcgen import (
    FuncGenError, PolySpec, PolyTable, approximate, build_float_function,
    build_horner_graph, expand_func_nodes, generate_poly_table, horner_eval,
    horner_value,
)
from fpflow.ir import GraphBuilder, FloatT, Trace, is_lowered, simulate_behavioral, simulate_bit_accurate
from fpflow.ir.lower import lower
from fpflow.softfloat import FpValue, parse_fixed, parse_format

from oracles import func_ulp_error

U10 = parse_fixed("u10.10")
U12 = parse_fixed("u12.10")
F16 = parse_format("f16m10")


def exp_spec(degree=2, k=0, target=None):
    return PolySpec(0, 1, degree, k, U10, U12, target)


def ulp_error(name, x_bits, y_bits, fmt=F16) -> float:
    return func_ulp_error(name, x_bits, y_bits, fmt)


@pytest.fixture(scope="module")
def exp_table():
    return generate_poly_table(mpmath.exp, exp_spec())


class TestPolySpec:
    def test_rejects_bad_interval(self):
        with pytest.raises(FuncGenError):
            PolySpec(1, 0, 2, 0, U10, U12)
        with pytest.raises(FuncGenError):
            PolySpec(0, Fraction(3, 4), 2, 0, U10, U12)
        with pytest.raises(FuncGenError):
            PolySpec(0, 1, -1, 0, U10, U12)

    def test_offset_bits(self):
        assert exp_spec().offset_bits == 10
        assert PolySpec(Fraction(1, 2), 1, 1, 0, U10, U12).offset_bits == 9


class TestTables:
    def test_retry_finds_faithful_table(self, exp_table):
        assert exp_table.k > 0
        assert exp_table.validated == "exhaustive"
        assert exp_table.measured_error < exp_table.spec.ulp

    def test_no_retry_raises(self):
        with pytest.raises(FuncGenError, match="target error not reached"):
            generate_poly_table(mpmath.exp, exp_spec(), retry=False)

    def test_exhaustive_faithful(self, exp_table):
        ulp = exp_table.spec.ulp
        with mpmath.workprec(80):
            for x in range(1 << 10):
                exact = mpmath.exp(mpmath.mpf(x) / 1024)
                got = mpmath.mpf(U12.to_int(horner_eval(exp_table, x))) / 1024
                assert abs(got - exact) < mpmath.mpf(ulp.numerator) / ulp.denominator

    def test_horner_value_matches_eval(self, exp_table):
        for x in range(0, 1024, 7):
            assert horner_value(exp_table, x) == Fraction(U12.to_int(horner_eval(exp_table, x)), 1024)

    def test_json_roundtrip(self, exp_table):
        t2 = PolyTable.from_json(exp_table.to_json())
        assert t2.rows == exp_table.rows and t2.spec == exp_table.spec
        assert all(horner_eval(t2, x) == horner_eval(exp_table, x) for x in range(1024))

    def test_rom_shrinks_with_degree(self):
        t1 = generate_poly_table(mpmath.exp, exp_spec(degree=1))
        t2 = generate_poly_table(mpmath.exp, exp_spec(degree=2))
        assert t2.rom_bits < t1.rom_bits
        t1 = generate_poly_table(mpmath.log1p, exp_spec(degree=1))
        t2 = generate_poly_table(mpmath.log1p, exp_spec(degree=2))
        assert t2.rom_bits < t1.rom_bits

    def test_absolute_target(self):
        t = generate_poly_table(mpmath.exp, exp_spec(degree=1, target=Fraction(1, 256)))
        assert t.measured_error <= Fraction(1, 256)

    def test_approximate_keeps_k(self):
        assert approximate(mpmath.exp, exp_spec(k=3)).k == 3

    def test_k_too_large(self):
        with pytest.raises(FuncGenError):
            generate_poly_table(mpmath.exp, exp_spec(k=11))


class TestHornerGraph:
    def test_graph_matches_table(self, exp_table):
        g = build_horner_graph(exp_table, "exp")
        stim = Trace({"x": list(range(1024))})
        y = simulate_behavioral(g, stim)["y"]
        assert y == [horner_eval(exp_table, x) for x in range(1024)]
        assert simulate_bit_accurate(lower(g), stim)["y"] == y

    def test_single_interval(self):
        t = approximate(mpmath.exp, exp_spec(degree=3, k=0))
        g = build_horner_graph(t)
        y = simulate_behavioral(g, Trace({"x": list(range(0, 1024, 3))}))["y"]
        assert y == [horner_eval(t, x) for x in range(0, 1024, 3)]


class TestFloatFunctions:
    @pytest.mark.parametrize("name,bound", [("exp", 1.0), ("log", 1.0), ("rsqrt", 2.0)])
    def test_sampled_accuracy(self, name, bound):
        g = build_float_function(name, F16)
        xs = list(range(0, 1 << 16, 53))
        ys = simulate_behavioral(g, Trace({"x": xs}))["y"]
        worst = max(ulp_error(name, x, y) for x, y in zip(xs, ys))
        assert worst < bound

    def test_exp_zero_is_one(self):
        f32 = parse_format("f32m23")
        g = build_float_function("exp", f32)
        y = simulate_behavioral(g, Trace({"x": [0]}))["y"][0]
        assert y == f32.from_float(1.0).bits

    def test_specials(self):
        cases = {"exp": [(F16.inf(0).bits, F16.inf(0).bits), (F16.inf(1).bits, 0)],
                 "log": [(0, F16.inf(1).bits), (F16.from_float(1.0).bits, 0)],
                 "rsqrt": [(0, F16.inf(0).bits), (F16.inf(0).bits, 0)]}
        for name, pairs in cases.items():
            g = build_float_function(name, F16)
            ys = simulate_behavioral(g, Trace({"x": [p[0] for p in pairs]}))["y"]
            assert ys == [p[1] for p in pairs]
        g = build_float_function("log", F16)
        y = simulate_behavioral(g, Trace({"x": [F16.from_float(-2.0).bits]}))["y"][0]
        assert FpValue(F16, y).is_nan()

    def test_unsupported(self):
        with pytest.raises(FuncGenError):
            build_float_function("tanh", F16)

    @pytest.mark.parametrize("name", ["exp", "log"])
    def test_lowering_matches(self, name):
        g = build_float_function(name, F16)
        low = lower(g)
        assert is_lowered(low)
        stim = Trace({"x": list(range(0, 1 << 16, 211))})
        assert simulate_bit_accurate(low, stim) == simulate_behavioral(g, stim)

    def test_func_node_expansion(self):
        b = GraphBuilder("fn")
        x = b.input("x", FloatT(F16))
        b.output("y", b.op("func", FloatT(F16), x, fn="exp"))
        g = b.build()
        ex = expand_func_nodes(g)
        assert "func" not in ex.count_kinds()
        stim = Trace({"x": list(range(0, 1 << 16, 97))})
        assert simulate_behavioral(ex, stim) == simulate_behavioral(g, stim)
