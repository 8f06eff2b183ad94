import random

import pytest

from fpflow.designs import chain_accumulator, example, fir, inverter_controller, random_fixed_graph
from fpflow.fusedfp import FusedFormat
from fpflow.ir import (
    BitsT, FixedT, FloatT, FusedT, Graph, GraphBuilder, SimulationError, Trace, check,
    is_lowered, parse_type, simulate_behavioral, simulate_bit_accurate, validate,
)
from fpflow.ir.lower import lower
from fpflow.ir.passes import balance_adder_tree, fuse_float_ops, fuse_mul_add
from fpflow.softfloat import FpValue, parse_fixed, parse_format

F16 = parse_format("f16m10")
F32 = parse_format("f32m23")
F44 = parse_format("custom(4,4)")
S16 = parse_fixed("s16.8")


def rand_word(rng, t):
    """Random pattern, biased towards special encodings for floats."""
    if isinstance(t, FloatT) and rng.random() < 0.15:
        f = t.fmt
        x = rng.choice([0, f.inf().bits, f.nan().bits, 1, f.max_finite().bits,
                        (1 << f.w_f) - 1, 1 << f.w_f])
        return x | (rng.getrandbits(1) << (f.width - 1))
    return rng.getrandbits(t.width)


def stimulus(g, n, seed=0):
    rng = random.Random(seed)
    ports = {}
    for p in g.ports:
        if p.direction == "in":
            mk = lambda: rand_word(rng, p.type)  # noqa: E731
            ports[p.name] = [mk() if p.length is None else tuple(mk() for _ in range(p.length))
                             for _ in range(n)]
    return Trace(ports)


def lowered_matches(g, n, seed=0):
    st = stimulus(g, n, seed)
    low = lower(g)
    assert is_lowered(low)
    return simulate_bit_accurate(low, st) == simulate_behavioral(g, st)


def single_op(kind, t_out, t_in, arity, **attrs):
    b = GraphBuilder(f"{kind}")
    xs = [b.input(f"x{i}", t_in) for i in range(arity)]
    b.output("y", b.op(kind, t_out, *xs, **attrs))
    return b.build()


class TestTypesAndGraph:
    def test_parse_type_roundtrip(self):
        for text in ("f32m23", "fixed:s16.8", "bits:5", "fused:f32m23:g2:l1"):
            assert str(parse_type(text)) == text

    def test_json_roundtrip(self):
        for name in ("nr_rsqrt", "inverter", "dot16_fused"):
            g = example(name)
            text = g.to_json()
            g2 = Graph.from_json(text)
            assert g2.to_json() == text
            assert g2.signature() == g.signature()

    def test_validate_type_mismatch(self):
        b = GraphBuilder("bad")
        x = b.input("x", FloatT(F32))
        z = b.input("z", FloatT(F16))
        b.output("y", b.op("add", FloatT(F32), x, z))
        assert validate(b.build())
        with pytest.raises(ValueError):
            check(b.build())

    def test_combinational_loop_detected(self):
        g = Graph("loop")
        from fpflow.ir.graph import Node
        t = FixedT(S16)
        g.add_node(Node("a", "add", t))
        g.add_node(Node("b", "neg", t))
        g.connect("a", "b", 0)
        g.connect("b", "a", 0)
        g.connect("b", "a", 1)
        with pytest.raises(ValueError, match="combinational loop"):
            g.combinational_order()

    def test_builder_rejects_duplicates(self):
        g = Graph()
        from fpflow.ir.graph import Node
        g.add_node(Node("x", "const", BitsT(1)))
        with pytest.raises(ValueError):
            g.add_node(Node("x", "const", BitsT(1)))


class TestTrace:
    def test_csv_roundtrip(self):
        tr = Trace({"a": [1, 2, 255], "v": [(1, 2), (3, 4), (5, 6)]})
        assert Trace.from_csv(tr.to_csv({"a": 8, "v": 4})) == tr

    def test_json_roundtrip(self):
        tr = Trace({"a": [0, 7], "v": [(1, 2, 3), (4, 5, 6)]})
        assert Trace.from_json(tr.to_json()) == tr

    def test_cycle_disagreement(self):
        with pytest.raises(ValueError):
            Trace({"a": [1], "b": [1, 2]}).cycles


class TestSimulationSemantics:
    def test_sample_delay(self):
        b = GraphBuilder("d")
        x = b.input("x", BitsT(8))
        b.output("y", b.op("reinterpret", BitsT(8), (x, 2)))
        tr = simulate_behavioral(b.build(), Trace({"x": [5, 6, 7, 8]}))
        assert tr["y"] == [0, 0, 5, 6]

    def test_start_cycle_forces_zero(self):
        b = GraphBuilder("s")
        x = b.input("x", BitsT(8))
        y = b.op("reinterpret", BitsT(8), x)
        b.g.nodes[y].attrs["start_cycle"] = 2
        b.output("y", y)
        assert simulate_behavioral(b.build(), Trace({"x": [1, 2, 3, 4]}))["y"] == [0, 0, 3, 4]

    def test_counter(self):
        b = GraphBuilder("c")
        b.output("y", b.op("counter", BitsT(3), modulus=5, phase=1))
        b.input("x", BitsT(1))
        tr = simulate_behavioral(b.build(), Trace({"x": [0] * 7}))
        assert tr["y"] == [4, 0, 1, 2, 3, 4, 0]

    def test_accumulator_loop(self):
        b = GraphBuilder("acc")
        t = FixedT(S16)
        x = b.input("x", t)
        acc = b.op("add", t, x, x, name="acc")
        b.g.edges = [e for e in b.g.edges if e.dst != "acc"]
        b.g.connect(x, "acc", 0)
        b.g.connect("acc", "acc", 1, 1)
        b.output("y", acc)
        one = S16.from_int(1 << 8)
        tr = simulate_behavioral(b.build(), Trace({"x": [one] * 4}))
        assert [S16.to_int(v) >> 8 for v in tr["y"]] == [1, 2, 3, 4]

    def test_negative_delay_rejected(self):
        b = GraphBuilder("n")
        x = b.input("x", BitsT(4))
        b.output("y", b.op("reinterpret", BitsT(4), (x, -1)))
        with pytest.raises(SimulationError):
            simulate_behavioral(b.build(), Trace({"x": [1, 2]}))

    def test_missing_stimulus(self):
        g = single_op("add", FixedT(S16), FixedT(S16), 2)
        with pytest.raises(SimulationError):
            simulate_behavioral(g, Trace({"x0": [1]}))

    def test_float_op_matches_softfloat(self, rng):
        from fpflow.softfloat import RNE, fp_add
        g = single_op("add", FloatT(F16), FloatT(F16), 2)
        xs = [rng.getrandbits(16) for _ in range(200)]
        zs = [rng.getrandbits(16) for _ in range(200)]
        y = simulate_behavioral(g, Trace({"x0": xs, "x1": zs}))["y"]
        assert y == [fp_add(FpValue(F16, a), FpValue(F16, b), RNE).bits for a, b in zip(xs, zs)]


FLOAT_OPS = [("add", 2), ("sub", 2), ("mul", 2), ("div", 2), ("fma", 3), ("neg", 1)]


class TestLowering:
    @pytest.mark.parametrize("kind,arity", FLOAT_OPS)
    @pytest.mark.parametrize("rounding", ["rne", "faithful"])
    def test_float_ops_small_format(self, kind, arity, rounding):
        g = single_op(kind, FloatT(F44), FloatT(F44), arity, rounding=rounding)
        assert lowered_matches(g, 1500)

    @pytest.mark.parametrize("kind,arity", FLOAT_OPS)
    def test_float_ops_f16(self, kind, arity):
        assert lowered_matches(single_op(kind, FloatT(F16), FloatT(F16), arity), 600, seed=1)

    @pytest.mark.parametrize("kind,arity", [("add", 2), ("mul", 2), ("fma", 3)])
    def test_float_ops_f32(self, kind, arity):
        assert lowered_matches(single_op(kind, FloatT(F32), FloatT(F32), arity), 300, seed=2)

    @pytest.mark.parametrize("op", ["lt", "le", "eq", "ne", "gt", "ge"])
    def test_compare(self, op):
        assert lowered_matches(single_op("cmp", BitsT(1), FloatT(F16), 2, op=op), 400)

    @pytest.mark.parametrize("src,dst", [("f16m10", "f32m23"), ("f32m23", "f16m10"),
                                         ("f16m10", "custom(4,3)")])
    def test_float_convert(self, src, dst):
        g = single_op("convert", FloatT(parse_format(dst)), FloatT(parse_format(src)), 1)
        assert lowered_matches(g, 800)

    @pytest.mark.parametrize("fx", ["s12.4", "u8.8"])
    @pytest.mark.parametrize("ov", ["saturate", "wrap"])
    def test_float_fixed_convert(self, fx, ov):
        ft = FixedT(parse_fixed(fx))
        assert lowered_matches(single_op("convert", ft, FloatT(F16), 1, overflow=ov), 800)
        assert lowered_matches(single_op("convert", FloatT(F16), ft, 1), 800)

    @pytest.mark.parametrize("kind,arity", [("add", 2), ("sub", 2), ("mul", 2), ("neg", 1)])
    @pytest.mark.parametrize("ov", ["saturate", "wrap"])
    def test_fixed_ops(self, kind, arity, ov):
        g = single_op(kind, FixedT(parse_fixed("s10.6")), FixedT(S16), arity, overflow=ov)
        assert lowered_matches(g, 800)

    @pytest.mark.parametrize("form", ["level0", "wide"])
    def test_fused_ops(self, form):
        f0 = FusedFormat(F16, 2, 0)
        b = GraphBuilder("fz")
        x, z = b.input("x", FloatT(F16)), b.input("z", FloatT(F16))
        cx = b.op("cast", FusedT(f0), x, to="fused")
        cz = b.op("cast", FusedT(f0), z, to="fused")
        lvl = 0 if form == "level0" else 1
        m1 = b.op("fused_mul", FusedT(f0.at_level(lvl)), cx, cz, form=form)
        m2 = b.op("fused_mul", FusedT(f0.at_level(lvl)), cz, cz, form=form)
        s = b.op("fused_add", FusedT(f0.at_level(lvl + 1)), m1, m2)
        d = b.op("fused_sub", FusedT(f0.at_level(lvl + 2)), s, s)
        b.output("raw", s)
        b.output("y", b.op("cast", FloatT(F16), b.op("normalize", FusedT(f0), d), to="ieee"))
        b.output("y2", b.op("cast", FloatT(F16), b.op("normalize", FusedT(f0), s), to="ieee"))
        assert lowered_matches(b.build(), 1500)

    @pytest.mark.parametrize("name", ["fir8", "inverter", "nr_rsqrt", "dot16_fused"])
    def test_examples(self, name):
        assert lowered_matches(example(name), 60)

    def test_random_fixed_graphs(self):
        for s in range(5):
            assert lowered_matches(random_fixed_graph(s, 10), 60, seed=s)

    def test_lowered_graph_is_lowered(self):
        assert not is_lowered(chain_accumulator(3, F16))
        assert is_lowered(lower(chain_accumulator(3, F16)))


class TestPasses:
    def test_balance_reduces_depth(self):
        g = chain_accumulator(8, F32)
        bal = balance_adder_tree(g)
        assert bal.count_kinds()["add"] == 7

        def depth(gr):
            d = {}
            for nid in gr.combinational_order():
                d[nid] = 1 + max((d[e.src] for e in gr.in_edges(nid)), default=0)
            return max(d.values())
        assert depth(bal) < depth(g)
        # small integers add exactly in any order
        xs = tuple(F32.from_float(float(i)).bits for i in range(8))
        stim = Trace({"x": [xs]})
        assert simulate_behavioral(bal, stim) == simulate_behavioral(g, stim)

    def test_fuse_mul_add(self):
        b = GraphBuilder("ma")
        t = FloatT(F32)
        x, y, z = (b.input(n, t) for n in "xyz")
        b.output("o", b.op("add", t, b.op("mul", t, x, y), z))
        g = fuse_mul_add(b.build())
        assert g.count_kinds().get("fma") == 1 and "mul" not in g.count_kinds()

    def test_fuse_float_ops_reproduces_fused_dot(self):
        ieee, fused = example("dot16_ieee"), example("dot16_fused")
        g = fuse_float_ops(ieee)
        assert g.signature() == ieee.signature()
        st = stimulus(ieee, 40)
        assert simulate_behavioral(g, st) == simulate_behavioral(fused, st)

    def test_fuse_float_ops_keeps_fixed_graphs(self):
        g = inverter_controller()
        assert fuse_float_ops(g).to_json() == g.to_json()

    def test_fuse_float_ops_lowers(self):
        g = fuse_float_ops(chain_accumulator(6, F16))
        assert lowered_matches(g, 200)
