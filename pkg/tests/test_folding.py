import json

import pytest

from fpflow.designs import (
    EXAMPLES, example, inverter_controller, nr_rsqrt, random_fixed_graph, random_float_graph,
    small_share_instance,
)
from fpflow.folding import (
    AluProgram, FoldConfig, FoldError, alu_fold, anneal_assignment, exhaustive_assignment, fold,
    run_alu_program, shared_unit_counts, simulate_folded, tdm_fold, validate_program,
)
from fpflow.ir import FixedT, FloatT, GraphBuilder, Trace, simulate_behavioral
from fpflow.ir.lower import lower
from fpflow.pipeline import ClockSpec, LatencyModel, pipeline
from fpflow.softfloat import parse_fixed, parse_format
from fpflow.verify import random_stimulus


def folded_equivalent(g, f, n=40, seed=0, exhaustive=False):
    gf, a = tdm_fold(g, FoldConfig(f=f, mode="tdm"), exhaustive=exhaustive)
    stim = random_stimulus(g, n, seed=seed)
    return simulate_folded(gf, stim, f) == simulate_behavioral(g, stim), gf, a


def samples_of(stim: Trace) -> list:
    return [{k: v[i] for k, v in stim.ports.items()} for i in range(stim.cycles)]


def alu_matches(g, p, n=30, seed=0):
    stim = random_stimulus(g, n, seed=seed)
    want = simulate_behavioral(g, stim)
    got = run_alu_program(p, samples_of(stim))
    return all(got[i][k] == want[k][i] for i in range(n) for k in want.ports)


def op_count(g):
    return sum(1 for n in g.nodes.values() if n.kind not in ("input", "output", "const"))


class TestConfig:
    def test_mode_regimes(self):
        assert FoldConfig(f=4).resolved_mode() == "tdm"
        assert FoldConfig(f=128).resolved_mode() == "alu"
        with pytest.warns(UserWarning):
            assert FoldConfig(f=40).resolved_mode() == "tdm"

    def test_rejects_bad_values(self):
        with pytest.raises(FoldError):
            FoldConfig(f=0)
        with pytest.raises(FoldError):
            FoldConfig(f=2, mode="spatial")

    def test_f1_is_identity(self):
        g = example("fir8")
        gf, a = tdm_fold(g, FoldConfig(f=1, mode="tdm"))
        assert gf is g and a.cost == a.flat_cost


class TestTdm:
    def test_nr_rsqrt_one_multiplier(self):
        g = nr_rsqrt()
        ok, gf, a = folded_equivalent(g, 20, n=200)
        assert ok
        assert shared_unit_counts(g, a)["mul"] <= 2
        assert a.cost < a.flat_cost and a.makespan <= 20

    @pytest.mark.parametrize("f", [2, 3, 4])
    @pytest.mark.parametrize("name", ["fir8", "inverter"])
    def test_examples(self, name, f):
        assert folded_equivalent(example(name), f)[0]

    def test_random_fixed(self):
        for s in range(8):
            assert folded_equivalent(random_fixed_graph(s, 8), 3, seed=s)[0]

    def test_random_float(self):
        for s in range(4):
            assert folded_equivalent(random_float_graph(s, 6), 4, seed=s)[0]

    def test_folded_graph_lowers(self):
        g = example("inverter")
        gf, _ = tdm_fold(g, FoldConfig(f=3, mode="tdm"))
        stim = random_stimulus(g, 20, seed=2)
        assert simulate_folded(lower(gf), stim, 3) == simulate_folded(gf, stim, 3)

    def test_float_adders_share(self):
        f32 = parse_format("f32m23")
        b = GraphBuilder("two_adds")
        t = FloatT(f32)
        x, y, z = (b.input(n, t) for n in "xyz")
        b.output("p", b.op("add", t, x, y))
        b.output("q", b.op("add", t, y, z))
        g = b.build()
        a = exhaustive_assignment(g, FoldConfig(f=2, mode="tdm"))
        assert len(a.groups) == 1
        assert anneal_assignment(g, FoldConfig(f=2, mode="tdm")).cost == a.cost
        assert folded_equivalent(g, 2)[0]

    def test_narrow_fixed_adders_do_not_share(self):
        t = FixedT(parse_fixed("s16.8"))
        b = GraphBuilder("two_fixed")
        x, y = b.input("x", t), b.input("y", t)
        b.output("p", b.op("add", t, x, y))
        b.output("q", b.op("add", t, x, x))
        a = exhaustive_assignment(b.build(), FoldConfig(f=2, mode="tdm"))
        assert len(a.groups) == 2

    @pytest.mark.parametrize("f", [2, 3])
    def test_anneal_reaches_exhaustive(self, f):
        for seed in range(10):
            g = small_share_instance(seed)
            cfg = FoldConfig(f=f, mode="tdm", seed=seed)
            assert anneal_assignment(g, cfg).cost == exhaustive_assignment(g, cfg).cost

    def test_exhaustive_fold_equivalent(self):
        g = small_share_instance(3)
        assert folded_equivalent(g, 3, exhaustive=True)[0]

    def test_pipelined_then_folded(self):
        g = nr_rsqrt()
        phys, s = pipeline(g, ClockSpec(3.0), LatencyModel())
        gf, _ = tdm_fold(phys, FoldConfig(f=20, mode="tdm"))
        stim = random_stimulus(g, 60, seed=4)
        flat = simulate_behavioral(g, stim)
        got = simulate_folded(gf, stim, 20)
        L = s.latency
        assert all(got[k][L:] == flat[k][:60 - L] for k in flat.ports)

    def test_rejects_counters(self):
        b = GraphBuilder("cnt")
        x = b.input("x", FixedT(parse_fixed("u4.0")))
        b.output("c", b.op("counter", FixedT(parse_fixed("u4.0")), modulus=3))
        b.output("y", x)
        with pytest.raises(FoldError):
            tdm_fold(b.build(), FoldConfig(f=2, mode="tdm"))

    def test_deterministic(self):
        g = small_share_instance(5)
        cfg = FoldConfig(f=3, mode="tdm", seed=7)
        assert anneal_assignment(g, cfg).to_dict() == anneal_assignment(g, cfg).to_dict()


class TestAlu:
    def test_inverter_f128(self):
        g = inverter_controller()
        p = alu_fold(g, FoldConfig(f=128, mode="alu"))
        assert isinstance(p, AluProgram)
        assert validate_program(p) == []
        assert p.length <= 128
        assert p.unit_count() <= op_count(g)
        assert alu_matches(g, p, n=50)

    @pytest.mark.parametrize("name", sorted(EXAMPLES))
    def test_examples(self, name):
        g = example(name)
        p = alu_fold(g, FoldConfig(f=200, mode="alu"))
        assert validate_program(p) == []
        assert alu_matches(g, p, n=8)

    def test_random_graphs(self):
        for s in range(5):
            for g in (random_fixed_graph(s, 10), random_float_graph(s, 8)):
                p = alu_fold(g, FoldConfig(f=128, mode="alu"))
                assert validate_program(p) == []
                assert alu_matches(g, p, n=15, seed=s)

    def test_too_small_f(self):
        with pytest.raises(FoldError, match="minimal achievable length is 32"):
            alu_fold(nr_rsqrt(), FoldConfig(f=24, mode="alu"))

    def test_validation_catches_tampering(self):
        p = alu_fold(inverter_controller(), FoldConfig(f=128, mode="alu"))
        victim = next(i for i in p.instructions if any(q is not None for q in i.producers))
        victim.slot = 0
        assert validate_program(p)

    def test_program_json(self):
        p = alu_fold(example("fir8"), FoldConfig(f=128, mode="alu"))
        d = json.loads(p.to_json())
        assert d["f"] == 128 and len(d["instructions"]) == len(p.instructions)

    def test_dispatch(self):
        g = example("fir8")
        assert isinstance(fold(g, FoldConfig(f=128)), AluProgram)
        gf, _ = fold(g, FoldConfig(f=2))
        assert any(n.kind == "counter" and n.attrs["modulus"] == 2 for n in gf.nodes.values())
