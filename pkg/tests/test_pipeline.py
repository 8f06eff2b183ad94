import json

import pytest

from fpflow.designs import example, random_fixed_graph
from fpflow.ir import FloatT, FixedT, GraphBuilder, Trace, simulate_behavioral
from fpflow.ir.passes import fuse_float_ops
from fpflow.pipeline import (
    ClockSpec, InfeasiblePeriod, LatencyModel, SchedulingError, absorb_registers, apply_retiming,
    apply_schedule, break_loops, combinational_delay, compare_strategies, greedy_insert,
    min_period, pipeline, retime, retimed_weights, schedule, scc_ids, threshold_insert,
)
from fpflow.softfloat import parse_fixed, parse_format
from fpflow.verify import random_stimulus

from corpora import pipeline_corpus, retiming_corpus
from oracles import brute_min_period, longest_register_free_path

M = LatencyModel()
F16 = parse_format("f16m10")
S16 = FixedT(parse_fixed("s16.8"))


def equivalent_modulo_latency(g, phys, latency, n=100, seed=1):
    stim = random_stimulus(g, n, seed=seed)
    flat = simulate_behavioral(g, stim)
    got = simulate_behavioral(phys, stim)
    return all(got[k][latency:] == flat[k][:n - latency] for k in flat.ports)


@pytest.fixture(scope="module")
def corpus():
    return pipeline_corpus(20)


class TestModel:
    def test_json_roundtrip(self):
        m = LatencyModel.from_json(M.to_json())
        assert m.table == M.table and m.routing == M.routing
        assert json.loads(M.to_json())

    def test_clock(self):
        assert ClockSpec.from_fmax(400).period == pytest.approx(2.5)
        with pytest.raises(ValueError):
            ClockSpec(0)

    def test_delay_grows_with_width(self):
        b = GraphBuilder("w")
        x = b.input("x", FixedT(parse_fixed("s8.0")))
        z = b.input("z", FixedT(parse_fixed("s32.0")))
        a1 = b.op("add", FixedT(parse_fixed("s8.0")), x, x)
        a2 = b.op("add", FixedT(parse_fixed("s32.0")), z, z)
        b.output("y", a1)
        b.output("w", a2)
        d = M.delays(b.build())
        assert d[a2] > d[a1] > 0
        assert d["in_x"] == 0


class TestPreparation:
    def test_absorb_registers(self):
        b = GraphBuilder("r")
        x = b.input("x", S16)
        r = b.op("register", S16, x, depth=2)
        b.output("y", b.op("neg", S16, (r, 1)))
        g = b.build()
        a = absorb_registers(g)
        assert "register" not in a.count_kinds()
        (e,) = [e for e in a.edges if e.src == "in_x"]
        assert e.sample_delay == 3
        stim = Trace({"x": list(range(8))})
        assert simulate_behavioral(a, stim) == simulate_behavioral(g, stim)

    def test_scc(self):
        g = random_fixed_graph(11, 17)
        comp = scc_ids(g)
        _, broken, _ = break_loops(g)
        assert broken
        for i in broken:
            e = g.edges[i]
            assert e.sample_delay > 0 and comp[e.src] == comp[e.dst]

    def test_combinational_loop_rejected(self):
        b = GraphBuilder("loop")
        x = b.input("x", S16)
        a = b.op("add", S16, x, x, name="a")
        b.g.edges = [e for e in b.g.edges if not (e.dst == "a" and e.port == 1)]
        b.g.connect("a", "a", 1, 0)
        b.output("y", a)
        with pytest.raises(ValueError, match="combinational loop"):
            break_loops(b.build())


class TestRegisterInsertion:
    @pytest.mark.parametrize("period", [2.5, 4.0])
    def test_paths_within_period(self, corpus, period):
        clk = ClockSpec(period)
        for g in corpus:
            marked = greedy_insert(g, clk, M)
            assert longest_register_free_path(marked, M.delays(marked)) <= period + 1e-9
            phys, s = pipeline(g, clk, M)
            assert longest_register_free_path(phys, M.delays(phys)) <= period + 1e-9
            assert combinational_delay(phys, M) <= period + 1e-9

    def test_equivalence_modulo_latency(self, corpus):
        for g in corpus:
            for strategy in ("subcycle", "threshold"):
                phys, s = pipeline(g, ClockSpec(2.5), M, strategy)
                assert phys.attrs["latency"] == s.latency
                assert equivalent_modulo_latency(g, phys, s.latency)

    def test_threshold_paths(self, corpus):
        for g in corpus:
            phys, _ = pipeline(g, ClockSpec(3.0), M, "threshold")
            assert combinational_delay(phys, M) <= 3.0 + 1e-9

    def test_node_slower_than_period(self):
        with pytest.raises(InfeasiblePeriod, match="needs"):
            greedy_insert(example("dot16_ieee"), ClockSpec(0.5), M)

    def test_loop_bound_exceeded(self):
        b = GraphBuilder("tight")
        t = FloatT(F16)
        x = b.input("x", t)
        a1 = b.op("add", t, x, x, name="a1")
        a2 = b.op("add", t, a1, x)
        a3 = b.op("add", t, a2, x)
        b.g.edges = [e for e in b.g.edges if not (e.dst == "a1" and e.port == 1)]
        b.g.connect(a3, "a1", 1, 1)
        b.output("y", a3)
        with pytest.raises(SchedulingError):
            pipeline(b.build(), ClockSpec(2.5), M)
        phys, s = pipeline(b.build(), ClockSpec(5.0), M)
        assert equivalent_modulo_latency(b.build(), phys, s.latency)

    def test_unknown_strategy(self):
        with pytest.raises(ValueError):
            pipeline(example("fir8"), ClockSpec(2.0), M, "magic")

    def test_counter_phase_is_kept(self):
        g = example("inverter")
        phys, s = pipeline(g, ClockSpec(1.0), M)
        assert s.latency > 0
        assert equivalent_modulo_latency(g, phys, s.latency)


class TestSchedule:
    def test_outputs_aligned(self):
        g = greedy_insert(example("nr_rsqrt"), ClockSpec(2.5), M)
        s = schedule(g)
        outs = {s.times[n.id] for n in g.nodes.values() if n.kind == "output"}
        assert outs == {s.latency}
        assert all(d >= 0 for d in s.depths)

    def test_register_bits_counts_shared_taps(self):
        b = GraphBuilder("fan")
        x = b.input("x", S16)
        b.output("y", b.op("add", S16, (x, 2), (x, 3)))
        s = schedule(b.build())
        assert s.register_bits == 3 * 16

    def test_negative_depth_rejected(self):
        g = example("fir8")
        times = {nid: 0 for nid in g.nodes}
        times["in_x"] = 5
        with pytest.raises(SchedulingError):
            apply_schedule(g, times)

    def test_fused_dot_shorter(self):
        clk = ClockSpec(2.5)
        _, fused = pipeline(example("dot16_fused"), clk, M)
        _, ieee = pipeline(example("dot16_ieee"), clk, M)
        _, rewritten = pipeline(fuse_float_ops(example("dot16_ieee")), clk, M)
        assert fused.latency < ieee.latency
        assert rewritten.latency == fused.latency


class TestRetiming:
    def test_matches_brute_force(self):
        for g in retiming_corpus(12):
            period, ret = min_period(g, M)
            want, _ = brute_min_period(g, M.delays(g))
            assert period == pytest.approx(want, abs=1e-9)
            assert all(w >= 0 for w in retimed_weights(g, ret.r))
            retimed = apply_retiming(g, ret)
            assert combinational_delay(retimed, M) <= period + 1e-9

    def test_retimed_graph_equivalent(self):
        for g in retiming_corpus(10):
            _, ret = min_period(g, M)
            assert equivalent_modulo_latency(g, apply_retiming(g, ret), 0, n=60)

    def test_infeasible_period_reports_cycle(self):
        g = retiming_corpus(1)[0]
        ret = retime(g, ClockSpec(1e-3), M)
        assert not ret.feasible and ret.evidence
        with pytest.raises(ValueError):
            apply_retiming(g, ret)

    def test_pipelined_graph_retimes(self):
        phys, _ = pipeline(example("fir8"), ClockSpec(0.8), M)
        period, ret = min_period(phys, M)
        assert period <= combinational_delay(phys, M) + 1e-9


class TestStrategies:
    def test_subcycle_not_worse(self, corpus):
        report = compare_strategies(corpus, ClockSpec(2.5), M)
        rows = report["designs"]
        assert sum(r["subcycle"] <= r["threshold"] for r in rows) >= 0.95 * len(rows)
        assert report["total"]["subcycle"] < report["total"]["threshold"]
        assert sum(report["histogram"]["subcycle"].values()) == len(rows)
