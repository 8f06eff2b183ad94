import json

import pytest

from fpflow.cli import check_pass_order, CliError, main
from fpflow.designs import example


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


class TestSimulate:
    def test_against_reference(self, tmp_path, capsys):
        code, out, _ = run(capsys, "simulate", "--example", "fir8", "--tier", "bit_accurate",
                           "--reference", "behavioral", "--samples", 30, "-o", tmp_path)
        assert code == 0
        assert json.loads(out)["mismatches"] == 0
        assert (tmp_path / "trace_bit_accurate.csv").is_file()
        assert (tmp_path / "trace_behavioral.csv").is_file()
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["schema"] == "fpflow-report/1" and rep["samples"] == 30

    def test_silver_with_ulp_limit(self, tmp_path, capsys):
        code, out, _ = run(capsys, "simulate", "--example", "dot16_fused", "--reference", "silver",
                           "--samples", 10, "--max-ulp", 1e9, "-o", tmp_path)
        assert code == 0
        assert json.loads(out)["count"] == 10

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(capsys, "simulate", tmp_path / "nope.json", "-o", tmp_path)
        assert code == 2 and "not found" in err

    def test_stimulus_file(self, tmp_path, capsys):
        from fpflow.verify import random_stimulus
        g = example("fir8")
        (tmp_path / "g.json").write_text(g.to_json())
        (tmp_path / "s.csv").write_text(random_stimulus(g, 7, seed=1).to_csv({"x": 16}))
        code, out, _ = run(capsys, "simulate", tmp_path / "g.json", "--stim", tmp_path / "s.csv",
                           "-o", tmp_path / "o")
        assert code == 0 and json.loads(out) == {"samples": 7}


class TestCompile:
    def test_no_passes_is_byte_identical(self, tmp_path, capsys):
        src = tmp_path / "g.json"
        src.write_text(example("nr_rsqrt").to_json())
        code, out, _ = run(capsys, "compile", src, "--passes", "", "-o", tmp_path / "o")
        assert code == 0
        assert (tmp_path / "o" / "graph.json").read_bytes() == src.read_bytes()
        assert json.loads(out)["passes"] == []

    def test_pipeline_meets_period(self, tmp_path, capsys):
        code, out, _ = run(capsys, "compile", "--example", "nr_rsqrt", "--passes", "pipeline",
                           "--period", 2.5, "--testbench", 40, "--verify", "-o", tmp_path)
        assert code == 0
        s = json.loads(out)
        assert s["achieved_period_ns"] <= 2.5 and s["latency"] > 0 and s["verify"] == "pass"
        assert main(["check", str(tmp_path / "testbench" / "manifest.json")]) == 0

    def test_pipeline_fold_verify(self, tmp_path, capsys):
        code, out, _ = run(capsys, "compile", "--example", "nr_rsqrt", "--passes", "pipeline,fold",
                           "--period", 3.0, "--fold", 20, "--testbench", 60, "--verify", "-o", tmp_path)
        assert code == 0 and json.loads(out)["verify"] == "pass"
        rep = json.loads((tmp_path / "report.json").read_text())
        assert rep["fold"]["mode"] == "tdm" and rep["fold"]["f"] == 20

    def test_alu_fold(self, tmp_path, capsys):
        code, out, _ = run(capsys, "compile", "--example", "inverter", "--passes", "pipeline,fold",
                           "--period", 2.5, "--fold", 128, "--testbench", 20, "--verify", "-o", tmp_path)
        assert code == 0 and json.loads(out)["verify"] == "pass"
        assert json.loads((tmp_path / "alu_program.json").read_text())["f"] == 128

    def test_infeasible_period_names_node(self, tmp_path, capsys):
        code, _, err = run(capsys, "compile", "--example", "dot16_ieee", "--passes", "pipeline",
                           "--period", 0.3, "-o", tmp_path)
        assert code == 2 and "infeasible" in err and "needs" in err

    def test_fold_before_pipeline_refused(self, tmp_path, capsys):
        code, _, err = run(capsys, "compile", "--example", "fir8", "--passes", "fold,pipeline",
                           "--period", 2.5, "--fold", 2, "-o", tmp_path)
        assert code == 2 and "pipeline before" in err

    def test_pipeline_needs_clock(self, tmp_path, capsys):
        code, _, err = run(capsys, "compile", "--example", "fir8", "--passes", "pipeline", "-o", tmp_path)
        assert code == 2 and "--period" in err

    @pytest.mark.parametrize("passes,msg", [(["magic"], "unknown pass"), (["fuse", "fuse"], "twice"),
                                            (["pipeline", "fuse"], "before pipeline"),
                                            (["pipeline", "fold", "retime"], "last pass")])
    def test_pass_order(self, passes, msg):
        with pytest.raises(CliError, match=msg):
            check_pass_order(passes)

    def test_logical_rewrite_skips_verify(self, tmp_path, capsys):
        code, out, _ = run(capsys, "compile", "--example", "dot16_ieee", "--passes", "fuse",
                           "--testbench", 5, "--verify", "-o", tmp_path)
        assert code == 0 and json.loads(out)["verify"].startswith("skipped")


class TestFuncgen:
    def test_table_and_check(self, tmp_path, capsys):
        code, out, _ = run(capsys, "funcgen", "exp", "-o", tmp_path)
        assert code == 0
        rep = json.loads(out)
        assert rep["k"] > 0 and rep["validated"] == "exhaustive"
        assert rep["measured_error_ulp"]["dec"] < 1
        man = tmp_path / "testbench" / "manifest.json"
        assert run(capsys, "check", man)[1].strip() == "PASS"

    def test_corrupted_testbench_fails(self, tmp_path, capsys):
        run(capsys, "funcgen", "exp", "--degree", 1, "-o", tmp_path)
        path = tmp_path / "testbench" / "expected.csv"
        lines = path.read_text().splitlines()
        row = lines[10].split(",")
        row[-1] = format(int(row[-1], 16) ^ 2, "0{}x".format(len(row[-1])))
        lines[10] = ",".join(row)
        path.write_text("\n".join(lines) + "\n")
        code, out, _ = run(capsys, "check", tmp_path / "testbench" / "manifest.json")
        assert code == 1
        assert out.startswith("FAIL: 1 mismatches") and "cycle 9" in out

    def test_no_retry(self, tmp_path, capsys):
        code, _, err = run(capsys, "funcgen", "exp", "--no-retry", "-o", tmp_path)
        assert code == 2 and "misses the target" in err

    def test_float_function(self, tmp_path, capsys):
        code, out, _ = run(capsys, "funcgen", "log", "--format", "f16m10", "-o", tmp_path)
        assert code == 0 and json.loads(out)["format"] == "f16m10"
        assert (tmp_path / "graph_expanded.json").is_file()
        assert main(["check", str(tmp_path / "testbench" / "manifest.json")]) == 0

    def test_unknown_function(self, tmp_path, capsys):
        code, _, err = run(capsys, "funcgen", "tanh", "-o", tmp_path)
        assert code == 2 and "supported" in err


class TestReport:
    def test_report(self, tmp_path, capsys):
        code, out, _ = run(capsys, "report", "--example", "fir8", "--min-period", "-o", tmp_path)
        assert code == 0
        rep = json.loads(out)
        assert rep["min_period_ns"]["dec"] <= rep["combinational_delay_ns"]["dec"] + 1e-9
        assert rep["error_bound"] is None
        assert json.loads((tmp_path / "report.json").read_text()) == rep

    def test_hex_numbers(self, capsys):
        code, out, _ = run(capsys, "report", "--example", "dot16_fused")
        rep = json.loads(out)
        d = rep["combinational_delay_ns"]
        assert float.fromhex(d["hex"]) == d["dec"]
        # level0 products round once, the fused sum once more
        assert rep["error_bound"]["K"] == "2"

    def test_missing_manifest(self, tmp_path, capsys):
        code, _, err = run(capsys, "check", tmp_path / "m.json")
        assert code == 2 and "not found" in err
