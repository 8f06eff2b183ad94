"""Command-line interface: simulate, compile, funcgen, check and report."""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path
from typing import Optional

import mpmath

from . import __version__
from .analysis import error_bound, estimate_resources
from .ir.graph import Graph, GraphBuilder, check
from .ir.types import FloatT
from .ir.trace import Trace
from .pipeline import ClockSpec, InfeasiblePeriod, LatencyModel

SCHEMA = "fpflow-report/1"
PASSES = ("fuse", "balance", "fma", "pipeline", "retime", "fold")
_LOGICAL = ("fuse", "balance", "fma")
TIERS = ("behavioral", "bit_accurate", "silver")

FUNCTIONS = {
    "exp": mpmath.exp,
    "log": mpmath.log,
    "rsqrt": lambda x: 1 / mpmath.sqrt(x),
    "sqrt": mpmath.sqrt,
    "recip": lambda x: 1 / x,
    "sin": mpmath.sin,
    "cos": mpmath.cos,
    "atan": mpmath.atan,
    "const": None,   # constant --value
}


class CliError(Exception):
    pass


# -- rendering ------------------------------------------------------------------------------------

def num(x) -> dict:
    """Numbers in reports: hex float (normative) plus decimal."""
    v = float(x)
    return {"hex": v.hex(), "dec": v}


def _header(args) -> dict:
    return {"schema": SCHEMA, "tool": f"fpflow {__version__}", "command": args.command,
            "seed": getattr(args, "seed", None)}


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=False) + "\n")


def _widths(g: Graph) -> dict:
    return {p.name: p.type.width for p in g.ports}


# -- project inputs -------------------------------------------------------------------------------

def _load_graph(args) -> tuple[Graph, Optional[bytes]]:
    if getattr(args, "example", None):
        from .designs import example
        return example(args.example), None
    if not args.graph:
        raise CliError("give a graph file or --example NAME")
    path = Path(args.graph)
    if not path.is_file():
        raise CliError(f"graph file not found: {path}")
    raw = path.read_bytes()
    return check(Graph.from_json(raw.decode())), raw


def _latency_model(args) -> LatencyModel:
    if getattr(args, "latency_model", None):
        path = Path(args.latency_model)
        if not path.is_file():
            raise CliError(f"latency model not found: {path}")
        return LatencyModel.from_json(path.read_text())
    return LatencyModel()


def _clock(args) -> Optional[ClockSpec]:
    if getattr(args, "period", None):
        return ClockSpec(args.period)
    if getattr(args, "fmax", None):
        return ClockSpec.from_fmax(args.fmax)
    return None


def _stimulus(args, g: Graph) -> Trace:
    if getattr(args, "stim", None):
        path = Path(args.stim)
        if not path.is_file():
            raise CliError(f"stimulus file not found: {path}")
        return Trace.from_csv(path.read_text())
    from .verify import random_stimulus
    return random_stimulus(g, args.samples, args.seed)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _summary(g: Graph, m: LatencyModel) -> dict:
    from .pipeline import combinational_delay
    try:
        eb = error_bound(g).to_dict()
    except ValueError:
        eb = None  # no floating-point signals
    return {
        "nodes": len(g.nodes),
        "node_counts": dict(sorted(g.count_kinds().items())),
        "resources": estimate_resources(g).to_dict(),
        "error_bound": eb,
        "combinational_delay_ns": num(combinational_delay(g, m)),
        "latency": g.attrs.get("latency", 0),
    }


# -- simulate ---------------------------------------------------------------------------------------

def _run_tier(g: Graph, stim: Trace, tier: str) -> tuple[Trace, Graph]:
    from .ir.sim import simulate_behavioral, simulate_bit_accurate
    if tier == "behavioral":
        return simulate_behavioral(g, stim), g
    if tier == "bit_accurate":
        from .ir.lower import lower
        return simulate_bit_accurate(lower(g), stim), g
    from .verify import silver_eval
    return silver_eval(g, stim)


def cmd_simulate(args) -> int:
    from .verify import decode_trace, error_metrics
    g, _ = _load_graph(args)
    stim = _stimulus(args, g)
    out = _out_dir(args)
    tr, tg = _run_tier(g, stim, args.tier)
    (out / f"trace_{args.tier}.csv").write_text(tr.to_csv(_widths(tg)))
    report = _header(args)
    report.update({"graph": g.name, "tier": args.tier, "samples": stim.cycles})
    status = 0
    if args.reference:
        rt, rg = _run_tier(g, stim, args.reference)
        (out / f"trace_{args.reference}.csv").write_text(rt.to_csv(_widths(rg)))
        tv, rv = decode_trace(tr, tg), decode_trace(rt, rg)
        fmts = [p.type.fmt for p in g.ports if p.direction == "out" and hasattr(p.type, "fmt")
                and hasattr(p.type.fmt, "w_e")]
        flat_t = [v for k in sorted(tv) for v in tv[k]]
        flat_r = [v for k in sorted(rv) for v in rv[k]]
        met = error_metrics(flat_t, flat_r, fmts[0] if fmts else None)
        bit_exact = "silver" not in (args.tier, args.reference)
        mism = sum(1 for k in tr.ports for a, b in zip(tr[k], rt[k]) if a != b) if bit_exact else None
        report["reference"] = args.reference
        report["metrics"] = {
            "rms_rel": num(met.rms_rel), "max_rel": num(met.max_rel), "min_rel": num(met.min_rel),
            "max_ulp": num(met.max_ulp), "count": met.count,
            "mismatches": mism if bit_exact else met.mismatches,
        }
        if bit_exact and mism:
            status = 1
        if args.max_ulp is not None and met.max_ulp > args.max_ulp:
            status = 1
    _write_json(out / "report.json", report)
    print(json.dumps(report.get("metrics", {"samples": stim.cycles}), indent=1))
    return status


# -- compile ----------------------------------------------------------------------------------------

def check_pass_order(passes: list) -> None:
    """Refuse illegal pass orders with an explanation."""
    seen = []
    for p in passes:
        if p not in PASSES:
            raise CliError(f"unknown pass {p!r}; known passes: {', '.join(PASSES)}")
        if p in seen:
            raise CliError(f"pass {p!r} given twice")
        if p in _LOGICAL and "pipeline" in seen:
            raise CliError(f"{p} rewrites the logical graph and must run before pipeline")
        if p in ("retime", "fold") and "pipeline" not in seen:
            raise CliError(f"{p} needs a pipelined graph: put pipeline before it")
        if "fold" in seen:
            raise CliError("fold must be the last pass")
        seen.append(p)


def cmd_compile(args) -> int:
    from .ir.passes import balance_adder_tree, fuse_float_ops, fuse_mul_add
    from .pipeline import apply_retiming, pipeline, retime
    passes = [p for p in (args.passes or "").split(",") if p]
    check_pass_order(passes)
    g, raw = _load_graph(args)
    m = _latency_model(args)
    clk = _clock(args)
    if any(p in ("pipeline", "retime") for p in passes) and clk is None:
        raise CliError("pipeline and retime need --period or --fmax")
    out = _out_dir(args)
    report = _header(args)
    report.update({"graph": g.name, "passes": passes, "before": _summary(g, m)})
    if clk:
        report["target_period_ns"] = num(clk.period)
    fold_factor = 1
    cur = g
    for p in passes:
        if p == "fuse":
            cur = fuse_float_ops(cur)
        elif p == "balance":
            cur = balance_adder_tree(cur)
        elif p == "fma":
            cur = fuse_mul_add(cur)
        elif p == "pipeline":
            try:
                cur, sched = pipeline(cur, clk, m, args.strategy)
            except InfeasiblePeriod as e:
                raise CliError(f"pipeline infeasible: {e}") from None
            report["pipeline"] = {"strategy": args.strategy, "latency": sched.latency,
                                  "register_bits": sched.register_bits}
        elif p == "retime":
            ret = retime(cur, clk, m)
            if not ret.feasible:
                raise CliError("retiming infeasible at the requested period")
            cur = apply_retiming(cur, ret)
            report["retime"] = {"achieved_period_ns": num(ret.achieved_period)}
        elif p == "fold":
            cur, fold_factor = _fold_pass(cur, args, out, report)
    if passes:
        (out / "graph.json").write_text(cur.to_json())
    else:
        (out / "graph.json").write_bytes(raw if raw is not None else g.to_json().encode())
    from .pipeline import combinational_delay
    after = _summary(cur, m)
    after["achieved_period_ns"] = num(combinational_delay(cur, m))
    after["register_bits"] = _register_bits(cur)
    report["after"] = after
    status = 0
    if args.testbench:
        from .verify import gen_testbench, random_stimulus
        stim = random_stimulus(g, args.testbench, args.seed)
        manifest = gen_testbench(cur, stim, out / "testbench", fold=fold_factor)
        report["testbench"] = str(manifest.relative_to(out))
        if args.verify:
            status = _verify_against_flat(g, cur, stim, fold_factor, passes, report)
    report.pop("_program", None)
    _write_json(out / "report.json", report)
    print(json.dumps({"passes": passes, "achieved_period_ns": after["achieved_period_ns"]["dec"],
                      "latency": after["latency"], "register_bits": after["register_bits"],
                      "verify": report.get("verify")}))
    return status


def _register_bits(g: Graph) -> int:
    deepest: dict = {}
    for e in g.edges:
        deepest[e.src] = max(deepest.get(e.src, 0), e.sample_delay + e.regs)
    return sum(g.nodes[u].out.width * d for u, d in deepest.items())


def _fold_pass(g: Graph, args, out: Path, report: dict):
    from .folding import FoldConfig, alu_fold, tdm_fold
    cfg = FoldConfig(f=args.fold, mode=args.fold_mode, seed=args.seed)
    mode = cfg.resolved_mode()
    if mode == "alu":
        prog = alu_fold(g, cfg)
        (out / "alu_program.json").write_text(prog.to_json())
        report["fold"] = {"mode": "alu", "f": cfg.f, "length": prog.length,
                          "units": prog.units, "registers": prog.n_registers}
        report["_program"] = prog
        return g, 1
    gf, a = tdm_fold(g, cfg)
    report["fold"] = {"mode": "tdm", "f": cfg.f, **a.to_dict()}
    return gf, cfg.f


def _verify_against_flat(g, cur, stim, f, passes, report) -> int:
    """Bit-exact check of the final design against the input design (modulo latency)."""
    from .ir.sim import simulate_behavioral
    if any(p in _LOGICAL for p in passes):
        report["verify"] = "skipped: numeric rewrites change results"
        return 0
    ref = simulate_behavioral(g, stim)
    prog = report.pop("_program", None)
    if prog is not None:
        from .folding import run_alu_program, validate_program
        samples = [{k: stim[k][i] for k in stim.ports} for i in range(stim.cycles)]
        res = run_alu_program(prog, samples)
        phys = simulate_behavioral(cur, stim)
        ok = not validate_program(prog) and all(
            [r[k] for r in res] == phys[k] for k in phys.ports)
        report["verify"] = "pass" if ok else "fail"
        return 0 if ok else 1
    if f > 1:
        from .folding import simulate_folded
        got = simulate_folded(cur, stim, f)
    else:
        got = simulate_behavioral(cur, stim)
    lat = cur.attrs.get("latency", 0) - g.attrs.get("latency", 0)
    n = stim.cycles - lat
    ok = all(got[k][lat:] == ref[k][:n] for k in ref.ports)
    report["verify"] = "pass" if ok else "fail"
    return 0 if ok else 1


# -- funcgen ----------------------------------------------------------------------------------------

def cmd_funcgen(args) -> int:
    from .funcgen import (SUPPORTED, FuncGenError, PolySpec, approximate, build_float_function,
                          build_horner_graph, generate_poly_table)
    from .softfloat import parse_fixed, parse_format
    from .verify import gen_testbench, random_stimulus
    out = _out_dir(args)
    report = _header(args)
    report["function"] = args.function
    if args.format:
        if args.function not in SUPPORTED:
            raise CliError(f"unknown float function {args.function!r}; supported: {', '.join(SUPPORTED)}")
        fmt = parse_format(args.format)
        b = GraphBuilder(f"{args.function}_{fmt.name}")
        b.output("y", b.op("func", FloatT(fmt), b.input("x", FloatT(fmt)), fn=args.function))
        g = check(b.build())
        (out / "graph_expanded.json").write_text(build_float_function(args.function, fmt).to_json())
        report["format"] = fmt.name
    else:
        if args.function not in FUNCTIONS:
            raise CliError(f"unknown function {args.function!r}; supported: {', '.join(FUNCTIONS)}")
        fn = FUNCTIONS[args.function]
        if fn is None:
            value = mpmath.mpf(args.value)
            fn = lambda x: value  # noqa: E731
        target = Fraction(args.target) if args.target else None
        spec = PolySpec(Fraction(args.a), Fraction(args.b), args.degree, args.k,
                        parse_fixed(args.in_fmt), parse_fixed(args.out_fmt), target)
        try:
            if args.no_retry:
                table = approximate(fn, spec, seed=args.seed)
                if not spec.within_target(table.measured_error):
                    raise FuncGenError(f"k={spec.k} misses the target: error {float(table.measured_error):.3g}")
            else:
                table = generate_poly_table(fn, spec, seed=args.seed)
        except FuncGenError as e:
            raise CliError(str(e)) from None
        (out / "table.json").write_text(table.to_json())
        g = build_horner_graph(table, name=f"{args.function}_d{args.degree}")
        report.update({
            "spec": spec.to_dict(), "k": table.spec.k, "rows": len(table.rows),
            "rom_bits": table.rom_bits, "measured_error_ulp": num(table.measured_error / spec.ulp),
            "validated": table.validated,
        })
    (out / "graph.json").write_text(g.to_json())
    port = next(p for p in g.ports if p.direction == "in")
    if port.type.width <= 16:
        stim = Trace({port.name: list(range(1 << port.type.width))})
    else:
        stim = random_stimulus(g, args.samples, args.seed)
    manifest = gen_testbench(g, stim, out / "testbench")
    report["testbench"] = str(manifest.relative_to(out))
    _write_json(out / "report.json", report)
    print(json.dumps({k: v for k, v in report.items() if k not in ("schema", "tool")}, indent=1))
    return 0


# -- check / report -----------------------------------------------------------------------------------

def cmd_check(args) -> int:
    from .verify import check_testbench
    path = Path(args.manifest)
    if not path.is_file():
        raise CliError(f"manifest not found: {path}")
    mism = check_testbench(path)
    if not mism:
        print("PASS")
        return 0
    print(f"FAIL: {len(mism)} mismatches")
    for m in mism[:args.limit]:
        print(f"  {m}")
    return 1


def cmd_report(args) -> int:
    g, _ = _load_graph(args)
    m = _latency_model(args)
    report = _header(args)
    report["graph"] = g.name
    report.update(_summary(g, m))
    if args.min_period:
        from .pipeline import min_period
        period, ret = min_period(g, m)
        report["min_period_ns"] = num(period)
    text = json.dumps(report, indent=1) + "\n"
    if args.out:
        out = _out_dir(args)
        (out / "report.json").write_text(text)
    print(text, end="")
    return 0


# -- argument parsing ---------------------------------------------------------------------------------

def _graph_args(p):
    p.add_argument("graph", nargs="?", help="graph JSON file")
    p.add_argument("--example", help="use a built-in example design instead of a file")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fpflow", description=__doc__)
    ap.add_argument("--version", action="version", version=f"fpflow {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate a design on one tier (optionally against another)")
    _graph_args(p)
    p.add_argument("--tier", choices=TIERS, default="behavioral")
    p.add_argument("--reference", choices=TIERS)
    p.add_argument("--stim", help="stimulus CSV (hex words per port)")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--max-ulp", type=float, help="fail if the reference comparison exceeds this")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", default="fpflow_out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compile", help="apply transformation passes in order")
    _graph_args(p)
    p.add_argument("--passes", default="", help=f"comma-separated, from {', '.join(PASSES)}")
    p.add_argument("--period", type=float, help="target clock period (ns)")
    p.add_argument("--fmax", type=float, help="target clock frequency (MHz)")
    p.add_argument("--strategy", choices=("subcycle", "threshold"), default="subcycle")
    p.add_argument("--latency-model", help="latency model JSON")
    p.add_argument("--fold", type=int, default=1, help="folding factor f")
    p.add_argument("--fold-mode", choices=("tdm", "alu", "auto"), default="auto")
    p.add_argument("--testbench", type=int, default=0, metavar="N",
                   help="write a testbench with N random samples")
    p.add_argument("--verify", action="store_true", help="check the result against the input design")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", default="fpflow_out")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("funcgen", help="generate a function-evaluation table and datapath")
    p.add_argument("function")
    p.add_argument("--format", help="floating-point format: build the full float function")
    p.add_argument("--in-fmt", default="u10.10")
    p.add_argument("--out-fmt", default="u12.10")
    p.add_argument("--a", default="0")
    p.add_argument("--b", default="1")
    p.add_argument("--degree", type=int, default=2)
    p.add_argument("--k", type=int, default=0, help="initial log2 of the subinterval count")
    p.add_argument("--target", help="absolute error target (default: below one output ulp)")
    p.add_argument("--value", default="0.5", help="value for the const function")
    p.add_argument("--no-retry", action="store_true", help="fail instead of increasing k")
    p.add_argument("--samples", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", default="fpflow_out")
    p.set_defaults(func=cmd_funcgen)

    p = sub.add_parser("check", help="replay a testbench on the bit-accurate simulator")
    p.add_argument("manifest")
    p.add_argument("--limit", type=int, default=20)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("report", help="resource, timing and error-bound summary")
    _graph_args(p)
    p.add_argument("--latency-model")
    p.add_argument("--min-period", action="store_true", help="also compute the minimum retimed period")
    p.add_argument("-o", "--out")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ValueError, KeyError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
