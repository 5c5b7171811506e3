"""Command line interface: solve, diagnose, bench."""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from . import blocks, evalkit, lm, spectral
from .bal_io import parse_bal, perturb, write_summary, write_trace

log = logging.getLogger(__name__)


def _figure_path(csv_path) -> Path:
    return Path(csv_path).with_suffix(".png")


def _ensure_parent(path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)


def _cmd_solve(args) -> int:
    problem = parse_bal(args.input)
    if args.sigma > 0:
        problem = perturb(problem, args.sigma, args.seed)
    config = lm.LmConfig(
        solver=args.solver,
        precision=args.precision,
        epsilon=args.epsilon,
        max_order=args.max_order,
        max_cluster_size=args.max_cluster_size,
    )
    trace = lm.run(problem, config, args.seed)
    print(f"{trace.problem}: solver={args.solver} final_cost={trace.final_cost:.6e} "
          f"iterations={trace.iterations[-1].iteration} time={trace.total_time_s:.3f}s")
    if args.trace_out:
        _ensure_parent(args.trace_out)
        write_trace(trace.to_records(), args.trace_out)
        log.info("wrote %s", args.trace_out)
        if not args.no_figures:
            from . import figures
            figures.render_convergence(trace.to_records(), _figure_path(args.trace_out),
                                       title=f"{trace.problem} / {args.solver}")
    if args.summary_out:
        _ensure_parent(args.summary_out)
        write_summary(args.summary_out, problem=trace.problem, solver=args.solver,
                      final_cost=trace.final_cost, total_time_s=trace.total_time_s,
                      peak_bytes=trace.peak_bytes)
        log.info("wrote %s", args.summary_out)
    return 0


def _cmd_diagnose(args) -> int:
    problem = parse_bal(args.input)
    system = blocks.assemble(problem, lam=args.initial_lambda)
    report = spectral.verify_error_bound(system, range(args.max_order + 1))
    print(f"{problem.name}: spectral radius {report.rho:.9f}, "
          f"bound verified for orders 0..{args.max_order}")
    _ensure_parent(args.report_out)
    with open(args.report_out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["m", "bound", "measured_error"])
        for m, b, e in zip(report.orders, report.bound, report.measured_error):
            w.writerow([int(m), repr(float(b)), repr(float(e))])
    log.info("wrote %s", args.report_out)
    if not args.no_figures:
        from . import figures
        figures.render_bound_curve(report, _figure_path(args.report_out),
                                   title=f"{problem.name}: truncation error vs bound")
    return 0


def _cmd_bench(args) -> int:
    problem_dir = Path(args.problems)
    paths = sorted(problem_dir.glob("*.txt")) + sorted(problem_dir.glob("*.bal"))
    if not paths:
        print(f"no .txt or .bal problems under {problem_dir}", file=sys.stderr)
        return 2
    problems = [(p.stem, parse_bal(p)) for p in paths]
    solvers = [s.strip() for s in args.solvers.split(",") if s.strip()]
    taus = [float(t) for t in args.tau.split(",") if t.strip()]

    records, traces = evalkit.run_benchmark(
        problems, solvers, sigma=args.sigma, seed=args.seed, parallel=args.parallel)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "runs.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["problem", "solver", "f0", "final_cost", "total_time_s", "peak_bytes"])
        for r in records:
            w.writerow([r.problem, r.solver, repr(r.f0), repr(float(r.costs[-1])),
                        repr(float(r.times[-1])), r.peak_bytes])

    for tau in taus:
        curves = evalkit.performance_profile(records, tau)
        csv_path = out / f"profile_tau_{tau:g}.csv"
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["alpha", "solver", "rho_percent"])
            for curve in curves:
                for a, rho in zip(curve.alphas, curve.rho_percent):
                    w.writerow([repr(float(a)), curve.solver, repr(float(rho))])
        log.info("wrote %s", csv_path)
        if not args.no_figures:
            from . import figures
            figures.render_profile(curves, tau, _figure_path(csv_path))

    rows = evalkit.solved_percentages(records, taus)
    with open(out / "solved_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(rows[0].keys())
        for row in rows:
            w.writerow(row.values())
    print(f"bench: {len(records)} runs over {len(problems)} problems, results in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="powerba",
                                 description="Bundle adjustment with a power-series "
                                             "inverse of the Schur complement.")
    ap.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("solve", help="optimize one BAL problem")
    sp.add_argument("--input", required=True, help="BAL problem file")
    sp.add_argument("--solver", default="poba", choices=lm.SOLVER_IDS)
    sp.add_argument("--precision", type=int, default=64, choices=(32, 64),
                    help="landmark block storage precision")
    sp.add_argument("--epsilon", type=float, default=0.01,
                    help="series stop-criterion tolerance")
    sp.add_argument("--max-order", type=int, default=20,
                    help="series truncation order; for pcg-power, the fixed "
                         "preconditioner order")
    sp.add_argument("--sigma", type=float, default=0.0,
                    help="Gaussian noise on translations and points before solving")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--max-cluster-size", type=int, default=100,
                    help="cluster size cap for --solver post")
    sp.add_argument("--trace-out", default=None, help="per-iteration trace CSV")
    sp.add_argument("--summary-out", default=None, help="run summary JSON")
    sp.add_argument("--no-figures", action="store_true")
    sp.set_defaults(func=_cmd_solve)

    dp = sub.add_parser("diagnose", help="series truncation error against its bound")
    dp.add_argument("--input", required=True, help="BAL problem file (oracle scale)")
    dp.add_argument("--max-order", type=int, default=20)
    dp.add_argument("--initial-lambda", type=float, default=1e-4)
    dp.add_argument("--report-out", required=True, help="CSV: m,bound,measured_error")
    dp.add_argument("--no-figures", action="store_true")
    dp.set_defaults(func=_cmd_diagnose)

    bp = sub.add_parser("bench", help="run solvers over a problem directory")
    bp.add_argument("--problems", required=True, help="directory of BAL files")
    bp.add_argument("--solvers", default="poba64,poba32,pcg",
                    help="comma list, e.g. poba64,poba32,pcg")
    bp.add_argument("--tau", default="0.1,0.01,0.003,0.001",
                    help="comma list of cost-threshold tolerances")
    bp.add_argument("--sigma", type=float, default=0.01)
    bp.add_argument("--seed", type=int, default=0)
    bp.add_argument("--parallel", action="store_true",
                    help="thread the runs (correctness sweeps only, timings overlap)")
    bp.add_argument("--out", required=True, help="output directory")
    bp.add_argument("--no-figures", action="store_true")
    bp.set_defaults(func=_cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.set_printoptions(precision=6, suppress=True)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
