"""Benchmark harness: cost thresholds, Dolan-More style performance profiles
and memory accounting for comparing solver configurations.

For a problem p with initial cost f0(p) and best known final cost f*(p), the
tau-threshold is f_tau(p) = f*(p) + tau (f0(p) - f*(p)). T_tau(p, s) is the
first trace time at which solver s reaches cost <= f_tau(p) (a step function
over the trace, no interpolation; infinity if never). The profile value
rho(s, alpha) is the percentage of problems with T_tau(p, s) <= alpha * best
time over all solvers.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import lm
from .bal_io import BalProblem, perturb
from .blocks import memory_account  # noqa: F401  (accounting lives with the blocks)

log = logging.getLogger(__name__)

DEFAULT_TAUS = (0.1, 0.01, 0.003, 0.001)
DEFAULT_ALPHAS = np.geomspace(1.0, 32.0, 49)
SUMMARY_ALPHAS = (1.0, 3.0, np.inf)


@dataclass(frozen=True)
class RunRecord:
    """One solver run reduced to what the profiles need."""

    problem: str
    solver: str
    f0: float
    times: np.ndarray
    costs: np.ndarray
    peak_bytes: int

    def __post_init__(self) -> None:
        if len(self.times) != len(self.costs) or len(self.times) == 0:
            raise ValueError("times and costs must be equal-length, non-empty")
        if np.any(np.diff(self.times) < 0):
            raise ValueError("trace times must be non-decreasing")
        if self.f0 != self.costs[0]:
            raise ValueError("f0 must equal the first trace cost")

    @classmethod
    def from_trace(cls, trace: lm.SolverTrace, label: str | None = None) -> "RunRecord":
        times = np.array([it.cumulative_time_s for it in trace.iterations])
        costs = np.array([it.cost for it in trace.iterations])
        return cls(trace.problem, label or trace.solver, float(costs[0]),
                   times, costs, trace.peak_bytes)


@dataclass(frozen=True)
class ProfileCurve:
    """rho(s, alpha) for one solver; rho_percent is non-decreasing and <= 100."""

    solver: str
    alphas: np.ndarray
    rho_percent: np.ndarray


def cost_threshold(records: list[RunRecord], tau: float) -> dict[str, float]:
    """Per-problem threshold f* + tau (f0 - f*), with f* the best final cost.

    All runs of one problem must agree on f0 exactly; a mismatch means the
    harness compared runs from different initial states.
    """
    if not 0 < tau <= 1:
        raise ValueError("tau must be in (0, 1]")
    thresholds: dict[str, float] = {}
    for prob in sorted({r.problem for r in records}):
        runs = [r for r in records if r.problem == prob]
        f0s = {r.f0 for r in runs}
        if len(f0s) != 1:
            raise ValueError(f"inconsistent f0 across runs of {prob!r}: {sorted(f0s)}")
        f0 = f0s.pop()
        f_star = min(float(r.costs[-1]) for r in runs)
        thresholds[prob] = f_star + tau * (f0 - f_star)
    return thresholds


def time_to_threshold(record: RunRecord, threshold: float) -> float:
    """First trace time with cost <= threshold; inf when the run never gets there."""
    hits = np.flatnonzero(record.costs <= threshold)
    return float(record.times[hits[0]]) if hits.size else np.inf


def performance_profile(records: list[RunRecord], tau: float,
                        alphas: np.ndarray | None = None) -> list[ProfileCurve]:
    """Profile curves for every solver present in ``records``."""
    alphas = DEFAULT_ALPHAS if alphas is None else np.asarray(alphas, dtype=np.float64)
    if alphas.size == 0 or alphas.min() < 1:
        raise ValueError("alphas must be >= 1")
    thresholds = cost_threshold(records, tau)
    problems = sorted(thresholds)
    solvers = list(dict.fromkeys(r.solver for r in records))

    T = np.full((len(problems), len(solvers)), np.inf)
    for r in records:
        i, j = problems.index(r.problem), solvers.index(r.solver)
        if np.isfinite(T[i, j]):
            raise ValueError(f"duplicate run for ({r.problem!r}, {r.solver!r})")
        T[i, j] = time_to_threshold(r, thresholds[r.problem])
    best = T.min(axis=1)

    curves = []
    for j, solver in enumerate(solvers):
        rho = np.array([
            100.0 * np.count_nonzero(np.isfinite(T[:, j]) & (T[:, j] <= a * best))
            / len(problems)
            for a in alphas
        ])
        curves.append(ProfileCurve(solver, alphas, rho))
    return curves


def solved_percentages(records: list[RunRecord], taus=DEFAULT_TAUS,
                       alphas=SUMMARY_ALPHAS) -> list[dict]:
    """Summary rows: percentage of problems solved within alpha x best time.

    One row per (tau, solver); the alpha = inf column counts every problem the
    solver reaches the threshold on at all.
    """
    rows = []
    for tau in taus:
        finite = [a for a in alphas if np.isfinite(a)]
        curves = performance_profile(records, tau, np.asarray(finite))
        thresholds = cost_threshold(records, tau)
        problems = sorted(thresholds)
        for curve in curves:
            row = {"tau": tau, "solver": curve.solver}
            for a, pct in zip(finite, curve.rho_percent):
                row[f"alpha_{a:g}"] = pct
            if any(np.isinf(a) for a in alphas):
                solved = sum(
                    np.isfinite(time_to_threshold(r, thresholds[r.problem]))
                    for r in records if r.solver == curve.solver)
                row["alpha_inf"] = 100.0 * solved / len(problems)
            rows.append(row)
    return rows


# ---------------------------------------------------------------------------
# batch runner
# ---------------------------------------------------------------------------


def parse_solver_spec(spec: str) -> tuple[str, int]:
    """Split a bench solver token like ``poba32`` into (solver id, precision)."""
    for suffix, precision in (("64", 64), ("32", 32)):
        if spec.endswith(suffix) and spec[:-2] in lm.SOLVER_IDS:
            return spec[:-2], precision
    if spec in lm.SOLVER_IDS:
        return spec, 64
    raise ValueError(f"unknown solver spec {spec!r}")


def run_benchmark(problems: list[tuple[str, BalProblem]], solver_specs: list[str],
                  base_config: lm.LmConfig | None = None, sigma: float = 0.01,
                  seed: int = 0, parallel: bool = False
                  ) -> tuple[list[RunRecord], list[lm.SolverTrace]]:
    """Run every solver spec on every problem from the same perturbed start.

    Each problem is perturbed once (so all solvers share f0) and every
    (problem, solver) pair is optimized with the base configuration. With
    ``parallel=True`` runs execute in a thread pool; timings then overlap, so
    use that mode for correctness sweeps only.
    """
    base = base_config or lm.LmConfig()
    jobs = []
    for name, problem in problems:
        perturbed = perturb(problem, sigma, seed)
        perturbed.name = name
        for spec in solver_specs:
            solver, precision = parse_solver_spec(spec)
            cfg = replace(base, solver=solver, precision=precision)
            jobs.append((name, perturbed, spec, cfg))

    def one(job) -> tuple[RunRecord, lm.SolverTrace]:
        name, perturbed, spec, cfg = job
        log.info("bench: %s / %s", name, spec)
        trace = lm.run(perturbed, cfg, seed)
        return RunRecord.from_trace(trace, label=spec), trace

    if parallel:
        with ThreadPoolExecutor() as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(j) for j in jobs]
    records = [r for r, _ in results]
    traces = [t for _, t in results]
    return records, traces
