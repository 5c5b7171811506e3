"""Levenberg-Marquardt driver over the reduced camera system.

Each outer iteration damps the current linearization, solves for the pose step
with the configured inner solver, back-substitutes the landmark step, and
accepts or rejects by exact cost comparison. Rejected steps re-damp the cached
linearization instead of re-evaluating Jacobians.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import blocks, clustering, solvers
from .bal_io import BalProblem, TraceRecord
from .blocks import memory_account
from .camera import compose_rotations, evaluate
from .power_series import back_substitute, power_series_solve

log = logging.getLogger(__name__)

SOLVER_IDS = ("poba", "pcg", "pcg-power", "direct", "post")


@dataclass
class LmConfig:
    """Optimizer settings; defaults follow the evaluation protocol."""

    solver: str = "poba"
    precision: int = 64
    initial_lambda: float = 1e-4
    max_outer_iterations: int = 50
    relative_function_tolerance: float = 1e-6
    epsilon: float = 0.01          # series stop criterion
    max_order: int = 20            # series truncation / pcg-power preconditioner order
    cg_tolerance: float = 1e-6
    cg_max_iterations: int = 500
    lambda_decrease: float = 2.0   # divide lambda by this on accepted steps
    lambda_increase: float = 4.0   # multiply lambda by this on rejected steps
    damping: str = "marquardt"     # or "identity"
    max_cluster_size: int = 100    # for solver="post"

    def __post_init__(self) -> None:
        if self.solver not in SOLVER_IDS:
            raise ValueError(f"unknown solver {self.solver!r}, expected one of {SOLVER_IDS}")


@dataclass(frozen=True)
class BaState:
    """Optimization state: packed camera parameters and point positions."""

    camera_params: np.ndarray
    points: np.ndarray

    @classmethod
    def from_problem(cls, problem: BalProblem) -> "BaState":
        return cls(problem.camera_params.copy(), problem.points.copy())


@dataclass(frozen=True)
class LmIteration:
    """Bookkeeping for one outer iteration (0 is the initial evaluation)."""

    iteration: int
    cumulative_time_s: float
    cost: float
    lam: float
    inner_iterations: int
    order_m: int
    accepted: bool
    peak_bytes: int
    n_invalid: int = 0


@dataclass
class SolverTrace:
    """Full record of one optimizer run."""

    problem: str
    solver: str
    iterations: list[LmIteration] = field(default_factory=list)
    converged: bool = False

    @property
    def final_cost(self) -> float:
        return self.iterations[-1].cost

    @property
    def total_time_s(self) -> float:
        return self.iterations[-1].cumulative_time_s

    @property
    def peak_bytes(self) -> int:
        return max(it.peak_bytes for it in self.iterations)

    def to_records(self) -> list[TraceRecord]:
        """Project onto the trace CSV columns."""
        return [
            TraceRecord(it.iteration, it.cumulative_time_s, it.cost,
                        it.inner_iterations, it.order_m, it.peak_bytes)
            for it in self.iterations
        ]


def residual_cost(problem: BalProblem, state: BaState) -> tuple[float, int]:
    """Exact cost 0.5 sum ||r_i||^2 in double, plus the invalid-observation count."""
    total = 0.0
    n_invalid = 0
    n_obs = problem.n_observations
    for s0 in range(0, n_obs, blocks.SLAB_OBS):
        sl = slice(s0, min(n_obs, s0 + blocks.SLAB_OBS))
        res, valid = evaluate(state.camera_params[problem.cam_indices[sl]],
                              state.points[problem.pt_indices[sl]],
                              problem.pixels[sl], with_jacobians=False)
        total += 0.5 * float(np.einsum("oi,oi->", res, res))
        n_invalid += int((~valid).sum())
    return total, n_invalid


def evaluate_cost(problem: BalProblem, state: BaState | None = None) -> float:
    """Objective value at ``state`` (default: the problem's stored parameters).

    Invalid observations contribute zero.
    """
    if state is None:
        state = BaState.from_problem(problem)
    return residual_cost(problem, state)[0]


def apply_update(state: BaState, delta_p: np.ndarray, delta_l: np.ndarray) -> BaState:
    """Retract a step onto the state.

    Rotations compose on the right in the tangent the Jacobians were taken in;
    translations, intrinsics and points update additively.
    """
    n_p = state.camera_params.shape[0]
    dp = np.asarray(delta_p, dtype=np.float64).reshape(n_p, 9)
    cams = state.camera_params.copy()
    cams[:, 0:3] = compose_rotations(cams[:, 0:3], dp[:, 0:3])
    cams[:, 3:] += dp[:, 3:]
    pts = state.points + np.asarray(delta_l, dtype=np.float64).reshape(-1, 3)
    return BaState(cams, pts)


def _solve_reduced(system, config: LmConfig, partition) -> tuple[np.ndarray, int, int]:
    """Dispatch to the configured inner solver; returns (delta_p, inner, order)."""
    if config.solver == "poba":
        res = power_series_solve(system, config.epsilon, config.max_order)
        return res.delta_p, res.order_used, res.order_used
    if config.solver == "pcg":
        rep = solvers.pcg_schur_jacobi(system, config.cg_tolerance, config.cg_max_iterations)
        return rep.delta_p, rep.iterations, 0
    if config.solver == "pcg-power":
        rep = solvers.pcg_power_series_preconditioner(
            system, config.max_order, config.cg_tolerance, config.cg_max_iterations)
        return rep.delta_p, rep.iterations, config.max_order
    if config.solver == "direct":
        return solvers.dense_direct(system), 1, 0
    if config.solver == "post":
        res = clustering.solve_clustered(system, partition, config.epsilon, config.max_order)
        return res.delta_p, res.order_used, res.order_used
    raise AssertionError(config.solver)


def run(problem: BalProblem, config: LmConfig | None = None, seed: int = 0) -> SolverTrace:
    """Minimize the reprojection cost; returns the per-iteration trace.

    Stops on ``max_outer_iterations``, on a relative cost decrease below
    ``relative_function_tolerance`` over an accepted step, or on an exactly
    zero update (stationary point). ``seed`` feeds the clustering tie-breaking
    for the ``post`` solver; every other path is deterministic on its own.
    """
    config = config or LmConfig()
    t0 = time.perf_counter()
    state = BaState.from_problem(problem)
    cost, n_invalid = residual_cost(problem, state)
    if not np.isfinite(cost):
        raise ValueError("initial cost is not finite")

    partition = None
    if config.solver == "post":
        partition = clustering.cluster_cameras(problem, config.max_cluster_size, seed)

    trace = SolverTrace(problem.name or "problem", config.solver)
    lam = config.initial_lambda
    peak = 0
    trace.iterations.append(LmIteration(
        0, time.perf_counter() - t0, cost, lam, 0, 0, True, peak, n_invalid))

    lin = None
    for it in range(1, config.max_outer_iterations + 1):
        if lin is None:
            lin = blocks.linearize(problem, state, config.precision)
        system = lin.damp(lam, config.damping)
        peak = max(peak, memory_account(system))

        delta_p, inner, order = _solve_reduced(system, config, partition)
        delta_l = back_substitute(system, delta_p)

        if not delta_p.any() and not delta_l.any():
            trace.iterations.append(LmIteration(
                it, time.perf_counter() - t0, cost, lam, inner, order, True, peak,
                lin.n_invalid))
            trace.converged = True
            log.info("stationary point, zero update at iteration %d", it)
            break

        trial = apply_update(state, delta_p, delta_l)
        new_cost, trial_invalid = residual_cost(problem, trial)
        accepted = bool(new_cost < cost)
        if accepted:
            rel_decrease = (cost - new_cost) / cost if cost > 0 else 0.0
            state = trial
            cost = new_cost
            lam /= config.lambda_decrease
            lin = None
            trace.iterations.append(LmIteration(
                it, time.perf_counter() - t0, cost, lam, inner, order, True, peak,
                trial_invalid))
            if rel_decrease < config.relative_function_tolerance:
                trace.converged = True
                log.info("relative decrease %.3e below tolerance at iteration %d",
                         rel_decrease, it)
                break
        else:
            lam *= config.lambda_increase
            trace.iterations.append(LmIteration(
                it, time.perf_counter() - t0, cost, lam, inner, order, False, peak,
                trial_invalid))
    return trace
