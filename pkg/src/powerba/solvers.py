"""Baseline solvers for the reduced camera system: preconditioned CG and a
dense direct factorization for oracle-scale problems."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .blocks import DampedSystem, POSE_DIM, _ein, _spd_block_inverse
from .power_series import apply_series_inverse

log = logging.getLogger(__name__)

# dense_direct refuses anything larger than this many pose parameters
DENSE_DIM_LIMIT = 2000


@dataclass(frozen=True)
class CgReport:
    """Outcome of one conjugate-gradient solve."""

    delta_p: np.ndarray
    iterations: int
    final_relative_residual: float
    converged: bool


def pcg(system, apply_preconditioner, tol: float = 1e-6, max_iter: int = 500,
        callback=None) -> CgReport:
    """Preconditioned conjugate gradients on S dx_p = -b_tilde.

    Terminates when the preconditioned residual norm sqrt(r^T M^-1 r) drops
    below ``tol`` times its initial value, or after ``max_iter`` iterations
    (reported with ``converged=False``). ``callback(iteration, x, rel)`` is
    invoked after every iteration. A zero right-hand side returns immediately
    with zero iterations.
    """
    rhs = -system.b_tilde()
    x = np.zeros_like(rhs)
    if not np.any(rhs):
        return CgReport(x, 0, 0.0, True)
    r = rhs.copy()
    z = apply_preconditioner(r)
    rz = float(r @ z)
    assert rz > 0, "preconditioner is not positive definite"
    rz0 = rz
    p = z
    rel = 1.0
    for it in range(1, max_iter + 1):
        sp = system.apply_schur(p)
        psp = float(p @ sp)
        assert psp > 0, "reduced system is not positive definite"
        alpha = rz / psp
        x = x + alpha * p
        r = r - alpha * sp
        z = apply_preconditioner(r)
        rz_new = float(r @ z)
        rel = np.sqrt(max(rz_new, 0.0) / rz0)
        if callback is not None:
            callback(it, x, rel)
        if rel < tol:
            return CgReport(x, it, rel, True)
        p = z + (rz_new / rz) * p
        rz = rz_new
    log.warning("PCG hit max_iter=%d with relative residual %.3e", max_iter, rel)
    return CgReport(x, max_iter, rel, False)


# ---------------------------------------------------------------------------
# preconditioners
# ---------------------------------------------------------------------------


def schur_diagonal_blocks(system: DampedSystem) -> np.ndarray:
    """The 9x9 diagonal blocks of S: U_c - sum_l W_cl V_l^-1 W_cl^T.

    The sum runs over the landmarks camera c observes; W_cl is the 9x3 coupling
    block of the single observation (c, l).
    """
    M = system.U.copy()
    for grp, blk in system.store.group_views():
        jp = blk[..., 0:POSE_DIM]
        jl = blk[..., POSE_DIM:POSE_DIM + 3]
        w_obs = _ein("gkai,gkaj->gkij", jp, jl)                       # (g, k, 9, 3)
        tmp = _ein("gkij,gjl->gkil", w_obs, system.V_inv[grp.lm_ids])
        np.add.at(M, grp.cam_ids, -_ein("gkil,gkjl->gkij", tmp, w_obs))
    return M


def make_schur_jacobi_preconditioner(system: DampedSystem):
    """Block-Jacobi preconditioner built from the true diagonal of S."""
    m_inv = _spd_block_inverse(schur_diagonal_blocks(system), "Schur diagonal")

    def apply(v: np.ndarray) -> np.ndarray:
        return _ein("pij,pj->pi", m_inv, v.reshape(system.n_cameras, POSE_DIM)).ravel()

    return apply


def pcg_schur_jacobi(system: DampedSystem, tol: float = 1e-6, max_iter: int = 500,
                     callback=None) -> CgReport:
    """CG preconditioned with the exact 9x9 diagonal blocks of S."""
    return pcg(system, make_schur_jacobi_preconditioner(system), tol, max_iter, callback)


def pcg_power_series_preconditioner(system: DampedSystem, order: int,
                                    tol: float = 1e-6, max_iter: int = 500,
                                    callback=None) -> CgReport:
    """CG preconditioned with the order-m series approximation of S^-1.

    Each application costs one block-inverse multiply plus four block-operator
    passes per order, so high orders trade fewer CG iterations for more work
    per iteration. Order 0 is block-Jacobi on U.
    """
    return pcg(system, lambda v: apply_series_inverse(system, v, order),
               tol, max_iter, callback)


# ---------------------------------------------------------------------------
# dense direct
# ---------------------------------------------------------------------------


def materialize_schur(system) -> np.ndarray:
    """Form S densely by pushing basis vectors through the block operators."""
    dim = system.n_pose_params
    S = np.empty((dim, dim))
    e = np.zeros(dim)
    for j in range(dim):
        e[j] = 1.0
        S[:, j] = system.apply_schur(e)
        e[j] = 0.0
    return S


def dense_direct(system) -> np.ndarray:
    """Solve S dx_p = -b_tilde by dense Cholesky. Oracle-scale only.

    Raises ValueError above DENSE_DIM_LIMIT pose parameters or when the
    materialized S is not positive definite (which indicates an assembly bug).
    """
    dim = system.n_pose_params
    if dim > DENSE_DIM_LIMIT:
        raise ValueError(f"dense solve refused: {dim} pose parameters exceeds "
                         f"limit {DENSE_DIM_LIMIT}")
    S = materialize_schur(system)
    try:
        factor = scipy.linalg.cho_factor(S)
    except np.linalg.LinAlgError as exc:
        raise ValueError(f"materialized reduced system is not SPD: {exc}") from None
    return scipy.linalg.cho_solve(factor, -system.b_tilde())
