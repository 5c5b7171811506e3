"""Spectral diagnostics: the spectral radius of the series iteration matrix and
the a priori truncation-error bound.

The iteration matrix P = U^-1 W V^-1 W^T is similar to the symmetric positive
semidefinite M = U^-1/2 W V^-1 W^T U^-1/2 (same spectrum, contained in [0, 1)),
so the dominant eigenvalue can be estimated by plain power iteration on M. The
truncation error of the order-m series obeys

    ||x(m) - dx_p*||  <=  rho^(m+1) / (1 - rho) * ||U^-1|| * ||b_tilde||

which :func:`verify_error_bound` checks against a dense oracle.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .blocks import DampedSystem, POSE_DIM, _ein
from .power_series import series_terms
from .solvers import materialize_schur

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SpectralRadiusEstimate:
    value: float
    iterations: int
    converged: bool


@dataclass(frozen=True)
class SpectralReport:
    """Bound-versus-measured truncation error over a range of series orders."""

    rho: float
    orders: np.ndarray
    bound: np.ndarray
    measured_error: np.ndarray
    u_inv_norm: float
    b_tilde_norm: float


def _u_inv_sqrt_blocks(system: DampedSystem) -> np.ndarray:
    """Blockwise symmetric inverse square roots of the damped camera blocks."""
    w, Q = np.linalg.eigh(system.U)
    if w.min() <= 0:
        raise ValueError("damped pose blocks must be positive definite")
    return _ein("pik,pk,pjk->pij", Q, 1.0 / np.sqrt(w), Q)


def estimate_spectral_radius(system: DampedSystem, tol: float = 1e-9,
                             max_iter: int = 10000, seed: int = 0) -> SpectralRadiusEstimate:
    """Power iteration for the dominant eigenvalue of the iteration matrix.

    Runs on the symmetrized similar operator, so the Rayleigh quotient is
    monotone and real. Converges when the relative change of the estimate
    falls below ``tol``; otherwise returns the best estimate flagged
    ``converged=False``.
    """
    u_inv_sqrt = _u_inv_sqrt_blocks(system)

    def apply_sym(v: np.ndarray) -> np.ndarray:
        y = _ein("pij,pj->pi", u_inv_sqrt, v.reshape(system.n_cameras, POSE_DIM)).ravel()
        y = system.apply_w(system.apply_v_inv(system.apply_wt(y)))
        return _ein("pij,pj->pi", u_inv_sqrt, y.reshape(system.n_cameras, POSE_DIM)).ravel()

    rng = np.random.default_rng(seed)
    v = rng.standard_normal(system.n_pose_params)
    v /= np.linalg.norm(v)
    estimate = 0.0
    for it in range(1, max_iter + 1):
        w = apply_sym(v)
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:
            # W vanishes, the operator is zero
            return SpectralRadiusEstimate(0.0, it, True)
        new_estimate = float(v @ w)
        v = w / norm_w
        if abs(new_estimate - estimate) <= tol * max(abs(new_estimate), 1e-300):
            return SpectralRadiusEstimate(new_estimate, it, True)
        estimate = new_estimate
    log.warning("power iteration did not converge in %d iterations", max_iter)
    return SpectralRadiusEstimate(estimate, max_iter, False)


def _dense_operator(apply, dim: int) -> np.ndarray:
    out = np.empty((dim, dim))
    e = np.zeros(dim)
    for j in range(dim):
        e[j] = 1.0
        out[:, j] = apply(e)
        e[j] = 0.0
    return out


def verify_error_bound(system, orders) -> SpectralReport:
    """Measure series truncation errors against a dense solve and the bound.

    Dense-checkable systems only. The spectral radius, ||U^-1|| and the exact
    pose step all come from dense factorizations, making this an independent
    check of the series recurrence. Raises AssertionError if any measured error
    exceeds its bound (beyond 1e-8 relative slack).
    """
    orders = np.asarray(sorted(int(m) for m in orders))
    if orders.size == 0 or orders.min() < 0:
        raise ValueError("orders must be non-negative")
    dim = system.n_pose_params

    S = materialize_schur(system)
    b_t = system.b_tilde()
    exact = np.linalg.solve(S, -b_t)

    def apply_p(v):
        return system.apply_u_inv(system.apply_w(system.apply_v_inv(system.apply_wt(v))))

    P = _dense_operator(apply_p, dim)
    rho = float(np.max(np.abs(np.linalg.eigvals(P))))
    if rho >= 1.0:
        raise ValueError(f"spectral radius {rho} is not below 1, system is not "
                         "a valid damped reduced system")
    u_inv_norm = float(np.linalg.norm(_dense_operator(system.apply_u_inv, dim), 2))
    b_norm = float(np.linalg.norm(b_t))
    bound = rho ** (orders + 1.0) / (1.0 - rho) * u_inv_norm * b_norm

    measured = np.empty(orders.size)
    terms = series_terms(system, -b_t)
    x = next(terms).copy()
    next_slot = 0
    for m in range(orders.max() + 1):
        if m > 0:
            x = x + next(terms)
        if next_slot < orders.size and orders[next_slot] == m:
            measured[next_slot] = np.linalg.norm(x - exact)
            next_slot += 1

    bad = measured > bound * (1.0 + 1e-8)
    assert not bad.any(), (
        f"measured series error exceeds the bound at order(s) {orders[bad].tolist()}: "
        f"{measured[bad].tolist()} > {bound[bad].tolist()}")
    return SpectralReport(rho, orders, bound, measured, u_inv_norm, b_norm)
