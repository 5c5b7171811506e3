"""Truncated power-series solve of the reduced camera system.

With P = U^-1 W V^-1 W^T, the inverse Schur complement expands as
S^-1 = (I - P)^-1 U^-1 = sum_i P^i U^-1; the spectrum of P lies in [0, 1), so
the series converges. The order-m approximation applied to -b_tilde is built
from the recurrence t_0 = U^-1(-b_tilde), t_i = U^-1 W V^-1 W^T t_{i-1},
x(i) = x(i-1) + t_i, exactly four block-operator passes per order past the
zeroth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["PowerSeriesResult", "stop_criterion", "power_series_solve",
           "apply_series_inverse", "back_substitute"]


@dataclass(frozen=True)
class PowerSeriesResult:
    """Pose-space solution of one truncated-series solve."""

    delta_p: np.ndarray
    order_used: int
    converged: bool  # False when max_order ran out before the stop criterion


def stop_criterion(x_i: np.ndarray, x_prev: np.ndarray, i: int, epsilon: float) -> bool:
    """Inexactness test for the series iterate at order i >= 1.

    Stops once (i + 1) * ||x_i - x_{i-1}|| / ||x_i|| < epsilon. The growing
    factor guards against slowly decaying terms near the spectral-radius limit.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if i < 1:
        raise ValueError("the criterion compares consecutive iterates, needs i >= 1")
    norm_x = np.linalg.norm(x_i)
    if norm_x == 0.0:
        raise ValueError("vanishing iterate norm with a nonzero right-hand side")
    return bool((i + 1) * np.linalg.norm(x_i - x_prev) / norm_x < epsilon)


def series_terms(system, rhs: np.ndarray):
    """Yield t_0 = U^-1 rhs, then t_i = (U^-1 W V^-1 W^T) t_{i-1} forever."""
    t = system.apply_u_inv(rhs)
    while True:
        yield t
        t = system.apply_u_inv(system.apply_w(system.apply_v_inv(system.apply_wt(t))))


def power_series_solve(system, epsilon: float = 0.01, max_order: int = 20) -> PowerSeriesResult:
    """Solve S dx_p = -b_tilde by the truncated series.

    Accumulates partial sums until :func:`stop_criterion` fires (evaluated from
    order 1 on) or ``max_order`` is exhausted, in which case the last iterate is
    returned with ``converged=False``. A zero right-hand side short-circuits to
    the zero solution at order 0.
    """
    if max_order < 0:
        raise ValueError("max_order must be non-negative")
    b_t = system.b_tilde()
    if not np.any(b_t):
        return PowerSeriesResult(np.zeros_like(b_t), 0, True)
    terms = series_terms(system, -b_t)
    x = next(terms).copy()
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite series iterate at order 0, assembly is broken")
    for i in range(1, max_order + 1):
        x_prev = x
        x = x + next(terms)
        if not np.all(np.isfinite(x)):
            raise ValueError(f"non-finite series iterate at order {i}, assembly is broken")
        if stop_criterion(x, x_prev, i, epsilon):
            return PowerSeriesResult(x, i, True)
    return PowerSeriesResult(x, max_order, False)


def apply_series_inverse(system, v: np.ndarray, order: int) -> np.ndarray:
    """Apply the fixed order-m series approximation of S^-1 to v.

    No stop criterion; used as a preconditioner. Order 0 is exactly U^-1.
    """
    if order < 0:
        raise ValueError("order must be non-negative")
    terms = series_terms(system, v)
    x = next(terms).copy()
    for _ in range(order):
        x += next(terms)
    return x


def back_substitute(system, delta_p: np.ndarray) -> np.ndarray:
    """Recover the landmark step: dx_l = -V_l^-1 (b_l + W^T dx_p).

    Together with a pose step solving S dx_p = -b_tilde this satisfies the full
    damped normal equations.
    """
    return -system.apply_v_inv(system.b_l + system.apply_wt(delta_p))
