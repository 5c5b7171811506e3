"""Figure rendering for CLI report paths; every plot lands next to its CSV."""
from __future__ import annotations

import logging

import matplotlib

matplotlib.use("Agg")  # headless, file output only
import matplotlib.pyplot as plt  # noqa: E402

log = logging.getLogger(__name__)

_FIGSIZE = (6.4, 4.2)


def render_convergence(records, path, title: str = "") -> None:
    """Cost over wall time from trace records."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot([r.cumulative_time_s for r in records], [r.cost for r in records],
            marker=".", lw=1.2)
    ax.set_yscale("log")
    ax.set_xlabel("time [s]")
    ax.set_ylabel("cost")
    ax.set_title(title or "convergence")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    log.info("wrote %s", path)


def render_bound_curve(report, path, title: str = "") -> None:
    """Measured series error next to its a priori bound, per order."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    ax.plot(report.orders, report.bound, "o-", label="bound", lw=1.2)
    ax.plot(report.orders, report.measured_error, "s--", label="measured", lw=1.2)
    if any(v > 0 for v in report.bound):
        ax.set_yscale("log")  # an all-zero bound (converged input) stays linear
    ax.set_xlabel("series order m")
    ax.set_ylabel("pose step error")
    ax.set_title(title or f"truncation error, spectral radius {report.rho:.6f}")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    log.info("wrote %s", path)


def render_profile(curves, tau: float, path) -> None:
    """Performance profile curves for one tolerance."""
    fig, ax = plt.subplots(figsize=_FIGSIZE)
    for curve in curves:
        ax.step(curve.alphas, curve.rho_percent, where="post", label=curve.solver, lw=1.4)
    ax.set_xscale("log")
    ax.set_xlabel("relative time alpha")
    ax.set_ylabel("% of problems solved")
    ax.set_ylim(0, 105)
    ax.set_title(f"performance profile, tau = {tau:g}")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
    log.info("wrote %s", path)
