"""Shared fixtures and the acceptance-summary report.

Acceptance tests are named test_criterion_NN_*; a terminal-summary hook prints
one PASS/FAIL line per criterion at the end of the run so the acceptance status
is readable without scrolling through the full pytest output.
"""
from __future__ import annotations

import re

import pytest

from powerba import bal_io, synthetic

ACCEPTANCE_CRITERIA = {
    1: "series solve matches the dense oracle over the lambda sweep",
    2: "iteration-matrix eigenvalues lie in [0, 1)",
    3: "truncation error stays below the a priori bound",
    4: "stop-criterion arithmetic and epsilon monotonicity",
    5: "series-preconditioned CG: fewer iterations, more wall time",
    6: "end-to-end cost parity of the series solver and the CG baseline",
    7: "landmark block storage bytes match the analytic count",
    8: "analytic Jacobians match finite differences everywhere",
    9: "performance profiles reproduce the hand-computed fixture",
    10: "clustered solves: identity, exactness, and cost decrease",
}

_CRITERION_RE = re.compile(r"test_criterion_(\d+)")


# ---------------------------------------------------------------------------
# fixtures
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def oracle_problem():
    """The 3-camera / 5-landmark dense-checkable problem."""
    return synthetic.make_random_problem(3, 5, seed=1)


@pytest.fixture(scope="session")
def perturbed_oracle(oracle_problem):
    """Oracle problem with the protocol noise, the usual linearization point."""
    return bal_io.perturb(oracle_problem, 0.01, seed=0)


@pytest.fixture(scope="session")
def noisy_problem():
    """Overdetermined and noisy, so the optimum cost is positive and stable.

    4 cameras and 60 landmarks give 362 residual rows against 216 parameters;
    without the pixel noise (or with fewer observations than parameters) every
    solver interpolates to zero cost and final-cost comparisons degenerate.
    """
    return bal_io.perturb(
        synthetic.make_random_problem(4, 60, seed=5, pixel_noise=1.0), 0.01, seed=0
    )


@pytest.fixture(scope="session")
def rig_problem():
    """49-camera ring, the desk-scale stand-in for a small real capture.

    One pixel of measurement noise keeps the optimum cost positive, as on real
    data; a noiseless rig is interpolated exactly, which makes final-cost
    comparisons between solvers degenerate.
    """
    return synthetic.make_rig_problem(pixel_noise=1.0)


@pytest.fixture(scope="session")
def perturbed_rig(rig_problem):
    return bal_io.perturb(rig_problem, 0.01, seed=0)


@pytest.fixture(scope="session")
def rig_bal_path(rig_problem, tmp_path_factory):
    path = tmp_path_factory.mktemp("bal") / "rig49.txt"
    bal_io.write_bal(rig_problem, path)
    return path


@pytest.fixture(scope="session")
def bench_inputs():
    """Two tiny noisy problems and a short LM budget for benchmark-kit tests."""
    from powerba import lm

    problems = [
        ("randA", synthetic.make_random_problem(3, 12, seed=11, pixel_noise=1.0)),
        ("randB", synthetic.make_random_problem(4, 15, seed=12, pixel_noise=1.0)),
    ]
    return problems, lm.LmConfig(max_outer_iterations=4)


@pytest.fixture(scope="session")
def small_bal_path(tmp_path_factory):
    problem = synthetic.make_random_problem(3, 12, seed=3, pixel_noise=1.0)
    path = tmp_path_factory.mktemp("bal_small") / "rand3x12.txt"
    bal_io.write_bal(problem, path)
    return path


# ---------------------------------------------------------------------------
# acceptance summary
# ---------------------------------------------------------------------------


def pytest_configure(config):
    config._acceptance_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if report.when != "call" or "test_acceptance" not in item.nodeid:
        return
    m = _CRITERION_RE.search(item.nodeid)
    if m:
        item.config._acceptance_results[int(m.group(1))] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "_acceptance_results", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE_CRITERIA):
        outcome = results.get(num)
        if outcome is None:
            status = "NOT RUN"
        else:
            status = "PASS" if outcome == "passed" else outcome.upper()
        terminalreporter.write_line(
            f"criterion {num:2d}: {status:7s} {ACCEPTANCE_CRITERIA[num]}")
