"""Bundle adjustment built on a power-series expansion of the inverse Schur
complement, with CG baselines, camera clustering and a benchmark kit."""

from .bal_io import (BalParseError, BalProblem, CameraParams, TraceRecord,
                     parse_bal, perturb, read_trace, serialize_bal, write_bal,
                     write_summary, write_trace)
from .blocks import DampedSystem, LandmarkBlockStore, Linearization, assemble, linearize, memory_account
from .camera import project, residual_and_jacobians
from .clustering import CameraClustering, cluster_cameras, solve_clustered
from .evalkit import RunRecord, cost_threshold, performance_profile, run_benchmark
from .lm import BaState, LmConfig, SolverTrace, apply_update, evaluate_cost, run
from .power_series import (PowerSeriesResult, apply_series_inverse, back_substitute,
                           power_series_solve, stop_criterion)
from .solvers import (CgReport, dense_direct, pcg_power_series_preconditioner,
                      pcg_schur_jacobi)
from .spectral import SpectralReport, estimate_spectral_radius, verify_error_bound
from .synthetic import make_random_problem, make_rig_problem, make_two_component_problem

__version__ = "0.1.0"
