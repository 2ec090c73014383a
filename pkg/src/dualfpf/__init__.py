"""Exact linear-Gaussian particle filters derived from estimation/control duality."""

from dualfpf._backend import BACKEND
from dualfpf.duality import (DETERMINISTIC_FPF, ENKF, STOCHASTIC_FPF, DualSolution,
                             HomotopyParams, TransitionPath, dual_process, evaluate_estimator,
                             integrate_phi, integrate_psi, lq_cost, optimal_dual_params,
                             transition_paths, xi_process)
from dualfpf.ensemble import (Ensemble, EnsembleStats, FilterRun, GainSource, ensemble_stats,
                              homotopy_step, init_ensemble, run_filter)
from dualfpf.errors import (ConfigError, DimensionMismatch, DualFPFError, GridMismatch,
                            InvalidCount, LostPositivity, NonPositiveDefinite,
                            SingularEmpiricalCovariance, SingularMatrix)
from dualfpf.kalman import KalmanPath, integrate_riccati, kalman_gain, run_kalman
from dualfpf.model import (MatrixPath, ModelSchedule, TimeGrid, Trajectory, make_schedule,
                           random_model, scalar_model, simulate_truth)
from dualfpf.verify import (CheckReport, check_conservation, check_variance_ode,
                            estimator_particle_equivalence, exactness_report,
                            moo_optimality_probe, run_suite)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CheckReport", "ConfigError", "DETERMINISTIC_FPF", "DimensionMismatch",
    "DualFPFError", "DualSolution", "ENKF", "Ensemble", "EnsembleStats", "FilterRun",
    "GainSource", "GridMismatch", "HomotopyParams", "InvalidCount", "KalmanPath",
    "LostPositivity", "MatrixPath", "ModelSchedule", "NonPositiveDefinite", "STOCHASTIC_FPF",
    "SingularEmpiricalCovariance", "SingularMatrix", "TimeGrid", "Trajectory", "TransitionPath",
    "check_conservation", "check_variance_ode", "dual_process", "ensemble_stats",
    "estimator_particle_equivalence", "evaluate_estimator", "exactness_report", "homotopy_step",
    "init_ensemble", "integrate_phi", "integrate_psi", "integrate_riccati", "kalman_gain",
    "lq_cost", "make_schedule", "moo_optimality_probe", "optimal_dual_params", "random_model",
    "run_filter", "run_kalman", "run_suite", "scalar_model", "simulate_truth",
    "transition_paths", "xi_process",
]
