"""Fixed-confidence best-arm identification with post-action context.

The package provides the problem model (instances whose reward depends on a
stochastically drawn context revealed after each pull), exact and grid-search
solvers for the optimal sampling weights, sequential stopping statistics with
anytime-valid thresholds, three track-and-stop style algorithms, and a
deterministic multi-trial benchmark harness with a CLI front end.
"""

from .algorithms import (ALGORITHMS, RunConfig, RunResult, TrajectoryPoint,
                         d_track_next, g_track_next, nsts_run, run_batch,
                         sts_run, ts_baseline_run)
from .env import (GenConstraints, RngStream, default_gap_bands,
                  gen_random_instance, sample_step)
from .geometry import (ArmMixture, DegenerateRayError, FacetOracle,
                       GeometryError, RayExit, hull_membership, ray_exit,
                       simplex_solve_eq, solve_scale_lp)
from .harness import (ExperimentConfig, ExperimentConfigError, TrialAggregate,
                      TrajectoryCurve, emit_csv, emit_trajectories,
                      load_experiment_config, run_experiment, wilson_interval)
from .model import (NON_SEPARATOR, SEPARATOR, EmpiricalState, Instance,
                    InstanceError, NotInitializedError, best_arm,
                    empirical_means, expected_reward, expected_rewards, gaps,
                    instance_from_dict, instance_to_dict, load_instance,
                    validate_context_matrix,
                    save_instance, unique_argmax)
from .optim import (CharacteristicTime, SepSolution, characteristic_time,
                    d_bernoulli, grid_oracle, nonsep_objective,
                    nonsep_root_bracket, nonsep_root_residual, sep_objective,
                    solve_nonsep_root, solve_nonsep_weights, solve_sep_weights)
from .stopping import (GlrReport, c_g, g_fn, glr_brute_oracle, glr_classic,
                       glr_nonsep, glr_sep, riemann_zeta, threshold_classic,
                       threshold_nonsep, threshold_sep)

__version__ = "0.1.0"

__all__ = [
    "ALGORITHMS", "ArmMixture", "CharacteristicTime", "DegenerateRayError",
    "EmpiricalState", "ExperimentConfig", "ExperimentConfigError",
    "FacetOracle", "GenConstraints", "GeometryError", "GlrReport", "Instance",
    "InstanceError", "NON_SEPARATOR", "NotInitializedError", "RayExit",
    "RngStream", "RunConfig", "RunResult", "SEPARATOR", "SepSolution",
    "TrajectoryCurve", "TrajectoryPoint", "TrialAggregate", "best_arm",
    "c_g", "characteristic_time", "d_bernoulli", "d_track_next",
    "default_gap_bands", "emit_csv", "emit_trajectories", "empirical_means",
    "expected_reward", "expected_rewards", "g_fn", "g_track_next", "gaps",
    "gen_random_instance", "glr_brute_oracle", "glr_classic", "glr_nonsep",
    "glr_sep", "grid_oracle", "hull_membership", "instance_from_dict",
    "instance_to_dict", "load_experiment_config", "load_instance",
    "nonsep_objective", "nonsep_root_bracket", "nonsep_root_residual",
    "nsts_run", "ray_exit", "riemann_zeta", "run_batch",
    "run_experiment", "sample_step", "save_instance", "sep_objective",
    "simplex_solve_eq", "solve_nonsep_root", "solve_nonsep_weights",
    "solve_scale_lp", "solve_sep_weights", "sts_run", "threshold_classic",
    "threshold_nonsep", "threshold_sep", "ts_baseline_run", "unique_argmax", "validate_context_matrix",
    "wilson_interval",
]
