"""Configuration-driven Monte-Carlo experiments."""

from .config import (ALGORITHMS, EXPERIMENTS, CsConfig, DetectorConfig,
                     ExperimentConfig, PilotConfig, default_config, load_config)
from .experiments import (WORKERS_ENV, ExperimentResult, emit_manifest,
                          generic_cs_problem, load_manifest, rerun_from_manifest,
                          run_ber_sweep, run_convergence, run_experiment,
                          run_nmse_sweep, run_success_rate, trial_seed, write_csv)

__all__ = [
    "ALGORITHMS",
    "EXPERIMENTS",
    "CsConfig",
    "DetectorConfig",
    "ExperimentConfig",
    "PilotConfig",
    "default_config",
    "load_config",
    "WORKERS_ENV",
    "ExperimentResult",
    "emit_manifest",
    "generic_cs_problem",
    "load_manifest",
    "rerun_from_manifest",
    "run_ber_sweep",
    "run_convergence",
    "run_experiment",
    "run_nmse_sweep",
    "run_success_rate",
    "trial_seed",
    "write_csv",
]
