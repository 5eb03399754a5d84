"""Sparse recovery of the delay-Doppler channel from the pilot window."""

from .measurement import (Measurement, build_measurement, lipschitz_V,
                          measurement_from_arrays)
from .omp import omp_default_sparsity, omp_estimate
from .results import NMSE_FLOOR_DB, RecoveryResult, Trace, nmse
from .sbl import (SblHyper, SblState, ifsbl_e_step, ifsbl_estimate,
                  ifsblt_estimate, inflate_precisions, init_state, majorizer,
                  sbl_estimate, sbl_posterior, threshold_update)

__all__ = [
    "Measurement",
    "build_measurement",
    "lipschitz_V",
    "measurement_from_arrays",
    "omp_default_sparsity",
    "omp_estimate",
    "NMSE_FLOOR_DB",
    "RecoveryResult",
    "Trace",
    "nmse",
    "SblHyper",
    "SblState",
    "ifsbl_e_step",
    "ifsbl_estimate",
    "ifsblt_estimate",
    "inflate_precisions",
    "init_state",
    "majorizer",
    "sbl_estimate",
    "sbl_posterior",
    "threshold_update",
    "SOLVERS",
]

SOLVERS = {
    "omp": omp_estimate,
    "sbl": sbl_estimate,
    "ifsbl": ifsbl_estimate,
    "ifsblt": ifsblt_estimate,
}
