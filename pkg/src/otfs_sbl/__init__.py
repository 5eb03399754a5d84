"""OTFS delay-Doppler channel estimation with sparse Bayesian learning.

Subpackages
-----------
dd_channel
    Grid numerology, channel generation, pilot frames and the
    delay-Doppler input-output relation.
estimator
    Measurement model and the OMP / SBL / inverse-free SBL solvers.
detector
    Message-passing and LMMSE symbol detection for BER runs.
harness
    Monte-Carlo experiments, CSV output and run manifests.
"""

__version__ = "0.1.0"

from . import dd_channel, estimator  # noqa: F401
from .errors import DimensionError, DivergenceError, InfeasibleError  # noqa: F401
