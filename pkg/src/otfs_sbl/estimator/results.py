"""Solver outputs and their CSV forms."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import DimensionError

__all__ = ["Trace", "RecoveryResult", "nmse", "NMSE_FLOOR_DB"]

NMSE_FLOOR_DB = -300.0


def nmse(h_true, h_hat):
    """Normalised squared error in dB, floored at ``NMSE_FLOOR_DB``."""
    h_true = np.asarray(h_true)
    h_hat = np.asarray(h_hat)
    if h_true.shape != h_hat.shape:
        raise DimensionError(f"shapes differ: {h_true.shape} vs {h_hat.shape}")
    den = np.sum(np.abs(h_true) ** 2)
    if den == 0:
        raise ValueError("NMSE is undefined for an all-zero reference")
    num = np.sum(np.abs(h_true - h_hat) ** 2)
    if num == 0:
        return NMSE_FLOOR_DB
    return max(10.0 * np.log10(num / den), NMSE_FLOOR_DB)


@dataclass
class Trace:
    """Per-iteration history.

    ``rel_change`` is ``||z_i - z_{i-1}||^2 / ||z_{i-1}||^2`` (``inf``
    on the first pass); ``nmse_db`` is ``nan`` unless a reference was
    supplied. ``a_tilde``/``c_tilde`` keep the Gamma shape posteriors so
    their offsets from the priors can be audited. ``residual`` holds
    ``||y - Phi h||`` for greedy solvers.
    """

    rel_change: list = field(default_factory=list)
    nmse_db: list = field(default_factory=list)
    a_tilde: list = field(default_factory=list)
    c_tilde: list = field(default_factory=list)
    residual: list = field(default_factory=list)

    def __len__(self):
        return len(self.rel_change)

    def append(self, rel_change, nmse_db, a_tilde=np.nan, c_tilde=np.nan):
        self.rel_change.append(float(rel_change))
        self.nmse_db.append(float(nmse_db))
        self.a_tilde.append(float(a_tilde))
        self.c_tilde.append(float(c_tilde))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iter", "rel_change", "nmse_db"])
            for i, (rc, nm) in enumerate(zip(self.rel_change, self.nmse_db), 1):
                w.writerow([i, repr(rc), repr(nm)])


@dataclass
class RecoveryResult:
    h_hat: np.ndarray
    iterations: int
    converged: bool
    trace: Trace
    algorithm: str = ""
    support: Optional[np.ndarray] = None
    rho: Optional[np.ndarray] = None
    guard_hits: int = 0
    rho_saturations: int = 0
    fallbacks: int = 0
    state: Optional[object] = field(default=None, repr=False)

    def to_csv(self, path):
        rho = self.rho if self.rho is not None else np.full(self.h_hat.shape, np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "re", "im", "rho"])
            for n, (v, r) in enumerate(zip(self.h_hat, rho)):
                w.writerow([n, repr(float(v.real)), repr(float(v.imag)), repr(float(r))])
