"""Linear measurement model ``y = Phi h + w`` over the pilot window."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..dd_channel import (PathParams, SystemParams, PilotLayout, _phase,
                          check_layout, observation_window, phi_coeff,
                          virtual_taps)
from ..errors import DimensionError

__all__ = ["Measurement", "build_measurement", "lipschitz_V", "measurement_from_arrays"]


@dataclass(frozen=True)
class Measurement:
    """Observation vector and dictionary.

    ``layout``/``params`` are ``None`` for generic compressed-sensing
    problems that do not come from an OTFS frame.
    """

    y: np.ndarray
    Phi: np.ndarray
    layout: Optional[PilotLayout] = None
    params: Optional[SystemParams] = None
    noise_var: Optional[float] = None

    def __post_init__(self):
        y = np.asarray(self.y)
        Phi = np.asarray(self.Phi)
        if Phi.ndim != 2 or y.shape != (Phi.shape[0],):
            raise DimensionError(f"y {y.shape} incompatible with Phi {Phi.shape}")
        if self.layout is not None and Phi.shape != (self.layout.Q, self.layout.R):
            raise DimensionError("Phi shape disagrees with the layout's (Q, R)")
        y.setflags(write=False)
        Phi.setflags(write=False)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "Phi", Phi)

    @property
    def Q(self):
        return self.Phi.shape[0]

    @property
    def R(self):
        return self.Phi.shape[1]


def measurement_from_arrays(y, Phi, noise_var=None):
    return Measurement(np.asarray(y, dtype=complex), np.asarray(Phi, dtype=complex),
                       noise_var=noise_var)


def build_measurement(rx, tx, layout, params, noise_var=None):
    """Extract ``(y, Phi)`` from a received frame.

    ``y`` stacks the observation window delay-major (one delay column
    after another). Column ``r`` of ``Phi`` is the on-grid response of
    virtual tap ``virtual_taps(params, layout)[r]`` to the pilot cells of
    ``tx``.
    """
    rx = np.asarray(rx)
    tx = np.asarray(tx)
    shape = (params.N, params.M)
    if rx.shape != shape or tx.shape != shape:
        raise DimensionError(f"rx {rx.shape} / tx {tx.shape} must both be {shape}")
    check_layout(params, layout)
    rows, cols = observation_window(params, layout)
    kk, ll = np.meshgrid(rows, cols, indexing="xy")
    k_obs, l_obs = kk.ravel(), ll.ravel()
    y = rx[k_obs, l_obs]

    pilots = np.zeros(shape, dtype=bool)
    for k in layout.pilot_rows:
        pilots[k, layout.pilot_cols] = True
    l_off, k_off = virtual_taps(params, layout)
    Phi = np.zeros((layout.Q, layout.R), dtype=complex)
    for r, (lv, kv) in enumerate(zip(l_off, k_off)):
        src_k = np.mod(k_obs - kv, params.N)
        src_l = np.mod(l_obs - lv, params.M)
        hit = pilots[src_k, src_l]
        if not hit.any():
            continue
        tap = PathParams(1.0, int(lv), int(kv), 0.0)
        kh, lh = k_obs[hit], l_obs[hit]
        Phi[hit, r] = (tx[src_k[hit], src_l[hit]] * _phase(lh, tap, params)
                       * phi_coeff(kh, lh, 0, tap, params))
    return Measurement(y, Phi, layout, params, noise_var)


def lipschitz_V(Phi, tol=1e-10, max_iter=None, seed=0):
    """Twice the largest eigenvalue of ``Phi^H Phi`` by power iteration.

    Iterates on the smaller of the two Gram matrices and stops once the
    Rayleigh quotient changes by less than ``tol`` relative.
    """
    Phi = np.asarray(Phi)
    Q, R = Phi.shape
    if Phi.size == 0:
        raise DimensionError("Phi is empty")
    if max_iter is None:
        max_iter = 10 * R
    tall = Q >= R
    n = R if tall else Q
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    v /= np.linalg.norm(v)
    PhiH = Phi.conj().T

    def gram(x):
        return PhiH @ (Phi @ x) if tall else Phi @ (PhiH @ x)

    lam = 0.0
    for _ in range(max_iter):
        w = gram(v)
        lam_new = float(np.real(np.vdot(v, w)))
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        if abs(lam_new - lam) <= tol * abs(lam_new):
            lam = lam_new
            break
        lam = lam_new
    return 2.0 * lam
