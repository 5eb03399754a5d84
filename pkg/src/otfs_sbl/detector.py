"""Symbol detection on the delay-Doppler grid.

The channel is turned into a sparse ``NM x NM`` operator using the same
input-output relation as :func:`otfs_sbl.dd_channel.apply_channel`. The
known pilot contribution is subtracted and the data cells are recovered
by Gaussian-approximation message passing or by LMMSE equalisation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dd_channel import (PathParams, _path_terms, data_mask, virtual_taps)
from .errors import DimensionError

__all__ = [
    "Constellation",
    "qam4",
    "EffectiveChannel",
    "DetectionReport",
    "channel_matrix",
    "detect_mp",
    "detect_lmmse",
    "bit_error_rate",
]

MP_NOISE_FLOOR = 1e-12


@dataclass(frozen=True)
class Constellation:
    """Symbol alphabet with bit labels.

    ``labels[i]`` is the bit tuple mapped to ``points[i]``.
    """

    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=complex)
        lab = np.asarray(self.labels, dtype=np.int8)
        if pts.ndim != 1 or pts.size == 0:
            raise ValueError("constellation needs at least one point")
        if lab.shape[0] != pts.size:
            raise DimensionError("one bit label per point expected")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "labels", lab.reshape(pts.size, -1))

    @property
    def bits_per_symbol(self):
        return self.labels.shape[1]

    def modulate(self, bits):
        bits = np.asarray(bits, dtype=np.int8).reshape(-1, self.bits_per_symbol)
        weights = 1 << np.arange(self.bits_per_symbol)[::-1]
        codes = bits @ weights
        lookup = np.empty(1 << self.bits_per_symbol, dtype=int)
        lookup[self.labels @ weights] = np.arange(self.points.size)
        return self.points[lookup[codes]]

    def slice(self, x):
        """Index of the nearest point for every entry of ``x``."""
        x = np.asarray(x)
        return np.argmin(np.abs(x[..., None] - self.points) ** 2, axis=-1)

    def bits(self, idx):
        return self.labels[np.asarray(idx)].reshape(-1)


def qam4():
    """Gray-mapped unit-energy 4-QAM: bit ``b`` maps to ``(1 - 2b) / sqrt(2)``."""
    labels = np.array([[0, 0], [0, 1], [1, 0], [1, 1]])
    points = ((1 - 2 * labels[:, 0]) + 1j * (1 - 2 * labels[:, 1])) / np.sqrt(2)
    return Constellation(points, labels)


@dataclass(frozen=True)
class EffectiveChannel:
    """Channel taps handed to a detector, as a tuple of :class:`PathParams`."""

    taps: tuple

    def __post_init__(self):
        object.__setattr__(self, "taps", tuple(self.taps))
        if not all(np.isfinite(t.gain) for t in self.taps):
            raise ValueError("channel taps must be finite")

    @classmethod
    def from_channel(cls, channel):
        """Perfect CSI: the true paths, fractional Doppler included."""
        return cls(channel.paths)

    @classmethod
    def from_estimate(cls, h_hat, params, layout, prune=1e-6):
        """On-grid taps from an estimate over the virtual-tap grid.

        Entries below ``prune * max|h_hat|`` are dropped.
        """
        h_hat = np.asarray(h_hat)
        if h_hat.shape != (layout.R,):
            raise DimensionError(f"expected {layout.R} taps, got {h_hat.shape}")
        l_off, k_off = virtual_taps(params, layout)
        peak = np.max(np.abs(h_hat)) if h_hat.size else 0.0
        keep = np.abs(h_hat) > prune * peak if peak > 0 else np.zeros(h_hat.shape, bool)
        return cls(tuple(PathParams(complex(h_hat[r]), int(l_off[r]), int(k_off[r]), 0.0)
                         for r in np.flatnonzero(keep)))

    def __len__(self):
        return len(self.taps)


@dataclass
class DetectionReport:
    decided_bits: np.ndarray
    ber: float
    iterations: int = 0
    converged: bool = True
    symbols: Optional[np.ndarray] = field(default=None, repr=False)
    fallbacks: int = 0


def channel_matrix(chan, params):
    """Sparse ``H`` with ``vec(y) = H vec(x)`` for row-major ``(N, M)`` grids."""
    N, M = params.N, params.M
    k = np.arange(N)[:, None]
    l = np.arange(M)[None, :]
    rows_all, cols_all, vals_all = [], [], []
    out_idx = (k * M + l).ravel()
    for path in chan.taps:
        src_l = np.mod(l - path.l_tau, M)
        for q, coef in _path_terms(path, params):
            c = coef.ravel()
            nz = c != 0
            if not nz.any():
                continue
            src_k = np.mod(k - path.k_nu + q, N)
            src = (src_k * M + src_l).ravel()
            rows_all.append(out_idx[nz])
            cols_all.append(src[nz])
            vals_all.append(c[nz])
    if not rows_all:
        return sp.csr_matrix((N * M, N * M), dtype=complex)
    H = sp.coo_matrix((np.concatenate(vals_all),
                       (np.concatenate(rows_all), np.concatenate(cols_all))),
                      shape=(N * M, N * M))
    return H.tocsr()


def _split(rx, chan, params, layout, pilot_frame):
    rx = np.asarray(rx, dtype=complex)
    if rx.shape != (params.N, params.M):
        raise DimensionError(f"rx shape {rx.shape} != {(params.N, params.M)}")
    H = channel_matrix(chan, params)
    if layout is None:
        mask = np.ones(rx.shape, dtype=bool)
    else:
        mask = data_mask(params, layout)
    data_idx = np.flatnonzero(mask.ravel())
    r = rx.ravel()
    if pilot_frame is not None:
        known = np.asarray(pilot_frame, dtype=complex).ravel().copy()
        known[data_idx] = 0
        r = r - H @ known
    return H[:, data_idx].tocsc(), r, data_idx


def bit_error_rate(decided_bits, tx_bits):
    if tx_bits is None:
        return float("nan")
    tx_bits = np.asarray(tx_bits).ravel()
    if tx_bits.shape != decided_bits.shape:
        raise DimensionError("decided and transmitted bit streams differ in length")
    return float(np.mean(decided_bits != tx_bits)) if tx_bits.size else 0.0


def detect_lmmse(rx, chan, noise_var, params, layout=None, pilot_frame=None,
                 tx_bits=None, constellation=None):
    """Linear MMSE equalisation of the data cells followed by slicing.

    Solves ``(H_d^H H_d + noise_var I) x = H_d^H r`` for unit-energy
    symbols, where ``r`` is ``rx`` with the pilot contribution removed.
    A ``1e-12 * trace / n`` ridge is added if the system is singular.
    ``layout=None`` treats every cell as data.
    """
    const = constellation or qam4()
    Hd, r, _ = _split(rx, chan, params, layout, pilot_frame)
    n = Hd.shape[1]
    A = (Hd.conj().T @ Hd).tocsc()
    A = A + noise_var * sp.identity(n, dtype=complex, format="csc")
    rhs = Hd.conj().T @ r
    fallbacks = 0
    with warnings.catch_warnings():
        warnings.simplefilter("error", spla.MatrixRankWarning)
        try:
            x = spla.spsolve(A, rhs)
            ok = np.all(np.isfinite(x))
        except (spla.MatrixRankWarning, RuntimeError):
            ok = False
    if not ok:
        fallbacks = 1
        jitter = 1e-12 * max(np.real(A.diagonal().sum()), 1.0) / n
        x = spla.spsolve(A + jitter * sp.identity(n, dtype=complex, format="csc"), rhs)
    idx = const.slice(x)
    bits = const.bits(idx)
    return DetectionReport(bits, bit_error_rate(bits, tx_bits), 0, True,
                           symbols=x, fallbacks=fallbacks)


def detect_mp(rx, chan, noise_var, params, layout=None, pilot_frame=None,
              tx_bits=None, constellation=None, max_iter=30, damping=0.6,
              tol=1e-4):
    """Gaussian-approximation message passing over the sparse channel graph.

    Each observation treats the interference from all other connected
    symbols as Gaussian; each symbol node combines the resulting
    likelihoods into a categorical belief over the alphabet. Messages are
    damped: ``p <- damping * p_new + (1 - damping) * p_old``.

    Stops when no message changes by more than ``tol``. Otherwise the
    decisions from the iteration with the most confident beliefs are
    returned and ``converged`` is ``False``.
    """
    const = constellation or qam4()
    Hd, r, _ = _split(rx, chan, params, layout, pilot_frame)
    n = Hd.shape[1]
    coo = Hd.tocoo()
    keep = coo.data != 0
    obs, var, h = coo.row[keep], coo.col[keep], coo.data[keep]
    order = np.argsort(var, kind="stable")
    obs, var, h = obs[order], var[order], h[order]
    pts = const.points
    S = pts.size
    nv = max(float(noise_var), MP_NOISE_FLOOR)
    n_obs = Hd.shape[0]
    h2 = np.abs(h) ** 2
    y_e = r[obs]
    # edges are grouped by symbol node; reduceat sums each group
    present, starts = np.unique(var, return_index=True)
    energy = np.abs(pts) ** 2

    p = np.full((h.size, S), 1.0 / S)
    best_conf, best_idx = -1.0, None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        m_e = p @ pts
        v_e = np.maximum(p @ energy - np.abs(m_e) ** 2, 0.0)
        hm = h * m_e
        tot_m = (np.bincount(obs, weights=hm.real, minlength=n_obs)
                 + 1j * np.bincount(obs, weights=hm.imag, minlength=n_obs))
        hv = h2 * v_e
        tot_v = np.bincount(obs, weights=hv, minlength=n_obs) + nv
        var_e = np.maximum(tot_v[obs] - hv, MP_NOISE_FLOOR)
        # log-likelihood up to terms that do not depend on the symbol
        u = np.conj(y_e - tot_m[obs] + hm) * h / var_e
        ll = (2.0 * (np.outer(u.real, pts.real) - np.outer(u.imag, pts.imag))
              - np.outer(h2 / var_e, energy))
        tot_ll = np.zeros((n, S))
        if h.size:
            tot_ll[present] = np.add.reduceat(ll, starts, axis=0)
        ext = tot_ll[var] - ll
        ext -= ext.max(axis=1, keepdims=True)
        p_new = np.exp(ext)
        p_new /= p_new.sum(axis=1, keepdims=True)
        p_new = damping * p_new + (1.0 - damping) * p
        delta = np.max(np.abs(p_new - p)) if p.size else 0.0
        p = p_new

        post = np.exp(tot_ll - tot_ll.max(axis=1, keepdims=True))
        post /= post.sum(axis=1, keepdims=True)
        conf = float(np.mean(post.max(axis=1) > 0.99)) if n else 1.0
        if conf > best_conf:
            best_conf, best_idx = conf, np.argmax(post, axis=1)
        if delta < tol:
            converged = True
            best_idx = np.argmax(post, axis=1)
            break
    idx = best_idx if best_idx is not None else np.zeros(n, dtype=int)
    bits = const.bits(idx)
    return DetectionReport(bits, bit_error_rate(bits, tx_bits), it, converged,
                           symbols=pts[idx])
