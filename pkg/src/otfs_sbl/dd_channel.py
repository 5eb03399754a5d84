"""Delay-Doppler grid, channel generation and pilot-frame synthesis.

Grids are plain complex ndarrays of shape ``(N, M)`` indexed ``[k, l]``:
``k`` is the Doppler bin (``0 <= k < N``) and ``l`` the delay bin
(``0 <= l < M``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DimensionError, InfeasibleError

__all__ = [
    "SystemParams",
    "PathParams",
    "ChannelSpec",
    "PilotLayout",
    "psi_coeff",
    "phi_coeff",
    "make_pilot_frame",
    "gen_channel",
    "apply_channel",
    "synthesize_rx",
    "guard_mask",
    "data_mask",
    "observation_window",
    "virtual_taps",
    "channel_to_grid",
    "noise_var_from_snr",
    "save_grid",
    "load_grid",
]


@dataclass(frozen=True)
class SystemParams:
    """OTFS numerology.

    Parameters
    ----------
    M : int
        Delay bins (subcarriers).
    N : int
        Doppler bins (symbols).
    delta_f : float
        Subcarrier spacing in Hz.
    fc : float
        Carrier frequency in Hz.
    eta : int
        Half-width of the fractional-Doppler spreading window.
    l_max, k_max : int
        Largest delay and Doppler taps.
    """

    M: int
    N: int
    delta_f: float = 15e3
    fc: float = 4e9
    eta: int = 5
    l_max: int = 20
    k_max: int = 16

    def __post_init__(self):
        if self.M < 1 or self.N < 1:
            raise ValueError("M and N must be positive")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if not 0 <= self.l_max < self.M:
            raise ValueError("need 0 <= l_max < M")
        if not 0 <= 2 * self.k_max < self.N:
            raise ValueError("need 0 <= k_max < N/2")
        if self.delta_f <= 0:
            raise ValueError("delta_f must be positive")

    @classmethod
    def desk(cls):
        """Reduced scale used by the acceptance runs."""
        return cls(M=32, N=32, eta=3, l_max=8, k_max=6)

    @classmethod
    def paper(cls):
        return cls(M=128, N=128, eta=5, l_max=20, k_max=16)

    @property
    def T(self):
        return 1.0 / self.delta_f

    def delay_of(self, l_tau):
        """Delay in seconds of tap ``l_tau``."""
        return l_tau / (self.M * self.delta_f)

    def doppler_of(self, k_nu, kappa=0.0):
        """Doppler shift in Hz of tap ``k_nu + kappa``."""
        return (k_nu + kappa) / (self.N * self.T)


@dataclass(frozen=True)
class PathParams:
    gain: complex
    l_tau: int
    k_nu: int
    kappa: float = 0.0

    def __post_init__(self):
        if not -0.5 < self.kappa < 0.5:
            raise ValueError(f"kappa must lie in (-0.5, 0.5), got {self.kappa}")
        if self.l_tau < 0:
            raise ValueError("l_tau must be non-negative")


@dataclass(frozen=True)
class ChannelSpec:
    paths: tuple

    def __post_init__(self):
        object.__setattr__(self, "paths", tuple(self.paths))
        if len(self.paths) < 1:
            raise ValueError("a channel needs at least one path")
        taps = [(p.l_tau, p.k_nu) for p in self.paths]
        if len(set(taps)) != len(taps):
            raise ValueError("paths must have distinct (l_tau, k_nu) pairs")

    @property
    def P(self):
        return len(self.paths)

    @property
    def power(self):
        return float(sum(abs(p.gain) ** 2 for p in self.paths))

    def with_gains(self, gains):
        """Same taps, new complex gains."""
        gains = np.asarray(gains, dtype=complex)
        if gains.shape != (self.P,):
            raise DimensionError("one gain per path expected")
        return ChannelSpec(tuple(
            PathParams(complex(g), p.l_tau, p.k_nu, p.kappa)
            for g, p in zip(gains, self.paths)))


@dataclass(frozen=True)
class PilotLayout:
    """Pilot placement plus the derived observation/unknown counts.

    ``pilot_rows`` holds Doppler indices, ``pilot_cols`` delay indices.
    Build with :meth:`centered` so that ``Q`` and ``R`` agree with the
    numerology.
    """

    pilot_rows: tuple
    pilot_cols: tuple
    pilot_amplitude: complex
    Q: int
    R: int
    k_max: int = field(repr=False, default=0)
    l_max: int = field(repr=False, default=0)
    eta: int = field(repr=False, default=0)

    @classmethod
    def centered(cls, params, n_doppler=1, n_delay=1, amplitude=1.0 + 0j):
        """Contiguous pilot block at the centre of the grid."""
        if n_doppler < 1 or n_delay < 1:
            raise ValueError("pilot block needs at least one cell")
        k0 = params.N // 2 - (n_doppler - 1) // 2
        l0 = params.M // 2 - (n_delay - 1) // 2
        rows = tuple(range(k0, k0 + n_doppler))
        cols = tuple(range(l0, l0 + n_delay))
        return cls.from_indices(params, rows, cols, amplitude)

    @classmethod
    def from_indices(cls, params, rows, cols, amplitude=1.0 + 0j):
        rows, cols = tuple(sorted(rows)), tuple(sorted(cols))
        nk, nl = len(rows), len(cols)
        n_del = params.l_max + nl
        Q = (2 * params.k_max + nk) * n_del
        R = (2 * params.k_max + nk + 2 * params.eta) * n_del
        layout = cls(rows, cols, complex(amplitude), Q, R,
                     params.k_max, params.l_max, params.eta)
        check_layout(params, layout)
        return layout

    def to_dict(self):
        return {
            "pilot_rows": list(self.pilot_rows),
            "pilot_cols": list(self.pilot_cols),
            "pilot_amplitude": [self.pilot_amplitude.real,
                                self.pilot_amplitude.imag],
        }


def check_layout(params, layout):
    """Raise :class:`DimensionError` when the pilot+guard box leaves the grid."""
    if (layout.k_max, layout.l_max, layout.eta) != (params.k_max, params.l_max,
                                                    params.eta):
        raise DimensionError("layout was built for a different numerology")
    k_lo, k_hi, l_lo, l_hi = _guard_box(params, layout)
    if k_lo < 0 or k_hi >= params.N or l_lo < 0 or l_hi >= params.M:
        raise DimensionError(
            f"pilot+guard box rows {k_lo}..{k_hi}, cols {l_lo}..{l_hi} "
            f"does not fit a {params.N}x{params.M} grid")


def _guard_box(params, layout):
    k_span = 2 * params.k_max + params.eta
    return (min(layout.pilot_rows) - k_span, max(layout.pilot_rows) + k_span,
            min(layout.pilot_cols) - params.l_max,
            max(layout.pilot_cols) + params.l_max)


def psi_coeff(q, kappa, N):
    """Fractional-Doppler leakage coefficient.

    Closed form of ``(1/N) sum_n exp(j 2 pi n (-q - kappa) / N)``;
    vectorises over ``q`` and ``kappa``. The removable singularity at
    ``q + kappa = 0 (mod N)`` evaluates to 1.
    """
    q = np.asarray(q)
    kappa = np.asarray(kappa, dtype=float)
    # the sum is N-periodic in q; centring q keeps |x / N| <= 1/2 + 1/(2N)
    q = np.mod(q + N // 2, N) - N // 2
    x = -(q + kappa)
    # (e^{j2pi x} - 1) / (N (e^{j2pi x/N} - 1)) written as a ratio of sincs,
    # which has no 0/0 point
    out = np.exp(1j * np.pi * x * (N - 1) / N) * np.sinc(x) / np.sinc(x / N)
    # exact values on the integer lattice
    out = np.where(kappa == 0, np.where(q == 0, 1.0 + 0j, 0j), out)
    if out.ndim == 0:
        return complex(out)
    return out


def _phase(l, path, params):
    return np.exp(2j * np.pi * (l - path.l_tau) * (path.k_nu + path.kappa)
                  / (params.M * params.N))


def phi_coeff(k, l, q, path, params):
    """Two-branch Doppler/delay coupling term for one path."""
    k = np.asarray(k)
    l = np.asarray(l)
    psi = psi_coeff(q, path.kappa, params.N)
    ph = _phase(l, path, params)
    wrap = np.exp(-2j * np.pi * np.mod(k - path.k_nu + q, params.N) / params.N)
    out = np.where(l >= path.l_tau, psi * ph, (psi - 1.0 / params.N) * ph * wrap)
    if out.ndim == 0:
        return complex(out)
    return out


def guard_mask(params, layout):
    """Boolean ``(N, M)`` mask of the pilot+guard rectangle (pilots included)."""
    k_lo, k_hi, l_lo, l_hi = _guard_box(params, layout)
    mask = np.zeros((params.N, params.M), dtype=bool)
    mask[k_lo:k_hi + 1, l_lo:l_hi + 1] = True
    return mask


def data_mask(params, layout):
    return ~guard_mask(params, layout)


def make_pilot_frame(params, layout, data_symbols=None):
    """Place pilots, zero guard cells, and fill the rest with data.

    ``data_symbols`` is consumed in row-major order over the data mask;
    its length must equal the number of data cells.
    """
    check_layout(params, layout)
    grid = np.zeros((params.N, params.M), dtype=complex)
    for k in layout.pilot_rows:
        for l in layout.pilot_cols:
            grid[k, l] = layout.pilot_amplitude
    if data_symbols is not None:
        mask = data_mask(params, layout)
        data_symbols = np.asarray(data_symbols, dtype=complex).ravel()
        if data_symbols.size != mask.sum():
            raise DimensionError(
                f"{mask.sum()} data cells but {data_symbols.size} symbols given")
        grid[mask] = data_symbols
    return grid


def _pdp_weights(params, pdp):
    l = np.arange(params.l_max + 1)
    if pdp == "exponential":
        decay = max(params.l_max / 3.0, 1e-12)
        return np.exp(-l / decay)
    if pdp == "uniform":
        return np.ones_like(l, dtype=float)
    raise ValueError(f"unknown power-delay profile {pdp!r}")


def gen_channel(params, P, fractional=True, pdp="exponential", rng=None):
    """Draw a sparse doubly-dispersive channel.

    Delay taps follow the power-delay profile (without replacement while
    possible), Doppler taps are ``round(k_max cos(theta))`` with uniform
    ``theta``; duplicate ``(l, k)`` pairs are redrawn. Gains are circular
    Gaussian weighted by the profile and scaled to unit total power.
    """
    n_taps = (params.l_max + 1) * (2 * params.k_max + 1)
    if P < 1 or P > n_taps:
        raise InfeasibleError(f"cannot place {P} distinct paths on {n_taps} taps")
    rng = np.random.default_rng(rng)
    w = _pdp_weights(params, pdp)
    prob = w / w.sum()
    seen = set()
    taps = []
    max_draws = 10000 * P
    draws = 0
    while len(taps) < P:
        draws += 1
        if draws > max_draws:
            raise InfeasibleError("rejection sampling of distinct taps did not finish")
        if P <= params.l_max + 1:
            free = [l for l in range(params.l_max + 1)
                    if l not in {t[0] for t in taps}]
            pf = prob[free] / prob[free].sum()
            l = int(rng.choice(free, p=pf))
        else:
            l = int(rng.choice(params.l_max + 1, p=prob))
        k = int(np.round(params.k_max * np.cos(rng.uniform(0.0, 2 * np.pi))))
        if (l, k) in seen:
            continue
        seen.add((l, k))
        taps.append((l, k))
    g = (rng.standard_normal(P) + 1j * rng.standard_normal(P)) / np.sqrt(2)
    g *= np.sqrt(w[[t[0] for t in taps]])
    g /= np.sqrt(np.sum(np.abs(g) ** 2))
    paths = []
    for (l, k), gain in zip(taps, g):
        kappa = 0.0
        if fractional:
            kappa = rng.uniform(-0.5, 0.5)
            while kappa == -0.5:
                kappa = rng.uniform(-0.5, 0.5)
        paths.append(PathParams(complex(gain), l, k, float(kappa)))
    return ChannelSpec(tuple(paths))


def _path_terms(path, params):
    """Yield ``(q, coefficient grid)`` for every retained Doppler offset."""
    k = np.arange(params.N)[:, None]
    l = np.arange(params.M)[None, :]
    pre = path.gain * _phase(l, path, params)
    for q in range(-params.eta, params.eta + 1):
        yield q, pre * phi_coeff(k, l, q, path, params)


def apply_channel(tx, paths, params):
    """Noiseless delay-Doppler input-output relation for a list of paths."""
    tx = np.asarray(tx, dtype=complex)
    if tx.shape != (params.N, params.M):
        raise DimensionError(f"grid shape {tx.shape} != {(params.N, params.M)}")
    y = np.zeros_like(tx)
    for path in paths:
        for q, coef in _path_terms(path, params):
            # shifted[k, l] = tx[(k - k_nu + q) % N, (l - l_tau) % M]
            shifted = np.roll(tx, shift=(path.k_nu - q, path.l_tau), axis=(0, 1))
            y += coef * shifted
    return y


def synthesize_rx(tx, channel, noise_var, params, rng=None):
    """Received grid: channel applied to ``tx`` plus circular Gaussian noise."""
    if noise_var < 0:
        raise ValueError("noise_var must be non-negative")
    y = apply_channel(tx, channel.paths, params)
    if noise_var > 0:
        rng = np.random.default_rng(rng)
        w = rng.standard_normal(y.shape) + 1j * rng.standard_normal(y.shape)
        y = y + np.sqrt(noise_var / 2.0) * w
    return y


def observation_window(params, layout):
    """Doppler rows and delay columns of the ``Q`` observed cells."""
    rows = np.arange(min(layout.pilot_rows) - params.k_max,
                     max(layout.pilot_rows) + params.k_max + 1)
    cols = np.arange(min(layout.pilot_cols),
                     max(layout.pilot_cols) + params.l_max + 1)
    return rows, cols


def virtual_taps(params, layout):
    """Delay and Doppler offsets ``(l', k'')`` of the ``R`` unknowns.

    Ordered delay-major: index ``r = l' * n_doppler + j``.
    """
    n_dop = 2 * params.k_max + len(layout.pilot_rows) + 2 * params.eta
    n_del = params.l_max + len(layout.pilot_cols)
    k_off = np.arange(n_dop) - (params.k_max + params.eta)
    l_off = np.arange(n_del)
    ll, kk = np.meshgrid(l_off, k_off, indexing="ij")
    return ll.ravel(), kk.ravel()


def channel_to_grid(channel, params, layout):
    """Map a channel onto the ``R`` virtual taps used by the estimators.

    Each virtual tap ``(l', k'')`` collects every ``(path, q)`` term with
    ``l_tau == l'`` and ``k_nu - q == k''``, evaluated at the cell it
    illuminates from the first pilot and divided by the on-grid dictionary
    coefficient there. For on-grid channels this is just the path gains;
    for a single pilot it makes ``Phi @ h`` reproduce the noiseless window
    exactly.
    """
    l_off, k_off = virtual_taps(params, layout)
    index = {(int(a), int(b)): r for r, (a, b) in enumerate(zip(l_off, k_off))}
    h = np.zeros(layout.R, dtype=complex)
    kp, lp = layout.pilot_rows[0], layout.pilot_cols[0]
    for path in channel.paths:
        for q in range(-params.eta, params.eta + 1):
            r = index.get((path.l_tau, path.k_nu - q))
            if r is None:
                continue
            kc = (kp + path.k_nu - q) % params.N
            lc = (lp + path.l_tau) % params.M
            true = (path.gain * _phase(lc, path, params)
                    * phi_coeff(kc, lc, q, path, params))
            if true == 0:
                continue
            ref = PathParams(1.0, path.l_tau, path.k_nu - q, 0.0)
            dict_coef = _phase(lc, ref, params) * phi_coeff(kc, lc, 0, ref, params)
            h[r] += true / dict_coef
    return h


def noise_var_from_snr(snr_db):
    """Per-cell noise variance for unit-power data symbols."""
    return 10.0 ** (-snr_db / 10.0)


def save_grid(grid, path):
    """Dump a grid as ``.npy`` or as CSV rows of ``re,im`` pairs."""
    path = Path(path)
    grid = np.asarray(grid, dtype=complex)
    if path.suffix == ".npy":
        np.save(path, grid)
        return
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(grid.shape)
        for row in grid:
            writer.writerow([repr(float(v)) for z in row for v in (z.real, z.imag)])


def load_grid(path):
    path = Path(path)
    if path.suffix == ".npy":
        return np.load(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        n, m = (int(v) for v in next(reader))
        vals = np.array([[float(v) for v in row] for row in reader])
    if vals.shape != (n, 2 * m):
        raise DimensionError("CSV grid does not match its header")
    return vals[:, 0::2] + 1j * vals[:, 1::2]
