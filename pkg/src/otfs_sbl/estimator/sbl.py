"""Sparse Bayesian learning solvers.

Three variational-EM loops share the Gaussian/Gamma hierarchy:

* ``sbl_estimate`` -- full posterior covariance, one Cholesky per pass.
* ``ifsbl_estimate`` -- inverse-free variant. The data term is replaced by
  a quadratic majorizer with curvature ``V = 2 lambda_max(Phi^H Phi)``,
  which makes the posterior covariance diagonal.
* ``ifsblt_estimate`` -- the inverse-free loop plus per-coefficient
  log-odds ``rho`` updated from a Gaussian likelihood ratio. Coefficients
  whose log-odds go negative get their precision multiplied by
  ``varsigma`` before the next posterior update.

All quantities are complex: transposes are conjugate transposes and
second moments use ``|.|^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg

from ..errors import DivergenceError
from .measurement import lipschitz_V
from .results import RecoveryResult, Trace, nmse

__all__ = [
    "SblHyper",
    "SblState",
    "init_state",
    "majorizer",
    "ifsbl_e_step",
    "threshold_update",
    "inflate_precisions",
    "sbl_posterior",
    "sbl_estimate",
    "ifsbl_estimate",
    "ifsblt_estimate",
]

B_FLOOR = 1e-300
RHO_CLAMP = 700.0


@dataclass(frozen=True)
class SblHyper:
    """Gamma hyper-priors and loop controls.

    ``noise_dof`` selects the count entering the noise-shape update
    ``c~ = c + dof/2``: ``"unknowns"`` uses ``R`` (the default),
    ``"observations"`` uses ``Q``. ``alpha_init``/``gamma_init`` default
    to the prior means ``a/b`` and ``c/d``.
    """

    a: float = 1e-5
    b: float = 1e-5
    c: float = 1e-5
    d: float = 1e-5
    varsigma: float = 10.0
    epsilon: float = 1e-8
    max_iter: int = 1000
    noise_dof: str = "unknowns"
    alpha_init: Optional[float] = None
    gamma_init: Optional[float] = None
    noise_precision: Optional[float] = None

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) <= 0:
            raise ValueError("a, b, c, d must be positive")
        if self.varsigma <= 1:
            raise ValueError("varsigma must exceed 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")
        if self.noise_precision is not None and self.noise_precision <= 0:
            raise ValueError("noise_precision must be positive")
        if self.noise_dof not in ("unknowns", "observations"):
            raise ValueError(f"unknown noise_dof {self.noise_dof!r}")

    def dof(self, Q, R):
        return R if self.noise_dof == "unknowns" else Q


@dataclass(frozen=True)
class SblState:
    """Everything one pass of the loop reads or writes."""

    hyper: SblHyper
    mu: np.ndarray
    alpha_mean: np.ndarray
    gamma_mean: float
    z: np.ndarray
    rho: np.ndarray
    V: float = 0.0
    sigma_diag: Optional[np.ndarray] = None
    sigma_full: Optional[np.ndarray] = None
    a_tilde: float = np.nan
    b_tilde: Optional[np.ndarray] = None
    c_tilde: float = np.nan
    d_tilde: float = np.nan
    h2_mean: Optional[np.ndarray] = None
    g_mean: float = np.nan
    iter: int = 0
    guard_hits: int = 0
    rho_saturations: int = 0
    fallbacks: int = 0
    trace: Trace = field(default_factory=Trace)


def init_state(R, hyper, V=0.0, dtype=complex):
    alpha0 = hyper.a / hyper.b if hyper.alpha_init is None else hyper.alpha_init
    gamma0 = hyper.c / hyper.d if hyper.gamma_init is None else hyper.gamma_init
    if hyper.noise_precision is not None:
        gamma0 = hyper.noise_precision
    return SblState(
        hyper=hyper,
        mu=np.zeros(R, dtype=dtype),
        alpha_mean=np.full(R, float(alpha0)),
        gamma_mean=float(gamma0),
        z=np.zeros(R, dtype=dtype),
        rho=np.zeros(R),
        V=float(V),
    )


def majorizer(h, z, y, Phi, V):
    """Quadratic upper bound on ``||y - Phi h||^2`` that is tight at ``h = z``."""
    r = Phi @ z - y
    d = h - z
    return float(np.sum(np.abs(r) ** 2)
                 + 2.0 * np.real(np.vdot(d, Phi.conj().T @ r))
                 + 0.5 * V * np.sum(np.abs(d) ** 2))


def _gamma_updates(state, hyper, h2, g, dof):
    hits = 0
    b_t = hyper.b + 0.5 * h2
    low = b_t < B_FLOOR
    if low.any():
        hits += int(low.sum())
        b_t = np.maximum(b_t, B_FLOOR)
    a_t = hyper.a + 0.5
    c_t = hyper.c + dof / 2
    d_t = hyper.d + 0.5 * g
    return a_t, b_t, c_t, d_t, hits


def _gamma_mean(hyper, c_t, d_t):
    if hyper.noise_precision is not None:
        return float(hyper.noise_precision)
    return c_t / d_t


def ifsbl_e_step(state, m):
    """One inverse-free posterior update followed by the Gamma updates.

    The posterior of ``h`` around the current estimate ``z`` is Gaussian
    with diagonal covariance ``1 / (V <gamma> / 2 + <alpha>)`` and mean
    ``-<gamma> Sigma (Phi^H Phi z - Phi^H y - V z / 2)``.
    """
    hyper = state.hyper
    Phi, y = m.Phi, m.y
    V = state.V
    alpha, gamma, z = state.alpha_mean, state.gamma_mean, state.z

    sigma = 1.0 / (0.5 * V * gamma + alpha)
    r = Phi @ z - y
    grad = Phi.conj().T @ r
    mu = -gamma * sigma * (grad - 0.5 * V * z)

    d = mu - z
    h2 = np.abs(mu) ** 2 + sigma
    g = (np.sum(np.abs(r) ** 2) + 2.0 * np.real(np.vdot(d, grad))
         + 0.5 * V * (np.sum(np.abs(d) ** 2) + np.sum(sigma)))
    a_t, b_t, c_t, d_t, hits = _gamma_updates(state, hyper, h2, g,
                                              hyper.dof(m.Q, m.R))
    return replace(
        state, mu=mu, sigma_diag=sigma, h2_mean=h2, g_mean=float(g),
        a_tilde=a_t, b_tilde=b_t, c_tilde=c_t, d_tilde=d_t,
        alpha_mean=a_t / b_t, gamma_mean=_gamma_mean(hyper, c_t, d_t),
        guard_hits=state.guard_hits + hits)


def threshold_update(state):
    """Add the log-likelihood ratio of "signal" vs "noise" to ``rho``.

    Elementwise ``rho += ln(alpha/gamma)/2 - |mu|^2 (alpha - gamma)/2``.
    """
    alpha, gamma = state.alpha_mean, state.gamma_mean
    rho = (state.rho + 0.5 * np.log(alpha / gamma)
           - 0.5 * np.abs(state.mu) ** 2 * (alpha - gamma))
    out = np.abs(rho) > RHO_CLAMP
    hits = int(out.sum())
    if hits:
        rho = np.clip(rho, -RHO_CLAMP, RHO_CLAMP)
    return replace(state, rho=rho, rho_saturations=state.rho_saturations + hits)


def inflate_precisions(state):
    """Multiply ``<alpha_n>`` by ``varsigma`` wherever ``rho_n < 0``."""
    flagged = state.rho < 0
    alpha = np.where(flagged, state.hyper.varsigma * state.alpha_mean,
                     state.alpha_mean)
    return replace(state, alpha_mean=alpha)


def _rel_change(z_new, z_old):
    den = np.sum(np.abs(z_old) ** 2)
    if den == 0:
        return np.inf
    return float(np.sum(np.abs(z_new - z_old) ** 2) / den)


def _check_finite(state, it):
    if not (np.all(np.isfinite(state.mu)) and np.all(np.isfinite(state.alpha_mean))
            and np.isfinite(state.gamma_mean)):
        raise DivergenceError(
            f"non-finite solver state at iteration {it} "
            f"(gamma={state.gamma_mean!r}, max|mu|={np.nanmax(np.abs(state.mu))!r})",
            iteration=it)


def _inverse_free_loop(m, hyper, use_threshold, h_true, name):
    hyper = hyper or SblHyper()
    V = lipschitz_V(m.Phi)
    state = init_state(m.R, hyper, V=V, dtype=np.result_type(m.Phi, m.y, complex))
    trace = Trace()
    converged = False
    for it in range(1, hyper.max_iter + 1):
        state = ifsbl_e_step(state, m)
        if use_threshold:
            state = inflate_precisions(threshold_update(state))
        z_old = state.z
        state = replace(state, z=state.mu, iter=it)
        _check_finite(state, it)
        rc = _rel_change(state.z, z_old)
        trace.append(rc, nmse(h_true, state.z) if h_true is not None else np.nan,
                     state.a_tilde, state.c_tilde)
        if rc < hyper.epsilon:
            converged = True
            break
    state = replace(state, trace=trace)
    support = np.flatnonzero(state.rho >= 0) if use_threshold else None
    result = RecoveryResult(
        h_hat=state.z.copy(), iterations=state.iter, converged=converged,
        trace=trace, algorithm=name, support=support,
        rho=state.rho.copy() if use_threshold else None,
        guard_hits=state.guard_hits, rho_saturations=state.rho_saturations,
        state=state)
    return result


def ifsbl_estimate(m, hyper=None, h_true=None):
    """Inverse-free SBL; returns a :class:`RecoveryResult`."""
    return _inverse_free_loop(m, hyper, False, h_true, "ifsbl")


def ifsblt_estimate(m, hyper=None, h_true=None):
    """Inverse-free SBL with the adaptive log-odds threshold."""
    return _inverse_free_loop(m, hyper, True, h_true, "ifsblt")


def sbl_posterior(Phi, y, alpha, gamma, gram=None, Phiy=None):
    """Gaussian posterior ``(mu, Sigma, jitter_used)`` for fixed precisions.

    ``Sigma = (gamma Phi^H Phi + diag(alpha))^{-1}`` via Cholesky; on
    factorisation failure a ``1e-12 * trace / R`` ridge is added.
    """
    if gram is None:
        gram = Phi.conj().T @ Phi
    if Phiy is None:
        Phiy = Phi.conj().T @ y
    A = gamma * gram
    A[np.diag_indices_from(A)] += alpha
    R = A.shape[0]
    jitter = False
    try:
        cf = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        jitter = True
        A[np.diag_indices_from(A)] += 1e-12 * np.real(np.trace(A)) / R
        cf = scipy.linalg.cho_factor(A, lower=True, check_finite=False)
    potri, = scipy.linalg.get_lapack_funcs(("potri",), (cf[0],))
    low, info = potri(cf[0], lower=1)
    if info != 0:
        raise np.linalg.LinAlgError(f"potri failed with info={info}")
    # potri fills the lower triangle only
    Sigma = np.tril(low) + np.tril(low, -1).conj().T
    mu = gamma * (Sigma @ Phiy)
    return mu, Sigma, jitter


def _posterior_obs_space(Phi, y, alpha, gamma):
    """Posterior moments through the ``Q x Q`` matrix ``C = I/gamma + Phi A^-1 Phi^H``.

    Returns ``(mu, diag Sigma, tr(Phi Sigma Phi^H), jitter_used, W)`` with
    ``Sigma = A^-1 - W^H W``. Cheaper than the ``R x R`` form when ``Q < R``.
    """
    Q = Phi.shape[0]
    ainv = 1.0 / alpha
    PA = Phi * ainv
    C = PA @ Phi.conj().T
    C[np.diag_indices_from(C)] += 1.0 / gamma
    jitter = False
    try:
        L = scipy.linalg.cholesky(C, lower=True, check_finite=False)
    except np.linalg.LinAlgError:
        jitter = True
        C[np.diag_indices_from(C)] += 1e-12 * np.real(np.trace(C)) / Q
        L = scipy.linalg.cholesky(C, lower=True, check_finite=False)
    W = scipy.linalg.solve_triangular(L, PA, lower=True, check_finite=False)
    u = scipy.linalg.solve_triangular(L, y, lower=True, check_finite=False)
    mu = W.conj().T @ u
    sd = ainv - np.sum(np.abs(W) ** 2, axis=0)
    # Phi Sigma Phi^H = (I - C^-1 / gamma) / gamma
    Linv = scipy.linalg.solve_triangular(L, np.eye(Q), lower=True, check_finite=False)
    tr_cinv = np.sum(np.abs(Linv) ** 2)
    return mu, sd, float((Q - tr_cinv / gamma) / gamma), jitter, W


def _sigma_from_w(alpha, W):
    S = np.diag(1.0 / alpha).astype(W.dtype) - W.conj().T @ W
    return 0.5 * (S + S.conj().T)


def sbl_estimate(m, hyper=None, h_true=None):
    """Classic SBL with the full posterior covariance.

    When ``Q < R`` the moments are computed in the observation space and
    the full ``Sigma`` is formed once, for the returned state.
    """
    hyper = hyper or SblHyper()
    Phi, y = m.Phi, m.y
    obs_space = m.Q < m.R
    if not obs_space:
        gram = Phi.conj().T @ Phi
        Phiy = Phi.conj().T @ y
    state = init_state(m.R, hyper, dtype=np.result_type(Phi, y, complex))
    trace = Trace()
    converged = False
    dof = hyper.dof(m.Q, m.R)
    W = Sigma = None
    for it in range(1, hyper.max_iter + 1):
        alpha_used = state.alpha_mean
        if obs_space:
            mu, sd, tr_term, jit, W = _posterior_obs_space(
                Phi, y, alpha_used, state.gamma_mean)
        else:
            mu, Sigma, jit = sbl_posterior(Phi, y, alpha_used, state.gamma_mean,
                                           gram, Phiy)
            sd = np.real(np.diag(Sigma)).copy()
            tr_term = np.real(np.sum(gram * Sigma.T))
        h2 = np.abs(mu) ** 2 + sd
        resid = np.sum(np.abs(y - Phi @ mu) ** 2) + tr_term
        a_t, b_t, c_t, d_t, hits = _gamma_updates(state, hyper, h2, resid, dof)
        z_old = state.z
        state = replace(
            state, mu=mu, sigma_full=Sigma, sigma_diag=sd, h2_mean=h2,
            g_mean=float(resid), a_tilde=a_t, b_tilde=b_t, c_tilde=c_t,
            d_tilde=d_t, alpha_mean=a_t / b_t,
            gamma_mean=_gamma_mean(hyper, c_t, d_t), z=mu,
            iter=it, guard_hits=state.guard_hits + hits,
            fallbacks=state.fallbacks + int(jit))
        _check_finite(state, it)
        rc = _rel_change(mu, z_old)
        trace.append(rc, nmse(h_true, mu) if h_true is not None else np.nan,
                     a_t, c_t)
        if rc < hyper.epsilon:
            converged = True
            break
    if obs_space and W is not None:
        state = replace(state, sigma_full=_sigma_from_w(alpha_used, W))
    state = replace(state, trace=trace)
    result = RecoveryResult(
        h_hat=state.z.copy(), iterations=state.iter, converged=converged,
        trace=trace, algorithm="sbl", guard_hits=state.guard_hits,
        fallbacks=state.fallbacks, state=state)
    return result
