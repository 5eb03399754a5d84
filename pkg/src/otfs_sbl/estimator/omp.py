"""Orthogonal matching pursuit."""

from __future__ import annotations

import numpy as np

from ..errors import InfeasibleError
from .results import RecoveryResult, Trace, nmse

__all__ = ["omp_estimate", "omp_default_sparsity"]


def omp_default_sparsity(n_paths, eta):
    """Block budget covering the fractional spread of every path."""
    return n_paths * (2 * eta + 1)


def omp_estimate(m, sparsity=None, residual_tol=None, h_true=None):
    """Greedy recovery with a least-squares refit after every selection.

    Stops after ``sparsity`` atoms, or once ``||r|| <= residual_tol``.
    With neither given, the tolerance defaults to ``sqrt(Q * noise_var)``
    when the measurement carries a noise variance.

    Atoms are ranked by ``|phi_j^H r| / ||phi_j||`` so that unnormalised
    dictionaries behave; all-zero columns are never selected.
    """
    Phi, y = m.Phi, m.y
    Q, R = Phi.shape
    if sparsity is None and residual_tol is None:
        if m.noise_var is None:
            raise ValueError("give a sparsity or a residual tolerance")
        residual_tol = np.sqrt(Q * m.noise_var)
    if sparsity is not None and sparsity > Q:
        raise InfeasibleError(f"sparsity {sparsity} exceeds the {Q} observations")
    norms = np.linalg.norm(Phi, axis=0)
    usable = norms > 0
    budget = min(Q, int(usable.sum()))
    if sparsity is not None:
        budget = min(budget, sparsity)

    support = []
    coef = np.zeros(0, dtype=complex)
    r = y.astype(complex)
    trace = Trace()
    res_norm = np.linalg.norm(r)
    converged = residual_tol is not None and res_norm <= residual_tol
    while len(support) < budget and not converged:
        corr = np.zeros(R)
        corr[usable] = np.abs(Phi[:, usable].conj().T @ r) / norms[usable]
        corr[support] = -1.0
        j = int(np.argmax(corr))
        if corr[j] <= 0:
            break
        support.append(j)
        coef, *_ = np.linalg.lstsq(Phi[:, support], y, rcond=None)
        r = y - Phi[:, support] @ coef
        prev = res_norm
        res_norm = np.linalg.norm(r)
        h = np.zeros(R, dtype=complex)
        h[support] = coef
        trace.append((prev - res_norm) / prev if prev > 0 else 0.0,
                     nmse(h_true, h) if h_true is not None else np.nan)
        trace.residual.append(float(res_norm))
        if residual_tol is not None and res_norm <= residual_tol:
            converged = True
    if sparsity is not None and len(support) == budget:
        converged = True
    h_hat = np.zeros(R, dtype=complex)
    h_hat[support] = coef
    return RecoveryResult(h_hat=h_hat, iterations=len(support), converged=converged,
                          trace=trace, algorithm="omp",
                          support=np.array(sorted(support), dtype=int))
