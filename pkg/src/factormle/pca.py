"""Principal-components estimation: EM starting values and efficiency baseline.

PC minimizes sum_t ||z_t - alpha - Lambda f_t||^2, i.e. maximum likelihood
under a homoskedastic error covariance.  It is cheap and consistent for
large N and T but, unlike the quasi-MLE, ignores heteroskedasticity: its
loading error carries an extra O(1/N) component and its factor-score
covariance takes a sandwich form.
"""
from __future__ import annotations

import numpy as np

from .errors import IllConditionedError, RankError
from .linalg import sign_normalize_columns, spd_solve
from .model import Dataset, sample_second_moment


def pc_fit(d: Dataset, n_factors: int):
    """Principal-components fit of (loadings, scores, idiosyncratic variances).

    Loadings are the top eigenvectors of M_zz scaled by the square roots of
    the descending eigenvalues, so (1/N) Lambda' Lambda is diagonal with
    descending entries and the implied score moment is approximately the
    identity.  Scores are the least-squares regression of the demeaned data
    on the loadings and ``idio_var[i]`` is the mean squared residual of
    variable i.

    The eigenproblem is solved on the N x N second moment when N <= T and
    on the T x T Gram matrix otherwise, for a min(N, T)^3 cost.

    Returns
    -------
    (loadings, scores, idio_var) : (N x r, T x r, N) arrays
    """
    n, t = d.n_vars, d.n_obs
    r = int(n_factors)
    if not 1 <= r < min(n, t):
        raise RankError(f"need 1 <= r < min(N, T) = {min(n, t)}, got r={r}")
    xc = d.values - d.means()[:, None]

    if n <= t:
        m = sample_second_moment(d)
        evals, evecs = np.linalg.eigh(m)
        evals, evecs = evals[::-1], evecs[:, ::-1]
        _check_rank(evals, r, n)
        loadings = evecs[:, :r] * np.sqrt(evals[:r])
    else:
        gram = xc.T @ xc / t
        evals, evecs = np.linalg.eigh((gram + gram.T) / 2.0)
        evals, evecs = evals[::-1], evecs[:, ::-1]
        _check_rank(evals, r, n)
        # Back out the N-side eigenvectors: v_k = X w_k / sqrt(T mu_k).
        loadings = xc @ evecs[:, :r] / np.sqrt(t)

    loadings, _ = sign_normalize_columns(loadings)
    gram_l = loadings.T @ loadings
    scores = spd_solve(gram_l, loadings.T @ xc, "loading Gram matrix").T
    resid = xc - loadings @ scores.T
    idio_var = np.mean(resid**2, axis=1)
    return loadings, scores, idio_var


def _check_rank(evals, r, n):
    tol = n * np.finfo(float).eps * max(evals[0], 0.0)
    if evals[r - 1] <= tol:
        raise RankError(
            f"requested {r} components but the second moment has numerical rank "
            f"{int(np.sum(evals > tol))}"
        )


def pc_objective(d: Dataset, idio_var) -> float:
    """Total squared residual of a PC fit (never increases with r)."""
    return float(d.n_obs * np.sum(idio_var))


def pc_sandwich_cov(loadings, idio_var) -> np.ndarray:
    """Sandwich covariance of the PC factor scores (per sqrt(N) scaling).

    With ``M = (1/N) sum_i lambda_i lambda_i'`` and
    ``U = (1/N) sum_i lambda_i lambda_i' sigma_i^2`` the estimator returns
    ``M^{-1} U M^{-1}``.  Under homoskedastic noise this collapses to
    ``sigma^2 M^{-1}``; in general it dominates the GLS-score covariance
    ``Q^{-1}`` in the positive-semidefinite order.
    """
    lam = np.asarray(loadings, dtype=float)
    s2 = np.asarray(idio_var, dtype=float)
    n = lam.shape[0]
    m_ll = lam.T @ lam / n
    upsilon = (lam * s2[:, None]).T @ lam / n
    try:
        half = spd_solve(m_ll, upsilon, "loading second moment")
        out = spd_solve(m_ll, half.T, "loading second moment")
    except IllConditionedError as exc:
        raise RankError(f"loading second moment is singular: {exc}") from None
    return (out + out.T) / 2.0
