"""Plug-in asymptotic covariances for loadings, factor moments, variances and scores.

Population limits are replaced by their sample counterparts at the fitted
parameters, so every covariance here is a first-order approximation:

* ``Q_hat   = (1/N) Lambda' Sigma_ee^{-1} Lambda``
* ``Omega_hat = (1/N) sum_i sigma_i^{-4} (lambda_i (x) lambda_i)
  (lambda_i (x) lambda_i)'`` (positive semidefinite by construction)
* ``Sigma_eer = diag(sigma_1^2 .. sigma_r^2)`` (first r variables)
* ``M_ff`` plays its own limit.

Everything is returned at the finite-sample scale: covariances of loadings
and idiosyncratic variances are divided by T, factor-moment covariances by
T (or N*T where the faster rate applies) and score covariances by N.

Under IC4 and IC5 the limiting covariances of loadings and scores depend on
auxiliary rotation-moment matrices that are not identified by the fitted
parameters alone; those requests raise :class:`UnsupportedICError` rather
than returning a wrong number.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, InvalidKurtosisError, UnsupportedICError
from .em import FactorEstimate
from .linalg import spd_inv
from .model import Dataset, IdentificationTag
from .scores import gls_scores


# --------------------------------------------------------------------------
# vectorization helpers and duplication matrices
# --------------------------------------------------------------------------

def vech(s) -> np.ndarray:
    """Stack the lower triangle (including the diagonal) column by column."""
    s = np.asarray(s)
    r = s.shape[0]
    return np.concatenate([s[j:, j] for j in range(r)])


def veck(a) -> np.ndarray:
    """Stack the strictly-below-diagonal elements column by column."""
    a = np.asarray(a)
    r = a.shape[0]
    if r < 2:
        return np.zeros(0)
    return np.concatenate([a[j + 1 :, j] for j in range(r)])


def dup_matrix(r: int):
    """The duplication matrix D_r with vec(S) = D_r vech(S), and its pseudoinverse.

    D_r is r^2 x r(r+1)/2; the Moore-Penrose inverse satisfies
    ``D_r^+ D_r = I`` and ``D_r^+ vec(S) = vech(S)`` for symmetric S.
    """
    if r < 1:
        raise InvalidInputError("r must be at least 1")
    cols = r * (r + 1) // 2
    d = np.zeros((r * r, cols))
    col = 0
    for j in range(r):
        for i in range(j, r):
            d[i + j * r, col] = 1.0
            d[j + i * r, col] = 1.0
            col += 1
    return d, np.linalg.pinv(d)


def gen_dup_tilde(m) -> np.ndarray:
    """Generalized duplication matrix for a diagonal matrix M, r^2 x r(r+1)/2.

    Row k (1-based, with j = floor((k-1)/r) + 1 and i = k - (j-1) r) has a
    single nonzero entry: a 1 at column (2r-j+2)(j-1)/2 + i - j + 1 when
    i >= j, and -m_j/m_i at column (2r-i+2)(i-1)/2 - i + j + 1 when i < j.

    Equivalently, A = unvec(gen_dup_tilde(M) @ vech(S)) copies the lower
    triangle of the symmetric S and fills the upper one so that
    M A + A' M is diagonal.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim == 2:
        off = m - np.diag(np.diag(m))
        if np.abs(off).max(initial=0.0) > 1e-12 * max(np.abs(m).max(), 1e-300):
            raise InvalidInputError("M must be diagonal")
        m = np.diag(m).copy()
    if m.ndim != 1:
        raise InvalidInputError("M must be a diagonal matrix or a vector of diagonals")
    if np.any(m == 0):
        raise InvalidInputError("M must have nonzero diagonal entries")
    r = m.size
    out = np.zeros((r * r, r * (r + 1) // 2))
    for k in range(1, r * r + 1):
        j = (k - 1) // r + 1
        i = k - (j - 1) * r
        if i >= j:
            col = (2 * r - j + 2) * (j - 1) // 2 + i - j + 1
            out[k - 1, col - 1] = 1.0
        else:
            col = (2 * r - i + 2) * (i - 1) // 2 - i + j + 1
            out[k - 1, col - 1] = -m[j - 1] / m[i - 1]
    return out


def gen_dup_bar(r: int) -> np.ndarray:
    """Skew-symmetric duplication matrix: vec(A) = gen_dup_bar(r) @ veck(A).

    Shape r^2 x r(r-1)/2; degenerate (a single zero row of width 0) for
    r = 1, since a 1 x 1 skew-symmetric matrix is identically zero.
    """
    if r < 1:
        raise InvalidInputError("r must be at least 1")
    out = np.zeros((r * r, r * (r - 1) // 2))
    col = 0
    for j in range(r):
        for i in range(j + 1, r):
            out[i + j * r, col] = 1.0
            out[j + i * r, col] = -1.0
            col += 1
    return out


def diag_selector(r: int) -> np.ndarray:
    """J_r with diag{M} = J_r vec(M); r x r^2, one 1 per row."""
    j = np.zeros((r, r * r))
    for k in range(r):
        j[k, k + k * r] = 1.0
    return j


# --------------------------------------------------------------------------
# plug-in covariances
# --------------------------------------------------------------------------

_SUPPLEMENTARY_MSG = (
    "no closed-form plug-in is implemented under IC4/IC5: the limiting "
    "covariance depends on rotation-moment matrices that the fitted "
    "parameters alone do not identify"
)


def _q_hat(params):
    lam = params.loadings
    return (lam / params.idio_var[:, None]).T @ lam / params.n_vars


def _sigma_eer(params):
    r = params.n_factors
    return np.diag(params.idio_var[:r])


def loading_cov(est: FactorEstimate, j: int) -> np.ndarray:
    """Finite-sample covariance of the j-th loading vector (r x r).

    IC2/IC3: ``M_ff^{-1} sigma_j^2 / T``.  IC1 adds the contribution of the
    first r observation noises: ``M_ff^{-1} (lambda_j' Sigma_eer lambda_j +
    sigma_j^2) / T``.
    """
    params = est.params
    if not 0 <= j < params.n_vars:
        raise InvalidInputError(f"variable index {j} out of range")
    mff_inv = spd_inv(params.factor_cov, "factor second moment")
    s2j = params.idio_var[j]
    if est.tag in (IdentificationTag.IC2, IdentificationTag.IC3):
        scale = s2j
    elif est.tag is IdentificationTag.IC1:
        lam_j = params.loadings[j]
        scale = float(lam_j @ _sigma_eer(params) @ lam_j) + s2j
    else:
        raise UnsupportedICError(_SUPPLEMENTARY_MSG)
    return mff_inv * scale / est.n_obs


@dataclass(frozen=True)
class FactorCovCov:
    """Finite-sample covariance of the estimated factor-moment elements.

    ``basis`` says which elements: "vech" (IC1), "diag" (IC2, IC4) or
    "known" (IC3/IC5, where the moment is fixed by the identification and
    the covariance is exactly zero).  ``rate`` records the convergence rate
    the plug-in was scaled by.
    """

    covariance: np.ndarray
    ic: IdentificationTag
    basis: str  # "vech" | "diag" | "known"
    rate: str  # "sqrt_T" | "sqrt_NT" | "exact"


def mff_cov(est: FactorEstimate) -> FactorCovCov:
    """Plug-in covariance of the estimated factor second moment.

    IC1 (vech basis, rate sqrt(T)): ``4 D_r^+ (Sigma_eer (x) M_ff) D_r^+'``.
    IC2 (diag basis, rate sqrt(NT)): ``J_r [2 (I (x) M_ff) Omega (I (x)
    M_ff) + 4 (Q (x) M_ff)] J_r'`` (derived under vanishing N/T and normal
    errors).  IC4 (diag basis, rate sqrt(T)):
    ``4 J_r [(Lambda_1' Sigma_eer^{-1} Lambda_1)^{-1} (x) M_ff] J_r'``.
    IC3/IC5: the moment is known, covariance exactly zero.
    """
    params = est.params
    r = params.n_factors
    n, t = params.n_vars, est.n_obs
    mff = params.factor_cov
    tag = est.tag

    if tag in (IdentificationTag.IC3, IdentificationTag.IC5):
        size = r * (r + 1) // 2
        return FactorCovCov(np.zeros((size, size)), tag, "known", "exact")

    if tag is IdentificationTag.IC1:
        _, d_plus = dup_matrix(r)
        asy = 4.0 * d_plus @ np.kron(_sigma_eer(params), mff) @ d_plus.T
        return FactorCovCov(asy / t, tag, "vech", "sqrt_T")

    j_r = diag_selector(r)
    if tag is IdentificationTag.IC2:
        lam = params.loadings
        s2 = params.idio_var
        kron_rows = (lam[:, :, None] * lam[:, None, :]).reshape(n, r * r)
        omega = (kron_rows / s2[:, None] ** 2).T @ kron_rows / n
        i_mff = np.kron(np.eye(r), mff)
        inner = 2.0 * i_mff @ omega @ i_mff + 4.0 * np.kron(_q_hat(params), mff)
        return FactorCovCov(j_r @ inner @ j_r.T / (n * t), tag, "diag", "sqrt_NT")

    if tag is IdentificationTag.IC4:
        lam1 = params.loadings[:r, :]
        eer_inv = np.diag(1.0 / params.idio_var[:r])
        core = spd_inv(lam1.T @ eer_inv @ lam1, "anchored loading information")
        inner = 4.0 * np.kron(core, mff)
        return FactorCovCov(j_r @ inner @ j_r.T / t, tag, "diag", "sqrt_T")

    raise UnsupportedICError(_SUPPLEMENTARY_MSG)  # pragma: no cover - enum closed


def idio_var_cov(est: FactorEstimate, j: int, kurtosis: float | None = None) -> float:
    """Finite-sample variance of the j-th idiosyncratic variance estimate.

    ``sigma_j^4 (2 + kappa_j) / T`` with kappa_j the excess kurtosis of the
    j-th error; omitted kurtosis means the Gaussian default kappa_j = 0.
    Holds under every identification variant.
    """
    params = est.params
    if not 0 <= j < params.n_vars:
        raise InvalidInputError(f"variable index {j} out of range")
    kappa = 0.0 if kurtosis is None else float(kurtosis)
    if kappa < -2.0:
        raise InvalidKurtosisError(f"excess kurtosis {kappa} is below -2")
    return float(params.idio_var[j] ** 4 * (2.0 + kappa) / est.n_obs)


def estimate_excess_kurtosis(d: Dataset, est: FactorEstimate) -> np.ndarray:
    """Per-variable excess kurtosis of the GLS-score residuals.

    A convenience for :func:`idio_var_cov` only: the estimator itself never
    forms residuals, so treat these as rough, inference-only inputs.
    """
    params = est.params
    xc = d.values - d.means()[:, None]
    f = gls_scores(d, params).values
    resid = xc - params.loadings @ f.T
    m2 = np.mean(resid**2, axis=1)
    m4 = np.mean(resid**4, axis=1)
    return m4 / m2**2 - 3.0


def score_cov(
    est: FactorEstimate,
    f_t,
    n_vars: int | None = None,
    n_obs: int | None = None,
) -> np.ndarray:
    """Finite-sample covariance of a GLS factor score (r x r).

    IC2: ``I_r / N`` exactly.  IC3: ``Q^{-1} / N``.  IC1 adds a term driven
    by Delta = N/T: ``(Delta f_t' M_ff^{-1} f_t Sigma_eer + Q^{-1}) / N``,
    which collapses to the IC3 value as Delta -> 0.
    """
    params = est.params
    n = params.n_vars if n_vars is None else int(n_vars)
    t = est.n_obs if n_obs is None else int(n_obs)
    r = params.n_factors
    tag = est.tag

    if tag is IdentificationTag.IC2:
        return np.eye(r) / n
    q_inv = spd_inv(_q_hat(params), "scaled loading moment")
    if tag is IdentificationTag.IC3:
        return q_inv / n
    if tag is IdentificationTag.IC1:
        f_t = np.asarray(f_t, dtype=float).reshape(r)
        delta = n / t
        mff_inv = spd_inv(params.factor_cov, "factor second moment")
        lead = delta * float(f_t @ mff_inv @ f_t) * _sigma_eer(params)
        return (lead + q_inv) / n
    raise UnsupportedICError(_SUPPLEMENTARY_MSG)
