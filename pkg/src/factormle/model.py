"""Domain types and covariance-structure computations for diagonal-noise factor models.

An observed panel is an N x T matrix (variable i in row i, time t in column
t) modeled as ``z_t = alpha + Lambda f_t + e_t`` with r common factors,
diagonal idiosyncratic covariance ``Sigma_ee = diag(sigma_1^2..sigma_N^2)``
and factor second moment ``M_ff``.  The implied covariance is

    Sigma_zz = Lambda M_ff Lambda' + Sigma_ee

and the fitting objective is the Gaussian quasi log-likelihood

    -(1/2N) log|Sigma_zz| - (1/2N) tr(M_zz Sigma_zz^{-1}),

where ``M_zz`` is the sample second moment of the demeaned data (divided by
T, not T-1).  The dense N x N matrix ``Sigma_zz`` is never formed: its
inverse enters only through the diagonal-plus-low-rank identity

    Sigma_zz^{-1} = Sigma_ee^{-1} - Sigma_ee^{-1} Lambda A^{-1} Lambda' Sigma_ee^{-1},
    A = M_ff^{-1} + Lambda' Sigma_ee^{-1} Lambda,

and its determinant through ``|Sigma_zz| = |Sigma_ee| |M_ff| |A|``.  The
r x r matrix ``A`` is factorized symmetrically and a failure raises rather
than regularizes.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import InvalidInputError
from .linalg import spd_cholesky, spd_inv, spd_logdet

# Default bounds on idiosyncratic variances, as multiples of the mean sample
# variance.  They keep every estimate inside a fixed compact box.
VAR_FLOOR_SCALE = 1e-8
VAR_CEILING_SCALE = 1e8


class IdentificationTag(Enum):
    """The five identification variants a fitted model can be expressed in."""

    IC1 = "IC1"
    IC2 = "IC2"
    IC3 = "IC3"
    IC4 = "IC4"
    IC5 = "IC5"


def _readonly(a):
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True, eq=False)
class Dataset:
    """An observed N x T panel: variable i in row i, time t in column t.

    Values are copied, validated (finite, N >= 1, T >= 2) and frozen, so a
    Dataset is safe to share across threads.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2:
            raise InvalidInputError("dataset values must be a 2-d array (N x T)")
        n, t = v.shape
        if n < 1:
            raise InvalidInputError("dataset needs at least one variable")
        if t < 2:
            raise InvalidInputError("dataset needs at least two time points")
        if not np.all(np.isfinite(v)):
            raise InvalidInputError("dataset contains non-finite entries")
        object.__setattr__(self, "values", _readonly(v))

    @property
    def n_vars(self):
        return self.values.shape[0]

    @property
    def n_obs(self):
        return self.values.shape[1]

    def means(self):
        """Per-variable time mean z_bar, shape (N,)."""
        return self.values.mean(axis=1)

    def demean(self):
        """Return a copy with each variable's time mean removed (idempotent)."""
        return Dataset(self.values - self.means()[:, None])


@dataclass(frozen=True, eq=False)
class FactorParams:
    """Parameters (Lambda, Sigma_ee, M_ff, alpha) of a fitted factor model.

    ``idio_var`` stores only the diagonal of Sigma_ee; no dense N x N matrix
    is ever allocated.  ``intercept`` holds alpha, which is always estimated
    by the sample mean of the data.
    """

    loadings: np.ndarray  # (N, r)
    idio_var: np.ndarray  # (N,)
    factor_cov: np.ndarray  # (r, r)
    intercept: np.ndarray | None = None  # (N,), defaults to zeros

    def __post_init__(self):
        lam = np.asarray(self.loadings, dtype=float)
        s2 = np.asarray(self.idio_var, dtype=float)
        mff = np.asarray(self.factor_cov, dtype=float)
        if lam.ndim != 2:
            raise InvalidInputError("loadings must be a 2-d array (N x r)")
        n, r = lam.shape
        if not 1 <= r < n:
            raise InvalidInputError(f"need 1 <= r < N, got r={r}, N={n}")
        if s2.shape != (n,):
            raise InvalidInputError("idio_var must have one entry per variable")
        if mff.shape != (r, r):
            raise InvalidInputError("factor_cov must be r x r")
        if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(s2)) and np.all(np.isfinite(mff))):
            raise InvalidInputError("parameters contain non-finite entries")
        if np.any(s2 <= 0):
            raise InvalidInputError("idiosyncratic variances must be positive")
        asym = np.abs(mff - mff.T).max()
        if asym > 1e-12 * max(np.abs(mff).max(), 1e-300):
            raise InvalidInputError("factor_cov must be symmetric (1e-12 relative)")
        if np.linalg.eigvalsh((mff + mff.T) / 2.0).min() <= 0:
            raise InvalidInputError("factor_cov must be positive definite")
        alpha = self.intercept
        if alpha is None:
            alpha = np.zeros(n)
        alpha = np.asarray(alpha, dtype=float)
        if alpha.shape != (n,) or not np.all(np.isfinite(alpha)):
            raise InvalidInputError("intercept must be a finite length-N vector")
        object.__setattr__(self, "loadings", _readonly(lam))
        object.__setattr__(self, "idio_var", _readonly(s2))
        object.__setattr__(self, "factor_cov", _readonly(mff))
        object.__setattr__(self, "intercept", _readonly(alpha))

    @property
    def n_vars(self):
        return self.loadings.shape[0]

    @property
    def n_factors(self):
        return self.loadings.shape[1]


def sample_second_moment(d: Dataset) -> np.ndarray:
    """Sample second moment M_zz = (1/T) sum_t (z_t - z_bar)(z_t - z_bar)'.

    Divides by T rather than T - 1, so this is not the unbiased sample
    covariance.  The result is symmetric PSD with rank <= min(N, T - 1).
    """
    xc = d.values - d.means()[:, None]
    m = xc @ xc.T / d.n_obs
    return (m + m.T) / 2.0


def _check_pair(m_zz, params):
    m_zz = np.asarray(m_zz, dtype=float)
    n = params.n_vars
    if m_zz.shape != (n, n):
        raise InvalidInputError(
            f"second moment is {m_zz.shape}, parameters have N={n}"
        )
    if not np.all(np.isfinite(m_zz)):
        raise InvalidInputError("second moment contains non-finite entries")
    return m_zz


def log_likelihood(m_zz: np.ndarray, params: FactorParams) -> float:
    """Quasi log-likelihood -(1/2N)[log|Sigma_zz| + tr(M_zz Sigma_zz^{-1})].

    Evaluated through the diagonal-plus-low-rank identity; cost is O(N^2 r)
    and no N x N matrix beyond ``m_zz`` itself is touched.
    """
    m_zz = _check_pair(m_zz, params)
    lam = params.loadings
    s2 = params.idio_var
    n = params.n_vars

    u = lam / s2[:, None]
    b = lam.T @ u
    mff_inv = spd_inv(params.factor_cov, "factor second moment")
    a = mff_inv + b
    logdet = (
        float(np.sum(np.log(s2)))
        + spd_logdet(params.factor_cov, "factor second moment")
        + spd_logdet(a, "low-rank update matrix")
    )
    w = u.T @ m_zz @ u
    g = spd_inv(a, "low-rank update matrix")
    trace = float(np.sum(np.diag(m_zz) / s2)) - float(np.sum(g * w))
    return -0.5 / n * (logdet + trace)


def foc_residuals(m_zz: np.ndarray, params: FactorParams) -> tuple[float, float, float]:
    """Normalized Frobenius norms of the three stationarity conditions.

    The three residual matrices are::

        R1 = Lambda' Sigma_zz^{-1} (M_zz - Sigma_zz)
        R2 = diag(Sigma_zz^{-1}) - diag(Sigma_zz^{-1} M_zz Sigma_zz^{-1})
        R3 = Lambda' Sigma_zz^{-1} Lambda
             - Lambda' Sigma_zz^{-1} M_zz Sigma_zz^{-1} Lambda

    each divided by the norm of its leading term, so the result is scale
    free.  All three vanish at a stationary point of the quasi likelihood;
    R3 is algebraically redundant given R1.
    """
    m_zz = _check_pair(m_zz, params)
    lam = params.loadings
    s2 = params.idio_var

    u = lam / s2[:, None]
    mff_inv = spd_inv(params.factor_cov, "factor second moment")
    a = mff_inv + lam.T @ u
    g = spd_inv(a, "low-rank update matrix")

    # Lambda' Sigma_zz^{-1} = M_ff^{-1} A^{-1} Lambda' Sigma_ee^{-1}.
    lam_szz = mff_inv @ g @ u.T
    t1_lead = lam_szz @ m_zz
    r1 = t1_lead - lam.T
    res1 = float(np.linalg.norm(r1) / np.linalg.norm(t1_lead))

    y = m_zz @ u
    c = u.T @ y
    ug = u @ g
    gcg = g @ c @ g
    d_szz = 1.0 / s2 - np.sum(ug * u, axis=1)
    d_mid = (
        np.diag(m_zz) / s2**2
        - 2.0 * np.sum((y @ g) * u, axis=1) / s2
        + np.sum((u @ gcg) * u, axis=1)
    )
    res2 = float(np.linalg.norm(d_szz - d_mid) / np.linalg.norm(d_szz))

    # Sigma_zz^{-1} Lambda = Sigma_ee^{-1} Lambda A^{-1} M_ff^{-1}.
    szz_lam = ug @ mff_inv
    t3_lead = lam_szz @ lam
    r3 = t3_lead - t1_lead @ szz_lam
    res3 = float(np.linalg.norm(r3) / np.linalg.norm(t3_lead))
    return res1, res2, res3


def transpose_representation(d: Dataset) -> Dataset:
    """The T x N panel obtained by switching the roles of variables and time.

    Fitting the transposed data estimates the factor scores and the
    time-dimension heteroskedasticity in place of the loadings and the
    cross-sectional variances; the representation with the smaller "N" has
    fewer parameters.
    """
    return Dataset(d.values.T)


def read_dataset_csv(path) -> Dataset:
    """Read a Dataset from CSV: rows are time points, columns are variables.

    An optional header row (any cell that does not parse as a number) is
    skipped.  Decimal points are locale independent; missing or malformed
    values are rejected with the offending line number.
    """
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        for row in reader:
            if not row or not any(cell.strip() for cell in row):
                continue
            rows.append((reader.line_num, row))
    if not rows:
        raise InvalidInputError(f"{path}: no data rows found")

    def parse(line_num, row):
        out = []
        for j, cell in enumerate(row):
            s = cell.strip()
            if not s:
                raise InvalidInputError(f"{path}: line {line_num}: missing value in column {j + 1}")
            try:
                x = float(s)
            except ValueError:
                raise InvalidInputError(
                    f"{path}: line {line_num}: cannot parse {s!r} as a number"
                ) from None
            if not np.isfinite(x):
                raise InvalidInputError(f"{path}: line {line_num}: non-finite value in column {j + 1}")
            out.append(x)
        return out

    try:
        first = parse(*rows[0])
    except InvalidInputError:
        first = None  # header row
    data = [] if first is None else [first]
    width = None if first is None else len(first)
    for line_num, row in rows[1:]:
        vals = parse(line_num, row)
        if width is None:
            width = len(vals)
        elif len(vals) != width:
            raise InvalidInputError(
                f"{path}: line {line_num}: expected {width} columns, found {len(vals)}"
            )
        data.append(vals)
    if not data:
        raise InvalidInputError(f"{path}: no data rows found")
    return Dataset(np.asarray(data, dtype=float).T)
