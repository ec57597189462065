"""Factor-score estimation from a fitted model.

Two estimators of f_t are provided, both linear in the demeaned data:

* projection scores
  ``(M_ff^{-1} + Lambda' Sigma_ee^{-1} Lambda)^{-1} Lambda' Sigma_ee^{-1} (z_t - z_bar)``,
  the posterior mean under a Gaussian prior with variance M_ff;
* GLS scores
  ``(Lambda' Sigma_ee^{-1} Lambda)^{-1} Lambda' Sigma_ee^{-1} (z_t - z_bar)``,
  the cross-sectional weighted regression.

The two agree to O(1/N); GLS is the default elsewhere in the package
because its large-N distribution theory is the cleaner one.  GLS scores are
invariant to rescaling Sigma_ee by a positive scalar, projection scores are
not (the prior term breaks the scaling).

The mean z_bar is always taken from the dataset being scored, not from the
fitting data, so a fitted model can score out-of-sample panels.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import IllConditionedError, InvalidInputError, RankError
from .linalg import spd_inv, spd_solve
from .model import Dataset, FactorParams


@dataclass(frozen=True, eq=False)
class FactorScores:
    """A T x r matrix of estimated factor scores with its method tag."""

    values: np.ndarray
    method: str  # "projection" | "gls"

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or not np.all(np.isfinite(v)):
            raise InvalidInputError("scores must be a finite T x r matrix")
        if self.method not in ("projection", "gls"):
            raise InvalidInputError(f"unknown score method {self.method!r}")
        object.__setattr__(self, "values", v)


def _demeaned(d, params):
    if d.n_vars != params.n_vars:
        raise InvalidInputError(
            f"dataset has {d.n_vars} variables, parameters have {params.n_vars}"
        )
    return d.values - d.means()[:, None]


def projection_scores(d: Dataset, params: FactorParams) -> FactorScores:
    """Posterior-mean scores; the r x r system is solved once and reused."""
    xc = _demeaned(d, params)
    u = params.loadings / params.idio_var[:, None]
    a = spd_inv(params.factor_cov, "factor second moment") + params.loadings.T @ u
    vals = spd_solve(a, u.T @ xc, "projection score system").T
    return FactorScores(vals, "projection")


def gls_scores(d: Dataset, params: FactorParams) -> FactorScores:
    """Cross-sectional GLS scores, weighting by inverse idiosyncratic variance."""
    xc = _demeaned(d, params)
    u = params.loadings / params.idio_var[:, None]
    h = params.loadings.T @ u
    try:
        vals = spd_solve(h, u.T @ xc, "GLS score system").T
    except IllConditionedError as exc:
        raise RankError(f"loadings are rank deficient: {exc}") from None
    return FactorScores(vals, "gls")


def score_gap(d: Dataset, params: FactorParams) -> float:
    """max_t ||projection - GLS|| for the given data; shrinks like 1/N."""
    f_proj = projection_scores(d, params).values
    f_gls = gls_scores(d, params).values
    return float(np.linalg.norm(f_proj - f_gls, axis=1).max())
