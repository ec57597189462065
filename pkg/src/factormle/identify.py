"""Transforms between the five identification variants of a fitted model.

A factor model is only identified up to an invertible r x r rotation of
(Lambda, M_ff); each variant pins the rotation with r^2 constraints:

========  ===========================  =====================================
variant   factor moment M_ff           loadings Lambda
========  ===========================  =====================================
IC1       unrestricted                 top r x r block = I_r
IC2       diagonal, descending,        (1/N) Lambda' Sigma_ee^{-1} Lambda
          distinct, positive           = I_r
IC3       = I_r                        (1/N) Lambda' Sigma_ee^{-1} Lambda
                                       diagonal, descending, distinct
IC4       diagonal, positive           top block lower triangular, unit
                                       diagonal
IC5       = I_r                        top block lower triangular, nonzero
                                       diagonal
========  ===========================  =====================================

Caution: some treatments swap the labels of the last two variants; here IC4
and IC5 always mean the constraint sets in the table above.

Every transform preserves the common component Lambda M_ff Lambda', the
idiosyncratic variances and the log-likelihood, and is idempotent on its
own output.  IC2, IC3 and IC5 identify the loadings only up to column sign
changes, fixed here by conventions: columns flip so the largest-magnitude
entry (IC2/IC3) or the triangular diagonal (IC5) is positive.
"""
from __future__ import annotations

from dataclasses import replace

import numpy as np

from .errors import FirstRowsUnsuitableError, InvalidInputError
from .linalg import (
    require_strictly_decreasing,
    sign_normalize_columns,
    sym_eig_desc,
    sym_inv_sqrt,
    sym_sqrt,
)
from .em import FactorEstimate
from .model import FactorParams, IdentificationTag

_IC1_COND_LIMIT = 1e10


def _absorbed_loadings(params: FactorParams) -> np.ndarray:
    """Fold M_ff into the loadings: Lambda M_ff^{1/2}, whose moment is I_r."""
    return params.loadings @ sym_sqrt(params.factor_cov, "factor second moment")


def _rebuild(est: FactorEstimate, loadings, factor_cov, tag) -> FactorEstimate:
    params = FactorParams(loadings, est.params.idio_var, factor_cov, est.params.intercept)
    return replace(est, params=params, tag=tag)


def _top_block(lam, what):
    r = lam.shape[1]
    block = lam[:r, :]
    if not np.all(np.isfinite(block)):
        raise FirstRowsUnsuitableError(f"{what}: leading block is not finite")
    return block


def to_ic1(est: FactorEstimate) -> FactorEstimate:
    """Re-normalize so the top r x r loading block is the identity.

    From an IC3 estimate this is Lambda Lambda_1^{-1} with factor moment
    Lambda_1 Lambda_1'.  Requires a well-conditioned leading block; reorder
    the variables otherwise.
    """
    lam = _absorbed_loadings(est.params)
    lam1 = _top_block(lam, "IC1")
    cond = float(np.linalg.cond(lam1))
    if not np.isfinite(cond) or cond > _IC1_COND_LIMIT:
        raise FirstRowsUnsuitableError(
            f"IC1: leading {lam.shape[1]}x{lam.shape[1]} loading block has condition "
            f"{cond:.3e}; reorder the variables so the first rows are informative"
        )
    new_lam = np.linalg.solve(lam1.T, lam.T).T
    new_mff = lam1 @ lam1.T
    return _rebuild(est, new_lam, new_mff, IdentificationTag.IC1)


def to_ic2(est: FactorEstimate) -> FactorEstimate:
    """Re-normalize so (1/N) Lambda' Sigma_ee^{-1} Lambda = I_r.

    The factor moment becomes S = (1/N) Lambda' Sigma_ee^{-1} Lambda of the
    input (symmetric square root used), re-ordered descending; tied values
    raise :class:`NonIdentifiedOrderingError`.
    """
    lam = _absorbed_loadings(est.params)
    s2 = est.params.idio_var
    n, r = lam.shape
    s = (lam / s2[:, None]).T @ lam / n
    if np.linalg.eigvalsh((s + s.T) / 2.0).min() <= 0:
        raise InvalidInputError("IC2: scaled loading moment is not positive definite")
    evals, evecs = sym_eig_desc(s)
    if r > 1:
        require_strictly_decreasing(evals, "IC2 factor moment diagonal")
    new_lam = lam @ sym_inv_sqrt(s, "scaled loading moment") @ evecs
    new_lam, _ = sign_normalize_columns(new_lam)
    return _rebuild(est, new_lam, np.diag(evals), IdentificationTag.IC2)


def _qr_lower(est: FactorEstimate):
    """Orthogonal rotation making the top loading block lower triangular."""
    lam = _absorbed_loadings(est.params)
    lam1 = _top_block(lam, "IC5")
    q, rr = np.linalg.qr(lam1.T)
    diag = np.abs(np.diag(rr))
    if diag.size and diag.min() <= 1e-12 * max(diag.max(), 1e-300):
        raise FirstRowsUnsuitableError(
            "IC5/IC4: triangular factor of the leading loading block has a zero "
            "diagonal entry; reorder the variables"
        )
    rotated = lam @ q
    signs = np.where(np.diag(rotated[: lam.shape[1], :]) < 0, -1.0, 1.0)
    return rotated * signs


def to_ic5(est: FactorEstimate) -> FactorEstimate:
    """Identity factor moment with a lower-triangular top loading block.

    The rotation is the orthogonal factor of the top block's QR
    decomposition; the triangular diagonal is sign-normalized positive.
    """
    return _rebuild(est, _qr_lower(est), np.eye(est.params.n_factors), IdentificationTag.IC5)


def to_ic4(est: FactorEstimate) -> FactorEstimate:
    """Diagonal factor moment with a unit-diagonal triangular top block.

    Rescales the IC5 form by W = diag(top block): loadings W^{-1}, factor
    moment W W'.
    """
    lam5 = _qr_lower(est)
    r = lam5.shape[1]
    w = np.diag(lam5[:r, :]).copy()
    return _rebuild(est, lam5 / w[None, :], np.diag(w**2), IdentificationTag.IC4)


def align_to_truth(est_loadings, true_loadings) -> np.ndarray:
    """Column signs in {-1, +1} best aligning an estimate with a reference.

    Maximizes sum_k s_k <est_k, truth_k>; used only by simulation harnesses
    where sign indeterminacy (IC2/IC3/IC5) would otherwise corrupt
    estimator-vs-truth comparisons.
    """
    a = np.asarray(est_loadings, dtype=float)
    b = np.asarray(true_loadings, dtype=float)
    if a.shape != b.shape:
        raise InvalidInputError(f"shape mismatch: {a.shape} vs {b.shape}")
    inner = np.sum(a * b, axis=0)
    return np.where(inner < 0, -1.0, 1.0)


def verify_estimate(est: FactorEstimate, tag: IdentificationTag | None = None, rtol: float = 1e-8):
    """Check the identification constraints of ``tag`` (default: the estimate's own).

    Returns a list of ``(name, passed, detail)`` triples, one per
    constraint, at ``rtol`` relative tolerance.
    """
    tag = tag or est.tag
    lam = est.params.loadings
    s2 = est.params.idio_var
    mff = est.params.factor_cov
    n, r = lam.shape
    checks = []

    def add(name, passed, detail):
        checks.append((name, bool(passed), detail))

    def close(a, b):
        scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), 1.0)
        return float(np.abs(a - b).max(initial=0.0)), scale

    def check_identity(name, mat):
        dev, scale = close(mat, np.eye(r))
        add(name, dev <= rtol * scale, f"max deviation from identity {dev:.3e}")

    def check_diagonal(name, mat):
        off = mat - np.diag(np.diag(mat))
        dev = np.abs(off).max(initial=0.0)
        scale = max(np.abs(np.diag(mat)).max(initial=0.0), 1e-300)
        add(name, dev <= rtol * scale, f"max off-diagonal {dev:.3e} (diag scale {scale:.3e})")

    def check_descending_positive(name, diag):
        ok = bool(np.all(diag > 0)) and bool(
            np.all(np.diff(diag) < rtol * np.maximum(np.abs(diag[:-1]), np.abs(diag[1:])))
        )
        add(name, ok, f"diagonal {np.array2string(diag, precision=6)}")

    def check_lower_triangular(name, block):
        upper = np.triu(block, k=1)
        dev = np.abs(upper).max(initial=0.0)
        scale = max(np.abs(block).max(initial=0.0), 1e-300)
        add(name, dev <= rtol * scale, f"max above-diagonal {dev:.3e}")

    s = (lam / s2[:, None]).T @ lam / n
    if tag is IdentificationTag.IC1:
        dev, scale = close(lam[:r, :], np.eye(r))
        add("ic1.top_block_identity", dev <= rtol * scale, f"max deviation {dev:.3e}")
    elif tag is IdentificationTag.IC2:
        check_identity("ic2.scaled_loading_moment_identity", s)
        check_diagonal("ic2.factor_cov_diagonal", mff)
        check_descending_positive("ic2.factor_cov_descending_positive", np.diag(mff))
    elif tag is IdentificationTag.IC3:
        check_identity("ic3.factor_cov_identity", mff)
        check_diagonal("ic3.scaled_loading_moment_diagonal", s)
        check_descending_positive("ic3.scaled_loading_moment_descending_positive", np.diag(s))
    elif tag is IdentificationTag.IC4:
        check_diagonal("ic4.factor_cov_diagonal", mff)
        add("ic4.factor_cov_positive", bool(np.all(np.diag(mff) > 0)), "")
        check_lower_triangular("ic4.top_block_lower_triangular", lam[:r, :])
        dev = np.abs(np.diag(lam[:r, :]) - 1.0).max(initial=0.0)
        add("ic4.top_block_unit_diagonal", dev <= rtol, f"max deviation from 1 {dev:.3e}")
    elif tag is IdentificationTag.IC5:
        check_identity("ic5.factor_cov_identity", mff)
        check_lower_triangular("ic5.top_block_lower_triangular", lam[:r, :])
        diag = np.abs(np.diag(lam[:r, :]))
        scale = max(np.abs(lam[:r, :]).max(initial=0.0), 1e-300)
        add(
            "ic5.top_block_nonzero_diagonal",
            bool(diag.min() > rtol * scale),
            f"min |diagonal| {diag.min():.3e}",
        )
    else:  # pragma: no cover - enum is closed
        raise InvalidInputError(f"unknown tag {tag!r}")
    return checks
