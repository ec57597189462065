"""Dense helpers for the small (r x r) symmetric systems used everywhere."""
from __future__ import annotations

import numpy as np

from .errors import IllConditionedError, InvalidInputError, NonIdentifiedOrderingError


def _cond_estimate(a):
    try:
        c = float(np.linalg.cond(a))
    except np.linalg.LinAlgError:
        c = float("inf")
    return c


def spd_cholesky(a, what):
    """Cholesky factor of a symmetric positive-definite matrix.

    Raises :class:`IllConditionedError` carrying a condition estimate when
    the factorization fails; never regularizes.
    """
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        raise IllConditionedError(
            f"{what} is not numerically positive definite", _cond_estimate(a)
        ) from None


def spd_logdet(a, what):
    """log|A| for symmetric positive-definite A, via its Cholesky factor."""
    l = spd_cholesky(a, what)
    return 2.0 * float(np.sum(np.log(np.diag(l))))


def spd_solve(a, b, what):
    """Solve A X = B for symmetric positive-definite A (guarded)."""
    spd_cholesky(a, what)
    return np.linalg.solve(a, b)


def spd_inv(a, what):
    return spd_solve(a, np.eye(a.shape[0]), what)


def sym_eig_desc(a):
    """Eigenvalues (descending) and matching eigenvectors of a symmetric matrix."""
    w, v = np.linalg.eigh((a + a.T) / 2.0)
    return w[::-1], v[:, ::-1]


def sym_sqrt(a, what):
    """Symmetric square root of a symmetric positive-definite matrix."""
    w, v = sym_eig_desc(a)
    if w[-1] <= 0:
        raise InvalidInputError(f"{what} must be positive definite")
    return (v * np.sqrt(w)) @ v.T


def sym_inv_sqrt(a, what):
    w, v = sym_eig_desc(a)
    if w[-1] <= 0:
        raise InvalidInputError(f"{what} must be positive definite")
    return (v / np.sqrt(w)) @ v.T


def sign_normalize_columns(a):
    """Flip column signs so each column's largest-magnitude entry is positive.

    Ties resolve deterministically to the lowest row index.  Returns the
    flipped matrix and the sign vector applied.
    """
    idx = np.argmax(np.abs(a), axis=0)
    top = a[idx, np.arange(a.shape[1])]
    signs = np.where(top < 0, -1.0, 1.0)
    return a * signs, signs


def require_strictly_decreasing(d, what, rtol=1e-10):
    """Reject diagonals whose adjacent values are tied within ``rtol`` relative."""
    d = np.asarray(d, dtype=float)
    for k in range(d.size - 1):
        scale = max(abs(d[k]), abs(d[k + 1]))
        if d[k] - d[k + 1] <= rtol * scale:
            raise NonIdentifiedOrderingError(
                f"{what}: values {d[k]!r} and {d[k + 1]!r} at positions "
                f"{k} and {k + 1} are tied or out of order; the model is not "
                "identified up to column permutation"
            )
