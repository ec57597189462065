"""EM maximization of the factor quasi-likelihood under the IC3 normalization.

With the factor second moment fixed at the identity only (Lambda, Sigma_ee)
are iterated.  Writing ``S = Sigma_zz^{(k)} = Lambda Lambda' + Sigma_ee``,
one EM update is

    Lambda_new = [M_zz S^{-1} Lambda] [Lambda' S^{-1} M_zz S^{-1} Lambda
                                       + I_r - Lambda' S^{-1} Lambda]^{-1}
    sigma_new^2 = diag(M_zz - Lambda_new Lambda' S^{-1} M_zz),

followed by clamping the variances into a fixed compact box.  Every
``S^{-1}`` product goes through the diagonal-plus-low-rank identity, so an
iteration costs one N x N by N x r product.  The quasi log-likelihood never
decreases along the iteration, including under clamping, because the update
is an exact box-constrained M-step.

After convergence the loadings are rotated by the eigenvectors of
``(1/N) Lambda' Sigma_ee^{-1} Lambda`` (descending eigenvalues, columns
sign-flipped so each column's largest-magnitude entry is positive), which
leaves the likelihood untouched and lands the estimate exactly on IC3.
"""
from __future__ import annotations

import warnings as _warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import IllConditionedError, InvalidInputError
from .linalg import (
    require_strictly_decreasing,
    sign_normalize_columns,
    spd_cholesky,
    sym_eig_desc,
    sym_sqrt,
)
from .model import (
    VAR_CEILING_SCALE,
    VAR_FLOOR_SCALE,
    Dataset,
    FactorParams,
    IdentificationTag,
    foc_residuals,
    sample_second_moment,
)
from .pca import pc_fit

# A variance pinned at the floor this many consecutive iterations is flagged
# as a Heywood case.
_HEYWOOD_PATIENCE = 10


@dataclass
class EMConfig:
    """Convergence control for :func:`fit`.

    ``tol`` bounds the relative parameter change ||theta_new - theta|| /
    (1 + ||theta||) over the stacked (loadings, idio_var) vector;
    ``loglik_tol`` bounds the absolute likelihood gain per iteration.
    Hitting either declares convergence.  ``var_floor``/``var_ceiling``
    default to 1e-8 and 1e8 times the mean sample variance.
    """

    max_iter: int = 20000
    tol: float = 1e-6
    loglik_tol: float = 1e-9
    init: str = "pca"  # "pca" | "provided" | "random"
    init_params: FactorParams | None = None
    seed: int | None = None
    var_floor: float | None = None
    var_ceiling: float | None = None

    def __post_init__(self):
        if self.max_iter < 1:
            raise InvalidInputError("max_iter must be at least 1")
        if not self.tol > 0:
            raise InvalidInputError("tol must be positive")
        if not self.loglik_tol > 0:
            raise InvalidInputError("loglik_tol must be positive")
        if self.init not in ("pca", "provided", "random"):
            raise InvalidInputError(f"unknown init {self.init!r}")
        if self.init == "provided" and self.init_params is None:
            raise InvalidInputError("init='provided' requires init_params")
        if self.var_floor is not None and self.var_ceiling is not None:
            if not 0 < self.var_floor < self.var_ceiling:
                raise InvalidInputError("need 0 < var_floor < var_ceiling")


@dataclass
class EMTrace:
    """Record of one EM run.

    ``loglik_path[k]`` is the quasi log-likelihood of the k-th iterate
    (index 0 is the starting value); the path is validated to be
    nondecreasing up to 1e-10 absolute slack.
    """

    iterations: int
    loglik_path: np.ndarray
    converged: bool
    final_param_delta: float
    final_foc_residuals: tuple[float, float, float]
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        path = np.asarray(self.loglik_path, dtype=float)
        object.__setattr__(self, "loglik_path", path)
        if path.size >= 2:
            drops = np.diff(path)
            worst = float(drops.min())
            if worst < -1e-10:
                k = int(np.argmin(drops))
                raise RuntimeError(
                    f"EM likelihood decreased by {-worst:.3e} at iteration {k + 1}; "
                    "this indicates a numerical defect, not a model failure"
                )


@dataclass
class FactorEstimate:
    """A fitted model: parameters, identification tag, likelihood and trace."""

    params: FactorParams
    tag: IdentificationTag
    loglik: float
    trace: EMTrace
    n_obs: int


def _loglik_core(diag_m, w, s2, logdet_a, n):
    # w = tr(A^{-1} U' M_zz U) already computed by the caller.
    logdet = float(np.sum(np.log(s2))) + logdet_a
    trace = float(np.sum(diag_m / s2)) - w
    return -0.5 / n * (logdet + trace)


def _iterate(m_zz, diag_m, lam, s2, floor, ceiling):
    """One EM update plus the log-likelihood of the *current* iterate."""
    n, r = lam.shape
    u = lam / s2[:, None]
    a = lam.T @ u + np.eye(r)
    l = spd_cholesky(a, "low-rank update matrix")
    logdet_a = 2.0 * float(np.sum(np.log(np.diag(l))))
    g = np.linalg.solve(a, np.eye(r))
    y = m_zz @ u
    c = u.T @ y
    loglik = _loglik_core(diag_m, float(np.sum(g * c)), s2, logdet_a, n)

    # Lambda_new = Y (I + GC)^{-1}; the bracket equals the expected factor
    # second moment up to a G factor that cancels.
    m = np.eye(r) + g @ c
    try:
        lam_new = np.linalg.solve(m.T, y.T).T
    except np.linalg.LinAlgError:
        raise IllConditionedError(
            "expected factor second moment is singular", float(np.linalg.cond(m))
        ) from None
    s2_new = diag_m - np.sum(lam_new * (y @ g), axis=1)
    s2_new = np.clip(s2_new, floor, ceiling)
    return lam_new, s2_new, loglik


def _current_loglik(m_zz, diag_m, lam, s2):
    n, r = lam.shape
    u = lam / s2[:, None]
    a = lam.T @ u + np.eye(r)
    l = spd_cholesky(a, "low-rank update matrix")
    logdet_a = 2.0 * float(np.sum(np.log(np.diag(l))))
    g = np.linalg.solve(a, np.eye(r))
    c = u.T @ (m_zz @ u)
    return _loglik_core(diag_m, float(np.sum(g * c)), s2, logdet_a, n)


def em_step(m_zz, params: FactorParams, var_floor=None, var_ceiling=None) -> FactorParams:
    """One EM update of (loadings, idio_var) with the factor moment at I_r.

    Variance bounds default to 1e-8 and 1e8 times the mean of
    ``diag(m_zz)``.  Requires ``params.factor_cov`` to be the identity.
    """
    if not np.allclose(params.factor_cov, np.eye(params.n_factors), atol=1e-10):
        raise InvalidInputError("em_step requires factor_cov = I (IC3 working form)")
    m_zz = np.asarray(m_zz, dtype=float)
    diag_m = np.diag(m_zz).copy()
    mean_var = float(diag_m.mean())
    floor = var_floor if var_floor is not None else VAR_FLOOR_SCALE * mean_var
    ceiling = var_ceiling if var_ceiling is not None else VAR_CEILING_SCALE * mean_var
    lam_new, s2_new, _ = _iterate(m_zz, diag_m, params.loadings, params.idio_var, floor, ceiling)
    return FactorParams(lam_new, s2_new, np.eye(params.n_factors), params.intercept)


def ic3_rotation(loadings, idio_var):
    """Rotate loadings so (1/N) Lambda' Sigma_ee^{-1} Lambda is diagonal.

    Eigenvalues descend strictly (tied values raise
    :class:`NonIdentifiedOrderingError`) and column signs follow the
    largest-magnitude-entry-positive convention.
    """
    lam = np.asarray(loadings, dtype=float)
    s2 = np.asarray(idio_var, dtype=float)
    n, r = lam.shape
    s = (lam / s2[:, None]).T @ lam / n
    evals, evecs = sym_eig_desc(s)
    if r > 1:
        require_strictly_decreasing(evals, "scaled loading moment diagonal")
    rotated, _ = sign_normalize_columns(lam @ evecs)
    return rotated


def _initial_values(d, m_zz, diag_m, r, cfg):
    if cfg.init == "pca":
        loadings, _, idio = pc_fit(d, r)
        return loadings, idio
    if cfg.init == "provided":
        p = cfg.init_params
        if p.n_vars != d.n_vars or p.n_factors != r:
            raise InvalidInputError("init_params shape does not match data / n_factors")
        # Absorb a non-identity factor moment into the loadings.
        lam = p.loadings @ sym_sqrt(p.factor_cov, "factor second moment")
        return lam, p.idio_var.copy()
    rng = np.random.default_rng(cfg.seed)
    scale = np.sqrt(diag_m.mean() / (2.0 * r))
    return rng.normal(scale=scale, size=(d.n_vars, r)), diag_m / 2.0


def fit(d: Dataset, n_factors: int, config: EMConfig | None = None):
    """Maximum quasi-likelihood fit of an r-factor model under IC3.

    Iterates :func:`em_step` from the configured starting values until the
    relative parameter change or the likelihood gain drops below its
    threshold, then applies the IC3 rotation and records the stationarity
    residuals.

    Returns
    -------
    (estimate, trace) : (FactorEstimate, EMTrace)
        ``estimate.tag`` is IC3; ``estimate.trace`` is the same trace
        object.  Non-convergence at ``max_iter`` and variances pinned at
        the floor are reported through ``trace.warnings`` (and Python
        warnings), never raised.
    """
    cfg = config or EMConfig()
    n, t = d.n_vars, d.n_obs
    r = int(n_factors)
    if not 1 <= r < min(n, t):
        raise InvalidInputError(f"need 1 <= r < min(N, T) = {min(n, t)}, got r={r}")

    m_zz = sample_second_moment(d)
    diag_m = np.diag(m_zz).copy()
    mean_var = float(diag_m.mean())
    if mean_var <= 0:
        raise InvalidInputError("data has no variation; nothing to fit")
    floor = cfg.var_floor if cfg.var_floor is not None else VAR_FLOOR_SCALE * mean_var
    ceiling = cfg.var_ceiling if cfg.var_ceiling is not None else VAR_CEILING_SCALE * mean_var
    if not floor < ceiling:
        raise InvalidInputError("need var_floor < var_ceiling")

    lam, s2 = _initial_values(d, m_zz, diag_m, r, cfg)
    lam = np.asarray(lam, dtype=float)
    s2 = np.clip(np.asarray(s2, dtype=float), floor, ceiling)

    path = []
    warn_list = []
    pinned_run = np.zeros(n, dtype=int)
    heywood = set()
    converged = False
    delta = float("inf")

    for _ in range(cfg.max_iter):
        lam_new, s2_new, ll_cur = _iterate(m_zz, diag_m, lam, s2, floor, ceiling)
        path.append(ll_cur)

        num = np.sqrt(np.sum((lam_new - lam) ** 2) + np.sum((s2_new - s2) ** 2))
        den = 1.0 + np.sqrt(np.sum(lam**2) + np.sum(s2**2))
        delta = float(num / den)

        at_floor = s2_new <= floor
        pinned_run = np.where(at_floor, pinned_run + 1, 0)
        newly = np.nonzero(pinned_run > _HEYWOOD_PATIENCE)[0]
        heywood.update(int(i) for i in newly)

        lam, s2 = lam_new, s2_new
        if delta < cfg.tol:
            converged = True
            break
        if len(path) >= 2 and abs(path[-1] - path[-2]) < cfg.loglik_tol:
            converged = True
            break

    path.append(_current_loglik(m_zz, diag_m, lam, s2))
    loglik = path[-1]

    if heywood:
        msg = (
            "heywood-case: idiosyncratic variance pinned at the floor "
            f"({floor:.3e}) for variables {sorted(heywood)}"
        )
        warn_list.append(msg)
        _warnings.warn(msg, stacklevel=2)
    if not converged:
        msg = (
            f"non-convergence: parameter change {delta:.3e} above tol {cfg.tol:.1e} "
            f"after {cfg.max_iter} iterations"
        )
        warn_list.append(msg)
        _warnings.warn(msg, stacklevel=2)

    lam = ic3_rotation(lam, s2)
    params = FactorParams(lam, s2, np.eye(r), intercept=d.means())
    foc = foc_residuals(m_zz, params)
    trace = EMTrace(
        iterations=len(path) - 1,
        loglik_path=np.asarray(path),
        converged=converged,
        final_param_delta=delta,
        final_foc_residuals=foc,
        warnings=warn_list,
    )
    estimate = FactorEstimate(params, IdentificationTag.IC3, loglik, trace, n_obs=t)
    return estimate, trace
