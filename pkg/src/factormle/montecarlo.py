"""Simulation DGP, canonical-correlation metric and replication harnesses.

The default data-generating process draws, independently per replication,

    lambda_i ~ N(0, I_r),  f_t ~ N(0, I_r),
    sigma_i^2 = 0.1 + 10 U_i with U_i ~ Uniform(0, 1),
    e_it ~ N(0, sigma_i^2),            z_it = lambda_i' f_t + e_it,

so the noise floor 0.1 keeps variances away from zero.  Every replication's
random stream is derived by counter-based mixing of (seed, N, T, rep), so
results are bit-identical however replications are scheduled.

Estimator accuracy is summarized by the r-th (smallest nonzero) canonical
correlation between estimated and true loadings / factor-score matrices,
computed on uncentered matrices, and by the squared correlation between the
estimated and true idiosyncratic-variance vectors.  Factor scores estimate
the demeaned factors, so the true scores are demeaned before comparison.
"""
from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import FactorModelError, HarnessError, InvalidInputError, RankError
from .em import EMConfig, fit
from .identify import align_to_truth
from .linalg import sign_normalize_columns, sym_eig_desc, sym_sqrt
from .model import Dataset
from .pca import pc_fit
from .scores import gls_scores, projection_scores, score_gap

THREADS_ENV_VAR = "FACTORMLE_THREADS"


@dataclass
class SimConfig:
    """One simulation cell: panel shape, factor count, replication budget, seed."""

    n_vars: int
    n_obs: int
    n_factors: int = 2
    reps: int = 500
    seed: int = 0
    dgp: str = "paper_default"
    loading_sampler: Callable | None = None  # (rng, n, r) -> (n, r)
    factor_sampler: Callable | None = None  # (rng, t, r) -> (t, r)
    var_sampler: Callable | None = None  # (rng, n) -> (n,)

    def __post_init__(self):
        if self.reps < 1:
            raise InvalidInputError("reps must be at least 1")
        if not 1 <= self.n_factors < min(self.n_vars, self.n_obs):
            raise InvalidInputError("need 1 <= r < min(N, T)")
        if self.seed < 0:
            raise InvalidInputError("seed must be a nonnegative integer")
        if self.dgp not in ("paper_default", "custom"):
            raise InvalidInputError(f"unknown dgp {self.dgp!r}")
        if self.dgp == "custom" and not (
            self.loading_sampler and self.factor_sampler and self.var_sampler
        ):
            raise InvalidInputError("custom dgp requires all three samplers")


def generate(cfg: SimConfig, rep_index: int):
    """Draw one replication: (Dataset, true loadings, true factors, true variances).

    Deterministic given (cfg.seed, cfg.n_vars, cfg.n_obs, rep_index); draws
    happen in the fixed order loadings, factors, variances, errors.
    """
    rng = np.random.default_rng([cfg.seed, cfg.n_vars, cfg.n_obs, int(rep_index)])
    n, t, r = cfg.n_vars, cfg.n_obs, cfg.n_factors
    if cfg.dgp == "custom":
        lam = np.asarray(cfg.loading_sampler(rng, n, r), dtype=float)
        f = np.asarray(cfg.factor_sampler(rng, t, r), dtype=float)
        sigma2 = np.asarray(cfg.var_sampler(rng, n), dtype=float)
        if lam.shape != (n, r) or f.shape != (t, r) or sigma2.shape != (n,):
            raise InvalidInputError("custom samplers returned wrong shapes")
        if np.any(sigma2 <= 0):
            raise InvalidInputError("custom variance sampler returned nonpositive values")
    else:
        lam = rng.standard_normal((n, r))
        f = rng.standard_normal((t, r))
        sigma2 = 0.1 + 10.0 * rng.uniform(size=n)
    noise = rng.standard_normal((n, t)) * np.sqrt(sigma2)[:, None]
    data = Dataset(lam @ f.T + noise)
    return data, lam, f, sigma2


def canonical_correlations(a, b) -> np.ndarray:
    """Classical canonical correlations between the column spaces of a and b.

    Both matrices are used as given (no centering); each must have full
    column rank.  Returns all r values in descending order, clipped to
    [0, 1]; the last one measures agreement in the worst direction.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.ndim != 2 or b.ndim != 2 or a.shape[0] != b.shape[0]:
        raise InvalidInputError("inputs must be 2-d with a common row count")
    qa, ra = np.linalg.qr(a)
    qb, rb = np.linalg.qr(b)
    for name, rr in (("first", ra), ("second", rb)):
        diag = np.abs(np.diag(rr))
        if diag.size == 0 or diag.min() <= 1e-12 * max(diag.max(), 1e-300):
            raise RankError(f"{name} input is rank deficient")
    svals = np.linalg.svd(qa.T @ qb, compute_uv=False)
    return np.clip(svals, 0.0, 1.0)


def _squared_correlation(a, b):
    c = np.corrcoef(a, b)[0, 1]
    return float(c * c)


# --------------------------------------------------------------------------
# truth rotations: the drawn (Lambda, F) carry no identification constraints,
# so elementwise estimator-vs-truth comparisons first rotate the truth onto
# the estimator's normalization.
# --------------------------------------------------------------------------

def ic3_truth_rotation(lam, f, sigma2):
    """Rotate true (loadings, factors) onto IC3 for the demeaned factor path.

    Returns (lam_star, f_star) with the same common component, an identity
    sample moment for f_star (demeaned), and a diagonal descending scaled
    loading moment with convention-signed columns.
    """
    g = f - f.mean(axis=0)
    m = g.T @ g / g.shape[0]
    half = sym_sqrt(m, "factor sample moment")
    lam_t = lam @ half
    n = lam.shape[0]
    s = (lam_t / np.asarray(sigma2)[:, None]).T @ lam_t / n
    _, v = sym_eig_desc(s)
    lam_star = lam_t @ v
    lam_star, signs = sign_normalize_columns(lam_star)
    f_star = g @ np.linalg.inv(half) @ v * signs
    return lam_star, f_star


def pc_truth_rotation(lam, f):
    """Rotate true (loadings, factors) onto the PC normalization.

    Same as :func:`ic3_truth_rotation` but diagonalizing the unweighted
    loading moment (1/N) Lambda' Lambda, which is the rotation the PC
    estimator converges to.
    """
    g = f - f.mean(axis=0)
    m = g.T @ g / g.shape[0]
    half = sym_sqrt(m, "factor sample moment")
    lam_t = lam @ half
    s = lam_t.T @ lam_t / lam.shape[0]
    _, v = sym_eig_desc(s)
    lam_star = lam_t @ v
    lam_star, signs = sign_normalize_columns(lam_star)
    f_star = g @ np.linalg.inv(half) @ v * signs
    return lam_star, f_star


# --------------------------------------------------------------------------
# benchmark grid harness
# --------------------------------------------------------------------------

@dataclass
class CellStats:
    """Replication averages for one (N, T) cell."""

    n_vars: int
    n_obs: int
    mle_loadings: float
    mle_factors: float
    mle_idio: float
    pc_loadings: float
    pc_factors: float
    pc_idio: float
    reps_used: int
    reps_failed: int


@dataclass
class MonteCarloReport:
    """Per-cell averages plus the provenance needed to reproduce them.

    ``elapsed_seconds`` is informational only and is deliberately excluded
    from the serialized forms, which must be byte-identical across runs.
    """

    cells: list[CellStats]
    reps: int
    seed: int
    n_factors: int
    elapsed_seconds: float = 0.0


def _one_table2_rep(cfg, rep, em_config):
    data, lam, f, sigma2 = generate(cfg, rep)
    r = cfg.n_factors
    f_true = f - f.mean(axis=0)

    est, trace = fit(data, r, em_config)
    if not trace.converged or any(w.startswith("heywood") for w in trace.warnings):
        raise HarnessError("replication flagged: " + "; ".join(trace.warnings))
    mle_lam_cc = canonical_correlations(est.params.loadings, lam)[r - 1]
    mle_f_cc = canonical_correlations(gls_scores(data, est.params).values, f_true)[r - 1]
    mle_idio = _squared_correlation(est.params.idio_var, sigma2)

    pc_lam, pc_f, pc_idio_var = pc_fit(data, r)
    pc_lam_cc = canonical_correlations(pc_lam, lam)[r - 1]
    pc_f_cc = canonical_correlations(pc_f, f_true)[r - 1]
    pc_idio = _squared_correlation(pc_idio_var, sigma2)

    out = (mle_lam_cc, mle_f_cc, mle_idio, pc_lam_cc, pc_f_cc, pc_idio)
    if not all(np.isfinite(out)):
        raise HarnessError("replication produced non-finite statistics")
    return out


def _resolve_jobs(n_jobs):
    if n_jobs is not None:
        return max(1, int(n_jobs))
    env = os.environ.get(THREADS_ENV_VAR, "")
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def run_table2(
    grid,
    reps: int,
    seed: int,
    *,
    n_factors: int = 2,
    em_config: EMConfig | None = None,
    n_jobs: int | None = None,
    fail_limit: float = 0.01,
) -> MonteCarloReport:
    """Replication averages of the six accuracy statistics over an (N, T) grid.

    Per cell and replication: simulate, fit the quasi-MLE (IC3) and PC,
    then record the r-th canonical correlations for loadings and for scores
    (GLS for the MLE) and the squared correlations of the variance vectors.
    Replications whose fit fails, does not converge or pins a variance are
    excluded and counted; more than ``fail_limit`` failures in a cell raise
    :class:`HarnessError`.

    Deterministic given (grid, reps, seed) for any ``n_jobs`` (workers
    default to the FACTORMLE_THREADS environment variable, else 1).
    """
    if reps < 1:
        raise InvalidInputError("reps must be at least 1")
    jobs = _resolve_jobs(n_jobs)
    em_config = em_config or EMConfig()
    t0 = time.perf_counter()
    cells = []
    for n, t in grid:
        cfg = SimConfig(n_vars=int(n), n_obs=int(t), n_factors=n_factors, reps=reps, seed=seed)

        def run_one(rep, cfg=cfg):
            try:
                return _one_table2_rep(cfg, rep, em_config)
            except FactorModelError:
                return None

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(run_one, range(reps)))
        else:
            results = [run_one(rep) for rep in range(reps)]

        good = [x for x in results if x is not None]
        failed = reps - len(good)
        if failed > fail_limit * reps:
            raise HarnessError(
                f"cell (N={n}, T={t}): {failed}/{reps} replications failed, "
                f"above the {fail_limit:.0%} limit"
            )
        means = np.mean(np.asarray(good), axis=0)
        cells.append(
            CellStats(int(n), int(t), *(float(v) for v in means), len(good), failed)
        )
    elapsed = time.perf_counter() - t0
    return MonteCarloReport(cells, reps, seed, n_factors, elapsed)


_CSV_HEADER = "N,T,mle_loadings,mle_factors,mle_idio,pc_loadings,pc_factors,pc_idio"


def report_to_csv(report: MonteCarloReport) -> str:
    """Benchmark-table CSV: one row per cell, full float precision."""
    lines = [_CSV_HEADER]
    for c in report.cells:
        stats = (c.mle_loadings, c.mle_factors, c.mle_idio, c.pc_loadings, c.pc_factors, c.pc_idio)
        lines.append(f"{c.n_vars},{c.n_obs}," + ",".join(repr(v) for v in stats))
    return "\n".join(lines) + "\n"


def report_to_json(report: MonteCarloReport) -> dict:
    """JSON-ready dict of the report (elapsed time excluded for determinism)."""
    return {
        "schema": "factormle/montecarlo-v1",
        "reps": report.reps,
        "seed": report.seed,
        "n_factors": report.n_factors,
        "cells": [
            {
                "n_vars": c.n_vars,
                "n_obs": c.n_obs,
                "mle_loadings": c.mle_loadings,
                "mle_factors": c.mle_factors,
                "mle_idio": c.mle_idio,
                "pc_loadings": c.pc_loadings,
                "pc_factors": c.pc_factors,
                "pc_idio": c.pc_idio,
                "reps_used": c.reps_used,
                "reps_failed": c.reps_failed,
            }
            for c in report.cells
        ],
    }


# --------------------------------------------------------------------------
# rate checks
# --------------------------------------------------------------------------

@dataclass
class RateCheckReport:
    """Empirical convergence-rate summaries.

    ``mle_t_grid``/``mle_mse_by_t``: mean loading MSE (1/N sum_i
    ||lam_hat_i - lam_i||^2 against the IC3-rotated truth) as T grows at
    fixed N, with its log-log slope (should be close to -1).

    ``two_term_cells``: (N, T) grid on which both estimators' loading MSEs
    were fit to the model a/N + b/T by least squares; PC should show a
    positive 1/N coefficient that the MLE lacks.

    ``gap_n_grid``/``gap_by_n``: median over replications of the maximal
    projection-vs-GLS score gap; successive ratios should be near 1/2 as N
    doubles.
    """

    mle_t_grid: list
    mle_mse_by_t: list
    mle_loglog_slope: float
    two_term_cells: list
    pc_mse_by_cell: list
    mle_mse_by_cell: list
    pc_coeffs: tuple
    mle_coeffs: tuple
    gap_n_grid: list
    gap_by_n: list
    gap_ratios: list


def _loading_mse(est_lam, true_lam):
    signs = align_to_truth(est_lam, true_lam)
    diff = est_lam * signs - true_lam
    return float(np.sum(diff**2) / est_lam.shape[0])


def _mle_mse_cell(n, t, reps, seed, em_config):
    cfg = SimConfig(n_vars=n, n_obs=t, reps=reps, seed=seed)
    vals = []
    for rep in range(reps):
        data, lam, f, sigma2 = generate(cfg, rep)
        lam_star, _ = ic3_truth_rotation(lam, f, sigma2)
        est, _ = fit(data, cfg.n_factors, em_config)
        vals.append(_loading_mse(est.params.loadings, lam_star))
    return float(np.mean(vals))


def _pc_mse_cell(n, t, reps, seed):
    cfg = SimConfig(n_vars=n, n_obs=t, reps=reps, seed=seed)
    vals = []
    for rep in range(reps):
        data, lam, f, _ = generate(cfg, rep)
        lam_star, _ = pc_truth_rotation(lam, f)
        pc_lam, _, _ = pc_fit(data, cfg.n_factors)
        vals.append(_loading_mse(pc_lam, lam_star))
    return float(np.mean(vals))


def _fit_two_term(cells, mses):
    x = np.array([[1.0 / n, 1.0 / t] for n, t in cells])
    coef, *_ = np.linalg.lstsq(x, np.asarray(mses), rcond=None)
    return float(coef[0]), float(coef[1])


def run_rate_check(
    *,
    loading_n: int = 50,
    loading_t_grid=(50, 100, 200, 400),
    two_term_n_grid=(25, 50, 100),
    two_term_t_grid=(30, 60, 120),
    gap_t: int = 100,
    gap_n_grid=(20, 40, 80),
    reps: int = 100,
    seed: int = 0,
    em_config: EMConfig | None = None,
) -> RateCheckReport:
    """Empirical rate checks for loading errors and the score gap."""
    em_config = em_config or EMConfig()

    mse_by_t = [_mle_mse_cell(loading_n, t, reps, seed, em_config) for t in loading_t_grid]
    slope = float(
        np.polyfit(np.log(np.asarray(loading_t_grid, float)), np.log(mse_by_t), 1)[0]
    )

    cells = [(n, t) for n in two_term_n_grid for t in two_term_t_grid]
    pc_mses = [_pc_mse_cell(n, t, reps, seed) for n, t in cells]
    mle_mses = [_mle_mse_cell(n, t, reps, seed, em_config) for n, t in cells]
    pc_coeffs = _fit_two_term(cells, pc_mses)
    mle_coeffs = _fit_two_term(cells, mle_mses)

    gaps = []
    for n in gap_n_grid:
        cfg = SimConfig(n_vars=n, n_obs=gap_t, reps=reps, seed=seed)
        vals = []
        for rep in range(reps):
            data, *_ = generate(cfg, rep)
            est, _ = fit(data, cfg.n_factors, em_config)
            vals.append(score_gap(data, est.params))
        gaps.append(float(np.median(vals)))
    ratios = [gaps[i + 1] / gaps[i] for i in range(len(gaps) - 1)]

    return RateCheckReport(
        list(loading_t_grid),
        mse_by_t,
        slope,
        cells,
        pc_mses,
        mle_mses,
        pc_coeffs,
        mle_coeffs,
        list(gap_n_grid),
        gaps,
        ratios,
    )


def projection_vs_gls_sensitivity(n, t, reps, seed, em_config=None):
    """Max difference the score-method choice makes to the factor statistic.

    Supports the design decision to report GLS scores in the benchmark
    harness: the two methods' canonical-correlation statistics agree to
    O(1/N) at harness sizes.
    """
    em_config = em_config or EMConfig()
    cfg = SimConfig(n_vars=n, n_obs=t, reps=reps, seed=seed)
    r = cfg.n_factors
    diffs = []
    for rep in range(reps):
        data, _, f, _ = generate(cfg, rep)
        f_true = f - f.mean(axis=0)
        est, _ = fit(data, r, em_config)
        cc_gls = canonical_correlations(gls_scores(data, est.params).values, f_true)[r - 1]
        cc_proj = canonical_correlations(projection_scores(data, est.params).values, f_true)[r - 1]
        diffs.append(abs(cc_gls - cc_proj))
    return float(np.mean(diffs))
