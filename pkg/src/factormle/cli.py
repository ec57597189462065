"""Command-line front end: fit, scores, simulate, verify.

Exit-code contract (fixed, for scripting):
  0  success (for ``fit``: converged)
  1  input error (unreadable/malformed files, bad flags)
  2  ``fit`` did not converge (the result is still emitted)

Models are serialized as JSON (self-describing, schema field
``factormle/fitresult-v1``, validating against ``fitresult.schema.json``
shipped with the package); matrices travel as CSV.  Numbers are written at
full round-trip precision, so output is byte-identical for identical
inputs, flags and seeds.
"""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources

import numpy as np

from . import identify
from .em import EMConfig, EMTrace, FactorEstimate, fit
from .errors import FactorModelError, InvalidInputError, UnsupportedICError
from .inference import idio_var_cov, loading_cov, mff_cov
from .model import Dataset, FactorParams, IdentificationTag, read_dataset_csv
from .montecarlo import report_to_csv, report_to_json, run_rate_check, run_table2
from .scores import gls_scores, projection_scores

FITRESULT_SCHEMA = "factormle/fitresult-v1"

_TRANSFORMS = {
    IdentificationTag.IC1: identify.to_ic1,
    IdentificationTag.IC2: identify.to_ic2,
    IdentificationTag.IC4: identify.to_ic4,
    IdentificationTag.IC5: identify.to_ic5,
}

DEFAULT_GRID = [
    (n, t) for t in (30, 50, 100) for n in (10, 30, 50, 100, 150)
]


def schema_path():
    """Filesystem path of the bundled fitresult JSON schema."""
    return resources.files(__package__) / "fitresult.schema.json"


def _parse_ic(text) -> IdentificationTag:
    s = str(text).strip().upper()
    if s in ("1", "2", "3", "4", "5"):
        s = "IC" + s
    try:
        return IdentificationTag(s)
    except ValueError:
        raise InvalidInputError(f"unknown identification condition {text!r}") from None


def _standard_errors(est: FactorEstimate, warnings_out: list) -> dict:
    idio_se = [float(np.sqrt(idio_var_cov(est, j))) for j in range(est.params.n_vars)]
    out = {"idio_var": idio_se, "loadings": None, "factor_cov": None}
    try:
        load_se = [
            np.sqrt(np.diag(loading_cov(est, j))).tolist()
            for j in range(est.params.n_vars)
        ]
        out["loadings"] = load_se
    except UnsupportedICError as exc:
        warnings_out.append(f"loading standard errors unavailable: {exc}")
    cov = mff_cov(est)
    out["factor_cov"] = {
        "values": np.sqrt(np.diag(cov.covariance)).tolist(),
        "basis": cov.basis,
        "rate": cov.rate,
    }
    return out


def estimate_to_dict(est: FactorEstimate, standard_errors: dict | None = None) -> dict:
    p = est.params
    t = est.trace
    return {
        "schema": FITRESULT_SCHEMA,
        "ic": est.tag.value,
        "n_vars": p.n_vars,
        "n_obs": est.n_obs,
        "n_factors": p.n_factors,
        "loadings": p.loadings.tolist(),
        "idio_var": p.idio_var.tolist(),
        "factor_cov": p.factor_cov.tolist(),
        "intercept": p.intercept.tolist(),
        "loglik": est.loglik,
        "converged": t.converged,
        "iterations": t.iterations,
        "final_param_delta": t.final_param_delta,
        "foc_residuals": list(t.final_foc_residuals),
        "warnings": list(t.warnings),
        "standard_errors": standard_errors,
    }


def estimate_from_dict(doc: dict) -> FactorEstimate:
    """Rebuild a FactorEstimate from its serialized form (for scores/verify)."""
    try:
        if doc.get("schema") != FITRESULT_SCHEMA:
            raise InvalidInputError(f"unsupported schema {doc.get('schema')!r}")
        params = FactorParams(
            np.asarray(doc["loadings"], dtype=float),
            np.asarray(doc["idio_var"], dtype=float),
            np.asarray(doc["factor_cov"], dtype=float),
            np.asarray(doc["intercept"], dtype=float),
        )
        tag = _parse_ic(doc["ic"])
        trace = EMTrace(
            iterations=int(doc["iterations"]),
            loglik_path=np.asarray([doc["loglik"]], dtype=float),
            converged=bool(doc["converged"]),
            final_param_delta=float(doc["final_param_delta"]),
            final_foc_residuals=tuple(doc["foc_residuals"]),
            warnings=list(doc["warnings"]),
        )
        return FactorEstimate(params, tag, float(doc["loglik"]), trace, int(doc["n_obs"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidInputError(f"malformed model JSON: {exc}") from None


def _dump_json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _emit(text, out_path):
    if out_path:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _cmd_fit(args) -> int:
    data = read_dataset_csv(args.csv)
    cfg = EMConfig(
        max_iter=args.max_iter,
        tol=args.tol,
        init=args.init,
        seed=args.seed,
    )
    est, trace = fit(data, args.factors, cfg)
    tag = _parse_ic(args.ic)
    if tag is not IdentificationTag.IC3:
        est = _TRANSFORMS[tag](est)
    extra = []
    se = _standard_errors(est, extra) if args.se else None
    doc = estimate_to_dict(est, se)
    doc["warnings"] = doc["warnings"] + extra
    _emit(_dump_json(doc), args.out)
    return 0 if trace.converged else 2


def _cmd_scores(args) -> int:
    data = read_dataset_csv(args.csv)
    with open(args.model, encoding="utf-8") as fh:
        est = estimate_from_dict(json.load(fh))
    scorer = gls_scores if args.method == "gls" else projection_scores
    f = scorer(data, est.params).values
    lines = [",".join(f"f{k + 1}" for k in range(f.shape[1]))]
    lines += [",".join(repr(float(v)) for v in row) for row in f]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def _parse_grid(text):
    cells = []
    for chunk in text.split(","):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            n, t = chunk.lower().split("x")
            cells.append((int(n), int(t)))
        except ValueError:
            raise InvalidInputError(f"bad grid cell {chunk!r}; expected NxT") from None
    if not cells:
        raise InvalidInputError("empty simulation grid")
    return cells


def _cmd_simulate(args) -> int:
    if args.reps < 1:
        raise InvalidInputError("reps must be at least 1")
    if args.rates:
        report = run_rate_check(reps=args.reps, seed=args.seed)
        doc = {"schema": "factormle/ratecheck-v1", **report.__dict__}
        _emit(_dump_json(doc), f"{args.out}.json" if args.out else None)
        return 0
    grid = _parse_grid(args.grid) if args.grid else DEFAULT_GRID
    report = run_table2(grid, args.reps, args.seed)
    csv_text = report_to_csv(report)
    if args.out:
        _emit(csv_text, f"{args.out}.csv")
        _emit(_dump_json(report_to_json(report)), f"{args.out}.json")
    else:
        sys.stdout.write(csv_text)
    return 0


def _cmd_verify(args) -> int:
    with open(args.model, encoding="utf-8") as fh:
        est = estimate_from_dict(json.load(fh))
    tag = _parse_ic(args.ic) if args.ic else est.tag
    checks = identify.verify_estimate(est, tag)
    failed = 0
    for name, ok, detail in checks:
        status = "PASS" if ok else "FAIL"
        failed += 0 if ok else 1
        print(f"{status} {name}: {detail}")
    if failed:
        print(f"{failed} of {len(checks)} checks failed")
        return 1
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="factormle", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    f = sub.add_parser("fit", help="fit a factor model to a CSV panel (rows = time)")
    f.add_argument("csv", help="CSV with one row per time point, one column per variable")
    f.add_argument("--factors", type=int, required=True, help="number of factors r")
    f.add_argument("--ic", default="3", help="identification condition 1..5 (default 3)")
    f.add_argument("--tol", type=float, default=1e-6, help="relative parameter-change tolerance")
    f.add_argument("--max-iter", type=int, default=20000)
    f.add_argument("--init", choices=("pca", "random"), default="pca")
    f.add_argument("--seed", type=int, default=None, help="seed for --init random")
    f.add_argument("--se", action="store_true", help="attach plug-in standard errors")
    f.add_argument("--out", default=None, help="write JSON here instead of stdout")
    f.set_defaults(func=_cmd_fit)

    s = sub.add_parser("scores", help="estimate factor scores for a CSV panel")
    s.add_argument("csv")
    s.add_argument("model", help="fitted-model JSON from the fit command")
    s.add_argument("--method", choices=("gls", "projection"), default="gls")
    s.add_argument("--out", default=None)
    s.set_defaults(func=_cmd_scores)

    m = sub.add_parser("simulate", help="run the replication benchmark harness")
    m.add_argument("--grid", default=None, help="cells as NxT,NxT,... (default: 15-cell grid)")
    m.add_argument("--reps", type=int, default=500)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--rates", action="store_true", help="run the rate checks instead")
    m.add_argument("--out", default=None, help="output path prefix (.csv/.json appended)")
    m.set_defaults(func=_cmd_simulate)

    v = sub.add_parser("verify", help="re-check identification invariants of a model JSON")
    v.add_argument("model")
    v.add_argument("--ic", default=None, help="check against this IC instead of the model's tag")
    v.set_defaults(func=_cmd_verify)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FactorModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
