"""Command-line front end.

``latentcapture fit``       fit a model config to a capture CSV and report
``latentcapture simulate``  draw a capture CSV from a simulation spec
``latentcapture check``     identifiability probe and derivative self-tests

Exit codes: 0 success, 1 input error, 2 the fit did not converge (``fit``;
the report is still written) or a check failed (``check``).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from scipy.special import expit
from scipy.stats import chi2

from . import __version__
from .checks import CheckResult, derivative_checks, oracle_check, tau_checks
from .config import ConfigError, load_model, load_sim_spec
from .data import DataError, load_dataset, write_capture_csv
from .estimate import FitOptions, FitResult, StepFailure, fit_multistart
from .inference import identifiability_check, profile_ci_N, profile_expected_info
from .likelihood import Params, log_likelihood, score_N, score_beta
from .model import ModelError, ModelSpec, NumericError, RecursiveDesign
from .sim import RNG_NAME, SimConfig, generate
from .tau import TauError, hyperbola_residual

SCHEMA = "latent-capture/1"
CI_TOL = 1e-9

log = logging.getLogger("latentcapture")

INPUT_ERRORS = (ConfigError, DataError, ModelError, OSError)


class InputError(Exception):
    pass


def _clean(obj: Any) -> Any:
    """JSON-native copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def emit_json(report: dict) -> str:
    return json.dumps(report, indent=2, allow_nan=False)


def parse_json(text: str) -> dict:
    return json.loads(text)


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------


def _partition_labels(spec: ModelSpec) -> list[str]:
    design = spec.conditional
    if isinstance(design, RecursiveDesign) and design.partition == "captured_before":
        return ["first capture", "recapture"]
    if isinstance(design, RecursiveDesign) and design.partition == "occasion":
        return [f"occasion {v + 1}" for v in range(design.dim_delta)]
    return [f"class {v + 1}" for v in range(design.dim_delta)]


def class_capture_table(fit: FitResult) -> list[dict]:
    """Occasion capture probabilities by latent class for each distinct covariate pattern."""
    if not isinstance(fit.spec.conditional, RecursiveDesign):
        return []
    _, lam = fit.spec.split(fit.params.beta)
    probs = expit(fit.bound.delta(lam))  # (s, C, dd)
    rows, seen = [], []
    names = fit.dataset.covariate_names
    for i in range(fit.dataset.s):
        if any(np.allclose(probs[i], p) for p in seen):
            continue
        seen.append(probs[i])
        rows.append({"stratum": i, "x": dict(zip(names, np.atleast_1d(fit.dataset.strata[i].x))),
                     "prob": probs[i]})
    return rows


def build_report(fit: FitResult, *, data_path: str, model_path: str, ci=None, comparisons=(),
                 ident=None, starts: int, options: FitOptions, ci_level: float | None) -> dict:
    spec, ds = fit.spec, fit.dataset
    info = profile_expected_info(fit)
    se = info.se_beta if info.se_beta is not None else [None] * spec.dim_beta
    beta = [{"name": nm, "value": v, "se": s} for nm, v, s in zip(spec.param_names, fit.params.beta, se)]
    tau = fit.params.tau
    design = spec.conditional
    model = {
        "name": spec.name,
        "classes": spec.C,
        "family": "recursive" if isinstance(design, RecursiveDesign) else "loglinear",
        "partition": getattr(design, "partition", None),
        "interactions": [list(p) for p in getattr(design, "interactions", ())],
        "latent_covariates": list(spec.latent_covariates),
        "dim_beta": spec.dim_beta,
    }
    s_beta = score_beta(fit.params, fit.state, ds)
    z = math.sqrt(chi2.ppf(ci_level or 0.95, 1))
    report = {
        "schema": SCHEMA,
        "version": __version__,
        "inputs": {"data": data_path, "model": model_path, "lists": ds.J},
        "model": model,
        "data": {"n": ds.n, "strata": ds.s, "covariates": list(ds.covariate_names)},
        "estimate": {
            "N_hat": fit.N,
            "N_rounded": fit.N_rounded,
            "loglik": fit.loglik,
            "phi": fit.phi,
            "beta": beta,
            "tau": {"min": tau.min(), "median": float(np.median(tau)), "max": tau.max(), "values": tau},
            "class_weights": [{"stratum": i, "xi": fit.state.xi[i]} for i in range(ds.s)],
            "class_capture": {"labels": _partition_labels(spec), "rows": class_capture_table(fit)},
        },
        "wald": {
            "se_N": info.se_N,
            "se_N_block": info.se_N_block,
            "lower": fit.N - z * info.se_N,
            "upper": fit.N + z * info.se_N,
            "F_NN": info.F_NN,
            "positive_definite": info.positive_definite,
        },
        "profile_ci": None,
        "comparisons": list(comparisons),
        "convergence": {
            "converged": fit.converged,
            "reason": fit.reason,
            "iterations": fit.iterations,
            "score_beta_max": float(np.abs(s_beta).max()),
            "score_N": score_N(fit.N, ds.n, fit.phi) if fit.N > ds.n else None,
            "hyperbola_residual": hyperbola_residual(tau, fit.state.phi, fit.N, ds.counts),
            "start_logliks": list(fit.start_logliks),
            "warnings": list(fit.warnings) + list(info.warnings),
            "boundary": list(fit.boundary),
        },
        "identifiability": None,
        "settings": {
            "seed": options.seed,
            "starts": starts,
            "tol_loglik": options.tol_loglik,
            "tol_param": options.tol_param,
            "ci_level": ci_level,
            "ci_tol": CI_TOL,
        },
    }
    if ci is not None:
        report["profile_ci"] = {
            "level": ci.level,
            "lower": ci.lower,
            "upper": ci.upper if ci.upper_bounded else None,
            "upper_bounded": ci.upper_bounded,
            "quantile": ci.quantile,
            "grid": [list(g) for g in ci.grid],
            "warnings": list(ci.warnings),
        }
    if ident is not None:
        report["identifiability"] = {
            "ok": ident.ok,
            "points": int(len(ident.min_eig)),
            "flagged": int(ident.flagged.sum()),
            "min_eig_min": float(ident.min_eig.min()),
            "threshold": ident.threshold,
        }
    return _clean(report)


def _num(v, fmt=".4f") -> str:
    return "NA" if v is None else format(v, fmt)


def format_text(report: dict) -> str:
    est, conv, model = report["estimate"], report["convergence"], report["model"]
    lines = [
        f"latent-capture report ({report['schema']})",
        f"model      {model['name']}: C={model['classes']}, {model['family']}"
        + (f", partition={model['partition']}" if model["partition"] else "")
        + (f", interactions={model['interactions']}" if model["interactions"] else "")
        + (f", latent covariates={','.join(model['latent_covariates'])}" if model["latent_covariates"] else ""),
        f"data       {report['inputs']['data']}: J={report['inputs']['lists']}, n={report['data']['n']}, "
        f"strata={report['data']['strata']}",
        "",
        f"N_hat      {est['N_hat']:.4f}  (rounded {est['N_rounded']})",
        f"loglik     {est['loglik']:.6f}",
    ]
    ci = report["profile_ci"]
    if ci is not None:
        upper = _num(ci["upper"], ".2f") if ci["upper_bounded"] else "unbounded"
        lines.append(f"profile CI {ci['level']:.0%}: [{ci['lower']:.2f}, {upper}]")
    w = report["wald"]
    lines.append(f"Wald       se(N)={w['se_N']:.4f}  [{w['lower']:.2f}, {w['upper']:.2f}]")
    lines += ["", "parameter                          estimate        se"]
    for b in est["beta"]:
        lines.append(f"  {b['name']:<30} {b['value']:>10.4f} {_num(b['se'], '>10.4f')}")
    t = est["tau"]
    lines.append(f"tau        min={t['min']:.4g} median={t['median']:.4g} max={t['max']:.4g}")
    cap = est["class_capture"]
    if cap["rows"]:
        lines += ["", "capture probability by latent class"]
        for row in cap["rows"]:
            label = "all strata" if len(cap["rows"]) == 1 else ", ".join(f"{k}={v:g}" for k, v in row["x"].items())
            lines.append(f"  [{label}]")
            for c, probs in enumerate(row["prob"], start=1):
                cells = "  ".join(f"{lab}={p:.3f}" for lab, p in zip(cap["labels"], probs))
                lines.append(f"    class {c}: {cells}")
    if report["comparisons"]:
        lines += ["", "likelihood ratio against reduced models"]
        for c in report["comparisons"]:
            lines.append(f"  {c['model']}: loglik={c['loglik']:.4f}  LR={c['lr']:.3f} on {c['df']} df  "
                         f"p={_num(c['p_value'], '.4g')}" + ("" if c["converged"] else "  (not converged)"))
    lines += ["", f"converged  {conv['converged']} ({conv['reason']}, {conv['iterations']} iterations)",
              f"score      max|s_beta|={conv['score_beta_max']:.2e}  s_N={_num(conv['score_N'], '.2e')}  "
              f"hyperbola residual={conv['hyperbola_residual']:.2e}"]
    if conv["start_logliks"]:
        lines.append("starts     " + " ".join(f"{v:.6f}" if v is not None else "NA" for v in conv["start_logliks"]))
    ident = report["identifiability"]
    if ident is not None:
        lines.append(f"identifiability  {'ok' if ident['ok'] else 'FLAGGED'} "
                     f"({ident['flagged']}/{ident['points']} points flagged)")
    for msg in conv["warnings"] + conv["boundary"] + (ci["warnings"] if ci else []):
        lines.append(f"warning    {msg}")
    s = report["settings"]
    lines.append(f"settings   seed={s['seed']} starts={s['starts']} tol_loglik={s['tol_loglik']:g} "
                 f"tol_param={s['tol_param']:g} ci_tol={s['ci_tol']:g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def _load(data: str, lists: int, model: str):
    ds = load_dataset(data, lists)
    spec = load_model(model, ds.J, ds.covariate_names)
    return ds, spec


def _fit(ds, spec, seed: int, starts: int | None):
    starts = starts if starts is not None else (1 if spec.C == 1 else 5)
    if starts < 1:
        raise InputError("--starts must be at least 1")
    options = FitOptions(seed=seed)
    return fit_multistart(ds, spec, options, starts=starts), options, starts


def _write(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text, encoding="utf-8")


def cmd_fit(args: argparse.Namespace) -> int:
    if not 0 < args.ci_level < 1:
        raise InputError("--ci-level must lie in (0, 1)")
    ds, spec = _load(args.data, args.lists, args.model)
    reduced = [(path, load_model(path, ds.J, ds.covariate_names)) for path in args.compare]
    result, options, starts = _fit(ds, spec, args.seed, args.starts)

    comparisons = []
    for path, rspec in reduced:
        rfit, _, _ = _fit(ds, rspec, args.seed, args.starts)
        # LR of the larger model against the smaller, whichever order was given
        df = spec.dim_beta - rspec.dim_beta
        lr = 2.0 * (result.loglik - rfit.loglik) * (1 if df >= 0 else -1)
        df = abs(df)
        comparisons.append({"model": rspec.name, "path": path, "loglik": rfit.loglik, "lr": lr, "df": df,
                            "p_value": float(chi2.sf(lr, df)) if df > 0 else None,
                            "converged": rfit.converged})

    ci = None
    if not args.no_ci:
        ci = profile_ci_N(result, level=args.ci_level, tol=CI_TOL)
    ident = identifiability_check(result, n_points=args.points, radius=args.radius, seed=args.seed)
    report = build_report(result, data_path=args.data, model_path=args.model, ci=ci, comparisons=comparisons,
                          ident=ident, starts=starts, options=options, ci_level=args.ci_level)
    _write(emit_json(report) + "\n" if args.format == "json" else format_text(report), args.out)
    return 0 if result.converged else 2


def cmd_simulate(args: argparse.Namespace) -> int:
    sim = load_sim_spec(args.spec)
    if args.n_true < 1:
        raise InputError("--n-true must be at least 1")
    config = SimConfig(N_true=args.n_true, beta=sim.beta, pool=sim.pool, weights=sim.weights,
                       covariate_names=sim.covariate_names, seed=args.seed)
    ds = generate(config, sim.spec)
    write_capture_csv(ds, args.out)
    print(f"wrote {ds.n} captured units in {ds.s} strata to {args.out} (rng {RNG_NAME}, seed {args.seed})",
          file=sys.stderr)
    return 0


def _params_from_report(path: str) -> tuple[dict, Params]:
    try:
        report = parse_json(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: not a JSON report ({exc})") from None
    if report.get("schema") != SCHEMA:
        raise InputError(f"{path}: expected schema {SCHEMA!r}, got {report.get('schema')!r}")
    est = report["estimate"]
    return report, est


def cmd_check(args: argparse.Namespace) -> int:
    if args.report:
        report, est = _params_from_report(args.report)
        inputs = report["inputs"]
        ds, spec = _load(inputs["data"], inputs["lists"], inputs["model"])
        beta = np.array([b["value"] for b in est["beta"]])
        if beta.size != spec.dim_beta:
            raise InputError(f"{args.report}: report has {beta.size} parameters, model has {spec.dim_beta}")
        params = Params.from_beta(est["N_hat"], beta, spec.dim_zeta, np.array(est["tau"]["values"]))
        bound = spec.bind(ds)
        state = bound.state(beta)
        result = FitResult(params=params, loglik=log_likelihood(params, state, ds), converged=True,
                           reason="loaded from report", trace=[], state=state, bound=bound, iterations=0)
    else:
        if not (args.data and args.lists and args.model):
            raise InputError("check needs --report, or --data, --lists and --model")
        ds, spec = _load(args.data, args.lists, args.model)
        result, _, _ = _fit(ds, spec, args.seed, args.starts)

    ident = identifiability_check(result, n_points=args.points, radius=args.radius, seed=args.seed)
    rows: list[CheckResult] = [
        CheckResult("identifiability (F_bb positive definite near estimate)",
                    float(ident.flagged.sum()), 0.0, f"{int(ident.flagged.sum())}/{len(ident.flagged)} points flagged, "
                    f"smallest eigenvalue {ident.min_eig.min():.3e}"),
    ]
    rows += derivative_checks(ds, spec, result.params, result.bound, seed=args.seed)
    rows += tau_checks(ds, result.params, result.state)
    rows.append(oracle_check(ds, spec, result.params, result.state))
    lines = [f"{'status':<6}  {'check':<58} {'value':>10}  {'tol':>8}"]
    for r in rows:
        lines.append(f"{'PASS' if r.passed else 'FAIL':<6}  {r.name:<58} {r.value:>10.3e}  {r.tol:>8.1e}"
                     + (f"  ({r.detail})" if r.detail else ""))
    ok = all(r.passed for r in rows)
    lines.append(f"{sum(r.passed for r in rows)}/{len(rows)} checks passed")
    _write("\n".join(lines) + "\n", args.out)
    return 0 if ok else 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="latentcapture", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a model and write a report")
    p.add_argument("--data", required=True, help="capture CSV: J 0/1 columns then numeric covariates")
    p.add_argument("--lists", required=True, type=int, help="number of lists J")
    p.add_argument("--model", required=True, help="model config file")
    p.add_argument("--ci-level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--starts", type=int, default=None, help="random starts (default 1 if C=1, else 5)")
    p.add_argument("--out", default=None, help="report path (default stdout)")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--compare", action="append", default=[], metavar="MODEL",
                   help="reduced model config; reports the LR statistic (repeatable)")
    p.add_argument("--no-ci", action="store_true", help="skip the profile-likelihood interval")
    p.add_argument("--points", type=int, default=20, help="identifiability probe points")
    p.add_argument("--radius", type=float, default=0.1, help="identifiability probe radius")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("simulate", help="simulate a capture CSV")
    p.add_argument("--spec", required=True, help="simulation spec (model config plus [population], [pool], [truth])")
    p.add_argument("--n-true", required=True, type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("check", help="identifiability and derivative self-tests")
    p.add_argument("--report", default=None, help="JSON report from 'fit --format json'")
    p.add_argument("--data")
    p.add_argument("--lists", type=int)
    p.add_argument("--model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--starts", type=int, default=None)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--radius", type=float, default=0.1)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_check)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (InputError, *INPUT_ERRORS) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (StepFailure, NumericError, TauError) as exc:
        print(f"error: estimation failed: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
