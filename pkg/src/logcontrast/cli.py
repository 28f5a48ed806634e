"""Command line interface: ``logcontrast {fit,cv,init,predict,simulate}``.

Every flag can also be given in a flat ``key=value`` file passed with
``--config``; keys are flag names without the leading dashes and flags on
the command line win. Exit codes: 0 success, 2 input error, 3 a fit did
not converge (results are still written).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import secrets
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .composition import CompositionalDataset, ConstraintMatrix, build_design
from .penalties import PenaltyKind
from .psc import robust_init
from .selection import RobustModel, robust_statistic, train_scale
from .simulate import METHODS, ScenarioConfig, results_csv, run_scenario
from .solver import RegressionProblem, default_penalty, dual_descent_fit, refit_inliers
from .tables import InputError, file_digest, read_groups, read_table, write_csv, write_json
from .workflow import fit_robust, needs_init

log = logging.getLogger("logcontrast")

EXIT_OK, EXIT_INPUT, EXIT_NONCONV = 0, 2, 3
INTERCEPT = "(Intercept)"


@dataclass
class RunManifest:
    command: str
    parameters: dict
    seed: int
    inputs: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    version: str = __version__
    wall_clock: float = 0.0


def _csv_list(kind):
    def parse(text):
        return [kind(t) for t in str(text).replace(",", " ").split()]
    return parse


def _add_common(p):
    g = p.add_argument_group("run")
    g.add_argument("--config", help="flat key=value file mirroring these flags")
    g.add_argument("--seed", type=int, help="random seed (a fresh one is drawn and recorded if omitted)")
    g.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="parallel workers")
    g.add_argument("--out", default=".", help="output directory")
    g.add_argument("--log-level", default="WARNING")


def _add_data(p, response=True):
    g = p.add_argument_group("data")
    g.add_argument("--data", required=True, help="CSV with a header; first column holds sample ids")
    g.add_argument("--id-col", help="sample id column (default: first column)")
    if response:
        g.add_argument("--response", help="response column in --data")
        g.add_argument("--response-file", help="CSV of sample id and response, if not in --data")
    g.add_argument("--covariates", type=_csv_list(str), default=[], help="non-compositional columns")
    g.add_argument("--groups", help="file of 'column,group' lines; default one zero-sum group")
    g.add_argument("--pseudo", type=float, default=0.5, help="pseudo-count replacing zeros")
    g.add_argument("--clr", action="store_true", help="centered log-ratio instead of plain log")
    g.add_argument("--no-intercept", action="store_true")


def _add_penalty(p):
    g = p.add_argument_group("model")
    g.add_argument("--penalty", default="A", type=str.upper, choices=["H", "E", "A"])
    g.add_argument("--alpha", type=float, default=0.95)
    g.add_argument("--tau", type=float, default=0.25, help="PSC trimming fraction")
    g.add_argument("--n-lambda", type=int, default=40)
    g.add_argument("--folds", type=int, default=10)
    g.add_argument("--rule", default="min", choices=["min", "1se"])


def build_parser():
    parser = argparse.ArgumentParser(prog="logcontrast", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="robust fit; lambda by R-CV unless --lambda is given")
    _add_common(p), _add_data(p), _add_penalty(p)
    p.add_argument("--lambda", dest="lam", type=float, help="fit at this lambda only")
    p.add_argument("--no-mean-shift", action="store_true", help="plain constrained fit without outlier shifts")

    p = sub.add_parser("cv", help="R-CV curve along the lambda path")
    _add_common(p), _add_data(p), _add_penalty(p)

    p = sub.add_parser("init", help="PSC starting values and adaptive weights")
    _add_common(p), _add_data(p)
    p.add_argument("--tau", type=float, default=0.25)

    p = sub.add_parser("predict", help="predictions from a fitted model")
    _add_common(p)
    p.add_argument("--model", required=True, help="coefficients.json written by fit")
    p.add_argument("--data", required=True)
    p.add_argument("--id-col")
    p.add_argument("--response", help="if present, also report the robust out-of-sample statistic")

    p = sub.add_parser("simulate", help="synthetic benchmark table")
    _add_common(p)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--p", type=_csv_list(int), default=[100, 300])
    p.add_argument("--outliers", type=_csv_list(int), default=[10, 20, 30, 40])
    p.add_argument("--leveraged", type=_csv_list(int), default=[0, 1])
    p.add_argument("--shift", type=float, default=8.0)
    p.add_argument("--snr", type=float, default=3.0)
    p.add_argument("--replicates", type=int, default=20)
    p.add_argument("--methods", type=_csv_list(str), default=list(METHODS))
    p.add_argument("--mode", default="shift", choices=["shift", "swap"])
    p.add_argument("--n-lambda", type=int, default=40)
    p.add_argument("--folds", type=int, default=10)
    return parser, sub.choices


def _read_config(path):
    out = {}
    for i, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{i}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-")] = value
    return out


def _apply_config(subparser, config, path):
    by_name = {}
    for a in subparser._actions:
        for opt in a.option_strings:
            by_name[opt.lstrip("-")] = a
    defaults = {}
    for key, value in config.items():
        a = by_name.get(key) or by_name.get(key.replace("_", "-"))
        if a is None or a.dest in ("help", "config"):
            raise InputError(f"{path}: unknown key {key!r}")
        if isinstance(a, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
            flag = value.lower() in ("1", "true", "yes", "on")
            if value.lower() not in ("0", "1", "true", "false", "yes", "no", "on", "off"):
                raise InputError(f"{path}: {key} expects true or false")
            defaults[a.dest] = flag if isinstance(a, argparse._StoreTrueAction) else not flag
        else:
            try:
                defaults[a.dest] = a.type(value) if a.type else value
            except (TypeError, ValueError):
                raise InputError(f"{path}: bad value for {key}: {value!r}") from None
            if a.choices is not None and defaults[a.dest] not in a.choices:
                raise InputError(f"{path}: {key} must be one of {list(a.choices)}")
        if a.required:
            a.required = False
    subparser.set_defaults(**defaults)


def _peek_config(argv):
    for i, tok in enumerate(argv):
        if tok == "--config" and i + 1 < len(argv):
            return argv[i + 1]
        if tok.startswith("--config="):
            return tok.split("=", 1)[1]
    return None


def parse_args(argv=None):
    parser, subs = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    command = next((t for t in argv if t in subs), None)
    path = _peek_config(argv)
    if command and path:
        try:
            config = _read_config(path)
        except OSError as exc:
            raise InputError(f"{path}: {exc.strerror}") from None
        _apply_config(subs[command], config, path)
    return parser.parse_args(argv)


# ----------------------------------------------------------------- data


@dataclass
class Prepared:
    dataset: CompositionalDataset
    design: object
    constraint: ConstraintMatrix | None
    names: list
    ids: list
    inputs: dict


def _prepare(args, need_response=True):
    table = read_table(args.data, args.id_col)
    inputs = {args.data: file_digest(args.data)}
    y = None
    excluded = set(args.covariates)
    if need_response:
        if args.response_file:
            rt = read_table(args.response_file)
            inputs[args.response_file] = file_digest(args.response_file)
            if rt.values.shape[1] != 1:
                raise InputError(f"{args.response_file}: expected one response column")
            if rt.ids != table.ids:
                raise InputError(f"{args.response_file}: sample ids differ from {args.data}")
            y = rt.values[:, 0]
        elif args.response:
            y = table.column(args.response)
            excluded.add(args.response)
        else:
            raise InputError("give --response or --response-file")
    for c in args.covariates:
        table.column(c)
    comp = [c for c in table.columns if c not in excluded]
    if not comp:
        raise InputError(f"{args.data}: no compositional columns left")
    N = table.select(args.covariates)
    cov_names = list(args.covariates)
    if not args.no_intercept:
        N = np.column_stack([N, np.ones(len(table.ids))])
        cov_names.append(INTERCEPT)
    try:
        ds = CompositionalDataset.from_counts(table.select(comp), y if y is not None else np.zeros(len(table.ids)),
                                              N, args.pseudo, clr=args.clr, sample_ids=table.ids,
                                              comp_names=comp, cov_names=cov_names)
        design = build_design(ds.Z, N)
    except ValueError as exc:
        raise InputError(f"{args.data}: {exc}") from None
    q = design.q
    if args.groups:
        inputs[args.groups] = file_digest(args.groups)
        labels = read_groups(args.groups, comp)
        groups = [[comp.index(c) for c in cols] for _, cols in sorted(labels.items())]
    else:
        groups = [list(range(len(comp)))]
    C = ConstraintMatrix.from_groups(groups, q).rescaled(design.col_scale) if groups else None
    return Prepared(ds, design, C, comp + cov_names, table.ids, inputs)


def _free(prep):
    return () if prep.design.intercept is None else (prep.design.intercept,)


# ------------------------------------------------------------- commands


def _fit_outputs(out, prep, fit, beta_refit, refit_out, extra):
    d = prep.design
    y = prep.dataset.y
    beta = d.to_original(fit.beta)
    fitted = d.X @ fit.beta
    coef = {
        "names": prep.names,
        "beta": beta,
        "beta_fit": fit.beta,
        "beta_refit": d.to_original(beta_refit),
        "lambda": fit.lam,
        "converged": fit.converged,
        "outer_iters": fit.outer_iters,
        "inner_iters": fit.inner_iters,
        "feasibility": fit.feasibility,
        "objective": fit.objective,
        "train_scale": train_scale(fit.beta, fit.gamma, d.X, y),
        "outliers": [prep.ids[i] for i in fit.outliers],
        "refit_outliers": [prep.ids[i] for i in refit_out],
        "composition_columns": prep.dataset.comp_names,
        "covariate_columns": prep.dataset.cov_names,
        "transform": "clr" if prep.dataset.clr else "log",
        "pseudo": extra.pop("pseudo"),
    }
    coef.update(extra)
    write_json(out / "coefficients.json", coef)
    rows = [(prep.ids[i], fit.gamma[i], int(fit.gamma[i] != 0), fitted[i]) for i in range(len(prep.ids))]
    write_csv(out / "gamma.csv", ["sample_id", "gamma", "outlier", "fitted"], rows)
    return ["coefficients.json", "gamma.csv"]


def cmd_fit(args, out):
    prep = _prepare(args)
    X, y, C, free = prep.design.X, prep.dataset.y, prep.constraint, _free(prep)
    kind = PenaltyKind.parse(args.penalty)
    extra = {"penalty": kind.value, "alpha": args.alpha, "pseudo": args.pseudo}
    if args.lam is not None:
        if args.lam < 0:
            raise InputError("--lambda must be nonnegative")
        if args.no_mean_shift:
            # no outlier init exists here, so adaptive weights stay at one
            pen = default_penalty(kind, X.shape[0], X.shape[1], args.alpha, mean_shift=False)
            prob = RegressionProblem(X, y, C, pen, mean_shift=False, free=free)
            start = np.zeros(X.shape[1])
        else:
            init = robust_init(y, X, C, free=free, tau=args.tau, seed=args.seed) if needs_init(kind) else None
            model = RobustModel(X, y, C, kind, args.alpha, free, init)
            prob, start = model.problem(), model.start()
        fit = dual_descent_fit(prob, args.lam, init=start)
        ref = refit_inliers(X, y, C, fit, free=free)
        outputs = _fit_outputs(out, prep, fit, ref.beta, ref.outliers, extra)
    else:
        rf = fit_robust(X, y, C, kind, alpha=args.alpha, free=free, n_lambda=args.n_lambda, k=args.folds,
                        seed=args.seed, rule=args.rule, n_jobs=args.threads, psc_kw={"tau": args.tau})
        fit = rf.fit
        extra["rule"] = args.rule
        outputs = _fit_outputs(out, prep, fit, rf.refit.beta, rf.refit.outliers, extra)
        outputs += _cv_outputs(out, rf.cv, rf.path)
    return outputs, prep.inputs, fit.converged


def _cv_outputs(out, cv, path):
    write_json(out / "cv.json", {
        "lambdas": cv.lambdas, "per_fold": cv.per_fold, "mean": cv.mean, "se": cv.se,
        "lambda_min": cv.lambda_min, "lambda_1se": cv.lambda_1se, "folds": cv.folds, "k": cv.k,
        "seed": cv.seed, "nnz_gamma": path.nnz_gamma,
    })
    write_csv(out / "cv.csv", ["lambda", "mean", "se"], zip(cv.lambdas, cv.mean, cv.se))
    return ["cv.json", "cv.csv"]


def cmd_cv(args, out):
    prep = _prepare(args)
    rf = fit_robust(prep.design.X, prep.dataset.y, prep.constraint, args.penalty, alpha=args.alpha,
                    free=_free(prep), n_lambda=args.n_lambda, k=args.folds, seed=args.seed, rule=args.rule,
                    n_jobs=args.threads, psc_kw={"tau": args.tau})
    return _cv_outputs(out, rf.cv, rf.path), prep.inputs, all(f.converged for f in rf.path_fits)


def cmd_init(args, out):
    prep = _prepare(args)
    d = prep.design
    res = robust_init(prep.dataset.y, d.X, prep.constraint, free=_free(prep), tau=args.tau, seed=args.seed)
    write_json(out / "init.json", {
        "names": prep.names, "beta": d.to_original(res.beta), "beta_fit": res.beta,
        "gamma": res.gamma, "weights": res.weights, "scales": res.scales,
        "clean_samples": [prep.ids[i] for i in res.active], "iterations": res.n_iter,
        "converged": res.converged,
    })
    return ["init.json"], prep.inputs, res.converged


def cmd_predict(args, out):
    try:
        model = json.loads(Path(args.model).read_text())
    except (OSError, ValueError) as exc:
        raise InputError(f"{args.model}: {exc}") from None
    table = read_table(args.data, args.id_col)
    inputs = {args.model: file_digest(args.model), args.data: file_digest(args.data)}
    comp, covs = model["composition_columns"], model["covariate_columns"]
    ds = CompositionalDataset.from_counts(table.select(comp), np.zeros(len(table.ids)),
                                          pseudo=model["pseudo"], clr=model["transform"] == "clr")
    N = np.column_stack([np.ones(len(table.ids)) if c == INTERCEPT else table.column(c) for c in covs]) \
        if covs else np.zeros((len(table.ids), 0))
    pred = np.hstack([ds.Z, N]) @ np.asarray(model["beta"])
    write_csv(out / "predictions.csv", ["sample_id", "prediction"], zip(table.ids, pred))
    outputs = ["predictions.csv"]
    if args.response:
        stat = robust_statistic(table.column(args.response) - pred, model["train_scale"])
        write_json(out / "oos.json", {"statistic": stat, "n": len(table.ids)})
        outputs.append("oos.json")
    return outputs, inputs, True


def cmd_simulate(args, out):
    results = []
    for p in args.p:
        for lev in args.leveraged:
            for O in args.outliers:
                if lev and O == 0:
                    continue
                cfg = ScenarioConfig(n=args.n, p=p, O=O, shift=args.shift, leveraged=bool(lev), snr=args.snr,
                                     replicates=args.replicates, seed=args.seed, mode=args.mode,
                                     methods=tuple(m.upper() for m in args.methods), n_lambda=args.n_lambda,
                                     folds=args.folds)
                results.append(run_scenario(cfg, n_jobs=args.threads))
    (out / "table.csv").write_text(results_csv(results))
    return ["table.csv"], {}, True


COMMANDS = {"fit": cmd_fit, "cv": cmd_cv, "init": cmd_init, "predict": cmd_predict, "simulate": cmd_simulate}


def main(argv=None):
    try:
        args = parse_args(argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    logging.basicConfig(level=args.log_level.upper(), format="%(levelname)s %(name)s: %(message)s")
    if args.seed is None:
        args.seed = secrets.randbits(31)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        outputs, inputs, ok = COMMANDS[args.command](args, out)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    params = {k: v for k, v in vars(args).items() if k not in ("command",)}
    manifest = RunManifest(args.command, params, args.seed, inputs, outputs,
                           wall_clock=round(time.perf_counter() - t0, 3))
    write_json(out / "manifest.json", asdict(manifest))
    if not ok:
        print("warning: a fit did not converge; results were written with converged=false", file=sys.stderr)
        return EXIT_NONCONV
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
