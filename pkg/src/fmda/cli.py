"""Command-line interface.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from fmda.basis import BasisSpec, build_design, logistic_covariates
from fmda.curves import SyntheticSpec, default_synthetic_spec, generate_synthetic, load_csv, save_csv
from fmda.discriminant import METHOD_TAGS, Classifier, MethodSpec, TrainingError, predict, predict_proba, train
from fmda.errors import FmdaError, ValidationError
from fmda.evaluation import benchmark_table, cross_validate, format_table, results_csv, results_json
from fmda.kernels import logistic_proportions
from fmda.mixrhlp import FitConfig, e_step, regime_mean_curve

logger = logging.getLogger("fmda")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _int_list(text: str) -> tuple:
    try:
        return tuple(int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _add_fit_flags(p: argparse.ArgumentParser, method: bool = True):
    g = p.add_argument_group("model fitting")
    if method:
        g.add_argument("--method", default="FMDA-MixRHLP", choices=METHOD_TAGS)
        g.add_argument("--basis", choices=("poly", "bspline"), help="regression basis (default: per method)")
        g.add_argument("--degree", type=int, help="polynomial degree")
        g.add_argument("--order", type=int, help="B-spline order")
        g.add_argument("--knots", type=int, help="number of interior B-spline knots")
        g.add_argument("--K", type=_int_list, help="sub-classes, one value or one per class (e.g. 3,1)")
        g.add_argument("--R", type=int, help="regimes per sub-class")
    g.add_argument("--restarts", type=int, default=10)
    g.add_argument("--max-iters", type=int, default=300)
    g.add_argument("--tol", type=float, default=1e-8, help="relative log-likelihood tolerance")
    g.add_argument("--init", choices=("kmeans", "random"), default="kmeans")


def method_from_args(args) -> MethodSpec:
    base = MethodSpec.default(args.method)
    basis = base.basis
    kind = {"poly": "polynomial", "bspline": "bspline", None: basis.kind}[args.basis]
    if kind == "polynomial":
        degree = args.degree if args.degree is not None else (basis.degree if basis.kind == "polynomial" else 0)
        basis = BasisSpec.polynomial(degree)
    else:
        order = args.order if args.order is not None else (basis.order if basis.kind == "bspline" else 4)
        knots = args.knots if args.knots is not None else (basis.knots if basis.kind == "bspline" else 0)
        basis = BasisSpec.bspline(order, knots)
    K = args.K if args.K is not None else base.K
    R = args.R if args.R is not None else base.R
    return MethodSpec(args.method, K, R, basis)


def config_from_args(args) -> FitConfig:
    return FitConfig(
        max_iters=args.max_iters,
        rel_tol=args.tol,
        restarts=args.restarts,
        init=args.init,
        seed=args.seed,
    )


# ----------------------------------------------------------------- subcommands


def cmd_generate(args) -> int:
    if args.spec:
        try:
            spec = SyntheticSpec.from_json(args.spec)
        except OSError as exc:
            print(f"error: cannot read spec: {exc}", file=sys.stderr)
            return EXIT_RUNTIME
    else:
        spec = default_synthetic_spec()
    if args.seed is not None:
        spec = SyntheticSpec(spec.classes, spec.curves_per_class, spec.m, args.seed, spec.t_start, spec.t_end)
    data = generate_synthetic(spec)
    save_csv(data, args.out)
    if args.truth_out:
        with open(args.truth_out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "label", "subclass"])
            for i in range(data.n):
                w.writerow([i + 1, int(data.labels[i]), int(data.subclasses[i])])
    print(f"wrote {data.n} curves (m={data.m}, G={data.n_classes}) to {args.out}")
    for g in range(1, data.n_classes + 1):
        counts = np.bincount(data.subclasses[data.labels == g], minlength=len(spec.classes[g - 1]) + 1)[1:]
        print(f"  class {g}: {int(np.sum(data.labels == g))} curves, sub-class counts {counts.tolist()}")
    return EXIT_OK


def cmd_fit(args) -> int:
    data = load_csv(args.data, has_labels=True)
    method = method_from_args(args)
    try:
        clf = train(data, method, config_from_args(args))
    except TrainingError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    clf.save(args.out)
    for g, d in enumerate(clf.diagnostics, start=1):
        print(f"class {g}: log-likelihood {d.log_likelihood:.6f}, {d.iterations} EM iterations, converged={d.converged}")
    print(f"model written to {args.out}")
    return EXIT_OK


def _load_model_and_data(model_path, data_path):
    clf = Classifier.load(model_path)
    data = load_csv(data_path, has_labels=None)
    if data.m != clf.grid.m or not np.allclose(data.grid.times, clf.grid.times, rtol=1e-12, atol=0):
        raise ValidationError(f"data grid ({data.m} points) does not match the model grid ({clf.grid.m} points)")
    return clf, data


def cmd_predict(args) -> int:
    clf, data = _load_model_and_data(args.model, args.data)
    G = clf.n_classes
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["index", "predicted"] + [f"p_{g}" for g in range(1, G + 1)])
        if data.n:
            proba = predict_proba(clf, data.values)
            labels = predict(clf, data.values)
            for i in range(data.n):
                w.writerow([i + 1, int(labels[i])] + [repr(float(p)) for p in proba[i]])
    print(f"wrote {data.n} predictions to {args.out}")
    return EXIT_OK


def _write_results(out_dir: Path, results, extra: dict):
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "results.csv").write_text(results_csv(results))
    (out_dir / "summary.json").write_text(results_json(results, extra))


def cmd_evaluate(args) -> int:
    data = load_csv(args.data, has_labels=True)
    method = method_from_args(args)
    res = cross_validate(data, method, args.folds, config_from_args(args), args.seed)
    _write_results(Path(args.out_dir), [res], {"folds": args.folds, "seed": args.seed, "method_spec": method.to_dict()})
    print(format_table([res]))
    return EXIT_RUNTIME if res.partial and all(e is None for e in res.fold_errors) else EXIT_OK


def cmd_benchmark(args) -> int:
    data = load_csv(args.data, has_labels=True)
    tags = args.methods.split(",") if args.methods else list(METHOD_TAGS)
    unknown = [t for t in tags if t not in METHOD_TAGS]
    if unknown:
        raise UsageError(f"unknown method(s): {', '.join(unknown)}")
    methods = [MethodSpec.default(t) for t in tags]
    results = benchmark_table(data, methods, args.folds, config_from_args(args), args.seed)
    _write_results(
        Path(args.out_dir),
        results,
        {"folds": args.folds, "seed": args.seed, "methods": [m.to_dict() for m in methods]},
    )
    print(format_table(results))
    if all(np.isnan(r.mean) for r in results):
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_export_plots(args) -> int:
    clf, data = _load_model_and_data(args.model, args.data)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    times = clf.grid.times
    cov = logistic_covariates(clf.grid)
    labels = data.labels if data.is_labeled else (np.argmax(clf.class_log_scores(data.values), axis=1) + 1)
    for g in range(1, clf.n_classes + 1):
        params = clf.params[g - 1]
        design = build_design(clf.shapes[g - 1].basis, clf.grid)
        members = np.flatnonzero(labels == g)
        with open(out / f"class{g}_assignments.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["index", "subclass"] + [f"gamma_{k}" for k in range(1, params.K + 1)])
            if members.size:
                post = e_step(params, data.values[members], design, cov)
                for i, row in zip(members, post.gamma):
                    w.writerow([i + 1, int(np.argmax(row)) + 1] + [repr(float(x)) for x in row])
        means = np.column_stack([regime_mean_curve(params, k, design, cov) for k in range(params.K)])
        with open(out / f"class{g}_means.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t"] + [f"subclass_{k}" for k in range(1, params.K + 1)])
            for j, t in enumerate(times):
                w.writerow([repr(float(t))] + [repr(float(v)) for v in means[j]])
        for k in range(params.K):
            pi = logistic_proportions(params.weights[k], cov)
            with open(out / f"class{g}_subclass{k + 1}_proportions.csv", "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["t"] + [f"pi_{r}" for r in range(1, pi.shape[1] + 1)])
                for j, t in enumerate(times):
                    w.writerow([repr(float(t))] + [repr(float(v)) for v in pi[j]])
    print(f"plot data for {clf.n_classes} classes written to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fmda", description="Curve classification with MixRHLP discriminant analysis")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="simulate a labeled curve dataset")
    p.add_argument("--spec", help="JSON generator config (default: bundled two-class benchmark)")
    p.add_argument("--out", required=True)
    p.add_argument("--truth-out", help="also write generator sub-class labels to this CSV")
    p.add_argument("--seed", type=int, default=None, help="override the config's seed")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("fit", help="train a classifier and write it as JSON")
    p.add_argument("data")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="classify curves with a fitted model")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="k-fold cross-validated error of one method")
    p.add_argument("data")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_fit_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("benchmark", help="cross-validate several methods on shared folds")
    p.add_argument("data")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(METHOD_TAGS)}")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    _add_fit_flags(p, method=False)
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("export-plots", help="write sub-class partitions, regime proportions and mean curves")
    p.add_argument("model")
    p.add_argument("data")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_export_plots)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (UsageError, ValidationError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, FmdaError, ArithmeticError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
