"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or numerical error.
"""

import argparse
import dataclasses
import itertools
import sys

import numpy as np

from . import io
from .baselines import cp_als, pca_fit, pca_transform
from .metrics import (
    LabeledFeatures,
    cluster_accuracy,
    kmeans,
    knn1_classify,
    nmi,
    recognition_rate,
)
from .model import fit, reconstruct, transform
from .synth import SynthSpec, generate
from .tensor import SingularSystemError

SWEEP_HEADER = "r,k,rate_mean,rate_std,e,seconds"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _int_list(text):
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError(f"values must be positive integers, got {text!r}")
    return values


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def _add_model_flags(p, required):
    p.add_argument("--k", type=_positive_int, required=required, help="number of features K")
    p.add_argument("--r", type=_positive_int, required=required, help="CP rank R")
    p.add_argument("--max-iters", type=_positive_int, help="maximum EM iterations (default 200)")
    p.add_argument("--tol", type=float, help="stopping threshold on |e(t) - e(t-1)| (default 1e-4)")
    p.add_argument("--seed", type=int, help="initialization seed (default 0)")
    p.add_argument("--a0", type=float, help="Gamma prior shape (default 1)")
    p.add_argument("--b0", type=float, help="Gamma prior rate (default 1)")
    p.add_argument("--init-scale", type=float, help="std of initial factor entries (default R^-1/2)")
    p.add_argument("--center", action="store_true", default=None, help="subtract the training mean")
    p.add_argument("--config", help="JSON run config; flags override its values")


def _model_config(args, **extra):
    file_values = io.load_run_config(args.config) if args.config else None
    try:
        return io.make_config(
            file_values,
            k=extra.get("k", args.k),
            r=extra.get("r", args.r),
            max_iters=args.max_iters,
            tol=args.tol,
            seed=extra.get("seed", args.seed),
            a0=args.a0,
            b0=args.b0,
            init_scale=args.init_scale,
            center=args.center,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_parser():
    parser = _Parser(prog="tbvdr", description="Bayesian vectorial dimension reduction for tensors")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="sample a data set from the generative model")
    p.add_argument("--out", required=True, help="output .tbvt path")
    p.add_argument("--dims", type=_int_list, required=True, help="sample extents, e.g. 8,6")
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--r", type=_positive_int, required=True)
    p.add_argument("--m", type=_positive_int, required=True, help="number of samples")
    p.add_argument("--sigma", type=float, default=0.0, help="noise standard deviation")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--classes", type=_positive_int, default=1)
    p.add_argument("--separation", type=float, default=0.0, help="norm of each class mean offset")
    p.add_argument("--labels-out", help="labels CSV path (default: <out stem>.labels.csv)")

    p = sub.add_parser("fit", help="train a model")
    p.add_argument("--train", required=True, help="training .tbvt, samples on the last mode")
    _add_model_flags(p, required=False)
    p.add_argument("--out", required=True, help="output .tbvm path")
    p.add_argument("--trace", help="CSV with columns iter,e,elbo,seconds")

    p = sub.add_parser("transform", help="extract features with a trained model")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="features CSV (M rows of K values)")

    p = sub.add_parser("reconstruct", help="rebuild samples from features")
    p.add_argument("--model", required=True)
    p.add_argument("--features", required=True)
    p.add_argument("--out", required=True, help="output .tbvt")

    p = sub.add_parser("classify", help="1-NN recognition rate")
    p.add_argument("--train-features", required=True)
    p.add_argument("--train-labels", required=True)
    p.add_argument("--test-features", required=True)
    p.add_argument("--test-labels", required=True)
    p.add_argument("--out", help="write predicted labels here")

    p = sub.add_parser("cluster", help="k-means clustering scored by AC and NMI")
    p.add_argument("--features", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--k", type=_positive_int, required=True, help="number of clusters")
    p.add_argument("--restarts", type=_positive_int, default=20)
    p.add_argument("--max-iters", type=_positive_int, default=300)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write cluster labels here")

    p = sub.add_parser("cp-als", help="CP-ALS baseline features (sample-mode factor)")
    p.add_argument("--data", required=True)
    p.add_argument("--r", type=_positive_int, required=True)
    p.add_argument("--max-iters", type=_positive_int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("pca", help="PCA baseline features")
    p.add_argument("--data", required=True)
    p.add_argument("--k", type=_positive_int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--test", help="also project this .tbvt with the fitted components")
    p.add_argument("--test-out", help="features CSV for --test")

    p = sub.add_parser("sweep", help="R/K grid of 1-NN recognition over random splits")
    p.add_argument("--train", required=True, help="full data set .tbvt")
    p.add_argument("--labels", required=True)
    p.add_argument("--r-list", type=_int_list, required=True)
    p.add_argument("--k-list", type=_int_list, required=True)
    p.add_argument("--splits", type=_positive_int, default=10)
    p.add_argument("--train-per-class", type=_positive_int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iters", type=_positive_int)
    p.add_argument("--tol", type=float)
    p.add_argument("--a0", type=float)
    p.add_argument("--b0", type=float)
    p.add_argument("--init-scale", type=float)
    p.add_argument("--center", action="store_true", default=None)
    p.add_argument("--config")
    p.add_argument("--out", help="CSV output (default stdout)")
    p.add_argument("--no-timing", action="store_true", help="write 0 in the seconds column")

    p = sub.add_parser("import-csv", help="stack CSV matrices into a .tbvt tensor")
    p.add_argument("--out", required=True)
    p.add_argument("inputs", nargs="+", help="CSV files, one matrix per sample")
    return parser


def cmd_synth(args):
    try:
        spec = SynthSpec(
            dims=tuple(args.dims), k=args.k, r=args.r, m=args.m, sigma=args.sigma,
            seed=args.seed, class_count=args.classes, class_separation=args.separation,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    data, _, _, labels = generate(spec)
    io.save_tensor(args.out, data)
    if args.classes > 1:
        path = args.labels_out
        if path is None:
            stem = args.out[:-5] if args.out.endswith(".tbvt") else args.out
            path = stem + ".labels.csv"
        io.save_labels(path, labels)
        print(f"wrote {args.out} and {path}")
    else:
        print(f"wrote {args.out}")


def _load_samples(path):
    data = io.load_tensor(path)
    if data.ndim < 2:
        raise DataError(f"{path}: need at least two modes (sample mode last)")
    return data


def cmd_fit(args):
    config = _model_config(args)
    data = _load_samples(args.train)
    model, report = fit(data, config)
    io.save_model(args.out, model)
    if args.trace:
        with open(args.trace, "w") as f:
            f.write("iter,e,elbo,seconds\n")
            for t, (e, b, s) in enumerate(
                zip(report.e_trace, report.elbo_trace, report.seconds_trace), 1
            ):
                f.write(f"{t},{e:.17g},{b:.17g},{s:.6f}\n")
    print(
        f"e={report.e_trace[-1]:.6f} iterations={report.iterations} "
        f"converged={str(report.converged).lower()} seconds={report.wall_seconds:.3f}"
    )


def cmd_transform(args):
    model = io.load_model(args.model)
    data = _load_samples(args.data)
    if data.shape[:-1] != model.dims:
        raise DataError(f"data sample shape {data.shape[:-1]} does not match model dims {model.dims}")
    io.save_features(args.out, transform(model, data).T)


def cmd_reconstruct(args):
    model = io.load_model(args.model)
    codes = io.load_features(args.features)
    if codes.shape[1] != model.basis.k:
        raise DataError(f"features have {codes.shape[1]} columns, model has K={model.basis.k}")
    out = np.stack([reconstruct(model, u) for u in codes], axis=-1)
    io.save_tensor(args.out, out)


def _labeled(features_path, labels_path):
    features = io.load_features(features_path)
    labels = io.load_labels(labels_path)
    if features.shape[0] != labels.shape[0]:
        raise DataError(
            f"{features_path} has {features.shape[0]} rows but {labels_path} has {labels.shape[0]} labels"
        )
    return LabeledFeatures(features, labels)


def cmd_classify(args):
    train = _labeled(args.train_features, args.train_labels)
    test = _labeled(args.test_features, args.test_labels)
    if train.features.shape[1] != test.features.shape[1]:
        raise DataError("train and test feature dimensions differ")
    pred = knn1_classify(train, test.features)
    if args.out:
        io.save_labels(args.out, pred)
    print(f"rate={recognition_rate(pred, test.labels):.6f}")


def cmd_cluster(args):
    data = _labeled(args.features, args.labels)
    if args.k > data.features.shape[0]:
        raise DataError(f"k={args.k} exceeds the number of samples {data.features.shape[0]}")
    pred = kmeans(data.features, args.k, args.restarts, args.max_iters, args.seed)
    if args.out:
        io.save_labels(args.out, pred)
    print(f"ac={cluster_accuracy(pred, data.labels):.6f} nmi={nmi(pred, data.labels):.6f}")


def cmd_cp_als(args):
    data = _load_samples(args.data)
    res = cp_als(data, args.r, max_iters=args.max_iters, tol=args.tol, seed=args.seed)
    io.save_features(args.out, res.features)
    fit_value = res.fit_trace[-1] if res.fit_trace else 0.0
    print(f"fit={fit_value:.6f} iterations={len(res.fit_trace)}")


def cmd_pca(args):
    data = _load_samples(args.data)
    try:
        res = pca_fit(data, args.k)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    io.save_features(args.out, pca_transform(res, data))
    if args.test:
        if not args.test_out:
            raise UsageError("--test requires --test-out")
        test = _load_samples(args.test)
        if test.shape[:-1] != data.shape[:-1]:
            raise DataError("test sample shape differs from training sample shape")
        io.save_features(args.test_out, pca_transform(res, test))


def stratified_splits(labels, per_class, splits, rng):
    """``splits`` pairs of (train, test) index arrays with ``per_class`` training samples per class."""
    classes = np.unique(labels)
    for c in classes:
        count = int(np.sum(labels == c))
        if count < per_class:
            raise DataError(f"class {c} has {count} samples, fewer than --train-per-class {per_class}")
    out = []
    for _ in range(splits):
        train, test = [], []
        for c in classes:
            idx = rng.permutation(np.flatnonzero(labels == c))
            train.append(idx[:per_class])
            test.append(idx[per_class:])
        train, test = np.sort(np.concatenate(train)), np.sort(np.concatenate(test))
        if test.size == 0:
            raise DataError("no samples left for testing")
        out.append((train, test))
    return out


def cmd_sweep(args):
    data = _load_samples(args.train)
    labels = io.load_labels(args.labels)
    if labels.shape[0] != data.shape[-1]:
        raise DataError(f"{labels.shape[0]} labels for {data.shape[-1]} samples")
    seed = 0 if args.seed is None else args.seed
    splits = stratified_splits(labels, args.train_per_class, args.splits, np.random.default_rng(seed))
    args.k = args.r = None
    configs = [
        _model_config(args, r=r, k=k, seed=seed) for r, k in itertools.product(args.r_list, args.k_list)
    ]

    lines = [SWEEP_HEADER]
    for config in configs:
        rates, quality, seconds = [], [], []
        for s, (train, test) in enumerate(splits):
            split_config = dataclasses.replace(config, seed=seed + s)
            model, report = fit(data[..., train], split_config)
            train_set = LabeledFeatures(report.posterior.u.T, labels[train])
            pred = knn1_classify(train_set, transform(model, data[..., test]).T)
            rates.append(recognition_rate(pred, labels[test]))
            quality.append(report.e_trace[-1])
            seconds.append(report.wall_seconds)
        secs = 0.0 if args.no_timing else float(np.mean(seconds))
        lines.append(
            f"{config.r},{config.k},{np.mean(rates):.6f},{np.std(rates):.6f},"
            f"{np.mean(quality):.6f},{secs:.3f}"
        )
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
    else:
        sys.stdout.write(text)


def cmd_import_csv(args):
    io.save_tensor(args.out, io.load_csv_stack(args.inputs))
    print(f"wrote {args.out}")


COMMANDS = {
    "synth": cmd_synth,
    "fit": cmd_fit,
    "transform": cmd_transform,
    "reconstruct": cmd_reconstruct,
    "classify": cmd_classify,
    "cluster": cmd_cluster,
    "cp-als": cmd_cp_als,
    "pca": cmd_pca,
    "sweep": cmd_sweep,
    "import-csv": cmd_import_csv,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        COMMANDS[args.command](args)
    except (UsageError, io.ConfigError) as exc:
        print(f"tbvdr {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, io.FormatError, SingularSystemError, ValueError, OSError) as exc:
        print(f"tbvdr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
