"""Command-line entry point: ``zae prep|train|eval|analyze``.

Every command takes ``--seed``, ``--force`` and ``--config FILE`` (flat
``key=value`` lines whose keys are option names; flags on the command
line win).  Outputs are never overwritten without ``--force``, and a JSON
manifest describing the run is written before any other output.

Exit codes: 0 success, 1 usage, 2 data or parse error, 3 numerical failure.
"""

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import __version__
from .analysis import (
    FilterLayout,
    bias_histogram,
    export_filters,
    fixed_point_report,
    frame_report,
    parseval_ratios,
)
from .datasets import crop_center_patches, gen_rotating_dots, load_cifar10, sample_random_patches
from .errors import DataFormatError, DimensionError, NumericalError
from .evaluation import (
    DEFAULT_DECAY_GRID,
    InferenceScheme,
    ModelSpec,
    PipelineConfig,
    classify,
    extract_features,
    fit_model,
    run_feature_sweep,
    run_inference_comparison,
    run_patchsize_sweep,
    write_csv,
)
from .formats import load_matrix, load_model, load_transform, save_matrix, save_model, save_transform, save_videos
from .models import KMeansModel, kmeans_distortion
from .preprocessing import contrast_normalize, pca_apply, pca_fit
from .seeding import STREAMS, subseed
from .training import MetricsLog, TrainConfig, write_curve_csv

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3
TRAIN_MODELS = ("trec", "tlin", "dae", "cae", "kmeans")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text):
    low = str(text).lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true or false, got {text!r}")


def _int_list(text):
    try:
        return [int(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _float_list(text):
    try:
        return [float(v) for v in str(text).split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _str_list(text):
    return [v.strip() for v in str(text).split(",") if v.strip()]


# -- parser -----------------------------------------------------------------


def _common():
    p = _Parser(add_help=False)
    g = p.add_argument_group("common")
    g.add_argument("--seed", type=int, default=0, help="master seed for all random streams")
    g.add_argument("--force", action="store_true", help="overwrite existing outputs")
    g.add_argument("--config", help="flat key=value file; command-line flags win")
    return p


def _training_options(p, with_model=True):
    g = p.add_argument_group("training")
    if with_model:
        g.add_argument("--model", choices=TRAIN_MODELS, default="trec")
    g.add_argument("--theta", type=float, default=None, help="threshold for trec/tlin (default 1.0)")
    g.add_argument("--reg-p", type=float, default=None, help="zero-mask probability for dae (default 0.5)")
    g.add_argument("--reg-lambda", type=float, default=None, help="contraction strength for cae (default 1.0)")
    g.add_argument("--epochs", type=int, default=1000)
    g.add_argument("--batch", type=int, default=100)
    g.add_argument("--lr-warmup", type=float, default=1e-4)
    g.add_argument("--lr-main", type=float, default=1e-3)
    g.add_argument("--warmup-epochs", type=int, default=3)
    g.add_argument("--momentum", type=float, default=0.9)
    g.add_argument("--kmeans-iters", type=int, default=10)


def _pipeline_options(p):
    g = p.add_argument_group("pipeline")
    g.add_argument("--input", nargs="+", required=True, help="CIFAR-10 training batch files")
    g.add_argument("--test-input", nargs="+", required=True, help="CIFAR-10 test batch files")
    g.add_argument("--train-subset", type=int, default=None)
    g.add_argument("--test-subset", type=int, default=None)
    g.add_argument("--variance", type=float, default=0.99)
    g.add_argument("--whiten", type=_bool, default=True)
    g.add_argument("--scheme", choices=[s.value for s in InferenceScheme], default="relu-nobias")
    _classifier_options(p)
    p.add_argument("--jobs", type=int, default=1)


def _classifier_options(p):
    g = p.add_argument_group("classifier")
    g.add_argument("--decay-grid", type=_float_list, default=list(DEFAULT_DECAY_GRID))
    g.add_argument("--holdout", type=int, default=10000)
    g.add_argument("--classifier-iters", type=int, default=500)


def build_parser():
    common = _common()
    parser = _Parser(prog="zae", description="Zero-bias autoencoder experiments.")
    parser.add_argument("--version", action="version", version=f"zae {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prep", parents=[common], help="contrast-normalize and PCA-project data")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--input", nargs="+", help="CIFAR-10 training batch files")
    src.add_argument("--zmat", help="raw ZMAT matrix (e.g. generated videos)")
    p.add_argument("--test-input", nargs="+", help="CIFAR-10 test batch files")
    p.add_argument("--variance", type=float, default=0.99)
    p.add_argument("--whiten", type=_bool, default=True)
    p.add_argument("--patch", type=int, default=None, help="center-crop size P")
    p.add_argument("--random-patches", type=int, default=None,
                   help="instead of center crops, sample this many random P x P windows")
    p.add_argument("--train-subset", type=int, default=None)
    p.add_argument("--test-subset", type=int, default=None)
    p.add_argument("--out-dir", required=True)

    p = sub.add_parser("train", parents=[common], help="train a feature learner")
    p.add_argument("--data", required=True, help="ZMAT training matrix")
    p.add_argument("--hidden", type=int, required=True)
    _training_options(p)
    p.add_argument("--out", required=True, help="ZAE1 model file")
    p.add_argument("--metrics", default=None, help="per-epoch CSV (default: <out>.csv)")

    ev = sub.add_parser("eval", help="feature extraction and classification")
    esub = ev.add_subparsers(dest="action", required=True, parser_class=_Parser)

    p = esub.add_parser("features", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--scheme", choices=[s.value for s in InferenceScheme], default="relu-nobias")
    p.add_argument("--out", required=True)

    for name in ("classify", "infer-compare"):
        p = esub.add_parser(name, parents=[common])
        p.add_argument("--model", required=True)
        p.add_argument("--data", required=True)
        p.add_argument("--labels", required=True)
        p.add_argument("--test-data", required=True)
        p.add_argument("--test-labels", required=True)
        if name == "classify":
            p.add_argument("--scheme", choices=[s.value for s in InferenceScheme], default="relu-nobias")
        _classifier_options(p)
        p.add_argument("--out", required=True)

    p = esub.add_parser("sweep-k", parents=[common])
    _pipeline_options(p)
    _training_options(p)
    p.add_argument("--patch", type=int, default=None)
    p.add_argument("--counts", type=_int_list, required=True)
    p.add_argument("--out", required=True)

    p = esub.add_parser("sweep-p", parents=[common])
    _pipeline_options(p)
    _training_options(p, with_model=False)
    p.add_argument("--models", type=_str_list, default=["tlin", "cae"])
    p.add_argument("--patches", type=_int_list, required=True)
    p.add_argument("--hidden", type=int, required=True)
    p.add_argument("--out", required=True)

    an = sub.add_parser("analyze", help="theory checks and filter images")
    asub = an.add_subparsers(dest="action", required=True, parser_class=_Parser)

    p = asub.add_parser("biases", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--bins", type=int, default=20)
    p.add_argument("--out", required=True)

    p = asub.add_parser("fixedpoint", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = asub.add_parser("parseval", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--data", default=None, help="probe matrix (default: Gaussian probes)")
    p.add_argument("--probes", type=int, default=1000)
    p.add_argument("--out", required=True)

    p = asub.add_parser("filters", parents=[common])
    p.add_argument("--model", required=True)
    p.add_argument("--pca", default=None, help="ZPCA transform to back-project through")
    p.add_argument("--height", type=int, required=True)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--channels", type=int, default=1)
    p.add_argument("--frames", type=int, default=1)
    p.add_argument("--frame-indices", type=_int_list, default=None)
    p.add_argument("--out", required=True, help="output prefix; writes <out>.ppm or <out>_frame<t>.ppm")

    p = asub.add_parser("gen-rotdots", parents=[common])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--frames", type=int, default=10)
    p.add_argument("--size", type=int, default=13)
    p.add_argument("--dots", type=int, default=16)
    p.add_argument("--angle", type=float, default=None, help="fixed per-frame angle in radians")
    p.add_argument("--out", required=True)
    return parser


def _leaf_parsers(parser):
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            for child in action.choices.values():
                if any(isinstance(a, argparse._SubParsersAction) for a in child._actions):
                    yield from _leaf_parsers(child)
                else:
                    yield child


def read_config(path):
    values = {}
    with open(path) as fh:
        for n, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{n}: expected key=value")
            key, value = line.split("=", 1)
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def parse_args(argv):
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    parser = build_parser()
    config = {}
    if known.config:
        try:
            config = read_config(known.config)
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        for leaf in _leaf_parsers(parser):
            dests = {a.dest: a for a in leaf._actions}
            for key in config:
                if key in dests:
                    dests[key].required = False
            # argparse converts string defaults with the option's type
            leaf.set_defaults(**{k: v for k, v in config.items() if k in dests})
    args = parser.parse_args(argv)
    unknown = sorted(k for k in config if k not in vars(args))
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    args.config_keys = sorted(config)
    for key, value in config.items():
        # list options given only through the config stay strings
        if isinstance(getattr(args, key), str) and isinstance(value, str) and key in ("input", "test_input"):
            setattr(args, key, value.split())
    return args


# -- run bookkeeping ----------------------------------------------------------


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class Run:
    """Tracks inputs and outputs of one command and writes its manifest."""

    def __init__(self, args, argv, manifest_path):
        self.args = args
        self.argv = list(argv)
        self.manifest_path = manifest_path
        self.inputs = []
        self.outputs = [manifest_path]

    def input(self, *paths):
        for path in paths:
            if path is not None:
                if not os.path.exists(path):
                    raise FileNotFoundError(f"input file not found: {path}")
                self.inputs.append(str(path))
        return paths[0] if len(paths) == 1 else paths

    def output(self, *paths):
        self.outputs.extend(str(p) for p in paths)

    def start(self):
        """Check for clobbering, then write the manifest ahead of all outputs."""
        if not self.args.force:
            existing = [p for p in self.outputs if os.path.exists(p)]
            if existing:
                raise UsageError(f"refusing to overwrite {', '.join(existing)} (use --force)")
        config = {k: v for k, v in sorted(vars(self.args).items()) if k not in ("force", "config_keys")}
        manifest = {
            "tool": "zae",
            "version": __version__,
            "command": self.argv,
            "config": config,
            "seeds": {name: subseed(self.args.seed, name) for name in STREAMS},
            "inputs": {p: _sha256(p) for p in self.inputs},
            "outputs": self.outputs[1:],
        }
        parent = os.path.dirname(self.manifest_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(self.manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def _given(args, name):
    """True when option ``name`` came from the command line or the config file."""
    return getattr(args, name) is not None


def _model_spec(args, name=None):
    name = name or args.model
    if _given(args, "theta") and name not in ("trec", "tlin"):
        raise UsageError(f"--theta applies only to trec/tlin, not {name}")
    if _given(args, "reg_p") and name != "dae":
        raise UsageError(f"--reg-p applies only to dae, not {name}")
    if _given(args, "reg_lambda") and name != "cae":
        raise UsageError(f"--reg-lambda applies only to cae, not {name}")
    return ModelSpec(
        name,
        theta=1.0 if args.theta is None else args.theta,
        p=0.5 if args.reg_p is None else args.reg_p,
        lam=1.0 if args.reg_lambda is None else args.reg_lambda,
        kmeans_iters=args.kmeans_iters,
    )


def _train_config(args):
    try:
        return TrainConfig(
            epochs=args.epochs, batch_size=args.batch, lr_warmup=args.lr_warmup, lr_main=args.lr_main,
            warmup_epochs=args.warmup_epochs, momentum=args.momentum, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _pipeline_config(args, train=None):
    return PipelineConfig(
        variance=getattr(args, "variance", 0.99),
        whiten=getattr(args, "whiten", True),
        train=train or TrainConfig(seed=args.seed),
        decay_grid=tuple(args.decay_grid),
        holdout_size=args.holdout,
        classifier_iters=args.classifier_iters,
        seed=args.seed,
    )


def _labels(path):
    y = load_matrix(path)
    if y.shape[1] != 1 or np.any(y != np.round(y)) or np.any(y < 0):
        raise DataFormatError(f"{path}: labels must be one column of non-negative integers")
    return y[:, 0].astype(np.int64)


# -- commands -----------------------------------------------------------------


def cmd_prep(args, argv):
    out = args.out_dir
    run = Run(args, argv, os.path.join(out, "manifest.json"))
    names = ["data.zmat", "pca.zpca"]
    if args.input:
        run.input(*args.input)
        if args.random_patches is None:
            names.append("labels.zmat")
    else:
        run.input(args.zmat)
    if args.test_input:
        if not args.input:
            raise UsageError("--test-input needs --input")
        run.input(*args.test_input)
        names += ["test_data.zmat", "test_labels.zmat"]
    if args.random_patches is not None and args.patch is None:
        raise UsageError("--random-patches needs --patch")
    run.output(*(os.path.join(out, n) for n in names))
    # load before writing anything so parse errors leave no partial outputs
    test = None
    if args.input:
        train = load_cifar10(args.input).head(args.train_subset)
        if args.test_input:
            test = load_cifar10(args.test_input).head(args.test_subset)
        labels = train.labels
        if args.random_patches is not None:
            X = sample_random_patches(train, args.patch, args.random_patches, seed=subseed(args.seed, "data"))
        elif args.patch is not None:
            X = crop_center_patches(train, args.patch).images
        else:
            X = train.images
        if test is not None:
            test = crop_center_patches(test, args.patch) if args.patch is not None else test
    else:
        if args.patch is not None:
            raise UsageError("--patch applies to CIFAR input only")
        X = load_matrix(args.zmat)[: args.train_subset]
        labels = None
    run.start()
    Xn = contrast_normalize(X)
    T = pca_fit(Xn, args.variance, args.whiten)
    save_matrix(os.path.join(out, "data.zmat"), pca_apply(T, Xn))
    save_transform(os.path.join(out, "pca.zpca"), T)
    if labels is not None and args.random_patches is None:
        save_matrix(os.path.join(out, "labels.zmat"), labels.reshape(-1, 1).astype(np.float64))
    if test is not None:
        save_matrix(os.path.join(out, "test_data.zmat"), pca_apply(T, contrast_normalize(test.images)))
        save_matrix(os.path.join(out, "test_labels.zmat"), test.labels.reshape(-1, 1).astype(np.float64))
    print(f"prep: {X.shape[0]} rows, {X.shape[1]} -> {T.output_dim} dims")


def cmd_train(args, argv):
    spec = _model_spec(args)
    tcfg = _train_config(args)
    metrics = args.metrics or f"{args.out}.csv"
    run = Run(args, argv, f"{args.out}.manifest.json")
    run.input(args.data)
    run.output(args.out, metrics)
    X = load_matrix(args.data)
    if args.hidden < 1:
        raise UsageError("--hidden must be positive")
    run.start()
    log = MetricsLog()
    model = fit_model(spec, args.hidden, X, PipelineConfig(train=tcfg, seed=args.seed), callback=log)
    if isinstance(model, KMeansModel):
        log(spec.kmeans_iters, kmeans_distortion(model, X))
    save_model(args.out, model)
    write_curve_csv(log, metrics)
    last = f", final loss {log.rows[-1][1]:.6g}" if log.rows else ""
    print(f"train: {spec.name} K={args.hidden} on {X.shape[0]}x{X.shape[1]}{last}")


def _load_split(args, run):
    run.input(args.model, args.data, args.labels, args.test_data, args.test_labels)
    model = load_model(args.model)
    return model, load_matrix(args.data), _labels(args.labels), load_matrix(args.test_data), _labels(args.test_labels)


def cmd_eval(args, argv):
    run = Run(args, argv, f"{args.out}.manifest.json")
    run.output(args.out)
    if args.action == "features":
        run.input(args.model, args.data)
        model, X = load_model(args.model), load_matrix(args.data)
        run.start()
        F = extract_features(model, X, args.scheme)
        save_matrix(args.out, F)
        print(f"features: {F.shape[0]}x{F.shape[1]}")
        return
    if args.action in ("classify", "infer-compare"):
        model, Xtr, ytr, Xte, yte = _load_split(args, run)
        cfg = _pipeline_config(args)
        run.start()
        if args.action == "classify":
            acc, decay = classify(extract_features(model, Xtr, args.scheme), ytr,
                                  extract_features(model, Xte, args.scheme), yte, cfg)
            write_csv(args.out, ["scheme", "accuracy", "weight_decay"], [(args.scheme, acc, decay)])
            print(f"classify: accuracy {acc:.4f} (decay {decay:g})")
        else:
            rows = run_inference_comparison(model, Xtr, ytr, Xte, yte, cfg)
            write_csv(args.out, ["scheme", "accuracy"], rows)
            for scheme, acc in rows:
                print(f"{scheme}: {acc:.4f}")
        return
    run.input(*args.input)
    run.input(*args.test_input)
    tcfg = _train_config(args)
    train = load_cifar10(args.input).head(args.train_subset)
    test = load_cifar10(args.test_input).head(args.test_subset)
    cfg = _pipeline_config(args, tcfg)
    if args.action == "sweep-k":
        spec = _model_spec(args)
        if args.patch is not None:
            train, test = crop_center_patches(train, args.patch), crop_center_patches(test, args.patch)
        run.start()
        rows = run_feature_sweep(train, test, spec, args.counts, args.scheme, cfg, jobs=args.jobs)
        write_csv(args.out, ["k", "accuracy"], rows)
    else:
        unknown = [m for m in args.models if m not in TRAIN_MODELS]
        if unknown:
            raise UsageError(f"unknown models: {', '.join(unknown)}")
        specs = [_model_spec(_for_model(args, m), m) for m in args.models]
        run.start()
        rows = run_patchsize_sweep(train, test, specs, args.patches, args.hidden, args.scheme, cfg, jobs=args.jobs)
        write_csv(args.out, ["p", "model", "accuracy"], rows)
    for row in rows:
        print(",".join(str(v) for v in row))


def _for_model(args, name):
    # in a multi-model sweep each hyperparameter only reaches the models it applies to
    ns = argparse.Namespace(**vars(args))
    if name not in ("trec", "tlin"):
        ns.theta = None
    if name != "dae":
        ns.reg_p = None
    if name != "cae":
        ns.reg_lambda = None
    return ns


def cmd_analyze(args, argv):
    action = args.action
    if action == "filters":
        width = args.width or args.height
        layout = FilterLayout(args.height, width, args.channels, args.frames)
        frames = args.frame_indices if args.frame_indices is not None else list(range(args.frames))
        bad = [t for t in frames if not 0 <= t < args.frames]
        if bad or args.channels not in (1, 3):
            raise UsageError("frame indices must lie in [0, frames) and channels must be 1 or 3")
        paths = [f"{args.out}.ppm"] if args.frames == 1 else [f"{args.out}_frame{t}.ppm" for t in frames]
        run = Run(args, argv, f"{args.out}.manifest.json")
        run.input(args.model)
        if args.pca:
            run.input(args.pca)
        run.output(*paths)
        model = load_model(args.model)
        T = load_transform(args.pca) if args.pca else None
        run.start()
        written = export_filters(model, T, layout, args.out, frames=frames)
        print("\n".join(written))
        return

    run = Run(args, argv, f"{args.out}.manifest.json")
    run.output(args.out)
    if action == "gen-rotdots":
        run.output(f"{args.out}.hdr", f"{args.out}.angles")
        run.start()
        try:
            videos = gen_rotating_dots(args.n, args.frames, args.size, args.dots, args.angle,
                                       seed=subseed(args.seed, "data"))
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        save_videos(args.out, videos)
        print(f"gen-rotdots: {len(videos)} videos of {args.frames}x{args.size}x{args.size}")
        return

    run.input(args.model)
    model = load_model(args.model)
    if isinstance(model, KMeansModel):
        raise UsageError(f"analyze {action} needs an autoencoder model")
    if action == "biases":
        run.start()
        hist = bias_histogram(model, args.bins)
        write_csv(args.out, ["bin_low", "bin_high", "count"], hist.rows())
        print(f"mean bias {hist.mean:.6g}, fraction negative {hist.fraction_negative:.4f}")
    elif action == "fixedpoint":
        if model.kind.name == "sigmoid":
            raise UsageError("fixedpoint applies to relu-type and zero-bias models")
        run.input(args.data)
        X = load_matrix(args.data)
        run.start()
        rows = []
        for i, x in enumerate(X):
            rep = fixed_point_report(model, x)
            rows.append((i, rep.residual_norm, rep.nullspace_dim, len(rep.active), rep.orthonormality_error))
        write_csv(args.out, ["row", "residual_norm", "nullspace_dim", "active_count", "orthonormality_error"], rows)
        print(f"fixedpoint: {len(rows)} rows, median residual {np.median([r[1] for r in rows]):.6g}")
    elif action == "parseval":
        if args.data:
            run.input(args.data)
            P = load_matrix(args.data)
        else:
            P = np.random.default_rng(subseed(args.seed, "data")).normal(size=(args.probes, model.n_visible))
        run.start()
        try:
            lo, med, hi = frame_report(model, P).parseval_ratio_stats
        except NumericalError:
            # overcomplete-but-rank-deficient weights still have Parseval ratios
            r = parseval_ratios(model, P)
            lo, med, hi = float(r.min()), float(np.median(r)), float(r.max())
        write_csv(args.out, ["metric", "value"], [("min", lo), ("median", med), ("max", hi), ("probes", len(P))])
        print(f"parseval ratio min {lo:.4f} median {med:.4f} max {hi:.4f}")


COMMANDS = {"prep": cmd_prep, "train": cmd_train, "eval": cmd_eval, "analyze": cmd_analyze}


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (DataFormatError, DimensionError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
