"""Command-line workflow: synth, train, score, eval, export-latent.

Exit codes: 0 success, 1 runtime or I/O failure, 2 usage error.

Every subcommand accepts ``--config FILE``, a ``key=value`` file whose keys are
flag names (``n-train`` or ``n_train``). Explicit flags override the file,
which overrides built-in defaults.
"""

from __future__ import annotations

import argparse
import csv
import datetime as dt
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from latentconf.confidence import (
    REFERENCE_SETS,
    THRESHOLD_RULES,
    ConfidenceReport,
    LatentSet,
    partition_reliable,
    project,
    score,
)
from latentconf.dataset import (
    Dataset,
    DatasetError,
    Scaler,
    apply_scaler,
    fit_scaler,
    load_csv,
    split_by_date,
    write_csv,
)
from latentconf.evaluation import append_csv, build_report
from latentconf.synthgen import DEFAULT_CUTOFF, SynthConfig, concat, generate
from latentconf.vae import (
    ACTIVATIONS,
    ConfigError,
    ModelFormatError,
    TrainingError,
    VaeConfig,
    VaeModel,
    fit,
    init_model,
    load_model,
    save_model,
)

SPACE_FLAGS = {"latent": "latent", "feature": "feature", "geo": "geographic"}
SCORE_FIELDS = ("id", "score", "space", "M", "T", "degenerate_k")


class _DefaultsFormatter(argparse.ArgumentDefaultsHelpFormatter):
    """Show the default for every flag, including those without help text."""

    def _get_help_string(self, action):
        text = action.help or ""
        if action.default is not None and action.default is not argparse.SUPPRESS \
                and action.option_strings and not isinstance(action.default, bool) \
                and "(default" not in text:
            text += " (default: %(default)s)"
        return text.strip()


class UsageError(Exception):
    pass


class RunError(Exception):
    pass


# --- flag types ------------------------------------------------------------

def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {value}")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError(f"must be >= 0, got {value}")
    return value


def _seed(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2**64:
        raise argparse.ArgumentTypeError(f"must be an unsigned 64-bit integer, got {value}")
    return value


def _widths(text: str) -> tuple[int, ...]:
    try:
        widths = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not widths or min(widths) < 1:
        raise argparse.ArgumentTypeError(f"widths must be >= 1, got {text!r}")
    return widths


def _date(text: str) -> dt.date:
    try:
        return dt.date.fromisoformat(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected YYYY-MM-DD, got {text!r}") from None


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 < value <= 0.5:
        raise argparse.ArgumentTypeError(f"must be in (0, 0.5], got {value}")
    return value


def _bool(text: str) -> bool:
    if text.lower() in ("1", "true", "yes", "on"):
        return True
    if text.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# --- parser ----------------------------------------------------------------

def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="key=value file of flag defaults")
    p.add_argument("--verbose", action="store_true", help="print resolved settings to stderr")


def _data_source(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", type=Path, help="observation CSV holding both splits")
    p.add_argument("--cutoff", type=_date, default=DEFAULT_CUTOFF,
                   help="last training date, inclusive")
    p.add_argument("--train", type=Path, help="training CSV (instead of --data)")
    p.add_argument("--test", type=Path, help="test CSV (instead of --data)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentconf",
        description="Latent-space confidence scores for a VAE count regressor.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    d = SynthConfig()

    p = sub.add_parser("synth", help="write a synthetic dataset and its meta sidecar",
                       formatter_class=_DefaultsFormatter)
    p.add_argument("--out", type=Path, help="dataset CSV to write (required)")
    p.add_argument("--meta-out", type=Path, help="meta CSV (default: <out stem>.meta.csv)")
    p.add_argument("--n-train", type=_positive_int, default=d.n_train)
    p.add_argument("--n-test", type=_positive_int, default=d.n_test)
    p.add_argument("--n-features", type=_positive_int, default=d.n_features)
    p.add_argument("--n-clusters", type=_positive_int, default=d.n_clusters)
    p.add_argument("--shifted-fraction", type=float, default=d.shifted_cluster_fraction,
                   help="fraction of test rows from clusters absent in training")
    p.add_argument("--noise-low", type=float, default=d.noise_low)
    p.add_argument("--noise-high", type=float, default=d.noise_high)
    p.add_argument("--seed", type=_seed, default=0)
    _common(p)
    p.set_defaults(handler=cmd_synth, required=("out",))

    c = VaeConfig(input_dim=1)
    p = sub.add_parser("train", help="fit the scaler and the VAE on the training split",
                       formatter_class=_DefaultsFormatter)
    p.add_argument("--data", type=Path, help="observation CSV (required)")
    p.add_argument("--cutoff", type=_date, default=DEFAULT_CUTOFF, help="last training date, inclusive")
    p.add_argument("--model-out", type=Path, help="model file to write (required)")
    p.add_argument("--history-out", type=Path, help="per-epoch loss CSV (default: <model>.history.csv)")
    p.add_argument("--encoder-hidden", type=_widths, default=",".join(map(str, c.encoder_hidden)))
    p.add_argument("--latent-dim", type=_positive_int, default=c.latent_dim)
    p.add_argument("--decoder-hidden", type=_widths, default=",".join(map(str, c.decoder_hidden)))
    p.add_argument("--activation", choices=ACTIVATIONS, default=c.activation)
    p.add_argument("--kl-weight", type=float, default=c.kl_weight)
    p.add_argument("--lr", type=float, default=c.learning_rate)
    p.add_argument("--epochs", type=_nonneg_int, default=c.epochs)
    p.add_argument("--batch-size", type=_positive_int, default=c.batch_size)
    p.add_argument("--seed", type=_seed, default=c.seed)
    p.add_argument("--standardize", type=_bool, default="true",
                   help="standardize features with train-split statistics")
    _common(p)
    p.set_defaults(handler=cmd_train, required=("data", "model_out"))

    p = sub.add_parser("score", help="confidence distances for the test split",
                       formatter_class=_DefaultsFormatter)
    p.add_argument("--model", type=Path, help="trained model file (required)")
    _data_source(p)
    p.add_argument("--space", choices=tuple(SPACE_FLAGS), default="latent")
    p.add_argument("--m", type=_positive_int, default=3, help="number of nearest reliable points")
    p.add_argument("--reference", choices=REFERENCE_SETS, default="reliable",
                   help="score against reliable training rows or all training rows")
    p.add_argument("--threshold-rule", choices=THRESHOLD_RULES, default="mean_error")
    p.add_argument("--threads", type=_positive_int, default=1)
    p.add_argument("--out", type=Path, help="score CSV to write (required)")
    _common(p)
    p.set_defaults(handler=cmd_score, required=("model", "out"))

    p = sub.add_parser("eval", help="correlation and tail MAEs for a score CSV",
                       formatter_class=_DefaultsFormatter)
    p.add_argument("--scores", type=Path, help="score CSV from `score` (required)")
    p.add_argument("--latent", type=Path, help="labeled latent CSV from `export-latent`")
    p.add_argument("--model", type=Path, help="model file (with --data/--test) instead of --latent")
    _data_source(p)
    p.add_argument("--fraction", type=_fraction, default=0.2, help="tail size as a fraction of n")
    p.add_argument("--out", type=Path, help="key=value report (default: stdout)")
    p.add_argument("--csv-out", type=Path, help="append one report row to this CSV")
    _common(p)
    p.set_defaults(handler=cmd_eval, required=("scores",))

    p = sub.add_parser("export-latent", help="latent means and predictions as CSV",
                       formatter_class=_DefaultsFormatter)
    p.add_argument("--model", type=Path, help="trained model file (required)")
    p.add_argument("--data", type=Path, help="observation CSV, labeled or not (required)")
    p.add_argument("--cutoff", type=_date, default=DEFAULT_CUTOFF, help="used with --split")
    p.add_argument("--split", choices=("all", "train", "test"), default="all")
    p.add_argument("--out", type=Path, help="latent CSV to write (required)")
    _common(p)
    p.set_defaults(handler=cmd_export_latent, required=("model", "data", "out"))
    for p in sub.choices.values():
        for action in p._actions:
            if action.help is None and action.default not in (None, argparse.SUPPRESS):
                action.help = "(default: %(default)s)"
    return parser


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:  # type: ignore[union-attr]
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _read_config(path: Path) -> dict[str, str]:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key=value, got {line!r}")
            key, value = (t.strip() for t in line.split("=", 1))
            values[key.replace("-", "_")] = value
    return values


def parse_args(argv: Sequence[str] | None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    sub = _subparser(parser, args.command)
    sources = {}
    if args.config is not None:
        try:
            values = _read_config(args.config)
        except OSError as exc:
            sub.error(f"cannot read config file: {exc}")
        except UsageError as exc:
            sub.error(str(exc))
        known = {a.dest for a in sub._actions} - {"help", "config"}
        unknown = sorted(set(values) - known)
        if unknown:
            sub.error(f"unknown config key(s): {', '.join(unknown)}")
        # string defaults go through each flag's type converter on re-parse
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
        sources = {k: "config" for k in values}
    explicit = _explicit_dests(sub, argv)
    for key in explicit:
        sources[key] = "flag"
    args._sources = sources
    missing = [k for k in args.required if getattr(args, k) is None]
    if missing:
        sub.error("missing required flag(s): " + ", ".join("--" + k.replace("_", "-") for k in missing))
    return args


def _explicit_dests(sub: argparse.ArgumentParser, argv: Sequence[str] | None) -> set[str]:
    argv = list(sys.argv[1:] if argv is None else argv)
    seen = set()
    for action in sub._actions:
        for opt in action.option_strings:
            if any(a == opt or a.startswith(opt + "=") for a in argv):
                seen.add(action.dest)
    return seen


def _log(msg: str) -> None:
    print(msg, file=sys.stderr)


def _describe(args: argparse.Namespace) -> None:
    _log("precedence: flags > config file > defaults")
    for key, value in sorted(vars(args).items()):
        if key.startswith("_") or key in ("handler", "required", "verbose", "config"):
            continue
        _log(f"  {key}={value} ({args._sources.get(key, 'default')})")


# --- helpers ---------------------------------------------------------------

def _load_splits(args: argparse.Namespace, require_test: bool = True) -> tuple[Dataset, Dataset]:
    if args.data is not None:
        if args.train is not None or args.test is not None:
            raise UsageError("use either --data (with --cutoff) or --train/--test, not both")
        return split_by_date(load_csv(args.data), args.cutoff, require_test=require_test)
    if args.train is None or args.test is None:
        raise UsageError("need --data, or both --train and --test")
    return load_csv(args.train), load_csv(args.test)


def _check_arity(model: VaeModel, d: Dataset) -> None:
    if d.n_features != model.config.input_dim:
        raise RunError(
            f"dataset has {d.n_features} feature columns but the model expects "
            f"{model.config.input_dim}"
        )


def _write_latent(latent: LatentSet, path: Path, targets: np.ndarray | None) -> None:
    dims = [f"dim_{j}" for j in range(latent.latent_dim)]
    header = ["id", *dims, "prediction"]
    if targets is not None:
        header += ["target", "abs_error"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for i in range(len(latent)):
            row = [latent.ids[i], *(repr(float(v)) for v in latent.points[i]),
                   repr(float(latent.predictions[i]))]
            if targets is not None:
                row += [repr(float(targets[i])), repr(float(latent.errors[i]))]
            writer.writerow(row)


def read_latent_csv(path: Path) -> LatentSet:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise RunError(f"{path}: no rows")
    dims = sorted((k for k in rows[0] if k.startswith("dim_")), key=lambda k: int(k[4:]))
    if "abs_error" not in rows[0]:
        raise RunError(f"{path}: latent CSV has no abs_error column (unlabeled export)")
    return LatentSet(
        ids=[r["id"] for r in rows],
        points=np.array([[float(r[k]) for k in dims] for r in rows]).reshape(len(rows), len(dims)),
        predictions=np.array([float(r["prediction"]) for r in rows]),
        errors=np.array([float(r["abs_error"]) for r in rows]),
    )


def write_scores(report: ConfidenceReport, path: Path) -> None:
    flag = int(report.degenerate)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SCORE_FIELDS)
        for i, s in zip(report.ids, report.scores):
            writer.writerow([i, repr(float(s)), report.space, report.M, repr(report.T), flag])


def read_scores(path: Path) -> ConfidenceReport:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(SCORE_FIELDS) - set(reader.fieldnames):
            raise RunError(f"{path}: expected header {','.join(SCORE_FIELDS)}")
        rows = list(reader)
    if not rows:
        raise RunError(f"{path}: no score rows")
    first = rows[0]
    M = int(first["M"])
    return ConfidenceReport(
        ids=tuple(r["id"] for r in rows),
        scores=np.array([float(r["score"]) for r in rows]),
        space=first["space"],
        M=M,
        T=float(first["T"]),
        reliable_count=-1,
        k=M - int(first["degenerate_k"]),
    )


# --- commands --------------------------------------------------------------

def cmd_synth(args: argparse.Namespace) -> int:
    try:
        cfg = SynthConfig(
            n_train=args.n_train, n_test=args.n_test, n_features=args.n_features,
            n_clusters=args.n_clusters, shifted_cluster_fraction=args.shifted_fraction,
            noise_low=args.noise_low, noise_high=args.noise_high, seed=args.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    train, test, meta = generate(cfg)
    meta_out = args.meta_out or args.out.with_name(args.out.stem + ".meta.csv")
    write_csv(concat(train, test), args.out)
    meta.write_csv(meta_out)
    print(f"wrote {len(train) + len(test)} rows to {args.out} and meta to {meta_out}")
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    try:
        cfg_kwargs = dict(
            encoder_hidden=args.encoder_hidden, latent_dim=args.latent_dim,
            decoder_hidden=args.decoder_hidden, activation=args.activation,
            kl_weight=args.kl_weight, learning_rate=args.lr, epochs=args.epochs,
            batch_size=args.batch_size, seed=args.seed,
        )
        VaeConfig(input_dim=1, **cfg_kwargs)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None
    train, _ = split_by_date(load_csv(args.data), args.cutoff, require_test=False)
    cfg = VaeConfig(input_dim=train.n_features, **cfg_kwargs)
    scaler = fit_scaler(train) if args.standardize else Scaler.identity(train.n_features)
    model, history = fit(init_model(cfg, scaler), apply_scaler(scaler, train))
    if cfg.epochs == 0:
        _log("warning: --epochs 0, writing the untrained initial model")
    save_model(model, args.model_out)
    history_out = args.history_out or args.model_out.with_name(args.model_out.name + ".history.csv")
    with open(history_out, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["epoch", "total", "regression", "kl"])
        for e, row in enumerate(zip(history.total, history.regression, history.kl), start=1):
            writer.writerow([e, *(repr(v) for v in row)])
    print(f"trained on {len(train)} rows for {len(history)} epochs")
    if len(history):
        print(f"final total={history.total[-1]!r} regression={history.regression[-1]!r} "
              f"kl={history.kl[-1]!r}")
    print(f"wrote {args.model_out} and {history_out}")
    return 0


def cmd_score(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    train, test = _load_splits(args)
    _check_arity(model, train)
    _check_arity(model, test)
    train_s = apply_scaler(model.scaler, train)
    test_s = apply_scaler(model.scaler, test)
    train_latent = project(model, train_s)
    test_latent = project(model, test_s)
    part = partition_reliable(train_latent, args.threshold_rule)
    report = score(SPACE_FLAGS[args.space], train_s, train_latent, test_s, test_latent, part,
                   M=args.m, reference=args.reference, threads=args.threads)
    if report.degenerate:
        _log(f"warning: only {report.k} reference points available for M={report.M}")
    write_scores(report, args.out)
    print(f"T={part.threshold!r} reliable={part.reliable_count} of {len(train)}")
    print(f"wrote {len(report.ids)} scores to {args.out}")
    return 0


def _labeled_test(args: argparse.Namespace) -> LatentSet:
    if args.latent is not None:
        if args.model is not None:
            raise UsageError("use either --latent or --model with data, not both")
        return read_latent_csv(args.latent)
    if args.model is None:
        raise UsageError("need --latent, or --model with --data/--test")
    model = load_model(args.model)
    if args.data is not None:
        _, test = _load_splits(args)
    elif args.test is not None:
        test = load_csv(args.test)
    else:
        raise UsageError("need --data or --test with --model")
    _check_arity(model, test)
    return project(model, apply_scaler(model.scaler, test))


def cmd_eval(args: argparse.Namespace) -> int:
    conf = read_scores(args.scores)
    test = _labeled_test(args)
    position = {i: k for k, i in enumerate(test.ids)}
    missing = [i for i in conf.ids if i not in position]
    if missing:
        raise RunError(f"score id {missing[0]!r} not found in the labeled test data "
                       f"({len(missing)} missing)")
    if len(conf.ids) != len(test.ids):
        extra = next(i for i in test.ids if i not in set(conf.ids))
        raise RunError(f"test id {extra!r} has no score ({len(test.ids) - len(conf.ids)} missing)")
    idx = [position[i] for i in conf.ids]
    aligned = LatentSet(conf.ids, test.points[idx], test.predictions[idx], test.errors[idx])
    report = build_report(conf, aligned, args.fraction)
    text = report.to_text()
    if args.out is not None:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.csv_out is not None:
        append_csv(report, args.csv_out)
    return 0


def cmd_export_latent(args: argparse.Namespace) -> int:
    model = load_model(args.model)
    data = load_csv(args.data, require_target=False)
    if args.split != "all":
        train, test = split_by_date(data, args.cutoff, require_test=False)
        data = train if args.split == "train" else test
    _check_arity(model, data)
    latent = project(model, apply_scaler(model.scaler, data))
    _write_latent(latent, args.out, data.target)
    print(f"wrote {len(latent)} latent rows ({latent.latent_dim} dims) to {args.out}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = parse_args(argv)
    if args.verbose:
        _describe(args)
    try:
        return args.handler(args)
    except UsageError as exc:
        _log(f"usage error: {exc}")
        return 2
    except (OSError, DatasetError, ModelFormatError, TrainingError, RunError, ValueError) as exc:
        _log(f"error: {exc}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
