"""Command-line interface: data generation, splits, training, evaluation,
cross-validation, prediction, and model inspection.

Every command accepts `--config FILE` (UTF-8 `key=value` lines, `#`
comments); explicit flags win over file values, file values win over
built-in defaults, and unknown keys are rejected. Each run echoes its fully
resolved configuration so two runs can be diffed byte-for-byte.

Exit codes: 0 success, 1 usage/configuration error, 2 data or checkpoint
error, 3 numeric failure (training divergence).
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import phantom, report
from .checkpoint import load_checkpoint
from .data import (NormStats, load_folds, load_manifest, make_folds, preprocess,
                   save_folds)
from .errors import ConfigError, DataError, DivergenceError
from .layers import softmax
from .metrics import aggregate_reports, pooled_confusion
from .network import (NetworkConfig, build_network, describe, parameter_count,
                      sa_parameter_overhead)
from .tensor import set_precision
from .training import (TrainingConfig, cross_validate, evaluate, holdout_run,
                       run_fold)

DATA_DIR_ENV = "RESNESAT_DATA_DIR"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _parse_config_file(path) -> dict:
    values = {}
    try:
        with open(path, encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, value = line.split("=", 1)
                values[key.strip()] = value.strip()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from None
    return values


def _from_string(raw: str, typ):
    if typ is bool:
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    try:
        return typ(raw)
    except ValueError:
        raise ConfigError(f"expected {typ.__name__}, got {raw!r}") from None


def _resolve(args, spec: dict) -> dict:
    """Merge flags, config-file values, and defaults; reject unknown file keys."""
    file_values = _parse_config_file(args.config) if getattr(args, "config", None) else {}
    unknown = sorted(set(file_values) - set(spec))
    if unknown:
        raise ConfigError(f"unknown config keys: {unknown}")
    resolved = {}
    for key, (typ, default) in spec.items():
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
        elif key in file_values:
            resolved[key] = _from_string(file_values[key], typ)
        else:
            resolved[key] = default
    return resolved


def _echo_config(resolved: dict) -> None:
    print("resolved config:")
    for key in sorted(resolved):
        print(f"  {key}={resolved[key]}")


def _data_root(resolved, manifest_path) -> str:
    if resolved.get("data_root"):
        return resolved["data_root"]
    env = os.environ.get(DATA_DIR_ENV)
    if env:
        return env
    return os.path.dirname(os.path.abspath(manifest_path))


def _training_config(resolved) -> TrainingConfig:
    return TrainingConfig(
        task=resolved["task"],
        lr0=resolved["lr"],
        epochs=resolved["epochs"],
        batch_size=resolved["batch_size"],
        momentum=resolved["momentum"],
        weight_decay=resolved["weight_decay"],
        seed=resolved["seed"],
    )


def _network_config(resolved) -> NetworkConfig:
    return NetworkConfig.from_preset(resolved["preset"], sa_enabled=resolved["sa"])


def _stats_from_preproc(preproc: dict, provenance: str) -> NormStats:
    if "norm_mean" not in preproc or "norm_std" not in preproc:
        raise DataError("checkpoint carries no preprocessing statistics")
    return NormStats(mean=preproc["norm_mean"], std=preproc["norm_std"],
                     provenance=provenance)


def _variant_name(net_config: NetworkConfig) -> str:
    return "ResNeSAt" if net_config.sa_enabled else "ResNeSAt (SA off)"


TRAIN_SPEC = {
    "manifest": (str, None),
    "data_root": (str, None),
    "folds": (str, None),
    "fold": (int, 0),
    "task": (str, "presence"),
    "preset": (str, "tiny"),
    "sa": (bool, True),
    "epochs": (int, 100),
    "batch_size": (int, 16),
    "lr": (float, None),
    "momentum": (float, 0.9),
    "weight_decay": (float, 1e-4),
    "seed": (int, 0),
    "precision": (str, "float32"),
    "out": (str, None),
}


def cmd_generate_data(args) -> int:
    spec = {
        "out": (str, None),
        "none": (int, 100),
        "primary": (int, 100),
        "secondary": (int, 100),
        "size": (int, 64),
        "seed": (int, 0),
    }
    resolved = _resolve(args, spec)
    if not resolved["out"]:
        raise ConfigError("--out is required")
    _echo_config(resolved)
    counts = {cls: resolved[cls] for cls in ("none", "primary", "secondary")}
    for cls, n in counts.items():
        if n < 0:
            raise ConfigError(f"--{cls} must be >= 0")
    records = phantom.generate_phantoms(resolved["out"], counts,
                                        size=resolved["size"], seed=resolved["seed"])
    for cls in ("none", "primary", "secondary"):
        print(f"{cls}: {sum(1 for r in records if r.class_name == cls)} images")
    print(f"wrote {len(records)} images + manifest.csv to {resolved['out']}")
    return 0


def cmd_split(args) -> int:
    spec = {
        "manifest": (str, None),
        "task": (str, "presence"),
        "k": (int, 10),
        "mode": (str, "image-stratified"),
        "seed": (int, 0),
        "out": (str, None),
    }
    resolved = _resolve(args, spec)
    if not resolved["manifest"] or not resolved["out"]:
        raise ConfigError("--manifest and --out are required")
    if resolved["k"] < 2:
        raise ConfigError(f"k must be >= 2, got {resolved['k']}")
    _echo_config(resolved)
    manifest = load_manifest(resolved["manifest"], resolved["task"])
    split = make_folds(manifest, resolved["k"], mode=resolved["mode"],
                       seed=resolved["seed"])
    save_folds(split, resolved["out"])
    sizes = [len(f) for f in split.folds]
    print(f"wrote {split.k} folds (sizes {sizes}) to {resolved['out']}")
    return 0


def cmd_train(args) -> int:
    resolved = _resolve(args, TRAIN_SPEC)
    if not resolved["manifest"] or not resolved["folds"] or not resolved["out"]:
        raise ConfigError("--manifest, --folds and --out are required")
    set_precision(resolved["precision"])
    cfg = _training_config(resolved)
    resolved["lr"] = cfg.lr0
    _echo_config(resolved)

    manifest = load_manifest(resolved["manifest"], resolved["task"])
    data_root = _data_root(resolved, resolved["manifest"])
    folds = load_folds(resolved["folds"])
    if not 0 <= resolved["fold"] < folds.k:
        raise ConfigError(f"fold must be in [0, {folds.k}), got {resolved['fold']}")
    net_config = _network_config(resolved)

    os.makedirs(resolved["out"], exist_ok=True)
    ckpt_path = os.path.join(resolved["out"], "checkpoint.ckpt")
    result = run_fold(net_config, cfg, manifest, data_root, folds, resolved["fold"],
                      checkpoint_path=ckpt_path)
    report.write_epoch_log_csv(os.path.join(resolved["out"], "epochs.csv"),
                               {result.fold: result.log})
    report.plot_training_curves(os.path.join(resolved["out"], "training_curve.png"),
                                {result.fold: result.log})
    report.write_resolved_config(os.path.join(resolved["out"], "config.txt"), resolved)
    held = result.report.formatted()
    print(f"checkpoint: {ckpt_path}")
    print(f"held-out fold {result.fold}: " +
          " ".join(f"{k}={v}" for k, v in held.items()))
    return 0


def cmd_evaluate(args) -> int:
    spec = {
        "checkpoint": (str, None),
        "manifest": (str, None),
        "data_root": (str, None),
        "folds": (str, None),
        "fold": (int, 0),
        "task": (str, "presence"),
        "on": (str, "test"),
        "out": (str, None),
    }
    resolved = _resolve(args, spec)
    if not resolved["checkpoint"] or not resolved["manifest"] or not resolved["folds"]:
        raise ConfigError("--checkpoint, --manifest and --folds are required")
    if resolved["on"] not in ("test", "train"):
        raise ConfigError(f"--on must be test or train, got {resolved['on']!r}")
    _echo_config(resolved)

    network, epoch, _, preproc = load_checkpoint(resolved["checkpoint"])
    manifest = load_manifest(resolved["manifest"], resolved["task"])
    data_root = _data_root(resolved, resolved["manifest"])
    folds = load_folds(resolved["folds"])
    if not 0 <= resolved["fold"] < folds.k:
        raise ConfigError(f"fold must be in [0, {folds.k}), got {resolved['fold']}")
    stats = _stats_from_preproc(preproc, provenance=f"checkpoint:{resolved['checkpoint']}")
    indices = (folds.test_indices(resolved["fold"]) if resolved["on"] == "test"
               else folds.train_indices(resolved["fold"]))

    cm, metrics_report = evaluate(network, manifest, data_root, indices, stats)
    print(f"evaluated {cm.total} samples from fold {resolved['fold']} "
          f"({resolved['on']} side), checkpoint epoch {epoch}")
    print(" ".join(f"{k}={v}" for k, v in metrics_report.formatted().items()))
    if resolved["out"]:
        os.makedirs(resolved["out"], exist_ok=True)
        agg = aggregate_reports([metrics_report])
        report.write_metrics_csv(os.path.join(resolved["out"], "metrics.csv"),
                                 [metrics_report], agg)
        report.write_summary_text(os.path.join(resolved["out"], "summary.txt"),
                                  manifest.task, manifest.positive_name,
                                  _variant_name(network.config), agg, [metrics_report])
        report.plot_confusion(os.path.join(resolved["out"], "confusion.png"), cm)
        report.write_resolved_config(os.path.join(resolved["out"], "config.txt"), resolved)
    return 0


def cmd_crossval(args) -> int:
    spec = dict(TRAIN_SPEC)
    spec.pop("folds")
    spec.pop("fold")
    spec.update({
        "k": (int, 10),
        "mode": (str, "image-stratified"),
        "holdout": (float, None),
        "parallel_folds": (int, 1),
    })
    resolved = _resolve(args, spec)
    if not resolved["manifest"] or not resolved["out"]:
        raise ConfigError("--manifest and --out are required")
    set_precision(resolved["precision"])
    cfg = _training_config(resolved)
    resolved["lr"] = cfg.lr0
    _echo_config(resolved)

    manifest = load_manifest(resolved["manifest"], resolved["task"])
    data_root = _data_root(resolved, resolved["manifest"])
    net_config = _network_config(resolved)
    os.makedirs(resolved["out"], exist_ok=True)

    if resolved["holdout"] is not None:
        result_fold = holdout_run(net_config, cfg, manifest, data_root, resolved["holdout"])
        fold_results = [result_fold]
        aggregate = aggregate_reports([result_fold.report])
        micro = result_fold.report
    else:
        if resolved["k"] < 2:
            raise ConfigError(f"k must be >= 2, got {resolved['k']}")
        folds = make_folds(manifest, resolved["k"], mode=resolved["mode"],
                           seed=resolved["seed"])
        save_folds(folds, os.path.join(resolved["out"], "folds.json"))
        result = cross_validate(net_config, cfg, manifest, data_root, folds,
                                parallel_folds=resolved["parallel_folds"],
                                checkpoint_dir=resolved["out"])
        fold_results = result.fold_results
        aggregate = result.aggregate
        micro = result.micro

    reports = [fr.report for fr in fold_results]
    report.write_metrics_csv(os.path.join(resolved["out"], "metrics.csv"),
                             reports, aggregate, micro)
    report.write_summary_text(os.path.join(resolved["out"], "summary.txt"),
                              manifest.task, manifest.positive_name,
                              _variant_name(net_config), aggregate, reports, micro)
    logs = {fr.fold: fr.log for fr in fold_results}
    report.write_epoch_log_csv(os.path.join(resolved["out"], "epochs.csv"), logs)
    report.plot_training_curves(os.path.join(resolved["out"], "training_loss.png"), logs)
    report.plot_fold_metrics(os.path.join(resolved["out"], "metrics_by_fold.png"), reports)
    report.plot_confusion(os.path.join(resolved["out"], "confusion.png"),
                          pooled_confusion([fr.confusion for fr in fold_results]))
    report.write_resolved_config(os.path.join(resolved["out"], "config.txt"), resolved)

    acc = aggregate["accuracy"]["mean"]
    print(f"mean accuracy over {len(fold_results)} fold(s): "
          f"{'undefined' if acc is None else f'{acc:.4f}'}")
    print(f"artifacts written to {resolved['out']}")
    return 0


def cmd_predict(args) -> int:
    spec = {
        "presence_checkpoint": (str, None),
        "source_checkpoint": (str, None),
        "image": (str, None),
    }
    resolved = _resolve(args, spec)
    if not resolved["presence_checkpoint"] or not resolved["image"]:
        raise ConfigError("--presence-checkpoint and --image are required")

    presence_net, _, _, preproc = load_checkpoint(resolved["presence_checkpoint"])
    stats = _stats_from_preproc(preproc, provenance="presence checkpoint")
    image = phantom.load_image(resolved["image"])

    def run(network, norm_stats):
        cfg = network.config
        x = preprocess(image, train=False, rng=None, stats=norm_stats,
                       out_size=cfg.input_size, out_channels=cfg.in_channels)
        probs = softmax(network.forward(x[None], train=False))[0]
        label = int(np.argmax(probs))
        return label, float(probs[label])

    presence, presence_prob = run(presence_net, stats)
    record = {"presence": presence, "presence_prob": presence_prob}
    if presence == 1:
        if resolved["source_checkpoint"]:
            source_net, _, _, source_pre = load_checkpoint(resolved["source_checkpoint"])
            source_stats = _stats_from_preproc(source_pre, provenance="source checkpoint")
            source_label, source_prob = run(source_net, source_stats)
            record["source"] = "primary" if source_label == 1 else "secondary"
            record["source_prob"] = source_prob
        else:
            record["source"] = "not evaluated"
    print(json.dumps(record))
    return 0


def cmd_inspect(args) -> int:
    spec = {
        "preset": (str, None),
        "checkpoint": (str, None),
        "diff_sa": (bool, False),
    }
    resolved = _resolve(args, spec)
    if bool(resolved["preset"]) == bool(resolved["checkpoint"]):
        raise ConfigError("give exactly one of --preset or --checkpoint")
    if resolved["checkpoint"]:
        network, epoch, _, _ = load_checkpoint(resolved["checkpoint"])
        print(f"checkpoint: {resolved['checkpoint']} (epoch {epoch})")
    else:
        network = build_network(NetworkConfig.from_preset(resolved["preset"]))
        print(f"preset: {resolved['preset']}")

    rows = describe(network)
    width = max(len(r["name"]) for r in rows)
    print(f"{'layer':{width}s}  {'output shape':>22s}  {'params':>10s}")
    for r in rows:
        shape = "x".join(str(d) for d in r["shape"])
        print(f"{r['name']:{width}s}  {shape:>22s}  {r['params']:>10d}")
    count, nbytes = parameter_count(network)
    print(f"total parameters: {count:,} ({nbytes:,} bytes = {nbytes / 1e6:.2f} MB at 32-bit)")
    if resolved["diff_sa"]:
        overhead = sa_parameter_overhead(network.config)
        print(f"spatial-attention overhead: {overhead} params "
              f"({overhead * 4} bytes = {overhead * 4 / 1e6:.4f} MB)")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="resnesat",
                     description="Split-attention network with spatial attention: "
                                 "phantom data, training, and evaluation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, func, helptext):
        p = sub.add_parser(name, help=helptext)
        p.set_defaults(func=func)
        p.add_argument("--config", help="key=value config file; flags override it")
        return p

    p = add("generate-data", cmd_generate_data, "write phantom images and a manifest")
    p.add_argument("--out")
    p.add_argument("--none", type=int)
    p.add_argument("--primary", type=int)
    p.add_argument("--secondary", type=int)
    p.add_argument("--size", type=int)
    p.add_argument("--seed", type=int)

    p = add("split", cmd_split, "write a k-fold split file")
    p.add_argument("--manifest")
    p.add_argument("--task", choices=("presence", "source"))
    p.add_argument("--k", type=int)
    p.add_argument("--mode", choices=("image-stratified", "patient-grouped"))
    p.add_argument("--seed", type=int)
    p.add_argument("--out")

    def add_training_flags(p, with_folds=True):
        p.add_argument("--manifest")
        p.add_argument("--data-root", dest="data_root")
        if with_folds:
            p.add_argument("--folds")
            p.add_argument("--fold", type=int)
        p.add_argument("--task", choices=("presence", "source"))
        p.add_argument("--preset", choices=("tiny", "paper"))
        p.add_argument("--sa", action=argparse.BooleanOptionalAction, default=None)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch-size", dest="batch_size", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--momentum", type=float)
        p.add_argument("--weight-decay", dest="weight_decay", type=float)
        p.add_argument("--seed", type=int)
        p.add_argument("--precision", choices=("float32", "float64"))
        p.add_argument("--out")

    p = add("train", cmd_train, "train one fold's model")
    add_training_flags(p)

    p = add("evaluate", cmd_evaluate, "evaluate a checkpoint on a fold")
    p.add_argument("--checkpoint")
    p.add_argument("--manifest")
    p.add_argument("--data-root", dest="data_root")
    p.add_argument("--folds")
    p.add_argument("--fold", type=int)
    p.add_argument("--task", choices=("presence", "source"))
    p.add_argument("--on", choices=("test", "train"))
    p.add_argument("--out")

    p = add("crossval", cmd_crossval, "k-fold cross-validation with reports")
    add_training_flags(p, with_folds=False)
    p.add_argument("--k", type=int)
    p.add_argument("--mode", choices=("image-stratified", "patient-grouped"))
    p.add_argument("--holdout", type=float)
    p.add_argument("--parallel-folds", dest="parallel_folds", type=int)

    p = add("predict", cmd_predict, "two-stage prediction on one image")
    p.add_argument("--presence-checkpoint", dest="presence_checkpoint")
    p.add_argument("--source-checkpoint", dest="source_checkpoint")
    p.add_argument("--image")

    p = add("inspect", cmd_inspect, "print the layer table and parameter sizes")
    p.add_argument("--preset", choices=("tiny", "paper"))
    p.add_argument("--checkpoint")
    p.add_argument("--diff-sa", dest="diff_sa", action="store_true", default=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except DivergenceError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
