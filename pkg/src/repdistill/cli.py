"""Command-line surface: distill, eval, compare, diagnose.

Configuration comes from an INI-style file (sections of key=value mirroring
the run configuration) with command-line flags taking precedence. The
dataset root falls back to the REPDISTILL_DATA_ROOT environment variable.
Exit codes: 0 success, 1 runtime failure, 2 configuration error.
"""

import argparse
import configparser
import csv
import dataclasses
import json
import os
import sys

import numpy as np
import torch

from . import metrics as metrics_mod
from .distill import StrategySpec, _as_syn, distill, strategy_compare
from .augment import DEFAULT_AUG
from .data import load_dataset, make_blobs
from .errors import ConfigurationError, DataLoadError, UsageError
from .match import MatchConfig
from .models import ModelSpec, build_model
from .persist import config_hash, load_syn, save_png_grid, save_syn

ENV_DATA_ROOT = "REPDISTILL_DATA_ROOT"

_METRIC_BY_DATASET = {"mnist": "mae", "fashionmnist": "mae"}


def _add_common(p):
    p.add_argument("--config", help="INI config file; flags override it")
    p.add_argument("--dataset", default=None,
                   help="mnist|fashionmnist|svhn|cifar10|cifar100|blobs-file|blobs")
    p.add_argument("--root", default=None, help="dataset root (or $REPDISTILL_DATA_ROOT)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ipc", type=int, default=None)
    p.add_argument("--objective", choices=["gradient", "distribution"], default=None)
    p.add_argument("--metric", choices=["mse", "mae", "cosine"], default=None)
    p.add_argument("--outer-iters", type=int, default=None)
    p.add_argument("--inner-loops", type=int, default=None)
    p.add_argument("--interval", type=int, default=None, help="clustering interval")
    p.add_argument("--interval-unit", choices=["outer", "inner"], default=None)
    p.add_argument("--batch-real", type=int, default=None,
                   help="real mini-batch size (sub-cluster count x samples per cluster)")
    p.add_argument("--per-cluster", type=int, default=None)
    p.add_argument("--lr-images", type=float, default=None)
    p.add_argument("--lr-model", type=float, default=None)
    p.add_argument("--train-batch", type=int, default=None)
    p.add_argument("--model-train-source", choices=["real", "synthetic"], default=None)
    p.add_argument("--sampling", choices=["random", "representative"], default=None)
    p.add_argument("--init", choices=["random", "cluster"], default=None)
    p.add_argument("--depth", type=int, default=None)
    p.add_argument("--width", type=int, default=None)
    p.add_argument("--norm", choices=["instance", "batch", "none"], default=None)
    p.add_argument("--aug", default=None, help="comma-separated augmentation ops, or 'none'")
    p.add_argument("--snapshot-interval", type=int, default=None)
    p.add_argument("--blob-classes", type=int, default=None)
    p.add_argument("--blob-per-class", type=int, default=None)
    p.add_argument("--blob-separation", type=float, default=None)


def _add_eval_args(p):
    p.add_argument("--eval-epochs", type=int, default=None)
    p.add_argument("--eval-lr", type=float, default=None)
    p.add_argument("--eval-repeats", type=int, default=None)


_DEFAULTS = {
    "dataset": "blobs", "root": None, "seed": 0, "ipc": 10,
    "objective": "gradient", "metric": None, "outer_iters": 1200, "inner_loops": 100,
    "interval": 10, "interval_unit": "outer", "batch_real": 128, "per_cluster": 1,
    "lr_images": 0.005, "lr_model": 0.01, "train_batch": 128,
    "model_train_source": "real", "sampling": "representative", "init": "cluster",
    "depth": 3, "width": 128, "norm": "instance", "aug": ",".join(DEFAULT_AUG),
    "snapshot_interval": 0, "blob_classes": 3, "blob_per_class": 200,
    "blob_separation": 6.0, "eval_epochs": 1000, "eval_lr": 0.01, "eval_repeats": 5,
    "out": "out",
}


def resolve_config(args):
    """Defaults < config file < flags. Returns a plain dict."""
    resolved = dict(_DEFAULTS)
    if getattr(args, "config", None):
        if not os.path.exists(args.config):
            raise ConfigurationError(f"config file not found: {args.config}")
        cp = configparser.ConfigParser()
        cp.read(args.config)
        for section in cp.sections():
            for key, value in cp.items(section):
                key = key.replace("-", "_")
                if key not in resolved:
                    raise ConfigurationError(f"unknown config key {key!r} in [{section}]")
                resolved[key] = value
    for key in resolved:
        flag = getattr(args, key, None)
        if flag is not None:
            resolved[key] = flag
    for key in ("seed", "ipc", "outer_iters", "inner_loops", "interval", "batch_real",
                "per_cluster", "train_batch", "depth", "width", "snapshot_interval",
                "blob_classes", "blob_per_class", "eval_epochs", "eval_repeats"):
        resolved[key] = int(resolved[key])
    for key in ("lr_images", "lr_model", "blob_separation", "eval_lr"):
        resolved[key] = float(resolved[key])
    if resolved["root"] is None:
        resolved["root"] = os.environ.get(ENV_DATA_ROOT)
    if resolved["metric"] is None:
        resolved["metric"] = _METRIC_BY_DATASET.get(resolved["dataset"], "mse")
    return resolved


def _load_data(resolved, split="train"):
    name = resolved["dataset"]
    if name == "blobs":
        shape = (1, 8, 8)
        return make_blobs(resolved["blob_classes"], resolved["blob_per_class"], shape,
                          resolved["blob_separation"], resolved["seed"])
    if resolved["root"] is None:
        raise ConfigurationError(
            f"dataset {name} needs --root or ${ENV_DATA_ROOT}")
    return load_dataset(name, resolved["root"], split=split)


def _aug_spec(resolved):
    raw = resolved["aug"]
    if raw in ("none", ""):
        return ()
    return tuple(s.strip() for s in raw.split(",") if s.strip())


def build_match_config(resolved, ds):
    if resolved["batch_real"] % resolved["per_cluster"] != 0:
        raise ConfigurationError("batch_real must be a multiple of per_cluster")
    spec = ModelSpec(depth=resolved["depth"], width=resolved["width"],
                     norm=resolved["norm"], in_shape=ds.image_shape,
                     num_classes=ds.num_classes)
    return MatchConfig(
        objective=resolved["objective"],
        metric=resolved["metric"],
        aug_spec=_aug_spec(resolved),
        num_subclusters=resolved["batch_real"] // resolved["per_cluster"],
        per_cluster=resolved["per_cluster"],
        cluster_interval=resolved["interval"],
        interval_unit=resolved["interval_unit"],
        outer_iters=resolved["outer_iters"],
        inner_loops=resolved["inner_loops"],
        lr_images=resolved["lr_images"],
        lr_model=resolved["lr_model"],
        model_train_source=resolved["model_train_source"],
        ipc=resolved["ipc"],
        model=spec,
        train_batch=resolved["train_batch"],
        seed=resolved["seed"],
    ).validate()


def _write_outputs(out_dir, syn, metrics, ds, cfg, resolved, snapshots=None):
    os.makedirs(out_dir, exist_ok=True)
    chash = config_hash(cfg)
    save_syn(os.path.join(out_dir, "syn.bin"), syn, ds.norm_stats,
             extra={"config_hash": chash})
    save_png_grid(os.path.join(out_dir, "syn.png"), syn, ds.norm_stats)
    metrics.to_csv(os.path.join(out_dir, "metrics.csv"))
    manifest = {
        "labels": syn.labels.tolist(),
        "ipc": syn.ipc,
        "mean": np.asarray(ds.norm_stats.mean, dtype=float).tolist(),
        "std": np.asarray(ds.norm_stats.std, dtype=float).tolist(),
        "config_hash": chash,
        "dataset": resolved["dataset"],
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    with open(os.path.join(out_dir, "config.json"), "w") as f:
        json.dump(resolved, f, indent=2, sort_keys=True, default=str)
    if snapshots:
        snap_dir = os.path.join(out_dir, "snapshots")
        os.makedirs(snap_dir, exist_ok=True)
        for it, images in snapshots:
            snap = _as_syn(images, syn)
            save_syn(os.path.join(snap_dir, f"iter_{it:06d}.bin"), snap, ds.norm_stats)


def cmd_distill(args):
    resolved = resolve_config(args)
    ds = _load_data(resolved)
    cfg = build_match_config(resolved, ds)
    syn, metrics = distill(
        ds, cfg, init=resolved["init"], sampling=resolved["sampling"],
        checkpoint_dir=os.path.join(resolved["out"], "checkpoint"),
        snapshot_interval=resolved["snapshot_interval"])
    snapshots = getattr(metrics, "snapshots", None)
    _write_outputs(resolved["out"], syn, metrics, ds, cfg, resolved, snapshots)
    print(f"wrote {resolved['out']}: {len(syn.labels)} synthetic images, "
          f"{len(metrics.rows)} metric rows")
    return 0


def cmd_eval(args):
    resolved = resolve_config(args)
    syn, header = load_syn(args.syn)
    test = _load_data(resolved, split="test" if resolved["dataset"] != "blobs" else "train")
    spec = ModelSpec(depth=resolved["depth"], width=resolved["width"],
                     norm=resolved["norm"], in_shape=test.image_shape,
                     num_classes=test.num_classes)
    mean, std, _ = metrics_mod.evaluate(
        syn, test, spec, epochs=resolved["eval_epochs"], lr=resolved["eval_lr"],
        repeats=resolved["eval_repeats"], seed=resolved["seed"],
        aug_spec=_aug_spec(resolved))
    print(f"top-1 accuracy: {mean * 100:.2f} ± {std * 100:.2f}")
    return 0


def _parse_strategies(raw):
    out = []
    for token in raw.split(","):
        token = token.strip()
        try:
            sampling, init = token.split("-")
        except ValueError:
            raise ConfigurationError(f"bad strategy {token!r}; expected sampling-init")
        if sampling not in ("random", "representative") or init not in ("random", "cluster"):
            raise ConfigurationError(f"bad strategy {token!r}")
        out.append(StrategySpec(sampling=sampling, init=init))
    return out


def cmd_compare(args):
    resolved = resolve_config(args)
    ds = _load_data(resolved)
    test = _load_data(resolved, split="test" if resolved["dataset"] != "blobs" else "train")
    cfg = build_match_config(resolved, ds)
    strategies = _parse_strategies(args.strategies)
    report = strategy_compare(
        ds, cfg, strategies, test,
        eval_every=resolved["snapshot_interval"] or None,
        eval_epochs=resolved["eval_epochs"], eval_lr=resolved["eval_lr"],
        eval_repeats=resolved["eval_repeats"], eval_seed=resolved["seed"])
    os.makedirs(resolved["out"], exist_ok=True)
    csv_path = os.path.join(resolved["out"], "comparison.csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["strategy", "final_accuracy", "iterations_to_baseline",
                    "eval_iters", "accuracies"])
        for r in report.results:
            w.writerow([r.strategy.name, r.final_accuracy,
                        report.iterations_to_baseline[r.strategy.name],
                        " ".join(map(str, r.eval_iters)),
                        " ".join(f"{a:.4f}" for a in r.accuracies)])
    _plot_compare(resolved["out"], report)
    for r in report.results:
        print(f"{r.strategy.name}: final top-1 {r.final_accuracy * 100:.2f}%, "
              f"reaches baseline at iter {report.iterations_to_baseline[r.strategy.name]}")
    return 0


def _plot_compare(out_dir, report):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots()
    for r in report.results:
        ax.plot(r.eval_iters, r.accuracies, marker="o", label=r.strategy.name)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("top-1 accuracy")
    ax.legend()
    fig.savefig(os.path.join(out_dir, "accuracy_curve.png"), dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots()
    for r in report.results:
        series = r.metrics.series("match_loss")
        if not series:
            continue
        per_outer = {}
        for o, _, v in series:
            per_outer.setdefault(o, []).append(v)
        xs = sorted(per_outer)
        ax.plot(xs, [float(np.mean(per_outer[x])) for x in xs], label=r.strategy.name)
    ax.set_xlabel("outer iteration")
    ax.set_ylabel("matching loss")
    ax.legend()
    fig.savefig(os.path.join(out_dir, "gradient_difference.png"), dpi=120)
    plt.close(fig)


def cmd_diagnose(args):
    resolved = resolve_config(args)
    run_dir = args.run_dir
    out_dir = resolved["out"]
    os.makedirs(out_dir, exist_ok=True)
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    wrote = []
    metrics_path = os.path.join(run_dir, "metrics.csv")
    if os.path.exists(metrics_path):
        log = metrics_mod.MetricsLog.from_csv(metrics_path)
        for name in ("match_loss", "batch_mmd"):
            series = log.series(name)
            if not series:
                continue
            fig, ax = plt.subplots()
            ax.plot([v for _, _, v in series])
            ax.set_xlabel("step")
            ax.set_ylabel(name)
            path = os.path.join(out_dir, f"{name}_curve.png")
            fig.savefig(path, dpi=120)
            plt.close(fig)
            wrote.append(path)

    snap_dir = os.path.join(run_dir, "snapshots")
    if os.path.isdir(snap_dir):
        files = sorted(os.listdir(snap_dir))
        snaps = [load_syn(os.path.join(snap_dir, f))[0] for f in files]
        if len(snaps) >= 2:
            shape = tuple(snaps[0].images.shape[1:])
            probe = build_model(
                ModelSpec(depth=resolved["depth"], width=resolved["width"],
                          norm=resolved["norm"], in_shape=shape,
                          num_classes=int(snaps[0].labels.max()) + 1),
                resolved["seed"])
            dists = metrics_mod.feature_migration([s.images for s in snaps], probe)
            path = os.path.join(out_dir, "feature_migration.csv")
            with open(path, "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["step", "distance"])
                w.writerows(enumerate(dists))
            wrote.append(path)
            fig, ax = plt.subplots()
            ax.plot(dists, marker="o")
            ax.set_xlabel("snapshot transition")
            ax.set_ylabel("embedding distance")
            fig.savefig(os.path.join(out_dir, "feature_migration.png"), dpi=120)
            plt.close(fig)
            print(f"feature migration distances: {['%.4f' % d for d in dists]}")

    if resolved["dataset"] is not None:
        try:
            ds = _load_data(resolved)
        except ConfigurationError:
            ds = None
        if ds is not None:
            probe = build_model(
                ModelSpec(depth=resolved["depth"], width=resolved["width"],
                          norm=resolved["norm"], in_shape=ds.image_shape,
                          num_classes=ds.num_classes),
                resolved["seed"])
            c = sorted(ds.class_index)[0]
            idx = ds.class_index[c][:256]
            norms, summary = metrics_mod.gradient_norm_stats(probe, ds, c, indices=idx)
            fig, ax = plt.subplots()
            ax.hist(norms, bins=30)
            ax.set_xlabel("per-sample gradient norm")
            path = os.path.join(out_dir, "grad_norm_hist.png")
            fig.savefig(path, dpi=120)
            plt.close(fig)
            wrote.append(path)
            print(f"class {c} gradient-norm mean {summary['mean']:.4f} "
                  f"variance {summary['variance']:.4f}")
    print(f"diagnose wrote {len(wrote)} artifacts to {out_dir}")
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="repdistill",
                                     description="representative-matching dataset distillation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("distill", help="synthesize a distilled dataset")
    _add_common(p)
    p.set_defaults(func=cmd_distill)

    p = sub.add_parser("eval", help="train on a synthetic set and report test accuracy")
    p.add_argument("syn", help="path to syn.bin")
    _add_common(p)
    _add_eval_args(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compare", help="compare sampling/init strategies")
    p.add_argument("--strategies", required=True,
                   help="comma list of sampling-init pairs, e.g. random-random,representative-cluster")
    _add_common(p)
    _add_eval_args(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("diagnose", help="plots and stats for a finished run directory")
    p.add_argument("run_dir", help="output directory of a distill run")
    _add_common(p)
    p.set_defaults(func=cmd_diagnose)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0
    try:
        return args.func(args)
    except (ConfigurationError, DataLoadError, UsageError) as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure with context
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
