"""Command-line entry point.

Verbs: features, train, eval, grid, gradcheck, analyze, transfer,
synth-multilabel. Exit codes: 0 success, 1 runtime fault, 2 usage error,
3 configuration error.
"""

from __future__ import annotations

import argparse
import functools
import hashlib
import os
import sys

from .analysis import (AugmentSpec, DEFAULT_AMPLITUDE_LEVELS, DEFAULT_SPEED_LEVELS,
                       augment, capsule_scatter, export_transfer_features,
                       write_scatter)
from .audio import load_wav
from .config import apply_overrides, load_config
from .errors import CapsAudioError, ConfigError
from .features import FeatureConfig
from .manifest import load_manifest, materialize, synth_multilabel, save_manifest
from .train import (evaluate, load_trained, make_dataset, run_grid,
                    run_training, write_grid_table)

GRADCHECK_TOLERANCE = 1e-4


def _ensure_run_dir(path: str, force: bool) -> None:
    if os.path.isdir(path) and os.listdir(path) and not force:
        raise ConfigError(f"run directory {path} exists and is not empty "
                          f"(use --force to overwrite)")
    os.makedirs(path, exist_ok=True)


def _load_cfg(args):
    cfg = load_config(args.config)
    if args.set:
        cfg = apply_overrides(cfg, args.set)
    return cfg


def _cmd_features(args) -> int:
    total = 0
    for split in ("train", "test"):
        man = load_manifest(os.path.join(args.data, f"{split}.csv"), split)
        materialize(man, args.data, FeatureConfig(), cache_dir=args.out,
                    jobs=args.jobs)
        total += len(man.entries)
    print(f"features: cached {total} clips under {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = _load_cfg(args)
    _ensure_run_dir(args.out, args.force)
    trained, metrics = run_training(cfg, args.data, out_dir=args.out,
                                    cache_dir=args.features, jobs=args.jobs)
    print(f"train: model={cfg.model} best_epoch={metrics.best_epoch} "
          f"{metrics.metric_name}={metrics.best_test_metric} -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    trained = load_trained(args.checkpoint)
    man = load_manifest(os.path.join(args.data, f"{args.split}.csv"), args.split)
    mats = materialize(man, args.data, FeatureConfig(), cache_dir=args.features)
    ds = make_dataset(man, mats, man.class_names, trained.scaler, trained.cfg.T_fix)
    metric, _ = evaluate(trained, ds)
    name = "accuracy" if trained.cfg.mode == "single" else "weighted_accuracy"
    print(f"eval: {args.split} {name}={metric}")
    return 0


def _grid_metric(cfg, data_dir: str, cache_dir: str | None):
    from .train import run_training as _rt

    _, metrics = _rt(cfg, data_dir, cache_dir=cache_dir)
    return metrics.best_test_metric


def _cmd_grid(args) -> int:
    cfg = _load_cfg(args)
    _ensure_run_dir(args.out, args.force)
    seeds = [int(s) for s in args.seeds.split(",")]
    runner = functools.partial(_grid_metric, data_dir=args.data,
                               cache_dir=args.features)
    rows = run_grid(cfg, args.axis, seeds, runner, jobs=args.jobs)
    metric_name = "accuracy" if cfg.mode == "single" else "weighted_accuracy"
    table = os.path.join(args.out, f"grid_{args.axis}.csv")
    write_grid_table(table, args.axis, rows, metric_name)
    print(f"grid: {len(rows)} runs over {args.axis} -> {table}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import full_model_check, run_suite

    results = run_suite(trials=args.trials)
    results["full_model"] = full_model_check(trials=min(3, args.trials))
    lines = [f"{name:12s} {err:.3e} {'ok' if err <= GRADCHECK_TOLERANCE else 'FAIL'}"
             for name, err in results.items()]
    report = "\n".join(lines)
    print(report)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report + "\n")
    worst = max(results.values())
    print(f"gradcheck: worst {worst:.3e} over {len(results)} ops, "
          f"{args.trials} trials each")
    return 0 if worst <= GRADCHECK_TOLERANCE else 1


def _cmd_analyze(args) -> int:
    trained = load_trained(args.checkpoint)
    _ensure_run_dir(args.out, args.force)
    train_man = load_manifest(os.path.join(args.data, "train.csv"), "train")
    split_man = (train_man if args.split == "train" else
                 load_manifest(os.path.join(args.data, "test.csv"), "test"))
    class_names = sorted(set(train_man.class_names) | set(split_man.class_names))
    if args.target_class not in class_names:
        raise ConfigError(f"class {args.target_class!r} not in dataset "
                          f"(classes: {', '.join(class_names)})")
    class_index = class_names.index(args.target_class)

    if args.levels:
        levels = tuple(float(x) for x in args.levels.split(","))
    else:
        levels = (DEFAULT_AMPLITUDE_LEVELS if args.kind == "amplitude"
                  else DEFAULT_SPEED_LEVELS)
    spec = AugmentSpec(args.kind, levels)

    pairs = []
    for entry in split_man.entries:
        if args.target_class not in entry.labels:
            continue
        clip = load_wav(os.path.join(args.data, entry.path))
        pairs.extend((augment(clip, spec, lvl), lvl) for lvl in spec.levels)
    if not pairs:
        raise ConfigError(f"no {args.split} clips labeled {args.target_class!r}")

    rows, pca = capsule_scatter(trained, pairs, class_index)
    with open(args.checkpoint, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    table = os.path.join(args.out, f"scatter_{args.kind}.csv")
    write_scatter(table, rows, digest, pca)
    print(f"analyze: {len(rows)} projections of {args.target_class} -> {table}")
    return 0


def _cmd_transfer(args) -> int:
    trained = load_trained(args.checkpoint)
    _ensure_run_dir(args.out, args.force)
    n = 0
    for split in ("train", "test"):
        man = load_manifest(os.path.join(args.data, f"{split}.csv"), split)
        n += len(export_transfer_features(trained, man, args.data, args.out))
    print(f"transfer: wrote {n} augmented feature files under {args.out}")
    return 0


def _cmd_synth_multilabel(args) -> int:
    _ensure_run_dir(args.out, args.force)
    for split in ("train", "test"):
        src = load_manifest(os.path.join(args.data, f"{split}.csv"), split)
        out = synth_multilabel(src, args.data, args.out, seed=args.seed,
                               n_pairs=args.pairs)
        save_manifest(os.path.join(args.out, f"{split}.csv"), out)
    print(f"synth-multilabel: wrote concatenated dataset under {args.out}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capsaudio",
        description="Capsule-network audio classifier experiments")
    sub = parser.add_subparsers(dest="verb", required=True)

    def common_run(p):
        p.add_argument("--config", required=True, help="key=value config file")
        p.add_argument("--data", required=True, help="dataset dir with train.csv/test.csv")
        p.add_argument("--out", required=True, help="run output directory")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="config override, repeatable")
        p.add_argument("--features", default=None, help="feature cache directory")
        p.add_argument("--force", action="store_true")
        p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("features", help="materialize the feature cache")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(fn=_cmd_features)

    p = sub.add_parser("train", help="train one model")
    common_run(p)
    p.set_defaults(fn=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--features", default=None)
    p.set_defaults(fn=_cmd_eval)

    p = sub.add_parser("grid", help="run a sweep axis")
    common_run(p)
    p.add_argument("--axis", required=True,
                   choices=("routing", "caps_dim", "regularization"))
    p.add_argument("--seeds", default="0", help="comma-separated seed list")
    p.set_defaults(fn=_cmd_grid)

    p = sub.add_parser("gradcheck", help="finite-difference gradient table")
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--out", default=None, help="also write the table here")
    p.set_defaults(fn=_cmd_gradcheck)

    p = sub.add_parser("analyze", help="capsule PCA scatter for one class")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--kind", required=True, choices=("amplitude", "speed"))
    p.add_argument("--target-class", required=True)
    p.add_argument("--levels", default=None, help="comma-separated levels")
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=_cmd_analyze)

    p = sub.add_parser("transfer", help="export capsule-augmented features")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=_cmd_transfer)

    p = sub.add_parser("synth-multilabel", help="build a concatenated-pairs dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--pairs", type=int, default=None)
    p.add_argument("--force", action="store_true")
    p.set_defaults(fn=_cmd_synth_multilabel)
    return parser


def dispatch(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 3
    except CapsAudioError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
