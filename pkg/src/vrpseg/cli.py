"""``vrpseg`` command-line entry point.

Exit codes: 0 ok, 2 configuration error, 3 data error, 4 diverged training.
"""

from __future__ import annotations

import argparse
import dataclasses
import functools
import json
import sys
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from . import __version__
from .config import RunConfig, cache_dir, dump_config, load_config, reference_config, resolve_dataset
from .data import fold_spec, n_folds, sample_episodes, synth_dataset
from .data.folds import DATASETS
from .data.synth import SynthConfig
from .errors import BadConfig, DataError, DivergedLoss, VrpSegError
from .eval import (
    emit_report,
    result_record,
    run_benchmark,
    run_gp_baseline,
    run_multi_vrp_benchmark,
)
from .prompts import KINDS
from .samstub import GP_KINDS
from .train import decoder_hash, load_checkpoint, train
from .vrp import INIT_MODES

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_DIVERGED = 0, 2, 3, 4
QUERY_SWEEP = (10, 25, 50, 75, 100)
NVRP_SWEEP = (1, 5)
HELP_WIDTH = 100


def _formatter(prog):
    return argparse.HelpFormatter(prog, width=HELP_WIDTH)


def _out(text: str = "") -> None:
    sys.stdout.write(text + "\n")


# config handling


def _run_config(args) -> RunConfig:
    config = load_config(args.config) if getattr(args, "config", None) else RunConfig()
    # flags win over the file
    data, tr = config.data, config.train
    overrides = {
        "data": {"root": getattr(args, "data", None),
                 "fold": args.fold if isinstance(getattr(args, "fold", None), int) else None,
                 "dataset": getattr(args, "dataset", None)},
        "train": {"steps": getattr(args, "steps", None), "lr": getattr(args, "lr", None),
                  "seed": getattr(args, "seed", None)},
    }
    for section, target in (("data", data), ("train", tr)):
        for key, value in overrides[section].items():
            if value is not None:
                setattr(target, key, value)
    if getattr(args, "kind", None) is not None and args.kind in KINDS + ("mixed",):
        config.annotation_kind = args.kind
    try:
        dataclasses.replace(tr)  # re-run validation after overrides
    except ValueError as exc:
        raise BadConfig(str(exc)) from exc
    return config


def _folds(dataset: str, fold: str) -> list[int]:
    if fold == "all":
        return list(range(n_folds(dataset)))
    try:
        return [int(fold)]
    except ValueError:
        raise BadConfig(f"--fold must be an integer or 'all', got {fold!r}") from None


# commands


def cmd_synth(args) -> int:
    out = Path(args.out)
    if out.exists() and any(out.iterdir()) and not args.force:
        raise BadConfig(f"{out} exists and is not empty; pass --force to overwrite")
    classes = tuple(c.strip() for c in args.classes.split(",")) if args.classes else SynthConfig().classes
    config = SynthConfig(size=args.size, n_images=args.n_images, classes=classes, style=args.style)
    manifest = synth_dataset(config, seed=args.seed)
    manifest.write(out)
    _out(f"wrote {len(manifest)} images ({len(manifest.classes)} classes) to {out}")
    return EXIT_OK


def cmd_reference_config(args) -> int:
    text = reference_config()
    if args.out:
        Path(args.out).write_text(text)
        _out(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_simulate_prompts(args) -> int:
    config = _run_config(args)
    manifest = resolve_dataset(config.data)
    spec = config.spec()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kind = args.kind or config.annotation_kind
    for i, e in enumerate(sample_episodes(manifest, spec, args.split, args.n, kind, seed=args.seed or 0)):
        stem = f"{i:04d}_{e.annotation.kind}"
        Image.fromarray((e.annotation.raster * 255).astype(np.uint8), "L").save(out / f"{stem}.png")
        sidecar = {**e.annotation.sidecar(), "item": e.ref_index, "class_name": e.class_name}
        (out / f"{stem}.json").write_text(json.dumps(sidecar, indent=2, sort_keys=True) + "\n")
    _out(f"wrote {args.n} {kind} annotations to {out}")
    return EXIT_OK


def _parameter_counts(config: RunConfig) -> dict[str, int]:
    from .model import VRPSegModel

    model = VRPSegModel(config.model_config())
    counts = {
        "backbone": sum(p.numel() for p in model.backbone.parameters()),
        "vrp": sum(p.numel() for _, p in model.trainable_parameters()),
        "decoder": sum(p.numel() for p in model.decoder.parameters()),
    }
    counts["total"] = sum(counts.values())
    counts["trainable"] = counts["vrp"]
    return counts


def cmd_train(args) -> int:
    config = _run_config(args)
    if args.dry_run:
        for name, n in _parameter_counts(config).items():
            _out(f"{name:10s} {n:>10d}")
        return EXIT_OK
    if not args.out:
        raise BadConfig("train needs --out (or --dry-run)")
    manifest = resolve_dataset(config.data)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(dump_config(config))
    root = str(Path(config.data.root).resolve()) if config.data.root else None
    meta = {"dataset": config.data.dataset, "fold": config.data.fold, "data_root": root}
    result = train(config.train, manifest, config.spec(), config.annotation_kind, config.model_config(),
                   out=out, workers=args.workers, meta=meta)
    last = result.records[-1]
    _out(f"trained {len(result.records)} steps; last loss bce {last.loss_bce:.4f} dice {last.loss_dice:.4f}")
    _out(f"checkpoint: {result.checkpoint}")
    return EXIT_OK


def _eval_context(args):
    checkpoint = load_checkpoint(args.checkpoint)
    config = _run_config(args)
    meta = checkpoint.meta
    # without explicit flags, evaluate on the data the checkpoint was trained on
    if args.config is None:
        if args.data is None and meta.get("data_root"):
            config.data.root = meta["data_root"]
        if args.dataset is None and meta.get("dataset"):
            config.data.dataset = meta["dataset"]
    manifest = resolve_dataset(config.data)
    if args.fold is None:
        folds = [int(meta.get("fold", config.data.fold))]
    else:
        folds = _folds(config.data.dataset, args.fold)
    return checkpoint, config, manifest, folds


def cmd_eval(args) -> int:
    checkpoint, config, manifest, folds = _eval_context(args)
    kind = args.kind or "mask"
    records = []
    for fold in folds:
        spec = fold_spec(config.data.dataset, fold)
        stats = run_benchmark(checkpoint, manifest, spec, kind, args.episodes, seed=args.seed or 0,
                              workers=args.workers)
        records.append(result_record(stats, spec, kind))
        _out(f"fold {fold}: mIoU {stats.mean_iou:.4f} over {stats.n_episodes} episodes")
    paths = emit_report(records, args.out, title=f"VRP evaluation ({kind} references)")
    _out(f"report: {paths['md']}")
    return EXIT_OK


def cmd_compare_gp(args) -> int:
    checkpoint, config, manifest, folds = _eval_context(args)
    kinds = list(GP_KINDS) if args.kind == "all" else [args.kind]
    before = decoder_hash(checkpoint.model)
    records = []
    for fold in folds:
        spec = fold_spec(config.data.dataset, fold)
        vrp = run_benchmark(checkpoint, manifest, spec, "mask", args.episodes, seed=args.seed or 0,
                            workers=args.workers)
        records.append(result_record(vrp, spec, "mask"))
        _out(f"fold {fold}: VRP mIoU {vrp.mean_iou:.4f}")
        for gp_kind in kinds:
            gp = run_gp_baseline(checkpoint, manifest, spec, gp_kind, args.episodes, seed=args.seed or 0,
                                 workers=args.workers)
            records.append(result_record(gp, spec, "mask", gp_variant=gp_kind))
            _out(f"fold {fold}: GP-{gp_kind} mIoU {gp.mean_iou:.4f} (empty after threshold: {gp.empty_after_threshold})")
    if decoder_hash(checkpoint.model) != before:
        raise VrpSegError("decoder weights changed during the comparison")
    paths = emit_report(records, args.out, title="VRP vs geometric prompts (shared decoder)")
    meta = json.loads(paths["json"].read_text())
    meta["decoder_sha256"] = before
    paths["json"].write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    _out(f"shared decoder sha256 {before}")
    _out(f"report: {paths['md']}")
    return EXIT_OK


def _ablation_runs(which: str, config: RunConfig):
    """(label, RunConfig) pairs for one sweep; nvrp shares a single training run."""
    def variant(label, **changes):
        cfg = RunConfig(**{f.name: getattr(config, f.name) for f in dataclasses.fields(RunConfig)})
        cfg.train = dataclasses.replace(config.train, **changes.get("train", {}))
        cfg.vrp = dataclasses.replace(config.vrp, **changes.get("vrp", {}))
        return label, cfg

    if which == "loss":
        return [variant(f"loss={m}", train={"loss_mode": m}) for m in ("bce", "dice", "both")]
    if which == "queries":
        return [variant(f"queries={n}", vrp={"n_queries": n}) for n in QUERY_SWEEP]
    if which == "init":
        return [variant(f"init={m}", vrp={"query_init": m}) for m in INIT_MODES]
    return [variant("nvrp")]


def cmd_ablate(args) -> int:
    config = _run_config(args)
    manifest = resolve_dataset(config.data)
    spec = config.spec()
    out = Path(args.out)
    records = []
    for label, cfg in _ablation_runs(args.which, config):
        result = train(cfg.train, manifest, spec, cfg.annotation_kind, cfg.model_config(), workers=args.workers)
        if args.which == "nvrp":
            for n in NVRP_SWEEP:
                stats = run_multi_vrp_benchmark(result.model, manifest, spec, n, "mask", args.episodes,
                                                seed=args.seed or 0, workers=args.workers)
                records.append(result_record(stats, spec, "mask", label=f"{n}-VRP"))
                _out(f"{n}-VRP: mIoU {stats.mean_iou:.4f}")
            continue
        stats = run_benchmark(result.model, manifest, spec, "mask", args.episodes, seed=args.seed or 0,
                              workers=args.workers)
        records.append(result_record(stats, spec, "mask", label=label))
        _out(f"{label}: mIoU {stats.mean_iou:.4f}")
    paths = emit_report(records, out, title=f"Ablation: {args.which}")
    _out(f"report: {paths['md']}")
    return EXIT_OK


def cmd_info(args) -> int:
    _out(f"vrpseg {__version__} (torch {torch.__version__})")
    _out(f"cache directory: {cache_dir()}")
    counts = _parameter_counts(RunConfig())
    _out(f"default model: {counts['trainable']} trainable / {counts['total']} total parameters")
    dataset = args.dataset or "synthetic"
    for fold in range(n_folds(dataset)):
        spec = fold_spec(dataset, fold)
        _out(f"{dataset} fold {fold}: test {', '.join(spec.test_classes)}")
    return EXIT_OK


# parser


def _common(p, config=True, data=True):
    p.add_argument("--seed", type=int, default=None, help="random seed for this command")
    p.add_argument("--workers", type=int, default=1, help="parallel episode preparation (default 1)")
    if config:
        p.add_argument("--config", default=None, help="JSON run config; flags override its values")
    if data:
        p.add_argument("--data", default=None, help="dataset directory with manifest.json")
        p.add_argument("--dataset", default=None, choices=DATASETS, help="fold table to use")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vrpseg",
        description="Visual reference prompt segmentation at desk scale.",
        formatter_class=_formatter,
    )
    parser.add_argument("--version", action="version", version=f"vrpseg {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", required=True)
    add = functools.partial(sub.add_parser, formatter_class=_formatter)

    p = add("synth", help="render the synthetic shape dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--classes", default=None, help="comma-separated shape classes (at least 6)")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--n-images", type=int, default=240)
    p.add_argument("--style", default="texture", choices=("flat", "texture"))
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth)

    p = add("reference-config", help="print the default run config (all keys)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_reference_config)

    p = add("simulate-prompts", help="write simulated reference annotations as PNG + JSON")
    _common(p)
    p.add_argument("--kind", default=None, choices=KINDS)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--split", default="test", choices=("train", "test"))
    p.add_argument("-n", type=int, default=10, help="number of annotations")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate_prompts)

    p = add("train", help="train the VRP encoder")
    _common(p)
    p.add_argument("--out", default=None)
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--kind", default=None, choices=KINDS + ("mixed",), help="training annotation kind")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--dry-run", action="store_true", help="print parameter counts and exit")
    p.set_defaults(func=cmd_train)

    p = add("eval", help="few-shot benchmark of a checkpoint")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--fold", default=None, help="fold index or 'all' (default: the training fold)")
    p.add_argument("--kind", default=None, choices=KINDS, help="reference annotation kind (default mask)")
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = add("compare-gp", help="VRP vs geometric prompts under the same decoder")
    _common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--kind", default="points", choices=GP_KINDS + ("all",))
    p.add_argument("--fold", default=None)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare_gp)

    p = add("ablate", help="loss / query-count / query-init / multi-VRP sweeps")
    _common(p)
    p.add_argument("--which", required=True, choices=("loss", "queries", "init", "nvrp"))
    p.add_argument("--fold", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_ablate)

    p = add("info", help="version, cache location, fold tables")
    p.add_argument("--dataset", default=None, choices=DATASETS)
    p.set_defaults(func=cmd_info)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except BadConfig as exc:
        sys.stderr.write(f"config error: {exc}\n")
        return EXIT_CONFIG
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except DivergedLoss as exc:
        sys.stderr.write(f"diverged: {exc} (state dumped to {exc.dump_path})\n")
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
