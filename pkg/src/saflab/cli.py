"""Command-line interface: train, finetune, evaluate, sweep, inspect-checkpoint.

Every option can also come from ``--config FILE`` (YAML or JSON mapping whose
keys are the long option names, dashes or underscores). Explicit flags win
over the config file. Failures print one JSON line ``{"error": <category>,
"message": ...}`` on stderr and exit nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .checkpoint import inspect_checkpoint, load_checkpoint, save_checkpoint
from .data import Dataset, load_dataset
from .errors import InputError, SafLabError, StorageError
from .harness import Campaign, replay_manifest, run_campaign, sweep_and_emit, top1
from .network import cnn_s, mlp
from .optim import TrainConfig, finetune, train
from .saf import SafKind

log = logging.getLogger("saflab")

TRAIN_DEFAULTS = TrainConfig()
FINETUNE_DEFAULTS = TrainConfig.finetune_defaults()


def _add_data_args(p):
    p.add_argument("--dataset", help="cifar10 | mnist | synth | digits | textures")
    p.add_argument("--data-dir", help="directory holding the dataset files")
    p.add_argument("--subset", type=int, help="use only the first N samples of the split")
    p.add_argument("--synth-classes", type=int)
    p.add_argument("--synth-per-class", type=int)
    p.add_argument("--synth-dim", type=int)


def _add_train_args(p):
    p.add_argument("--optimizer", choices=["sgd_momentum", "adamw"])
    p.add_argument("--lr", type=float, dest="lr0")
    p.add_argument("--momentum", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--schedule", choices=["cosine", "constant"])
    p.add_argument("--augment", action=argparse.BooleanOptionalAction)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="checkpoint file to write")


def _add_campaign_args(p):
    p.add_argument("--checkpoint")
    p.add_argument("--saf", help="override the checkpoint's SAF")
    p.add_argument("--dtype", help="fp32 | fp16 | q25")
    p.add_argument("--ber", type=float, action="append", help="bit-error rate (repeatable)")
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="saflab", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from scratch")
    p.add_argument("--config")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--arch", choices=["cnn-s", "mlp"])
    p.add_argument("--hidden", type=int, help="MLP hidden width")
    p.add_argument("--saf")
    p.add_argument("--saf-override", action="append", metavar="LAYER=KIND",
                   help="per weighted-layer SAF, e.g. 3=none")

    p = sub.add_parser("finetune", help="adapt a checkpoint to a SAF")
    p.add_argument("--config")
    p.add_argument("--checkpoint")
    _add_data_args(p)
    _add_train_args(p)
    p.add_argument("--saf")

    for name, helptext in (("evaluate", "clean and faulty accuracy, printed as JSON"),
                           ("sweep", "BER sweep written as CSV + manifest")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config")
        _add_data_args(p)
        _add_campaign_args(p)
        p.add_argument("--out", help="output directory" if name == "sweep" else "optional output directory")
        if name == "sweep":
            p.add_argument("--replay", help="re-run the campaign recorded in a manifest.json")

    p = sub.add_parser("inspect-checkpoint", help="print checkpoint layout as JSON")
    p.add_argument("path")
    return ap


def _merge_config(args: argparse.Namespace) -> argparse.Namespace:
    path = getattr(args, "config", None)
    if not path:
        return args
    try:
        data = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise StorageError(f"cannot read config {path}: {exc.strerror or exc}") from None
    except yaml.YAMLError as exc:
        raise InputError(f"config {path} is not valid YAML/JSON: {exc}") from None
    if not isinstance(data, dict):
        raise InputError(f"config {path} must be a key/value mapping")
    aliases = {"lr": "lr0", "lr0": "lr0"}
    for key, value in data.items():
        dest = aliases.get(key, key.replace("-", "_"))
        if not hasattr(args, dest):
            raise InputError(f"config {path}: unknown key {key!r}")
        if getattr(args, dest) is None:
            if dest == "ber" and not isinstance(value, list):
                value = [value]
            setattr(args, dest, value)
    return args


def _pick(value, default):
    return default if value is None else value


def _dataset(args, split, stats=None) -> tuple[Dataset, dict]:
    if not args.dataset:
        raise InputError("--dataset is required")
    synth = {"classes": args.synth_classes, "n_per_class": args.synth_per_class, "dim": args.synth_dim}
    if args.dataset in ("digits", "textures"):
        synth = {}
    ds = load_dataset(args.dataset, split, args.data_dir, stats=stats, **synth)
    ref = {"name": ds.name, "split": split}
    if args.data_dir:
        ref["data_dir"] = str(Path(args.data_dir).resolve())
    if ds.name in ("synth", "digits", "textures"):
        ref.update({k: v for k, v in ds.info.items() if k != "subset"})
    return ds, ref


def _train_config(args, defaults: TrainConfig) -> TrainConfig:
    d = defaults.to_dict()
    for key in ("optimizer", "lr0", "momentum", "weight_decay", "epochs", "batch_size", "schedule", "seed", "augment"):
        v = getattr(args, key, None)
        if v is not None:
            d[key] = v
    return TrainConfig.from_dict(d)


def _fit_and_save(model, args, cfg, ref, source=None) -> dict:
    train_ds, _ = _dataset(args, "train", stats=(model.meta.get("data") or {}).get("norm"))
    train_ds = train_ds.subset(args.subset)
    hist = train(model, train_ds, cfg)
    test_ds, _ = _dataset(args, "test", stats=train_ds.norm)
    acc = top1(model, test_ds)
    manifest = {
        "train": cfg.to_dict(),
        "data": {**ref, "train_subset": args.subset, "norm": train_ds.norm,
                 "augmentation": "hflip(p=0.5)+pad4-crop" if cfg.augment else "none"},
        "history": {"loss": hist.loss, "lr": hist.lr},
        "clean_test_top1": acc,
        "source_checkpoint": source,
        "version": __version__,
    }
    out = Path(args.out or "model.ckpt")
    if out.is_dir():
        out = out / "model.ckpt"
    save_checkpoint(model, manifest, out)
    return {"checkpoint": str(out), "clean_test_top1": acc, "final_loss": hist.loss[-1]}


def cmd_train(args) -> dict:
    cfg = _train_config(args, TRAIN_DEFAULTS)
    probe, ref = _dataset(args, "test")
    saf = SafKind.parse(args.saf)
    arch = args.arch or ("mlp" if probe.images.shape[2:] == (1, 1) else "cnn-s")
    c, h, w = probe.shape
    if arch == "cnn-s":
        model = cnn_s(probe.class_count, c, h, saf, seed=cfg.seed)
    else:
        model = mlp(c * h * w, args.hidden or 32, probe.class_count, saf, seed=cfg.seed, input_shape=probe.shape)
    if args.saf_override:
        overrides = {}
        for item in args.saf_override:
            idx, _, kind = item.partition("=")
            if not idx.isdigit() or not kind:
                raise InputError(f"--saf-override expects LAYER=KIND, got {item!r}")
            overrides[int(idx)] = kind
        model.set_saf(saf, overrides)
    return _fit_and_save(model, args, cfg, ref)


def cmd_finetune(args) -> dict:
    if not args.checkpoint:
        raise InputError("--checkpoint is required")
    model = load_checkpoint(args.checkpoint)
    cfg = _train_config(args, FINETUNE_DEFAULTS)
    model.set_saf(SafKind.parse(args.saf or "tanh"))
    _, ref = _dataset(args, "test", stats=(model.meta.get("data") or {}).get("norm"))
    return _fit_and_save(model, args, cfg, ref, source=str(Path(args.checkpoint).resolve()))


def _campaign(args) -> Campaign:
    if not args.checkpoint:
        raise InputError("--checkpoint is required")
    model = load_checkpoint(args.checkpoint)
    norm = (model.meta.get("data") or {}).get("norm")
    ds, ref = _dataset(args, "test", stats=norm)
    return Campaign(
        dataset=ds, bers=args.ber or [0.0], model_checkpoint=args.checkpoint, saf=args.saf,
        dtype=args.dtype or "fp32", rounds=_pick(args.rounds, 100), seed=_pick(args.seed, 0),
        workers=_pick(args.workers, 1), subset=args.subset, dataset_ref=ref,
    )


def cmd_evaluate(args) -> dict:
    c = _campaign(args)
    report = sweep_and_emit(c, args.out) if args.out else run_campaign(c)
    d = report.to_dict()
    for r in d["results"]:
        r.pop("round_top1")
        r.pop("flip_counts")
    return d


def cmd_sweep(args) -> dict:
    if args.replay:
        report = replay_manifest(args.replay, args.out or Path(args.replay).parent / "replay")
        out = args.out or str(Path(args.replay).parent / "replay")
    else:
        if not args.out:
            raise InputError("--out is required for sweep")
        report = sweep_and_emit(_campaign(args), args.out)
        out = args.out
    return {"out": str(out), "summary": [
        {"ber": r.ber, "clean_top1": r.clean_top1, "mean": r.mean, "std": r.std} for r in report.results
    ]}


COMMANDS = {
    "train": cmd_train,
    "finetune": cmd_finetune,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "inspect-checkpoint": lambda a: inspect_checkpoint(a.path),
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        args = _merge_config(args)
        result = COMMANDS[args.command](args)
    except SafLabError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return exc.exit_code
    except FloatingPointError as exc:
        print(json.dumps({"error": "numeric", "message": str(exc)}), file=sys.stderr)
        return 6
    print(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
