"""Monte Carlo fault campaigns, BER sweeps and their CSV/JSON records."""
from __future__ import annotations

import csv
import json
import logging
import platform
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, codec
from .checkpoint import file_sha256, load_checkpoint
from .codec import StoredDType
from .data import Dataset, load_dataset
from .errors import InputError, StorageError
from .injector import FaultConfig
from .network import Model, encode_weights, forward, read_deployed_with_flips, with_flat_weights
from .saf import SafKind

log = logging.getLogger(__name__)

RESULT_COLUMNS = ["dataset", "arch", "saf", "dtype", "ber", "round", "top1", "flip_count"]
SUMMARY_COLUMNS = [
    "dataset", "arch", "saf", "dtype", "ber", "rounds", "clean_top1", "mean", "std",
    "degradation", "mean_flip_count",
]
STD_FORMULA = "population"


def predict(model: Model, images: np.ndarray, batch_size=500) -> np.ndarray:
    """Argmax class per sample. Ties go to the lowest class index; NaN logits
    never win, and an all-NaN row predicts class 0."""
    out = np.empty(len(images), dtype=np.int64)
    for s in range(0, len(images), batch_size):
        z = forward(model, images[s:s + batch_size])
        z = np.where(np.isnan(z), -np.inf, z)
        out[s:s + batch_size] = np.argmax(z, axis=1)
    return out


def top1(model: Model, dataset: Dataset, batch_size=500) -> float:
    """Top-1 accuracy in percent."""
    hits = int(np.count_nonzero(predict(model, dataset.images, batch_size) == dataset.labels))
    return 100.0 * hits / len(dataset)


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation (divide by n)."""
    a = np.asarray(values, dtype=np.float64)
    return float(a.mean()), float(a.std(ddof=0))


@dataclass
class BerResult:
    ber: float
    clean_top1: float
    round_top1: list
    flip_counts: list

    @property
    def mean(self) -> float:
        return mean_std(self.round_top1)[0]

    @property
    def std(self) -> float:
        return mean_std(self.round_top1)[1]

    @property
    def degradation(self) -> float:
        return self.clean_top1 - self.mean

    @property
    def mean_flip_count(self) -> float:
        return float(np.mean(self.flip_counts))


@dataclass
class DegradationReport:
    dataset: str
    arch: str
    saf: str
    dtype: str
    rounds: int
    seed: int
    results: list = field(default_factory=list)

    def at(self, ber: float) -> BerResult:
        for r in self.results:
            if r.ber == ber:
                return r
        raise KeyError(ber)

    @property
    def clean_top1(self) -> float:
        return self.results[0].clean_top1

    def to_dict(self) -> dict:
        return {
            "dataset": self.dataset, "arch": self.arch, "saf": self.saf, "dtype": self.dtype,
            "rounds": self.rounds, "seed": self.seed, "std_formula": STD_FORMULA,
            "results": [
                {"ber": r.ber, "clean_top1": r.clean_top1, "mean": r.mean, "std": r.std,
                 "degradation": r.degradation, "mean_flip_count": r.mean_flip_count,
                 "round_top1": r.round_top1, "flip_counts": r.flip_counts}
                for r in self.results
            ],
        }


@dataclass
class Campaign:
    """One Monte Carlo campaign: a model, an evaluation set and a BER list.

    ``model_checkpoint`` is loaded unless an in-memory ``model`` is given.
    ``saf`` overrides the checkpoint's SAF when set. ``dataset_ref`` is the
    recipe used to reload the dataset when replaying a manifest.
    """

    dataset: Dataset
    bers: list
    model_checkpoint: str | None = None
    model: Model | None = None
    saf: SafKind | None = None
    dtype: StoredDType = StoredDType.FP32
    rounds: int = 100
    seed: int = 0
    workers: int = 1
    subset: int | None = None
    dataset_ref: dict | None = None

    def __post_init__(self):
        self.bers = [float(b) for b in self.bers]
        self.dtype = StoredDType.parse(self.dtype)
        if self.saf is not None:
            self.saf = SafKind.parse(self.saf)
        if self.rounds < 1:
            raise InputError("rounds must be at least 1")
        if not self.bers:
            raise InputError("at least one BER is required")
        for b in self.bers:
            if not 0.0 <= b <= 1.0:
                raise InputError(f"BER {b} outside [0, 1]")
        if self.model is None and self.model_checkpoint is None:
            raise InputError("campaign needs a model or a checkpoint path")

    def load_model(self) -> Model:
        model = self.model.copy() if self.model is not None else load_checkpoint(self.model_checkpoint)
        if self.saf is not None:
            model.set_saf(self.saf)
        return model


def run_campaign(c: Campaign) -> DegradationReport:
    model = c.load_model()
    ds = c.dataset.subset(c.subset)
    stored = encode_weights(model, c.dtype)
    clean = top1(with_flat_weights(model, codec.decode(stored)), ds)
    report = DegradationReport(ds.name, model.arch, model.saf.name, c.dtype.label, c.rounds, c.seed)

    def one_round(ber, r):
        faulty, flips = read_deployed_with_flips(model, c.dtype, FaultConfig(ber, c.seed, r), stored)
        return top1(faulty, ds), flips

    for ber in c.bers:
        if c.workers > 1:
            with ThreadPoolExecutor(c.workers) as pool:
                outcomes = list(pool.map(lambda r: one_round(ber, r), range(c.rounds)))
        else:
            outcomes = [one_round(ber, r) for r in range(c.rounds)]
        res = BerResult(ber, clean, [o[0] for o in outcomes], [o[1] for o in outcomes])
        log.info("%s %s ber=%g: clean %.2f -> %.2f +/- %.2f", report.saf, report.dtype, ber, clean, res.mean, res.std)
        report.results.append(res)
    return report


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def _write_csv(path: Path, header, rows):
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([_fmt(v) for v in row])
    except OSError as exc:
        raise StorageError(f"cannot write {path}: {exc.strerror or exc}") from None


def result_rows(report: DegradationReport):
    for res in report.results:
        for r, (acc, flips) in enumerate(zip(res.round_top1, res.flip_counts)):
            yield [report.dataset, report.arch, report.saf, report.dtype, res.ber, r, acc, flips]


def summary_rows(report: DegradationReport):
    for res in report.results:
        yield [report.dataset, report.arch, report.saf, report.dtype, res.ber, report.rounds,
               res.clean_top1, res.mean, res.std, res.degradation, res.mean_flip_count]


def campaign_manifest(c: Campaign, report: DegradationReport) -> dict:
    ckpt = None
    if c.model_checkpoint is not None:
        ckpt = {"path": str(Path(c.model_checkpoint).resolve()), "sha256": file_sha256(c.model_checkpoint)}
    return {
        "kind": "saflab-sweep",
        "version": __version__,
        "checkpoint": ckpt,
        "dataset": c.dataset_ref or {"name": c.dataset.name, "split": c.dataset.split, **c.dataset.info},
        "subset": c.subset,
        "saf": c.saf.name if c.saf is not None else None,
        "effective_saf": report.saf,
        "dtype": c.dtype.label,
        "bers": c.bers,
        "rounds": c.rounds,
        "seed": c.seed,
        "round_seed_derivation": "Philox keyed by SeedSequence(seed, spawn_key=(round,))",
        "workers": c.workers,
        "std_formula": STD_FORMULA,
        "evaluation": "full split" if c.subset is None else f"first {c.subset} samples",
        "platform": {"python": platform.python_version(), "numpy": np.__version__},
        "files": ["results.csv", "summary.csv"],
    }


def sweep_and_emit(c: Campaign, out) -> DegradationReport:
    """Run ``c`` and write ``results.csv``, ``summary.csv`` and ``manifest.json`` into ``out``."""
    out = Path(out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise StorageError(f"cannot create output directory {out}: {exc.strerror or exc}") from None
    report = run_campaign(c)
    _write_csv(out / "results.csv", RESULT_COLUMNS, result_rows(report))
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary_rows(report))
    try:
        (out / "manifest.json").write_text(json.dumps(campaign_manifest(c, report), indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot write {out / 'manifest.json'}: {exc.strerror or exc}") from None
    return report


def campaign_from_manifest(manifest: dict, workers: int | None = None) -> Campaign:
    """Rebuild the campaign recorded in a sweep manifest."""
    ckpt = manifest.get("checkpoint")
    if not ckpt:
        raise InputError("manifest has no checkpoint; in-memory campaigns cannot be replayed")
    model = load_checkpoint(ckpt["path"])
    ref = dict(manifest["dataset"])
    norm = (model.meta.get("data") or {}).get("norm")
    name = ref.pop("name")
    split = ref.pop("split", "test")
    data_dir = ref.pop("data_dir", None)
    ds = load_dataset(name, split, data_dir, stats=norm, **ref)
    return Campaign(
        dataset=ds, bers=manifest["bers"], model_checkpoint=ckpt["path"], saf=manifest.get("saf"),
        dtype=manifest["dtype"], rounds=manifest["rounds"], seed=manifest["seed"],
        workers=workers or manifest.get("workers", 1), subset=manifest.get("subset"),
        dataset_ref=manifest["dataset"],
    )


def replay_manifest(path, out) -> DegradationReport:
    try:
        manifest = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise StorageError(f"cannot read manifest {path}: {exc.strerror or exc}") from None
    return sweep_and_emit(campaign_from_manifest(manifest), out)
