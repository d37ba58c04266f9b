"""Dataset loaders (CIFAR-10 binary, MNIST IDX), synthetic blobs, and
training-time augmentation."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError, InputError, StorageError
from .numerics import FLOAT, Rng

CIFAR_RECORD = 3073
CIFAR_TRAIN_FILES = [f"data_batch_{i}.bin" for i in range(1, 6)]
CIFAR_TEST_FILES = ["test_batch.bin"]
UNSUPPORTED = {"cifar100", "cifar-100", "imagenet", "imagenet2012", "ilsvrc2012"}

_stats_cache: dict = {}


@dataclass
class Dataset:
    images: np.ndarray  # [N, C, H, W] float32
    labels: np.ndarray  # [N] int64
    class_count: int
    split: str = "train"
    name: str = "custom"
    norm: dict | None = None  # {"mean": [...], "std": [...]} when standardized
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4:
            raise FormatError(f"images must be [N, C, H, W], got shape {self.images.shape}")
        if len(self.images) != len(self.labels) or len(self.labels) == 0:
            raise FormatError(f"{len(self.images)} images vs {len(self.labels)} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise FormatError(f"labels outside [0, {self.class_count})")

    def __len__(self):
        return len(self.labels)

    @property
    def shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, n: int | None) -> "Dataset":
        """The first ``n`` samples (all when ``n`` is None)."""
        if n is None or n >= len(self):
            return self
        if n < 1:
            raise InputError("subset size must be positive")
        return replace(self, images=self.images[:n], labels=self.labels[:n], info={**self.info, "subset": n})


# -- standardization --------------------------------------------------------

def channel_stats(images: np.ndarray) -> dict:
    x = images.astype(np.float64)
    return {"mean": x.mean(axis=(0, 2, 3)).tolist(), "std": x.std(axis=(0, 2, 3)).tolist()}


def standardize(images: np.ndarray, stats: dict) -> np.ndarray:
    mean = np.asarray(stats["mean"], dtype=FLOAT)[None, :, None, None]
    std = np.asarray(stats["std"], dtype=FLOAT)[None, :, None, None]
    return ((images - mean) / std).astype(FLOAT)


def _finish(images, labels, classes, split, name, standardize_with, info=None) -> Dataset:
    ds = Dataset(images, labels, classes, split, name, None, info or {})
    if standardize_with is not None:
        ds.images = standardize(ds.images, standardize_with)
        ds.norm = {"mean": list(standardize_with["mean"]), "std": list(standardize_with["std"])}
    return ds


# -- CIFAR-10 ---------------------------------------------------------------

def read_cifar10_file(path) -> tuple[np.ndarray, np.ndarray]:
    """Raw ``(uint8 pixels [N,3,32,32], labels [N])`` of one binary batch."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise StorageError(f"cannot read CIFAR-10 file {path}: {exc.strerror or exc}") from None
    if len(raw) == 0 or len(raw) % CIFAR_RECORD:
        off = (len(raw) // CIFAR_RECORD) * CIFAR_RECORD
        raise FormatError(f"{path}: truncated record at byte offset {off} (file size {len(raw)})")
    rec = np.frombuffer(raw, dtype=np.uint8).reshape(-1, CIFAR_RECORD)
    labels = rec[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if bad.size:
        raise FormatError(f"{path}: label {labels[bad[0]]} out of range at byte offset {bad[0] * CIFAR_RECORD}")
    return rec[:, 1:].reshape(-1, 3, 32, 32), labels


def write_cifar10_file(path, pixels: np.ndarray, labels: np.ndarray) -> None:
    """Serialize uint8 pixels ``[N,3,32,32]`` and labels as CIFAR-10 records."""
    pixels = np.asarray(pixels, dtype=np.uint8).reshape(len(labels), -1)
    rec = np.concatenate([np.asarray(labels, dtype=np.uint8)[:, None], pixels], axis=1)
    Path(path).write_bytes(rec.tobytes())


def _cifar_split_raw(root: Path, split: str):
    files = CIFAR_TRAIN_FILES if split == "train" else CIFAR_TEST_FILES
    parts = [read_cifar10_file(root / f) for f in files]
    return np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts])


def _split_name(split):
    if split not in ("train", "test"):
        raise InputError(f"split must be 'train' or 'test', got {split!r}")
    return split


def load_cifar10(root, split="test", standardize_data=True, stats: dict | None = None) -> Dataset:
    """Load a CIFAR-10 binary split, scaled to [0, 1].

    With ``standardize_data`` the per-channel mean/std come from ``stats`` or,
    if absent, from the training split (computed once per directory and
    cached in-process).
    """
    root = Path(root)
    split = _split_name(split)
    pixels, labels = _cifar_split_raw(root, split)
    images = pixels.astype(FLOAT) / FLOAT(255)
    if standardize_data and stats is None:
        key = ("cifar10", str(root.resolve()))
        if key not in _stats_cache:
            train = images if split == "train" else _cifar_split_raw(root, "train")[0].astype(FLOAT) / FLOAT(255)
            _stats_cache[key] = channel_stats(train)
        stats = _stats_cache[key]
    return _finish(images, labels, 10, split, "cifar10", stats if standardize_data else None)


def dataset_pixels(ds: Dataset) -> np.ndarray:
    """Recover uint8 pixels of an unstandardized dataset."""
    if ds.norm is not None:
        raise InputError("dataset is standardized; reload it with standardize_data=False")
    return np.rint(ds.images * 255).astype(np.uint8)


# -- MNIST IDX --------------------------------------------------------------

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801
MNIST_FILES = {
    "train": ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
    "test": ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
}


def _open_maybe_gz(path: Path) -> bytes:
    for candidate in (path, path.with_name(path.name + ".gz")):
        if candidate.exists():
            try:
                if candidate.suffix == ".gz":
                    with gzip.open(candidate, "rb") as fh:
                        return fh.read()
                return candidate.read_bytes()
            except OSError as exc:
                raise StorageError(f"cannot read {candidate}: {exc}") from None
    raise StorageError(f"missing IDX file {path}")


def read_idx(raw: bytes, expect_magic: int, what="idx") -> np.ndarray:
    if len(raw) < 4:
        raise FormatError(f"{what}: file too short for an IDX header")
    (magic,) = struct.unpack(">I", raw[:4])
    if magic != expect_magic:
        raise FormatError(f"{what}: bad IDX magic 0x{magic:08X}, expected 0x{expect_magic:08X}")
    ndim = magic & 0xFF
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise FormatError(f"{what}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    need = int(np.prod(dims, dtype=np.int64))
    if len(raw) - header != need:
        raise FormatError(f"{what}: expected {need} data bytes after header, found {len(raw) - header}")
    return np.frombuffer(raw, dtype=np.uint8, offset=header).reshape(dims)


def write_idx(path, array: np.ndarray) -> None:
    array = np.asarray(array, dtype=np.uint8)
    magic = 0x00000800 | array.ndim
    Path(path).write_bytes(struct.pack(f">I{array.ndim}I", magic, *array.shape) + array.tobytes())


def load_mnist_idx(root, split="test", standardize_data=False, stats: dict | None = None) -> Dataset:
    root = Path(root)
    split = _split_name(split)
    img_name, lab_name = MNIST_FILES[split]
    images = read_idx(_open_maybe_gz(root / img_name), IDX_IMAGES, img_name)
    labels = read_idx(_open_maybe_gz(root / lab_name), IDX_LABELS, lab_name)
    if images.ndim != 3 or len(images) != len(labels):
        raise FormatError(f"MNIST images {images.shape} and labels {labels.shape} disagree")
    x = images[:, None].astype(FLOAT) / FLOAT(255)
    if standardize_data and stats is None:
        key = ("mnist", str(root.resolve()))
        if key not in _stats_cache:
            train = x if split == "train" else load_mnist_idx(root, "train").images
            _stats_cache[key] = channel_stats(train)
        stats = _stats_cache[key]
    return _finish(x, labels, 10, split, "mnist", stats if standardize_data else None)


# -- synthetic data ---------------------------------------------------------

def synth_blobs(classes, n_per_class, dim, seed=0, separation=10.0, split="train") -> Dataset:
    """Isotropic unit-variance Gaussian blobs, shape ``[N, dim, 1, 1]``.

    Centers are shared between splits (drawn from stream 0); samples come
    from stream 1 (train) or 2 (test). Centers are scaled so the expected
    distance between two of them is ``separation`` standard deviations.
    """
    if classes < 2:
        raise InputError("synth_blobs needs at least 2 classes")
    if n_per_class < 1 or dim < 1:
        raise InputError("n_per_class and dim must be positive")
    rng = Rng(seed)
    centers = rng.split(0).gen.standard_normal((classes, dim)) * (separation / np.sqrt(2 * dim))
    if classes == 2:
        # exact separation along one direction for the two-class case
        d = centers[1] - centers[0]
        d /= np.linalg.norm(d)
        centers = np.stack([-d, d]) * (separation / 2)
    gen = rng.split(1 if _split_name(split) == "train" else 2).gen
    labels = np.repeat(np.arange(classes), n_per_class)
    x = centers[labels] + gen.standard_normal((labels.size, dim))
    order = gen.permutation(labels.size)
    return Dataset(
        x[order].astype(FLOAT)[:, :, None, None], labels[order], classes, split, "synth",
        info={"classes": classes, "n_per_class": n_per_class, "dim": dim, "seed": seed, "separation": separation},
    )


def load_digits32(split="test", seed=0, stats: dict | None = None) -> Dataset:
    """scikit-learn's 8x8 handwritten digits, upsampled to 3x32x32.

    An offline stand-in with CIFAR-10's tensor shape. 80/20 train/test split
    by a seeded permutation; standardized with train-split statistics.
    """
    from sklearn.datasets import load_digits

    d = load_digits()
    x = (d.images / 16.0).astype(FLOAT)
    x = np.kron(x, np.ones((4, 4), dtype=FLOAT))[:, None].repeat(3, axis=1)
    order = Rng(seed).gen.permutation(len(x))
    cut = int(round(0.8 * len(x)))
    idx = order[:cut] if _split_name(split) == "train" else order[cut:]
    if stats is None:
        stats = channel_stats(x[order[:cut]])
    return _finish(x[idx], d.target[idx], 10, split, "digits", stats, {"seed": seed})


TEXTURE_SOURCES = ["astronaut", "coffee", "chelsea", "rocket", "hubble_deep_field",
                   "immunohistochemistry", "retina", "grass", "gravel", "brick"]


def _texture_source(name: str) -> np.ndarray:
    import skimage.data

    x = getattr(skimage.data, name)().astype(FLOAT) / 255.0
    if x.ndim == 2:
        x = np.repeat(x[..., None], 3, axis=-1)
    x = x[..., :3]
    f = max(1, min(x.shape[:2]) // 256)
    h, w = (x.shape[0] // f) * f, (x.shape[1] // f) * f
    x = x[:h, :w].reshape(h // f, f, w // f, f, 3).mean(axis=(1, 3))
    return x.transpose(2, 0, 1)


def _texture_crops(split, n_per_class, seed):
    rng = Rng(seed).split(0 if split == "train" else 1).gen
    images, labels = [], []
    for c, name in enumerate(TEXTURE_SOURCES):
        x = _texture_source(name)
        h, w = x.shape[1:]
        cut = int(h * 0.7)
        lo, hi = (0, cut - 32) if split == "train" else (cut, h - 32)
        ys = rng.integers(lo, hi + 1, n_per_class)
        xs = rng.integers(0, w - 32 + 1, n_per_class)
        images += [x[:, y:y + 32, x0:x0 + 32] for y, x0 in zip(ys, xs)]
        labels += [c] * n_per_class
    order = rng.permutation(len(labels))
    return np.stack(images).astype(FLOAT)[order], np.asarray(labels)[order]


def load_textures(split="test", seed=0, stats: dict | None = None, n_train=500, n_test=100) -> Dataset:
    """Ten-class natural-image crops from pictures bundled with scikit-image.

    32x32 RGB crops; class = source picture. Train crops come from the top
    70% of each picture and test crops from the bottom 30%, so the splits
    never share pixels. An offline stand-in with CIFAR-10's tensor shape.
    """
    split = _split_name(split)
    if stats is None:
        stats = channel_stats(_texture_crops("train", n_train, seed)[0])
    x, y = _texture_crops(split, n_train if split == "train" else n_test, seed)
    return _finish(x, y, 10, split, "textures", stats, {"seed": seed, "n_train": n_train, "n_test": n_test})


# -- augmentation -----------------------------------------------------------

def hflip(batch: np.ndarray, mask: np.ndarray) -> np.ndarray:
    out = batch.copy()
    out[mask] = out[mask][..., ::-1]
    return out


def pad_crop(batch: np.ndarray, offsets: np.ndarray, pad=4) -> np.ndarray:
    """Zero-pad by ``pad`` and take the window at per-sample ``(dy, dx)``."""
    n, c, h, w = batch.shape
    padded = np.pad(batch, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty_like(batch)
    for i, (dy, dx) in enumerate(offsets):
        out[i] = padded[i, :, dy:dy + h, dx:dx + w]
    return out


def augment_train(batch: np.ndarray, rng: Rng, enabled=True, pad=4, flip_p=0.5) -> np.ndarray:
    """Random horizontal flip and pad-and-crop, drawn per sample."""
    if not enabled:
        return batch
    n = len(batch)
    mask = rng.gen.random(n) < flip_p
    offsets = rng.gen.integers(0, 2 * pad + 1, size=(n, 2))
    return pad_crop(hflip(batch, mask), offsets, pad)


# -- dispatch ---------------------------------------------------------------

def load_dataset(name: str, split="test", data_dir=None, stats=None, **synth) -> Dataset:
    """Load by CLI name: cifar10, mnist, synth, digits or textures."""
    key = name.lower()
    if key in UNSUPPORTED:
        raise InputError(
            f"dataset {name!r} is out of scope: only cifar10, mnist, synth, digits and textures are supported"
        )
    if key in ("cifar10", "mnist"):
        if data_dir is None:
            data_dir = os.environ.get(f"SAFLAB_{key.upper()}_DIR")
        if data_dir is None:
            raise InputError(f"--data-dir is required for {key}")
        if key == "cifar10":
            return load_cifar10(data_dir, split, True, stats)
        return load_mnist_idx(data_dir, split, True, stats)
    if key == "synth":
        args = {"classes": 2, "n_per_class": 100, "dim": 8, "seed": 0}
        args.update({k: v for k, v in synth.items() if v is not None})
        return synth_blobs(split=split, **args)
    if key == "digits":
        return load_digits32(split, synth.get("seed") or 0, stats)
    if key == "textures":
        extra = {k: synth[k] for k in ("n_train", "n_test") if synth.get(k) is not None}
        return load_textures(split, synth.get("seed") or 0, stats, **extra)
    raise InputError(f"unknown dataset {name!r}")
