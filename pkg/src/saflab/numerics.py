"""Dense FP32 tensors and a deterministic, splittable random generator.

Tensors are plain ``numpy.ndarray`` objects (C-contiguous, row-major). The
generator is Philox4x64-10 (Salmon et al., "Parallel random numbers: as easy
as 1, 2, 3", SC'11), a counter-based generator with published round
constants. Keys are derived from ``(seed, path)`` through numpy's
``SeedSequence`` hash, so a child stream depends only on its seed and its
split path, never on how much of the parent has been consumed.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import DimensionError

Tensor = np.ndarray
FLOAT = np.float32


def tensor(data, shape: Sequence[int] | None = None) -> Tensor:
    """Build an FP32 tensor from nested data or a flat buffer plus shape."""
    arr = np.ascontiguousarray(np.asarray(data, dtype=FLOAT))
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if arr.size != int(np.prod(shape, dtype=np.int64)):
            raise DimensionError(f"buffer of {arr.size} values cannot have shape {shape}")
        arr = arr.reshape(shape)
    return arr


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product ``a @ b`` of 2-D tensors with FP32 accumulation."""
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"inner dimensions disagree: {a.shape} x {b.shape}")
    return np.matmul(a.astype(FLOAT, copy=False), b.astype(FLOAT, copy=False))


class Rng:
    """Seeded Philox stream addressed by ``(seed, path)``.

    >>> Rng(7).split(3).uniform(2).tolist() == Rng(7, (3,)).uniform(2).tolist()
    True
    """

    def __init__(self, seed: int, path: Sequence[int] = ()):
        self.seed = int(seed) & 0xFFFF_FFFF_FFFF_FFFF
        self.path = tuple(int(p) for p in path)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
        self.gen = np.random.Generator(np.random.Philox(ss))

    def split(self, index: int) -> "Rng":
        """Independent child stream; a pure function of (seed, path, index)."""
        if index < 0:
            raise ValueError("split index must be non-negative")
        return Rng(self.seed, self.path + (int(index),))

    def uniform(self, n: int) -> Tensor:
        return rng_uniform(self, n)

    def __repr__(self):
        return f"Rng(seed={self.seed}, path={self.path})"


def rng_uniform(rng: Rng, n: int) -> Tensor:
    """``n`` FP32 draws in [0, 1); advances ``rng``."""
    if n < 0:
        raise ValueError("n must be non-negative")
    return rng.gen.random(int(n), dtype=FLOAT)
