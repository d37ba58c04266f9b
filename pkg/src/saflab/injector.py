"""Independent Bernoulli bit-flips over a stored weight buffer.

A round's flip pattern is sampled as ``k ~ Binomial(n, ber)`` followed by
``k`` distinct uniform positions, which has the same distribution as ``n``
independent Bernoulli(ber) trials but costs O(k).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .codec import BitBuffer
from .errors import InputError
from .numerics import Rng


@dataclass(frozen=True)
class FaultConfig:
    ber: float
    seed: int = 0
    round: int = 0

    def __post_init__(self):
        if not (0.0 <= self.ber <= 1.0) or math.isnan(self.ber):
            raise InputError(f"BER must lie in [0, 1], got {self.ber}")
        if self.round < 0:
            raise InputError(f"round index must be non-negative, got {self.round}")

    def rng(self) -> Rng:
        return Rng(self.seed).split(self.round)


def flip_positions(bit_count: int, cfg: FaultConfig) -> np.ndarray:
    """Sorted unique global bit indices flipped in this round."""
    if bit_count < 0:
        raise InputError("bit_count must be non-negative")
    if bit_count == 0 or cfg.ber == 0.0:
        return np.empty(0, dtype=np.int64)
    if cfg.ber == 1.0:
        return np.arange(bit_count, dtype=np.int64)
    gen = cfg.rng().gen
    k = int(gen.binomial(bit_count, cfg.ber))
    pos = gen.choice(bit_count, size=k, replace=False, shuffle=False)
    return np.sort(pos.astype(np.int64))


def flip_bits(b: BitBuffer, positions: np.ndarray) -> BitBuffer:
    """XOR the given global bit indices into a copy of ``b``."""
    data = b.as_uint8().copy()
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size:
        if positions.min() < 0 or positions.max() >= b.bit_count:
            raise InputError("flip position outside buffer")
        if positions.size * 64 > b.bit_count:
            bits = np.zeros(b.bit_count, dtype=bool)
            bits[positions] = True
            data ^= np.packbits(bits, bitorder="little")
        else:
            masks = np.left_shift(np.uint8(1), (positions & 7).astype(np.uint8))
            np.bitwise_xor.at(data, positions >> 3, masks)
    return BitBuffer(b.dtype, data.tobytes(), b.count)


def inject(b: BitBuffer, cfg: FaultConfig) -> tuple[BitBuffer, int]:
    """Faulty copy of ``b`` and the exact number of flipped bits."""
    pos = flip_positions(b.bit_count, cfg)
    return flip_bits(b, pos), int(pos.size)


def naive_flip_mask(bit_count: int, ber: float, rng: Rng) -> np.ndarray:
    """Reference sampler: one Bernoulli trial per bit (O(n))."""
    return rng.gen.random(bit_count) < ber
