"""Bit-exact storage encodings for raw weights: FP32, FP16 and Q2.5.

Elements are packed little-endian, so global bit ``i`` of a buffer is bit
``i % 8`` (LSB first) of byte ``i // 8``; for FP32 element ``e`` that is bit
``i - 32*e`` of the IEEE word.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import FormatError
from .numerics import FLOAT, Tensor

Q25_SCALE = 32  # 2**5 fraction bits
Q25_MIN, Q25_MAX = -128, 127


class StoredDType(enum.Enum):
    FP32 = ("fp32", 32, 0)
    FP16 = ("fp16", 16, 1)
    Q25 = ("q25", 8, 2)

    def __init__(self, label, bits, tag):
        self.label = label
        self.bits = bits
        self.tag = tag

    @property
    def nbytes(self) -> int:
        return self.bits // 8

    @classmethod
    def parse(cls, text) -> "StoredDType":
        if isinstance(text, StoredDType):
            return text
        s = str(text).strip().lower().replace(".", "")
        for d in cls:
            if s == d.label:
                return d
        raise FormatError(f"unknown stored dtype {text!r} (expected fp32, fp16 or q25)")

    @classmethod
    def from_tag(cls, tag: int) -> "StoredDType":
        for d in cls:
            if d.tag == tag:
                return d
        raise FormatError(f"unknown dtype tag byte {tag}")

    def __str__(self):
        return self.label


def bits_per_weight(dtype: StoredDType) -> int:
    return dtype.bits


@dataclass(frozen=True)
class BitBuffer:
    dtype: StoredDType
    words: bytes
    count: int

    def __post_init__(self):
        if len(self.words) != self.count * self.dtype.nbytes:
            raise FormatError(
                f"{self.dtype} buffer of {self.count} weights needs "
                f"{self.count * self.dtype.nbytes} bytes, got {len(self.words)}"
            )

    @property
    def bit_count(self) -> int:
        return self.count * self.dtype.bits

    def as_uint8(self) -> np.ndarray:
        return np.frombuffer(self.words, dtype=np.uint8)


# -- FP16 -------------------------------------------------------------------

def _shift_right_rne(m: np.ndarray, shift: np.ndarray) -> np.ndarray:
    """``m >> shift`` rounded to nearest, ties to even (uint64, shift >= 1)."""
    shift = np.minimum(shift, 63).astype(np.uint64)
    one = np.uint64(1)
    q = m >> shift
    rem = m & ((one << shift) - one)
    half = one << (shift - one)
    up = (rem > half) | ((rem == half) & ((q & one) == one))
    return q + up.astype(np.uint64)


def float32_to_half_bits(x) -> np.ndarray:
    """IEEE binary16 bit patterns of FP32 values (RNE, overflow to Inf)."""
    f = np.ascontiguousarray(x, dtype=np.float32).view(np.uint32).astype(np.uint64)
    sign = (f >> np.uint64(16)) & np.uint64(0x8000)
    exp = ((f >> np.uint64(23)) & np.uint64(0xFF)).astype(np.int64)
    mant = f & np.uint64(0x7FFFFF)
    out = np.zeros(f.shape, dtype=np.uint64)

    special = exp == 0xFF
    nan = special & (mant != 0)
    out[special] = 0x7C00
    out[nan] |= np.uint64(0x200) | (mant[nan] >> np.uint64(13))

    e = exp - 127
    finite = ~special
    normal = finite & (e >= -14)
    if normal.any():
        m = mant[normal]
        base = (e[normal] + 15).astype(np.uint64) << np.uint64(10)
        # rounding carry may ripple into the exponent, up to 0x7C00 (= Inf)
        h = base + _shift_right_rne(m, np.full(m.shape, 13))
        out[normal] = np.minimum(h, np.uint64(0x7C00))
    sub = finite & (e < -14)
    if sub.any():
        m = mant[sub] | np.where(exp[sub] != 0, np.uint64(0x800000), np.uint64(0))
        shift = -e[sub] - 1
        h = _shift_right_rne(m, shift)
        out[sub] = np.where(shift > 25, np.uint64(0), h)
    return (out | sign).astype(np.uint16)


def half_bits_to_float32(h) -> np.ndarray:
    """Exact FP32 values of binary16 bit patterns."""
    h = np.asarray(h, dtype=np.uint16).astype(np.uint32)
    sign = (h & 0x8000) << 16
    e5 = (h >> 10) & 0x1F
    m = h & 0x3FF
    bits = sign | ((e5 + 112) << 23) | (m << 13)
    bits = np.where(e5 == 0x1F, sign | 0x7F800000 | (m << 13), bits)
    out = bits.astype(np.uint32).view(np.float32)
    sub = e5 == 0
    if sub.any():
        mag = m[sub].astype(np.float32) * np.float32(2.0**-24)
        out = out.copy()
        out[sub] = np.where(sign[sub] != 0, -mag, mag)
    return out


# -- Q2.5 -------------------------------------------------------------------

def float32_to_q25(x) -> np.ndarray:
    """Two's-complement Q2.5 codes: round(x*32) saturated to [-128, 127].

    NaN encodes as 0.
    """
    x = np.asarray(x, dtype=np.float64)
    q = np.rint(np.nan_to_num(x, nan=0.0, posinf=1e9, neginf=-1e9) * Q25_SCALE)
    return np.clip(q, Q25_MIN, Q25_MAX).astype(np.int8)


def q25_to_float32(q) -> np.ndarray:
    return np.asarray(q, dtype=np.int8).astype(FLOAT) / FLOAT(Q25_SCALE)


# -- public API -------------------------------------------------------------

def encode(w: Tensor, dtype: StoredDType) -> BitBuffer:
    """Store raw (pre-SAF) weights in the given representation."""
    dtype = StoredDType.parse(dtype)
    flat = np.asarray(w, dtype=FLOAT).reshape(-1)
    if dtype is StoredDType.FP32:
        raw = flat.astype("<f4").tobytes()
    elif dtype is StoredDType.FP16:
        raw = float32_to_half_bits(flat).astype("<u2").tobytes()
    else:
        raw = float32_to_q25(flat).tobytes()
    return BitBuffer(dtype, raw, flat.size)


def decode(b: BitBuffer) -> Tensor:
    """Flat FP32 tensor of the stored values."""
    if b.dtype is StoredDType.FP32:
        return np.frombuffer(b.words, dtype="<f4").astype(FLOAT)
    if b.dtype is StoredDType.FP16:
        return half_bits_to_float32(np.frombuffer(b.words, dtype="<u2"))
    return q25_to_float32(np.frombuffer(b.words, dtype=np.int8))


def quantize(w: Tensor, dtype: StoredDType) -> Tensor:
    """``decode(encode(w))`` reshaped like ``w``."""
    w = np.asarray(w, dtype=FLOAT)
    return decode(encode(w, dtype)).reshape(w.shape)
