"""Saturated activation functions applied to weights.

Every kind except ``none`` is odd, monotone and bounded. Forward passes are
total: +/-Inf saturate to the bound and NaN stays NaN.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, InputError
from .numerics import FLOAT, Tensor


class Variant(enum.Enum):
    NONE = "none"
    TANH = "tanh"
    TANHC = "tanhc"
    SOFTSIGN = "softsign"
    ARCTAN = "arctan"


@dataclass(frozen=True)
class SafKind:
    variant: Variant = Variant.NONE
    c: float = 0.5

    def __post_init__(self):
        if self.variant is Variant.TANHC and not self.c > 0:
            raise InputError(f"TanhC scale must be positive, got {self.c}")

    @classmethod
    def parse(cls, text: "str | SafKind | None") -> "SafKind":
        """Parse ``none | tanh | tanh0.5 | softsign | arctan | tanhC:<c>``."""
        if isinstance(text, SafKind):
            return text
        if text is None:
            return NONE
        s = str(text).strip().lower()
        if s in ("none", ""):
            return NONE
        if s == "tanh":
            return TANH
        if s == "softsign":
            return SOFTSIGN
        if s == "arctan":
            return ARCTAN
        for prefix in ("tanhc:", "tanh"):
            if s.startswith(prefix):
                try:
                    c = float(s[len(prefix):])
                except ValueError:
                    break
                if not math.isfinite(c):
                    break
                return cls(Variant.TANHC, c)
        raise InputError(f"unknown SAF kind {text!r}")

    @property
    def name(self) -> str:
        if self.variant is Variant.TANHC:
            return f"tanh{self.c:g}"
        return self.variant.value

    @property
    def bound(self) -> float:
        """Supremum of |tau(x)|; ``inf`` for the identity."""
        if self.variant is Variant.NONE:
            return math.inf
        if self.variant is Variant.ARCTAN:
            return math.pi / 2
        return 1.0

    def __str__(self):
        return self.name

    def forward(self, w: Tensor) -> Tensor:
        return saf_forward(self, w)

    def backward(self, w: Tensor, upstream: Tensor) -> Tensor:
        return saf_backward(self, w, upstream)


NONE = SafKind(Variant.NONE)
TANH = SafKind(Variant.TANH)
TANH05 = SafKind(Variant.TANHC, 0.5)
SOFTSIGN = SafKind(Variant.SOFTSIGN)
ARCTAN = SafKind(Variant.ARCTAN)
ALL_KINDS = (NONE, TANH, TANH05, SOFTSIGN, ARCTAN)


def saf_forward(kind: SafKind, w: Tensor) -> Tensor:
    with np.errstate(over="ignore", invalid="ignore"):
        return _forward(kind, w)


def _forward(kind: SafKind, w: Tensor) -> Tensor:
    w = np.asarray(w)
    dt = w.dtype if w.dtype.kind == "f" else FLOAT
    w = w.astype(dt, copy=False)
    v = kind.variant
    if v is Variant.NONE:
        return w
    if v is Variant.TANH:
        return np.tanh(w)
    if v is Variant.TANHC:
        return np.tanh(dt.type(kind.c) * w)
    if v is Variant.ARCTAN:
        return np.arctan(w)
    # softsign: inf/(1+inf) would be NaN, so saturate explicitly
    out = w / (dt.type(1) + np.abs(w))
    inf = np.isinf(w)
    if inf.any():
        out = np.where(inf, np.sign(w), out).astype(dt, copy=False)
    return out


def saf_derivative(kind: SafKind, w: Tensor) -> Tensor:
    w = np.asarray(w)
    dt = w.dtype if w.dtype.kind == "f" else FLOAT
    w = w.astype(dt, copy=False)
    one = dt.type(1)
    v = kind.variant
    if v is Variant.NONE:
        return np.ones_like(w)
    if v is Variant.TANH:
        t = np.tanh(w)
        return one - t * t
    if v is Variant.TANHC:
        c = dt.type(kind.c)
        t = np.tanh(c * w)
        return c * (one - t * t)
    if v is Variant.SOFTSIGN:
        d = one + np.abs(w)
        return one / (d * d)
    return one / (one + w * w)


def saf_backward(kind: SafKind, w: Tensor, upstream: Tensor) -> Tensor:
    """``upstream * tau'(w)`` elementwise."""
    w = np.asarray(w)
    upstream = np.asarray(upstream)
    if w.shape != upstream.shape:
        raise DimensionError(f"shape mismatch: weights {w.shape} vs upstream {upstream.shape}")
    if kind.variant is Variant.NONE:
        return upstream
    return upstream * saf_derivative(kind, w)
