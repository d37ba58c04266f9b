"""Small feed-forward / convolutional networks with explicit backprop.

Layers always hold RAW weights; the effective weight ``saf(W)`` is computed
on every forward pass. Gradients returned by :func:`backward` are with
respect to the raw weights, so they carry the ``saf'(W)`` factor. Biases are
never passed through the SAF.
"""
from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import codec
from .codec import BitBuffer, StoredDType
from .errors import DimensionError, FormatError, InputError
from .injector import FaultConfig, inject
from .numerics import FLOAT, Rng, Tensor
from .saf import NONE, SafKind


class Layer:
    kind = "layer"
    weights: Tensor | None = None
    bias: Tensor | None = None

    @property
    def has_weights(self) -> bool:
        return self.weights is not None

    def forward(self, x, apply_saf=True):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError

    def output_shape(self, shape):
        return shape

    def describe(self) -> dict:
        return {"kind": self.kind}


class WeightedLayer(Layer):
    def __init__(self, weights, bias, saf: SafKind = NONE):
        self.weights = weights
        self.bias = bias
        self.saf = SafKind.parse(saf)

    def effective(self, apply_saf=True):
        return self.saf.forward(self.weights) if apply_saf else self.weights

    def raw_grad(self, d_effective):
        return self.saf.backward(self.weights, d_effective)

    @property
    def fan_in(self) -> int:
        return int(np.prod(self.weights.shape[1:]))


class Dense(WeightedLayer):
    kind = "dense"

    @classmethod
    def init(cls, in_features, out_features, rng: Rng, saf=NONE):
        bound = math.sqrt(1.0 / in_features)
        w = rng.gen.uniform(-bound, bound, (out_features, in_features)).astype(FLOAT)
        b = rng.gen.uniform(-bound, bound, out_features).astype(FLOAT)
        return cls(w, b, saf)

    def forward(self, x, apply_saf=True):
        if x.ndim != 2 or x.shape[1] != self.weights.shape[1]:
            raise DimensionError(f"dense layer expects [batch, {self.weights.shape[1]}], got {x.shape}")
        w = self.effective(apply_saf)
        return x @ w.T + self.bias, x

    def backward(self, x, dy):
        dw_eff = dy.T @ x
        dx = dy @ self.effective()
        return dx, (self.raw_grad(dw_eff), dy.sum(axis=0))

    def output_shape(self, shape):
        if tuple(shape) != (self.weights.shape[1],):
            raise DimensionError(f"dense layer expects input ({self.weights.shape[1]},), got {tuple(shape)}")
        return (self.weights.shape[0],)

    def describe(self):
        return {
            "kind": self.kind,
            "in_features": int(self.weights.shape[1]),
            "out_features": int(self.weights.shape[0]),
            "saf": self.saf.name,
        }


class Conv2d(WeightedLayer):
    """3x3 convolution, zero padding 1, stride 1 or 2."""

    kind = "conv2d"

    def __init__(self, weights, bias, saf: SafKind = NONE, stride: int = 1):
        super().__init__(weights, bias, saf)
        if stride not in (1, 2):
            raise InputError(f"conv stride must be 1 or 2, got {stride}")
        if weights.ndim != 4 or weights.shape[2:] != (3, 3):
            raise DimensionError(f"conv weights must be [out, in, 3, 3], got {weights.shape}")
        self.stride = stride

    @classmethod
    def init(cls, in_channels, out_channels, rng: Rng, saf=NONE, stride=1):
        bound = math.sqrt(1.0 / (in_channels * 9))
        w = rng.gen.uniform(-bound, bound, (out_channels, in_channels, 3, 3)).astype(FLOAT)
        b = rng.gen.uniform(-bound, bound, out_channels).astype(FLOAT)
        return cls(w, b, saf, stride)

    def _out_hw(self, h, w):
        s = self.stride
        return (h - 1) // s + 1, (w - 1) // s + 1

    def forward(self, x, apply_saf=True):
        if x.ndim != 4 or x.shape[1] != self.weights.shape[1]:
            raise DimensionError(f"conv layer expects [batch, {self.weights.shape[1]}, H, W], got {x.shape}")
        n, c, h, w = x.shape
        s = self.stride
        ho, wo = self._out_hw(h, w)
        xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
        win = sliding_window_view(xp, (3, 3), axis=(2, 3))[:, :, ::s, ::s]
        cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * 9)
        wmat = self.effective(apply_saf).reshape(self.weights.shape[0], -1)
        out = cols @ wmat.T + self.bias
        y = np.ascontiguousarray(out.reshape(n, ho, wo, -1).transpose(0, 3, 1, 2))
        return y, (x.shape, cols)

    def backward(self, cache, dy):
        (n, c, h, w), cols = cache
        s = self.stride
        o = self.weights.shape[0]
        ho, wo = dy.shape[2:]
        dmat = dy.transpose(0, 2, 3, 1).reshape(-1, o)
        dw_eff = (dmat.T @ cols).reshape(self.weights.shape)
        db = dmat.sum(axis=0)
        dcols = (dmat @ self.effective().reshape(o, -1)).reshape(n, ho, wo, c, 3, 3)
        dxp = np.zeros((n, c, h + 2, w + 2), dtype=dy.dtype)
        for ki in range(3):
            for kj in range(3):
                dxp[:, :, ki:ki + s * (ho - 1) + 1:s, kj:kj + s * (wo - 1) + 1:s] += (
                    dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
                )
        return dxp[:, :, 1:-1, 1:-1], (self.raw_grad(dw_eff), db)

    def output_shape(self, shape):
        if len(shape) != 3 or shape[0] != self.weights.shape[1]:
            raise DimensionError(f"conv layer expects ({self.weights.shape[1]}, H, W), got {tuple(shape)}")
        return (self.weights.shape[0], *self._out_hw(shape[1], shape[2]))

    def describe(self):
        return {
            "kind": self.kind,
            "in_channels": int(self.weights.shape[1]),
            "out_channels": int(self.weights.shape[0]),
            "stride": self.stride,
            "saf": self.saf.name,
        }


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, apply_saf=True):
        return np.maximum(x, x.dtype.type(0)), x

    def backward(self, x, dy):
        return dy * (x > 0), None


class MaxPool2(Layer):
    kind = "maxpool2"

    def forward(self, x, apply_saf=True):
        n, c, h, w = x.shape
        if h % 2 or w % 2:
            raise DimensionError(f"2x2 max pooling needs even spatial size, got {h}x{w}")
        top = np.maximum(x[:, :, 0::2, 0::2], x[:, :, 0::2, 1::2])
        bottom = np.maximum(x[:, :, 1::2, 0::2], x[:, :, 1::2, 1::2])
        return np.maximum(top, bottom), x

    def backward(self, x, dy):
        # gradient goes to the first maximal element of each window
        n, c, h, w = x.shape
        win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
        idx = np.argmax(win, axis=-1)
        dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
        np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
        dx = dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return dx, None

    def output_shape(self, shape):
        if len(shape) != 3 or shape[1] % 2 or shape[2] % 2:
            raise DimensionError(f"2x2 max pooling needs (C, even H, even W), got {tuple(shape)}")
        return (shape[0], shape[1] // 2, shape[2] // 2)


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, apply_saf=True):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, shape, dy):
        return dy.reshape(shape), None

    def output_shape(self, shape):
        return (int(np.prod(shape)),)


@dataclass
class Model:
    layers: list
    class_count: int
    input_shape: tuple
    arch: str = "custom"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.input_shape = tuple(int(s) for s in self.input_shape)
        shape = self.input_shape
        for layer in self.layers:
            shape = layer.output_shape(shape)
        if shape != (self.class_count,):
            raise DimensionError(f"network output shape {shape} does not match {self.class_count} classes")

    @property
    def weighted(self) -> list:
        return [l for l in self.layers if l.has_weights]

    @property
    def saf(self) -> SafKind:
        """The SAF shared by most weighted layers (the model-level setting)."""
        kinds = [l.saf for l in self.weighted]
        return max(kinds, key=kinds.count) if kinds else NONE

    def saf_overrides(self) -> dict:
        base = self.saf
        return {i: l.saf.name for i, l in enumerate(self.weighted) if l.saf != base}

    def set_saf(self, kind, overrides: dict | None = None) -> "Model":
        """Set the SAF on every weighted layer; ``overrides`` maps weighted-layer
        index to a kind for that layer only."""
        kind = SafKind.parse(kind)
        overrides = {int(k): SafKind.parse(v) for k, v in (overrides or {}).items()}
        for i, layer in enumerate(self.weighted):
            layer.saf = overrides.get(i, kind)
        return self

    def param_count(self) -> int:
        return sum(l.weights.size + l.bias.size for l in self.weighted)

    def weight_count(self) -> int:
        return sum(l.weights.size for l in self.weighted)

    def copy(self) -> "Model":
        return copy.deepcopy(self)

    def astype(self, dtype) -> "Model":
        m = self.copy()
        for layer in m.weighted:
            layer.weights = layer.weights.astype(dtype)
            layer.bias = layer.bias.astype(dtype)
        return m

    def describe(self) -> dict:
        return {
            "arch": self.arch,
            "input_shape": list(self.input_shape),
            "class_count": self.class_count,
            "saf": self.saf.name,
            "saf_overrides": {str(k): v for k, v in self.saf_overrides().items()},
            "layers": [l.describe() for l in self.layers],
        }


# -- construction -----------------------------------------------------------

def build_model(desc: dict, rng: Rng | None = None) -> Model:
    """Build a model from an architecture descriptor (see :meth:`Model.describe`).

    Weighted layers are randomly initialised from ``rng`` (fan-in-scaled
    uniform); callers loading a checkpoint overwrite them afterwards.
    """
    rng = rng or Rng(0)
    layers: list[Layer] = []
    try:
        for i, spec in enumerate(desc["layers"]):
            kind = spec["kind"]
            saf = spec.get("saf", "none")
            if kind == "dense":
                layers.append(Dense.init(spec["in_features"], spec["out_features"], rng.split(i), saf))
            elif kind == "conv2d":
                layers.append(
                    Conv2d.init(spec["in_channels"], spec["out_channels"], rng.split(i), saf, spec.get("stride", 1))
                )
            elif kind == "relu":
                layers.append(ReLU())
            elif kind == "maxpool2":
                layers.append(MaxPool2())
            elif kind == "flatten":
                layers.append(Flatten())
            else:
                raise FormatError(f"unknown layer kind {kind!r}")
        model = Model(layers, int(desc["class_count"]), tuple(desc["input_shape"]), desc.get("arch", "custom"))
    except KeyError as exc:
        raise FormatError(f"architecture descriptor missing field {exc}") from None
    if "saf" in desc:
        model.set_saf(desc["saf"], desc.get("saf_overrides"))
    return model


def cnn_s(classes=10, in_channels=3, image_size=32, saf=NONE, seed=0) -> Model:
    """conv16 - relu - pool - conv32 - relu - pool - flatten - dense128 - relu - dense."""
    side = image_size // 4
    desc = {
        "arch": "cnn-s",
        "input_shape": [in_channels, image_size, image_size],
        "class_count": classes,
        "layers": [
            {"kind": "conv2d", "in_channels": in_channels, "out_channels": 16},
            {"kind": "relu"},
            {"kind": "maxpool2"},
            {"kind": "conv2d", "in_channels": 16, "out_channels": 32},
            {"kind": "relu"},
            {"kind": "maxpool2"},
            {"kind": "flatten"},
            {"kind": "dense", "in_features": 32 * side * side, "out_features": 128},
            {"kind": "relu"},
            {"kind": "dense", "in_features": 128, "out_features": classes},
        ],
    }
    return build_model(desc, Rng(seed)).set_saf(saf)


def mlp(in_features, hidden=32, classes=2, saf=NONE, seed=0, input_shape: Sequence[int] | None = None) -> Model:
    """flatten - dense(hidden) - relu - dense(classes)."""
    desc = {
        "arch": "mlp",
        "input_shape": list(input_shape or (in_features,)),
        "class_count": classes,
        "layers": [
            {"kind": "flatten"},
            {"kind": "dense", "in_features": in_features, "out_features": hidden},
            {"kind": "relu"},
            {"kind": "dense", "in_features": hidden, "out_features": classes},
        ],
    }
    return build_model(desc, Rng(seed)).set_saf(saf)


# -- passes -----------------------------------------------------------------

def _check_input(model: Model, x):
    x = np.asarray(x)
    if x.dtype.kind != "f":
        x = x.astype(FLOAT)
    if tuple(x.shape[1:]) != model.input_shape:
        raise DimensionError(f"model expects inputs of shape (batch, {model.input_shape}), got {x.shape}")
    return x


def forward(model: Model, x: Tensor, apply_saf: bool = True) -> Tensor:
    """Logits ``[batch, class_count]``. ``apply_saf=False`` is the plain
    affine network (raw weights used directly)."""
    a = _check_input(model, x)
    with np.errstate(over="ignore", invalid="ignore"):
        for layer in model.layers:
            a, _ = layer.forward(a, apply_saf)
    return a


def softmax_cross_entropy(logits: Tensor, labels) -> tuple[float, Tensor]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    labels = np.asarray(labels)
    b, k = logits.shape
    if labels.shape != (b,):
        raise InputError(f"expected {b} labels, got shape {labels.shape}")
    if labels.dtype.kind not in "iu":
        if not np.all(np.mod(labels, 1) == 0):
            raise InputError("labels must be integer class indices")
        labels = labels.astype(np.int64)
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise InputError(f"labels must lie in [0, {k}), got range [{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(b)
    loss = float(np.mean(lse - z[rows, labels]))
    p = np.exp(z - lse[:, None])
    p[rows, labels] -= 1
    return loss, p / logits.dtype.type(b)


def backward(model: Model, x: Tensor, labels) -> tuple[float, list]:
    """Loss and per-weighted-layer ``(d_raw_weights, d_bias)`` gradients,
    listed in ``model.weighted`` order."""
    a = _check_input(model, x)
    caches = []
    for layer in model.layers:
        a, cache = layer.forward(a)
        caches.append(cache)
    loss, d = softmax_cross_entropy(a, labels)
    grads = []
    for layer, cache in zip(reversed(model.layers), reversed(caches)):
        d, g = layer.backward(cache, d)
        if g is not None:
            grads.append(g)
    grads.reverse()
    return loss, grads


# -- deployment read path ---------------------------------------------------

def flat_weights(model: Model) -> Tensor:
    """Raw weights of all weighted layers, concatenated in layer order."""
    return np.concatenate([l.weights.reshape(-1) for l in model.weighted]).astype(FLOAT)


def encode_weights(model: Model, dtype: StoredDType) -> BitBuffer:
    return codec.encode(flat_weights(model), dtype)


def with_flat_weights(model: Model, flat: Tensor) -> Model:
    """Copy of ``model`` whose raw weights are replaced from a flat buffer."""
    if flat.size != model.weight_count():
        raise DimensionError(f"expected {model.weight_count()} weights, got {flat.size}")
    out = model.copy()
    off = 0
    for layer in out.weighted:
        n = layer.weights.size
        layer.weights = np.array(flat[off:off + n], dtype=FLOAT).reshape(layer.weights.shape)
        off += n
    return out


def read_deployed_with_flips(model: Model, dtype, cfg: FaultConfig, stored: BitBuffer | None = None):
    """Store raw weights as ``dtype``, flip bits, read them back.

    ``stored`` may pass a pre-encoded clean buffer to skip re-encoding.
    Returns the faulty model and the number of flipped bits.
    """
    dtype = StoredDType.parse(dtype)
    if stored is None:
        stored = encode_weights(model, dtype)
    faulty, flips = inject(stored, cfg)
    return with_flat_weights(model, codec.decode(faulty)), flips


def read_deployed(model: Model, dtype, cfg: FaultConfig) -> Model:
    """New model whose raw weights went through encode, inject and decode.
    Its forward pass applies the SAF to the faulty weights."""
    return read_deployed_with_flips(model, dtype, cfg)[0]
