"""SGD with momentum, AdamW, the cosine schedule and the training loop."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DimensionError, InputError
from .network import Model, backward
from .numerics import Rng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    optimizer: str = "sgd_momentum"
    lr0: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 1e-3
    epochs: int = 200
    batch_size: int = 128
    schedule: str = "cosine"
    seed: int = 0
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    augment: bool = True

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        if self.optimizer not in ("sgd_momentum", "adamw"):
            raise InputError(f"unknown optimizer {self.optimizer!r}")
        if self.schedule not in ("cosine", "constant"):
            raise InputError(f"unknown schedule {self.schedule!r}")
        if not self.lr0 > 0:
            raise InputError("lr0 must be positive")
        if not 0 <= self.momentum < 1:
            raise InputError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise InputError("weight_decay must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise InputError("epochs and batch_size must be positive")

    @classmethod
    def finetune_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(optimizer="adamw", lr0=1e-5, weight_decay=1e-3, epochs=5, batch_size=128)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _check_shapes(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise DimensionError(f"optimizer state shape mismatch: {shape} vs {a.shape}")


def sgd_momentum_step(params, grads, velocity, lr, momentum, weight_decay):
    """In-place update; weight decay is coupled (added to the gradient).

    v <- momentum * v + (g + weight_decay * p);  p <- p - lr * v
    """
    _check_shapes(params, grads, velocity)
    dt = params.dtype.type
    velocity *= dt(momentum)
    velocity += grads
    if weight_decay:
        velocity += dt(weight_decay) * params
    params -= dt(lr) * velocity
    return params, velocity


def adamw_step(params, grads, m, v, t, lr, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
    """In-place AdamW update with decoupled weight decay (Loshchilov & Hutter)."""
    _check_shapes(params, grads, m, v)
    if t < 1:
        raise InputError("AdamW step counter t starts at 1")
    dt = params.dtype.type
    b1, b2 = betas
    if weight_decay:
        params *= dt(1.0 - lr * weight_decay)
    m *= dt(b1)
    m += dt(1.0 - b1) * grads
    v *= dt(b2)
    v += dt(1.0 - b2) * grads * grads
    m_hat = m / dt(1.0 - b1**t)
    v_hat = v / dt(1.0 - b2**t)
    params -= dt(lr) * m_hat / (np.sqrt(v_hat) + dt(eps))
    return params, m, v


def cosine_lr(lr0, epoch, total_epochs):
    if not 0 <= epoch <= total_epochs:
        raise InputError(f"epoch {epoch} outside [0, {total_epochs}]")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


class Optimizer:
    """Owns the per-parameter state for one model's weights and biases."""

    def __init__(self, model: Model, cfg: TrainConfig):
        self.cfg = cfg
        self.params = [p for layer in model.weighted for p in (layer.weights, layer.bias)]
        self.state = [(np.zeros_like(p), np.zeros_like(p)) for p in self.params]
        self.t = 0

    def step(self, grads, lr):
        flat = [g for pair in grads for g in pair]
        self.t += 1
        cfg = self.cfg
        for p, g, (s1, s2) in zip(self.params, flat, self.state):
            g = g.astype(p.dtype, copy=False)
            if cfg.optimizer == "sgd_momentum":
                sgd_momentum_step(p, g, s1, lr, cfg.momentum, cfg.weight_decay)
            else:
                adamw_step(p, g, s1, s2, self.t, lr, cfg.betas, cfg.eps, cfg.weight_decay)


@dataclass
class History:
    loss: list = field(default_factory=list)
    lr: list = field(default_factory=list)


def train(model: Model, data, cfg: TrainConfig, augment=None, progress=None) -> History:
    """Train ``model`` in place on a :class:`~saflab.data.Dataset`.

    The learning rate is set once per epoch. Shuffling and augmentation draw
    from ``Rng(cfg.seed)`` split by epoch, so runs are replayable.
    """
    from .data import augment_train

    if data.class_count != model.class_count:
        raise DimensionError(f"dataset has {data.class_count} classes, model {model.class_count}")
    use_aug = cfg.augment if augment is None else augment
    use_aug = use_aug and data.images.ndim == 4 and data.images.shape[2] > 1
    opt = Optimizer(model, cfg)
    hist = History()
    n = len(data)
    root = Rng(cfg.seed)
    for epoch in range(cfg.epochs):
        lr = cosine_lr(cfg.lr0, epoch, cfg.epochs) if cfg.schedule == "cosine" else cfg.lr0
        rng = root.split(epoch)
        order = rng.gen.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x = data.images[idx]
            if use_aug:
                x = augment_train(x, rng)
            y = data.labels[idx]
            loss, grads = backward(model, x, y)
            if not math.isfinite(loss):
                raise FloatingPointError(f"training diverged at epoch {epoch} (loss={loss})")
            opt.step(grads, lr)
            total += loss * len(idx)
            seen += len(idx)
        hist.loss.append(total / seen)
        hist.lr.append(lr)
        log.info("epoch %d/%d lr=%.5g loss=%.4f", epoch + 1, cfg.epochs, lr, total / seen)
        if progress:
            progress(epoch, hist)
    return hist


def finetune(model: Model, saf, data, cfg: TrainConfig | None = None, **kw) -> History:
    """Switch ``model`` to ``saf`` and adapt it with a short training run."""
    model.set_saf(saf)
    return train(model, data, cfg or TrainConfig.finetune_defaults(), **kw)
