"""Segmentation losses on logits: soft Dice, BCE, and their blend."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError


@dataclass(frozen=True)
class LossConfig:
    dice_weight: float = 0.5
    smooth: float = 1e-5

    def __post_init__(self):
        if not 0.0 <= self.dice_weight <= 1.0:
            raise ConfigError(f"dice_weight must be in [0, 1], got {self.dice_weight}")
        if self.smooth <= 0:
            raise ConfigError(f"smooth must be positive, got {self.smooth}")


def _as_target(target, like: ad.Tensor) -> np.ndarray:
    t = target.data if isinstance(target, ad.Tensor) else np.asarray(target)
    t = t.astype(like.dtype, copy=False)
    if t.shape != like.shape:
        raise ConfigError(f"target shape {t.shape} != logits shape {like.shape}")
    return t


def dice_loss(logits: ad.Tensor, target, smooth: float = 1e-5) -> ad.Tensor:
    """Soft Dice loss, one score per batch sample, averaged.

    1 - (2*sum(p*t) + s) / (sum(p) + sum(t) + s) with sums over everything
    but the batch axis.
    """
    t = ad.Tensor(_as_target(target, logits))
    p = ad.sigmoid(logits)
    axes = tuple(range(1, len(logits.shape)))
    inter = ad.tensor_sum(ad.mul(p, t), axis=axes)
    denom = ad.tensor_sum(p, axis=axes) + ad.tensor_sum(t, axis=axes)
    score = (ad.scale(inter, 2.0) + smooth) / (denom + smooth)
    return ad.tensor_mean(ad.scale(score, -1.0) + 1.0)


def bce_loss(logits: ad.Tensor, target) -> ad.Tensor:
    """Mean binary cross-entropy on logits (numerically stable fused form)."""
    return ad.bce_with_logits(logits, _as_target(target, logits))


def combined_loss(logits: ad.Tensor, target,
                  cfg: LossConfig = LossConfig()) -> ad.Tensor:
    """dice_weight * Dice + (1 - dice_weight) * BCE."""
    w = cfg.dice_weight
    parts = []
    if w > 0:
        parts.append(ad.scale(dice_loss(logits, target, cfg.smooth), w))
    if w < 1:
        parts.append(ad.scale(bce_loss(logits, target), 1.0 - w))
    total = parts[0]
    for p in parts[1:]:
        total = ad.add(total, p)
    return total
