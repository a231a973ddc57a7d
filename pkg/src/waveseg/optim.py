"""Adam optimizer and the cosine learning-rate schedule."""

from __future__ import annotations

import math
from typing import Iterable, List, Tuple

import numpy as np

from .autodiff import Parameter
from .errors import ConfigError


def cosine_lr(base_lr: float, epoch: int, total_epochs: int) -> float:
    """Half-cosine decay from base_lr at epoch 0 toward 0 at total_epochs."""
    if total_epochs < 1:
        raise ConfigError(f"total_epochs must be >= 1, got {total_epochs}")
    return base_lr * (1.0 + math.cos(math.pi * epoch / total_epochs)) / 2.0


class Adam:
    """Adam with bias correction. State arrays are float32, matching the
    parameters, so checkpoint round trips stay bit-exact."""

    def __init__(self, params: Iterable[Parameter], lr: float = 0.002,
                 betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params: List[Parameter] = [p for p in params if p.trainable]
        if not self.params:
            raise ConfigError("optimizer got no trainable parameters")
        if lr <= 0 or eps <= 0 or not (0 <= betas[0] < 1 and 0 <= betas[1] < 1):
            raise ConfigError(f"bad Adam hyperparameters lr={lr} betas={betas} eps={eps}")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def set_lr(self, lr: float) -> None:
        self.lr = lr

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        b1, b2 = self.betas
        self.t += 1
        bc1 = 1.0 - b1 ** self.t
        bc2 = 1.0 - b2 ** self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            p.data -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.data.dtype)
