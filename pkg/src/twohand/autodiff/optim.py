"""Adam with a step learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class StepSchedule:
    """Multiply the base rate by ``1/drop_factor`` once ``drop_epoch`` epochs have completed."""

    base_lr: float = 1e-4
    drop_factor: float = 10.0
    drop_epoch: int = 4

    def lr_at(self, epoch: int) -> float:
        return self.base_lr / self.drop_factor if epoch >= self.drop_epoch else self.base_lr


class Adam:
    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self, grads=None):
        """Apply one update. ``grads`` defaults to each parameter's ``.grad``."""
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for k, p in self.params.items():
            g = p.grad if grads is None else grads.get(k)
            if g is None:
                continue
            m = self.m[k]
            v = self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
