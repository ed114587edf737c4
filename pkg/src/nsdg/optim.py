"""Adam optimizer over named parameter tensors."""
from __future__ import annotations

import numpy as np

from .tensor import TapeError, Tensor


class Adam:
    """Standard Adam with bias correction; zeroes gradients after each step.

    The nets here are tiny, so moments are kept as plain float64 arrays
    keyed by parameter name.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 clip_norm: float = 0.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.clip_norm = clip_norm  # 0 disables global-norm clipping
        self.step_count = 0
        self.m = {k: np.zeros_like(p.data) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in self.params.items()}

    def step(self):
        missing = [k for k, p in self.params.items() if p.grad is None]
        if missing:
            raise TapeError("adam_step: missing gradient for %s" % ", ".join(sorted(missing)))
        if self.clip_norm > 0:
            total = np.sqrt(sum(float((p.grad ** 2).sum())
                                for p in self.params.values()))
            if total > self.clip_norm:
                scale = self.clip_norm / total
                for p in self.params.values():
                    p.grad = p.grad * scale
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1 - self.beta2) * g * g
            mhat = self.m[k] / bc1
            vhat = self.v[k] / bc2
            p.data = p.data - self.lr * mhat / (np.sqrt(vhat) + self.eps)
            p.grad = None

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None
