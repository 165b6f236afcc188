"""Adam with bias correction, operating on raw parameter buffers."""

from __future__ import annotations

import math

import numpy as np

from .module import Parameter


class AdamState:
    """First/second moment estimates plus the step counter for one run."""

    __slots__ = ("step", "m", "v")

    def __init__(self, params: list[Parameter]):
        self.step = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]


class Adam:
    def __init__(
        self,
        params: list[Parameter],
        lr: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state = AdamState(self.params)

    def step(self) -> None:
        """Apply one update; parameters with no gradient are left unchanged."""
        self.state.step += 1
        t = self.state.step
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        step_scale = self.lr * math.sqrt(bc2) / bc1
        for i, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            m = self.state.m[i]
            v = self.state.v[i]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= step_scale * m / (np.sqrt(v) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None
