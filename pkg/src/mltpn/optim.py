"""Momentum SGD and Adam, both with weight decay as an L2 gradient term."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import Parameter


class MissingGradError(RuntimeError):
    pass


class _Optimizer:
    def __init__(self, params: Sequence[Parameter], lr: float, weight_decay: float = 0.0):
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.weight_decay = weight_decay

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def _grad(self, p: Parameter) -> np.ndarray:
        if p.grad is None:
            raise MissingGradError(f"parameter {p.name or '<unnamed>'} has no gradient")
        if self.weight_decay:
            return p.grad + self.weight_decay * p.data
        return p.grad


class SGD(_Optimizer):
    """v <- momentum * v + g;  w <- w - lr * v."""

    def __init__(self, params, lr: float = 0.001, momentum: float = 0.9, weight_decay: float = 0.0001):
        super().__init__(params, lr, weight_decay)
        self.momentum = momentum
        self._velocity = [np.zeros_like(p.data) for p in self.params]

    def step(self) -> None:
        grads = [self._grad(p) for p in self.params]
        for p, v, g in zip(self.params, self._velocity, grads):
            v *= self.momentum
            v += g
            p.data = p.data - self.lr * v


class Adam(_Optimizer):
    def __init__(self, params, lr: float = 0.0001, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        super().__init__(params, lr, weight_decay)
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self._m = [np.zeros_like(p.data) for p in self.params]
        self._v = [np.zeros_like(p.data) for p in self.params]
        self._t = 0

    def step(self) -> None:
        grads = [self._grad(p) for p in self.params]
        self._t += 1
        c1 = 1.0 - self.beta1 ** self._t
        c2 = 1.0 - self.beta2 ** self._t
        for p, m, v, g in zip(self.params, self._m, self._v, grads):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

