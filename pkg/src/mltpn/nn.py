"""Parameter containers and the three layer types the network uses."""
from __future__ import annotations

from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Parameter, Tensor


def xavier_uniform(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Walks attributes in definition order to discover parameters."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        seen: set[int] = set()
        for name, p in self._walk(prefix):
            if id(p) not in seen:
                seen.add(id(p))
                yield name, p

    def _walk(self, prefix: str):
        for attr, value in vars(self).items():
            if attr.startswith("_"):
                continue
            if isinstance(value, Parameter):
                yield prefix + attr, value
            elif isinstance(value, Module):
                yield from value._walk(f"{prefix}{attr}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item._walk(f"{prefix}{attr}.{i}.")
                    elif isinstance(item, Parameter):
                        yield f"{prefix}{attr}.{i}", item

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def assign_names(self) -> None:
        for name, p in self.named_parameters():
            p.name = name

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing[:5]} unexpected={unexpected[:5]}")
        for name, p in own.items():
            arr = np.asarray(state[name], dtype=np.float64)
            if arr.shape != p.shape:
                raise T.ShapeError(f"parameter {name}: stored shape {arr.shape} vs model shape {p.shape}")
            p.data = arr.copy()

    def num_parameters(self) -> int:
        return int(sum(p.data.size for p in self.parameters()))


class Conv2d(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, kernel=(3, 1), stride=(1, 1), padding=(1, 0)):
        kH, kW = kernel
        self.weight = Parameter(xavier_uniform(rng, (out_ch, in_ch, kH, kW), in_ch * kH * kW, out_ch * kH * kW))
        self.bias = Parameter(np.zeros(out_ch))
        self._stride = tuple(stride)
        self._padding = tuple(padding)

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self._stride, self._padding)


class Conv1d(Module):
    def __init__(self, rng, in_ch: int, out_ch: int, kernel: int = 3, stride: int = 1, padding: int = 1):
        self.weight = Parameter(xavier_uniform(rng, (out_ch, in_ch, kernel), in_ch * kernel, out_ch * kernel))
        self.bias = Parameter(np.zeros(out_ch))
        self._stride = stride
        self._padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.weight, self.bias, self._stride, self._padding)


class Dense(Module):
    def __init__(self, rng, in_features: int, out_features: int):
        self.weight = Parameter(xavier_uniform(rng, (out_features, in_features), in_features, out_features))
        self.bias = Parameter(np.zeros(out_features))

    def __call__(self, x: Tensor) -> Tensor:
        return T.dense(x, self.weight, self.bias)
