"""Central finite-difference checks for the reverse-mode engine."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

STEP = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-10) -> float:
    """Norm-wise |a - n| / max(|a|, |n|)."""
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def numeric_grad(loss_fn: Callable[[], Tensor], target: Tensor, step: float = STEP,
                 coords: Sequence[tuple[int, ...]] | None = None) -> np.ndarray:
    """d loss / d target by central differences, on all or selected coords."""
    flat = target.data.reshape(-1)
    idx = range(flat.size) if coords is None else [np.ravel_multi_index(c, target.shape) for c in coords]
    out = []
    with T.no_grad():
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            hi = loss_fn().item()
            flat[i] = orig - step
            lo = loss_fn().item()
            flat[i] = orig
            out.append((hi - lo) / (2 * step))
    out = np.array(out)
    return out.reshape(target.shape) if coords is None else out


def analytic_grads(loss_fn: Callable[[], Tensor], targets: Sequence[Tensor]) -> list[np.ndarray]:
    for t in targets:
        t.grad = None
    loss_fn().backward()
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in targets]


def check_op(op: Callable[..., Tensor], inputs: Sequence[Tensor], rng: np.random.Generator,
             step: float = STEP) -> float:
    """Worst relative error over ``inputs`` for L = sum(op(*inputs) * R)."""
    probe = None

    def loss():
        nonlocal probe
        out = op(*inputs)
        if probe is None:
            probe = rng.uniform(-1, 1, size=out.shape)
        return T.sum(out * probe)

    loss()
    grads = analytic_grads(loss, inputs)
    return max(relative_error(g, numeric_grad(loss, t, step)) for g, t in zip(grads, inputs))


def _rand(rng: np.random.Generator, shape, away_from_zero: bool) -> Tensor:
    x = rng.uniform(-1, 1, size=shape)
    if away_from_zero:  # keep samples off kinks at 0
        x = np.where(np.abs(x) < 0.05, np.where(x < 0, -0.05, 0.05), x)
    return Tensor(x, requires_grad=True)


# name -> (op, input shapes, has a kink at 0)
OP_CASES = {
    "add": (lambda a, b: a + b, [(3, 4), (3, 4)], False),
    "sub": (lambda a, b: a - b, [(3, 4), (3, 4)], False),
    "mul": (lambda a, b: a * b, [(3, 4), (3, 4)], False),
    "div": (lambda a, b: a / (T.exp(b) + 1.0), [(3, 4), (3, 4)], False),
    "exp": (T.exp, [(2, 5)], False),
    "log": (lambda a: T.log(T.exp(a) + 1.0), [(2, 5)], False),
    "relu": (T.relu, [(4, 5)], True),
    "sigmoid": (T.sigmoid, [(4, 5)], False),
    "softmax": (lambda a: T.softmax(a, axis=1), [(3, 6)], False),
    "log_softmax": (lambda a: T.log_softmax(a, axis=0), [(3, 6)], False),
    "concat": (lambda a, b: T.concat([a, b], axis=1), [(2, 3, 2), (2, 1, 2)], False),
    "mean": (lambda a: T.mean(a, axes=(0, 2)), [(3, 4, 5)], False),
    "sum": (lambda a: T.sum(a, axes=1), [(3, 4)], False),
    "scale_scalar": (lambda a: T.scale(a, 2.5), [(3, 4)], False),
    "scale_channel": (lambda a, s: T.scale(a, s), [(2, 3, 4, 2), (2, 3)], False),
    "reshape": (lambda a: T.reshape(a, (6, 2)), [(3, 4)], False),
    "transpose": (lambda a: T.transpose(a, (2, 0, 1)), [(2, 3, 4)], False),
    "getitem": (lambda a: a[np.array([0, 2, 2]), 1], [(3, 4)], False),
    "maximum": (T.maximum, [(3, 4), (3, 4)], False),
    "minimum": (T.minimum, [(3, 4), (3, 4)], False),
    "smooth_l1": (lambda a: T.smooth_l1(a * 3.0), [(4, 5)], True),
    "dense": (T.dense, [(3, 5), (4, 5), (4,)], False),
    "conv2d": (lambda x, w, b: T.conv2d(x, w, b, (2, 1), (1, 0)), [(2, 3, 7, 3), (4, 3, 3, 1), (4,)], False),
    "conv2d_pointwise": (lambda x, w, b: T.conv2d(x, w, b), [(2, 3, 4, 3), (5, 3, 1, 1), (5,)], False),
    "conv2d_unbatched": (lambda x, w: T.conv2d(x, w, None, (1, 1), (1, 0)), [(2, 5, 2), (3, 2, 3, 1)], False),
    "conv1d": (lambda x, w, b: T.conv1d(x, w, b, 2, 1), [(2, 3, 8), (4, 3, 3), (4,)], False),
    "upsample_nearest": (lambda x: T.upsample_temporal(x, 2, "nearest"), [(2, 3, 4, 2)], False),
    "upsample_linear": (lambda x: T.upsample_temporal(x, 2, "linear"), [(2, 3, 4, 2)], False),
}


def check_named_op(name: str, seed: int) -> float:
    op, shapes, kinky = OP_CASES[name]
    rng = np.random.default_rng(seed)
    inputs = [_rand(rng, s, kinky) for s in shapes]
    if name in ("maximum", "minimum"):  # keep the pair 0.1 apart so no element sits on the tie
        inputs[1].data = inputs[0].data + np.where(rng.random(shapes[0]) < 0.5, 0.1, -0.1)
    return check_op(op, inputs, rng)
