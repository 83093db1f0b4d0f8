"""Dense double-precision tensors with a dynamic reverse-mode graph.

Only the operations the detector needs are provided. Tensor-tensor
arithmetic is broadcast-free: both operands must have identical shapes,
with plain numbers and same-shape arrays accepted as constants. ``scale``
is the one op that broadcasts (a scalar or a leading-axes factor).

Calling ``backward`` frees the graph it walked; a second call on the same
loss raises :class:`GraphFreedError` instead of silently doubling grads.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Parameter", "ShapeError", "GraphFreedError", "no_grad",
    "add", "sub", "mul", "div", "neg", "exp", "log", "relu", "sigmoid",
    "softmax", "log_softmax", "concat", "sum", "mean", "scale", "reshape",
    "transpose", "maximum", "minimum", "smooth_l1", "dense", "conv2d",
    "conv1d", "upsample_temporal", "interp_matrix",
]

_GRAD_ENABLED = True


class ShapeError(ValueError):
    pass


class GraphFreedError(RuntimeError):
    pass


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, target computation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __array_ufunc__ = None  # ndarray <op> Tensor dispatches to Tensor's reflected op

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self._freed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            _raise_nonscalar(self.shape)
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    def backward(self) -> None:
        if self._freed:
            raise GraphFreedError("backward() called on a graph that was already freed")
        if self.data.size != 1:
            _raise_nonscalar(self.shape)
        order = _topological_order(self)
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg
        for node in order:
            if node._backward is not None:
                node._parents = ()
                node._backward = None
                node._freed = True

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __getitem__(self, index):
        return _getitem(self, index)


class Parameter(Tensor):
    """A named trainable leaf. Reusing one instance on several branches shares it."""

    def __init__(self, data, name: str = "", trainable: bool = True):
        super().__init__(data, requires_grad=trainable)
        self.name = name

    @property
    def trainable(self) -> bool:
        return self.requires_grad

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def _raise_nonscalar(shape):
    raise ValueError(f"expected a scalar tensor, got shape {shape}")


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, finished = stack.pop()
        if finished:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        if node._freed:
            raise GraphFreedError("graph contains a node freed by an earlier backward()")
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._freed = False
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = tuple(parents) if needs else ()
    out._backward = backward if needs else None
    return out


def _pair(a, b) -> tuple[Tensor, Tensor]:
    ta = a if isinstance(a, Tensor) else None
    tb = b if isinstance(b, Tensor) else None
    if ta is None and tb is None:
        raise TypeError("at least one operand must be a Tensor")
    if ta is None:
        ta = _constant(a, tb.shape)
    if tb is None:
        tb = _constant(b, ta.shape)
    if ta.shape != tb.shape:
        raise ShapeError(f"shape mismatch: {ta.shape} vs {tb.shape}")
    return ta, tb


def _constant(value, shape) -> Tensor:
    arr = np.asarray(value, dtype=np.float64)
    if arr.ndim == 0:
        arr = np.full(shape, float(arr))
    return Tensor(arr)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return _make(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data))


def div(a, b) -> Tensor:
    a, b = _pair(a, b)
    out = a.data / b.data
    return _make(out, (a, b), lambda g: (g / b.data, -g * out / b.data))


def neg(x: Tensor) -> Tensor:
    return _make(-x.data, (x,), lambda g: (-g,))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def maximum(a, b) -> Tensor:
    """Elementwise max; ties send the gradient to ``a``."""
    a, b = _pair(a, b)
    take_a = a.data >= b.data
    return _make(np.where(take_a, a.data, b.data), (a, b),
                 lambda g: (g * take_a, g * ~take_a))


def minimum(a, b) -> Tensor:
    """Elementwise min; ties send the gradient to ``a``."""
    a, b = _pair(a, b)
    take_a = a.data <= b.data
    return _make(np.where(take_a, a.data, b.data), (a, b),
                 lambda g: (g * take_a, g * ~take_a))


def smooth_l1(x: Tensor, beta: float = 1.0) -> Tensor:
    """0.5 x^2 / beta where |x| < beta, |x| - 0.5 beta elsewhere."""
    ax = np.abs(x.data)
    inner = ax < beta
    out = np.where(inner, 0.5 * x.data ** 2 / beta, ax - 0.5 * beta)
    return _make(out, (x,), lambda g: (g * np.where(inner, x.data / beta, np.sign(x.data)),))


def _check_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ValueError(f"axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    axis = _check_axis(axis, x.ndim)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return _make(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


# ---------------------------------------------------------------- structural

def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat needs at least one tensor")
    axis = _check_axis(axis, tensors[0].ndim)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis):
            raise ShapeError(f"concat shape mismatch along axis {axis}: {ref} vs {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        return tuple(np.take(g, np.arange(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _make(out, tensors, backward)


def _norm_axes(axes, ndim) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    return tuple(sorted(_check_axis(a, ndim) for a in axes))


def sum(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axes, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), backward)


def mean(x: Tensor, axes=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axes, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(sum(x, axes, keepdims), 1.0 / count) if count else sum(x, axes, keepdims)


def scale(x: Tensor, s) -> Tensor:
    """Multiply ``x`` by a scalar or by a factor spanning its leading axes.

    A factor of shape ``x.shape[:k]`` is broadcast over the trailing axes,
    e.g. a (B, C) per-channel gate applied to a (B, C, H, W) map.
    """
    if not isinstance(s, Tensor):
        return mul(x, float(s))
    if s.ndim == 0:
        sv = s.data.reshape(())
        return _make(x.data * sv, (x, s),
                     lambda g: (g * sv, np.asarray((g * x.data).sum()).reshape(s.shape)))
    if x.shape[: s.ndim] != s.shape:
        raise ShapeError(f"scale factor shape {s.shape} does not lead tensor shape {x.shape}")
    extra = x.ndim - s.ndim
    sv = s.data.reshape(s.shape + (1,) * extra)
    trailing = tuple(range(s.ndim, x.ndim))
    return _make(x.data * sv, (x, s),
                 lambda g: (g * sv, (g * x.data).sum(axis=trailing)))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def _getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(np.array(out), (x,), backward)


# ---------------------------------------------------------------- layers

def dense(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x (B, in) times weight (out, in) transposed, plus bias (out,)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"dense shape mismatch: input {x.shape} vs weight {weight.shape}")
    out = x.data @ weight.data.T
    parents: list[Tensor] = [x, weight]
    if bias is not None:
        out = out + bias.data
        parents.append(bias)

    def backward(g):
        grads = [g @ weight.data, g.T @ x.data]
        if bias is not None:
            grads.append(g.sum(axis=0))
        return tuple(grads)

    return _make(out, parents, backward)


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: tuple[int, int] = (1, 1), padding: tuple[int, int] = (0, 0)) -> Tensor:
    """Cross-correlation over (C, H, W) or batched (B, C, H, W) input."""
    batched = x.ndim == 4
    if x.ndim not in (3, 4) or weight.ndim != 4:
        raise ShapeError(f"conv2d expects (C,H,W)/(B,C,H,W) input and 4-d weight, got {x.shape} and {weight.shape}")
    xd = x.data if batched else x.data[None]
    B, C, H, W = xd.shape
    O, Cw, kH, kW = weight.shape
    sH, sW = stride
    pH, pW = padding
    if C != Cw:
        raise ShapeError(f"conv2d channel mismatch: input {x.shape} vs weight {weight.shape}")
    if sH < 1 or sW < 1:
        raise ValueError(f"strides must be >= 1, got {stride}")
    if H + 2 * pH < kH or W + 2 * pW < kW:
        raise ShapeError(f"conv2d kernel larger than padded input: input {x.shape} vs weight {weight.shape}")
    Ho = (H + 2 * pH - kH) // sH + 1
    Wo = (W + 2 * pW - kW) // sW + 1
    pointwise = kH == kW == 1 and sH == sW == 1 and pH == pW == 0

    if pointwise:
        cols = xd.reshape(B, C, H * W)
    else:
        xp = np.pad(xd, ((0, 0), (0, 0), (pH, pH), (pW, pW))) if (pH or pW) else xd
        patches = np.empty((B, C, kH, kW, Ho, Wo))
        for i in range(kH):
            for j in range(kW):
                patches[:, :, i, j] = xp[:, :, i:i + sH * (Ho - 1) + 1:sH, j:j + sW * (Wo - 1) + 1:sW]
        cols = patches.reshape(B, C * kH * kW, Ho * Wo)
    wmat = weight.data.reshape(O, C * kH * kW)
    out = np.matmul(wmat, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    out = out.reshape(B, O, Ho, Wo)
    if not batched:
        out = out[0]

    parents: list[Tensor] = [x, weight] + ([bias] if bias is not None else [])

    def backward(g):
        gb = (g if batched else g[None]).reshape(B, O, Ho * Wo)
        gw = np.tensordot(gb, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        gcols = np.matmul(wmat.T, gb)
        if pointwise:
            gx = gcols.reshape(B, C, H, W)
        else:
            gcols = gcols.reshape(B, C, kH, kW, Ho, Wo)
            gxp = np.zeros((B, C, H + 2 * pH, W + 2 * pW))
            for i in range(kH):
                for j in range(kW):
                    gxp[:, :, i:i + sH * (Ho - 1) + 1:sH, j:j + sW * (Wo - 1) + 1:sW] += gcols[:, :, i, j]
            gx = gxp[:, :, pH:pH + H, pW:pW + W]
        if not batched:
            gx = gx[0]
        grads = [gx, gw]
        if bias is not None:
            grads.append(gb.sum(axis=(0, 2)))
        return tuple(grads)

    return _make(out, parents, backward)


def conv1d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """1-D convolution over (C, L) or (B, C, L); weight is (O, C, k)."""
    if x.ndim not in (2, 3) or weight.ndim != 3:
        raise ShapeError(f"conv1d expects (C,L)/(B,C,L) input and 3-d weight, got {x.shape} and {weight.shape}")
    x4 = reshape(x, x.shape + (1,))
    w4 = reshape(weight, weight.shape + (1,))
    out = conv2d(x4, w4, bias, stride=(stride, 1), padding=(padding, 0))
    return reshape(out, out.shape[:-1])


def interp_matrix(size: int, factor: int, mode: str) -> np.ndarray:
    """(size*factor, size) matrix mapping rows of the input to upsampled rows.

    Linear mode aligns cell centres: output row ``o`` samples source
    coordinate ``(o + 0.5) / factor - 0.5``, clamped to the valid range.
    """
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    n_out = size * factor
    m = np.zeros((n_out, size))
    if mode == "nearest":
        m[np.arange(n_out), np.arange(n_out) // factor] = 1.0
    elif mode == "linear":
        src = np.clip((np.arange(n_out) + 0.5) / factor - 0.5, 0.0, size - 1)
        lo = np.floor(src).astype(int)
        hi = np.minimum(lo + 1, size - 1)
        frac = src - lo
        np.add.at(m, (np.arange(n_out), lo), 1.0 - frac)
        np.add.at(m, (np.arange(n_out), hi), frac)
    else:
        raise ValueError(f"unknown interpolation mode {mode!r}")
    return m


def upsample_temporal(x: Tensor, factor: int, mode: str = "nearest") -> Tensor:
    """Upsample the temporal (second to last) axis of (…, H, W) by ``factor``."""
    if x.ndim < 2:
        raise ShapeError(f"upsample_temporal needs at least 2 axes, got {x.shape}")
    m = interp_matrix(x.shape[-2], factor, mode)
    if factor == 1:
        return _make(x.data.copy(), (x,), lambda g: (g,))
    out = np.einsum("oh,...hw->...ow", m, x.data)
    return _make(out, (x,), lambda g: (np.einsum("oh,...ow->...hw", m, g),))
