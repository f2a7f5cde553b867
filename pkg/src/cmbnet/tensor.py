"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation records a closure that maps the output gradient to the
gradients of its inputs. ``Tensor.backward`` walks the recorded graph in
reverse topological order. The graph is rebuilt on every forward pass.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

DTYPE = np.float64

# Active branch log, or None. Piecewise ops append their discrete choices here.
_branch_log: list[np.ndarray] | None = None


@contextmanager
def record_branches() -> Iterator[list[np.ndarray]]:
    """Collect the piecewise choices (ReLU masks, clamp sides, argmax, neighbour sets) of the ops run inside.

    Two evaluations that log equal branches sit on the same smooth piece, so a
    finite difference between them estimates a derivative.
    """
    global _branch_log
    prev, _branch_log = _branch_log, []
    try:
        yield _branch_log
    finally:
        _branch_log = prev


def note_branch(choice: np.ndarray) -> None:
    if _branch_log is not None:
        _branch_log.append(np.array(choice, copy=True))


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data, dtype=DTYPE)
        if not arr.flags.writeable or arr.base is not None:
            arr = np.array(arr, dtype=DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- basic properties -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- graph ------------------------------------------------------------
    def backward(self, grad: np.ndarray | None = None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward() without a seed needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.asarray(grad, dtype=DTYPE)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                if node.requires_grad:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not (parent.requires_grad or parent._backward is not None):
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- operator sugar ---------------------------------------------------
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _tracked(*ts: Tensor) -> bool:
    return any(t.requires_grad or t._backward is not None for t in ts)


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out.name = None
    if _tracked(*parents):
        out._parents = parents
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ------------------------------------------------
def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "sub")
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "mul")
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "div")
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)))


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    note_branch(mask)
    return _make(np.maximum(x.data, 0.0), (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    out = _sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def softplus(x: Tensor) -> Tensor:
    """log(1 + e^x), computed without overflow."""
    d = x.data
    out = np.maximum(d, 0.0) + np.log1p(np.exp(-np.abs(d)))
    return _make(out, (x,), lambda g: (g * _sigmoid(d),))


def _sigmoid(d: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(d))
    return np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def clamp_magnitude(x: Tensor, floor: float) -> Tensor:
    """Push values with |x| < floor out to sign(x) * floor (sign(0) taken as +).

    Gradient passes where the value is untouched and is zero elsewhere.
    """
    d = x.data
    keep = np.abs(d) >= floor
    note_branch(keep)
    note_branch(d < 0)
    out = np.where(keep, d, np.where(d < 0, -floor, floor))
    return _make(out, (x,), lambda g: (g * keep,))


# -- reductions ------------------------------------------------------------
def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    out = x.data.sum(axis=axes, keepdims=keepdims)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(out), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    n = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return mul(tsum(x, axes, keepdims), 1.0 / n)


def max_over(x: Tensor, axis) -> Tensor:
    """Max over the given axes; gradient goes to the first maximal entry."""
    axes = _norm_axes(axis, x.ndim)
    keep = [a for a in range(x.ndim) if a not in axes]
    perm = keep + list(axes)
    moved = x.data.transpose(perm)
    lead = moved.shape[: len(keep)]
    flat = moved.reshape(lead + (-1,))
    idx = flat.argmax(axis=-1)
    note_branch(idx)
    out = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]

    def back(g):
        gf = np.zeros_like(flat)
        np.put_along_axis(gf, idx[..., None], g[..., None], axis=-1)
        return (gf.reshape(moved.shape).transpose(np.argsort(perm)),)

    return _make(out, (x,), back)


def global_maxpool(x: Tensor) -> Tensor:
    """Max over every axis except the leading batch and trailing channel axes."""
    if x.ndim < 3:
        raise ShapeError(f"global_maxpool expects (batch, ..., channels), got {x.shape}")
    return max_over(x, tuple(range(1, x.ndim - 1)))


# -- shape ops -------------------------------------------------------------
def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {x.shape} as {shape}") from None
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(range(x.ndim))[::-1]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),))


def swap_last(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(x, axes)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat along {axis}: incompatible shapes {[t.shape for t in tensors]}") from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(out, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def split(x: Tensor, sizes: Sequence[int], axis: int = 0) -> list[Tensor]:
    sizes = list(sizes)
    if sum(sizes) != x.shape[axis] or any(s <= 0 for s in sizes):
        raise ShapeError(f"split sizes {sizes} do not sum to axis length {x.shape[axis]} of {x.shape}")
    starts = np.concatenate([[0], np.cumsum(sizes)[:-1]])
    return [_slice_axis(x, int(s), int(s + n), axis) for s, n in zip(starts, sizes)]


def _slice_axis(x: Tensor, start: int, stop: int, axis: int) -> Tensor:
    sl = [slice(None)] * x.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def back(g):
        full = np.zeros_like(x.data)
        full[sl] = g
        return (full,)

    return _make(x.data[sl], (x,), back)


def gather_rows(x: Tensor, index: np.ndarray) -> Tensor:
    """Batched row gather: x (B, R, D), index (B, ...) -> (B, ..., D)."""
    if x.ndim != 3 or index.shape[0] != x.shape[0]:
        raise ShapeError(f"gather_rows: x {x.shape} with index {index.shape}")
    b = np.arange(x.shape[0]).reshape((-1,) + (1,) * (index.ndim - 1))
    out = x.data[b, index]

    def back(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (np.broadcast_to(b, index.shape), index), g)
        return (full,)

    return _make(out, (x,), back)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    out = x.data.repeat(factor, axis=-2).repeat(factor, axis=-1)

    def back(g):
        s = g.shape
        g = g.reshape(s[:-2] + (s[-2] // factor, factor, s[-1] // factor, factor))
        return (g.sum(axis=(-3, -1)),)

    return _make(out, (x,), back)


# -- linear algebra --------------------------------------------------------
def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned") from None

    def back(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(out, (a, b), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if not -x.ndim <= axis < x.ndim:
        raise ShapeError(f"softmax: axis {axis} invalid for shape {x.shape}")
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), back)


# -- convolution -----------------------------------------------------------
def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation. x (B, C, H, W), w (O, C, kh, kw), b (O,)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    Hp, Wp = xp.shape[2:]
    Ho, Wo = (Hp - kh) // stride + 1, (Wp - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} larger than padded input {Hp}x{Wp}")
    if kh == 1 and kw == 1 and stride == 1:
        # pointwise: a plain matmul over the channel axis
        wm = w.data.reshape(O, C)
        out = np.einsum("oc,bchw->bohw", wm, xp, optimize=True)
        if b is not None:
            out += b.data.reshape(1, O, 1, 1)

        def back_pw(g):
            gx = np.einsum("oc,bohw->bchw", wm, g, optimize=True)
            gw = np.einsum("bohw,bchw->oc", g, xp, optimize=True).reshape(w.shape)
            gb = g.sum(axis=(0, 2, 3)) if b is not None else None
            return (gx, gw, gb) if b is not None else (gx, gw)

        parents = (x, w, b) if b is not None else (x, w)
        return _make(out, parents, back_pw)

    # channels-last im2col: rows of (kh, kw, C) patches
    xl = xp.transpose(0, 2, 3, 1)
    win = np.lib.stride_tricks.sliding_window_view(xl, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(B * Ho * Wo, kh * kw * C)
    wm = w.data.transpose(0, 2, 3, 1).reshape(O, kh * kw * C)
    out = cols @ wm.T
    if b is not None:
        out += b.data
    out = out.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2)

    def back(g):
        gm = g.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
        gw = (gm.T @ cols).reshape(O, kh, kw, C).transpose(0, 3, 1, 2)
        gcols = (gm @ wm).reshape(B, Ho, Wo, kh, kw, C)
        gxl = np.zeros((B, Hp, Wp, C))
        for i in range(kh):
            for j in range(kw):
                gxl[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += gcols[:, :, :, i, j]
        gx = gxl.transpose(0, 3, 1, 2)
        if padding:
            gx = gx[:, :, padding:padding + H, padding:padding + W]
        res = [gx, np.ascontiguousarray(gw)]
        if b is not None:
            res.append(gm.sum(axis=0))
        return tuple(res)

    parents = (x, w, b) if b is not None else (x, w)
    return _make(out, parents, back)


def conv1x1(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if w.ndim == 2:
        w = reshape(w, w.shape + (1, 1))
    return conv2d(x, w, b)


def conv3x3(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if w.shape[-2:] != (3, 3):
        raise ShapeError(f"conv3x3 expects a 3x3 kernel, got {w.shape}")
    return conv2d(x, w, b, stride=1, padding=1)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map over the last axis: x (..., I) @ w (I, O) + b (O,)."""
    out = matmul(x, w)
    return add(out, b) if b is not None else out


# -- normalization -----------------------------------------------------------
def batchnorm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray, running_var: np.ndarray,
              training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Batch normalization over every axis but the channel axis (axis 1).

    In training mode batch statistics are used and the running buffers are
    updated in place; in eval mode the running buffers are used.
    """
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = [1] * x.ndim
    bshape[1] = x.shape[1]
    g_ = gamma.data.reshape(bshape)
    if training:
        n = x.data.size // x.shape[1]
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc * xc).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(-1)
        unbiased = var.reshape(-1) * (n / max(n - 1, 1))
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased
        out = xhat * g_ + beta.data.reshape(bshape)

        def back(g):
            gxhat = g * g_
            gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
            return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

        return _make(out, (x, gamma, beta), back)

    inv = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
    xhat = (x.data - running_mean.reshape(bshape)) * inv
    out = xhat * g_ + beta.data.reshape(bshape)
    return _make(out, (x, gamma, beta),
                 lambda g: (g * g_ * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)))


def ensure_tensors(items: Iterable) -> list[Tensor]:
    return [as_tensor(t) for t in items]
