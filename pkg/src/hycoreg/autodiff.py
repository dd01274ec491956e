"""Reverse-mode automatic differentiation over dense numpy arrays.

A `Tensor` wraps a float32/float64 array plus an optional gradient slot.
Operations record a graph of vector-Jacobian callbacks; `backward()` on
a scalar walks it in reverse topological order and accumulates gradients
into leaf tensors flagged `requires_grad` (repeated backward calls keep
accumulating until `zero_grad`). All reductions use numpy's fixed
evaluation order, so results are bit-reproducible.
"""

from __future__ import annotations

from contextlib import contextmanager

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (evaluation paths: no memory, no backward)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_vjps")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple = ()
        self._vjps: tuple = ()

    # -- introspection -----------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- gradient machinery --------------------------------------------------
    def zero_grad(self):
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self):
        if self.data.size != 1:
            raise ShapeError("backward requires a scalar loss")
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))
        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                if node.requires_grad:
                    if node.grad is None:
                        node.grad = np.zeros_like(node.data)
                    node.grad += g
                continue
            for parent, vjp in zip(node._parents, node._vjps):
                if not (parent.requires_grad or parent._parents):
                    continue
                pg = vjp(g)
                acc = grads.get(id(parent))
                grads[id(parent)] = pg if acc is None else acc + pg

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, exponent):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _coerce_pair(a, b) -> tuple[Tensor, Tensor]:
    """Wrap operands; python scalars adopt the tensor operand's dtype."""
    if isinstance(a, Tensor) and not isinstance(b, Tensor) and np.isscalar(b):
        b = Tensor(np.asarray(b, dtype=a.data.dtype))
    elif isinstance(b, Tensor) and not isinstance(a, Tensor) and np.isscalar(a):
        a = Tensor(np.asarray(a, dtype=b.data.dtype))
    return as_tensor(a), as_tensor(b)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient over axes that broadcasting expanded."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _build(data: np.ndarray, parents_vjps) -> Tensor:
    """Wrap op output; records the graph only when tracking is useful."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    if _grad_enabled:
        tracked = [(p, f) for p, f in parents_vjps if p.requires_grad or p._parents]
        if tracked:
            out.requires_grad = True
            out._parents = tuple(p for p, _ in tracked)
            out._vjps = tuple(f for _, f in tracked)
            return out
    out.requires_grad = False
    out._parents = ()
    out._vjps = ()
    return out


# -- elementwise arithmetic ---------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    return _build(
        a.data + b.data,
        [
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(g, b.data.shape)),
        ],
    )


def sub(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    return _build(
        a.data - b.data,
        [
            (a, lambda g: _unbroadcast(g, a.data.shape)),
            (b, lambda g: _unbroadcast(-g, b.data.shape)),
        ],
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _build(-a.data, [(a, lambda g: -g)])


def mul(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    return _build(
        a.data * b.data,
        [
            (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
            (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
        ],
    )


def div(a, b) -> Tensor:
    a, b = _coerce_pair(a, b)
    inv = 1.0 / b.data
    return _build(
        a.data * inv,
        [
            (a, lambda g: _unbroadcast(g * inv, a.data.shape)),
            (b, lambda g: _unbroadcast(-g * a.data * inv * inv, b.data.shape)),
        ],
    )


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    e = float(exponent)
    out = a.data**e
    return _build(out, [(a, lambda g: g * e * a.data ** (e - 1.0))])


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _build(out, [(a, lambda g: g * out)])


def log(a) -> Tensor:
    a = as_tensor(a)
    return _build(np.log(a.data), [(a, lambda g: g / a.data)])


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _build(out, [(a, lambda g: g * (0.5 / out))])


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _build(np.where(mask, a.data, 0.0), [(a, lambda g: g * mask)])


# -- shape manipulation --------------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _build(a.data.reshape(shape), [(a, lambda g: g.reshape(a.data.shape))])


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    inverse = tuple(np.argsort(axes))
    return _build(a.data.transpose(axes), [(a, lambda g: g.transpose(inverse))])


def getitem(a, index) -> Tensor:
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return full

    return _build(a.data[index], [(a, vjp)])


def concat(tensors, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in ts]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        sl = [slice(None)] * ts[i].data.ndim
        sl[axis] = slice(offsets[i], offsets[i + 1])
        sl = tuple(sl)
        return lambda g: g[sl]

    return _build(
        np.concatenate([t.data for t in ts], axis=axis),
        [(t, make_vjp(i)) for i, t in enumerate(ts)],
    )


# -- reductions -----------------------------------------------------------------


def tensor_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy()
        g2 = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(g2, a.data.shape).copy()

    return _build(np.asarray(out), [(a, vjp)])


def tensor_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[ax] for ax in axes]))
    return tensor_sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


# -- linear algebra ----------------------------------------------------------------


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError("matmul requires tensors with ndim >= 2")

    def vjp_a(g):
        return _unbroadcast(g @ b.data.swapaxes(-1, -2), a.data.shape)

    def vjp_b(g):
        return _unbroadcast(a.data.swapaxes(-1, -2) @ g, b.data.shape)

    return _build(a.data @ b.data, [(a, vjp_a), (b, vjp_b)])


# -- structured ops: 3D convolution and max pooling -------------------------------


def _im2col(x: np.ndarray, kshape: tuple[int, int, int]) -> tuple[np.ndarray, tuple]:
    """Flatten all valid (kd, kh, kw) windows: (B*Dp*Hp*Wp, Ci*kd*kh*kw)."""
    b, ci = x.shape[:2]
    win = sliding_window_view(x, kshape, axis=(2, 3, 4))
    dp, hp, wp = win.shape[2:5]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 4, 1, 5, 6, 7))
    return cols.reshape(b * dp * hp * wp, ci * int(np.prod(kshape))), (dp, hp, wp)


def conv3d(x, kernel, bias=None) -> Tensor:
    """Valid cross-correlation, stride 1: (B,Ci,D,H,W) * (Co,Ci,kd,kh,kw) -> (B,Co,D',H',W')."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    b, ci, d, h, w = x.data.shape
    co, ci2, kd, kh, kw = kernel.data.shape
    if ci != ci2:
        raise ShapeError(f"input has {ci} channels, kernel expects {ci2}")
    if kd > d or kh > h or kw > w:
        raise ShapeError(f"kernel {kernel.data.shape[2:]} larger than input {(d, h, w)}")
    cols, (dp, hp, wp) = _im2col(x.data, (kd, kh, kw))
    kmat = kernel.data.reshape(co, -1)
    out = (cols @ kmat.T).reshape(b, dp, hp, wp, co).transpose(0, 4, 1, 2, 3)

    def vjp_x(g):
        # full correlation of the padded output gradient with the flipped kernel
        gpad = np.pad(
            g, ((0, 0), (0, 0), (kd - 1, kd - 1), (kh - 1, kh - 1), (kw - 1, kw - 1))
        )
        gcols, _ = _im2col(gpad, (kd, kh, kw))
        kflip = kernel.data[:, :, ::-1, ::-1, ::-1].transpose(1, 0, 2, 3, 4).reshape(ci, -1)
        return (gcols @ kflip.T).reshape(b, d, h, w, ci).transpose(0, 4, 1, 2, 3)

    def vjp_k(g):
        gmat = g.transpose(0, 2, 3, 4, 1).reshape(-1, co)
        return (gmat.T @ cols).reshape(kernel.data.shape)

    parents = [(x, vjp_x), (kernel, vjp_k)]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.data.shape != (co,):
            raise ShapeError(f"bias must have shape ({co},)")
        out = out + bias.data[None, :, None, None, None]
        parents.append((bias, lambda g: g.sum(axis=(0, 2, 3, 4))))
    return _build(np.ascontiguousarray(out), parents)


def maxpool3d(x, pool: tuple[int, int, int]) -> Tensor:
    """Non-overlapping max pooling; trailing remainders are dropped."""
    x = as_tensor(x)
    pd, ph, pw = pool
    b, c, d, h, w = x.data.shape
    dp, hp, wp = d // pd, h // ph, w // pw
    if min(dp, hp, wp) < 1:
        raise ShapeError(f"pool {pool} larger than input {(d, h, w)}")
    crop = x.data[:, :, : dp * pd, : hp * ph, : wp * pw]
    blocks = crop.reshape(b, c, dp, pd, hp, ph, wp, pw).transpose(0, 1, 2, 4, 6, 3, 5, 7)
    flat = blocks.reshape(b, c, dp, hp, wp, pd * ph * pw)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gflat = np.zeros_like(flat)
        np.put_along_axis(gflat, arg[..., None], g[..., None], axis=-1)
        gcrop = (
            gflat.reshape(b, c, dp, hp, wp, pd, ph, pw)
            .transpose(0, 1, 2, 5, 3, 6, 4, 7)
            .reshape(b, c, dp * pd, hp * ph, wp * pw)
        )
        full = np.zeros_like(x.data)
        full[:, :, : dp * pd, : hp * ph, : wp * pw] = gcrop
        return full

    return _build(np.ascontiguousarray(out), [(x, vjp)])


def softmax(a, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis` (shift by a detached max)."""
    a = as_tensor(a)
    shift = a - a.data.max(axis=axis, keepdims=True)
    e = exp(shift)
    return e / tensor_sum(e, axis=axis, keepdims=True)
