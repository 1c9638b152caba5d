"""Reverse-mode autodiff over float32 numpy arrays.

A Tensor wraps an ndarray (rank <= 4, NCHW convention for image data) and
records the op that produced it as a closure. ``backward()`` on a scalar
walks the recorded graph once in reverse topological order and accumulates
gradients on every tensor reachable from the loss. Only the fixed op set
below exists; there is no general graph compiler.

Every op output is checked for NaN/Inf at creation time: a non-finite
value anywhere is treated as a fatal error state, because a silent NaN
poisons a long synthesis run long before anyone looks at the loss curve.
"""

from __future__ import annotations

import numpy as np


class GraphError(RuntimeError):
    """Misuse of the recorded computation graph (e.g. double backward)."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared in an op output."""


def _check_finite(arr: np.ndarray, where: str) -> None:
    # Summing in f64 is a single fused pass: any NaN/Inf in the array makes
    # the sum non-finite, and finite f32 values cannot overflow an f64 sum.
    if not np.isfinite(arr.sum(dtype=np.float64)):
        raise NonFiniteError(f"non-finite values in {where}")


class Tensor:
    """Dense float32 array with an optional gradient buffer.

    Size-1 results of reductions additionally carry a float64 value
    (`_hi`), propagated through scalar arithmetic and returned by
    ``item()``: storage is 32-bit everywhere but loss accumulation happens
    in 64 bits.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjp",
                 "_consumed", "_hi")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float32)
        if arr.ndim > 4:
            raise ValueError(f"rank {arr.ndim} > 4 not supported")
        if arr.size == 0:
            raise ValueError("empty tensors are not supported")
        _check_finite(arr, "tensor init")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._vjp = None
        self._consumed = False
        self._hi = None

    # -- graph construction -------------------------------------------------

    @staticmethod
    def _from_op(data: np.ndarray, parents, vjp, where: str) -> "Tensor":
        data = np.ascontiguousarray(data, dtype=np.float32)
        _check_finite(data, where)
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._consumed = False
        out._hi = None
        if out.requires_grad:
            out._parents = tuple(parents)
            out._vjp = vjp
        else:
            out._parents = ()
            out._vjp = None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        if self._hi is not None:
            return self._hi
        return float(self.data.reshape(-1)[0])

    def _hi_value(self) -> float:
        return self._hi if self._hi is not None else float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # pickling drops the recorded graph; only leaves round-trip faithfully
    def __getstate__(self):
        return (self.data, self.requires_grad)

    def __setstate__(self, state):
        self.data, self.requires_grad = state
        self.grad = None
        self._parents = ()
        self._vjp = None
        self._consumed = False
        self._hi = None

    # -- backward engine -----------------------------------------------------

    def backward(self) -> None:
        """Populate .grad on every tensor in this scalar's recorded graph."""
        if self.data.size != 1:
            raise GraphError(f"backward needs a scalar loss, got shape {self.shape}")
        if not self._parents:
            raise GraphError("backward called with no recorded computation")
        if self._consumed:
            raise GraphError("backward called twice on the same recorded graph")
        self._consumed = True

        order: list[Tensor] = []
        seen = {id(self)}
        stack: list[tuple[Tensor, int]] = [(self, 0)]
        while stack:  # iterative DFS: synthesis graphs outgrow the recursion limit
            node, i = stack.pop()
            if i < len(node._parents):
                stack.append((node, i + 1))
                parent = node._parents[i]
                if parent.requires_grad and id(parent) not in seen:
                    seen.add(id(parent))
                    stack.append((parent, 0))
            else:
                order.append(node)

        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._vjp is None:
                continue
            grads = node._vjp(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g

    # -- arithmetic ----------------------------------------------------------

    def __add__(self, other):
        return add(self, _as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, _as_tensor(other))

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    t = Tensor(np.asarray(x, dtype=np.float32))
    if isinstance(x, (int, float)):
        t._hi = float(x)  # keep python scalars exact on the f64 loss path
    return t


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient g back to `shape` after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# -- elementwise and reduction ops --------------------------------------------


def _scalar_hi(out: Tensor, a: Tensor, b: Tensor, op) -> Tensor:
    # carry the f64 loss-accumulation value through scalar arithmetic
    if out.data.size == 1 and a.data.size == 1 and b.data.size == 1:
        out._hi = op(a._hi_value(), b._hi_value())
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    out = Tensor._from_op(a.data + b.data, (a, b), vjp, "add")
    return _scalar_hi(out, a, b, lambda x, y: x + y)


def sub(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    out = Tensor._from_op(a.data - b.data, (a, b), vjp, "sub")
    return _scalar_hi(out, a, b, lambda x, y: x - y)


def mul(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    out = Tensor._from_op(a.data * b.data, (a, b), vjp, "mul")
    return _scalar_hi(out, a, b, lambda x, y: x * y)


def div(a: Tensor, b: Tensor) -> Tensor:
    def vjp(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    out = Tensor._from_op(a.data / b.data, (a, b), vjp, "div")
    return _scalar_hi(out, a, b, lambda x, y: x / y)


def pow_const(a: Tensor, p: float) -> Tensor:
    def vjp(g):
        return (g * p * np.power(a.data, p - 1.0),)

    return Tensor._from_op(np.power(a.data, p), (a,), vjp, "pow")


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def vjp(g):
        return (g * out_data,)

    return Tensor._from_op(out_data, (a,), vjp, "exp")


def log(a: Tensor) -> Tensor:
    def vjp(g):
        return (g / a.data,)

    return Tensor._from_op(np.log(a.data), (a,), vjp, "log")


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def vjp(g):
        return (g * (0.5 / out_data),)

    return Tensor._from_op(out_data, (a,), vjp, "sqrt")


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def vjp(g):
        return (g * mask,)

    return Tensor._from_op(np.where(mask, a.data, 0.0), (a,), vjp, "relu")


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    # accumulate in f64, store in f32 (loss totals stay accurate)
    out64 = a.data.sum(axis=axis, keepdims=keepdims, dtype=np.float64)
    out_data = np.asarray(out64, dtype=np.float32)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(np.float32),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.shape).astype(np.float32),)

    out = Tensor._from_op(out_data, (a,), vjp, "sum")
    if out.data.size == 1:
        out._hi = float(np.asarray(out64).reshape(-1)[0])
    return out


def tmean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= a.shape[ax]
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")

    def vjp(g):
        return g @ b.data.T, a.data.T @ g

    return Tensor._from_op(a.data @ b.data, (a, b), vjp, "matmul")


def reshape(a: Tensor, shape) -> Tensor:
    def vjp(g):
        return (g.reshape(a.shape),)

    return Tensor._from_op(a.data.reshape(shape), (a,), vjp, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)

    def vjp(g):
        return (g.transpose(inv),)

    return Tensor._from_op(a.data.transpose(axes), (a,), vjp, "transpose")


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)

    def vjp(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    data = np.stack([t.data for t in tensors], axis=axis)
    return Tensor._from_op(data, tensors, vjp, "stack")


def gather_flat(a: Tensor, idx: np.ndarray) -> Tensor:
    """Pick elements from the flattened tensor; grads scatter-add back."""
    flat = a.data.reshape(-1)
    idx = np.asarray(idx, dtype=np.intp)

    def vjp(g):
        gx = np.zeros(a.data.size, dtype=np.float32)
        np.add.at(gx, idx, g.reshape(-1))
        return (gx.reshape(a.shape),)

    return Tensor._from_op(flat[idx], (a,), vjp, "gather")


# -- image-shaped ops ----------------------------------------------------------


def pad2d(a: Tensor, pad: int) -> Tensor:
    if pad == 0:
        return a
    n, c, h, w = a.shape

    def vjp(g):
        return (g[:, :, pad : pad + h, pad : pad + w],)

    data = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float32)
    data[:, :, pad : pad + h, pad : pad + w] = a.data
    return Tensor._from_op(data, (a,), vjp, "pad2d")


def im2col(a: Tensor, kh: int, kw: int, stride: int) -> Tensor:
    """(N,C,H,W) -> (N*OH*OW, C*kh*kw) patch matrix for conv-as-matmul."""
    n, c, h, w = a.shape
    oh = (h - kh) // stride + 1
    ow = (w - kw) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(a.data, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N,C,OH,OW,kh,kw)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)

    def vjp(g):
        g6 = g.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
        gx = np.zeros((n, c, h, w), dtype=np.float32)
        for i in range(kh):
            for j in range(kw):
                gx[:, :, i : i + oh * stride : stride, j : j + ow * stride : stride] += g6[
                    :, :, i, j
                ]
        return (gx,)

    return Tensor._from_op(cols, (a,), vjp, "im2col")


def maxpool2(a: Tensor) -> Tensor:
    """2x2/stride-2 max pool; gradient routes to the argmax of each window."""
    n, c, h, w = a.shape
    if h % 2 or w % 2:
        raise ValueError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    oh, ow = h // 2, w // 2
    win = a.data.reshape(n, c, oh, 2, ow, 2).transpose(0, 1, 2, 4, 3, 5).reshape(
        n, c, oh, ow, 4
    )
    arg = win.argmax(axis=-1)
    out_data = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gw = np.zeros((n, c, oh, ow, 4), dtype=np.float32)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gx = gw.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
        return (np.ascontiguousarray(gx),)

    return Tensor._from_op(np.ascontiguousarray(out_data), (a,), vjp, "maxpool2")
