"""A small reverse-mode automatic differentiation engine over numpy arrays.

Every operation records its parents and a vector-Jacobian product; calling
:meth:`Tensor.backward` walks the graph in reverse topological order and
accumulates gradients into leaf tensors that have ``requires_grad=True``.

Dtypes are preserved: float32 graphs stay float32 unless an operation is
explicitly cast (``astype``), float64 graphs stay float64. Gradient checks run
in float64; model training runs in float32 with 64-bit loss reductions.
"""
from __future__ import annotations

import contextlib

import numpy as np

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / frozen models)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def is_grad_enabled():
    return _grad_enabled


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """An n-dimensional float array that optionally tracks gradients."""

    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._vjp = None

    @classmethod
    def _from_op(cls, data, parents, vjp):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        track = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = track
        out._parents = tuple(parents) if track else ()
        out._vjp = vjp if track else None
        return out

    # -- basic properties -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def __float__(self):
        return float(self.data)

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def detach(self):
        """Same values, no history: the stop-gradient operator."""
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- backward ---------------------------------------------------------
    def backward(self, grad=None):
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        if grad is None:
            if self.data.size != 1:
                raise RuntimeError("grad must be given for non-scalar outputs")
            grad = np.ones_like(self.data)
        order = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if not node._parents:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._vjp(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pg = np.asarray(pg, dtype=parent.data.dtype)
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # -- arithmetic -------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return Tensor._from_op(a.data + b.data, (a, b), vjp)

    __radd__ = __add__

    def __sub__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def vjp(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return Tensor._from_op(a.data - b.data, (a, b), vjp)

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def vjp(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return Tensor._from_op(a.data * b.data, (a, b), vjp)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = self._coerce(other)
        a, b = self, other

        def vjp(g):
            ga = _unbroadcast(g / b.data, a.shape)
            gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
            return ga, gb

        return Tensor._from_op(a.data / b.data, (a, b), vjp)

    def __rtruediv__(self, other):
        return self._coerce(other) / self

    def __neg__(self):
        return Tensor._from_op(-self.data, (self,), lambda g: (-g,))

    def __pow__(self, exponent):
        if isinstance(exponent, Tensor):
            raise TypeError("only scalar exponents are supported")
        x = self

        def vjp(g):
            return (g * exponent * x.data ** (exponent - 1),)

        return Tensor._from_op(x.data**exponent, (x,), vjp)

    def __matmul__(self, other):
        other = self._coerce(other)
        a, b = self, other
        if a.ndim != 2 or b.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")

        def vjp(g):
            return g @ b.data.T, a.data.T @ g

        return Tensor._from_op(a.data @ b.data, (a, b), vjp)

    def __rmatmul__(self, other):
        return self._coerce(other) @ self

    # -- reductions / elementwise -----------------------------------------
    def sum(self, axis=None, keepdims=False):
        x = self

        def vjp(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, x.shape),)

        return Tensor._from_op(
            np.asarray(x.data.sum(axis=axis, keepdims=keepdims)), (x,), vjp
        )

    def mean(self, axis=None, keepdims=False):
        if axis is None:
            count = self.data.size
        else:
            axes = axis if isinstance(axis, tuple) else (axis,)
            count = int(np.prod([self.shape[a] for a in axes]))
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)

    def exp(self):
        out = np.exp(self.data)
        return Tensor._from_op(out, (self,), lambda g: (g * out,))

    def log(self):
        x = self
        return Tensor._from_op(np.log(x.data), (x,), lambda g: (g / x.data,))

    def sqrt(self):
        out = np.sqrt(self.data)
        return Tensor._from_op(out, (self,), lambda g: (g * 0.5 / out,))

    def relu(self):
        mask = self.data > 0
        return Tensor._from_op(
            np.where(mask, self.data, 0).astype(self.dtype), (self,), lambda g: (g * mask,)
        )

    def astype(self, dtype):
        src = self.dtype
        return Tensor._from_op(
            self.data.astype(dtype), (self,), lambda g: (g.astype(src),)
        )

    # -- shape ops --------------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        src = self.shape
        return Tensor._from_op(
            self.data.reshape(shape), (self,), lambda g: (g.reshape(src),)
        )

    def transpose(self, *axes):
        if not axes:
            axes = tuple(reversed(range(self.ndim)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        inverse = tuple(np.argsort(axes))
        return Tensor._from_op(
            self.data.transpose(axes), (self,), lambda g: (g.transpose(inverse),)
        )

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        x = self

        def vjp(g):
            full = np.zeros_like(x.data)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._from_op(np.asarray(x.data[idx]), (x,), vjp)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x if dtype is None or x.dtype == dtype else x.astype(dtype)
    return Tensor(x, dtype=dtype)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), vjp
    )


def logsumexp(x, axis=-1, mask=None):
    """Stable log-sum-exp along ``axis``; entries where ``mask`` is False are skipped."""
    data = x.data
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), data.shape)
        data = np.where(mask, data, -np.inf)
    peak = data.max(axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0)
    shifted = np.exp(data - peak)
    out = np.log(shifted.sum(axis=axis, keepdims=True)) + peak

    def vjp(g):
        weights = np.exp(data - out)
        return (np.expand_dims(g, axis) * weights,)

    return Tensor._from_op(np.squeeze(out, axis=axis), (x,), vjp)


def conv2d(x, weight, bias=None):
    """Stride-1 'same' convolution. x: [B,C,H,W], weight: [O,C,k,k] with odd k."""
    batch, channels, height, width = x.shape
    out_ch, in_ch, k, k2 = weight.shape
    if in_ch != channels or k != k2 or k % 2 == 0:
        raise ValueError(f"bad conv shapes: input {x.shape}, weight {weight.shape}")
    pad = k // 2
    padded = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    windows = np.lib.stride_tricks.sliding_window_view(padded, (k, k), axis=(2, 3))
    # windows: [B, C, H, W, k, k] -> cols: [B*H*W, C*k*k]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * height * width, -1)
    wmat = weight.data.reshape(out_ch, -1)
    out = cols @ wmat.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(batch, height, width, out_ch).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)

    def vjp(g):
        gflat = g.transpose(0, 2, 3, 1).reshape(-1, out_ch)
        gw = (gflat.T @ cols).reshape(weight.shape)
        gb = gflat.sum(axis=0) if bias is not None else None
        gcols = (gflat @ wmat).reshape(batch, height, width, channels, k, k)
        gpad = np.zeros_like(padded)
        for i in range(k):
            for j in range(k):
                gpad[:, :, i : i + height, j : j + width] += gcols[..., i, j].transpose(0, 3, 1, 2)
        gx = gpad[:, :, pad : pad + height, pad : pad + width]
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor._from_op(out, parents, vjp)


def max_pool2d(x):
    """2x2 max pooling with stride 2; H and W must be even."""
    batch, channels, height, width = x.shape
    if height % 2 or width % 2:
        raise ValueError(f"max_pool2d needs even spatial dims, got {x.shape}")
    blocks = (
        x.data.reshape(batch, channels, height // 2, 2, width // 2, 2)
        .transpose(0, 1, 2, 4, 3, 5)
        .reshape(batch, channels, height // 2, width // 2, 4)
    )
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        gblocks = np.zeros_like(blocks)
        np.put_along_axis(gblocks, arg[..., None], g[..., None], axis=-1)
        gx = (
            gblocks.reshape(batch, channels, height // 2, width // 2, 2, 2)
            .transpose(0, 1, 2, 4, 3, 5)
            .reshape(batch, channels, height, width)
        )
        return (gx,)

    return Tensor._from_op(out, (x,), vjp)
