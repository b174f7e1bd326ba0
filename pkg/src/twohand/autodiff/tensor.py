"""Reverse-mode automatic differentiation over numpy arrays.

Every operation returns a new :class:`Tensor`. When grad mode is on and any
input requires a gradient, the result keeps references to its parents and a
closure mapping the output gradient to one gradient per parent. Calling
``backward`` on a scalar records a :class:`Tape` (reverse topological order)
and replays it once.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np

from ..errors import ShapeMismatch

_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind in "biu":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    # -- introspection -------------------------------------------------
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

    def __len__(self):
        return len(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def detach(self):
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    # -- backward --------------------------------------------------------
    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            grad = np.ones_like(self.data)
        tape = Tape(self)
        tape.backward(np.asarray(grad, dtype=self.data.dtype))
        return tape

    # -- operators ---------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def swapaxes(self, a, b):
        axes = list(range(self.ndim))
        axes[a], axes[b] = axes[b], axes[a]
        return transpose(self, tuple(axes))

    @property
    def T(self):
        return transpose(self, None)


class Tape:
    """Nodes of one graph in reverse-replayable order.

    ``nodes`` lists every tensor requiring grad that the root depends on, in
    topological order (parents before children). ``visits`` counts how many
    nodes the last backward pass processed; it equals ``len(nodes)``.
    """

    def __init__(self, root: Tensor):
        self.root = root
        self.nodes = self._toposort(root)
        self.visits = 0

    @staticmethod
    def _toposort(root):
        if not root.requires_grad:
            return []
        order, seen = [], {id(root)}
        stack = [(root, iter(root._parents))]
        while stack:
            node, it = stack[-1]
            for p in it:
                if p.requires_grad and id(p) not in seen:
                    seen.add(id(p))
                    stack.append((p, iter(p._parents)))
                    break
            else:
                stack.pop()
                order.append(node)
        return order

    def backward(self, seed):
        grads = {id(self.root): seed}
        self.visits = 0
        for node in reversed(self.nodes):
            g = grads.pop(id(node), None)
            self.visits += 1
            if g is None:
                continue
            if node._backward is None:
                node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            for p, pg in zip(node._parents, node._backward(g)):
                if pg is None or not p.requires_grad:
                    continue
                key = id(p)
                if key in grads:
                    grads[key] = grads[key] + pg
                else:
                    grads[key] = pg


# ---------------------------------------------------------------------------
# helpers


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _lift(x, like: Tensor):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _pair(a, b):
    if isinstance(a, Tensor):
        return a, _lift(b, a)
    if isinstance(b, Tensor):
        return _lift(a, b), b
    a = Tensor(a)
    return a, _lift(b, a)


def _make(data, parents, backward, op):
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
        out.op = op
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(a.shape, b.shape) from None


# ---------------------------------------------------------------------------
# elementwise binary


def add(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b)

    def bw(g):
        return (_unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(g * a.data, b.shape) if b.requires_grad else None)
    return _make(a.data * b.data, (a, b), bw, "mul")


def div(a, b):
    a, b = _pair(a, b)
    _check_broadcast(a, b)
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape) if a.requires_grad else None,
                _unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None)
    return _make(out, (a, b), bw, "div")


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float):
    a = as_tensor(a)
    p = float(p)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1.0),), "pow")


def where(cond, a, b):
    """Select ``a`` where ``cond`` holds, else ``b``; ``cond`` is constant."""
    cond = np.asarray(cond, dtype=bool)
    a, b = _pair(a, b)
    sa, sb = a.shape, b.shape
    zero = np.zeros((), dtype=a.dtype)

    def bw(g):
        return (_unbroadcast(np.where(cond, g, zero), sa),
                _unbroadcast(np.where(cond, zero, g), sb))
    return _make(np.where(cond, a.data, b.data), (a, b), bw, "where")


# ---------------------------------------------------------------------------
# elementwise unary


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def sin(a):
    a = as_tensor(a)
    return _make(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def cos(a):
    a = as_tensor(a)
    return _make(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def absolute(a):
    # subgradient 0 at exact zero
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0).astype(a.dtype), (a,),
                 lambda g: (g * mask,), "relu")


def clip(a, lo, hi):
    """Clamp values; gradient passes only where the value was inside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _make(np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,), "clip")


# ---------------------------------------------------------------------------
# reductions and shape


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)
    return _make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bw, "sum")


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        n = a.size
    else:
        axes = (axis,) if np.isscalar(axis) else axis
        n = int(np.prod([a.shape[i] for i in axes]))
    return tsum(a, axis, keepdims) * (1.0 / n)


def reshape(a, shape):
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeMismatch(src, shape, "reshape") from None
    return _make(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None):
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def getitem(a, idx):
    a = as_tensor(a)
    if isinstance(idx, Tensor):
        idx = idx.data
    if isinstance(idx, tuple):
        idx = tuple(i.data if isinstance(i, Tensor) else i for i in idx)
    out = a.data[idx]
    parts = idx if isinstance(idx, tuple) else (idx,)
    advanced = any(isinstance(i, (np.ndarray, list)) for i in parts)

    def bw(g):
        full = np.zeros_like(a.data)
        if advanced:
            np.add.at(full, idx, g)
        else:
            full[idx] += g
        return (full,)
    return _make(out, (a,), bw, "getitem")


def concat(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    ax = axis % ts[0].ndim
    for t in ts[1:]:
        if t.ndim != ts[0].ndim or any(
                t.shape[i] != ts[0].shape[i] for i in range(t.ndim) if i != ax):
            raise ShapeMismatch(ts[0].shape, t.shape, "concat")
    sizes = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, sizes, axis=ax))
    return _make(np.concatenate([t.data for t in ts], axis=ax), ts, bw, "concat")


def stack(tensors, axis=0):
    ts = [as_tensor(t) for t in tensors]
    for t in ts[1:]:
        if t.shape != ts[0].shape:
            raise ShapeMismatch(ts[0].shape, t.shape, "stack")
    ax = axis % (ts[0].ndim + 1)

    def bw(g):
        return tuple(np.moveaxis(g, ax, 0))
    return _make(np.stack([t.data for t in ts], axis=ax), ts, bw, "stack")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch(a.shape, b.shape, "matmul operands (need >=2-D)")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatch(a.shape, b.shape, "matmul")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeMismatch(a.shape, b.shape, "matmul batch") from None

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb
    return _make(a.data @ b.data, (a, b), bw, "matmul")


def cross(a, b):
    """Cross product along the last axis (length 3)."""
    a, b = _pair(a, b)
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    return stack([a1 * b2 - a2 * b1, a2 * b0 - a0 * b2, a0 * b1 - a1 * b0], axis=-1)


# ---------------------------------------------------------------------------
# neural-network primitives


def softmax(a, axis=-1):
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _make(out, (a,), bw, "softmax")


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D cross-correlation. ``x``: N×C×H×W, ``w``: O×C×k×k, ``b``: O."""
    x = as_tensor(x)
    w = _lift(w, x)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatch(x.shape, w.shape, "conv2d operands (need 4-D)")
    n, c, h, wd = x.shape
    o, cw, k, k2 = w.shape
    if cw != c or k != k2:
        raise ShapeMismatch(x.shape, w.shape, "conv2d channels/kernel")
    s, p = int(stride), int(padding)
    if h + 2 * p < k or wd + 2 * p < k:
        raise ShapeMismatch(x.shape, w.shape, f"conv2d output size (stride={s}, padding={p})")
    ho = (h + 2 * p - k) // s + 1
    wo = (wd + 2 * p - k) // s + 1
    # channels-last padded copy so every window slice copies contiguous channel runs
    xp = np.zeros((n, h + 2 * p, wd + 2 * p, c), dtype=x.dtype)
    xp[:, p:p + h, p:p + wd, :] = x.data.transpose(0, 2, 3, 1)

    def window(arr, i, j):
        return arr[:, i:i + s * (ho - 1) + 1:s, j:j + s * (wo - 1) + 1:s, :]

    # N×Ho×Wo×(k·k)×C patches, then one GEMM against O×(k·k·C) kernels
    cols = np.empty((n, ho, wo, k * k, c), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            cols[:, :, :, i * k + j, :] = window(xp, i, j)
    cols = cols.reshape(n * ho * wo, k * k * c)
    wmat = w.data.transpose(0, 2, 3, 1).reshape(o, k * k * c)
    out = (cols @ wmat.T).reshape(n, ho, wo, o).transpose(0, 3, 1, 2)
    parents = [x, w]
    if b is not None:
        b = _lift(b, x)
        if b.shape != (o,):
            raise ShapeMismatch(b.shape, (o,), "conv2d bias")
        out = out + b.data[None, :, None, None]
        parents.append(b)
    out = np.ascontiguousarray(out)

    def bw(g):
        gmat = g.transpose(0, 2, 3, 1).reshape(n * ho * wo, o)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (cols.T @ gmat).T.reshape(o, k, k, c).transpose(0, 3, 1, 2)
        if x.requires_grad:
            gcols = (gmat @ wmat).reshape(n, ho, wo, k * k, c)
            gxp = np.zeros_like(xp)
            for i in range(k):
                for j in range(k):
                    window(gxp, i, j)[...] += gcols[:, :, :, i * k + j, :]
            gx = gxp[:, p:p + h, p:p + wd, :].transpose(0, 3, 1, 2)
        if b is not None and b.requires_grad:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw, gb) if b is not None else (gx, gw)
    return _make(out, parents, bw, "conv2d")


def l1_loss(pred, target):
    """Mean absolute difference; subgradient 0 at exact ties."""
    pred = as_tensor(pred)
    target = _lift(target, pred)
    if pred.shape != target.shape:
        raise ShapeMismatch(pred.shape, target.shape, "l1_loss")
    return mean(absolute(pred - target))
