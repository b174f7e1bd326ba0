"""Layers built on the tensor substrate."""
from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Minimal parameter container.

    Subclasses register parameters and child modules as attributes; the
    names returned by :meth:`parameters` are dotted attribute paths, so two
    modules built with the same code produce identical manifests.
    """

    def parameters(self, prefix=""):
        out = {}
        for name, val in vars(self).items():
            if isinstance(val, Tensor) and val.requires_grad:
                out[prefix + name] = val
            elif isinstance(val, Module):
                out.update(val.parameters(prefix + name + "."))
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        out.update(item.parameters(f"{prefix}{name}.{i}."))
        return out

    def zero_grad(self):
        for p in self.parameters().values():
            p.grad = None

    def num_parameters(self):
        return sum(p.size for p in self.parameters().values())

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _param(arr, dtype):
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in, n_out, rng, dtype=np.float64, zero_init=False, bias_init=None):
        if zero_init:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.normal(0.0, np.sqrt(1.0 / n_in), size=(n_in, n_out))
        b = np.zeros(n_out) if bias_init is None else np.asarray(bias_init, dtype=float)
        self.weight = _param(w, dtype)
        self.bias = _param(b, dtype)

    def forward(self, x):
        return T.matmul(x, self.weight) + self.bias


class Conv2d(Module):
    def __init__(self, c_in, c_out, k, rng, stride=1, padding=None, dtype=np.float64):
        if k % 2 != 1:
            raise ValueError("kernel size must be odd")
        fan_in = c_in * k * k
        self.weight = _param(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(c_out, c_in, k, k)), dtype)
        self.bias = _param(np.zeros(c_out), dtype)
        self.stride = stride
        self.padding = k // 2 if padding is None else padding

    def forward(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class CompactCNN(Module):
    """Stack of (3×3 conv, stride 2, relu) blocks; total stride 2**len(channels)."""

    def __init__(self, c_in, channels, rng, dtype=np.float64):
        self.blocks = []
        prev = c_in
        for c in channels:
            self.blocks.append(Conv2d(prev, c, 3, rng, stride=2, dtype=dtype))
            prev = c
        self.out_channels = prev
        self.stride = 2 ** len(channels)

    def forward(self, x):
        for conv in self.blocks:
            x = T.relu(conv(x))
        return x


class MLP(Module):
    """Residual fully connected regressor in the style of simple 3D-lifting baselines."""

    def __init__(self, n_in, n_out, rng, hidden=256, n_blocks=2, dtype=np.float64):
        self.inp = Linear(n_in, hidden, rng, dtype=dtype)
        self.blocks = [(Linear(hidden, hidden, rng, dtype=dtype), Linear(hidden, hidden, rng, dtype=dtype))
                       for _ in range(n_blocks)]
        self.out = Linear(hidden, n_out, rng, dtype=dtype, zero_init=True)

    def parameters(self, prefix=""):
        out = {}
        out.update(self.inp.parameters(prefix + "inp."))
        for i, (a, b) in enumerate(self.blocks):
            out.update(a.parameters(f"{prefix}blocks.{i}.a."))
            out.update(b.parameters(f"{prefix}blocks.{i}.b."))
        out.update(self.out.parameters(prefix + "out."))
        return out

    def forward(self, x):
        h = T.relu(self.inp(x))
        for a, b in self.blocks:
            h = h + T.relu(b(T.relu(a(h))))
        return self.out(h)


def global_avg_pool(feat):
    """N×C×H×W -> N×C."""
    return T.mean(feat, axis=(2, 3))


def bilinear_gather(feat, pts):
    """Sample ``feat`` (N×C×H×W) at continuous (x, y) points ``pts`` (N×P×2).

    Points are clamped to the map; the result is N×P×C and differentiable
    with respect to both the features and the point coordinates.
    """
    feat = T.as_tensor(feat)
    pts = T.as_tensor(pts)
    n, c, h, w = feat.shape
    x = T.clip(pts[..., 0], 0.0, w - 1.0)
    y = T.clip(pts[..., 1], 0.0, h - 1.0)
    x0 = np.clip(np.floor(x.data).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(y.data).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0.astype(x.dtype))[..., None]
    fy = (y - y0.astype(y.dtype))[..., None]
    hwc = T.transpose(feat, (0, 2, 3, 1))
    nidx = np.arange(n)[:, None]
    v00 = hwc[nidx, y0, x0]
    v01 = hwc[nidx, y0, x1]
    v10 = hwc[nidx, y1, x0]
    v11 = hwc[nidx, y1, x1]
    top = v00 * (1.0 - fx) + v01 * fx
    bot = v10 * (1.0 - fx) + v11 * fx
    return top * (1.0 - fy) + bot * fy
