"""Central finite-difference checks for the autodiff substrate."""
from __future__ import annotations

import numpy as np

from .tensor import Tensor


def finite_difference_grad(fn, x: np.ndarray, h=1e-5, seed=None):
    """Gradient of ``sum(seed * fn(x))`` by central differences (fn returns ndarray)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = np.asarray(fn(x))
        flat[i] = old - h
        fm = np.asarray(fn(x))
        flat[i] = old
        diff = fp - fm
        gflat[i] = (np.sum(diff * seed) if seed is not None else np.sum(diff)) / (2 * h)
    return g


def check_gradient(fn, inputs, rng=None, h=1e-5, rtol=1e-4, atol=1e-7):
    """Compare autodiff and central-difference gradients of ``fn``.

    ``fn`` maps a list of Tensors to one Tensor. A random cotangent is drawn
    so non-scalar outputs are reduced to a scalar. Returns ``(ok, worst)``
    where ``worst`` is the largest normalized error seen; the error per entry
    is ``|a - n| / max(|a|, |n|, atol / rtol)``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    arrays = [np.array(x, dtype=np.float64) for x in inputs]
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(ts)
    seed = rng.normal(size=out.shape)
    out.backward(seed)
    worst = 0.0
    for k, a in enumerate(arrays):
        def scalar_fn(xk, k=k):
            args = [Tensor(arr) if j != k else Tensor(xk) for j, arr in enumerate(arrays)]
            return fn(args).data
        num = finite_difference_grad(scalar_fn, a, h=h, seed=seed)
        ana = ts[k].grad if ts[k].grad is not None else np.zeros_like(a)
        scale = np.maximum(np.maximum(np.abs(ana), np.abs(num)), atol / rtol)
        err = float(np.max(np.abs(ana - num) / scale)) if a.size else 0.0
        worst = max(worst, err)
    return worst <= rtol, worst
