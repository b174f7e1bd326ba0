"""Finite-difference gradient suite over every differentiable operation.

Each entry builds one randomized case from a generator: a function of a
list of Tensors and the float64 inputs to perturb. Sizes are kept small so
the whole suite runs in well under two minutes.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, bilinear_gather, check_gradient
from .camera import Camera, project_perspective
from .geometry import rot6d_to_matrix
from .hand_model import N_BONES, N_JOINTS, N_SHAPE, hand_forward_tensor
from .heatmap import soft_argmax_2d, soft_argmax_3d
from .losses import weak_supervision_loss

CASES_PER_OP = 20
# small step: conv+relu stacks have thousands of kinks, and a 1e-5 step on a
# first-layer weight occasionally straddles one; fp64 roundoff stays ~1e-10
STEP = 1e-6


def _conv2d(rng):
    n, c, o = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 4)
    k = int(rng.choice([1, 3]))
    s = int(rng.integers(1, 3))
    h, w = rng.integers(k + 1, 8, size=2)
    inputs = [rng.normal(size=(n, c, h, w)), rng.normal(size=(o, c, k, k)), rng.normal(size=o)]
    return lambda t: ad.conv2d(t[0], t[1], t[2], stride=s, padding=k // 2), inputs


def _soft_argmax_3d(rng):
    J, D, H, W = 2, rng.integers(2, 5), rng.integers(2, 5), rng.integers(2, 5)
    size = (64.0, 48.0)
    return lambda t: soft_argmax_3d(t[0], temperature=0.7, size=size), [rng.normal(size=(J, D, H, W))]


def _soft_argmax_2d(rng):
    J, H, W = 3, rng.integers(2, 6), rng.integers(2, 6)
    return lambda t: soft_argmax_2d(t[0]), [rng.normal(size=(J, H, W))]


def _bilinear(rng):
    n, c, h, w = 1, 3, 5, 6
    pts = np.stack([rng.uniform(0.1, w - 1.1, 4), rng.uniform(0.1, h - 1.1, 4)], -1)[None]
    return lambda t: bilinear_gather(t[0], t[1]), [rng.normal(size=(n, c, h, w)), pts]


def _rot6d(rng):
    return lambda t: rot6d_to_matrix(t[0]), [rng.normal(size=(3, 6))]


def _hand_forward(rng):
    hand = "left" if rng.random() < 0.5 else "right"
    inputs = [rng.normal(0, 0.4, size=(N_BONES, 3)), rng.normal(size=N_SHAPE)]

    def fn(t):
        v, j = hand_forward_tensor(t[0], t[1], hand)
        return ad.concat([v[::9], j], axis=0)
    return fn, inputs


def _projection(rng):
    pts = np.concatenate([rng.uniform(-0.1, 0.1, (5, 2)), rng.uniform(0.3, 0.8, (5, 1))], -1)
    return lambda t: project_perspective(t[0], Camera()), [pts]


def _l1(rng):
    a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
    return lambda t: ad.l1_loss(t[0], t[1]), [a, b]


def _weak_loss(rng):
    jr, jl = rng.normal(0, 0.04, (2, N_JOINTS, 3)), rng.normal(0, 0.04, (2, N_JOINTS, 3))
    g = np.concatenate([rng.uniform(-0.05, 0.05, (2, 2)), rng.uniform(0.4, 0.7, (2, 1))], -1)
    t = rng.normal(0, 0.08, (2, 3))
    gt = rng.uniform(0, 256, (2, 2, N_JOINTS, 2))
    aff = np.tile(np.array([[0.9, 0.0, -20.0], [0.0, 0.9, -30.0]]), (2, 1, 1))
    cam = Camera()
    return lambda x: weak_supervision_loss(x[0], x[1], x[2], x[3], cam, gt, aff), [jr, jl, g, t]


def _transnet_head(head):
    def make(rng):
        from .transnet import TransNet, TransNetConfig
        cfg = TransNetConfig(head=head, dims=(2, 16, 16), channels=(4, 4, 4), dtype="float64")
        model = TransNet(cfg, rng)
        model.out.weight.data[...] = rng.normal(0, 0.3, model.out.weight.shape)
        feat = rng.normal(size=(2, 4, 2, 2))
        coords = np.concatenate([rng.uniform(20, 230, (2, 2 * N_JOINTS, 2)), rng.normal(0, 0.05, (2, 2 * N_JOINTS, 1))], -1)
        wrists = coords[:, [0, N_JOINTS], :2]

        def fn(t):
            model.out.weight = t[1]
            return model.head_forward(t[0], wrists, coords)
        return fn, [feat, model.out.weight.data.copy()]
    return make


def _transnet_fc(rng):
    from .transnet import TransNet, TransNetConfig
    cfg = TransNetConfig(head="fc", fc_hidden=8, dtype="float64")
    model = TransNet(cfg, rng)
    model.mlp.out.weight.data[...] = rng.normal(0, 0.3, model.mlp.out.weight.shape)
    coords = np.concatenate([rng.uniform(20, 230, (2, 2 * N_JOINTS, 2)), rng.normal(0, 0.05, (2, 2 * N_JOINTS, 1))], -1)
    x = Tensor(model.normalize_coords(coords))

    def fn(t):
        model.mlp.inp.weight = t[0]
        return model.mlp(x)
    return fn, [model.mlp.inp.weight.data.copy()]


def _shnet(rng):
    from .shnet import SHNetConfig, SHNetLite
    cfg = SHNetConfig(channels=(3, 3, 3, 3, 3), res=(64, 64), reduce_channels=4, depth_bins=2)
    model = SHNetLite(cfg, rng)
    for lin in (model.rot, model.glob):
        lin.weight.data[...] = rng.normal(0, 0.2, lin.weight.shape)
    obs = rng.uniform(0, 1, (1, 3, 64, 64))
    first = model.backbone.blocks[0]

    def fn(t):
        first.weight = t[0]
        out = model(obs)
        parts = [out["heatmap"].reshape(1, -1), out["pose"].reshape(1, -1),
                 rot6d_to_matrix(out["theta_6d"]).reshape(1, -1), out["beta"], out["g"]]
        return ad.concat(parts, axis=1)
    return fn, [first.weight.data.copy()]


OPERATIONS = {
    "conv2d": _conv2d,
    "soft_argmax_3d": _soft_argmax_3d,
    "soft_argmax_2d": _soft_argmax_2d,
    "bilinear_gather": _bilinear,
    "rot6d_to_matrix": _rot6d,
    "hand_forward": _hand_forward,
    "project_perspective": _projection,
    "l1_loss": _l1,
    "weak_supervision_loss": _weak_loss,
    "transnet_head_wrist": _transnet_head("wrist"),
    "transnet_head_gap": _transnet_head("gap"),
    "transnet_head_all_joints": _transnet_head("all_joints"),
    "transnet_head_fc": _transnet_fc,
    "shnet_backbone": _shnet,
}


@dataclass
class OpResult:
    name: str
    cases: int
    failures: int
    worst: float
    seconds: float

    @property
    def ok(self):
        return self.failures == 0


def run_suite(cases=CASES_PER_OP, seed=0, rtol=1e-4, h=STEP, ops=None, log=None):
    """Run every operation's randomized cases; returns a list of :class:`OpResult`."""
    results = []
    for name, make in OPERATIONS.items():
        if ops is not None and name not in ops:
            continue
        t0 = time.perf_counter()
        rng = np.random.default_rng([seed, len(results)])
        worst, fails = 0.0, 0
        for _ in range(cases):
            fn, inputs = make(rng)
            ok, err = check_gradient(fn, inputs, rng=rng, h=h, rtol=rtol)
            worst = max(worst, err)
            fails += not ok
        res = OpResult(name, cases, fails, worst, time.perf_counter() - t0)
        if log is not None:
            log(res)
        results.append(res)
    return results
