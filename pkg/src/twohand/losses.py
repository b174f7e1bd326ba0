"""Training losses: L1 terms and 2D-projection weak supervision."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .camera import Camera, project_perspective
from .errors import InvalidConfig
from .geometry import Affine2D

TERMS = ("box_l1", "mano_l1", "joint_l1", "reltrans_l1", "weak2d_l1")


@dataclass
class LossReport:
    terms: dict
    weights: dict = field(default_factory=lambda: {k: 1.0 for k in TERMS})

    def __getattr__(self, name):
        if name in TERMS:
            return float(self.terms.get(name, 0.0))
        raise AttributeError(name)

    @property
    def total(self) -> float:
        return float(sum(self.weights.get(k, 1.0) * float(v) for k, v in self.terms.items()))


def combine_losses(terms: dict, weights=None):
    """Weighted sum of scalar loss Tensors; returns ``(total Tensor, LossReport)``."""
    weights = {k: 1.0 for k in TERMS} if weights is None else {**{k: 1.0 for k in TERMS}, **weights}
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise InvalidConfig(f"unknown loss terms: {sorted(unknown)}")
    total = None
    for k in TERMS:
        if k not in terms:
            continue
        w = weights[k]
        term = terms[k] * w if w != 1.0 else terms[k]
        total = term if total is None else total + term
    report = LossReport({k: float(v.data) for k, v in terms.items()}, weights)
    return total, report


def reltrans_loss(t_pred, t_gt):
    return ad.l1_loss(t_pred, t_gt)


def _as_affine_array(union_affine, batch_shape):
    if isinstance(union_affine, Affine2D):
        return np.broadcast_to(union_affine.m, batch_shape + (2, 3))
    a = np.asarray(union_affine, dtype=np.float64)
    return np.broadcast_to(a, batch_shape + (2, 3))


def weak_supervision_loss(joints_r, joints_l, g_r, t, cam: Camera, gt2d_union, union_affine,
                          shared_beta: bool = True, visible=None):
    """L1 between projected 3D joints and 2D ground truth in union-box pixels.

    ``joints_r``/``joints_l`` are root-relative ``(..., J, 3)``; the right
    wrist sits at ``g_r`` and the left wrist at ``g_r + t``. ``gt2d_union``
    is ``(..., 2, J, 2)`` (right, left). ``visible`` (``(..., 2)``) masks
    hands without 2D labels. Both hands must share one shape vector.
    """
    if not shared_beta:
        raise InvalidConfig("weak supervision needs one shape vector shared by both hands")
    t = ad.as_tensor(t)
    jr, jl, gr = ad.as_tensor(joints_r), ad.as_tensor(joints_l), ad.as_tensor(g_r)
    world_r = jr + gr[..., None, :]
    world_l = jl + (gr + t)[..., None, :]
    pts = ad.stack([world_r, world_l], axis=-3)              # (..., 2, J, 3)
    px = project_perspective(pts, cam)                        # (..., 2, J, 2)
    batch = px.shape[:-3]
    A = _as_affine_array(union_affine, batch).astype(px.dtype)
    lin = np.swapaxes(A[..., :2], -1, -2)[..., None, :, :]   # (..., 1, 2, 2)
    u = ad.matmul(px, lin) + A[..., None, None, :, 2]
    gt = np.asarray(gt2d_union, dtype=px.dtype)
    if visible is None:
        mask = np.ones(batch + (2,), dtype=px.dtype)
    else:
        mask = np.asarray(visible, dtype=px.dtype).reshape(batch + (2,))
    n = mask.sum() * gt.shape[-2] * 2
    err = ad.absolute(u - gt) * mask[..., None, None]
    if n == 0:
        return ad.tsum(err) * 0.0
    return ad.tsum(err) * (1.0 / float(n))
