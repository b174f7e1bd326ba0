"""Rotations, 2D affine transforms, boxes and bilinear sampling.

Rotation helpers accept either numpy arrays or autodiff Tensors. Tensor
inputs keep the computation on the tape; array inputs return arrays.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import DegenerateInput, OutOfBounds

SMALL_ANGLE = 1e-7


def _wrap(x):
    is_t = isinstance(x, Tensor)
    return (x if is_t else Tensor(np.asarray(x, dtype=np.float64))), is_t


def _unwrap(t, is_t):
    return t if is_t else t.data


def skew(v):
    """Cross-product matrix of the last axis; Tensor in, Tensor out."""
    z = v[..., 0] * 0.0
    rows = [
        ad.stack([z, -v[..., 2], v[..., 1]], axis=-1),
        ad.stack([v[..., 2], z, -v[..., 0]], axis=-1),
        ad.stack([-v[..., 1], v[..., 0], z], axis=-1),
    ]
    return ad.stack(rows, axis=-2)


def axis_angle_to_matrix(v):
    """Rodrigues' formula over the last axis (shape ``(..., 3) -> (..., 3, 3)``).

    Below an angle of 1e-7 the sin/cos coefficients are replaced by their
    second-order series so both value and gradient stay finite at zero.
    """
    if not isinstance(v, Tensor):
        return _axis_angle_to_matrix_np(np.asarray(v, dtype=np.float64))
    v, is_t = _wrap(v)
    theta2 = ad.tsum(v * v, axis=-1)
    small = theta2.data < SMALL_ANGLE ** 2
    safe2 = ad.where(small, 1.0, theta2)
    theta = ad.sqrt(safe2)
    a = ad.where(small, 1.0 - theta2 / 6.0, ad.sin(theta) / theta)
    b = ad.where(small, 0.5 - theta2 / 24.0, (1.0 - ad.cos(theta)) / safe2)
    k = skew(v)
    eye = np.eye(3, dtype=v.dtype)
    out = eye + a[..., None, None] * k + b[..., None, None] * ad.matmul(k, k)
    return _unwrap(out, is_t)


def _axis_angle_to_matrix_np(v):
    theta2 = np.sum(v * v, axis=-1)
    small = theta2 < SMALL_ANGLE ** 2
    safe2 = np.where(small, 1.0, theta2)
    theta = np.sqrt(safe2)
    a = np.where(small, 1.0 - theta2 / 6.0, np.sin(theta) / theta)
    b = np.where(small, 0.5 - theta2 / 24.0, (1.0 - np.cos(theta)) / safe2)
    k = np.zeros(v.shape + (3,))
    k[..., 0, 1], k[..., 0, 2] = -v[..., 2], v[..., 1]
    k[..., 1, 0], k[..., 1, 2] = v[..., 2], -v[..., 0]
    k[..., 2, 0], k[..., 2, 1] = -v[..., 1], v[..., 0]
    return np.eye(3) + a[..., None, None] * k + b[..., None, None] * (k @ k)


def rot6d_to_matrix(a, eps=1e-8):
    """Gram-Schmidt on the two 3-vectors packed in the last axis.

    The normalized vectors become the first two columns of the result.
    """
    a, is_t = _wrap(a)
    x_, y_ = a[..., 0:3], a[..., 3:6]
    nx = np.linalg.norm(x_.data, axis=-1)
    if np.any(nx <= eps):
        raise DegenerateInput("6D rotation: first column has near-zero norm")
    c1 = x_ / ad.sqrt(ad.tsum(x_ * x_, axis=-1, keepdims=True))
    y = y_ - ad.tsum(c1 * y_, axis=-1, keepdims=True) * c1
    ny = np.linalg.norm(y.data, axis=-1)
    if np.any(ny <= eps):
        raise DegenerateInput("6D rotation: columns are parallel")
    c2 = y / ad.sqrt(ad.tsum(y * y, axis=-1, keepdims=True))
    c3 = ad.cross(c1, c2)
    return _unwrap(ad.stack([c1, c2, c3], axis=-1), is_t)


def matrix_to_rot6d(m):
    m = np.asarray(m, dtype=np.float64)
    return np.concatenate([m[..., :, 0], m[..., :, 1]], axis=-1)


def matrix_to_axis_angle(m):
    """Inverse of Rodrigues for proper rotations (numpy only)."""
    m = np.asarray(m, dtype=np.float64)
    flat = m.reshape(-1, 3, 3)
    out = np.zeros((flat.shape[0], 3))
    for i, r in enumerate(flat):
        cos = np.clip((np.trace(r) - 1.0) / 2.0, -1.0, 1.0)
        angle = np.arccos(cos)
        w = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]])
        if angle < 1e-6:
            out[i] = 0.5 * w
        elif np.pi - angle < 1e-4:
            # near pi: axis from the symmetric part
            s = (r + np.eye(3)) / 2.0
            axis = np.sqrt(np.clip(np.diag(s), 0.0, None))
            j = int(np.argmax(axis))
            axis = s[j] / np.sqrt(max(s[j, j], 1e-300))
            if np.dot(w, axis) < 0:
                axis = -axis
            out[i] = axis / np.linalg.norm(axis) * angle
        else:
            out[i] = w / (2.0 * np.sin(angle)) * angle
    return out.reshape(m.shape[:-2] + (3,))


# ---------------------------------------------------------------------------
# 2D affine transforms (2×3, acting on homogeneous column vectors)


@dataclass(frozen=True)
class Affine2D:
    m: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "m", np.asarray(self.m, dtype=np.float64).reshape(2, 3))

    @classmethod
    def identity(cls):
        return cls(np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]))

    @classmethod
    def translation(cls, dx, dy):
        return cls(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]]))

    @classmethod
    def scale(cls, sx, sy=None):
        sy = sx if sy is None else sy
        return cls(np.array([[sx, 0.0, 0.0], [0.0, sy, 0.0]]))

    @property
    def det(self):
        return float(np.linalg.det(self.m[:, :2]))

    def homogeneous(self):
        return np.vstack([self.m, [0.0, 0.0, 1.0]])


def apply_affine(t: Affine2D, p):
    """Map points ``p`` (shape ``(..., 2)``); Tensors pass through differentiably."""
    if isinstance(p, Tensor):
        lin = Tensor(t.m[:, :2].T.astype(p.dtype))
        return ad.matmul(p.reshape(-1, 2), lin).reshape(p.shape) + t.m[:, 2].astype(p.dtype)
    p = np.asarray(p, dtype=np.float64)
    return p @ t.m[:, :2].T + t.m[:, 2]


def compose_affine(a: Affine2D, b: Affine2D) -> Affine2D:
    """Transform applying ``b`` first, then ``a``."""
    return Affine2D((a.homogeneous() @ b.homogeneous())[:2])


def invert_affine(a: Affine2D) -> Affine2D:
    lin = a.m[:, :2]
    if abs(np.linalg.det(lin)) <= 1e-12:
        raise DegenerateInput("affine linear part is not invertible")
    inv = np.linalg.inv(lin)
    return Affine2D(np.hstack([inv, -(inv @ a.m[:, 2])[:, None]]))


# ---------------------------------------------------------------------------
# boxes (center + size, axis aligned)


@dataclass(frozen=True)
class Box2D:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise DegenerateInput(f"box size must be positive, got ({self.w}, {self.h})")

    @classmethod
    def from_corners(cls, x0, y0, x1, y1):
        return cls((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)

    @classmethod
    def from_points(cls, pts, min_size=1e-6):
        pts = np.asarray(pts, dtype=np.float64)
        lo, hi = pts.min(axis=0), pts.max(axis=0)
        c = (lo + hi) / 2.0
        size = np.maximum(hi - lo, min_size)
        return cls(float(c[0]), float(c[1]), float(size[0]), float(size[1]))

    @property
    def center(self):
        return np.array([self.cx, self.cy])

    @property
    def size(self):
        return np.array([self.w, self.h])

    def corners(self):
        return (self.cx - self.w / 2.0, self.cy - self.h / 2.0,
                self.cx + self.w / 2.0, self.cy + self.h / 2.0)

    def to_list(self):
        return [self.cx, self.cy, self.w, self.h]


def box_iou(a: Box2D, b: Box2D) -> float:
    ax0, ay0, ax1, ay1 = a.corners()
    bx0, by0, bx1, by1 = b.corners()
    iw = max(0.0, min(ax1, bx1) - max(ax0, bx0))
    ih = max(0.0, min(ay1, by1) - max(ay0, by0))
    inter = iw * ih
    union = a.w * a.h + b.w * b.h - inter
    return float(inter / union) if union > 0 else 0.0


def expand_box(b: Box2D, factor: float) -> Box2D:
    if factor <= 0:
        raise DegenerateInput("expansion factor must be positive")
    return Box2D(b.cx, b.cy, b.w * factor, b.h * factor)


def squarify_box(b: Box2D) -> Box2D:
    s = max(b.w, b.h)
    return Box2D(b.cx, b.cy, s, s)


# ---------------------------------------------------------------------------


def bilinear_sample(grid, p):
    """Blend the four neighbors of continuous point ``p = (x, y)`` in ``grid`` (H×W×C).

    Exact at integer coordinates. Coordinates must already lie inside the
    grid; callers clamp.
    """
    grid_t, is_t = _wrap(grid)
    if grid_t.ndim == 2:
        grid_t = grid_t.reshape(grid_t.shape + (1,))
        squeeze = True
    else:
        squeeze = False
    h, w = grid_t.shape[:2]
    x, y = float(p[0]), float(p[1])
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        raise OutOfBounds(f"sample point ({x}, {y}) outside grid {w}x{h}")
    x0 = min(int(np.floor(x)), max(w - 2, 0))
    y0 = min(int(np.floor(y)), max(h - 2, 0))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = x - x0, y - y0
    out = (grid_t[y0, x0] * ((1 - fx) * (1 - fy)) + grid_t[y0, x1] * (fx * (1 - fy))
           + grid_t[y1, x0] * ((1 - fx) * fy) + grid_t[y1, x1] * (fx * fy))
    if squeeze:
        out = out[0]
    return _unwrap(out, is_t)
