"""Pinhole camera and perspective projection."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import BehindCamera

MIN_DEPTH = 1e-6


@dataclass(frozen=True)
class Camera:
    fx: float = 1500.0
    fy: float = 1500.0
    cx: float = 256.0
    cy: float = 256.0
    width: int = 512
    height: int = 512

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    def to_dict(self):
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


def project_perspective(points, cam: Camera):
    """``(..., 3)`` camera-frame meters -> ``(..., 2)`` pixels.

    Raises :class:`BehindCamera` listing flat indices of points with
    ``z <= 1e-6``. Tensor input stays on the tape.
    """
    data = points.data if isinstance(points, Tensor) else np.asarray(points, dtype=np.float64)
    z = data[..., 2].reshape(-1)
    bad = np.nonzero(~(z > MIN_DEPTH))[0]
    if bad.size:
        raise BehindCamera(bad)
    if isinstance(points, Tensor):
        inv_z = 1.0 / points[..., 2:3]
        scale = np.array([cam.fx, cam.fy], dtype=points.dtype)
        center = np.array([cam.cx, cam.cy], dtype=points.dtype)
        return points[..., 0:2] * inv_z * scale + center
    return np.stack([cam.fx * data[..., 0] / data[..., 2] + cam.cx,
                     cam.fy * data[..., 1] / data[..., 2] + cam.cy], axis=-1)


def unproject(px, depth, cam: Camera):
    """Inverse of :func:`project_perspective` for known depth."""
    px = np.asarray(px, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    x = (px[..., 0] - cam.cx) * depth / cam.fx
    y = (px[..., 1] - cam.cy) * depth / cam.fy
    return np.stack([x, y, depth], axis=-1)

