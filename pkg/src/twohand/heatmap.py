"""2.5D Gaussian heatmaps and soft-argmax decoding.

Coordinate convention: a joint at pixel ``x`` of a space ``W_space`` pixels
wide sits at voxel coordinate ``x * W / W_space``; voxel centers are the
integers ``0..W-1``. Depth maps as ``(z / z_range + 0.5) * D``.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import InvalidConfig

DEFAULT_SIGMA = 2.5
DEFAULT_Z_RANGE = 0.4
MAGIC = b"IWHM"


@dataclass
class Pose25D:
    coords: np.ndarray          # J×3: x, y pixels; z root-relative depth (m)
    space: str                  # pixel space identifier
    size: tuple = (256, 256)    # (W_space, H_space)
    # pose this one was mirrored from; lets a second mirror return it bit-exactly
    mirror_source: object = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.coords = np.asarray(self.coords, dtype=np.float64)
        self.size = (float(self.size[0]), float(self.size[1]))

    def with_coords(self, coords, space=None, size=None):
        return Pose25D(coords, self.space if space is None else space, self.size if size is None else size)


@dataclass
class Heatmap3D:
    values: np.ndarray          # J×D×H×W
    space: str
    size: tuple                 # (W_space, H_space)
    z_range: float
    sigma: float

    @property
    def dims(self):
        return self.values.shape[1:]


def depth_to_slice(z, z_range, D):
    return (np.asarray(z) / z_range + 0.5) * D


def slice_to_depth(s, z_range, D):
    return (np.asarray(s) / D - 0.5) * z_range


def pose_to_voxels(coords, dims, size, z_range):
    """Map J×3 (px, px, m) to voxel units (x, y, z)."""
    D, H, W = dims
    c = np.asarray(coords, dtype=np.float64)
    return np.stack([c[..., 0] * (W / size[0]),
                     c[..., 1] * (H / size[1]),
                     depth_to_slice(c[..., 2], z_range, D)], axis=-1)


def voxels_to_pose(vox, dims, size, z_range):
    D, H, W = dims
    if isinstance(vox, Tensor):
        scale = np.array([size[0] / W, size[1] / H, z_range / D], dtype=vox.dtype)
        shift = np.array([0.0, 0.0, -0.5 * z_range], dtype=vox.dtype)
        return vox * scale + shift
    v = np.asarray(vox, dtype=np.float64)
    return np.stack([v[..., 0] * (size[0] / W), v[..., 1] * (size[1] / H),
                     slice_to_depth(v[..., 2], z_range, D)], axis=-1)


def encode_gaussian(pose, dims=(16, 16, 16), sigma=DEFAULT_SIGMA, z_range=DEFAULT_Z_RANGE,
                    size=None, space=None, dtype=np.float64):
    """One Gaussian blob per joint, peak 1 at the joint's voxel position.

    ``pose`` is a :class:`Pose25D` or a raw J×3 array (then ``size`` is
    required). Joints outside the volume simply produce clipped blobs.
    """
    if not sigma > 0:
        raise InvalidConfig(f"sigma must be positive, got {sigma}")
    if not z_range > 0:
        raise InvalidConfig(f"z_range must be positive, got {z_range}")
    if isinstance(pose, Pose25D):
        coords, size, space = pose.coords, pose.size, pose.space
    else:
        coords = np.asarray(pose, dtype=np.float64)
        if size is None:
            raise InvalidConfig("size of the pixel space is required for raw coordinates")
    D, H, W = dims
    vox = pose_to_voxels(coords, dims, size, z_range)
    inv = 1.0 / (2.0 * sigma * sigma)
    gx = np.exp(-((np.arange(W)[None, :] - vox[:, 0:1]) ** 2) * inv).astype(dtype)  # J×W
    gy = np.exp(-((np.arange(H)[None, :] - vox[:, 1:2]) ** 2) * inv).astype(dtype)  # J×H
    gz = np.exp(-((np.arange(D)[None, :] - vox[:, 2:3]) ** 2) * inv).astype(dtype)  # J×D
    values = gz[:, :, None, None] * gy[:, None, :, None] * gx[:, None, None, :]
    return Heatmap3D(values, space, tuple(size), float(z_range), float(sigma))


def encode_gaussian_hwc(coords, dims, size, sigma=DEFAULT_SIGMA, z_range=DEFAULT_Z_RANGE, dtype=np.float32):
    """Same blobs as :func:`encode_gaussian`, laid out ``H×W×(J·D)`` (channel ``j*D + d``).

    Channels-last output lets a batch feed the first convolution without a
    full transpose.
    """
    D, H, W = dims
    vox = pose_to_voxels(coords, dims, size, z_range)
    inv = 1.0 / (2.0 * sigma * sigma)
    gx = np.exp(-((np.arange(W)[None, :] - vox[:, 0:1]) ** 2) * inv).astype(dtype)
    gy = np.exp(-((np.arange(H)[None, :] - vox[:, 1:2]) ** 2) * inv).astype(dtype)
    gz = np.exp(-((np.arange(D)[None, :] - vox[:, 2:3]) ** 2) * inv).astype(dtype)
    J = vox.shape[0]
    yx = gy.T[:, None, :] * gx.T[None, :, :]                  # H×W×J
    return (yx[:, :, :, None] * gz[None, None, :, :]).reshape(H, W, J * D)


def encode_gaussian_2d(coords, hw, size, sigma=DEFAULT_SIGMA):
    """J×H×W 2D blobs with depth dropped, peak 1 at each joint."""
    H, W = hw
    c = np.asarray(coords, dtype=np.float64)
    inv = 1.0 / (2.0 * sigma * sigma)
    gx = np.exp(-((np.arange(W)[None, :] - c[:, 0:1] * (W / size[0])) ** 2) * inv)
    gy = np.exp(-((np.arange(H)[None, :] - c[:, 1:2] * (H / size[1])) ** 2) * inv)
    return gy[:, :, None] * gx[:, None, :]


def _grid_coords(dims, dtype):
    D, H, W = dims
    z, y, x = np.meshgrid(np.arange(D), np.arange(H), np.arange(W), indexing="ij")
    return np.stack([x.ravel(), y.ravel(), z.ravel()], axis=-1).astype(dtype)


def soft_argmax_voxels(logits, temperature=1.0):
    """Expected (x, y, z) voxel coordinate under softmax over each volume.

    ``logits``: ``(..., D, H, W)`` array or Tensor; returns ``(..., 3)``.
    """
    t = ad.as_tensor(logits)
    dims = t.shape[-3:]
    flat = t.reshape(t.shape[:-3] + (int(np.prod(dims)),))
    if temperature != 1.0:
        flat = flat * (1.0 / temperature)
    prob = ad.softmax(flat, axis=-1)
    out = ad.matmul(prob, _grid_coords(dims, t.dtype))
    return out if isinstance(logits, Tensor) else out.data


def soft_argmax_3d(hm, temperature=1.0, size=None, z_range=DEFAULT_Z_RANGE):
    """Decode heatmaps to pixel/depth coordinates.

    A :class:`Heatmap3D` (which carries its blob width) is decoded with
    :func:`decode_gaussian` and returns a :class:`Pose25D`. A raw
    ``(..., J, D, H, W)`` array/Tensor is treated as logits; with ``size``
    the result is mapped to pixels/depth, otherwise voxel units are returned.
    """
    if isinstance(hm, Heatmap3D):
        return decode_gaussian(hm)
    dims = hm.shape[-3:]
    vox = soft_argmax_voxels(hm, temperature)
    if size is None:
        return vox
    return voxels_to_pose(vox, dims, size, z_range)


DECODE_SIGMA = 0.8


def gaussian_logits(values, sigma, decode_sigma=DECODE_SIGMA):
    """Logits whose softmax is the blob re-drawn with width ``decode_sigma``.

    ``log g`` is the blob's quadratic exponent; rescaling it narrows the blob
    so truncation at the volume border barely biases the expectation, while
    0.8 voxel is still wide enough that sampling on the integer grid adds
    well under 1e-4 voxel of error.
    """
    logits = np.log(np.maximum(values, np.finfo(np.float64).tiny))
    if sigma > decode_sigma:
        logits = logits * (sigma / decode_sigma) ** 2
    return logits


def decode_gaussian(hm: Heatmap3D, decode_sigma=DECODE_SIGMA) -> Pose25D:
    """Soft-argmax decoding of an encoded Gaussian heatmap."""
    vox = soft_argmax_voxels(gaussian_logits(hm.values, hm.sigma, decode_sigma))
    return Pose25D(voxels_to_pose(vox, hm.dims, hm.size, hm.z_range), hm.space, hm.size)


def soft_argmax_2d(hm, temperature=1.0):
    """``(..., J, H, W)`` logits -> ``(..., J, 2)`` expected (x, y) in map pixels."""
    t = ad.as_tensor(hm)
    H, W = t.shape[-2:]
    flat = t.reshape(t.shape[:-2] + (H * W,))
    if temperature != 1.0:
        flat = flat * (1.0 / temperature)
    prob = ad.softmax(flat, axis=-1)
    y, x = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    grid = np.stack([x.ravel(), y.ravel()], axis=-1).astype(t.dtype)
    out = ad.matmul(prob, grid)
    return out if isinstance(hm, Tensor) else out.data


def dump_heatmap(hm: Heatmap3D, path):
    J, D, H, W = hm.values.shape
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<4I", J, D, H, W))
        fh.write(struct.pack("<2f", hm.z_range, hm.sigma))
        fh.write(np.ascontiguousarray(hm.values, dtype="<f4").tobytes())


def load_heatmap(path, space="fixture", size=(256, 256)) -> Heatmap3D:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not an IWHM heatmap")
    J, D, H, W = struct.unpack("<4I", blob[4:20])
    z_range, sigma = struct.unpack("<2f", blob[20:28])
    vals = np.frombuffer(blob, dtype="<f4", offset=28, count=J * D * H * W).reshape(J, D, H, W)
    return Heatmap3D(vals.astype(np.float64), space, tuple(size), float(z_range), float(sigma))
