"""Crop-space bookkeeping: hand crops, left-hand flips, union-box space, assembly.

Every 2D pose carries a ``space`` tag naming the pixel frame it lives in, so
mixing frames raises :class:`SpaceMismatch` instead of silently producing
shifted joints.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SpaceMismatch
from .geometry import (Affine2D, Box2D, apply_affine, compose_affine, expand_box,
                       invert_affine, squarify_box)
from .hand_model import HandMesh, HandParams, mirror_theta
from .heatmap import Pose25D, soft_argmax_2d

HAND_RES = (256, 256)
UNION_RES = (256, 256)
CROP_EXPAND = 2.0
FLIP_SUFFIX = "|flipped"


def crop_affine(region: Box2D, res=HAND_RES, flip=False) -> Affine2D:
    """Map ``region`` onto a ``res`` pixel grid (left/top edge -> 0).

    With ``flip`` the result is additionally mirrored by ``x -> (W - 1) - x``.
    """
    sx = res[0] / region.w
    sy = res[1] / region.h
    x0, y0 = region.cx - region.w / 2.0, region.cy - region.h / 2.0
    a = Affine2D(np.array([[sx, 0.0, -x0 * sx], [0.0, sy, -y0 * sy]]))
    if flip:
        a = compose_affine(Affine2D(np.array([[-1.0, 0.0, res[0] - 1.0], [0.0, 1.0, 0.0]])), a)
    return a


def toggle_flip_tag(space: str) -> str:
    if space.endswith(FLIP_SUFFIX):
        return space[: -len(FLIP_SUFFIX)]
    return space + FLIP_SUFFIX


@dataclass(frozen=True)
class CropSpec:
    source_box: Box2D          # tight hand box, original-image pixels
    region: Box2D              # doubled + squarified region actually cropped
    target: tuple
    flip: bool
    affine: Affine2D           # original image -> crop pixels (flip included)
    name: str = "hand"

    @property
    def space(self) -> str:
        """Tag of this crop's pixel frame (the flipped frame when ``flip``)."""
        base = f"crop:{self.name}"
        return base + FLIP_SUFFIX if self.flip else base

    def affine_for(self, space: str) -> Affine2D:
        """Image->crop affine for either the flipped or unflipped frame of this crop."""
        if space == self.space:
            return self.affine
        if space == toggle_flip_tag(self.space):
            return crop_affine(self.region, self.target, flip=not self.flip)
        raise SpaceMismatch(f"pose lives in {space!r}, crop is {self.space!r}")


def prepare_hand_crop(box: Box2D, flip: bool = False, name: str = "hand",
                      expand: float = CROP_EXPAND, res=HAND_RES) -> CropSpec:
    """Double the box, make it square, and build the crop transform."""
    region = squarify_box(expand_box(box, expand))
    return CropSpec(box, region, tuple(res), bool(flip), crop_affine(region, res, flip), name)


def flip_pose_back(pose: Pose25D) -> Pose25D:
    """Mirror x inside the pose's own pixel frame; y and depth are untouched.

    ``(W-1) - ((W-1) - x)`` can be off by an ulp, so mirroring a pose that
    was itself produced by this function returns its source coordinates.
    """
    src = pose.mirror_source
    if src is not None and src.space == toggle_flip_tag(pose.space):
        return Pose25D(src.coords.copy(), src.space, src.size, mirror_source=pose)
    c = pose.coords.copy()
    c[:, 0] = (pose.size[0] - 1.0) - c[:, 0]
    return Pose25D(c, toggle_flip_tag(pose.space), pose.size, mirror_source=pose)


def flip_params_back(params: HandParams) -> HandParams:
    other = "left" if params.handedness == "right" else "right"
    return HandParams(mirror_theta(params.theta), params.beta.copy(), other)


def union_box(box_r: Box2D, box_l: Box2D, margin: float = 1.0) -> Box2D:
    """Smallest box containing both, optionally scaled by ``margin``, then squared."""
    ax0, ay0, ax1, ay1 = box_r.corners()
    bx0, by0, bx1, by1 = box_l.corners()
    enc = Box2D.from_corners(min(ax0, bx0), min(ay0, by0), max(ax1, bx1), max(ay1, by1))
    if margin != 1.0:
        enc = expand_box(enc, margin)
    return squarify_box(enc)


def union_space(union: Box2D, union_res=UNION_RES) -> str:
    return "union:" + ",".join(f"{v:.17g}" for v in union.to_list()) + f"@{union_res[0]}x{union_res[1]}"


def to_union_space(pose: Pose25D, crop: CropSpec, union: Box2D, union_res=UNION_RES) -> Pose25D:
    """Move a crop-space pose into the union-box frame; depths pass through untouched."""
    to_crop = crop.affine_for(pose.space)
    a = compose_affine(crop_affine(union, union_res), invert_affine(to_crop))
    out = pose.coords.copy()
    out[:, :2] = apply_affine(a, pose.coords[:, :2])
    return Pose25D(out, union_space(union, union_res), union_res)


def image_to_union(points_2d, union: Box2D, union_res=UNION_RES):
    """Original-image pixels straight to union pixels (the direct path)."""
    return apply_affine(crop_affine(union, union_res), points_2d)


def image_to_crop_pose(joints_2d, depths, crop: CropSpec) -> Pose25D:
    """Build a crop-space Pose25D from image-space 2D joints and root-relative depths."""
    xy = apply_affine(crop.affine, joints_2d)
    return Pose25D(np.column_stack([xy, depths]), crop.space, crop.target)


def signed_area(a, b, c) -> float:
    return float(0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])))


# ---------------------------------------------------------------------------
# assembly


@dataclass
class TwoHandOutput:
    mesh_right: HandMesh
    mesh_left: HandMesh
    rel_trans: np.ndarray

    def combined(self):
        """Right-wrist-centered frame: ``(verts_r, joints_r, verts_l + t, joints_l + t)``."""
        t = np.asarray(self.rel_trans, dtype=np.float64)
        return (self.mesh_right.vertices, self.mesh_right.joints,
                self.mesh_left.vertices + t, self.mesh_left.joints + t)


def assemble_output(mesh_r: HandMesh, mesh_l: HandMesh, t) -> TwoHandOutput:
    return TwoHandOutput(mesh_r, mesh_l, np.asarray(t, dtype=np.float64).reshape(3))


# ---------------------------------------------------------------------------
# box providers


class GTBoxProvider:
    """Boxes straight from synthetic scene ground truth."""

    def boxes(self, scene):
        return scene.box_r, scene.box_l


@dataclass
class CenterHeatmapDecoder:
    """Box decoding from a center heatmap and a per-hand size output.

    ``center_logits`` is ``2×h×w`` (right, left) on a feature map ``stride``
    times smaller than the detector input, which itself is ``upscale`` times
    smaller than the original image. ``sizes`` holds (w, h) per hand in
    detector-input pixels. Decoding happens in detector-input pixels first
    and is then rescaled to the original image.
    """

    stride: float = 4.0
    upscale: float = 2.0

    def decode(self, center_logits, sizes):
        cells = soft_argmax_2d(np.asarray(center_logits, dtype=np.float64))
        # cell k covers detector pixels [k*stride, (k+1)*stride); use its center
        det_xy = (cells + 0.5) * self.stride
        sizes = np.asarray(sizes, dtype=np.float64).reshape(2, 2)
        out = []
        for (x, y), (w, h) in zip(det_xy, sizes):
            out.append(Box2D(x * self.upscale, y * self.upscale, w * self.upscale, h * self.upscale))
        return tuple(out)
