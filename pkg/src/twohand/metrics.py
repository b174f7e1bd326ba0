"""Evaluation metrics (millimeters) and dataset statistics."""
from __future__ import annotations

import csv

import numpy as np

from .crop import prepare_hand_crop, union_box
from .errors import ShapeMismatch
from .geometry import Box2D, box_iou, squarify_box

INTERACTION_THRESHOLDS = (0.0, 0.05, 0.1, 0.2, 0.3, 0.5)


def _pair(a, b, what):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(a.shape, b.shape, what)
    return a, b


def mpjpe(pred, gt, root=0):
    """Mean joint error after subtracting each set's own root joint, in mm.

    Shapes ``(..., J, 3)``; the mean runs over all joints and batch entries.
    """
    pred, gt = _pair(pred, gt, "mpjpe")
    p = pred - pred[..., root:root + 1, :]
    g = gt - gt[..., root:root + 1, :]
    return float(np.mean(np.linalg.norm(p - g, axis=-1)) * 1000.0)


def mpvpe(pred_verts, gt_verts, pred_root=None, gt_root=None):
    """Mean vertex error in mm; roots (``(..., 3)``) default to zero for root-relative meshes."""
    pred, gt = _pair(pred_verts, gt_verts, "mpvpe")
    if pred_root is not None:
        pred = pred - np.asarray(pred_root, dtype=np.float64)[..., None, :]
    if gt_root is not None:
        gt = gt - np.asarray(gt_root, dtype=np.float64)[..., None, :]
    return float(np.mean(np.linalg.norm(pred - gt, axis=-1)) * 1000.0)


def mrrpe(pred_root_r, pred_root_l, gt_root_r, gt_root_l):
    """Error of the right-to-left wrist offset in mm (mean over leading dims)."""
    pr, pl = _pair(pred_root_r, pred_root_l, "mrrpe prediction")
    gr, gl = _pair(gt_root_r, gt_root_l, "mrrpe ground truth")
    _pair(pr, gr, "mrrpe")
    return float(np.mean(np.linalg.norm((pl - pr) - (gl - gr), axis=-1)) * 1000.0)


def rel_trans_errors(t_pred, t_gt):
    """Per-sample ``‖t_pred − t_gt‖`` in mm."""
    a, b = _pair(t_pred, t_gt, "relative translation")
    return np.linalg.norm(a - b, axis=-1) * 1000.0


def mrrpe_over_frames(t_pred, t_gt, both_present):
    """MRRPE over frames with both hands present; returns ``(mm, skipped)``.

    The relative root offset is undefined when a hand is absent, so those
    frames are dropped and counted.
    """
    mask = np.asarray(both_present, dtype=bool)
    skipped = int((~mask).sum())
    if not mask.any():
        return float("nan"), skipped
    err = rel_trans_errors(np.asarray(t_pred)[mask], np.asarray(t_gt)[mask])
    return float(np.mean(err)), skipped


def _boxes(s):
    if isinstance(s, tuple):
        return s
    return s.box_r, s.box_l


def interaction_stats(scenes, thresholds=INTERACTION_THRESHOLDS):
    """Fraction of two-hand samples whose box IoU exceeds each threshold."""
    ious = np.array([box_iou(*_boxes(s)) for s in scenes], dtype=np.float64)
    if ious.size == 0:
        return {float(t): 0.0 for t in thresholds}
    return {float(t): float(np.mean(ious > t)) for t in thresholds}


def normalized_scale(hand_box: Box2D, enclosing: Box2D):
    """Squared hand box side over the enclosing input's (w, h)."""
    s = squarify_box(hand_box)
    return np.array([s.w / enclosing.w, s.h / enclosing.h])


def scale_stats(scenes, mode="single_crop"):
    """Mean normalized hand scale per input-cropping policy.

    ``single_crop``: each hand relative to its own doubled, squared crop.
    ``two_hand_union``: each hand relative to the squared union of both
    hands' crop regions, i.e. a two-hand input built with the same context
    margin as the single-hand crops.
    """
    vals = []
    for s in scenes:
        br, bl = _boxes(s)
        cr, cl = prepare_hand_crop(br).region, prepare_hand_crop(bl).region
        if mode == "single_crop":
            vals += [normalized_scale(br, cr), normalized_scale(bl, cl)]
        elif mode == "two_hand_union":
            u = union_box(cr, cl)
            vals += [normalized_scale(br, u), normalized_scale(bl, u)]
        else:
            raise ValueError(f"unknown scale mode {mode!r}")
    if not vals:
        return np.array([np.nan, np.nan])
    return np.mean(np.array(vals), axis=0)


def scale_histogram(scenes, mode, bins=10):
    """Histogram of per-hand normalized widths over [0, 1]."""
    vals = []
    for s in scenes:
        br, bl = _boxes(s)
        cr, cl = prepare_hand_crop(br).region, prepare_hand_crop(bl).region
        if mode == "single_crop":
            vals += [normalized_scale(br, cr)[0], normalized_scale(bl, cl)[0]]
        else:
            u = union_box(cr, cl)
            vals += [normalized_scale(br, u)[0], normalized_scale(bl, u)[0]]
    counts, edges = np.histogram(vals, bins=bins, range=(0.0, 1.0))
    return counts, edges


def write_metric_csv(rows, path):
    """Rows of ``(config, split, metric, value_mm)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["config", "split", "metric", "value_mm"])
        for cfg, split, metric, value in rows:
            w.writerow([cfg, split, metric, f"{value:.6f}"])
