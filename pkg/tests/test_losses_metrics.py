import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from twohand import autodiff as ad
from twohand.autodiff import Tensor, check_gradient
from twohand.camera import Camera, project_perspective
from twohand.crop import union_box, prepare_hand_crop
from twohand.errors import BehindCamera, InvalidConfig, ShapeMismatch
from twohand.geometry import Affine2D, Box2D
from twohand.losses import LossReport, combine_losses, weak_supervision_loss
from twohand.metrics import (
    interaction_stats, mpjpe, mpvpe, mrrpe, mrrpe_over_frames, scale_stats, write_metric_csv,
)
from twohand.synth import generate

CAM = Camera()


def mpjpe_oracle(pred, gt, root=0):
    total, n = 0.0, 0
    for j in range(len(pred)):
        d = 0.0
        for c in range(3):
            d += ((pred[j][c] - pred[root][c]) - (gt[j][c] - gt[root][c])) ** 2
        total += math.sqrt(d)
        n += 1
    return total / n * 1000.0


def mrrpe_oracle(pr, pl, gr, gl):
    return math.sqrt(sum(((pl[c] - pr[c]) - (gl[c] - gr[c])) ** 2 for c in range(3))) * 1000.0


# ---------------------------------------------------------------------------
# projection


def test_projection_examples():
    assert np.allclose(project_perspective(np.array([[0.0, 0.0, 0.7]]), CAM), [[CAM.cx, CAM.cy]])
    assert project_perspective(np.array([[0.1, 0.0, 0.5]]), CAM)[0, 0] == pytest.approx(556.0, abs=1e-9)
    p = np.array([[0.05, -0.03, 0.4]])
    a = project_perspective(p, CAM) - [CAM.cx, CAM.cy]
    b = project_perspective(p * [1, 1, 2], CAM) - [CAM.cx, CAM.cy]
    assert np.allclose(b, a / 2, atol=1e-12)


def test_projection_behind_camera():
    pts = np.array([[0, 0, 0.5], [0, 0, -0.1], [0, 0, 0.3], [0, 0, 0.0]])
    with pytest.raises(BehindCamera) as err:
        project_perspective(pts, CAM)
    assert err.value.indices == [1, 3]


# ---------------------------------------------------------------------------
# metrics


def test_mpjpe_examples():
    rng = np.random.default_rng(0)
    gt = rng.normal(size=(21, 3))
    assert mpjpe(gt, gt) == 0.0
    assert mpjpe(gt + [0.3, -1.0, 2.0], gt) == pytest.approx(0.0, abs=1e-9)
    pred = rng.normal(size=(21, 3))
    assert abs(mpjpe(pred, gt) - mpjpe_oracle(pred.tolist(), gt.tolist())) < 1e-9
    with pytest.raises(ShapeMismatch):
        mpjpe(pred[:20], gt)


@given(hnp.arrays(np.float64, (21, 3), elements=st.floats(-1, 1)),
       hnp.arrays(np.float64, (21, 3), elements=st.floats(-1, 1)),
       hnp.arrays(np.float64, (3,), elements=st.floats(-5, 5)),
       hnp.arrays(np.float64, (3,), elements=st.floats(-5, 5)))
def test_mpjpe_root_alignment_invariance(pred, gt, a, b):
    base = mpjpe(pred, gt)
    assert abs(mpjpe(pred + a, gt + b) - base) < 1e-9
    assert abs(base - mpjpe_oracle(pred.tolist(), gt.tolist())) < 1e-9


def test_mpvpe_matches_oracle_and_alignment():
    rng = np.random.default_rng(1)
    pred, gt = rng.normal(size=(128, 3)), rng.normal(size=(128, 3))
    ref = sum(math.dist(p, g) for p, g in zip(pred.tolist(), gt.tolist())) / 128 * 1000
    assert abs(mpvpe(pred, gt) - ref) < 1e-9
    assert mpvpe(gt, gt) == 0.0
    off = np.array([0.2, 0.1, -0.4])
    assert abs(mpvpe(pred + off, gt, pred_root=off) - ref) < 1e-9
    with pytest.raises(ShapeMismatch):
        mpvpe(pred, gt[:5])


def test_mrrpe_examples():
    z = np.zeros(3)
    assert mrrpe(z, z, z, z) == 0.0
    off = np.array([0.3, -0.2, 1.0])
    r, l = np.array([0.0, 0.1, 0.5]), np.array([0.05, 0.1, 0.52])
    assert mrrpe(r + off, l + off, r, l) == pytest.approx(0.0, abs=1e-9)
    assert mrrpe(z, np.array([0.01, 0, 0]), z, z) == pytest.approx(10.0, abs=1e-12)


@given(hnp.arrays(np.float64, (4, 3), elements=st.floats(-1, 1)),
       hnp.arrays(np.float64, (3,), elements=st.floats(-5, 5)),
       hnp.arrays(np.float64, (3,), elements=st.floats(-5, 5)))
def test_mrrpe_invariances(v, a, b):
    pr, pl, gr, gl = v
    base = mrrpe(pr, pl, gr, gl)
    assert abs(base - mrrpe_oracle(pr, pl, gr, gl)) < 1e-9
    assert abs(mrrpe(pr + a, pl + a, gr + b, gl + b) - base) < 1e-9


def test_mrrpe_skips_single_hand_frames():
    t_pred = np.array([[0.01, 0, 0], [5.0, 5.0, 5.0], [0, 0.02, 0]])
    t_gt = np.zeros((3, 3))
    mm, skipped = mrrpe_over_frames(t_pred, t_gt, [True, False, True])
    assert skipped == 1 and mm == pytest.approx(15.0)


# ---------------------------------------------------------------------------
# dataset statistics


def test_interaction_stats_constructed():
    a = Box2D(100, 100, 40, 40)
    far = Box2D(400, 400, 40, 40)
    assert all(v == 0.0 for t, v in interaction_stats([(a, far)] * 5).items() if t > 0)
    assert interaction_stats([(a, a)] * 5)[0.1] == 1.0
    # 3 of 10 pairs overlap heavily, 2 barely (IoU ≈ 0.05), 5 are disjoint
    near = Box2D(100 + 40 * 0.9, 100, 40, 40)
    pairs = [(a, Box2D(104, 100, 40, 40))] * 3 + [(a, near)] * 2 + [(a, far)] * 5
    stats = interaction_stats(pairs)
    assert stats[0.1] == pytest.approx(0.3) and stats[0.0] == pytest.approx(0.5)


def test_scale_stats_examples():
    from twohand.metrics import normalized_scale
    b = Box2D(50, 50, 40, 40)
    assert np.allclose(normalized_scale(b, b), 1.0)
    assert np.allclose(normalized_scale(b, Box2D(50, 50, 80, 80)), 0.5)
    assert np.allclose(scale_stats([(b, Box2D(300, 300, 20, 30))], "single_crop"), 0.5)


def test_scale_ordering_on_interacting_scenes():
    scenes = [s for s in generate(4, 200) if s.interacting]
    single = scale_stats(scenes, "single_crop")
    union = scale_stats(scenes, "two_hand_union")
    assert np.all(union < single)
    with pytest.raises(ValueError):
        scale_stats(scenes, "whole_image")


def test_union_contains_both_crops():
    s = generate(4, 1)[0]
    cr, cl = prepare_hand_crop(s.box_r).region, prepare_hand_crop(s.box_l).region
    u = union_box(cr, cl)
    x0, y0, x1, y1 = u.corners()
    for b in (cr, cl):
        bx0, by0, bx1, by1 = b.corners()
        assert x0 <= bx0 + 1e-9 and y0 <= by0 + 1e-9 and bx1 <= x1 + 1e-9 and by1 <= y1 + 1e-9


def test_metric_csv(tmp_path):
    path = tmp_path / "m.csv"
    write_metric_csv([("hm25d", "all", "mrrpe", 12.5), ("hm25d", "mocap", "mpjpe", 3.25)], path)
    rows = list(csv.reader(path.open()))
    assert rows[0] == ["config", "split", "metric", "value_mm"]
    assert rows[1][:3] == ["hm25d", "all", "mrrpe"] and float(rows[1][3]) == 12.5


# ---------------------------------------------------------------------------
# losses


def test_loss_report_total():
    terms = {k: Tensor(np.float64(v)) for k, v in zip(
        ("box_l1", "mano_l1", "joint_l1", "reltrans_l1", "weak2d_l1"), (0.1, 0.2, 0.3, 0.4, 0.5))}
    total, rep = combine_losses(terms)
    assert abs(rep.total - 1.5) < 1e-12 and abs(float(total.data) - 1.5) < 1e-12
    total, rep = combine_losses(terms, {"weak2d_l1": 2.0, "box_l1": 0.0})
    assert abs(rep.total - (0.2 + 0.3 + 0.4 + 1.0)) < 1e-12
    assert abs(float(total.data) - rep.total) < 1e-12
    assert rep.mano_l1 == pytest.approx(0.2)
    with pytest.raises(InvalidConfig):
        combine_losses({"bogus": Tensor(1.0)})
    assert isinstance(rep, LossReport)


def _weak_fixture(seed=0):
    s = generate(seed, 1)[0]
    u = union_box(prepare_hand_crop(s.box_r).region, prepare_hand_crop(s.box_l).region, 1.25)
    # image -> 256-pixel union space
    k = 256.0 / max(u.w, u.h)
    A = np.array([[k, 0.0, 128.0 - k * u.cx], [0.0, k, 128.0 - k * u.cy]])
    gt = np.stack([s.joints2d_r, s.joints2d_l]) @ A[:, :2].T + A[:, 2]
    return s, A, gt


def test_weak_loss_zero_at_ground_truth():
    s, A, gt = _weak_fixture()
    loss = weak_supervision_loss(s.joints3d_r, s.joints3d_l, s.g_r, s.t_gt, s.camera, gt, Affine2D(A))
    assert float(loss.data) < 1e-9


def test_weak_loss_flags_wrong_global_depth():
    s, A, gt = _weak_fixture(1)
    g_bad = s.g_r + [0.0, 0.0, 0.1]
    loss = weak_supervision_loss(s.joints3d_r, s.joints3d_l, g_bad, s.t_gt, s.camera, gt, A)
    assert float(loss.data) > 1.0
    # the relative-translation L1 alone sees nothing wrong
    assert float(ad.l1_loss(s.t_gt, s.t_gt).data) == 0.0


def test_weak_loss_gradient_wrt_t():
    s, A, gt = _weak_fixture(2)
    fn = lambda x: weak_supervision_loss(s.joints3d_r, s.joints3d_l, s.g_r, x[0], s.camera, gt, A)
    ok, err = check_gradient(fn, [s.t_gt + [0.01, -0.02, 0.015]])
    assert ok, err


def test_weak_loss_visibility_and_constraints():
    s, A, gt = _weak_fixture(3)
    t_bad = s.t_gt + [0.05, 0.0, 0.0]
    full = float(weak_supervision_loss(s.joints3d_r, s.joints3d_l, s.g_r, t_bad, s.camera, gt, A).data)
    right_only = float(weak_supervision_loss(s.joints3d_r, s.joints3d_l, s.g_r, t_bad, s.camera, gt, A,
                                             visible=[True, False]).data)
    assert full > 0 and right_only < 1e-9
    with pytest.raises(InvalidConfig):
        weak_supervision_loss(s.joints3d_r, s.joints3d_l, s.g_r, s.t_gt, s.camera, gt, A, shared_beta=False)
    with pytest.raises(BehindCamera):
        weak_supervision_loss(s.joints3d_r, s.joints3d_l, s.g_r * [1, 1, -1], s.t_gt, s.camera, gt, A)


@given(st.integers(0, 50), hnp.arrays(np.float64, (3,), elements=st.floats(-0.02, 0.02)))
def test_weak_loss_zero_iff_projections_match(seed, dt):
    s, A, gt = _weak_fixture(seed)
    loss = float(weak_supervision_loss(s.joints3d_r, s.joints3d_l, s.g_r, s.t_gt + dt, s.camera, gt, A).data)
    moved = project_perspective(s.joints3d_l + s.g_l + dt, s.camera)
    match = np.abs(moved - s.joints2d_l).max() < 1e-9
    assert (loss < 1e-9) == match
