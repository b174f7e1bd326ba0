import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from twohand.crop import (
    CenterHeatmapDecoder, GTBoxProvider, assemble_output, crop_affine, flip_params_back, flip_pose_back,
    image_to_crop_pose, image_to_union, prepare_hand_crop, signed_area, to_union_space, toggle_flip_tag,
    union_box,
)
from twohand.errors import SpaceMismatch
from twohand.geometry import Box2D, apply_affine, invert_affine
from twohand.hand_model import N_BONES, N_SHAPE, HandParams, hand_forward
from twohand.heatmap import Pose25D
from twohand.metrics import mrrpe
from twohand.synth import generate

boxes = st.builds(Box2D, st.floats(0, 500), st.floats(0, 500), st.floats(5, 200), st.floats(5, 200))


def test_crop_region_and_scale():
    c = prepare_hand_crop(Box2D(100, 100, 50, 50))
    assert (c.region.cx, c.region.cy, c.region.w, c.region.h) == (100, 100, 100, 100)
    assert np.allclose(c.affine.m[:, :2], np.eye(2) * 2.56)
    assert np.allclose(apply_affine(c.affine, [[50, 50], [150, 150]]), [[0, 0], [256, 256]])


def test_flip_maps_left_edge_to_last_pixel():
    c = prepare_hand_crop(Box2D(100, 100, 50, 50), flip=True)
    assert np.allclose(apply_affine(c.affine, [50, 120])[0], 255.0)
    assert c.space.endswith("|flipped")


@given(boxes, st.booleans())
def test_affine_inverse_round_trip(box, flip):
    c = prepare_hand_crop(box, flip)
    pts = np.random.default_rng(0).uniform(-100, 600, (20, 2))
    assert np.abs(apply_affine(invert_affine(c.affine), apply_affine(c.affine, pts)) - pts).max() < 1e-9


def test_flip_pose_back_examples():
    p = Pose25D(np.array([[0.0, 10.0, 0.01], [100.5, 3.0, -0.02]]), "crop:left|flipped")
    f = flip_pose_back(p)
    assert f.coords[0, 0] == 255.0 and f.space == "crop:left"
    assert np.array_equal(f.coords[:, 1:], p.coords[:, 1:])
    back = flip_pose_back(f)
    assert np.array_equal(back.coords, p.coords) and back.space == p.space


@given(st.lists(st.floats(-300, 600), min_size=3, max_size=3))
def test_flip_pose_involution_is_exact(xs):
    c = np.column_stack([xs, np.ones(3), np.zeros(3)])
    p = Pose25D(c, "crop:x")
    assert np.array_equal(flip_pose_back(flip_pose_back(p)).coords, p.coords)


def test_flip_params_back_mirrors_mesh_and_is_involution():
    rng = np.random.default_rng(1)
    for _ in range(20):
        p = HandParams(rng.normal(0, 0.6, (N_BONES, 3)), rng.normal(size=N_SHAPE), "right")
        f = flip_params_back(p)
        assert f.handedness == "left"
        assert np.abs(hand_forward(f).vertices - hand_forward(p).vertices * [-1, 1, 1]).max() < 1e-9
        ff = flip_params_back(f)
        assert np.array_equal(ff.theta, p.theta) and ff.handedness == "right"


def test_union_box_examples():
    a = Box2D(5, 5, 10, 10)
    assert union_box(a, a) == Box2D(5, 5, 10, 10)
    u = union_box(Box2D(5, 5, 10, 10), Box2D(25, 5, 10, 10))
    assert u.corners() == (0.0, -10.0, 30.0, 20.0)
    assert u.w == u.h == 30


@given(boxes, boxes)
def test_union_box_symmetric_and_enclosing(a, b):
    u = union_box(a, b)
    assert u == union_box(b, a)
    ux0, uy0, ux1, uy1 = u.corners()
    for bx in (a, b):
        x0, y0, x1, y1 = bx.corners()
        assert ux0 <= x0 + 1e-9 and uy0 <= y0 + 1e-9 and x1 <= ux1 + 1e-9 and y1 <= uy1 + 1e-9
    assert u.w == u.h


def test_to_union_identity_when_crop_is_union():
    box = Box2D(200, 220, 40, 60)
    c = prepare_hand_crop(box)
    pose = Pose25D(np.random.default_rng(2).uniform(0, 256, (21, 3)), c.space)
    out = to_union_space(pose, c, c.region)
    assert np.abs(out.coords[:, :2] - pose.coords[:, :2]).max() < 1e-9
    assert out.space.startswith("union:")


def test_to_union_space_rejects_foreign_tag():
    c = prepare_hand_crop(Box2D(200, 220, 40, 60), name="right")
    pose = Pose25D(np.zeros((21, 3)), "crop:left")
    with pytest.raises(SpaceMismatch):
        to_union_space(pose, c, Box2D(200, 200, 100, 100))


def test_two_path_consistency_and_depth_passthrough():
    for s in generate(7, 100):
        union = union_box(s.box_r, s.box_l, 1.25)
        for hand, j2d in (("right", s.joints2d_r), ("left", s.joints2d_l)):
            pose = s.pose25d(hand)
            out = to_union_space(pose, s.crop(hand), union)
            assert np.abs(out.coords[:, :2] - image_to_union(j2d, union)).max() < 1e-9
            assert np.array_equal(out.coords[:, 2], pose.coords[:, 2])
            # the flipped-back frame gives the same union coordinates
            out2 = to_union_space(flip_pose_back(pose), s.crop(hand), union)
            assert np.abs(out2.coords[:, :2] - out.coords[:, :2]).max() < 1e-9


def test_flip_normalizes_handedness():
    for s in generate(8, 50):
        wr, ir, pr = 0, 1, 7      # wrist, index base, pinky base
        right = image_to_crop_pose(s.joints2d_r, s.joints3d_r[:, 2], s.crop("right")).coords
        left_unflipped = apply_affine(crop_affine(s.crop("left").region), s.joints2d_l)
        left = s.pose25d("left").coords
        a_r = signed_area(right[wr], right[ir], right[pr])
        a_lu = signed_area(left_unflipped[wr], left_unflipped[ir], left_unflipped[pr])
        a_l = signed_area(left[wr], left[ir], left[pr])
        assert np.sign(a_l) == -np.sign(a_lu)
        assert a_l != 0 and a_r != 0


def test_assembly():
    rng = np.random.default_rng(3)
    mr = hand_forward(HandParams(rng.normal(0, 0.4, (N_BONES, 3)), np.zeros(N_SHAPE)))
    ml = hand_forward(HandParams(rng.normal(0, 0.4, (N_BONES, 3)), np.zeros(N_SHAPE), "left"))
    vr, jr, vl, jl = assemble_output(mr, ml, np.zeros(3)).combined()
    assert np.abs(jr[0] - jl[0]).max() < 1e-12
    vr, jr, vl, jl = assemble_output(mr, ml, [0.1, 0, 0]).combined()
    assert np.allclose(jl[0], [0.1, 0, 0], atol=1e-12)
    assert np.array_equal(vr, mr.vertices)
    t, t_gt = np.array([0.05, -0.02, 0.1]), np.array([0.04, 0.0, 0.13])
    out = assemble_output(mr, ml, t).combined()
    gt = assemble_output(mr, ml, t_gt).combined()
    err = mrrpe(out[1][0], out[3][0], gt[1][0], gt[3][0])
    assert err == pytest.approx(np.linalg.norm(t - t_gt) * 1000, abs=1e-9)


def test_toggle_flip_tag():
    assert toggle_flip_tag("crop:a") == "crop:a|flipped"
    assert toggle_flip_tag(toggle_flip_tag("crop:a")) == "crop:a"


def test_gt_box_provider():
    s = generate(9, 1)[0]
    assert GTBoxProvider().boxes(s) == (s.box_r, s.box_l)


def test_center_heatmap_decoder():
    h, w = 48, 64
    logits = np.full((2, h, w), -80.0)
    logits[0, 10, 20] = 0.0
    logits[1, 30, 5] = 0.0
    br, bl = CenterHeatmapDecoder(stride=4, upscale=2).decode(logits, [[30, 40], [12, 20]])
    # cell (20, 10) -> detector pixel center (82, 42) -> original (164, 84)
    assert (br.cx, br.cy, br.w, br.h) == pytest.approx((164, 84, 60, 80))
    assert (bl.cx, bl.cy, bl.w, bl.h) == pytest.approx((44, 244, 24, 40))
