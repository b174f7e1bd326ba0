import numpy as np
import pytest

from twohand.autodiff import Tensor, check_gradient
from twohand.errors import ConfigError, InvalidConfig, SpaceMismatch
from twohand.hand_model import N_JOINTS
from twohand.synth import SynthConfig, generate
from twohand.transnet import (
    TransNet, TransNetConfig, baseline_mrrpe, batch_inputs, build_input, heldout_mrrpe, predict,
    prepare_sample, train, write_history_csv,
)


@pytest.fixture(scope="module")
def scenes():
    return generate(21, 12)


@pytest.fixture(scope="module")
def samples(scenes):
    return [prepare_sample(s, TransNetConfig()) for s in scenes]


def test_config_validation():
    with pytest.raises(InvalidConfig):
        TransNetConfig(input_repr="depth")
    with pytest.raises(InvalidConfig):
        TransNetConfig(head="attention")
    with pytest.raises(InvalidConfig):
        TransNetConfig(depth_mode="conv3d")
    with pytest.raises(InvalidConfig):
        TransNetConfig(dims=(16, 16))
    with pytest.raises(InvalidConfig):
        TransNetConfig.from_dict({"lr": 1e-3, "momentum": 0.9})
    cfg = TransNetConfig(head="gap", dims=(8, 16, 16))
    assert TransNetConfig.from_dict(cfg.to_dict()) == cfg


def test_input_channel_counts(samples):
    s = samples[0]
    assert build_input(s.pose_r, s.pose_l, TransNetConfig(input_repr="hm2d")).shape == (42, 16, 16)
    assert build_input(s.pose_r, s.pose_l, TransNetConfig()).shape == (672, 16, 16)
    img = np.zeros((16, 16, 3))
    assert build_input(s.pose_r, s.pose_l, TransNetConfig(input_repr="image"), img).shape == (3, 16, 16)
    assert build_input(s.pose_r, s.pose_l, TransNetConfig(input_repr="image_plus_hm"), img).shape == (675, 16, 16)
    for repr_ in ("hm25d", "hm2d", "image", "image_plus_hm"):
        cfg = TransNetConfig(input_repr=repr_)
        x, _, _ = batch_inputs(samples[:2], cfg)
        assert x.shape[1] == cfg.input_channels()


def test_identical_poses_give_identical_halves(samples):
    s = samples[1]
    for repr_, per_hand in (("hm2d", N_JOINTS), ("hm25d", N_JOINTS * 16)):
        x = build_input(s.pose_r, s.pose_r, TransNetConfig(input_repr=repr_))
        assert np.array_equal(x[:per_hand], x[per_hand:])


def test_depth_folding_order(samples):
    s = samples[2]
    cfg = TransNetConfig()
    x = build_input(s.pose_r, s.pose_l, cfg)
    # right wrist channel block j=0 peaks at its depth slice
    z_slice = (s.pose_r.coords[0, 2] / cfg.z_range + 0.5) * 16
    per_slice = x[:16].reshape(16, -1).max(axis=1)
    assert abs(int(np.argmax(per_slice)) - z_slice) <= 1.0


def test_non_union_pose_rejected(scenes):
    cfg = TransNetConfig()
    crop_pose = scenes[0].pose25d("right")
    with pytest.raises(SpaceMismatch):
        build_input(crop_pose, crop_pose, cfg)
    with pytest.raises(InvalidConfig):
        s = prepare_sample(scenes[0], cfg)
        build_input(s.pose_r, s.pose_l, TransNetConfig(input_repr="image"))


@pytest.mark.parametrize("head", ["wrist", "gap", "all_joints", "fc"])
def test_untrained_zero_head_predicts_zero(samples, head):
    cfg = TransNetConfig(head=head)
    model = TransNet(cfg, np.random.default_rng(0))
    assert np.array_equal(predict(model, samples[:4], cfg), np.zeros((4, 3)))


def test_gradient_wrt_input_heatmap(samples):
    cfg = TransNetConfig(dims=(2, 16, 16), channels=(3, 4, 4), dtype="float64")
    rng = np.random.default_rng(1)
    model = TransNet(cfg, rng)
    model.out.weight.data[...] = rng.normal(0, 0.3, model.out.weight.shape)
    s = samples[3]
    x, w, c = batch_inputs([s], cfg)
    x = x[:, :6] + rng.normal(0, 0.2, (1, 6, 16, 16))
    model.backbone.blocks[0].weight = Tensor(rng.normal(0, 0.5, (3, 6, 3, 3)), requires_grad=True)
    ok, err = check_gradient(lambda t: model(t[0], w, c), [x], rng=rng, h=1e-6)
    assert ok, err


def _head_model(head):
    cfg = TransNetConfig(head=head, dtype="float64")
    rng = np.random.default_rng(2)
    model = TransNet(cfg, rng)
    model.out.weight.data[...] = rng.normal(0, 1.0, model.out.weight.shape)
    feat = Tensor(rng.normal(size=(1, cfg.channels[-1], 4, 4)))
    coords = np.concatenate([rng.uniform(20, 230, (1, 2 * N_JOINTS, 2)), np.zeros((1, 2 * N_JOINTS, 1))], -1)
    return model, feat, coords


def test_wrist_head_follows_wrist_position():
    model, feat, coords = _head_model("wrist")
    w = coords[:, [0, N_JOINTS], :2]
    a = model.head_forward(feat, w, coords).data
    moved = w + np.array([[[128.0, 0.0], [0.0, 128.0]]])   # one feature cell (16 px heatmap grid, /8)
    b = model.head_forward(feat, moved, coords).data
    assert not np.allclose(a, b)


def test_gap_head_ignores_wrists_and_cell_order():
    model, feat, coords = _head_model("gap")
    w = coords[:, [0, N_JOINTS], :2]
    a = model.head_forward(feat, w, coords).data
    assert np.array_equal(a, model.head_forward(feat, w + 50.0, coords).data)
    perm = np.random.default_rng(3).permutation(16)
    shuffled = Tensor(feat.data.reshape(1, -1, 16)[..., perm].reshape(feat.shape))
    assert np.allclose(model.head_forward(shuffled, w, coords).data, a, atol=1e-12)
    wm, wfeat, wcoords = _head_model("wrist")
    ww = wcoords[:, [0, N_JOINTS], :2]
    shuffled = Tensor(wfeat.data.reshape(1, -1, 16)[..., perm].reshape(wfeat.shape))
    assert not np.allclose(wm.head_forward(shuffled, ww, wcoords).data, wm.head_forward(wfeat, ww, wcoords).data)


@pytest.mark.parametrize("repr_", ["hm25d", "hm2d"])
def test_heatmap_inputs_are_appearance_invariant(scenes, repr_):
    cfg = TransNetConfig(input_repr=repr_)
    model = TransNet(cfg, np.random.default_rng(4))
    model.out.weight.data[...] = np.random.default_rng(5).normal(0, 1, model.out.weight.shape)
    smp = [prepare_sample(s, cfg) for s in scenes[:4]]
    a = predict(model, smp, cfg, domain="mocap")
    b = predict(model, smp, cfg, domain="itw_B")
    assert a.tobytes() == b.tobytes()


def test_image_input_depends_on_appearance(scenes):
    cfg = TransNetConfig(input_repr="image")
    model = TransNet(cfg, np.random.default_rng(4))
    model.out.weight.data[...] = np.random.default_rng(5).normal(0, 1, model.out.weight.shape)
    smp = [prepare_sample(s, cfg) for s in scenes[:4]]
    assert not np.array_equal(predict(model, smp, cfg, domain="mocap"), predict(model, smp, cfg, domain="itw_B"))


def test_weak_supervision_needs_itw(scenes):
    with pytest.raises(ConfigError):
        train(TransNetConfig(weak_supervision=True), scenes, epochs=1)


def test_training_is_deterministic(scenes):
    cfg = TransNetConfig(batch_size=4)
    a = train(cfg, scenes, scenes[:4], epochs=2, seed=3)
    b = train(cfg, scenes, scenes[:4], epochs=2, seed=3)
    assert a.history == b.history
    for pa, pb in zip(a.model.parameters().values(), b.model.parameters().values()):
        assert pa.data.tobytes() == pb.data.tobytes()


def test_weak_training_runs(tmp_path):
    scenes = generate(22, 16, SynthConfig(itw_fraction=0.5))
    res = train(TransNetConfig(batch_size=4, weak_supervision=True), scenes, scenes[:4], epochs=1, seed=0)
    assert np.isfinite(res.final())
    write_history_csv(res.history, tmp_path / "h.csv")
    lines = (tmp_path / "h.csv").read_text().splitlines()
    assert lines[0] == "epoch,split,mrrpe_mm,loss" and len(lines) == 3


def test_singleton_overfit():
    scene = generate(23, 1)
    # one step per epoch; L1 under Adam oscillates around the optimum, so the best value counts
    res = train(TransNetConfig(batch_size=2), scene, scene, epochs=500, seed=0)
    curve = [r["mrrpe_mm"] for r in res.history if r["split"] == "train"]
    assert len(curve) == 500 and min(curve) < 1.0
    assert baseline_mrrpe(scene) > 30.0


def test_heldout_mrrpe_matches_manual(samples):
    cfg = TransNetConfig(head="fc")
    model = TransNet(cfg, np.random.default_rng(6))
    model.mlp.out.bias.data[...] = [0.01, 0.02, -0.03]
    t = np.array([s.t_gt for s in samples])
    expected = np.mean(np.linalg.norm(np.array([0.01, 0.02, -0.03]) - t, axis=1)) * 1000
    assert heldout_mrrpe(model, samples, cfg) == pytest.approx(expected, rel=1e-5)
