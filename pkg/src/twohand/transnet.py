"""Relative-translation regressor from two hands' 2.5D poses in union-box space.

Input variants: ``hm25d`` (volumetric Gaussians, depth folded into channels),
``hm2d`` (depth dropped), ``image`` (two-hand skeleton render) and
``image_plus_hm``. Heads: ``wrist`` (bilinear features at both wrists plus
their coordinates), ``gap`` (global average pooling), ``all_joints``
(features at all 2J joints) and ``fc`` (MLP on raw coordinates, no CNN).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .autodiff import MLP, CompactCNN, Linear, Module, Tensor, bilinear_gather, global_avg_pool
from .camera import Camera
from .crop import UNION_RES, crop_affine, image_to_union, to_union_space, union_box
from .errors import ConfigError, InvalidConfig, SpaceMismatch, TrainingDiverged
from .hand_model import N_JOINTS
from .heatmap import Pose25D, encode_gaussian_2d, encode_gaussian_hwc
from .losses import weak_supervision_loss
from .synth import SceneRecord, rasterize_union

INPUT_REPRS = ("hm25d", "hm2d", "image", "image_plus_hm")
HEADS = ("wrist", "gap", "all_joints", "fc")
DEPTH_MODES = ("channels", "conv3d")


@dataclass(frozen=True)
class TransNetConfig:
    input_repr: str = "hm25d"
    head: str = "wrist"
    dims: tuple = (16, 16, 16)
    channels: tuple = (32, 64, 64)
    sigma: float = 2.5
    z_range: float = 0.4
    union_margin: float = 1.25
    union_res: tuple = UNION_RES
    normalize_heatmaps: bool = False
    depth_mode: str = "channels"
    weak_supervision: bool = False
    weak_weight: float = 1.0
    reltrans_weight: float = 1.0
    fc_hidden: int = 256
    lr: float = 1e-3
    lr_drop_epoch: int = 4
    lr_drop_factor: float = 10.0
    batch_size: int = 64
    dtype: str = "float32"

    def __post_init__(self):
        if self.input_repr not in INPUT_REPRS:
            raise InvalidConfig(f"input_repr must be one of {INPUT_REPRS}, got {self.input_repr!r}")
        if self.head not in HEADS:
            raise InvalidConfig(f"head must be one of {HEADS}, got {self.head!r}")
        if self.depth_mode not in DEPTH_MODES:
            raise InvalidConfig(f"depth_mode must be one of {DEPTH_MODES}")
        if self.depth_mode == "conv3d":
            # TODO(volumetric backbone): 3D convolutions over the depth axis are not implemented yet
            raise InvalidConfig("depth_mode=conv3d is not implemented; use 'channels'")
        if len(self.dims) != 3 or min(self.dims) <= 0:
            raise InvalidConfig(f"dims must be three positive sizes, got {self.dims}")
        if self.batch_size < 2 or self.lr <= 0:
            raise InvalidConfig("batch_size must be >= 2 and lr positive")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d):
        known = {f.name: f for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise InvalidConfig(f"unknown TransNet settings: {sorted(unknown)}")
        kw = {}
        for k, v in d.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        return cls(**kw)

    def input_channels(self):
        D, H, W = self.dims
        hm = 2 * N_JOINTS * D
        return {"hm25d": hm, "hm2d": 2 * N_JOINTS, "image": 3, "image_plus_hm": 3 + hm}[self.input_repr]


# ---------------------------------------------------------------------------
# per-scene geometry in union space


@dataclass
class TransSample:
    """Everything TransNet needs from one scene, already in union-box pixels."""
    scene: SceneRecord
    union: object
    pose_r: Pose25D
    pose_l: Pose25D
    t_gt: np.ndarray
    gt2d_union: np.ndarray       # 2×J×2 (right, left)
    union_affine: np.ndarray     # 2×3, image -> union
    images: dict = field(default_factory=dict, repr=False)


def union_for_scene(scene: SceneRecord, cfg: TransNetConfig):
    return union_box(scene.box_r, scene.box_l, cfg.union_margin)


def prepare_sample(scene: SceneRecord, cfg: TransNetConfig, pose_r=None, pose_l=None) -> TransSample:
    """Move both hands' crop-space 2.5D poses into union space.

    ``pose_r``/``pose_l`` default to ground truth; the left pose may be in
    its flipped crop frame, the crop bookkeeping undoes that.
    """
    u = union_for_scene(scene, cfg)
    pr = scene.pose25d("right") if pose_r is None else pose_r
    pl = scene.pose25d("left") if pose_l is None else pose_l
    ur = to_union_space(pr, scene.crop("right"), u, cfg.union_res)
    ul = to_union_space(pl, scene.crop("left"), u, cfg.union_res)
    gt2d = np.stack([image_to_union(scene.joints2d_r, u, cfg.union_res),
                     image_to_union(scene.joints2d_l, u, cfg.union_res)])
    return TransSample(scene, u, ur, ul, scene.t_gt.copy(), gt2d, crop_affine(u, cfg.union_res).m)


def _check_union(pose: Pose25D):
    if not pose.space.startswith("union:"):
        raise SpaceMismatch(f"TransNet needs union-space poses, got {pose.space!r}")


def _hm25d_hwc(pose: Pose25D, cfg: TransNetConfig):
    hm = encode_gaussian_hwc(pose.coords, cfg.dims, pose.size, cfg.sigma, cfg.z_range, cfg.np_dtype)
    if cfg.normalize_heatmaps:
        D, H, W = cfg.dims
        per_joint = hm.reshape(H, W, N_JOINTS, D).sum(axis=(0, 1, 3))
        hm = hm / np.repeat(np.maximum(per_joint, 1e-12), D).astype(hm.dtype)
    return hm


def _hm2d_hwc(pose: Pose25D, cfg: TransNetConfig):
    D, H, W = cfg.dims
    return np.transpose(encode_gaussian_2d(pose.coords, (H, W), pose.size, cfg.sigma), (1, 2, 0))


def build_input_hwc(pose_r_union: Pose25D, pose_l_union: Pose25D, cfg: TransNetConfig, image=None):
    """Network input for one scene in channels-last layout, ``H×W×C``."""
    _check_union(pose_r_union)
    _check_union(pose_l_union)
    parts = []
    if cfg.input_repr in ("image", "image_plus_hm"):
        if image is None:
            raise InvalidConfig(f"input_repr={cfg.input_repr} needs a rendered image")
        parts.append(np.asarray(image))
    if cfg.input_repr in ("hm25d", "image_plus_hm"):
        parts += [_hm25d_hwc(pose_r_union, cfg), _hm25d_hwc(pose_l_union, cfg)]
    elif cfg.input_repr == "hm2d":
        parts += [_hm2d_hwc(pose_r_union, cfg), _hm2d_hwc(pose_l_union, cfg)]
    return np.concatenate(parts, axis=-1).astype(cfg.np_dtype, copy=False)


def build_input(pose_r_union: Pose25D, pose_l_union: Pose25D, cfg: TransNetConfig, image=None):
    """Network input for one scene, ``C×H×W``.

    hm25d folds depth into channels as ``channel = j * D + d`` for the right
    hand, then the left hand. ``image`` is an ``H×W×3`` union-space render,
    required for the image variants and placed first.
    """
    return np.ascontiguousarray(np.transpose(build_input_hwc(pose_r_union, pose_l_union, cfg, image), (2, 0, 1)))


def sample_image(sample: TransSample, cfg: TransNetConfig, domain=None):
    dom = sample.scene.domain if domain is None else domain
    if dom not in sample.images:
        D, H, W = cfg.dims
        sample.images[dom] = rasterize_union(sample.scene, sample.union, (W, H), dom)
    return sample.images[dom]


def batch_inputs(samples, cfg: TransNetConfig, domain=None):
    """Stack network inputs, wrist pixels (N×2×2) and coordinates (N×2J×3)."""
    needs_img = cfg.input_repr in ("image", "image_plus_hm")
    needs_cnn = cfg.head != "fc"
    xs = []
    for s in samples:
        if needs_cnn:
            img = sample_image(s, cfg, domain) if needs_img else None
            xs.append(build_input_hwc(s.pose_r, s.pose_l, cfg, img))
    # N×C×H×W view of a channels-last buffer
    x = np.stack(xs).transpose(0, 3, 1, 2) if xs else None
    coords = np.stack([np.concatenate([s.pose_r.coords, s.pose_l.coords]) for s in samples])
    wrists = coords[:, [0, N_JOINTS], :2]
    return x, wrists, coords


# ---------------------------------------------------------------------------
# model


class TransNet(Module):
    def __init__(self, cfg: TransNetConfig, rng):
        self.cfg = cfg
        dt = cfg.np_dtype
        C = cfg.channels[-1]
        if cfg.head == "fc":
            self.mlp = MLP(2 * N_JOINTS * 3, 3, rng, hidden=cfg.fc_hidden, dtype=dt)
            return
        self.backbone = CompactCNN(cfg.input_channels(), cfg.channels, rng, dtype=dt)
        n_in = {"wrist": 2 * C + 4, "gap": C, "all_joints": 2 * N_JOINTS * C}[cfg.head]
        self.out = Linear(n_in, 3, rng, dtype=dt, zero_init=True)

    def feature_coords(self, px):
        """Union pixels -> continuous feature-map cell coordinates."""
        D, H, W = self.cfg.dims
        scale = np.array([W / self.cfg.union_res[0], H / self.cfg.union_res[1]]) / self.backbone.stride
        return np.asarray(px) * scale

    def features(self, x):
        return self.backbone(ad.as_tensor(x))

    def head_forward(self, feat, wrists, coords):
        cfg = self.cfg
        n = feat.shape[0]
        dt = feat.dtype
        if cfg.head == "gap":
            return self.out(global_avg_pool(feat))
        if cfg.head == "wrist":
            f = bilinear_gather(feat, self.feature_coords(wrists).astype(dt))      # N×2×C
            norm = (np.asarray(wrists) / np.array(cfg.union_res)).reshape(n, 4).astype(dt)
            return self.out(ad.concat([f.reshape(n, -1), Tensor(norm)], axis=1))
        f = bilinear_gather(feat, self.feature_coords(coords[..., :2]).astype(dt))  # N×2J×C
        return self.out(f.reshape(n, -1))

    def forward(self, x, wrists, coords):
        """``x`` N×C_in×H×W (ignored by the fc head) -> N×3 relative translation."""
        if self.cfg.head == "fc":
            return self.mlp(Tensor(self.normalize_coords(coords)))
        return self.head_forward(self.features(x), wrists, coords)

    def normalize_coords(self, coords):
        c = np.asarray(coords, dtype=np.float64)
        res = self.cfg.union_res
        out = np.stack([c[..., 0] / res[0] - 0.5, c[..., 1] / res[1] - 0.5, c[..., 2] / self.cfg.z_range], -1)
        return out.reshape(out.shape[0], -1).astype(self.cfg.np_dtype)


def predict(model: TransNet, samples, cfg: TransNetConfig, domain=None, batch=128):
    out = []
    with ad.no_grad():
        for i in range(0, len(samples), batch):
            x, w, c = batch_inputs(samples[i:i + batch], cfg, domain)
            out.append(np.asarray(model(x, w, c).data, dtype=np.float64))
    return np.concatenate(out) if out else np.zeros((0, 3))


def heldout_mrrpe(model, samples, cfg, domain=None):
    if not samples:
        return float("nan")
    t = predict(model, samples, cfg, domain)
    gt = np.stack([s.t_gt for s in samples])
    return float(np.mean(np.linalg.norm(t - gt, axis=1)) * 1000.0)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    model: TransNet
    history: list            # dicts: epoch, split, mrrpe_mm, loss
    cfg: TransNetConfig
    seed: int

    def final(self, split="heldout"):
        rows = [r for r in self.history if r["split"] == split]
        return rows[-1]["mrrpe_mm"] if rows else float("nan")


def _weak_terms(model, samples, cfg, pred):
    """Weak 2D loss over itw samples (prediction ``pred`` N×3)."""
    n = len(samples)
    dt = cfg.np_dtype
    jr = np.stack([s.scene.joints3d_r for s in samples]).astype(dt)
    jl = np.stack([s.scene.joints3d_l for s in samples]).astype(dt)
    g = np.stack([s.scene.g_r_obs for s in samples]).astype(dt)
    gt2d = np.stack([s.gt2d_union for s in samples])
    aff = np.stack([s.union_affine for s in samples])
    # the left term needs the right hand's wrist translation, so both must be observed
    vis = np.array([[s.scene.visible[0], s.scene.visible[0] and s.scene.visible[1]] for s in samples])
    cam = samples[0].scene.camera if n else Camera()
    return weak_supervision_loss(jr, jl, g, pred, cam, gt2d, aff, shared_beta=True, visible=vis)


def write_history_csv(history, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "split", "mrrpe_mm", "loss"])
        for r in history:
            w.writerow([r["epoch"], r["split"], f"{r['mrrpe_mm']:.6f}", f"{r['loss']:.9g}"])


def train(cfg: TransNetConfig, train_scenes, heldout_scenes=(), epochs=10, seed=0,
          eval_domain=None, log=None, max_steps=None):
    """Train a TransNet; returns a :class:`TrainResult`.

    Mocap-domain scenes supervise ``t`` directly with L1. With
    ``cfg.weak_supervision`` each batch is half mocap, half itw, and the itw
    half is supervised only through projected 2D joints.
    """
    rng = np.random.default_rng(seed)
    model = TransNet(cfg, rng)
    mocap = [prepare_sample(s, cfg) for s in train_scenes if not s.is_itw]
    itw = [prepare_sample(s, cfg) for s in train_scenes if s.is_itw] if cfg.weak_supervision else []
    if cfg.weak_supervision and not itw:
        raise ConfigError("weak_supervision=true needs itw-domain scenes in the training set")
    if not mocap:
        raise ConfigError("training set has no mocap-domain scenes")
    held = [prepare_sample(s, cfg) for s in heldout_scenes]
    params = model.parameters()
    opt = ad.Adam(params, lr=cfg.lr)
    sched = ad.StepSchedule(cfg.lr, cfg.lr_drop_factor, cfg.lr_drop_epoch)
    n_mocap = cfg.batch_size // 2 if cfg.weak_supervision else cfg.batch_size
    n_itw = cfg.batch_size - n_mocap
    steps = math.ceil(len(mocap) / n_mocap)
    history = []
    total_steps = 0
    for epoch in range(epochs):
        opt.lr = sched.lr_at(epoch)
        order = rng.permutation(len(mocap))
        itw_order = rng.permutation(len(itw)) if itw else None
        losses = []
        for k in range(steps):
            batch = [mocap[i] for i in order[k * n_mocap:(k + 1) * n_mocap]]
            wbatch = []
            if itw:
                idx = [itw_order[(k * n_itw + j) % len(itw)] for j in range(n_itw)]
                wbatch = [itw[i] for i in idx]
            x, w, c = batch_inputs(batch + wbatch, cfg)
            pred = model(x, w, c)
            nb = len(batch)
            t_gt = np.stack([s.t_gt for s in batch]).astype(cfg.np_dtype)
            loss = ad.l1_loss(pred[:nb], t_gt) * cfg.reltrans_weight
            if wbatch:
                loss = loss + _weak_terms(model, wbatch, cfg, pred[nb:]) * cfg.weak_weight
            val = float(loss.data)
            if not np.isfinite(val):
                raise TrainingDiverged(f"loss became {val} at epoch {epoch + 1}, step {k}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(val)
            total_steps += 1
            if max_steps is not None and total_steps >= max_steps:
                break
        train_loss = float(np.mean(losses))
        history.append({"epoch": epoch + 1, "split": "train", "loss": train_loss,
                        "mrrpe_mm": heldout_mrrpe(model, mocap[:256], cfg)})
        if held:
            history.append({"epoch": epoch + 1, "split": "heldout", "loss": train_loss,
                            "mrrpe_mm": heldout_mrrpe(model, held, cfg, eval_domain)})
        if log is not None:
            log(history[-1])
        if max_steps is not None and total_steps >= max_steps:
            break
    return TrainResult(model, history, cfg, seed)


def baseline_mrrpe(scenes):
    """MRRPE of always predicting zero translation (mean ``‖t_gt‖``, mm)."""
    return float(np.mean([np.linalg.norm(s.t_gt) for s in scenes]) * 1000.0)

