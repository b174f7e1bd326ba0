"""Deterministic synthetic two-hand scenes, skeleton rendering, and dataset files.

Scene ``i`` of a dataset with seed ``s`` draws from
``np.random.default_rng([s, i])``, so each scene is reproducible on its own
and generation order does not matter.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .camera import Camera, project_perspective
from .crop import CropSpec, flip_pose_back, image_to_crop_pose, image_to_union, prepare_hand_crop
from .errors import ParseError, RetryExhausted
from .geometry import Box2D, apply_affine, box_iou
from .hand_model import FINGERS, N_BONES, N_JOINTS, N_SHAPE, PARENTS, HandParams, hand_forward
from .heatmap import Pose25D

SCHEMA = "iw-scene/1"
DOMAINS = ("mocap", "itw_A", "itw_B")
INTERACT_IOU = 0.1
MAX_RETRIES = 100

# finger joint bones and their parents, plus fingertip links, for drawing
BONES = [(int(PARENTS[k]), k) for k in range(1, N_BONES)] + [
    (chain[-1], tip) for chain, tip in FINGERS.values()]


@dataclass(frozen=True)
class SynthConfig:
    camera: Camera = field(default_factory=Camera)
    depth_range: tuple = (0.3, 0.8)
    t_norm_range: tuple = (0.03, 0.30)
    t_override: tuple | None = None
    beta_std: float = 1.0
    beta_clip: float = 3.0
    flex_range: tuple = (-0.15, 1.4)
    abduction: float = 0.25
    twist: float = 0.1
    thumb_range: float = 0.5
    global_rot_max: float = 1.0       # bound on the wrist rotation angle (radians)
    border: float = 2.0              # joints must project this far inside the image
    itw_fraction: float = 0.0
    itw_domain: str = "itw_A"
    p_one_hand: float = 0.8          # itw scenes: chance one hand is unobserved
    pseudo_depth_noise: float = 0.05  # itw scenes: std of noise on the observed wrist depth


@dataclass
class SceneRecord:
    index: int
    seed: int
    domain: str
    params_r: HandParams
    params_l: HandParams
    g_r: np.ndarray
    t_gt: np.ndarray
    camera: Camera
    joints3d_r: np.ndarray       # root-relative, meters
    joints3d_l: np.ndarray
    joints2d_r: np.ndarray       # image pixels
    joints2d_l: np.ndarray
    box_r: Box2D
    box_l: Box2D
    visible: tuple = (True, True)
    g_r_obs: np.ndarray = None   # wrist translation available as supervision

    @property
    def g_l(self):
        return self.g_r + self.t_gt

    @property
    def interacting(self) -> bool:
        return box_iou(self.box_r, self.box_l) > INTERACT_IOU

    @property
    def is_itw(self) -> bool:
        return self.domain != "mocap"

    def crop(self, hand: str) -> CropSpec:
        """SHNet-style crop; left hands are flipped."""
        if hand == "right":
            return prepare_hand_crop(self.box_r, flip=False, name="right")
        return prepare_hand_crop(self.box_l, flip=True, name="left")

    def pose25d(self, hand: str, flipped: bool | None = None) -> Pose25D:
        """GT 2.5D pose in the hand's crop frame (left hands flipped unless ``flipped=False``)."""
        c = self.crop(hand)
        j2, j3 = (self.joints2d_r, self.joints3d_r) if hand == "right" else (self.joints2d_l, self.joints3d_l)
        pose = image_to_crop_pose(j2, j3[:, 2], c)
        if flipped is False and c.flip:
            pose = flip_pose_back(pose)
        return pose

    def with_domain(self, domain: str) -> "SceneRecord":
        return replace(self, domain=domain)


def domain_for_index(i: int, itw_fraction: float, itw_domain="itw_A") -> str:
    """Spread itw scenes evenly by index; fraction 0.5 puts them on odd indices."""
    if itw_fraction <= 0:
        return "mocap"
    return itw_domain if int(np.floor((i + 1) * itw_fraction)) > int(np.floor(i * itw_fraction)) else "mocap"


def _random_rotation(rng, max_angle=np.pi):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return axis * rng.uniform(0.0, max_angle)


def sample_hand_pose(rng, cfg: SynthConfig):
    theta = np.zeros((N_BONES, 3))
    theta[0] = _random_rotation(rng, cfg.global_rot_max)
    for name, (chain, _tip) in FINGERS.items():
        for depth, k in enumerate(chain):
            if name == "thumb":
                theta[k] = rng.uniform(-cfg.thumb_range, cfg.thumb_range, size=3)
                continue
            flex = rng.uniform(*cfg.flex_range)
            twist = rng.uniform(-cfg.twist, cfg.twist)
            abd = rng.uniform(-cfg.abduction, cfg.abduction) if depth == 0 else rng.uniform(-0.05, 0.05)
            theta[k] = (flex, twist, abd)
    return theta


def _in_frame(px, cam: Camera, border):
    return bool(np.all((px[:, 0] >= border) & (px[:, 0] <= cam.width - 1 - border)
                       & (px[:, 1] >= border) & (px[:, 1] <= cam.height - 1 - border)))


def build_scene(index, seed, domain, params_r, params_l, g_r, t_gt, camera,
                visible=(True, True), g_r_obs=None) -> SceneRecord:
    """Derive joints, projections and boxes from the primary scene parameters."""
    mr, ml = hand_forward(params_r), hand_forward(params_l)
    g_r = np.asarray(g_r, dtype=np.float64)
    t_gt = np.asarray(t_gt, dtype=np.float64)
    p2r = project_perspective(mr.joints + g_r, camera)
    p2l = project_perspective(ml.joints + g_r + t_gt, camera)
    return SceneRecord(index, seed, domain, params_r, params_l, g_r, t_gt, camera,
                       mr.joints, ml.joints, p2r, p2l, Box2D.from_points(p2r), Box2D.from_points(p2l),
                       tuple(bool(v) for v in visible), g_r.copy() if g_r_obs is None else np.asarray(g_r_obs, float))


def sample_scene(seed: int, index: int, cfg: SynthConfig = SynthConfig()) -> SceneRecord:
    rng = np.random.default_rng([seed, index])
    cam = cfg.camera
    domain = domain_for_index(index, cfg.itw_fraction, cfg.itw_domain)
    beta = np.clip(rng.normal(0.0, cfg.beta_std, size=N_SHAPE), -cfg.beta_clip, cfg.beta_clip)
    pr = HandParams(sample_hand_pose(rng, cfg), beta, "right")
    pl = HandParams(sample_hand_pose(rng, cfg), beta.copy(), "left")
    jr0, jl0 = hand_forward(pr).joints, hand_forward(pl).joints
    # poses are kept; only the placement is resampled until both hands fit
    for _ in range(MAX_RETRIES):
        z = rng.uniform(*cfg.depth_range)
        if cfg.t_override is not None:
            t = np.asarray(cfg.t_override, dtype=np.float64)
        else:
            d = rng.normal(size=3)
            t = d / np.linalg.norm(d) * rng.uniform(*cfg.t_norm_range)
        # aim the middle of the two-hand group at a jittered point near the image center
        mid = 0.5 * (np.concatenate([jr0, jl0 + t]).min(axis=0) + np.concatenate([jr0, jl0 + t]).max(axis=0))
        u = cam.cx + rng.uniform(-0.15, 0.15) * cam.width
        v = cam.cy + rng.uniform(-0.15, 0.15) * cam.height
        zc = z + mid[2]
        g_r = np.array([(u - cam.cx) * zc / cam.fx - mid[0], (v - cam.cy) * zc / cam.fy - mid[1], z])
        jr, jl = jr0 + g_r, jl0 + g_r + t
        if np.min(jr[:, 2]) < 0.1 or np.min(jl[:, 2]) < 0.1:
            continue
        if not (_in_frame(project_perspective(jr, cam), cam, cfg.border)
                and _in_frame(project_perspective(jl, cam), cam, cfg.border)):
            continue
        visible, g_obs = (True, True), g_r
        if domain != "mocap":
            if rng.uniform() < cfg.p_one_hand:
                visible = (True, False) if rng.uniform() < 0.5 else (False, True)
            g_obs = g_r + np.array([0.0, 0.0, rng.normal(0.0, cfg.pseudo_depth_noise)])
        return build_scene(index, seed, domain, pr, pl, g_r, t, cam, visible, g_obs)
    raise RetryExhausted(f"scene {index} (seed {seed}): no valid placement in {MAX_RETRIES} tries")


def generate(seed: int, count: int, cfg: SynthConfig = SynthConfig()):
    return [sample_scene(seed, i, cfg) for i in range(count)]


# ---------------------------------------------------------------------------
# rendering


def _background(domain, h, w, phase):
    y, x = np.mgrid[0:h, 0:w].astype(np.float64)
    sx, sy = x * (256.0 / w), y * (256.0 / h)
    if domain == "mocap":
        return np.zeros((h, w, 3))
    if domain == "itw_A":
        base = 0.35 + 0.15 * np.sin(sx / 9.0 + phase) * np.cos(sy / 13.0 - phase)
        return np.stack([base + 0.10, base, base - 0.10], axis=-1)
    if domain == "itw_B":
        check = ((np.floor(sx / 24.0 + phase) + np.floor(sy / 24.0)) % 2)
        base = 0.25 + 0.3 * check + 0.05 * np.sin((sx + sy) / 5.0)
        return np.stack([base - 0.05, base + 0.05, base + 0.15], axis=-1)
    raise ValueError(f"unknown domain {domain!r}")


_STYLE = {  # (bone intensity, joint intensity)
    "mocap": (0.6, 1.0),
    "itw_A": (0.45, 0.85),
    "itw_B": (0.7, 0.95),
}
_FINGER_COLOR = np.array([
    [1.0, 0.3, 0.3], [1.0, 1.0, 0.3], [0.3, 1.0, 0.3], [0.3, 1.0, 1.0], [0.3, 0.3, 1.0]])


def _bone_color(child):
    for i, (chain, tip) in enumerate(FINGERS.values()):
        if child in chain or child == tip:
            return _FINGER_COLOR[i]
    return np.ones(3)


def render_skeletons(hands, size, domain="mocap", phase=0.0):
    """Draw 2D skeletons (list of J×2 pixel arrays) onto a ``H×W×3`` grid.

    Bones are anti-aliased strokes colored per finger, joints are brighter
    discs. Stroke widths scale with the grid so a 16-pixel render is a
    downsampled version of a 256-pixel one.
    """
    w, h = int(size[0]), int(size[1])
    img = _background(domain, h, w, phase)
    bone_a, joint_a = _STYLE[domain]
    unit = w / 256.0
    r_bone, r_joint = max(2.0 * unit, 0.35), max(3.5 * unit, 0.5)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    for pts in hands:
        pts = np.asarray(pts, dtype=np.float64)
        for a, b in BONES:
            pa, pb = pts[a], pts[b]
            d = pb - pa
            L2 = float(d @ d)
            tpar = np.clip(((xs - pa[0]) * d[0] + (ys - pa[1]) * d[1]) / L2, 0.0, 1.0) if L2 > 0 else 0.0
            dist = np.hypot(xs - (pa[0] + tpar * d[0]), ys - (pa[1] + tpar * d[1]))
            cov = np.clip(r_bone + 0.5 - dist, 0.0, 1.0)[..., None] * bone_a
            img = img * (1 - cov) + cov * _bone_color(b)
        for p in pts:
            dist = np.hypot(xs - p[0], ys - p[1])
            cov = np.clip(r_joint + 0.5 - dist, 0.0, 1.0)[..., None] * joint_a
            img = img * (1 - cov) + cov
    return img


def _phase(scene):
    return (scene.index * 0.6180339887498949) % 1.0 * 2.0 * np.pi


def rasterize_observation(scene: SceneRecord, hand: str, domain: str | None = None,
                          draw_hands=True) -> np.ndarray:
    """256×256×3 render of a hand's (flipped for left) crop; both hands appear if in view."""
    c = scene.crop(hand)
    dom = scene.domain if domain is None else domain
    hands = [apply_affine(c.affine, scene.joints2d_r), apply_affine(c.affine, scene.joints2d_l)]
    if not draw_hands:
        hands = []
    elif hand == "left":
        hands = hands[::-1]   # the observed hand is drawn last, on top
    return render_skeletons(hands, c.target, dom, _phase(scene))


def rasterize_union(scene: SceneRecord, union: Box2D, res, domain: str | None = None) -> np.ndarray:
    """Two-hand render in union-box pixels at resolution ``res``."""
    dom = scene.domain if domain is None else domain
    hands = [image_to_union(scene.joints2d_r, union, res), image_to_union(scene.joints2d_l, union, res)]
    return render_skeletons(hands, res, dom, _phase(scene))


# ---------------------------------------------------------------------------
# dataset files


def scene_to_dict(s: SceneRecord) -> dict:
    def hp(p):
        return {"theta": p.theta.tolist(), "beta": p.beta.tolist(), "handedness": p.handedness}
    return {
        "index": s.index, "seed": s.seed, "domain": s.domain,
        "params_r": hp(s.params_r), "params_l": hp(s.params_l),
        "g_r": s.g_r.tolist(), "t_gt": s.t_gt.tolist(), "g_r_obs": s.g_r_obs.tolist(),
        "camera": s.camera.to_dict(),
        "joints3d_r": s.joints3d_r.tolist(), "joints3d_l": s.joints3d_l.tolist(),
        "joints2d_r": s.joints2d_r.tolist(), "joints2d_l": s.joints2d_l.tolist(),
        "box_r": s.box_r.to_list(), "box_l": s.box_l.to_list(),
        "visible": list(s.visible),
    }


def write_dataset(scenes, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"schema": SCHEMA}, sort_keys=True) + "\n")
        for s in scenes:
            fh.write(json.dumps(scene_to_dict(s), sort_keys=True) + "\n")


class _Fields:
    """Typed field access that reports the failing field path."""

    def __init__(self, line):
        self.line = line

    def get(self, obj, key, path):
        if not isinstance(obj, dict) or key not in obj:
            raise ParseError(self.line, path, "missing")
        return obj[key]

    def array(self, obj, key, shape, path):
        val = self.get(obj, key, path)
        try:
            arr = np.array(val, dtype=np.float64)
        except (TypeError, ValueError) as exc:
            raise ParseError(self.line, path, f"not numeric ({exc})") from None
        if arr.shape != tuple(shape):
            raise ParseError(self.line, path, f"expected shape {tuple(shape)}, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParseError(self.line, path, "non-finite value")
        return arr

    def number(self, obj, key, path, kind=float):
        val = self.get(obj, key, path)
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ParseError(self.line, path, f"expected a number, got {type(val).__name__}")
        return kind(val)

    def choice(self, obj, key, options, path):
        val = self.get(obj, key, path)
        if val not in options:
            raise ParseError(self.line, path, f"expected one of {list(options)}, got {val!r}")
        return val


def _scene_from_dict(d, line) -> SceneRecord:
    f = _Fields(line)

    def hp(key):
        sub = f.get(d, key, key)
        return HandParams(f.array(sub, "theta", (N_BONES, 3), key + ".theta"),
                          f.array(sub, "beta", (N_SHAPE,), key + ".beta"),
                          f.choice(sub, "handedness", ("right", "left"), key + ".handedness"))

    def box(key):
        b = f.array(d, key, (4,), key)
        if not (b[2] > 0 and b[3] > 0):
            raise ParseError(line, key, "box size must be positive")
        return Box2D(*[float(v) for v in b])

    cam_d = f.get(d, "camera", "camera")
    cam = Camera(*(f.number(cam_d, k, "camera." + k) for k in ("fx", "fy", "cx", "cy")),
                 f.number(cam_d, "width", "camera.width", int), f.number(cam_d, "height", "camera.height", int))
    vis = f.get(d, "visible", "visible")
    if not (isinstance(vis, list) and len(vis) == 2 and all(isinstance(v, bool) for v in vis)):
        raise ParseError(line, "visible", "expected two booleans")
    return SceneRecord(
        index=f.number(d, "index", "index", int), seed=f.number(d, "seed", "seed", int),
        domain=f.choice(d, "domain", DOMAINS, "domain"),
        params_r=hp("params_r"), params_l=hp("params_l"),
        g_r=f.array(d, "g_r", (3,), "g_r"), t_gt=f.array(d, "t_gt", (3,), "t_gt"), camera=cam,
        joints3d_r=f.array(d, "joints3d_r", (N_JOINTS, 3), "joints3d_r"),
        joints3d_l=f.array(d, "joints3d_l", (N_JOINTS, 3), "joints3d_l"),
        joints2d_r=f.array(d, "joints2d_r", (N_JOINTS, 2), "joints2d_r"),
        joints2d_l=f.array(d, "joints2d_l", (N_JOINTS, 2), "joints2d_l"),
        box_r=box("box_r"), box_l=box("box_l"), visible=tuple(vis),
        g_r_obs=f.array(d, "g_r_obs", (3,), "g_r_obs"),
    )


def read_dataset(path):
    scenes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            try:
                obj = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise ParseError(lineno, "<record>", f"malformed JSON ({exc.msg})") from None
            if lineno == 1:
                if not isinstance(obj, dict) or obj.get("schema") != SCHEMA:
                    raise ParseError(1, "schema", f"expected {SCHEMA!r}")
                continue
            scenes.append(_scene_from_dict(obj, lineno))
    return scenes


def scenes_equal(a: SceneRecord, b: SceneRecord) -> bool:
    return scene_to_dict(a) == scene_to_dict(b)
