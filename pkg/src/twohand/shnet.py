"""SHNet-lite: single-hand decoder from a 256×256 crop to heatmap, 2.5D pose and hand parameters.

Outputs per hand: a J×D×8×8 logit volume (D=8), its soft-argmax pose in
crop pixels and root-relative depth, 16 joint rotations in 6D form, 10
shape coefficients and a global wrist translation. Left hands are seen
through a flipped crop by the same weights and flipped back afterwards;
the unflipped and separate-weight variants exist for ablations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import CompactCNN, Conv2d, Linear, Module, bilinear_gather, global_avg_pool
from .crop import FLIP_SUFFIX, HAND_RES, flip_pose_back
from .errors import InvalidConfig
from .geometry import matrix_to_axis_angle, matrix_to_rot6d, rot6d_to_matrix
from .hand_model import N_BONES, N_JOINTS, N_SHAPE, HandMesh, HandParams, hand_forward
from .heatmap import Pose25D, soft_argmax_voxels, voxels_to_pose

IDENTITY_6D = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])
MIRROR = np.diag([-1.0, 1.0, 1.0])


@dataclass(frozen=True)
class SHNetConfig:
    channels: tuple = (16, 32, 64, 64, 64)   # five stride-2 blocks: /32
    depth_bins: int = 8
    reduce_channels: int = 64
    z_range: float = 0.4
    in_channels: int = 3
    res: tuple = HAND_RES
    flip: bool = True           # left crops are mirrored into right-hand layout
    shared: bool = True         # one parameter set for both hands
    g_init: tuple = (0.0, 0.0, 0.55)
    dtype: str = "float64"

    def __post_init__(self):
        if len(self.channels) != 5:
            raise InvalidConfig("SHNet-lite needs five stride-2 blocks (total stride 32)")
        if self.res[0] % 32 or self.res[1] % 32:
            raise InvalidConfig(f"crop resolution {self.res} is not a multiple of 32")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def dims(self):
        return (self.depth_bins, self.res[1] // 32, self.res[0] // 32)


@dataclass
class SHNetOutput:
    heatmap: np.ndarray         # J×D×H×W logits, in the frame the network saw
    pose25d: Pose25D            # crop pixels + root-relative depth
    theta_6d: np.ndarray        # 16×6
    beta: np.ndarray            # 10
    g: np.ndarray               # 3, camera frame (m)
    handedness: str = "right"
    flipped_back: bool = False

    @property
    def rotations(self):
        return rot6d_to_matrix(self.theta_6d)

    def params(self) -> HandParams:
        return HandParams(matrix_to_axis_angle(self.rotations), self.beta.copy(), self.handedness)

    def mesh(self) -> HandMesh:
        return hand_forward(self.params())


class SHNetLite(Module):
    def __init__(self, cfg: SHNetConfig, rng):
        self.cfg = cfg
        dt = cfg.np_dtype
        D = cfg.depth_bins
        C = cfg.channels[-1]
        self.backbone = CompactCNN(cfg.in_channels, cfg.channels, rng, dtype=dt)
        self.hm = Conv2d(C, N_JOINTS * D, 1, rng, dtype=dt)
        self.reduce = Conv2d(C, cfg.reduce_channels, 1, rng, dtype=dt)
        self.rot = Linear(N_JOINTS * (cfg.reduce_channels + 3), N_BONES * 6, rng, dtype=dt,
                          zero_init=True, bias_init=np.tile(IDENTITY_6D, N_BONES))
        self.glob = Linear(C, N_SHAPE + 3, rng, dtype=dt, zero_init=True,
                           bias_init=np.concatenate([np.zeros(N_SHAPE), cfg.g_init]))

    def forward(self, x):
        """N×C_in×H×W -> dict of Tensors: heatmap, vox, pose, theta_6d, beta, g."""
        cfg = self.cfg
        x = ad.as_tensor(x)
        n = x.shape[0]
        D, H, W = cfg.dims
        feat = self.backbone(x)
        hm = self.hm(feat).reshape(n, N_JOINTS, D, H, W)
        vox = soft_argmax_voxels(hm)                                   # N×J×3, voxel indices
        pose = voxels_to_pose(vox, cfg.dims, cfg.res, cfg.z_range)
        red = self.reduce(feat)
        jf = bilinear_gather(red, vox[..., :2])                         # N×J×C_r
        scale = np.array([1.0 / cfg.res[0], 1.0 / cfg.res[1], 1.0 / cfg.z_range], dtype=pose.dtype)
        shift = np.array([-0.5, -0.5, 0.0], dtype=pose.dtype)
        coords = pose * scale + shift
        z = ad.concat([jf, coords], axis=-1).reshape(n, -1)
        theta_6d = self.rot(z).reshape(n, N_BONES, 6)
        gl = self.glob(global_avg_pool(feat))
        return {"heatmap": hm, "vox": vox, "pose": pose, "theta_6d": theta_6d,
                "beta": gl[:, :N_SHAPE], "g": gl[:, N_SHAPE:]}


def observation_tensor(images, dtype=np.float64):
    """Stack H×W×C uint8/float renders into an N×C×H×W array scaled to [0, 1]."""
    arr = np.stack([np.asarray(im) for im in images])
    if arr.ndim == 3:
        arr = arr[..., None]
    scale = 1.0 / 255.0 if arr.dtype == np.uint8 else 1.0
    return np.ascontiguousarray(arr.transpose(0, 3, 1, 2)).astype(dtype) * scale


def _outputs(raw, space, handedness):
    data = {k: np.asarray(v.data, dtype=np.float64) for k, v in raw.items()}
    outs = []
    for i in range(data["pose"].shape[0]):
        outs.append(SHNetOutput(
            heatmap=data["heatmap"][i],
            pose25d=Pose25D(data["pose"][i], space, HAND_RES),
            theta_6d=data["theta_6d"][i],
            beta=data["beta"][i],
            g=data["g"][i],
            handedness=handedness,
        ))
    return outs


def shnet_forward(model: SHNetLite, observations, space="crop:hand", handedness="right"):
    """Decode a batch of observations (N×C×H×W, or one H×W×C render) into SHNetOutputs."""
    obs = np.asarray(observations)
    if obs.ndim == 3:
        obs = observation_tensor([obs], model.cfg.np_dtype)
    with ad.no_grad():
        raw = model(obs)
    return _outputs(raw, space, handedness)


def mirror_rotations_6d(theta_6d):
    """6D rotations conjugated by the x-mirror (M R M), the 6D twin of ``mirror_theta``."""
    R = rot6d_to_matrix(np.asarray(theta_6d, dtype=np.float64))
    return matrix_to_rot6d(MIRROR @ R @ MIRROR)


def flip_output_back(out: SHNetOutput) -> SHNetOutput:
    """Map an output decoded from a flipped crop back to the original hand.

    The pose goes through the crop pipeline's pixel flip, rotations are
    mirrored, handedness toggles and the camera-frame translation has its
    x component negated (mirror about the optical axis plane). The heatmap
    is kept in the frame the network saw.
    """
    other = "left" if out.handedness == "right" else "right"
    g = out.g * np.array([-1.0, 1.0, 1.0])
    return SHNetOutput(out.heatmap, flip_pose_back(out.pose25d), mirror_rotations_6d(out.theta_6d),
                       out.beta.copy(), g, other, not out.flipped_back)


class TwoHandSHNet(Module):
    """Holds the SHNet-lite weights for both hands according to the flip/sharing variant."""

    def __init__(self, cfg: SHNetConfig, rng):
        self.cfg = cfg
        self.net = SHNetLite(cfg, rng)
        if not cfg.shared:
            self.net_left = SHNetLite(cfg, rng)

    def net_for(self, hand):
        if hand == "left" and not self.cfg.shared:
            return self.net_left
        return self.net


def run_two_hands(model: TwoHandSHNet, obs_r, obs_l, space_r="crop:right", space_l=None):
    """Decode both hands; returns ``(out_r, out_l)`` with the left output in left-hand terms.

    ``obs_l`` must already be the flipped crop when ``model.cfg.flip`` is
    set. With shared weights the two observations are concatenated along
    the batch axis and run in one pass. Single H×W×C renders give single
    outputs, N×C×H×W batches give lists.
    """
    cfg = model.cfg
    obs_r, obs_l = np.asarray(obs_r), np.asarray(obs_l)
    single = obs_r.ndim == 3
    if single:
        obs_r = observation_tensor([obs_r], cfg.np_dtype)
        obs_l = observation_tensor([obs_l], cfg.np_dtype)
    if space_l is None:
        space_l = "crop:left" + (FLIP_SUFFIX if cfg.flip else "")
    seen_as = "right" if cfg.flip else "left"
    n = obs_r.shape[0]
    if cfg.shared:
        both = shnet_forward(model.net, np.concatenate([obs_r, obs_l]), space_r, "right")
        out_r, out_l = both[:n], both[n:]
        for o in out_l:
            o.pose25d = o.pose25d.with_coords(o.pose25d.coords, space=space_l)
            o.handedness = seen_as
    else:
        out_r = shnet_forward(model.net, obs_r, space_r, "right")
        out_l = shnet_forward(model.net_left, obs_l, space_l, seen_as)
    if cfg.flip:
        out_l = [flip_output_back(o) for o in out_l]
    if single:
        return out_r[0], out_l[0]
    return out_r, out_l
