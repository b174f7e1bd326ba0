"""MANO-lite: a procedural, differentiable articulated hand.

The template is a low-poly right hand (128 vertices, 16 skeleton joints,
21 regressed joints) built from square cross-section rings along each
finger and a two-sided palm grid. Rest pose: wrist at the origin, fingers
along +y, palm facing +z, thumb on the +x side. Pose is 16 axis-angle
rotations (the first one is the global wrist rotation), shape is a
10-dimensional linear blend basis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .geometry import axis_angle_to_matrix

N_VERTS = 128
N_BONES = 16
N_JOINTS = 21
N_SHAPE = 10

# finger name -> (skeleton joint ids, tip joint id)
FINGERS = {
    "index": ((1, 2, 3), 16),
    "middle": ((4, 5, 6), 17),
    "pinky": ((7, 8, 9), 18),
    "ring": ((10, 11, 12), 19),
    "thumb": ((13, 14, 15), 20),
}
PARENTS = np.array([-1, 0, 1, 2, 0, 4, 5, 0, 7, 8, 0, 10, 11, 0, 13, 14])

# base position, direction, segment lengths (base->b, b->c, c->tip), ring radius
_FINGER_GEOM = {
    "index": ((0.026, 0.083, 0.0), (0.0, 1.0, 0.0), (0.028, 0.017, 0.012), 0.0085),
    "middle": ((0.006, 0.088, 0.0), (0.0, 1.0, 0.0), (0.030, 0.019, 0.013), 0.0090),
    "pinky": ((-0.029, 0.076, 0.0), (0.0, 1.0, 0.0), (0.022, 0.014, 0.011), 0.0075),
    "ring": ((-0.012, 0.084, 0.0), (0.0, 1.0, 0.0), (0.028, 0.018, 0.012), 0.0085),
    "thumb": ((0.020, 0.025, 0.005), (0.75, 0.66, 0.0), (0.033, 0.028, 0.024), 0.0100),
}
_PALM_HALF_THICK = 0.012


@dataclass(frozen=True)
class HandTemplate:
    vertices: np.ndarray        # V×3
    faces: np.ndarray           # F×3, counter-clockwise seen from outside (right hand)
    parents: np.ndarray         # K
    skin_weights: np.ndarray    # V×K
    shape_dirs: np.ndarray      # V×3×10
    joint_regressor: np.ndarray  # J×V

    def mirrored(self) -> "HandTemplate":
        """x-negated copy used for left hands; winding reversed to keep normals outward."""
        flip = np.array([-1.0, 1.0, 1.0])
        return HandTemplate(
            vertices=_frozen(self.vertices * flip),
            faces=_frozen(self.faces[:, ::-1].copy()),
            parents=self.parents,
            skin_weights=self.skin_weights,
            shape_dirs=_frozen(self.shape_dirs * flip[None, :, None]),
            joint_regressor=self.joint_regressor,
        )


@dataclass
class HandParams:
    theta: np.ndarray
    beta: np.ndarray
    handedness: str = "right"

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).reshape(N_BONES, 3)
        self.beta = np.asarray(self.beta, dtype=np.float64).reshape(N_SHAPE)
        if self.handedness not in ("right", "left"):
            raise ValueError(f"handedness must be 'right' or 'left', got {self.handedness!r}")

    @classmethod
    def zeros(cls, handedness="right"):
        return cls(np.zeros((N_BONES, 3)), np.zeros(N_SHAPE), handedness)


@dataclass
class HandMesh:
    vertices: np.ndarray
    joints: np.ndarray
    faces: np.ndarray | None = field(default=None, repr=False)


def _frozen(a):
    a = np.array(a, dtype=a.dtype if a.dtype.kind == "i" else np.float64)
    a.setflags(write=False)
    return a


def _ring_basis(d):
    d = np.asarray(d, float) / np.linalg.norm(d)
    lateral = np.cross(d, [0.0, 0.0, 1.0])
    lateral /= np.linalg.norm(lateral)
    normal = np.cross(lateral, d)
    return d, lateral, normal


@lru_cache(maxsize=None)
def build_template() -> HandTemplate:
    verts, weights, faces = [], [], []
    ring_of_joint = {}
    finger_rows = {}

    def add_vertex(p, w):
        verts.append(np.asarray(p, float))
        row = np.zeros(N_BONES)
        for k, val in w.items():
            row[k] += val
        weights.append(row)
        return len(verts) - 1

    # palm: two rows (wrist, mid-palm) x 5 columns, front (+z) and back (-z)
    palm = {}
    for r, (y, xs) in enumerate(((0.0, (-0.03, -0.015, 0.0, 0.015, 0.03)),
                                 (0.045, (-0.032, -0.016, 0.0, 0.016, 0.032)))):
        for side, z in enumerate((_PALM_HALF_THICK, -_PALM_HALF_THICK)):
            for c, x in enumerate(xs):
                palm[(r, side, c)] = add_vertex((x, y, z), {0: 1.0})
    web = [add_vertex((0.030, 0.040, 0.010), {0: 0.7, 13: 0.3}),
           add_vertex((0.030, 0.040, -0.010), {0: 0.7, 13: 0.3}),
           add_vertex((0.036, 0.020, 0.0), {0: 0.7, 13: 0.3})]

    tip_vertex = {}
    for name, ((a, b, c), _tip) in FINGERS.items():
        base, direction, segs, radius = _FINGER_GEOM[name]
        d, lat, nrm = _ring_basis(direction)
        base = np.asarray(base, float)
        ja = base
        jb = ja + d * segs[0]
        jc = jb + d * segs[1]
        tip = jc + d * segs[2]
        parent = 0
        # (center, weights, radius scale)
        rings = [
            (ja, {parent: 0.5, a: 0.5}, 1.0),
            ((ja + jb) / 2, {a: 1.0}, 0.95),
            (jb, {a: 0.5, b: 0.5}, 0.9),
            ((jb + jc) / 2, {b: 1.0}, 0.85),
            (jc, {b: 0.5, c: 0.5}, 0.8),
        ]
        ids = []
        for center, w, scale in rings:
            rr = radius * scale
            ring = [add_vertex(center + rr * off, w) for off in (lat, nrm, -lat, -nrm)]
            ids.append(ring)
        ring_of_joint[a] = ids[0]
        ring_of_joint[b] = ids[2]
        ring_of_joint[c] = ids[4]
        tip_vertex[name] = add_vertex(tip, {c: 1.0})
        finger_rows[name] = ids
        for r0, r1 in zip(ids[:-1], ids[1:]):
            for q in range(4):
                i0, i1 = r0[q], r0[(q + 1) % 4]
                j0, j1 = r1[q], r1[(q + 1) % 4]
                faces.append((i0, j0, i1))
                faces.append((i1, j0, j1))
        last = ids[-1]
        for q in range(4):
            faces.append((last[q], tip_vertex[name], last[(q + 1) % 4]))

    # palm surfaces
    for side in (0, 1):
        for c in range(4):
            p00, p01 = palm[(0, side, c)], palm[(0, side, c + 1)]
            p10, p11 = palm[(1, side, c)], palm[(1, side, c + 1)]
            if side == 0:
                faces += [(p00, p01, p10), (p01, p11, p10)]
            else:
                faces += [(p00, p10, p01), (p01, p10, p11)]
    # side walls
    for c in (0, 4):
        f0, f1 = palm[(0, 0, c)], palm[(1, 0, c)]
        b0, b1 = palm[(0, 1, c)], palm[(1, 1, c)]
        if c == 0:
            faces += [(f0, f1, b0), (b0, f1, b1)]
        else:
            faces += [(f0, b0, f1), (b0, b1, f1)]
    for c in range(4):
        f0, f1 = palm[(0, 0, c)], palm[(0, 0, c + 1)]
        b0, b1 = palm[(0, 1, c)], palm[(0, 1, c + 1)]
        faces += [(f0, b0, f1), (f1, b0, b1)]
    faces += [(web[0], web[2], web[1])]

    vertices = np.array(verts)
    skin = np.array(weights)
    assert vertices.shape == (N_VERTS, 3), vertices.shape

    regressor = np.zeros((N_JOINTS, N_VERTS))
    wrist_ids = [palm[(0, s, c)] for s in (0, 1) for c in range(5)]
    regressor[0, wrist_ids] = 1.0 / len(wrist_ids)
    for j, ring in ring_of_joint.items():
        regressor[j, ring] = 0.25
    for name, (_, tip_id) in FINGERS.items():
        regressor[tip_id, tip_vertex[name]] = 1.0

    dirs = _shape_basis(vertices, finger_rows, tip_vertex, palm, web)
    return HandTemplate(
        vertices=_frozen(vertices),
        faces=_frozen(np.array(faces, dtype=np.int64)),
        parents=_frozen(PARENTS.astype(np.int64)),
        skin_weights=_frozen(skin),
        shape_dirs=_frozen(dirs),
        joint_regressor=_frozen(regressor),
    )


def _shape_basis(vertices, finger_rows, tip_vertex, palm, web):
    v = vertices
    dirs = np.zeros((N_VERTS, 3, N_SHAPE))
    ex, ey, ez = np.eye(3)
    finger_ids = {n: [i for ring in rows for i in ring] + [tip_vertex[n]] for n, rows in finger_rows.items()}
    palm_ids = list(palm.values()) + list(web)

    def along_finger(name, rate):
        base, direction, _, _ = _FINGER_GEOM[name]
        d = np.asarray(direction, float) / np.linalg.norm(direction)
        ids = finger_ids[name]
        proj = (v[ids] - np.asarray(base)) @ d
        return ids, rate * proj[:, None] * d[None, :]

    # 0 global scale about the wrist
    dirs[:, :, 0] = 0.025 * v
    # 1 finger length (all fingers)
    for name in FINGERS:
        ids, delta = along_finger(name, 0.03)
        dirs[ids, :, 1] += delta
    # 2 finger thickness: radial offset from each ring center
    for name, rows in finger_rows.items():
        for ring in rows:
            center = v[ring].mean(axis=0)
            dirs[ring, :, 2] = 0.08 * (v[ring] - center)
    # 3 palm width
    dirs[:, :, 3] = 0.04 * v[:, :1] * ex
    # 4 palm length
    dirs[:, :, 4] = 0.002 * np.clip(v[:, 1:2] / 0.085, 0.0, 1.0) * ey
    # 5 thumb length
    ids, delta = along_finger("thumb", 0.05)
    dirs[ids, :, 5] = delta
    # 6 palm thickness
    dirs[palm_ids, :, 6] = 0.1 * v[palm_ids, 2:3] * ez
    # 7 radial vs ulnar finger length
    for name, sign in (("index", 1.0), ("middle", 1.0), ("ring", -1.0), ("pinky", -1.0)):
        ids, delta = along_finger(name, 0.02 * sign)
        dirs[ids, :, 7] = delta
    # 8 finger spread
    for name in ("index", "middle", "ring", "pinky"):
        x0 = _FINGER_GEOM[name][0][0]
        dirs[finger_ids[name], :, 8] = 0.002 * (x0 / 0.03) * ex
    # 9 pinky length
    ids, delta = along_finger("pinky", 0.05)
    dirs[ids, :, 9] = delta
    return dirs


def template_for(handedness: str) -> HandTemplate:
    tmpl = build_template()
    return _left_template() if handedness == "left" else tmpl


@lru_cache(maxsize=None)
def _left_template():
    return build_template().mirrored()


# ---------------------------------------------------------------------------
# differentiable pipeline (Tensor in, Tensor out; leading batch dims allowed)


def shape_blend(tmpl: HandTemplate, beta):
    """Return ``(vertices V×3, rest joints K×3)`` for shape coefficients ``beta``."""
    is_t = isinstance(beta, Tensor)
    beta_t = beta if is_t else Tensor(np.asarray(beta, dtype=np.float64))
    basis = tmpl.shape_dirs.reshape(N_VERTS * 3, N_SHAPE).T.astype(beta_t.dtype)
    offs = ad.matmul(beta_t.reshape(beta_t.shape[:-1] + (1, N_SHAPE)), basis)
    verts = offs.reshape(beta_t.shape[:-1] + (N_VERTS, 3)) + tmpl.vertices.astype(beta_t.dtype)
    joints = ad.matmul(tmpl.joint_regressor[:N_BONES].astype(beta_t.dtype), verts)
    if is_t:
        return verts, joints
    return verts.data, joints.data


def forward_kinematics(rest_joints, theta=None, parents=PARENTS, rotations=None):
    """World-from-bone transforms as ``(R ...×K×3×3, t ...×K×3)``.

    ``G_k = G_parent · T(rest offset) · R(theta_k)``; the root uses
    ``T(rest root) · R(theta_0)``. Pass ``rotations`` to skip Rodrigues.
    """
    is_t = isinstance(rest_joints, Tensor) or isinstance(theta, Tensor) or isinstance(rotations, Tensor)
    if not is_t:
        return _forward_kinematics_np(rest_joints, theta, parents, rotations)
    J = ad.as_tensor(rest_joints)
    if rotations is None:
        rotations = axis_angle_to_matrix(ad.as_tensor(theta))
    Rk = ad.as_tensor(rotations)
    batch = np.broadcast_shapes(Rk.shape[:-3], J.shape[:-2])
    if J.shape[:-2] != batch:
        J = J + np.zeros(batch + J.shape[-2:], dtype=J.dtype)
    rots, trans = [], []
    for k in range(len(parents)):
        p = parents[k]
        if p < 0:
            rots.append(Rk[..., k, :, :])
            trans.append(J[..., k, :])
            continue
        off = J[..., k, :] - J[..., p, :]
        rots.append(ad.matmul(rots[p], Rk[..., k, :, :]))
        trans.append(ad.matmul(rots[p], off[..., None])[..., 0] + trans[p])
    R = ad.stack(rots, axis=-3)
    t = ad.stack(trans, axis=-2)
    return (R, t) if is_t else (R.data, t.data)


def _forward_kinematics_np(rest_joints, theta, parents, rotations):
    J = np.asarray(rest_joints, dtype=np.float64)
    Rk = axis_angle_to_matrix(np.asarray(theta, dtype=np.float64)) if rotations is None else np.asarray(rotations)
    R = np.empty(np.broadcast_shapes(Rk.shape, J.shape[:-2] + (len(parents), 3, 3)))
    t = np.empty(R.shape[:-1])
    for k, p in enumerate(parents):
        if p < 0:
            R[..., k, :, :] = Rk[..., k, :, :]
            t[..., k, :] = J[..., k, :]
            continue
        R[..., k, :, :] = R[..., p, :, :] @ Rk[..., k, :, :]
        t[..., k, :] = (R[..., p, :, :] @ (J[..., k, :] - J[..., p, :])[..., None])[..., 0] + t[..., p, :]
    return R, t


def linear_blend_skin(shaped_vertices, transforms, rest_joints, skin_weights):
    """Pose vertices with ``v' = Σ_k w_vk (R_k (v - j_k) + t_k)``."""
    R, t = transforms
    is_t = any(isinstance(x, Tensor) for x in (shaped_vertices, R, t, rest_joints))
    v = ad.as_tensor(shaped_vertices)
    R, t, J = ad.as_tensor(R), ad.as_tensor(t), ad.as_tensor(rest_joints)
    W = np.asarray(skin_weights).astype(v.dtype)
    # bone-local offset folded into the translation: a_k = t_k - R_k j_k
    a = t - ad.matmul(R, J[..., None])[..., 0]
    K = W.shape[1]
    Rw = ad.matmul(W, R.reshape(R.shape[:-3] + (K, 9)))
    Rw = Rw.reshape(Rw.shape[:-1] + (3, 3))
    aw = ad.matmul(W, a)
    posed = ad.tsum(Rw * v[..., None, :], axis=-1) + aw
    return posed if is_t else posed.data


def hand_forward_tensor(theta=None, beta=None, handedness="right", rotations=None):
    """Root-relative ``(vertices, joints)`` Tensors for a possibly batched hand."""
    tmpl = template_for(handedness)
    beta = ad.as_tensor(beta)
    verts, rest = shape_blend(tmpl, beta)
    if rotations is None:
        transforms = forward_kinematics(rest, ad.as_tensor(theta), tmpl.parents)
    else:
        transforms = forward_kinematics(rest, rotations=ad.as_tensor(rotations), parents=tmpl.parents)
    posed = linear_blend_skin(verts, transforms, rest, tmpl.skin_weights)
    joints = ad.matmul(tmpl.joint_regressor.astype(posed.dtype), posed)
    root = joints[..., 0:1, :]
    return posed - root, joints - root


def hand_forward(params: HandParams, tmpl: HandTemplate | None = None) -> HandMesh:
    """Root-relative mesh and joints for one hand (numpy in, numpy out)."""
    if tmpl is not None and params.handedness == "left":
        tmpl = tmpl.mirrored()
    tmpl = tmpl or template_for(params.handedness)
    with ad.no_grad():
        verts, rest = shape_blend(tmpl, params.beta)
        transforms = forward_kinematics(rest, params.theta, tmpl.parents)
        posed = linear_blend_skin(verts, transforms, rest, tmpl.skin_weights)
    joints = tmpl.joint_regressor @ posed
    root = joints[0:1]
    return HandMesh(posed - root, joints - root, tmpl.faces)


def mirror_theta(theta):
    """Axis-angle rotations conjugated by the x-mirror: negate y and z components."""
    theta = np.asarray(theta, dtype=np.float64)
    return theta * np.array([1.0, -1.0, -1.0])


def export_obj(mesh: HandMesh, path, faces=None):
    faces = mesh.faces if faces is None else faces
    if faces is None:
        raise ValueError("mesh has no faces; pass them explicitly")
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in np.asarray(mesh.vertices)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(faces)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def signed_volume(vertices, faces=None):
    """Mesh volume using the right-hand template winding.

    A right mesh gives a positive value; an x-mirrored (left) vertex set
    gives a negative one, which makes this a chirality oracle.
    """
    faces = build_template().faces if faces is None else np.asarray(faces)
    v = np.asarray(vertices, dtype=np.float64)[..., faces, :]
    return np.einsum("...i,...i->...", v[..., 0, :], np.cross(v[..., 1, :], v[..., 2, :])).sum(-1) / 6.0


def chirality(vertices) -> str:
    return "right" if signed_volume(vertices) > 0 else "left"
