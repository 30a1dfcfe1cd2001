"""Articulated capsule body: a 24-joint skeleton with capsule flesh and ordered surface points."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np

from .geom import RigidTransform, SurfacePointSet, TriMesh, eliminate_samples, merge_meshes

Array = np.ndarray

JOINT_NAMES = (
    "pelvis", "left_hip", "right_hip", "spine1", "left_knee", "right_knee", "spine2",
    "left_ankle", "right_ankle", "spine3", "left_foot", "right_foot", "neck",
    "left_collar", "right_collar", "head", "left_shoulder", "right_shoulder",
    "left_elbow", "right_elbow", "left_wrist", "right_wrist", "left_hand", "right_hand",
)
JOINT = {name: k for k, name in enumerate(JOINT_NAMES)}
PARENTS = (-1, 0, 0, 0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 9, 9, 12, 13, 14, 16, 17, 18, 19, 20, 21)
BONES = tuple((PARENTS[c], c) for c in range(1, len(PARENTS)))

# Standing template in the body frame: x forward, y to the body's left, z up.
TEMPLATE_JOINTS = np.array([
    [0.00, 0.00, 0.95],   # pelvis
    [0.00, 0.09, 0.88],   # left_hip
    [0.00, -0.09, 0.88],  # right_hip
    [0.00, 0.00, 1.05],   # spine1
    [0.00, 0.10, 0.50],   # left_knee
    [0.00, -0.10, 0.50],  # right_knee
    [0.00, 0.00, 1.18],   # spine2
    [0.00, 0.10, 0.09],   # left_ankle
    [0.00, -0.10, 0.09],  # right_ankle
    [0.00, 0.00, 1.30],   # spine3
    [0.13, 0.10, 0.04],   # left_foot
    [0.13, -0.10, 0.04],  # right_foot
    [0.00, 0.00, 1.50],   # neck
    [0.00, 0.08, 1.44],   # left_collar
    [0.00, -0.08, 1.44],  # right_collar
    [0.02, 0.00, 1.62],   # head
    [0.00, 0.19, 1.42],   # left_shoulder
    [0.00, -0.19, 1.42],  # right_shoulder
    [0.00, 0.21, 1.14],   # left_elbow
    [0.00, -0.21, 1.14],  # right_elbow
    [0.00, 0.22, 0.89],   # left_wrist
    [0.00, -0.22, 0.89],  # right_wrist
    [0.00, 0.22, 0.81],   # left_hand
    [0.00, -0.22, 0.81],  # right_hand
])

_RADIUS_BY_CHILD = {
    "left_hip": 0.075, "right_hip": 0.075, "spine1": 0.12, "left_knee": 0.075,
    "right_knee": 0.075, "spine2": 0.12, "left_ankle": 0.055, "right_ankle": 0.055,
    "spine3": 0.12, "left_foot": 0.04, "right_foot": 0.04, "neck": 0.06,
    "left_collar": 0.06, "right_collar": 0.06, "head": 0.095, "left_shoulder": 0.05,
    "right_shoulder": 0.05, "left_elbow": 0.045, "right_elbow": 0.045, "left_wrist": 0.04,
    "right_wrist": 0.04, "left_hand": 0.035, "right_hand": 0.035,
}
CAPSULE_RADII = np.array([_RADIUS_BY_CHILD[JOINT_NAMES[c]] for _, c in BONES])

DEFAULT_SURFACE_POINTS = 1000


# --------------------------------------------------------------------------
# frames
# --------------------------------------------------------------------------


def root_frame(joints: Array) -> Array:
    """Body-attached orthonormal frame, columns (forward, left, up)."""
    up = joints[JOINT["neck"]] - joints[JOINT["pelvis"]]
    up = up / np.linalg.norm(up)
    left = joints[JOINT["left_hip"]] - joints[JOINT["right_hip"]]
    left = left - (left @ up) * up
    left = left / np.linalg.norm(left)
    fwd = np.cross(left, up)
    return np.column_stack([fwd, left, up])


def _shortest_arc(a: Array, b: Array) -> Array:
    """Rotation taking unit a to unit b (pi about a perpendicular axis if opposite)."""
    v = np.cross(a, b)
    c = float(a @ b)
    if c < -1.0 + 1e-12:
        axis = np.cross(a, [1.0, 0.0, 0.0])
        if np.linalg.norm(axis) < 1e-6:
            axis = np.cross(a, [0.0, 1.0, 0.0])
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + K + K @ K / (1.0 + c)


def _template_bone_frames() -> List[Array]:
    """Per-bone frames in the template body frame, columns (u1, u2, e)."""
    frames = []
    for a, b in BONES:
        e = TEMPLATE_JOINTS[b] - TEMPLATE_JOINTS[a]
        e = e / np.linalg.norm(e)
        ref = np.array([1.0, 0.0, 0.0]) if abs(e[0]) < 0.9 else np.array([0.0, 0.0, 1.0])
        u1 = ref - (ref @ e) * e
        u1 /= np.linalg.norm(u1)
        frames.append(np.column_stack([u1, np.cross(e, u1), e]))
    return frames


_TEMPLATE_FRAMES = _template_bone_frames()
_TEMPLATE_ROOT = root_frame(TEMPLATE_JOINTS)


def bone_frames(joints: Array) -> Array:
    """Bone frames for a posed skeleton, each carried from the template by the body root
    frame and a shortest-arc swing; rigid motions of the joints act on them covariantly."""
    Rroot = root_frame(joints) @ _TEMPLATE_ROOT.T
    out = np.empty((len(BONES), 3, 3))
    for k, (a, b) in enumerate(BONES):
        e = joints[b] - joints[a]
        e = e / np.linalg.norm(e)
        carried = Rroot @ _TEMPLATE_FRAMES[k]
        out[k] = _shortest_arc(carried[:, 2], e) @ carried
    return out


# --------------------------------------------------------------------------
# capsule geometry
# --------------------------------------------------------------------------


def segment_distance(q: Array, a: Array, b: Array) -> Array:
    """Distance from points q (P,3) to segments a->b (B,3); returns (P,B)."""
    q = np.atleast_2d(q)
    ab = b - a
    denom = np.maximum(np.einsum("bi,bi->b", ab, ab), 1e-300)
    t = np.einsum("pbi,bi->pb", q[:, None, :] - a[None], ab) / denom
    t = np.clip(t, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.linalg.norm(q[:, None, :] - closest, axis=-1)


def capsules_sdf(joints: Array, radii: Array, q: Array, bones=BONES) -> Array:
    """Max over capsules of (radius - distance to bone); positive inside."""
    idx = np.asarray(bones)
    q = np.asarray(q, dtype=np.float64)
    single = q.ndim == 1
    d = segment_distance(q.reshape(-1, 3), joints[idx[:, 0]], joints[idx[:, 1]])
    val = (radii[None, :] - d).max(axis=1)
    return val[0] if single else val


@dataclass(frozen=True)
class SurfaceParams:
    """Material coordinates of body surface points: bone, axial position s, local direction."""

    bone: Array
    s: Array
    direction: Array  # unit vectors in the bone frame (u1, u2, e)


def _sample_capsule_params(rng: np.random.Generator, count: int, lengths: Array, radii: Array):
    cyl = 2.0 * np.pi * radii * lengths
    cap = 4.0 * np.pi * radii ** 2
    areas = np.concatenate([cyl, cap])
    pick = rng.choice(len(areas), size=count, p=areas / areas.sum())
    nb = len(lengths)
    bone = pick % nb
    is_cap = pick >= nb
    s = rng.random(count)
    phi = rng.random(count) * 2.0 * np.pi
    d = np.column_stack([np.cos(phi), np.sin(phi), np.zeros(count)])
    sph = rng.standard_normal((count, 3))
    sph /= np.linalg.norm(sph, axis=1, keepdims=True)
    d[is_cap] = sph[is_cap]
    s[is_cap] = (sph[is_cap, 2] > 0).astype(np.float64)
    return bone, s, d


def surface_from_params(joints: Array, radii: Array, params: SurfaceParams,
                        frames: Optional[Array] = None) -> SurfacePointSet:
    if frames is None:
        frames = bone_frames(joints)
    idx = np.asarray(BONES)
    a = joints[idx[params.bone, 0]]
    b = joints[idx[params.bone, 1]]
    normals = np.einsum("nij,nj->ni", frames[params.bone], params.direction)
    pts = a + params.s[:, None] * (b - a) + radii[params.bone, None] * normals
    return SurfacePointSet(pts, normals, "body")


@lru_cache(maxsize=8)
def template_surface_params(count: int = DEFAULT_SURFACE_POINTS, seed: int = 0,
                            oversample: int = 5) -> SurfaceParams:
    """Blue-noise surface parametrization of the capsule union in the standing template."""
    rng = np.random.default_rng(seed)
    idx = np.asarray(BONES)
    lengths = np.linalg.norm(TEMPLATE_JOINTS[idx[:, 1]] - TEMPLATE_JOINTS[idx[:, 0]], axis=1)
    frames = bone_frames(TEMPLATE_JOINTS)
    bones, ss, ds = [], [], []
    need = count * oversample
    total_cands, total_kept = 0, 0
    while sum(len(b) for b in bones) < need:
        bone, s, d = _sample_capsule_params(rng, need, lengths, CAPSULE_RADII)
        params = SurfaceParams(bone, s, d)
        pts = surface_from_params(TEMPLATE_JOINTS, CAPSULE_RADII, params, frames).points
        dist = segment_distance(pts, TEMPLATE_JOINTS[idx[:, 0]], TEMPLATE_JOINTS[idx[:, 1]])
        inside = CAPSULE_RADII[None, :] - dist
        inside[np.arange(len(bone)), bone] = -np.inf
        keep = inside.max(axis=1) < -1e-6
        total_cands += len(bone)
        total_kept += int(keep.sum())
        bones.append(bone[keep])
        ss.append(s[keep])
        ds.append(d[keep])
    bone = np.concatenate(bones)[:need]
    s = np.concatenate(ss)[:need]
    d = np.concatenate(ds)[:need]
    params = SurfaceParams(bone, s, d)
    pts = surface_from_params(TEMPLATE_JOINTS, CAPSULE_RADII, params, frames).points
    area = float((2 * np.pi * CAPSULE_RADII * lengths + 4 * np.pi * CAPSULE_RADII ** 2).sum())
    area *= total_kept / total_cands
    keep = eliminate_samples(pts, count, area)
    return SurfaceParams(bone[keep], s[keep], d[keep])


def capsule_mesh(a: Array, b: Array, radius: float, segments: int = 12, rings: int = 4) -> TriMesh:
    """Closed triangulated capsule between a and b."""
    e = b - a
    length = np.linalg.norm(e)
    e = e / length if length > 0 else np.array([0.0, 0.0, 1.0])
    ref = np.array([1.0, 0.0, 0.0]) if abs(e[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.cross(e, ref)
    u /= np.linalg.norm(u)
    v = np.cross(e, u)
    phis = 2.0 * np.pi * np.arange(segments) / segments
    circle = np.cos(phis)[:, None] * u + np.sin(phis)[:, None] * v
    verts = [a - radius * e, b + radius * e]
    levels = []
    for k in range(1, rings + 1):  # bottom hemisphere, pole to equator
        th = -np.pi / 2 + k * (np.pi / 2) / rings
        levels.append(a + radius * (np.sin(th) * e + np.cos(th) * circle))
    for k in range(0, rings):  # top hemisphere, equator to pole
        th = k * (np.pi / 2) / rings
        levels.append(b + radius * (np.sin(th) * e + np.cos(th) * circle))
    base = 2
    for ring in levels:
        verts.extend(ring)
    V = np.array(verts)
    faces = []
    nl = len(levels)
    for j in range(segments):
        jn = (j + 1) % segments
        faces.append((0, base + jn, base + j))
        for r in range(nl - 1):
            r0, r1 = base + r * segments, base + (r + 1) * segments
            faces.append((r0 + j, r0 + jn, r1 + jn))
            faces.append((r0 + j, r1 + jn, r1 + j))
        top = base + (nl - 1) * segments
        faces.append((1, top + j, top + jn))
    return TriMesh(V, np.array(faces))


# --------------------------------------------------------------------------
# body
# --------------------------------------------------------------------------


@dataclass
class ArticulatedBody:
    joints: Array
    capsule_radii: Array = field(default_factory=lambda: CAPSULE_RADII.copy())
    params: SurfaceParams = None
    bones: Tuple[Tuple[int, int], ...] = BONES
    surface: SurfacePointSet = None

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 3)
        self.capsule_radii = np.asarray(self.capsule_radii, dtype=np.float64)
        if len(self.joints) != len(JOINT_NAMES):
            raise ValueError(f"expected {len(JOINT_NAMES)} joints, got {len(self.joints)}")
        if np.any(self.capsule_radii <= 0):
            raise ValueError("capsule radii must be positive")
        if self.params is None:
            self.params = template_surface_params()
        if self.surface is None:
            self.surface = surface_from_params(self.joints, self.capsule_radii, self.params)

    @classmethod
    def from_joints(cls, joints: Array, n_points: int = DEFAULT_SURFACE_POINTS,
                    radii: Optional[Array] = None) -> "ArticulatedBody":
        r = CAPSULE_RADII.copy() if radii is None else np.asarray(radii, dtype=np.float64)
        return cls(joints, r, template_surface_params(n_points))

    def transformed(self, T: RigidTransform) -> "ArticulatedBody":
        return ArticulatedBody(T.apply(self.joints), self.capsule_radii, self.params, self.bones)

    def translated(self, offset: Array) -> "ArticulatedBody":
        return self.transformed(RigidTransform(np.eye(3), offset))

    def inflated(self, margin: float) -> "ArticulatedBody":
        return ArticulatedBody(self.joints, self.capsule_radii + margin, self.params, self.bones)

    def sdf(self, q: Array) -> Array:
        return capsules_sdf(self.joints, self.capsule_radii, q, self.bones)

    @property
    def height(self) -> float:
        up = root_frame(self.joints)[:, 2]
        pts = self.surface.points @ up
        return float(pts.max() - pts.min())

    def mesh(self, segments: int = 12, rings: int = 4) -> TriMesh:
        return merge_meshes([capsule_mesh(self.joints[a], self.joints[b], r, segments, rings)
                             for (a, b), r in zip(self.bones, self.capsule_radii)])

    def bounds(self) -> Tuple[Array, Array]:
        idx = np.asarray(self.bones)
        r = self.capsule_radii[:, None]
        ends = np.vstack([self.joints[idx[:, 0]] - r, self.joints[idx[:, 1]] - r,
                          self.joints[idx[:, 0]] + r, self.joints[idx[:, 1]] + r])
        return ends.min(axis=0), ends.max(axis=0)

    def interior_samples(self, count: int = 10_000, seed: int = 0) -> Array:
        """Uniform points inside the capsule union, by rejection from the bounding box."""
        rng = np.random.default_rng(seed)
        lo, hi = self.bounds()
        out, have = [], 0
        while have < count:
            q = lo + (hi - lo) * rng.random((4 * count, 3))
            q = q[self.sdf(q) > 0]
            out.append(q)
            have += len(q)
        return np.vstack(out)[:count]

    def to_dict(self) -> dict:
        return {"joints": self.joints.tolist(), "capsule_radii": self.capsule_radii.tolist(),
                "n_points": len(self.surface)}

    @classmethod
    def from_dict(cls, d: dict) -> "ArticulatedBody":
        return cls.from_joints(np.asarray(d["joints"]), int(d.get("n_points", DEFAULT_SURFACE_POINTS)),
                               np.asarray(d["capsule_radii"]))


# --------------------------------------------------------------------------
# posing
# --------------------------------------------------------------------------


def axis_angle(axis, degrees: float) -> Array:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    th = math.radians(degrees)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(th) * K + (1 - math.cos(th)) * K @ K


def forward_kinematics(local: Dict[str, Array], root: Optional[Array] = None) -> Array:
    """Joint positions from per-joint local rotations applied to the template offsets.

    ``local[name]`` rotates the bones leaving joint ``name``; unlisted joints keep
    the template orientation.
    """
    G = [np.eye(3)] * len(JOINT_NAMES)
    out = np.empty_like(TEMPLATE_JOINTS)
    out[0] = TEMPLATE_JOINTS[0] if root is None else root
    G[0] = local.get("pelvis", np.eye(3))
    for c in range(1, len(JOINT_NAMES)):
        p = PARENTS[c]
        out[c] = out[p] + G[p] @ (TEMPLATE_JOINTS[c] - TEMPLATE_JOINTS[p])
        G[c] = G[p] @ local.get(JOINT_NAMES[c], np.eye(3))
    return out


def standing_joints() -> Array:
    return TEMPLATE_JOINTS.copy()


def seated_joints(hip_flex: float = 90.0, knee_flex: float = 90.0, hip_abduct: float = 0.0,
                  arms_forward: float = 0.0, elbow_flex: float = 0.0) -> Array:
    """Seated pose in the body frame with the pelvis at the template location.

    hip_abduct yaws the flexed thighs outward (degrees, symmetric); arms_forward raises
    the upper arms toward the front.
    """
    y = np.array([0.0, 1.0, 0.0])
    z = np.array([0.0, 0.0, 1.0])
    local = {
        "left_hip": axis_angle(z, hip_abduct) @ axis_angle(y, -hip_flex),
        "right_hip": axis_angle(z, -hip_abduct) @ axis_angle(y, -hip_flex),
        "left_knee": axis_angle(y, knee_flex),
        "right_knee": axis_angle(y, knee_flex),
        "left_shoulder": axis_angle(y, -arms_forward),
        "right_shoulder": axis_angle(y, -arms_forward),
        "left_elbow": axis_angle(y, -elbow_flex),
        "right_elbow": axis_angle(y, -elbow_flex),
    }
    return forward_kinematics(local)


def reaching_joints(arm_forward: float = 45.0, side: str = "right", wrist_flex: float = 0.0) -> Array:
    """Standing pose with one arm reaching forward and down; wrist_flex tilts the hand up."""
    y = np.array([0.0, 1.0, 0.0])
    local = {f"{side}_shoulder": axis_angle(y, -arm_forward),
             f"{side}_wrist": axis_angle(y, wrist_flex)}
    return forward_kinematics(local)
