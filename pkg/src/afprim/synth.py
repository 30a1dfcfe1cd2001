"""Synthetic HOI scenes with known geometry, contacts and multi-view observations."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .body import (BONES, JOINT, JOINT_NAMES, ArticulatedBody, CAPSULE_RADII, axis_angle, reaching_joints,
                   root_frame, seated_joints, template_surface_params)
from .camera import CameraRig
from .geom import (RigidTransform, SurfacePointSet, TriMesh, box_mesh, cylinder_mesh, merge_meshes,
                   poisson_disk_sample, rasterize_silhouette)
from .lifting import ViewObservation, penetration_ratio
from .sample import HOISample
from .seeding import derive_rng

Array = np.ndarray

SCENARIOS = ("seated-box", "palm-on-table", "rider-straddle", "hand-on-handle", "seated-stool")

SEAT_GAP = 0.002
CONTACT_BAND = 0.01
CONTACT_ANGLE_DEG = 10.0
OBJECT_POINT_SEED = 7


@dataclass(frozen=True)
class ContactFace:
    """Upward-facing planar patch where the body rests: height and xy bounds."""

    height: float
    lo: Tuple[float, float]
    hi: Tuple[float, float]


@dataclass
class ScenarioTruth:
    contact_body: Array
    contact_object: Array
    occupancy: Dict[str, Array] = field(default_factory=dict)
    notes: str = ""


@dataclass
class Scenario:
    name: str
    object_mesh: TriMesh
    object_points: SurfacePointSet
    body: ArticulatedBody
    truth: ScenarioTruth
    seed: int
    jitter: float
    side_azimuth: float = 0.0
    faces: Tuple[ContactFace, ...] = ()

    def sample(self, pose: Optional[RigidTransform] = None) -> HOISample:
        pose = RigidTransform.identity() if pose is None else pose
        return HOISample(pose, self.body.transformed(pose), self.object_points, self.object_mesh,
                         {"scenario": self.name, "seed": self.seed, "jitter": self.jitter})


def _lowest(joints: Array, bones: Sequence[int]) -> float:
    """Lowest capsule point over the given bones (endpoint height minus radius)."""
    idx = np.asarray(BONES)[list(bones)]
    r = CAPSULE_RADII[list(bones)]
    return float((np.minimum(joints[idx[:, 0], 2], joints[idx[:, 1], 2]) - r).min())


def _bone_ids(*child_names: str) -> List[int]:
    return [k for k, (_, c) in enumerate(BONES) if JOINT_NAMES[c] in child_names]


SEAT_BONES = ("left_hip", "right_hip", "left_knee", "right_knee")  # bones ending at these joints


def _yaw_about(joints: Array, degrees: float, pivot: Array) -> Array:
    R = axis_angle([0.0, 0.0, 1.0], degrees)
    return (joints - pivot) @ R.T + pivot


def _clipped_normal(rng: np.random.Generator, scale: float, clip: float = 2.0) -> float:
    return float(np.clip(rng.standard_normal(), -clip, clip) * scale)


def _truth_contacts(body: ArticulatedBody, obj_pts: SurfacePointSet,
                    faces: Sequence[ContactFace]) -> Tuple[Array, Array]:
    """Body points within the contact band above a face with antiparallel normals, and
    the face points lying within 3 cm (horizontally) of such a body point."""
    P, N = body.surface.points, body.surface.normals
    cosmax = math.cos(math.radians(CONTACT_ANGLE_DEG))
    body_hit = np.zeros(len(P), dtype=bool)
    obj_hit = np.zeros(len(obj_pts), dtype=bool)
    for f in faces:
        inside = ((P[:, 0] >= f.lo[0]) & (P[:, 0] <= f.hi[0]) & (P[:, 1] >= f.lo[1]) & (P[:, 1] <= f.hi[1]))
        dz = P[:, 2] - f.height
        hit = inside & (dz >= -1e-9) & (dz <= CONTACT_BAND) & (-N[:, 2] >= cosmax)
        body_hit |= hit
        on_face = (np.abs(obj_pts.points[:, 2] - f.height) < 1e-6) & (obj_pts.normals[:, 2] > 0.99)
        if hit.any() and on_face.any():
            d = np.linalg.norm(obj_pts.points[on_face, None, :2] - P[None, hit, :2], axis=2)
            near = np.flatnonzero(on_face)[d.min(axis=1) <= 0.03]
            obj_hit[near] = True
    return np.flatnonzero(body_hit), np.flatnonzero(obj_hit)


@dataclass(frozen=True)
class _Layout:
    mesh: TriMesh
    faces: Tuple[ContactFace, ...]
    joints: Array
    side_azimuth: float
    notes: str


@functools.lru_cache(maxsize=None)
def _layout(name: str) -> _Layout:
    """Object geometry and un-jittered body pose; the object never depends on jitter."""
    if name in ("seated-box", "seated-stool"):
        top = 0.45
        if name == "seated-box":
            mesh = box_mesh((0.5, 0.5, top), (0.0, 0.0, top / 2))
            faces = (ContactFace(top, (-0.25, -0.25), (0.25, 0.25)),)
        else:
            mesh = cylinder_mesh(0.22, top, 40, (0.0, 0.0, top / 2))
            faces = (ContactFace(top, (-0.22, -0.22), (0.22, 0.22)),)
        j = seated_joints()
        j = j + [-0.03, 0.0, top + SEAT_GAP - _seat_bottom(j)]
        return _Layout(mesh, faces, j, 0.0, "seat contact under thighs and buttocks")
    if name == "palm-on-table":
        j = reaching_joints(45.0, "right", wrist_flex=-45.0) + [-0.7, 0.0, 0.0]
        height = _lowest(j, _bone_ids("right_wrist", "right_hand")) - SEAT_GAP
        mesh = box_mesh((0.8, 1.0, height), (0.0, 0.0, height / 2))
        faces = (ContactFace(height, (-0.4, -0.5), (0.4, 0.5)),)
        return _Layout(mesh, faces, j, 0.0, "right forearm and palm resting on the counter top")
    if name == "rider-straddle":
        top = 0.6
        mesh = box_mesh((1.2, 0.3, top), (0.0, 0.0, top / 2))
        faces = (ContactFace(top, (-0.6, -0.15), (0.6, 0.15)),)
        j = seated_joints(hip_abduct=20.0)
        j = j + [-0.15, 0.0, top + SEAT_GAP - _seat_bottom(j)]
        # oblique view: exactly side-on the near leg hides the far one and occlusion
        # carries almost no depth signal
        return _Layout(mesh, faces, j, 45.0,
                       "legs straddle the box; from azimuth 45 the box lies between the legs in depth")
    top = 0.5  # hand-on-handle
    seat = box_mesh((0.5, 0.4, top), (0.0, 0.0, top / 2))
    j = seated_joints(arms_forward=60.0)
    j = j + [-0.03, 0.0, top + SEAT_GAP - _seat_bottom(j)]
    bar_top = _lowest(j, _bone_ids("left_hand", "right_hand")) - SEAT_GAP
    hx = float(np.mean(j[[JOINT["left_hand"], JOINT["right_hand"]], 0]))
    bar = box_mesh((0.06, 0.7, 0.04), (hx, 0.0, bar_top - 0.02))
    faces = (ContactFace(top, (-0.25, -0.2), (0.25, 0.2)),
             ContactFace(bar_top, (hx - 0.03, -0.35), (hx + 0.03, 0.35)))
    return _Layout(merge_meshes([seat, bar]), faces, j, 0.0,
                   "seated with both hands resting on a handle bar")


@functools.lru_cache(maxsize=None)
def object_points(name: str, count: int = 1000) -> SurfacePointSet:
    """Poisson-disk object points, shared by every scene of a scenario."""
    return poisson_disk_sample(_layout(name).mesh, count, seed=OBJECT_POINT_SEED, source=name)


# xy jitter scale (m) per scenario; the stool additionally draws a uniform yaw
_JITTER_XY = {"seated-box": (0.01, 0.01), "seated-stool": (0.01, 0.01), "palm-on-table": (0.01, 0.01),
              "rider-straddle": (0.02, 0.002), "hand-on-handle": (0.005, 0.005)}
_JITTER_YAW = {"seated-box": 3.0}


def make_scenario(name: str, jitter: float = 0.0, seed: int = 0, n_object_points: int = 1000,
                  n_body_points: int = 1000) -> Scenario:
    """Deterministic scene in the canonical object frame (z up, floor at z = 0).

    Jitter moves only the body: clipped Gaussian xy shifts (and a yaw for seated-box)
    scaled by `jitter`. The seated-stool body is yawed uniformly about the stool axis.
    """
    if name not in SCENARIOS:
        raise ValueError(f"unknown scenario {name!r}; choose from {', '.join(SCENARIOS)}")
    if jitter < 0:
        raise ValueError("jitter must be >= 0")
    rng = np.random.default_rng(seed)
    lay = _layout(name)
    sx, sy = _JITTER_XY[name]
    shift = np.array([_clipped_normal(rng, sx * jitter), _clipped_normal(rng, sy * jitter), 0.0])
    yaw = _clipped_normal(rng, _JITTER_YAW.get(name, 0.0) * jitter)
    j = lay.joints
    if name == "seated-stool":
        j = _yaw_about(j + shift, float(rng.uniform(0.0, 360.0)), np.zeros(3))
    else:
        j = _yaw_about(j, yaw, j[JOINT["pelvis"]]) + shift
    occupancy = {part: j[JOINT[part]].copy() for part in ("right_hand", "left_hand")
                 if name in ("palm-on-table", "hand-on-handle")
                 and not (name == "palm-on-table" and part == "left_hand")}
    body = ArticulatedBody(j, CAPSULE_RADII.copy(), template_surface_params(n_body_points))
    obj_pts = object_points(name, n_object_points)
    cb, co = _truth_contacts(body, obj_pts, lay.faces)
    truth = ScenarioTruth(cb, co, occupancy, lay.notes)
    return Scenario(name, lay.mesh, obj_pts, body, truth, seed, jitter, lay.side_azimuth, lay.faces)


def _seat_bottom(j: Array) -> float:
    return _lowest(j, _bone_ids(*SEAT_BONES))


def scenario_penetration(scn: Scenario, samples: int = 10_000, seed: int = 0) -> float:
    return penetration_ratio(scn.body, scn.object_mesh, samples, seed)


# --------------------------------------------------------------------------
# datasets
# --------------------------------------------------------------------------


def random_pose(rng: np.random.Generator, spread: float = 1.0) -> RigidTransform:
    yaw = rng.uniform(0.0, 360.0)
    t = np.array([rng.uniform(-spread, spread), rng.uniform(-spread, spread), 0.0])
    return RigidTransform(axis_angle([0.0, 0.0, 1.0], yaw), t)


def make_scene(name: str, index: int, jitter: float = 1.0, seed: int = 0,
               n_object_points: int = 1000, n_body_points: int = 1000,
               posed: bool = True) -> Tuple[Scenario, RigidTransform]:
    """Scene `index` of a dataset: a jittered scenario and its random world pose."""
    rng = derive_rng(seed, "scene", index)
    scn = make_scenario(name, jitter, int(rng.integers(2 ** 31)), n_object_points, n_body_points)
    pose = random_pose(rng) if posed else RigidTransform.identity()
    return scn, pose


def make_dataset(name: str, n_samples: int, jitter: float = 1.0, seed: int = 0,
                 n_object_points: int = 1000, n_body_points: int = 1000,
                 posed: bool = True) -> List[HOISample]:
    """Jittered scenes, each placed in the world by a random object pose."""
    out = []
    for k in range(n_samples):
        scn, pose = make_scene(name, k, jitter, seed, n_object_points, n_body_points, posed)
        out.append(scn.sample(pose))
    return out


# --------------------------------------------------------------------------
# rendered observations
# --------------------------------------------------------------------------


def _reposed(joints: Array, rng: np.random.Generator) -> Array:
    """Independently re-posed body: yawed, tilted and shifted vertically by 1.0-1.6 m."""
    pivot = joints[JOINT["pelvis"]]
    yaw = rng.uniform(30.0, 90.0) * rng.choice([-1.0, 1.0])
    tilt = rng.uniform(10.0, 30.0) * rng.choice([-1.0, 1.0])
    R = axis_angle([0, 0, 1], yaw) @ axis_angle([1, 0, 0], tilt)
    shift = np.array([rng.uniform(-0.3, 0.3), rng.uniform(-0.3, 0.3),
                      rng.uniform(1.0, 1.6) * rng.choice([-1.0, 1.0])])
    return (joints - pivot) @ R.T + pivot + shift


def render_views(scenario: Scenario, rig: CameraRig, joint_noise_px: float = 0.0,
                 n_outlier_views: int = 0, seed: int = 0, mask_margin: float = 0.03,
                 resolution: Tuple[int, int] = (512, 512), depth_range: float = 0.5,
                 prompt_id=0, outlier_views: Optional[Sequence[int]] = None) -> List[ViewObservation]:
    """Observations of the scene from every rig view.

    2D joints are the projected ground truth plus isotropic pixel noise; 3D joints are the
    same noisy detections lifted at a random depth offset (so z_true = -offset). Masks are
    occlusion-aware silhouettes of the body inflated by `mask_margin` (a clothing allowance).
    `n_outlier_views` views other than view 0 instead see an independently re-posed body.
    """
    rng = np.random.default_rng(seed)
    cams = rig.views()
    V = len(cams)
    if outlier_views is None:
        if n_outlier_views > max(0, V - 1):
            raise ValueError("too many outlier views for this rig")
        outlier_views = sorted(rng.choice(np.arange(1, V), size=n_outlier_views, replace=False).tolist()) \
            if n_outlier_views else []
    outlier_views = set(int(v) for v in outlier_views)
    obj = scenario.object_mesh
    out = []
    for vid, cam in enumerate(cams):
        is_out = vid in outlier_views
        joints = _reposed(scenario.body.joints, rng) if is_out else scenario.body.joints
        body = scenario.body if not is_out else ArticulatedBody(joints, scenario.body.capsule_radii,
                                                                scenario.body.params)
        noise = rng.standard_normal((len(joints), 2)) * joint_noise_px
        u = cam.project(joints) + noise
        delta = float(rng.uniform(-depth_range, depth_range))
        lift = (noise @ cam.rotation[:2]) / cam.scale
        j3 = joints + lift + delta * cam.forward
        u = cam.project(j3)  # exact consistency of the 2D/3D pair
        mask = rasterize_silhouette(body.inflated(mask_margin).mesh(), cam, resolution, [obj])
        meta = {"z_true": -delta, "outlier": is_out}
        out.append(ViewObservation(vid, cam, u, j3, mask, prompt_id, None, meta))
    return out


def body_part_indices(body: ArticulatedBody, *child_joints: str) -> Array:
    bones = _bone_ids(*child_joints)
    return np.flatnonzero(np.isin(body.params.bone, bones))


def front_torso_indices(body: ArticulatedBody, min_dot: float = 0.9) -> Array:
    """Surface points on the spine capsules whose normal faces the body's front."""
    idx = body_part_indices(body, "spine1", "spine2", "spine3")
    fwd = root_frame(body.joints)[:, 0]
    return idx[body.surface.normals[idx] @ fwd >= min_dot]
