"""Weak-perspective cameras, multi-view rigs and two-view triangulation."""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from .geom import RigidTransform

Array = np.ndarray

COND_LIMIT = 1e10
MIN_VIEW_ANGLE_DEG = 1.0


class TriangulationError(ValueError):
    """Raised when two views cannot determine a 3D point."""


@dataclass(frozen=True)
class WeakPerspectiveCamera:
    rotation: Array
    scale: float
    offset: Array

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9):
            raise ValueError("camera rotation must be orthonormal")
        if not self.scale > 0:
            raise ValueError("camera scale must be positive")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "scale", float(self.scale))
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=np.float64).reshape(2))

    @property
    def forward(self) -> Array:
        return self.rotation[2]

    def project(self, x: Array) -> Array:
        x = np.asarray(x, dtype=np.float64)
        return self.scale * (x @ self.rotation[:2].T) + self.offset

    def depth(self, x: Array) -> Array:
        return np.asarray(x, dtype=np.float64) @ self.forward

    def compose(self, T: RigidTransform) -> "WeakPerspectiveCamera":
        """Camera that images T(x) the way this one images x."""
        R = self.rotation @ T.rotation
        return WeakPerspectiveCamera(R, self.scale,
                                     self.offset + self.scale * (self.rotation[:2] @ T.translation))

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.reshape(-1).tolist(), "scale": self.scale,
                "offset": self.offset.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "WeakPerspectiveCamera":
        return cls(np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3), d["scale"],
                   np.asarray(d["offset"], dtype=np.float64))


def project(camera: WeakPerspectiveCamera, x: Array) -> Array:
    return camera.project(x)


def look_rotation(azimuth_deg: float, elevation_deg: float) -> Array:
    """World-to-camera rotation for a camera on the (azimuth, elevation) sphere looking inward.

    Rows are (right, down, forward) so image v grows downward and z is world-up.
    """
    a, e = math.radians(azimuth_deg), math.radians(elevation_deg)
    f = -np.array([math.cos(e) * math.cos(a), math.cos(e) * math.sin(a), math.sin(e)])
    right = np.cross(f, [0.0, 0.0, 1.0])
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    return np.stack([right, down, f])


def look_at_camera(azimuth_deg: float, elevation_deg: float, scale: float = 256.0,
                   resolution=(512, 512), target=(0.0, 0.0, 0.0)) -> WeakPerspectiveCamera:
    """Camera whose image center shows `target`."""
    R = look_rotation(azimuth_deg, elevation_deg)
    center = np.array([resolution[0] / 2.0, resolution[1] / 2.0])
    offset = center - scale * (R[:2] @ np.asarray(target, dtype=np.float64))
    return WeakPerspectiveCamera(R, scale, offset)


@dataclass
class CameraRig:
    cameras: List[WeakPerspectiveCamera]
    object_perturbations: List[RigidTransform] = field(default_factory=list)
    kind: str = "static"
    azimuths: List[float] = field(default_factory=list)
    elevation: float = 0.0

    def __post_init__(self):
        if self.kind not in ("static", "dynamic"):
            raise ValueError(f"unknown rig kind {self.kind!r}")
        if self.kind == "static" and self.object_perturbations:
            raise ValueError("static rigs carry no perturbations")
        if not self.cameras:
            raise ValueError("rig needs at least one camera")

    def views(self) -> List[WeakPerspectiveCamera]:
        """All (camera, perturbation) views, round-major for dynamic rigs.

        A perturbed object imaged by camera c equals the unperturbed object imaged
        by c composed with the perturbation, so each view is itself a camera.
        """
        if self.kind == "static":
            return list(self.cameras)
        return [cam.compose(T) for T in self.object_perturbations for cam in self.cameras]

    def to_dict(self) -> dict:
        return {"kind": self.kind,
                "cameras": [c.to_dict() for c in self.cameras],
                "perturbations": [T.to_dict() for T in self.object_perturbations]}

    @classmethod
    def from_dict(cls, d: dict) -> "CameraRig":
        return cls([WeakPerspectiveCamera.from_dict(c) for c in d["cameras"]],
                   [RigidTransform.from_dict(t) for t in d.get("perturbations", [])],
                   d.get("kind", "static"))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "CameraRig":
        return cls.from_dict(json.loads(text))


def build_static_rig(n_cameras: int = 8, elevation: float = 0.0, scale: float = 256.0,
                     offset=None, resolution=(512, 512), target=(0.0, 0.0, 0.0),
                     strict_elevation: bool = False) -> CameraRig:
    """Equal-azimuth ring of inward-looking cameras.

    With `offset=None` each camera centers `target` in the image; an explicit offset
    is used verbatim for every camera.
    """
    if n_cameras < 1:
        raise ValueError("n_cameras must be >= 1")
    if not 0.0 <= elevation <= 30.0:
        msg = f"elevation {elevation} outside [0, 30] degrees"
        if strict_elevation:
            raise ValueError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    azimuths = [360.0 * k / n_cameras for k in range(n_cameras)]
    cams = []
    for az in azimuths:
        cam = look_at_camera(az, elevation, scale, resolution, target)
        if offset is not None:
            cam = WeakPerspectiveCamera(cam.rotation, scale, offset)
        cams.append(cam)
    return CameraRig(cams, [], "static", azimuths, float(elevation))


def euler_zyx(yaw: float, pitch: float, roll: float) -> Array:
    """Rotation Rz(yaw) Ry(pitch) Rx(roll), angles in degrees."""
    y, p, r = (math.radians(v) for v in (yaw, pitch, roll))
    Rz = np.array([[math.cos(y), -math.sin(y), 0], [math.sin(y), math.cos(y), 0], [0, 0, 1]])
    Ry = np.array([[math.cos(p), 0, math.sin(p)], [0, 1, 0], [-math.sin(p), 0, math.cos(p)]])
    Rx = np.array([[1, 0, 0], [0, math.cos(r), -math.sin(r)], [0, math.sin(r), math.cos(r)]])
    return Rz @ Ry @ Rx


def build_dynamic_rig(n_cameras: int = 4, rounds: int = 10,
                      euler_ranges: Sequence[Tuple[float, float]] = ((-30, 30), (-15, 15), (-15, 15)),
                      translation_ranges: Sequence[Tuple[float, float]] = ((-0.1, 0.1),) * 3,
                      seed: int = 0, elevation: float = 0.0, scale: float = 256.0,
                      resolution=(512, 512), target=(0.0, 0.0, 0.0)) -> CameraRig:
    """Fixed camera ring plus `rounds` random object perturbations (yaw/pitch/roll in degrees)."""
    ranges = list(euler_ranges) + list(translation_ranges)
    if len(ranges) != 6:
        raise ValueError("need three euler and three translation ranges")
    for lo, hi in ranges:
        if lo > hi:
            raise ValueError(f"malformed range ({lo}, {hi})")
    base = build_static_rig(n_cameras, elevation, scale, None, resolution, target)
    rng = np.random.default_rng(seed)
    lo = np.array([r[0] for r in ranges], dtype=np.float64)
    hi = np.array([r[1] for r in ranges], dtype=np.float64)
    perts = []
    for _ in range(rounds):
        v = lo + (hi - lo) * rng.random(6)
        perts.append(RigidTransform(euler_zyx(*v[:3]), v[3:]))
    return CameraRig(base.cameras, perts, "dynamic", base.azimuths, float(elevation))


def _view_system(cam: WeakPerspectiveCamera, u: Array):
    A = cam.scale * cam.rotation[:2]
    b = np.asarray(u, dtype=np.float64) - cam.offset
    return A, b


def triangulate_two_view(cam_a: WeakPerspectiveCamera, u_a, cam_b: WeakPerspectiveCamera,
                         u_b) -> Tuple[Array, float]:
    """Least-squares 3D point from two weak-perspective observations.

    Returns the point and the RMS of the two reprojection errors in pixels.
    """
    cosang = float(np.clip(cam_a.forward @ cam_b.forward, -1.0, 1.0))
    ang = math.degrees(math.acos(cosang))
    if min(ang, 180.0 - ang) <= MIN_VIEW_ANGLE_DEG:
        raise TriangulationError(f"camera forwards nearly parallel ({ang:.3g} deg)")
    Aa, ba = _view_system(cam_a, u_a)
    Ab, bb = _view_system(cam_b, u_b)
    A = np.vstack([Aa, Ab])
    b = np.concatenate([ba, bb])
    N = A.T @ A
    cond = np.linalg.cond(N)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise TriangulationError(f"ill-conditioned normal matrix (cond={cond:.3g})")
    X = np.linalg.solve(N, A.T @ b)
    ea = np.linalg.norm(cam_a.project(X) - u_a)
    eb = np.linalg.norm(cam_b.project(X) - u_b)
    return X, float(math.sqrt((ea * ea + eb * eb) / 2.0))


def triangulate_two_view_batch(cam_a: WeakPerspectiveCamera, U_a: Array,
                               cam_b: WeakPerspectiveCamera, U_b: Array) -> Tuple[Array, Array]:
    """Vectorized version of :func:`triangulate_two_view` over J point pairs."""
    cosang = float(np.clip(cam_a.forward @ cam_b.forward, -1.0, 1.0))
    ang = math.degrees(math.acos(cosang))
    if min(ang, 180.0 - ang) <= MIN_VIEW_ANGLE_DEG:
        raise TriangulationError(f"camera forwards nearly parallel ({ang:.3g} deg)")
    A = np.vstack([cam_a.scale * cam_a.rotation[:2], cam_b.scale * cam_b.rotation[:2]])
    N = A.T @ A
    cond = np.linalg.cond(N)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise TriangulationError(f"ill-conditioned normal matrix (cond={cond:.3g})")
    U_a = np.asarray(U_a, dtype=np.float64)
    U_b = np.asarray(U_b, dtype=np.float64)
    B = np.hstack([U_a - cam_a.offset, U_b - cam_b.offset])  # (J, 4)
    X = np.linalg.solve(N, A.T @ B.T).T
    ea = np.linalg.norm(cam_a.project(X) - U_a, axis=1)
    eb = np.linalg.norm(cam_b.project(X) - U_b, axis=1)
    return X, np.sqrt((ea ** 2 + eb ** 2) / 2.0)
