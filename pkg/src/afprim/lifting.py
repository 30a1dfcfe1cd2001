"""2D to 3D uplift of generated humans.

Stages: multi-view inlier selection, occlusion-aware depth initialization, Adam
refinement of the scalar depth along the reference camera axis, and sample filtering.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Dict, Hashable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import expit

from .body import ArticulatedBody
from .camera import TriangulationError, WeakPerspectiveCamera, triangulate_two_view_batch
from .geom import Mask, SurfacePointSet, TriMesh, depth_buffer, iou

Array = np.ndarray

TAU_STAGE1 = 100.0
TAU_STAGE2 = 200.0
KAPPA = 50.0


class DivergenceError(RuntimeError):
    pass


@dataclass
class ViewObservation:
    view_id: Hashable
    camera: WeakPerspectiveCamera
    joints2d: Array
    joints3d: Array
    human_mask: Optional[Mask] = None
    prompt_id: Hashable = 0
    mask_path: Optional[str] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.joints2d = np.asarray(self.joints2d, dtype=np.float64).reshape(-1, 2)
        self.joints3d = np.asarray(self.joints3d, dtype=np.float64).reshape(-1, 3)
        if len(self.joints2d) != len(self.joints3d):
            raise ValueError(f"view {self.view_id}: joints2d and joints3d lengths differ")
        err = np.abs(self.camera.project(self.joints3d) - self.joints2d).max(initial=0.0)
        if err > 1e-6:
            raise ValueError(f"view {self.view_id}: joints2d inconsistent with joints3d ({err:.3g} px)")


@dataclass
class InlierSet:
    reference: Hashable
    members: List[Hashable] = field(default_factory=list)
    per_joint_inliers: Dict[Hashable, List[int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.members)


@dataclass
class DepthInit:
    z: float
    candidates: Array
    ious: Array
    spacing: float
    low_confidence: bool = False


@dataclass
class DepthSolution:
    z: float
    loss_trace: List[float]
    inliers: InlierSet
    initial_loss: float = 0.0
    final_loss: float = 0.0


@dataclass(frozen=True)
class FilterThresholds:
    iou_lo: float = 0.3
    iou_hi: float = 0.8
    tau_inlier: int = 3
    penetration: float = 0.01

    def __post_init__(self):
        if not 0.0 <= self.iou_lo <= self.iou_hi <= 1.0:
            raise ValueError("need 0 <= iou_lo <= iou_hi <= 1")
        if not 1 <= self.tau_inlier <= 50:
            raise ValueError("tau_inlier must lie in [1, 50]")
        if not 0.0 <= self.penetration <= 1.0:
            raise ValueError("penetration threshold must lie in [0, 1]")


@dataclass(frozen=True)
class Verdict:
    keep: bool
    reason: Optional[str] = None

    def __str__(self) -> str:
        return "keep" if self.keep else f"reject({self.reason})"


# --------------------------------------------------------------------------
# inlier selection
# --------------------------------------------------------------------------


def select_inliers(reference: ViewObservation, candidates: Sequence[ViewObservation],
                   tau_stage1: float = TAU_STAGE1, tau_stage2: float = TAU_STAGE2,
                   min_joints: Optional[int] = None) -> InlierSet:
    """Two-stage joint filtering, then view admission by surviving-joint count.

    Stage 1 triangulates every joint against the reference and drops joints whose
    two-view residual exceeds `tau_stage1`. Stage 2 is a per-joint RANSAC over the
    stage-1 survivors: each two-view triangulation (reference+view or view+view)
    that reprojects into the reference within `tau_stage2` is a hypothesis, its
    consensus is the survivor views reprojecting within `tau_stage2`. Hypotheses are
    ranked by MSAC cost (squared error truncated at `tau_stage2`), ties broken by the
    smallest view-id pair.
    """
    J = len(reference.joints2d)
    if min_joints is None:
        min_joints = max(1, J // 2)
    result = InlierSet(reference.view_id)
    views = sorted(candidates, key=lambda v: _sort_key(v.view_id))
    if not views:
        return result
    stage1: Dict[Hashable, Array] = {}
    for v in views:
        if len(v.joints2d) != J:
            raise ValueError(f"view {v.view_id} has {len(v.joints2d)} joints, expected {J}")
        try:
            _, res = triangulate_two_view_batch(reference.camera, reference.joints2d,
                                                v.camera, v.joints2d)
        except TriangulationError:
            continue
        stage1[v.view_id] = res <= tau_stage1
    alive = [v for v in views if v.view_id in stage1 and stage1[v.view_id].any()]
    if not alive:
        return result
    ids = [v.view_id for v in alive]
    surv = np.array([stage1[i] for i in ids])  # (V, J)

    def errors(X: Array) -> Array:
        return np.array([np.linalg.norm(v.camera.project(X) - v.joints2d, axis=1) for v in alive])

    hyps = []  # (key, valid (J,), consensus (V, J))
    for a, va in enumerate(alive):
        X, _ = triangulate_two_view_batch(reference.camera, reference.joints2d, va.camera, va.joints2d)
        hyps.append(((0, _sort_key(va.view_id)), surv[a].copy(), errors(X)))
    for a, b in itertools.combinations(range(len(alive)), 2):
        try:
            X, _ = triangulate_two_view_batch(alive[a].camera, alive[a].joints2d,
                                              alive[b].camera, alive[b].joints2d)
        except TriangulationError:
            continue
        ref_err = np.linalg.norm(reference.camera.project(X) - reference.joints2d, axis=1)
        valid = surv[a] & surv[b] & (ref_err < tau_stage2)
        hyps.append(((1, _sort_key(alive[a].view_id), _sort_key(alive[b].view_id)), valid, errors(X)))
    # per-joint MSAC: truncated squared error over stage-1 survivors, lowest cost wins;
    # a plain inlier count would favour compromise triangulations of good and bad views
    tau2 = tau_stage2 * tau_stage2
    best_cost = np.full(J, np.inf)
    best_key: List[Optional[tuple]] = [None] * J
    best_cons = np.zeros((len(alive), J), dtype=bool)
    for key, valid, err in hyps:
        cons = surv & (err < tau_stage2)
        cost = np.where(surv, np.minimum(err * err, tau2), tau2).sum(axis=0)
        for j in np.flatnonzero(valid):
            if cost[j] < best_cost[j] or (cost[j] == best_cost[j] and key < best_key[j]):
                best_cost[j] = cost[j]
                best_key[j] = key
                best_cons[:, j] = cons[:, j]
    for a, vid in enumerate(ids):
        joints = np.flatnonzero(best_cons[a])
        if len(joints) >= min_joints and len(joints) > 0:
            result.members.append(vid)
            result.per_joint_inliers[vid] = joints.tolist()
    return result


def _sort_key(view_id):
    return (0, view_id, "") if isinstance(view_id, (int, np.integer)) else (1, 0, str(view_id))


# --------------------------------------------------------------------------
# reprojection loss
# --------------------------------------------------------------------------


def reprojection_quadratic(reference: ViewObservation, inliers: InlierSet,
                           views: Mapping[Hashable, ViewObservation]) -> Tuple[float, float, float]:
    """Coefficients (c2, c1, c0) with loss(z) = c2 z^2 + c1 z + c0."""
    if not inliers.members:
        raise ValueError("reprojection loss needs a nonempty inlier set")
    f = reference.camera.forward
    c2 = c1 = c0 = 0.0
    for vid in inliers.members:
        v = views[vid]
        idx = np.asarray(inliers.per_joint_inliers[vid], dtype=np.int64)
        a = v.camera.project(reference.joints3d[idx]) - v.joints2d[idx]
        b = v.camera.scale * (v.camera.rotation[:2] @ f)
        c2 += len(idx) * float(b @ b)
        c1 += 2.0 * float((a @ b).sum())
        c0 += float((a * a).sum())
    n = len(inliers.members)
    return c2 / n, c1 / n, c0 / n


def reprojection_loss(z: float, reference: ViewObservation, inliers: InlierSet,
                      views: Mapping[Hashable, ViewObservation]) -> float:
    """Mean over inlier views of summed squared pixel error of the shifted reference joints."""
    if not inliers.members:
        raise ValueError("reprojection loss needs a nonempty inlier set")
    shifted = reference.joints3d + z * reference.camera.forward
    total = 0.0
    for vid in inliers.members:
        v = views[vid]
        idx = inliers.per_joint_inliers[vid]
        d = v.camera.project(shifted[idx]) - v.joints2d[idx]
        total += float((d * d).sum())
    return total / len(inliers.members)


def analytic_depth(reference: ViewObservation, inliers: InlierSet,
                   views: Mapping[Hashable, ViewObservation]) -> float:
    c2, c1, _ = reprojection_quadratic(reference, inliers, views)
    if c2 <= 0:
        raise ValueError("reprojection loss is flat in z (inlier cameras parallel to the reference)")
    return -c1 / (2.0 * c2)


# --------------------------------------------------------------------------
# collision
# --------------------------------------------------------------------------


def capsule_sdf(body: ArticulatedBody, q: Array):
    return body.sdf(q)


def collision_loss(body: ArticulatedBody, object_points: SurfacePointSet | Array,
                   kappa: float = KAPPA, offset: Optional[Array] = None) -> float:
    """Mean over object points of sigmoid(kappa * sdf) on points inside the body.

    `offset` translates the body without rebuilding it.
    """
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    pts = object_points.points if isinstance(object_points, SurfacePointSet) else np.asarray(object_points)
    if len(pts) == 0:
        return 0.0
    q = pts if offset is None else pts - offset
    sdf = body.sdf(q)
    inside = sdf > 0
    return float(expit(kappa * sdf[inside]).sum() / len(pts))


# --------------------------------------------------------------------------
# depth initialization
# --------------------------------------------------------------------------


def center_depth(body: ArticulatedBody, object_vertices: Array, forward: Array) -> float:
    """Depth shift along `forward` minimizing the mean pelvis-to-vertex distance."""
    p0 = body.joints[0]
    V = np.asarray(object_vertices, dtype=np.float64)
    s = (V - p0) @ forward
    lo, hi = float(s.min()) - 1.0, float(s.max()) + 1.0

    def mean_dist(z):
        return float(np.linalg.norm(p0 + z * forward - V, axis=1).mean())

    res = minimize_scalar(mean_dist, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-7})
    return float(res.x)


def forward_extent(body: ArticulatedBody, forward: Array) -> float:
    d = body.surface.points @ forward
    return float(d.max() - d.min())


def init_depth(body: ArticulatedBody, object_mesh: Optional[TriMesh], camera: WeakPerspectiveCamera,
               human_mask: Mask, k: int = 7, spacing_mult: float = 0.3) -> DepthInit:
    """Pick the best of k equispaced depths along the camera axis by occlusion-aware IoU.

    Translating along the forward axis leaves the projection unchanged and shifts every
    fragment depth by the same amount, so one body depth buffer serves all candidates.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    f = camera.forward
    zc = 0.0 if object_mesh is None else center_depth(body, object_mesh.vertices, f)
    spacing = spacing_mult * forward_extent(body, f)
    offsets = (np.arange(k) - (k - 1) / 2.0) * spacing
    zs = zc + offsets
    w, h = human_mask.width, human_mask.height
    zb = depth_buffer(body.mesh(), camera, w, h)
    covered = np.isfinite(zb)
    zo = depth_buffer(object_mesh, camera, w, h) if object_mesh is not None else None
    ious = np.empty(k)
    for c, z in enumerate(zs):
        bits = covered if zo is None else covered & ~(zo < zb + z)
        ious[c] = iou(Mask(w, h, bits), human_mask)
    center = (k - 1) / 2.0
    order = sorted(range(k), key=lambda c: (-ious[c], abs(c - center), c))
    best = order[0]
    return DepthInit(float(zs[best]), zs, ious, spacing, bool(np.all(ious == 0)))


def rendered_iou(body: ArticulatedBody, object_mesh: Optional[TriMesh], camera: WeakPerspectiveCamera,
                 human_mask: Mask) -> float:
    w, h = human_mask.width, human_mask.height
    zb = depth_buffer(body.mesh(), camera, w, h)
    bits = np.isfinite(zb)
    if object_mesh is not None:
        bits &= ~(depth_buffer(object_mesh, camera, w, h) < zb)
    return iou(Mask(w, h, bits), human_mask)


# --------------------------------------------------------------------------
# optimization
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamParams:
    lr: float = 1e-2
    iterations: int = 200
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    fd_step: float = 1e-4

    def __post_init__(self):
        if self.lr <= 0 or self.iterations < 0 or self.fd_step <= 0:
            raise ValueError("invalid Adam parameters")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("Adam betas must lie in [0, 1)")


def optimize_depth(z0: float, reference: ViewObservation, inliers: InlierSet,
                   views: Mapping[Hashable, ViewObservation], body: ArticulatedBody,
                   object_points: SurfacePointSet | Array | None, lambda_collision: float = 400.0,
                   adam: AdamParams = AdamParams(), kappa: float = KAPPA,
                   scene_diameter: Optional[float] = None) -> DepthSolution:
    """Adam on total loss = reprojection + lambda * collision over the scalar depth.

    `body` is the reference body at z = 0; the collision term uses central finite
    differences. Returns the iterate with the lowest loss seen.
    """
    c2, c1, c0 = reprojection_quadratic(reference, inliers, views)
    f = reference.camera.forward
    pts = None
    if object_points is not None:
        pts = object_points.points if isinstance(object_points, SurfacePointSet) else np.asarray(object_points)
    use_coll = lambda_collision != 0 and pts is not None and len(pts) > 0
    if scene_diameter is None:
        cloud = body.surface.points if pts is None else np.vstack([body.surface.points, pts])
        scene_diameter = float(np.linalg.norm(cloud.max(axis=0) - cloud.min(axis=0)))
    limit = 10.0 * max(scene_diameter, 1e-9)

    def coll(z):
        return collision_loss(body, pts, kappa, z * f) if use_coll else 0.0

    def total(z):
        return c2 * z * z + c1 * z + c0 + lambda_collision * coll(z)

    z = float(z0)
    m = v = 0.0
    best_z, best_loss = z, total(z)
    trace = [best_loss]
    initial = best_loss
    for it in range(1, adam.iterations + 1):
        g = 2.0 * c2 * z + c1
        if use_coll:
            h = adam.fd_step
            g += lambda_collision * (coll(z + h) - coll(z - h)) / (2.0 * h)
        m = adam.beta1 * m + (1 - adam.beta1) * g
        v = adam.beta2 * v + (1 - adam.beta2) * g * g
        mhat = m / (1 - adam.beta1 ** it)
        vhat = v / (1 - adam.beta2 ** it)
        z -= adam.lr * mhat / (math.sqrt(vhat) + adam.eps)
        if not math.isfinite(z) or abs(z) > limit:
            raise DivergenceError(f"depth diverged at iteration {it}: z={z:.4g}, limit {limit:.4g}")
        loss = total(z)
        trace.append(loss)
        if loss < best_loss:
            best_z, best_loss = z, loss
    return DepthSolution(best_z, trace, inliers, initial, best_loss)


# --------------------------------------------------------------------------
# filtering
# --------------------------------------------------------------------------


def penetration_ratio(body: ArticulatedBody, object_mesh: TriMesh, samples: int = 10_000,
                      seed: int = 0) -> float:
    """Monte Carlo fraction of body volume inside the (closed) object mesh."""
    if samples < 10_000:
        raise ValueError("penetration estimate needs at least 1e4 samples")
    q = body.interior_samples(samples, seed)
    lo = object_mesh.vertices.min(axis=0)
    hi = object_mesh.vertices.max(axis=0)
    near = np.all((q >= lo) & (q <= hi), axis=1)
    if not near.any():
        return 0.0
    return float(object_mesh.contains(q[near]).sum() / len(q))


def filter_sample(sample=None, iou: float = 0.0, n_inliers: int = 0, penetration_ratio: float = 0.0,
                  thresholds: FilterThresholds = FilterThresholds()) -> Verdict:
    """Keep unless the IoU is outside [iou_lo, iou_hi], inliers are too few or penetration too deep.

    `sample` is accepted for provenance only; the verdict depends on the statistics.
    """
    if iou < thresholds.iou_lo or iou > thresholds.iou_hi:
        return Verdict(False, "iou")
    if n_inliers < thresholds.tau_inlier:
        return Verdict(False, "inliers")
    if penetration_ratio > thresholds.penetration:
        return Verdict(False, "penetration")
    return Verdict(True)


# --------------------------------------------------------------------------
# full lift of one reference view
# --------------------------------------------------------------------------


@dataclass
class LiftConfig:
    tau_stage1: float = TAU_STAGE1
    tau_stage2: float = TAU_STAGE2
    min_joints: Optional[int] = None
    k_candidates: int = 7
    spacing_mult: float = 0.3
    lambda_collision: float = 400.0
    kappa: float = KAPPA
    adam: AdamParams = AdamParams()
    thresholds: FilterThresholds = FilterThresholds()
    penetration_samples: int = 10_000


@dataclass
class LiftResult:
    reference: Hashable
    body: Optional[ArticulatedBody]
    z: Optional[float]
    verdict: Verdict
    inliers: InlierSet
    init: Optional[DepthInit] = None
    solution: Optional[DepthSolution] = None
    iou: float = 0.0
    penetration: float = 0.0


def lift_view(reference: ViewObservation, candidates: Sequence[ViewObservation],
              object_mesh: TriMesh, object_points: SurfacePointSet,
              config: LiftConfig = LiftConfig(), seed: int = 0,
              body_radii: Optional[Array] = None) -> LiftResult:
    others = [c for c in candidates if c.view_id != reference.view_id
              and c.prompt_id == reference.prompt_id]
    inl = select_inliers(reference, others, config.tau_stage1, config.tau_stage2, config.min_joints)
    if len(inl) < config.thresholds.tau_inlier:
        return LiftResult(reference.view_id, None, None, Verdict(False, "inliers"), inl)
    views = {c.view_id: c for c in others}
    body0 = ArticulatedBody.from_joints(reference.joints3d, radii=body_radii)
    if reference.human_mask is None:
        raise ValueError(f"view {reference.view_id}: human mask required for depth initialization")
    init = init_depth(body0, object_mesh, reference.camera, reference.human_mask,
                      config.k_candidates, config.spacing_mult)
    sol = optimize_depth(init.z, reference, inl, views, body0, object_points,
                         config.lambda_collision, config.adam, config.kappa)
    body = body0.translated(sol.z * reference.camera.forward)
    score = rendered_iou(body, object_mesh, reference.camera, reference.human_mask)
    pen = penetration_ratio(body, object_mesh, config.penetration_samples, seed)
    verdict = filter_sample(None, score, len(inl), pen, config.thresholds)
    return LiftResult(reference.view_id, body, sol.z, verdict, inl, init, sol, score, pen)
