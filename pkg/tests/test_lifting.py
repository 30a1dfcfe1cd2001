import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afprim.body import ArticulatedBody, seated_joints, standing_joints
from afprim.camera import build_static_rig, look_at_camera
from afprim.geom import Mask, box_mesh, poisson_disk_sample, rasterize_silhouette
from afprim.lifting import (AdamParams, DivergenceError, FilterThresholds, InlierSet, LiftConfig,
                            ViewObservation, analytic_depth, capsule_sdf, collision_loss,
                            filter_sample, init_depth, lift_view, optimize_depth, penetration_ratio,
                            reprojection_loss, reprojection_quadratic, select_inliers)
from afprim.synth import make_scenario, render_views

RIG = build_static_rig(8, elevation=10, target=(0, 0, 0.75))


@pytest.fixture(scope="module")
def scene():
    return make_scenario("seated-box", jitter=1.0, seed=2)


def _exact_views(joints, rng, depth=0.5, cams=None):
    out = []
    for k, cam in enumerate(cams or RIG.views()):
        j3 = joints + rng.uniform(-depth, depth) * cam.forward
        out.append(ViewObservation(k, cam, cam.project(j3), j3))
    return out


def _all_inliers(views, ref=0):
    members = [v.view_id for v in views if v.view_id != ref]
    return InlierSet(ref, members, {m: list(range(len(views[0].joints2d))) for m in members})


def test_view_observation_consistency():
    cam = RIG.views()[0]
    j = standing_joints()
    with pytest.raises(ValueError):
        ViewObservation(0, cam, cam.project(j) + 1.0, j)
    with pytest.raises(ValueError):
        ViewObservation(0, cam, cam.project(j)[:5], j)


def test_exact_rerenderings_are_all_inliers(rng):
    views = _exact_views(seated_joints(), rng)
    inl = select_inliers(views[0], views[1:])
    assert inl.members == list(range(1, 8))
    assert all(len(inl.per_joint_inliers[m]) == 24 for m in inl.members)


def _displace(view, px, rng):
    shift = rng.choice([-1.0, 1.0], (24, 2)) * px / np.sqrt(2)
    j3 = view.joints3d + (shift @ view.camera.rotation[:2]) / view.camera.scale
    return ViewObservation(view.view_id, view.camera, view.camera.project(j3), j3)


def test_displaced_views_are_excluded(rng):
    views = _exact_views(seated_joints(), rng)
    bad = {2, 5, 7}
    cands = [(_displace(v, 500, rng) if v.view_id in bad else v) for v in views[1:]]
    inl = select_inliers(views[0], cands)
    assert inl.members == [1, 3, 4, 6]


def test_parallel_candidate_is_excluded(rng):
    views = _exact_views(seated_joints(), rng)
    same = ViewObservation(9, views[0].camera, views[0].joints2d, views[0].joints3d)
    assert select_inliers(views[0], [same]).members == []
    assert select_inliers(views[0], []).members == []


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_select_inliers_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    views = _exact_views(seated_joints(), rng)
    cands = [(_displace(v, 400, rng) if v.view_id in (3, 6) else v) for v in views[1:]]
    a = select_inliers(views[0], cands)
    b = select_inliers(views[0], list(rng.permutation(np.array(cands, dtype=object))))
    assert a.members == b.members and a.per_joint_inliers == b.per_joint_inliers


def test_reprojection_loss_properties(rng):
    joints = seated_joints()
    views = _exact_views(joints, rng)
    ref = views[0]
    z_true = float((joints - ref.joints3d)[0] @ ref.camera.forward)
    inl = _all_inliers(views)
    store = {v.view_id: v for v in views}
    assert reprojection_loss(z_true, ref, inl, store) < 1e-12
    # quadratic minimizer vs dense grid search
    z_star = analytic_depth(ref, inl, store)
    grid = np.arange(z_true - 0.5, z_true + 0.5, 1e-4)
    vals = [reprojection_loss(z, ref, inl, store) for z in grid]
    assert abs(grid[int(np.argmin(vals))] - z_star) <= 1e-4
    c2, c1, c0 = reprojection_quadratic(ref, inl, store)
    for z in (-0.3, 0.1, 0.7):
        assert abs(c2 * z * z + c1 * z + c0 - reprojection_loss(z, ref, inl, store)) < 1e-6
    # the same world offset on every view leaves the loss unchanged
    off = rng.standard_normal(3)
    moved = {k: ViewObservation(k, v.camera, v.camera.project(v.joints3d + off), v.joints3d + off)
             for k, v in store.items()}
    assert abs(reprojection_loss(0.2, moved[0], inl, moved) - reprojection_loss(0.2, ref, inl, store)) < 1e-6
    # gauge: shifting the reference along its forward is absorbed by z
    g = 0.37
    f = ref.camera.forward
    ref2 = ViewObservation(0, ref.camera, ref.joints2d, ref.joints3d + g * f)
    assert abs(reprojection_loss(0.1 - g, ref2, inl, store) - reprojection_loss(0.1, ref, inl, store)) < 1e-9
    with pytest.raises(ValueError):
        reprojection_loss(0.0, ref, InlierSet(0), store)


def test_capsule_sdf_and_collision_examples():
    body = ArticulatedBody.from_joints(standing_joints(), 200)
    a, b = body.bones[3]
    r = body.capsule_radii[3]
    mid = 0.5 * (body.joints[a] + body.joints[b])
    assert capsule_sdf(body, mid) >= r - 1e-12
    far = np.array([[5.0, 5.0, 5.0], [6.0, 5.0, 5.0]])
    assert collision_loss(body, far) == 0.0
    # a point on an isolated bone axis: forearm midpoint
    k = 19
    a, b = body.bones[k]
    q = 0.5 * (body.joints[a] + body.joints[b])
    pts = np.vstack([far, q[None]])
    s = float(capsule_sdf(body, q))
    assert abs(collision_loss(body, pts, 50.0) - 1 / (1 + np.exp(-50 * s)) / 3) < 1e-15
    with pytest.raises(ValueError):
        collision_loss(body, pts, 0.0)


def test_collision_decreases_when_escaping(rng):
    body = ArticulatedBody.from_joints(standing_joints(), 200)
    pts = rng.normal(body.joints[3], 0.08, (400, 3))
    d = rng.standard_normal(3)
    d /= np.linalg.norm(d)
    vals = [collision_loss(body, pts + s * d) for s in np.linspace(0, 1.5, 31)]
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:])) and vals[-1] == 0.0


def test_optimize_lambda_zero_matches_analytic(rng):
    views = _exact_views(seated_joints(), rng)
    ref = views[0]
    store = {v.view_id: v for v in views}
    inl = _all_inliers(views)
    body = ArticulatedBody.from_joints(ref.joints3d, 200)
    z_star = analytic_depth(ref, inl, store)
    sol = optimize_depth(z_star + 0.4, ref, inl, store, body, None, 0.0)
    assert abs(sol.z - z_star) < 1e-3
    assert sol.final_loss <= sol.initial_loss and len(sol.loss_trace) == 201
    still = optimize_depth(z_star, ref, inl, store, body, None, 400.0)
    assert abs(still.z - z_star) < 1e-4


def test_optimize_pushes_body_out_of_wall(rng):
    joints = standing_joints()
    cam = look_at_camera(0, 0, target=(0, 0, 0.9))
    cams = [cam, look_at_camera(90, 0, target=(0, 0, 0.9)), look_at_camera(270, 0, target=(0, 0, 0.9))]
    views = _exact_views(joints, rng, cams=cams)
    ref = views[0]
    store = {v.view_id: v for v in views}
    inl = _all_inliers(views)
    body = ArticulatedBody.from_joints(ref.joints3d, 200)
    z0 = analytic_depth(ref, inl, store)
    wall = box_mesh((0.1, 2.0, 2.0), center=body.joints[0] + z0 * ref.camera.forward + [0.1, 0, 0])
    pts = poisson_disk_sample(wall, 600, seed=1)
    c0 = collision_loss(body, pts, offset=z0 * ref.camera.forward)
    sol = optimize_depth(z0, ref, inl, store, body, pts, 400.0)
    assert collision_loss(body, pts, offset=sol.z * ref.camera.forward) < c0


def test_divergence_guard(rng):
    views = _exact_views(seated_joints(), rng)
    store = {v.view_id: v for v in views}
    body = ArticulatedBody.from_joints(views[0].joints3d, 100)
    with pytest.raises(DivergenceError):
        optimize_depth(0.0, views[0], _all_inliers(views), store, body, None, 0.0,
                       AdamParams(lr=10.0, iterations=50), scene_diameter=0.01)


def test_init_depth_tie_break_and_single_candidate():
    body = ArticulatedBody.from_joints(standing_joints(), 200)
    cam = look_at_camera(30, 10, target=(0, 0, 0.9))
    mask = rasterize_silhouette(body.mesh(), cam, (256, 256))
    init = init_depth(body, None, cam, mask, 7, 0.3)
    assert init.z == init.candidates[3] == 0.0 and np.allclose(init.ious, 1.0)
    one = init_depth(body, None, cam, mask, 1, 0.3)
    assert one.z == one.candidates[0]
    empty = init_depth(body, None, cam, Mask(256, 256), 5, 0.3)
    assert empty.low_confidence and empty.z == empty.candidates[2]


def test_init_depth_recovers_seated_depth(scene):
    cam = RIG.views()[1]
    mask = rasterize_silhouette(scene.body.mesh(), cam, (512, 512), [scene.object_mesh])
    shifted = scene.body.translated(0.3 * cam.forward)
    init = init_depth(shifted, scene.object_mesh, cam, mask, 7, 0.3)
    assert abs(init.z - (-0.3)) <= init.spacing + 1e-9


def test_filter_rules():
    thr = FilterThresholds(tau_inlier=5)
    assert str(filter_sample(None, 0.5, 10, 0.001, thr)) == "keep"
    assert filter_sample(None, 0.85, 10, 0.0, thr).reason == "iou"
    assert filter_sample(None, 0.29, 10, 0.0, thr).reason == "iou"
    assert filter_sample(None, 0.5, 4, 0.0, thr).reason == "inliers"
    assert filter_sample(None, 0.5, 10, 0.02, thr).reason == "penetration"
    # boundaries are inclusive on the keep side
    assert filter_sample(None, 0.3, 5, 0.01, thr).keep
    assert filter_sample(None, 0.8, 5, 0.01, thr).keep
    with pytest.raises(ValueError):
        FilterThresholds(tau_inlier=0)


def test_penetration_ratio_extremes():
    body = ArticulatedBody.from_joints(standing_joints(), 100)
    assert penetration_ratio(body, box_mesh((0.2, 0.2, 0.2), center=(5, 5, 5))) == 0.0
    assert penetration_ratio(body, box_mesh((4, 4, 4), center=(0, 0, 0.9))) == 1.0
    with pytest.raises(ValueError):
        penetration_ratio(body, box_mesh((1, 1, 1)), samples=100)


def test_lift_view_end_to_end(scene):
    views = render_views(scene, RIG, 2.0, 2, seed=11)
    res = lift_view(views[0], views, scene.object_mesh, scene.object_points, LiftConfig(), seed=0)
    outliers = {v.view_id for v in views if v.meta["outlier"]}
    assert not outliers & set(res.inliers.members)
    assert abs(res.z - views[0].meta["z_true"]) < 0.05 * scene.body.height
    assert str(res.verdict) == "keep"
    np.testing.assert_allclose(res.body.joints, views[0].joints3d + res.z * views[0].camera.forward)


def test_lift_view_rejects_without_inliers(scene):
    views = render_views(scene, RIG, 0.0, 0, seed=1)
    res = lift_view(views[0], views[:2], scene.object_mesh, scene.object_points)
    assert str(res.verdict) == "reject(inliers)" and res.body is None
