import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afprim.camera import (CameraRig, TriangulationError, WeakPerspectiveCamera, build_dynamic_rig,
                           build_static_rig, look_at_camera, project, triangulate_two_view,
                           triangulate_two_view_batch)
from afprim.geom import RigidTransform

from conftest import random_rotation


def test_project_definition():
    cam = WeakPerspectiveCamera(np.eye(3), 1.0, (0, 0))
    np.testing.assert_array_equal(project(cam, [1, 2, 3]), [1, 2])
    cam = WeakPerspectiveCamera(np.eye(3), 2.0, (10, 0))
    np.testing.assert_array_equal(project(cam, [1, 2, 3]), [12, 4])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-100, 100))
def test_depth_invariance(seed, delta):
    rng = np.random.default_rng(seed)
    cam = WeakPerspectiveCamera(random_rotation(rng), rng.uniform(1, 500), rng.standard_normal(2))
    x = rng.standard_normal((7, 3))
    u0 = cam.project(x)
    u1 = cam.project(x + delta * cam.forward)
    assert np.max(np.abs(u1 - u0)) <= 1e-12 * max(1.0, cam.scale * abs(delta))


def test_camera_validation():
    with pytest.raises(ValueError):
        WeakPerspectiveCamera(np.eye(3), 0.0, (0, 0))
    with pytest.raises(ValueError):
        WeakPerspectiveCamera(2 * np.eye(3), 1.0, (0, 0))


def test_static_rig_azimuths_and_angles():
    rig = build_static_rig(8)
    assert rig.azimuths == [45.0 * k for k in range(8)]
    fw = np.array([c.forward for c in rig.cameras])
    for k in range(8):
        ang = math.acos(np.clip(fw[k] @ fw[(k + 1) % 8], -1, 1))
        assert abs(ang - 2 * math.pi / 8) < 1e-9
    one = build_static_rig(1)
    assert one.azimuths == [0.0] and len(one.views()) == 1


@pytest.mark.parametrize("elev", [0.0, 10.0, 30.0])
def test_static_rig_elevation(elev):
    for cam in build_static_rig(6, elevation=elev).cameras:
        assert abs(-cam.forward[2] - math.sin(math.radians(elev))) < 1e-9
        assert abs(np.linalg.norm(cam.forward) - 1) < 1e-12


def test_static_rig_targets_image_center():
    target = (0.1, -0.2, 0.75)
    for cam in build_static_rig(4, 10, target=target, resolution=(640, 480)).cameras:
        np.testing.assert_allclose(cam.project(target), [320, 240], atol=1e-9)


def test_static_rig_elevation_policy():
    with pytest.warns(RuntimeWarning):
        build_static_rig(4, elevation=40)
    with pytest.raises(ValueError):
        build_static_rig(4, elevation=40, strict_elevation=True)
    with pytest.raises(ValueError):
        build_static_rig(0)


def test_dynamic_rig_views_and_determinism():
    rig = build_dynamic_rig(4, 10, seed=3)
    views = rig.views()
    assert len(views) == 40
    keys = {tuple(np.round(np.concatenate([v.rotation.ravel(), v.offset]), 9)) for v in views}
    assert len(keys) == 40
    again = build_dynamic_rig(4, 10, seed=3)
    for a, b in zip(rig.object_perturbations, again.object_perturbations):
        assert np.array_equal(a.rotation, b.rotation) and np.array_equal(a.translation, b.translation)


def test_dynamic_rig_collapsed_ranges_are_identity():
    rig = build_dynamic_rig(2, 3, ((0, 0),) * 3, ((0, 0),) * 3, seed=9)
    for T in rig.object_perturbations:
        np.testing.assert_allclose(T.rotation, np.eye(3), atol=1e-15)
        np.testing.assert_array_equal(T.translation, 0)
    with pytest.raises(ValueError):
        build_dynamic_rig(2, 3, ((1, 0), (0, 0), (0, 0)))


def test_composed_view_images_perturbed_object(rng):
    rig = build_dynamic_rig(4, 2, seed=1)
    x = rng.standard_normal((5, 3))
    for r, T in enumerate(rig.object_perturbations):
        for c, cam in enumerate(rig.cameras):
            view = rig.views()[r * 4 + c]
            np.testing.assert_allclose(view.project(x), cam.project(T.apply(x)), atol=1e-9)


def test_rig_json_round_trip():
    rig = build_dynamic_rig(3, 2, seed=4)
    back = CameraRig.from_json(rig.to_json())
    assert back.kind == "dynamic" and len(back.views()) == 6
    for a, b in zip(rig.views(), back.views()):
        np.testing.assert_array_equal(a.rotation, b.rotation)
    d = build_static_rig(2).to_dict()
    assert set(d) == {"kind", "cameras", "perturbations"}
    assert len(d["cameras"][0]["rotation"]) == 9
    with pytest.raises(ValueError):
        CameraRig(build_static_rig(2).cameras, [RigidTransform.identity()], "static")


def _lstsq_oracle(cams, us):
    A = np.vstack([c.scale * c.rotation[:2] for c in cams])
    b = np.concatenate([np.asarray(u) - c.offset for c, u in zip(cams, us)])
    return np.linalg.lstsq(A, b, rcond=None)[0]


def test_triangulate_exact_example():
    Ry = np.array([[0, 0, 1], [0, 1, 0], [-1, 0, 0.0]])
    a = WeakPerspectiveCamera(np.eye(3), 1.0, (0, 0))
    b = WeakPerspectiveCamera(Ry, 1.0, (0, 0))
    X_true = np.array([1.0, 2.0, 3.0])
    X, res = triangulate_two_view(a, a.project(X_true), b, b.project(X_true))
    assert np.max(np.abs(X - X_true)) < 1e-9 and res < 1e-9


def test_triangulate_noisy_matches_oracle():
    Ry = np.array([[0, 0, 1], [0, 1, 0], [-1, 0, 0.0]])
    a = WeakPerspectiveCamera(np.eye(3), 1.0, (0, 0))
    b = WeakPerspectiveCamera(Ry, 1.0, (0, 0))
    X_true = np.array([1.0, 2.0, 3.0])
    ua, ub = a.project(X_true) + [0, 1], b.project(X_true) + [0, -1]
    X, res = triangulate_two_view(a, ua, b, ub)
    np.testing.assert_allclose(X, _lstsq_oracle([a, b], [ua, ub]), atol=1e-12)
    assert res > 0 and np.linalg.norm(X - X_true) <= 1.0 + 1e-9


def test_triangulate_identical_cameras_fail():
    cam = look_at_camera(30, 10)
    with pytest.raises(TriangulationError):
        triangulate_two_view(cam, [1, 2], cam, [1, 2])
    with pytest.raises(TriangulationError):
        triangulate_two_view(cam, [1, 2], look_at_camera(30.5, 10), [1, 2])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_triangulate_recovers_random_points(seed):
    rng = np.random.default_rng(seed)
    ca = WeakPerspectiveCamera(random_rotation(rng), rng.uniform(50, 400), rng.uniform(0, 500, 2))
    cb = WeakPerspectiveCamera(random_rotation(rng), rng.uniform(50, 400), rng.uniform(0, 500, 2))
    ang = math.degrees(math.acos(np.clip(ca.forward @ cb.forward, -1, 1)))
    if min(ang, 180 - ang) < 5:
        return
    X_true = rng.standard_normal((6, 3))
    X, res = triangulate_two_view_batch(ca, ca.project(X_true), cb, cb.project(X_true))
    assert np.max(np.abs(X - X_true)) < 1e-9 and np.max(res) < 1e-9
    x1, r1 = triangulate_two_view(ca, ca.project(X_true[0]), cb, cb.project(X_true[0]))
    np.testing.assert_allclose(x1, X[0], atol=1e-12)
