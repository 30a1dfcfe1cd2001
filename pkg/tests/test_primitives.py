
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from afprim.body import ArticulatedBody, standing_joints
from afprim.geom import RigidTransform, SurfacePointSet
from afprim.primitives import (FieldConfig, PrimitiveDistribution, VoxelGrid, accumulate,
                               build_primitive_field, canonical_rotation, canonicalize,
                               fibonacci_sphere, marginal_n, marginal_p, merge, merge_fields,
                               positional_kernel, sphere_kernel, sphere_kernel_sparse)
from afprim.sample import HOISample

from conftest import random_rotation

Z = np.array([0.0, 0.0, 1.0])
X = np.array([1.0, 0.0, 0.0])
Y = np.array([0.0, 1.0, 0.0])


def _unit(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


# -- sphere grid ---------------------------------------------------------------


def test_fibonacci_examples():
    one = fibonacci_sphere(1)
    assert one.directions.shape == (1, 3) and abs(np.linalg.norm(one.directions[0]) - 1) < 1e-12
    two = fibonacci_sphere(2)
    np.testing.assert_allclose(two.directions[:, 2], [0.5, -0.5], atol=1e-15)
    big = fibonacci_sphere(1000)
    assert np.linalg.norm(big.directions.mean(axis=0)) < 0.01
    np.testing.assert_allclose(np.linalg.norm(big.directions, axis=1), 1.0, atol=1e-9)


@pytest.mark.parametrize("n_b", [10, 100, 300, 1000])
def test_fibonacci_spacing_uniformity(n_b):
    d = fibonacci_sphere(n_b).directions
    dots = d @ d.T
    np.fill_diagonal(dots, -2)
    ang = np.arccos(np.clip(dots.max(axis=1), -1, 1))
    assert ang.max() < 2 * ang.min()


def test_fibonacci_formula():
    n_b = 37
    k = np.arange(n_b)
    golden = (1 + 5 ** 0.5) / 2
    z = 1 - 2 * (k + 0.5) / n_b
    phi = 2 * np.pi * k * (1 - 1 / golden)
    r = np.sqrt(1 - z * z)
    want = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    np.testing.assert_allclose(fibonacci_sphere(n_b).directions, want, atol=1e-12)


# -- canonicalization ----------------------------------------------------------


def test_canonicalize_examples():
    n, p = canonicalize(Z, X, Y)
    np.testing.assert_allclose(n, X, atol=1e-15)
    np.testing.assert_allclose(p, Y, atol=1e-15)
    n, p = canonicalize(X, X, X)
    np.testing.assert_allclose(n, Z, atol=1e-15)
    np.testing.assert_allclose(p, Z, atol=1e-15)
    n, _ = canonicalize(X, Y, X)
    np.testing.assert_allclose(n, Y, atol=1e-15)
    n, p = canonicalize(-Z, Y, X)
    np.testing.assert_array_equal(n, -Y)
    np.testing.assert_array_equal(p, X)


def test_canonicalize_rejects_non_unit():
    with pytest.raises(ValueError):
        canonicalize(2 * Z, X, X)


def _rodrigues_oracle(n_o, v):
    # shortest-arc rotation taking n_o to z, built as an explicit matrix
    k = np.cross(n_o, Z)
    s = np.linalg.norm(k)
    c = n_o @ Z
    if s < 1e-12:
        return v if c > 0 else v * np.array([1, -1, -1])
    k = k / s
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    R = np.eye(3) + s * K + (1 - c) * K @ K
    return R @ v


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_canonicalize_matches_matrix_oracle(seed):
    rng = np.random.default_rng(seed)
    n_o, n_h = _unit(rng, 2)
    p = rng.standard_normal(3)
    n, q = canonicalize(n_o, n_h, p)
    np.testing.assert_allclose(n, _rodrigues_oracle(n_o, n_h), atol=1e-12)
    np.testing.assert_allclose(q, _rodrigues_oracle(n_o, p), atol=1e-12)
    np.testing.assert_allclose(canonical_rotation(n_o) @ n_o, Z, atol=1e-12)


def test_canonicalize_isometry_bulk():
    rng = np.random.default_rng(7)
    N = 100_000
    n_o = _unit(rng, N)
    n_o[:50] = -Z  # antiparallel convention
    n_o[50:100] = -Z + rng.normal(0, 1e-9, (50, 3))
    n_o[50:100] /= np.linalg.norm(n_o[50:100], axis=1, keepdims=True)
    n_h = _unit(rng, N)
    p = rng.standard_normal((N, 3)) * 2
    n, q = canonicalize(n_o, n_h, p)
    assert np.max(np.abs(np.linalg.norm(q, axis=1) - np.linalg.norm(p, axis=1))) < 1e-9
    assert np.max(np.abs(np.linalg.norm(n, axis=1) - 1)) < 1e-9
    # rows 50..100 snap to the antiparallel convention, so the z identities hold only to ~1e-9
    assert np.max(np.abs(n[:, 2] - np.einsum("ij,ij->i", n_o, n_h))) < 1e-8
    assert np.max(np.abs(q[:, 2] - np.einsum("ij,ij->i", n_o, p))) < 1e-8
    assert np.max(np.abs(np.einsum("ij,ij->i", n, q) - np.einsum("ij,ij->i", n_h, p))) < 1e-9
    np.testing.assert_array_equal(n[:50], n_h[:50] * [1, -1, -1])


# -- kernels and distributions -------------------------------------------------


def _dense_sphere_oracle(n, dirs, sigma):
    th = np.arccos(np.clip(n @ dirs.T, -1, 1))
    w = np.where(th <= 3 * sigma, np.exp(-th ** 2 / (2 * sigma ** 2)), 0.0)
    return w / w.sum(axis=1, keepdims=True)


@pytest.mark.parametrize("n_b", [20, 100, 300])
def test_sparse_sphere_kernel_matches_dense(n_b):
    sphere = fibonacci_sphere(n_b)
    n = _unit(np.random.default_rng(n_b), 500)
    for sigma in (sphere.mean_spacing, 0.5 * sphere.mean_spacing + 0.01, 0.4):
        want = _dense_sphere_oracle(n, sphere.directions, sigma)
        got = sphere_kernel(n, sphere, sigma)
        ok = np.isfinite(want).all(axis=1)
        assert np.max(np.abs(got[ok] - want[ok])) < 1e-12
        cand, w = sphere_kernel_sparse(n, sphere, sigma)
        np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)


def test_positional_kernel_windows_have_unit_mass():
    vox = VoxelGrid(1.0, 10)
    p = np.random.default_rng(2).uniform(-1.4, 1.4, (50, 3))
    start, w, clamped = positional_kernel(p, vox, 0.15)
    np.testing.assert_allclose(w.sum(axis=2), 1.0, atol=1e-12)
    W = w.shape[2]
    idx = start[:, :, None] + np.arange(W)
    assert np.all(w[(idx < 0) | (idx >= vox.resolution)] == 0)  # off-grid cells carry no mass
    edge = 1.0 - vox.voxel_size / 2  # outermost cell centers
    np.testing.assert_array_equal(clamped, np.any(np.abs(p) > edge, axis=1))


def test_positional_kernel_delta_limit():
    vox = VoxelGrid(1.0, 8)
    c = vox.axis_centers
    p = np.array([c[2], c[5], c[7]])
    d = PrimitiveDistribution.empty(fibonacci_sphere(10), vox)
    accumulate(d, p, Z, 1e-6, 0.3)
    mp = marginal_p(d)
    assert mp[vox.locate(p)[0]] == pytest.approx(1.0, abs=1e-12)
    assert d.clamp_count == 0


def test_single_accumulate_normalizes():
    d = PrimitiveDistribution.empty(fibonacci_sphere(50), VoxelGrid(1.0, 10))
    accumulate(d, [0.1, -0.3, 0.25], _unit(np.random.default_rng(1), 1)[0], 0.2, 0.3)
    assert abs(d.total() - 1.0) < 1e-12
    assert abs(d.normalize().total() - 1.0) < 1e-12


def test_out_of_grid_is_clamped_and_counted():
    d = PrimitiveDistribution.empty(fibonacci_sphere(10), VoxelGrid(1.0, 4))
    accumulate(d, [5.0, 0, 0], Z, 0.5, 0.5)
    assert d.clamp_count == 1 and abs(d.total() - 1) < 1e-12


def test_antipodal_accumulations_balance():
    sphere = fibonacci_sphere(200)
    sigma = sphere.mean_spacing
    n = _unit(np.random.default_rng(3), 1)[0]
    d = PrimitiveDistribution.empty(sphere, VoxelGrid(1.0, 4))
    accumulate(d, [0, 0, 0], n, 0.5, sigma)
    accumulate(d, [0, 0, 0], -n, 0.5, sigma)
    m = marginal_n(d)
    want = _dense_sphere_oracle(np.vstack([n, -n]), sphere.directions, sigma).sum(axis=0)
    np.testing.assert_allclose(m, want, atol=1e-12)
    side = sphere.directions @ n > 0
    assert m[side].sum() == pytest.approx(m[~side].sum(), abs=1e-12)


def _random_dist(rng, n_samples, sphere, vox):
    d = PrimitiveDistribution.empty(sphere, vox)
    for _ in range(n_samples):
        accumulate(d, rng.uniform(-1, 1, 3), _unit(rng, 1)[0], 0.25, 0.3)
    return d


def test_merge_monoid():
    rng = np.random.default_rng(4)
    sphere, vox = fibonacci_sphere(30), VoxelGrid(1.0, 6)
    a = _random_dist(rng, 5, sphere, vox)
    b = _random_dist(rng, 7, sphere, vox)
    c = _random_dist(rng, 3, sphere, vox)
    e = PrimitiveDistribution.empty(sphere, vox)
    assert np.array_equal(merge(a, e).weights, a.weights)
    assert np.array_equal(merge(a, b).weights, merge(b, a).weights)
    np.testing.assert_allclose(merge(merge(a, b), c).weights, merge(a, merge(b, c)).weights, atol=1e-15)
    assert merge(a, b).sample_count == 12
    with pytest.raises(ValueError):
        merge(a, PrimitiveDistribution.empty(fibonacci_sphere(31), vox))


def test_partitioned_accumulation_matches_sequential():
    rng = np.random.default_rng(5)
    sphere, vox = fibonacci_sphere(40), VoxelGrid(1.0, 8)
    ps = rng.uniform(-1, 1, (100, 3))
    ns = _unit(rng, 100)
    seq = PrimitiveDistribution.empty(sphere, vox)
    h1 = PrimitiveDistribution.empty(sphere, vox)
    h2 = PrimitiveDistribution.empty(sphere, vox)
    for k in range(100):
        accumulate(seq, ps[k], ns[k], 0.2, 0.3)
        accumulate(h1 if k < 50 else h2, ps[k], ns[k], 0.2, 0.3)
    assert np.max(np.abs(merge(h1, h2).weights - seq.weights)) < 1e-12


def test_marginals():
    sphere, vox = fibonacci_sphere(12), VoxelGrid(1.0, 3)
    uni = PrimitiveDistribution(sphere, vox, np.full((27, 12), 1 / (27 * 12)))
    np.testing.assert_allclose(marginal_n(uni), 1 / 12)
    np.testing.assert_allclose(marginal_p(uni), 1 / 27)
    w = np.zeros((27, 12))
    w[4, 7] = 1
    delta = PrimitiveDistribution(sphere, vox, w)
    assert marginal_n(delta)[7] == 1 and marginal_p(delta)[4] == 1
    r = np.random.default_rng(0).random((27, 12))
    r /= r.sum()
    d = PrimitiveDistribution(sphere, vox, r)
    brute_n = [sum(r[v, k] for v in range(27)) for k in range(12)]
    np.testing.assert_allclose(marginal_n(d), brute_n, atol=1e-15)
    assert abs(marginal_n(d).sum() - 1) < 1e-9 and abs(marginal_p(d).sum() - 1) < 1e-9


# -- fields --------------------------------------------------------------------


def _samples(n, rng, n_obj=6, n_body=20):
    obj = SurfacePointSet(rng.uniform(-0.3, 0.3, (n_obj, 3)), _unit(rng, n_obj), "object")
    out = []
    for _ in range(n):
        T = RigidTransform(random_rotation(rng), rng.standard_normal(3))
        j = standing_joints() + rng.normal(0, 0.02, (24, 3)) - [0, 0, 0.9]
        body = ArticulatedBody.from_joints(j, n_body).transformed(T)
        out.append(HOISample(T, body, obj))
    return out


SMALL = FieldConfig(n_b=40, extent=1.5, resolution=8)


def test_minimal_field_has_unit_mass():
    obj = SurfacePointSet([[0, 0, 0]], [Z])
    class S:  # minimal duck-typed sample with one human point
        object_pose = RigidTransform.identity()
        object_points = obj
        body = type("B", (), {"surface": SurfacePointSet([[0.1, 0.2, 0.3]], [-Z])})()
    fld = build_primitive_field([S()], 1, 1, SMALL)
    assert abs(fld.distribution(0, 0).total() - 1) < 1e-12
    assert fld.stats.max_mass_error < 1e-12 and fld.stats.pair_samples == 1


def test_field_invariant_to_global_rigid_motion():
    rng = np.random.default_rng(8)
    data = _samples(3, rng)
    moved = []
    for s in data:
        G = RigidTransform(random_rotation(rng), rng.standard_normal(3))
        moved.append(HOISample(G.compose(s.object_pose), s.body.transformed(G), s.object_points))
    a = build_primitive_field(data, 6, 20, SMALL)
    b = build_primitive_field(moved, 6, 20, SMALL)
    for i, j in [(0, 0), (3, 11), (5, 19)]:
        assert np.max(np.abs(a.distribution(i, j).weights - b.distribution(i, j).weights)) < 1e-9


def test_separable_expectation_matches_materialized():
    rng = np.random.default_rng(9)
    fld = build_primitive_field(_samples(4, rng), 6, 20, SMALL)
    vol = rng.random(8 ** 3)
    bv = rng.random(40)
    vals, cnt = fld.separable_expectation(vol, bv)
    assert np.all(cnt == 4)
    for i, j in [(0, 3), (2, 7), (5, 19)]:
        d = fld.distribution(i, j)
        assert abs(vals[i, j] - vol @ d.weights @ bv) < 1e-12
    assert fld.normalization_audit() < 1e-9


def test_pair_radius_drops_far_pairs():
    rng = np.random.default_rng(10)
    data = _samples(2, rng)
    fld = build_primitive_field(data, 6, 20, FieldConfig(n_b=40, resolution=8, pair_radius=0.5))
    counts = fld.pair_counts()
    assert counts.max() <= 2 and counts.min() == 0
    i, j = np.argwhere(counts == 0)[0]
    assert not fld.has_pair(i, j)
    with pytest.raises(KeyError):
        fld.distribution(i, j)


def test_merge_fields_equals_full_aggregation():
    rng = np.random.default_rng(11)
    data = _samples(4, rng)
    full = build_primitive_field(data, 6, 20, SMALL)
    merged = merge_fields(build_primitive_field(data[:2], 6, 20, SMALL),
                          build_primitive_field(data[2:], 6, 20, SMALL))
    for i, j in [(1, 1), (4, 12)]:
        assert np.max(np.abs(full.distribution(i, j).weights - merged.distribution(i, j).weights)) < 1e-12
    with pytest.raises(ValueError):
        merge_fields(full, build_primitive_field(data, 6, 20, FieldConfig(n_b=41, resolution=8)))


def test_build_errors_and_skips():
    rng = np.random.default_rng(12)
    data = _samples(2, rng)
    with pytest.raises(ValueError):
        build_primitive_field([], 6, 20, SMALL)
    with pytest.warns(RuntimeWarning, match="skipped"):
        fld = build_primitive_field(data + [_samples(1, rng, n_body=30)[0]], 6, 20, SMALL)
    assert fld.stats.skipped == 1 and fld.n_samples == 2
    with pytest.raises(ValueError):
        FieldConfig(direction="sideways")


def test_palm_on_table_concentrates_contact_mass():
    from afprim.synth import body_part_indices, make_dataset, make_scenario
    data = make_dataset("palm-on-table", 6, jitter=1.0, seed=0, n_object_points=300, n_body_points=300)
    fld = build_primitive_field(data, 300, 300, FieldConfig(n_b=100, resolution=16), audit=False)
    scn = make_scenario("palm-on-table", 0.0, 0, 300, 300)
    hand = body_part_indices(scn.body, "right_hand")
    pts = scn.body.surface.points
    j = int(hand[np.argmin(scn.body.surface.normals[hand, 2])])  # palm point facing the table
    top = np.flatnonzero(scn.object_points.normals[:, 2] > 0.99)
    i = int(top[np.argmin(np.linalg.norm(scn.object_points.points[top, :2] - pts[j, :2], axis=1))])
    d = fld.distribution(i, j)
    mn = marginal_n(d)
    # object normal is +z, so the canonical human normal is the palm normal itself
    mean_dir = mn @ fld.sphere.directions
    assert mean_dir @ scn.body.surface.normals[j] / np.linalg.norm(mean_dir) > 0.95
    assert mn[fld.sphere.directions @ scn.body.surface.normals[j] > 0.6].sum() > 0.9
    mp = marginal_p(d)
    rel = pts[j] - scn.object_points.points[i]  # identity canonical rotation for a +z normal
    assert np.linalg.norm(rel) < 0.1
    assert np.linalg.norm(mp @ fld.voxels.cell_centers() - rel) < fld.voxels.voxel_size
