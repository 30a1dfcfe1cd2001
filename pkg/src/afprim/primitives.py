"""Pointwise primitive distributions over relative position and canonical normal.

For an object point i and a human point j, every sample contributes the pair
(p, n) = (R_i (v_j - v_i), R_i n_j), where R_i is the shortest-arc rotation taking
the object normal to +z. Each contribution is a separable Gaussian kernel over a
voxel grid (position) times a Fibonacci sphere grid (normal), normalized to unit
mass, and P_ij is their mean.

A :class:`PrimitiveField` keeps the de-posed human samples instead of dense
G^3 x n_b arrays for all pairs; any P_ij is rebuilt exactly on demand and pairwise
expectations of separable functions are computed without materializing it.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .geom import SurfacePointSet

Array = np.ndarray

Z_AXIS = np.array([0.0, 0.0, 1.0])
ANTIPARALLEL_EPS = 1e-8
TRUNCATE = 3.0
GOLDEN = (1.0 + 5.0 ** 0.5) / 2.0


# --------------------------------------------------------------------------
# grids
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class SphereGrid:
    n_b: int
    directions: Array
    mean_spacing: float

    def __eq__(self, other):
        return isinstance(other, SphereGrid) and self.n_b == other.n_b

    def __hash__(self):
        return hash(self.n_b)


def fibonacci_sphere(n_b: int) -> SphereGrid:
    if n_b < 1:
        raise ValueError("n_b must be >= 1")
    k = np.arange(n_b, dtype=np.float64)
    z = 1.0 - 2.0 * (k + 0.5) / n_b
    phi = 2.0 * np.pi * k * (1.0 - 1.0 / GOLDEN)
    r = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    dirs = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    if n_b == 1:
        spacing = math.pi
    else:
        d, _ = cKDTree(dirs).query(dirs, k=2)
        chord = d[:, 1]
        spacing = float(np.mean(2.0 * np.arcsin(np.clip(chord / 2.0, 0.0, 1.0))))
    dirs.setflags(write=False)
    return SphereGrid(n_b, dirs, spacing)


@dataclass(frozen=True)
class VoxelGrid:
    extent: float = 1.5
    resolution: int = 32
    center: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if not self.extent > 0:
            raise ValueError("voxel extent must be positive")
        if self.resolution < 1:
            raise ValueError("voxel resolution must be >= 1")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def voxel_size(self) -> float:
        return 2.0 * self.extent / self.resolution

    @property
    def n_cells(self) -> int:
        return self.resolution ** 3

    @property
    def axis_centers(self) -> Array:
        G, h = self.resolution, self.voxel_size
        return -self.extent + (np.arange(G) + 0.5) * h

    def cell_centers(self) -> Array:
        """(G^3, 3) centers in row-major (x, y, z) cell order, relative to `center`."""
        c = self.axis_centers
        X, Y, Z = np.meshgrid(c, c, c, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel(), Z.ravel()])

    def locate(self, x: Array) -> Array:
        """Flat cell index of each point, -1 outside the grid."""
        x = np.atleast_2d(np.asarray(x, dtype=np.float64)) - np.asarray(self.center)
        idx = np.floor((x + self.extent) / self.voxel_size).astype(np.int64)
        G = self.resolution
        inside = np.all((idx >= 0) & (idx < G), axis=1)
        flat = (idx[:, 0] * G + idx[:, 1]) * G + idx[:, 2]
        return np.where(inside, flat, -1)

    def to_dict(self) -> dict:
        return {"extent": self.extent, "resolution": self.resolution, "center": list(self.center)}


# --------------------------------------------------------------------------
# canonicalization
# --------------------------------------------------------------------------


def _check_unit(n_o: Array) -> Array:
    n_o = np.asarray(n_o, dtype=np.float64)
    norm = np.linalg.norm(n_o, axis=-1)
    if np.any(np.abs(norm - 1.0) > 1e-6):
        raise ValueError("object normal must have unit length (within 1e-6)")
    return n_o / norm[..., None]


def canonicalize(n_o: Array, n_h: Array, p_rel: Array) -> Tuple[Array, Array]:
    """Rotate (n_h, p_rel) by the shortest arc taking n_o to +z.

    With k = n_o x z and c = n_o . z the rotation is
    v' = c v + (v.n_o) z - (v.z) n_o + (v.k)/(1+c) k. For n_o within 1e-8 of -z the
    rotation is pi about +x. Broadcasts over leading axes.
    """
    n_o = _check_unit(n_o)
    n_o, n_h, p_rel = np.broadcast_arrays(n_o, np.asarray(n_h, dtype=np.float64),
                                          np.asarray(p_rel, dtype=np.float64))
    return _rotate_to_z(n_o, n_h), _rotate_to_z(n_o, p_rel)


def _rotate_to_z(n_o: Array, v: Array) -> Array:
    nx, ny, nz = n_o[..., 0], n_o[..., 1], n_o[..., 2]
    k = np.stack([ny, -nx, np.zeros_like(nx)], axis=-1)
    s2 = nx * nx + ny * ny
    anti = nz < -1.0 + ANTIPARALLEL_EPS
    with np.errstate(divide="ignore", invalid="ignore"):
        # 1 + c, computed without cancellation when c is near -1
        one_plus_c = np.where(nz >= 0, 1.0 + nz, s2 / (1.0 - nz))
        coef = np.where(anti, 0.0, np.einsum("...i,...i->...", v, k) / one_plus_c)
    vn = np.einsum("...i,...i->...", v, n_o)
    out = (nz[..., None] * v - v[..., 2:3] * n_o + coef[..., None] * k)
    out[..., 2] += vn
    if np.any(anti):
        flip = v * np.array([1.0, -1.0, -1.0])
        out = np.where(anti[..., None], flip, out)
    return out


def canonical_rotation(n_o: Array) -> Array:
    """Matrix form of :func:`canonicalize` for each object normal, shape (..., 3, 3)."""
    n_o = _check_unit(n_o)
    cols = [_rotate_to_z(n_o, np.broadcast_to(e, n_o.shape)) for e in np.eye(3)]
    return np.stack(cols, axis=-1)


# --------------------------------------------------------------------------
# kernels
# --------------------------------------------------------------------------


def positional_kernel(p: Array, voxels: VoxelGrid, sigma_p: float):
    """Per-axis truncated Gaussian weights around each position.

    Returns (start, weights, clamped): `start` (M, 3) is the first cell index of a
    window of W = 2K+1 cells per axis (cells may fall outside the grid and then carry
    zero weight), `weights` (M, 3, W) are normalized per axis, and `clamped` flags
    positions that were pulled onto the boundary cell centers.
    """
    if not sigma_p > 0:
        raise ValueError("sigma_p must be positive")
    p = np.atleast_2d(np.asarray(p, dtype=np.float64)) - np.asarray(voxels.center)
    G, h, L = voxels.resolution, voxels.voxel_size, voxels.extent
    lo, hi = -L + 0.5 * h, L - 0.5 * h
    clamped = np.any((p < lo) | (p > hi), axis=1)
    pc = np.clip(p, lo, hi)
    K = max(0, int(math.ceil(TRUNCATE * sigma_p / h)))
    W = 2 * K + 1
    cell = np.clip(np.floor((pc + L) / h).astype(np.int64), 0, G - 1)
    start = cell - K
    idx = start[:, :, None] + np.arange(W)  # (M, 3, W)
    centers = -L + (idx + 0.5) * h
    d = centers - pc[:, :, None]
    valid = (idx >= 0) & (idx < G) & (np.abs(d) <= TRUNCATE * sigma_p)
    w = np.where(valid, np.exp(-(d * d) / (2.0 * sigma_p * sigma_p)), 0.0)
    tot = w.sum(axis=2, keepdims=True)
    empty = tot[..., 0] == 0
    if np.any(empty):
        # kernel narrower than the cell spacing: all mass on the containing cell
        m, a = np.nonzero(empty)
        w[m, a, :] = 0.0
        w[m, a, K] = 1.0
        tot = w.sum(axis=2, keepdims=True)
    return start, w / tot, clamped


@dataclass(frozen=True)
class _SphereIndex:
    neighbors: Array  # (n_b, K) candidate bins per nearest bin, padded with -1


@lru_cache(maxsize=16)
def _sphere_index(n_b: int, sigma_n: float) -> _SphereIndex:
    """Bins that can lie within the truncation radius of any direction whose nearest
    bin is k: within 3 sigma plus the lattice covering radius of bin k."""
    dirs = fibonacci_sphere(n_b).directions
    tree = cKDTree(dirs)
    probe = fibonacci_sphere(max(20_000, 50 * n_b)).directions
    d, _ = tree.query(probe)
    cover = 2.0 * math.asin(min(1.0, float(d.max()) / 2.0)) * 1.25 + 1e-6
    reach = min(TRUNCATE * sigma_n + cover, math.pi)
    chord = 2.0 * math.sin(reach / 2.0) if reach < math.pi else 2.0 + 1e-9
    lists = tree.query_ball_point(dirs, chord)
    K = max(len(x) for x in lists)
    nb = np.full((n_b, K), -1, dtype=np.int64)
    for k, x in enumerate(lists):
        nb[k, :len(x)] = sorted(x)
    return _SphereIndex(nb)


def sphere_kernel_sparse(n: Array, sphere: SphereGrid, sigma_n: float) -> Tuple[Array, Array]:
    """Truncated geodesic Gaussian as (bins (M, K), weights (M, K)); padding has bin 0, weight 0."""
    if not sigma_n > 0:
        raise ValueError("sigma_n must be positive")
    n = np.atleast_2d(np.asarray(n, dtype=np.float64))
    index = _sphere_index(sphere.n_b, float(sigma_n))
    full = n @ sphere.directions.T
    nearest = np.argmax(full, axis=1)
    cand = index.neighbors[nearest]
    pad = cand < 0
    cand = np.where(pad, 0, cand)
    dots = np.take_along_axis(full, cand, axis=1)
    cut = math.cos(min(TRUNCATE * sigma_n, math.pi))
    near = (dots >= cut) & ~pad
    w = np.zeros_like(dots)
    th = np.arccos(np.clip(dots[near], -1.0, 1.0))
    w[near] = np.exp(-(th * th) / (2.0 * sigma_n * sigma_n))
    tot = w.sum(axis=1)
    empty = tot == 0
    if np.any(empty):
        # kernel narrower than the lattice: all mass on the nearest bin
        rows = np.flatnonzero(empty)
        cand[rows, 0] = nearest[rows]
        w[rows, 0] = 1.0
        tot = w.sum(axis=1)
    return cand, w / tot[:, None]


def sphere_kernel(n: Array, sphere: SphereGrid, sigma_n: float) -> Array:
    """Geodesic Gaussian over sphere bins truncated at 3 sigma, rows normalized. (M, n_b)."""
    cand, w = sphere_kernel_sparse(n, sphere, sigma_n)
    out = np.zeros((len(cand), sphere.n_b))
    np.add.at(out, (np.arange(len(cand))[:, None], cand), w)
    return out


def dense_positional(start: Array, w: Array, voxels: VoxelGrid) -> Array:
    """Expand separable window weights into (M, G^3) dense voxel weights."""
    G = voxels.resolution
    M, _, W = w.shape
    out = np.zeros((M, G, G, G))
    for m in range(M):
        ix = start[m, 0] + np.arange(W)
        iy = start[m, 1] + np.arange(W)
        iz = start[m, 2] + np.arange(W)
        kx, ky, kz = (ix >= 0) & (ix < G), (iy >= 0) & (iy < G), (iz >= 0) & (iz < G)
        block = np.einsum("a,b,c->abc", w[m, 0, kx], w[m, 1, ky], w[m, 2, kz])
        out[m][np.ix_(ix[kx], iy[ky], iz[kz])] = block
    return out.reshape(M, -1)


def window_contract(start: Array, w: Array, volume: Array) -> Array:
    """sum_v kernel_m(v) volume(v) for separable window kernels, without dense expansion."""
    M, _, W = w.shape
    pad = np.pad(volume, W, mode="constant")
    off = np.arange(W)
    out = np.empty(M)
    step = max(1, 2_000_000 // (W ** 3))
    for s in range(0, M, step):
        st = start[s:s + step] + W
        ix = st[:, 0, None] + off
        iy = st[:, 1, None] + off
        iz = st[:, 2, None] + off
        block = pad[ix[:, :, None, None], iy[:, None, :, None], iz[:, None, None, :]]
        ww = w[s:s + step]
        out[s:s + step] = np.einsum("ma,mb,mc,mabc->m", ww[:, 0], ww[:, 1], ww[:, 2], block)
    return out


# --------------------------------------------------------------------------
# distributions
# --------------------------------------------------------------------------


@dataclass
class PrimitiveDistribution:
    sphere: SphereGrid
    voxels: VoxelGrid
    weights: Array = None
    sample_count: int = 0
    normalized: bool = False
    clamp_count: int = 0

    def __post_init__(self):
        shape = (self.voxels.n_cells, self.sphere.n_b)
        if self.weights is None:
            self.weights = np.zeros(shape)
        else:
            self.weights = np.asarray(self.weights, dtype=np.float64).reshape(shape)
        if np.any(self.weights < 0):
            raise ValueError("distribution weights must be nonnegative")

    @classmethod
    def empty(cls, sphere: SphereGrid, voxels: VoxelGrid) -> "PrimitiveDistribution":
        return cls(sphere, voxels)

    def total(self) -> float:
        return float(self.weights.sum())

    def normalize(self) -> "PrimitiveDistribution":
        tot = self.total()
        if tot <= 0:
            raise ValueError("cannot normalize an empty distribution")
        self.weights = self.weights / tot
        self.normalized = True
        return self

    def copy(self) -> "PrimitiveDistribution":
        return PrimitiveDistribution(self.sphere, self.voxels, self.weights.copy(),
                                     self.sample_count, self.normalized, self.clamp_count)


def accumulate(dist: PrimitiveDistribution, p: Array, n: Array, sigma_p: float,
               sigma_n: float) -> PrimitiveDistribution:
    """Add one unit-mass separable kernel centered at (p, n). Works on raw weights."""
    start, w, clamped = positional_kernel(np.reshape(p, (1, 3)), dist.voxels, sigma_p)
    pos = dense_positional(start, w, dist.voxels)[0]
    sph = sphere_kernel(np.reshape(n, (1, 3)), dist.sphere, sigma_n)[0]
    nz = np.flatnonzero(pos)
    dist.weights[nz] += pos[nz, None] * sph[None, :]
    dist.sample_count += 1
    dist.clamp_count += int(clamped[0])
    dist.normalized = False
    return dist


def merge(a: PrimitiveDistribution, b: PrimitiveDistribution) -> PrimitiveDistribution:
    """Sum of raw weights and counts; commutative, associative up to rounding."""
    if a.sphere != b.sphere or a.voxels != b.voxels:
        raise ValueError("cannot merge distributions on different grids")
    if a.normalized or b.normalized:
        raise ValueError("merge operates on raw (unnormalized) distributions")
    return PrimitiveDistribution(a.sphere, a.voxels, a.weights + b.weights,
                                 a.sample_count + b.sample_count, False,
                                 a.clamp_count + b.clamp_count)


def marginal_n(dist: PrimitiveDistribution) -> Array:
    return dist.weights.sum(axis=0)


def marginal_p(dist: PrimitiveDistribution) -> Array:
    return dist.weights.sum(axis=1)


# --------------------------------------------------------------------------
# fields
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldConfig:
    n_b: int = 300
    extent: float = 1.5
    resolution: int = 32
    sigma_p: Optional[float] = None  # default: one voxel
    sigma_n: Optional[float] = None  # default: mean lattice spacing
    pair_radius: Optional[float] = None
    direction: str = "object->human"

    def __post_init__(self):
        if self.n_b < 1 or self.resolution < 1 or not self.extent > 0:
            raise ValueError("invalid grid configuration")
        if self.sigma_p is not None and not self.sigma_p > 0:
            raise ValueError("sigma_p must be positive")
        if self.sigma_n is not None and not self.sigma_n > 0:
            raise ValueError("sigma_n must be positive")
        if self.pair_radius is not None and not self.pair_radius > 0:
            raise ValueError("pair_radius must be positive")
        if self.direction not in ("object->human", "human->object"):
            raise ValueError(f"unknown direction {self.direction!r}")


@dataclass
class FieldStats:
    samples: int = 0
    skipped: int = 0
    pair_samples: int = 0
    clamped: int = 0
    max_mass_error: float = 0.0


@dataclass
class PrimitiveField:
    """Primitive distributions for all object/human point pairs.

    `human_points` / `human_normals` (S, N_h, 3) hold each sample's human surface in
    the canonical object frame. Pair (i, j) of sample s contributes iff `pair_radius`
    is None or the pair distance is within it.
    """

    object_points: SurfacePointSet
    human_points: Array
    human_normals: Array
    sphere: SphereGrid
    voxels: VoxelGrid
    sigma_p: float
    sigma_n: float
    pair_radius: Optional[float] = None
    direction: str = "object->human"
    stats: FieldStats = field(default_factory=FieldStats)

    def __post_init__(self):
        self.human_points = np.asarray(self.human_points, dtype=np.float64)
        self.human_normals = np.asarray(self.human_normals, dtype=np.float64)
        if self.human_points.ndim != 3 or self.human_points.shape != self.human_normals.shape:
            raise ValueError("human samples must have shape (S, N_h, 3)")

    @property
    def n_samples(self) -> int:
        return self.human_points.shape[0]

    @property
    def n_object(self) -> int:
        return len(self.object_points)

    @property
    def n_human(self) -> int:
        return self.human_points.shape[1]

    @cached_property
    def rotations(self) -> Array:
        return canonical_rotation(self.object_points.normals)

    def config(self) -> FieldConfig:
        return FieldConfig(self.sphere.n_b, self.voxels.extent, self.voxels.resolution,
                           self.sigma_p, self.sigma_n, self.pair_radius, self.direction)

    def compatible(self, other: "PrimitiveField") -> bool:
        return (self.config() == other.config() and self.n_human == other.n_human
                and np.array_equal(self.object_points.points, other.object_points.points)
                and np.array_equal(self.object_points.normals, other.object_points.normals))

    # -- canonical pairs --------------------------------------------------

    def canonical_rows(self, rows: Sequence[int], cols: Optional[Sequence[int]] = None):
        """Canonical (p, n) for object rows x human cols over all samples.

        Returns p, n of shape (S, R, C, 3) and the inclusion mask (S, R, C).
        """
        rows = np.asarray(rows, dtype=np.int64)
        H = self.human_points if cols is None else self.human_points[:, cols]
        Nn = self.human_normals if cols is None else self.human_normals[:, cols]
        R = self.rotations[rows]  # (R, 3, 3)
        v = self.object_points.points[rows]
        rel = H[:, None, :, :] - v[None, :, None, :]
        p = np.einsum("rab,srcb->srca", R, rel)
        n = np.einsum("rab,scb->srca", R, Nn)
        if self.pair_radius is None:
            mask = np.ones(p.shape[:3], dtype=bool)
        else:
            mask = np.einsum("srci,srci->src", rel, rel) <= self.pair_radius ** 2
        return p, n, mask

    def pair_counts(self, rows: Optional[Sequence[int]] = None) -> Array:
        rows = np.arange(self.n_object) if rows is None else np.asarray(rows)
        if self.pair_radius is None:
            return np.full((len(rows), self.n_human), self.n_samples, dtype=np.int64)
        out = np.empty((len(rows), self.n_human), dtype=np.int64)
        r2 = self.pair_radius ** 2
        for k, i in enumerate(rows):
            rel = self.human_points - self.object_points.points[i]
            out[k] = (np.einsum("sci,sci->sc", rel, rel) <= r2).sum(axis=0)
        return out

    def has_pair(self, i: int, j: int) -> bool:
        return bool(self.pair_counts([i])[0, j] > 0)

    def pairs(self) -> Iterable[Tuple[int, int]]:
        for i in range(self.n_object):
            for j in np.flatnonzero(self.pair_counts([i])[0]):
                yield i, int(j)

    # -- materialization --------------------------------------------------

    def raw_distribution(self, i: int, j: int) -> PrimitiveDistribution:
        p, n, mask = self.canonical_rows([i], [j])
        dist = PrimitiveDistribution.empty(self.sphere, self.voxels)
        for s in np.flatnonzero(mask[:, 0, 0]):
            accumulate(dist, p[s, 0, 0], n[s, 0, 0], self.sigma_p, self.sigma_n)
        return dist

    def distribution(self, i: int, j: int) -> PrimitiveDistribution:
        dist = self.raw_distribution(i, j)
        if dist.sample_count == 0:
            raise KeyError(f"pair ({i}, {j}) received no mass")
        return dist.normalize()

    # -- factorized expectations -----------------------------------------

    def separable_expectation(self, volume: Array, sphere_values: Array,
                              rows: Optional[Sequence[int]] = None,
                              chunk: int = 400_000) -> Tuple[Array, Array]:
        """E_ij[a(p) b(n)] for a on voxel centers and b on sphere bins, all pairs in `rows`.

        Returns (values (R, N_h), counts (R, N_h)); pairs without samples get 0.
        """
        rows = np.arange(self.n_object) if rows is None else np.asarray(rows, dtype=np.int64)
        G = self.voxels.resolution
        vol = np.asarray(volume, dtype=np.float64).reshape(G, G, G)
        bvals = np.asarray(sphere_values, dtype=np.float64)
        out = np.zeros((len(rows), self.n_human))
        cnt = np.zeros((len(rows), self.n_human), dtype=np.int64)
        per_row = self.n_samples * self.n_human
        step = max(1, chunk // max(per_row, 1))
        for s in range(0, len(rows), step):
            rr = rows[s:s + step]
            p, n, mask = self.canonical_rows(rr)
            flat_p = p[mask]
            flat_n = n[mask]
            start, w, _ = positional_kernel(flat_p, self.voxels, self.sigma_p)
            a = window_contract(start, w, vol)
            cand, wn = sphere_kernel_sparse(flat_n, self.sphere, self.sigma_n)
            b = (wn * bvals[cand]).sum(axis=1)
            prod = np.zeros(mask.shape)
            prod[mask] = a * b
            out[s:s + step] = prod.sum(axis=0)
            cnt[s:s + step] = mask.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            vals = np.where(cnt > 0, out / np.maximum(cnt, 1), 0.0)
        return vals, cnt

    def marginal_n_rows(self, rows: Sequence[int]) -> Tuple[Array, Array]:
        """Sphere marginals for every pair in `rows`: (R, N_h, n_b) and counts (R, N_h)."""
        p, n, mask = self.canonical_rows(rows)
        S, R, C, _ = n.shape
        k = sphere_kernel(n.reshape(-1, 3), self.sphere, self.sigma_n).reshape(S, R, C, -1)
        k *= mask[..., None]
        cnt = mask.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            marg = k.sum(axis=0) / np.maximum(cnt, 1)[..., None]
        return marg, cnt

    def normalization_audit(self, chunk: int = 400_000) -> float:
        """max over stored pairs of |sum of P_ij - 1|, from the per-sample kernel masses."""
        worst = 0.0
        per_row = self.n_samples * self.n_human
        step = max(1, chunk // max(per_row, 1))
        for s in range(0, self.n_object, step):
            rr = np.arange(s, min(self.n_object, s + step))
            p, n, mask = self.canonical_rows(rr)
            _, w, _ = positional_kernel(p[mask], self.voxels, self.sigma_p)
            mass_p = w.sum(axis=2).prod(axis=1)
            mass_n = sphere_kernel_sparse(n[mask], self.sphere, self.sigma_n)[1].sum(axis=1)
            tot = np.zeros(mask.shape)
            tot[mask] = mass_p * mass_n
            cnt = mask.sum(axis=0)
            sums = tot.sum(axis=0)[cnt > 0] / cnt[cnt > 0]
            if sums.size:
                worst = max(worst, float(np.abs(sums - 1.0).max()))
        return worst

    def clamp_count(self, chunk: int = 400_000) -> int:
        total = 0
        lo = -self.voxels.extent + 0.5 * self.voxels.voxel_size
        per_row = self.n_samples * self.n_human
        step = max(1, chunk // max(per_row, 1))
        for s in range(0, self.n_object, step):
            rr = np.arange(s, min(self.n_object, s + step))
            p, _, mask = self.canonical_rows(rr)
            q = p[mask] - np.asarray(self.voxels.center)
            total += int(np.any(np.abs(q) > -lo, axis=1).sum())
        return total

    def subset(self, samples: Sequence[int]) -> "PrimitiveField":
        idx = np.asarray(samples, dtype=np.int64)
        return PrimitiveField(self.object_points, self.human_points[idx], self.human_normals[idx],
                              self.sphere, self.voxels, self.sigma_p, self.sigma_n,
                              self.pair_radius, self.direction)


def merge_fields(a: PrimitiveField, b: PrimitiveField) -> PrimitiveField:
    """Field over the union of both sample sets (a's samples first)."""
    if not a.compatible(b):
        raise ValueError("fields differ in grids, kernels or point sets")
    st = FieldStats(a.stats.samples + b.stats.samples, a.stats.skipped + b.stats.skipped,
                    a.stats.pair_samples + b.stats.pair_samples, a.stats.clamped + b.stats.clamped,
                    max(a.stats.max_mass_error, b.stats.max_mass_error))
    return PrimitiveField(a.object_points,
                          np.concatenate([a.human_points, b.human_points]),
                          np.concatenate([a.human_normals, b.human_normals]),
                          a.sphere, a.voxels, a.sigma_p, a.sigma_n, a.pair_radius, a.direction, st)


def resolve_kernels(config: FieldConfig) -> Tuple[SphereGrid, VoxelGrid, float, float]:
    sphere = fibonacci_sphere(config.n_b)
    voxels = VoxelGrid(config.extent, config.resolution)
    sigma_p = voxels.voxel_size if config.sigma_p is None else config.sigma_p
    sigma_n = sphere.mean_spacing if config.sigma_n is None else config.sigma_n
    return sphere, voxels, sigma_p, sigma_n


def build_primitive_field(dataset: Sequence, n_object: int, n_human: int,
                          config: FieldConfig = FieldConfig(),
                          object_points: Optional[SurfacePointSet] = None,
                          audit: bool = True) -> PrimitiveField:
    """Aggregate HOI samples into a primitive field.

    Each sample supplies `object_pose` (canonical object -> world), `body.surface`
    (world) and `object_points` (canonical). Samples whose point counts differ from
    (n_object, n_human) are skipped with a warning. `audit=False` skips the
    all-pairs normalization audit and clamp count in the stats.
    """
    if not dataset:
        raise ValueError("empty dataset")
    sphere, voxels, sigma_p, sigma_n = resolve_kernels(config)
    obj = object_points
    hp, hn = [], []
    skipped = 0
    for k, sample in enumerate(dataset):
        pts = sample.object_points if obj is None else obj
        surf = sample.body.surface
        if len(pts) != n_object or len(surf) != n_human:
            warnings.warn(f"sample {k}: expected {n_object}/{n_human} points, got "
                          f"{len(pts)}/{len(surf)}; skipped", RuntimeWarning, stacklevel=2)
            skipped += 1
            continue
        if obj is None:
            obj = pts
        inv = sample.object_pose.inverse()
        hp.append(inv.apply(surf.points))
        hn.append(surf.normals @ inv.rotation.T)
    if not hp:
        raise ValueError("no usable samples in dataset")
    if config.direction == "human->object":
        raise NotImplementedError("human-anchored fields are not supported by this builder")
    fld = PrimitiveField(obj, np.stack(hp), np.stack(hn), sphere, voxels, sigma_p, sigma_n,
                         config.pair_radius, config.direction)
    fld.stats = FieldStats(samples=len(hp), skipped=skipped,
                           pair_samples=int(fld.pair_counts().sum()),
                           clamped=fld.clamp_count() if audit else 0,
                           max_mass_error=fld.normalization_audit() if audit else float("nan"))
    return fld
