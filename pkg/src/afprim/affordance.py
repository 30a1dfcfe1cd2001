"""Contact, orientation and spatial affordances derived from primitive distributions."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .geom import SurfacePointSet, save_ply
from .primitives import (PrimitiveDistribution, PrimitiveField, VoxelGrid, marginal_n,
                         marginal_p)

Array = np.ndarray

NORMALIZED_TOL = 1e-9


@dataclass
class AffordanceField:
    values: Array
    kind: str
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.kind not in ("contact", "orientation", "spatial"):
            raise ValueError(f"unknown affordance kind {self.kind!r}")
        if np.any(self.values < -1e-12):
            raise ValueError("affordance values must be nonnegative")
        if self.kind == "orientation" and np.any(self.values > 1 + 1e-9):
            raise ValueError("orientation values must lie in [0, 1]")


@dataclass
class OccupancyGrid:
    voxels: VoxelGrid
    counts: Array
    frame: str = "object-frame"

    def normalized(self) -> Array:
        tot = self.counts.sum()
        return self.counts / tot if tot > 0 else self.counts.copy()

    def argmax_center(self) -> Array:
        G = self.voxels.resolution
        k = int(np.argmax(self.counts))
        ix, iy, iz = np.unravel_index(k, (G, G, G))
        c = self.voxels.axis_centers
        return np.array([c[ix], c[iy], c[iz]]) + np.asarray(self.voxels.center)


# --------------------------------------------------------------------------
# per-distribution quantities
# --------------------------------------------------------------------------


def f_contact(p: Array, n: Array, rho: float = 1.0) -> Array:
    """((1 - n.z) / 2) * exp(-|p| / rho); broadcasts over leading axes."""
    p = np.asarray(p, dtype=np.float64)
    n = np.asarray(n, dtype=np.float64)
    return (1.0 - n[..., 2]) / 2.0 * np.exp(-np.linalg.norm(p, axis=-1) / rho)


def contact_volume(voxels: VoxelGrid, rho: float = 1.0) -> Array:
    return np.exp(-np.linalg.norm(voxels.cell_centers(), axis=1) / rho)


def contact_sphere(directions: Array) -> Array:
    return (1.0 - directions[:, 2]) / 2.0


def _require_normalized(dist: PrimitiveDistribution) -> None:
    if abs(dist.total() - 1.0) > NORMALIZED_TOL:
        raise ValueError("distribution is not normalized")


def contact_expectation(dist: PrimitiveDistribution, rho: float = 1.0) -> float:
    """Sum over cells of P(p, n) f_contact(voxel center, bin direction)."""
    _require_normalized(dist)
    h = contact_volume(dist.voxels, rho)
    g = contact_sphere(dist.sphere.directions)
    return float(h @ dist.weights @ g)


def entropy(hist: Array) -> float:
    h = np.asarray(hist, dtype=np.float64)
    nz = h[h > 0]
    return float(-(nz * np.log(nz)).sum())


def orientation_from_marginal(marg: Array, n_b: int) -> float:
    if n_b < 2:
        raise ValueError("orientation needs n_b >= 2")
    val = 1.0 - entropy(marg) / math.log(n_b)
    return float(min(1.0, max(0.0, val)))


def orientation_expectation(dist: PrimitiveDistribution) -> float:
    """1 - H(P(n)) / log n_b, the expectation of 1 + log P(n) / log n_b."""
    _require_normalized(dist)
    return orientation_from_marginal(marginal_n(dist), dist.sphere.n_b)


def orientation_cellwise(dist: PrimitiveDistribution) -> float:
    """Same quantity as a cell-by-cell sum of P(p, n) f(n) (0 log 0 := 0)."""
    _require_normalized(dist)
    n_b = dist.sphere.n_b
    if n_b < 2:
        raise ValueError("orientation needs n_b >= 2")
    marg = marginal_n(dist)
    with np.errstate(divide="ignore"):
        f = np.where(marg > 0, 1.0 + np.log(np.where(marg > 0, marg, 1.0)) / math.log(n_b), 0.0)
    return float((dist.weights * f[None, :]).sum())


def spatial_occupancy(dist: PrimitiveDistribution, x: Array) -> float:
    _require_normalized(dist)
    k = int(dist.voxels.locate(x)[0])
    if k < 0:
        return 0.0
    return float(marginal_p(dist)[k])


# --------------------------------------------------------------------------
# pairwise matrices and aggregation
# --------------------------------------------------------------------------


def contact_matrix(fld: PrimitiveField, rho: float = 1.0,
                   rows: Optional[Sequence[int]] = None) -> Array:
    """E_ij[f_contact] for all pairs (rows x N_h); missing pairs are NaN."""
    vals, cnt = fld.separable_expectation(contact_volume(fld.voxels, rho),
                                          contact_sphere(fld.sphere.directions), rows)
    return np.where(cnt > 0, vals, np.nan)


def orientation_matrix(fld: PrimitiveField, rows: Optional[Sequence[int]] = None,
                       chunk: int = 2_000_000) -> Array:
    if fld.sphere.n_b < 2:
        raise ValueError("orientation needs n_b >= 2")
    rows = np.arange(fld.n_object) if rows is None else np.asarray(rows, dtype=np.int64)
    out = np.full((len(rows), fld.n_human), np.nan)
    per_row = fld.n_samples * fld.n_human * fld.sphere.n_b
    step = max(1, chunk // max(per_row, 1))
    logn = math.log(fld.sphere.n_b)
    for s in range(0, len(rows), step):
        marg, cnt = fld.marginal_n_rows(rows[s:s + step])
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(marg > 0, marg * np.log(np.where(marg > 0, marg, 1.0)), 0.0)
        val = np.clip(1.0 + plogp.sum(axis=-1) / logn, 0.0, 1.0)
        out[s:s + step] = np.where(cnt > 0, val, np.nan)
    return out


def pairwise_matrix(fld: PrimitiveField, kind: str, rho: float = 1.0) -> Array:
    if kind == "contact":
        return contact_matrix(fld, rho)
    if kind == "orientation":
        return orientation_matrix(fld)
    raise ValueError(f"no pairwise matrix for kind {kind!r}")


_REDUCERS = {
    "max": lambda m, ax: m.max(axis=ax),
    "mean": lambda m, ax: m.mean(axis=ax),
    "median": lambda m, ax: np.median(m, axis=ax),
}


def aggregate_matrix(matrix: Array, axis: str, rule: str = "max") -> Array:
    """Reduce a pairwise (N_o, N_h) matrix to one side; missing pairs count as 0.

    axis="over-object" yields one value per object point (reducing over human points);
    axis="over-human" yields one value per human point.
    """
    if rule not in _REDUCERS:
        raise ValueError(f"unknown aggregation rule {rule!r}")
    m = np.nan_to_num(np.asarray(matrix, dtype=np.float64), nan=0.0)
    if axis == "over-object":
        return _REDUCERS[rule](m, 1)
    if axis == "over-human":
        return _REDUCERS[rule](m, 0)
    raise ValueError(f"unknown axis {axis!r}")


def aggregate_pointwise(fld: PrimitiveField, kind: str, axis: str, rule: str = "max",
                        rho: float = 1.0, matrix: Optional[Array] = None) -> AffordanceField:
    m = pairwise_matrix(fld, kind, rho) if matrix is None else matrix
    return AffordanceField(aggregate_matrix(m, axis, rule), kind,
                           {"aggregation": rule, "axis": axis, "rho": rho})


def regionwise_contact(fld: PrimitiveField, selected: Sequence[int], side: str = "object",
                       rho: float = 1.0, matrix: Optional[Array] = None) -> AffordanceField:
    """Max contact on the opposite side restricted to pairs whose `side` index is selected."""
    sel = np.unique(np.asarray(list(selected), dtype=np.int64))
    if sel.size == 0:
        raise ValueError("empty selection")
    if side == "object":
        if sel.min() < 0 or sel.max() >= fld.n_object:
            raise IndexError("object selection out of range")
        m = contact_matrix(fld, rho, rows=sel) if matrix is None else matrix[sel]
        vals = np.nan_to_num(m, nan=0.0).max(axis=0)
    elif side == "human":
        if sel.min() < 0 or sel.max() >= fld.n_human:
            raise IndexError("human selection out of range")
        m = contact_matrix(fld, rho) if matrix is None else matrix
        vals = np.nan_to_num(m[:, sel], nan=0.0).max(axis=1)
    else:
        raise ValueError(f"unknown side {side!r}")
    return AffordanceField(vals, "contact", {"aggregation": "max", "selected_side": side,
                                             "selected": int(sel.size), "rho": rho})


# --------------------------------------------------------------------------
# spatial occupancy in the object frame
# --------------------------------------------------------------------------


def object_frame_occupancy(dataset: Sequence, human_subset: Sequence[int],
                           grid: VoxelGrid) -> OccupancyGrid:
    """Count selected human points of every (de-posed) sample into object-frame voxels.

    `dataset` items need `object_pose` and `body.surface`; an (S, N_h, 3) array of
    human points already in the object frame is accepted as well.
    """
    sel = np.asarray(list(human_subset), dtype=np.int64)
    counts = np.zeros(grid.n_cells)
    if isinstance(dataset, np.ndarray):
        clouds = [dataset[s][sel] for s in range(dataset.shape[0])]
    else:
        clouds = [sample.object_pose.inverse().apply(sample.body.surface.points[sel])
                  for sample in dataset]
    for pts in clouds:
        k = grid.locate(pts)
        k = k[k >= 0]
        np.add.at(counts, k, 1.0)
    return OccupancyGrid(grid, counts, "object-frame")


def field_occupancy(fld: PrimitiveField, human_subset: Sequence[int],
                    grid: Optional[VoxelGrid] = None) -> OccupancyGrid:
    grid = VoxelGrid(fld.voxels.extent, fld.voxels.resolution) if grid is None else grid
    return object_frame_occupancy(fld.human_points, human_subset, grid)


# --------------------------------------------------------------------------
# export
# --------------------------------------------------------------------------

# 8-bit anchors of a perceptually uniform dark-blue -> green -> yellow ramp
_RAMP = np.array([
    [68, 1, 84], [72, 40, 120], [62, 74, 137], [49, 104, 142], [38, 130, 142],
    [31, 158, 137], [53, 183, 121], [110, 206, 88], [181, 222, 43], [253, 231, 37],
], dtype=np.float64)


def colormap(values: Array, vmin: Optional[float] = None, vmax: Optional[float] = None) -> Array:
    """Map scalars to uint8 RGB by piecewise-linear interpolation of the ramp anchors."""
    v = np.asarray(values, dtype=np.float64)
    lo = float(v.min()) if vmin is None else vmin
    hi = float(v.max()) if vmax is None else vmax
    t = np.zeros_like(v) if hi <= lo else np.clip((v - lo) / (hi - lo), 0.0, 1.0)
    x = t * (len(_RAMP) - 1)
    k = np.minimum(np.floor(x).astype(int), len(_RAMP) - 2)
    frac = (x - k)[:, None]
    rgb = _RAMP[k] * (1 - frac) + _RAMP[k + 1] * frac
    return np.rint(rgb).astype(np.uint8)


def export_ply(path, points: SurfacePointSet, aff: AffordanceField) -> None:
    if len(points) != len(aff.values):
        raise ValueError("point count differs from affordance length")
    vmax = 1.0 if aff.kind == "orientation" else None
    save_ply(path, points.points, None, points.normals, colormap(aff.values, 0.0, vmax), aff.values)


def export_csv(path, aff: AffordanceField) -> None:
    with open(path, "w", encoding="ascii") as fh:
        fh.write("index,value\n")
        for k, v in enumerate(aff.values):
            fh.write(f"{k},{float(v)!r}\n")


def export_volume(path, occ: OccupancyGrid, normalized: bool = True) -> None:
    path = Path(path)
    data = occ.normalized() if normalized else occ.counts
    path.write_bytes(data.astype("<f4").tobytes())
    header = {"grid": occ.voxels.to_dict(), "frame": occ.frame, "dtype": "float32-le",
              "order": "x-major (x, y, z)", "normalized": normalized,
              "total_count": float(occ.counts.sum())}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(header, indent=2, sort_keys=True))
