"""AFPRIM1 field archives.

A directory holding:
  header.json     magic, version, grids, kernels, counts, stats, dense-pair index table
  object.bin      object points and normals, float64 little-endian, (N_o, 6)
  samples.bin     canonical-frame human points and normals, float64 little-endian, (S, N_h, 6)
  pairs.bin       optional normalized P_ij blocks, float32 little-endian, G^3 x n_b row-major,
                  one block per entry of the header's "dense_pairs" table

The per-sample human surfaces rebuild every P_ij exactly, so dense blocks are only
written for explicitly requested pairs.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Optional, Sequence, Tuple

import numpy as np

from .geom import SurfacePointSet
from .primitives import FieldStats, PrimitiveField, VoxelGrid, fibonacci_sphere

MAGIC = "AFPRIM1"
VERSION = 1


class ArchiveError(ValueError):
    """Missing, truncated or inconsistent archive."""


def save_field(path, fld: PrimitiveField,
               dense_pairs: Sequence[Tuple[int, int]] = ()) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    obj = np.hstack([fld.object_points.points, fld.object_points.normals]).astype("<f8")
    smp = np.concatenate([fld.human_points, fld.human_normals], axis=2).astype("<f8")
    (out / "object.bin").write_bytes(obj.tobytes())
    (out / "samples.bin").write_bytes(smp.tobytes())
    table = []
    block = fld.voxels.n_cells * fld.sphere.n_b
    pairs_path = out / "pairs.bin"
    if dense_pairs:
        with open(pairs_path, "wb") as fh:
            for k, (i, j) in enumerate(dense_pairs):
                if not fld.has_pair(i, j):
                    raise ArchiveError(f"pair ({i}, {j}) has no samples")
                fh.write(fld.distribution(i, j).weights.astype("<f4").tobytes())
                table.append([int(i), int(j), k * block])
    elif pairs_path.exists():
        pairs_path.unlink()
    header = {
        "magic": MAGIC, "version": VERSION,
        "n_b": fld.sphere.n_b, "extent": fld.voxels.extent, "resolution": fld.voxels.resolution,
        "sigma_p": fld.sigma_p, "sigma_n": fld.sigma_n, "pair_radius": fld.pair_radius,
        "direction": fld.direction, "source": fld.object_points.source,
        "n_samples": fld.n_samples, "n_object": fld.n_object, "n_human": fld.n_human,
        "stats": vars(fld.stats), "dense_pairs": table, "block_floats": block,
    }
    (out / "header.json").write_text(json.dumps(header, indent=1, sort_keys=True))
    return out


def _read(path: Path, count: int) -> np.ndarray:
    try:
        data = np.frombuffer(path.read_bytes(), dtype="<f8")
    except FileNotFoundError:
        raise ArchiveError(f"{path}: missing") from None
    if data.size != count:
        raise ArchiveError(f"{path}: expected {count} values, found {data.size}")
    return data.astype(np.float64)


def load_field(path) -> PrimitiveField:
    root = Path(path)
    try:
        header = json.loads((root / "header.json").read_text())
    except FileNotFoundError:
        raise ArchiveError(f"{root}: not an {MAGIC} archive (no header.json)") from None
    except json.JSONDecodeError as exc:
        raise ArchiveError(f"{root / 'header.json'}: {exc}") from None
    if header.get("magic") != MAGIC:
        raise ArchiveError(f"{root}: bad magic {header.get('magic')!r}")
    if header.get("version") != VERSION:
        raise ArchiveError(f"{root}: unsupported version {header.get('version')}")
    S, No, Nh = header["n_samples"], header["n_object"], header["n_human"]
    obj = _read(root / "object.bin", No * 6).reshape(No, 6)
    smp = _read(root / "samples.bin", S * Nh * 6).reshape(S, Nh, 6)
    pts = SurfacePointSet(obj[:, :3], obj[:, 3:], header.get("source", "object"))
    fld = PrimitiveField(pts, smp[..., :3], smp[..., 3:], fibonacci_sphere(header["n_b"]),
                         VoxelGrid(header["extent"], header["resolution"]), header["sigma_p"],
                         header["sigma_n"], header["pair_radius"], header["direction"],
                         FieldStats(**header.get("stats", {})))
    return fld


def load_dense_pair(path, i: int, j: int) -> Optional[np.ndarray]:
    """Stored float32 block for pair (i, j) reshaped to (G^3, n_b), or None if absent."""
    root = Path(path)
    header = json.loads((root / "header.json").read_text())
    for a, b, offset in header.get("dense_pairs", []):
        if (a, b) == (i, j):
            n = header["block_floats"]
            with open(root / "pairs.bin", "rb") as fh:
                fh.seek(offset * 4)
                data = np.frombuffer(fh.read(n * 4), dtype="<f4")
            if data.size != n:
                raise ArchiveError(f"{root / 'pairs.bin'}: truncated block for pair ({i}, {j})")
            return data.reshape(-1, header["n_b"]).astype(np.float64)
    return None
