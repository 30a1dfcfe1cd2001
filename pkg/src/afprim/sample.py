"""HOI samples and their on-disk bundles (JSON + PLY), plus view-observation batches."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .body import ArticulatedBody
from .camera import WeakPerspectiveCamera
from .geom import RigidTransform, SurfacePointSet, TriMesh, load_mesh, read_pgm, save_ply, write_pgm
from .lifting import ViewObservation

DATASET_FORMAT = "afprim-dataset"
DATASET_VERSION = 1


class SchemaError(ValueError):
    """A record is missing fields or carries malformed values."""


@dataclass
class HOISample:
    """One posed object with one placed body; `object_pose` maps canonical object to world."""

    object_pose: RigidTransform
    body: ArticulatedBody
    object_points: SurfacePointSet
    object_mesh: Optional[TriMesh] = None
    provenance: dict = field(default_factory=dict)

    def deposed_body(self) -> ArticulatedBody:
        return self.body.transformed(self.object_pose.inverse())

    def to_record(self) -> dict:
        return {"object_pose": self.object_pose.to_dict(), "body": self.body.to_dict(),
                "provenance": self.provenance}


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True)


def _write_points(path: Path, pts: SurfacePointSet) -> None:
    save_ply(path, pts.points, None, pts.normals)


def write_dataset(out_dir, samples: Sequence[HOISample], meta: Optional[dict] = None,
                  object_mesh: Optional[TriMesh] = None,
                  object_points: Optional[SurfacePointSet] = None) -> Path:
    """Write samples sharing one canonical object as a dataset bundle directory.

    The object comes from the first sample unless given explicitly, which allows
    writing an empty dataset.
    """
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    if samples:
        object_mesh = samples[0].object_mesh if object_mesh is None else object_mesh
        object_points = samples[0].object_points if object_points is None else object_points
    if object_points is None:
        raise ValueError("no samples and no object points to write")
    if object_mesh is not None:
        save_ply(out / "object.ply", object_mesh.vertices, object_mesh.faces,
                 object_mesh.normals, binary=True)
    np.save(out / "object_points.npy", np.hstack([object_points.points, object_points.normals]))
    names = []
    for k, s in enumerate(samples):
        name = f"sample_{k:04d}"
        (out / "samples" / f"{name}.json").write_text(_dump(s.to_record()))
        _write_points(out / "samples" / f"{name}_body.ply", s.body.surface)
        names.append(name)
    header = {"format": DATASET_FORMAT, "version": DATASET_VERSION, "samples": names,
              "n_object_points": len(object_points),
              "n_body_points": len(samples[0].body.surface) if samples else 0,
              "has_mesh": object_mesh is not None, "meta": meta or {}}
    (out / "dataset.json").write_text(_dump(header))
    return out


def read_dataset(path) -> List[HOISample]:
    root = Path(path)
    hdr_path = root / "dataset.json"
    try:
        header = json.loads(hdr_path.read_text())
    except FileNotFoundError:
        raise SchemaError(f"{hdr_path}: missing dataset header") from None
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{hdr_path}: {exc}") from None
    if header.get("format") != DATASET_FORMAT:
        raise SchemaError(f"{hdr_path}: not an {DATASET_FORMAT} bundle")
    op = np.load(root / "object_points.npy")
    obj_pts = SurfacePointSet(op[:, :3], op[:, 3:], "object")
    mesh = load_mesh(root / "object.ply") if header.get("has_mesh") else None
    n_body = int(header.get("n_body_points", 1000))
    out = []
    for name in header["samples"]:
        rec_path = root / "samples" / f"{name}.json"
        rec = json.loads(rec_path.read_text())
        for key in ("object_pose", "body"):
            if key not in rec:
                raise SchemaError(f"{rec_path}: missing field {key!r}")
        b = rec["body"]
        body = ArticulatedBody.from_joints(np.asarray(b["joints"], dtype=np.float64),
                                           int(b.get("n_points", n_body)),
                                           np.asarray(b["capsule_radii"], dtype=np.float64))
        out.append(HOISample(RigidTransform.from_dict(rec["object_pose"]), body, obj_pts, mesh,
                             rec.get("provenance", {})))
    return out


# --------------------------------------------------------------------------
# view batches
# --------------------------------------------------------------------------


def view_to_record(v: ViewObservation, mask_path: Optional[str]) -> dict:
    return {"view_id": v.view_id, "prompt_id": v.prompt_id, "camera": v.camera.to_dict(),
            "joints2d": v.joints2d.tolist(), "joints3d": v.joints3d.tolist(),
            "mask_path": mask_path, "meta": v.meta}


def write_views(out_dir, views: Sequence[ViewObservation], name: str = "views.jsonl") -> Path:
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    lines = []
    for v in views:
        mask_path = None
        if v.human_mask is not None:
            mask_path = f"masks/view_{v.prompt_id}_{v.view_id}.pgm"
            write_pgm(out / mask_path, v.human_mask)
        lines.append(json.dumps(view_to_record(v, mask_path), sort_keys=True))
    path = out / name
    path.write_text("\n".join(lines) + "\n")
    return path


_VIEW_FIELDS = ("view_id", "camera", "joints2d", "joints3d")


def read_views(path) -> List[ViewObservation]:
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        where = f"{path}:{lineno}"
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{where}: {exc}") from None
        for key in _VIEW_FIELDS:
            if key not in rec:
                raise SchemaError(f"{where} (view {rec.get('view_id', '?')}): missing field {key!r}")
        try:
            cam = WeakPerspectiveCamera.from_dict(rec["camera"])
            mask = None
            if rec.get("mask_path"):
                mask = read_pgm(path.parent / rec["mask_path"])
            out.append(ViewObservation(rec["view_id"], cam, rec["joints2d"], rec["joints3d"], mask,
                                       rec.get("prompt_id", 0), rec.get("mask_path"),
                                       rec.get("meta", {})))
        except (KeyError, ValueError, TypeError) as exc:
            raise SchemaError(f"{where} (view {rec.get('view_id')}): {exc}") from None
    return out
