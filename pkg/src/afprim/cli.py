"""Command-line entry point: synth -> lift -> aggregate -> derive -> eval.

Exit codes: 0 success, 2 usage or validation error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from collections import defaultdict
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from .affordance import (aggregate_pointwise, contact_matrix, export_csv, export_ply, export_volume,
                         field_occupancy, regionwise_contact)
from .archive import ArchiveError, load_field, save_field
from .body import ArticulatedBody
from .camera import build_static_rig
from .config import ConfigError, PipelineConfig, load_config
from .geom import MeshError, RigidTransform, SurfacePointSet, read_pgm
from .lifting import lift_view
from .metrics import TABLE_COLUMNS, contact_similarity, miou
from .primitives import build_primitive_field, merge_fields
from .sample import HOISample, SchemaError, read_dataset, read_views, write_dataset, write_views
from .seeding import derive_seed
from .synth import SCENARIOS, make_scene, render_views

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3
RIG_TARGET = (0.0, 0.0, 0.75)


class UsageError(ValueError):
    """Bad arguments or inputs detected after parsing."""


def _dump(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True)


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_synth(cfg: PipelineConfig, out_dir) -> Path:
    """Ground-truth dataset in out/truth plus rendered views in out/views.jsonl."""
    sc = cfg.synth
    out = Path(out_dir)
    rig = build_static_rig(sc.views, sc.elevation, sc.scale, resolution=(sc.resolution,) * 2,
                           target=RIG_TARGET)
    samples, views = [], []
    for k in range(sc.samples):
        scn, pose = make_scene(sc.scenario, k, sc.jitter, cfg.seed, sc.object_points, sc.body_points)
        samples.append(scn.sample(pose))
        views.extend(render_views(scn, rig, sc.joint_noise_px, sc.outlier_views,
                                  derive_seed(cfg.seed, "views", k), sc.mask_margin,
                                  (sc.resolution, sc.resolution), prompt_id=k))
    write_dataset(out / "truth", samples, {"scenario": sc.scenario, "seed": cfg.seed})
    write_views(out, views)
    (out / "rig.json").write_text(rig.to_json())
    print(f"synth: {len(samples)} samples, {len(views)} views -> {out}")
    return out


def cmd_lift(views_path, object_dir, cfg: PipelineConfig, out_dir) -> Path:
    """Lift every view of every prompt group; kept bodies form a dataset in out_dir."""
    views = read_views(views_path)
    truth = read_dataset(object_dir)
    if not truth:
        raise UsageError(f"{object_dir}: dataset has no samples to take the object from")
    mesh, obj_pts = truth[0].object_mesh, truth[0].object_points
    if mesh is None:
        raise UsageError(f"{object_dir}: dataset carries no object mesh")
    n_body = len(truth[0].body.surface)
    lc = cfg.lift.lift_config()
    groups = defaultdict(list)
    for v in views:
        groups[v.prompt_id].append(v)
    kept: List[HOISample] = []
    log = []
    for prompt in sorted(groups, key=str):
        group = groups[prompt]
        for ref in group:
            res = lift_view(ref, group, mesh, obj_pts, lc,
                            derive_seed(cfg.seed, "penetration", int(prompt), int(ref.view_id)))
            rec = {"prompt_id": prompt, "view_id": ref.view_id, "keep": res.verdict.keep,
                   "reason": res.verdict.reason, "inliers": list(res.inliers.members),
                   "z": res.z, "iou": res.iou, "penetration": res.penetration}
            if res.solution is not None:
                rec["loss_trace"] = [float(x) for x in res.solution.loss_trace]
            log.append(rec)
            if res.verdict.keep:
                body = ArticulatedBody.from_joints(res.body.joints, n_body, res.body.capsule_radii)
                kept.append(HOISample(RigidTransform.identity(), body, obj_pts, mesh,
                                      {"prompt_id": prompt, "reference": ref.view_id, "z": res.z}))
    out = Path(out_dir)
    write_dataset(out, kept, {"source": str(views_path)}, object_mesh=mesh, object_points=obj_pts)
    (out / "verdicts.jsonl").write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in log))
    print(f"lift: kept {len(kept)} of {len(log)} views -> {out}")
    return out


def cmd_aggregate(dataset_dir, cfg: PipelineConfig, out_field, merge_with=None,
                  dense_pairs: Sequence = ()) -> Path:
    samples = read_dataset(dataset_dir)
    if not samples:
        raise UsageError(f"{dataset_dir}: no samples to aggregate")
    fld = build_primitive_field(samples, len(samples[0].object_points), len(samples[0].body.surface),
                                cfg.field.field_config())
    if merge_with is not None:
        other = load_field(merge_with)
        if not other.compatible(fld):
            raise UsageError(f"{merge_with}: grid or config differs from this run")
        fld = merge_fields(other, fld)
        fld.stats.max_mass_error = fld.normalization_audit()
    save_field(out_field, fld, dense_pairs)
    print(f"aggregate: {fld.n_samples} samples, {fld.n_object}x{fld.n_human} points -> {out_field}")
    print(f"normalization audit: max |sum P_ij - 1| = {fld.stats.max_mass_error:.3e}")
    return Path(out_field)


def _selection(spec: str, limit: int) -> np.ndarray:
    if spec == "all":
        return np.arange(limit)
    path = Path(spec)
    try:
        text = path.read_text()
    except OSError as exc:
        raise UsageError(f"cannot read selection {spec}: {exc}") from None
    try:
        idx = np.array([int(tok) for tok in text.replace(",", " ").split()], dtype=np.int64)
    except ValueError:
        raise UsageError(f"{spec}: selection must be whitespace or comma separated integers") from None
    if idx.size == 0:
        raise UsageError(f"{spec}: empty selection")
    if idx.min() < 0 or idx.max() >= limit:
        raise UsageError(f"{spec}: index out of range [0, {limit})")
    return idx


def _human_points(fld) -> SurfacePointSet:
    """Representative human surface: the first sample in the object frame."""
    return SurfacePointSet(fld.human_points[0], fld.human_normals[0], "body")


def cmd_derive(field_path, kind: str, selection: str, side: str, out, cfg: PipelineConfig) -> Path:
    fld = load_field(field_path)
    out = Path(out)
    rho, rule = cfg.affordance.rho, cfg.affordance.rule
    if kind == "spatial":
        sel = _selection(selection, fld.n_human)
        export_volume(out, field_occupancy(fld, sel))
        print(f"derive: spatial occupancy of {len(sel)} human points -> {out}")
        return out
    if kind == "contact" and selection != "all":
        limit = fld.n_object if side == "object" else fld.n_human
        sel = _selection(selection, limit)
        aff = regionwise_contact(fld, sel, side, rho)
        target = "human" if side == "object" else "object"
    else:
        if selection != "all":
            raise UsageError("orientation takes selection 'all'")
        axis = "over-object" if side == "object" else "over-human"
        aff = aggregate_pointwise(fld, kind, axis, rule, rho)
        target = side
    points = fld.object_points if target == "object" else _human_points(fld)
    if out.suffix == ".ply":
        export_ply(out, points, aff)
    elif out.suffix == ".csv":
        export_csv(out, aff)
    else:
        raise UsageError(f"{out}: output must end in .ply or .csv")
    print(f"derive: {kind} on {target} points ({len(aff.values)}) -> {out}")
    return out


def _masks(directory) -> dict:
    return {p.name: read_pgm(p) for p in sorted(Path(directory).glob("*.pgm"))}


def cmd_eval(pred_path, truth_path, out, cfg: PipelineConfig, pred_masks=None,
             truth_masks=None) -> dict:
    pred = load_field(pred_path)
    truth_path = Path(truth_path)
    if (truth_path / "header.json").exists():
        truth = load_field(truth_path)
    else:
        samples = read_dataset(truth_path)
        truth = build_primitive_field(samples, len(samples[0].object_points),
                                      len(samples[0].body.surface), pred.config(), audit=False)
    if (pred.n_object, pred.n_human) != (truth.n_object, truth.n_human):
        raise UsageError(f"point counts differ: {pred.n_object}x{pred.n_human} vs "
                         f"{truth.n_object}x{truth.n_human}")
    rho, rule = cfg.affordance.rho, cfg.affordance.rule
    row = {c: None for c in TABLE_COLUMNS}
    mp, mt = contact_matrix(pred, rho), contact_matrix(truth, rho)
    for axis, col in (("over-human", "SIM_Human"), ("over-object", "SIM_Object")):
        a = aggregate_pointwise(pred, "contact", axis, rule, rho, mp).values
        b = aggregate_pointwise(truth, "contact", axis, rule, rho, mt).values
        row[col] = contact_similarity(a, b)
    if pred_masks is not None and truth_masks is not None:
        ma, mb = _masks(pred_masks), _masks(truth_masks)
        names = sorted(set(ma) & set(mb))
        if not names:
            raise UsageError("no mask files shared by name between the two directories")
        row["mIoU"] = miou([ma[n] for n in names], [mb[n] for n in names]).value
    doc = {"columns": list(TABLE_COLUMNS), "metrics": row,
           "pred": str(pred_path), "truth": str(truth_path)}
    Path(out).write_text(_dump(doc))
    cells = ["-" if row[c] is None else f"{row[c]:.2f}" for c in TABLE_COLUMNS]
    print(" | ".join(TABLE_COLUMNS))
    print(" | ".join(cells))
    return doc


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _pair(text: str):
    try:
        i, j = (int(x) for x in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError("pairs are written i,j") from None
    return i, j


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="afprim", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"afprim {__version__}")
    ap.add_argument("--config", help="JSON pipeline config (env AFPRIM__SECTION__KEY overrides it)")
    ap.add_argument("--seed", type=int, help="root seed (overrides config)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset and its rendered views")
    p.add_argument("--scenario", choices=SCENARIOS)
    p.add_argument("--samples", type=int)
    p.add_argument("--jitter", type=float)
    p.add_argument("--outlier-views", type=int)
    p.add_argument("--noise", type=float, help="joint noise in pixels")
    p.add_argument("--out", required=True)

    p = sub.add_parser("lift", help="lift view observations to 3D samples")
    p.add_argument("views", help="views.jsonl")
    p.add_argument("--object", help="dataset directory holding the object (default: <views dir>/truth)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("aggregate", help="aggregate a dataset into a primitive field archive")
    p.add_argument("dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--merge", help="existing archive to merge with")
    p.add_argument("--dense-pair", type=_pair, action="append", default=[],
                   help="also store P_ij densely for pair i,j (repeatable)")

    p = sub.add_parser("derive", help="derive an affordance export from a field archive")
    p.add_argument("field")
    p.add_argument("--kind", required=True, choices=("contact", "orientation", "spatial"))
    p.add_argument("--selection", default="all", help="'all' or a file of point indices")
    p.add_argument("--side", default="object", choices=("object", "human"),
                   help="points that carry the output (or that the selection indexes)")
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="compare a field against a truth field or dataset")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--out", required=True)
    p.add_argument("--pred-masks")
    p.add_argument("--truth-masks")
    return ap


def _apply_cli_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    if args.seed is not None:
        cfg.seed = args.seed
    if args.command == "synth":
        for attr, key in (("scenario", "scenario"), ("samples", "samples"), ("jitter", "jitter"),
                          ("outlier_views", "outlier_views"), ("noise", "joint_noise_px")):
            val = getattr(args, attr)
            if val is not None:
                setattr(cfg.synth, key, val)
    return cfg.validate()


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = _apply_cli_overrides(load_config(args.config), args)
        if args.command == "synth":
            cmd_synth(cfg, args.out)
        elif args.command == "lift":
            obj = args.object or str(Path(args.views).parent / "truth")
            cmd_lift(args.views, obj, cfg, args.out)
        elif args.command == "aggregate":
            cmd_aggregate(args.dataset, cfg, args.out, args.merge, args.dense_pair)
        elif args.command == "derive":
            cmd_derive(args.field, args.kind, args.selection, args.side, args.out, cfg)
        elif args.command == "eval":
            cmd_eval(args.pred, args.truth, args.out, cfg, args.pred_masks, args.truth_masks)
    except (UsageError, ConfigError, SchemaError, ArchiveError, MeshError, FileNotFoundError,
            IndexError) as exc:
        print(f"afprim {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report any failure with the runtime exit code
        print(f"afprim {args.command}: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
