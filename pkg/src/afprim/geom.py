"""Triangle meshes, rigid transforms, surface sampling and silhouette rasterization."""

from __future__ import annotations

import heapq
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Optional, Sequence

import numpy as np
from scipy.spatial import cKDTree

if TYPE_CHECKING:
    from .camera import WeakPerspectiveCamera

Array = np.ndarray


class MeshError(ValueError):
    """Raised for malformed or degenerate mesh input."""


class MeshParseError(MeshError):
    def __init__(self, message: str, location: str):
        super().__init__(f"{location}: {message}")
        self.location = location


# --------------------------------------------------------------------------
# containers
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RigidTransform:
    rotation: Array
    translation: Array

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    def apply(self, x: Array) -> Array:
        return np.asarray(x, dtype=np.float64) @ self.rotation.T + self.translation

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self after other."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    def to_dict(self) -> dict:
        return {"rotation": self.rotation.reshape(-1).tolist(),
                "translation": self.translation.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "RigidTransform":
        return cls(np.asarray(d["rotation"], dtype=np.float64).reshape(3, 3),
                   np.asarray(d["translation"], dtype=np.float64))


@dataclass
class TriMesh:
    vertices: Array
    faces: Array
    normals: Optional[Array] = None

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        if len(self.faces) and (self.faces.min() < 0 or self.faces.max() >= len(self.vertices)):
            bad = int(self.faces.max()) if self.faces.max() >= len(self.vertices) else int(self.faces.min())
            raise MeshError(f"face index {bad} out of range for {len(self.vertices)} vertices")
        if self.normals is None:
            self.normals = vertex_normals(self.vertices, self.faces)
        else:
            self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)

    @property
    def triangles(self) -> Array:
        return self.vertices[self.faces]

    def face_areas(self) -> Array:
        tri = self.triangles
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    @property
    def area(self) -> float:
        return float(self.face_areas().sum())

    def transformed(self, T: RigidTransform) -> "TriMesh":
        return TriMesh(T.apply(self.vertices), self.faces.copy(), self.normals @ T.rotation.T)

    def translated(self, offset: Array) -> "TriMesh":
        return TriMesh(self.vertices + np.asarray(offset, dtype=np.float64), self.faces.copy(),
                       self.normals.copy())

    def contains(self, points: Array) -> Array:
        """Inside test by generalized winding number. Requires a closed surface."""
        return winding_number(self, points) > 0.5


@dataclass
class SurfacePointSet:
    points: Array
    normals: Array
    source: str = ""

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        self.normals = np.asarray(self.normals, dtype=np.float64).reshape(-1, 3)
        if len(self.points) != len(self.normals):
            raise ValueError("points and normals differ in length")

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> "SurfacePointSet":
        return SurfacePointSet(self.points[idx], self.normals[idx], self.source)


@dataclass
class Mask:
    width: int
    height: int
    bits: Array = field(default=None)

    def __post_init__(self):
        if self.width <= 0 or self.height <= 0:
            raise ValueError("mask dimensions must be positive")
        if self.bits is None:
            self.bits = np.zeros((self.height, self.width), dtype=bool)
        self.bits = np.asarray(self.bits, dtype=bool).reshape(self.height, self.width)

    @classmethod
    def from_array(cls, bits: Array) -> "Mask":
        bits = np.asarray(bits, dtype=bool)
        return cls(bits.shape[1], bits.shape[0], bits)

    @property
    def area(self) -> int:
        return int(self.bits.sum())

    def __eq__(self, other):
        return (isinstance(other, Mask) and self.bits.shape == other.bits.shape
                and bool(np.array_equal(self.bits, other.bits)))


def iou(a: Mask, b: Mask) -> float:
    union = np.logical_or(a.bits, b.bits).sum()
    if union == 0:
        return 0.0
    return float(np.logical_and(a.bits, b.bits).sum() / union)


# --------------------------------------------------------------------------
# normals / rigid
# --------------------------------------------------------------------------


def vertex_normals(vertices: Array, faces: Array) -> Array:
    """Area-weighted average of incident face normals."""
    normals = np.zeros_like(vertices)
    if len(faces):
        tri = vertices[faces]
        fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        for k in range(3):
            np.add.at(normals, faces[:, k], fn)
    norm = np.linalg.norm(normals, axis=1)
    out = np.tile([0.0, 0.0, 1.0], (len(vertices), 1))
    ok = norm > 0
    out[ok] = normals[ok] / norm[ok, None]
    return out


def apply_rigid(points: SurfacePointSet, T: RigidTransform) -> SurfacePointSet:
    return SurfacePointSet(T.apply(points.points), points.normals @ T.rotation.T, points.source)


# --------------------------------------------------------------------------
# primitive meshes
# --------------------------------------------------------------------------


def box_mesh(extents, center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Axis-aligned box with split vertices per face, so normals stay flat."""
    ext = np.asarray(extents, dtype=np.float64) / 2.0
    c = np.asarray(center, dtype=np.float64)
    verts, faces, normals = [], [], []
    for axis in range(3):
        for sign in (1.0, -1.0):
            n = np.zeros(3)
            n[axis] = sign
            u = np.zeros(3)
            u[(axis + 1) % 3] = 1.0
            v = np.cross(n, u)
            base = len(verts)
            for du, dv in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
                verts.append(c + ext * (n + du * u + dv * v))
                normals.append(n)
            faces += [[base, base + 1, base + 2], [base, base + 2, base + 3]]
    return TriMesh(np.array(verts), np.array(faces), np.array(normals))


def icosphere(subdivisions: int = 3, radius: float = 1.0) -> TriMesh:
    t = (1.0 + 5 ** 0.5) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0), (0, -1, t), (0, 1, t),
             (0, -1, -t), (0, 1, -t), (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11), (1, 5, 9), (5, 11, 4),
             (11, 10, 2), (10, 7, 6), (7, 1, 8), (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8),
             (3, 8, 9), (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) / np.linalg.norm(v) for v in verts]
    for _ in range(subdivisions):
        cache: dict = {}

        def mid(a, b):
            key = (min(a, b), max(a, b))
            if key not in cache:
                m = verts[a] + verts[b]
                verts.append(m / np.linalg.norm(m))
                cache[key] = len(verts) - 1
            return cache[key]

        new = []
        for a, b, c in faces:
            ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
            new += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new
    V = np.array(verts) * radius
    return TriMesh(V, np.array(faces), V / radius)


def cylinder_mesh(radius: float, height: float, segments: int = 32,
                  center=(0.0, 0.0, 0.0)) -> TriMesh:
    """Closed z-aligned cylinder; cap vertices are split from the side so caps stay flat."""
    c = np.asarray(center, dtype=np.float64)
    phi = 2.0 * np.pi * np.arange(segments) / segments
    ring = np.column_stack([radius * np.cos(phi), radius * np.sin(phi), np.zeros(segments)])
    side_n = np.column_stack([np.cos(phi), np.sin(phi), np.zeros(segments)])
    h = height / 2.0
    lo, hi = ring + [0, 0, -h], ring + [0, 0, h]
    verts = [lo, hi, lo, hi, [[0, 0, -h], [0, 0, h]]]
    normals = [side_n, side_n, np.tile([0, 0, -1.0], (segments, 1)),
               np.tile([0, 0, 1.0], (segments, 1)), [[0, 0, -1.0], [0, 0, 1.0]]]
    faces = []
    S = segments
    for k in range(S):
        kn = (k + 1) % S
        faces += [(k, kn, S + kn), (k, S + kn, S + k)]
        faces.append((4 * S, 2 * S + kn, 2 * S + k))
        faces.append((4 * S + 1, 3 * S + k, 3 * S + kn))
    return TriMesh(np.vstack(verts) + c, np.array(faces), np.vstack(normals))


def merge_meshes(meshes: Sequence[TriMesh]) -> TriMesh:
    verts, faces, normals, offset = [], [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        normals.append(m.normals)
        offset += len(m.vertices)
    if not verts:
        return TriMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)))
    return TriMesh(np.vstack(verts), np.vstack(faces), np.vstack(normals))


def winding_number(mesh: TriMesh, points: Array, chunk: int = 4096) -> Array:
    """Generalized winding number via the Van Oosterom-Strackee solid angle."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.triangles
    out = np.empty(len(points))
    for s in range(0, len(points), chunk):
        q = points[s:s + chunk, None, None, :]
        d = tri[None] - q  # (P, F, 3, 3)
        a, b, c = d[..., 0, :], d[..., 1, :], d[..., 2, :]
        la, lb, lc = (np.linalg.norm(x, axis=-1) for x in (a, b, c))
        det = np.einsum("pfi,pfi->pf", a, np.cross(b, c))
        den = (la * lb * lc + np.einsum("pfi,pfi->pf", a, b) * lc
               + np.einsum("pfi,pfi->pf", b, c) * la + np.einsum("pfi,pfi->pf", c, a) * lb)
        out[s:s + chunk] = np.arctan2(det, den).sum(axis=1) / (2.0 * np.pi)
    return out


# --------------------------------------------------------------------------
# mesh IO
# --------------------------------------------------------------------------

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def load_mesh(path) -> TriMesh:
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == ".obj":
        mesh = _load_obj(path)
    elif suffix == ".ply":
        mesh = _load_ply(path)
    else:
        raise MeshError(f"unsupported mesh format: {path.suffix}")
    if len(mesh.vertices) == 0 or len(mesh.faces) == 0:
        raise MeshError(f"empty mesh: {path}")
    return mesh


def _obj_index(token: str, n: int, lineno: int) -> int:
    try:
        idx = int(token)
    except ValueError:
        raise MeshParseError(f"bad index {token!r}", f"line {lineno}") from None
    return idx - 1 if idx > 0 else n + idx


def _load_obj(path: Path) -> TriMesh:
    verts, vns, faces = [], [], []
    vnorm: dict = {}
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            try:
                if tag == "v":
                    verts.append([float(x) for x in parts[1:4]])
                    if len(verts[-1]) != 3:
                        raise ValueError
                elif tag == "vn":
                    vns.append([float(x) for x in parts[1:4]])
                elif tag == "f":
                    ids = []
                    for tok in parts[1:]:
                        sub = tok.split("/")
                        vi = _obj_index(sub[0], len(verts), lineno)
                        ids.append(vi)
                        if len(sub) == 3 and sub[2]:
                            vnorm[vi] = _obj_index(sub[2], len(vns), lineno)
                    if len(ids) < 3:
                        raise MeshParseError("face with fewer than 3 vertices", f"line {lineno}")
                    for k in range(1, len(ids) - 1):
                        faces.append((ids[0], ids[k], ids[k + 1]))
            except MeshParseError:
                raise
            except (ValueError, IndexError):
                raise MeshParseError(f"cannot parse {tag!r} record", f"line {lineno}") from None
    V = np.array(verts, dtype=np.float64).reshape(-1, 3)
    F = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(F) and (F.min() < 0 or F.max() >= len(V)):
        raise MeshError(f"face index {int(F.max()) + 1} out of range for {len(V)} vertices")
    normals = None
    if vns and len(vnorm) == len(V) and all(0 <= k < len(vns) for k in vnorm.values()):
        N = np.array([vns[vnorm[i]] for i in range(len(V))], dtype=np.float64)
        norm = np.linalg.norm(N, axis=1)
        if np.all(norm > 0):
            normals = N / norm[:, None]
    return TriMesh(V, F, normals)


def _load_ply(path: Path) -> TriMesh:
    data = path.read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise MeshParseError("missing ply header", "byte 0")
    nl = data.find(b"\n", end)
    body_start = nl + 1
    header = data[:end].decode("ascii", errors="replace").splitlines()
    fmt = None
    elements: list = []
    for lineno, line in enumerate(header, start=1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise MeshParseError("property before element", f"line {lineno}")
            if parts[1] == "list":
                elements[-1]["props"].append((parts[4], "list", parts[2], parts[3]))
            else:
                if parts[1] not in _PLY_TYPES:
                    raise MeshParseError(f"unknown type {parts[1]}", f"line {lineno}")
                elements[-1]["props"].append((parts[2], parts[1], None, None))
    if fmt not in ("ascii", "binary_little_endian"):
        raise MeshParseError(f"unsupported ply format {fmt}", "header")

    vertex = face = None
    if fmt == "ascii":
        tokens = data[body_start:].decode("ascii", errors="replace").split()
        pos = 0
        for el in elements:
            rows = []
            for _ in range(el["count"]):
                row = {}
                for name, kind, ctype, itype in el["props"]:
                    try:
                        if kind == "list":
                            n = int(float(tokens[pos]))
                            row[name] = [int(float(t)) for t in tokens[pos + 1:pos + 1 + n]]
                            if len(row[name]) != n:
                                raise IndexError
                            pos += 1 + n
                        else:
                            row[name] = float(tokens[pos])
                            pos += 1
                    except (IndexError, ValueError):
                        raise MeshParseError(f"truncated {el['name']} data", f"token {pos}") from None
                rows.append(row)
            if el["name"] == "vertex":
                vertex = rows
            elif el["name"] == "face":
                face = rows
        V = np.array([[r["x"], r["y"], r["z"]] for r in vertex or []], dtype=np.float64)
        N = None
        if vertex and "nx" in vertex[0]:
            N = np.array([[r["nx"], r["ny"], r["nz"]] for r in vertex], dtype=np.float64)
        key = _face_key(face[0]) if face else None
        polys = [r[key] for r in face] if face else []
    else:
        pos = body_start
        V = N = None
        polys = []
        for el in elements:
            if all(kind != "list" for _, kind, _, _ in el["props"]):
                dt = np.dtype([(name, "<" + _PLY_TYPES[kind]) for name, kind, _, _ in el["props"]])
                nbytes = dt.itemsize * el["count"]
                if pos + nbytes > len(data):
                    raise MeshParseError(f"truncated {el['name']} block", f"byte {pos}")
                arr = np.frombuffer(data, dtype=dt, count=el["count"], offset=pos)
                pos += nbytes
                if el["name"] == "vertex":
                    V = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
                    if "nx" in arr.dtype.names:
                        N = np.stack([arr["nx"], arr["ny"], arr["nz"]], axis=1).astype(np.float64)
            else:
                for _ in range(el["count"]):
                    row = {}
                    for name, kind, ctype, itype in el["props"]:
                        try:
                            if kind == "list":
                                cdt = np.dtype("<" + _PLY_TYPES[ctype])
                                n = int(np.frombuffer(data, cdt, 1, pos)[0])
                                pos += cdt.itemsize
                                idt = np.dtype("<" + _PLY_TYPES[itype])
                                row[name] = np.frombuffer(data, idt, n, pos).astype(np.int64).tolist()
                                pos += idt.itemsize * n
                            else:
                                sdt = np.dtype("<" + _PLY_TYPES[kind])
                                row[name] = np.frombuffer(data, sdt, 1, pos)[0]
                                pos += sdt.itemsize
                        except ValueError:
                            raise MeshParseError(f"truncated {el['name']} data", f"byte {pos}") from None
                    if el["name"] == "face":
                        polys.append(row[_face_key(row)])
        if V is None:
            V = np.zeros((0, 3))
    faces = []
    for poly in polys:
        for k in range(1, len(poly) - 1):
            faces.append((poly[0], poly[k], poly[k + 1]))
    F = np.array(faces, dtype=np.int64).reshape(-1, 3)
    if len(F) and (F.min() < 0 or F.max() >= len(V)):
        raise MeshError(f"face index {int(F.max())} out of range for {len(V)} vertices")
    if N is not None:
        norm = np.linalg.norm(N, axis=1)
        N = N / norm[:, None] if np.all(norm > 0) else None
    return TriMesh(V, F, N)


def _face_key(row: dict) -> str:
    for key in ("vertex_indices", "vertex_index"):
        if key in row:
            return key
    raise MeshParseError("face element without vertex_indices", "header")


def save_ply(path, vertices, faces=None, normals=None, colors=None, scalars=None,
             binary: bool = False) -> None:
    """Write a PLY file. `scalars` adds a float property named ``value``."""
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    cols = [vertices]
    if normals is not None:
        fields += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
        cols.append(np.asarray(normals, dtype=np.float64).reshape(-1, 3))
    if colors is not None:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
        cols.append(np.asarray(colors).reshape(-1, 3))
    if scalars is not None:
        fields += [("value", "<f4")]
        cols.append(np.asarray(scalars, dtype=np.float64).reshape(-1, 1))
    faces = np.zeros((0, 3), dtype=np.int64) if faces is None else np.asarray(faces).reshape(-1, 3)
    names = {"<f4": "float", "u1": "uchar"}
    lines = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
             f"element vertex {len(vertices)}"]
    lines += [f"property {names[t]} {n}" for n, t in fields]
    lines += [f"element face {len(faces)}", "property list uchar int vertex_indices", "end_header"]
    header = ("\n".join(lines) + "\n").encode("ascii")
    table = np.hstack(cols) if cols else np.zeros((0, 0))
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            rec = np.zeros(len(vertices), dtype=np.dtype(fields))
            k = 0
            for name, _ in fields:
                rec[name] = table[:, k]
                k += 1
            fh.write(rec.tobytes())
            frec = np.zeros(len(faces), dtype=[("n", "u1"), ("i", "<i4", (3,))])
            frec["n"] = 3
            frec["i"] = faces
            fh.write(frec.tobytes())
        else:
            out = []
            for row in table:
                vals = []
                for (name, t), v in zip(fields, row):
                    vals.append(str(int(v)) if t == "u1" else repr(float(np.float32(v))))
                out.append(" ".join(vals))
            out += [f"3 {a} {b} {c}" for a, b, c in faces]
            fh.write(("\n".join(out) + ("\n" if out else "")).encode("ascii"))


def save_obj(path, mesh: TriMesh) -> None:
    with open(path, "w", encoding="ascii") as fh:
        for v in mesh.vertices:
            fh.write("v " + " ".join(repr(float(c)) for c in v) + "\n")
        for f in mesh.faces + 1:
            fh.write(f"f {f[0]} {f[1]} {f[2]}\n")


# --------------------------------------------------------------------------
# PGM masks
# --------------------------------------------------------------------------


def write_pgm(path, mask: Mask) -> None:
    header = f"P5\n{mask.width} {mask.height}\n255\n".encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header + (mask.bits.astype(np.uint8) * 255).tobytes())


def read_pgm(path) -> Mask:
    data = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and chr(data[pos]).isspace():
            pos += 1
        if pos < len(data) and data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not chr(data[pos]).isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    if tokens[0] != "P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError(f"{path}: 16-bit PGM not supported")
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    return Mask(w, h, pix.reshape(h, w) == 255)


# --------------------------------------------------------------------------
# Poisson-disk sampling by sample elimination
# --------------------------------------------------------------------------


def _stratified_surface_points(mesh: TriMesh, count: int, rng: np.random.Generator):
    areas = mesh.face_areas()
    cum = np.cumsum(areas)
    # systematic sampling over the cumulative area: one stratum per sample
    u = (np.arange(count) + rng.random()) / count * cum[-1]
    face = np.minimum(np.searchsorted(cum, u, side="right"), len(areas) - 1)
    r = rng.random((count, 2))
    flip = r.sum(axis=1) > 1.0
    r[flip] = 1.0 - r[flip]
    bary = np.column_stack([1.0 - r[:, 0] - r[:, 1], r[:, 0], r[:, 1]])
    tri = mesh.vertices[mesh.faces[face]]
    pts = np.einsum("nk,nki->ni", bary, tri)
    nrm = np.einsum("nk,nki->ni", bary, mesh.normals[mesh.faces[face]])
    nn = np.linalg.norm(nrm, axis=1)
    bad = nn < 1e-12
    if np.any(bad):
        fn = np.cross(tri[bad, 1] - tri[bad, 0], tri[bad, 2] - tri[bad, 0])
        nrm[bad] = fn
        nn[bad] = np.linalg.norm(fn, axis=1)
    return pts, nrm / nn[:, None], face


def eliminate_samples(points: Array, count: int, area: float) -> Array:
    """Weighted sample elimination down to `count` points; returns kept indices.

    Points are removed greedily by largest crowding weight
    sum_j (1 - d_ij / 2r)^8, with r the maximal packing radius of a surface.
    """
    n = len(points)
    if count >= n:
        return np.arange(n)
    r_max = math.sqrt(area / (2.0 * math.sqrt(3.0) * count))
    rad = 2.0 * r_max
    tree = cKDTree(points)
    pairs = tree.query_pairs(rad, output_type="ndarray")
    d = np.linalg.norm(points[pairs[:, 0]] - points[pairs[:, 1]], axis=1)
    w = (1.0 - d / rad) ** 8
    weight = np.zeros(n)
    np.add.at(weight, pairs[:, 0], w)
    np.add.at(weight, pairs[:, 1], w)
    # adjacency in CSR form
    src = np.concatenate([pairs[:, 0], pairs[:, 1]])
    dst = np.concatenate([pairs[:, 1], pairs[:, 0]])
    ww = np.concatenate([w, w])
    order = np.argsort(src, kind="stable")
    src, dst, ww = src[order], dst[order], ww[order]
    start = np.searchsorted(src, np.arange(n + 1))
    alive = np.ones(n, dtype=bool)
    heap = [(-weight[i], i) for i in range(n)]
    heapq.heapify(heap)
    remaining = n
    while remaining > count:
        negw, i = heapq.heappop(heap)
        if not alive[i] or -negw != weight[i]:
            continue
        alive[i] = False
        remaining -= 1
        for k in range(start[i], start[i + 1]):
            j = dst[k]
            if alive[j]:
                weight[j] -= ww[k]
                heapq.heappush(heap, (-weight[j], j))
    return np.flatnonzero(alive)


def poisson_disk_sample(mesh: TriMesh, count: int, seed: int = 0,
                        oversample: int = 5, source: str = "mesh") -> SurfacePointSet:
    if count < 1:
        raise ValueError("count must be >= 1")
    area = mesh.area
    if not area > 0:
        raise MeshError("degenerate mesh: zero surface area")
    rng = np.random.default_rng(seed)
    pts, nrm, _ = _stratified_surface_points(mesh, count * oversample, rng)
    keep = eliminate_samples(pts, count, area)
    pts, nrm = pts[keep], nrm[keep]
    if count > 1:
        r_ideal = math.sqrt(area / (count * math.pi))
        dmin = cKDTree(pts).query(pts, k=2)[0][:, 1].min()
        if dmin < 0.7 * r_ideal:
            warnings.warn(f"poisson_disk_sample: relaxed spacing {dmin:.4g} < 0.7 * {r_ideal:.4g}",
                          RuntimeWarning, stacklevel=2)
    return SurfacePointSet(pts, nrm, source)


# --------------------------------------------------------------------------
# silhouette rasterization
# --------------------------------------------------------------------------


def depth_buffer(mesh: TriMesh, camera: "WeakPerspectiveCamera", width: int, height: int,
                 max_candidates: int = 4_000_000) -> Array:
    """Per-pixel minimum forward depth (inf where uncovered), pixel-center coverage."""
    zbuf = np.full(width * height, np.inf)
    if len(mesh.faces) == 0:
        return zbuf.reshape(height, width)
    uv = camera.project(mesh.vertices)
    depth = mesh.vertices @ camera.forward
    tri_uv = uv[mesh.faces]
    tri_z = depth[mesh.faces]
    lo = tri_uv.min(axis=1)
    hi = tri_uv.max(axis=1)
    c0 = np.clip(np.ceil(lo[:, 0] - 0.5), 0, width).astype(np.int64)
    c1 = np.clip(np.floor(hi[:, 0] - 0.5), -1, width - 1).astype(np.int64)
    r0 = np.clip(np.ceil(lo[:, 1] - 0.5), 0, height).astype(np.int64)
    r1 = np.clip(np.floor(hi[:, 1] - 0.5), -1, height - 1).astype(np.int64)
    nx = np.maximum(c1 - c0 + 1, 0)
    ny = np.maximum(r1 - r0 + 1, 0)
    counts = nx * ny
    a, b, c = tri_uv[:, 0], tri_uv[:, 1], tri_uv[:, 2]
    area2 = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    live = np.flatnonzero((counts > 0) & (np.abs(area2) > 1e-12))
    start = 0
    while start < len(live):
        csum = np.cumsum(counts[live[start:]])
        stop = start + max(1, int(np.searchsorted(csum, max_candidates, side="right")))
        idx = live[start:stop]
        start = stop
        cnt = counts[idx]
        tri = np.repeat(idx, cnt)
        offs = np.repeat(np.cumsum(cnt) - cnt, cnt)
        k = np.arange(cnt.sum()) - offs
        col = c0[tri] + k % nx[tri]
        row = r0[tri] + k // nx[tri]
        px = col + 0.5
        py = row + 0.5
        A, B, C = a[tri], b[tri], c[tri]
        w0 = (B[:, 0] - px) * (C[:, 1] - py) - (B[:, 1] - py) * (C[:, 0] - px)
        w1 = (C[:, 0] - px) * (A[:, 1] - py) - (C[:, 1] - py) * (A[:, 0] - px)
        w2 = (A[:, 0] - px) * (B[:, 1] - py) - (A[:, 1] - py) * (B[:, 0] - px)
        s = np.sign(area2[tri])
        inside = (w0 * s >= 0) & (w1 * s >= 0) & (w2 * s >= 0)
        if not np.any(inside):
            continue
        tz = tri_z[tri[inside]]
        ar = area2[tri[inside]]
        z = (w0[inside] * tz[:, 0] + w1[inside] * tz[:, 1] + w2[inside] * tz[:, 2]) / ar
        np.minimum.at(zbuf, row[inside] * width + col[inside], z)
    return zbuf.reshape(height, width)


def rasterize_silhouette(mesh: TriMesh, camera: "WeakPerspectiveCamera", resolution,
                         occluders: Optional[Sequence[TriMesh]] = None) -> Mask:
    width, height = int(resolution[0]), int(resolution[1])
    zb = depth_buffer(mesh, camera, width, height)
    bits = np.isfinite(zb)
    for occ in occluders or ():
        zo = depth_buffer(occ, camera, width, height)
        bits &= ~(zo < zb)
    return Mask(width, height, bits)
