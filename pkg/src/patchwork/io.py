"""Mesh and point-cloud ingestion, checkpoints, and run-directory plumbing.

Checkpoints are canonical JSON: keys sorted, no whitespace, floats in
shortest round-trip form, an explicit version, and a sha256 checksum of
the payload.  Saving a loaded checkpoint reproduces the file byte for
byte, which is what makes seeded reruns comparable with `cmp`.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import time
from dataclasses import dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .errors import (
    CorruptCheckpoint,
    DegenerateBBox,
    EmptyInput,
    ParseError,
    UnsupportedFormat,
    VersionMismatch,
)
from .extract import ExtractedComplex, Mesh
from .field import PatchworkModel
from .init import OrientedSampleSet

CHECKPOINT_VERSION = 1
RUN_ROOT_ENV = "PATCHWORK_RUN_ROOT"

try:
    from importlib.metadata import version as _pkg_version
    TOOL_VERSION = _pkg_version("patchwork")
except Exception:  # pragma: no cover - source tree without install
    TOOL_VERSION = "0.0.0"


# ---------------------------------------------------------------------------
# mesh loading


def _parse_obj(path: Path):
    verts = []
    faces = []
    with open(path, "r", errors="replace") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            tag, _, rest = line.partition(" ")
            if tag == "v":
                parts = rest.split()
                if len(parts) < 3:
                    raise ParseError(f"{path}:{ln}: vertex needs 3 coordinates")
                try:
                    verts.append([float(parts[0]), float(parts[1]), float(parts[2])])
                except ValueError:
                    raise ParseError(f"{path}:{ln}: bad vertex coordinate") from None
            elif tag == "f":
                idx = []
                for tok in rest.split():
                    head = tok.split("/", 1)[0]
                    try:
                        i = int(head)
                    except ValueError:
                        raise ParseError(f"{path}:{ln}: bad face index {tok!r}") from None
                    if i == 0:
                        raise ParseError(f"{path}:{ln}: OBJ indices are 1-based")
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ParseError(f"{path}:{ln}: face needs at least 3 vertices")
                faces.append(idx)
            # all other tags (vn, vt, usemtl, o, g, s, mtllib) are ignored
    return np.array(verts, dtype=np.float64).reshape(-1, 3), faces


_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def _parse_ply(path: Path):
    """Returns (vertex structured array, list of face index lists)."""
    data = path.read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise ParseError(f"{path}: not a PLY file (missing header)")
    body_start = data.find(b"\n", end) + 1
    header = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements = []  # (name, count, [(prop_name, dtype) or ("list", count_t, item_t, name)])
    for ln, line in enumerate(header, start=1):
        parts = line.split()
        if not parts or parts[0] in ("ply", "comment", "obj_info"):
            continue
        if parts[0] == "format":
            if len(parts) < 2 or parts[1] not in ("ascii", "binary_little_endian"):
                raise ParseError(f"{path}:{ln}: unsupported PLY format {line!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            if len(parts) != 3:
                raise ParseError(f"{path}:{ln}: malformed element line")
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise ParseError(f"{path}:{ln}: property before any element")
            if parts[1] == "list":
                if len(parts) != 5:
                    raise ParseError(f"{path}:{ln}: malformed list property")
                elements[-1][2].append(("list", parts[2], parts[3], parts[4]))
            else:
                if len(parts) != 3 or parts[1] not in _PLY_TYPES:
                    raise ParseError(f"{path}:{ln}: unsupported property {line!r}")
                elements[-1][2].append((parts[2], parts[1]))
    if fmt is None:
        raise ParseError(f"{path}: PLY header has no format line")

    vertex_data = None
    faces = []
    if fmt == "ascii":
        tokens = data[body_start:].split()
        pos = 0
        for name, count, props in elements:
            if any(p[0] == "list" for p in props):
                if len(props) != 1:
                    raise ParseError(f"{path}: mixed list/scalar element {name!r}")
                rows = []
                for _ in range(count):
                    if pos >= len(tokens):
                        raise ParseError(f"{path}: truncated {name} data")
                    k = int(tokens[pos]); pos += 1
                    rows.append([int(t) for t in tokens[pos:pos + k]])
                    pos += k
                if name == "face":
                    faces = rows
            else:
                width = len(props)
                vals = tokens[pos:pos + count * width]
                if len(vals) < count * width:
                    raise ParseError(f"{path}: truncated {name} data")
                pos += count * width
                arr = np.array(vals, dtype=np.float64).reshape(count, width)
                if name == "vertex":
                    vertex_data = (arr, [p[0] for p in props])
    else:
        off = body_start
        for name, count, props in elements:
            if any(p[0] == "list" for p in props):
                if len(props) != 1:
                    raise ParseError(f"{path}: mixed list/scalar element {name!r}")
                _, count_t, item_t, _ = props[0]
                cdt = np.dtype("<" + _PLY_TYPES[count_t])
                idt = np.dtype("<" + _PLY_TYPES[item_t])
                rows = []
                for _ in range(count):
                    if off + cdt.itemsize > len(data):
                        raise ParseError(f"{path}: truncated at byte {off}")
                    k = int(np.frombuffer(data, cdt, 1, off)[0]); off += cdt.itemsize
                    need = k * idt.itemsize
                    if off + need > len(data):
                        raise ParseError(f"{path}: truncated at byte {off}")
                    rows.append(np.frombuffer(data, idt, k, off).astype(np.int64).tolist())
                    off += need
                if name == "face":
                    faces = rows
            else:
                dt = np.dtype([(p[0], "<" + _PLY_TYPES[p[1]]) for p in props])
                need = count * dt.itemsize
                if off + need > len(data):
                    raise ParseError(f"{path}: truncated at byte {off}")
                rec = np.frombuffer(data, dt, count, off)
                off += need
                if name == "vertex":
                    arr = np.column_stack([rec[p[0]].astype(np.float64) for p in props])
                    vertex_data = (arr, [p[0] for p in props])
    if vertex_data is None:
        raise ParseError(f"{path}: PLY file has no vertex element")
    return vertex_data, faces


def _triangulate(faces, n_verts, path):
    tris = []
    dropped = 0
    for f in faces:
        for i in f:
            if not 0 <= i < n_verts:
                raise ParseError(f"{path}: face index {i} out of range")
        if len(set(f)) < 3:
            dropped += 1
            continue
        for k in range(1, len(f) - 1):
            t = (f[0], f[k], f[k + 1])
            if len(set(t)) < 3:
                dropped += 1
                continue
            tris.append(t)
    return tris, dropped


def load_mesh(path) -> tuple[Mesh, int]:
    """Load an OBJ or PLY mesh.

    Polygon faces are fan-triangulated; faces with repeated indices are
    dropped.  Returns (mesh, dropped_face_count).
    """
    path = Path(path)
    ext = path.suffix.lower()
    if ext == ".obj":
        verts, faces = _parse_obj(path)
    elif ext == ".ply":
        (verts_all, names), faces = _parse_ply(path)
        cols = {n: k for k, n in enumerate(names)}
        for axis in ("x", "y", "z"):
            if axis not in cols:
                raise ParseError(f"{path}: vertex element lacks {axis!r}")
        verts = verts_all[:, [cols["x"], cols["y"], cols["z"]]]
    else:
        raise UnsupportedFormat(f"cannot read {ext!r} (OBJ and PLY supported)")
    if not faces:
        raise ParseError(f"{path}: no faces; point clouds load via load_point_cloud")
    tris, dropped = _triangulate(faces, len(verts), path)
    mesh = Mesh(vertices=verts,
                triangles=np.array(tris, dtype=np.int64).reshape(-1, 3))
    return mesh, dropped


def load_point_cloud(path) -> OrientedSampleSet:
    """PLY point cloud with nx,ny,nz properties as an oriented sample set."""
    path = Path(path)
    if path.suffix.lower() != ".ply":
        raise UnsupportedFormat("point clouds are read from PLY files")
    (verts_all, names), _faces = _parse_ply(path)
    cols = {n: k for k, n in enumerate(names)}
    missing = [k for k in ("x", "y", "z", "nx", "ny", "nz") if k not in cols]
    if missing:
        raise ParseError(f"{path}: point cloud lacks properties {missing}")
    pts = verts_all[:, [cols["x"], cols["y"], cols["z"]]]
    nrm = verts_all[:, [cols["nx"], cols["ny"], cols["nz"]]]
    return OrientedSampleSet(points=pts, normals=nrm, source=str(path))


# ---------------------------------------------------------------------------
# normalization


@dataclass
class BoxTransform:
    """x_normalized = scale * (x - center); invertible."""

    center: np.ndarray
    scale: float

    def apply(self, points):
        return (np.asarray(points, dtype=np.float64) - self.center) * self.scale

    def invert(self, points):
        return np.asarray(points, dtype=np.float64) / self.scale + self.center


def normalize_to_box(mesh: Mesh) -> tuple[Mesh, BoxTransform]:
    """Center the mesh and scale its longest axis to exactly [-1, 1]."""
    v = mesh.vertices
    if not len(v):
        raise EmptyInput("cannot normalize an empty mesh")
    lo = v.min(axis=0)
    hi = v.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise DegenerateBBox("mesh has zero extent along every axis")
    tf = BoxTransform(center=(lo + hi) / 2.0, scale=2.0 / extent)
    return Mesh(vertices=tf.apply(v), triangles=mesh.triangles.copy()), tf


# ---------------------------------------------------------------------------
# checkpoints


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"),
                      allow_nan=False)


def _model_payload(model: PatchworkModel) -> dict:
    payload = {
        "dim": model.dim,
        "beta_plus": model.beta_plus,
        "beta_minus": model.beta_minus,
        "weightnorm": model.weightnorm,
        "a": model.a.tolist(),
        "c": model.c.tolist(),
        "log_s": model.log_s.tolist(),
        "group": model.group.astype(int).tolist(),
        "active": model.active.astype(bool).tolist(),
    }
    if model.weightnorm:
        payload["wn_g"] = model.wn_g.tolist()
        payload["wn_v"] = model.wn_v.tolist()
    return payload


def save_checkpoint(model: PatchworkModel, path) -> Path:
    model.validate()
    payload = _model_payload(model)
    digest = hashlib.sha256(_canonical(payload).encode()).hexdigest()
    doc = {"format": "patchwork-checkpoint",
           "version": CHECKPOINT_VERSION,
           "model": payload,
           "checksum": digest}
    path = Path(path)
    path.write_text(_canonical(doc) + "\n")
    return path


def load_checkpoint(path) -> PatchworkModel:
    path = Path(path)
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise
    except OSError as exc:
        raise CorruptCheckpoint(f"{path}: unreadable checkpoint ({exc})") from None
    try:
        doc = json.loads(text)
    except ValueError as exc:
        raise CorruptCheckpoint(f"{path}: unreadable checkpoint ({exc})") from None
    if not isinstance(doc, dict) or doc.get("format") != "patchwork-checkpoint":
        raise CorruptCheckpoint(f"{path}: not a patchwork checkpoint")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"{path}: checkpoint version {doc.get('version')!r}, "
            f"this build reads version {CHECKPOINT_VERSION}")
    payload = doc.get("model")
    if not isinstance(payload, dict):
        raise CorruptCheckpoint(f"{path}: missing model payload")
    digest = hashlib.sha256(_canonical(payload).encode()).hexdigest()
    if digest != doc.get("checksum"):
        raise CorruptCheckpoint(f"{path}: checksum mismatch")
    try:
        model = PatchworkModel(
            dim=payload["dim"],
            a=np.array(payload["a"], dtype=np.float64),
            c=np.array(payload["c"], dtype=np.float64),
            log_s=np.array(payload["log_s"], dtype=np.float64),
            group=np.array(payload["group"], dtype=np.int8),
            active=np.array(payload["active"], dtype=bool),
            beta_plus=payload["beta_plus"],
            beta_minus=payload["beta_minus"],
            weightnorm=payload["weightnorm"],
            wn_g=None if not payload["weightnorm"] else np.array(payload["wn_g"]),
            wn_v=None if not payload["weightnorm"] else np.array(payload["wn_v"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpoint(f"{path}: malformed model payload ({exc})") from None
    model.validate()
    return model


# ---------------------------------------------------------------------------
# run directories, manifests, reports


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = dataclass_field(default_factory=dict)   # path -> sha256
    seeds: dict = dataclass_field(default_factory=dict)
    outputs: list = dataclass_field(default_factory=list)
    tool_version: str = TOOL_VERSION
    created: str = ""

    def save(self, path) -> Path:
        doc = {"command": self.command, "config": self.config,
               "inputs": self.inputs, "seeds": self.seeds,
               "outputs": self.outputs, "tool_version": self.tool_version,
               "created": self.created or time.strftime("%Y-%m-%dT%H:%M:%S")}
        path = Path(path)
        path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
        return path

    @classmethod
    def load(cls, path) -> "RunManifest":
        doc = json.loads(Path(path).read_text())
        return cls(command=doc["command"], config=doc["config"],
                   inputs=doc.get("inputs", {}), seeds=doc.get("seeds", {}),
                   outputs=doc.get("outputs", []),
                   tool_version=doc.get("tool_version", "unknown"),
                   created=doc.get("created", ""))


def run_root() -> Path:
    return Path(os.environ.get(RUN_ROOT_ENV, "runs"))


def resolve_run_dir(name: str) -> Path:
    p = Path(name)
    if not p.is_absolute():
        p = run_root() / p
    p.mkdir(parents=True, exist_ok=True)
    return p


class run_lock:
    """Exclusive lockfile per run directory; writers hold it while emitting."""

    def __init__(self, run_dir):
        self.path = Path(run_dir) / ".lock"
        self.fd = None

    def __enter__(self):
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(f"run directory is locked: {self.path}") from None
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)
        return False


def write_report_csv(report, path) -> Path:
    """FitReport rows as CSV; no timestamps, so reruns compare bytewise."""
    lines = ["iteration,loss_sur,loss_normal,loss_reg,loss_prune,loss_total,active_terms"]
    for it, sur, nrm, reg, prn, tot, act in report.rows():
        lines.append(f"{it},{float(sur)!r},{float(nrm)!r},{float(reg)!r},"
                     f"{float(prn)!r},{float(tot)!r},{act}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def write_metrics_csv(report, path) -> Path:
    path = Path(path)
    ch, hd, fs = report.row()
    lines = ["chamfer_x1e3,hausdorff_x1e2,fscore,samples,seed,cutoff",
             f"{ch!r},{hd!r},{fs!r},{report.sample_count},{report.seed},{report.cutoff!r}"]
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# geometry writers


def write_obj(path, vertices, faces) -> Path:
    """Faces may be triangles or arbitrary index loops (0-based)."""
    out = []
    for v in np.asarray(vertices, dtype=np.float64):
        coords = " ".join(repr(float(x)) for x in v)
        out.append(f"v {coords}")
    for f in faces:
        out.append("f " + " ".join(str(int(i) + 1) for i in f))
    path = Path(path)
    path.write_text("\n".join(out) + "\n")
    return path


def write_mesh_obj(path, mesh: Mesh) -> Path:
    return write_obj(path, mesh.vertices, mesh.triangles)


def write_complex_obj(path, complex_: ExtractedComplex,
                      *, active_only: bool = True) -> tuple[Path, Path]:
    """Extracted facets as OBJ polygons plus a JSON sidecar of labels."""
    if complex_.dim != 3:
        raise UnsupportedFormat("OBJ export needs a 3D complex; 2D goes to SVG")
    keep = [k for k in range(len(complex_.cells))
            if not (active_only and complex_.is_boundary[k])]
    path = Path(path)
    write_obj(path, complex_.vertices, [complex_.cells[k] for k in keep])
    side = path.with_suffix(".labels.json")
    doc = {
        "faces": [{"minus_term": int(complex_.cell_labels[k][0]),
                   "plus_term": int(complex_.cell_labels[k][1]),
                   "boundary": bool(complex_.is_boundary[k])} for k in keep],
    }
    side.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")
    return path, side


def write_svg(path, complex_: ExtractedComplex, *, fills=None,
              size: int = 640, bbox=((-1.5, 1.5), (-1.5, 1.5)),
              active_only: bool = True) -> Path:
    """2D segments (and optional filled cell polygons) as an SVG drawing.

    ``fills`` is an optional list of (polygon (k,2) array, css color).
    """
    if complex_.dim != 2:
        raise UnsupportedFormat("SVG export is for 2D complexes")
    (x0, x1), (y0, y1) = bbox
    sx = size / (x1 - x0)

    def to_px(p):
        # y axis flipped so the drawing is right side up
        return ((p[0] - x0) * sx, (y1 - p[1]) * sx)

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" '
             f'height="{size}" viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    for poly, color in (fills or []):
        pts = " ".join("%.3f,%.3f" % to_px(p) for p in np.asarray(poly))
        parts.append(f'<polygon points="{pts}" fill="{color}" stroke="none"/>')
    for k, loop in enumerate(complex_.cells):
        if active_only and complex_.is_boundary[k]:
            continue
        a = to_px(complex_.vertices[loop[0]])
        b = to_px(complex_.vertices[loop[1]])
        parts.append('<line x1="%.3f" y1="%.3f" x2="%.3f" y2="%.3f" '
                     'stroke="black" stroke-width="1.5"/>' % (a + b))
    parts.append("</svg>")
    path = Path(path)
    path.write_text("\n".join(parts) + "\n")
    return path


# ---------------------------------------------------------------------------
# synthetic reference meshes


def make_cube_mesh(half: float = 1.0) -> Mesh:
    v = np.array([[x, y, z] for x in (-half, half)
                  for y in (-half, half) for z in (-half, half)])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1),
             (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return Mesh(vertices=v.astype(np.float64),
                triangles=np.array(tris, dtype=np.int64))


def make_icosphere(subdivisions: int = 3, radius: float = 1.0) -> Mesh:
    t = (1.0 + np.sqrt(5.0)) / 2.0
    verts = [(-1, t, 0), (1, t, 0), (-1, -t, 0), (1, -t, 0),
             (0, -1, t), (0, 1, t), (0, -1, -t), (0, 1, -t),
             (t, 0, -1), (t, 0, 1), (-t, 0, -1), (-t, 0, 1)]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]
    verts = [np.array(v, dtype=np.float64) for v in verts]
    for _ in range(subdivisions):
        cache = {}
        new_faces = []

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in cache:
                cache[key] = len(verts)
                verts.append((verts[i] + verts[j]) / 2.0)
            return cache[key]

        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces
    V = np.stack(verts)
    V *= radius / np.linalg.norm(V, axis=1, keepdims=True)
    return Mesh(vertices=V, triangles=np.array(faces, dtype=np.int64))


def make_torus_mesh(R: float = 0.6, r: float = 0.3,
                    nu: int = 64, nv: int = 32) -> Mesh:
    iu, iv = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    u = 2 * np.pi * iu / nu
    v = 2 * np.pi * iv / nv
    x = (R + r * np.cos(v)) * np.cos(u)
    y = (R + r * np.cos(v)) * np.sin(u)
    z = r * np.sin(v)
    V = np.column_stack([x.ravel(), y.ravel(), z.ravel()])
    tris = []
    for i in range(nu):
        for j in range(nv):
            a = i * nv + j
            b = ((i + 1) % nu) * nv + j
            c = ((i + 1) % nu) * nv + (j + 1) % nv
            d = i * nv + (j + 1) % nv
            tris += [(a, b, c), (a, c, d)]
    return Mesh(vertices=V, triangles=np.array(tris, dtype=np.int64))
