"""Explicit geometry from patchwork models.

Two extraction paths. The first samples the smooth field on a regular
lattice and runs marching squares (2D) or marching cubes (3D) on the
samples. The second is exact in the tropical limit: every term of the
Minus group owns a candidate polyhedron (the region where it dominates
every other term), found via a Chebyshev-center LP and a dual-transform
halfspace intersection; facets against Plus terms form the zero set.

Conventions used throughout:
  - grid values are stored flat in row-major order with axis order
    x, y[, z]; x is the slowest axis,
  - "inside" means field value < 0,
  - 2D contour segments keep the negative side on their left, so closed
    contours run counterclockwise around negative regions,
  - 3D triangles and facet polygons orient their normals toward the
    positive side of the field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dataclass_field
from enum import Enum

import numpy as np
from scipy.optimize import linprog

from ._hull import convex_hull_2d, convex_hull_3d
from ._mc_tables import EDGE_TABLE, TRI_TABLE
from .errors import (
    DegenerateBBox,
    DimensionMismatch,
    EmptyInput,
    MemoryBudgetExceeded,
    NumericalDegeneracy,
)
from .field import MINUS, PLUS, PatchworkModel, batch_values, eval_tropical_batch

# Grids larger than this (in bytes of float64 samples) are refused up
# front rather than discovered via the OOM killer.
DEFAULT_GRID_BUDGET = 2 * 1024**3

# Candidate cells whose inscribed radius is below this are treated as
# empty (or degenerate, when the radius is zero within tolerance).
CELL_RADIUS_TOL = 1e-7

# Above this many active terms the per-cell halfspace lists are cut down
# via the lifted-hull adjacency before any LP runs.
_PREFILTER_MIN_TERMS = 768

_LP_OPTIONS = {
    "primal_feasibility_tolerance": 1e-10,
    "dual_feasibility_tolerance": 1e-10,
}


# ---------------------------------------------------------------------------
# grids


@dataclass
class ScalarGrid:
    """Field samples on a regular lattice.

    ``values`` is flat, row-major with axis order x, y[, z]: the flat
    index of node (ix, iy) is ix*ny + iy, and of (ix, iy, iz) is
    (ix*ny + iy)*nz + iz.  For a 3x3 grid over [-1, 1]^2 the node at
    coordinate (0, 0) therefore has index 4.
    """

    dim: int
    resolution: tuple
    bbox: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.resolution = tuple(int(r) for r in self.resolution)
        self.bbox = np.asarray(self.bbox, dtype=np.float64).reshape(self.dim, 2)
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if self.dim not in (2, 3) or len(self.resolution) != self.dim:
            raise DimensionMismatch(
                f"grid dim {self.dim} with resolution {self.resolution}"
            )
        if any(r < 2 for r in self.resolution):
            raise EmptyInput("grid needs at least 2 nodes per axis")
        if self.values.size != int(np.prod(self.resolution)):
            raise DimensionMismatch(
                f"{self.values.size} values for resolution {self.resolution}"
            )
        if np.any(self.bbox[:, 1] <= self.bbox[:, 0]):
            raise DegenerateBBox(f"bbox {self.bbox.tolist()}")

    def axes(self):
        """Per-axis node coordinate arrays."""
        return [
            np.linspace(self.bbox[k, 0], self.bbox[k, 1], self.resolution[k])
            for k in range(self.dim)
        ]

    def reshaped(self):
        return self.values.reshape(self.resolution)

    def node_index(self, *idx):
        if len(idx) != self.dim:
            raise DimensionMismatch(f"{len(idx)} indices for dim {self.dim}")
        flat = 0
        for k, i in enumerate(idx):
            flat = flat * self.resolution[k] + int(i) if k else int(i)
        return flat


def _slab_points(axes, i0, i1):
    """Cartesian product of axes[0][i0:i1] with the remaining axes."""
    parts = [axes[0][i0:i1]] + list(axes[1:])
    mesh = np.meshgrid(*parts, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def sample_grid(model, resolution, bbox=None, *, tropical=False,
                memory_budget=DEFAULT_GRID_BUDGET):
    """Evaluate the field (or its tropical limit) on a regular lattice.

    ``resolution`` is an int (applied to every axis) or a per-axis
    tuple.  ``bbox`` defaults to [-1, 1]^d.  Evaluation streams over
    x-slabs, so peak memory is the output array plus a small block.
    """
    d = model.dim
    if isinstance(resolution, (int, np.integer)):
        resolution = (int(resolution),) * d
    resolution = tuple(int(r) for r in resolution)
    if bbox is None:
        bbox = np.array([[-1.0, 1.0]] * d)
    bbox = np.asarray(bbox, dtype=np.float64).reshape(d, 2)

    total = int(np.prod(resolution))
    need = 8 * total
    if memory_budget is not None and need > memory_budget:
        raise MemoryBudgetExceeded(
            f"grid of {total} nodes needs {need} bytes, budget {memory_budget}"
        )

    axes = [np.linspace(bbox[k, 0], bbox[k, 1], resolution[k]) for k in range(d)]
    layer = int(np.prod(resolution[1:], dtype=np.int64)) if d > 1 else 1
    step = max(1, int(2_000_000 // max(1, layer)))

    values = np.empty(total, dtype=np.float64)
    for i0 in range(0, resolution[0], step):
        i1 = min(resolution[0], i0 + step)
        pts = _slab_points(axes, i0, i1)
        if tropical:
            values[i0 * layer:i1 * layer] = eval_tropical_batch(model, pts)
        else:
            values[i0 * layer:i1 * layer] = batch_values(model, pts)
    return ScalarGrid(dim=d, resolution=resolution, bbox=bbox, values=values)


# ---------------------------------------------------------------------------
# extracted geometry containers


@dataclass
class Mesh:
    """Triangle mesh: ``vertices`` (n, 3) float64, ``triangles`` (m, 3) int."""

    vertices: np.ndarray
    triangles: np.ndarray

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)

    def validate(self):
        if not np.all(np.isfinite(self.vertices)):
            raise NumericalDegeneracy("mesh has non-finite vertices")
        if self.triangles.size and (
            self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)
        ):
            raise DimensionMismatch("triangle index out of range")

    def area(self):
        if not len(self.triangles):
            return 0.0
        p = self.vertices[self.triangles]
        cr = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        return float(0.5 * np.linalg.norm(cr, axis=1).sum())


@dataclass
class InteriorCell:
    """Candidate polyhedron of one Minus term.

    ``halfspaces`` holds rows (u | d) for the planes that actually bound
    the cell, meaning <u, x> + d <= 0 inside; bbox clip planes included.
    """

    term: int
    halfspaces: np.ndarray
    center: np.ndarray
    radius: float


@dataclass
class ExtractedComplex:
    """Piecewise-linear extraction output.

    ``cells`` holds index loops into ``vertices``: length-2 segments in
    2D, convex polygon loops (outward orientation) in 3D.  Each facet's
    ``cell_labels`` entry is the (Minus term, Plus term) pair it
    separates; the second label is -1 for bbox clip facets, which are
    also flagged in ``is_boundary``.
    """

    dim: int
    vertices: np.ndarray
    cells: list
    cell_labels: list
    is_boundary: np.ndarray
    interior_cells: list = dataclass_field(default_factory=list)
    diagnostics: dict = dataclass_field(default_factory=dict)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, self.dim)
        self.is_boundary = np.asarray(self.is_boundary, dtype=bool).ravel()

    def active_cells(self):
        """Indices of facets separating a Minus cell from a Plus cell."""
        return [i for i in range(len(self.cells)) if not self.is_boundary[i]]

    def segments_array(self):
        """(m, 2, 2) coordinates of 2D segments."""
        if self.dim != 2:
            raise DimensionMismatch("segments_array is 2D only")
        if not self.cells:
            return np.zeros((0, 2, 2))
        return self.vertices[np.stack([np.asarray(c) for c in self.cells])]

    def total_length(self):
        seg = self.segments_array()
        if not len(seg):
            return 0.0
        return float(np.linalg.norm(seg[:, 1] - seg[:, 0], axis=1).sum())


def euler_characteristic(faces):
    """V - E + F for a polygonal face list (or (m, 3) triangle array).

    Counts only vertices referenced by the faces, so meshes carrying
    orphan vertices are fine.
    """
    faces = [np.asarray(f, dtype=np.int64) for f in faces]
    if not faces:
        return 0
    used = np.unique(np.concatenate([f.ravel() for f in faces]))
    edges = set()
    for f in faces:
        k = len(f)
        for t in range(k):
            a, b = int(f[t]), int(f[(t + 1) % k])
            edges.add((a, b) if a < b else (b, a))
    return int(len(used) - len(edges) + len(faces))


# ---------------------------------------------------------------------------
# marching squares

# Edge symbols of one cell: bottom/right/top/left, encoded as the node
# offset of the owning lattice edge plus its axis.
_B, _R, _T, _L = 0, 1, 2, 3
_MS_EDGE = {
    _B: (0, 0, 0),
    _R: (1, 0, 1),
    _T: (0, 1, 0),
    _L: (0, 0, 1),
}

# Segment lists per corner-sign case (bit i set when corner i is
# negative; corners 0..3 = bottom-left, bottom-right, top-right,
# top-left).  Segments run with the negative side on the left.  The
# saddle cases 5 and 10 are resolved by the cell-center sign below.
_MS_SEGMENTS = {
    1: [(_B, _L)],
    2: [(_R, _B)],
    3: [(_R, _L)],
    4: [(_T, _R)],
    6: [(_T, _B)],
    7: [(_T, _L)],
    8: [(_L, _T)],
    9: [(_B, _T)],
    11: [(_R, _T)],
    12: [(_L, _R)],
    13: [(_B, _R)],
    14: [(_L, _B)],
}
_MS_SADDLE = {
    (5, True): [(_B, _R), (_T, _L)],
    (5, False): [(_B, _L), (_T, _R)],
    (10, True): [(_L, _B), (_R, _T)],
    (10, False): [(_R, _B), (_L, _T)],
}


def marching_squares(grid):
    """Linear-interpolated zero contour of a 2D grid.

    Saddle cells (two negative corners on a diagonal) follow the sign of
    the cell-center average.  Nodes at exactly zero are nudged to
    +1e-12 so every case is unambiguous.  Output segments share vertices
    exactly: each contour vertex is keyed by the lattice edge it sits
    on.
    """
    if grid.dim != 2:
        raise DimensionMismatch("marching_squares needs a 2D grid")
    nx, ny = grid.resolution
    v = grid.reshaped().copy()
    v[v == 0.0] = 1e-12
    xs, ys = grid.axes()

    inside = (v < 0.0).astype(np.int8)
    case = (
        inside[:-1, :-1]
        + (inside[1:, :-1] << 1)
        + (inside[1:, 1:] << 2)
        + (inside[:-1, 1:] << 3)
    )

    seg_edge_ids = []

    def emit(ci, cj, pairs):
        # ci, cj: cell index arrays; pairs: list of (edge_from, edge_to)
        for ea, eb in pairs:
            ids = np.empty((len(ci), 2), dtype=np.int64)
            for col, e in enumerate((ea, eb)):
                di, dj, ax = _MS_EDGE[e]
                ids[:, col] = ((ci + di) * ny + (cj + dj)) * 2 + ax
            seg_edge_ids.append(ids)

    for c, pairs in _MS_SEGMENTS.items():
        ci, cj = np.nonzero(case == c)
        if len(ci):
            emit(ci, cj, pairs)
    for c in (5, 10):
        ci, cj = np.nonzero(case == c)
        if not len(ci):
            continue
        center = (v[ci, cj] + v[ci + 1, cj] + v[ci + 1, cj + 1] + v[ci, cj + 1]) / 4.0
        neg = center < 0.0
        for val in (True, False):
            m = neg == val
            if m.any():
                emit(ci[m], cj[m], _MS_SADDLE[(c, val)])

    if not seg_edge_ids:
        return ExtractedComplex(
            dim=2,
            vertices=np.zeros((0, 2)),
            cells=[],
            cell_labels=[],
            is_boundary=np.zeros(0, dtype=bool),
        )

    seg_ids = np.concatenate(seg_edge_ids, axis=0)
    uniq, inv = np.unique(seg_ids, return_inverse=True)
    segments = inv.reshape(seg_ids.shape)

    ax = uniq % 2
    rest = uniq // 2
    gi = rest // ny
    gj = rest % ny
    va = v[gi, gj]
    vb = np.where(ax == 0, v[np.minimum(gi + 1, nx - 1), gj], v[gi, np.minimum(gj + 1, ny - 1)])
    t = va / (va - vb)
    px = np.where(ax == 0, xs[gi] + t * (xs[np.minimum(gi + 1, nx - 1)] - xs[gi]), xs[gi])
    py = np.where(ax == 1, ys[gj] + t * (ys[np.minimum(gj + 1, ny - 1)] - ys[gj]), ys[gj])
    verts = np.stack([px, py], axis=1)

    cells = [segments[i].copy() for i in range(len(segments))]
    return ExtractedComplex(
        dim=2,
        vertices=verts,
        cells=cells,
        cell_labels=[(-1, -1)] * len(cells),
        is_boundary=np.zeros(len(cells), dtype=bool),
    )


# ---------------------------------------------------------------------------
# marching cubes

# Canonical lattice edge of each of the 12 cube edges: node offset
# (di, dj, dk) plus axis.  Cube corners are numbered 0..7 as
# (0,0,0),(1,0,0),(1,1,0),(0,1,0) and the same four shifted by +z.
_EDGE_DI = np.array([0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 1, 0], dtype=np.int64)
_EDGE_DJ = np.array([0, 0, 1, 0, 0, 0, 1, 0, 0, 0, 1, 1], dtype=np.int64)
_EDGE_DK = np.array([0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0], dtype=np.int64)
_EDGE_AX = np.array([0, 1, 0, 1, 0, 1, 0, 1, 2, 2, 2, 2], dtype=np.int64)

_TRI_TABLE_NP = np.asarray(TRI_TABLE, dtype=np.int64)
_EDGE_TABLE_NP = np.asarray(EDGE_TABLE, dtype=np.int64)

# The классic tables wind triangles clockwise around the inside; we want
# normals on the positive-field side, which needs the reversed order
# (checked against the plane field f = z).
_MC_FLIP = True


def _mc_slab(v, i0, ny, nz):
    """Triangulate the cubes between node layers i0 .. i0+L of a slab.

    ``v`` holds L+1 node layers.  Returns (edge_ids, positions_t, tris)
    where edge_ids are canonical global lattice-edge keys, positions_t
    the interpolation parameters for those edges (resolved to
    coordinates by the caller), and tris (m, 3) rows of edge ids.
    """
    inside = (v < 0.0).astype(np.int16)
    case = (
        inside[:-1, :-1, :-1]
        + (inside[1:, :-1, :-1] << 1)
        + (inside[1:, 1:, :-1] << 2)
        + (inside[:-1, 1:, :-1] << 3)
        + (inside[:-1, :-1, 1:] << 4)
        + (inside[1:, :-1, 1:] << 5)
        + (inside[1:, 1:, 1:] << 6)
        + (inside[:-1, 1:, 1:] << 7)
    )
    ci, cj, ck = np.nonzero((case != 0) & (case != 255))
    if not len(ci):
        empty = np.zeros(0, dtype=np.int64)
        return empty, np.zeros(0), np.zeros((0, 3), dtype=np.int64)
    cs = case[ci, cj, ck]

    tri_rows = []
    lookup = _TRI_TABLE_NP[cs]
    for t in range(5):
        cols = lookup[:, 3 * t:3 * t + 3]
        m = cols[:, 0] >= 0
        if not m.any():
            break
        e = cols[m]
        gi = i0 + ci[m]
        gj = cj[m]
        gk = ck[m]
        ids = np.empty_like(e)
        for col in range(3):
            ec = e[:, col]
            ids[:, col] = (
                ((gi + _EDGE_DI[ec]) * ny + (gj + _EDGE_DJ[ec])) * nz
                + (gk + _EDGE_DK[ec])
            ) * 3 + _EDGE_AX[ec]
        tri_rows.append(ids)

    tris = np.concatenate(tri_rows, axis=0)
    if _MC_FLIP:
        tris = tris[:, ::-1]

    uniq = np.unique(tris)
    ax = uniq % 3
    rest = uniq // 3
    gk = rest % nz
    rest = rest // nz
    gj = rest % ny
    gi = rest // ny
    li = gi - i0
    va = v[li, gj, gk]
    vb = np.where(
        ax == 0,
        v[np.minimum(li + 1, v.shape[0] - 1), gj, gk],
        np.where(
            ax == 1,
            v[li, np.minimum(gj + 1, ny - 1), gk],
            v[li, gj, np.minimum(gk + 1, nz - 1)],
        ),
    )
    t = va / (va - vb)
    return uniq, t, tris


def _mc_positions(uniq, t, axes, ny, nz):
    xs, ys, zs = axes
    ax = uniq % 3
    rest = uniq // 3
    gk = rest % nz
    rest = rest // nz
    gj = rest % ny
    gi = rest // ny
    nx = len(xs)
    px = np.where(ax == 0, xs[gi] + t * (xs[np.minimum(gi + 1, nx - 1)] - xs[gi]), xs[gi])
    py = np.where(ax == 1, ys[gj] + t * (ys[np.minimum(gj + 1, ny - 1)] - ys[gj]), ys[gj])
    pz = np.where(ax == 2, zs[gk] + t * (zs[np.minimum(gk + 1, nz - 1)] - zs[gk]), zs[gk])
    return np.stack([px, py, pz], axis=1)


def _mc_assemble(slabs, axes, ny, nz):
    ids = [s[0] for s in slabs if len(s[0])]
    if not ids:
        return Mesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    all_ids = np.concatenate(ids)
    all_t = np.concatenate([s[1] for s in slabs if len(s[0])])
    all_tris = np.concatenate([s[2] for s in slabs if len(s[0])], axis=0)
    uniq, first = np.unique(all_ids, return_index=True)
    verts = _mc_positions(uniq, all_t[first], axes, ny, nz)
    tris = np.searchsorted(uniq, all_tris)
    # Canonical triangle order, independent of the slab decomposition.
    tris = tris[np.lexsort((tris[:, 2], tris[:, 1], tris[:, 0]))]
    return Mesh(verts, tris)


def marching_cubes(grid, *, slab_layers=32):
    """Zero isosurface of a 3D grid as a triangle mesh.

    Standard case-table triangulation; nodes at exactly zero are nudged
    to +1e-12 first.  Cubes are processed in x-slabs of ``slab_layers``
    layers so the working set stays small even at high resolution, and
    shared vertices are merged exactly via canonical lattice-edge keys.
    """
    if grid.dim != 3:
        raise DimensionMismatch("marching_cubes needs a 3D grid")
    nx, ny, nz = grid.resolution
    v = grid.reshaped()
    axes = grid.axes()

    slabs = []
    for i0 in range(0, nx - 1, slab_layers):
        i1 = min(nx - 1, i0 + slab_layers)
        sv = np.array(v[i0:i1 + 1], dtype=np.float64)
        sv[sv == 0.0] = 1e-12
        slabs.append(_mc_slab(sv, i0, ny, nz))
    return _mc_assemble(slabs, axes, ny, nz)


def marching_cubes_field(model, resolution, bbox=None, *, tropical=False,
                         slab_layers=16):
    """Marching cubes straight off the field, one slab at a time.

    Never materializes the full grid, so full-scale resolutions (512 per
    axis) stay within a few hundred MB.
    """
    if model.dim != 3:
        raise DimensionMismatch("marching_cubes_field needs a 3D model")
    if isinstance(resolution, (int, np.integer)):
        resolution = (int(resolution),) * 3
    nx, ny, nz = (int(r) for r in resolution)
    if bbox is None:
        bbox = np.array([[-1.0, 1.0]] * 3)
    bbox = np.asarray(bbox, dtype=np.float64).reshape(3, 2)
    axes = [np.linspace(bbox[k, 0], bbox[k, 1], (nx, ny, nz)[k]) for k in range(3)]

    slabs = []
    carry = None  # last node layer of the previous slab
    for i0 in range(0, nx - 1, slab_layers):
        i1 = min(nx - 1, i0 + slab_layers)
        lo = i0 if carry is None else i0 + 1
        pts = _slab_points(axes, lo, i1 + 1)
        vals = eval_tropical_batch(model, pts) if tropical else batch_values(model, pts)
        block = vals.reshape(i1 + 1 - lo, ny, nz)
        sv = block if carry is None else np.concatenate([carry[None], block], axis=0)
        sv = np.array(sv, dtype=np.float64)
        sv[sv == 0.0] = 1e-12
        slabs.append(_mc_slab(sv, i0, ny, nz))
        carry = sv[-1]
    return _mc_assemble(slabs, axes, ny, nz)


# ---------------------------------------------------------------------------
# Chebyshev-center LP


class LPStatus(Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    UNBOUNDED = "unbounded"


@dataclass
class LPResult:
    x: np.ndarray
    y: float
    status: LPStatus


def chebyshev_center(halfspaces):
    """Largest inscribed ball of the region <u_j, x> + d_j <= 0.

    ``halfspaces`` is (m, d+1) with rows (u | d).  Maximizes y subject
    to <u_j, x> + y*||u_j|| + d_j <= 0.  A negative optimal y means the
    region is empty; Unbounded means arbitrarily large balls fit.  Ties
    in the optimal center are broken toward the lexicographically
    smallest x by a sequence of fixing LPs (falling back to the first
    optimum if a fixing stage fails numerically).

    Rows with a zero normal degenerate to d <= 0: violated ones make
    the region Infeasible, satisfied ones are dropped.  Raises
    NumericalDegeneracy when the remaining normals do not span the
    space; callers treat that cell as empty.
    """
    H = np.asarray(halfspaces, dtype=np.float64)
    if H.ndim != 2 or H.shape[0] < 1 or H.shape[1] < 2:
        raise EmptyInput("need at least one halfspace row (u | d)")
    d = H.shape[1] - 1
    U = H[:, :d]
    off = H[:, d]
    norms = np.linalg.norm(U, axis=1)
    scale = float(norms.max()) if len(norms) else 0.0
    zero = norms <= 1e-14 * max(1.0, scale)
    if np.any(off[zero] > 0):
        return LPResult(x=np.zeros(d), y=-np.inf, status=LPStatus.INFEASIBLE)
    U, off, norms = U[~zero], off[~zero], norms[~zero]
    if not len(U):
        return LPResult(x=np.zeros(d), y=np.inf, status=LPStatus.UNBOUNDED)

    sv = np.linalg.svd(U, compute_uv=False)
    if len(U) < d or sv[d - 1] <= 1e-12 * sv[0]:
        raise NumericalDegeneracy(
            f"constraint normals span rank {int((sv > 1e-12 * sv[0]).sum())} of {d}"
        )

    A = np.column_stack([U, norms])
    b = -off
    c = np.zeros(d + 1)
    c[d] = -1.0
    bounds = [(None, None)] * (d + 1)
    res = linprog(c, A_ub=A, b_ub=b, bounds=bounds, method="highs",
                  options=_LP_OPTIONS)
    if res.status == 3:
        return LPResult(x=np.zeros(d), y=np.inf, status=LPStatus.UNBOUNDED)
    if res.status != 0:
        # The relaxed problem is feasible for any x at low enough y, so
        # other failures indicate numerics; surface them.
        raise NumericalDegeneracy(f"LP solver status {res.status}: {res.message}")
    x_best = np.array(res.x[:d])
    y_best = float(res.x[d])

    # Lexicographic tie-break: pin y, then minimize coordinates in turn.
    a_eq = [np.append(np.zeros(d), 1.0)]
    b_eq = [y_best]
    x_lex = x_best.copy()
    ok = True
    for k in range(d):
        ck = np.zeros(d + 1)
        ck[k] = 1.0
        stage = linprog(ck, A_ub=A, b_ub=b, A_eq=np.array(a_eq), b_eq=np.array(b_eq),
                        bounds=bounds, method="highs", options=_LP_OPTIONS)
        if stage.status != 0:
            ok = False
            break
        x_lex[k] = stage.x[k]
        row = np.zeros(d + 1)
        row[k] = 1.0
        a_eq.append(row)
        b_eq.append(stage.x[k])
    x_out = x_lex if ok else x_best

    status = LPStatus.OPTIMAL if y_best >= 0 else LPStatus.INFEASIBLE
    return LPResult(x=x_out, y=y_best, status=status)


# ---------------------------------------------------------------------------
# tropical extraction


class _VertexPool:
    """Merges nearby vertices: quantized key lookup with neighbor probing."""

    def __init__(self, dim, snap):
        self.dim = dim
        self.snap = snap
        self.points = []
        self._table = {}
        if dim == 2:
            self._offsets = [(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)]
        else:
            self._offsets = [
                (a, b, c)
                for a in (-1, 0, 1)
                for b in (-1, 0, 1)
                for c in (-1, 0, 1)
            ]

    def key(self, p):
        return tuple(int(math.floor(c / self.snap + 0.5)) for c in p)

    def add(self, p):
        base = self.key(p)
        for off in self._offsets:
            k = tuple(b + o for b, o in zip(base, off))
            idx = self._table.get(k)
            if idx is not None and np.linalg.norm(self.points[idx] - p) <= self.snap:
                return idx
        idx = len(self.points)
        self.points.append(np.asarray(p, dtype=np.float64))
        self._table[base] = idx
        return idx

    def array(self):
        if not self.points:
            return np.zeros((0, self.dim))
        return np.stack(self.points)


def _bbox_halfspaces(d, lo, hi):
    rows = []
    for k in range(d):
        u = np.zeros(d)
        u[k] = 1.0
        rows.append(np.append(u, -hi[k]))
        rows.append(np.append(-u, lo[k]))
    return np.array(rows)


def _upper_hull_neighbors(A, c):
    """Adjacency of terms on the upper envelope of <a_i, x> + c_i.

    Lifting term i to q_i = (a_i, c_i), term i attains the pointwise
    maximum somewhere iff q_i is a vertex of the hull of the q's seen
    from above, and the only terms whose halfspace can support the
    boundary of its candidate cell are those joined to q_i by an upper
    hull edge.  Facet cliques of the triangulated hull cover every hull
    edge, so they give a superset of that adjacency; the extra rows are
    redundant for the cell and leave the Chebyshev LP unchanged.

    Returns (on_upper, indptr, indices) in CSR layout, or None when the
    lifted points are too degenerate for the hull to be built (callers
    then fall back to all-pairs halfspace lists).
    """
    from scipy.spatial import ConvexHull, QhullError

    n, d1 = A.shape[0], A.shape[1] + 1
    q = np.column_stack([A, c])
    try:
        hull = ConvexHull(q)
    except (QhullError, ValueError):
        return None
    upper = hull.equations[:, d1 - 1] > 1e-12
    simp = hull.simplices[upper]
    if not len(simp):
        return None
    pairs = []
    for p in range(d1):
        for r in range(p + 1, d1):
            pairs.append(simp[:, [p, r]])
    e = np.concatenate(pairs, axis=0)
    e = np.concatenate([e, e[:, ::-1]], axis=0)
    e = np.unique(e, axis=0)
    on_upper = np.zeros(n, dtype=bool)
    on_upper[np.unique(simp)] = True
    indptr = np.searchsorted(e[:, 0], np.arange(n + 1))
    return on_upper, indptr, e[:, 1].copy()


def _facet_vertices_2d(dual, hull, center):
    """Primal vertex of each dual hull edge (pair of adjacent planes)."""
    out = {}
    k = len(hull)
    for t in range(k):
        i, j = hull[t], hull[(t + 1) % k]
        # The two boundary lines <u, x - center> = b meet at the corner.
        A = np.stack([dual[i], dual[j]])
        try:
            x = np.linalg.solve(A, np.ones(2))
        except np.linalg.LinAlgError:
            continue
        out[(i, j)] = center + x
    return out


def extract_tropical(model, *, bbox=None, bbox_scale=1.5,
                     cell_radius_tol=CELL_RADIUS_TOL, snap=None):
    """Exact piecewise-linear zero set of the tropical limit.

    For every active Minus term i, the candidate cell is the region
    where term i dominates every other active term, intersected with the
    bbox scaled by ``bbox_scale``.  Cells with inscribed radius above
    ``cell_radius_tol`` are intersected exactly (dual transform around
    the Chebyshev center plus convex hull); facets whose opposing term
    is in the Plus group are the active facets, facets on the clip box
    are labeled boundary.  Shared vertices are merged within
    ``snap`` (default 1e-7 times the clip-box diagonal).

    Degeneracies are recorded in ``diagnostics`` rather than raised:
    cells that pinch to a point land in ``degenerate_cells``, and
    vertices where four or more equality planes meet land in
    ``degenerate_vertices`` (the snap merge collapses them, which is
    what a symbolic perturbation of that magnitude would do anyway).
    """
    d = model.dim
    if bbox is None:
        bbox = np.array([[-1.0, 1.0]] * d)
    bbox = np.asarray(bbox, dtype=np.float64).reshape(d, 2)
    lo = bbox[:, 0] * bbox_scale
    hi = bbox[:, 1] * bbox_scale
    diag = float(np.linalg.norm(hi - lo))
    if snap is None:
        snap = 1e-7 * diag

    act = np.nonzero(model.active)[0]
    groups = model.group[act]
    if not (groups == MINUS).any() or not (groups == PLUS).any():
        raise EmptyInput("tropical extraction needs active terms in both groups")
    A_all = model.a[act]
    c_all = model.c[act]

    box_rows = _bbox_halfspaces(d, lo, hi)
    corners = np.stack(np.meshgrid(*[(lo[k], hi[k]) for k in range(d)],
                                   indexing="ij"), axis=-1).reshape(-1, d)

    pool = _VertexPool(d, snap)
    cells = []
    labels = []
    boundary = []
    interior = []
    seen_facets = {}
    diag_info = {
        "cells_total": 0,
        "empty_cells": [],
        "degenerate_cells": [],
        "degenerate_vertices": [],
        "dropped_facets": 0,
    }

    adjacency = None
    if len(act) >= _PREFILTER_MIN_TERMS:
        adjacency = _upper_hull_neighbors(A_all, c_all)

    minus_slots = np.nonzero(groups == MINUS)[0]
    for slot in minus_slots:
        diag_info["cells_total"] += 1
        term_i = int(act[slot])
        if adjacency is not None and adjacency[0][slot]:
            on_upper, indptr, indices = adjacency
            others = indices[indptr[slot]:indptr[slot + 1]]
        else:
            # Small model, degenerate lift, or a term beneath the upper
            # envelope (empty or pinched cell): use all-pairs rows.
            others = np.nonzero(np.arange(len(act)) != slot)[0]
        U = A_all[others] - A_all[slot]
        offs = c_all[others] - c_all[slot]
        other_terms = act[others]

        unorm = np.linalg.norm(U, axis=1)
        nz = unorm > 1e-14 * max(1.0, float(unorm.max()) if len(unorm) else 1.0)
        if np.any(offs[~nz] > 0):
            diag_info["empty_cells"].append(term_i)
            continue
        rows = np.column_stack([U[nz], offs[nz]])
        row_terms = other_terms[nz]

        H = np.concatenate([rows, box_rows], axis=0)
        lp = chebyshev_center(H)
        if lp.status is not LPStatus.OPTIMAL or lp.y <= cell_radius_tol:
            if lp.status is LPStatus.OPTIMAL and abs(lp.y) <= cell_radius_tol:
                diag_info["degenerate_cells"].append(term_i)
            else:
                diag_info["empty_cells"].append(term_i)
            continue
        center = lp.x

        # Planes farther from the center than any point of the clipped
        # cell can never touch it; the bbox corners bound that reach.
        r0 = float(np.linalg.norm(corners - center, axis=1).max()) + snap
        un = np.linalg.norm(H[:, :d], axis=1)
        b = -(H[:, :d] @ center + H[:, d])
        keep = (b / un) <= r0
        Hk = H[keep]
        bk = b[keep]
        # Opposing term per kept row; bbox rows get -1.
        row_lab = np.concatenate([row_terms, np.full(2 * d, -1, dtype=np.int64)])[keep]

        dual = Hk[:, :d] / bk[:, None]
        try:
            hull = convex_hull_2d(dual) if d == 2 else convex_hull_3d(dual)
        except NumericalDegeneracy:
            diag_info["degenerate_cells"].append(term_i)
            continue

        facet_rows = []
        if d == 2:
            corner_of = _facet_vertices_2d(dual, hull, center)
            k = len(hull)
            for t in range(k):
                p = int(hull[t])
                prev_edge = (int(hull[(t - 1) % k]), p)
                next_edge = (p, int(hull[(t + 1) % k]))
                if prev_edge not in corner_of or next_edge not in corner_of:
                    continue
                va = pool.add(corner_of[prev_edge])
                vb = pool.add(corner_of[next_edge])
                if va == vb:
                    diag_info["dropped_facets"] += 1
                    continue
                pa, pb = pool.points[va], pool.points[vb]
                # Negative side (the Minus cell) on the left.
                cr = (pb[0] - pa[0]) * (center[1] - pa[1]) - (pb[1] - pa[1]) * (center[0] - pa[0])
                loop = [va, vb] if cr > 0 else [vb, va]
                facet_rows.append((p, loop))
        else:
            # Face -> primal vertex; group hull faces by incident dual point.
            fverts = {}
            for f_idx, f in enumerate(hull):
                q = dual[f]
                n = np.cross(q[1] - q[0], q[2] - q[0])
                h = float(n @ q[0])
                if abs(h) < 1e-300:
                    continue
                pv = center + n / h
                fverts[f_idx] = pool.add(pv)
            by_point = {}
            for f_idx, f in enumerate(hull):
                if f_idx not in fverts:
                    continue
                for p in f:
                    by_point.setdefault(int(p), []).append(fverts[f_idx])
            for p, vids in by_point.items():
                uniq = sorted(set(vids))
                if len(uniq) < 3:
                    diag_info["dropped_facets"] += 1
                    continue
                u = Hk[p, :d]
                uhat = u / np.linalg.norm(u)
                # Order the (convex) facet polygon by angle about uhat.
                ref = np.zeros(d)
                ref[int(np.argmin(np.abs(uhat)))] = 1.0
                e1 = np.cross(uhat, ref)
                e1 /= np.linalg.norm(e1)
                e2 = np.cross(uhat, e1)
                pts = np.stack([pool.points[v] for v in uniq])
                cen = pts.mean(axis=0)
                ang = np.arctan2((pts - cen) @ e2, (pts - cen) @ e1)
                order = [uniq[t] for t in np.argsort(ang, kind="stable")]
                # Newell normal decides the final winding: outward is +u.
                nrm = np.zeros(3)
                opts = np.stack([pool.points[v] for v in order])
                for t in range(len(order)):
                    nrm += np.cross(opts[t], opts[(t + 1) % len(order)])
                if nrm @ uhat < 0:
                    order = order[::-1]
                facet_rows.append((p, order))

        # A cell vertex should lie on exactly d equality planes; more
        # means the arrangement is degenerate there (the snap merge
        # already collapsed the coincident corners).
        cell_vids = sorted({v for _, loop in facet_rows for v in loop})
        un_k = np.linalg.norm(Hk[:, :d], axis=1)
        for vid in cell_vids:
            dist = np.abs(Hk[:, :d] @ pool.points[vid] + Hk[:, d]) / un_k
            on = np.nonzero(dist <= snap)[0]
            if len(on) >= d + 1:
                diag_info["degenerate_vertices"].append(
                    (term_i, sorted(int(row_lab[p]) for p in on))
                )

        for p, loop in facet_rows:
            opp = int(row_lab[p])
            if opp >= 0 and model.group[opp] != PLUS:
                continue  # facet against another Minus cell
            fkey = tuple(sorted(loop))
            if fkey in seen_facets:
                continue
            seen_facets[fkey] = True
            cells.append(np.asarray(loop, dtype=np.int64))
            labels.append((term_i, opp))
            boundary.append(opp < 0)

        hull_points = sorted({int(x) for f in np.atleast_2d(hull) for x in np.ravel(f)})
        interior.append(InteriorCell(
            term=term_i,
            halfspaces=Hk[hull_points],
            center=center,
            radius=float(lp.y),
        ))

    return ExtractedComplex(
        dim=d,
        vertices=pool.array(),
        cells=cells,
        cell_labels=labels,
        is_boundary=np.asarray(boundary, dtype=bool),
        interior_cells=interior,
        diagnostics=diag_info,
    )
