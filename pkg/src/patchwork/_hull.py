"""Convex hulls in 2D and 3D, written here so hull behavior is deterministic.

The 2D hull is Andrew's monotone chain over lexicographically sorted points.
The 3D hull is an incremental construction with conflict sets: points are
inserted farthest-first per face, visible faces are found by a walk over the
face adjacency, and the horizon is re-triangulated against the new point.
Points within the visibility tolerance of a face plane are treated as not
visible, which absorbs coplanar and duplicate points instead of producing
sliver faces.  Both hulls are exact enough for the dual-polytope use here;
scipy's qhull is used only as an independent oracle in the tests.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericalDegeneracy

Array = np.ndarray


def convex_hull_2d(points: Array, eps: float | None = None) -> Array:
    """Indices of hull vertices in counterclockwise order, collinear points dropped."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError(f"expected (n, 2) points, got {pts.shape}")
    n = pts.shape[0]
    if n < 3:
        raise NumericalDegeneracy("need at least 3 points for a 2D hull")
    span = float(np.ptp(pts, axis=0).max())
    if span == 0.0:
        raise NumericalDegeneracy("all points coincide")
    if eps is None:
        eps = 1e-12 * span * span

    order = np.lexsort((pts[:, 1], pts[:, 0]))

    def cross(o, a, b):
        return ((pts[a, 0] - pts[o, 0]) * (pts[b, 1] - pts[o, 1])
                - (pts[a, 1] - pts[o, 1]) * (pts[b, 0] - pts[o, 0]))

    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], i) <= eps:
            lower.pop()
        lower.append(int(i))
    upper: list[int] = []
    for i in order[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], i) <= eps:
            upper.pop()
        upper.append(int(i))
    hull = lower[:-1] + upper[:-1]
    if len(hull) < 3:
        raise NumericalDegeneracy("points are collinear")
    return np.array(hull, dtype=np.int64)


def _face_plane(pts, tri):
    i, j, k = tri
    normal = np.cross(pts[j] - pts[i], pts[k] - pts[i])
    return normal, float(normal @ pts[i])


def convex_hull_3d(points: Array, eps: float | None = None) -> Array:
    """Triangular hull faces (m, 3) with outward orientation.

    Coplanar clusters on the hull come back as adjacent triangles sharing a
    supporting plane; callers that need merged facets group them afterwards.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected (n, 3) points, got {pts.shape}")
    n = pts.shape[0]
    if n < 4:
        raise NumericalDegeneracy("need at least 4 points for a 3D hull")
    span = float(np.ptp(pts, axis=0).max())
    if span == 0.0:
        raise NumericalDegeneracy("all points coincide")
    if eps is None:
        eps = 1e-10 * span

    # initial simplex: spread apart deterministically
    i0 = int(np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))[0])
    d0 = np.linalg.norm(pts - pts[i0], axis=1)
    i1 = int(np.argmax(d0))
    if d0[i1] <= eps:
        raise NumericalDegeneracy("all points coincide")
    u = (pts[i1] - pts[i0]) / d0[i1]
    rel = pts - pts[i0]
    perp = rel - np.outer(rel @ u, u)
    d1 = np.linalg.norm(perp, axis=1)
    i2 = int(np.argmax(d1))
    if d1[i2] <= eps:
        raise NumericalDegeneracy("points are collinear")
    nrm = np.cross(pts[i1] - pts[i0], pts[i2] - pts[i0])
    nrm /= np.linalg.norm(nrm)
    d2 = np.abs(rel @ nrm)
    i3 = int(np.argmax(d2))
    if d2[i3] <= eps:
        raise NumericalDegeneracy("points are coplanar")
    if (pts[i3] - pts[i0]) @ nrm > 0.0:
        i1, i2 = i2, i1

    faces: dict[int, tuple[int, int, int]] = {}
    normals: dict[int, np.ndarray] = {}
    offsets: dict[int, float] = {}
    conflicts: dict[int, np.ndarray] = {}
    edge_to_face: dict[tuple[int, int], int] = {}
    next_id = 0

    remaining = np.setdiff1d(np.arange(n), np.array([i0, i1, i2, i3]))

    def add_face(tri, candidates):
        nonlocal next_id
        fid = next_id
        next_id += 1
        normal, off = _face_plane(pts, tri)
        faces[fid] = tri
        normals[fid] = normal
        offsets[fid] = off
        if candidates.size:
            dist = pts[candidates] @ normal - off
            outside = candidates[dist > eps * max(1.0, float(np.linalg.norm(normal)))]
        else:
            outside = candidates
        conflicts[fid] = outside
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            edge_to_face[(a, b)] = fid
        return fid

    def drop_face(fid):
        tri = faces.pop(fid)
        normals.pop(fid)
        offsets.pop(fid)
        conflicts.pop(fid)
        for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
            if edge_to_face.get((a, b)) == fid:
                del edge_to_face[(a, b)]

    for tri in ((i0, i1, i2), (i0, i2, i3), (i0, i3, i1), (i1, i3, i2)):
        add_face(tri, remaining)

    pending = [fid for fid in list(faces) if conflicts[fid].size]
    guard = 0
    while pending:
        guard += 1
        if guard > 16 * n + 64:
            raise NumericalDegeneracy("hull construction failed to converge")
        fid = pending.pop()
        if fid not in faces or conflicts[fid].size == 0:
            continue
        cand = conflicts[fid]
        dist = pts[cand] @ normals[fid] - offsets[fid]
        p = int(cand[np.argmax(dist)])

        # collect faces visible from p by flooding across adjacency
        visible = set()
        stack = [fid]
        while stack:
            g = stack.pop()
            if g in visible or g not in faces:
                continue
            scale = max(1.0, float(np.linalg.norm(normals[g])))
            if pts[p] @ normals[g] - offsets[g] > eps * scale:
                visible.add(g)
                tri = faces[g]
                for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                    nb = edge_to_face.get((b, a))
                    if nb is not None and nb not in visible:
                        stack.append(nb)

        if not visible:
            conflicts[fid] = cand[cand != p]
            if conflicts[fid].size:
                pending.append(fid)
            continue

        # horizon: directed edges of visible faces whose twin is not visible
        horizon = []
        for g in visible:
            tri = faces[g]
            for a, b in ((tri[0], tri[1]), (tri[1], tri[2]), (tri[2], tri[0])):
                nb = edge_to_face.get((b, a))
                if nb is None or nb not in visible:
                    horizon.append((a, b))
        pool = np.unique(np.concatenate([conflicts[g] for g in visible]))
        pool = pool[pool != p]
        for g in list(visible):
            drop_face(g)
        for a, b in horizon:
            nf = add_face((a, b, p), pool)
            if conflicts[nf].size:
                pending.append(nf)

    return np.array([faces[fid] for fid in sorted(faces)], dtype=np.int64)
