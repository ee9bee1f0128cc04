import numpy as np
import pytest

from patchwork.errors import DegenerateMesh, EmptyInput
from patchwork.extract import Mesh, extract_tropical
from patchwork.field import MINUS, PLUS, PatchworkModel
from patchwork.metrics import (MetricReport, chamfer, compare_point_sets,
                               fscore, hausdorff, nearest_distances,
                               sample_complex, sample_mesh_surface,
                               sample_polygons, sample_segments)

from oracles import brute_chamfer, brute_fscore, brute_hausdorff


def test_metrics_match_brute_force(rng):
    for d in (2, 3):
        for _ in range(5):
            A = rng.normal(size=(120, d))
            B = rng.normal(size=(150, d))
            cutoff = float(rng.uniform(0.05, 0.5))
            assert chamfer(A, B) == pytest.approx(brute_chamfer(A, B), abs=1e-12)
            assert hausdorff(A, B) == pytest.approx(brute_hausdorff(A, B), abs=1e-12)
            assert fscore(A, B, cutoff) == pytest.approx(
                brute_fscore(A, B, cutoff), abs=1e-12)


def test_metric_invariants(rng):
    A = rng.normal(size=(80, 3))
    B = rng.normal(size=(60, 3))
    assert chamfer(A, B) == chamfer(B, A)
    assert hausdorff(A, B) == hausdorff(B, A)
    assert chamfer(A, B) <= hausdorff(A, B)
    t = 3.7
    assert chamfer(t * A, t * B) == pytest.approx(t * chamfer(A, B), rel=1e-12)
    assert hausdorff(t * A, t * B) == pytest.approx(t * hausdorff(A, B), rel=1e-12)
    assert 0.0 <= fscore(A, B, 0.1) <= 100.0


def test_identity_is_exact(rng):
    A = rng.normal(size=(500, 3))
    rep = compare_point_sets(A, A.copy())
    assert rep.chamfer == 0.0
    assert rep.hausdorff == 0.0
    assert rep.fscore == 100.0


def test_single_point_offsets():
    A = np.array([[0.0, 0.0, 0.0]])
    B = np.array([[0.3, 0.0, 0.0]])
    assert chamfer(A, B) == pytest.approx(0.3, abs=1e-15)
    assert hausdorff(A, B) == pytest.approx(0.3, abs=1e-15)
    assert fscore(A, B, 0.29) == 0.0
    assert fscore(A, B, 0.31) == 100.0


def test_fscore_partial_overlap():
    A = np.array([[0.0, 0.0], [10.0, 0.0]])
    B = np.array([[0.0, 0.0]])
    # precision 1/2, recall 1
    assert fscore(A, B, 0.5) == pytest.approx(100 * 2 * 0.5 / 1.5)


def test_empty_and_bad_inputs():
    with pytest.raises(EmptyInput):
        nearest_distances(np.zeros((0, 3)), np.ones((4, 3)))
    with pytest.raises(EmptyInput):
        nearest_distances(np.ones((4, 3)), np.zeros((0, 3)))
    with pytest.raises(ValueError):
        fscore(np.ones((2, 2)), np.ones((2, 2)), 0.0)


def test_report_scales():
    rep = MetricReport(chamfer=0.0015, hausdorff=0.02, fscore=88.5,
                       sample_count=10, seed=3)
    ch, hd, fs = rep.row()
    assert ch == pytest.approx(1.5)
    assert hd == pytest.approx(2.0)
    assert fs == 88.5
    text = rep.format_text(params=42)
    assert "1.5000" in text and "2.0000" in text and "params 42" in text


# ---------------------------------------------------------------------------
# samplers


def two_triangle_mesh():
    # areas 0.5 and 2.0 in the z=0 plane
    verts = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [3, 0, 0], [3, 2, 0], [1, 2, 0]]
    return Mesh(verts, [[0, 1, 2], [3, 4, 5]])


def test_sample_mesh_surface_weighting_and_determinism():
    mesh = two_triangle_mesh()
    ss = sample_mesh_surface(mesh, 20000, 7)
    again = sample_mesh_surface(mesh, 20000, 7)
    assert np.array_equal(ss.points, again.points)
    assert not np.array_equal(
        ss.points, sample_mesh_surface(mesh, 20000, 8).points)
    assert np.allclose(ss.points[:, 2], 0.0)
    assert np.allclose(ss.normals, [0, 0, 1])
    # area-weighted face choice: second triangle has 4x the area
    on_first = ss.points[:, 0] + ss.points[:, 1] <= 1.0 + 1e-12
    frac = on_first.mean()
    assert abs(frac - 0.2) < 0.02
    assert "seed=7" in ss.source


def test_sample_mesh_surface_stays_on_faces():
    half = 0.5
    verts = [[-half, -half, half], [half, -half, half],
             [half, half, half], [-half, half, half]]
    mesh = Mesh(verts, [[0, 1, 2], [0, 2, 3]])
    ss = sample_mesh_surface(mesh, 500, 0)
    assert np.allclose(ss.points[:, 2], half, atol=1e-12)
    assert np.all(np.abs(ss.points[:, :2]) <= half + 1e-12)


def test_sample_mesh_surface_errors(rng):
    degenerate = Mesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])
    with pytest.raises(DegenerateMesh):
        sample_mesh_surface(degenerate, 10, 0)
    with pytest.raises(EmptyInput):
        sample_mesh_surface(two_triangle_mesh(), 0, 0)


def test_sample_segments_spacing():
    seg = np.array([[[0.0, 0.0], [1.0, 0.0]]])
    pts = sample_segments(seg, 0.3)
    assert len(pts) == 5
    assert pts[0] @ pts[0] == 0.0 and np.allclose(pts[-1], [1, 0])
    gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    assert np.all(gaps <= 0.3 + 1e-12)
    assert sample_segments(np.zeros((0, 2, 2)), 0.1).shape == (0, 2)
    with pytest.raises(ValueError):
        sample_segments(seg, 0.0)


def test_sample_polygons_covers_square():
    verts = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]], dtype=float)
    pts = sample_polygons(verts, [[0, 1, 2, 3]], 0.2)
    assert np.all(pts[:, 2] == 0)
    assert np.all((pts[:, :2] >= -1e-12) & (pts[:, :2] <= 1 + 1e-12))
    for corner in verts:
        assert np.min(np.linalg.norm(pts - corner, axis=1)) < 1e-12
    # nothing in the square is far from a sample
    probe = np.stack(np.meshgrid(np.linspace(0, 1, 21),
                                 np.linspace(0, 1, 21)), axis=-1).reshape(-1, 2)
    probe3 = np.column_stack([probe, np.zeros(len(probe))])
    assert hausdorff(pts, probe3) < 0.2
    with pytest.raises(ValueError):
        sample_polygons(verts, [[0, 1, 2, 3]], -1.0)


def test_sample_complex_square_boundary():
    model = PatchworkModel.from_arrays(
        np.array([[0.0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]]),
        np.array([0.0, -0.5, -0.5, -0.5, -0.5]),
        np.array([MINUS, PLUS, PLUS, PLUS, PLUS], dtype=np.int8),
        100.0, 100.0)
    ec = extract_tropical(model)
    pts = sample_complex(ec, 0.05)
    assert np.allclose(np.abs(pts).max(axis=1), 0.5, atol=1e-9)
    t = np.linspace(-0.5, 0.5, 200)
    boundary = np.concatenate([
        np.stack([t, np.full_like(t, -0.5)], axis=1),
        np.stack([t, np.full_like(t, 0.5)], axis=1),
        np.stack([np.full_like(t, -0.5), t], axis=1),
        np.stack([np.full_like(t, 0.5), t], axis=1),
    ])
    assert hausdorff(pts, boundary) < 0.05
