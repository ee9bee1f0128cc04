import json
import os
import struct

import numpy as np
import pytest

from patchwork.errors import (CorruptCheckpoint, DegenerateBBox, EmptyInput,
                              ParseError, UnsupportedFormat, VersionMismatch)
from patchwork.extract import euler_characteristic, extract_tropical
from patchwork.field import MINUS, PLUS, PatchworkModel
from patchwork.io import (RunManifest, file_sha256, load_checkpoint,
                          load_mesh, load_point_cloud, make_cube_mesh,
                          make_icosphere, make_torus_mesh, normalize_to_box,
                          resolve_run_dir, run_lock, save_checkpoint,
                          write_complex_obj, write_mesh_obj, write_metrics_csv,
                          write_obj, write_report_csv, write_svg)
from patchwork.metrics import MetricReport
from patchwork.train import FitReport

from oracles import random_model


def closed(mesh):
    edges = {}
    for tri in mesh.triangles:
        for t in range(3):
            a, b = int(tri[t]), int(tri[(t + 1) % 3])
            key = (min(a, b), max(a, b))
            edges[key] = edges.get(key, 0) + 1
    return set(edges.values()) == {2}


# ---------------------------------------------------------------------------
# mesh and point-cloud parsing


def test_obj_round_trip(tmp_path):
    verts = np.array([[0.1, -0.25, 1e-17], [1, 0, 0], [1, 1, 0], [0, 1, 0]])
    path = write_obj(tmp_path / "quad.obj", verts, [[0, 1, 2, 3]])
    mesh, dropped = load_mesh(path)
    assert dropped == 0
    assert np.array_equal(mesh.vertices, verts)
    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]


def test_obj_parsing_corners(tmp_path):
    p = tmp_path / "m.obj"
    p.write_text("# comment\nvn 0 0 1\nv 0 0 0\nv 1 0 0\nv 0 1 0\n"
                 "usemtl stone\nf 1/1/1 2/2/2 3/3/3\nf -3 -2 -1\n")
    mesh, dropped = load_mesh(p)
    assert len(mesh.triangles) == 2
    assert mesh.triangles.tolist() == [[0, 1, 2], [0, 1, 2]]

    for bad in ("v 0 0\n", "v a b c\n", "f 0 1 2\nv 0 0 0\n",
                "v 0 0 0\nv 1 0 0\nf 1 2\n", "v 0 0 0\nf 1 2 9\n"):
        p.write_text(bad)
        with pytest.raises(ParseError):
            load_mesh(p)

    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\n")
    with pytest.raises(ParseError):
        load_mesh(p)
    with pytest.raises(UnsupportedFormat):
        load_mesh(tmp_path / "mesh.stl")


def test_obj_drops_degenerate_faces(tmp_path):
    p = tmp_path / "m.obj"
    p.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\nf 1 1 2\n")
    mesh, dropped = load_mesh(p)
    assert len(mesh.triangles) == 1 and dropped == 1


def ascii_cloud_ply(path, pts, nrm):
    lines = ["ply", "format ascii 1.0", f"element vertex {len(pts)}"]
    lines += [f"property float {k}" for k in ("x", "y", "z", "nx", "ny", "nz")]
    lines += ["end_header"]
    for p, n in zip(pts, nrm):
        lines.append(" ".join(repr(float(v)) for v in (*p, *n)))
    path.write_text("\n".join(lines) + "\n")
    return path


def test_ply_ascii_point_cloud(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.uniform(-1, 1, size=(16, 3))
    nrm = rng.normal(size=(16, 3))
    nrm /= np.linalg.norm(nrm, axis=1, keepdims=True)
    path = ascii_cloud_ply(tmp_path / "c.ply", pts, nrm)
    ss = load_point_cloud(path)
    assert np.allclose(ss.points, pts, atol=1e-15)
    assert np.allclose(ss.normals, nrm, atol=1e-15)

    with pytest.raises(UnsupportedFormat):
        load_point_cloud(tmp_path / "c.xyz")
    bare = tmp_path / "bare.ply"
    bare.write_text("ply\nformat ascii 1.0\nelement vertex 1\n"
                    "property float x\nproperty float y\nproperty float z\n"
                    "end_header\n0 0 0\n")
    with pytest.raises(ParseError):
        load_point_cloud(bare)


def test_ply_binary_mesh(tmp_path):
    verts = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=np.float32)
    faces = [(0, 2, 1), (0, 1, 3), (0, 3, 2), (1, 2, 3)]
    header = ("ply\nformat binary_little_endian 1.0\n"
              f"element vertex {len(verts)}\n"
              "property float x\nproperty float y\nproperty float z\n"
              f"element face {len(faces)}\n"
              "property list uchar int vertex_indices\nend_header\n")
    blob = bytearray(header.encode())
    blob += verts.astype("<f4").tobytes()
    for f in faces:
        blob += struct.pack("<B3i", 3, *f)
    p = tmp_path / "tet.ply"
    p.write_bytes(bytes(blob))
    mesh, dropped = load_mesh(p)
    assert dropped == 0
    assert np.allclose(mesh.vertices, verts)
    assert len(mesh.triangles) == 4
    assert closed(mesh)

    trunc = tmp_path / "trunc.ply"
    trunc.write_bytes(bytes(blob[:-10]))
    with pytest.raises(ParseError):
        load_mesh(trunc)


def test_ply_header_errors(tmp_path):
    p = tmp_path / "h.ply"
    p.write_bytes(b"solid not a ply")
    with pytest.raises(ParseError):
        load_point_cloud(p)
    p.write_bytes(b"ply\nformat binary_big_endian 1.0\nend_header\n")
    with pytest.raises(ParseError):
        load_point_cloud(p)


# ---------------------------------------------------------------------------
# normalization


def test_normalize_to_box():
    mesh = make_cube_mesh(1.0)
    mesh.vertices = mesh.vertices * np.array([2.0, 1.0, 0.5]) + 7.0
    out, tf = normalize_to_box(mesh)
    lo, hi = out.vertices.min(axis=0), out.vertices.max(axis=0)
    assert lo[0] == -1.0 and hi[0] == 1.0
    assert hi[1] - lo[1] == pytest.approx(1.0)
    assert np.allclose(tf.invert(out.vertices), mesh.vertices, atol=1e-12)

    flat = make_cube_mesh(1.0)
    flat.vertices = np.zeros_like(flat.vertices)
    with pytest.raises(DegenerateBBox):
        normalize_to_box(flat)
    empty = make_cube_mesh(1.0)
    empty.vertices = np.zeros((0, 3))
    with pytest.raises(EmptyInput):
        normalize_to_box(empty)


# ---------------------------------------------------------------------------
# checkpoints


def test_checkpoint_round_trip_bytes(rng, tmp_path):
    for wn in (False, True):
        model = random_model(rng, 9, 3, weightnorm=wn)
        model.active[4] = False
        p1 = save_checkpoint(model, tmp_path / f"a{wn}.json")
        loaded = load_checkpoint(p1)
        p2 = save_checkpoint(loaded, tmp_path / f"b{wn}.json")
        assert p1.read_bytes() == p2.read_bytes()
        assert np.array_equal(loaded.a, model.a)
        assert np.array_equal(loaded.c, model.c)
        assert np.array_equal(loaded.log_s, model.log_s)
        assert np.array_equal(loaded.group, model.group)
        assert np.array_equal(loaded.active, model.active)
        assert loaded.weightnorm == wn


def test_checkpoint_rejects_damage(rng, tmp_path):
    model = random_model(rng, 6, 2)
    path = save_checkpoint(model, tmp_path / "m.json")
    doc = json.loads(path.read_text())

    doc["model"]["c"][0] += 1.0
    bad = tmp_path / "tampered.json"
    bad.write_text(json.dumps(doc))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(bad)

    doc = json.loads(path.read_text())
    doc["version"] = 99
    bad.write_text(json.dumps(doc))
    with pytest.raises(VersionMismatch):
        load_checkpoint(bad)

    bad.write_text("{not json")
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(bad)
    bad.write_text(json.dumps({"format": "something-else"}))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(bad)
    with pytest.raises(FileNotFoundError):
        load_checkpoint(tmp_path / "missing.json")


def test_file_sha256(tmp_path):
    p = tmp_path / "x"
    p.write_bytes(b"abc")
    assert file_sha256(p) == ("ba7816bf8f01cfea414140de5dae2223"
                              "b00361a396177a9cb410ff61f20015ad")


# ---------------------------------------------------------------------------
# run directories


def test_manifest_round_trip(tmp_path):
    man = RunManifest(command="fit sphere", config={"iterations": 10},
                      inputs={"cloud.ply": "ab" * 32}, seeds={"rng": 3},
                      outputs=["checkpoint.json"])
    path = man.save(tmp_path / "manifest.json")
    back = RunManifest.load(path)
    assert back.command == man.command
    assert back.config == man.config
    assert back.inputs == man.inputs
    assert back.seeds == {"rng": 3}
    assert back.created


def test_resolve_run_dir_uses_env_root(tmp_path):
    d = resolve_run_dir("alpha")
    assert d.is_dir()
    assert d.parent == resolve_run_dir("beta").parent
    assert str(d).startswith(os.environ["PATCHWORK_RUN_ROOT"])
    absolute = resolve_run_dir(str(tmp_path / "elsewhere"))
    assert absolute == tmp_path / "elsewhere"


def test_run_lock_exclusive(tmp_path):
    with run_lock(tmp_path):
        assert (tmp_path / ".lock").exists()
        with pytest.raises(RuntimeError):
            with run_lock(tmp_path):
                pass
    assert not (tmp_path / ".lock").exists()
    with run_lock(tmp_path):
        pass


# ---------------------------------------------------------------------------
# CSV reports


def tiny_report():
    z = np.array([0.5, 0.25])
    return FitReport(loss_sur=z, loss_normal=z / 2, loss_reg=z / 4,
                     loss_prune=z / 8, loss_total=z * 2,
                     active_terms=np.array([4, 3]), wall_time=1.0,
                     params_initial=12, params_final=8, skipped_steps=0,
                     degenerate_normal_samples=0)


def test_write_report_csv(tmp_path):
    p1 = write_report_csv(tiny_report(), tmp_path / "r1.csv")
    p2 = write_report_csv(tiny_report(), tmp_path / "r2.csv")
    assert p1.read_bytes() == p2.read_bytes()
    lines = p1.read_text().splitlines()
    assert lines[0].startswith("iteration,loss_sur")
    assert len(lines) == 3
    assert lines[1].split(",")[1] == "0.5"


def test_write_metrics_csv(tmp_path):
    rep = MetricReport(chamfer=0.001, hausdorff=0.01, fscore=93.0,
                       sample_count=1000, seed=5)
    text = write_metrics_csv(rep, tmp_path / "m.csv").read_text()
    head, row = text.splitlines()
    assert head == "chamfer_x1e3,hausdorff_x1e2,fscore,samples,seed,cutoff"
    assert row.split(",")[0] == "1.0"
    assert row.split(",")[3] == "1000"


# ---------------------------------------------------------------------------
# geometry writers


def cube_complex():
    a = [[0.0, 0, 0]]
    c = [0.0]
    groups = [MINUS]
    for k in range(3):
        for sign in (1, -1):
            u = [0.0, 0.0, 0.0]
            u[k] = sign
            a.append(u)
            c.append(-0.5)
            groups.append(PLUS)
    model = PatchworkModel.from_arrays(
        np.array(a), np.array(c), np.array(groups, dtype=np.int8), 75.0, 75.0)
    return extract_tropical(model)


def test_write_complex_obj(tmp_path):
    ec = cube_complex()
    path, side = write_complex_obj(tmp_path / "cell.obj", ec)
    mesh, dropped = load_mesh(path)
    assert len(mesh.vertices) == 8
    assert len(mesh.triangles) == 12  # six quads, fan split
    labels = json.loads(side.read_text())
    assert len(labels["faces"]) == 6
    assert all(f["minus_term"] == 0 for f in labels["faces"])

    square = PatchworkModel.from_arrays(
        np.array([[0.0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]]),
        np.array([0.0, -0.5, -0.5, -0.5, -0.5]),
        np.array([MINUS, PLUS, PLUS, PLUS, PLUS], dtype=np.int8), 75.0, 75.0)
    with pytest.raises(UnsupportedFormat):
        write_complex_obj(tmp_path / "nope.obj", extract_tropical(square))


def test_write_svg(tmp_path):
    square = PatchworkModel.from_arrays(
        np.array([[0.0, 0], [1, 0], [-1, 0], [0, 1], [0, -1]]),
        np.array([0.0, -0.5, -0.5, -0.5, -0.5]),
        np.array([MINUS, PLUS, PLUS, PLUS, PLUS], dtype=np.int8), 75.0, 75.0)
    ec = extract_tropical(square)
    fills = [(np.array([[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]]),
              "#c8d8f8")]
    text = write_svg(tmp_path / "cell.svg", ec, fills=fills).read_text()
    assert text.count("<line") == 4
    assert text.count("<polygon") == 1
    assert "svg" in text
    with pytest.raises(UnsupportedFormat):
        write_svg(tmp_path / "nope.svg", cube_complex())


def test_write_mesh_obj_round_trip(tmp_path):
    mesh = make_icosphere(1, 1.0)
    back, _ = load_mesh(write_mesh_obj(tmp_path / "ico.obj", mesh))
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.triangles, mesh.triangles)


# ---------------------------------------------------------------------------
# reference meshes


def test_reference_meshes():
    cube = make_cube_mesh(0.5)
    assert cube.area() == pytest.approx(6.0, abs=1e-12)
    assert closed(cube) and euler_characteristic(cube.triangles) == 2

    sph = make_icosphere(3, 1.0)
    assert np.allclose(np.linalg.norm(sph.vertices, axis=1), 1.0, atol=1e-12)
    assert closed(sph) and euler_characteristic(sph.triangles) == 2
    assert abs(sph.area() - 4 * np.pi) / (4 * np.pi) < 0.01

    tor = make_torus_mesh()
    assert closed(tor) and euler_characteristic(tor.triangles) == 0
    assert abs(tor.area() - 4 * np.pi**2 * 0.6 * 0.3) < 0.05
