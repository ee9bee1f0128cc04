"""Command-line front end: fit, eval, extract, metrics, construct, demo.

Every command is a pure function of its flags, inputs, and seed; reruns
with the same arguments produce identical outputs (manifests carry a
timestamp, nothing else does).

Exit codes
    0  success
    1  unexpected internal error
    2  bad usage, invalid argument values, or a busy run directory
    3  input problems: parse errors, unsupported formats, degenerate or
       empty geometry
    4  memory budget exceeded
    5  numerical failure (non-finite gradients, degenerate arrangements)
    6  checkpoint version or integrity mismatch

Desk-scale defaults keep every command interactive: 1024 surface
samples, 128-per-axis marching grids, 100k metric samples.  The
``--paper-scale`` flag restores the full-scale settings (16384 samples,
512 grids, 1M metric samples) where the command has one.
"""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from .errors import (CorruptCheckpoint, DegenerateArrangement,
                     DegenerateBBox, DegenerateGradient, DegenerateMesh,
                     DimensionMismatch, EmptyInput, MemoryBudgetExceeded,
                     NonFiniteGradient, NonFiniteParameter, NonUnitNormal,
                     NumericalDegeneracy, ParseError, UnsupportedFormat,
                     VersionMismatch)
from .extract import extract_tropical, marching_cubes_field, marching_squares, sample_grid
from .field import MINUS, PLUS, batch_values
from .init import (OrientedSampleSet, cube_samples, digital_curve_grid,
                   digital_curve_hex, digital_surface_grid, make_oracle,
                   sphere_samples_random, torus_samples)
from .io import (BoxTransform, RunManifest, file_sha256, load_checkpoint,
                 load_mesh, load_point_cloud, make_cube_mesh, make_icosphere,
                 make_torus_mesh, normalize_to_box, resolve_run_dir, run_lock,
                 save_checkpoint, write_complex_obj, write_mesh_obj,
                 write_metrics_csv, write_report_csv, write_svg)
from .metrics import compare_point_sets, sample_mesh_surface, sample_segments
from .train import FitConfig, fit, parameter_count

EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_MEMORY = 4
EXIT_NUMERIC = 5
EXIT_CHECKPOINT = 6

_ERROR_EXITS = (
    ((VersionMismatch, CorruptCheckpoint), EXIT_CHECKPOINT),
    ((MemoryBudgetExceeded, MemoryError), EXIT_MEMORY),
    ((NonFiniteGradient, NonFiniteParameter, NumericalDegeneracy,
      DegenerateArrangement, DegenerateGradient), EXIT_NUMERIC),
    ((ParseError, UnsupportedFormat, EmptyInput, DegenerateBBox,
      DegenerateMesh, DimensionMismatch, NonUnitNormal, FileNotFoundError,
      IsADirectoryError), EXIT_INPUT),
    ((ValueError, RuntimeError), EXIT_USAGE),
)

DESK_SAMPLES = 1024
DESK_RESOLUTION = 128
DESK_METRIC_SAMPLES = 100_000
FULL_SAMPLES = 16384
FULL_RESOLUTION = 512
FULL_METRIC_SAMPLES = 1_000_000
FSCORE_CUTOFF = 0.002

BUILTIN_SHAPES = ("sphere", "cube", "torus")


def _emit(args, payload: dict, text: str | list):
    if args.json:
        print(json.dumps(payload, sort_keys=True))
    else:
        print("\n".join(text) if isinstance(text, list) else text)


# ---------------------------------------------------------------------------
# input resolution


def _builtin_cloud(name: str, m: int, seed: int) -> OrientedSampleSet:
    if name == "sphere":
        return sphere_samples_random(m, radius=1.0, seed=seed)
    if name == "cube":
        return cube_samples(m, half=0.5, seed=seed)
    return torus_samples(m, seed=seed)


def _builtin_mesh(name: str):
    if name == "sphere":
        return make_icosphere(3, radius=1.0)
    if name == "cube":
        return make_cube_mesh(half=0.5)
    return make_torus_mesh()


def _normalize_cloud(ss: OrientedSampleSet) -> OrientedSampleSet:
    """Longest bbox axis mapped to exactly [-1, 1]; normals unchanged."""
    lo = ss.points.min(axis=0)
    hi = ss.points.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise DegenerateBBox("point cloud has zero extent")
    t = BoxTransform(center=(lo + hi) / 2.0, scale=2.0 / extent)
    return OrientedSampleSet(t.apply(ss.points), ss.normals, source=ss.source)


def _load_samples(spec: str, m: int, seed: int):
    """Surface samples from a builtin name, mesh file, or PLY point cloud.

    Returns (samples, inputs dict for the manifest, short label).
    """
    if spec in BUILTIN_SHAPES:
        return _builtin_cloud(spec, m, seed), {}, spec
    path = Path(spec)
    inputs = {str(path): file_sha256(path)}
    label = path.stem
    if path.suffix.lower() == ".ply":
        try:
            mesh, _ = load_mesh(path)
        except ParseError:
            cloud = _normalize_cloud(load_point_cloud(path))
            if len(cloud) > m:
                keep = np.random.default_rng(seed).permutation(len(cloud))[:m]
                cloud = OrientedSampleSet(cloud.points[keep],
                                          cloud.normals[keep],
                                          source=cloud.source)
            return cloud, inputs, label
    else:
        mesh, _ = load_mesh(path)
    mesh, _t = normalize_to_box(mesh)
    return sample_mesh_surface(mesh, m, seed), inputs, label


# ---------------------------------------------------------------------------
# fit


def _run_fit(run_dir: Path, samples: OrientedSampleSet, config: FitConfig,
             inputs: dict, label: str):
    """Fit and write the checkpoint / report / manifest triple."""
    model, report = fit(samples, config)
    ckpt = save_checkpoint(model, run_dir / "checkpoint.json")
    csv = write_report_csv(report, run_dir / "report.csv")
    manifest = RunManifest(
        command="fit",
        config={**config.to_dict(), "input": label, "samples": len(samples)},
        inputs=inputs,
        seeds={"rng": config.rng_seed},
        outputs=[ckpt.name, csv.name])
    manifest.save(run_dir / "manifest.json")
    return model, report, ckpt


def cmd_fit(args) -> int:
    config = FitConfig.load(args.config) if args.config else FitConfig()
    overrides = {
        "iterations": args.iterations,
        "batch_size": args.batch_size,
        "learning_rate": args.lr,
        "rho": args.rho,
        "beta": args.beta,
        "rng_seed": args.seed,
    }
    config = config.replace(**{k: v for k, v in overrides.items()
                               if v is not None})
    if args.no_prune:
        config = config.replace(use_prune=False)
    if args.no_reg:
        config = config.replace(use_occupancy=False)
    if args.no_normal:
        config = config.replace(use_normal=False)
    if args.random_init:
        config = config.replace(geometric=False)
    config.validate()

    if args.dump_config:
        config.save(args.dump_config)
        if args.input is None:
            print(f"wrote {args.dump_config}")
            return 0
    if args.input is None:
        raise ValueError("fit needs an input (builtin name or mesh/cloud path)")

    m = args.samples if args.samples is not None else \
        (FULL_SAMPLES if args.paper_scale else DESK_SAMPLES)
    samples, inputs, label = _load_samples(args.input, m, args.seed or 0)

    run = resolve_run_dir(args.run_dir or f"fit-{label}")
    with run_lock(run):
        model, report, ckpt = _run_fit(run, samples, config, inputs, label)
    plus, minus = model.active_counts()
    payload = {
        "run_dir": str(run),
        "checkpoint": str(ckpt),
        "active_plus": plus,
        "active_minus": minus,
        "n_terms": model.n_terms,
        "params_initial": report.params_initial,
        "params_final": report.params_final,
        "loss_total": float(report.loss_total[-1]),
        "wall_time_s": round(report.wall_time, 3),
        "skipped_steps": report.skipped_steps,
    }
    _emit(args, payload, [
        f"fit {label}: {report.iterations} iterations in {report.wall_time:.1f}s",
        f"  active terms {plus}+{minus} of {model.n_terms}"
        f"  params {report.params_initial} -> {report.params_final}",
        f"  final loss {payload['loss_total']:.4f}",
        f"  wrote {run}/checkpoint.json report.csv manifest.json",
    ])
    return 0


# ---------------------------------------------------------------------------
# eval


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    plus, minus = model.active_counts()
    payload = {
        "dim": model.dim,
        "n_terms": model.n_terms,
        "active_plus": plus,
        "active_minus": minus,
        "beta_plus": model.beta_plus,
        "beta_minus": model.beta_minus,
        "weightnorm": bool(model.weightnorm),
        "params": parameter_count(model),
    }
    text = [
        f"checkpoint {args.checkpoint}",
        f"  dim {model.dim}  terms {model.n_terms} "
        f"(active {plus}+{minus})  params {payload['params']}",
        f"  beta+ {model.beta_plus:g}  beta- {model.beta_minus:g}"
        f"  weightnorm {'on' if model.weightnorm else 'off'}",
    ]
    if args.points:
        pts = np.loadtxt(args.points, ndmin=2)
        if pts.shape[1] != model.dim:
            raise DimensionMismatch(
                f"points have {pts.shape[1]} columns, model is {model.dim}D")
        vals = batch_values(model, pts)
        payload["values"] = [float(v) for v in vals]
        text += [f"  F({', '.join('%g' % c for c in p)}) = {v!r}"
                 for p, v in zip(pts, vals)]
    _emit(args, payload, text)
    return 0


# ---------------------------------------------------------------------------
# extract


def cmd_extract(args) -> int:
    model = load_checkpoint(args.checkpoint)
    res = args.resolution if args.resolution is not None else \
        (FULL_RESOLUTION if args.paper_scale else DESK_RESOLUTION)
    run = resolve_run_dir(args.run_dir
                          or f"extract-{Path(args.checkpoint).stem}")
    inputs = {str(args.checkpoint): file_sha256(args.checkpoint)}
    outputs = []
    payload = {"mode": args.mode, "resolution": res, "run_dir": str(run)}
    text = []

    with run_lock(run):
        if args.mode == "mc":
            if model.dim == 3:
                mesh = marching_cubes_field(model, res)
                out = write_mesh_obj(run / "surface.obj", mesh)
                outputs.append(out.name)
                payload["triangles"] = len(mesh.triangles)
                payload["vertices"] = len(mesh.vertices)
                text.append(f"marching cubes {res}^3: "
                            f"{len(mesh.vertices)} vertices, "
                            f"{len(mesh.triangles)} triangles -> {out}")
                if len(mesh.triangles) == 0:
                    print("warning: zero level set is empty", file=sys.stderr)
            else:
                grid = sample_grid(model, res)
                complex_ = marching_squares(grid)
                out = write_svg(run / "contour.svg", complex_)
                outputs.append(out.name)
                payload["segments"] = len(complex_.cells)
                text.append(f"marching squares {res}^2: "
                            f"{len(complex_.cells)} segments -> {out}")
                if not complex_.cells:
                    print("warning: zero level set is empty", file=sys.stderr)
        else:
            complex_ = extract_tropical(model)
            payload["diagnostics"] = complex_.diagnostics
            active = complex_.active_cells()
            payload["facets"] = len(active)
            if model.dim == 3:
                out, labels = write_complex_obj(run / "tropical.obj", complex_)
                outputs += [out.name, labels.name]
                text.append(f"tropical extraction: {len(active)} facets -> "
                            f"{out} (+{labels.name})")
            else:
                out = write_svg(run / "tropical.svg", complex_)
                outputs.append(out.name)
                text.append(f"tropical extraction: {len(active)} segments -> {out}")
            if not active:
                print("warning: tropical zero set is empty", file=sys.stderr)
        RunManifest(command="extract",
                    config={"mode": args.mode, "resolution": res,
                            "checkpoint": str(args.checkpoint)},
                    inputs=inputs, outputs=outputs).save(run / "manifest.json")
    _emit(args, payload, text)
    return 0


# ---------------------------------------------------------------------------
# construct


def _oracle_for(kind: str, shape: str, radius: float):
    dim = 3 if kind == "grid3" else 2
    allowed = {2: ("circle", "square", "none"),
               3: ("sphere", "torus", "none")}[dim]
    if shape not in allowed:
        raise ValueError(f"shape {shape!r} does not fit {kind}; "
                         f"choose from {allowed}")
    return make_oracle(shape, r=radius, a=radius)


def _cell_fill_polygons(complex_, color: str = "#44546a"):
    """Convex interior-cell polygons for the SVG renderer.

    Each cell's vertices are the pairwise halfspace intersections that
    satisfy every constraint; angle sorting around their mean gives the
    loop order.
    """
    fills = []
    for cell in complex_.interior_cells:
        H = np.asarray(cell.halfspaces, dtype=np.float64)
        tol = 1e-9 * (1.0 + np.linalg.norm(H[:, :2], axis=1))
        pts = []
        for i in range(len(H)):
            for j in range(i + 1, len(H)):
                u = H[[i, j], :2]
                det = u[0, 0] * u[1, 1] - u[0, 1] * u[1, 0]
                if abs(det) < 1e-14:
                    continue
                x = np.linalg.solve(u, -H[[i, j], 2])
                if np.all(H[:, :2] @ x + H[:, 2] <= tol):
                    pts.append(x)
        if len(pts) < 3:
            continue
        P = np.unique(np.round(np.asarray(pts), 12), axis=0)
        if len(P) < 3:
            continue
        ctr = P.mean(axis=0)
        order = np.argsort(np.arctan2(P[:, 1] - ctr[1], P[:, 0] - ctr[0]))
        fills.append((P[order], color))
    return fills


def cmd_construct(args) -> int:
    kind = args.kind
    shape = args.shape or ("sphere" if kind == "grid3" else "circle")
    oracle = _oracle_for(kind, shape, args.radius)
    if kind == "grid2":
        model = digital_curve_grid(args.N, oracle)
    elif kind == "hex2":
        model = digital_curve_hex(args.N, oracle)
    else:
        model = digital_surface_grid(args.N, oracle)

    run = resolve_run_dir(args.run_dir or f"construct-{kind}-N{args.N}")
    outputs = []
    payload = {"kind": kind, "shape": shape, "N": args.N,
               "n_terms": model.n_terms, "run_dir": str(run)}
    text = [f"{kind} N={args.N} {shape}: {model.n_terms} terms"]
    with run_lock(run):
        ckpt = save_checkpoint(model, run / "checkpoint.json")
        outputs.append(ckpt.name)
        if args.render:
            complex_ = extract_tropical(model)
            payload["facets"] = len(complex_.active_cells())
            payload["diagnostics"] = complex_.diagnostics
            if model.dim == 2:
                out = write_svg(run / "render.svg", complex_,
                                fills=_cell_fill_polygons(complex_))
            else:
                out, labels = write_complex_obj(run / "render.obj", complex_)
                outputs.append(labels.name)
            outputs.append(out.name)
            text.append(f"  render: {payload['facets']} facets -> {out}")
        RunManifest(command="construct",
                    config={"kind": kind, "shape": shape, "N": args.N,
                            "radius": args.radius, "render": bool(args.render)},
                    outputs=outputs).save(run / "manifest.json")
    text.append(f"  wrote {ckpt}")
    _emit(args, payload, text)
    return 0


# ---------------------------------------------------------------------------
# metrics


def _candidate_points(spec: str, n: int, seed: int, resolution: int):
    """Sample points off a mesh path, builtin, or fitted checkpoint."""
    if spec in BUILTIN_SHAPES:
        return sample_mesh_surface(_builtin_mesh(spec), n, seed).points, None, {}
    path = Path(spec)
    inputs = {str(path): file_sha256(path)}
    if path.suffix.lower() == ".json":
        model = load_checkpoint(path)
        if model.dim != 3:
            raise UnsupportedFormat("metrics needs a 3D checkpoint")
        mesh = marching_cubes_field(model, resolution)
        if len(mesh.triangles) == 0:
            raise EmptyInput("checkpoint has an empty zero level set")
        return (sample_mesh_surface(mesh, n, seed).points,
                parameter_count(model), inputs)
    mesh, _ = load_mesh(path)
    return sample_mesh_surface(mesh, n, seed).points, None, inputs


def cmd_metrics(args) -> int:
    n = args.samples if args.samples is not None else \
        (FULL_METRIC_SAMPLES if args.paper_scale else DESK_METRIC_SAMPLES)
    res = args.resolution if args.resolution is not None else \
        (FULL_RESOLUTION if args.paper_scale else DESK_RESOLUTION)
    seed = args.seed or 0
    gt_pts, _, gt_inputs = _candidate_points(args.gt, n, seed, res)
    cand_pts, params, cand_inputs = _candidate_points(args.candidate, n,
                                                      seed, res)
    report = compare_point_sets(cand_pts, gt_pts, cutoff=args.cutoff,
                                sample_count=n, seed=seed)
    ch, hd, fs = report.row()
    payload = {"chamfer_x1e3": ch, "hausdorff_x1e2": hd, "fscore": fs,
               "samples": n, "cutoff": args.cutoff, "params": params}
    if args.run_dir:
        run = resolve_run_dir(args.run_dir)
        with run_lock(run):
            csv = write_metrics_csv(report, run / "metrics.csv")
            RunManifest(command="metrics",
                        config={"gt": args.gt, "candidate": args.candidate,
                                "samples": n, "cutoff": args.cutoff,
                                "resolution": res},
                        inputs={**gt_inputs, **cand_inputs},
                        seeds={"sampling": seed},
                        outputs=[csv.name]).save(run / "manifest.json")
        payload["run_dir"] = str(run)
    _emit(args, payload, report.format_text(params))
    return 0


# ---------------------------------------------------------------------------
# demo


def cmd_demo(args) -> int:
    seed = args.seed or 0
    root = resolve_run_dir(args.run_dir or "demo")
    say = (lambda s: None) if args.json else print

    with run_lock(root):
        # explicit constructions of a disk, three ways
        cdir = root / "construct"
        cdir.mkdir(exist_ok=True)
        circle_ref = _circle_points(radius=0.5, count=8192)
        construct_summary = {}
        for kind, builder in (("grid2", digital_curve_grid),
                              ("hex2", digital_curve_hex)):
            model = builder(10, make_oracle("circle", r=0.5))
            save_checkpoint(model, cdir / f"{kind}.json")
            complex_ = extract_tropical(model)
            write_svg(cdir / f"{kind}.svg", complex_,
                      fills=_cell_fill_polygons(complex_))
            pts = sample_segments(complex_.segments_array(), 0.005)
            hd = _hausdorff(pts, circle_ref)
            construct_summary[f"{kind}_hausdorff"] = hd
            say(f"construct {kind} N=10: {len(complex_.active_cells())} "
                f"segments, boundary Hausdorff vs circle {hd:.4f}")
        model3 = digital_surface_grid(5, make_oracle("sphere", r=0.5))
        save_checkpoint(model3, cdir / "grid3.json")
        complex3 = extract_tropical(model3)
        write_complex_obj(cdir / "grid3.obj", complex3)
        construct_summary["grid3_facets"] = len(complex3.active_cells())
        say(f"construct grid3 N=5: {construct_summary['grid3_facets']} facets")

        # fit a random-sampled unit sphere
        fdir = root / "fit"
        fdir.mkdir(exist_ok=True)
        config = FitConfig(rng_seed=seed)
        if args.iterations is not None:
            config = config.replace(iterations=args.iterations)
        samples = sphere_samples_random(DESK_SAMPLES, radius=1.0, seed=seed)
        say(f"fit sphere m={DESK_SAMPLES} for {config.iterations} iterations...")
        model, report, ckpt = _run_fit(fdir, samples, config, {}, "sphere")
        plus, minus = model.active_counts()
        say(f"  active {plus}+{minus} of {model.n_terms}, "
            f"params {report.params_initial} -> {report.params_final}, "
            f"wall {report.wall_time:.1f}s")

        # extract both ways
        edir = root / "extract"
        edir.mkdir(exist_ok=True)
        mesh = marching_cubes_field(model, DESK_RESOLUTION)
        write_mesh_obj(edir / "surface.obj", mesh)
        tro = extract_tropical(model)
        write_complex_obj(edir / "tropical.obj", tro)
        say(f"extract: {len(mesh.triangles)} triangles (marching cubes), "
            f"{len(tro.active_cells())} facets (tropical)")

        # score against an icosphere reference
        pred = sample_mesh_surface(mesh, DESK_METRIC_SAMPLES, seed).points
        gt = sample_mesh_surface(make_icosphere(3, radius=1.0),
                                 DESK_METRIC_SAMPLES, seed).points
        mrep = compare_point_sets(pred, gt, cutoff=FSCORE_CUTOFF,
                                  sample_count=DESK_METRIC_SAMPLES, seed=seed)
        write_metrics_csv(mrep, root / "metrics.csv")
        params = parameter_count(model)
        say("metrics: " + mrep.format_text(params))

        ch, hd, fs = mrep.row()
        summary = {
            "construct": construct_summary,
            "fit": {"active_plus": plus, "active_minus": minus,
                    "n_terms": model.n_terms,
                    "params_initial": report.params_initial,
                    "params_final": report.params_final,
                    "loss_total": float(report.loss_total[-1]),
                    "iterations": report.iterations},
            "metrics": {"chamfer_x1e3": ch, "hausdorff_x1e2": hd,
                        "fscore": fs, "params": params},
            "seed": seed,
        }
        (root / "summary.json").write_text(
            json.dumps(summary, sort_keys=True, indent=2) + "\n")
        RunManifest(command="demo",
                    config={"seed": seed, "iterations": config.iterations},
                    seeds={"rng": seed},
                    outputs=["construct", "fit", "extract",
                             "metrics.csv", "summary.json"]
                    ).save(root / "manifest.json")
    say(f"demo complete -> {root}")
    if args.json:
        print(json.dumps(summary, sort_keys=True))
    return 0


def _circle_points(radius: float, count: int) -> np.ndarray:
    th = 2.0 * np.pi * np.arange(count) / count
    return radius * np.stack([np.cos(th), np.sin(th)], axis=1)


def _hausdorff(A: np.ndarray, B: np.ndarray) -> float:
    from .metrics import hausdorff
    return hausdorff(A, B)


# ---------------------------------------------------------------------------
# parser


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="patchwork",
        description="Compact piecewise-linear shape representation toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def shared(sp):
        sp.add_argument("--seed", type=int, default=None,
                        help="seed for sampling and fitting (default 0)")
        sp.add_argument("--threads", type=int, default=None,
                        help="cap compute threads (results are identical "
                             "at any thread count)")
        sp.add_argument("--run-dir", default=None,
                        help="output directory (relative names resolve "
                             "under PATCHWORK_RUN_ROOT or ./runs)")
        sp.add_argument("--json", action="store_true",
                        help="machine-readable stdout")
        sp.add_argument("-v", "--verbose", action="store_true")

    f = sub.add_parser("fit", help="fit a model to a shape")
    f.add_argument("input", nargs="?",
                   help="mesh/cloud path or builtin: sphere, cube, torus")
    f.add_argument("-m", "--samples", type=int, default=None,
                   help="surface sample count (default 1024)")
    f.add_argument("--iterations", type=int, default=None)
    f.add_argument("--batch-size", type=int, default=None)
    f.add_argument("--lr", type=float, default=None)
    f.add_argument("--rho", type=float, default=None)
    f.add_argument("--beta", type=float, default=None)
    f.add_argument("--config", default=None, help="FitConfig JSON to start from")
    f.add_argument("--dump-config", default=None, metavar="PATH",
                   help="write the resolved FitConfig JSON")
    f.add_argument("--no-prune", action="store_true")
    f.add_argument("--no-reg", action="store_true")
    f.add_argument("--no-normal", action="store_true")
    f.add_argument("--random-init", action="store_true",
                   help="random init instead of geometric")
    f.add_argument("--paper-scale", action="store_true",
                   help="full-scale defaults (m=16384)")
    shared(f)
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("eval", help="summarize a checkpoint, evaluate points")
    e.add_argument("checkpoint")
    e.add_argument("--points", default=None,
                   help="text file of points, one per row")
    shared(e)
    e.set_defaults(func=cmd_eval)

    x = sub.add_parser("extract", help="extract the zero set of a checkpoint")
    x.add_argument("checkpoint")
    x.add_argument("--mode", choices=("mc", "tropical"), default="mc")
    x.add_argument("--resolution", type=int, default=None,
                   help="marching grid nodes per axis (default 128)")
    x.add_argument("--paper-scale", action="store_true",
                   help="full-scale resolution (512)")
    shared(x)
    x.set_defaults(func=cmd_extract)

    c = sub.add_parser("construct", help="build an explicit grid/hex model")
    c.add_argument("kind", choices=("grid2", "hex2", "grid3"))
    c.add_argument("--N", type=int, required=True, help="grid resolution")
    c.add_argument("--shape", default=None,
                   help="oracle: circle/square (2D), sphere/torus (3D), none")
    c.add_argument("--radius", type=float, default=0.5,
                   help="oracle radius / half-width")
    c.add_argument("--render", action="store_true",
                   help="also write the tropical zero set (SVG/OBJ)")
    shared(c)
    c.set_defaults(func=cmd_construct)

    m = sub.add_parser("metrics", help="compare two geometries")
    m.add_argument("gt", help="reference mesh path or builtin shape")
    m.add_argument("candidate",
                   help="mesh path, checkpoint .json, or builtin shape")
    m.add_argument("--samples", type=int, default=None,
                   help="surface samples per side (default 100000)")
    m.add_argument("--cutoff", type=float, default=FSCORE_CUTOFF,
                   help="F-score distance cutoff")
    m.add_argument("--resolution", type=int, default=None,
                   help="marching resolution for checkpoint candidates")
    m.add_argument("--paper-scale", action="store_true",
                   help="full-scale sampling (1M points, 512 marching)")
    shared(m)
    m.set_defaults(func=cmd_metrics)

    d = sub.add_parser("demo", help="construct + fit + extract + metrics")
    d.add_argument("--iterations", type=int, default=None,
                   help="fit iterations (default 10000)")
    shared(d)
    d.set_defaults(func=cmd_demo)
    return p


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.threads is not None:
        import numba
        cap = numba.config.NUMBA_NUM_THREADS
        numba.set_num_threads(max(1, min(args.threads, cap)))
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to documented exit codes
        for classes, code in _ERROR_EXITS:
            if isinstance(exc, classes):
                print(f"error: {exc}", file=sys.stderr)
                return code
        if args.verbose:
            traceback.print_exc()
        else:
            print(f"unexpected error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
