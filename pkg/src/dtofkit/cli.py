"""Command line entry point wiring the pipeline to files.

Subcommands: simulate, project, evaluate, refine, fit, rerun. Every
command records a manifest (``<out>.manifest.json``) holding the exact
argv, input hashes and output paths, sufficient to reproduce the run;
``rerun`` replays one. Exit codes: 0 success, 2 usage, 3 I/O,
4 schema or validation, 5 numeric (empty mask, degenerate fit).
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__, io
from .core import SparseDepth
from .errors import NumericError, ValidationError
from .metrics import EdgeWeightParams, error_map, evaluate, valid_mask
from .projection import project_dtof_frame
from .refine import AggregationWeights, fit_scale_shift, refine
from .simulation import SimConfig, load_profile, preprocess_hypersim, simulate_dtof

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_SCHEMA = 4
EXIT_NUMERIC = 5

DEPTH_FORMATS = ".png or .pfm"


def _load_config(args) -> SimConfig:
    if args.config:
        return SimConfig.from_dict(io.read_json(args.config))
    return load_profile(args.profile)


def _manifest_path(out_path) -> Path:
    return Path(str(out_path) + ".manifest.json")


def _write_manifest(command, args, inputs, outputs, seed, started) -> None:
    existing = [str(p) for p in inputs if p and Path(p).is_file()]
    io.write_json(_manifest_path(outputs[0]), {
        "schema_version": 1,
        "tool": {"name": "dtofkit", "version": __version__},
        "command": command,
        "argv": list(args._argv),
        "inputs": {p: io.sha256_file(p) for p in existing},
        "outputs": [str(p) for p in outputs],
        "seed": seed,
        "wall_time_s": time.perf_counter() - started,
    })


def _simulate_one(gt_path, rgb_path, materials_path, cfg, seed, frame_id,
                  out_path, stats_path, hypersim_rule):
    gt = io.read_depth_auto(gt_path)
    if hypersim_rule:
        gt = preprocess_hypersim(gt)
    rgb = io.read_rgb_png(rgb_path) if rgb_path else None
    materials = io.read_materials(materials_path) if materials_path else None
    sparse, stats = simulate_dtof(gt, rgb, cfg, seed, materials=materials, frame_id=frame_id)
    io.write_sparse_auto(out_path, sparse)
    io.write_json(stats_path, stats.to_dict())
    return sparse, stats


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    cfg = _load_config(args)
    gt_path = Path(args.gt)

    if gt_path.is_dir():
        out_dir = Path(args.out)
        out_dir.mkdir(parents=True, exist_ok=True)
        frames = sorted(p for p in gt_path.iterdir() if p.suffix.lower() in (".png", ".pfm"))
        if not frames:
            raise ValidationError(f"no depth frames (*.png, *.pfm) in {gt_path}")
        jobs = []
        for frame_id, frame in enumerate(frames):
            rgb = Path(args.rgb) / f"{frame.stem}.png" if args.rgb else None
            materials = Path(args.materials) / frame.name if args.materials else None
            out = out_dir / f"{frame.stem}.{args.format}"
            jobs.append((str(frame), str(rgb) if rgb else None,
                         str(materials) if materials else None, cfg, args.seed,
                         frame_id, str(out), str(out) + ".stats.json",
                         args.hypersim_halving))
        if args.jobs > 1:
            with ProcessPoolExecutor(max_workers=args.jobs) as pool:
                list(pool.map(_simulate_star, jobs))
        else:
            for job in jobs:
                _simulate_one(*job)
        outputs = [job[6] for job in jobs]
        _write_manifest("simulate", args, [args.gt], outputs, args.seed, started)
        print(f"simulated {len(jobs)} frames into {out_dir}")
        return EXIT_OK

    sparse, stats = _simulate_one(
        args.gt, args.rgb, args.materials, cfg, args.seed, args.frame_id,
        args.out, args.stats or str(args.out) + ".stats.json", args.hypersim_halving,
    )
    if args.figure:
        from .figures import save_sparse_depth_figure

        save_sparse_depth_figure(sparse, args.figure)
    _write_manifest("simulate", args,
                    [args.gt, args.rgb, args.materials, args.config],
                    [args.out], args.seed, started)
    print(f"{stats.candidates} candidates -> {stats.output_points} points -> {args.out}")
    return EXIT_OK


def _simulate_star(job):
    _simulate_one(*job)


def cmd_project(args) -> int:
    started = time.perf_counter()
    grid = io.read_dtof_csv(args.dtof, rows=args.grid_rows, cols=args.grid_cols)
    rig = io.read_rig_json(args.rig)
    sparse, stats = project_dtof_frame(grid, rig, args.width, args.height)
    io.write_sparse_auto(args.out, sparse)
    if args.stats:
        io.write_json(args.stats, stats.to_dict())
    if args.figure:
        from .figures import save_sparse_depth_figure

        save_sparse_depth_figure(sparse, args.figure, title="projected dToF")
    _write_manifest("project", args, [args.dtof, args.rig], [args.out], None, started)
    print(f"projected {stats.projected} points "
          f"({stats.dropped_outside} outside, {stats.dropped_behind} behind)")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    pred = io.read_depth_auto(args.pred)
    gt = io.read_depth_auto(args.gt)
    if pred.shape != gt.shape:
        raise ValidationError(f"prediction {pred.shape} and ground truth {gt.shape} differ")
    mask = pred.valid & valid_mask(gt, args.max_depth)
    report = evaluate(
        pred.data, gt.data, mask,
        params=EdgeWeightParams(kappa=args.kappa),
        literal_prefactor=args.ewmae_prefactor,
    )
    payload = {"schema_version": 1, "kappa": args.kappa, "max_depth": args.max_depth}
    payload.update(report.to_dict())
    io.write_json(args.out, payload)
    if args.error_map:
        err = error_map(pred.data, gt.data, mask)
        io.write_depth_png(args.error_map, err, mask & (err > 0))
    if args.figure:
        from .figures import save_error_map_figure

        save_error_map_figure(error_map(pred.data, gt.data, mask), mask, args.figure)
    _write_manifest("evaluate", args, [args.pred, args.gt], [args.out], None, started)
    print(f"rel={report.rel:.4f} rmse={report.rmse:.4f} d1={report.delta1:.4f} "
          f"ewmae={report.ewmae:.4f} over {report.valid_count} px -> {args.out}")
    return EXIT_OK


def cmd_refine(args) -> int:
    started = time.perf_counter()
    depth = io.read_depth_auto(args.depth)
    affinities = {}
    for path in args.affinity:
        fieldk = io.read_affinity(path)
        if fieldk.kernel_size in affinities:
            raise ValidationError(f"duplicate affinity kernel size {fieldk.kernel_size}")
        affinities[fieldk.kernel_size] = fieldk
    agg_raw = io.read_json(args.agg)
    try:
        agg = AggregationWeights(np.asarray(agg_raw["tau"]), np.asarray(agg_raw["sigma"]))
    except KeyError as exc:
        raise ValidationError(f"aggregation JSON needs 'tau' and 'sigma': {exc}") from exc
    refined = refine(depth.data, affinities, agg, iterations=args.iters)
    io.write_depth_auto(args.out, refined, refined > 0)
    _write_manifest("refine", args, [args.depth, args.agg, *args.affinity],
                    [args.out], None, started)
    print(f"refined {depth.width}x{depth.height} depth with kernels "
          f"{sorted(affinities)} -> {args.out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    started = time.perf_counter()
    if Path(args.dinv).suffix.lower() != ".pfm":
        raise ValidationError("inverse depth input must be a PFM file")
    d_inv = io.read_pfm(args.dinv)
    sparse = io.read_sparse_auto(args.sparse, width=d_inv.shape[1], height=d_inv.shape[0])
    fit = fit_scale_shift(d_inv, sparse, robust=args.robust)
    io.write_depth_auto(args.out, fit.aligned.data, fit.aligned.valid)
    report_path = args.report or str(args.out) + ".fit.json"
    io.write_json(report_path, {
        "schema_version": 1,
        "scale": fit.scale,
        "shift": fit.shift,
        "residual_rms": fit.residual_rms,
        "n_points": fit.n_points,
        "n_rejected": fit.n_rejected,
    })
    _write_manifest("fit", args, [args.dinv, args.sparse], [args.out], None, started)
    print(f"s={fit.scale:.6f} t={fit.shift:.6f} rms={fit.residual_rms:.2e} "
          f"({fit.n_points} points) -> {args.out}")
    return EXIT_OK


def cmd_rerun(args) -> int:
    manifest = io.read_json(args.manifest)
    argv = manifest.get("argv")
    if not isinstance(argv, list) or not argv:
        raise ValidationError(f"{args.manifest}: manifest holds no argv to replay")
    print(f"replaying: dtofkit {' '.join(argv)}")
    return main(argv)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtofkit",
        description="Simulate, project, evaluate and refine dToF depth data.",
    )
    parser.add_argument("--version", action="version", version=f"dtofkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="synthesize sparse dToF depth from ground truth")
    sim.add_argument("gt", help=f"ground-truth depth ({DEPTH_FORMATS}) or a directory of frames")
    sim.add_argument("--rgb", help="RGB image (PNG), or directory in batch mode")
    sim.add_argument("--materials", help="non-Lambertian probability map (PNG or PFM)")
    group = sim.add_mutually_exclusive_group(required=True)
    group.add_argument("--profile", help="built-in sensor profile: zju-l5 or phone")
    group.add_argument("--config", help="simulation config JSON")
    sim.add_argument("--seed", type=int, default=0, help="base RNG seed (u64)")
    sim.add_argument("--frame-id", type=int, default=0, help="frame index for the RNG stream")
    sim.add_argument("--out", required=True, help="output sparse depth (.png or .csv), or directory")
    sim.add_argument("--stats", help="statistics JSON path (default <out>.stats.json)")
    sim.add_argument("--figure", help="render the sparse map to a figure file")
    sim.add_argument("--format", choices=("png", "csv"), default="png",
                     help="output format in batch mode")
    sim.add_argument("--jobs", type=int, default=1, help="parallel workers in batch mode")
    sim.add_argument("--hypersim-halving", action="store_true",
                     help="halve depths of frames dominated by far range")
    sim.set_defaults(func=cmd_simulate)

    proj = sub.add_parser("project", help="project a sensor grid into a sparse depth map")
    proj.add_argument("dtof", help="sensor grid CSV (row,col,depth_m)")
    proj.add_argument("rig", help="camera rig JSON")
    proj.add_argument("--width", type=int, required=True)
    proj.add_argument("--height", type=int, required=True)
    proj.add_argument("--grid-rows", type=int, help="grid rows (default: inferred)")
    proj.add_argument("--grid-cols", type=int, help="grid cols (default: inferred)")
    proj.add_argument("--out", required=True, help="output sparse depth (.png or .csv)")
    proj.add_argument("--stats", help="projection statistics JSON")
    proj.add_argument("--figure", help="render the sparse map to a figure file")
    proj.set_defaults(func=cmd_project)

    ev = sub.add_parser("evaluate", help="compute the metric suite for a prediction")
    ev.add_argument("pred", help=f"predicted depth ({DEPTH_FORMATS})")
    ev.add_argument("gt", help=f"ground-truth depth ({DEPTH_FORMATS})")
    ev.add_argument("--max-depth", type=float, default=float("inf"),
                    help="mask out ground truth beyond this range")
    ev.add_argument("--kappa", type=float, default=0.1,
                    help="edge-weight regularization constant (m)")
    ev.add_argument("--out", required=True, help="metric report JSON")
    ev.add_argument("--error-map", help="write |error| as 16-bit PNG (mm)")
    ev.add_argument("--figure", help="render the error map to a figure file")
    ev.add_argument("--ewmae-prefactor", action="store_true",
                    help="use the literal 1/|P| prefactor in EWMAE")
    ev.set_defaults(func=cmd_evaluate)

    rf = sub.add_parser("refine", help="propagate a depth map under affinity kernels")
    rf.add_argument("depth", help=f"initial depth ({DEPTH_FORMATS})")
    rf.add_argument("--affinity", action="append", required=True,
                    help="affinity volume (raw float32 + sidecar); repeat per kernel")
    rf.add_argument("--agg", required=True, help="aggregation weights JSON {tau, sigma}")
    rf.add_argument("--iters", type=int, default=6, help="propagation iterations (even)")
    rf.add_argument("--out", required=True, help=f"refined depth ({DEPTH_FORMATS})")
    rf.set_defaults(func=cmd_refine)

    ft = sub.add_parser("fit", help="align inverse depth to sparse measurements")
    ft.add_argument("dinv", help="inverse depth map (PFM)")
    ft.add_argument("sparse", help="sparse depth (.png or .csv)")
    ft.add_argument("--out", required=True, help=f"aligned metric depth ({DEPTH_FORMATS})")
    ft.add_argument("--report", help="scale/shift JSON path (default <out>.fit.json)")
    ft.add_argument("--robust", action="store_true", help="one MAD outlier rejection pass")
    ft.set_defaults(func=cmd_fit)

    rr = sub.add_parser("rerun", help="replay a recorded manifest")
    rr.add_argument("manifest", help="manifest JSON written by a previous run")
    rr.set_defaults(func=cmd_rerun)

    return parser


def main(argv=None) -> int:
    raw_argv = list(argv) if argv is not None else sys.argv[1:]
    parser = build_parser()
    try:
        args = parser.parse_args(raw_argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    args._argv = raw_argv
    try:
        return args.func(args)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except json.JSONDecodeError as exc:
        print(f"error: malformed JSON: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
