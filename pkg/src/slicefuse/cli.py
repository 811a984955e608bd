"""Command-line entry point: ``slicefuse <subcommand> ...``.

Exit codes: 0 success, 2 configuration error, 3 data error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, DataError

EXIT_CONFIG = 2
EXIT_DATA = 3


def _run_config(args):
    from .pipeline import RunConfig

    cfg = RunConfig.load(args.config).to_dict() if args.config else {}
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.n_slices is not None:
        cfg["n_slices"] = args.n_slices
    if args.noise_deg is not None:
        cfg["noise_deg"] = args.noise_deg
    if args.noise_cm is not None:
        cfg["noise_m"] = args.noise_cm / 100.0
    if args.no_camera:
        cfg["disabled_cameras"] = tuple(sorted(set(cfg.get("disabled_cameras", ())) | set(args.no_camera)))
    if getattr(args, "lidar_only", False):
        cfg["use_images"] = False
    if args.out is not None:
        cfg["out_dir"] = args.out
    return RunConfig.from_dict(cfg)


def _load_bundle(path):
    from .scene_io import SceneBundle

    return SceneBundle.load(path)


def _emit(text: str, out_dir, name: str) -> None:
    sys.stdout.write(text)
    if out_dir:
        d = Path(out_dir)
        d.mkdir(parents=True, exist_ok=True)
        (d / name).write_text(text)


def cmd_gen(args) -> int:
    from .synthetic import generate_synthetic_scene

    seed = 0 if args.seed is None else args.seed
    out = Path(args.out or "scenes")
    for k in range(args.count):
        bundle = generate_synthetic_scene(seed + k, args.n_objects)
        target = out if args.count == 1 else out / f"scene_{seed + k:04d}"
        bundle.save(target)
        print(f"{bundle.frame_id}: {len(bundle.points)} points, {len(bundle.boxes)} boxes -> {target}")
    return 0


def cmd_slice(args) -> int:
    from .scene_io import write_point_cloud
    from .slicing import assign_boxes_to_slice, slice_sweep

    bundle = _load_bundle(args.bundle)
    n = args.n_slices or 8
    out = Path(args.out or "slices")
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slice", "box", "class", "cx", "cy"])
    for sl in slice_sweep(bundle.points, n):
        write_point_cloud(sl.points, out / f"slice_{sl.spec.index:03d}.bin")
        assigned = {id(b) for b in assign_boxes_to_slice(bundle.boxes, sl.spec)}
        for i, b in enumerate(bundle.boxes):
            if id(b) in assigned:
                w.writerow([sl.spec.index, i, b.class_id, f"{b.center[0]:.6f}", f"{b.center[1]:.6f}"])
        print(f"slice {sl.spec.index}: [{sl.spec.az_start_deg:g}, {sl.spec.az_end_deg:g}) {len(sl)} points")
    (out / "assignment.csv").write_text(buf.getvalue())
    return 0


def cmd_project(args) -> int:
    from .pipeline import project_scene

    bundle = _load_bundle(args.bundle)
    cfg = _run_config(args)
    bev = project_scene(bundle, cfg)
    out = Path(args.out or "project")
    out.mkdir(parents=True, exist_ok=True)
    np.save(out / "image_bev.npy", bev.values.astype(np.float32))
    np.save(out / "image_bev_mask.npy", bev.mask)
    print(f"image BEV {bev.shape}, {int(bev.mask.sum())} cells covered -> {out}")
    return 0


def cmd_run(args) -> int:
    from .pipeline import run_pipeline

    bundle = _load_bundle(args.bundle)
    cfg = _run_config(args)
    res = run_pipeline(bundle, cfg)
    print(f"{bundle.frame_id}: {len(res.detections)} detections")
    if res.evaluation is not None:
        m = res.mean_ap
        print("mAP absent" if m is None else f"mAP {m:.4f}")
    for name, path in sorted(res.artifacts.items()):
        print(f"  {name}: {path}")
    return 0


def cmd_eval(args) -> int:
    from .detection import EvalConfig, evaluate_map, eval_report_csv, read_detections
    from .scene_io import read_scene
    from .synthetic import CLASS_NAMES, CLASSES

    dets = read_detections(args.detections)
    gts: dict = {}
    for path in args.scene:
        frame_id, boxes = read_scene(path)
        gts.setdefault(frame_id, []).extend(boxes)
    try:
        cfg = EvalConfig(tuple(args.thresholds), tuple(CLASSES))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    result = evaluate_map(dets, gts, cfg)
    _emit(eval_report_csv(result, CLASS_NAMES), args.out, "eval.csv")
    return 0


def cmd_noise_sweep(args) -> int:
    from .pipeline import NOISE_LEVELS, noise_sweep, noise_trend
    from .synthetic import generate_synthetic_scene

    cfg = _run_config(args)
    cfg = type(cfg).from_dict({**cfg.to_dict(), "out_dir": None})
    if args.bundle:
        bundles = [_load_bundle(p) for p in args.bundle]
    else:
        bundles = [generate_synthetic_scene(s, args.n_objects) for s in range(args.first_scene, args.first_scene + args.scenes)]
    if args.noise_deg is not None or args.noise_cm is not None:
        levels = ((0.0, 0.0), (cfg.noise_deg, cfg.noise_m))
    else:
        levels = NOISE_LEVELS
    rows = noise_sweep(bundles, cfg, levels)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frame_id", "noise_deg", "noise_cm", "mAP"])
    for r in rows:
        w.writerow([r["frame_id"], f"{r['noise_deg']:g}", f"{r['noise_cm']:g}", "absent" if r["mAP"] is None else f"{r['mAP']:.6f}"])
    _emit(buf.getvalue(), args.out, "noise_sweep.csv")
    trend = noise_trend(rows, levels)
    for (deg, metres), m in zip(levels, trend["means"]):
        print(f"# ({deg:g} deg, {metres * 100:g} cm): mean mAP {m:.4f}")
    print(
        f"# monotone={trend['monotone']} clean>worst {trend['wins']}/{trend['wins'] + trend['losses']}"
        f" sign-test p={trend['p_value']:.4g}"
    )
    return 0


def cmd_simulate(args) -> int:
    from .streamsim import bundled_model, compare_pipelines, load_model, simulate, summary_csv, summary_row, trace_csv

    def model(ref):
        return load_model(ref) if Path(ref).suffix == ".json" or Path(ref).exists() else bundled_model(ref)

    models = [model(m) for m in args.model]
    rows = compare_pipelines(models, args.rotations) if len(models) > 1 else [summary_row(simulate(models[0], args.rotations))]
    for r in rows:
        print(
            f"{r['model']}: {r['throughput_hz']:.1f} Hz, end-to-end mean {r['mean_e2e_ms']:.2f} ms"
            f" max {r['max_e2e_ms']:.2f} ms, wait growth {r['wait_growth_ms_per_slice']:.2f} ms/slice"
        )
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "summary.csv").write_text(summary_csv(rows))
        for m in models:
            (d / f"trace_{m.name}.csv").write_text(trace_csv(simulate(m, args.rotations)))
    return 0


def cmd_flops(args) -> int:
    from .fusion import cost_report, cost_report_csv, image_bev_conv_stage

    nx, ny, nz = args.dims
    try:
        stage = image_bev_conv_stage(args.channels, nx, ny, nz)
        rows = cost_report([stage], per_layer=not args.stage_only)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _emit(cost_report_csv(rows), args.out, "flops.csv")
    return 0


def _common(p, slices=True, noise=True):
    p.add_argument("--config", help="run configuration (JSON)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    if slices:
        p.add_argument("--n-slices", type=int, default=None)
    if noise:
        p.add_argument("--no-camera", type=int, action="append", default=[], metavar="IDX")
        p.add_argument("--noise-deg", type=float, default=None)
        p.add_argument("--noise-cm", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="slicefuse", description="Streaming LiDAR-camera fusion toolkit")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write synthetic scene bundles")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--n-objects", type=int, default=None)
    p.add_argument("--count", type=int, default=1)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("slice", help="dump per-slice point files and box assignment")
    p.add_argument("bundle")
    _common(p, noise=False)
    p.set_defaults(func=cmd_slice)

    p = sub.add_parser("project", help="splat all cameras and dump the image BEV map")
    p.add_argument("bundle")
    _common(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("run", help="full per-slice pipeline")
    p.add_argument("bundle")
    _common(p)
    p.add_argument("--lidar-only", action="store_true", help="disable the image stream")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("eval", help="mAP of a detections CSV against scene files")
    p.add_argument("detections")
    p.add_argument("scene", nargs="+")
    p.add_argument("--thresholds", type=float, nargs="+", default=[0.5, 1.0, 2.0, 4.0])
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("noise-sweep", help="mAP under calibration noise")
    p.add_argument("bundle", nargs="*", help="scene bundles (default: synthetic scenes)")
    _common(p)
    p.add_argument("--scenes", type=int, default=10)
    p.add_argument("--first-scene", type=int, default=0)
    p.add_argument("--n-objects", type=int, default=None)
    p.set_defaults(func=cmd_noise_sweep)

    p = sub.add_parser("simulate", help="streaming pipeline latency simulation")
    p.add_argument("--model", action="append", default=None, help="bundled name or model JSON (repeatable)")
    p.add_argument("--rotations", type=int, default=4)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("flops", help="3D convolution cost with and without cropping")
    p.add_argument("--channels", type=int, default=64)
    p.add_argument("--dims", type=int, nargs=3, default=[512, 512, 16], metavar=("X", "Y", "Z"))
    p.add_argument("--stage-only", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_flops)
    return parser


def main(argv=None) -> int:
    from .synthetic import DEFAULT_N_OBJECTS

    args = build_parser().parse_args(argv)
    if getattr(args, "n_objects", 0) is None:
        args.n_objects = DEFAULT_N_OBJECTS
    if args.command == "simulate" and not args.model:
        args.model = ["parallel", "sequential"]
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
