"""Command-line front end: gen | fit | deform | eval.

Every command writes its outputs plus a run manifest (config snapshot,
input/output SHA-256 hashes, tool version, wall time) into the output
directory, so runs are auditable and reproducible.  Exit codes: 0 success,
2 usage/config error, 3 data/format error, 4 numerical failure.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import asdict

import numpy as np

from . import __version__
from .errors import ConfigError, FormatError, NumericalError, ValidationError
from .field import load_checkpoint, save_checkpoint
from .flow import deform_mesh, integrate, write_trajectory_csv
from .mesh import read_obj, write_obj
from .metrics import evaluate_fit, write_eval_csv, write_eval_summary
from .svgplot import line_plot
from .training import fit, load_fit_config, write_fit_summary, write_loss_csv
from .volume import (DomainNormalizer, GrowthPattern, Volume4D,
                     make_sphere_series, read_v4d, write_v4d)

OUT_DIR_ENV = "CYCLEFLOW_OUT"


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_manifest(out_dir, command, config, seed, inputs, outputs, started):
    manifest = {
        "tool": "cycleflow",
        "version": __version__,
        "command": command,
        "config": config,
        "seed": seed,
        "inputs": {str(p): _sha256(p) for p in inputs},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "wall_time_s": time.perf_counter() - started,
    }
    path = os.path.join(out_dir, "manifest.json")
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _out_dir(args) -> str:
    os.makedirs(args.out_dir, exist_ok=True)
    return args.out_dir


# ---------------------------------------------------------------------------
# gen


def cmd_gen(args) -> int:
    started = time.perf_counter()
    if args.radius <= 0:
        raise ConfigError("--radius must be positive")
    if args.frames < 2:
        raise ConfigError("--frames must be at least 2")
    if args.grid < 2:
        raise ConfigError("--grid must be at least 2")
    if args.spacing <= 0:
        raise ConfigError("--spacing must be positive")
    if args.smoothing is not None and args.smoothing <= 0:
        raise ConfigError("--smoothing must be positive")
    try:
        pattern = GrowthPattern(args.pattern, args.radius, rate=args.rate,
                                amplitude_mm=args.amplitude)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_dir(args)
    vol, meshes = make_sphere_series(
        pattern, args.grid, args.spacing, args.frames,
        smoothing_mm=args.smoothing)
    outputs = []
    vpath = os.path.join(out, "volume.v4d")
    write_v4d(vol, vpath)
    outputs.append(vpath)
    for i, mesh in enumerate(meshes):
        mpath = os.path.join(out, f"mesh_{i:03d}.obj")
        write_obj(mesh, mpath)
        outputs.append(mpath)
    config = {
        "pattern": args.pattern, "grid": args.grid, "frames": args.frames,
        "spacing": args.spacing, "radius": args.radius, "rate": args.rate,
        "amplitude": args.amplitude, "smoothing": args.smoothing,
    }
    _write_manifest(out, "gen", config, None, [], outputs, started)
    print(f"wrote {len(outputs)} files to {out}")
    return 0


# ---------------------------------------------------------------------------
# fit


def cmd_fit(args) -> int:
    started = time.perf_counter()
    overrides = {
        "cycle_weight": args.cycle_weight,
        "epochs": args.epochs,
        "points_per_epoch": args.points,
        "learning_rate": args.learning_rate,
        "seed": args.seed,
        "omega": args.omega,
        "steps_per_frame": args.steps_per_frame,
        "sampling": args.sampling,
        "hidden_layers": args.hidden_layers,
        "hidden_width": args.hidden_width,
        "precision": args.precision,
        "time_encoding": None if args.time_encoding is None
        else args.time_encoding == "on",
        "cycle_enabled": None if args.cycle is None else args.cycle == "on",
    }
    config = load_fit_config(args.config, overrides)
    volume = read_v4d(args.volume)
    out = _out_dir(args)
    for key, val in sorted(asdict(config).items()):
        print(f"{key} = {val}")
    model, report = fit(volume, config)
    if report.cycle_weight_ignored:
        print("note: cycle_weight is ignored because cycle_enabled is off")
    ckpt = os.path.join(out, "model.ckpt")
    save_checkpoint(model, ckpt)
    report.checkpoint_path = ckpt
    loss_csv = os.path.join(out, "loss.csv")
    write_loss_csv(report, loss_csv)
    summary = os.path.join(out, "fit_summary.json")
    write_fit_summary(report, summary)
    inputs = [args.volume] + ([args.config] if args.config else [])
    _write_manifest(out, "fit", asdict(config), config.seed, inputs,
                    [ckpt, loss_csv, summary], started)
    print(f"final total loss {report.total_loss[-1]:.6g} "
          f"after {report.epochs} epochs ({report.wall_time_s:.1f}s)")
    return 0


# ---------------------------------------------------------------------------
# deform


def _parse_times(spec: str, wrap: bool):
    times = []
    for tok in spec.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            t = float(tok)
        except ValueError as exc:
            raise ConfigError(f"--times: not a number: {tok!r}") from exc
        if wrap:
            t = math.fmod(t, 1.0)
            if t < 0.0:
                t += 1.0
        elif not 0.0 <= t <= 1.0:
            raise ConfigError(
                f"--times: {t} outside [0,1]; pass --wrap for periodic wrapping")
        times.append(t)
    if not times:
        raise ConfigError("--times: no values given")
    return times


def _bounds_from_args(args) -> DomainNormalizer:
    if args.volume is not None:
        return DomainNormalizer.from_volume(read_v4d(args.volume))
    if args.bounds is not None:
        parts = [p.strip() for p in args.bounds.split(",")]
        if len(parts) != 6:
            raise ConfigError("--bounds needs 6 comma-separated numbers "
                              "(x0,y0,z0,x1,y1,z1)")
        try:
            vals = [float(p) for p in parts]
        except ValueError as exc:
            raise ConfigError(f"--bounds: {exc}") from exc
        try:
            return DomainNormalizer(vals[:3], vals[3:])
        except ValueError as exc:
            raise ConfigError(f"--bounds: {exc}") from exc
    raise ConfigError("deform needs --volume or --bounds to fix the world domain")


def cmd_deform(args) -> int:
    started = time.perf_counter()
    if args.steps < 1:
        raise ConfigError("--steps must be at least 1")
    times = _parse_times(args.times, args.wrap)
    model = load_checkpoint(args.checkpoint)
    mesh = read_obj(args.mesh)
    normalizer = _bounds_from_args(args)
    out = _out_dir(args)
    outputs = []
    for i, t in enumerate(times):
        steps = max(1, round(args.steps * t))
        deformed = deform_mesh(model, mesh, t, steps, normalizer)
        mpath = os.path.join(out, f"deformed_{i:03d}_t{t:.6f}.obj")
        write_obj(deformed, mpath)
        outputs.append(mpath)
    if args.probes > 0:
        seeds = normalizer.to_normalized(
            mesh.vertices[:: max(1, mesh.vertices.shape[0] // args.probes)])
        traj = integrate(model, seeds, 0.0, 1.0, args.steps)
        tpath = os.path.join(out, "trajectories.csv")
        write_trajectory_csv(traj, tpath, normalizer)
        outputs.append(tpath)
    inputs = [args.checkpoint, args.mesh] + ([args.volume] if args.volume else [])
    config = {"times": times, "steps": args.steps, "wrap": args.wrap,
              "probes": args.probes}
    _write_manifest(out, "deform", config, None, inputs, outputs, started)
    print(f"wrote {len(outputs)} files to {out}")
    return 0


# ---------------------------------------------------------------------------
# eval


def _load_gt_meshes(mesh_dir, n_frames):
    meshes = [None] * n_frames
    if mesh_dir is None:
        raise ConfigError("eval needs --meshes pointing at mesh_NNN.obj files")
    found = 0
    for i in range(n_frames):
        path = os.path.join(mesh_dir, f"mesh_{i:03d}.obj")
        if os.path.exists(path):
            meshes[i] = read_obj(path)
            found += 1
    if found == 0:
        raise ValidationError(f"no mesh_NNN.obj files found in {mesh_dir}")
    return meshes


def cmd_eval(args) -> int:
    started = time.perf_counter()
    model = load_checkpoint(args.checkpoint)
    volume = read_v4d(args.volume)
    meshes = _load_gt_meshes(args.meshes, volume.n_frames)
    out = _out_dir(args)
    report = evaluate_fit(model, volume, meshes,
                          steps_per_frame=args.steps_per_frame,
                          with_psnr=not args.no_psnr)
    outputs = []
    csv_path = os.path.join(out, "eval.csv")
    write_eval_csv(report, csv_path)
    outputs.append(csv_path)
    summary_path = os.path.join(out, "eval_summary.json")
    write_eval_summary(report, summary_path)
    outputs.append(summary_path)

    series = [("predicted", report.frame_times, report.volume_mm3)]
    if np.isfinite(report.gt_volume_mm3).sum() >= 2:
        keep = np.isfinite(report.gt_volume_mm3)
        series.append(("reference", report.frame_times[keep],
                       report.gt_volume_mm3[keep]))
    svg_path = os.path.join(out, "volume_curve.svg")
    line_plot(series, svg_path, title="Mesh volume over the cycle",
              xlabel="t", ylabel="volume (mm^3)")
    outputs.append(svg_path)

    if args.loss_csv:
        hist = np.genfromtxt(args.loss_csv, delimiter=",", names=True)
        loss_svg = os.path.join(out, "loss_history.svg")
        line_plot(
            [("total", hist["epoch"], hist["total_loss"]),
             ("data", hist["epoch"], hist["data_loss"]),
             ("cycle", hist["epoch"], hist["cycle_loss"])],
            loss_svg, title="Loss history", xlabel="epoch", ylabel="loss")
        outputs.append(loss_svg)

    inputs = [args.checkpoint, args.volume] + \
        ([args.loss_csv] if args.loss_csv else [])
    config = {"meshes": args.meshes, "steps_per_frame": args.steps_per_frame,
              "no_psnr": args.no_psnr}
    _write_manifest(out, "eval", config, None, inputs, outputs, started)
    print(f"mean HSD {report.mean_hsd_mm:.3f} mm, "
          f"periodicity error {report.periodicity_error_mm:.3f} mm")
    return 0


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cycleflow",
        description="Fit a periodic neural velocity field to a 4D image "
                    "sequence and deform meshes through the cycle.")
    parser.add_argument("--version", action="version",
                        version=f"cycleflow {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    out_default = os.environ.get(OUT_DIR_ENV, ".")

    p = sub.add_parser("gen", help="generate a synthetic sphere series")
    p.add_argument("--pattern", choices=("linear", "exponential", "periodic"),
                   default="periodic")
    p.add_argument("--grid", type=int, default=48, help="cubic grid size")
    p.add_argument("--frames", type=int, default=25)
    p.add_argument("--spacing", type=float, default=1.0, help="mm per voxel")
    p.add_argument("--radius", type=float, default=10.0, help="base radius mm")
    p.add_argument("--rate", type=float, default=0.3,
                   help="linear/exponential growth rate")
    p.add_argument("--amplitude", type=float, default=2.0,
                   help="sinusoid amplitude mm (periodic pattern)")
    p.add_argument("--smoothing", type=float, default=None,
                   help="boundary ramp width mm (default 2 voxels)")
    p.add_argument("--out-dir", default=out_default)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("fit", help="fit a velocity field to a volume")
    p.add_argument("volume", help="input .v4d file")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--cycle-weight", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--points", type=int, default=None,
                   help="sample points per epoch")
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--omega", type=float, default=None)
    p.add_argument("--steps-per-frame", type=int, default=None)
    p.add_argument("--sampling", choices=("uniform", "foreground", "band"),
                   default=None)
    p.add_argument("--hidden-layers", type=int, default=None)
    p.add_argument("--hidden-width", type=int, default=None)
    p.add_argument("--precision", choices=("f32", "f64"), default=None)
    p.add_argument("--time-encoding", choices=("on", "off"), default=None)
    p.add_argument("--cycle", choices=("on", "off"), default=None,
                   help="enable/disable the cycle-return penalty")
    p.add_argument("--out-dir", default=out_default)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("deform", help="advect a mesh to requested times")
    p.add_argument("checkpoint")
    p.add_argument("mesh", help="OBJ mesh at t=0")
    p.add_argument("--times", required=True,
                   help="comma-separated times in [0,1]")
    p.add_argument("--steps", type=int, default=24,
                   help="Euler steps per unit time")
    p.add_argument("--wrap", action="store_true",
                   help="wrap out-of-range times periodically")
    p.add_argument("--volume", default=None,
                   help="volume defining the world domain")
    p.add_argument("--bounds", default=None,
                   help="world bounds x0,y0,z0,x1,y1,z1 (mm)")
    p.add_argument("--probes", type=int, default=0,
                   help="also write a trajectory CSV for ~this many vertices")
    p.add_argument("--out-dir", default=out_default)
    p.set_defaults(func=cmd_deform)

    p = sub.add_parser("eval", help="score a fit against ground truth")
    p.add_argument("checkpoint")
    p.add_argument("volume", help="input .v4d file")
    p.add_argument("--meshes", default=None,
                   help="directory holding mesh_NNN.obj ground truth")
    p.add_argument("--steps-per-frame", type=int, default=1)
    p.add_argument("--no-psnr", action="store_true",
                   help="skip the warped-image PSNR (slow on big grids)")
    p.add_argument("--loss-csv", default=None,
                   help="loss history CSV to plot alongside")
    p.add_argument("--out-dir", default=out_default)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (FormatError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
