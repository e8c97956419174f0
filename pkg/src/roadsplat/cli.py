"""Command-line front end: ``roadsplat {gen,render,opt,fit,eval}``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import io, synth
from .fit import OptimizerConfig, fit_scene, test_time_optimize
from .objective import evaluate
from .scene import ElevationMap, GridSpec, make_grid_spec
from .splat import RenderSettings, render

log = logging.getLogger("roadsplat")

# files whose content depends on wall-clock time; left out of manifests
TIMING_FILES = ("trace.csv",)


class CliError(Exception):
    pass


def _read_json(path) -> dict:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CliError(f"{path}:{exc.lineno}:{exc.colno}: invalid JSON: {exc.msg}") from exc
    if not isinstance(data, dict):
        raise CliError(f"{path}: expected a JSON object at top level")
    return data


def _section(config: dict, name: str) -> dict:
    value = config.get(name, {})
    if not isinstance(value, dict):
        raise CliError(f"config section {name!r} must be an object")
    return value


def _build(cls, values: dict, what: str):
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise CliError(f"unknown {what} field(s): {', '.join(unknown)}")
    try:
        return cls(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad {what}: {exc}") from exc


def _grid_spec(values: dict) -> GridSpec:
    try:
        return make_grid_spec(**values)
    except (TypeError, ValueError) as exc:
        raise CliError(f"bad grid spec: {exc}") from exc


def _settings(config: dict) -> RenderSettings:
    return _build(RenderSettings, _section(config, "render"), "render setting")


def _optimizer(config: dict, args, base: dict | None = None) -> OptimizerConfig:
    values = dict(base or {})
    values.update(_section(config, "optimizer"))
    if getattr(args, "iters", None) is not None:
        values["iterations"] = args.iters
    for group in ("sh0", "sh1", "rotation", "opacity", "elevation", "scale"):
        v = getattr(args, f"lr_{group}", None)
        if v is not None:
            values[f"lr_{group}"] = v
    return _build(OptimizerConfig, values, "optimizer")


def _finish(out: Path, names: list[str]) -> None:
    io.write_manifest(out, sorted(n for n in names if n not in TIMING_FILES))


def _write_trace(out: Path, trace) -> list[str]:
    (out / "trace.csv").write_text(trace.to_csv(timing=True))
    (out / "trace_values.csv").write_text(trace.to_csv(timing=False))
    return ["trace.csv", "trace_values.csv"]


def cmd_gen(args, config: dict) -> int:
    recipe_data = dict(_section(config, "recipe"))
    spec_data = dict(_section(config, "grid"))
    if args.recipe is not None:
        data = _read_json(args.recipe)
        spec_data.update(data.pop("grid_spec", {}) or {})
        recipe_data.update(data)
    if args.seed is not None:
        recipe_data["seed"] = args.seed
    try:
        recipe = synth.SceneRecipe.from_dict(recipe_data)
    except (TypeError, ValueError) as exc:
        raise CliError(f"{args.recipe or 'recipe'}: {exc}") from exc
    spec = _grid_spec(spec_data)
    manifest = synth.write_dataset(args.out, recipe, spec, _settings(config))
    print(f"wrote dataset to {args.out} ({manifest.name})")
    return 0


def cmd_render(args, config: dict) -> int:
    grid = io.load_gaussians(args.scene)
    cam = io.load_camera(args.camera)
    t0 = time.perf_counter()
    out = render(grid, cam, _settings(config))
    ms = 1000 * (time.perf_counter() - t0)
    io.save_image(args.out, out.rgb)
    if args.alpha:
        io.save_fmap(args.alpha, out.alpha)
    if args.depth:
        io.save_fmap(args.depth, out.depth)
    line = f"render,{grid.size},{cam.width}x{cam.height},{ms:.3f}"
    if args.trace:
        Path(args.trace).write_text("op,gaussians,image,ms\n" + line + "\n")
    print(f"rendered {grid.size} Gaussians at {cam.width}x{cam.height} in {ms:.1f} ms")
    return 0


def cmd_opt(args, config: dict) -> int:
    grid = io.load_gaussians(args.scene)
    for p in (args.image, args.camera):
        if not Path(p).exists():
            raise CliError(f"frame file not found: {p}")
    image, cam = io.load_image(args.image), io.load_camera(args.camera)
    eval_view = None
    if args.eval_image or args.eval_camera:
        if not (args.eval_image and args.eval_camera):
            raise CliError("--eval-image and --eval-camera go together")
        eval_view = (io.load_image(args.eval_image), io.load_camera(args.eval_camera))
    opt = _optimizer(config, args)
    new_grid, trace = test_time_optimize(grid, image, cam, opt, eval_view, _settings(config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_gaussians(out / "scene.ggrd", new_grid)
    names = ["scene.ggrd"] + _write_trace(out, trace)
    _finish(out, names)
    print(f"loss {trace.loss[0]:.6f} -> {trace.loss[-1]:.6f} after {opt.iterations} iterations")
    return 0


def cmd_fit(args, config: dict) -> int:
    scene, frames, gt = synth.load_dataset(args.dataset)
    if len(frames) < 2:
        raise CliError(f"{args.dataset}: need at least two frames, found {len(frames)}")
    spec_data = dict(scene.get("grid_spec", {}))
    spec_data.update(_section(config, "grid"))
    spec = _grid_spec(spec_data) if spec_data else make_grid_spec()
    opt = _optimizer(config, args, dataclasses.asdict(OptimizerConfig.for_scene_fit()))
    grid, elev, trace = fit_scene(spec, frames, opt, _settings(config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    io.save_gaussians(out / "scene.ggrd", grid)
    io.save_elevation(out / "elevation.elev", elev)
    names = ["scene.ggrd", "elevation.elev"] + _write_trace(out, trace)
    if gt is not None:
        gt = ElevationMap(gt.values, gt.valid, gt.pitch_m, spec.h_min_m, spec.h_max_m)
        pred = io.load_elevation(out / "elevation.elev", spec.h_min_m, spec.h_max_m)
        report = evaluate(pred, gt)
        (out / "report.txt").write_text(report.to_text())
        names.append("report.txt")
        print(f"AAE {report.aae_cm:.3f} cm, RMSE {report.rmse_cm:.3f} cm")
    _finish(out, names)
    print(f"loss {trace.loss[0]:.6f} -> {trace.loss[-1]:.6f} after {opt.iterations} iterations")
    return 0


def cmd_eval(args, config: dict) -> int:
    pred = gt = None
    if args.pred_elevation or args.gt_elevation:
        if not (args.pred_elevation and args.gt_elevation):
            raise CliError("--pred-elevation and --gt-elevation go together")
        pred, gt = io.load_elevation(args.pred_elevation), io.load_elevation(args.gt_elevation)
    pairs = []
    if len(args.pred_images) != len(args.gt_images):
        raise CliError("--pred-images and --gt-images need the same number of files")
    for a, b in zip(args.pred_images, args.gt_images):
        pairs.append((io.load_image(a), io.load_image(b)))
    if pred is None and not pairs:
        raise CliError("nothing to evaluate: give elevation maps and/or images")
    report = evaluate(pred, gt, pairs, args.segments)
    sys.stdout.write(report.to_text())
    if args.json:
        Path(args.json).write_text(report.to_json())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="roadsplat", description=__doc__)
    parser.add_argument("--threads", type=int, default=None,
                        help="worker threads for the renderer (default: all cores)")
    parser.add_argument("--seed", type=int, default=None, help="override the scene seed")
    parser.add_argument("--config", type=Path, default=None,
                        help="JSON file with grid/render/optimizer/recipe sections; flags win")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("out", type=Path)
    p.add_argument("--recipe", type=Path, default=None, help="scene recipe JSON (default recipe if omitted)")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("render", help="render a Gaussian grid from a camera")
    p.add_argument("scene", type=Path)
    p.add_argument("camera", type=Path)
    p.add_argument("out", type=Path, help=".ppm or .png")
    p.add_argument("--alpha", type=Path, help="write accumulated opacity as .fmap")
    p.add_argument("--depth", type=Path, help="write normalised depth as .fmap")
    p.add_argument("--trace", type=Path, help="write the wall time as CSV")
    p.set_defaults(func=cmd_render)

    def add_lr_flags(q):
        q.add_argument("--iters", type=int, default=None)
        for group in ("sh0", "sh1", "rotation", "opacity", "elevation", "scale"):
            q.add_argument(f"--lr-{group}", dest=f"lr_{group}", type=float, default=None)

    p = sub.add_parser("opt", help="test-time optimisation on one frame")
    p.add_argument("scene", type=Path)
    p.add_argument("image", type=Path)
    p.add_argument("camera", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--eval-image", type=Path)
    p.add_argument("--eval-camera", type=Path)
    add_lr_flags(p)
    p.set_defaults(func=cmd_opt)

    p = sub.add_parser("fit", help="fit elevation and texture to a dataset directory")
    p.add_argument("dataset", type=Path)
    p.add_argument("out", type=Path)
    add_lr_flags(p)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("eval", help="elevation and image metrics")
    p.add_argument("--pred-elevation", type=Path)
    p.add_argument("--gt-elevation", type=Path)
    p.add_argument("--pred-images", type=Path, nargs="*", default=[])
    p.add_argument("--gt-images", type=Path, nargs="*", default=[])
    p.add_argument("--segments", type=int, default=15)
    p.add_argument("--json", type=Path, help="also write the report as JSON")
    p.set_defaults(func=cmd_eval)
    return parser


def _set_threads(n: int | None) -> None:
    if n is None:
        return
    import numba

    if n < 1:
        raise CliError("--threads must be >= 1")
    numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        _set_threads(args.threads)
        config = _read_json(args.config) if args.config else {}
        return args.func(args, config)
    except (CliError, ValueError, OSError, RuntimeError) as exc:
        print(f"roadsplat {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
