"""Gradient-based refinement of Gaussian grids against posed images."""

from __future__ import annotations

import dataclasses
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .objective import DegenerateSceneError, frame_loss_with_grad, psnr, ssim
from .scene import (
    CameraModel,
    ElevationMap,
    GaussianGrid,
    GridSpec,
    default_scale,
    init_gaussian_grid,
    upsample_bilinear,
    upsample_bilinear_adjoint,
)
from .splat import DEFAULT_SETTINGS, RenderSettings, render, render_with_grad

log = logging.getLogger(__name__)

GROUPS = ("sh0", "sh1", "rotation", "opacity", "elevation", "scale")


class OptimizationError(RuntimeError):
    pass


@dataclass(frozen=True)
class OptimizerConfig:
    lr_sh0: float = 0.05
    lr_sh1: float = 0.001
    lr_rotation: float = 0.001
    lr_opacity: float = 0.001
    lr_elevation: float = 0.0
    lr_scale: float = 0.0
    iterations: int = 60
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lam: float = 0.5
    divergence_factor: float = 10.0
    # fit_scene only: iterations that update texture alone before elevation unfreezes
    elevation_warmup: int = 0
    # learning rates decay geometrically to this fraction at the last iteration
    lr_final_ratio: float = 1.0

    def __post_init__(self) -> None:
        if any(self.lr(g) < 0 for g in GROUPS):
            raise ValueError("learning rates must be non-negative")
        if self.iterations < 0 or self.elevation_warmup < 0:
            raise ValueError("iterations and elevation_warmup must be non-negative")
        if not 0 < self.lr_final_ratio <= 1:
            raise ValueError("lr_final_ratio must be in (0, 1]")

    def lr(self, group: str) -> float:
        return getattr(self, f"lr_{group}")

    def lr_factor(self, iteration: int) -> float:
        if self.lr_final_ratio == 1.0 or self.iterations <= 1:
            return 1.0
        return self.lr_final_ratio ** (iteration / (self.iterations - 1))

    @classmethod
    def for_scene_fit(cls, **overrides) -> "OptimizerConfig":
        """Defaults for joint elevation + texture fitting."""
        params = dict(lr_sh0=0.05, lr_sh1=0.002, lr_rotation=0.0, lr_opacity=0.0,
                      lr_elevation=0.004, iterations=150, elevation_warmup=30,
                      lr_final_ratio=0.05)
        params.update(overrides)
        return cls(**params)


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, config: OptimizerConfig,
              lr_factor: float = 1.0):
    """One Adam update per parameter group; returns (new params, new state).

    ``lr_factor`` scales every group's learning rate (schedules).

    Groups with a zero learning rate are passed through untouched. Quaternions
    are renormalised and opacities clamped to [0, 1] after the update.
    """
    t = state.step + 1
    new_params, new_m, new_v = dict(params), dict(state.m), dict(state.v)
    b1, b2 = config.beta1, config.beta2
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        g = np.asarray(g, dtype=np.float64)
        if g.shape != np.shape(p):
            raise ValueError(f"gradient shape {g.shape} != parameter shape {np.shape(p)} for {name}")
        if not np.all(np.isfinite(g)):
            raise OptimizationError(f"non-finite gradient in parameter group {name!r}")
        m = b1 * state.m.get(name, 0.0) + (1 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1 - b2) * g * g
        new_m[name], new_v[name] = m, v
        lr = config.lr(name) * lr_factor
        if lr == 0.0:
            continue
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p = p - lr * m_hat / (np.sqrt(v_hat) + config.eps)
        if name == "rotation":
            p = p / np.linalg.norm(p, axis=-1, keepdims=True)
        elif name == "opacity":
            p = np.clip(p, 0.0, 1.0)
        new_params[name] = p
    return new_params, AdamState(t, new_m, new_v)


@dataclass
class FitTrace:
    loss: list = field(default_factory=list)
    psnr: list = field(default_factory=list)
    ssim: list = field(default_factory=list)
    ms: list = field(default_factory=list)

    def record(self, loss: float, psnr_db: float, ssim_val: float, ms: float) -> None:
        self.loss.append(float(loss))
        self.psnr.append(float(psnr_db))
        self.ssim.append(float(ssim_val))
        self.ms.append(float(ms))

    def __len__(self) -> int:
        return len(self.loss)

    def to_csv(self, timing: bool = True) -> str:
        header = "iteration,loss,psnr,ssim" + (",ms" if timing else "")
        rows = [header]
        for i in range(len(self)):
            row = f"{i},{self.loss[i]!r},{self.psnr[i]!r},{self.ssim[i]!r}"
            rows.append(row + (f",{self.ms[i]:.3f}" if timing else ""))
        return "\n".join(rows) + "\n"

    def smoothed_loss(self, window: int = 10) -> np.ndarray:
        loss = np.asarray(self.loss)
        if loss.size < window:
            return loss.copy()
        return np.convolve(loss, np.ones(window) / window, mode="valid")


def _grid_params(grid: GaussianGrid, groups) -> dict:
    source = {
        "sh0": lambda: grid.sh[:, 0, :],
        "sh1": lambda: grid.sh[:, 1:, :],
        "rotation": lambda: grid.rotation,
        "opacity": lambda: grid.opacity,
        "scale": lambda: grid.scale,
    }
    return {g: np.array(source[g]()) for g in groups}


def _apply_params(grid: GaussianGrid, params: dict) -> GaussianGrid:
    changes = {}
    if "sh0" in params or "sh1" in params:
        sh = np.array(grid.sh)
        if "sh0" in params:
            sh[:, 0, :] = params["sh0"]
        if "sh1" in params:
            sh[:, 1:, :] = params["sh1"]
        changes["sh"] = sh
    for name in ("rotation", "opacity", "scale"):
        if name in params:
            changes[name] = params[name]
    return grid.replace(**changes) if changes else grid


def _group_grads(grads, groups) -> dict:
    source = {
        "sh0": lambda: grads.sh[:, 0, :],
        "sh1": lambda: grads.sh[:, 1:, :],
        "rotation": lambda: grads.rotation,
        "opacity": lambda: grads.opacity,
        "scale": lambda: grads.scale,
        "elevation": lambda: grads.elevation,
    }
    return {g: source[g]() for g in groups}


def _eval_view(grid, view, settings):
    if view is None:
        return math.nan, math.nan
    image, cam = view
    out = render(grid, cam, settings)
    return psnr(out.rgb, image), ssim(out.rgb, image)[0]


def test_time_optimize(grid: GaussianGrid, image: np.ndarray, cam: CameraModel,
                       config: OptimizerConfig = OptimizerConfig(),
                       eval_view: tuple[np.ndarray, CameraModel] | None = None,
                       settings: RenderSettings = DEFAULT_SETTINGS):
    """Refine colour, rotation and opacity (and optionally elevation/scale) on one frame.

    ``eval_view`` is an (image, camera) pair whose PSNR/SSIM is tracked; it
    defaults to the training frame itself. Returns ``(grid, FitTrace)``.
    """
    image = np.asarray(image, dtype=np.float64)
    eval_view = (image, cam) if eval_view is None else eval_view
    groups = [g for g in GROUPS if g != "elevation" and config.lr(g) > 0]
    if config.lr_elevation > 0:
        groups.append("elevation")
    trace = FitTrace()
    state = AdamState()
    initial = None

    def loss_grad(out):
        return frame_loss_with_grad(out.rgb, image, out.coverage, config.lam)

    for it in range(config.iterations + 1):
        t0 = time.perf_counter()
        out, value, grads = render_with_grad(grid, cam, loss_grad, settings)
        if it == 0 and not out.coverage.any():
            raise DegenerateSceneError("training frame has no splatted pixels")
        if not math.isfinite(value):
            raise OptimizationError(f"non-finite loss at iteration {it}")
        if initial is None:
            initial = value
        elif value > config.divergence_factor * max(initial, 1e-12):
            raise OptimizationError(f"loss diverged at iteration {it}: {value:.4g}")
        new_grid = grid
        if it < config.iterations and groups:
            params = _grid_params(grid, [g for g in groups if g != "elevation"])
            gg = _group_grads(grads, groups)
            if "elevation" in groups:
                params["elevation"] = grid.elevation.values.ravel().copy()
            params, state = adam_step(params, gg, state, config, config.lr_factor(it))
            elev = params.pop("elevation", None)
            new_grid = _apply_params(grid, params)
            if elev is not None:
                new_grid = new_grid.with_elevation_values(elev.reshape(grid.elevation.shape))
        ms = 1000 * (time.perf_counter() - t0)
        p, s = _eval_view(grid, eval_view, settings)
        trace.record(value, p, s, ms)
        grid = new_grid
    return grid, trace


def _frames_loss(grid, frames, lam, settings):
    total = 0.0
    grads_sum = None
    covered = False
    for image, cam in frames:
        def loss_grad(out, image=image):
            return frame_loss_with_grad(out.rgb, image, out.coverage, lam)

        out, value, grads = render_with_grad(grid, cam, loss_grad, settings)
        covered |= bool(out.coverage.any())
        total += value
        if grads_sum is None:
            grads_sum = grads
        else:
            grads_sum = dataclasses.replace(
                grads_sum,
                **{k: getattr(grads_sum, k) + getattr(grads, k)
                   for k in ("sh", "opacity", "rotation", "scale", "means")},
            )
    return total, grads_sum, covered


def fit_scene(spec: GridSpec, frames, config: OptimizerConfig | None = None,
              settings: RenderSettings = DEFAULT_SETTINGS, scale=None,
              eval_view: tuple[np.ndarray, CameraModel] | None = None):
    """Jointly recover elevation and texture from posed frames.

    The elevation is optimised at geometry resolution and bilinearly upsampled
    to the Gaussian grid every iteration; texture lives at Gaussian resolution.
    Returns ``(grid, ElevationMap, FitTrace)``, the map being the fitted
    surface area-averaged back to geometry resolution.
    """
    config = OptimizerConfig.for_scene_fit() if config is None else config
    frames = [(np.asarray(img, dtype=np.float64), cam) for img, cam in frames]
    if len(frames) < 2:
        raise ValueError("fit_scene needs at least two frames; single-view geometry is ill-posed")
    eval_view = frames[0] if eval_view is None else eval_view
    nx, ny = spec.gaussian_shape
    geo_shape = spec.shape("geometry")
    coarse = np.zeros(geo_shape)
    scale = default_scale(spec) if scale is None else scale
    grid = init_gaussian_grid(spec, ElevationMap.flat(spec, "gaussian"),
                              np.zeros((nx, ny, 4, 3)), scale=scale)
    groups = [g for g in GROUPS if g != "elevation" and config.lr(g) > 0]
    trace = FitTrace()
    state = AdamState()
    initial = None
    for it in range(config.iterations + 1):
        t0 = time.perf_counter()
        grid = grid.with_elevation_values(upsample_bilinear(coarse, (nx, ny)))
        value, grads, covered = _frames_loss(grid, frames, config.lam, settings)
        if it == 0 and not covered:
            raise DegenerateSceneError("no frame sees the grid")
        if not math.isfinite(value):
            raise OptimizationError(f"non-finite loss at iteration {it}")
        if initial is None:
            initial = value
        elif value > config.divergence_factor * max(initial, 1e-12):
            raise OptimizationError(f"loss diverged at iteration {it}: {value:.4g}")
        next_grid, next_coarse = grid, coarse
        if it < config.iterations:
            params = _grid_params(grid, groups)
            gg = _group_grads(grads, groups)
            # Adam turns the weak, texture-induced elevation gradients of an
            # unfitted texture into full-size steps, so geometry waits a little
            if config.lr_elevation > 0 and it >= config.elevation_warmup:
                params["elevation"] = coarse
                gg["elevation"] = upsample_bilinear_adjoint(grads.elevation.reshape(nx, ny), geo_shape)
            params, state = adam_step(params, gg, state, config, config.lr_factor(it))
            next_coarse = np.clip(params.pop("elevation", coarse), spec.h_min_m, spec.h_max_m)
            next_grid = _apply_params(grid, params)
        ms = 1000 * (time.perf_counter() - t0)
        p, s = _eval_view(grid, eval_view, settings)
        trace.record(value, p, s, ms)
        if it % 25 == 0:
            log.debug("fit iteration %d loss %.5f", it, value)
        grid, coarse = next_grid, next_coarse
    grid = grid.with_elevation_values(upsample_bilinear(coarse, (nx, ny)))
    return grid, grid.elevation.downsample(spec, "geometry"), trace
