"""Forward and backward passes of the tile rasterizer."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..scene import CameraModel, GaussianGrid
from . import kernels
from .geometry import DEFAULT_BLUR


@dataclass(frozen=True)
class RenderSettings:
    alpha_cap: float = 0.99
    # contributions below this are skipped; 0 disables both the skip and box culling
    alpha_min: float = 1.0 / 255.0
    blur: float = DEFAULT_BLUR
    near: float = 0.01
    coverage_threshold: float = 1e-3
    tile: int = 16


DEFAULT_SETTINGS = RenderSettings()


@dataclass(frozen=True)
class Splats:
    """Explicit per-Gaussian arrays (the rasterizer's input)."""

    means: np.ndarray  # (N, 3) road frame
    scales: np.ndarray  # (N, 3)
    quats: np.ndarray  # (N, 4) w, x, y, z
    opacity: np.ndarray  # (N,)
    sh: np.ndarray  # (N, 4, 3)

    @classmethod
    def from_grid(cls, grid: GaussianGrid) -> "Splats":
        return cls(grid.centers(), grid.scale, grid.rotation, grid.opacity, grid.sh)

    def __len__(self) -> int:
        return self.means.shape[0]

    def permuted(self, perm: np.ndarray) -> "Splats":
        return Splats(self.means[perm], self.scales[perm], self.quats[perm],
                      self.opacity[perm], self.sh[perm])


@dataclass(frozen=True, eq=False)
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)
    depth: np.ndarray  # (H, W), expected depth over covered pixels, 0 elsewhere
    coverage: np.ndarray  # (H, W) bool


@dataclass(frozen=True)
class SplatGradients:
    sh: np.ndarray
    opacity: np.ndarray
    rotation: np.ndarray
    scale: np.ndarray
    means: np.ndarray

    @property
    def elevation(self) -> np.ndarray:
        return self.means[:, 2]


@dataclass
class _Projected:
    uv: np.ndarray
    depth: np.ndarray
    cov2d: np.ndarray
    conic: np.ndarray
    color: np.ndarray
    unclamped: np.ndarray
    box: np.ndarray
    visible: np.ndarray
    order: np.ndarray
    tile_start: np.ndarray
    pairs: np.ndarray
    tiles_x: int


def _as_splats(scene) -> Splats:
    return Splats.from_grid(scene) if isinstance(scene, GaussianGrid) else scene


def _f64(a) -> np.ndarray:
    return np.ascontiguousarray(a, dtype=np.float64)


def _project(splats: Splats, cam: CameraModel, settings: RenderSettings) -> _Projected:
    n = len(splats)
    uv = np.zeros((n, 2))
    depth = np.zeros(n)
    cov2d = np.zeros((n, 3))
    conic = np.zeros((n, 3))
    color = np.zeros((n, 3))
    unclamped = np.zeros((n, 3), dtype=np.bool_)
    box = np.zeros((n, 4), dtype=np.int64)
    visible = np.zeros(n, dtype=np.bool_)
    kernels.preprocess(
        _f64(splats.means), _f64(splats.scales), _f64(splats.quats), _f64(splats.opacity),
        _f64(splats.sh), _f64(cam.rotation), _f64(cam.translation), _f64(cam.center),
        float(cam.fx), float(cam.fy), float(cam.cx), float(cam.cy),
        int(cam.width), int(cam.height), float(settings.blur), float(settings.near),
        float(settings.alpha_min),
        uv, depth, cov2d, conic, color, unclamped, box, visible,
    )
    idx = np.flatnonzero(visible)
    # front to back by centre depth; stable sort breaks ties by source index
    order = idx[np.argsort(depth[idx], kind="stable")]
    tile = settings.tile
    tiles_x = -(-cam.width // tile)
    tiles_y = -(-cam.height // tile)
    tile_start, pairs = kernels.bin_tiles(order, box, tile, tiles_x, tiles_y)
    return _Projected(uv, depth, cov2d, conic, color, unclamped, box, visible,
                      order, tile_start, pairs, tiles_x)


def _forward(splats: Splats, cam: CameraModel, settings: RenderSettings):
    proj = _project(splats, cam, settings)
    h, w = cam.height, cam.width
    rgb = np.zeros((h, w, 3))
    trans = np.ones((h, w))
    dsum = np.zeros((h, w))
    kernels.raster_forward(
        proj.tile_start, proj.pairs, proj.uv, proj.conic, _f64(splats.opacity),
        proj.color, proj.depth, w, h, settings.tile, proj.tiles_x,
        settings.alpha_cap, settings.alpha_min, rgb, trans, dsum,
    )
    alpha = 1.0 - trans
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = np.where(alpha > 0, dsum / alpha, 0.0)
    out = RenderOutput(rgb, alpha, depth, alpha > settings.coverage_threshold)
    return out, proj


def render(scene, cam: CameraModel, settings: RenderSettings = DEFAULT_SETTINGS) -> RenderOutput:
    """Render a GaussianGrid (or explicit :class:`Splats`) from ``cam``."""
    out, _ = _forward(_as_splats(scene), cam, settings)
    return out


def _backward(splats: Splats, cam: CameraModel, proj: _Projected, d_rgb: np.ndarray,
              settings: RenderSettings) -> SplatGradients:
    n = len(splats)
    pair_grad = np.zeros((proj.pairs.shape[0], kernels.N_SLOT))
    kernels.raster_backward(
        proj.tile_start, proj.pairs, proj.uv, proj.conic, _f64(splats.opacity), proj.color,
        cam.width, cam.height, settings.tile, proj.tiles_x,
        settings.alpha_cap, settings.alpha_min, _f64(d_rgb), pair_grad,
    )
    g2d = np.zeros((n, kernels.N_SLOT))
    kernels.reduce_pairs(proj.pairs, pair_grad, g2d)
    d_means = np.zeros((n, 3))
    d_scales = np.zeros((n, 3))
    d_quats = np.zeros((n, 4))
    d_opacity = np.zeros(n)
    d_sh = np.zeros((n, 4, 3))
    kernels.gaussian_backward(
        _f64(splats.means), _f64(splats.scales), _f64(splats.quats), _f64(splats.opacity),
        _f64(splats.sh), _f64(cam.rotation), _f64(cam.translation), _f64(cam.center),
        float(cam.fx), float(cam.fy), float(settings.blur),
        proj.visible, proj.conic, proj.unclamped, g2d,
        d_means, d_scales, d_quats, d_opacity, d_sh,
    )
    return SplatGradients(d_sh, d_opacity, d_quats, d_scales, d_means)


def render_with_grad(scene, cam: CameraModel, loss_grad, settings: RenderSettings = DEFAULT_SETTINGS):
    """Forward pass, then backward with ``loss_grad(RenderOutput) -> (value, dL/dI)``."""
    splats = _as_splats(scene)
    out, proj = _forward(splats, cam, settings)
    value, d_rgb = loss_grad(out)
    return out, value, _backward(splats, cam, proj, d_rgb, settings)


def render_backward(scene, cam: CameraModel, dL_dI: np.ndarray,
                    settings: RenderSettings = DEFAULT_SETTINGS) -> SplatGradients:
    """Gradients of ``sum(dL_dI * render(scene).rgb)`` w.r.t. every Gaussian parameter."""
    dL_dI = np.asarray(dL_dI, dtype=np.float64)
    if dL_dI.shape != (cam.height, cam.width, 3):
        raise ValueError(f"adjoint shape {dL_dI.shape} != {(cam.height, cam.width, 3)}")
    splats = _as_splats(scene)
    _, proj = _forward(splats, cam, settings)
    return _backward(splats, cam, proj, dL_dI, settings)
