"""Road-surface reconstruction with grid-anchored 3D Gaussians."""

from .fit import OptimizerConfig, fit_scene, test_time_optimize
from .objective import elevation_metrics, evaluate, psnr, ssim
from .scene import CameraModel, ElevationMap, GaussianGrid, GridSpec, init_gaussian_grid, make_grid_spec
from .splat import RenderSettings, render, render_backward, render_reference
from .synth import SceneRecipe, generate_scene, make_trajectory

__version__ = "0.1.0"

__all__ = [
    "CameraModel",
    "ElevationMap",
    "GaussianGrid",
    "GridSpec",
    "OptimizerConfig",
    "RenderSettings",
    "SceneRecipe",
    "elevation_metrics",
    "evaluate",
    "fit_scene",
    "generate_scene",
    "init_gaussian_grid",
    "make_grid_spec",
    "make_trajectory",
    "psnr",
    "render",
    "render_backward",
    "render_reference",
    "ssim",
    "test_time_optimize",
]
