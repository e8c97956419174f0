from .geometry import camera_jacobian, project_covariance, quat_to_rotmat, world_covariance
from .reference import render_reference
from .render import (
    DEFAULT_SETTINGS,
    RenderOutput,
    RenderSettings,
    SplatGradients,
    Splats,
    render,
    render_backward,
    render_with_grad,
)
from .sh import SH_C0, SH_C1, eval_sh, rgb_to_dc

__all__ = [
    "DEFAULT_SETTINGS",
    "RenderOutput",
    "RenderSettings",
    "SH_C0",
    "SH_C1",
    "SplatGradients",
    "Splats",
    "camera_jacobian",
    "eval_sh",
    "project_covariance",
    "quat_to_rotmat",
    "render",
    "render_backward",
    "render_reference",
    "render_with_grad",
    "rgb_to_dc",
    "world_covariance",
]
