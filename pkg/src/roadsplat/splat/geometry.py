"""Per-Gaussian projection math: 3D covariance, projection Jacobian, 2D covariance.

These are the plain (one Gaussian at a time) forms. The batched rasterizer in
:mod:`roadsplat.splat.kernels` re-implements the same math in compiled loops.
"""

from __future__ import annotations

import numpy as np

from ..scene import CameraModel

QUAT_TOLERANCE = 1e-6
DEFAULT_BLUR = 0.3


def quat_to_rotmat(q) -> np.ndarray:
    """Rotation matrix of a unit quaternion ordered (w, x, y, z)."""
    w, x, y, z = (float(v) for v in q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def world_covariance(scale, rotation) -> np.ndarray:
    """Sigma = R S S^T R^T for a unit quaternion and per-axis scales."""
    q = np.asarray(rotation, dtype=np.float64)
    if abs(np.linalg.norm(q) - 1.0) > QUAT_TOLERANCE:
        raise ValueError(f"quaternion {q} is not unit length")
    s = np.asarray(scale, dtype=np.float64)
    if np.any(s <= 0):
        raise ValueError("scales must be positive")
    m = quat_to_rotmat(q / np.linalg.norm(q)) * s
    return m @ m.T


def camera_jacobian(point_cam, cam: CameraModel) -> np.ndarray:
    """Jacobian of (u, v) w.r.t. a camera-frame point (local affine approximation)."""
    x, y, z = (float(v) for v in point_cam)
    return np.array([
        [cam.fx / z, 0.0, -cam.fx * x / (z * z)],
        [0.0, cam.fy / z, -cam.fy * y / (z * z)],
    ])


def project_covariance(cov3d, cam_rotation, jacobian, blur: float = DEFAULT_BLUR) -> np.ndarray:
    t = np.asarray(jacobian) @ np.asarray(cam_rotation)
    cov = t @ np.asarray(cov3d) @ t.T
    cov = 0.5 * (cov + cov.T)
    return cov + blur * np.eye(2)
