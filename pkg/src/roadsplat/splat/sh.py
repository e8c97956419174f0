"""Degree-1 real spherical harmonics colour model."""

from __future__ import annotations

import numpy as np

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199


def sh_raw(coeffs: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """Unclamped colour 0.5 + SH expansion. ``coeffs`` is (..., 4, 3), ``view_dir`` (..., 3)."""
    coeffs = np.asarray(coeffs, dtype=np.float64)
    d = np.asarray(view_dir, dtype=np.float64)
    dx, dy, dz = d[..., 0:1], d[..., 1:2], d[..., 2:3]
    return (
        0.5
        + SH_C0 * coeffs[..., 0, :]
        + SH_C1 * (-coeffs[..., 1, :] * dy + coeffs[..., 2, :] * dz - coeffs[..., 3, :] * dx)
    )


def eval_sh(coeffs: np.ndarray, view_dir: np.ndarray) -> np.ndarray:
    """RGB in [0, 1] for unit viewing direction(s)."""
    return np.clip(sh_raw(coeffs, view_dir), 0.0, 1.0)


def rgb_to_dc(rgb) -> np.ndarray:
    """DC coefficients that reproduce ``rgb`` when the first-order terms vanish."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0
