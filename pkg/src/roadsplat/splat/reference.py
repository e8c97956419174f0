"""Naive double-precision renderer used as an oracle.

Every pixel composites every sorted Gaussian; there is no tiling and no
bounding-box culling. Projection goes through the one-at-a-time helpers in
:mod:`roadsplat.splat.geometry` and :mod:`roadsplat.splat.sh`.
"""

from __future__ import annotations

import numpy as np

from ..scene import CameraModel
from .geometry import camera_jacobian, project_covariance, world_covariance
from .render import DEFAULT_SETTINGS, RenderOutput, RenderSettings, _as_splats
from .sh import eval_sh


def project_all(splats, cam: CameraModel, settings: RenderSettings):
    keep, uv, conic, colors, depths = [], [], [], [], []
    campos = cam.center
    for i in range(len(splats)):
        mean = splats.means[i]
        pc = cam.to_camera(mean)
        if pc[2] <= settings.near:
            continue
        cov3 = world_covariance(splats.scales[i], splats.quats[i])
        cov2 = project_covariance(cov3, cam.rotation, camera_jacobian(pc, cam), settings.blur)
        det = cov2[0, 0] * cov2[1, 1] - cov2[0, 1] ** 2
        if det <= 0:
            continue
        view = mean - campos
        keep.append(i)
        uv.append((cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy))
        conic.append(np.linalg.inv(cov2))
        colors.append(eval_sh(splats.sh[i], view / np.linalg.norm(view)))
        depths.append(pc[2])
    keep = np.array(keep, dtype=np.int64)
    depths = np.array(depths)
    order = np.lexsort((keep, depths))
    return (keep[order], np.array(uv).reshape(-1, 2)[order],
            np.array(conic).reshape(-1, 2, 2)[order],
            np.array(colors).reshape(-1, 3)[order], depths[order])


def composite_pixels(pix: np.ndarray, uv, conic, opacity, colors, depths,
                     settings: RenderSettings, batch: int = 256):
    """Composite the sorted Gaussians at pixel positions ``pix`` (P, 2) -> rgb, alpha, depth sums."""
    n_pix = pix.shape[0]
    rgb = np.zeros((n_pix, 3))
    trans = np.ones(n_pix)
    dsum = np.zeros(n_pix)
    if uv.shape[0] == 0:
        return rgb, 1.0 - trans, dsum
    for s in range(0, n_pix, batch):
        p = pix[s:s + batch]
        d = p[:, None, :] - uv[None, :, :]
        q = np.einsum("pni,nij,pnj->pn", d, conic, d)
        a = np.minimum(settings.alpha_cap, opacity[None, :] * np.exp(-0.5 * q))
        a = np.where(a < settings.alpha_min, 0.0, a)
        t_excl = np.cumprod(np.concatenate([np.ones((len(p), 1)), 1.0 - a[:, :-1]], axis=1), axis=1)
        w = a * t_excl
        rgb[s:s + batch] = w @ colors
        dsum[s:s + batch] = w @ depths
        trans[s:s + batch] = t_excl[:, -1] * (1.0 - a[:, -1])
    return rgb, 1.0 - trans, dsum


def render_reference(scene, cam: CameraModel, settings: RenderSettings = DEFAULT_SETTINGS,
                     pixels: np.ndarray | None = None):
    """Render with the naive oracle.

    With ``pixels`` (P, 2) of integer (x, y) positions only those pixels are
    evaluated and ``(rgb (P, 3), alpha (P,))`` is returned instead of a full
    :class:`RenderOutput`.
    """
    splats = _as_splats(scene)
    idx, uv, conic, colors, depths = project_all(splats, cam, settings)
    opacity = np.asarray(splats.opacity, dtype=np.float64)[idx]
    if pixels is not None:
        rgb, alpha, _ = composite_pixels(np.asarray(pixels, dtype=np.float64), uv, conic,
                                         opacity, colors, depths, settings)
        return rgb, alpha
    ys, xs = np.mgrid[0:cam.height, 0:cam.width]
    pix = np.column_stack([xs.ravel(), ys.ravel()]).astype(np.float64)
    rgb, alpha, dsum = composite_pixels(pix, uv, conic, opacity, colors, depths, settings)
    h, w = cam.height, cam.width
    alpha = alpha.reshape(h, w)
    with np.errstate(divide="ignore", invalid="ignore"):
        depth = np.where(alpha > 0, dsum.reshape(h, w) / alpha, 0.0)
    return RenderOutput(rgb.reshape(h, w, 3), alpha, depth, alpha > settings.coverage_threshold)
