"""BEV feature machinery on arbitrary feature tensors.

Feature maps are (C, H, W) arrays indexed like images. BEV features are
(C, nx, ny) and voxel features (C, nx, ny, nz), matching the grid layout in
:mod:`roadsplat.scene`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import CameraModel, ElevationMap, GridSpec, Level, grid_centers


def softmax(logits: np.ndarray, axis: int) -> np.ndarray:
    shifted = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def build_anchor_voxels(spec: GridSpec) -> np.ndarray:
    """Anchor points (nx, ny, nz, 3) spanning [h_min, h_max] above each geometry cell."""
    xy = grid_centers(spec, "geometry").reshape(spec.nx_g, spec.ny_g, 2)
    zs = np.linspace(spec.h_min_m, spec.h_max_m, spec.nz_anchors)
    pts = np.empty((spec.nx_g, spec.ny_g, spec.nz_anchors, 3))
    pts[..., :2] = xy[:, :, None, :]
    pts[..., 2] = zs
    return pts


def project_points(points: np.ndarray, cam: CameraModel):
    """Pinhole projection of road-frame points.

    Returns ``(uv, depth, valid)`` where ``valid`` requires positive depth and a
    pixel position inside the image (pixel i spans [i - 0.5, i + 0.5)).
    """
    points = np.asarray(points, dtype=np.float64)
    pc = cam.to_camera(points.reshape(-1, 3))
    depth = pc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = cam.fx * pc[:, 0] / depth + cam.cx
        v = cam.fy * pc[:, 1] / depth + cam.cy
    valid = (
        (depth > 0)
        & (u >= -0.5) & (u < cam.width - 0.5)
        & (v >= -0.5) & (v < cam.height - 0.5)
    )
    uv = np.stack([u, v], axis=1)
    shape = points.shape[:-1]
    return uv.reshape(*shape, 2), depth.reshape(shape), valid.reshape(shape)


def back_project(uv: np.ndarray, depth: np.ndarray, cam: CameraModel) -> np.ndarray:
    """Inverse of :func:`project_points` for known depth."""
    uv = np.asarray(uv, dtype=np.float64)
    depth = np.asarray(depth, dtype=np.float64)
    x = (uv[..., 0] - cam.cx) / cam.fx * depth
    y = (uv[..., 1] - cam.cy) / cam.fy * depth
    pc = np.stack([x, y, depth], axis=-1)
    return (pc - cam.translation) @ cam.rotation


def sample_bilinear(fmap: np.ndarray, coords: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Bilinearly sample a (C, H, W) map at (u, v) pixel positions.

    Corners falling outside the map are clamped to the edge; masked-out points
    return zero vectors. Output shape is ``coords.shape[:-1] + (C,)``.
    """
    fmap = np.asarray(fmap, dtype=np.float64)
    c, h, w = fmap.shape
    lead = coords.shape[:-1]
    uv = coords.reshape(-1, 2)
    m = np.asarray(mask, dtype=bool).reshape(-1)
    out = np.zeros((uv.shape[0], c))
    if not m.any():
        return out.reshape(*lead, c)
    u = uv[m, 0]
    v = uv[m, 1]
    u0 = np.floor(u)
    v0 = np.floor(v)
    du = u - u0
    dv = v - v0
    u0 = u0.astype(np.int64)
    v0 = v0.astype(np.int64)
    x0 = np.clip(u0, 0, w - 1)
    x1 = np.clip(u0 + 1, 0, w - 1)
    y0 = np.clip(v0, 0, h - 1)
    y1 = np.clip(v0 + 1, 0, h - 1)
    f = fmap.transpose(1, 2, 0)
    out[m] = (
        f[y0, x0] * ((1 - du) * (1 - dv))[:, None]
        + f[y0, x1] * (du * (1 - dv))[:, None]
        + f[y1, x0] * ((1 - du) * dv)[:, None]
        + f[y1, x1] * (du * dv)[:, None]
    )
    return out.reshape(*lead, c)


@dataclass(frozen=True)
class VoxelFeature:
    features: np.ndarray  # (C, nx, ny, nz)
    logits: np.ndarray  # (nx, ny, nz)

    def __post_init__(self) -> None:
        if self.features.ndim != 4 or self.features.shape[1:] != self.logits.shape:
            raise ValueError(
                f"voxel features {self.features.shape} inconsistent with logits {self.logits.shape}"
            )


def lift_voxels(fmap: np.ndarray, cam: CameraModel, spec: GridSpec) -> tuple[np.ndarray, np.ndarray]:
    """Sample ``fmap`` at every anchor voxel; returns (C, nx, ny, nz) features and validity."""
    pts = build_anchor_voxels(spec)
    uv, _, valid = project_points(pts, cam)
    feats = sample_bilinear(fmap, uv, valid)
    return np.moveaxis(feats, -1, 0), valid


def fuse_height(vox: VoxelFeature) -> np.ndarray:
    """Collapse the anchor axis with softmax weights: (C, nx, ny, nz) -> (C, nx, ny)."""
    weights = softmax(np.asarray(vox.logits, dtype=np.float64), axis=-1)
    return np.einsum("cxyz,xyz->cxy", vox.features, weights)


def bin_values(spec: GridSpec) -> np.ndarray:
    return np.linspace(spec.h_min_m / 2, spec.h_max_m / 2, spec.nb_bins)


def decode_offsets(logits: np.ndarray, bins: np.ndarray, spec: GridSpec | None = None) -> ElevationMap:
    """Soft-argmax decoding of (N_b, nx, ny) bin logits into an offset map."""
    logits = np.asarray(logits, dtype=np.float64)
    bins = np.asarray(bins, dtype=np.float64)
    if logits.shape[0] != bins.shape[0]:
        raise ValueError(f"logits have {logits.shape[0]} channels, expected {bins.shape[0]} bins")
    offsets = np.einsum("b,bxy->xy", bins, softmax(logits, axis=0))
    lo, hi = (spec.h_min_m, spec.h_max_m) if spec else (2 * bins.min(), 2 * bins.max())
    pitch = spec.geom_interval_m if spec else 1.0
    # convex combination; guard against rounding past the extreme bins
    offsets = np.clip(offsets, bins.min(), bins.max())
    return ElevationMap(offsets, np.ones(offsets.shape, bool), pitch, min(lo, -1e-12), max(hi, 1e-12))


def scale_reference(raw: float, spec: GridSpec) -> float:
    """Map an unbounded activation to the reference height in [h_min/2, h_max/2]."""
    lo, hi = spec.h_min_m / 2, spec.h_max_m / 2
    # the affine form can round one ulp past the ends at saturation
    return float(np.clip(0.5 * (hi + lo) + 0.5 * (hi - lo) * np.tanh(raw), lo, hi))


@dataclass(frozen=True)
class ComposedElevation:
    elevation: ElevationMap
    clamped: int


def compose_elevation(ref: float, offsets: ElevationMap, spec: GridSpec) -> ComposedElevation:
    """Reference plane plus per-cell offsets, clamped into [h_min, h_max]."""
    offsets.check_level(spec, "geometry")
    raw = ref + offsets.values
    clamped = int(np.count_nonzero((raw < spec.h_min_m) | (raw > spec.h_max_m)))
    values = np.clip(raw, spec.h_min_m, spec.h_max_m)
    emap = ElevationMap(values, offsets.valid, spec.geom_interval_m, spec.h_min_m, spec.h_max_m)
    return ComposedElevation(emap, clamped)


def elevation_guided_query(fmap: np.ndarray, cam: CameraModel, spec: GridSpec,
                           elevation: ElevationMap, level: Level = "texture"):
    """Sample features once per grid cell at its (x, y, elevation) surface point.

    Returns ``(features (C, nx, ny), valid (nx, ny))``.
    """
    elevation = elevation.upsample(spec, level)
    nx, ny = spec.shape(level)
    xy = grid_centers(spec, level)
    pts = np.column_stack([xy, elevation.values.ravel()])
    uv, _, valid = project_points(pts, cam)
    feats = sample_bilinear(fmap, uv, valid)
    return feats.T.reshape(-1, nx, ny), valid.reshape(nx, ny)
