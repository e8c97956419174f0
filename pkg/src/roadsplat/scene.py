"""Core domain types: grid geometry, elevation maps, cameras and Gaussian grids.

Conventions
-----------
Road frame: x lateral (right positive), y longitudinal (forward positive), z up.
The elevation reference plane is z = 0.

Camera frame: x right, y down, z forward (optical axis). ``pose`` maps road
coordinates to camera coordinates, ``p_cam = R @ p_world + t``.

Grid arrays are indexed ``[ix, iy]`` (lateral first), so a grid with
``nx`` lateral and ``ny`` longitudinal cells has shape ``(nx, ny)``.
Pixel centers sit at integer pixel coordinates.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

Level = Literal["geometry", "texture", "gaussian"]

SH_BASIS = 4  # (L + 1)^2 with L = 1
DEFAULT_SCALE = (0.002, 0.002, 0.002)
DEFAULT_OPACITY = 1.0


class GridSpecError(ValueError):
    """Raised for inconsistent grid configurations."""


@dataclass(frozen=True)
class GridSpec:
    roi_width_m: float = 1.9
    roi_length_m: float = 5.0
    roi_start_m: float = 0.3
    geom_interval_m: float = 0.03
    nx_g: int = 64
    ny_g: int = 164
    texture_factor: int = 4
    gaussian_factor: int = 2
    h_min_m: float = -0.20
    h_max_m: float = 0.20
    nz_anchors: int = 20
    nb_bins: int = 40

    # the default 164 x 3 cm rows cover 4.92 m of a nominal 5.0 m ROI
    extent_tolerance_pitches: float = 3.0

    def __post_init__(self) -> None:
        problems = []
        if self.geom_interval_m <= 0:
            problems.append("geom_interval_m must be positive")
        if self.roi_width_m <= 0 or self.roi_length_m <= 0:
            problems.append("roi_width_m/roi_length_m must be positive")
        if self.nx_g < 1 or self.ny_g < 1:
            problems.append("nx_g/ny_g must be >= 1")
        if self.texture_factor < 1 or self.gaussian_factor < 1:
            problems.append("texture_factor/gaussian_factor must be >= 1")
        if not self.h_min_m < 0 < self.h_max_m:
            problems.append("h_min_m < 0 < h_max_m required")
        if self.nz_anchors < 2:
            problems.append("nz_anchors must be >= 2")
        if self.nb_bins < 2:
            problems.append("nb_bins must be >= 2")
        if problems:
            raise GridSpecError("; ".join(problems))
        tol = self.extent_tolerance_pitches * self.geom_interval_m + 1e-9
        if abs(self.nx_g * self.geom_interval_m - self.roi_width_m) > tol:
            raise GridSpecError(
                f"nx_g={self.nx_g} x geom_interval_m={self.geom_interval_m} "
                f"does not cover roi_width_m={self.roi_width_m}"
            )
        if abs(self.ny_g * self.geom_interval_m - self.roi_length_m) > tol:
            raise GridSpecError(
                f"ny_g={self.ny_g} x geom_interval_m={self.geom_interval_m} "
                f"does not cover roi_length_m={self.roi_length_m}"
            )

    @property
    def texture_shape(self) -> tuple[int, int]:
        return (self.nx_g * self.texture_factor, self.ny_g * self.texture_factor)

    @property
    def gaussian_shape(self) -> tuple[int, int]:
        tx, ty = self.texture_shape
        return (tx * self.gaussian_factor, ty * self.gaussian_factor)

    def shape(self, level: Level) -> tuple[int, int]:
        if level == "geometry":
            return (self.nx_g, self.ny_g)
        if level == "texture":
            return self.texture_shape
        if level == "gaussian":
            return self.gaussian_shape
        raise ValueError(f"unknown grid level {level!r}")

    def pitch(self, level: Level) -> float:
        factor = {"geometry": 1, "texture": self.texture_factor,
                  "gaussian": self.texture_factor * self.gaussian_factor}[level]
        return self.geom_interval_m / factor

    def level_of(self, shape: tuple[int, int]) -> Level:
        for level in ("geometry", "texture", "gaussian"):
            if tuple(shape) == self.shape(level):
                return level  # type: ignore[return-value]
        raise ValueError(f"shape {shape} matches no level of {self}")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_GEOMETRY_FIELDS = {"roi_width_m", "roi_length_m", "geom_interval_m"}


def make_grid_spec(**overrides) -> GridSpec:
    """Build a validated GridSpec.

    Defaults reproduce the reference road configuration (3 cm pitch, 64 x 164
    geometry cells). When the ROI or pitch is overridden without explicit
    counts, the counts are re-derived as ``round(extent / pitch)``; overriding
    only the counts sets the extents to ``count * pitch``.
    """
    unknown = set(overrides) - {f.name for f in dataclasses.fields(GridSpec)}
    if unknown:
        raise GridSpecError(f"unknown GridSpec fields: {sorted(unknown)}")
    params = dict(overrides)
    if _GEOMETRY_FIELDS & set(params):
        base = GridSpec.__dataclass_fields__
        pitch = params.get("geom_interval_m", base["geom_interval_m"].default)
        if pitch <= 0:
            raise GridSpecError("geom_interval_m must be positive")
        width = params.get("roi_width_m", base["roi_width_m"].default)
        length = params.get("roi_length_m", base["roi_length_m"].default)
        params.setdefault("nx_g", max(1, int(round(width / pitch))))
        params.setdefault("ny_g", max(1, int(round(length / pitch))))
    elif {"nx_g", "ny_g"} & set(params):
        pitch = GridSpec.__dataclass_fields__["geom_interval_m"].default
        if "nx_g" in params:
            params["roi_width_m"] = params["nx_g"] * pitch
        if "ny_g" in params:
            params["roi_length_m"] = params["ny_g"] * pitch
    return GridSpec(**params)


def grid_centers(spec: GridSpec, level: Level = "geometry") -> np.ndarray:
    """Cell-center (x, y) positions, shape (nx * ny, 2), row-major over [ix, iy]."""
    nx, ny = spec.shape(level)
    pitch = spec.pitch(level)
    xs = -0.5 * spec.nx_g * spec.geom_interval_m + (np.arange(nx) + 0.5) * pitch
    ys = spec.roi_start_m + (np.arange(ny) + 0.5) * pitch
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _interp_matrix(n_in: int, n_out: int) -> np.ndarray:
    # half-pixel aligned linear interpolation, edge clamped
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    w = pos - lo
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - w)
    np.add.at(m, (rows, hi), w)
    return m


def _check_factor(n_in: int, n_out: int) -> None:
    if n_out < n_in or n_out % n_in:
        raise ValueError(f"cannot upsample {n_in} -> {n_out}: factor must be an integer")


def upsample_bilinear(grid_2d: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Bilinear upsampling by integer factors with half-pixel alignment."""
    grid_2d = np.asarray(grid_2d, dtype=np.float64)
    (ax, ay), (bx, by) = grid_2d.shape, target
    _check_factor(ax, bx)
    _check_factor(ay, by)
    return _interp_matrix(ax, bx) @ grid_2d @ _interp_matrix(ay, by).T


def upsample_bilinear_adjoint(grad: np.ndarray, source: tuple[int, int]) -> np.ndarray:
    """Transpose of :func:`upsample_bilinear`; maps fine-grid gradients back."""
    bx, by = grad.shape
    ax, ay = source
    _check_factor(ax, bx)
    _check_factor(ay, by)
    return _interp_matrix(ax, bx).T @ grad @ _interp_matrix(ay, by)


def downsample_area(grid_2d: np.ndarray, target: tuple[int, int]) -> np.ndarray:
    """Block-average a fine grid down by integer factors."""
    (bx, by), (ax, ay) = grid_2d.shape, target
    _check_factor(ax, bx)
    _check_factor(ay, by)
    fx, fy = bx // ax, by // ay
    return np.asarray(grid_2d, dtype=np.float64).reshape(ax, fx, ay, fy).mean(axis=(1, 3))


@dataclass(frozen=True, eq=False)
class ElevationMap:
    """Elevation values (meters) on one grid level, with a validity mask."""

    values: np.ndarray
    valid: np.ndarray
    pitch_m: float
    h_min_m: float = -0.20
    h_max_m: float = 0.20

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=np.float64)
        valid = np.array(self.valid, dtype=bool)
        if values.ndim != 2 or values.shape != valid.shape:
            raise ValueError(f"values {values.shape} and mask {valid.shape} must be equal 2D shapes")
        v = values[valid]
        if v.size and (v.min() < self.h_min_m - 1e-6 or v.max() > self.h_max_m + 1e-6):
            raise ValueError(
                f"elevation outside [{self.h_min_m}, {self.h_max_m}]: "
                f"range [{v.min():.4f}, {v.max():.4f}]"
            )
        values.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @classmethod
    def for_spec(cls, spec: GridSpec, values, level: Level = "geometry",
                 valid=None) -> "ElevationMap":
        values = np.asarray(values, dtype=np.float64)
        if values.shape != spec.shape(level):
            raise ValueError(f"elevation shape {values.shape} != {level} shape {spec.shape(level)}")
        if valid is None:
            valid = np.ones(values.shape, dtype=bool)
        return cls(values, valid, spec.pitch(level), spec.h_min_m, spec.h_max_m)

    @classmethod
    def flat(cls, spec: GridSpec, level: Level = "geometry", height: float = 0.0) -> "ElevationMap":
        return cls.for_spec(spec, np.full(spec.shape(level), height), level)

    def check_level(self, spec: GridSpec, level: Level) -> None:
        if self.shape != spec.shape(level):
            raise ValueError(f"elevation shape {self.shape} != {level} shape {spec.shape(level)}")

    def upsample(self, spec: GridSpec, level: Level) -> "ElevationMap":
        target = spec.shape(level)
        if self.shape == target:
            return self
        values = upsample_bilinear(self.values, target)
        valid = upsample_bilinear(self.valid.astype(float), target) > 0.999
        return ElevationMap(values, valid, spec.pitch(level), self.h_min_m, self.h_max_m)

    def downsample(self, spec: GridSpec, level: Level = "geometry") -> "ElevationMap":
        target = spec.shape(level)
        values = downsample_area(self.values, target)
        valid = downsample_area(self.valid.astype(float), target) > 0.999
        return ElevationMap(values, valid, spec.pitch(level), self.h_min_m, self.h_max_m)


def _as_pose(rotation, translation) -> tuple[np.ndarray, np.ndarray]:
    r = np.array(rotation, dtype=np.float64).reshape(3, 3)
    t = np.array(translation, dtype=np.float64).reshape(3)
    return r, t


@dataclass(frozen=True, eq=False)
class CameraModel:
    """Pinhole camera with a world-to-camera rigid pose."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError(f"image size must be positive, got {self.width}x{self.height}")
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")
        r, t = _as_pose(self.rotation, self.translation)
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(r) - 1.0) > 1e-9:
            raise ValueError("pose rotation must be orthonormal with det +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @property
    def center(self) -> np.ndarray:
        """Camera position in the road frame."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation

    def with_pose(self, rotation, translation) -> "CameraModel":
        return dataclasses.replace(self, rotation=rotation, translation=translation)

    def same_as(self, other: "CameraModel") -> bool:
        return (
            (self.fx, self.fy, self.cx, self.cy, self.width, self.height)
            == (other.fx, other.fy, other.cx, other.cy, other.width, other.height)
            and np.array_equal(self.rotation, other.rotation)
            and np.array_equal(self.translation, other.translation)
        )


def look_down_pose(position, pitch: float) -> tuple[np.ndarray, np.ndarray]:
    """World-to-camera pose for a camera at ``position`` facing +y, pitched down by ``pitch``."""
    c, s = np.cos(pitch), np.sin(pitch)
    r = np.array([
        [1.0, 0.0, 0.0],
        [0.0, -s, -c],
        [0.0, c, -s],
    ])
    t = -r @ np.asarray(position, dtype=np.float64)
    return r, t


def _validate_gaussian_arrays(n: int, sh, scale, rotation, opacity) -> None:
    if sh.shape != (n, SH_BASIS, 3):
        raise ValueError(f"sh must have shape {(n, SH_BASIS, 3)}, got {sh.shape}")
    if scale.shape != (n, 3) or not np.all(scale > 0):
        raise ValueError("scales must be strictly positive with shape (N, 3)")
    if rotation.shape != (n, 4):
        raise ValueError(f"rotation must have shape {(n, 4)}, got {rotation.shape}")
    if np.abs(np.linalg.norm(rotation, axis=1) - 1.0).max(initial=0.0) > 1e-6:
        raise ValueError("rotations must be unit quaternions (tolerance 1e-6)")
    if opacity.shape != (n,) or opacity.min(initial=0.0) < 0 or opacity.max(initial=0.0) > 1:
        raise ValueError("opacities must lie in [0, 1] with shape (N,)")


@dataclass(frozen=True, eq=False)
class GaussianGrid:
    """Splattable road scene: one Gaussian per cell of the Gaussian-level lattice.

    Per-Gaussian arrays are flattened row-major over ``[ix, iy]``:
    ``sh`` is (N, 4, 3) (basis, channel), ``scale`` (N, 3), ``rotation`` (N, 4)
    as (w, x, y, z) quaternions and ``opacity`` (N,).
    """

    spec: GridSpec
    elevation: ElevationMap
    sh: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: np.ndarray

    def __post_init__(self) -> None:
        self.elevation.check_level(self.spec, "gaussian")
        n = self.size
        arrays = {}
        for name in ("sh", "scale", "rotation", "opacity"):
            a = np.array(getattr(self, name), dtype=np.float64)
            a.setflags(write=False)
            arrays[name] = a
            object.__setattr__(self, name, a)
        _validate_gaussian_arrays(n, **arrays)

    @property
    def size(self) -> int:
        nx, ny = self.spec.gaussian_shape
        return nx * ny

    def centers(self) -> np.ndarray:
        xy = grid_centers(self.spec, "gaussian")
        return np.column_stack([xy, self.elevation.values.ravel()])

    def replace(self, **changes) -> "GaussianGrid":
        return dataclasses.replace(self, **changes)

    def with_elevation_values(self, values: np.ndarray) -> "GaussianGrid":
        lo, hi = self.spec.h_min_m, self.spec.h_max_m
        elev = ElevationMap(np.clip(values, lo, hi), self.elevation.valid,
                            self.elevation.pitch_m, lo, hi)
        return self.replace(elevation=elev)

    def quantized(self) -> "GaussianGrid":
        """Copy with every parameter rounded through float32 (the on-disk precision)."""
        def q(a):
            return np.asarray(a, dtype=np.float32).astype(np.float64)
        rot = q(self.rotation)
        elev = ElevationMap(q(self.elevation.values), self.elevation.valid,
                            self.elevation.pitch_m, self.elevation.h_min_m,
                            self.elevation.h_max_m)
        return GaussianGrid(self.spec, elev, q(self.sh), q(self.scale), rot,
                            np.clip(q(self.opacity), 0.0, 1.0))

    def equals(self, other: "GaussianGrid") -> bool:
        return (
            self.spec == other.spec
            and np.array_equal(self.elevation.values, other.elevation.values)
            and np.array_equal(self.elevation.valid, other.elevation.valid)
            and all(np.array_equal(getattr(self, k), getattr(other, k))
                    for k in ("sh", "scale", "rotation", "opacity"))
        )


def default_scale(spec: GridSpec) -> tuple[float, float, float]:
    """DEFAULT_SCALE carried over to ``spec`` at the same ratio to the Gaussian pitch.

    The default grid (3.75 mm Gaussian pitch) gets exactly DEFAULT_SCALE.
    """
    ref = GridSpec()
    ratio = spec.pitch("gaussian") / ref.pitch("gaussian")
    if abs(ratio - 1.0) < 1e-12:
        return DEFAULT_SCALE
    return tuple(s * ratio for s in DEFAULT_SCALE)


def init_gaussian_grid(spec: GridSpec, elevation: ElevationMap, sh: np.ndarray,
                       scale=DEFAULT_SCALE, opacity: float = DEFAULT_OPACITY) -> GaussianGrid:
    """Place one Gaussian per Gaussian-level cell, centered at (x, y, elevation).

    ``sh`` is a coefficient grid of shape (nx, ny, 4, 3) or already flattened
    to (N, 4, 3). Rotations start at identity.
    """
    elevation.check_level(spec, "gaussian")
    nx, ny = spec.gaussian_shape
    n = nx * ny
    sh = np.asarray(sh, dtype=np.float64)
    if sh.shape == (nx, ny, SH_BASIS, 3):
        sh = sh.reshape(n, SH_BASIS, 3)
    if sh.shape != (n, SH_BASIS, 3):
        raise ValueError(f"sh grid shape {sh.shape} does not match Gaussian grid {nx}x{ny}")
    scale = np.broadcast_to(np.asarray(scale, dtype=np.float64), (n, 3))
    rotation = np.zeros((n, 4))
    rotation[:, 0] = 1.0
    return GaussianGrid(spec, elevation, sh.copy(), scale.copy(), rotation,
                        np.full(n, float(opacity)))
