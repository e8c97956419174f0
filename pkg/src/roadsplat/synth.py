"""Procedural road scenes: elevation with potholes and cracks, noisy albedo, camera rigs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import io
from .scene import (
    CameraModel,
    ElevationMap,
    GaussianGrid,
    GridSpec,
    default_scale,
    downsample_area,
    grid_centers,
    init_gaussian_grid,
    look_down_pose,
    upsample_bilinear,
)
from .splat import DEFAULT_SETTINGS, RenderSettings, render, rgb_to_dc


class RecipeError(ValueError):
    pass


@dataclass(frozen=True)
class Pothole:
    center: tuple[float, float]
    radius: float
    depth: float


@dataclass(frozen=True)
class Crack:
    points: tuple[tuple[float, float], ...]
    width: float
    depth: float


@dataclass(frozen=True)
class Trajectory:
    frames: int = 2
    step_m: float = 0.5
    height_m: float = 1.2
    pitch_rad: float = 0.6
    baseline_m: float = 0.12
    start_y_m: float = 0.0
    fx: float = 500.0
    fy: float = 500.0
    width: int = 960
    height: int = 528


@dataclass(frozen=True)
class SceneRecipe:
    seed: int = 0
    tilt_pitch: float = 0.0
    tilt_roll: float = 0.0
    potholes: tuple[Pothole, ...] = ()
    cracks: tuple[Crack, ...] = ()
    base_color: tuple[float, float, float] = (0.42, 0.41, 0.40)
    texture_noise: float = 0.15
    # smooth noise octaves (feature size in metres) layered on the per-cell noise
    texture_octaves: tuple[float, ...] = (0.4, 0.12)
    pothole_darkening: float = 0.45
    trajectory: Trajectory = field(default_factory=Trajectory)
    noise_sigma: float = 0.0

    def __post_init__(self) -> None:
        for p in self.potholes:
            if p.radius <= 0:
                raise RecipeError(f"pothole radius must be positive, got {p.radius}")
        for c in self.cracks:
            if c.width <= 0 or len(c.points) < 2:
                raise RecipeError("crack needs positive width and at least two points")
        if self.trajectory.frames < 1:
            raise RecipeError("trajectory.frames must be >= 1")
        if self.trajectory.height_m <= 0:
            raise RecipeError("trajectory.height_m: camera must be above the road plane")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "SceneRecipe":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise RecipeError(f"unknown recipe field(s): {', '.join(sorted(unknown))}")
        kw = dict(data)
        try:
            if "potholes" in kw:
                kw["potholes"] = tuple(Pothole(tuple(p["center"]), float(p["radius"]), float(p["depth"]))
                                       for p in kw["potholes"])
            if "cracks" in kw:
                kw["cracks"] = tuple(Crack(tuple(tuple(pt) for pt in c["points"]), float(c["width"]),
                                           float(c["depth"])) for c in kw["cracks"])
            if "trajectory" in kw:
                kw["trajectory"] = Trajectory(**kw["trajectory"])
            for key in ("base_color", "texture_octaves"):
                if key in kw:
                    kw[key] = tuple(kw[key])
        except (KeyError, TypeError) as exc:
            raise RecipeError(f"bad recipe entry: {exc}") from exc
        return cls(**kw)


def elevation_at(recipe: SceneRecipe, xy: np.ndarray, y_mid: float) -> tuple[np.ndarray, np.ndarray]:
    """Analytic surface height and a [0, 1] damage weight at road positions ``xy``."""
    x, y = xy[:, 0], xy[:, 1]
    z = np.tan(recipe.tilt_pitch) * (y - y_mid) + np.tan(recipe.tilt_roll) * x
    damage = np.zeros(len(xy))
    for p in recipe.potholes:
        r = np.hypot(x - p.center[0], y - p.center[1])
        profile = np.where(r < p.radius, 0.5 * (1 + np.cos(np.pi * r / p.radius)), 0.0)
        z = z - p.depth * profile
        damage = np.maximum(damage, profile)
    for c in recipe.cracks:
        dist = np.full(len(xy), np.inf)
        pts = np.asarray(c.points, dtype=np.float64)
        for a, b in zip(pts[:-1], pts[1:]):
            ab = b - a
            t = np.clip(((xy - a) @ ab) / max(ab @ ab, 1e-12), 0.0, 1.0)
            dist = np.minimum(dist, np.linalg.norm(xy - (a + t[:, None] * ab), axis=1))
        half = 0.5 * c.width
        profile = np.where(dist < half, 0.5 * (1 + np.cos(np.pi * dist / half)), 0.0)
        z = z - c.depth * profile
        damage = np.maximum(damage, profile)
    return z, damage


def _smooth_noise(rng, shape, pitch, feature_m):
    cells = max(2, int(np.ceil(shape[0] * pitch / feature_m)) + 1), \
        max(2, int(np.ceil(shape[1] * pitch / feature_m)) + 1)
    coarse = rng.standard_normal(cells)
    fx = -(-shape[0] // cells[0])
    fy = -(-shape[1] // cells[1])
    fine = upsample_bilinear(coarse, (cells[0] * fx, cells[1] * fy))
    return fine[:shape[0], :shape[1]]


def generate_scene(recipe: SceneRecipe, spec: GridSpec):
    """Ground truth for one scene.

    Returns ``(elevation at Gaussian resolution, SH grid (nx, ny, 4, 3))``; the
    geometry-level truth is the area average of the former (see :func:`ground_truth`).
    """
    rng = np.random.default_rng(recipe.seed)
    y_mid = spec.roi_start_m + 0.5 * spec.ny_g * spec.geom_interval_m
    xy = grid_centers(spec, "gaussian")
    z, damage = elevation_at(recipe, xy, y_mid)
    span = spec.h_max_m - spec.h_min_m
    if z.min() < spec.h_min_m - 0.5 * span or z.max() > spec.h_max_m + 0.5 * span:
        raise RecipeError(
            f"recipe elevation range [{z.min():.3f}, {z.max():.3f}] m is far outside "
            f"[{spec.h_min_m}, {spec.h_max_m}]"
        )
    nx, ny = spec.gaussian_shape
    elev = ElevationMap.for_spec(spec, np.clip(z, spec.h_min_m, spec.h_max_m).reshape(nx, ny), "gaussian")

    tshape = spec.texture_shape
    tpitch = spec.pitch("texture")
    noise = rng.standard_normal(tshape)
    for feature in recipe.texture_octaves:
        noise = noise + _smooth_noise(rng, tshape, tpitch, feature)
    noise /= np.sqrt(1 + len(recipe.texture_octaves))
    shade = 1.0 + recipe.texture_noise * noise
    shade = upsample_bilinear(shade, (nx, ny))
    shade = shade * (1.0 - recipe.pothole_darkening * damage.reshape(nx, ny))
    rgb = np.clip(shade[..., None] * np.asarray(recipe.base_color), 0.02, 0.98)
    sh = np.zeros((nx, ny, 4, 3))
    sh[:, :, 0, :] = rgb_to_dc(rgb)
    return elev, sh


def ground_truth(recipe: SceneRecipe, spec: GridSpec, scale=None) -> tuple[GaussianGrid, ElevationMap]:
    """GT GaussianGrid (float32-exact, as stored on disk) and geometry-level elevation.

    ``scale`` defaults to :func:`~roadsplat.scene.default_scale` for ``spec``.
    """
    elev, sh = generate_scene(recipe, spec)
    scale = default_scale(spec) if scale is None else scale
    grid = init_gaussian_grid(spec, elev, sh, scale=scale).quantized()
    geo = ElevationMap.for_spec(spec, downsample_area(grid.elevation.values, spec.shape("geometry")))
    return grid, geo


def make_trajectory(recipe: SceneRecipe) -> list[CameraModel]:
    """Cameras advancing along +y; each frame yields a left (and, with a baseline, right) view."""
    tr = recipe.trajectory
    if tr.height_m <= 0:
        raise RecipeError("camera below the road plane")
    cams = []
    for k in range(tr.frames):
        y = tr.start_y_m + k * tr.step_m
        offsets = [0.0, tr.baseline_m] if tr.baseline_m > 0 else [0.0]
        for dx in offsets:
            r, t = look_down_pose([dx, y, tr.height_m], tr.pitch_rad)
            cams.append(CameraModel(tr.fx, tr.fy, tr.width / 2, tr.height / 2,
                                    tr.width, tr.height, r, t))
    return cams


def render_dataset(grid: GaussianGrid, cameras, noise_sigma: float = 0.0, seed: int = 0,
                   settings: RenderSettings = DEFAULT_SETTINGS) -> list[np.ndarray]:
    rng = np.random.default_rng(seed)
    images = []
    for cam in cameras:
        img = render(grid, cam, settings).rgb
        if noise_sigma > 0:
            img = np.clip(img + rng.normal(0.0, noise_sigma, img.shape), 0.0, 1.0)
        images.append(img)
    return images


def write_dataset(out_dir, recipe: SceneRecipe, spec: GridSpec,
                  settings: RenderSettings = DEFAULT_SETTINGS) -> Path:
    """Generate and write a dataset directory; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    grid, geo = ground_truth(recipe, spec)
    cams = make_trajectory(recipe)
    images = render_dataset(grid, cams, recipe.noise_sigma, recipe.seed, settings)
    scene = {"recipe": recipe.to_dict(), "grid_spec": spec.to_dict()}
    (out / "scene.json").write_text(json.dumps(scene, indent=2, sort_keys=True) + "\n")
    for k, (cam, img) in enumerate(zip(cams, images)):
        io.save_camera(out / f"cam_{k:04d}.txt", cam)
        io.save_ppm(out / f"img_{k:04d}.ppm", img)
    io.save_elevation(out / "gt_elevation.elev", geo)
    io.save_gaussians(out / "gt_gaussians.ggrd", grid)
    return io.write_manifest(out)


def load_dataset(directory):
    """Read a dataset directory: (scene dict, [(image, camera)], gt elevation or None)."""
    d = Path(directory)
    scene = json.loads((d / "scene.json").read_text()) if (d / "scene.json").exists() else {}
    frames = []
    for cam_path in sorted(d.glob("cam_*.txt")):
        img_path = d / cam_path.name.replace("cam_", "img_").replace(".txt", ".ppm")
        frames.append((io.load_ppm(img_path), io.load_camera(cam_path)))
    gt = io.load_elevation(d / "gt_elevation.elev") if (d / "gt_elevation.elev").exists() else None
    return scene, frames, gt
