"""Shared scene builders for the test-suite."""

from __future__ import annotations

import numpy as np

from roadsplat.scene import CameraModel, ElevationMap, GaussianGrid, look_down_pose, make_grid_spec


def random_unit_quats(rng, n, spread=0.6):
    q = np.column_stack([np.ones(n), rng.normal(0.0, spread, (n, 3))])
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def small_camera(rng=None, size=32, jitter=True, unit=8.0):
    """Camera looking down at :func:`random_grid` scenes built with the same ``unit``."""
    pitch = 0.64
    pos = np.array([0.0, 0.0, unit])
    r, t = look_down_pose(pos, pitch)
    if rng is not None and jitter:
        pitch += rng.uniform(-0.05, 0.05)
        pos = pos + rng.uniform(-0.05, 0.05, 3) * unit
        r, t = look_down_pose(pos, pitch)
        yaw = rng.uniform(-0.08, 0.08)
        c, s = np.cos(yaw), np.sin(yaw)
        r = r @ np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        t = -r @ pos
    f = 2.1 * size
    return CameraModel(f, f, size / 2, size / 2, size, size, r, t)


def random_grid(rng, n_side=7, unit=8.0, smooth=True, cam=None, min_depth_gap=1e-3, n_long=None):
    """Random small GaussianGrid of ``n_side`` x ``n_long`` Gaussians.

    ``unit`` sets the physical size (metres per 0.1 grid pitch); large units keep a
    fixed finite-difference step small relative to the Gaussian scales.
    ``smooth`` keeps colours and opacities away from the clamp and alpha-cap
    kinks. With ``cam`` given, elevations are redrawn until every pair of centre
    depths differs by ``min_depth_gap``: the composite is discontinuous where the
    depth order swaps, so finite differences must not straddle one.
    """
    pitch = 0.1 * unit
    n_long = n_side if n_long is None else n_long
    spec = make_grid_spec(roi_width_m=n_side * pitch, roi_length_m=n_long * pitch,
                          geom_interval_m=pitch, roi_start_m=unit,
                          texture_factor=1, gaussian_factor=1,
                          h_min_m=-0.1 * unit, h_max_m=0.1 * unit)
    n = n_side * n_long
    elev = rng.uniform(-0.075, 0.075, n) * unit
    if cam is not None:
        from roadsplat.scene import grid_centers

        xy = grid_centers(spec, "gaussian")
        depths = []
        for i in range(n):
            while True:
                d = cam.to_camera(np.array([xy[i, 0], xy[i, 1], elev[i]]))[2]
                if all(abs(d - o) >= min_depth_gap for o in depths):
                    depths.append(d)
                    break
                elev[i] = rng.uniform(-0.075, 0.075) * unit
    emap = ElevationMap.for_spec(spec, elev.reshape(n_side, n_long), "gaussian")
    sh = np.empty((n, 4, 3))
    sh[:, 0] = rng.uniform(-0.6, 0.6, (n, 3))
    sh[:, 1:] = rng.uniform(-0.25, 0.25, (n, 3, 3))
    scale = rng.uniform(0.5, 1.2, (n, 3)) * pitch * 0.45
    opacity = rng.uniform(0.05, 0.95, n) if smooth else rng.uniform(0.0, 1.0, n)
    return GaussianGrid(spec, emap, sh, scale, random_unit_quats(rng, n), opacity)


FD_FIELDS = {"means": "means", "scales": "scale", "quats": "rotation", "opacity": "opacity", "sh": "sh"}


def random_fd_scene(rng, size=32):
    """A random scene of at most 50 Gaussians, well separated in depth."""
    nx = int(rng.integers(3, 8))
    ny = int(rng.integers(3, min(7, 50 // nx) + 1))
    cam = small_camera(rng, size)
    return random_grid(rng, nx, cam=cam, n_long=ny), cam


def fd_gradient_errors(grid, cam, rng, step=1e-4, floor=1e-6):
    """Worst relative error between render_backward and central differences, per field.

    The loss is ``sum(adjoint * rgb)`` with a random normal adjoint. Quaternion
    perturbations are renormalised, matching the tangent-space gradient.
    Rendering uses ``alpha_min = 0`` so the loss is smooth in every parameter.
    """
    from roadsplat.splat import RenderSettings, Splats, render, render_backward

    settings = RenderSettings(alpha_min=0.0)
    sp = Splats.from_grid(grid)
    adj = rng.normal(size=(cam.height, cam.width, 3))
    grads = render_backward(sp, cam, adj, settings)
    worst = {}
    checked = 0
    for name, gname in FD_FIELDS.items():
        base = getattr(sp, name)
        analytic = getattr(grads, gname)
        worst[name] = 0.0
        for idx in np.ndindex(base.shape):
            a = analytic[idx]

            def loss(delta):
                arr = base.copy()
                arr[idx] += delta
                if name == "quats":
                    arr[idx[0]] /= np.linalg.norm(arr[idx[0]])
                fields = {k: getattr(sp, k) for k in FD_FIELDS}
                fields[name] = arr
                return float(np.sum(render(Splats(**fields), cam, settings).rgb * adj))

            fd = (loss(step) - loss(-step)) / (2 * step)
            if max(abs(a), abs(fd)) > floor:
                checked += 1
                worst[name] = max(worst[name], abs(a - fd) / max(abs(a), abs(fd)))
    return worst, checked
