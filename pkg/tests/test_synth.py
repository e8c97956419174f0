import json

import numpy as np
import pytest

from roadsplat import io, synth
from roadsplat.objective import elevation_metrics, psnr
from roadsplat.scene import default_scale, grid_centers, init_gaussian_grid, make_grid_spec
from roadsplat.splat import SH_C0, render

SPEC = make_grid_spec(nx_g=8, ny_g=16, texture_factor=2, gaussian_factor=1)
QUICK = synth.Trajectory(frames=2, step_m=0.05, height_m=0.6, pitch_rad=1.5, baseline_m=0.05,
                         fx=110, fy=110, width=64, height=64, start_y_m=0.4)


def test_empty_recipe_is_flat_and_uniform():
    recipe = synth.SceneRecipe(texture_noise=0.0)
    elev, sh = synth.generate_scene(recipe, SPEC)
    assert np.all(elev.values == 0)
    rgb = 0.5 + SH_C0 * sh[..., 0, :]
    np.testing.assert_allclose(rgb, np.broadcast_to(recipe.base_color, rgb.shape), atol=1e-12)
    assert not sh[..., 1:, :].any()


def test_pothole_profile():
    spec = make_grid_spec(nx_g=20, ny_g=20, texture_factor=1, gaussian_factor=1)
    xy = grid_centers(spec, "gaussian")
    c = tuple(xy[10 * 20 + 10])
    p = synth.Pothole(c, 0.15, 0.05)
    elev, _ = synth.generate_scene(synth.SceneRecipe(potholes=(p,)), spec)
    z = elev.values.ravel()
    r = np.hypot(xy[:, 0] - c[0], xy[:, 1] - c[1])
    assert z[10 * 20 + 10] == pytest.approx(-0.05)
    assert np.all(z[r >= 0.15] == 0)
    assert np.all(z[r < 0.15 - 1e-9] < 0)


def test_pothole_volume_monotone_in_depth():
    vols = []
    for depth in (0.01, 0.03, 0.05, 0.1):
        elev, _ = synth.generate_scene(synth.SceneRecipe(potholes=(synth.Pothole((0.0, 0.54), 0.1, depth),)),
                                       SPEC)
        vols.append(-elev.values.sum())
    assert np.all(np.diff(vols) > 0)


def test_crack_and_tilt():
    crack = synth.Crack(((-0.1, 0.4), (0.1, 0.7)), 0.03, 0.01)
    elev, _ = synth.generate_scene(synth.SceneRecipe(cracks=(crack,)), SPEC)
    assert elev.values.min() < -0.005 and elev.values.max() == 0.0
    tilted, _ = synth.generate_scene(synth.SceneRecipe(tilt_pitch=0.05), SPEC)
    rows = tilted.values.mean(axis=0)
    assert np.all(np.diff(rows) > 0)


def test_deterministic_in_seed():
    recipe = synth.SceneRecipe(seed=4, potholes=(synth.Pothole((0.0, 0.5), 0.1, 0.03),))
    a = synth.generate_scene(recipe, SPEC)
    b = synth.generate_scene(recipe, SPEC)
    np.testing.assert_array_equal(a[0].values, b[0].values)
    np.testing.assert_array_equal(a[1], b[1])
    c = synth.generate_scene(synth.SceneRecipe(seed=5), SPEC)
    assert not np.array_equal(a[1], c[1])


def test_recipe_validation():
    with pytest.raises(synth.RecipeError):
        synth.SceneRecipe(potholes=(synth.Pothole((0, 1), 0.0, 0.05),))
    with pytest.raises(synth.RecipeError):
        synth.SceneRecipe(trajectory=synth.Trajectory(frames=0))
    with pytest.raises(synth.RecipeError):
        synth.SceneRecipe(trajectory=synth.Trajectory(height_m=-0.1))
    with pytest.raises(synth.RecipeError, match="far outside"):
        synth.generate_scene(synth.SceneRecipe(potholes=(synth.Pothole((0, 0.5), 0.2, 0.5),)), SPEC)
    # moderately out of range is clamped
    elev, _ = synth.generate_scene(synth.SceneRecipe(potholes=(synth.Pothole((0, 0.5), 0.2, 0.3),)), SPEC)
    assert elev.values.min() == SPEC.h_min_m
    with pytest.raises(synth.RecipeError, match="colour"):
        synth.SceneRecipe.from_dict({"colour": 1})


def test_recipe_dict_roundtrip():
    recipe = synth.SceneRecipe(seed=3, potholes=(synth.Pothole((0.1, 1.0), 0.2, 0.05),),
                               cracks=(synth.Crack(((0.0, 1.0), (0.2, 2.0)), 0.01, 0.01),), trajectory=QUICK)
    assert synth.SceneRecipe.from_dict(json.loads(recipe.to_json())) == recipe


def test_trajectory():
    one = synth.make_trajectory(synth.SceneRecipe(trajectory=synth.Trajectory(frames=1, baseline_m=0.0)))
    assert len(one) == 1
    np.testing.assert_allclose(one[0].center, [0, 0, 1.2], atol=1e-12)
    cams = synth.make_trajectory(synth.SceneRecipe(trajectory=synth.Trajectory(frames=3, step_m=0.4,
                                                                              baseline_m=0.12)))
    assert len(cams) == 6
    for k in range(3):
        left, right = cams[2 * k], cams[2 * k + 1]
        assert left.center[1] == pytest.approx(0.4 * k)
        np.testing.assert_allclose(left.translation - right.translation, [0.12, 0, 0], atol=1e-12)


def test_stereo_disparity():
    # a lateral stripe at known depth appears shifted by fx * b / z between the views
    tr = synth.Trajectory(frames=1, height_m=1.0, pitch_rad=np.pi / 2, baseline_m=0.1,
                          fx=200, fy=200, width=96, height=64, start_y_m=0.54)
    spec = make_grid_spec(nx_g=16, ny_g=16, texture_factor=2, gaussian_factor=1)
    elev, sh = synth.generate_scene(synth.SceneRecipe(texture_noise=0.0, texture_octaves=()), spec)
    sh[12, :, 0, :] = 1.5  # bright column at one lateral position
    grid = init_gaussian_grid(spec, elev, sh, scale=default_scale(spec))
    left, right = synth.make_trajectory(synth.SceneRecipe(trajectory=tr))

    def peak(cam):
        row = np.clip(render(grid, cam).rgb[32, :, 0] - 0.45, 0, None)
        return np.sum(np.arange(row.size) * row) / np.sum(row)

    assert peak(left) - peak(right) == pytest.approx(200 * 0.1 / 1.0, abs=0.2)


def test_render_dataset_noise_and_self_consistency():
    recipe = synth.SceneRecipe(seed=2, trajectory=QUICK)
    grid, geo = synth.ground_truth(recipe, SPEC)
    cams = synth.make_trajectory(recipe)
    a = synth.render_dataset(grid, cams)
    b = synth.render_dataset(grid, cams)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)
    assert psnr(render(grid, cams[0]).rgb, a[0]) == 100.0
    assert elevation_metrics(geo, geo)[0] == 0.0
    noisy = synth.render_dataset(grid, cams[:1], noise_sigma=0.05, seed=1)
    assert 20 < psnr(noisy[0], a[0]) < 35


def test_write_and_load_dataset(tmp_path):
    recipe = synth.SceneRecipe(seed=2, trajectory=QUICK, potholes=(synth.Pothole((0.0, 0.54), 0.1, 0.03),))
    manifest = synth.write_dataset(tmp_path, recipe, SPEC)
    names = {ln.split()[1] for ln in manifest.read_text().splitlines()}
    assert names == {"scene.json", "gt_elevation.elev", "gt_gaussians.ggrd",
                     *(f"cam_{k:04d}.txt" for k in range(4)), *(f"img_{k:04d}.ppm" for k in range(4))}
    scene, frames, gt = synth.load_dataset(tmp_path)
    assert scene["grid_spec"]["nx_g"] == 8 and len(frames) == 4
    assert gt.shape == SPEC.shape("geometry")
    grid = io.load_gaussians(tmp_path / "gt_gaussians.ggrd")
    # self-render of the stored scene reproduces the stored image bytes
    for img, cam in frames:
        np.testing.assert_array_equal(io.to_uint8(render(grid, cam).rgb), io.to_uint8(img))
