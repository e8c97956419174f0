import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roadsplat.bevquery import (
    VoxelFeature,
    back_project,
    bin_values,
    build_anchor_voxels,
    compose_elevation,
    decode_offsets,
    elevation_guided_query,
    fuse_height,
    lift_voxels,
    project_points,
    sample_bilinear,
    scale_reference,
)
from roadsplat.scene import CameraModel, ElevationMap, look_down_pose, make_grid_spec


def brute_fuse(features, logits):
    c, nx, ny, nz = features.shape
    out = np.zeros((c, nx, ny))
    for i in range(nx):
        for j in range(ny):
            m = max(logits[i, j])
            w = [math.exp(logits[i, j, k] - m) for k in range(nz)]
            s = sum(w)
            for ch in range(c):
                out[ch, i, j] = sum(features[ch, i, j, k] * w[k] / s for k in range(nz))
    return out


def brute_decode(logits, bins):
    nb, nx, ny = logits.shape
    out = np.zeros((nx, ny))
    for i in range(nx):
        for j in range(ny):
            m = max(logits[:, i, j])
            w = [math.exp(logits[b, i, j] - m) for b in range(nb)]
            out[i, j] = sum(bins[b] * w[b] for b in range(nb)) / sum(w)
    return out


def test_anchor_voxels():
    spec = make_grid_spec(nz_anchors=2)
    pts = build_anchor_voxels(spec)
    assert set(np.unique(pts[..., 2])) == {-0.2, 0.2}
    spec = make_grid_spec()
    pts = build_anchor_voxels(spec)
    assert pts.shape == (64, 164, 20, 3)
    assert pts[..., 0].size == 209_920
    np.testing.assert_allclose(np.diff(pts[0, 0, :, 2]), 0.4 / 19)


def _identity_cam(w=100, h=100):
    return CameraModel(100.0, 100.0, 50.0, 50.0, w, h, np.eye(3), np.zeros(3))


def test_project_points_examples():
    cam = _identity_cam()
    uv, depth, valid = project_points(np.array([[0.1, 0.2, 1.0], [0.0, 0.0, 3.0], [0.0, 0.0, -1.0]]), cam)
    np.testing.assert_allclose(uv[0], [60.0, 70.0])
    np.testing.assert_allclose(uv[1], [50.0, 50.0])
    assert depth[1] == 3.0
    assert valid.tolist() == [True, True, False]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_project_back_project_roundtrip(seed):
    rng = np.random.default_rng(seed)
    r, t = look_down_pose(rng.uniform(-1, 1, 3) + [0, 0, 2], rng.uniform(0.2, 1.2))
    cam = CameraModel(400, 400, 320, 240, 640, 480, r, t)
    pts = np.column_stack([rng.uniform(-1, 1, 50), rng.uniform(1, 5, 50), rng.uniform(-0.2, 0.2, 50)])
    uv, depth, valid = project_points(pts, cam)
    back = back_project(uv[valid], depth[valid], cam)
    np.testing.assert_allclose(back, pts[valid], atol=1e-9)


def test_sample_bilinear_examples():
    fmap = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    m = np.ones(1, bool)
    assert sample_bilinear(fmap, np.array([[1.0, 0.0]]), m)[0, 0] == 2.0
    assert sample_bilinear(fmap, np.array([[0.5, 0.0]]), m)[0, 0] == 1.5
    # u (column) = 0.75, v (row) = 0.25
    assert sample_bilinear(fmap, np.array([[0.75, 0.25]]), m)[0, 0] == pytest.approx(2.25)
    # clamped outside, zero when masked
    assert sample_bilinear(fmap, np.array([[5.0, 5.0]]), m)[0, 0] == 4.0
    assert sample_bilinear(fmap, np.array([[0.5, 0.5]]), np.zeros(1, bool))[0, 0] == 0.0


def test_fuse_height_examples():
    feats = np.array([1.0, 2.0, 3.0]).reshape(1, 1, 1, 3)
    out = fuse_height(VoxelFeature(feats, np.array([0.0, math.log(2), 0.0]).reshape(1, 1, 3)))
    assert out[0, 0, 0] == pytest.approx(2.0, abs=1e-12)
    out = fuse_height(VoxelFeature(feats, np.zeros((1, 1, 3))))
    assert out[0, 0, 0] == pytest.approx(2.0, abs=1e-12)
    logits = np.zeros((1, 1, 3))
    logits[0, 0, 2] = 1000.0
    assert fuse_height(VoxelFeature(feats, logits))[0, 0, 0] == pytest.approx(3.0, abs=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(1, 3), st.integers(2, 5),
       st.integers(0, 2**31 - 1), st.booleans())
def test_fuse_height_matches_brute_force(c, nx, ny, nz, seed, saturate):
    rng = np.random.default_rng(seed)
    feats = rng.normal(size=(c, nx, ny, nz))
    logits = rng.normal(scale=3.0, size=(nx, ny, nz))
    if saturate:
        logits = np.where(rng.random(logits.shape) < 0.3, 1000.0, -1000.0) + logits
    np.testing.assert_allclose(fuse_height(VoxelFeature(feats, logits)), brute_fuse(feats, logits),
                               atol=1e-6)


def test_bin_values():
    assert bin_values(make_grid_spec(nb_bins=2)).tolist() == [-0.1, 0.1]
    b = bin_values(make_grid_spec())
    np.testing.assert_allclose(np.diff(b), 0.2 / 39)
    assert abs(b.sum()) < 1e-12


def test_decode_offsets_examples():
    spec = make_grid_spec(nx_g=2, ny_g=2)
    bins = bin_values(spec)
    assert np.abs(decode_offsets(np.zeros((40, 2, 2)), bins, spec).values).max() < 1e-12
    logits = np.zeros((40, 2, 2))
    logits[7] = 1000.0
    np.testing.assert_allclose(decode_offsets(logits, bins, spec).values, bins[7], atol=1e-6)
    with pytest.raises(ValueError):
        decode_offsets(np.zeros((3, 2, 2)), bins)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 8), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31 - 1),
       st.sampled_from([1.0, 10.0, 1000.0]))
def test_decode_offsets_matches_brute_force(nb, nx, ny, seed, mag):
    rng = np.random.default_rng(seed)
    bins = np.sort(rng.uniform(-0.1, 0.1, nb))
    logits = rng.normal(scale=mag, size=(nb, nx, ny))
    out = decode_offsets(logits, bins).values
    np.testing.assert_allclose(out, brute_decode(logits, bins), atol=1e-6)
    assert out.min() >= bins.min() and out.max() <= bins.max()


def test_scale_reference():
    spec = make_grid_spec()
    assert scale_reference(0.0, spec) == 0.0
    assert scale_reference(50.0, spec) == pytest.approx(0.1)
    assert scale_reference(1.0, spec) == pytest.approx(0.1 * math.tanh(1.0))
    asym = make_grid_spec(h_min_m=-0.1, h_max_m=0.3)
    assert -0.05 <= scale_reference(-30.0, asym) < scale_reference(30.0, asym) <= 0.15


def test_compose_elevation():
    spec = make_grid_spec(nx_g=2, ny_g=2)
    zero = ElevationMap.flat(spec)
    out = compose_elevation(0.0, zero, spec)
    assert np.all(out.elevation.values == 0) and out.clamped == 0
    off = np.zeros((2, 2))
    off[1, 0] = -0.02
    out = compose_elevation(0.05, ElevationMap.for_spec(spec, off), spec)
    assert out.elevation.values[1, 0] == pytest.approx(0.03)
    out = compose_elevation(0.1, ElevationMap.for_spec(spec, np.full((2, 2), 0.2)), spec)
    assert np.all(out.elevation.values == 0.2) and out.clamped == 4


def _road_cam():
    r, t = look_down_pose([0.0, 0.0, 1.2], 0.6)
    return CameraModel(100.0, 100.0, 80.0, 40.0, 160, 80, r, t)


@pytest.mark.parametrize("k", [0, 7, 19])
def test_guided_query_matches_anchor_plane(k):
    spec = make_grid_spec(nx_g=8, ny_g=20, texture_factor=1, gaussian_factor=1)
    cam = _road_cam()
    fmap = np.random.default_rng(k).normal(size=(4, cam.height, cam.width))
    anchors, valid = lift_voxels(fmap, cam, spec)
    h = np.linspace(spec.h_min_m, spec.h_max_m, spec.nz_anchors)[k]
    q, qvalid = elevation_guided_query(fmap, cam, spec, ElevationMap.flat(spec, height=h))
    np.testing.assert_allclose(q, anchors[..., k], atol=1e-6)
    np.testing.assert_array_equal(qvalid, valid[..., k])


def test_guided_query_counts_and_behind_camera():
    spec = make_grid_spec(nx_g=4, ny_g=6)
    cam = _road_cam()
    fmap = np.ones((2, cam.height, cam.width))
    q, valid = elevation_guided_query(fmap, cam, spec, ElevationMap.flat(spec))
    assert q.shape == (2,) + spec.texture_shape and valid.size == 16 * 24
    r, t = look_down_pose([0.0, 10.0, 1.2], 0.6)
    back = CameraModel(100.0, 100.0, 80.0, 40.0, 160, 80, r, t)
    q, valid = elevation_guided_query(fmap, back, spec, ElevationMap.flat(spec))
    assert not valid.any() and np.all(q == 0)
