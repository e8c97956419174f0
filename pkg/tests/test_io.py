import struct

import numpy as np
import pytest

from helpers import random_grid, small_camera
from roadsplat import io
from roadsplat.scene import ElevationMap, make_grid_spec


def test_elevation_roundtrip_and_layout(tmp_path):
    spec = make_grid_spec(nx_g=3, ny_g=4)
    vals = np.linspace(-0.2, 0.2, 12).reshape(3, 4)
    valid = np.ones((3, 4), bool)
    valid[2, 3] = False
    e = ElevationMap(vals, valid, spec.geom_interval_m, spec.h_min_m, spec.h_max_m)
    path = tmp_path / "e.elev"
    io.save_elevation(path, e)
    raw = path.read_bytes()
    magic, version, rows, cols, pitch = struct.unpack_from("<4sIIId", raw)
    assert (magic, version, rows, cols, pitch) == (b"ELEV", 1, 3, 4, 0.03)
    assert len(raw) == struct.calcsize("<4sIIId") + 12 * 4 + 12
    back = io.load_elevation(path)
    np.testing.assert_array_equal(back.values, vals.astype(np.float32))
    np.testing.assert_array_equal(back.valid, valid)


@pytest.mark.parametrize("mangle", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:4] + struct.pack("<I", 9) + b[8:],
    lambda b: b[:-3],
])
def test_elevation_rejects_corrupt(tmp_path, mangle):
    spec = make_grid_spec(nx_g=2, ny_g=2)
    buf = io.encode_elevation(ElevationMap.flat(spec))
    with pytest.raises(io.FormatError):
        io.decode_elevation(mangle(buf))


def test_gaussians_roundtrip(tmp_path):
    g = random_grid(np.random.default_rng(0), unit=0.1).quantized()
    path = tmp_path / "g.ggrd"
    io.save_gaussians(path, g)
    assert path.read_bytes()[:4] == b"GGRD"
    back = io.load_gaussians(path)
    assert back.equals(g)
    assert back.spec == g.spec


def test_quantized_is_a_fixed_point():
    g = random_grid(np.random.default_rng(1), unit=0.1)
    q = g.quantized()
    assert q.quantized().equals(q)
    assert io.decode_gaussians(io.encode_gaussians(g)).equals(q)


def test_fmap_roundtrip(tmp_path):
    arr = np.random.default_rng(2).normal(size=(3, 5, 7)).astype(np.float32)
    io.save_fmap(tmp_path / "f.fmap", arr)
    np.testing.assert_array_equal(io.load_fmap(tmp_path / "f.fmap"), arr)
    with pytest.raises(io.FormatError):
        io.decode_fmap(b"FMAP" + b"\0" * 3)


def test_ppm_roundtrip(tmp_path):
    img = np.random.default_rng(3).integers(0, 256, (5, 7, 3)) / 255.0
    io.save_ppm(tmp_path / "a.ppm", img)
    assert (tmp_path / "a.ppm").read_bytes().startswith(b"P6\n7 5\n255\n")
    np.testing.assert_array_equal(io.load_ppm(tmp_path / "a.ppm"), img)


def test_png_roundtrip(tmp_path):
    pytest.importorskip("PIL")
    img = np.random.default_rng(4).integers(0, 256, (4, 6, 3)) / 255.0
    io.save_image(tmp_path / "a.png", img)
    np.testing.assert_array_equal(io.load_image(tmp_path / "a.png"), img)


def test_camera_text_roundtrip(tmp_path):
    cam = small_camera(np.random.default_rng(5))
    io.save_camera(tmp_path / "c.txt", cam)
    lines = (tmp_path / "c.txt").read_text().splitlines()
    assert len(lines) == 6 and lines[0] == "32 32"
    assert io.load_camera(tmp_path / "c.txt").same_as(cam)
    with pytest.raises(io.FormatError):
        io.parse_camera("1 2\n")


def test_manifest(tmp_path):
    (tmp_path / "b.txt").write_text("b")
    (tmp_path / "a.txt").write_text("a")
    m = io.write_manifest(tmp_path)
    lines = m.read_text().splitlines()
    assert [ln.split()[1] for ln in lines] == ["a.txt", "b.txt"]
    assert lines[0].split()[0] == io.sha256_file(tmp_path / "a.txt")
