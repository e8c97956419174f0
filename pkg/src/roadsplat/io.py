"""On-disk formats.

ELEV  little-endian: b"ELEV", u32 version, u32 rows, u32 cols, f64 pitch,
      rows*cols f32 values (row-major), rows*cols u8 validity flags.
GGRD  same header (rows/cols = Gaussian grid shape, pitch = Gaussian pitch),
      then the GridSpec as 13 f64 values in field order, then per-field f32
      arrays in declaration order: elevation values, validity (u8), sh (N*12),
      scale (N*3), rotation (N*4), opacity (N).
FMAP  b"FMAP", u32 version, u32 ndim, ndim * u32 dims, f32 data (C order).
Camera text files: line 1 ``width height``, line 2 ``fx fy cx cy``, lines 3-5
the world-to-camera rotation rows, line 6 the translation.
"""

from __future__ import annotations

import dataclasses
import hashlib
import struct
from pathlib import Path

import numpy as np

from .scene import CameraModel, ElevationMap, GaussianGrid, GridSpec

VERSION = 1
_HEADER = struct.Struct("<4sIIId")


class FormatError(ValueError):
    pass


def _read_header(buf: bytes, magic: bytes) -> tuple[int, int, float, int]:
    if len(buf) < _HEADER.size:
        raise FormatError("truncated header")
    tag, version, rows, cols, pitch = _HEADER.unpack_from(buf, 0)
    if tag != magic:
        raise FormatError(f"bad magic {tag!r}, expected {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    return rows, cols, pitch, _HEADER.size


def _take(buf: bytes, offset: int, dtype: str, count: int) -> tuple[np.ndarray, int]:
    nbytes = np.dtype(dtype).itemsize * count
    if offset + nbytes > len(buf):
        raise FormatError("truncated payload")
    arr = np.frombuffer(buf, dtype=dtype, count=count, offset=offset)
    return arr, offset + nbytes


def encode_elevation(elev: ElevationMap) -> bytes:
    rows, cols = elev.shape
    return b"".join([
        _HEADER.pack(b"ELEV", VERSION, rows, cols, elev.pitch_m),
        elev.values.astype("<f4").tobytes(),
        elev.valid.astype(np.uint8).tobytes(),
    ])


def decode_elevation(buf: bytes, h_min_m: float = -0.20, h_max_m: float = 0.20) -> ElevationMap:
    rows, cols, pitch, off = _read_header(buf, b"ELEV")
    values, off = _take(buf, off, "<f4", rows * cols)
    valid, off = _take(buf, off, "u1", rows * cols)
    return ElevationMap(values.astype(np.float64).reshape(rows, cols),
                        valid.reshape(rows, cols).astype(bool), pitch, h_min_m, h_max_m)


def save_elevation(path, elev: ElevationMap) -> None:
    Path(path).write_bytes(encode_elevation(elev))


def load_elevation(path, h_min_m: float = -0.20, h_max_m: float = 0.20) -> ElevationMap:
    return decode_elevation(Path(path).read_bytes(), h_min_m, h_max_m)


_SPEC_FIELDS = [f.name for f in dataclasses.fields(GridSpec)]
_SPEC_INTS = {"nx_g", "ny_g", "texture_factor", "gaussian_factor", "nz_anchors", "nb_bins"}


def encode_gaussians(grid: GaussianGrid) -> bytes:
    rows, cols = grid.spec.gaussian_shape
    spec_vals = [float(getattr(grid.spec, k)) for k in _SPEC_FIELDS]
    return b"".join([
        _HEADER.pack(b"GGRD", VERSION, rows, cols, grid.spec.pitch("gaussian")),
        struct.pack(f"<{len(spec_vals)}d", *spec_vals),
        grid.elevation.values.astype("<f4").tobytes(),
        grid.elevation.valid.astype(np.uint8).tobytes(),
        grid.sh.astype("<f4").tobytes(),
        grid.scale.astype("<f4").tobytes(),
        grid.rotation.astype("<f4").tobytes(),
        grid.opacity.astype("<f4").tobytes(),
    ])


def decode_gaussians(buf: bytes) -> GaussianGrid:
    rows, cols, _pitch, off = _read_header(buf, b"GGRD")
    spec_raw, off = _take(buf, off, "<f8", len(_SPEC_FIELDS))
    spec_kwargs = {k: (int(v) if k in _SPEC_INTS else float(v))
                   for k, v in zip(_SPEC_FIELDS, spec_raw)}
    spec = GridSpec(**spec_kwargs)
    if spec.gaussian_shape != (rows, cols):
        raise FormatError(f"header shape {(rows, cols)} disagrees with stored GridSpec")
    n = rows * cols
    elev, off = _take(buf, off, "<f4", n)
    valid, off = _take(buf, off, "u1", n)
    sh, off = _take(buf, off, "<f4", n * 12)
    scale, off = _take(buf, off, "<f4", n * 3)
    rot, off = _take(buf, off, "<f4", n * 4)
    opacity, off = _take(buf, off, "<f4", n)
    emap = ElevationMap(elev.astype(np.float64).reshape(rows, cols),
                        valid.reshape(rows, cols).astype(bool),
                        spec.pitch("gaussian"), spec.h_min_m, spec.h_max_m)
    return GaussianGrid(spec, emap,
                        sh.astype(np.float64).reshape(n, 4, 3),
                        scale.astype(np.float64).reshape(n, 3),
                        rot.astype(np.float64).reshape(n, 4),
                        opacity.astype(np.float64))


def save_gaussians(path, grid: GaussianGrid) -> None:
    Path(path).write_bytes(encode_gaussians(grid))


def load_gaussians(path) -> GaussianGrid:
    return decode_gaussians(Path(path).read_bytes())


def encode_fmap(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    return b"".join([
        struct.pack("<4sII", b"FMAP", VERSION, array.ndim),
        struct.pack(f"<{array.ndim}I", *array.shape),
        np.ascontiguousarray(array, dtype="<f4").tobytes(),
    ])


def decode_fmap(buf: bytes) -> np.ndarray:
    if len(buf) < 12:
        raise FormatError("truncated header")
    tag, version, ndim = struct.unpack_from("<4sII", buf, 0)
    if tag != b"FMAP":
        raise FormatError(f"bad magic {tag!r}, expected b'FMAP'")
    if version != VERSION:
        raise FormatError(f"unsupported version {version}")
    dims = struct.unpack_from(f"<{ndim}I", buf, 12)
    data, _ = _take(buf, 12 + 4 * ndim, "<f4", int(np.prod(dims)))
    return data.astype(np.float64).reshape(dims)


def save_fmap(path, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_fmap(array))


def load_fmap(path) -> np.ndarray:
    return decode_fmap(Path(path).read_bytes())


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_ppm(path, image: np.ndarray) -> None:
    """Write an H x W x 3 image in [0, 1] as binary PPM (P6, 8 bit)."""
    pixels = to_uint8(image)
    h, w, _ = pixels.shape
    Path(path).write_bytes(b"P6\n%d %d\n255\n" % (w, h) + pixels.tobytes())


def load_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        tokens.append(data[pos:end])
        pos = end
    if tokens[0] != b"P6":
        raise FormatError("only binary P6 PPM is supported")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError("only 8-bit PPM is supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=pos + 1)
    return pixels.reshape(h, w, 3).astype(np.float64) / 255.0


def save_image(path, image: np.ndarray) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        Image.fromarray(to_uint8(image)).save(path)
    else:
        save_ppm(path, image)


def load_image(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return load_ppm(path)


def format_camera(cam: CameraModel) -> str:
    lines = [
        f"{cam.width} {cam.height}",
        " ".join(repr(float(v)) for v in (cam.fx, cam.fy, cam.cx, cam.cy)),
        *(" ".join(repr(float(v)) for v in row) for row in cam.rotation),
        " ".join(repr(float(v)) for v in cam.translation),
    ]
    return "\n".join(lines) + "\n"


def parse_camera(text: str) -> CameraModel:
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if len(lines) != 6:
        raise FormatError(f"camera file needs 6 lines, got {len(lines)}")
    width, height = (int(v) for v in lines[0].split())
    fx, fy, cx, cy = (float(v) for v in lines[1].split())
    rot = np.array([[float(v) for v in ln.split()] for ln in lines[2:5]])
    t = np.array([float(v) for v in lines[5].split()])
    return CameraModel(fx, fy, cx, cy, width, height, rot, t)


def save_camera(path, cam: CameraModel) -> None:
    Path(path).write_text(format_camera(cam))


def load_camera(path) -> CameraModel:
    return parse_camera(Path(path).read_text())


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(directory, names=None) -> Path:
    """Write MANIFEST.sha256 listing every file in ``directory`` (sorted)."""
    directory = Path(directory)
    if names is None:
        names = sorted(p.name for p in directory.iterdir()
                       if p.is_file() and p.name != "MANIFEST.sha256")
    lines = [f"{sha256_file(directory / n)}  {n}" for n in sorted(names)]
    out = directory / "MANIFEST.sha256"
    out.write_text("\n".join(lines) + "\n")
    return out
