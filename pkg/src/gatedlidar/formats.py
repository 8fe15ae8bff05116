"""Binary raster, cube, mask and weight-field file formats.

All integers are little-endian. Each file starts with a 4-byte magic followed
by u32 header fields:

    GLR1  width, height, channels(=5); depth f32, reflectivity f32, R, G, B u8
    GLF1  width, height, channels;     channels x f32 planes
    GLC1  width, height, num_gates, max_count; u16 counts [gate][row][col]
    GLM1  width, height, channels(=1); u8 plane
    GLW1  width, height, field_side;   f32 weights [row][col][offset]

Planes are row-major and stored one after another.
"""

from __future__ import annotations

import os
import struct

import numpy as np

GLR1 = b"GLR1"
GLF1 = b"GLF1"
GLC1 = b"GLC1"
GLM1 = b"GLM1"
GLW1 = b"GLW1"


class FormatError(ValueError):
    """Raised when a file does not conform to its declared format."""


def _read(path: str | os.PathLike) -> bytes:
    with open(path, "rb") as fh:
        return fh.read()


def _header(buf: bytes, magic: bytes, nfields: int) -> tuple[int, ...]:
    size = 4 + 4 * nfields
    if len(buf) < size:
        raise FormatError(f"truncated header: {len(buf)} < {size} bytes")
    if buf[:4] != magic:
        raise FormatError(f"bad magic {buf[:4]!r}, expected {magic!r}")
    return struct.unpack("<" + "I" * nfields, buf[4:size])


def _payload(buf: bytes, offset: int, dtype: str, count: int) -> np.ndarray:
    nbytes = np.dtype(dtype).itemsize * count
    if len(buf) - offset != nbytes:
        raise FormatError(
            f"payload size {len(buf) - offset} bytes does not match header ({nbytes} bytes)"
        )
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset).copy()


def write_scene_raster(path, depth, reflectivity, rgb) -> None:
    depth = np.asarray(depth)
    height, width = depth.shape
    if np.shape(reflectivity) != (height, width) or np.shape(rgb) != (height, width, 3):
        raise FormatError("channel dimensions disagree")
    with open(path, "wb") as fh:
        fh.write(GLR1 + struct.pack("<III", width, height, 5))
        fh.write(np.ascontiguousarray(depth, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(reflectivity, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(np.moveaxis(np.asarray(rgb, dtype=np.uint8), -1, 0)).tobytes())


def read_scene_raster(path):
    """Return ``(depth, reflectivity, rgb)`` arrays from a GLR1 file."""
    buf = _read(path)
    width, height, channels = _header(buf, GLR1, 3)
    if channels != 5:
        raise FormatError(f"GLR1 scene must have 5 channels, got {channels}")
    n = width * height
    expected = 16 + 8 * n + 3 * n
    if len(buf) != expected:
        raise FormatError(f"file is {len(buf)} bytes, header implies {expected}")
    depth = np.frombuffer(buf, "<f4", n, 16).reshape(height, width).astype(np.float32)
    refl = np.frombuffer(buf, "<f4", n, 16 + 4 * n).reshape(height, width).astype(np.float32)
    rgb = np.frombuffer(buf, np.uint8, 3 * n, 16 + 8 * n).reshape(3, height, width)
    return depth, refl, np.ascontiguousarray(np.moveaxis(rgb, 0, -1))


def write_float_stack(path, planes) -> None:
    """Write a 2-D raster or a (channels, height, width) stack as GLF1."""
    arr = np.asarray(planes, dtype="<f4")
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3:
        raise FormatError("expected a 2-D raster or 3-D stack")
    channels, height, width = arr.shape
    with open(path, "wb") as fh:
        fh.write(GLF1 + struct.pack("<III", width, height, channels))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_float_stack(path) -> np.ndarray:
    buf = _read(path)
    width, height, channels = _header(buf, GLF1, 3)
    data = _payload(buf, 16, "<f4", width * height * channels)
    return data.reshape(channels, height, width).astype(np.float32)


def write_count_cube(path, counts, max_count: int) -> None:
    """Write integer counts shaped (num_gates, height, width) as GLC1."""
    counts = np.asarray(counts)
    if counts.ndim != 3:
        raise FormatError("count cube must be 3-D (gates, rows, cols)")
    if not np.issubdtype(counts.dtype, np.integer):
        raise FormatError("GLC1 stores integer counts only")
    if max_count > 0xFFFF or (counts.size and (counts.min() < 0 or counts.max() > max_count)):
        raise FormatError("counts outside [0, max_count] or max_count exceeds u16")
    num_gates, height, width = counts.shape
    with open(path, "wb") as fh:
        fh.write(GLC1 + struct.pack("<IIII", width, height, num_gates, max_count))
        fh.write(np.ascontiguousarray(counts, dtype="<u2").tobytes())


def read_count_cube(path) -> tuple[np.ndarray, int]:
    buf = _read(path)
    width, height, num_gates, max_count = _header(buf, GLC1, 4)
    data = _payload(buf, 20, "<u2", width * height * num_gates)
    counts = data.reshape(num_gates, height, width).astype(np.int64)
    if counts.size and counts.max() > max_count:
        raise FormatError("count exceeds header max_count")
    return counts, max_count


def write_mask(path, mask) -> None:
    """Write a u8 raster (boolean masks or small per-pixel counts) as GLM1."""
    arr = np.asarray(mask)
    if arr.ndim != 2:
        raise FormatError("mask must be 2-D")
    if arr.dtype != bool and (arr.min(initial=0) < 0 or arr.max(initial=0) > 255):
        raise FormatError("mask values must fit in u8")
    height, width = arr.shape
    with open(path, "wb") as fh:
        fh.write(GLM1 + struct.pack("<III", width, height, 1))
        fh.write(np.ascontiguousarray(arr, dtype=np.uint8).tobytes())


def read_mask(path) -> np.ndarray:
    """Return the u8 plane; compare with ``> 0`` for a boolean mask."""
    buf = _read(path)
    width, height, channels = _header(buf, GLM1, 3)
    if channels != 1:
        raise FormatError(f"GLM1 must have 1 channel, got {channels}")
    return _payload(buf, 16, np.uint8, width * height).reshape(height, width)


def write_weight_field(path, weights) -> None:
    arr = np.asarray(weights, dtype="<f4")
    if arr.ndim != 3:
        raise FormatError("weight field must be (rows, cols, offsets)")
    height, width, n_off = arr.shape
    side = int(round(np.sqrt(n_off)))
    if side * side != n_off:
        raise FormatError(f"{n_off} offsets is not a square field")
    with open(path, "wb") as fh:
        fh.write(GLW1 + struct.pack("<III", width, height, side))
        fh.write(np.ascontiguousarray(arr).tobytes())


def read_weight_field(path) -> np.ndarray:
    buf = _read(path)
    width, height, side = _header(buf, GLW1, 3)
    data = _payload(buf, 16, "<f4", width * height * side * side)
    return data.reshape(height, width, side * side).astype(np.float32)
