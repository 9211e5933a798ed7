"""Binary voxel-grid file format.

Little-endian throughout:

    offset  size  field
    0       4     magic "OGRD"
    4       2     format version (u16), currently 1
    6       1     frame tag (u8): 0 = voxel frame, 1 = camera frame
    7       1     dtype code (u8): 0 = f32 scalars, 1 = u8 booleans {0,1}
    8       12    counts (3 x u32): nx, ny, nz
    20      24    origin (3 x f64)
    44      24    resolution (3 x f64)
    68      ...   payload, row-major with x fastest

Round-trips are bit-exact; a frozen test vector in tests/data pins the
layout, and any header change requires a version bump.
"""

from __future__ import annotations

import os
import struct
import tempfile

import numpy as np

from .grids import FRAME_CAMERA, FRAME_VOXEL, VoxelGrid

MAGIC = b"OGRD"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sHBB3I3d3d")

_FRAME_CODES = {FRAME_VOXEL: 0, FRAME_CAMERA: 1}
_FRAME_NAMES = {v: k for k, v in _FRAME_CODES.items()}
DTYPE_F32 = 0
DTYPE_BOOL = 1


class GridFormatError(ValueError):
    """Base class for voxel-grid file errors."""


class BadMagicError(GridFormatError):
    pass


class UnsupportedVersionError(GridFormatError):
    pass


class TruncatedFileError(GridFormatError):
    pass


class HeaderFieldError(GridFormatError):
    pass


def _payload_bytes(grid: VoxelGrid) -> tuple[int, bytes]:
    if grid.values.dtype == bool:
        code = DTYPE_BOOL
        arr = grid.values.astype(np.uint8)
    else:
        code = DTYPE_F32
        arr = grid.values.astype("<f4")
    # x fastest: transpose to (z, y, x) C-order
    return code, np.ascontiguousarray(arr.transpose(2, 1, 0)).tobytes()


def grid_to_bytes(grid: VoxelGrid) -> bytes:
    code, payload = _payload_bytes(grid)
    nx, ny, nz = grid.counts
    header = HEADER.pack(MAGIC, FORMAT_VERSION, _FRAME_CODES[grid.frame], code,
                         nx, ny, nz, *grid.origin, *grid.resolution)
    return header + payload


def grid_from_bytes(data: bytes) -> VoxelGrid:
    if len(data) < HEADER.size:
        raise TruncatedFileError(
            f"file shorter than the {HEADER.size}-byte header")
    (magic, version, frame_code, dtype_code,
     nx, ny, nz, ox, oy, oz, rx, ry, rz) = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagicError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"unsupported format version {version}")
    if frame_code not in _FRAME_NAMES:
        raise HeaderFieldError(f"unknown frame tag {frame_code}")
    if dtype_code not in (DTYPE_F32, DTYPE_BOOL):
        raise HeaderFieldError(f"unknown dtype code {dtype_code}")
    n = nx * ny * nz
    itemsize = 4 if dtype_code == DTYPE_F32 else 1
    expected = HEADER.size + n * itemsize
    if len(data) != expected:
        raise TruncatedFileError(
            f"payload size mismatch: file has {len(data)} bytes, header "
            f"implies {expected}")
    raw = np.frombuffer(data, offset=HEADER.size,
                        dtype="<f4" if dtype_code == DTYPE_F32 else np.uint8)
    values = raw.reshape(nz, ny, nx).transpose(2, 1, 0)
    if dtype_code == DTYPE_BOOL:
        values = values.astype(bool)
    else:
        values = values.astype(np.float64)
    return VoxelGrid(origin=[ox, oy, oz], counts=(nx, ny, nz),
                     resolution=[rx, ry, rz], values=values,
                     frame=_FRAME_NAMES[frame_code])


def atomic_write_bytes(path, data: bytes) -> None:
    """Write via temp-file-then-rename so readers never see partial files."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-ogrd-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_voxel_grid(path, grid: VoxelGrid) -> None:
    atomic_write_bytes(path, grid_to_bytes(grid))


def read_voxel_grid(path) -> VoxelGrid:
    with open(path, "rb") as f:
        return grid_from_bytes(f.read())
