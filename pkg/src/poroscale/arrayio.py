"""Binary array file format shared by all pipeline stages.

Layout (all integers little-endian):

    bytes 0..3    magic "NHAR"
    bytes 4..7    u32 format version (1)
    byte  8       u8 dtype code (0 = float64)
    byte  9       u8 number of dimensions
    then          u64 extent per dimension
    then          payload, row-major (C order), little-endian

A 3x4 float64 array therefore carries 4+4+1+1+16 = 26 header bytes before
the payload. Reads validate magic, version, dtype, and payload length and
raise :class:`FormatError` on any mismatch, including truncated files.
"""

import struct

import numpy as np

from .errors import FormatError

MAGIC = b"NHAR"
VERSION = 1
DTYPE_F64 = 0


def write_array(path, array):
    """Write a float64 array; other dtypes are converted."""
    array = np.asarray(array, dtype="<f8", order="C")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<BB", DTYPE_F64, array.ndim))
        fh.write(struct.pack(f"<{array.ndim}Q", *array.shape))
        fh.write(array.tobytes())


def _read_exact(fh, n, path):
    data = fh.read(n)
    if len(data) != n:
        raise FormatError(f"{path}: truncated file")
    return data


def read_array(path):
    with open(path, "rb") as fh:
        if _read_exact(fh, 4, path) != MAGIC:
            raise FormatError(f"{path}: bad magic, not an array file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path))
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        dtype_code, ndim = struct.unpack("<BB", _read_exact(fh, 2, path))
        if dtype_code != DTYPE_F64:
            raise FormatError(f"{path}: unknown dtype code {dtype_code}")
        shape = struct.unpack(f"<{ndim}Q", _read_exact(fh, 8 * ndim, path))
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        payload = _read_exact(fh, 8 * count, path)
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    return np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
