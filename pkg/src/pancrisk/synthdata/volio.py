"""PVL1 volume files.

Layout (all little-endian)::

    0   4   magic b"PVL1"
    4   1   dtype code: 0 = float32 volume, 1 = uint8 mask
    5   3   reserved, zero
    8   24  dims H, W, D as uint64
    32  12  spacing as three float32
    44  ..  row-major payload
"""
from __future__ import annotations

import struct

import numpy as np

MAGIC = b"PVL1"
HEADER = struct.Struct("<4sB3s3Q3f")
HEADER_SIZE = HEADER.size
DTYPES = {0: np.dtype("<f4"), 1: np.dtype("u1")}


class VolumeFormatError(ValueError):
    def __init__(self, msg, offset):
        super().__init__(f"{msg} (byte offset {offset})")
        self.offset = offset


def encode_volume(data, spacing=(1.0, 1.0, 1.0), mask=False):
    arr = np.asarray(data)
    if arr.ndim != 3:
        raise ValueError(f"volume must be 3D, got shape {arr.shape}")
    code = 1 if mask else 0
    payload = np.ascontiguousarray(arr, dtype=DTYPES[code]).tobytes()
    return HEADER.pack(MAGIC, code, b"\0\0\0", *arr.shape, *map(float, spacing)) + payload


def decode_volume(buf):
    """Returns (array, spacing, is_mask)."""
    if len(buf) < HEADER_SIZE:
        raise VolumeFormatError(f"truncated header: {len(buf)} of {HEADER_SIZE} bytes", len(buf))
    magic, code, _, h, w, d, *spacing = HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise VolumeFormatError(f"bad magic {magic!r}", 0)
    if code not in DTYPES:
        raise VolumeFormatError(f"unknown dtype code {code}", 4)
    dtype = DTYPES[code]
    need = HEADER_SIZE + h * w * d * dtype.itemsize
    if len(buf) != need:
        kind = "truncated payload" if len(buf) < need else "trailing bytes after payload"
        raise VolumeFormatError(f"{kind}: expected {need} bytes, got {len(buf)}", min(len(buf), need))
    arr = np.frombuffer(buf, dtype=dtype, offset=HEADER_SIZE).reshape(h, w, d).copy()
    return arr, tuple(spacing), code == 1


def write_volume(path, data, spacing=(1.0, 1.0, 1.0), mask=False):
    with open(path, "wb") as fh:
        fh.write(encode_volume(data, spacing, mask))


def read_volume(path):
    with open(path, "rb") as fh:
        return decode_volume(fh.read())
