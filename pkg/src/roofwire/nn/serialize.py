"""Weights container: magic "PNWT", u32 version, u32 tensor count, then per tensor
u16 name length, UTF-8 name, u8 dtype (0=f32, 1=f64), u8 rank, u32 dims, payload.
All integers and payloads are little-endian."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

MAGIC = b"PNWT"
VERSION = 1
_DTYPES = {0: np.dtype("<f4"), 1: np.dtype("<f8")}
_CODES = {np.dtype("float32"): 0, np.dtype("float64"): 1}


class WeightsError(ValueError):
    pass


class WeightsFormatError(WeightsError):
    pass


class UnsupportedVersionError(WeightsError):
    pass


class ShapeMismatchError(WeightsError):
    pass


class NameMismatchError(WeightsError):
    def __init__(self, missing, extra):
        self.missing = list(missing)
        self.extra = list(extra)
        super().__init__(f"tensor names differ; missing={self.missing} extra={self.extra}")


def save_tensors(tensors: dict[str, np.ndarray], path) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _CODES:
            arr = arr.astype(np.float32)
        raw = name.encode("utf-8")
        parts.append(struct.pack("<H", len(raw)) + raw)
        parts.append(struct.pack("<BB", _CODES[arr.dtype], arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(np.ascontiguousarray(arr, dtype=_DTYPES[_CODES[arr.dtype]]).tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_tensors(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(buf):
            raise WeightsFormatError(f"truncated weights file at byte {pos}")
        chunk = buf[pos:pos + n]
        pos += n
        return chunk

    if take(4) != MAGIC:
        raise WeightsFormatError("bad magic, not a PNWT weights file")
    version, count = struct.unpack("<II", take(8))
    if version != VERSION:
        raise UnsupportedVersionError(f"unsupported weights version {version}")
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode("utf-8")
        code, rank = struct.unpack("<BB", take(2))
        if code not in _DTYPES:
            raise WeightsFormatError(f"unknown dtype code {code} for {name}")
        dims = struct.unpack(f"<{rank}I", take(4 * rank))
        dt = _DTYPES[code]
        size = int(np.prod(dims)) if rank else 1
        arr = np.frombuffer(take(size * dt.itemsize), dtype=dt).reshape(dims)
        out[name] = arr.astype(dt.newbyteorder("="))
    if pos != len(buf):
        raise ShapeMismatchError(f"{len(buf) - pos} trailing bytes; a shape field does not match its payload")
    return out


def save_weights(model, path) -> None:
    save_tensors(model.state_dict(), path)


def load_weights(model, path) -> None:
    model.load_state_dict(load_tensors(path))
