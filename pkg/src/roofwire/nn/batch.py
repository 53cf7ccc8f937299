"""Packed representation of variable-size point sets.

A batch of B point sets is stored as one (P, C) array holding only the valid
points, row-major by set, plus segment offsets. Padded slots never exist in
memory, which makes every op padding-invariant by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PointBatch:
    x: np.ndarray          # (P, C)
    offsets: np.ndarray    # (B + 1,), offsets[0] == 0, offsets[-1] == P

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        counts = np.diff(self.offsets)
        if len(counts) == 0 or np.any(counts <= 0):
            raise ValueError("every set in a batch needs at least one valid point")
        if self.offsets[-1] != len(self.x):
            raise ValueError("offsets do not match the packed row count")

    @property
    def batch_size(self) -> int:
        return len(self.offsets) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    @property
    def segment_ids(self) -> np.ndarray:
        return np.repeat(np.arange(self.batch_size), self.counts)

    def with_x(self, x: np.ndarray) -> PointBatch:
        out = PointBatch.__new__(PointBatch)
        out.x = x
        out.offsets = self.offsets
        return out


def pack(x: np.ndarray, mask: np.ndarray | None = None) -> PointBatch:
    """(B, C, N) array plus (B, N) validity mask -> PointBatch."""
    x = np.asarray(x)
    B, C, N = x.shape
    if mask is None:
        mask = np.ones((B, N), dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (B, N):
        raise ValueError(f"mask shape {mask.shape} does not match input {(B, N)}")
    rows = np.transpose(x, (0, 2, 1))[mask]
    offsets = np.concatenate([[0], np.cumsum(mask.sum(axis=1))])
    return PointBatch(np.ascontiguousarray(rows), offsets)


def unpack(batch: PointBatch, mask: np.ndarray) -> np.ndarray:
    """Inverse of pack: scatter rows back to (B, C, N) with zeros in padded slots."""
    mask = np.asarray(mask, dtype=bool)
    B, N = mask.shape
    out = np.zeros((B, N, batch.x.shape[1]), dtype=batch.x.dtype)
    out[mask] = batch.x
    return np.transpose(out, (0, 2, 1))


def pack_sets(sets: list[np.ndarray], dtype=np.float32) -> PointBatch:
    """List of (C, n_i) feature arrays -> PointBatch."""
    counts = [s.shape[1] for s in sets]
    x = np.concatenate([s.T for s in sets], axis=0).astype(dtype, copy=False)
    return PointBatch(np.ascontiguousarray(x), np.concatenate([[0], np.cumsum(counts)]))


def segment_matrix(offsets: np.ndarray, dtype) -> np.ndarray:
    """(B, P) 0/1 matrix selecting each set's rows; sums become one GEMM."""
    counts = np.diff(offsets)
    S = np.zeros((len(counts), offsets[-1]), dtype=dtype)
    S[np.repeat(np.arange(len(counts)), counts), np.arange(offsets[-1])] = 1
    return S


def segment_sum(x: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    if len(offsets) == 2:
        return x.sum(axis=0, keepdims=True)
    return segment_matrix(offsets, x.dtype) @ x


def segment_mean(x: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    counts = np.diff(offsets).astype(x.dtype)
    return segment_sum(x, offsets) / counts[:, None]


def segment_max(x: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-set channel max and the packed row index attaining it (first occurrence)."""
    B = len(offsets) - 1
    arg = np.empty((B, x.shape[1]), dtype=np.int64)
    for b in range(B):
        s, e = offsets[b], offsets[b + 1]
        arg[b] = np.argmax(x[s:e], axis=0) + s
    return x[arg, np.arange(x.shape[1])], arg
