"""Padded (B, C, N) + mask entry points around the packed layers.

Padded columns of every point-wise output are zero.
"""

from __future__ import annotations

import numpy as np

from roofwire.nn.batch import pack, unpack
from roofwire.nn.layers import BatchNorm, ChannelAttention, GlobalPool, GroupNorm, Linear, Parameter


def _default_mask(x, mask):
    if mask is None:
        return np.ones((x.shape[0], x.shape[2]), dtype=bool)
    return np.asarray(mask, dtype=bool)


def pointwise_conv(x, W, b, mask=None):
    x = np.asarray(x)
    W = np.asarray(W, dtype=x.dtype)
    b = np.asarray(b, dtype=x.dtype)
    if x.ndim != 3 or W.shape[1] != x.shape[1] or b.shape != (W.shape[0],):
        raise ValueError(f"shape mismatch: x {x.shape}, W {W.shape}, b {b.shape}")
    mask = _default_mask(x, mask)
    batch = pack(x, mask)
    y = batch.x @ W.T + b
    return unpack(batch.with_x(y), mask)


def batchnorm1d(x, gamma, beta, running_mean, running_var, training=True, mask=None,
                eps=1e-5, momentum=0.1):
    """Returns the normalised (B, C, N) output; running stats are updated in place when training."""
    x = np.asarray(x)
    mask = _default_mask(x, mask)
    if not mask.any():
        raise ValueError("batch norm needs at least one valid slot")
    C = x.shape[1]
    layer = BatchNorm(C, eps=eps, momentum=momentum, dtype=x.dtype)
    layer.weight.value[...] = gamma
    layer.bias.value[...] = beta
    layer.running_mean = np.asarray(running_mean)
    layer.running_var = np.asarray(running_var)
    layer.train(training)
    rows = np.transpose(x, (0, 2, 1))[mask]
    out = np.zeros((x.shape[0], x.shape[2], C), dtype=x.dtype)
    out[mask] = layer.forward(rows)
    return np.transpose(out, (0, 2, 1))


def groupnorm(x, gamma, beta, groups=32, eps=1e-5):
    x = np.asarray(x)
    layer = GroupNorm(x.shape[1], groups, eps=eps, dtype=x.dtype)
    layer.weight.value[...] = gamma
    layer.bias.value[...] = beta
    layer.eval()
    return layer.forward(x)


def channel_attention(x, mask, fc1_w, fc1_b, fc2_w, fc2_b):
    x = np.asarray(x)
    mask = _default_mask(x, mask)
    C = x.shape[1]
    layer = ChannelAttention(C, fc1_w.shape[0], np.random.default_rng(0), x.dtype)
    for lin, w, b in ((layer.fc1, fc1_w, fc1_b), (layer.fc2, fc2_w, fc2_b)):
        lin.weight = Parameter(np.asarray(w, dtype=x.dtype))
        lin.bias = Parameter(np.asarray(b, dtype=x.dtype))
    layer.eval()
    batch = pack(x, mask)
    return unpack(batch.with_x(layer.forward(batch.x, batch.offsets)), mask)


def global_pool(x, mask=None, mode="mixed"):
    x = np.asarray(x)
    mask = _default_mask(x, mask)
    if not mask.any(axis=1).all():
        raise ValueError("every row needs at least one valid point")
    batch = pack(x, mask)
    layer = GlobalPool(mode)
    layer.eval()
    return layer.forward(batch.x, batch.offsets)


def linear(x, W, b):
    layer = Linear(W.shape[1], W.shape[0], np.random.default_rng(0), np.asarray(x).dtype)
    layer.weight = Parameter(np.asarray(W, dtype=layer.weight.value.dtype))
    layer.bias = Parameter(np.asarray(b, dtype=layer.weight.value.dtype))
    layer.eval()
    return layer.forward(np.asarray(x))
