"""The two point-set networks: vertex refinement/classification and edge classification.

Both take a :class:`~roofwire.nn.batch.PointBatch` of packed per-point features.
Weight names are stable identifiers used by the PNWT weights files, e.g.
``convs.0.conv.weight``, ``attn.fc1.bias``, ``shared.2.norm.weight``,
``class_head.layers.4.bias``.
"""

from __future__ import annotations

import numpy as np

from roofwire import constants as C
from roofwire.nn.batch import PointBatch
from roofwire.nn.layers import (
    BatchNorm, ChannelAttention, Dropout, GlobalPool, GroupNorm, LeakyReLU, Linear, Module, ReLU,
    Softplus,
)

VERTEX_CONV_DIMS = (11, 64, 128, 256, 512, 1024, 1024, 2048)
VERTEX_RESIDUAL_CONV = 5  # zero-based: the 6th convolution, 1024 -> 1024
VERTEX_SHARED_DIMS = (2048, 1024, 512, 512)
VERTEX_HEAD_DIMS = (512, 512, 256, 128, 64)
ATTENTION_HIDDEN = 128

EDGE_CONV_DIMS = (6, 64, 128, 256, 512, 1024, 2048)
EDGE_MLP_DIMS = (2048, 1024, 512, 256, 128, 64, 1)
EDGE_DROPOUT = (0.3, 0.35, 0.4, 0.45, 0.5)


class ConvBlock(Module):
    """Point-wise conv -> BatchNorm -> activation, optionally with an identity skip."""

    def __init__(self, n_in, n_out, act, rng, dtype, residual=False):
        super().__init__()
        self.conv = Linear(n_in, n_out, rng, dtype)
        self.bn = BatchNorm(n_out, dtype=dtype)
        self.act = act
        self.residual = residual
        if residual and n_in != n_out:
            raise ValueError("residual block needs equal in/out channels")

    def forward(self, x):
        y = self.act.forward(self.bn.forward(self.conv.forward(x)))
        if self.residual:
            y += x
        return y

    def backward(self, dy):
        dx = self.conv.backward(self.bn.backward(self.act.backward(dy)))
        if self.residual:
            dx += dy
        return dx


class SharedBlock(Module):
    """Linear -> GroupNorm -> LeakyReLU -> Dropout, optionally with an identity skip."""

    def __init__(self, n_in, n_out, rng, dtype, dropout, slope, groups, residual=False):
        super().__init__()
        self.fc = Linear(n_in, n_out, rng, dtype)
        self.norm = GroupNorm(n_out, groups, dtype=dtype)
        self.act = LeakyReLU(slope)
        self.drop = Dropout(dropout, rng)
        self.residual = residual

    def forward(self, x):
        y = self.drop.forward(self.act.forward(self.norm.forward(self.fc.forward(x))))
        return y + x if self.residual else y

    def backward(self, dy):
        dx = self.fc.backward(self.norm.backward(self.act.backward(self.drop.backward(dy))))
        return dx + dy if self.residual else dx


class MLP(Module):
    """Linear stack with activation + dropout between layers and none after the last."""

    def __init__(self, dims, make_act, dropouts, rng, dtype, zero_last=True):
        super().__init__()
        n = len(dims) - 1
        self.layers = [Linear(dims[i], dims[i + 1], rng, dtype, zero=zero_last and i == n - 1)
                       for i in range(n)]
        self.acts = [make_act() for _ in range(n - 1)]
        self.drops = [Dropout(p, rng) for p in dropouts]
        if len(self.drops) != n - 1:
            raise ValueError("need one dropout rate per hidden gap")

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer.forward(x)
            if i < len(self.acts):
                x = self.drops[i].forward(self.acts[i].forward(x))
        return x

    def backward(self, dy):
        for i in reversed(range(len(self.layers))):
            if i < len(self.acts):
                dy = self.acts[i].backward(self.drops[i].backward(dy))
            dy = self.layers[i].backward(dy)
        return dy


class VertexNet(Module):
    """Point-wise conv stack, channel attention, mixed max/mean pooling, shared trunk, three heads.

    Outputs per set: 3D offset (m), non-negative localisation score (m) and a class logit.
    """

    def __init__(self, seed: int = 0, dtype=np.float32, slope: float = 0.01, dropout: float = 0.3,
                 groups: int = 32, pool_weights=(C.POOL_MAX_WEIGHT, C.POOL_MEAN_WEIGHT)):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        d = VERTEX_CONV_DIMS
        self.convs = [ConvBlock(d[i], d[i + 1], LeakyReLU(slope), rng, dtype, residual=i == VERTEX_RESIDUAL_CONV)
                      for i in range(len(d) - 1)]
        self.attn = ChannelAttention(d[-1], ATTENTION_HIDDEN, rng, dtype)
        self.pool = GlobalPool("mixed", *pool_weights)
        s = VERTEX_SHARED_DIMS
        self.shared = [SharedBlock(s[i], s[i + 1], rng, dtype, dropout, slope, groups,
                                   residual=i == len(s) - 2) for i in range(len(s) - 1)]
        gaps = [dropout] * (len(VERTEX_HEAD_DIMS) - 1)
        act = lambda: LeakyReLU(slope)  # noqa: E731
        self.offset_head = MLP(VERTEX_HEAD_DIMS + (3,), act, gaps, rng, dtype)
        self.score_head = MLP(VERTEX_HEAD_DIMS + (1,), act, gaps, rng, dtype)
        self.score_act = Softplus()
        self.class_head = MLP(VERTEX_HEAD_DIMS + (1,), act, gaps, rng, dtype)

    def forward(self, batch: PointBatch) -> dict[str, np.ndarray]:
        x = batch.x
        if x.shape[1] != VERTEX_CONV_DIMS[0]:
            raise ValueError(f"vertex net expects {VERTEX_CONV_DIMS[0]} features, got {x.shape[1]}")
        x = x.astype(self.dtype, copy=False)
        for block in self.convs:
            x = block.forward(x)
        x = self.attn.forward(x, batch.offsets)
        g = self.pool.forward(x, batch.offsets)
        for block in self.shared:
            g = block.forward(g)
        return {
            "offset": self.offset_head.forward(g),
            "score": self.score_act.forward(self.score_head.forward(g))[:, 0],
            "logit": self.class_head.forward(g)[:, 0],
        }

    def backward(self, d_offset, d_score, d_logit) -> np.ndarray:
        dg = self.offset_head.backward(np.asarray(d_offset, dtype=self.dtype))
        dg = dg + self.score_head.backward(self.score_act.backward(np.asarray(d_score, dtype=self.dtype)[:, None]))
        dg = dg + self.class_head.backward(np.asarray(d_logit, dtype=self.dtype)[:, None])
        for block in reversed(self.shared):
            dg = block.backward(dg)
        dx = self.attn.backward(self.pool.backward(dg))
        for block in reversed(self.convs):
            dx = block.backward(dx)
        return dx


class EdgeNet(Module):
    """Point-wise conv stack with ReLU, global max pool, MLP classifier -> one logit per set."""

    def __init__(self, seed: int = 0, dtype=np.float32, dropouts=EDGE_DROPOUT):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.dtype = np.dtype(dtype)
        d = EDGE_CONV_DIMS
        self.convs = [ConvBlock(d[i], d[i + 1], ReLU(), rng, dtype) for i in range(len(d) - 1)]
        self.pool = GlobalPool("max")
        self.mlp = MLP(EDGE_MLP_DIMS, ReLU, dropouts, rng, dtype)

    def forward(self, batch: PointBatch) -> np.ndarray:
        x = batch.x
        if x.shape[1] != EDGE_CONV_DIMS[0]:
            raise ValueError(f"edge net expects {EDGE_CONV_DIMS[0]} features, got {x.shape[1]}")
        x = x.astype(self.dtype, copy=False)
        for block in self.convs:
            x = block.forward(x)
        g = self.pool.forward(x, batch.offsets)
        return self.mlp.forward(g)[:, 0]

    def backward(self, d_logit) -> np.ndarray:
        dg = self.mlp.backward(np.asarray(d_logit, dtype=self.dtype)[:, None])
        dx = self.pool.backward(dg)
        for block in reversed(self.convs):
            dx = block.backward(dx)
        return dx
