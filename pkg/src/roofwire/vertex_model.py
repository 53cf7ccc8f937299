"""Candidate refinement: cube-patch features, vertex network training and inference."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components

from roofwire import constants as C
from roofwire.candidates import VertexCandidate
from roofwire.geometry import SpatialIndex
from roofwire.networks import VertexNet
from roofwire.nn.layers import sigmoid
from roofwire.nn.losses import bce_with_logits, smooth_l1
from roofwire.scenegen import PALETTE_ARRAY, Scene
from roofwire.training import (
    Stopwatch, TrainConfig, batch_of, check_two_classes, make_optimizer, minibatches,
)

log = logging.getLogger(__name__)

N_VERTEX_FEATURES = 11


class EmptyPatchError(ValueError):
    pass


@dataclass
class VertexConfig:
    patch_side: float = C.CUBE_SIDE
    max_points: int = C.MAX_PATCH_POINTS
    positive_radius: float = 1.0
    dedup_radius: float = 0.2
    threshold: float = C.VERTEX_THRESHOLD
    offset_weight: float = 1.0
    score_weight: float = 1.0
    smooth_l1_beta: float = 1.0
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class VertexPatchSample:
    features: np.ndarray        # (11, N) float32
    is_vertex: bool
    gt_offset: np.ndarray       # (3,), zeros for negatives
    centroid: np.ndarray
    point_ids: np.ndarray


def normalize_rgb(rgb: np.ndarray) -> np.ndarray:
    """[0, 255] -> [-1, 1]."""
    return np.asarray(rgb, dtype=np.float32) / np.float32(127.5) - np.float32(1.0)


def subsample(ids: np.ndarray, max_points: int, seed) -> np.ndarray:
    if len(ids) <= max_points:
        return ids
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(ids, size=max_points, replace=False))


def build_vertex_sample(scene: Scene, candidate: VertexCandidate, cfg: VertexConfig | None = None,
                        index: SpatialIndex | None = None, seed=0) -> VertexPatchSample:
    """Cube patch around the candidate centroid with 11 features per point.

    Rows: position relative to the centroid (3), color (3), house flag (1), gestalt
    class color (3), candidate-member flag (1).
    """
    cfg = cfg or VertexConfig()
    cloud = scene.cloud
    index = index or SpatialIndex(cloud.positions)
    c = np.asarray(candidate.centroid, dtype=np.float64)
    ids = index.box_query(c, cfg.patch_side)
    if len(ids) == 0:
        raise EmptyPatchError("no points inside the cube patch")
    ids = subsample(ids, cfg.max_points, seed)
    feats = np.empty((N_VERTEX_FEATURES, len(ids)), dtype=np.float32)
    feats[0:3] = (cloud.positions[ids].astype(np.float64) - c).T
    feats[3:6] = normalize_rgb(cloud.colors[ids]).T
    feats[6] = cloud.house_flag[ids]
    feats[7:10] = normalize_rgb(PALETTE_ARRAY[cloud.gestalt_label[ids]]).T
    feats[10] = np.isin(ids, candidate.member_ids)
    is_vertex, offset = False, np.zeros(3)
    if len(scene.gt.vertices):
        d = np.linalg.norm(scene.gt.vertices - c, axis=1)
        k = int(np.argmin(d))
        if d[k] <= cfg.positive_radius:
            is_vertex, offset = True, scene.gt.vertices[k] - c
    return VertexPatchSample(feats, is_vertex, offset, c, ids)


def build_vertex_samples(scene: Scene, candidates: list[VertexCandidate], cfg: VertexConfig | None = None,
                         seed: int = 0) -> list[VertexPatchSample]:
    """Samples for every candidate; subsampling seeds are (seed, candidate index)."""
    cfg = cfg or VertexConfig()
    index = SpatialIndex(scene.cloud.positions)
    out = []
    for i, cand in enumerate(candidates):
        try:
            out.append(build_vertex_sample(scene, cand, cfg, index, seed=(seed, i)))
        except EmptyPatchError:
            continue
    return out


def vertex_loss(out: dict, is_vertex: np.ndarray, gt_offset: np.ndarray, cfg: VertexConfig):
    """Total loss, per-term values and gradients w.r.t. (offset, score, logit)."""
    logit, offset, score = out["logit"], out["offset"], out["score"]
    dt = logit.dtype
    bce, d_logit = bce_with_logits(logit, is_vertex.astype(dt))
    d_offset = np.zeros_like(offset)
    d_score = np.zeros_like(score)
    off_l = score_l = 0.0
    pos = np.nonzero(is_vertex)[0]
    if len(pos):
        tgt = gt_offset[pos].astype(dt)
        off_l, g = smooth_l1(offset[pos], tgt, cfg.smooth_l1_beta)
        d_offset[pos] = cfg.offset_weight * g
        # score regresses the current localisation error; the target is not differentiated
        err = np.linalg.norm(offset[pos] - tgt, axis=1)
        score_l, g = smooth_l1(score[pos], err, cfg.smooth_l1_beta)
        d_score[pos] = cfg.score_weight * g
    total = bce + cfg.offset_weight * off_l + cfg.score_weight * score_l
    return total, {"bce": bce, "offset": off_l, "score": score_l}, (d_offset, d_score, d_logit)


def _stack_labels(samples):
    y = np.array([s.is_vertex for s in samples], dtype=bool)
    off = np.stack([s.gt_offset for s in samples]) if samples else np.zeros((0, 3))
    return y, off


def train_vertex_net(samples: list[VertexPatchSample], cfg: VertexConfig | None = None,
                     net: VertexNet | None = None, opt=None, val_samples=None, callback=None):
    """AdamW training over shuffled minibatches. Returns (net, optimizer, per-epoch log rows)."""
    cfg = cfg or VertexConfig()
    tc = cfg.train
    y, off = _stack_labels(samples)
    check_two_classes(y)
    net = net or VertexNet(seed=tc.seed)
    opt = opt or make_optimizer(net, tc)
    rng = np.random.default_rng(tc.seed + 1)
    feats = [s.features for s in samples]
    rows = []
    watch = Stopwatch()
    for epoch in range(tc.epochs):
        net.train()
        sums = {"loss": 0.0, "bce": 0.0, "offset": 0.0, "score": 0.0}
        correct = 0
        for ids in minibatches(len(samples), tc.batch_size, rng):
            out = net.forward(batch_of(feats, ids))
            total, parts, grads = vertex_loss(out, y[ids], off[ids], cfg)
            net.zero_grad()
            net.backward(*grads)
            opt.step()
            w = len(ids)
            sums["loss"] += total * w
            for k, v in parts.items():
                sums[k] += v * w
            correct += int(np.sum((out["logit"] >= 0) == y[ids]))
            if tc.max_steps and opt.step_count >= tc.max_steps:
                break
        row = {"epoch": epoch + 1, "step": opt.step_count}
        row.update({k: v / len(samples) for k, v in sums.items()})
        row["train_acc"] = correct / len(samples)
        if val_samples:
            row.update({f"val_{k}": v for k, v in evaluate_vertex_net(net, val_samples, cfg).items()})
        row["seconds"] = round(watch.elapsed(), 3)
        rows.append(row)
        log.info("vertex epoch %d %s", epoch + 1, row)
        if callback:
            callback(row)
        if tc.max_steps and opt.step_count >= tc.max_steps:
            break
    net.eval()
    return net, opt, rows


def predict_vertex_outputs(net: VertexNet, samples: list[VertexPatchSample], batch_size: int = C.BATCH_SIZE) -> dict:
    net.eval()
    feats = [s.features for s in samples]
    outs = {"offset": [], "score": [], "logit": []}
    for ids in minibatches(len(samples), batch_size, None):
        o = net.forward(batch_of(feats, ids))
        for k in outs:
            outs[k].append(o[k])
    if not samples:
        return {"offset": np.zeros((0, 3)), "score": np.zeros(0), "logit": np.zeros(0)}
    return {k: np.concatenate(v) for k, v in outs.items()}


def evaluate_vertex_net(net: VertexNet, samples: list[VertexPatchSample], cfg: VertexConfig | None = None) -> dict:
    """Eval-mode loss terms, accuracy and positive offset RMSE."""
    cfg = cfg or VertexConfig()
    y, off = _stack_labels(samples)
    out = predict_vertex_outputs(net, samples, cfg.train.batch_size)
    total, parts, _ = vertex_loss(out, y, off, cfg)
    res = {"loss": total, **parts, "acc": float(np.mean((out["logit"] >= 0) == y))}
    pos = np.nonzero(y)[0]
    res["offset_rmse"] = float(np.sqrt(np.mean(np.sum((out["offset"][pos] - off[pos]) ** 2, axis=1)))) if len(pos) else 0.0
    return res


def merge_close_vertices(positions: np.ndarray, scores: np.ndarray, radius: float):
    """Single-linkage groups of vertices closer than `radius`: mean position, max score.

    Groups are ordered by their smallest member index, so the result is deterministic.
    """
    n = len(positions)
    if n == 0:
        return positions.reshape(0, 3), scores.reshape(0)
    d = np.linalg.norm(positions[:, None] - positions[None], axis=-1)
    _, labels = connected_components(d < radius, directed=False)
    first = {}
    for i, lab in enumerate(labels):
        first.setdefault(lab, i)
    order = sorted(first, key=first.get)
    pos = np.stack([positions[labels == lab].mean(axis=0) for lab in order])
    sc = np.array([scores[labels == lab].max() for lab in order])
    return pos, sc


@dataclass
class RefinedVertices:
    positions: np.ndarray    # (k, 3)
    probability: np.ndarray  # (k,) classifier confidence
    pre_dedup: int = 0


def refine_from_outputs(samples: list[VertexPatchSample], out: dict, threshold: float,
                        dedup_radius: float) -> RefinedVertices:
    if not samples:
        return RefinedVertices(np.zeros((0, 3)), np.zeros(0), 0)
    prob = sigmoid(out["logit"].astype(np.float64))
    keep = np.nonzero(prob >= threshold)[0]
    cent = np.stack([s.centroid for s in samples])
    pos = cent[keep] + out["offset"][keep].astype(np.float64)
    merged, p = merge_close_vertices(pos, prob[keep], dedup_radius)
    return RefinedVertices(merged, p, len(keep))


def refine_vertices(scene: Scene, candidates: list[VertexCandidate], net: VertexNet,
                    threshold: float | None = None, cfg: VertexConfig | None = None,
                    seed: int = 0) -> RefinedVertices:
    """Keep candidates whose class probability reaches `threshold` and apply predicted offsets."""
    cfg = cfg or VertexConfig()
    threshold = cfg.threshold if threshold is None else threshold
    samples = build_vertex_samples(scene, candidates, cfg, seed)
    out = predict_vertex_outputs(net, samples, cfg.train.batch_size)
    return refine_from_outputs(samples, out, threshold, cfg.dedup_radius)
