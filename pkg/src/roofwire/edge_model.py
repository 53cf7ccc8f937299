"""Edge classification between vertex pairs from cylindrical point patches."""

from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field

import numpy as np

from roofwire import constants as C
from roofwire.geometry import SpatialIndex, Wireframe
from roofwire.metrics import match_vertices
from roofwire.networks import EdgeNet
from roofwire.nn.layers import sigmoid
from roofwire.nn.losses import bce_with_logits
from roofwire.scenegen import Scene
from roofwire.training import (
    Stopwatch, TrainConfig, batch_of, check_two_classes, make_optimizer, minibatches,
)
from roofwire.vertex_model import normalize_rgb

log = logging.getLogger(__name__)

N_EDGE_FEATURES = 6


@dataclass
class EdgeConfig:
    radius: float = C.CYLINDER_RADIUS
    extension: float = C.CYLINDER_EXTENSION
    max_points: int = C.MAX_PATCH_POINTS
    min_pair_distance: float = 0.2
    max_pair_distance: float = 30.0
    threshold: float = C.EDGE_THRESHOLD
    match_tau: float = C.MATCH_TAU
    negative_ratio: float = 1.0
    train: TrainConfig = field(default_factory=TrainConfig)


@dataclass
class EdgePatchSample:
    features: np.ndarray     # (6, N) float32, N may be 0
    endpoints: np.ndarray    # (2, 3)
    is_edge: bool


class DegeneratePairError(ValueError):
    pass


def pair_seed(a, b, seed: int = 0) -> list[int]:
    """Subsampling seed that depends only on the unordered endpoint pair."""
    pts = sorted([tuple(np.asarray(a, dtype=np.float64)), tuple(np.asarray(b, dtype=np.float64))])
    return [int(seed), zlib.crc32(np.asarray(pts, dtype="<f8").tobytes())]


def build_edge_sample(scene: Scene, a, b, label: bool = False, cfg: EdgeConfig | None = None,
                      index: SpatialIndex | None = None, seed: int = 0) -> EdgePatchSample:
    """Cylinder patch around segment a-b; rows are position relative to the midpoint, then color."""
    cfg = cfg or EdgeConfig()
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if np.linalg.norm(b - a) <= cfg.min_pair_distance:
        raise DegeneratePairError("vertex pair closer than the minimum pair distance")
    cloud = scene.cloud
    index = index or SpatialIndex(cloud.positions)
    ids = index.cylinder_query(a, b, cfg.radius, cfg.extension)
    if len(ids) > cfg.max_points:
        rng = np.random.default_rng(pair_seed(a, b, seed))
        ids = np.sort(rng.choice(ids, size=cfg.max_points, replace=False))
    mid = 0.5 * (a + b)
    feats = np.empty((N_EDGE_FEATURES, len(ids)), dtype=np.float32)
    feats[0:3] = (cloud.positions[ids].astype(np.float64) - mid).T
    feats[3:6] = normalize_rgb(cloud.colors[ids]).T
    return EdgePatchSample(feats, np.stack([a, b]), bool(label))


@dataclass
class EdgeDatasetStats:
    scenes_used: int = 0
    scenes_skipped: int = 0
    positives: int = 0
    negatives: int = 0


def scene_edge_pairs(scene: Scene, vertices: np.ndarray, cfg: EdgeConfig, rng: np.random.Generator):
    """Balanced labelled index pairs into `vertices` for one scene (may be empty)."""
    gt = scene.gt
    if vertices is gt.vertices:
        to_gt = {i: i for i in range(len(vertices))}
    else:
        to_gt = {p: g for g, p, _ in match_vertices(gt.vertices, vertices, cfg.match_tau)}
    gt_edges = gt.edge_set()
    nv = len(vertices)
    pos, neg = [], []
    for i in range(nv):
        for j in range(i + 1, nv):
            d = np.linalg.norm(vertices[i] - vertices[j])
            if d <= cfg.min_pair_distance or d > cfg.max_pair_distance:
                continue
            gi, gj = to_gt.get(i), to_gt.get(j)
            if gi is not None and gj is not None and (min(gi, gj), max(gi, gj)) in gt_edges:
                pos.append((i, j))
            else:
                neg.append((i, j))
    if not pos:
        return [], []
    k = min(len(neg), int(round(cfg.negative_ratio * len(pos))))
    pick = np.sort(rng.choice(len(neg), size=k, replace=False)) if k else np.zeros(0, dtype=int)
    return pos, [neg[t] for t in pick]


def build_edge_dataset(scenes: list[Scene], vertex_sets: list[np.ndarray] | None = None,
                       cfg: EdgeConfig | None = None, seed: int = 0):
    """Balanced positive/negative pair samples.

    `vertex_sets[k]` supplies the vertices for scene k (e.g. refined predictions, matched
    to GT within `match_tau`); by default the GT vertices are used. Scenes without a
    single positive pair are skipped and counted.
    """
    cfg = cfg or EdgeConfig()
    rng = np.random.default_rng(seed)
    samples: list[EdgePatchSample] = []
    stats = EdgeDatasetStats()
    for k, scene in enumerate(scenes):
        verts = scene.gt.vertices if vertex_sets is None else np.asarray(vertex_sets[k], dtype=np.float64)
        pos, neg = scene_edge_pairs(scene, verts, cfg, rng)
        if not pos:
            stats.scenes_skipped += 1
            continue
        stats.scenes_used += 1
        index = SpatialIndex(scene.cloud.positions)
        for pairs, label in ((pos, True), (neg, False)):
            for i, j in pairs:
                s = build_edge_sample(scene, verts[i], verts[j], label, cfg, index, seed)
                if s.features.shape[1] == 0:
                    continue
                samples.append(s)
                if label:
                    stats.positives += 1
                else:
                    stats.negatives += 1
    if stats.scenes_skipped:
        log.warning("edge dataset: skipped %d scene(s) without a positive pair", stats.scenes_skipped)
    return samples, stats


def train_edge_net(samples: list[EdgePatchSample], cfg: EdgeConfig | None = None, net: EdgeNet | None = None,
                   opt=None, val_samples=None, callback=None):
    """BCE training with AdamW. Returns (net, optimizer, per-epoch log rows)."""
    cfg = cfg or EdgeConfig()
    tc = cfg.train
    y = np.array([s.is_edge for s in samples], dtype=bool)
    check_two_classes(y)
    net = net or EdgeNet(seed=tc.seed)
    opt = opt or make_optimizer(net, tc)
    rng = np.random.default_rng(tc.seed + 1)
    feats = [s.features for s in samples]
    rows = []
    watch = Stopwatch()
    for epoch in range(tc.epochs):
        net.train()
        loss_sum, correct = 0.0, 0
        for ids in minibatches(len(samples), tc.batch_size, rng):
            logit = net.forward(batch_of(feats, ids))
            loss, d = bce_with_logits(logit, y[ids])
            net.zero_grad()
            net.backward(d)
            opt.step()
            loss_sum += loss * len(ids)
            correct += int(np.sum((logit >= 0) == y[ids]))
            if tc.max_steps and opt.step_count >= tc.max_steps:
                break
        row = {"epoch": epoch + 1, "step": opt.step_count, "loss": loss_sum / len(samples),
               "train_acc": correct / len(samples)}
        if val_samples:
            row.update({f"val_{k}": v for k, v in evaluate_edge_net(net, val_samples, cfg).items()})
        row["seconds"] = round(watch.elapsed(), 3)
        rows.append(row)
        log.info("edge epoch %d %s", epoch + 1, row)
        if callback:
            callback(row)
        if tc.max_steps and opt.step_count >= tc.max_steps:
            break
    net.eval()
    return net, opt, rows


def predict_edge_logits(net: EdgeNet, samples: list[EdgePatchSample], batch_size: int = C.BATCH_SIZE) -> np.ndarray:
    """Eval-mode logits; samples with an empty patch get -inf."""
    net.eval()
    out = np.full(len(samples), -np.inf)
    live = [k for k, s in enumerate(samples) if s.features.shape[1] > 0]
    feats = [samples[k].features for k in live]
    for ids in minibatches(len(live), batch_size, None):
        out[np.asarray(live)[ids]] = net.forward(batch_of(feats, ids))
    return out


def evaluate_edge_net(net: EdgeNet, samples: list[EdgePatchSample], cfg: EdgeConfig | None = None) -> dict:
    cfg = cfg or EdgeConfig()
    y = np.array([s.is_edge for s in samples], dtype=bool)
    logit = predict_edge_logits(net, samples, cfg.train.batch_size)
    loss, _ = bce_with_logits(np.clip(logit, -1e4, None), y)
    return {"loss": loss, "acc": float(np.mean((logit >= 0) == y))}


def candidate_pairs(vertices: np.ndarray, cfg: EdgeConfig) -> list[tuple[int, int]]:
    nv = len(vertices)
    pairs = []
    for i in range(nv):
        d = np.linalg.norm(vertices[i + 1:] - vertices[i], axis=1)
        for j in np.nonzero((d > cfg.min_pair_distance) & (d <= cfg.max_pair_distance))[0]:
            pairs.append((i, i + 1 + int(j)))
    return pairs


def edge_probabilities(scene: Scene, vertices: np.ndarray, net: EdgeNet, cfg: EdgeConfig | None = None,
                       seed: int = 0) -> tuple[list[tuple[int, int]], np.ndarray]:
    """Classifier probability for every admissible vertex pair."""
    cfg = cfg or EdgeConfig()
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    pairs = candidate_pairs(vertices, cfg)
    if not pairs:
        return [], np.zeros(0)
    index = SpatialIndex(scene.cloud.positions)
    samples = [build_edge_sample(scene, vertices[i], vertices[j], False, cfg, index, seed) for i, j in pairs]
    return pairs, sigmoid(predict_edge_logits(net, samples, cfg.train.batch_size))


def edges_above(pairs, probs: np.ndarray, threshold: float) -> np.ndarray:
    keep = [p for p, q in zip(pairs, probs) if q >= threshold]
    return np.asarray(keep, dtype=np.int64).reshape(-1, 2)


def predict_edges(scene: Scene, vertices: np.ndarray, net: EdgeNet, threshold: float | None = None,
                  cfg: EdgeConfig | None = None, seed: int = 0) -> Wireframe:
    """All-pairs edge inference; every input vertex is kept, isolated or not."""
    cfg = cfg or EdgeConfig()
    threshold = cfg.threshold if threshold is None else threshold
    vertices = np.asarray(vertices, dtype=np.float64).reshape(-1, 3)
    pairs, probs = edge_probabilities(scene, vertices, net, cfg, seed)
    return Wireframe(vertices, edges_above(pairs, probs, threshold))
