"""End-to-end runs: scene generation, dataset building, training, prediction, evaluation."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from roofwire.candidates import VertexCandidate, generate_candidates
from roofwire.config import RunConfig, dump_config
from roofwire.edge_model import (
    build_edge_dataset, edge_probabilities, edges_above, train_edge_net,
)
from roofwire.geometry import Wireframe
from roofwire.metrics import (
    EvalReport, harmonic_mean, hss, plot_sweep, threshold_sweep, write_sweep_csv,
)
from roofwire.networks import EdgeNet, VertexNet
from roofwire.scenegen import GENERATOR_VERSION, Scene, load_scene, make_scene, save_scene
from roofwire.training import load_checkpoint, make_optimizer, save_checkpoint, write_log_csv
from roofwire.vertex_model import (
    build_vertex_samples, predict_vertex_outputs, refine_from_outputs, train_vertex_net,
)

log = logging.getLogger(__name__)

MANIFEST = "manifest.json"
VERTEX_WEIGHTS = "vertex.pnwt"
EDGE_WEIGHTS = "edge.pnwt"
SMALL_DATASET = 1000


class DataError(RuntimeError):
    pass


class ModelError(RuntimeError):
    pass


# ------------------------------------------------------------------ scenes

def scene_seed(cfg: RunConfig, split: str, i: int) -> int:
    base = {"train": 0, "val": 1}[split]
    return int(np.random.SeedSequence([cfg.seed, base, i]).generate_state(1)[0])


def cmd_gen(cfg: RunConfig) -> dict:
    """Write every train/val scene plus a manifest listing seeds and checksums."""
    scene_dir = os.path.join(cfg.out_dir, "scenes")
    try:
        os.makedirs(scene_dir, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create {scene_dir}: {exc}") from exc
    gen = cfg.generator()
    entries = []
    for split, count in (("train", cfg.train_scenes), ("val", cfg.val_scenes)):
        for i in range(count):
            seed = scene_seed(cfg, split, i)
            name = f"{split}_{i:04d}.s23d"
            path = os.path.join(scene_dir, name)
            try:
                save_scene(make_scene(seed, gen), path)
            except OSError as exc:
                raise DataError(f"cannot write {path}: {exc}") from exc
            with open(path, "rb") as f:
                digest = hashlib.sha256(f.read()).hexdigest()
            entries.append({"file": f"scenes/{name}", "split": split, "seed": seed, "sha256": digest})
    manifest = {"generator_version": GENERATOR_VERSION, "config_seed": cfg.seed, "scenes": entries}
    with open(os.path.join(cfg.out_dir, MANIFEST), "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
    with open(os.path.join(cfg.out_dir, "config.txt"), "w") as f:
        f.write(dump_config(cfg))
    return manifest


def read_manifest(out_dir: str) -> dict:
    path = os.path.join(out_dir, MANIFEST)
    try:
        with open(path) as f:
            manifest = json.load(f)
    except FileNotFoundError as exc:
        raise DataError(f"no manifest at {path}; run 'gen' first") from exc
    except (OSError, ValueError) as exc:
        raise DataError(f"corrupt manifest {path}: {exc}") from exc
    if not isinstance(manifest, dict) or not isinstance(manifest.get("scenes"), list):
        raise DataError(f"corrupt manifest {path}: missing scene list")
    for e in manifest["scenes"]:
        if not isinstance(e, dict) or not {"file", "split", "seed"} <= set(e):
            raise DataError(f"corrupt manifest {path}: bad entry {e!r}")
    return manifest


def scene_paths(out_dir: str, split: str) -> list[str]:
    return [os.path.join(out_dir, e["file"]) for e in read_manifest(out_dir)["scenes"] if e["split"] == split]


def load_split(out_dir: str, split: str) -> list[Scene]:
    out = []
    for p in scene_paths(out_dir, split):
        try:
            out.append(load_scene(p))
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot load scene {p}: {exc}") from exc
    return out


# ------------------------------------------------------------------ training

def _vertex_net(cfg: RunConfig) -> VertexNet:
    return VertexNet(seed=cfg.seed, dropout=cfg.vertex_dropout)


def vertex_dataset(scenes: list[Scene], cfg: RunConfig):
    samples = []
    for k, scene in enumerate(scenes):
        cands = generate_candidates(scene, cfg.candidates())
        samples += build_vertex_samples(scene, cands, cfg.vertex(), seed=cfg.seed)
    return samples


def cmd_train_vertex(cfg: RunConfig, resume: bool = False, scenes: list[Scene] | None = None) -> VertexNet:
    scenes = scenes if scenes is not None else load_split(cfg.out_dir, "train")
    samples = vertex_dataset(scenes, cfg)
    if len(samples) < SMALL_DATASET:
        log.warning("vertex dataset is small: %d samples (< %d)", len(samples), SMALL_DATASET)
    npos = sum(s.is_vertex for s in samples)
    log.info("vertex dataset: %d samples, %d positive", len(samples), npos)
    vcfg = cfg.vertex()
    net = _vertex_net(cfg)
    opt = make_optimizer(net, vcfg.train)
    path = os.path.join(cfg.out_dir, VERTEX_WEIGHTS)
    if resume:
        _load(net, opt, path)
    try:
        net, opt, rows = train_vertex_net(samples, vcfg, net, opt)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    save_checkpoint(net, opt, path)
    _append_log(rows, os.path.join(cfg.out_dir, "vertex_log.csv"), resume)
    return net


def edge_vertex_sets(scenes: list[Scene], cfg: RunConfig, vnet: VertexNet | None):
    if cfg.edge_source == "gt":
        return None
    if vnet is None:
        raise ModelError("edge_source=refined needs trained vertex weights")
    return [refine_scene(scene, vnet, cfg)[0].positions for scene in scenes]


def cmd_train_edge(cfg: RunConfig, resume: bool = False, scenes: list[Scene] | None = None,
                   vnet: VertexNet | None = None) -> EdgeNet:
    scenes = scenes if scenes is not None else load_split(cfg.out_dir, "train")
    if cfg.edge_source == "refined" and vnet is None:
        vnet = load_vertex_net(cfg)
    ecfg = cfg.edge()
    samples, stats = build_edge_dataset(scenes, edge_vertex_sets(scenes, cfg, vnet), ecfg, seed=cfg.seed)
    if len(samples) < SMALL_DATASET:
        log.warning("edge dataset is small: %d samples (< %d)", len(samples), SMALL_DATASET)
    log.info("edge dataset: %s", stats)
    net = EdgeNet(seed=cfg.seed)
    opt = make_optimizer(net, ecfg.train)
    path = os.path.join(cfg.out_dir, EDGE_WEIGHTS)
    if resume:
        _load(net, opt, path)
    try:
        net, opt, rows = train_edge_net(samples, ecfg, net, opt)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    save_checkpoint(net, opt, path)
    _append_log(rows, os.path.join(cfg.out_dir, "edge_log.csv"), resume)
    return net


def cmd_train_all(cfg: RunConfig, resume: bool = False) -> tuple[VertexNet, EdgeNet]:
    scenes = load_split(cfg.out_dir, "train")
    t0 = time.perf_counter()
    vnet = cmd_train_vertex(cfg, resume, scenes)
    t1 = time.perf_counter()
    enet = cmd_train_edge(cfg, resume, scenes, vnet)
    log.info("training time: vertex %.1fs, edge %.1fs", t1 - t0, time.perf_counter() - t1)
    return vnet, enet


def _append_log(rows: list[dict], path: str, resume: bool) -> None:
    if resume and os.path.exists(path):
        with open(path, newline="") as f:
            old = list(csv.DictReader(f))
        offset = int(old[-1]["epoch"]) if old else 0
        for r in rows:
            r["epoch"] += offset
        rows = [dict(r) for r in old] + rows
    write_log_csv(rows, path)


def _load(net, opt, path: str) -> None:
    if not os.path.exists(path):
        raise ModelError(f"missing weights file: {path}")
    try:
        load_checkpoint(net, opt, path)
    except ValueError as exc:
        raise ModelError(f"cannot load {path}: {exc}") from exc


def load_vertex_net(cfg: RunConfig, path: str | None = None) -> VertexNet:
    net = _vertex_net(cfg)
    _load(net, None, path or os.path.join(cfg.out_dir, VERTEX_WEIGHTS))
    return net.eval()


def load_edge_net(cfg: RunConfig, path: str | None = None) -> EdgeNet:
    net = EdgeNet(seed=cfg.seed)
    _load(net, None, path or os.path.join(cfg.out_dir, EDGE_WEIGHTS))
    return net.eval()


# ------------------------------------------------------------------ prediction

@dataclass
class PredictionTrace:
    candidates: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def refine_scene(scene: Scene, vnet: VertexNet, cfg: RunConfig, threshold: float | None = None):
    vcfg = cfg.vertex()
    cands = generate_candidates(scene, cfg.candidates())
    samples = build_vertex_samples(scene, cands, vcfg, seed=cfg.seed)
    out = predict_vertex_outputs(vnet, samples, vcfg.train.batch_size)
    thr = vcfg.threshold if threshold is None else threshold
    return refine_from_outputs(samples, out, thr, vcfg.dedup_radius), cands


def predict_scene(scene: Scene, vnet: VertexNet, enet: EdgeNet, cfg: RunConfig) -> tuple[Wireframe, PredictionTrace]:
    """Candidates -> refined vertices -> all-pairs edges, with per-stage wall times."""
    trace = PredictionTrace()
    vcfg = cfg.vertex()
    t = time.perf_counter()
    cands = generate_candidates(scene, cfg.candidates())
    trace.candidates = cands
    trace.timings["candidates_s"] = time.perf_counter() - t
    t = time.perf_counter()
    samples = build_vertex_samples(scene, cands, vcfg, seed=cfg.seed)
    out = predict_vertex_outputs(vnet, samples, vcfg.train.batch_size)
    refined = refine_from_outputs(samples, out, vcfg.threshold, vcfg.dedup_radius)
    dt = time.perf_counter() - t
    trace.timings["refine_s"] = dt
    trace.timings["vertex_patch_ms"] = 1000 * dt / max(len(samples), 1)
    t = time.perf_counter()
    pairs, probs = edge_probabilities(scene, refined.positions, enet, cfg.edge(), seed=cfg.seed)
    wf = Wireframe(refined.positions, edges_above(pairs, probs, cfg.edge_threshold))
    trace.timings["edges_s"] = time.perf_counter() - t
    trace.timings["edge_pairs"] = len(pairs)
    log.info("predict timings %s", {k: round(v, 4) for k, v in trace.timings.items()})
    return wf, trace


def candidates_json(cands: list[VertexCandidate]) -> list[dict]:
    return [{"centroid": [float(x) for x in c.centroid], "members": int(len(c.member_ids)),
             "views": int(c.source_view_count)} for c in cands]


# ------------------------------------------------------------------ evaluation

EVAL_COLUMNS = ("scene", "hss", "f1", "iou")


def write_metrics_csv(names: list[str], reports: list[EvalReport], path: str) -> dict:
    """Per-scene rows plus a final 'mean' row, in the HSS / F1 / IoU column layout."""
    mean = {"hss": float(np.mean([r.hss for r in reports])) if reports else 0.0,
            "f1": float(np.mean([r.f1 for r in reports])) if reports else 0.0,
            "iou": float(np.mean([r.edge_iou for r in reports])) if reports else 0.0}
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(EVAL_COLUMNS)
        for n, r in zip(names, reports):
            w.writerow([n, repr(r.hss), repr(r.f1), repr(r.edge_iou)])
        w.writerow(["mean", repr(mean["hss"]), repr(mean["f1"]), repr(mean["iou"])])
    return mean


def cmd_eval_run(cfg: RunConfig, split: str = "val") -> dict:
    """Predict every scene of a split with the run's weights and score it against GT."""
    vnet, enet = load_vertex_net(cfg), load_edge_net(cfg)
    paths = scene_paths(cfg.out_dir, split)
    pred_dir = os.path.join(cfg.out_dir, "predictions")
    os.makedirs(pred_dir, exist_ok=True)
    names, reports, patch_ms = [], [], []
    for p in paths:
        scene = load_scene(p)
        wf, trace = predict_scene(scene, vnet, enet, cfg)
        name = os.path.splitext(os.path.basename(p))[0]
        with open(os.path.join(pred_dir, name + ".json"), "w") as f:
            json.dump(wf.to_json(), f)
        names.append(name)
        reports.append(hss(scene.gt, wf, cfg.tau))
        patch_ms.append(trace.timings["vertex_patch_ms"])
    mean = write_metrics_csv(names, reports, os.path.join(cfg.out_dir, "metrics.csv"))
    mean["scenes"] = len(reports)
    mean["vertex_patch_ms_mean"] = float(np.mean(patch_ms)) if patch_ms else 0.0
    return mean


def cmd_eval_pair(gt_path: str, pred_path: str, tau: float) -> EvalReport:
    from roofwire.scenegen import load_wireframe_json

    try:
        gt, pred = load_wireframe_json(gt_path), load_wireframe_json(pred_path)
        gt.validate()
        pred.validate()
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"cannot read wireframes: {exc}") from exc
    return hss(gt, pred, tau)


def scene_predictor(scene: Scene, vnet: VertexNet, enet: EdgeNet, cfg: RunConfig):
    """Callable v_thr -> (vertices, pairs, probabilities) with network outputs cached."""
    vcfg = cfg.vertex()
    cands = generate_candidates(scene, cfg.candidates())
    samples = build_vertex_samples(scene, cands, vcfg, seed=cfg.seed)
    out = predict_vertex_outputs(vnet, samples, vcfg.train.batch_size)
    cache = {}

    def predictor(v_thr: float):
        refined = refine_from_outputs(samples, out, v_thr, vcfg.dedup_radius)
        key = refined.positions.tobytes()
        if key not in cache:
            cache[key] = edge_probabilities(scene, refined.positions, enet, cfg.edge(), seed=cfg.seed)
        pairs, probs = cache[key]
        return refined.positions, pairs, probs

    return predictor


def cmd_sweep(cfg: RunConfig, split: str = "val") -> list[dict]:
    vnet, enet = load_vertex_net(cfg), load_edge_net(cfg)
    cases = [(s.gt, scene_predictor(s, vnet, enet, cfg)) for s in load_split(cfg.out_dir, split)]
    if not cases:
        raise DataError(f"no {split} scenes to sweep")
    rows = threshold_sweep(cases, cfg.vertex_grid(), cfg.edge_grid(), cfg.tau)
    sweep_dir = os.path.join(cfg.out_dir, "sweep")
    os.makedirs(sweep_dir, exist_ok=True)
    write_sweep_csv(rows, os.path.join(sweep_dir, "sweep.csv"))
    plot_sweep(rows, sweep_dir)
    return rows


# ------------------------------------------------------------------ ablation

def nearest_neighbor_edges(vertices: np.ndarray, k: int = 3) -> np.ndarray:
    """Heuristic wireframe: connect each vertex to its k nearest neighbours."""
    n = len(vertices)
    if n < 2:
        return np.zeros((0, 2), dtype=np.int64)
    d = np.linalg.norm(vertices[:, None] - vertices[None], axis=-1)
    np.fill_diagonal(d, np.inf)
    nn = np.argsort(d, axis=1, kind="stable")[:, :min(k, n - 1)]
    return np.array([(min(i, j), max(i, j)) for i in range(n) for j in nn[i]], dtype=np.int64)


ABLATION_VARIANTS = ("candidates+knn", "vertex_net+knn", "vertex_net+edge_net")


def cmd_ablation(cfg: RunConfig, split: str = "val") -> list[dict]:
    """Mean HSS / F1 / IoU with each learned stage switched off in turn."""
    vnet, enet = load_vertex_net(cfg), load_edge_net(cfg)
    scores = {v: [] for v in ABLATION_VARIANTS}
    for scene in load_split(cfg.out_dir, split):
        refined, cands = refine_scene(scene, vnet, cfg)
        raw = np.array([c.centroid for c in cands]).reshape(-1, 3)
        scores["candidates+knn"].append(hss(scene.gt, Wireframe(raw, nearest_neighbor_edges(raw)), cfg.tau))
        rv = refined.positions
        scores["vertex_net+knn"].append(hss(scene.gt, Wireframe(rv, nearest_neighbor_edges(rv)), cfg.tau))
        pairs, probs = edge_probabilities(scene, rv, enet, cfg.edge(), seed=cfg.seed)
        scores["vertex_net+edge_net"].append(
            hss(scene.gt, Wireframe(rv, edges_above(pairs, probs, cfg.edge_threshold)), cfg.tau))
    rows = []
    for v in ABLATION_VARIANTS:
        r = scores[v]
        rows.append({"variant": v, "hss": float(np.mean([x.hss for x in r])),
                     "f1": float(np.mean([x.f1 for x in r])), "iou": float(np.mean([x.edge_iou for x in r]))})
    with open(os.path.join(cfg.out_dir, "ablation.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=["variant", "hss", "f1", "iou"])
        w.writeheader()
        w.writerows(rows)
    return rows


__all__ = [
    "DataError", "ModelError", "cmd_gen", "cmd_train_vertex", "cmd_train_edge", "cmd_train_all",
    "cmd_eval_run", "cmd_eval_pair", "cmd_sweep", "cmd_ablation", "predict_scene", "harmonic_mean",
]
