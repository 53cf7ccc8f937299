"""Wireframe scores: vertex F1 under optimal one-to-one matching, correspondence-induced
edge IoU, and their harmonic mean (HSS); plus threshold-grid sweeps."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from roofwire import constants as C
from roofwire.geometry import Wireframe

SWEEP_COLUMNS = ("v_thr", "e_thr", "hss_mean", "f1_mean", "iou_mean", "vertices_mean")


def match_vertices(gt_v, pred_v, tau: float = C.MATCH_TAU) -> list[tuple[int, int, float]]:
    """Minimum-total-distance assignment, then pairs farther than `tau` dropped.

    Returns (gt index, pred index, distance) sorted by gt index.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    gt_v = np.asarray(gt_v, dtype=np.float64).reshape(-1, 3)
    pred_v = np.asarray(pred_v, dtype=np.float64).reshape(-1, 3)
    if len(gt_v) == 0 or len(pred_v) == 0:
        return []
    cost = np.linalg.norm(gt_v[:, None] - pred_v[None], axis=-1)
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c), float(cost[r, c])) for r, c in zip(rows, cols) if cost[r, c] <= tau]


def vertex_f1(matching, n_gt: int, n_pred: int) -> tuple[float, float, float]:
    """(f1, precision, recall). Both sets empty scores 1; exactly one empty scores 0."""
    if n_gt == 0 and n_pred == 0:
        return 1.0, 1.0, 1.0
    if n_gt == 0 or n_pred == 0:
        return 0.0, 0.0, 0.0
    tp = len(matching)
    p = tp / n_pred
    r = tp / n_gt
    f1 = 0.0 if tp == 0 else 2 * p * r / (p + r)
    return f1, p, r


def edge_iou(gt_w: Wireframe, pred_w: Wireframe, matching) -> float:
    """Pred edges whose both endpoints are matched and land on a GT edge form the intersection."""
    gt_e = gt_w.edge_set()
    pred_e = pred_w.edge_set()
    if not gt_e and not pred_e:
        return 1.0
    to_gt = {p: g for g, p, _ in matching}
    inter = 0
    for i, j in pred_e:
        if i in to_gt and j in to_gt:
            a, b = to_gt[i], to_gt[j]
            if (min(a, b), max(a, b)) in gt_e:
                inter += 1
    return inter / (len(gt_e) + len(pred_e) - inter)


def harmonic_mean(a: float, b: float) -> float:
    if a <= 0 or b <= 0:
        return 0.0
    return 2 * a * b / (a + b)


@dataclass
class EvalReport:
    f1: float
    precision: float
    recall: float
    edge_iou: float
    hss: float
    matching: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {"hss": self.hss, "f1": self.f1, "precision": self.precision, "recall": self.recall,
                "edge_iou": self.edge_iou, "matching": [[g, p, d] for g, p, d in self.matching]}


def hss(gt_w: Wireframe, pred_w: Wireframe, tau: float = C.MATCH_TAU) -> EvalReport:
    m = match_vertices(gt_w.vertices, pred_w.vertices, tau)
    f1, p, r = vertex_f1(m, len(gt_w.vertices), len(pred_w.vertices))
    iou = edge_iou(gt_w, pred_w, m)
    return EvalReport(f1, p, r, iou, harmonic_mean(f1, iou), m)


def threshold_sweep(cases, vertex_grid, edge_grid, tau: float = C.MATCH_TAU) -> list[dict]:
    """Evaluate every (vertex threshold, edge threshold) combination.

    `cases` is a list of (gt wireframe, predictor) where ``predictor(v_thr)`` returns
    (vertices, candidate pairs, pair probabilities). Edge thresholds only filter pairs,
    so vertex matching and F1 are shared across a row of the grid.
    """
    rows = []
    for v_thr in vertex_grid:
        per_scene = []
        for gt, predictor in cases:
            verts, pairs, probs = predictor(float(v_thr))
            m = match_vertices(gt.vertices, verts, tau)
            f1, _, _ = vertex_f1(m, len(gt.vertices), len(verts))
            per_scene.append((gt, verts, pairs, np.asarray(probs), m, f1))
        for e_thr in edge_grid:
            h, f, i, nv = [], [], [], []
            for gt, verts, pairs, probs, m, f1 in per_scene:
                edges = [p for p, q in zip(pairs, probs) if q >= e_thr]
                iou = edge_iou(gt, Wireframe(verts, np.asarray(edges, dtype=np.int64).reshape(-1, 2)), m)
                h.append(harmonic_mean(f1, iou))
                f.append(f1)
                i.append(iou)
                nv.append(len(verts))
            rows.append({"v_thr": float(v_thr), "e_thr": float(e_thr), "hss_mean": float(np.mean(h)),
                         "f1_mean": float(np.mean(f)), "iou_mean": float(np.mean(i)),
                         "vertices_mean": float(np.mean(nv))})
    return rows


def write_sweep_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SWEEP_COLUMNS)
        for r in rows:
            w.writerow([repr(float(r[c])) for c in SWEEP_COLUMNS])


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [{k: float(v) for k, v in r.items()} for r in csv.DictReader(fh)]


def plot_sweep(rows: list[dict], out_dir) -> list[str]:
    """One SVG per metric: curves over the vertex threshold, one line per edge threshold."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(out_dir, exist_ok=True)
    paths = []
    e_vals = sorted({r["e_thr"] for r in rows})
    for metric in ("hss_mean", "f1_mean", "iou_mean"):
        fig, ax = plt.subplots(figsize=(6, 4))
        for e in e_vals:
            sub = sorted((r for r in rows if r["e_thr"] == e), key=lambda r: r["v_thr"])
            ax.plot([r["v_thr"] for r in sub], [r[metric] for r in sub], marker="o", ms=3, label=f"edge {e:.2f}")
        ax.set_xlabel("vertex threshold")
        ax.set_ylabel(metric.replace("_mean", "").upper())
        ax.grid(alpha=0.3)
        if len(e_vals) <= 12:
            ax.legend(fontsize=7)
        fig.tight_layout()
        path = os.path.join(out_dir, f"sweep_{metric.replace('_mean', '')}.svg")
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        paths.append(path)
    return paths


def best_cell(rows: list[dict]) -> dict:
    return max(rows, key=lambda r: (r["hss_mean"], -r["v_thr"], -r["e_thr"]))
