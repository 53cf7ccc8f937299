"""Shared pieces of the training loops: configs, batching, checkpoints, CSV logs."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass

import numpy as np

from roofwire import constants as C
from roofwire.nn.batch import PointBatch, pack_sets
from roofwire.nn.layers import Module
from roofwire.nn.optim import AdamW
from roofwire.nn.serialize import load_tensors, save_tensors


class SingleClassError(ValueError):
    """Raised when a training set does not contain both classes."""


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-2
    batch_size: int = C.BATCH_SIZE
    epochs: int = 10
    max_steps: int = 0          # 0 = no cap
    seed: int = 0


def check_two_classes(labels) -> None:
    labels = np.asarray(labels, dtype=bool)
    if labels.size == 0 or labels.all() or not labels.any():
        raise SingleClassError("training set must contain both positive and negative samples")


def minibatches(n: int, batch_size: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for s in range(0, n, batch_size):
        yield order[s:s + batch_size]


def batch_of(features: list[np.ndarray], ids, dtype=np.float32) -> PointBatch:
    return pack_sets([features[i] for i in ids], dtype)


def make_optimizer(model: Module, cfg: TrainConfig) -> AdamW:
    return AdamW(model.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)


def save_checkpoint(model: Module, opt: AdamW, path) -> None:
    """Weights plus optimizer moments and step counter in one PNWT file."""
    names = [n for n, _ in model.named_parameters()]
    tensors = dict(model.state_dict())
    tensors.update({f"optim.{k}": v for k, v in opt.state_dict(names).items()})
    save_tensors(tensors, path)


def load_checkpoint(model: Module, opt: AdamW | None, path) -> None:
    tensors = load_tensors(path)
    optim = {k[6:]: v for k, v in tensors.items() if k.startswith("optim.")}
    model.load_state_dict({k: v for k, v in tensors.items() if not k.startswith("optim.")})
    if opt is not None and optim:
        opt.load_state_dict(optim, [n for n, _ in model.named_parameters()])


def write_log_csv(rows: list[dict], path) -> None:
    if not rows:
        return
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})


class Stopwatch:
    def __init__(self):
        self.t0 = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self.t0
