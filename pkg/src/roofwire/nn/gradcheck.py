"""Central finite-difference gradient checks for modules and losses (float64)."""

from __future__ import annotations

from typing import Callable

import numpy as np

from roofwire.nn.layers import Dropout, Module


def rel_error(analytic: np.ndarray, numeric: np.ndarray, scale: float | None = None,
              floor: float = 1e-3) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor * scale).

    `scale` is the largest gradient magnitude of the whole check (defaults to the
    largest entry given). The floor keeps entries that are tiny relative to it,
    where central differences only resolve round-off, from dominating the ratio.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    mag = np.maximum(np.abs(a), np.abs(n))
    if scale is None:
        scale = float(mag.max())
    denom = np.maximum(mag, floor * scale + 1e-300)
    return float(np.max(np.abs(a - n) / denom))


def _reseed_dropouts(module: Module, seed: int) -> None:
    stack = [module]
    while stack:
        m = stack.pop()
        if isinstance(m, Dropout):
            m.rng = np.random.default_rng(seed)
        stack.extend(child for _, child in m.children())


def numeric_grad(f: Callable[[], float], arr: np.ndarray, idx: np.ndarray, h: float = 1e-6) -> np.ndarray:
    flat = arr.reshape(-1)
    out = np.empty(len(idx))
    for k, i in enumerate(idx):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        out[k] = (fp - fm) / (2 * h)
    return out


def check_module(module: Module, forward: Callable, backward: Callable, inputs: list[np.ndarray],
                 rng: np.random.Generator, max_entries: int = 40, h: float = 1e-6) -> float:
    """Compare analytic input and parameter gradients with central differences.

    `forward(*inputs)` returns an array (or dict of arrays); the scalar objective is
    the dot product with fixed random weights. `backward(dout)` runs the module's
    backward pass and returns the gradient w.r.t. ``inputs[0]``.
    """
    module.train()
    seed = int(rng.integers(1 << 31))

    def run():
        _reseed_dropouts(module, seed)
        return forward(*inputs)

    out = run()
    outs = out if isinstance(out, dict) else {"y": out}
    weights = {k: rng.standard_normal(np.shape(v)) for k, v in outs.items()}

    def objective():
        o = run()
        o = o if isinstance(o, dict) else {"y": o}
        return float(sum(np.sum(o[k] * weights[k]) for k in weights))

    objective()
    module.zero_grad()
    dout = weights if isinstance(out, dict) else weights["y"]
    dx = backward(dout)
    params = [p for _, p in module.named_parameters()]
    scale = max([float(np.abs(dx).max())] + [float(np.abs(p.grad).max()) for p in params])
    x = inputs[0]
    idx = rng.choice(x.size, size=min(max_entries, x.size), replace=False)
    worst = rel_error(np.asarray(dx).reshape(-1)[idx], numeric_grad(objective, x, idx, h), scale)
    for p in params:
        idx = rng.choice(p.value.size, size=min(max_entries, p.value.size), replace=False)
        analytic = p.grad.reshape(-1)[idx].copy()
        worst = max(worst, rel_error(analytic, numeric_grad(objective, p.value, idx, h), scale))
    return worst


def check_loss(loss_fn: Callable, pred: np.ndarray, target: np.ndarray, h: float = 1e-6) -> float:
    _, grad = loss_fn(pred, target)
    idx = np.arange(pred.size)
    return rel_error(grad.reshape(-1), numeric_grad(lambda: loss_fn(pred, target)[0], pred, idx, h))
