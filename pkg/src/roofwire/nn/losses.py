"""Mean-reduced losses returning (value, gradient w.r.t. the prediction)."""

from __future__ import annotations

import numpy as np


def bce_with_logits(logit, target) -> tuple[float, np.ndarray]:
    z = np.asarray(logit)
    t = np.asarray(target, dtype=z.dtype)
    n = max(z.size, 1)
    # max(z, 0) - z*t + log(1 + exp(-|z|)) never overflows
    loss = np.maximum(z, 0) - z * t + np.log1p(np.exp(-np.abs(z)))
    e = np.exp(-np.abs(z))
    sig = np.where(z >= 0, 1 / (1 + e), e / (1 + e))
    grad = (sig - t) / n
    return float(loss.sum() / n), grad.astype(z.dtype, copy=False)


def smooth_l1(pred, target, beta: float = 1.0) -> tuple[float, np.ndarray]:
    p = np.asarray(pred)
    d = p - np.asarray(target, dtype=p.dtype)
    n = max(d.size, 1)
    ad = np.abs(d)
    small = ad < beta
    loss = np.where(small, 0.5 * d * d / beta, ad - 0.5 * beta)
    grad = np.where(small, d / beta, np.sign(d)) / n
    return float(loss.sum() / n), grad.astype(p.dtype, copy=False)
