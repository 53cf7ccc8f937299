from __future__ import annotations

import numpy as np

from roofwire.nn.layers import Parameter


class AdamW:
    """Adam with decoupled weight decay; moments live on each Parameter."""

    def __init__(self, params: list[Parameter], lr: float = 1e-3, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 1e-2):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._buffers: dict[int, np.ndarray] = {}

    def step(self) -> None:
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        bc1 = 1 - b1 ** t
        bc2 = 1 - b2 ** t
        for p in self.params:
            g = p.grad
            tmp = self._scratch(p)
            if self.weight_decay:
                p.value *= 1 - self.lr * self.weight_decay
            p.m *= b1
            np.multiply(g, 1 - b1, out=tmp)
            p.m += tmp
            p.v *= b2
            np.multiply(g, g, out=tmp)
            tmp *= 1 - b2
            p.v += tmp
            # value -= lr * (m / bc1) / (sqrt(v / bc2) + eps)
            np.sqrt(p.v, out=tmp)
            tmp *= 1 / np.sqrt(bc2)
            tmp += self.eps
            np.divide(p.m, tmp, out=tmp)
            tmp *= self.lr / bc1
            p.value -= tmp

    def _scratch(self, p: Parameter) -> np.ndarray:
        buf = self._buffers.get(id(p))
        if buf is None or buf.shape != p.value.shape or buf.dtype != p.value.dtype:
            buf = np.empty_like(p.value)
            self._buffers[id(p)] = buf
        return buf

    def state_dict(self, names: list[str]) -> dict[str, np.ndarray]:
        out = {"step": np.array([self.step_count], dtype=np.float64)}
        for name, p in zip(names, self.params):
            out[f"m.{name}"] = p.m
            out[f"v.{name}"] = p.v
        return out

    def load_state_dict(self, state: dict[str, np.ndarray], names: list[str]) -> None:
        self.step_count = int(state["step"][0])
        for name, p in zip(names, self.params):
            p.m[...] = state[f"m.{name}"]
            p.v[...] = state[f"v.{name}"]
