"""Layers with hand-written backward passes.

Each layer caches what its backward pass needs during a training-mode forward
call. ``backward`` accumulates into ``Parameter.grad`` and returns the gradient
with respect to the layer input. Point-wise layers act on packed (P, C) rows
(see :mod:`roofwire.nn.batch`); set-level layers act on (B, C).
"""

from __future__ import annotations

import numpy as np

from roofwire import constants as C

from roofwire.nn.batch import segment_max, segment_mean, segment_sum


class Parameter:
    __slots__ = ("value", "grad", "m", "v")

    def __init__(self, value: np.ndarray):
        self.value = value
        self.grad = np.zeros_like(value)
        self.m = np.zeros_like(value)
        self.v = np.zeros_like(value)

    @property
    def shape(self):
        return self.value.shape


class Module:
    """Container tracking named parameters, buffers and child modules."""

    def __init__(self):
        self.training = True

    def children(self):
        for name, val in vars(self).items():
            if isinstance(val, Module):
                yield name, val
            elif isinstance(val, list) and val and all(isinstance(v, Module) for v in val):
                for i, v in enumerate(val):
                    yield f"{name}.{i}", v

    def named_parameters(self, prefix: str = ""):
        for name, val in vars(self).items():
            if isinstance(val, Parameter):
                yield prefix + name, val
        for name, child in self.children():
            yield from child.named_parameters(prefix + name + ".")

    def named_buffers(self, prefix: str = ""):
        for name in getattr(self, "_buffers", ()):
            yield prefix + name, getattr(self, name)
        for name, child in self.children():
            yield from child.named_buffers(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def num_parameters(self) -> int:
        return int(sum(p.value.size for p in self.parameters()))

    def train(self, mode: bool = True):
        self.training = mode
        for _, child in self.children():
            child.train(mode)
        return self

    def eval(self):
        return self.train(False)

    def zero_grad(self):
        for p in self.parameters():
            p.grad.fill(0)

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {name: p.value for name, p in self.named_parameters()}
        out.update(dict(self.named_buffers()))
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        from roofwire.nn.serialize import NameMismatchError, ShapeMismatchError

        own = self.state_dict()
        missing = sorted(set(own) - set(state))
        extra = sorted(set(state) - set(own))
        if missing or extra:
            raise NameMismatchError(missing, extra)
        for name, arr in own.items():
            if tuple(state[name].shape) != tuple(arr.shape):
                raise ShapeMismatchError(f"{name}: expected {arr.shape}, got {state[name].shape}")
        for name, arr in own.items():
            arr[...] = state[name]


def uniform_init(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Linear(Module):
    """y = x @ W.T + b. Also serves as the 1x1 point-wise convolution on packed rows."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, dtype=np.float32, zero: bool = False):
        super().__init__()
        if zero:
            self.weight = Parameter(np.zeros((n_out, n_in), dtype=dtype))
            self.bias = Parameter(np.zeros(n_out, dtype=dtype))
        else:
            self.weight = Parameter(uniform_init(rng, (n_out, n_in), n_in, dtype))
            self.bias = Parameter(uniform_init(rng, (n_out,), n_in, dtype))
        self._x = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        if self.training:
            self._x = x
        y = x @ self.weight.value.T
        y += self.bias.value
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        self.weight.grad += dy.T @ self._x
        self.bias.grad += dy.sum(axis=0)
        dx = dy @ self.weight.value
        self._x = None
        return dx


class BatchNorm(Module):
    """Per-channel normalisation over all rows (every valid point of every set)."""

    _buffers = ("running_mean", "running_var")

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1, dtype=np.float32):
        super().__init__()
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)
        self.eps = eps
        self.momentum = momentum
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        n = x.shape[0]
        if n == 0:
            raise ValueError("batch norm needs at least one valid slot")
        if self.training:
            mean = x.mean(axis=0)
            xc = x - mean
            var = np.einsum("ij,ij->j", xc, xc) / n
            inv_std = 1.0 / np.sqrt(var + self.eps)
            xc *= inv_std
            xhat = xc
            m = self.momentum
            unbiased = var * (n / (n - 1)) if n > 1 else var
            self.running_mean *= 1 - m
            self.running_mean += m * mean
            self.running_var *= 1 - m
            self.running_var += m * unbiased
            self._cache = (xhat, inv_std)
            y = xhat * self.weight.value
        else:
            inv_std = 1.0 / np.sqrt(self.running_var + self.eps)
            scale = (self.weight.value * inv_std).astype(x.dtype)
            self._cache = scale
            y = (x - self.running_mean) * scale
        y += self.bias.value
        return y

    def backward(self, dy: np.ndarray) -> np.ndarray:
        if not self.training:
            return dy * self._cache
        xhat, inv_std = self._cache
        n = dy.shape[0]
        dbeta = dy.sum(axis=0)
        dgamma = np.einsum("ij,ij->j", dy, xhat)
        self.weight.grad += dgamma
        self.bias.grad += dbeta
        # dx = gamma * inv_std / n * (n*dy - sum(dy) - xhat*sum(dy*xhat))
        dx = xhat * (-dgamma / n)
        dx += dy
        dx -= dbeta / n
        dx *= self.weight.value * inv_std
        self._cache = None
        return dx


class GroupNorm(Module):
    def __init__(self, channels: int, groups: int = 32, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        if channels % groups:
            raise ValueError(f"{channels} channels not divisible into {groups} groups")
        self.groups = groups
        self.eps = eps
        self.weight = Parameter(np.ones(channels, dtype=dtype))
        self.bias = Parameter(np.zeros(channels, dtype=dtype))
        self._cache = None

    def forward(self, x: np.ndarray) -> np.ndarray:
        B, C = x.shape
        xg = x.reshape(B, self.groups, C // self.groups)
        mean = xg.mean(axis=2, keepdims=True)
        var = xg.var(axis=2, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = ((xg - mean) * inv_std).reshape(B, C)
        if self.training:
            self._cache = (xhat, inv_std)
        return xhat * self.weight.value + self.bias.value

    def backward(self, dy: np.ndarray) -> np.ndarray:
        xhat, inv_std = self._cache
        B, C = dy.shape
        self.weight.grad += (dy * xhat).sum(axis=0)
        self.bias.grad += dy.sum(axis=0)
        dxhat = (dy * self.weight.value).reshape(B, self.groups, -1)
        xh = xhat.reshape(B, self.groups, -1)
        dx = dxhat - dxhat.mean(axis=2, keepdims=True) - xh * (dxhat * xh).mean(axis=2, keepdims=True)
        dx *= inv_std
        self._cache = None
        return dx.reshape(B, C)


def leaky_relu(x, slope: float = 0.01):
    return np.where(x > 0, x, slope * x)


def relu(x):
    return np.maximum(x, 0)


def sigmoid(x):
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softplus(x):
    x = np.asarray(x)
    big = x > 20
    out = np.where(big, x, np.log1p(np.exp(np.minimum(x, 20))))
    return out.astype(np.result_type(x, np.float32), copy=False)


class LeakyReLU(Module):
    def __init__(self, slope: float = 0.01):
        super().__init__()
        self.slope = slope
        self._pos = None

    def forward(self, x):
        if self.training:
            self._pos = x > 0
        if self.slope < 1:
            return np.maximum(x, self.slope * x)
        return leaky_relu(x, self.slope)

    def backward(self, dy):
        dx = np.where(self._pos, dy, self.slope * dy)
        self._pos = None
        return dx


class ReLU(Module):
    def __init__(self):
        super().__init__()
        self._pos = None

    def forward(self, x):
        if self.training:
            self._pos = x > 0
        return np.maximum(x, 0)

    def backward(self, dy):
        dx = dy * self._pos
        self._pos = None
        return dx


class Sigmoid(Module):
    def __init__(self):
        super().__init__()
        self._y = None

    def forward(self, x):
        y = sigmoid(x)
        if self.training:
            self._y = y
        return y

    def backward(self, dy):
        y = self._y
        return dy * y * (1 - y)


class Softplus(Module):
    def __init__(self):
        super().__init__()
        self._x = None

    def forward(self, x):
        if self.training:
            self._x = x
        return softplus(x)

    def backward(self, dy):
        return dy * sigmoid(self._x)


class Dropout(Module):
    """Inverted dropout; identity in eval mode."""

    def __init__(self, p: float, rng: np.random.Generator):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError("dropout probability must lie in [0, 1)")
        self.p = p
        self.rng = rng
        self._mask = None

    def forward(self, x):
        if not self.training or self.p == 0:
            self._mask = None
            return x
        keep = self.rng.random(x.shape) >= self.p
        self._mask = keep.astype(x.dtype) / np.asarray(1 - self.p, dtype=x.dtype)
        return x * self._mask

    def backward(self, dy):
        if self._mask is None:
            return dy
        dx = dy * self._mask
        self._mask = None
        return dx


def residual_add(x: np.ndarray, skip: np.ndarray) -> np.ndarray:
    if x.shape != skip.shape:
        raise ValueError(f"residual shapes differ: {x.shape} vs {skip.shape}")
    return x + skip


class ChannelAttention(Module):
    """Masked average pool -> bottleneck MLP -> sigmoid gate, broadcast over the set's points."""

    def __init__(self, channels: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        super().__init__()
        self.fc1 = Linear(channels, hidden, rng, dtype)
        self.fc2 = Linear(hidden, channels, rng, dtype)
        self._cache = None

    def forward(self, x: np.ndarray, offsets: np.ndarray) -> np.ndarray:
        seg = np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))
        pool = segment_mean(x, offsets)
        h = self.fc1.forward(pool)
        pos = h > 0
        hr = h * pos
        alpha = sigmoid(self.fc2.forward(hr))
        if self.training:
            self._cache = (x, seg, offsets, pos, alpha)
        return x * alpha[seg]

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x, seg, offsets, pos, alpha = self._cache
        dalpha = segment_sum(dy * x, offsets)
        dz2 = dalpha * alpha * (1 - alpha)
        dh = self.fc2.backward(dz2) * pos
        dpool = self.fc1.backward(dh)
        counts = np.diff(offsets).astype(dy.dtype)
        dx = dy * alpha[seg]
        dx += (dpool / counts[:, None])[seg]
        self._cache = None
        return dx


class GlobalPool(Module):
    """Per-set pooling over points: 'max', 'mean', or 'mixed' = w_max*max + w_avg*mean."""

    def __init__(self, mode: str = "max", w_max: float = C.POOL_MAX_WEIGHT, w_avg: float = C.POOL_MEAN_WEIGHT):
        super().__init__()
        if mode not in ("max", "mean", "mixed"):
            raise ValueError(f"unknown pooling mode {mode!r}")
        self.mode = mode
        self.w_max = w_max if mode == "mixed" else (1.0 if mode == "max" else 0.0)
        self.w_avg = w_avg if mode == "mixed" else (1.0 if mode == "mean" else 0.0)
        self._cache = None

    def forward(self, x: np.ndarray, offsets: np.ndarray) -> np.ndarray:
        out = 0
        arg = None
        if self.w_max:
            vals, arg = segment_max(x, offsets)
            out = vals * np.asarray(self.w_max, dtype=x.dtype) if self.w_max != 1 else vals
        if self.w_avg:
            mean = segment_mean(x, offsets)
            out = out + (mean * np.asarray(self.w_avg, dtype=x.dtype) if self.w_avg != 1 else mean)
        if self.training:
            self._cache = (x.shape, x.dtype, offsets, arg)
        return out

    def backward(self, dg: np.ndarray) -> np.ndarray:
        shape, dtype, offsets, arg = self._cache
        P, C = shape
        dx = np.zeros(shape, dtype=dtype)
        if self.w_max:
            flat = (arg * C + np.arange(C)).ravel()
            dx.ravel()[flat] = (dg * self.w_max).ravel()
        if self.w_avg:
            counts = np.diff(offsets).astype(dtype)
            seg = np.repeat(np.arange(len(counts)), np.diff(offsets))
            dx += (dg * self.w_avg / counts[:, None])[seg]
        self._cache = None
        return dx
