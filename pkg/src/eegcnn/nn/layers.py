"""Layers with explicit forward/backward passes.

Tensors are float64 numpy arrays in channels-last layout: a batch of 2D
inputs is (B, H, W, C), a batch of 3D inputs is (B, H, W, T, C). Every layer
caches what its backward pass needs during a training-mode forward.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# upper bound on im2col buffer size per chunk (float64 elements)
_IM2COL_BUDGET = 1 << 23


class ShapeError(ValueError):
    pass


class Layer:
    kind = "layer"
    trainable = False

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.input_shape: tuple | None = None
        self.output_shape: tuple | None = None
        self._cache = None

    def config(self) -> dict:
        return {"type": self.kind}

    def build(self, input_shape: tuple, rng: np.random.Generator | None) -> tuple:
        """Allocate parameters for per-example ``input_shape`` and return the output shape."""
        self.input_shape = tuple(input_shape)
        self.output_shape = self.compute_output_shape(self.input_shape)
        return self.output_shape

    def compute_output_shape(self, input_shape: tuple) -> tuple:
        return input_shape

    def forward(self, x, train=False, rng=None):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def clear(self):
        self._cache = None

    def _need_cache(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called without a preceding training forward")
        return self._cache

    def __repr__(self):
        args = ", ".join(f"{k}={v}" for k, v in self.config().items() if k != "type")
        return f"{type(self).__name__}({args})"


def same_padding(kernel) -> list[tuple[int, int]]:
    # even kernels put the extra row/column after the input
    return [((k - 1) // 2, k - 1 - (k - 1) // 2) for k in kernel]


class Conv(Layer):
    """Stride-1 cross-correlation with zero 'same' padding over 1-3 spatial dims."""

    kind = "conv"
    trainable = True

    def __init__(self, kernel, filters: int):
        super().__init__()
        self.kernel = tuple(int(k) for k in kernel)
        self.filters = int(filters)
        if not self.kernel or min(self.kernel) < 1 or self.filters < 1:
            raise ValueError(f"invalid conv kernel {self.kernel} x {self.filters}")

    def config(self):
        return {"type": self.kind, "kernel": list(self.kernel), "filters": self.filters}

    def compute_output_shape(self, input_shape):
        if len(input_shape) != len(self.kernel) + 1:
            raise ShapeError(
                f"conv {self.kernel} expects input of rank {len(self.kernel) + 1}, got {input_shape}")
        return input_shape[:-1] + (self.filters,)

    def build(self, input_shape, rng):
        out = super().build(input_shape, rng)
        cin = input_shape[-1]
        fan_in = math.prod(self.kernel) * cin
        bound = math.sqrt(6.0 / fan_in)
        shape = self.kernel + (cin, self.filters)
        if rng is None:
            self.params["W"] = np.zeros(shape)
        else:
            self.params["W"] = rng.uniform(-bound, bound, size=shape)
        self.params["b"] = np.zeros(self.filters)
        return out

    def _chunk(self, batch, spatial, cin):
        per = math.prod(spatial) * math.prod(self.kernel) * cin
        return max(1, _IM2COL_BUDGET // max(per, 1))

    def _cols(self, xp_chunk, spatial):
        nd = len(self.kernel)
        v = sliding_window_view(xp_chunk, self.kernel, axis=tuple(range(1, nd + 1)))
        # (b, *S, C, *k) -> (b, *S, *k, C)
        order = (0,) + tuple(range(1, nd + 1)) + tuple(range(nd + 2, 2 * nd + 2)) + (nd + 1,)
        v = v.transpose(order)
        return v.reshape(v.shape[0] * math.prod(spatial), -1)

    def _correlate(self, xp, wmat, spatial):
        """Valid correlation of padded ``xp`` with kernel matrix (prod(k)*C_in, C_out)."""
        out = np.empty((xp.shape[0],) + spatial + (wmat.shape[1],))
        step = self._chunk(xp.shape[0], spatial, xp.shape[-1])
        for s in range(0, xp.shape[0], step):
            res = self._cols(xp[s:s + step], spatial) @ wmat
            out[s:s + step] = res.reshape(out[s:s + step].shape)
        return out

    def forward(self, x, train=False, rng=None):
        if x.shape[1:-1] != self.input_shape[:-1] or x.shape[-1] != self.params["W"].shape[-2]:
            raise ShapeError(f"conv: expected input {self.input_shape}, got {x.shape[1:]}")
        pad = [(0, 0)] + same_padding(self.kernel) + [(0, 0)]
        xp = np.pad(x, pad)
        out = self._correlate(xp, self.params["W"].reshape(-1, self.filters), x.shape[1:-1])
        out += self.params["b"]
        if train:
            self._cache = xp
        return out

    def backward(self, dout, need_input_grad=True):
        xp = self._need_cache()
        nd = len(self.kernel)
        spatial = dout.shape[1:-1]
        cin = xp.shape[-1]
        dw = np.zeros((math.prod(self.kernel) * cin, self.filters))
        step = self._chunk(xp.shape[0], spatial, cin)
        for s in range(0, xp.shape[0], step):
            d2 = dout[s:s + step].reshape(-1, self.filters)
            dw += self._cols(xp[s:s + step], spatial).T @ d2
        self.grads["W"] = dw.reshape(self.params["W"].shape)
        self.grads["b"] = dout.reshape(-1, self.filters).sum(axis=0)
        if not need_input_grad:
            return None
        # input gradient = correlation of the re-padded output gradient with the
        # spatially flipped kernel, input/output channels swapped
        pad = [(0, 0)] + [(hi, lo) for lo, hi in same_padding(self.kernel)] + [(0, 0)]
        flipped = self.params["W"][(slice(None, None, -1),) * nd]
        wmat = np.swapaxes(flipped, -1, -2).reshape(-1, cin)
        return self._correlate(np.pad(dout, pad), wmat, spatial)


class MaxPool(Layer):
    """Non-overlapping max pooling; trailing remainders are truncated."""

    kind = "maxpool"

    def __init__(self, pool):
        super().__init__()
        self.pool = tuple(int(p) for p in pool)
        if not self.pool or min(self.pool) < 1:
            raise ValueError(f"invalid pool {self.pool}")

    def config(self):
        return {"type": self.kind, "pool": list(self.pool)}

    def compute_output_shape(self, input_shape):
        spatial = input_shape[:-1]
        if len(spatial) != len(self.pool):
            raise ShapeError(f"maxpool {self.pool} expects {len(self.pool)} spatial dims, got {input_shape}")
        if any(s < p for s, p in zip(spatial, self.pool)):
            raise ShapeError(f"maxpool {self.pool} larger than input {input_shape}")
        return tuple(s // p for s, p in zip(spatial, self.pool)) + (input_shape[-1],)

    def _blocks(self, x):
        nd = len(self.pool)
        out_sp = tuple(s // p for s, p in zip(x.shape[1:-1], self.pool))
        crop = (slice(None),) + tuple(slice(0, o * p) for o, p in zip(out_sp, self.pool)) + (slice(None),)
        shape = (x.shape[0],)
        for o, p in zip(out_sp, self.pool):
            shape += (o, p)
        shape += (x.shape[-1],)
        blocks = x[crop].reshape(shape)
        # (B, o0, p0, o1, p1, ..., C) -> (B, o0, o1, ..., C, p0, p1, ...)
        order = (0,) + tuple(1 + 2 * i for i in range(nd)) + (2 * nd + 1,) + tuple(2 + 2 * i for i in range(nd))
        blocks = blocks.transpose(order)
        return blocks.reshape(blocks.shape[:nd + 2] + (-1,)), out_sp, order, shape

    def forward(self, x, train=False, rng=None):
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"maxpool: expected input {self.input_shape}, got {x.shape[1:]}")
        blocks, _, order, shape = self._blocks(x)
        idx = np.argmax(blocks, axis=-1)
        out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
        if train:
            self._cache = (x.shape, idx, order, shape)
        return out

    def backward(self, dout):
        xshape, idx, order, shape = self._need_cache()
        nd = len(self.pool)
        dblocks = np.zeros(dout.shape + (math.prod(self.pool),))
        np.put_along_axis(dblocks, idx[..., None], dout[..., None], axis=-1)
        dblocks = dblocks.reshape(dout.shape + self.pool)
        inv = np.argsort(order)
        dcrop = dblocks.transpose(inv).reshape(
            (xshape[0],) + tuple(o * p for o, p in zip(dout.shape[1:-1], self.pool)) + (xshape[-1],))
        dx = np.zeros(xshape)
        dx[(slice(None),) + tuple(slice(0, n) for n in dcrop.shape[1:nd + 1]) + (slice(None),)] = dcrop
        return dx


class Dropout(Layer):
    """Inverted dropout: survivors are scaled by 1/(1-p) at train time."""

    kind = "dropout"

    def __init__(self, p: float):
        super().__init__()
        if not 0 <= p < 1:
            raise ValueError(f"dropout p must be in [0, 1), got {p}")
        self.p = float(p)

    def config(self):
        return {"type": self.kind, "p": self.p}

    def forward(self, x, train=False, rng=None):
        if not train:
            return x
        if self.p == 0:
            self._cache = 1.0
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        mask = (rng.random(x.shape) >= self.p) / (1.0 - self.p)
        self._cache = mask
        return x * mask

    def backward(self, dout):
        return dout * self._need_cache()


class Flatten(Layer):
    kind = "flatten"

    def compute_output_shape(self, input_shape):
        return (math.prod(input_shape),)

    def forward(self, x, train=False, rng=None):
        if train:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dout):
        return dout.reshape(self._need_cache())


class Dense(Layer):
    kind = "dense"
    trainable = True

    def __init__(self, units: int):
        super().__init__()
        if units < 1:
            raise ValueError("dense units must be >= 1")
        self.units = int(units)

    def config(self):
        return {"type": self.kind, "units": self.units}

    def compute_output_shape(self, input_shape):
        if len(input_shape) != 1:
            raise ShapeError(f"dense expects flat input, got {input_shape}")
        return (self.units,)

    def build(self, input_shape, rng):
        out = super().build(input_shape, rng)
        fan_in = input_shape[0]
        bound = math.sqrt(6.0 / fan_in)
        if rng is None:
            self.params["W"] = np.zeros((fan_in, self.units))
        else:
            self.params["W"] = rng.uniform(-bound, bound, size=(fan_in, self.units))
        self.params["b"] = np.zeros(self.units)
        return out

    def forward(self, x, train=False, rng=None):
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"dense: expected input {self.input_shape}, got {x.shape[1:]}")
        if train:
            self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, dout):
        x = self._need_cache()
        self.grads["W"] = x.T @ dout
        self.grads["b"] = dout.sum(axis=0)
        return dout @ self.params["W"].T


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train=False, rng=None):
        if train:
            self._cache = x > 0
        return np.maximum(x, 0.0)

    def backward(self, dout):
        return dout * self._need_cache()


class Softmax(Layer):
    kind = "softmax"

    def forward(self, x, train=False, rng=None):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        if train:
            self._cache = p
        return p

    def backward(self, dout):
        p = self._need_cache()
        return p * (dout - (dout * p).sum(axis=-1, keepdims=True))


LAYER_TYPES = {cls.kind: cls for cls in (Conv, MaxPool, Dropout, Flatten, Dense, ReLU, Softmax)}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("type")
    if kind not in LAYER_TYPES:
        raise ValueError(f"unknown layer type {kind!r}")
    return LAYER_TYPES[kind](**cfg)
