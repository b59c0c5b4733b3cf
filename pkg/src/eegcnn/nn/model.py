"""Sequential model, the four convolutional architectures, and model files."""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np

from .layers import Conv, Dense, Dropout, Flatten, Layer, MaxPool, ReLU, ShapeError, Softmax, layer_from_config

MODEL_FORMAT_VERSION = 1

# (kind, args) rows; ReLU follows every conv and the 128-unit dense layer
_TABLE = {
    "3Conv": [("conv", (5, 5, 32)), ("conv", (3, 3, 32)), ("pool", (2, 2)), ("conv", (3, 3, 64)),
              ("dropout", 0.5), ("fc", 128), ("dropout", 0.5), ("fc", 2)],
    "4Conv": [("conv", (5, 5, 32)), ("conv", (3, 3, 32)), ("pool", (2, 2)), ("conv", (2, 2, 64)),
              ("conv", (2, 2, 64)), ("dropout", 0.5), ("fc", 128), ("dropout", 0.5), ("fc", 2)],
    "5Conv": [("conv", (5, 5, 32)), ("conv", (2, 2, 32)), ("conv", (2, 2, 32)), ("pool", (2, 2)),
              ("conv", (2, 2, 64)), ("conv", (2, 2, 64)), ("dropout", 0.5), ("fc", 128),
              ("dropout", 0.5), ("fc", 2)],
    "6Conv": [("conv", (5, 5, 32)), ("conv", (2, 2, 32)), ("conv", (2, 2, 32)), ("pool", (2, 2)),
              ("conv", (2, 2, 64)), ("conv", (2, 2, 64)), ("conv", (2, 1, 64)), ("dropout", 0.5),
              ("fc", 128), ("dropout", 0.5), ("fc", 2)],
}
ARCHITECTURES = tuple(_TABLE)


def architecture_layers(name: str, ndim: int = 2) -> list[Layer]:
    """Layer list for one architecture.

    ``ndim=3`` lifts it to (grid rows, grid cols, time) inputs: a kh x kw
    kernel becomes kh x kh x kw (electrode extent on both grid axes, time
    extent on the time axis) and pools become 2x2x2.
    """
    if name not in _TABLE:
        raise ValueError(f"unknown architecture {name!r}; expected one of {ARCHITECTURES}")
    if ndim not in (2, 3):
        raise ValueError("ndim must be 2 or 3")
    layers: list[Layer] = []
    flat = False
    for kind, arg in _TABLE[name]:
        if kind == "conv":
            kh, kw, filters = arg
            kernel = (kh, kw) if ndim == 2 else (kh, kh, kw)
            layers += [Conv(kernel, filters), ReLU()]
        elif kind == "pool":
            layers.append(MaxPool(arg if ndim == 2 else arg + (arg[-1],)))
        elif kind == "dropout":
            layers.append(Dropout(arg))
        elif kind == "fc":
            if not flat:
                layers.append(Flatten())
                flat = True
            layers.append(Dense(arg))
            if arg != 2:
                layers.append(ReLU())
    layers.append(Softmax())
    return layers


class Model:
    """A built sequential network ending in a softmax over two classes."""

    def __init__(self, layers: list[Layer], input_shape, name: str = "custom", seed: int | None = 0):
        self.name = name
        self.layers = list(layers)
        self.input_shape = tuple(int(s) for s in input_shape)
        rng = np.random.default_rng(seed) if seed is not None else None
        shape = self.input_shape
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.build(shape, rng)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        self.output_shape = shape
        self._forwarded = False

    # -- parameters -------------------------------------------------------

    def parameters(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{k}", v) for i, layer in enumerate(self.layers) for k, v in layer.params.items()]

    def gradients(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{i}.{k}", layer.grads[k]) for i, layer in enumerate(self.layers) for k in layer.params]

    def n_params(self) -> int:
        return sum(p.size for _, p in self.parameters())

    def get_weights(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.parameters()}

    def set_weights(self, weights: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            for k in layer.params:
                w = weights[f"{i}.{k}"]
                if w.shape != layer.params[k].shape:
                    raise ShapeError(f"layer {i}: weight {k} has shape {w.shape}, expected {layer.params[k].shape}")
                layer.params[k][...] = w

    @property
    def n_conv(self) -> int:
        return sum(isinstance(layer, Conv) for layer in self.layers)

    # -- passes -----------------------------------------------------------

    def forward(self, x, mode: str = "eval", rng: np.random.Generator | None = None) -> np.ndarray:
        """Class probabilities for a batch ``x`` of shape (B, *input_shape)."""
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"layer 0 ({self.layers[0].kind}): expected input {self.input_shape}, got {x.shape[1:]}")
        train = mode == "train"
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, train=train, rng=rng)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
        self._forwarded = train
        return x

    def predict(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x)
        out = [self.forward(x[s:s + batch_size]) for s in range(0, len(x), batch_size)]
        return np.concatenate(out) if out else np.empty((0,) + self.output_shape)

    def backward(self, y_onehot, need_input_grad: bool = True) -> list[tuple[str, np.ndarray]]:
        """Gradients of mean softmax cross-entropy w.r.t. every parameter.

        Uses the intermediates of the last training-mode forward. The input
        gradient is left in ``self.input_grad`` unless ``need_input_grad`` is
        False (training skips it).
        """
        if not self._forwarded:
            raise RuntimeError("backward called without a preceding training forward")
        head = self.layers[-1]
        if not isinstance(head, Softmax):
            raise RuntimeError("model must end in a softmax")
        p = head._need_cache()
        y = np.asarray(y_onehot, dtype=np.float64)
        d = (p - y) / p.shape[0]
        for i in range(len(self.layers) - 2, 0, -1):
            d = self.layers[i].backward(d)
        first = self.layers[0]
        if isinstance(first, Conv):
            self.input_grad = first.backward(d, need_input_grad=need_input_grad)
        else:
            self.input_grad = first.backward(d)
        return self.gradients()

    def clear(self):
        for layer in self.layers:
            layer.clear()
        self._forwarded = False

    # -- serialization ----------------------------------------------------

    def to_config(self) -> dict:
        return {
            "format_version": MODEL_FORMAT_VERSION,
            "name": self.name,
            "input_shape": list(self.input_shape),
            "layers": [layer.config() for layer in self.layers],
            "shapes": {k: list(v.shape) for k, v in self.parameters()},
        }

    def save(self, path) -> Path:
        path = Path(path)
        arrays = {k: v for k, v in self.parameters()}
        meta = json.dumps(self.to_config(), sort_keys=True)
        buf = io.BytesIO()
        np.savez(buf, __meta__=np.frombuffer(meta.encode("utf-8"), dtype=np.uint8), **arrays)
        path.write_bytes(buf.getvalue())
        return path

    @classmethod
    def load(cls, path) -> "Model":
        with np.load(Path(path), allow_pickle=False) as f:
            meta = json.loads(bytes(f["__meta__"]).decode("utf-8"))
            if meta.get("format_version") != MODEL_FORMAT_VERSION:
                raise ValueError(f"unsupported model format {meta.get('format_version')}")
            weights = {k: f[k] for k in f.files if k != "__meta__"}
        model = cls([layer_from_config(c) for c in meta["layers"]], meta["input_shape"],
                    name=meta["name"], seed=None)
        model.set_weights(weights)
        return model


def build_model(name: str, input_shape, seed: int = 0) -> Model:
    """Instantiate a named architecture for a per-example input shape.

    2D inputs are (12, L, 1); 3D inputs are (4, 5, T, 1).
    """
    ndim = len(input_shape) - 1
    return Model(architecture_layers(name, ndim), input_shape, name=name, seed=seed)


def cross_entropy(probs: np.ndarray, y_onehot: np.ndarray) -> float:
    p = np.clip(np.sum(probs * y_onehot, axis=-1), 1e-300, None)
    return float(-np.mean(np.log(p)))


def one_hot(labels, n_classes: int = 2) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.size, n_classes))
    out[np.arange(labels.size), labels] = 1.0
    return out
