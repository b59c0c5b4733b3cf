"""Central finite-difference checks of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .layers import MaxPool, ReLU
from .model import Model, cross_entropy


def relative_error(analytic, numeric, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor), elementwise.

    The floor keeps entries whose true gradient is ~0 from dividing rounding
    noise by zero; below it the check is effectively absolute.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def model_loss(model: Model, x, y_onehot, dropout_seed: int) -> float:
    # re-seeding reproduces the same dropout masks on every evaluation
    probs = model.forward(x, mode="train", rng=np.random.default_rng(dropout_seed))
    return cross_entropy(probs, y_onehot)


def activation_pattern(model: Model) -> list[np.ndarray]:
    """ReLU masks and max-pool winners of the last training forward."""
    out = []
    for layer in model.layers:
        if isinstance(layer, ReLU):
            out.append(layer._cache)
        elif isinstance(layer, MaxPool):
            out.append(layer._cache[1])
    return out


def _same(a, b) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


@dataclass
class GradCheckResult:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    checked: int = 0
    skipped_kinks: int = 0

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values()) if self.max_rel_error else 0.0


def check_model_gradients(model: Model, x, y_onehot, *, h: float = 1e-4, per_param: int | None = 8,
                          rng: np.random.Generator | None = None, dropout_seed: int = 0,
                          check_input: bool = True) -> GradCheckResult:
    """Compare backprop gradients with central differences of the batch loss.

    ``per_param`` coordinates are sampled from each parameter tensor (all
    when None). Coordinates where the +h or -h evaluation changes a ReLU mask
    or a max-pool winner straddle a kink, where a central difference does not
    estimate the derivative; they are skipped and another coordinate is drawn.
    Dropout masks are frozen by re-seeding.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    x = np.array(x, dtype=np.float64)
    model_loss(model, x, y_onehot, dropout_seed)
    base = [p.copy() for p in activation_pattern(model)]
    analytic = {k: g.copy() for k, g in model.backward(y_onehot)}
    analytic_x = model.input_grad.copy()
    result = GradCheckResult()

    def probe(arr, grad, name):
        flat = arr.reshape(-1)
        want = flat.size if per_param is None else min(per_param, flat.size)
        errs = []
        for i in rng.permutation(flat.size):
            if len(errs) == want:
                break
            orig = flat[i]
            flat[i] = orig + h
            lp = model_loss(model, x, y_onehot, dropout_seed)
            kink = not _same(activation_pattern(model), base)
            flat[i] = orig - h
            lm = model_loss(model, x, y_onehot, dropout_seed)
            kink = kink or not _same(activation_pattern(model), base)
            flat[i] = orig
            if kink:
                result.skipped_kinks += 1
                continue
            errs.append(float(relative_error(grad.reshape(-1)[i], (lp - lm) / (2 * h))))
        result.checked += len(errs)
        if errs:
            result.max_rel_error[name] = max(errs)

    for k, p in model.parameters():
        probe(p, analytic[k], k)
    if check_input:
        probe(x, analytic_x, "input")
    model.clear()
    return result
