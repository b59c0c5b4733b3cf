from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> tuple[dict, AdamState]:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for k, p in params.items():
        g = grads[k]
        if g.shape != p.shape:
            raise ValueError(f"adam: gradient for {k} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        if m.shape != p.shape:
            raise ValueError(f"adam: moment for {k} has shape {m.shape}, parameter {p.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params, state


class Adam:
    def __init__(self, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.state = AdamState()

    def step(self, model) -> None:
        params = dict(model.parameters())
        grads = dict(model.gradients())
        adam_step(params, grads, self.state, self.lr, self.beta1, self.beta2, self.eps)
