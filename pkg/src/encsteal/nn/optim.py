"""Adam with bias correction."""
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import DimensionError, NumericError


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """One Adam update on name -> ndarray mappings.

    Returns ``(new_params, state)``; inputs are not mutated except ``state``,
    whose moment buffers and step counter advance. A missing gradient counts as 0.
    """
    for name, g in grads.items():
        if g is None:
            continue
        if np.shape(g) != np.shape(params[name]):
            raise DimensionError(f"{name}: grad {np.shape(g)} vs param {np.shape(params[name])}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1**t
    c2 = 1.0 - state.beta2**t
    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name], state.v[name] = m, v
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        out[name] = (p - update).astype(p.dtype)
    return out, state


class Adam:
    """Stateful wrapper updating a name -> Tensor mapping in place from ``.grad``."""

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self):
        arrays = {k: p.data for k, p in self.params.items()}
        grads = {k: p.grad for k, p in self.params.items()}
        new, _ = adam_step(arrays, grads, self.state)
        for k, p in self.params.items():
            p.data = new[k]
