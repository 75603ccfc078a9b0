"""Adam with per-group learning rates and step-wise exponential decay."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr0: dict  # group name -> initial learning rate
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    decay_rate: float = 0.8
    decay_interval: int = 20000
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    def lr(self, group: str, step: int | None = None) -> float:
        """Learning rate in effect for update number ``step`` (default: the next one)."""
        s = self.step if step is None else step
        return self.lr0[group] * self.decay_rate ** (s // self.decay_interval)


def adam_step(params: dict, grads: dict, state: AdamState, group_of=lambda name: "default"):
    """In-place bias-corrected Adam update of ``params``; advances ``state.step``."""
    b1, b2 = state.beta1, state.beta2
    t = state.step + 1
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        lr = state.lr(group_of(name))
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    state.step = t
