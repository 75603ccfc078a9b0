"""Central finite-difference check of the end-to-end BPTT gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from kinpred.features import N_FT
from kinpred.neural.nets import KinPreNet, NetShape, SequenceBatch

SMALL_SHAPE = NetShape(channels=3, hidden=8, layers=3, head_width=16, ext_steps=5, seq_len=5)

# gradients smaller than this are at finite-difference rounding level;
# relative error is measured against this floor instead
GRAD_FLOOR = 1e-6


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_group: dict = field(default_factory=dict)
    n_params: int = 0

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def _random_batch(shape: NetShape, rng) -> SequenceBatch:
    T, C = shape.seq_len, shape.channels
    return SequenceBatch(
        theta=rng.standard_normal((T, 1)),
        ft=rng.standard_normal((T, 1, N_FT * C)),
        windows=rng.standard_normal((T, 1, shape.ext_steps, C)),
    )


def grad_check(shape: NetShape = SMALL_SHAPE, seed: int = 0, fd_step: float = 1e-5,
               mode: str = "FTL") -> GradCheckReport:
    """Max relative error between analytic and central-difference gradients.

    Every parameter entry of extractor and predictor is perturbed; FTL mode
    is used by default so the gradient also passes through the spliced
    extractor features.
    """
    rng = np.random.default_rng(seed)
    net = KinPreNet.init(mode, shape, seed)
    batch = _random_batch(shape, rng)
    target = rng.standard_normal(1)
    _, _, grads = net.loss_and_grads(batch, target)

    def loss():
        y, _ = net.forward(batch)
        return float(np.sum((y - target) ** 2))

    worst = 0.0
    per_group = {}
    n = 0
    for name, p in net.params.items():
        g = grads[name]
        flat = p.reshape(-1)
        num = np.empty(flat.size)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + fd_step
            lp = loss()
            flat[k] = orig - fd_step
            lm = loss()
            flat[k] = orig
            num[k] = (lp - lm) / (2 * fd_step)
        ana = g.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), GRAD_FLOOR)
        err = float(np.max(np.abs(ana - num) / denom))
        group = name.rsplit(".", 1)[0]
        per_group[group] = max(per_group.get(group, 0.0), err)
        worst = max(worst, err)
        n += flat.size
    return GradCheckReport(worst, per_group, n)
