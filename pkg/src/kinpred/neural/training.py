"""Batch-1 end-to-end training and batched inference over normalised arrays."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from kinpred.errors import DivergenceError, InvalidInputError
from kinpred.features import uses_fl, uses_ft
from kinpred.neural.adam import AdamState, adam_step
from kinpred.neural.nets import KinPreNet, NetShape, SequenceBatch


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    epochs: int = 30
    lr_extractor: float = 1e-3
    lr_predictor: float = 1e-4
    decay_rate: float = 0.8
    decay_interval: int = 20000
    # sequences drawn per epoch (without replacement); None uses all of them
    samples_per_epoch: Optional[int] = None
    clip_norm: Optional[float] = None
    # parameter and activation precision; gradient checks always use float64
    dtype: str = "float64"


@dataclass
class SequenceDataset:
    """Normalised per-window arrays plus the sequences drawn from them.

    Sequence ``s`` covers windows ``ends[s] - seq_len + 1 .. ends[s]`` and is
    labelled ``labels[s]``. Callers guarantee no sequence crosses a subject
    boundary.
    """

    mode: str
    theta: np.ndarray
    ends: np.ndarray
    labels: np.ndarray
    ft: Optional[np.ndarray] = None
    windows: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.ends) == 0:
            raise InvalidInputError("dataset holds no sequences")
        if uses_ft(self.mode) and self.ft is None:
            raise InvalidInputError(f"mode {self.mode} needs FT features")
        if uses_fl(self.mode) and self.windows is None:
            raise InvalidInputError(f"mode {self.mode} needs EMG windows")

    def __len__(self):
        return len(self.ends)

    def astype(self, dtype) -> "SequenceDataset":
        def cast(a):
            return None if a is None else np.ascontiguousarray(a, dtype=dtype)

        return SequenceDataset(self.mode, cast(self.theta), self.ends, cast(self.labels),
                               cast(self.ft), cast(self.windows))

    def batch(self, s: int, seq_len: int) -> SequenceBatch:
        k = int(self.ends[s])
        sl = slice(k - seq_len + 1, k + 1)
        return SequenceBatch(
            theta=self.theta[sl][:, None],
            ft=None if self.ft is None else self.ft[sl][:, None, :],
            windows=None if self.windows is None else self.windows[sl][:, None],
        )


@dataclass
class TrainingLog:
    epoch_rmse: list = field(default_factory=list)  # normalised-label units
    updates: int = 0

    def rmse_deg(self, label_std: float) -> list:
        return [r * label_std for r in self.epoch_rmse]


def _clip(grads, max_norm):
    total = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale


def train(dataset: SequenceDataset, config: TrainConfig = TrainConfig(),
          shape: NetShape = NetShape(), net: Optional[KinPreNet] = None):
    """Train extractor and predictor together, one sequence per update.

    Epoch ``e`` visits sequences in the order ``permutation(seed, e)``, so the
    result is a pure function of data and config. Returns ``(net, log)``.
    """
    net = net or KinPreNet.init(dataset.mode, shape, config.seed, dtype=config.dtype)
    shape = net.shape
    dataset = dataset.astype(net.dtype)
    params = net.params
    state = AdamState(
        lr0={"extractor": config.lr_extractor, "predictor": config.lr_predictor},
        decay_rate=config.decay_rate,
        decay_interval=config.decay_interval,
    )
    log = TrainingLog()
    n = len(dataset)
    for epoch in range(config.epochs):
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        if config.samples_per_epoch:
            order = order[:config.samples_per_epoch]
        sq = 0.0
        for j, s in enumerate(order):
            loss, _, grads = net.loss_and_grads(dataset.batch(s, shape.seq_len),
                                                dataset.labels[s:s + 1])
            if not np.isfinite(loss):
                raise DivergenceError(epoch, int(j))
            if config.clip_norm:
                _clip(grads, config.clip_norm)
            adam_step(params, grads, state, net.param_group)
            sq += loss
        log.epoch_rmse.append(float(np.sqrt(sq / len(order))))
    log.updates = state.step
    return net, log


def extractor_features(net: KinPreNet, windows: np.ndarray, chunk: int = 2048) -> np.ndarray:
    """Extractor output for every window ``(K, steps, C)`` -> ``(K, C)``."""
    dt = net.dtype
    out = [net.extractor.forward(np.asarray(windows[i:i + chunk], dtype=dt))[0]
           for i in range(0, len(windows), chunk)]
    return np.concatenate(out, axis=0)


def predict_all(net: KinPreNet, theta: np.ndarray, ends: np.ndarray,
                ft: Optional[np.ndarray] = None, windows: Optional[np.ndarray] = None,
                fl: Optional[np.ndarray] = None, chunk: int = 512) -> np.ndarray:
    """Normalised predictions for the sequences ending at window indices ``ends``.

    Each window's extractor features are computed once (or taken from ``fl``).
    """
    S = net.shape.seq_len
    if uses_fl(net.mode) and fl is None:
        fl = extractor_features(net, windows)
    cols = []
    if uses_ft(net.mode):
        cols.append(ft)
    if uses_fl(net.mode):
        cols.append(fl)
    cols.append(np.asarray(theta)[:, None])
    X = np.concatenate(cols, axis=1).astype(net.dtype, copy=False)
    ends = np.asarray(ends, dtype=int)
    if len(ends) and ends.min() < S - 1:
        raise InvalidInputError("sequence end precedes the warm-up span")
    offs = np.arange(-S + 1, 1)
    out = []
    for i in range(0, len(ends), chunk):
        idx = ends[i:i + chunk][None, :] + offs[:, None]  # (S, b)
        y, _ = net.predictor.forward(X[idx])
        out.append(y)
    return np.concatenate(out) if out else np.zeros(0)
