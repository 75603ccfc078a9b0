"""Extractor and predictor networks and the end-to-end forward/backward pass.

The extractor maps one EMG window (resampled to ``ext_steps`` steps) to one
feature per channel. The predictor maps ``seq_len`` consecutive feature
vectors to one knee angle (normalised units). In FL/FTL modes the extractor
outputs are spliced into each feature vector between the FT block and theta,
and the squared-error gradient flows back through them into the extractor.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from kinpred.errors import InvalidInputError, WarmupError
from kinpred.features import N_FT, feature_width, uses_fl, uses_ft
from kinpred.neural.lstm import lstm_layer_backward, lstm_layer_forward


@dataclass(frozen=True)
class NetShape:
    channels: int = 9
    hidden: int = 40
    layers: int = 3
    head_width: int = 80
    ext_steps: int = 60
    seq_len: int = 60

    def input_width(self, mode: str) -> int:
        return feature_width(mode, self.channels)


def _uniform(rng, shape, bound):
    return rng.uniform(-bound, bound, size=shape)


def _init_lstm_stack(rng, prefix, d_in, H, layers, forget_bias=1.0):
    p = {}
    bound = 1.0 / np.sqrt(H)
    for k in range(layers):
        d = d_in if k == 0 else H
        p[f"{prefix}l{k}.Wx"] = _uniform(rng, (4 * H, d), bound)
        p[f"{prefix}l{k}.Wh"] = _uniform(rng, (4 * H, H), bound)
        b = np.zeros(4 * H)
        b[H:2 * H] = forget_bias
        p[f"{prefix}l{k}.b"] = b
    return p


def _stack_forward(p, prefix, X, layers, cache):
    caches = []
    h = X
    for k in range(layers):
        h, c = lstm_layer_forward(h, p[f"{prefix}l{k}.Wx"], p[f"{prefix}l{k}.Wh"],
                                  p[f"{prefix}l{k}.b"], cache=cache)
        caches.append(c)
    return h, caches


def _stack_backward(p, prefix, dlast, caches, layers, grads):
    """Backprop a gradient on the top layer's final hidden state; returns dX of the stack input."""
    top = caches[-1]
    T, B, H = top.hs.shape[0] - 1, top.hs.shape[1], top.hs.shape[2]
    dH = np.zeros((T, B, H), dlast.dtype)
    dH[-1] = dlast
    for k in range(layers - 1, -1, -1):
        Wx, Wh = p[f"{prefix}l{k}.Wx"], p[f"{prefix}l{k}.Wh"]
        dH, dWx, dWh, db = lstm_layer_backward(dH, caches[k], Wx, Wh)
        grads[f"{prefix}l{k}.Wx"] = dWx
        grads[f"{prefix}l{k}.Wh"] = dWh
        grads[f"{prefix}l{k}.b"] = db
    return dH


class ExtractorNet:
    """Stacked LSTM over a window plus a hidden-to-channels affine head."""

    prefix = "ext."

    def __init__(self, params: dict, layers: int):
        self.params = params
        self.layers = layers

    @classmethod
    def init(cls, shape: NetShape, rng) -> "ExtractorNet":
        H = shape.hidden
        p = _init_lstm_stack(rng, cls.prefix, shape.channels, H, shape.layers)
        p["ext.head.W"] = _uniform(rng, (H, shape.channels), 1.0 / np.sqrt(H))
        p["ext.head.b"] = np.zeros(shape.channels)
        return cls(p, shape.layers)

    def forward(self, windows, cache=False):
        """``windows``: (N, steps, C) -> (N, C) features."""
        X = np.ascontiguousarray(np.swapaxes(windows, 0, 1))
        hs, caches = _stack_forward(self.params, self.prefix, X, self.layers, cache)
        last = hs[-1]
        out = last @ self.params["ext.head.W"] + self.params["ext.head.b"]
        return out, (caches, last)

    def backward(self, dout, cache, grads):
        caches, last = cache
        grads["ext.head.W"] = last.T @ dout
        grads["ext.head.b"] = dout.sum(axis=0)
        dlast = dout @ self.params["ext.head.W"].T
        _stack_backward(self.params, self.prefix, dlast, caches, self.layers, grads)


class PredictorNet:
    """Stacked LSTM over a feature-vector sequence, then affine-tanh-affine to a scalar."""

    prefix = "pred."

    def __init__(self, params: dict, layers: int):
        self.params = params
        self.layers = layers

    @classmethod
    def init(cls, shape: NetShape, d_in: int, rng) -> "PredictorNet":
        H, W = shape.hidden, shape.head_width
        p = _init_lstm_stack(rng, cls.prefix, d_in, H, shape.layers)
        p["pred.fc1.W"] = _uniform(rng, (H, W), 1.0 / np.sqrt(H))
        p["pred.fc1.b"] = np.zeros(W)
        p["pred.fc2.W"] = _uniform(rng, (W, 1), 1.0 / np.sqrt(W))
        p["pred.fc2.b"] = np.zeros(1)
        return cls(p, shape.layers)

    def forward(self, X, cache=False):
        """``X``: (T, B, d) time-major -> (B,) normalised outputs."""
        hs, caches = _stack_forward(self.params, self.prefix, X, self.layers, cache)
        last = hs[-1]
        a1 = np.tanh(last @ self.params["pred.fc1.W"] + self.params["pred.fc1.b"])
        y = a1 @ self.params["pred.fc2.W"] + self.params["pred.fc2.b"]
        return y[:, 0], (caches, last, a1)

    def backward(self, dy, cache, grads):
        """Fills ``grads``; returns dLoss/dX of shape (T, B, d)."""
        caches, last, a1 = cache
        dy = dy[:, None]
        grads["pred.fc2.W"] = a1.T @ dy
        grads["pred.fc2.b"] = dy.sum(axis=0)
        dz1 = (dy @ self.params["pred.fc2.W"].T) * (1.0 - a1 * a1)
        grads["pred.fc1.W"] = last.T @ dz1
        grads["pred.fc1.b"] = dz1.sum(axis=0)
        dlast = dz1 @ self.params["pred.fc1.W"].T
        return _stack_backward(self.params, self.prefix, dlast, caches, self.layers, grads)


@dataclass
class SequenceBatch:
    """Inputs for B sequences of length T (all arrays normalised).

    ``windows``: (T, B, steps, C) resampled EMG, needed for FL/FTL.
    ``ft``: (T, B, 4C) for FT/FTL. ``theta``: (T, B).
    """

    theta: np.ndarray
    ft: Optional[np.ndarray] = None
    windows: Optional[np.ndarray] = None


class KinPreNet:
    """End-to-end network: optional extractor feeding the sequence predictor."""

    def __init__(self, mode: str, shape: NetShape, predictor: PredictorNet,
                 extractor: Optional[ExtractorNet] = None):
        self.mode = mode
        self.shape = shape
        self.predictor = predictor
        self.extractor = extractor
        if uses_fl(mode) and extractor is None:
            raise InvalidInputError(f"mode {mode} requires an extractor")

    @classmethod
    def init(cls, mode: str, shape: NetShape, seed: int, dtype=np.float64) -> "KinPreNet":
        """Seeded initialisation; draws happen in 64-bit so ``dtype`` only rounds them."""
        rng = np.random.default_rng(seed)
        ext = ExtractorNet.init(shape, rng) if uses_fl(mode) else None
        pred = PredictorNet.init(shape, shape.input_width(mode), rng)
        net = cls(mode, shape, pred, ext)
        net.astype(dtype)
        return net

    @property
    def dtype(self):
        return self.predictor.params["pred.fc2.b"].dtype

    def astype(self, dtype) -> "KinPreNet":
        """Cast all parameters in place (``float32`` halves training time)."""
        for part in (self.predictor, self.extractor):
            if part is not None:
                part.params = {k: np.ascontiguousarray(v, dtype=dtype)
                               for k, v in part.params.items()}
        return self

    @property
    def params(self) -> dict:
        p = dict(self.predictor.params)
        if self.extractor is not None:
            p.update(self.extractor.params)
        return p

    def param_group(self, name: str) -> str:
        return "extractor" if name.startswith(ExtractorNet.prefix) else "predictor"

    def assemble(self, batch: SequenceBatch, fl=None) -> np.ndarray:
        """Predictor input ``(T, B, d)`` laid out as ``[FT?, FL?, theta]``."""
        cols = []
        if uses_ft(self.mode):
            cols.append(batch.ft)
        if uses_fl(self.mode):
            cols.append(fl)
        cols.append(batch.theta[..., None])
        return np.concatenate(cols, axis=-1)

    def _check(self, batch) -> SequenceBatch:
        """Validate length, keep the last ``seq_len`` steps and match the parameter dtype."""
        S = self.shape.seq_len
        if batch.theta.shape[0] < S:
            raise WarmupError(
                f"predictor needs {S} feature vectors, got {batch.theta.shape[0]}"
            )
        dt = self.dtype

        def tail(a):
            return None if a is None else np.asarray(a[-S:], dtype=dt)

        return SequenceBatch(tail(batch.theta), tail(batch.ft), tail(batch.windows))

    def forward(self, batch: SequenceBatch, cache=False):
        """Normalised predictions for each sequence in ``batch`` -> (B,).

        Longer sequences are cut to their last ``seq_len`` steps.
        """
        batch = self._check(batch)
        T, B = batch.theta.shape
        ext_cache = None
        fl = None
        if uses_fl(self.mode):
            w = batch.windows
            flat = w.reshape((T * B,) + w.shape[2:])
            fl_flat, ext_cache = self.extractor.forward(flat, cache=cache)
            fl = fl_flat.reshape(T, B, -1)
        X = self.assemble(batch, fl)
        y, pred_cache = self.predictor.forward(X, cache=cache)
        return y, (ext_cache, pred_cache, T, B)

    def backward(self, dy, cache) -> dict:
        ext_cache, pred_cache, T, B = cache
        grads = {}
        dX = self.predictor.backward(dy, pred_cache, grads)
        if uses_fl(self.mode):
            C = self.shape.channels
            start = N_FT * C if uses_ft(self.mode) else 0
            dfl = dX[:, :, start:start + C].reshape(T * B, C)
            self.extractor.backward(dfl, ext_cache, grads)
        return grads

    def loss_and_grads(self, batch: SequenceBatch, target):
        """Summed squared error over the batch and its full gradient."""
        y, cache = self.forward(batch, cache=True)
        err = y - np.asarray(target, dtype=y.dtype)
        grads = self.backward(2.0 * err, cache)
        return float(np.sum(err * err)), y, grads

    # -- serialisation helpers ------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "dtype": np.dtype(self.dtype).name,
            "shape": asdict(self.shape),
            "params": {
                k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                for k, v in sorted(self.params.items())
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "KinPreNet":
        shape = NetShape(**doc["shape"])
        mode = doc["mode"]
        arrays = {k: np.array(v["data"], dtype=float).reshape(v["shape"])
                  for k, v in doc["params"].items()}
        pred = PredictorNet({k: v for k, v in arrays.items() if k.startswith("pred.")},
                            shape.layers)
        ext = None
        if uses_fl(mode):
            ext = ExtractorNet({k: v for k, v in arrays.items() if k.startswith("ext.")},
                               shape.layers)
        return cls(mode, shape, pred, ext).astype(doc.get("dtype", "float64"))
