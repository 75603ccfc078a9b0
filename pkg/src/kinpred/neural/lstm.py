"""Batched LSTM layer with full backpropagation through time.

Gate blocks are ordered ``[i, f, g, o]`` along the 4H axis. Weights follow
the ``(4H, D)`` / ``(4H, H)`` layout; sequences are time-major ``(T, B, D)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def _gate_consts(H: int, dtype=float):
    # sigma(z) = 0.5 * tanh(z / 2) + 0.5, so one tanh call serves all four gates
    pre = np.concatenate([np.full(2 * H, 0.5), np.ones(H), np.full(H, 0.5)]).astype(dtype)
    add = np.concatenate([np.full(2 * H, 0.5), np.zeros(H), np.full(H, 0.5)]).astype(dtype)
    return pre, add


def lstm_cell_forward(x, h, c, Wx, Wh, b):
    """One step: returns ``(h', c')``. Works on single vectors or batches."""
    H = Wh.shape[1]
    z = x @ Wx.T + h @ Wh.T + b
    pre, add = _gate_consts(H, z.dtype)
    a = np.tanh(z * pre) * pre + add
    i, f, g, o = a[..., :H], a[..., H:2 * H], a[..., 2 * H:3 * H], a[..., 3 * H:]
    c_new = f * c + i * g
    return o * np.tanh(c_new), c_new


@dataclass
class LayerCache:
    X: np.ndarray
    hs: np.ndarray  # (T+1, B, H), hs[0] is the initial state
    cs: np.ndarray
    gates: np.ndarray  # (T, B, 4H) activated gates
    dgate: np.ndarray  # (T, B, 4H) activation derivatives
    tanh_c: np.ndarray  # (T, B, H)


def _layer_inference(X, Wx, Wh, b, pre, add):
    """Cache-free forward with preallocated buffers and in-place updates."""
    T, B, _ = X.shape
    H = Wh.shape[1]
    # pre holds powers of two, so folding it into the weights is exact
    Z = X @ (Wx * pre[:, None]).T
    Z += b * pre
    WhT = (Wh * pre[:, None]).T
    out = np.empty((T, B, H), X.dtype)
    a = np.empty((B, 4 * H), X.dtype)
    c = np.zeros((B, H), X.dtype)
    tmp = np.empty((B, H), X.dtype)
    i, f, g, o = a[:, :H], a[:, H:2 * H], a[:, 2 * H:3 * H], a[:, 3 * H:]
    h = np.zeros((B, H), X.dtype)
    for t in range(T):
        np.matmul(h, WhT, out=a)
        a += Z[t]
        np.tanh(a, out=a)
        a *= pre
        a += add
        c *= f
        np.multiply(i, g, out=tmp)
        c += tmp
        np.tanh(c, out=tmp)
        h = out[t]
        np.multiply(o, tmp, out=h)
    return out


def lstm_layer_forward(X, Wx, Wh, b, cache: bool = True):
    """Run a layer over ``X`` from zero state; returns ``(hidden (T,B,H), cache)``."""
    T, B, _ = X.shape
    H = Wh.shape[1]
    pre, add = _gate_consts(H, X.dtype)
    if not cache:
        return _layer_inference(X, Wx, Wh, b, pre, add), None
    Z = X @ Wx.T + b
    WhT = Wh.T
    hs = np.zeros((T + 1, B, H), X.dtype)
    cs = np.zeros((T + 1, B, H), X.dtype)
    gates = np.empty((T, B, 4 * H), X.dtype)
    tanh_c = np.empty((T, B, H), X.dtype)
    for t in range(T):
        a = np.tanh((Z[t] + hs[t] @ WhT) * pre) * pre + add
        gates[t] = a
        cs[t + 1] = a[:, H:2 * H] * cs[t] + a[:, :H] * a[:, 2 * H:3 * H]
        tanh_c[t] = np.tanh(cs[t + 1])
        hs[t + 1] = a[:, 3 * H:] * tanh_c[t]
    dgate = gates * (1.0 - gates)
    g = gates[:, :, 2 * H:3 * H]
    dgate[:, :, 2 * H:3 * H] = 1.0 - g * g
    return hs[1:], LayerCache(X, hs, cs, gates, dgate, tanh_c)


def lstm_layer_backward(dH, cache: LayerCache, Wx, Wh):
    """Gradients ``(dX, dWx, dWh, db)`` given ``dH = dLoss/dhidden`` of shape (T, B, H)."""
    T, B, H = dH.shape
    gates, dgate, tanh_c, cs = cache.gates, cache.dgate, cache.tanh_c, cache.cs
    dZ = np.empty_like(gates)
    dh_next = np.zeros((B, H), dH.dtype)
    dc_next = np.zeros((B, H), dH.dtype)
    da = np.empty((B, 4 * H), dH.dtype)
    for t in range(T - 1, -1, -1):
        a = gates[t]
        dh = dH[t] + dh_next
        tc = tanh_c[t]
        dc = dc_next + dh * a[:, 3 * H:] * (1.0 - tc * tc)
        da[:, :H] = dc * a[:, 2 * H:3 * H]
        da[:, H:2 * H] = dc * cs[t]
        da[:, 2 * H:3 * H] = dc * a[:, :H]
        da[:, 3 * H:] = dh * tc
        dz = da * dgate[t]
        dZ[t] = dz
        dc_next = dc * a[:, H:2 * H]
        dh_next = dz @ Wh
    flatZ = dZ.reshape(T * B, 4 * H)
    dWx = flatZ.T @ cache.X.reshape(T * B, -1)
    dWh = flatZ.T @ cache.hs[:-1].reshape(T * B, H)
    db = flatZ.sum(axis=0)
    dX = dZ @ Wx
    return dX, dWx, dWh, db
