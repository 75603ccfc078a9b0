"""Epsilon-insensitive support vector regression with an RBF kernel.

The dual is written over 2l variables ``a = [alpha; alpha*]`` with signs
``z = [+1, -1]``::

    min  0.5 a^T Q a + p^T a    s.t.  z^T a = 0,  0 <= a <= C
    Q_st = z_s z_t K(s mod l, t mod l),   p = [eps - y; eps + y]

and solved by pairwise coordinate descent, picking the maximal-violating
pair with second-order working-set selection.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from kinpred.errors import ConvergenceError, DataError, InvalidInputError, InvalidParameterError

_TAU = 1e-12


@dataclass(frozen=True, eq=False)
class SvrModel:
    support_vectors: np.ndarray
    dual_coefs: np.ndarray
    bias: float
    gamma: float
    C: float
    epsilon: float
    kkt_residual: float = 0.0

    @property
    def width(self) -> int:
        return self.support_vectors.shape[1]

    def to_dict(self) -> dict:
        return {
            "format": "kinpred-svr",
            "version": 1,
            "support_vectors": self.support_vectors.tolist(),
            "dual_coefs": self.dual_coefs.tolist(),
            "bias": self.bias,
            "gamma": self.gamma,
            "C": self.C,
            "epsilon": self.epsilon,
            "kkt_residual": self.kkt_residual,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SvrModel":
        if doc.get("format") != "kinpred-svr":
            raise DataError("not a kinpred SVR model document")
        sv = np.array(doc["support_vectors"], dtype=float).reshape(len(doc["dual_coefs"]), -1)
        return cls(sv, np.array(doc["dual_coefs"], dtype=float), float(doc["bias"]),
                   float(doc["gamma"]), float(doc["C"]), float(doc["epsilon"]),
                   float(doc.get("kkt_residual", 0.0)))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict()) + "\n")

    @classmethod
    def load(cls, path) -> "SvrModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def rbf_kernel(x, y, gamma: float) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape:
        raise InvalidInputError(f"width mismatch: {x.shape} vs {y.shape}")
    if gamma <= 0:
        raise InvalidParameterError("gamma must be positive")
    d = x - y
    return float(np.exp(-gamma * np.dot(d, d)))


def rbf_matrix(A: np.ndarray, B: np.ndarray, gamma: float) -> np.ndarray:
    sq = (np.sum(A * A, axis=1)[:, None] + np.sum(B * B, axis=1)[None, :] - 2.0 * A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def default_gamma(X: np.ndarray) -> float:
    """``1 / (d * var(X))`` over all entries."""
    var = float(np.var(X))
    return 1.0 / (X.shape[1] * (var if var > 0 else 1.0))


@dataclass
class SmoTrace:
    objective: list = field(default_factory=list)  # dual (maximisation) objective
    iterations: int = 0


def fit(X, y, C: float = 10.0, epsilon: float = 0.5, gamma: Optional[float] = None,
        tol: float = 1e-3, max_passes: int = 200, trace: Optional[SmoTrace] = None,
        trace_every: int = 1) -> SvrModel:
    """Fit an RBF epsilon-SVR; ``max_passes * len(X)`` bounds the pair updates."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2 or len(X) != len(y) or len(X) < 2:
        raise InvalidInputError("need at least two samples with one label each")
    gamma = default_gamma(X) if gamma is None else gamma
    if C <= 0 or epsilon < 0 or gamma <= 0 or tol <= 0:
        raise InvalidParameterError("C, gamma and tol must be positive, epsilon >= 0")
    l = len(X)
    K = rbf_matrix(X, X, gamma)
    z = np.r_[np.ones(l), -np.ones(l)]
    p = np.r_[epsilon - y, epsilon + y]
    a = np.zeros(2 * l)
    G = p.copy()
    diag = np.ones(2 * l)  # K(x, x) = 1 for the RBF kernel
    max_iter = max_passes * l
    gap = np.inf
    it = 0
    while True:
        up = ((a < C) & (z > 0)) | ((a > 0) & (z < 0))
        low = ((a < C) & (z < 0)) | ((a > 0) & (z > 0))
        score = -z * G
        s_up = np.where(up, score, -np.inf)
        i = int(np.argmax(s_up))
        g_max = s_up[i]
        s_low = np.where(low, score, np.inf)
        g_min = float(np.min(s_low))
        gap = g_max - g_min
        if trace is not None and it % trace_every == 0:
            trace.objective.append(float(-0.5 * np.dot(a, G + p)))
        if gap <= tol:
            break
        if it >= max_iter:
            raise ConvergenceError(f"SMO did not converge in {max_iter} iterations", gap)
        Ki = np.tile(K[i % l], 2)
        b = g_max - score
        curv = diag[i] + diag - 2.0 * z[i] * z * (z[i] * z * Ki)
        curv = np.where(curv > 0, curv, _TAU)
        cand = low & (score < g_max)
        j = int(np.argmax(np.where(cand, b * b / curv, -np.inf)))
        Kj = np.tile(K[j % l], 2)
        delta = b[j] / curv[j]
        delta = min(delta, C - a[i] if z[i] > 0 else a[i])
        delta = min(delta, a[j] if z[j] > 0 else C - a[j])
        a[i] += z[i] * delta
        a[j] -= z[j] * delta
        a[i] = min(max(a[i], 0.0), C)
        a[j] = min(max(a[j], 0.0), C)
        G += z * delta * (Ki - Kj)
        it += 1
    if trace is not None:
        trace.iterations = it
    coef = a[:l] - a[l:]
    bias = -_rho(a, z, G, C)
    keep = coef != 0
    return SvrModel(X[keep].copy(), coef[keep], bias, float(gamma), float(C), float(epsilon),
                    float(gap))


def _rho(a, z, G, C):
    zG = z * G
    at_upper = a >= C
    at_lower = a <= 0
    free = ~(at_upper | at_lower)
    if free.any():
        return float(np.mean(zG[free]))
    ub_mask = (at_upper & (z < 0)) | (at_lower & (z > 0))
    lb_mask = (at_upper & (z > 0)) | (at_lower & (z < 0))
    ub = zG[ub_mask].min() if ub_mask.any() else np.inf
    lb = zG[lb_mask].max() if lb_mask.any() else -np.inf
    return float((ub + lb) / 2)


def predict(model: SvrModel, x) -> np.ndarray | float:
    """Decision value ``sum_i coef_i K(sv_i, x) + bias`` for one vector or a batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None] if single else x
    if X.shape[1] != model.width:
        raise InvalidInputError(f"expected width {model.width}, got {X.shape[1]}")
    if len(model.dual_coefs) == 0:
        out = np.full(len(X), model.bias)
    else:
        out = rbf_matrix(X, model.support_vectors, model.gamma) @ model.dual_coefs + model.bias
    return float(out[0]) if single else out


def grid_search(X, y, X_val, y_val, epsilon: float = 0.5, tol: float = 1e-3,
                Cs=(1.0, 10.0, 100.0), gamma_factors=(0.1, 1.0, 10.0)) -> SvrModel:
    """Coarse (C, gamma) search by validation RMSE; ties keep the earlier grid point."""
    g0 = default_gamma(np.asarray(X, dtype=float))
    best, best_err = None, np.inf
    for C in Cs:
        for f in gamma_factors:
            m = fit(X, y, C=C, epsilon=epsilon, gamma=g0 * f, tol=tol)
            err = float(np.sqrt(np.mean((predict(m, X_val) - y_val) ** 2)))
            if err < best_err:
                best, best_err = m, err
    return best
