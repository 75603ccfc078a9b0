"""Recording -> per-window arrays -> fold-normalised training data -> fitted
predictors. Shared by the cross-validation harness and the CLI."""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from kinpred import svr as svr_mod
from kinpred.errors import DataError, InvalidInputError, InvalidParameterError
from kinpred.features import (
    HOP,
    WINDOW,
    ChannelNorm,
    default_eps,
    feature_matrix,
    feature_width,
    ft_features,
    label_times,
    segment_windows,
    uses_fl,
    uses_ft,
)
from kinpred.gait_synth import default_shank_model, default_thigh_model
from kinpred.mocap_ik import measured_angle_series
from kinpred.neural.nets import KinPreNet, NetShape
from kinpred.neural.training import SequenceDataset, TrainConfig, predict_all, train
from kinpred.signals import SensorRecording, TimeSeries, resample_matrix, sample_many


def stable_seed(*parts) -> int:
    """Deterministic 32-bit seed from arbitrary printable parts."""
    return zlib.crc32("|".join(map(str, parts)).encode())


@dataclass(eq=False)
class SubjectData:
    """Everything the models need from one recording, before normalisation."""

    subject_id: str
    emg: np.ndarray  # (L, C) raw samples
    end_times: np.ndarray  # (K,)
    theta: np.ndarray  # (K,) IMU angle at each window end, deg
    ext_raw: np.ndarray  # (K, ext_steps, C) windows resampled for the extractor
    measured: TimeSeries

    @property
    def n_windows(self) -> int:
        return len(self.end_times)

    def windows(self, emg: Optional[np.ndarray] = None) -> np.ndarray:
        """``(K, WINDOW, C)`` view over ``emg`` (default: the raw samples)."""
        x = self.emg if emg is None else emg
        view = np.lib.stride_tricks.sliding_window_view(x, WINDOW, axis=0)[::HOP]
        return np.swapaxes(view[:self.n_windows], 1, 2)


def prepare_subject(rec: SensorRecording, ext_steps: int = 60, cutoff: Optional[float] = 6.0,
                    thigh_model=None, shank_model=None) -> SubjectData:
    """Window the EMG, read theta at each window end and obtain the measured angle.

    Without a measured stream the angle is computed from the markers.
    """
    wins = segment_windows(rec.emg)
    keep = wins.end_times <= rec.imu_angle.end_time + 1e-9 / rec.imu_angle.rate
    keep &= wins.end_times >= rec.imu_angle.start_time
    n = int(np.argmin(keep)) if not keep.all() else len(keep)
    if n == 0:
        raise DataError(f"{rec.subject_id}: IMU stream does not overlap the EMG windows")
    ends = wins.end_times[:n]
    theta = sample_many(rec.imu_angle, ends)[:, 0]
    M = resample_matrix(WINDOW, ext_steps)
    ext_raw = np.einsum("sw,kwc->ksc", M, wins.samples[:n], optimize=True)
    measured = rec.measured_angle
    if measured is None:
        measured = measured_angle_series(rec.markers, thigh_model or default_thigh_model(),
                                         shank_model or default_shank_model(), cutoff=cutoff)
    return SubjectData(rec.subject_id, np.asarray(rec.emg.values), ends, theta, ext_raw, measured)


@dataclass
class FoldScaler:
    """Normalisation statistics fitted on the training subjects of one fold."""

    emg: ChannelNorm
    eps: np.ndarray
    ft: ChannelNorm
    theta: ChannelNorm

    @classmethod
    def fit(cls, subjects: Sequence[SubjectData]) -> "FoldScaler":
        emg = ChannelNorm.fit([s.emg for s in subjects])
        total = sum(len(s.emg) for s in subjects)
        mav = sum(np.abs(emg.apply(s.emg)).sum(axis=0) for s in subjects) / total
        eps = default_eps(mav)
        ft_rows = [ft_features(s.windows(emg.apply(s.emg)), eps) for s in subjects]
        ft = ChannelNorm.fit(ft_rows)
        theta = ChannelNorm.fit([s.theta[:, None] for s in subjects])
        return cls(emg, eps, ft, theta)

    def transform(self, s: SubjectData) -> "NormalizedSubject":
        emg_n = self.emg.apply(s.emg)
        return NormalizedSubject(
            subject=s,
            theta=self.theta.apply(s.theta[:, None])[:, 0],
            ft=self.ft.apply(ft_features(s.windows(emg_n), self.eps)),
            windows=(s.ext_raw - self.emg.mean) / self.emg.std,
        )

    def to_dict(self) -> dict:
        return {
            "emg_mean": self.emg.mean.tolist(), "emg_std": self.emg.std.tolist(),
            "eps": self.eps.tolist(),
            "ft_mean": self.ft.mean.tolist(), "ft_std": self.ft.std.tolist(),
            "theta_mean": self.theta.mean.tolist(), "theta_std": self.theta.std.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FoldScaler":
        arr = lambda k: np.array(d[k], dtype=float)
        return cls(ChannelNorm(arr("emg_mean"), arr("emg_std")), arr("eps"),
                   ChannelNorm(arr("ft_mean"), arr("ft_std")),
                   ChannelNorm(arr("theta_mean"), arr("theta_std")))


@dataclass(eq=False)
class NormalizedSubject:
    subject: SubjectData
    theta: np.ndarray
    ft: np.ndarray
    windows: np.ndarray

    def targets(self, T: float, seq_len: int):
        """Window indices usable as sequence ends, and their labels (deg)."""
        labels, keep = label_times(self.subject.end_times, self.subject.measured, T)
        keep[:seq_len - 1] = False
        idx = np.flatnonzero(keep)
        return idx, labels[idx]


@dataclass
class ModelSettings:
    shape: NetShape = field(default_factory=NetShape)
    train: TrainConfig = field(default_factory=TrainConfig)
    svr_C: float = 10.0
    svr_epsilon: float = 0.5
    svr_gamma: Optional[float] = None
    svr_tol: float = 1e-3
    svr_max_train: int = 2000
    svr_grid_search: bool = False


def _concat_sequences(subjects: Sequence[NormalizedSubject], T: float, seq_len: int, mode: str):
    thetas, fts, wins, ends, labels = [], [], [], [], []
    offset = 0
    for ns in subjects:
        idx, lab = ns.targets(T, seq_len)
        thetas.append(ns.theta)
        fts.append(ns.ft)
        wins.append(ns.windows)
        ends.append(idx + offset)
        labels.append(lab)
        offset += len(ns.theta)
    return (
        np.concatenate(thetas),
        np.concatenate(fts) if uses_ft(mode) else None,
        np.concatenate(wins) if uses_fl(mode) else None,
        np.concatenate(ends),
        np.concatenate(labels),
    )


class LstmPredictor:
    name = "lstm"

    def __init__(self, net: KinPreNet, label_norm: ChannelNorm, log=None):
        self.net = net
        self.label_norm = label_norm
        self.log = log

    @classmethod
    def fit(cls, train_subjects, T, mode, settings: ModelSettings, seed: int):
        theta, ft, wins, ends, labels = _concat_sequences(
            train_subjects, T, settings.shape.seq_len, mode)
        label_norm = ChannelNorm.fit([labels[:, None]])
        ds = SequenceDataset(mode, theta, ends, label_norm.apply(labels[:, None])[:, 0],
                             ft=ft, windows=wins)
        cfg = TrainConfig(**{**asdict(settings.train), "seed": seed})
        net, log = train(ds, cfg, settings.shape)
        return cls(net, label_norm, log)

    def fl_features(self, ns: NormalizedSubject) -> Optional[np.ndarray]:
        if self.net.extractor is None:
            return None
        from kinpred.neural.training import extractor_features
        return extractor_features(self.net, ns.windows)

    def predict(self, ns: NormalizedSubject, ends, fl=None) -> np.ndarray:
        y = predict_all(self.net, ns.theta, ends, ft=ns.ft, windows=ns.windows, fl=fl)
        return self.label_norm.invert(y[:, None])[:, 0]


class SvrPredictor:
    """Per-vector RBF SVR; FL entries come from an already trained extractor."""

    name = "svr"

    def __init__(self, model: svr_mod.SvrModel, x_norm: ChannelNorm, mode: str, extractor=None):
        self.model = model
        self.x_norm = x_norm
        self.mode = mode
        self.extractor = extractor

    @staticmethod
    def _rows(ns, idx, mode, extractor):
        fl = extractor.fl_features(ns)[idx] if uses_fl(mode) else None
        ft = ns.ft[idx] if uses_ft(mode) else None
        return feature_matrix(mode, ns.theta[idx], ft=ft, fl=fl)

    @classmethod
    def fit(cls, train_subjects, T, mode, settings: ModelSettings, seed: int, extractor=None):
        if uses_fl(mode) and extractor is None:
            raise InvalidInputError(f"SVR with {mode} needs a trained extractor")
        Xs, ys = [], []
        for ns in train_subjects:
            idx, lab = ns.targets(T, settings.shape.seq_len)
            Xs.append(cls._rows(ns, idx, mode, extractor))
            ys.append(lab)
        X, y = np.concatenate(Xs), np.concatenate(ys)
        if len(X) > settings.svr_max_train:
            pick = np.sort(np.random.default_rng(seed).choice(len(X), settings.svr_max_train,
                                                              replace=False))
            X, y = X[pick], y[pick]
        x_norm = ChannelNorm.fit([X])
        Xn = x_norm.apply(X)
        if settings.svr_grid_search:
            rng = np.random.default_rng(seed + 1)
            val = rng.random(len(Xn)) < 0.2
            model = svr_mod.grid_search(Xn[~val], y[~val], Xn[val], y[val],
                                        epsilon=settings.svr_epsilon, tol=settings.svr_tol)
        else:
            model = svr_mod.fit(Xn, y, C=settings.svr_C, epsilon=settings.svr_epsilon,
                                gamma=settings.svr_gamma, tol=settings.svr_tol)
        return cls(model, x_norm, mode, extractor)

    def predict(self, ns: NormalizedSubject, ends) -> np.ndarray:
        X = self._rows(ns, np.asarray(ends), self.mode, self.extractor)
        return svr_mod.predict(self.model, self.x_norm.apply(X))


class MeanPredictor:
    """Bias-only baseline: the training label mean."""

    name = "mean"

    def __init__(self, value: float):
        self.value = value

    @classmethod
    def fit(cls, train_subjects, T, mode, settings: ModelSettings, seed: int):
        labels = np.concatenate([ns.targets(T, settings.shape.seq_len)[1] for ns in train_subjects])
        return cls(float(labels.mean()))

    def predict(self, ns: NormalizedSubject, ends) -> np.ndarray:
        return np.full(len(ends), self.value)


PREDICTORS = ("svr", "lstm", "mean")


# -- model bundles on disk -----------------------------------------------------

MODEL_FORMAT = "kinpred-model"
MODEL_VERSION = 1


def save_model(path, predictor, scaler: FoldScaler, T: float, mode: str):
    doc = {"format": MODEL_FORMAT, "version": MODEL_VERSION, "predictor": predictor.name,
           "mode": mode, "T": T, "scaler": scaler.to_dict()}
    if isinstance(predictor, LstmPredictor):
        doc["network"] = predictor.net.to_dict()
        doc["label_mean"] = predictor.label_norm.mean.tolist()
        doc["label_std"] = predictor.label_norm.std.tolist()
        if predictor.log is not None:
            doc["train_rmse_norm"] = predictor.log.epoch_rmse
    elif isinstance(predictor, SvrPredictor):
        doc["svr"] = predictor.model.to_dict()
        doc["x_mean"] = predictor.x_norm.mean.tolist()
        doc["x_std"] = predictor.x_norm.std.tolist()
        if predictor.extractor is not None:
            doc["extractor_network"] = predictor.extractor.net.to_dict()
    elif isinstance(predictor, MeanPredictor):
        doc["value"] = predictor.value
    Path(path).write_text(json.dumps(doc) + "\n")


def load_model(path):
    """Returns ``(predictor, scaler, T, mode)``."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    if doc.get("format") != MODEL_FORMAT or doc.get("version") != MODEL_VERSION:
        raise DataError(f"{path}: not a version-{MODEL_VERSION} kinpred model")
    scaler = FoldScaler.from_dict(doc["scaler"])
    kind = doc["predictor"]
    if kind == "lstm":
        net = KinPreNet.from_dict(doc["network"])
        pred = LstmPredictor(net, ChannelNorm(np.array(doc["label_mean"]), np.array(doc["label_std"])))
    elif kind == "svr":
        ext = None
        if "extractor_network" in doc:
            ext = LstmPredictor(KinPreNet.from_dict(doc["extractor_network"]),
                                ChannelNorm(np.zeros(1), np.ones(1)))
        pred = SvrPredictor(svr_mod.SvrModel.from_dict(doc["svr"]),
                            ChannelNorm(np.array(doc["x_mean"]), np.array(doc["x_std"])),
                            doc["mode"], ext)
    elif kind == "mean":
        pred = MeanPredictor(doc["value"])
    else:
        raise DataError(f"{path}: unknown predictor {kind!r}")
    return pred, scaler, float(doc["T"]), doc["mode"]


def check_mode(mode: str) -> str:
    m = mode.upper()
    feature_width(m)
    return m


def check_predictor(name: str) -> str:
    n = name.lower()
    if n not in PREDICTORS:
        raise InvalidParameterError(f"unknown predictor {name!r}; choose from {PREDICTORS}")
    return n
