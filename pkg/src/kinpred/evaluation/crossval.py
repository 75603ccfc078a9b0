"""Leave-one-subject-out evaluation over (predictor, feature set, time) cells."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from kinpred.errors import InvalidInputError, KinpredError
from kinpred.evaluation.grid import ResultsGrid
from kinpred.evaluation.metrics import metric_set
from kinpred.features import feature_width, uses_fl
from kinpred.pipeline import (
    FoldScaler,
    LstmPredictor,
    MeanPredictor,
    ModelSettings,
    SubjectData,
    SvrPredictor,
    stable_seed,
)

log = logging.getLogger(__name__)

ABLATIONS = ("emg_plus_kinematics", "kinematics_only")


@dataclass
class CrossvalConfig:
    predictors: Sequence[str] = ("svr", "lstm")
    features: Sequence[str] = ("FT", "FL", "FTL")
    times_ms: Sequence[int] = (27, 54, 81, 108, 135, 162)
    ablation: Sequence[str] = ("emg_plus_kinematics",)
    seed: int = 0
    settings: ModelSettings = field(default_factory=ModelSettings)
    eval_stride: int = 1
    jobs: int = 1

    def cells(self):
        """(predictor, feature) pairs, LSTM first so SVR can reuse its extractor."""
        feats = []
        if "emg_plus_kinematics" in self.ablation:
            feats += list(self.features)
        if "kinematics_only" in self.ablation:
            feats.append("KIN")
        preds = sorted(self.predictors, key=lambda p: (p != "lstm", p))
        return [(p, f) for p in preds for f in feats]


def _run_fold(held_out: str, subjects: Sequence[SubjectData], cfg: CrossvalConfig):
    t0 = time.perf_counter()
    train = [s for s in subjects if s.subject_id != held_out]
    test = next(s for s in subjects if s.subject_id == held_out)
    scaler = FoldScaler.fit(train)
    train_n = [scaler.transform(s) for s in train]
    test_n = scaler.transform(test)
    S = cfg.settings.shape.seq_len
    rows = []
    for T_ms in cfg.times_ms:
        T = T_ms / 1000.0
        ends, labels = test_n.targets(T, S)
        ends, labels = ends[::cfg.eval_stride], labels[::cfg.eval_stride]
        lstm_cache = {}

        def lstm_for(F):
            if F not in lstm_cache:
                seed = stable_seed(cfg.seed, "lstm", F, T_ms, held_out)
                lstm_cache[F] = LstmPredictor.fit(train_n, T, F, cfg.settings, seed)
            return lstm_cache[F]

        for P, F in cfg.cells():
            key = (P, F, T_ms, held_out)
            try:
                if P == "lstm":
                    model = lstm_for(F)
                    pred = model.predict(test_n, ends)
                elif P == "svr":
                    ext = lstm_for(F) if uses_fl(F) else None
                    seed = stable_seed(cfg.seed, P, F, T_ms, held_out)
                    model = SvrPredictor.fit(train_n, T, F, cfg.settings, seed, extractor=ext)
                    pred = model.predict(test_n, ends)
                elif P == "mean":
                    model = MeanPredictor.fit(train_n, T, F, cfg.settings, 0)
                    pred = model.predict(test_n, ends)
                else:
                    raise InvalidInputError(f"unknown predictor {P!r}")
                if not np.all(np.isfinite(pred)):
                    raise FloatingPointError("non-finite predictions")
                rows.append((key, metric_set(pred, labels, feature_width(F)), None))
            except (KinpredError, FloatingPointError, ValueError) as exc:
                log.warning("cell %s failed: %s", key, exc)
                rows.append((key, None, f"{type(exc).__name__}: {exc}"))
    log.info("fold %s done in %.1f s", held_out, time.perf_counter() - t0)
    return rows


def loso_crossval(subjects: Sequence[SubjectData], cfg: CrossvalConfig) -> ResultsGrid:
    """Each subject is the test set exactly once per cell; training uses the rest.

    Results depend only on subject ids, data and seed, not on input order.
    """
    if len(subjects) < 2:
        raise InvalidInputError("cross-validation needs at least two subjects")
    ids = [s.subject_id for s in subjects]
    if len(set(ids)) != len(ids):
        raise InvalidInputError("subject ids must be unique")
    subjects = sorted(subjects, key=lambda s: s.subject_id)
    ids = sorted(ids)
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as ex:
            results = list(ex.map(_run_fold, ids, [subjects] * len(ids), [cfg] * len(ids)))
    else:
        results = [_run_fold(sid, subjects, cfg) for sid in ids]
    grid = ResultsGrid()
    for rows in results:
        for key, m, err in rows:
            if m is None:
                grid.fail(*key, err)
            else:
                grid.add(*key, m)
    return grid
