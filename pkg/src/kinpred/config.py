"""Run configuration: dataclass defaults, flat ``key = value`` files and flag overrides.

Precedence is command-line flags, then the config file, then defaults. When
neither flags nor file set ``seed``, the ``KINPRED_SEED`` environment
variable is used before falling back to 0.
"""

from __future__ import annotations

import dataclasses
import os
import typing
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional, Tuple

from kinpred.errors import InvalidParameterError
from kinpred.evaluation.crossval import ABLATIONS, CrossvalConfig
from kinpred.features import MODES, PREDICTION_TIMES
from kinpred.neural.nets import NetShape
from kinpred.neural.training import TrainConfig
from kinpred.pipeline import PREDICTORS, ModelSettings

SEED_ENV = "KINPRED_SEED"


@dataclass
class RunConfig:
    seed: int = 0
    # synthetic data
    subjects: int = 10
    duration: float = 180.0
    emd_lead_ms: float = 60.0
    marker_noise: float = 1.0
    # grid
    predictors: Tuple[str, ...] = ("svr", "lstm")
    features: Tuple[str, ...] = ("FT", "FL", "FTL")
    prediction_times_ms: Tuple[int, ...] = tuple(int(round(t * 1000)) for t in PREDICTION_TIMES)
    ablation: Tuple[str, ...] = ("emg_plus_kinematics",)
    # training
    epochs: int = 30
    lr_extractor: float = 1e-3
    lr_predictor: float = 1e-4
    decay_rate: float = 0.8
    decay_interval: int = 20000
    samples_per_epoch: Optional[int] = None
    clip_norm: Optional[float] = None
    dtype: str = "float64"
    # network
    hidden: int = 40
    layers: int = 3
    head_width: int = 80
    ext_steps: int = 60
    seq_len: int = 60
    # svr
    svr_C: float = 10.0
    svr_epsilon: float = 0.5
    svr_gamma: Optional[float] = None
    svr_tol: float = 1e-3
    svr_max_train: int = 2000
    svr_grid_search: bool = False
    # supervision and evaluation
    cutoff: Optional[float] = 6.0
    eval_stride: int = 1
    jobs: int = 1
    data: Optional[str] = None
    out: str = "kinpred_out"

    def __post_init__(self):
        self.features = tuple(f.upper() for f in self.features)
        self.predictors = tuple(p.lower() for p in self.predictors)
        self.prediction_times_ms = tuple(int(t) for t in self.prediction_times_ms)
        self.validate()

    def validate(self):
        if not self.predictors or not self.features or not self.prediction_times_ms:
            raise InvalidParameterError("predictors, features and prediction times must be non-empty")
        for p in self.predictors:
            if p not in PREDICTORS:
                raise InvalidParameterError(f"unknown predictor {p!r}; choose from {PREDICTORS}")
        for f in self.features:
            if f not in MODES or f == "KIN":
                raise InvalidParameterError(f"unknown feature set {f!r}; choose from FT, FL, FTL")
        for a in self.ablation:
            if a not in ABLATIONS:
                raise InvalidParameterError(f"unknown ablation {a!r}; choose from {ABLATIONS}")
        if any(t < 0 for t in self.prediction_times_ms):
            raise InvalidParameterError("prediction times must be >= 0")
        if self.epochs < 1 or self.subjects < 1 or self.jobs < 1 or self.eval_stride < 1:
            raise InvalidParameterError("epochs, subjects, jobs and eval_stride must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise InvalidParameterError("dtype must be float32 or float64")

    # -- derived settings -----------------------------------------------------

    def shape(self) -> NetShape:
        return NetShape(hidden=self.hidden, layers=self.layers, head_width=self.head_width,
                        ext_steps=self.ext_steps, seq_len=self.seq_len)

    def train_config(self) -> TrainConfig:
        return TrainConfig(seed=self.seed, epochs=self.epochs, lr_extractor=self.lr_extractor,
                           lr_predictor=self.lr_predictor, decay_rate=self.decay_rate,
                           decay_interval=self.decay_interval,
                           samples_per_epoch=self.samples_per_epoch, clip_norm=self.clip_norm,
                           dtype=self.dtype)

    def model_settings(self) -> ModelSettings:
        return ModelSettings(shape=self.shape(), train=self.train_config(), svr_C=self.svr_C,
                             svr_epsilon=self.svr_epsilon, svr_gamma=self.svr_gamma,
                             svr_tol=self.svr_tol, svr_max_train=self.svr_max_train,
                             svr_grid_search=self.svr_grid_search)

    def crossval_config(self) -> CrossvalConfig:
        return CrossvalConfig(predictors=self.predictors, features=self.features,
                              times_ms=self.prediction_times_ms, ablation=self.ablation,
                              seed=self.seed, settings=self.model_settings(),
                              eval_stride=self.eval_stride, jobs=self.jobs)

    # -- text form --------------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            lines.append(f"{f.name} = {_format(getattr(self, f.name))}")
        return "\n".join(lines) + "\n"

    def write(self, path):
        Path(path).write_text(self.to_text())


def _format(v) -> str:
    if v is None:
        return "none"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(str(x) for x in v)
    return str(v)


def _field_types() -> dict:
    hints = typing.get_type_hints(RunConfig)
    return {f.name: hints[f.name] for f in fields(RunConfig)}


def _parse_value(name: str, text: str, tp):
    text = text.strip()
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin is typing.Union and type(None) in args:
        if text.lower() in ("none", "null", ""):
            return None
        tp = next(a for a in args if a is not type(None))
        origin = typing.get_origin(tp)
        args = typing.get_args(tp)
    try:
        if origin in (tuple, Tuple):
            item = args[0]
            return tuple(item(x.strip()) for x in text.split(",") if x.strip())
        if tp is bool:
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp is int:
            return int(text)
        return tp(text)
    except ValueError as exc:
        raise InvalidParameterError(f"bad value for {name}: {text!r}") from exc


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """``key = value`` lines; ``#`` starts a comment; list values are comma-separated."""
    types = _field_types()
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameterError(f"{source}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in types:
            raise InvalidParameterError(f"{source}:{lineno}: unknown key {key!r}")
        out[key] = _parse_value(key, value, types[key])
    return out


def load_config_file(path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidParameterError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, str(path))


def resolve_config(flags: Optional[dict] = None, path=None, env=None) -> RunConfig:
    """Merge defaults, file values and flag values (``None`` flags are ignored)."""
    env = os.environ if env is None else env
    merged = {}
    if path is not None:
        merged.update(load_config_file(path))
    types = _field_types()
    for k, v in (flags or {}).items():
        if v is None or k not in types:
            continue
        if isinstance(v, str) and types[k] is not str and typing.get_origin(types[k]) is not None:
            v = _parse_value(k, v, types[k])
        merged[k] = v
    if "seed" not in merged and env.get(SEED_ENV):
        merged["seed"] = _parse_value("seed", env[SEED_ENV], int)
    return RunConfig(**merged)


def replace(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **changes)
