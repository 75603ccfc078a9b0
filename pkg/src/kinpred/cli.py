"""``kinpred`` command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from kinpred.config import RunConfig, resolve_config
from kinpred.errors import (
    ConvergenceError,
    DataError,
    DivergenceError,
    InvalidParameterError,
    KinpredError,
    OutOfRangeError,
    RankDeficiencyError,
    TooShortError,
)
from kinpred.evaluation.crossval import loso_crossval
from kinpred.evaluation.grid import ResultsGrid, build_report
from kinpred.evaluation.metrics import metric_set
from kinpred.features import (
    FeatureVector,
    LabeledSample,
    feature_matrix,
    feature_width,
    uses_fl,
    uses_ft,
    write_feature_csv,
)
from kinpred.gait_synth import (
    SyntheticSubjectSpec,
    default_shank_model,
    default_thigh_model,
    synth_recording,
)
from kinpred.mocap_ik import SegmentModel, measured_angle_series
from kinpred.neural.gradcheck import SMALL_SHAPE, grad_check
from kinpred.neural.nets import NetShape
from kinpred.pipeline import (
    FoldScaler,
    LstmPredictor,
    MeanPredictor,
    SvrPredictor,
    check_mode,
    check_predictor,
    load_model,
    prepare_subject,
    save_model,
)
from kinpred.signals import MARKER_RATE, load_recording, save_recording, write_series_csv

log = logging.getLogger("kinpred")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3
CONFIG_ECHO = "kinpred_config.txt"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, (DivergenceError, ConvergenceError, RankDeficiencyError,
                        FloatingPointError, np.linalg.LinAlgError)):
        return EXIT_NUMERIC
    if isinstance(exc, (DataError, OSError, OutOfRangeError, TooShortError)):
        return EXIT_DATA
    return EXIT_USAGE


# -- shared helpers ------------------------------------------------------------

_RUN_FLAGS = {
    "seed": dict(type=int),
    "subjects": dict(type=int),
    "duration": dict(type=float),
    "emd_lead_ms": dict(type=float, flag="--emd-lead", metavar="MS"),
    "marker_noise": dict(type=float, metavar="MM"),
    "predictors": dict(type=str, metavar="LIST"),
    "features": dict(type=str, metavar="LIST"),
    "prediction_times_ms": dict(type=str, flag="--times", metavar="MS_LIST"),
    "ablation": dict(type=str, metavar="LIST"),
    "epochs": dict(type=int),
    "lr_extractor": dict(type=float),
    "lr_predictor": dict(type=float),
    "decay_rate": dict(type=float),
    "decay_interval": dict(type=int),
    "samples_per_epoch": dict(type=int),
    "clip_norm": dict(type=float),
    "dtype": dict(type=str),
    "svr_C": dict(type=float, flag="--svr-c"),
    "svr_epsilon": dict(type=float),
    "svr_gamma": dict(type=float),
    "svr_max_train": dict(type=int),
    "cutoff": dict(type=float),
    "eval_stride": dict(type=int),
    "jobs": dict(type=int),
    "data": dict(type=str, metavar="DIR"),
    "out": dict(type=str, metavar="DIR"),
}


def _add_run_flags(p: argparse.ArgumentParser, names):
    p.add_argument("--config", metavar="FILE", help="key = value config file")
    for name in names:
        spec = dict(_RUN_FLAGS[name])
        flag = spec.pop("flag", "--" + name.replace("_", "-"))
        p.add_argument(flag, dest=name, default=None, **spec)


def _run_config(args) -> RunConfig:
    flags = {k: v for k, v in vars(args).items() if k in _RUN_FLAGS}
    if getattr(args, "no_filter", False):
        flags["cutoff"] = "none"
    return resolve_config(flags, args.config)


def _manifests(data_dir) -> list:
    d = Path(data_dir)
    if not d.is_dir():
        raise DataError(f"data directory not found: {d}")
    out = []
    for p in sorted(d.glob("*.json")):
        try:
            doc = json.loads(p.read_text())
        except ValueError as exc:
            raise DataError(f"cannot parse {p}: {exc}") from exc
        if isinstance(doc, dict) and "subject_id" in doc and "emg_csv" in doc:
            out.append(p)
    if not out:
        raise DataError(f"no recording manifests in {d}")
    return out


def _synth_subjects(cfg: RunConfig):
    for k in range(cfg.subjects):
        spec = SyntheticSubjectSpec(seed=cfg.seed + k, duration=cfg.duration,
                                    emd_lead=cfg.emd_lead_ms / 1000.0,
                                    marker_noise_sigma=cfg.marker_noise)
        yield synth_recording(spec)


def load_subjects(cfg: RunConfig, ids=None):
    """Prepared subjects from ``cfg.data``, or synthesised in memory when unset."""
    if cfg.data:
        recs = (load_recording(p) for p in _manifests(cfg.data))
    else:
        recs = _synth_subjects(cfg)
    subs = []
    for rec in recs:
        if ids and rec.subject_id not in ids:
            continue
        subs.append(prepare_subject(rec, ext_steps=cfg.ext_steps, cutoff=cfg.cutoff))
    if not subs:
        raise DataError("no subjects selected")
    return subs


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None if math.isnan(x) else ("inf" if x > 0 else "-inf")
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    if isinstance(x, np.generic):
        return _json_safe(x.item())
    return x


def write_json(path, doc):
    Path(path).write_text(json.dumps(_json_safe(doc), indent=2, sort_keys=True) + "\n")


def _out_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


# -- commands ------------------------------------------------------------------

def cmd_synth(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(cfg.out)
    for rec in _synth_subjects(cfg):
        truth = rec.measured_angle
        sid = rec.subject_id
        write_series_csv(out / f"{sid}_truth.csv", truth, ["theta_true"])
        bare = dataclasses.replace(rec, measured_angle=None)
        save_recording(bare, out, extra={"truth_csv": f"{sid}_truth.csv"})
    cfg.write(out / CONFIG_ECHO)
    print(f"wrote {cfg.subjects} recordings to {out}")
    return EXIT_OK


def _segment_models(args):
    thigh = SegmentModel.from_json(args.thigh_model) if args.thigh_model else default_thigh_model()
    shank = SegmentModel.from_json(args.shank_model) if args.shank_model else default_shank_model()
    return thigh, shank


def cmd_supervise(args) -> int:
    cutoff = None if args.no_filter else args.cutoff
    thigh, shank = _segment_models(args)
    for path in _manifests(args.data):
        man = json.loads(path.read_text())
        if "markers_csv" not in man:
            raise DataError(f"{path}: manifest field 'markers_csv' missing")
        rec = load_recording(path)
        bad = []
        angle = measured_angle_series(rec.markers, thigh, shank, cutoff=cutoff, bad_frames=bad)
        for f in bad:
            log.warning("%s: degenerate marker frame %d dropped", rec.subject_id, f)
        name = f"{rec.subject_id}_measured.csv"
        write_series_csv(path.parent / name, angle, ["theta_hat"])
        man["measured_csv"] = name
        man.setdefault("rates", {})["measured"] = angle.rate
        man["supervision"] = {"cutoff_hz": cutoff, "dropped_frames": len(bad)}
        path.write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
        print(f"{rec.subject_id}: {len(angle)} frames @ {MARKER_RATE:g} Hz, {len(bad)} dropped")
    return EXIT_OK


def cmd_featurize(args) -> int:
    cfg = _run_config(args)
    mode = check_mode(args.feature)
    subs = load_subjects(cfg)
    extractor = None
    if args.model:
        model, scaler, _, _ = load_model(args.model)
        extractor = model.extractor if isinstance(model, SvrPredictor) else model
    else:
        scaler = FoldScaler.fit(subs)
    if uses_fl(mode) and not isinstance(extractor, LstmPredictor):
        raise InvalidParameterError(f"feature set {mode} needs --model with a trained extractor")
    out = _out_dir(cfg.out)
    T = args.t_ms / 1000.0
    for s in subs:
        ns = scaler.transform(s)
        idx, labels = ns.targets(T, 1)
        fl = extractor.fl_features(ns)[idx] if uses_fl(mode) else None
        X = feature_matrix(mode, s.theta[idx], ft=ns.ft[idx] if uses_ft(mode) else None, fl=fl)
        rows = [LabeledSample(FeatureVector(mode, x, float(s.end_times[i])), float(y), T)
                for x, i, y in zip(X, idx, labels)]
        write_feature_csv(out / f"{s.subject_id}_{mode}_T{args.t_ms}.csv", rows, s.subject_id)
    cfg.write(out / CONFIG_ECHO)
    print(f"wrote features for {len(subs)} subjects to {out}")
    return EXIT_OK


def _fit(predictor, subs, T, mode, cfg: RunConfig):
    scaler = FoldScaler.fit(subs)
    train = [scaler.transform(s) for s in subs]
    settings = cfg.model_settings()
    if predictor == "lstm":
        model = LstmPredictor.fit(train, T, mode, settings, cfg.seed)
    elif predictor == "svr":
        ext = LstmPredictor.fit(train, T, mode, settings, cfg.seed) if uses_fl(mode) else None
        model = SvrPredictor.fit(train, T, mode, settings, cfg.seed, extractor=ext)
    else:
        model = MeanPredictor.fit(train, T, mode, settings, cfg.seed)
    return model, scaler


def cmd_train(args) -> int:
    cfg = _run_config(args)
    predictor = check_predictor(args.predictor)
    mode = check_mode(args.feature)
    ids = set(args.subject) if args.subject else None
    subs = load_subjects(cfg, ids)
    model, scaler = _fit(predictor, subs, args.t_ms / 1000.0, mode, cfg)
    out = Path(args.model_out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_model(out, model, scaler, args.t_ms / 1000.0, mode)
    cfg.write(out.parent / CONFIG_ECHO)
    if getattr(model, "log", None) is not None:
        std = float(model.label_norm.std[0])
        print("epoch rmse (deg): " + " ".join(f"{r:.3f}" for r in model.log.rmse_deg(std)))
    print(f"saved {predictor}/{mode} model to {out}")
    return EXIT_OK


def _network_of(model):
    if isinstance(model, LstmPredictor):
        return model.net
    if isinstance(model, SvrPredictor) and model.extractor is not None:
        return model.extractor.net
    return None


def cmd_predict(args) -> int:
    model, scaler, T, mode = load_model(args.model)
    rec = load_recording(args.recording)
    net = _network_of(model)
    shape = net.shape if net is not None else NetShape()
    seq_len = shape.seq_len if net is not None else 1
    s = prepare_subject(rec, ext_steps=shape.ext_steps,
                        cutoff=None if args.no_filter else args.cutoff)
    ns = scaler.transform(s)
    idx, labels = ns.targets(T, seq_len)
    pred = model.predict(ns, idx)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["end_time", "target_time", "prediction", "label"])
        for i, p, y in zip(idx, pred, labels):
            t = float(s.end_times[i])
            w.writerow([repr(t), repr(t + T), repr(float(p)), repr(float(y))])
    m = metric_set(pred, labels, feature_width(mode))
    print(f"{rec.subject_id}: n={len(pred)} rmse={m.rmse:.4f} r={m.r:.4f} "
          f"snr_db={m.snr_db:.3f} adj_r2={m.adj_r2:.4f}")
    return EXIT_OK


def write_grid_artifacts(grid: ResultsGrid, out: Path):
    grid.write_csv(out / "grid.csv")
    (out / "grid_long.csv").write_text(grid.long_format())
    write_json(out / "report.json", build_report(grid))
    write_json(out / "failures.json", {"|".join(map(str, k)): v
                                       for k, v in sorted(grid.failures.items())})


def cmd_crossval(args) -> int:
    cfg = _run_config(args)
    out = _out_dir(cfg.out)
    cfg.write(out / CONFIG_ECHO)
    subs = load_subjects(cfg)
    grid = loso_crossval(subs, cfg.crossval_config())
    write_grid_artifacts(grid, out)
    print(f"{len(grid)} grid rows, {len(grid.failures)} failed cells -> {out}")
    if len(grid) == 0:
        log.error("every fold failed")
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    rep = grad_check(SMALL_SHAPE, seed=args.seed, fd_step=args.fd_step)
    ok = rep.passed(args.tol)
    print(f"{'PASS' if ok else 'FAIL'} max relative error {rep.max_rel_error:.3e} "
          f"over {rep.n_params} parameters (fd step {args.fd_step:g}, tolerance {args.tol:g})")
    return EXIT_OK if ok else EXIT_NUMERIC


def cmd_report(args) -> int:
    try:
        grid = ResultsGrid.read_csv(args.grid)
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"cannot read grid {args.grid}: {exc}") from exc
    report = build_report(grid)
    if args.out:
        write_json(args.out, report)
    else:
        print(json.dumps(_json_safe(report), indent=2, sort_keys=True))
    return EXIT_OK


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="kinpred", description="Ahead-of-time knee angle prediction from EMG and IMU.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("synth", help="generate synthetic recordings")
    _add_run_flags(s, ["seed", "subjects", "duration", "emd_lead_ms", "marker_noise", "out"])
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("supervise", help="measured knee angle from marker CSVs")
    s.add_argument("data", metavar="DIR")
    s.add_argument("--cutoff", type=float, default=6.0, help="low-pass cutoff in Hz")
    s.add_argument("--no-filter", action="store_true", help="skip marker low-pass filtering")
    s.add_argument("--thigh-model", metavar="JSON")
    s.add_argument("--shank-model", metavar="JSON")
    s.set_defaults(func=cmd_supervise)

    s = sub.add_parser("featurize", help="write labelled feature-vector CSVs")
    _add_run_flags(s, ["seed", "data", "cutoff", "out"])
    s.add_argument("--feature", default="FT")
    s.add_argument("--t-ms", type=int, default=54)
    s.add_argument("--model", metavar="JSON", help="trained model supplying scaler and extractor")
    s.set_defaults(func=cmd_featurize)

    s = sub.add_parser("train", help="fit one predictor on a set of subjects")
    _add_run_flags(s, [k for k in _RUN_FLAGS if k not in ("predictors", "features",
                                                           "prediction_times_ms", "ablation",
                                                           "out", "jobs", "eval_stride")])
    s.add_argument("--predictor", default="lstm")
    s.add_argument("--feature", default="FL")
    s.add_argument("--t-ms", type=int, default=54)
    s.add_argument("--subject", action="append", help="restrict to this subject id (repeatable)")
    s.add_argument("--model-out", default="model.json", metavar="JSON")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("predict", help="apply a saved model to one recording")
    s.add_argument("model", metavar="MODEL_JSON")
    s.add_argument("recording", metavar="MANIFEST_JSON")
    s.add_argument("--out", default="predictions.csv")
    s.add_argument("--cutoff", type=float, default=6.0)
    s.add_argument("--no-filter", action="store_true")
    s.set_defaults(func=cmd_predict)

    s = sub.add_parser("crossval", help="leave-one-subject-out grid evaluation")
    _add_run_flags(s, list(_RUN_FLAGS))
    s.set_defaults(func=cmd_crossval)

    s = sub.add_parser("gradcheck", help="finite-difference check of the BPTT gradients")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--fd-step", type=float, default=1e-5)
    s.add_argument("--tol", type=float, default=1e-4)
    s.set_defaults(func=cmd_gradcheck)

    s = sub.add_parser("report", help="averages and ANOVA tables from a grid CSV")
    s.add_argument("grid", metavar="GRID_CSV")
    s.add_argument("--out", metavar="JSON")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if not getattr(args, "func", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (KinpredError, OSError, ValueError, FloatingPointError,
            np.linalg.LinAlgError) as exc:
        print(f"kinpred {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return _exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
