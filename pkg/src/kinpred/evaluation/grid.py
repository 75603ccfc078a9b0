"""Results grid over (predictor, feature set, prediction time, subject), its
CSV form, axis averaging and the ANOVA report."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from kinpred.errors import IncompleteGridError, InvalidInputError, UndefinedError
from kinpred.evaluation.metrics import METRICS, MetricSet
from kinpred.evaluation.stats import ALPHA, anova_oneway

GRID_COLUMNS = ("predictor", "feature", "T_ms", "subject") + METRICS
FEATURE_SETS = ("FT", "FL", "FTL")
AVERAGED_TIMES_MS = (27, 54, 81, 108)


def _fmt(x: float) -> str:
    return "nan" if math.isnan(x) else repr(float(x))


@dataclass
class ResultsGrid:
    entries: dict = field(default_factory=dict)  # (P, F, T_ms, subject) -> MetricSet
    failures: dict = field(default_factory=dict)  # same key -> error message

    def add(self, predictor: str, feature: str, T_ms: int, subject: str, m: MetricSet):
        key = (predictor, feature, int(T_ms), str(subject))
        if key in self.entries:
            raise InvalidInputError(f"duplicate grid entry {key}")
        self.entries[key] = m

    def fail(self, predictor: str, feature: str, T_ms: int, subject: str, message: str):
        self.failures[(predictor, feature, int(T_ms), str(subject))] = message

    def get(self, predictor, feature, T_ms, subject) -> Optional[MetricSet]:
        return self.entries.get((predictor, feature, int(T_ms), str(subject)))

    def __len__(self):
        return len(self.entries)

    def keys(self):
        return sorted(self.entries)

    def subjects(self):
        return sorted({k[3] for k in self.entries})

    def values(self, predictor, feature, T_ms, metric="rmse", subjects=None) -> np.ndarray:
        subjects = subjects or self.subjects()
        out = []
        for s in subjects:
            m = self.get(predictor, feature, T_ms, s)
            if m is None:
                raise IncompleteGridError([(predictor, feature, T_ms, s)])
            out.append(getattr(m, metric))
        return np.array(out)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(GRID_COLUMNS)
        for k in self.keys():
            m = self.entries[k]
            w.writerow(list(k) + [_fmt(getattr(m, name)) for name in METRICS])
        return buf.getvalue()

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())

    @classmethod
    def read_csv(cls, path) -> "ResultsGrid":
        g = cls()
        with open(path, newline="") as fh:
            for row in csv.DictReader(fh):
                m = MetricSet(*(float(row[name]) for name in METRICS))
                g.add(row["predictor"], row["feature"], int(row["T_ms"]), row["subject"], m)
        return g

    def long_format(self) -> str:
        """One row per (cell, subject, metric) for external plotting."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["predictor", "feature", "T_ms", "subject", "metric", "value"])
        for k in self.keys():
            m = self.entries[k]
            for name in METRICS:
                w.writerow(list(k) + [name, _fmt(getattr(m, name))])
        return buf.getvalue()


def average_axis(grid: ResultsGrid, fix: str, predictor: str, metric: str = "rmse",
                 times_ms: Sequence[int] = AVERAGED_TIMES_MS,
                 features: Sequence[str] = FEATURE_SETS, subjects=None) -> dict:
    """Average over the axis that is not fixed, per subject then across subjects.

    ``fix="F"`` gives one entry per feature set (mean over ``times_ms``);
    ``fix="T"`` gives one entry per time (mean over ``features``).
    """
    if fix not in ("F", "T"):
        raise InvalidInputError("fix must be 'F' or 'T'")
    subjects = list(subjects or grid.subjects())
    outer, inner = (features, times_ms) if fix == "F" else (times_ms, features)
    if not inner:
        raise InvalidInputError("nothing to average over")
    holes = []
    result = {}
    for o in outer:
        per_subject = {}
        for s in subjects:
            vals = []
            for i in inner:
                F, T = (o, i) if fix == "F" else (i, o)
                m = grid.get(predictor, F, T, s)
                if m is None:
                    holes.append((predictor, F, T, s))
                else:
                    vals.append(getattr(m, metric))
            if len(vals) == len(inner):
                per_subject[s] = float(np.mean(vals))
        result[o] = per_subject
    if holes:
        raise IncompleteGridError(holes)
    return {
        o: {
            "per_subject": ps,
            "mean": float(np.mean(list(ps.values()))),
            "std": float(np.std(list(ps.values()))),
        }
        for o, ps in result.items()
    }


def _anova_entry(groups: dict) -> dict:
    labels = list(groups)
    try:
        F, p = anova_oneway([groups[k] for k in labels])
    except (UndefinedError, InvalidInputError) as exc:
        return {"groups": labels, "error": str(exc)}
    return {
        "groups": labels,
        "means": {k: float(np.mean(groups[k])) for k in labels},
        "F": F,
        "p": p,
        "significant": bool(p < ALPHA),
    }


def _cells(grid: ResultsGrid):
    preds = sorted({k[0] for k in grid.entries})
    feats = sorted({k[1] for k in grid.entries})
    times = sorted({k[2] for k in grid.entries})
    return preds, feats, times


def build_report(grid: ResultsGrid, metrics: Iterable[str] = METRICS) -> dict:
    """Axis averages and one-way ANOVA tables (per-subject values as observations)."""
    preds, feats, times = _cells(grid)
    subjects = grid.subjects()
    report = {"alpha": ALPHA, "subjects": subjects, "averages": {}, "anova": {}}
    emg_feats = [f for f in FEATURE_SETS if f in feats]
    avg_times = [t for t in AVERAGED_TIMES_MS if t in times] or times
    for P in preds if emg_feats else ():
        for metric in metrics:
            key = f"{P}/{metric}"
            entry = {}
            for fix in ("F", "T"):
                try:
                    entry[f"by_{fix}"] = average_axis(
                        grid, fix, P, metric,
                        times_ms=avg_times if fix == "F" else times,
                        features=emg_feats, subjects=subjects)
                except IncompleteGridError as exc:
                    entry[f"by_{fix}"] = {"error": f"incomplete: {len(exc.holes)} holes"}
            report["averages"][key] = entry

    def vals(P, F, T, metric):
        return grid.values(P, F, T, metric, subjects)

    tables = report["anova"]
    for metric in metrics:
        for P in preds:
            for F in feats:
                present = [T for T in times if grid.get(P, F, T, subjects[0]) is not None]
                if len(present) >= 2:
                    tables[f"{metric}/{P}/{F}/across_T"] = _anova_entry(
                        {f"{T}ms": vals(P, F, T, metric) for T in present})
            for T in times:
                present = [F for F in emg_feats if grid.get(P, F, T, subjects[0]) is not None]
                if len(present) >= 2:
                    tables[f"{metric}/{P}/{T}ms/across_F"] = _anova_entry(
                        {F: vals(P, F, T, metric) for F in present})
                if grid.get(P, "KIN", T, subjects[0]) is not None:
                    for F in emg_feats:
                        if grid.get(P, F, T, subjects[0]) is not None:
                            tables[f"{metric}/{P}/{T}ms/KIN_vs_{F}"] = _anova_entry(
                                {"KIN": vals(P, "KIN", T, metric), F: vals(P, F, T, metric)})
        for F in feats:
            for T in times:
                present = [P for P in preds if grid.get(P, F, T, subjects[0]) is not None]
                if len(present) >= 2:
                    tables[f"{metric}/{F}/{T}ms/across_P"] = _anova_entry(
                        {P: vals(P, F, T, metric) for P in present})
    return report
