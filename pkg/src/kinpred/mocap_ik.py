"""Marker-based knee angle: weighted rigid pose fitting per segment and the
twist of the thigh-to-shank rotation about the knee axis."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.spatial.transform import Rotation

from kinpred.errors import DataError, InvalidInputError, RankDeficiencyError
from kinpred.signals import TimeSeries, butterworth_lowpass

# relative singular-value threshold below which a point cloud counts as collinear
_RANK_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class SegmentModel:
    local_markers: np.ndarray
    weights: np.ndarray
    joint_axis: np.ndarray

    def __post_init__(self):
        pts = np.array(self.local_markers, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 3:
            raise InvalidInputError("a segment needs at least three 3-d markers")
        w = np.ones(len(pts)) if self.weights is None else np.array(self.weights, dtype=float)
        if w.shape != (len(pts),) or np.any(w <= 0):
            raise InvalidInputError("one positive weight per marker required")
        axis = np.array(self.joint_axis, dtype=float)
        if axis.shape != (3,) or abs(np.linalg.norm(axis) - 1.0) > 1e-12:
            raise InvalidInputError("joint_axis must be a unit 3-vector")
        s = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)
        if s[1] <= _RANK_TOL * max(s[0], 1.0):
            raise RankDeficiencyError("segment markers are collinear")
        for name, arr in (("local_markers", pts), ("weights", w), ("joint_axis", axis)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_markers(self) -> int:
        return len(self.local_markers)

    @classmethod
    def from_json(cls, path) -> "SegmentModel":
        try:
            doc = json.loads(Path(path).read_text())
            return cls(doc["markers"], doc.get("weights"), doc["joint_axis"])
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"bad segment model file {path}: {exc}") from exc

    def to_json(self, path):
        doc = {
            "markers": self.local_markers.tolist(),
            "weights": self.weights.tolist(),
            "joint_axis": self.joint_axis.tolist(),
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")


@dataclass(frozen=True, eq=False)
class RigidPose:
    rotation: np.ndarray
    translation: np.ndarray

    def apply(self, points) -> np.ndarray:
        return np.asarray(points, dtype=float) @ self.rotation.T + self.translation


def _fit_stacked(local: np.ndarray, measured: np.ndarray, weights: np.ndarray,
                 bad_out: Optional[list] = None):
    """Weighted Kabsch for ``measured`` of shape (F, M, 3); returns (R, t) stacks.

    Degenerate frames raise, unless ``bad_out`` is given: then their indices
    are appended to it and their poses are meaningless.
    """
    w = weights / weights.sum()
    p_bar = w @ local
    q_bar = np.einsum("m,fmk->fk", w, measured)
    P = local - p_bar
    Q = measured - q_bar[:, None, :]
    cov = np.einsum("m,mi,fmj->fij", w, P, Q)
    U, S, Vt = np.linalg.svd(cov)
    degenerate = ~(S[:, 1] > _RANK_TOL * np.maximum(S[:, 0], 1e-300))
    if np.any(degenerate):
        if bad_out is None:
            bad = int(np.argmax(degenerate))
            raise RankDeficiencyError(f"degenerate (collinear) marker configuration at frame {bad}")
        bad_out.extend(np.flatnonzero(degenerate).tolist())
    V = np.swapaxes(Vt, 1, 2)
    Ut = np.swapaxes(U, 1, 2)
    d = np.sign(np.linalg.det(V @ Ut))
    d[d == 0] = 1.0
    D = np.zeros_like(cov)
    D[:, 0, 0] = 1.0
    D[:, 1, 1] = 1.0
    D[:, 2, 2] = d
    R = V @ D @ Ut
    t = q_bar - np.einsum("fij,j->fi", R, p_bar)
    return R, t


def fit_segment_pose(model: SegmentModel, measured) -> RigidPose:
    """Rigid pose minimising the weighted squared marker residual."""
    q = np.asarray(measured, dtype=float)
    if q.shape != model.local_markers.shape:
        raise InvalidInputError(
            f"expected {model.n_markers} measured markers, got array of shape {q.shape}"
        )
    R, t = _fit_stacked(model.local_markers, q[None], model.weights)
    return RigidPose(R[0], t[0])


def weighted_residual(model: SegmentModel, pose: RigidPose, measured) -> float:
    r = np.asarray(measured, dtype=float) - pose.apply(model.local_markers)
    return float(np.sum(model.weights * np.sum(r * r, axis=1)))


def _twist_deg(R_rel: np.ndarray, axis: np.ndarray) -> np.ndarray:
    quat = Rotation.from_matrix(R_rel).as_quat()  # (x, y, z, w)
    ang = 2.0 * np.arctan2(quat[..., :3] @ axis, quat[..., 3])
    ang = (ang + np.pi) % (2 * np.pi) - np.pi
    return np.degrees(ang)


def knee_angle(thigh: RigidPose, shank: RigidPose, thigh_model: SegmentModel) -> float:
    """Signed flexion (deg): twist of ``R_thigh^T R_shank`` about the thigh's joint axis."""
    R_rel = thigh.rotation.T @ shank.rotation
    return float(_twist_deg(R_rel, thigh_model.joint_axis))


def measured_angle_series(markers: TimeSeries, thigh_model: SegmentModel,
                          shank_model: SegmentModel, cutoff: Optional[float] = 6.0,
                          order: int = 4, bad_frames: Optional[list] = None) -> TimeSeries:
    """Knee angle per marker frame.

    Marker channels are ``x, y, z`` per marker, thigh markers first, in the
    order of each model. Positions are low-passed first unless ``cutoff`` is None.
    A degenerate frame raises, unless ``bad_frames`` is a list: then the frame
    index is appended, the frame is dropped and its angle is linearly
    interpolated from the surviving neighbours so the grid stays uniform.
    """
    m_thigh, m_shank = thigh_model.n_markers, shank_model.n_markers
    if markers.channels != 3 * (m_thigh + m_shank):
        raise InvalidInputError(
            f"marker stream has {markers.channels} channels, models need {3 * (m_thigh + m_shank)}"
        )
    if cutoff is not None:
        markers = butterworth_lowpass(markers, order, cutoff)
    pts = markers.values.reshape(len(markers), m_thigh + m_shank, 3)
    bad = [] if bad_frames is not None else None
    R_th, _ = _fit_stacked(thigh_model.local_markers, pts[:, :m_thigh], thigh_model.weights, bad)
    R_sh, _ = _fit_stacked(shank_model.local_markers, pts[:, m_thigh:], shank_model.weights, bad)
    R_rel = np.swapaxes(R_th, 1, 2) @ R_sh
    with np.errstate(invalid="ignore"):
        angle = _twist_deg(R_rel, thigh_model.joint_axis)
    if bad:
        drop = np.unique(bad)
        keep = np.setdiff1d(np.arange(len(markers)), drop)
        if len(keep) < 2:
            raise RankDeficiencyError("fewer than two non-degenerate marker frames")
        angle[drop] = np.interp(drop, keep, angle[keep])
        bad_frames.extend(drop.tolist())
    return TimeSeries(markers.start_time, markers.rate, angle)
