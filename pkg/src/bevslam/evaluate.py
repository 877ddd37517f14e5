"""Accuracy metrics against simulator ground truth.

Everything here is a pure function of trajectories and landmark tables,
so the same code scores live runs and re-loaded exports. Estimated and
true trajectories live in different global frames (the estimator starts
at the identity); whole-trajectory metrics first align them with a
closed-form rigid fit, while landmark metrics avoid global alignment
entirely by anchoring each landmark to the vehicle pose at its closest
approach.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .geometry import Pose2, wrap_angle
from .matching import rigid_align_2d


@dataclass(frozen=True)
class DistanceErrors:
    """Absolute errors between paired reference and measured distances."""

    mean: float
    max: float
    rmse: float
    count: int


def distance_error_metrics(reference: Sequence[float], measured: Sequence[float]) -> DistanceErrors:
    ref = np.asarray(reference, dtype=float).reshape(-1)
    mea = np.asarray(measured, dtype=float).reshape(-1)
    if ref.shape != mea.shape:
        raise ValueError(f"got {len(ref)} reference but {len(mea)} measured distances")
    if len(ref) == 0:
        raise ValueError("no distance pairs to compare")
    err = np.abs(mea - ref)
    return DistanceErrors(
        mean=float(np.mean(err)),
        max=float(np.max(err)),
        rmse=float(np.sqrt(np.mean(err**2))),
        count=len(err),
    )


def interpolate_pose(times: np.ndarray, poses: Sequence[Pose2], t: float) -> Pose2:
    """Linear position / shortest-arc yaw interpolation, clamped at the ends."""
    times = np.asarray(times, dtype=float)
    if len(times) == 0:
        raise ValueError("cannot interpolate an empty trajectory")
    if t <= times[0]:
        return poses[0]
    if t >= times[-1]:
        return poses[-1]
    j = int(np.searchsorted(times, t, side="right"))
    i = j - 1
    span = times[j] - times[i]
    frac = 0.0 if span <= 0.0 else (t - times[i]) / span
    a, b = poses[i], poses[j]
    yaw = a.yaw + frac * wrap_angle(b.yaw - a.yaw)
    return Pose2(a.x + frac * (b.x - a.x), a.y + frac * (b.y - a.y), yaw)


def _positions(poses: Sequence[Pose2]) -> np.ndarray:
    return np.array([[p.x, p.y] for p in poses]).reshape(-1, 2)


def associate_times(est_times: np.ndarray, ref_times: np.ndarray, max_dt: float) -> list[tuple[int, int]]:
    """Nearest-reference-sample association within ``max_dt`` seconds."""
    ref_times = np.asarray(ref_times, dtype=float)
    pairs = []
    for i, t in enumerate(np.asarray(est_times, dtype=float)):
        j = int(np.searchsorted(ref_times, t))
        best = None
        for k in (j - 1, j):
            if 0 <= k < len(ref_times):
                dt = abs(float(ref_times[k]) - float(t))
                if best is None or dt < best[1]:
                    best = (k, dt)
        if best is not None and best[1] <= max_dt:
            pairs.append((i, best[0]))
    return pairs


@dataclass(frozen=True)
class AteResult:
    """Absolute trajectory error after a rigid SE(2) alignment."""

    rmse: float
    mean: float
    max: float
    pairs: int
    alignment: Pose2


def absolute_trajectory_error(
    est_times: np.ndarray,
    est_poses: Sequence[Pose2],
    ref_times: np.ndarray,
    ref_poses: Sequence[Pose2],
    max_dt: float = 0.05,
) -> AteResult:
    pairs = associate_times(est_times, ref_times, max_dt)
    if len(pairs) < 2:
        raise ValueError(f"only {len(pairs)} associated pose pairs; cannot align")
    est = _positions([est_poses[i] for i, _ in pairs])
    ref = _positions([ref_poses[j] for _, j in pairs])
    alignment = rigid_align_2d(est, ref)
    residual = alignment.transform_point(est) - ref
    norms = np.linalg.norm(residual, axis=1)
    return AteResult(
        rmse=float(np.sqrt(np.mean(norms**2))),
        mean=float(np.mean(norms)),
        max=float(np.max(norms)),
        pairs=len(pairs),
        alignment=alignment,
    )


def relative_drift_per_meter(
    est_times: np.ndarray,
    est_poses: Sequence[Pose2],
    ref_times: np.ndarray,
    ref_poses: Sequence[Pose2],
    segment_length: float = 10.0,
    max_dt: float = 0.05,
) -> float:
    """Mean translational drift of ``segment_length``-meter windows, per meter."""
    pairs = associate_times(est_times, ref_times, max_dt)
    if len(pairs) < 2:
        raise ValueError("not enough associated poses for relative drift")
    est = [est_poses[i] for i, _ in pairs]
    ref = [ref_poses[j] for _, j in pairs]
    ref_xy = _positions(ref)
    arc = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(ref_xy, axis=0), axis=1))])
    drifts = []
    for start in range(len(arc)):
        target = arc[start] + segment_length
        end = int(np.searchsorted(arc, target))
        if end >= len(arc):
            break
        actual = arc[end] - arc[start]
        if actual <= 0.0:
            continue
        est_rel = est[start].between(est[end])
        ref_rel = ref[start].between(ref[end])
        err = ref_rel.between(est_rel)
        drifts.append(math.hypot(err.x, err.y) / actual)
    if not drifts:
        raise ValueError(f"trajectory shorter than one {segment_length} m segment")
    return float(np.mean(drifts))


def endpoint_drift(
    est_times: np.ndarray,
    est_poses: Sequence[Pose2],
    ref_times: np.ndarray,
    ref_poses: Sequence[Pose2],
) -> tuple[float, float]:
    """(endpoint error in meters, trajectory length in meters).

    Both trajectories are expressed relative to their own starting pose
    first, so no global alignment is involved: this is accumulated
    front-end drift in the pure odometric sense.
    """
    pairs = associate_times(est_times, ref_times, 0.05)
    if len(pairs) < 2:
        raise ValueError("not enough associated poses for endpoint drift")
    first_e, first_r = pairs[0]
    last_e, last_r = pairs[-1]
    est_rel = est_poses[first_e].between(est_poses[last_e])
    ref_rel = ref_poses[first_r].between(ref_poses[last_r])
    err = ref_rel.between(est_rel)
    ref_xy = _positions([ref_poses[j] for _, j in pairs])
    length = float(np.sum(np.linalg.norm(np.diff(ref_xy, axis=0), axis=1)))
    return math.hypot(err.x, err.y), length


def landmark_map_positions(
    landmarks: Mapping[str, np.ndarray],
    gt_times: np.ndarray,
    gt_poses: Sequence[Pose2],
    est_times: np.ndarray,
    est_poses: Sequence[Pose2],
) -> dict[str, np.ndarray]:
    """Place each true landmark into the estimated map frame.

    The landmark is anchored to the ground-truth vehicle pose at its
    closest approach (where the markings around it were best observed)
    and re-expressed through the estimated pose at that same instant.
    Map/world distance comparisons built on these positions measure the
    estimator's internal consistency without any global alignment.
    """
    gt_xy = _positions(gt_poses)
    out: dict[str, np.ndarray] = {}
    for name in sorted(landmarks):
        target = np.asarray(landmarks[name], dtype=float)
        best = int(np.argmin(np.linalg.norm(gt_xy - target, axis=1)))
        t_star = float(gt_times[best])
        local = gt_poses[best].inverse().transform_point(target)
        est_pose = interpolate_pose(est_times, est_poses, t_star)
        out[name] = est_pose.transform_point(local)
    return out


def pairwise_distances(points: Mapping[str, np.ndarray]) -> dict[tuple[str, str], float]:
    names = sorted(points)
    out: dict[tuple[str, str], float] = {}
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            out[(a, b)] = float(np.linalg.norm(np.asarray(points[a]) - np.asarray(points[b])))
    return out


@dataclass(frozen=True)
class ClosureCheck:
    keyframe_id: int
    submap_id: int
    translation_error: float
    yaw_error: float
    correct: bool


def classify_closures(
    closures,
    keyframe_times: Mapping[int, float],
    submap_anchor_times: Mapping[int, float],
    gt_pose_at: Callable[[float], Pose2],
    translation_tolerance: float = 0.5,
    yaw_tolerance: float = 0.1,
) -> list[ClosureCheck]:
    """Compare accepted loop closures against ground-truth relative poses."""
    checks = []
    for c in closures:
        gt_anchor = gt_pose_at(submap_anchor_times[c.submap_id])
        gt_kf = gt_pose_at(keyframe_times[c.keyframe_id])
        true_relative = gt_anchor.between(gt_kf)
        err = true_relative.between(c.relative)
        t_err = math.hypot(err.x, err.y)
        checks.append(
            ClosureCheck(
                keyframe_id=c.keyframe_id,
                submap_id=c.submap_id,
                translation_error=t_err,
                yaw_error=abs(err.yaw),
                correct=t_err <= translation_tolerance and abs(err.yaw) <= yaw_tolerance,
            )
        )
    return checks
