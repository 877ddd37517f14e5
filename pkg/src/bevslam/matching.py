"""Label-aware point-cloud registration.

Registration drives both frame-to-submap tracking and loop-closure
verification. Correspondences are nearest neighbors restricted to the
same semantic category, which kills most of the aliasing a bare
geometric ICP suffers from in a parking garage (every lane line looks
like every other lane line).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose2, rot2
from .semantic import SemanticFrame


class MatchingError(Exception):
    """Registration could not be attempted on the given inputs."""


class DegenerateAlignmentError(MatchingError):
    """Correspondences do not determine a unique rigid transform."""


class LabeledCloud:
    """A static labeled 2D point set with per-category nearest-neighbor search."""

    def __init__(self, xy, labels) -> None:
        self.xy = np.ascontiguousarray(xy, dtype=float).reshape(-1, 2)
        self.labels = np.ascontiguousarray(labels, dtype=np.int64).reshape(-1)
        if len(self.xy) != len(self.labels):
            raise ValueError("point and label counts differ")
        self.xy.setflags(write=False)
        self.labels.setflags(write=False)
        self._by_label: dict[int, tuple[np.ndarray, cKDTree]] = {}
        for label in np.unique(self.labels):
            idx = np.nonzero(self.labels == label)[0]
            self._by_label[int(label)] = (idx, cKDTree(self.xy[idx]))

    def __len__(self) -> int:
        return len(self.xy)

    @staticmethod
    def from_frame(frame: SemanticFrame) -> "LabeledCloud":
        return LabeledCloud(frame.xy, frame.labels)

    def match(self, query_xy, query_labels, radius: float) -> tuple[np.ndarray, np.ndarray]:
        """Nearest same-label neighbor within ``radius`` for each query point.

        Returns (indices, distances); index -1 and distance inf mark
        points with no acceptable partner.
        """
        q = np.asarray(query_xy, dtype=float).reshape(-1, 2)
        labs = np.asarray(query_labels, dtype=np.int64).reshape(-1)
        indices = np.full(len(q), -1, dtype=np.int64)
        distances = np.full(len(q), np.inf)
        for label, (idx, tree) in self._by_label.items():
            mask = labs == label
            if not np.any(mask):
                continue
            d, j = tree.query(q[mask], k=1, distance_upper_bound=radius)
            hit = np.isfinite(d)
            rows = np.nonzero(mask)[0][hit]
            indices[rows] = idx[j[hit]]
            distances[rows] = d[hit]
        return indices, distances


def rigid_align_2d(src, dst) -> Pose2:
    """Least-squares rigid transform T minimizing ||T(src) - dst||^2.

    Closed-form 2D Procrustes: center both sets, take the rotation from
    the SVD of the 2x2 cross-covariance (reflection corrected), then the
    translation between centroids.
    """
    s = np.asarray(src, dtype=float).reshape(-1, 2)
    d = np.asarray(dst, dtype=float).reshape(-1, 2)
    if s.shape != d.shape:
        raise ValueError("source and destination must pair up one-to-one")
    if len(s) < 2:
        raise MatchingError(f"rigid alignment needs at least 2 pairs, got {len(s)}")
    sc = s.mean(axis=0)
    dc = d.mean(axis=0)
    s0 = s - sc
    d0 = d - dc
    if float(np.max(np.abs(s0))) < 1e-12:
        raise DegenerateAlignmentError("all source points coincide; rotation is unobservable")
    cross = s0.T @ d0
    u, _, vt = np.linalg.svd(cross)
    r = vt.T @ u.T
    if np.linalg.det(r) < 0.0:
        vt = vt.copy()
        vt[1] *= -1.0
        r = vt.T @ u.T
    yaw = float(np.arctan2(r[1, 0], r[0, 0]))
    t = dc - rot2(yaw) @ sc
    return Pose2(t[0], t[1], yaw)


@dataclass(frozen=True)
class IcpConfig:
    """Iteration and gating parameters for semantic ICP.

    ``radius_schedule`` runs the match-align loop once per factor with
    the correspondence radius scaled by it, warm-starting each stage
    from the last. A wide opening stage lets points displaced by a large
    initial rotation find partners at all; the closing stage (always
    factor 1) restores the configured radius, so the reported residual
    and inlier metrics keep their meaning.
    """

    max_iterations: int = 30
    correspondence_radius: float = 0.5
    radius_schedule: tuple[float, ...] = (1.0,)
    translation_tolerance: float = 1e-4
    rotation_tolerance: float = 1e-4
    min_inliers: int = 30

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.correspondence_radius <= 0.0:
            raise ValueError("correspondence_radius must be positive")
        schedule = tuple(float(f) for f in self.radius_schedule)
        object.__setattr__(self, "radius_schedule", schedule)
        if not schedule or any(f <= 0.0 or not np.isfinite(f) for f in schedule):
            raise ValueError("radius_schedule must be non-empty positive factors")
        if any(a < b for a, b in zip(schedule, schedule[1:])):
            raise ValueError("radius_schedule must be non-increasing")
        if schedule[-1] != 1.0:
            raise ValueError("radius_schedule must end at factor 1.0")
        if self.translation_tolerance <= 0.0 or self.rotation_tolerance <= 0.0:
            raise ValueError("convergence tolerances must be positive")
        if self.min_inliers < 3:
            raise ValueError("min_inliers must be at least 3")


@dataclass(frozen=True)
class IcpResult:
    """Outcome of one registration attempt.

    ``converged`` requires a stationary iteration (a step below
    tolerance, or a residual plateau after at least one accepted round)
    plus the inlier floor; a non-converged result still carries the best
    transform found so callers can fall back gracefully. ``rms_history``
    is non-increasing: an iteration that would raise the residual is
    rejected and iteration stops there.
    """

    transform: Pose2
    rms: float
    inliers: int
    inlier_fraction: float
    converged: bool
    iterations: int
    rms_history: tuple[float, ...]
    covariance: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self) -> None:
        cov = np.array(self.covariance, dtype=float).reshape(3, 3)
        cov.setflags(write=False)
        object.__setattr__(self, "covariance", cov)


# Residual floor (meters) used when deriving an information matrix from a
# near-perfect fit, so edge information never becomes infinite.
_RESIDUAL_FLOOR = 0.01


def _pose_covariance(src: np.ndarray, transform: Pose2, rms: float) -> np.ndarray:
    """Gauss-Newton covariance of the fitted pose from point-pair residuals."""
    rotated = transform.transform_point(src) - transform.xy
    n = len(src)
    jtj = np.zeros((3, 3))
    jtj[0, 0] = jtj[1, 1] = n
    # d(residual)/d(yaw) = [-(Rp)_y, (Rp)_x] per point.
    jtj[0, 2] = jtj[2, 0] = -np.sum(rotated[:, 1])
    jtj[1, 2] = jtj[2, 1] = np.sum(rotated[:, 0])
    jtj[2, 2] = np.sum(rotated[:, 0] ** 2 + rotated[:, 1] ** 2)
    sigma2 = max(rms, _RESIDUAL_FLOOR) ** 2
    try:
        cov = sigma2 * np.linalg.inv(jtj)
    except np.linalg.LinAlgError:
        return np.eye(3) * 1e6
    if not np.all(np.isfinite(cov)):
        return np.eye(3) * 1e6
    return 0.5 * (cov + cov.T)


def _diverged(transform: Pose2, inliers: int, fraction: float, iterations: int,
              history: list[float]) -> IcpResult:
    return IcpResult(
        transform=transform,
        rms=history[-1] if history else np.inf,
        inliers=inliers,
        inlier_fraction=fraction,
        converged=False,
        iterations=iterations,
        rms_history=tuple(history),
        covariance=np.eye(3) * 1e6,
    )


def icp_register(
    source: SemanticFrame,
    target: LabeledCloud,
    initial: Pose2,
    config: IcpConfig | None = None,
) -> IcpResult:
    """Register ``source`` onto ``target`` starting from ``initial``.

    Classic iterate-match-align ICP, with correspondences restricted to
    the same semantic label within the gating radius and the transform
    refit in closed form each round. Never raises on poor geometry:
    degenerate or starved iterations return a non-converged result.
    """
    cfg = config or IcpConfig()
    if len(source) == 0:
        raise MatchingError("source frame is empty")
    if len(target) == 0:
        raise MatchingError("target cloud is empty")
    src = source.xy
    labels = source.labels
    transform = initial
    best_rms = np.inf
    history: list[float] = []
    inliers = 0
    stationary = False
    iterations = 0

    # One monotone residual ledger spans all stages: shrinking the radius
    # keeps each point's partner at most as far away and sheds only the
    # worst pairs, so the recorded residual can never rise at a handoff.
    for factor in cfg.radius_schedule:
        radius = factor * cfg.correspondence_radius
        stationary = False
        for _ in range(cfg.max_iterations):
            iterations += 1
            moved = transform.transform_point(src)
            idx, _ = target.match(moved, labels, radius)
            matched = idx >= 0
            inliers = int(np.count_nonzero(matched))
            if inliers < 3:
                return _diverged(transform, inliers, inliers / len(src), iterations, history)
            pairs_src = src[matched]
            pairs_dst = target.xy[idx[matched]]
            try:
                candidate = rigid_align_2d(pairs_src, pairs_dst)
            except DegenerateAlignmentError:
                return _diverged(transform, inliers, inliers / len(src), iterations, history)
            residual = candidate.transform_point(pairs_src) - pairs_dst
            rms = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
            step = transform.between(candidate)
            if rms > best_rms + 1e-12:
                # The refit got worse: the match-align alternation has hit
                # its fixed point (the noise floor), so keep the previous
                # transform. Only a first-round increase means the initial
                # guess led nowhere.
                stationary = bool(history)
                break
            transform = candidate
            best_rms = rms
            history.append(rms)
            if np.hypot(step.x, step.y) < cfg.translation_tolerance and abs(step.yaw) < cfg.rotation_tolerance:
                stationary = True
                break

    moved = transform.transform_point(src)
    idx, dists = target.match(moved, labels, cfg.correspondence_radius)
    matched = idx >= 0
    inliers = int(np.count_nonzero(matched))
    fraction = inliers / len(src)
    if inliers >= 3:
        final_rms = float(np.sqrt(np.mean(dists[matched] ** 2)))
    else:
        final_rms = np.inf
    converged = stationary and inliers >= cfg.min_inliers
    covariance = (
        _pose_covariance(src[matched], transform, final_rms) if converged else np.eye(3) * 1e6
    )
    return IcpResult(
        transform=transform,
        rms=final_rms,
        inliers=inliers,
        inlier_fraction=fraction,
        converged=converged,
        iterations=iterations,
        rms_history=tuple(history),
        covariance=covariance,
    )
