"""Loop-closure detection with semantic pre-qualification.

Brute-force appearance matching against every old submap is both slow
and dangerous in a garage: most places look alike. Candidates are
therefore gated three ways before any registration runs. The query
keyframe and the candidate submap must each carry enough semantic
variety (distinct categories and a rarity-weighted score), the vehicle
must have travelled far enough since the submap was built that the
match is a genuine revisit, and the current pose estimate must already
place the two within a search radius. Survivors are verified by
semantic ICP and accepted only with a strong inlier fraction and a
tight residual.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .geometry import Pose2, wrap_angle
from .mapping import Keyframe, Submap, SubmapState
from .matching import IcpConfig, IcpResult, LabeledCloud, icp_register
from .semantic import DEFAULT_LABEL_WEIGHTS, CategoryCensus, SemanticFrame

_LABEL_WEIGHT_LUT = np.zeros(max(int(k) for k in DEFAULT_LABEL_WEIGHTS) + 1)
for _label, _weight in DEFAULT_LABEL_WEIGHTS.items():
    _LABEL_WEIGHT_LUT[int(_label)] = _weight


@dataclass(frozen=True)
class LoopConfig:
    """Gates for candidate selection and verification."""

    min_distinct_categories: int = 2
    min_weighted_score: float = 60.0
    min_travel_separation: float = 20.0
    search_radius: float = 10.0
    min_inlier_fraction: float = 0.6
    max_rms: float = 0.3
    verify_offsets: tuple[tuple[float, float], ...] = (
        (0.0, 0.0),
        (-1.5, 0.0),
        (1.5, 0.0),
        (-3.0, 0.0),
        (3.0, 0.0),
        (0.0, -1.5),
        (0.0, 1.5),
        (0.0, -3.0),
        (0.0, 3.0),
    )
    ambiguity_margin: float = 0.15
    max_yaw_correction: float = 0.1
    min_category_points: int = 10
    min_category_fraction: float = 0.25

    def __post_init__(self) -> None:
        if self.min_distinct_categories < 1:
            raise ValueError("min_distinct_categories must be at least 1")
        if self.min_weighted_score < 0.0:
            raise ValueError("min_weighted_score must be non-negative")
        if self.min_travel_separation < 0.0:
            raise ValueError("min_travel_separation must be non-negative")
        if self.search_radius <= 0.0:
            raise ValueError("search_radius must be positive")
        if not 0.0 < self.min_inlier_fraction <= 1.0:
            raise ValueError("min_inlier_fraction must lie in (0, 1]")
        if self.max_rms <= 0.0:
            raise ValueError("max_rms must be positive")
        offsets = [tuple(float(v) for v in off) for off in self.verify_offsets]
        if any(len(off) != 2 for off in offsets):
            raise ValueError("verify_offsets entries must be (forward, lateral) pairs")
        if (0.0, 0.0) not in offsets:
            raise ValueError("verify_offsets must include (0.0, 0.0)")
        if self.ambiguity_margin < 0.0:
            raise ValueError("ambiguity_margin must be non-negative")
        if self.max_yaw_correction <= 0.0:
            raise ValueError("max_yaw_correction must be positive")


@dataclass(frozen=True)
class SpqDecision:
    """Outcome of the semantic pre-qualification gate."""

    passed: bool
    distinct_categories: int
    weighted_score: float


def spq_qualify(census: CategoryCensus, config: LoopConfig) -> SpqDecision:
    """Does this content carry enough semantic variety to match safely?"""
    passed = (
        census.distinct_categories >= config.min_distinct_categories
        and census.weighted_score >= config.min_weighted_score
    )
    return SpqDecision(passed, census.distinct_categories, census.weighted_score)


@dataclass(frozen=True)
class LoopCandidate:
    """A qualified keyframe/submap pair awaiting geometric verification."""

    keyframe_id: int
    submap_id: int
    predicted_relative: Pose2
    distance: float


@dataclass(frozen=True)
class LoopClosure:
    """A verified loop: relative pose of the keyframe in the submap frame."""

    keyframe_id: int
    submap_id: int
    relative: Pose2
    rms: float
    inlier_fraction: float
    icp: IcpResult


def find_loop_candidates(
    keyframe: Keyframe,
    submaps: Sequence[Submap],
    keyframes: Mapping[int, Keyframe],
    config: LoopConfig,
) -> list[LoopCandidate]:
    """Select finalized submaps worth registering this keyframe against.

    The keyframe itself must pass the semantic gate; each submap must
    pass it too, lie within the search radius of the current pose
    estimate, and have been completed at least ``min_travel_separation``
    meters of driving ago. Candidates come back ordered nearest first.
    """
    if not spq_qualify(keyframe.census, config).passed:
        return []
    candidates = []
    for submap in submaps:
        if submap.state is not SubmapState.FINALIZED or submap.anchor is None:
            continue
        if not spq_qualify(submap.census(), config).passed:
            continue
        newest_travel = max(keyframes[k].travel for k in submap.keyframe_ids)
        if keyframe.travel - newest_travel < config.min_travel_separation:
            continue
        offset = keyframe.pose.xy - submap.anchor.xy
        distance = float((offset @ offset) ** 0.5)
        if distance > config.search_radius:
            continue
        predicted = submap.anchor.between(keyframe.pose)
        candidates.append(LoopCandidate(keyframe.id, submap.id, predicted, distance))
    candidates.sort(key=lambda c: c.distance)
    return candidates


def _weighted_match_fraction(
    frame: SemanticFrame, target: LabeledCloud, transform: Pose2, radius: float
) -> float:
    """Rarity-weighted share of frame points with a same-label partner.

    Plain inlier counts are dominated by lane lines, which repeat; the
    rare categories are what distinguish one stall row from the next, so
    they get the same weights the loop gate's census uses.
    """
    if len(frame) == 0:
        return 0.0
    moved = transform.transform_point(frame.xy)
    _, dists = target.match(moved, frame.labels, radius)
    weights = _LABEL_WEIGHT_LUT[frame.labels]
    total = float(weights.sum())
    if total <= 0.0:
        return 0.0
    return float(weights[np.isfinite(dists)].sum()) / total


def verify_loop(
    keyframe: Keyframe,
    submap: Submap,
    candidate: LoopCandidate,
    config: LoopConfig,
    icp_config: IcpConfig | None = None,
) -> LoopClosure | None:
    """Register the keyframe against the candidate submap and apply the gates.

    Returns a closure whose ``relative`` maps the keyframe into the
    submap anchor frame, or None if registration fails either threshold.
    """
    xy, labels = submap.local_cloud()
    if len(xy) == 0:
        return None
    target = LabeledCloud(xy, labels)
    cfg = icp_config or IcpConfig()
    # The initial guess carries the odometry drift accumulated since the
    # submap was built, which can exceed the tracking correspondence
    # radius, and garages repeat: pillar rows and stall stripes recur at
    # a near-constant pitch, so a single descent from a drifted guess can
    # lock onto the wrong repetition of the same structure. Each
    # verification therefore runs coarse-to-fine from a fan of starts
    # offset forward and sideways in the vehicle frame, wide enough to
    # straddle one repetition in every direction.
    if len(cfg.radius_schedule) == 1:
        cfg = replace(cfg, radius_schedule=(2.0, 1.0))
    attempts = []
    for forward, lateral in config.verify_offsets:
        init = candidate.predicted_relative.compose(Pose2(forward, lateral, 0.0))
        attempts.append(icp_register(keyframe.frame, target, init, cfg))
    # Heading is the one component the kinematic chain pins down well:
    # the fused gyro/differential rate keeps relative yaw honest long
    # after position has drifted metres. An alignment that demands a
    # large heading correction therefore cannot be a real revisit; it is
    # the signature of registering against a locally warped stretch of
    # map, where the best geometric fit sits at a rotated impostor pose.
    passed = [
        r
        for r in attempts
        if r.converged
        and r.inlier_fraction >= config.min_inlier_fraction
        and r.rms <= config.max_rms
        and abs(wrap_angle(r.transform.yaw - candidate.predicted_relative.yaw))
        <= config.max_yaw_correction
    ]
    if not passed:
        return None
    scores = {
        id(r): _weighted_match_fraction(keyframe.frame, target, r.transform, cfg.correspondence_radius)
        for r in attempts
    }
    result = max(passed, key=lambda r: (scores[id(r)], -r.rms))
    # If a geometrically distinct alignment scores nearly as well, the
    # place is ambiguous at this vantage and no closure is safe. Every
    # attempt gets a vote here, converged or not: a repetition of the
    # structure scoring close below the winner is exactly the
    # false-match signature, however its descent terminated. The scores
    # are rarity-weighted, so a shifted alignment that pairs up the
    # repeating lane geometry but misses the rare markings loses ground.
    for other in attempts:
        delta = result.transform.between(other.transform)
        # Same-place alignments agree within the acceptance tolerances;
        # anything farther apart is a rival interpretation of the scene.
        distinct = (
            float(np.hypot(delta.x, delta.y)) > cfg.correspondence_radius
            or abs(delta.yaw) > config.max_yaw_correction
        )
        if distinct and scores[id(other)] >= scores[id(result)] - config.ambiguity_margin:
            return None
    return LoopClosure(
        keyframe_id=keyframe.id,
        submap_id=submap.id,
        relative=result.transform,
        rms=result.rms,
        inlier_fraction=result.inlier_fraction,
        icp=result,
    )
