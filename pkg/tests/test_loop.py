"""Semantic pre-qualification and geometric loop verification."""

import numpy as np
import pytest

from bevslam.geometry import Pose2
from bevslam.loop import (
    LoopCandidate,
    LoopConfig,
    find_loop_candidates,
    spq_qualify,
    verify_loop,
)
from bevslam.mapping import Keyframe, Submap, SubmapState
from bevslam.semantic import SemanticFrame, SemanticLabel, census_of_labels

LANE = int(SemanticLabel.LANE_LINE)
SPOT = int(SemanticLabel.PARKING_SPOT)


def dense_scene():
    """Anchor-frame cloud with repeated rows plus two distinctive blocks."""
    xs = np.arange(0.0, 10.0, 0.1)
    ys = np.arange(0.0, 7.5, 0.1)
    rows = [np.column_stack([xs, np.full_like(xs, y)]) for y in (0.0, 2.5, 5.0, 7.5)]
    cols = [np.column_stack([np.full_like(ys, x), ys]) for x in (0.0, 10.0)]
    lanes = np.vstack(rows + cols)
    grid = np.arange(0.0, 1.0, 0.15)
    gx, gy = np.meshgrid(grid, grid)
    block = np.column_stack([gx.ravel(), gy.ravel()])
    spots = np.vstack([block + [3.0, 1.0], block + [7.0, 6.0]])
    xy = np.vstack([lanes, spots])
    labels = np.concatenate([np.full(len(lanes), LANE), np.full(len(spots), SPOT)])
    return xy, labels


def motif():
    """A compact self-contained structure, duplicable to fake a repeat."""
    offs = np.arange(0.0, 2.0, 0.1)
    cross = np.vstack(
        [np.column_stack([offs, np.zeros_like(offs)]), np.column_stack([np.zeros_like(offs), offs])]
    )
    grid = np.arange(0.4, 1.4, 0.2)
    gx, gy = np.meshgrid(grid, grid)
    block = np.column_stack([gx.ravel(), gy.ravel()])
    xy = np.vstack([cross, block])
    labels = np.concatenate([np.full(len(cross), LANE), np.full(len(block), SPOT)])
    return xy, labels


def make_keyframe(kf_id, pose, xy, labels, travel=0.0, t=0.0):
    frame = SemanticFrame(t, np.asarray(xy, dtype=float), np.asarray(labels))
    return Keyframe(
        id=kf_id,
        timestamp=t,
        pose=pose,
        initial_pose=pose,
        frame=frame,
        census=census_of_labels(labels),
        travel=travel,
    )


def make_submap(submap_id, anchor, xy, labels, travel=0.0, finalized=True):
    """A submap whose local cloud is exactly ``xy`` in the anchor frame."""
    holder = make_keyframe(1000 + submap_id, anchor, xy, labels, travel=travel)
    s = Submap(submap_id)
    s.insert(holder)
    if finalized:
        s.state = SubmapState.FINALIZED
    return s, {holder.id: holder}


# -- semantic pre-qualification ------------------------------------------------


def test_spq_requires_variety_and_weight():
    cfg = LoopConfig(min_distinct_categories=2, min_weighted_score=60.0)
    lane_only = census_of_labels(np.full(200, LANE))
    decision = spq_qualify(lane_only, cfg)
    assert not decision.passed
    assert decision.distinct_categories == 1

    sparse = census_of_labels(np.array([LANE] * 10 + [SPOT] * 10))
    decision = spq_qualify(sparse, cfg)
    assert not decision.passed  # 10*1 + 10*2 = 30 < 60
    assert decision.weighted_score == pytest.approx(30.0)

    rich = census_of_labels(np.array([LANE] * 30 + [SPOT] * 20))
    assert spq_qualify(rich, cfg).passed


# -- candidate selection --------------------------------------------------------


def candidate_fixture(travel=40.0, anchor=Pose2(0, 0, 0)):
    xy, labels = dense_scene()
    submap, holders = make_submap(0, anchor, xy, labels, travel=0.0)
    query = make_keyframe(0, Pose2(2.0, 1.0, 0.1), xy, labels, travel=travel)
    return query, submap, holders


def test_candidates_pass_all_gates():
    query, submap, holders = candidate_fixture()
    cfg = LoopConfig()
    found = find_loop_candidates(query, [submap], holders, cfg)
    assert len(found) == 1
    c = found[0]
    assert c.keyframe_id == query.id and c.submap_id == submap.id
    assert c.distance == pytest.approx(np.hypot(2.0, 1.0))
    want = submap.anchor.between(query.pose)
    assert (c.predicted_relative.x, c.predicted_relative.y) == (want.x, want.y)


def test_unqualified_keyframe_yields_nothing():
    query, submap, holders = candidate_fixture()
    lane_only = make_keyframe(
        0, query.pose, query.frame.xy, np.full(len(query.frame.xy), LANE), travel=40.0
    )
    assert find_loop_candidates(lane_only, [submap], holders, LoopConfig()) == []


def test_unfinalized_or_bland_submaps_are_skipped():
    query, submap, holders = candidate_fixture()
    submap.state = SubmapState.ACTIVE
    assert find_loop_candidates(query, [submap], holders, LoopConfig()) == []

    xy = query.frame.xy
    bland, bland_holders = make_submap(1, Pose2(0, 0, 0), xy, np.full(len(xy), LANE))
    assert find_loop_candidates(query, [bland], bland_holders, LoopConfig()) == []


def test_travel_separation_uses_the_newest_member():
    query, submap, holders = candidate_fixture(travel=30.0)
    # Newest contributing keyframe was at 15 m of travel: 30 - 15 < 20.
    next(iter(holders.values())).travel = 15.0
    assert find_loop_candidates(query, [submap], holders, LoopConfig()) == []
    next(iter(holders.values())).travel = 5.0
    assert len(find_loop_candidates(query, [submap], holders, LoopConfig())) == 1


def test_far_submaps_are_skipped_and_nearest_comes_first():
    xy, labels = dense_scene()
    near, near_holders = make_submap(0, Pose2(4.0, 0, 0), xy, labels)
    nearer, nearer_holders = make_submap(1, Pose2(1.0, 0, 0), xy, labels)
    far, far_holders = make_submap(2, Pose2(50.0, 0, 0), xy, labels)
    holders = {**near_holders, **nearer_holders, **far_holders}
    query = make_keyframe(0, Pose2(0, 0, 0), xy, labels, travel=100.0)
    found = find_loop_candidates(query, [near, nearer, far], holders, LoopConfig())
    assert [c.submap_id for c in found] == [1, 0]


# -- geometric verification ------------------------------------------------------


def verify_fixture(true_relative, predicted, scene=dense_scene):
    """Keyframe observing ``scene`` from ``true_relative`` off the anchor."""
    xy, labels = scene()
    submap, _ = make_submap(0, Pose2(0, 0, 0), xy, labels)
    seen = true_relative.inverse().transform_point(xy)
    query = make_keyframe(0, true_relative, seen, labels, travel=100.0)
    candidate = LoopCandidate(0, 0, predicted, 0.0)
    return query, submap, candidate


def test_verify_recovers_the_true_relative_pose():
    truth = Pose2(0.25, -0.15, 0.03)
    drifted = truth.compose(Pose2(0.35, -0.25, 0.02))
    query, submap, candidate = verify_fixture(truth, drifted)
    closure = verify_loop(query, submap, candidate, LoopConfig())
    assert closure is not None
    # Basin-level correctness: far inside the 2.5 m repetition pitch.
    assert np.hypot(closure.relative.x - truth.x, closure.relative.y - truth.y) < 0.15
    assert abs(closure.relative.yaw - truth.yaw) < 0.02
    assert closure.rms < 0.1
    assert closure.inlier_fraction > 0.95


def test_verify_recovers_from_a_full_repetition_offset():
    # The prediction is a whole row pitch off sideways: exactly the
    # failure a repetitive garage induces. The start fan still finds the
    # true alignment, and the distinctive blocks break the tie.
    truth = Pose2(0.0, 0.0, 0.0)
    drifted = Pose2(0.2, 2.5, 0.0)
    query, submap, candidate = verify_fixture(truth, drifted)
    closure = verify_loop(query, submap, candidate, LoopConfig())
    assert closure is not None
    assert np.hypot(closure.relative.x, closure.relative.y) < 0.15
    assert abs(closure.relative.yaw) < 0.02


def test_verify_rejects_novel_content():
    xy, labels = dense_scene()
    submap, _ = make_submap(0, Pose2(0, 0, 0), xy, labels)
    # Two thirds of the query points lie far outside the mapped area.
    outside = xy + [200.0, 0.0]
    seen = np.vstack([xy, outside, outside + [50.0, 0.0]])
    seen_labels = np.concatenate([labels, labels, labels])
    query = make_keyframe(0, Pose2(0, 0, 0), seen, seen_labels, travel=100.0)
    candidate = LoopCandidate(0, 0, Pose2(0, 0, 0), 0.0)
    assert verify_loop(query, submap, candidate, LoopConfig()) is None


def test_verify_rejects_a_large_heading_correction():
    truth = Pose2(0.0, 0.0, 0.15)
    query, submap, candidate = verify_fixture(truth, Pose2(0, 0, 0))
    assert verify_loop(query, submap, candidate, LoopConfig()) is None
    # The same verification with an honest heading prediction succeeds.
    query, submap, candidate = verify_fixture(truth, Pose2(0, 0, 0.12))
    assert verify_loop(query, submap, candidate, LoopConfig()) is not None


def test_verify_vetoes_an_ambiguous_repeat():
    xy, labels = motif()
    twice = np.vstack([xy, xy + [3.0, 0.0]])
    twice_labels = np.concatenate([labels, labels])
    ambiguous, _ = make_submap(0, Pose2(0, 0, 0), twice, twice_labels)
    unique, _ = make_submap(1, Pose2(0, 0, 0), xy, labels)
    query = make_keyframe(0, Pose2(0, 0, 0), xy, labels, travel=100.0)

    candidate = LoopCandidate(0, 0, Pose2(0, 0, 0), 0.0)
    assert verify_loop(query, ambiguous, candidate, LoopConfig()) is None

    candidate = LoopCandidate(0, 1, Pose2(0, 0, 0), 0.0)
    closure = verify_loop(query, unique, candidate, LoopConfig())
    assert closure is not None
    assert np.hypot(closure.relative.x, closure.relative.y) < 1e-6


def test_verify_empty_submap_returns_none():
    s = Submap(0)
    s.state = SubmapState.FINALIZED
    xy, labels = motif()
    query = make_keyframe(0, Pose2(0, 0, 0), xy, labels, travel=100.0)
    assert verify_loop(query, s, LoopCandidate(0, 0, Pose2(0, 0, 0), 0.0), LoopConfig()) is None


# -- configuration ----------------------------------------------------------------


def test_loop_config_validation():
    with pytest.raises(ValueError):
        LoopConfig(min_distinct_categories=0)
    with pytest.raises(ValueError):
        LoopConfig(min_weighted_score=-1.0)
    with pytest.raises(ValueError):
        LoopConfig(min_travel_separation=-1.0)
    with pytest.raises(ValueError):
        LoopConfig(search_radius=0.0)
    with pytest.raises(ValueError):
        LoopConfig(min_inlier_fraction=0.0)
    with pytest.raises(ValueError):
        LoopConfig(max_rms=0.0)
    with pytest.raises(ValueError):
        LoopConfig(verify_offsets=((1.0, 0.0),))  # identity start is mandatory
    with pytest.raises(ValueError):
        LoopConfig(verify_offsets=((0.0, 0.0), (1.0,)))
    with pytest.raises(ValueError):
        LoopConfig(ambiguity_margin=-0.1)
    with pytest.raises(ValueError):
        LoopConfig(max_yaw_correction=0.0)
