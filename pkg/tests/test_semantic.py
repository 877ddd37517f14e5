"""Semantic frame construction, downsampling, and census statistics."""

import numpy as np
import pytest

from bevslam.camera import BevCameraModel
from bevslam.geometry import Pose2
from bevslam.semantic import (
    DEFAULT_LABEL_WEIGHTS,
    SemanticFrame,
    SemanticLabel,
    category_census,
    census_of_labels,
    downsample,
    frame_difference,
    frame_from_label_mask,
    validate_label_weights,
    voxel_downsample,
)

LANE = int(SemanticLabel.LANE_LINE)
SPOT = int(SemanticLabel.PARKING_SPOT)
ZEBRA = int(SemanticLabel.ZEBRA_CROSSING)
ARROW = int(SemanticLabel.INDICATING_ARROW)


def test_frame_validates_shapes_and_labels():
    with pytest.raises(ValueError):
        SemanticFrame(0.0, np.zeros((3, 2)), np.array([LANE, LANE]))
    with pytest.raises(ValueError):
        SemanticFrame(0.0, np.zeros((2, 2)), np.array([LANE, 99]))
    frame = SemanticFrame(0.0, np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
    assert len(frame) == 0


def test_frame_arrays_are_readonly():
    frame = SemanticFrame(0.0, np.array([[1.0, 2.0]]), np.array([LANE]))
    with pytest.raises(ValueError):
        frame.xy[0, 0] = 5.0
    with pytest.raises(ValueError):
        frame.labels[0] = SPOT


def test_points_3d_roundtrip_and_ground_check():
    frame = SemanticFrame(1.0, np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([LANE, SPOT]))
    pts = frame.points_3d()
    assert pts.shape == (2, 3)
    assert np.all(pts[:, 2] == 0.0)
    back = SemanticFrame.from_points_3d(1.0, pts, frame.labels)
    assert np.array_equal(back.xy, frame.xy)
    lifted = pts.copy()
    lifted[0, 2] = 0.01
    with pytest.raises(ValueError):
        SemanticFrame.from_points_3d(1.0, lifted, frame.labels)


def test_frame_from_label_mask_positions():
    cam = BevCameraModel.standard(meters_per_pixel=0.0105, image_size=(8, 8))
    mask = np.zeros((8, 8), dtype=np.int64)
    mask[2, 5] = LANE
    frame = frame_from_label_mask(mask, cam, timestamp=3.0)
    assert len(frame) == 1
    assert frame.labels[0] == LANE
    expected = cam.pixels_to_vehicle_xy(np.array([[5.0, 2.0]]))[0]
    assert frame.xy[0] == pytest.approx(expected)
    with pytest.raises(ValueError):
        frame_from_label_mask(np.zeros((2, 2, 2)), cam, 0.0)


def test_voxel_downsample_centroids_and_label_separation():
    # Two lane points in one cell collapse to their centroid; the parking
    # point shares the cell but keeps its own output row.
    xy = np.array([[0.1, 0.1], [0.3, 0.3], [0.2, 0.2]])
    labels = np.array([LANE, LANE, SPOT])
    out_xy, out_labels = voxel_downsample(xy, labels, cell=1.0)
    assert len(out_xy) == 2
    lane_row = out_xy[out_labels == LANE][0]
    assert lane_row == pytest.approx([0.2, 0.2])
    spot_row = out_xy[out_labels == SPOT][0]
    assert spot_row == pytest.approx([0.2, 0.2])


def test_voxel_downsample_is_input_order_invariant():
    rng = np.random.default_rng(3)
    xy = rng.uniform(-5, 5, size=(300, 2))
    labels = rng.integers(1, 5, size=300)
    a_xy, a_lab = voxel_downsample(xy, labels, 0.25)
    perm = rng.permutation(300)
    b_xy, b_lab = voxel_downsample(xy[perm], labels[perm], 0.25)
    assert np.array_equal(a_lab, b_lab)
    assert np.allclose(a_xy, b_xy)
    with pytest.raises(ValueError):
        voxel_downsample(xy, labels, 0.0)


def test_downsample_eliminates_dense_duplicates():
    xy = np.repeat(np.array([[1.0, 1.0]]), 50, axis=0) + np.linspace(0, 0.01, 50)[:, None]
    frame = SemanticFrame(0.0, xy, np.full(50, LANE))
    small = downsample(frame, 0.25)
    assert len(small) == 1
    assert small.timestamp == frame.timestamp


def test_frame_difference_extremes():
    xy = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    a = SemanticFrame(0.0, xy, np.full(3, LANE))
    same = SemanticFrame(1.0, xy, np.full(3, LANE))
    assert frame_difference(a, same, Pose2.identity(), radius=0.1) == 0.0
    far = SemanticFrame(1.0, xy + 100.0, np.full(3, LANE))
    assert frame_difference(a, far, Pose2.identity(), radius=0.1) == 1.0
    # Same geometry but different category: no same-label neighbors.
    relabeled = SemanticFrame(1.0, xy, np.full(3, SPOT))
    assert frame_difference(a, relabeled, Pose2.identity(), radius=0.1) == 1.0


def test_frame_difference_respects_relative_pose():
    xy = np.array([[0.0, 0.0], [1.0, 0.0]])
    a = SemanticFrame(0.0, xy, np.full(2, LANE))
    shifted = SemanticFrame(1.0, xy - [5.0, 0.0], np.full(2, LANE))
    assert frame_difference(a, shifted, Pose2(5.0, 0.0, 0.0), radius=0.05) == 0.0
    with pytest.raises(ValueError):
        frame_difference(a, shifted, Pose2.identity(), radius=0.0)


def test_census_counts_and_weighted_score():
    labels = [LANE, LANE, LANE, SPOT, SPOT, ZEBRA, ARROW]
    census = census_of_labels(labels)
    assert census.counts[SemanticLabel.LANE_LINE] == 3
    assert census.counts[SemanticLabel.PARKING_SPOT] == 2
    assert census.distinct_categories == 4
    assert census.total == 7
    # 3*1 + 2*2 + 1*3 + 1*3 with the default rarity weights.
    assert census.weighted_score == pytest.approx(13.0)


def test_census_of_frame_and_custom_weights():
    frame = SemanticFrame(0.0, np.zeros((2, 2)), np.array([ZEBRA, ZEBRA]))
    census = category_census(frame, {label: 1.0 for label in SemanticLabel})
    assert census.weighted_score == pytest.approx(2.0)
    assert census.distinct_categories == 1


def test_validate_label_weights():
    assert validate_label_weights(DEFAULT_LABEL_WEIGHTS) == DEFAULT_LABEL_WEIGHTS
    missing = {SemanticLabel.LANE_LINE: 1.0}
    with pytest.raises(ValueError):
        validate_label_weights(missing)
    bad = dict(DEFAULT_LABEL_WEIGHTS)
    bad[SemanticLabel.INDICATING_ARROW] = 0.0
    with pytest.raises(ValueError):
        validate_label_weights(bad)
