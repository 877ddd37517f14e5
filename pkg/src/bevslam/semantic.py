"""Labeled ground-plane point clouds extracted from BEV imagery.

A :class:`SemanticFrame` is the unit of data the whole pipeline runs on:
the metric vehicle-frame positions of lane lines, parking spots, zebra
crossings and indicating arrows visible in one stitched BEV image.
Segmentation itself is outside our scope; frames are built either from
label masks produced elsewhere or directly by the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from typing import Mapping

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Pose2


class SemanticLabel(IntEnum):
    """Ground-marking categories the mapper distinguishes."""

    LANE_LINE = 1
    PARKING_SPOT = 2
    ZEBRA_CROSSING = 3
    INDICATING_ARROW = 4


# Rarity-weighted contribution of each category to the loop-gate score.
# Lane lines are everywhere; crossings and arrows are distinctive.
DEFAULT_LABEL_WEIGHTS: dict[SemanticLabel, float] = {
    SemanticLabel.LANE_LINE: 1.0,
    SemanticLabel.PARKING_SPOT: 2.0,
    SemanticLabel.ZEBRA_CROSSING: 3.0,
    SemanticLabel.INDICATING_ARROW: 3.0,
}


def validate_label_weights(weights: Mapping[SemanticLabel, float]) -> dict[SemanticLabel, float]:
    """Check a weight table covers every label with strictly positive values."""
    out = {}
    for label in SemanticLabel:
        if label not in weights:
            raise ValueError(f"label weight table is missing {label.name}")
        w = float(weights[label])
        if w <= 0.0:
            raise ValueError(f"label weight for {label.name} must be positive, got {w}")
        out[label] = w
    return out


@dataclass(frozen=True)
class SemanticFrame:
    """Labeled 2D points in the vehicle frame at one timestamp.

    ``xy`` is (N, 2) float64 and ``labels`` is (N,) holding
    :class:`SemanticLabel` values; both are read-only after construction.
    """

    timestamp: float
    xy: np.ndarray
    labels: np.ndarray
    source_id: int = 0

    def __post_init__(self) -> None:
        xy = np.ascontiguousarray(self.xy, dtype=float).reshape(-1, 2)
        labels = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)
        if len(xy) != len(labels):
            raise ValueError(f"{len(xy)} points but {len(labels)} labels")
        valid = {int(l) for l in SemanticLabel}
        if len(labels) and not set(np.unique(labels)).issubset(valid):
            raise ValueError("labels contain values outside the known categories")
        xy.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, "xy", xy)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return len(self.xy)

    def points_3d(self) -> np.ndarray:
        """(N, 3) vehicle-frame points with z = 0 (everything is on the floor)."""
        return np.column_stack([self.xy, np.zeros(len(self.xy))])

    @staticmethod
    def from_points_3d(timestamp, points, labels, source_id=0) -> "SemanticFrame":
        """Build from (N, 3) points, validating they lie on the ground plane."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        if len(pts) and np.max(np.abs(pts[:, 2])) > 1e-6:
            raise ValueError("points are not on the ground plane (|z| > 1e-6)")
        return SemanticFrame(timestamp, pts[:, :2], labels, source_id)


def frame_from_label_mask(mask, bev_model, timestamp: float, source_id: int = 0) -> SemanticFrame:
    """Back-project a per-pixel label mask into a metric semantic frame.

    ``mask`` is an (H, W) integer image where zero means background and
    any :class:`SemanticLabel` value marks that category.
    """
    m = np.asarray(mask)
    if m.ndim != 2:
        raise ValueError("label mask must be a 2D array")
    rows, cols = np.nonzero(m)
    labels = m[rows, cols].astype(np.int64)
    pixels = np.column_stack([cols, rows]).astype(float)
    xy = bev_model.pixels_to_vehicle_xy(pixels) if len(pixels) else np.zeros((0, 2))
    return SemanticFrame(timestamp, xy, labels, source_id)


def voxel_downsample(xy, labels, cell: float) -> tuple[np.ndarray, np.ndarray]:
    """Collapse points to per-(cell, label) centroids on a square grid.

    Output order is sorted by (label, cell row, cell column), which makes
    the operation deterministic regardless of input order.
    """
    if cell <= 0.0:
        raise ValueError("cell size must be positive")
    pts = np.asarray(xy, dtype=float).reshape(-1, 2)
    labs = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(pts) == 0:
        return pts.copy(), labs.copy()
    keys = np.floor(pts / cell).astype(np.int64)
    combined = np.column_stack([labs, keys])
    uniq, inverse = np.unique(combined, axis=0, return_inverse=True)
    sums = np.zeros((len(uniq), 2))
    np.add.at(sums, inverse, pts)
    counts = np.bincount(inverse, minlength=len(uniq)).astype(float)
    centroids = sums / counts[:, None]
    return centroids, uniq[:, 0]


def downsample(frame: SemanticFrame, cell: float) -> SemanticFrame:
    """Voxel-downsample a frame; labels never mix across grid cells."""
    xy, labels = voxel_downsample(frame.xy, frame.labels, cell)
    return SemanticFrame(frame.timestamp, xy, labels, frame.source_id)


def frame_difference(a: SemanticFrame, b: SemanticFrame, pose_ab: Pose2, radius: float) -> float:
    """Fraction of points in ``b`` with no same-label neighbor in ``a``.

    ``pose_ab`` maps coordinates of ``b`` into the frame of ``a``. The
    result is in [0, 1]; an empty ``b`` counts as completely different.
    """
    if radius <= 0.0:
        raise ValueError("match radius must be positive")
    if len(b) == 0:
        return 1.0
    if len(a) == 0:
        return 1.0
    b_in_a = pose_ab.transform_point(b.xy)
    matched = 0
    for label in np.unique(b.labels):
        a_mask = a.labels == label
        b_mask = b.labels == label
        if not np.any(a_mask):
            continue
        tree = cKDTree(a.xy[a_mask])
        dists, _ = tree.query(b_in_a[b_mask], k=1, distance_upper_bound=radius)
        matched += int(np.sum(np.isfinite(dists)))
    return 1.0 - matched / len(b)


@dataclass(frozen=True)
class CategoryCensus:
    """Per-category point counts plus derived loop-gate statistics."""

    counts: dict[SemanticLabel, int]
    weighted_score: float
    distinct_categories: int

    @property
    def total(self) -> int:
        return sum(self.counts.values())


def census_of_labels(labels, weights: Mapping[SemanticLabel, float] | None = None) -> CategoryCensus:
    """Count points per category and compute the rarity-weighted score."""
    table = validate_label_weights(weights) if weights is not None else DEFAULT_LABEL_WEIGHTS
    labs = np.asarray(labels, dtype=np.int64).reshape(-1)
    counts = {}
    score = 0.0
    for label in SemanticLabel:
        n = int(np.sum(labs == int(label)))
        if n:
            counts[label] = n
            score += table[label] * n
    return CategoryCensus(counts, score, len(counts))


def category_census(frame: SemanticFrame, weights: Mapping[SemanticLabel, float] | None = None) -> CategoryCensus:
    return census_of_labels(frame.labels, weights)
