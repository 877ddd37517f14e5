"""Keyframe selection and submap-structured mapping.

The map is built from keyframes (downsampled semantic frames with a
global pose) grouped into fixed-capacity submaps. Two submaps are open
at any time: once the current one is half full, new keyframes also feed
the next one, so consecutive submaps overlap and tracking never faces
an empty target when the map rotates. A submap that reaches capacity is
rebuilt from its keyframes' best poses (point-cloud correction), frozen,
and handed to the global map; afterwards it only ever moves rigidly
through its anchor pose.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Mapping as TypingMapping

import numpy as np

from .geometry import Pose2
from .matching import LabeledCloud
from .semantic import (
    CategoryCensus,
    SemanticFrame,
    census_of_labels,
    frame_difference,
    voxel_downsample,
)


class MappingError(Exception):
    """Invalid mapper state transition or lookup."""


class SubmapState(Enum):
    ACTIVE = "active"
    FINALIZING = "finalizing"
    FINALIZED = "finalized"


@dataclass
class Keyframe:
    """A retained semantic frame with its evolving global pose.

    ``pose`` is updated whenever the optimizer publishes corrections;
    ``initial_pose`` keeps the front-end estimate at insertion time.
    ``travel`` is trajectory arc length accumulated up to this frame,
    used to keep loop detection from matching immediate neighbors.
    """

    id: int
    timestamp: float
    pose: Pose2
    initial_pose: Pose2
    frame: SemanticFrame
    census: CategoryCensus
    travel: float


class Submap:
    """A bounded group of keyframes with a shared local point cloud.

    Points are stored relative to the anchor pose (the pose of the first
    keyframe inserted). While active the cloud simply accumulates; at
    finalization it is rebuilt from the keyframes' current global poses
    and voxel-downsampled, after which it never changes internally.
    """

    def __init__(self, submap_id: int) -> None:
        self.id = submap_id
        self.state = SubmapState.ACTIVE
        self.anchor: Pose2 | None = None
        self.keyframe_ids: list[int] = []
        self._xy_parts: list[np.ndarray] = []
        self._label_parts: list[np.ndarray] = []
        self._census_cache: tuple[int, CategoryCensus] | None = None

    def __len__(self) -> int:
        return len(self.keyframe_ids)

    def insert(self, keyframe: Keyframe) -> None:
        if self.state is not SubmapState.ACTIVE:
            raise MappingError(f"submap {self.id} is {self.state.value}; cannot insert")
        if self.anchor is None:
            self.anchor = keyframe.pose
        relative = self.anchor.between(keyframe.pose)
        self.keyframe_ids.append(keyframe.id)
        self._xy_parts.append(relative.transform_point(keyframe.frame.xy))
        self._label_parts.append(np.asarray(keyframe.frame.labels))

    def local_cloud(self) -> tuple[np.ndarray, np.ndarray]:
        """Point cloud in the submap (anchor) frame."""
        if not self._xy_parts:
            return np.zeros((0, 2)), np.zeros(0, dtype=np.int64)
        return np.concatenate(self._xy_parts), np.concatenate(self._label_parts)

    def census(self) -> CategoryCensus:
        key = len(self.keyframe_ids)
        if self._census_cache is None or self._census_cache[0] != key:
            _, labels = self.local_cloud()
            self._census_cache = (key, census_of_labels(labels))
        return self._census_cache[1]

    def rebuild(self, keyframes: TypingMapping[int, Keyframe], cell: float) -> None:
        """Re-correct the cloud from the keyframes' current poses and downsample."""
        if self.anchor is None:
            raise MappingError(f"submap {self.id} has no keyframes to rebuild from")
        xs = []
        ls = []
        for kf_id in self.keyframe_ids:
            kf = keyframes[kf_id]
            relative = self.anchor.between(kf.pose)
            xs.append(relative.transform_point(kf.frame.xy))
            ls.append(np.asarray(kf.frame.labels))
        xy, labels = voxel_downsample(np.concatenate(xs), np.concatenate(ls), cell)
        self._xy_parts = [xy]
        self._label_parts = [labels]
        self._census_cache = None

    def global_cloud(self) -> tuple[np.ndarray, np.ndarray]:
        """Point cloud transformed into the world frame by the anchor pose."""
        xy, labels = self.local_cloud()
        if self.anchor is None or len(xy) == 0:
            return xy, labels
        return self.anchor.transform_point(xy), labels


@dataclass(frozen=True)
class MappingConfig:
    """Keyframe gate and submap lifecycle parameters."""

    submap_capacity: int = 10
    overlap_fraction: float = 0.5
    cell_size: float = 0.10
    keyframe_difference_threshold: float = 0.5
    keyframe_match_radius: float = 0.15

    def __post_init__(self) -> None:
        if self.submap_capacity < 2:
            raise ValueError("submap_capacity must be at least 2")
        if not 0.0 <= self.overlap_fraction < 1.0:
            raise ValueError("overlap_fraction must lie in [0, 1)")
        if self.cell_size <= 0.0 or self.keyframe_match_radius <= 0.0:
            raise ValueError("cell_size and keyframe_match_radius must be positive")
        if not 0.0 < self.keyframe_difference_threshold <= 1.0:
            raise ValueError("keyframe_difference_threshold must lie in (0, 1]")

    @property
    def overlap_start(self) -> int:
        """Keyframe count at which insertions start feeding the next submap."""
        return self.submap_capacity - int(round(self.submap_capacity * self.overlap_fraction))


@dataclass(frozen=True)
class InsertOutcome:
    """What one keyframe insertion did to the submap structure."""

    keyframe: Keyframe
    submap_ids: tuple[int, ...]
    rotated_out: "Submap | None"


class Mapper:
    """Owns keyframes, the two open submaps, and the finalized map."""

    def __init__(self, config: MappingConfig | None = None) -> None:
        self.config = config or MappingConfig()
        self.keyframes: dict[int, Keyframe] = {}
        self.current: Submap | None = None
        self.next_submap: Submap | None = None
        self.finalizing: list[Submap] = []
        self.finalized: list[Submap] = []
        self.last_keyframe: Keyframe | None = None
        self._next_kf_id = 0
        self._next_submap_id = 0
        self._pose_version = 0
        self._target_cache: tuple[tuple[int, int, int], LabeledCloud] | None = None

    def _new_submap(self) -> Submap:
        s = Submap(self._next_submap_id)
        self._next_submap_id += 1
        return s

    def should_insert_keyframe(self, frame: SemanticFrame, pose: Pose2) -> bool:
        """Keep a frame only if most of it is new relative to the last keyframe."""
        if self.last_keyframe is None:
            return True
        relative = self.last_keyframe.pose.between(pose)
        diff = frame_difference(
            self.last_keyframe.frame, frame, relative, self.config.keyframe_match_radius
        )
        return diff > self.config.keyframe_difference_threshold

    def insert_keyframe(
        self, timestamp: float, pose: Pose2, frame: SemanticFrame, travel: float = 0.0
    ) -> InsertOutcome:
        kf = Keyframe(
            id=self._next_kf_id,
            timestamp=timestamp,
            pose=pose,
            initial_pose=pose,
            frame=frame,
            census=census_of_labels(frame.labels),
            travel=travel,
        )
        self._next_kf_id += 1
        self.keyframes[kf.id] = kf
        self.last_keyframe = kf

        if self.current is None:
            self.current = self._new_submap()
        assigned = [self.current.id]
        feed_next = len(self.current) >= self.config.overlap_start
        self.current.insert(kf)
        if feed_next:
            if self.next_submap is None:
                self.next_submap = self._new_submap()
            self.next_submap.insert(kf)
            assigned.append(self.next_submap.id)

        rotated = None
        if len(self.current) >= self.config.submap_capacity:
            rotated = self.current
            rotated.state = SubmapState.FINALIZING
            self.finalizing.append(rotated)
            self.current = self.next_submap if self.next_submap is not None else self._new_submap()
            self.next_submap = None
        self._target_cache = None
        return InsertOutcome(kf, tuple(assigned), rotated)

    def finalize_submap(self, submap: Submap) -> None:
        """Re-correct a full submap's cloud and move it into the global map."""
        if submap.state is SubmapState.FINALIZED:
            raise MappingError(f"submap {submap.id} is already finalized")
        submap.rebuild(self.keyframes, self.config.cell_size)
        submap.state = SubmapState.FINALIZED
        if submap in self.finalizing:
            self.finalizing.remove(submap)
        self.finalized.append(submap)
        self._pose_version += 1

    def finish(self) -> None:
        """End-of-run cleanup: finalize the current submap, drop the next one.

        Every keyframe in the next submap also lives in the current one,
        so discarding it loses nothing.
        """
        if self.current is not None and len(self.current):
            self.current.state = SubmapState.FINALIZING
            self.finalize_submap(self.current)
        self.current = None
        self.next_submap = None

    def active_target(self) -> LabeledCloud | None:
        """Current submap's cloud in the world frame, for frame-to-map tracking."""
        if self.current is None or len(self.current) == 0:
            return None
        key = (self.current.id, len(self.current), self._pose_version)
        if self._target_cache is not None and self._target_cache[0] == key:
            return self._target_cache[1]
        xy, labels = self.current.global_cloud()
        xy, labels = voxel_downsample(xy, labels, self.config.cell_size)
        cloud = LabeledCloud(xy, labels)
        self._target_cache = (key, cloud)
        return cloud

    def apply_poses(
        self,
        keyframe_poses: TypingMapping[int, Pose2],
        submap_anchors: TypingMapping[int, Pose2],
    ) -> None:
        """Publish optimized poses back into keyframes and submap anchors."""
        for kf_id, pose in keyframe_poses.items():
            self.keyframes[kf_id].pose = pose
        if submap_anchors:
            by_id = {s.id: s for s in self.all_submaps()}
            for submap_id, anchor in submap_anchors.items():
                by_id[submap_id].anchor = anchor
        self._pose_version += 1
        self._target_cache = None

    def all_submaps(self) -> list[Submap]:
        out = list(self.finalized) + list(self.finalizing)
        for s in (self.current, self.next_submap):
            if s is not None:
                out.append(s)
        return out

    def rebuild_finalized(self) -> None:
        """Re-correct every finalized submap from current keyframe poses.

        Used once at shutdown so the exported map reflects the final
        optimized trajectory rather than the poses at finalization time.
        """
        for s in self.finalized:
            s.rebuild(self.keyframes, self.config.cell_size)
        self._pose_version += 1
        self._target_cache = None

    def global_cloud(self) -> tuple[np.ndarray, np.ndarray]:
        """Merged world-frame cloud of all finalized submaps."""
        xs = []
        ls = []
        for s in self.finalized:
            xy, labels = s.global_cloud()
            if len(xy):
                xs.append(xy)
                ls.append(labels)
        if not xs:
            return np.zeros((0, 2)), np.zeros(0, dtype=np.int64)
        return np.concatenate(xs), np.concatenate(ls)

    def keyframe_trajectory(self) -> tuple[np.ndarray, list[Pose2]]:
        """Timestamps and current poses of all keyframes in insertion order."""
        ordered = [self.keyframes[k] for k in sorted(self.keyframes)]
        return np.array([kf.timestamp for kf in ordered]), [kf.pose for kf in ordered]
