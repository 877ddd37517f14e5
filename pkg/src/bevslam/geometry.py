"""Planar rigid-transform algebra plus small 3D containers.

Vehicle poses live in SE(2): everything the mapper tracks sits on the
garage floor, so the estimation problem is planar. Full 3D rotations and
translations appear only on the camera side, where rays leave the ground
plane, and are kept in :class:`Transform3`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_TWO_PI = 2.0 * math.pi


def wrap_angle(angle: float) -> float:
    """Wrap an angle to the half-open interval (-pi, pi]."""
    a = math.fmod(angle + math.pi, _TWO_PI)
    if a <= 0.0:
        a += _TWO_PI
    return a - math.pi


def rot2(yaw: float) -> np.ndarray:
    """2x2 rotation matrix for a planar heading."""
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose2:
    """Rigid planar transform (x, y, yaw). Yaw is normalized on construction."""

    x: float = 0.0
    y: float = 0.0
    yaw: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))

    @staticmethod
    def identity() -> "Pose2":
        return Pose2(0.0, 0.0, 0.0)

    @staticmethod
    def from_array(v) -> "Pose2":
        return Pose2(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.yaw])

    @property
    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])

    def matrix(self) -> np.ndarray:
        """3x3 homogeneous matrix form."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return np.array([[c, -s, self.x], [s, c, self.y], [0.0, 0.0, 1.0]])

    def compose(self, other: "Pose2") -> "Pose2":
        """This transform followed by ``other`` (frame chaining a<-b<-c)."""
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2(
            self.x + c * other.x - s * other.y,
            self.y + s * other.x + c * other.y,
            self.yaw + other.yaw,
        )

    def inverse(self) -> "Pose2":
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        return Pose2(-(c * self.x + s * self.y), -(-s * self.x + c * self.y), -self.yaw)

    def between(self, other: "Pose2") -> "Pose2":
        """Relative transform taking this pose to ``other``: self.compose(result) == other."""
        return self.inverse().compose(other)

    def transform_point(self, xy) -> np.ndarray:
        """Map a point (or an (N, 2) array of points) from this frame to the parent frame."""
        pts = np.asarray(xy, dtype=float)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        if pts.ndim == 1:
            return np.array([self.x + c * pts[0] - s * pts[1], self.y + s * pts[0] + c * pts[1]])
        out = np.empty_like(pts)
        out[:, 0] = self.x + c * pts[:, 0] - s * pts[:, 1]
        out[:, 1] = self.y + s * pts[:, 0] + c * pts[:, 1]
        return out


@dataclass(frozen=True)
class Point3:
    """A point in 3D space."""

    x: float
    y: float
    z: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z])

    @staticmethod
    def from_array(v) -> "Point3":
        return Point3(float(v[0]), float(v[1]), float(v[2]))


class Transform3:
    """Rigid 3D transform: a rotation matrix plus a translation vector.

    The rotation is validated to be orthonormal with determinant +1 at
    construction. Instances are treated as immutable; the stored arrays
    are marked read-only.
    """

    __slots__ = ("rotation", "translation")

    def __init__(self, rotation, translation) -> None:
        r = np.array(rotation, dtype=float)
        t = np.array(translation, dtype=float).reshape(3)
        if r.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {r.shape}")
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ValueError("rotation matrix is not orthonormal")
        if not math.isclose(float(np.linalg.det(r)), 1.0, abs_tol=1e-9):
            raise ValueError("rotation matrix must have determinant +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def __setattr__(self, name, value):  # pragma: no cover - immutability guard
        raise AttributeError("Transform3 is immutable")

    @staticmethod
    def identity() -> "Transform3":
        return Transform3(np.eye(3), np.zeros(3))

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous matrix form."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def apply(self, point: Point3) -> Point3:
        v = self.rotation @ point.as_array() + self.translation
        return Point3(float(v[0]), float(v[1]), float(v[2]))

    def apply_array(self, pts: np.ndarray) -> np.ndarray:
        """Transform an (N, 3) array of points."""
        return np.asarray(pts, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> "Transform3":
        rt = self.rotation.T
        return Transform3(rt, -(rt @ self.translation))

    def compose(self, other: "Transform3") -> "Transform3":
        return Transform3(
            self.rotation @ other.rotation,
            self.rotation @ other.translation + self.translation,
        )
