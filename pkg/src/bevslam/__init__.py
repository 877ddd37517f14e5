"""Semantic bird's-eye-view SLAM for indoor parking garages.

The package covers the full pipeline: fisheye/BEV camera geometry,
EKF fusion of wheel and inertial odometry, semantic keyframe and submap
mapping, semantically gated loop closure, pose-graph optimization, and a
deterministic garage simulator used for ground-truth evaluation.
"""

from .geometry import Point3, Pose2, Transform3, wrap_angle

__all__ = ["Pose2", "Point3", "Transform3", "wrap_angle"]

__version__ = "0.1.0"
