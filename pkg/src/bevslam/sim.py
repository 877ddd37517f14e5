"""Deterministic garage simulator.

Builds synthetic parking-garage worlds out of labeled ground markings,
drives a unicycle vehicle along a waypoint route, and synthesizes the
three sensor streams the pipeline consumes: BEV semantic frames, wheel
encoder rates, and IMU yaw rate / acceleration. Ground-truth poses,
twists, and named landmark positions ride along for evaluation.

Everything is reproducible: world geometry is a pure function of the
template parameters, and all sensor noise comes from independent
substreams of a single seeded generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .camera import BevCameraModel
from .fusion import ImuSample, WheelSample, exact_arc
from .geometry import Pose2, rot2, wrap_angle
from .semantic import SemanticFrame, SemanticLabel


class GenerationError(Exception):
    """Simulation inputs cannot produce a valid run."""


# ---------------------------------------------------------------------------
# Rasterization helpers (everything is drawn as points on a ~10 cm lattice)


def _segment(a, b, spacing: float) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    n = max(int(math.ceil(float(np.linalg.norm(b - a)) / spacing)), 1)
    ts = np.linspace(0.0, 1.0, n + 1)
    return a + ts[:, None] * (b - a)


def _polyline(vertices, spacing: float) -> np.ndarray:
    pts = []
    for i, (a, b) in enumerate(zip(vertices, vertices[1:])):
        seg = _segment(a, b, spacing)
        pts.append(seg if i == 0 else seg[1:])
    return np.concatenate(pts)


def _rect_outline(x0: float, y0: float, x1: float, y1: float, spacing: float) -> np.ndarray:
    return _polyline([(x0, y0), (x1, y0), (x1, y1), (x0, y1), (x0, y0)], spacing)


def _zebra(center, along, across, n_stripes: int, length: float, spacing: float) -> np.ndarray:
    """Parallel stripes: ``along`` is the stripe direction, ``across`` the band axis."""
    center = np.asarray(center, dtype=float)
    along = np.asarray(along, dtype=float)
    across = np.asarray(across, dtype=float)
    stripes = []
    for i in range(n_stripes):
        offset = (i - (n_stripes - 1) / 2.0) * 0.6
        mid = center + across * offset
        stripes.append(_segment(mid - along * length / 2.0, mid + along * length / 2.0, spacing))
    return np.concatenate(stripes)


def _arrow(tip, heading: float, spacing: float, size: float = 2.0) -> np.ndarray:
    tip = np.asarray(tip, dtype=float)
    d = np.array([math.cos(heading), math.sin(heading)])
    p = np.array([-d[1], d[0]])
    tail = tip - d * size
    head_l = tip - d * 0.7 + p * 0.45
    head_r = tip - d * 0.7 - p * 0.45
    return np.concatenate(
        [_segment(tail, tip, spacing), _segment(head_l, tip, spacing)[:-1],
         _segment(head_r, tip, spacing)[:-1]]
    )


# ---------------------------------------------------------------------------
# Worlds


@dataclass
class GarageWorld:
    """A static labeled point world with named landmarks and a default route."""

    name: str
    extents: tuple[float, float, float, float]
    xy: np.ndarray
    labels: np.ndarray
    landmarks: dict[str, np.ndarray]
    route: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.xy = np.ascontiguousarray(self.xy, dtype=float).reshape(-1, 2)
        self.labels = np.ascontiguousarray(self.labels, dtype=np.int64).reshape(-1)
        self.route = np.asarray(self.route, dtype=float).reshape(-1, 2)
        self.xy.setflags(write=False)
        self.labels.setflags(write=False)
        self.route.setflags(write=False)

    def contains(self, xy) -> bool:
        x, y = float(xy[0]), float(xy[1])
        x0, y0, x1, y1 = self.extents
        return x0 <= x <= x1 and y0 <= y <= y1


class _Builder:
    def __init__(self) -> None:
        self._xy: list[np.ndarray] = []
        self._labels: list[np.ndarray] = []
        self.landmarks: dict[str, np.ndarray] = {}
        self.meta: dict = {}

    def add(self, pts: np.ndarray, label: SemanticLabel) -> None:
        self._xy.append(pts)
        self._labels.append(np.full(len(pts), int(label), dtype=np.int64))

    def landmark(self, name: str, x: float, y: float) -> None:
        self.landmarks[name] = np.array([x, y])

    def build(self, name: str, extents, route) -> GarageWorld:
        return GarageWorld(
            name=name,
            extents=tuple(float(v) for v in extents),
            xy=np.concatenate(self._xy),
            labels=np.concatenate(self._labels),
            landmarks=self.landmarks,
            route=route,
            meta=self.meta,
        )


def _spot_row(b: _Builder, x_start: float, x_end: float, y0: float, y1: float,
              pitch: float, spacing: float, vertical: bool = False) -> int:
    """A row of parking-spot outlines; returns how many spots were drawn."""
    count = 0
    pos = x_start
    while pos + pitch <= x_end + 1e-9:
        if vertical:
            b.add(_rect_outline(y0, pos, y1, pos + pitch, spacing), SemanticLabel.PARKING_SPOT)
        else:
            b.add(_rect_outline(pos, y0, pos + pitch, y1, spacing), SemanticLabel.PARKING_SPOT)
        pos += pitch
        count += 1
    return count


def grid_garage(width: float = 60.0, height: float = 30.0, spacing: float = 0.1) -> GarageWorld:
    """Rectangular garage: straight parking rows separated by two aisles."""
    if width < 30.0 or height < 24.0:
        raise GenerationError("grid garage needs at least a 30 x 24 m floor")
    b = _Builder()
    b.add(_rect_outline(0.3, 0.3, width - 0.3, height - 0.3, spacing), SemanticLabel.LANE_LINE)
    mid = height / 2.0
    bands = [(0.8, 5.8), (mid - 5.0, mid), (mid, mid + 5.0), (height - 5.8, height - 0.8)]
    spots = 0
    for y0, y1 in bands:
        b.add(_segment((0.8, y0), (width - 0.8, y0), spacing), SemanticLabel.LANE_LINE)
        b.add(_segment((0.8, y1), (width - 0.8, y1), spacing), SemanticLabel.LANE_LINE)
        spots += _spot_row(b, 4.0, width - 4.0, y0, y1, 2.6, spacing)
    b.meta["parking_spots"] = spots
    b.meta["spot_rows"] = len(bands)
    b.meta["spots_per_row"] = spots // len(bands)

    aisle_lo = (5.8 + mid - 5.0) / 2.0
    aisle_hi = (mid + 5.0 + height - 5.8) / 2.0
    for y_aisle in (aisle_lo, aisle_hi):
        b.add(
            _zebra((6.0, y_aisle), np.array([0.0, 1.0]), np.array([1.0, 0.0]), 5, 3.6, spacing),
            SemanticLabel.ZEBRA_CROSSING,
        )
        for frac, heading in ((0.35, 0.0), (0.75, math.pi)):
            b.add(_arrow((width * frac, y_aisle), heading, spacing), SemanticLabel.INDICATING_ARROW)

    b.landmark("entry", 4.0, aisle_lo)
    b.landmark("exit", width - 4.0, aisle_hi)
    b.landmark("center", width / 2.0, mid)
    b.landmark("corner_sw", 0.3, 0.3)
    b.landmark("corner_ne", width - 0.3, height - 0.3)
    b.landmark("crossing_low", 6.0, aisle_lo)

    route = np.array(
        [
            [4.0, aisle_lo],
            [width - 4.0, aisle_lo],
            [width - 4.0, aisle_hi],
            [4.0, aisle_hi],
        ]
    )
    return b.build("grid-garage", (0.0, 0.0, width, height), route)


def loop_corridor(width: float = 60.0, height: float = 40.0, spacing: float = 0.1) -> GarageWorld:
    """A rectangular ring corridor; the centerline perimeter is 2*(width+height)."""
    if width < 20.0 or height < 20.0:
        raise GenerationError("loop corridor needs at least a 20 x 20 m centerline")
    b = _Builder()
    hw, hh = width / 2.0, height / 2.0
    b.add(_rect_outline(-hw + 3.0, -hh + 3.0, hw - 3.0, hh - 3.0, spacing), SemanticLabel.LANE_LINE)
    b.add(_rect_outline(-hw - 3.0, -hh - 3.0, hw + 3.0, hh + 3.0, spacing), SemanticLabel.LANE_LINE)

    spots = 0
    margin = 8.0
    spots += _spot_row(b, -hw + margin, hw - margin, -hh - 5.5, -hh - 3.0, 2.6, spacing)
    spots += _spot_row(b, -hw + margin, hw - margin, hh + 3.0, hh + 5.5, 2.6, spacing)
    spots += _spot_row(b, -hh + margin, hh - margin, -hw - 5.5, -hw - 3.0, 2.6, spacing, vertical=True)
    spots += _spot_row(b, -hh + margin, hh - margin, hw + 3.0, hw + 5.5, 2.6, spacing, vertical=True)
    b.meta["parking_spots"] = spots

    x_axis = np.array([1.0, 0.0])
    y_axis = np.array([0.0, 1.0])
    b.add(_zebra((0.0, -hh), y_axis, x_axis, 5, 5.4, spacing), SemanticLabel.ZEBRA_CROSSING)
    b.add(_zebra((0.0, hh), y_axis, x_axis, 5, 5.4, spacing), SemanticLabel.ZEBRA_CROSSING)
    b.add(_zebra((-hw, 0.0), x_axis, y_axis, 5, 5.4, spacing), SemanticLabel.ZEBRA_CROSSING)
    b.add(_zebra((hw, 0.0), x_axis, y_axis, 5, 5.4, spacing), SemanticLabel.ZEBRA_CROSSING)

    for tip, heading in (
        ((hw / 2.0, -hh), 0.0),
        ((hw, -hh / 2.0), math.pi / 2.0),
        ((hw / 2.0, hh), math.pi),
        ((-hw, hh / 2.0), -math.pi / 2.0),
        ((-hw / 2.0, hh), math.pi),
        ((-hw / 2.0, -hh), 0.0),
    ):
        b.add(_arrow(tip, heading, spacing), SemanticLabel.INDICATING_ARROW)

    b.landmark("corner_se", hw, -hh)
    b.landmark("corner_ne", hw, hh)
    b.landmark("corner_nw", -hw, hh)
    b.landmark("corner_sw", -hw, -hh)
    b.landmark("mid_s", 0.0, -hh)
    b.landmark("mid_e", hw, 0.0)
    b.landmark("mid_n", 0.0, hh)
    b.landmark("mid_w", -hw, 0.0)
    b.meta["centerline_perimeter"] = 2.0 * (width + height)

    route = np.array([[0.0, -hh], [hw, -hh], [hw, hh], [-hw, hh], [-hw, -hh]])
    pad = 8.0
    return b.build("loop-corridor", (-hw - pad, -hh - pad, hw + pad, hh + pad), route)


def figure_eight(width: float = 80.0, height: float = 36.0, spacing: float = 0.1) -> GarageWorld:
    """Two lobes joined at the center; the route crosses itself once per lap."""
    if width < 40.0 or height < 20.0:
        raise GenerationError("figure eight needs at least a 40 x 20 m floor")
    b = _Builder()
    a = width / 2.0 - 4.0
    h = height / 2.0 - 4.0
    left = [(0.0, 0.0), (-a, -h), (-a, h), (0.0, 0.0)]
    right = [(0.0, 0.0), (a, h), (a, -h), (0.0, 0.0)]
    b.add(_polyline([(p[0], p[1]) for p in left], spacing), SemanticLabel.LANE_LINE)
    b.add(_polyline([(p[0], p[1]) for p in right], spacing), SemanticLabel.LANE_LINE)
    b.add(
        _rect_outline(-a - 7.0, -h - 7.0, a + 7.0, h + 7.0, spacing), SemanticLabel.LANE_LINE
    )

    spots = 0
    spots += _spot_row(b, -h, h, -a - 6.0, -a - 3.5, 2.6, spacing, vertical=True)
    spots += _spot_row(b, -h, h, a + 3.5, a + 6.0, 2.6, spacing, vertical=True)
    b.meta["parking_spots"] = spots

    y_axis = np.array([0.0, 1.0])
    x_axis = np.array([1.0, 0.0])
    b.add(_zebra((-6.0, 0.0), y_axis, x_axis, 4, 4.0, spacing), SemanticLabel.ZEBRA_CROSSING)
    b.add(_zebra((6.0, 0.0), y_axis, x_axis, 4, 4.0, spacing), SemanticLabel.ZEBRA_CROSSING)

    for tip, heading in (
        ((-a / 2.0, -h), math.pi),
        ((-a, 0.0), math.pi / 2.0),
        ((a / 2.0, h), 0.0),
        ((a, 0.0), -math.pi / 2.0),
    ):
        b.add(_arrow(tip, heading, spacing), SemanticLabel.INDICATING_ARROW)

    b.landmark("left_bottom", -a, -h)
    b.landmark("left_top", -a, h)
    b.landmark("right_top", a, h)
    b.landmark("right_bottom", a, -h)
    b.landmark("center", 0.0, 0.0)
    b.landmark("west_wall", -a - 7.0, 0.0)

    route = np.array([[0.0, 0.0], [-a, -h], [-a, h], [0.0, 0.0], [a, h], [a, -h]])
    pad = 9.0
    return b.build("figure-eight", (-a - pad, -h - pad, a + pad, h + pad), route)


TEMPLATES: dict[str, Callable[..., GarageWorld]] = {
    "grid-garage": grid_garage,
    "loop-corridor": loop_corridor,
    "figure-eight": figure_eight,
}


def make_world(template: str, **params) -> GarageWorld:
    """Instantiate one of the named world templates."""
    try:
        factory = TEMPLATES[template]
    except KeyError:
        known = ", ".join(sorted(TEMPLATES))
        raise GenerationError(f"unknown world template {template!r}; known templates: {known}") from None
    return factory(**params)


def ground_truth_distances(world: GarageWorld, names: Sequence[str] | None = None) -> dict[tuple[str, str], float]:
    """Euclidean distances between all pairs of named landmarks."""
    chosen = list(names) if names is not None else sorted(world.landmarks)
    for name in chosen:
        if name not in world.landmarks:
            known = ", ".join(sorted(world.landmarks))
            raise KeyError(f"unknown landmark {name!r}; known landmarks: {known}")
    out: dict[tuple[str, str], float] = {}
    for i, a in enumerate(chosen):
        for b_name in chosen[i + 1 :]:
            out[(a, b_name)] = float(np.linalg.norm(world.landmarks[a] - world.landmarks[b_name]))
    return out


# ---------------------------------------------------------------------------
# Vehicle, rates, noise


@dataclass(frozen=True)
class VehicleModel:
    wheel_radius: float = 0.30
    track_width: float = 1.60

    def __post_init__(self) -> None:
        if self.wheel_radius <= 0.0 or self.track_width <= 0.0:
            raise ValueError("vehicle geometry must be positive")


@dataclass(frozen=True)
class SensorRates:
    """Sample rates in Hz; control_hz is the master integration rate."""

    bev_hz: float = 10.0
    wheel_hz: float = 100.0
    imu_hz: float = 100.0
    control_hz: float = 100.0

    def __post_init__(self) -> None:
        for name in ("bev_hz", "wheel_hz", "imu_hz", "control_hz"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")
        for name in ("bev_hz", "wheel_hz", "imu_hz"):
            ratio = self.control_hz / getattr(self, name)
            if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
                raise ValueError(f"control_hz must be an integer multiple of {name}")

    def stride(self, rate: float) -> int:
        return int(round(self.control_hz / rate))


@dataclass(frozen=True)
class SensorNoiseModel:
    """Noise magnitudes; see field comments for units."""

    wheel_rate_sigma: float = 0.01  # rad/s additive white noise per wheel
    wheel_scale_sigma: float = 0.005  # std of the per-run wheel scale factor error
    imu_yaw_sigma: float = 0.005  # rad/s additive white noise
    imu_bias_walk: float = 0.0002  # rad/s per sqrt(s) gyro bias random walk
    imu_accel_sigma: float = 0.05  # m/s^2 additive white noise
    point_jitter_sigma: float = 0.03  # m isotropic jitter on BEV points
    point_dropout: float = 0.0  # probability a visible point is dropped

    def __post_init__(self) -> None:
        for name in (
            "wheel_rate_sigma",
            "wheel_scale_sigma",
            "imu_yaw_sigma",
            "imu_bias_walk",
            "imu_accel_sigma",
            "point_jitter_sigma",
        ):
            if getattr(self, name) < 0.0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.point_dropout < 1.0:
            raise ValueError("point_dropout must lie in [0, 1)")

    @staticmethod
    def zero() -> "SensorNoiseModel":
        return SensorNoiseModel(0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


@dataclass(frozen=True)
class TrajectorySpec:
    """Waypoint route and the controller limits used to follow it."""

    waypoints: np.ndarray
    speed: float = 2.5
    laps: int = 1
    capture_radius: float = 1.5
    heading_gain: float = 1.5
    max_yaw_rate: float = 0.9
    max_accel: float = 1.5

    def __post_init__(self) -> None:
        wp = np.asarray(self.waypoints, dtype=float).reshape(-1, 2)
        wp.setflags(write=False)
        object.__setattr__(self, "waypoints", wp)
        if len(wp) < 2:
            raise GenerationError("a route needs at least 2 waypoints")
        if self.speed <= 0.0 or self.laps < 1:
            raise GenerationError("speed must be positive and laps at least 1")
        if min(self.capture_radius, self.heading_gain, self.max_yaw_rate, self.max_accel) <= 0.0:
            raise GenerationError("controller limits must be positive")


def default_footprint(model: BevCameraModel | None = None) -> tuple[float, float]:
    """(length, width) in meters of the BEV image on the ground."""
    m = model or BevCameraModel.standard()
    w, h = m.image_size
    mpp = 1.0 / m.pixels_per_meter
    return (h * mpp, w * mpp)


# ---------------------------------------------------------------------------
# Simulation


@dataclass
class SimDataset:
    """Sensor streams plus ground truth for one simulated drive."""

    world: GarageWorld
    frames: list[SemanticFrame]
    wheel: list[WheelSample]
    imu: list[ImuSample]
    gt_times: np.ndarray
    gt_poses: list[Pose2]
    gt_twists: np.ndarray
    vehicle: VehicleModel
    rates: SensorRates
    noise: SensorNoiseModel
    seed: int

    def gt_pose_at(self, t: float) -> Pose2:
        """Ground-truth pose at time ``t``, exact on the piecewise-constant twist."""
        idx = int(np.searchsorted(self.gt_times, t, side="right")) - 1
        idx = max(0, min(idx, len(self.gt_poses) - 1))
        pose = self.gt_poses[idx]
        dt = t - float(self.gt_times[idx])
        if dt <= 0.0 or idx >= len(self.gt_twists):
            return pose
        v, omega = self.gt_twists[idx]
        return pose.compose(exact_arc(float(v), float(omega), dt))


def _drive(world: GarageWorld, spec: TrajectorySpec, dt: float) -> tuple[list[Pose2], np.ndarray]:
    """Follow the route with a heading-seeking unicycle controller.

    Returns poses at step boundaries (N+1) and the piecewise-constant
    twists (N, 2) applied on each step.
    """
    waypoints = spec.waypoints
    for i, wp in enumerate(waypoints):
        if not world.contains(wp):
            raise GenerationError(
                f"waypoint {i} at ({wp[0]:.2f}, {wp[1]:.2f}) is outside the world extents {world.extents}"
            )
    ring = [waypoints[i] for i in range(len(waypoints))]
    targets = ring[1:] + list(ring) * (spec.laps - 1) + [ring[0]]

    start_heading = math.atan2(
        ring[1][1] - ring[0][1], ring[1][0] - ring[0][0]
    )
    pose = Pose2(ring[0][0], ring[0][1], start_heading)
    v = 0.0
    poses = [pose]
    twists: list[tuple[float, float]] = []

    route_length = spec.laps * sum(
        float(np.linalg.norm(b - a)) for a, b in zip(waypoints, np.roll(waypoints, -1, axis=0))
    )
    max_steps = int(4.0 * route_length / (spec.speed * dt)) + int(60.0 / dt)

    index = 0
    for _ in range(max_steps):
        target = targets[index]
        dx = target[0] - pose.x
        dy = target[1] - pose.y
        while math.hypot(dx, dy) < spec.capture_radius:
            index += 1
            if index == len(targets):
                return poses, np.array(twists)
            target = targets[index]
            dx = target[0] - pose.x
            dy = target[1] - pose.y
        heading_err = wrap_angle(math.atan2(dy, dx) - pose.yaw)
        omega = max(-spec.max_yaw_rate, min(spec.max_yaw_rate, spec.heading_gain * heading_err))
        v_desired = spec.speed * max(0.25, math.cos(heading_err))
        v = max(v - spec.max_accel * dt, min(v + spec.max_accel * dt, v_desired))
        twists.append((v, omega))
        pose = pose.compose(exact_arc(v, omega, dt))
        poses.append(pose)
        if not world.contains((pose.x, pose.y)):
            raise GenerationError(
                f"vehicle left the world at ({pose.x:.2f}, {pose.y:.2f}) after {len(twists) * dt:.1f} s"
            )
    raise GenerationError(
        f"route not completed within {max_steps * dt:.0f} s; check waypoints and speed"
    )


def simulate_run(
    world: GarageWorld,
    trajectory: TrajectorySpec | None = None,
    noise: SensorNoiseModel | None = None,
    rates: SensorRates | None = None,
    vehicle: VehicleModel | None = None,
    seed: int = 0,
    footprint: tuple[float, float] | None = None,
) -> SimDataset:
    """Drive the route and synthesize all sensor streams.

    ``footprint`` is the (length, width) of the ground patch the BEV
    camera sees, centered on the vehicle; it defaults to the standard
    BEV camera geometry.
    """
    spec = trajectory or TrajectorySpec(world.route)
    noise = noise or SensorNoiseModel()
    rates = rates or SensorRates()
    vehicle = vehicle or VehicleModel()
    length, width = footprint or default_footprint()
    half_l, half_w = length / 2.0, width / 2.0

    dt = 1.0 / rates.control_hz
    poses, twists = _drive(world, spec, dt)
    n_steps = len(twists)
    times = np.arange(len(poses)) * dt

    root = np.random.SeedSequence(seed)
    wheel_rng, imu_rng, frame_rng = [np.random.default_rng(s) for s in root.spawn(3)]

    # Per-run constant encoder scale error, one factor per wheel.
    scale = 1.0 + wheel_rng.normal(0.0, noise.wheel_scale_sigma, size=4)

    def twist_at(idx: int) -> tuple[float, float]:
        k = min(idx, n_steps - 1)
        return float(twists[k, 0]), float(twists[k, 1])

    wheel_samples: list[WheelSample] = []
    stride = rates.stride(rates.wheel_hz)
    for idx in range(0, n_steps + 1, stride):
        v, omega = twist_at(idx)
        half_track = vehicle.track_width / 2.0
        left = (v - omega * half_track) / vehicle.wheel_radius
        right = (v + omega * half_track) / vehicle.wheel_radius
        true_rates = np.array([left, right, left, right])
        measured = true_rates * scale + wheel_rng.normal(0.0, noise.wheel_rate_sigma, size=4)
        wheel_samples.append(
            WheelSample(float(times[idx]), measured, vehicle.wheel_radius, vehicle.track_width)
        )

    imu_samples: list[ImuSample] = []
    stride = rates.stride(rates.imu_hz)
    bias = 0.0
    imu_dt = stride * dt
    for idx in range(0, n_steps + 1, stride):
        v, omega = twist_at(idx)
        v_next = twist_at(min(idx + stride, n_steps))[0]
        accel_true = np.array([(v_next - v) / imu_dt, v * omega])
        yaw_rate = omega + bias + imu_rng.normal(0.0, noise.imu_yaw_sigma)
        accel = accel_true + imu_rng.normal(0.0, noise.imu_accel_sigma, size=2)
        imu_samples.append(ImuSample(float(times[idx]), float(yaw_rate), accel))
        bias += imu_rng.normal(0.0, noise.imu_bias_walk) * math.sqrt(imu_dt)

    frames: list[SemanticFrame] = []
    stride = rates.stride(rates.bev_hz)
    world_xy = world.xy
    world_labels = world.labels
    for frame_id, idx in enumerate(range(0, n_steps + 1, stride)):
        pose = poses[idx]
        rel = world_xy - pose.xy
        local = rel @ rot2(pose.yaw)  # equals R(-yaw) @ rel per point
        visible = (np.abs(local[:, 0]) <= half_l) & (np.abs(local[:, 1]) <= half_w)
        pts = local[visible]
        labs = world_labels[visible]
        if noise.point_dropout > 0.0 and len(pts):
            keep = frame_rng.random(len(pts)) >= noise.point_dropout
            pts = pts[keep]
            labs = labs[keep]
        if noise.point_jitter_sigma > 0.0 and len(pts):
            pts = pts + frame_rng.normal(0.0, noise.point_jitter_sigma, size=pts.shape)
        frames.append(SemanticFrame(float(times[idx]), pts, labs, source_id=frame_id))

    return SimDataset(
        world=world,
        frames=frames,
        wheel=wheel_samples,
        imu=imu_samples,
        gt_times=times,
        gt_poses=poses,
        gt_twists=twists,
        vehicle=vehicle,
        rates=rates,
        noise=noise,
        seed=seed,
    )
