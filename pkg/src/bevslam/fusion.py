"""Wheel/IMU odometry fusion.

A five-state EKF (x, y, yaw, v, omega) propagates the vehicle along
constant-turn-rate arcs and corrects speed and yaw rate from wheel
encoders and the IMU gyro. The filter never sees camera poses: its job
is to hand the visual front end a smooth, high-rate motion prior.
Relative odometry between keyframe timestamps is pre-integrated from
the raw streams with a first-order covariance so the pose graph can use
it as an independent kinematic constraint.

Sensor trust is split by the complementary weights (w1 for the IMU,
w2 for the wheels): a measurement with weight w is applied with its
noise inflated to R / w, so w -> 0 disables the correction and w -> 1
applies it at full confidence.
"""

from __future__ import annotations

import bisect
import math
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import Pose2, rot2, wrap_angle


class StreamError(Exception):
    """A sensor stream violates ordering or consistency requirements."""


class NumericalError(Exception):
    """A filter step became numerically unsafe (near-singular innovation)."""

    def __init__(self, message: str, condition: float = math.inf) -> None:
        super().__init__(message)
        self.condition = condition


# ---------------------------------------------------------------------------
# Samples and kinematics


WHEEL_ORDER = ("front_left", "front_right", "rear_left", "rear_right")


@dataclass(frozen=True)
class WheelSample:
    """Rotation rates (rad/s) of all four wheels at one timestamp.

    The encoder geometry rides along with each sample so a stream is
    self-describing.
    """

    timestamp: float
    rates: np.ndarray
    wheel_radius: float
    track_width: float

    def __post_init__(self) -> None:
        rates = np.asarray(self.rates, dtype=float).reshape(4)
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)
        if self.wheel_radius <= 0.0 or self.track_width <= 0.0:
            raise ValueError("wheel radius and track width must be positive")


@dataclass(frozen=True)
class ImuSample:
    """Yaw rate (rad/s) and planar body acceleration (m/s^2) at one timestamp."""

    timestamp: float
    yaw_rate: float
    accel: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self) -> None:
        accel = np.asarray(self.accel, dtype=float).reshape(2)
        accel.setflags(write=False)
        object.__setattr__(self, "accel", accel)


def wheel_rates_to_twist(sample: WheelSample) -> tuple[float, float]:
    """Body twist (v, omega) from the rear axle under differential-drive kinematics.

    The rear wheels are undriven by steering, so their rates give the
    cleanest speed and yaw-rate estimate; the front pair is carried for
    diagnostics only.
    """
    r = sample.wheel_radius
    rl, rr = sample.rates[2], sample.rates[3]
    v = r * (rl + rr) / 2.0
    omega = r * (rr - rl) / sample.track_width
    return v, omega


def _sinc(h: float) -> float:
    """sin(h) / h, continued analytically through h = 0."""
    if abs(h) < 1e-4:
        h2 = h * h
        return 1.0 - h2 / 6.0 + h2 * h2 / 120.0
    return math.sin(h) / h


def _dsinc(h: float) -> float:
    """Derivative of sin(h) / h, stable near h = 0."""
    if abs(h) < 1e-3:
        h2 = h * h
        return h * (-1.0 / 3.0 + h2 / 30.0 - h2 * h2 / 840.0)
    return (math.cos(h) - math.sin(h) / h) / h


def exact_arc(v: float, omega: float, dt: float) -> Pose2:
    """Local displacement of a constant-twist segment (circular arc).

    Written with the half-angle identity
    ``sin(a) - sin(0) = 2 cos(a/2) sin(a/2)`` so the straight-line limit
    needs no branch and there is no cancellation at small turn rates.
    """
    if dt < 0.0:
        raise ValueError("segment duration must be non-negative")
    half = 0.5 * omega * dt
    chord = v * dt * _sinc(half)
    return Pose2(chord * math.cos(half), chord * math.sin(half), omega * dt)


def wheel_odometry_step(prev: WheelSample, nxt: WheelSample) -> Pose2:
    """SE(2) increment between two wheel samples, holding the earlier twist."""
    dt = nxt.timestamp - prev.timestamp
    if dt <= 0.0:
        raise StreamError(
            f"wheel samples out of order: {prev.timestamp!r} followed by {nxt.timestamp!r}"
        )
    v, omega = wheel_rates_to_twist(prev)
    return exact_arc(v, omega, dt)


# ---------------------------------------------------------------------------
# EKF


@dataclass(frozen=True)
class FusionWeights:
    """Complementary sensor trust; w1 weighs the IMU, w2 the wheels."""

    w1: float = 0.7
    w2: float = 0.3

    def __post_init__(self) -> None:
        if not (0.0 <= self.w1 <= 1.0 and 0.0 <= self.w2 <= 1.0):
            raise ValueError("fusion weights must lie in [0, 1]")
        if abs(self.w1 + self.w2 - 1.0) > 1e-9:
            raise ValueError(f"fusion weights must sum to 1, got {self.w1} + {self.w2}")


@dataclass(frozen=True)
class EkfState:
    """Filter estimate: planar pose, body speed, yaw rate, and 5x5 covariance."""

    pose: Pose2
    v: float
    omega: float
    covariance: np.ndarray

    def __post_init__(self) -> None:
        p = np.array(self.covariance, dtype=float).reshape(5, 5)
        if not np.allclose(p, p.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        p.setflags(write=False)
        object.__setattr__(self, "covariance", p)

    def state_vector(self) -> np.ndarray:
        return np.array([self.pose.x, self.pose.y, self.pose.yaw, self.v, self.omega])

    @staticmethod
    def from_vector(x: np.ndarray, covariance: np.ndarray) -> "EkfState":
        return EkfState(Pose2(x[0], x[1], x[2]), float(x[3]), float(x[4]), covariance)


def ctrv_propagate(x: np.ndarray, dt: float) -> np.ndarray:
    """Advance (x, y, yaw, v, omega) along a constant-turn-rate arc.

    Same half-angle form as :func:`exact_arc`, so replaying a simulated
    piecewise-constant twist reproduces the generating trajectory
    bit-for-bit.
    """
    px, py, yaw, v, omega = x
    half = 0.5 * omega * dt
    chord = v * dt * _sinc(half)
    mid = yaw + half
    return np.array(
        [
            px + chord * math.cos(mid),
            py + chord * math.sin(mid),
            wrap_angle(yaw + omega * dt),
            v,
            omega,
        ]
    )


def ctrv_jacobian(x: np.ndarray, dt: float) -> np.ndarray:
    """Analytic Jacobian of :func:`ctrv_propagate` with respect to the state.

    The half-angle/sinc form is smooth in omega, so no branch between a
    turning and a straight-line regime is needed and the entries stay
    accurate arbitrarily close to omega = 0.
    """
    _, _, yaw, v, omega = x
    half = 0.5 * omega * dt
    mid = yaw + half
    cm, sm = math.cos(mid), math.sin(mid)
    snc = _sinc(half)
    dsn = _dsinc(half)
    f = np.eye(5)
    f[0, 2] = -v * dt * sm * snc
    f[0, 3] = dt * cm * snc
    f[0, 4] = 0.5 * v * dt * dt * (cm * dsn - sm * snc)
    f[1, 2] = v * dt * cm * snc
    f[1, 3] = dt * sm * snc
    f[1, 4] = 0.5 * v * dt * dt * (sm * dsn + cm * snc)
    f[2, 4] = dt
    return f


def ekf_predict(state: EkfState, dt: float, process_noise: np.ndarray) -> EkfState:
    """Propagate mean and covariance over ``dt`` seconds."""
    if dt < 0.0:
        raise ValueError("prediction interval must be non-negative")
    q = np.asarray(process_noise, dtype=float).reshape(5, 5)
    x = ctrv_propagate(state.state_vector(), dt)
    f = ctrv_jacobian(state.state_vector(), dt)
    p = f @ state.covariance @ f.T + q
    return EkfState.from_vector(x, 0.5 * (p + p.T))


def ekf_update(
    state: EkfState,
    z: np.ndarray,
    h_matrix: np.ndarray,
    noise: np.ndarray,
    weight: float = 1.0,
    angular_rows: Sequence[int] = (),
) -> EkfState:
    """Apply one linear measurement with trust ``weight``.

    The measurement noise is inflated to ``noise / weight``; a weight
    below 1e-12 skips the update entirely. The covariance is updated in
    Joseph form, which keeps it symmetric positive semidefinite even
    with a strongly down-weighted measurement.
    """
    if weight < 0.0:
        raise ValueError("measurement weight must be non-negative")
    if weight < 1e-12:
        return state
    z = np.asarray(z, dtype=float).reshape(-1)
    h = np.asarray(h_matrix, dtype=float).reshape(len(z), 5)
    r_eff = np.asarray(noise, dtype=float).reshape(len(z), len(z)) / weight
    x = state.state_vector()
    p = state.covariance
    innovation = z - h @ x
    for i in angular_rows:
        innovation[i] = wrap_angle(innovation[i])
    s = h @ p @ h.T + r_eff
    condition = float(np.linalg.cond(s))
    if not math.isfinite(condition) or condition > 1e12:
        raise NumericalError(
            f"innovation covariance is near-singular (condition {condition:.3e})", condition
        )
    gain = np.linalg.solve(s, h @ p).T
    x_new = x + gain @ innovation
    x_new[2] = wrap_angle(x_new[2])
    ikh = np.eye(5) - gain @ h
    p_new = ikh @ p @ ikh.T + gain @ r_eff @ gain.T
    return EkfState.from_vector(x_new, 0.5 * (p_new + p_new.T))


# ---------------------------------------------------------------------------
# Configuration and initialization


@dataclass(frozen=True)
class FusionConfig:
    """Sensor selection, trust weights, and noise levels for the filter.

    Process noise entries are continuous densities; the prediction adds
    ``diag(process_noise) * dt``. The odometry_* densities feed the
    pre-integrated covariance (longitudinal, lateral, yaw).
    """

    use_wheel: bool = True
    use_imu: bool = True
    weights: FusionWeights = field(default_factory=FusionWeights)
    wheel_speed_sigma: float = 0.05
    wheel_yaw_rate_sigma: float = 0.05
    imu_yaw_rate_sigma: float = 0.01
    process_noise: tuple[float, float, float, float, float] = (1e-6, 1e-6, 1e-6, 0.25, 0.25)
    initial_sigma: tuple[float, float, float, float, float] = (1e-4, 1e-4, 1e-4, 0.1, 0.1)
    odometry_speed_noise: float = 0.03
    odometry_lateral_noise: float = 0.01
    odometry_yaw_noise: float = 0.02

    def __post_init__(self) -> None:
        if not (self.use_wheel or self.use_imu):
            raise ValueError("at least one odometry sensor must be enabled")
        for name in (
            "wheel_speed_sigma",
            "wheel_yaw_rate_sigma",
            "imu_yaw_rate_sigma",
            "odometry_speed_noise",
            "odometry_lateral_noise",
            "odometry_yaw_noise",
        ):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    def effective_weights(self) -> tuple[float, float]:
        """(w1, w2) after accounting for disabled sensors."""
        w1 = self.weights.w1 if self.use_imu else 0.0
        w2 = self.weights.w2 if self.use_wheel else 0.0
        total = w1 + w2
        return (w1 / total, w2 / total)

    def process_matrix(self, dt: float) -> np.ndarray:
        return np.diag(self.process_noise) * dt

    def initial_covariance(self) -> np.ndarray:
        return np.diag(np.square(self.initial_sigma))


@dataclass(frozen=True)
class InitResult:
    """Outcome of filter initialization: the anchor frame and starting state."""

    frame_index: int
    t0: float
    state: EkfState
    dropped_frames: int


def _interp(t: float, times: Sequence[float], values: Sequence[float]) -> float:
    return float(np.interp(t, times, values))


def initialize(
    frame_times: Sequence[float],
    wheel: Sequence[WheelSample],
    imu: Sequence[ImuSample],
    config: FusionConfig,
) -> InitResult | None:
    """Pick the first frame time bracketed by every enabled sensor stream.

    Earlier frames are dropped; the filter state starts at the identity
    pose with speed and yaw rate interpolated at the chosen time.
    Returns None when no frame time qualifies.
    """
    wheel_times = [s.timestamp for s in wheel]
    imu_times = [s.timestamp for s in imu]
    w1, w2 = config.effective_weights()
    for index, t0 in enumerate(frame_times):
        if config.use_wheel and not (wheel_times and wheel_times[0] <= t0 <= wheel_times[-1]):
            continue
        if config.use_imu and not (imu_times and imu_times[0] <= t0 <= imu_times[-1]):
            continue
        v = 0.0
        omega_wheel = 0.0
        omega_imu = 0.0
        if config.use_wheel:
            twists = [wheel_rates_to_twist(s) for s in wheel]
            v = _interp(t0, wheel_times, [tw[0] for tw in twists])
            omega_wheel = _interp(t0, wheel_times, [tw[1] for tw in twists])
        if config.use_imu:
            omega_imu = _interp(t0, imu_times, [s.yaw_rate for s in imu])
        omega = w1 * omega_imu + w2 * omega_wheel
        state = EkfState(Pose2.identity(), v, omega, config.initial_covariance())
        return InitResult(index, t0, state, index)
    return None


# ---------------------------------------------------------------------------
# Online filter


_WHEEL_H = np.array([[0.0, 0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 0.0, 1.0]])
_IMU_H = np.array([[0.0, 0.0, 0.0, 0.0, 1.0]])


class ViwFusion:
    """Event-ordered EKF over interleaved wheel and IMU streams.

    Samples may arrive from separate producer threads; processing is
    serialized under a lock and strictly ordered by timestamp, with ties
    broken wheel-first so replays are reproducible.
    """

    def __init__(self, config: FusionConfig, initial_state: EkfState, t0: float) -> None:
        self.config = config
        self.state = initial_state
        self.time = float(t0)
        self._lock = threading.Lock()
        self._pending: list[tuple[float, int, int, object]] = []
        self._seq = 0
        w1, w2 = config.effective_weights()
        self._w1, self._w2 = w1, w2
        self._wheel_r = np.diag(
            [config.wheel_speed_sigma**2, config.wheel_yaw_rate_sigma**2]
        )
        self._imu_r = np.array([[config.imu_yaw_rate_sigma**2]])

    def ingest_wheel(self, sample: WheelSample) -> None:
        if not self.config.use_wheel:
            return
        with self._lock:
            self._pending.append((sample.timestamp, 0, self._seq, sample))
            self._seq += 1

    def ingest_imu(self, sample: ImuSample) -> None:
        if not self.config.use_imu:
            return
        with self._lock:
            self._pending.append((sample.timestamp, 1, self._seq, sample))
            self._seq += 1

    def _predict_to(self, t: float) -> None:
        dt = t - self.time
        if dt < -1e-9:
            raise StreamError(f"cannot step the filter backwards ({self.time!r} -> {t!r})")
        if dt > 0.0:
            self.state = ekf_predict(self.state, dt, self.config.process_matrix(dt))
        self.time = t

    def advance_to(self, t: float) -> EkfState:
        """Process every pending sample up to time ``t``, then coast to ``t``."""
        with self._lock:
            self._pending.sort(key=lambda item: item[:3])
            remaining = []
            for entry in self._pending:
                ts, kind, _, sample = entry
                if ts > t:
                    remaining.append(entry)
                    continue
                self._predict_to(ts)
                if kind == 0:
                    v, omega = wheel_rates_to_twist(sample)
                    self.state = ekf_update(
                        self.state, np.array([v, omega]), _WHEEL_H, self._wheel_r, self._w2
                    )
                else:
                    self.state = ekf_update(
                        self.state, np.array([sample.yaw_rate]), _IMU_H, self._imu_r, self._w1
                    )
            self._pending = remaining
            self._predict_to(t)
            return self.state

    def predict_pose_at(self, t: float) -> tuple[Pose2, np.ndarray]:
        """Extrapolated pose and its 3x3 covariance at ``t`` >= the filter time.

        Pure lookahead: the committed state is untouched, so callers on
        other threads can query freely between updates.
        """
        with self._lock:
            dt = t - self.time
            if dt < -1e-9:
                raise StreamError(f"lookahead time {t!r} precedes filter time {self.time!r}")
            if dt <= 0.0:
                return self.state.pose, self.state.covariance[:3, :3].copy()
            x = ctrv_propagate(self.state.state_vector(), dt)
            f = ctrv_jacobian(self.state.state_vector(), dt)
            p = f @ self.state.covariance @ f.T + self.config.process_matrix(dt)
            return Pose2(x[0], x[1], x[2]), p[:3, :3]


# ---------------------------------------------------------------------------
# Pre-integrated relative odometry


@dataclass(frozen=True)
class PreintegratedOdometry:
    """Relative SE(2) motion over a time interval with first-order covariance."""

    delta: Pose2
    covariance: np.ndarray
    duration: float

    def __post_init__(self) -> None:
        cov = np.array(self.covariance, dtype=float).reshape(3, 3)
        cov.setflags(write=False)
        object.__setattr__(self, "covariance", cov)


def _check_sorted(times: Sequence[float], name: str) -> None:
    for a, b in zip(times, times[1:]):
        if b < a:
            raise StreamError(f"{name} stream timestamps are not sorted ({a!r} then {b!r})")


def preintegrate(
    wheel: Sequence[WheelSample],
    imu: Sequence[ImuSample],
    t_start: float,
    t_end: float,
    config: FusionConfig,
) -> PreintegratedOdometry:
    """Integrate the odometry streams over (t_start, t_end].

    Twist is held constant between samples (zero-order hold), so splitting
    an interval at any interior time and composing the two halves
    reproduces the full integral exactly. Speed comes from the wheels;
    yaw rate is the weighted blend of gyro and wheel differential.
    """
    if t_end < t_start:
        raise ValueError("interval end precedes start")
    wheel_times = [s.timestamp for s in wheel]
    imu_times = [s.timestamp for s in imu]
    _check_sorted(wheel_times, "wheel")
    _check_sorted(imu_times, "imu")
    w1, w2 = config.effective_weights()

    cuts = {t_start, t_end}
    for ts in wheel_times:
        if t_start < ts < t_end:
            cuts.add(ts)
    for ts in imu_times:
        if t_start < ts < t_end:
            cuts.add(ts)
    boundaries = sorted(cuts)

    delta = Pose2.identity()
    cov = np.zeros((3, 3))
    densities = np.array(
        [
            config.odometry_speed_noise**2,
            config.odometry_lateral_noise**2,
            config.odometry_yaw_noise**2,
        ]
    )
    for a, b in zip(boundaries, boundaries[1:]):
        dt = b - a
        v = 0.0
        omega_wheel = 0.0
        omega_imu = 0.0
        if config.use_wheel:
            i = bisect.bisect_right(wheel_times, a) - 1
            if i >= 0:
                v, omega_wheel = wheel_rates_to_twist(wheel[i])
        if config.use_imu:
            j = bisect.bisect_right(imu_times, a) - 1
            if j >= 0:
                omega_imu = imu[j].yaw_rate
        omega = w1 * omega_imu + w2 * omega_wheel
        step = exact_arc(v, omega, dt)
        c, s = math.cos(delta.yaw), math.sin(delta.yaw)
        a_mat = np.array(
            [
                [1.0, 0.0, -s * step.x - c * step.y],
                [0.0, 1.0, c * step.x - s * step.y],
                [0.0, 0.0, 1.0],
            ]
        )
        b_mat = np.eye(3)
        b_mat[:2, :2] = rot2(delta.yaw)
        seg_cov = np.diag(densities * dt)
        cov = a_mat @ cov @ a_mat.T + b_mat @ seg_cov @ b_mat.T
        delta = delta.compose(step)
    return PreintegratedOdometry(delta, 0.5 * (cov + cov.T), t_end - t_start)
