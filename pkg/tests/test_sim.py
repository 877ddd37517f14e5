"""World templates, the simulated drive, and its sensor streams."""

import math

import numpy as np
import pytest

from bevslam.fusion import exact_arc, wheel_rates_to_twist
from bevslam.geometry import Pose2
from bevslam.sim import (
    GenerationError,
    SensorNoiseModel,
    SensorRates,
    TrajectorySpec,
    VehicleModel,
    default_footprint,
    ground_truth_distances,
    make_world,
    simulate_run,
)


# -- worlds ------------------------------------------------------------------


@pytest.mark.parametrize("name", ["grid-garage", "loop-corridor", "figure-eight"])
def test_templates_build_consistent_worlds(name):
    world = make_world(name)
    assert world.name == name
    assert len(world.xy) == len(world.labels)
    assert len(world.xy) > 1000
    x0, y0, x1, y1 = world.extents
    assert np.all(world.xy[:, 0] >= x0 - 1e-9) and np.all(world.xy[:, 0] <= x1 + 1e-9)
    assert np.all(world.xy[:, 1] >= y0 - 1e-9) and np.all(world.xy[:, 1] <= y1 + 1e-9)
    assert len(world.landmarks) >= 4
    assert len(world.route) >= 2
    for wp in world.route:
        assert world.contains(wp)
    assert not world.xy.flags.writeable


def test_unknown_template_is_rejected_with_the_known_list():
    with pytest.raises(GenerationError, match="loop-corridor"):
        make_world("spiral-tower")


def test_undersized_floor_is_rejected():
    with pytest.raises(GenerationError):
        make_world("grid-garage", width=10.0, height=10.0)


def test_ground_truth_distances_cover_all_pairs():
    world = make_world("grid-garage")
    dists = ground_truth_distances(world)
    n = len(world.landmarks)
    assert len(dists) == n * (n - 1) // 2
    for (a, b), d in dists.items():
        assert d == pytest.approx(float(np.linalg.norm(world.landmarks[a] - world.landmarks[b])))
    with pytest.raises(KeyError, match="nowhere"):
        ground_truth_distances(world, ["nowhere"])


def test_ground_truth_distances_respect_name_order():
    world = make_world("grid-garage")
    sub = ground_truth_distances(world, ["center", "entry"])
    assert list(sub) == [("center", "entry")]


# -- configuration validation ---------------------------------------------------


def test_rates_must_divide_the_control_rate():
    with pytest.raises(ValueError):
        SensorRates(bev_hz=30.0, control_hz=100.0)
    assert SensorRates(bev_hz=10.0, control_hz=100.0).stride(10.0) == 10


def test_noise_and_vehicle_validation():
    with pytest.raises(ValueError):
        SensorNoiseModel(wheel_rate_sigma=-0.1)
    with pytest.raises(ValueError):
        SensorNoiseModel(point_dropout=1.0)
    with pytest.raises(ValueError):
        VehicleModel(wheel_radius=0.0)
    z = SensorNoiseModel.zero()
    assert z.point_jitter_sigma == 0.0 and z.wheel_scale_sigma == 0.0


def test_trajectory_spec_validation():
    with pytest.raises(GenerationError):
        TrajectorySpec(np.array([[0.0, 0.0]]))
    with pytest.raises(GenerationError):
        TrajectorySpec(np.array([[0.0, 0.0], [1.0, 0.0]]), speed=0.0)
    with pytest.raises(GenerationError):
        TrajectorySpec(np.array([[0.0, 0.0], [1.0, 0.0]]), laps=0)


def test_waypoints_outside_the_world_are_rejected():
    world = make_world("grid-garage")
    spec = TrajectorySpec(np.array([[4.0, 10.0], [400.0, 10.0]]))
    with pytest.raises(GenerationError, match="outside"):
        simulate_run(world, spec)


# -- the simulated drive -----------------------------------------------------------


@pytest.fixture(scope="module")
def quiet_run():
    world = make_world("grid-garage")
    return world, simulate_run(world, noise=SensorNoiseModel.zero(), seed=0)


def test_streams_are_aligned_and_complete(quiet_run):
    world, ds = quiet_run
    assert len(ds.gt_poses) == len(ds.gt_times) == len(ds.gt_twists) + 1
    dt = np.diff(ds.gt_times)
    assert np.allclose(dt, 1.0 / ds.rates.control_hz)
    assert ds.frames[0].timestamp == ds.gt_times[0]
    assert len(ds.frames) == math.ceil(len(ds.gt_times) / ds.rates.stride(ds.rates.bev_hz))
    assert len(ds.wheel) == math.ceil(len(ds.gt_times) / ds.rates.stride(ds.rates.wheel_hz))
    assert len(ds.imu) == len(ds.wheel)


def test_route_is_followed_and_stays_in_bounds(quiet_run):
    world, ds = quiet_run
    xy = np.array([[p.x, p.y] for p in ds.gt_poses])
    x0, y0, x1, y1 = world.extents
    assert xy[:, 0].min() >= x0 and xy[:, 0].max() <= x1
    assert xy[:, 1].min() >= y0 and xy[:, 1].max() <= y1
    for wp in world.route:
        closest = np.min(np.hypot(xy[:, 0] - wp[0], xy[:, 1] - wp[1]))
        assert closest < 2.0  # within the capture radius of every waypoint


def test_gt_pose_at_interpolates_exactly(quiet_run):
    _, ds = quiet_run
    k = len(ds.gt_twists) // 3
    t0 = float(ds.gt_times[k])
    frac_dt = 0.37 / ds.rates.control_hz
    v, omega = ds.gt_twists[k]
    want = ds.gt_poses[k].compose(exact_arc(float(v), float(omega), frac_dt))
    got = ds.gt_pose_at(t0 + frac_dt)
    assert math.hypot(got.x - want.x, got.y - want.y) < 1e-12
    assert ds.gt_pose_at(-5.0) == ds.gt_poses[0]
    end = ds.gt_pose_at(float(ds.gt_times[-1]) + 100.0)
    assert math.hypot(end.x - ds.gt_poses[-1].x, end.y - ds.gt_poses[-1].y) < 1e-12


def test_noise_free_wheel_odometry_reproduces_the_twists(quiet_run):
    _, ds = quiet_run
    for k in (0, 10, 100):
        sample = ds.wheel[k]
        v, omega = wheel_rates_to_twist(sample)
        idx = int(round(sample.timestamp * ds.rates.control_hz))
        tv, tw = ds.gt_twists[min(idx, len(ds.gt_twists) - 1)]
        assert v == pytest.approx(tv, abs=1e-12)
        assert omega == pytest.approx(tw, abs=1e-12)


def test_noise_free_imu_reports_the_true_yaw_rate(quiet_run):
    _, ds = quiet_run
    for k in (0, 5, 50):
        sample = ds.imu[k]
        idx = int(round(sample.timestamp * ds.rates.control_hz))
        assert sample.yaw_rate == pytest.approx(ds.gt_twists[min(idx, len(ds.gt_twists) - 1)][1])


def test_noise_free_frames_match_the_world_exactly(quiet_run):
    world, ds = quiet_run
    frame = ds.frames[len(ds.frames) // 2]
    pose = ds.gt_pose_at(frame.timestamp)
    back = pose.transform_point(frame.xy)
    # Every observed point must coincide with some world point of the
    # same label.
    for label in np.unique(frame.labels):
        world_pts = world.xy[world.labels == label]
        pts = back[frame.labels == label]
        for p in pts[:: max(1, len(pts) // 20)]:
            assert np.min(np.hypot(world_pts[:, 0] - p[0], world_pts[:, 1] - p[1])) < 1e-9


def test_frames_respect_the_footprint(quiet_run):
    _, ds = quiet_run
    length, width = default_footprint()
    for frame in ds.frames[:: len(ds.frames) // 10]:
        if len(frame) == 0:
            continue
        assert np.max(np.abs(frame.xy[:, 0])) <= length / 2 + 1e-9
        assert np.max(np.abs(frame.xy[:, 1])) <= width / 2 + 1e-9


def test_same_seed_reproduces_the_dataset_exactly():
    world = make_world("loop-corridor")
    a = simulate_run(world, seed=7)
    b = simulate_run(world, seed=7)
    assert np.array_equal(a.frames[5].xy, b.frames[5].xy)
    assert np.array_equal(a.wheel[17].rates, b.wheel[17].rates)
    assert a.imu[23].yaw_rate == b.imu[23].yaw_rate


def test_different_seeds_differ():
    world = make_world("loop-corridor")
    a = simulate_run(world, seed=1)
    b = simulate_run(world, seed=2)
    assert not np.array_equal(a.frames[5].xy, b.frames[5].xy)
    assert not np.array_equal(a.wheel[17].rates, b.wheel[17].rates)


def test_noise_perturbs_points_and_dropout_thins_them():
    world = make_world("grid-garage")
    clean = simulate_run(world, noise=SensorNoiseModel.zero(), seed=3)
    noisy = simulate_run(world, noise=SensorNoiseModel(point_jitter_sigma=0.05), seed=3)
    assert len(clean.frames[10]) == len(noisy.frames[10])
    delta = np.abs(noisy.frames[10].xy - clean.frames[10].xy)
    assert 0.0 < delta.max() < 0.5
    thinned = simulate_run(world, noise=SensorNoiseModel(point_dropout=0.5), seed=3)
    total_clean = sum(len(f) for f in clean.frames)
    total_thin = sum(len(f) for f in thinned.frames)
    assert total_thin < 0.6 * total_clean


def test_laps_multiply_the_route_length():
    world = make_world("loop-corridor")
    one = simulate_run(world, TrajectorySpec(world.route, laps=1), noise=SensorNoiseModel.zero())
    two = simulate_run(world, TrajectorySpec(world.route, laps=2), noise=SensorNoiseModel.zero())
    assert len(two.gt_times) > 1.7 * len(one.gt_times)
