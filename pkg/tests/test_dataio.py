"""File-format round trips and malformed-input diagnostics."""

import numpy as np
import pytest

from bevslam.camera import BevCameraModel, FisheyeModel, Homography
from bevslam.config import RunConfig
from bevslam.dataio import (
    DataFormatError,
    convert_external_recording,
    export_keyframes,
    load_calibration,
    load_dataset,
    load_frames,
    load_imu,
    load_landmarks,
    load_map_cloud,
    load_trajectory,
    load_wheel,
    read_json,
    save_calibration,
    write_dataset,
    write_frames,
    write_imu,
    write_json,
    write_landmarks,
    write_map_cloud,
    write_pose_graph,
    write_trajectory,
    write_wheel,
)
from bevslam.fusion import ImuSample, WheelSample
from bevslam.geometry import Pose2
from bevslam.mapping import Keyframe
from bevslam.pipeline import simulate_dataset
from bevslam.posegraph import EdgeKind, NodeKind, PoseGraph
from bevslam.semantic import SemanticFrame, SemanticLabel, census_of_labels
from bevslam.sim import SensorNoiseModel


def awkward_floats(rng, n):
    """Values with long decimal expansions, to exercise repr round-tripping."""
    return rng.standard_normal(n) * np.pi


def test_frames_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    frames = [
        SemanticFrame(
            timestamp=0.1 * k + 1 / 3,
            xy=awkward_floats(rng, 10).reshape(5, 2),
            labels=rng.integers(1, 5, size=5),
            source_id=k,
        )
        for k in range(3)
    ]
    frames.append(SemanticFrame(0.9, np.zeros((0, 2)), [], source_id=3))
    path = tmp_path / "frames.txt"
    write_frames(frames, path)
    loaded = load_frames(path)
    assert len(loaded) == len(frames)
    for a, b in zip(frames, loaded):
        assert b.timestamp == a.timestamp
        assert b.source_id == a.source_id
        assert np.array_equal(b.xy, a.xy)
        assert np.array_equal(b.labels, a.labels)


def test_frames_reject_point_count_mismatch(tmp_path):
    path = tmp_path / "frames.txt"
    path.write_text("frame 0 0.0 2\n1.0 2.0 1\n")
    with pytest.raises(DataFormatError, match="declares 2 points but has 1"):
        load_frames(path)


def test_frames_reject_point_before_header(tmp_path):
    path = tmp_path / "frames.txt"
    path.write_text("1.0 2.0 1\n")
    with pytest.raises(DataFormatError, match="before any frame header"):
        load_frames(path)


def test_frames_reject_malformed_header(tmp_path):
    path = tmp_path / "frames.txt"
    path.write_text("frame 0 0.0\n")
    with pytest.raises(DataFormatError, match="malformed frame header"):
        load_frames(path)


def test_wheel_round_trip_keeps_geometry(tmp_path):
    rng = np.random.default_rng(3)
    samples = [
        WheelSample(0.01 * k, awkward_floats(rng, 4), wheel_radius=0.31, track_width=1.58)
        for k in range(5)
    ]
    path = tmp_path / "wheel.txt"
    write_wheel(samples, path)
    loaded = load_wheel(path)
    assert len(loaded) == 5
    for a, b in zip(samples, loaded):
        assert b.timestamp == a.timestamp
        assert np.array_equal(b.rates, a.rates)
        assert b.wheel_radius == 0.31
        assert b.track_width == 1.58


def test_wheel_requires_geometry_header(tmp_path):
    path = tmp_path / "wheel.txt"
    path.write_text("0.0 1.0 1.0 1.0 1.0\n")
    with pytest.raises(DataFormatError, match="wheel_radius/track_width"):
        load_wheel(path)


def test_wheel_rejects_wrong_field_count(tmp_path):
    path = tmp_path / "wheel.txt"
    path.write_text("# wheel_radius 0.3\n# track_width 1.6\n0.0 1.0 1.0\n")
    with pytest.raises(DataFormatError, match="expected 5 fields, got 3"):
        load_wheel(path)


def test_imu_round_trip(tmp_path):
    rng = np.random.default_rng(11)
    samples = [ImuSample(0.01 * k, float(awkward_floats(rng, 1)[0]), awkward_floats(rng, 2)) for k in range(4)]
    path = tmp_path / "imu.txt"
    write_imu(samples, path)
    loaded = load_imu(path)
    for a, b in zip(samples, loaded):
        assert b.timestamp == a.timestamp
        assert b.yaw_rate == a.yaw_rate
        assert np.array_equal(b.accel, a.accel)


def test_imu_rejects_non_numeric_text(tmp_path):
    path = tmp_path / "imu.txt"
    path.write_text("0.0 oops 0.0 0.0\n")
    with pytest.raises(DataFormatError, match="imu.txt:1"):
        load_imu(path)


def test_trajectory_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    times = np.cumsum(np.abs(awkward_floats(rng, 6)))
    poses = [Pose2(*awkward_floats(rng, 3)) for _ in range(6)]
    path = tmp_path / "traj.txt"
    write_trajectory(times, poses, path)
    t2, p2 = load_trajectory(path)
    assert np.array_equal(t2, times)
    for a, b in zip(poses, p2):
        assert (b.x, b.y, b.yaw) == (a.x, a.y, a.yaw)


def test_trajectory_rejects_length_mismatch(tmp_path):
    with pytest.raises(ValueError, match="equal length"):
        write_trajectory([0.0, 1.0], [Pose2.identity()], tmp_path / "traj.txt")


def test_landmarks_round_trip_sorted(tmp_path):
    marks = {"pillar": np.array([3.0, 4.5]), "entry": np.array([0.25, -1.75])}
    path = tmp_path / "landmarks.txt"
    write_landmarks(marks, path)
    text = path.read_text()
    assert text.index("entry") < text.index("pillar")
    loaded = load_landmarks(path)
    assert set(loaded) == {"pillar", "entry"}
    assert np.array_equal(loaded["pillar"], marks["pillar"])


def test_landmarks_reject_extra_fields(tmp_path):
    path = tmp_path / "landmarks.txt"
    path.write_text("pillar 1.0 2.0 3.0\n")
    with pytest.raises(DataFormatError, match="name x y"):
        load_landmarks(path)


def test_map_cloud_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    xy = awkward_floats(rng, 14).reshape(7, 2)
    labels = rng.integers(1, 5, size=7)
    path = tmp_path / "cloud.txt"
    write_map_cloud(xy, labels, path)
    xy2, labels2 = load_map_cloud(path)
    assert np.array_equal(xy2, xy)
    assert np.array_equal(labels2, labels)
    assert labels2.dtype == np.int64


def test_pose_graph_dump_is_g2o_shaped(tmp_path):
    g = PoseGraph()
    a = g.add_node(NodeKind.KEYFRAME, Pose2.identity(), fixed=True)
    b = g.add_node(NodeKind.SUBMAP, Pose2(1.0, 0.0, 0.1))
    g.add_edge(a, b, EdgeKind.VISUAL_ADJACENT, Pose2(1.0, 0.0, 0.1), np.eye(3))
    path = tmp_path / "graph.txt"
    write_pose_graph(g, path)
    lines = [l for l in path.read_text().splitlines() if l and not l.startswith("#")]
    kinds = [l.split()[0] for l in lines]
    assert kinds == ["VERTEX_SE2", "FIX", "VERTEX_SE2", "EDGE_SE2"]
    edge = lines[-1].split()
    assert edge[1:3] == [str(a), str(b)]
    m = g.edges[0].measurement
    assert [float(v) for v in edge[3:6]] == [m.x, m.y, m.yaw]
    # upper-triangular information: i11 i12 i13 i22 i23 i33 of the identity
    assert [float(v) for v in edge[6:]] == [1.0, 0.0, 0.0, 1.0, 0.0, 1.0]


def test_json_round_trip_is_byte_stable(tmp_path):
    payload = {"b": [1.5, 2 / 3], "a": {"nested": True}}
    p1, p2 = tmp_path / "one.json", tmp_path / "two.json"
    write_json(payload, p1)
    write_json(read_json(p1), p2)
    assert p1.read_bytes() == p2.read_bytes()


def small_dataset():
    cfg = RunConfig(
        seed=4,
        template="grid-garage",
        laps=1,
        noise=SensorNoiseModel(point_dropout=0.05),
    )
    return simulate_dataset(cfg)


def test_dataset_directory_round_trip(tmp_path):
    ds = small_dataset()
    write_dataset(ds, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")

    assert back.world.name == ds.world.name
    assert back.world.extents == ds.world.extents
    assert np.array_equal(back.world.xy, ds.world.xy)
    assert np.array_equal(back.world.labels, ds.world.labels)
    assert np.array_equal(back.world.route, ds.world.route)
    assert set(back.world.landmarks) == set(ds.world.landmarks)
    assert back.seed == ds.seed
    assert back.vehicle == ds.vehicle
    assert back.rates == ds.rates
    assert back.noise == ds.noise

    assert len(back.frames) == len(ds.frames)
    k = len(ds.frames) // 2
    assert back.frames[k].timestamp == ds.frames[k].timestamp
    assert np.array_equal(back.frames[k].xy, ds.frames[k].xy)
    assert np.array_equal(back.frames[k].labels, ds.frames[k].labels)

    assert len(back.wheel) == len(ds.wheel)
    assert np.array_equal(back.wheel[3].rates, ds.wheel[3].rates)
    assert len(back.imu) == len(ds.imu)
    assert back.imu[3].yaw_rate == ds.imu[3].yaw_rate

    assert np.array_equal(back.gt_times, ds.gt_times)
    assert np.array_equal(back.gt_twists, ds.gt_twists)
    last_a, last_b = ds.gt_poses[-1], back.gt_poses[-1]
    assert (last_b.x, last_b.y, last_b.yaw) == (last_a.x, last_a.y, last_a.yaw)


def test_load_dataset_rejects_missing_directory(tmp_path):
    with pytest.raises(DataFormatError, match="does not exist"):
        load_dataset(tmp_path / "nope")


def test_calibration_round_trip(tmp_path):
    fisheye = FisheyeModel((1.0, -0.05, 0.002, 0.0, 0.0), 320.0, (642.0, 478.0))
    hom = Homography(np.array([[0.01, 0.0, -5.0], [0.0, 0.01, -4.0], [0.0, 0.0, 1.0]]))
    bev = BevCameraModel.standard(meters_per_pixel=0.0105)
    path = tmp_path / "calib.json"
    save_calibration({"front": (fisheye, hom)}, bev, path)
    fisheyes, bev2 = load_calibration(path)

    f2, h2 = fisheyes["front"]
    assert np.array_equal(f2.coefficients, fisheye.coefficients)
    assert f2.focal == fisheye.focal
    assert np.array_equal(f2.principal_point, fisheye.principal_point)
    assert f2.theta_max == fisheye.theta_max
    assert np.array_equal(h2.matrix, hom.matrix)
    assert np.array_equal(bev2.intrinsics, bev.intrinsics)
    assert np.array_equal(bev2.camera_to_vehicle.rotation, bev.camera_to_vehicle.rotation)
    assert np.array_equal(bev2.camera_to_vehicle.translation, bev.camera_to_vehicle.translation)
    assert bev2.image_size == bev.image_size


def test_calibration_missing_key_is_diagnosed(tmp_path):
    path = tmp_path / "calib.json"
    write_json({"fisheye_cameras": {}}, path)
    with pytest.raises(DataFormatError, match="missing calibration key"):
        load_calibration(path)


def test_external_converter_is_a_documented_stub(tmp_path):
    with pytest.raises(NotImplementedError, match="target layout"):
        convert_external_recording(tmp_path, tmp_path / "out")


def test_export_keyframes_writes_a_trajectory(tmp_path):
    frame = SemanticFrame(0.0, np.array([[1.0, 2.0]]), [int(SemanticLabel.LANE_LINE)])
    census = census_of_labels(frame.labels)
    kfs = [
        Keyframe(0, 0.5, Pose2(1.0, 2.0, 0.3), Pose2(1.0, 2.0, 0.3), frame, census, 0.0),
        Keyframe(1, 1.5, Pose2(2.0, 2.5, 0.4), Pose2(2.0, 2.5, 0.4), frame, census, 1.0),
    ]
    path = tmp_path / "kf.txt"
    export_keyframes(kfs, path)
    times, poses = load_trajectory(path)
    assert np.array_equal(times, [0.5, 1.5])
    assert poses[1].x == 2.0


def test_comments_and_blank_lines_are_ignored(tmp_path):
    path = tmp_path / "traj.txt"
    path.write_text("# header\n\n0.0 1.0 2.0 0.5\n# trailing comment\n")
    times, poses = load_trajectory(path)
    assert len(times) == 1 and poses[0].y == 2.0
