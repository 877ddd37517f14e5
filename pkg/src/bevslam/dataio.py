"""File formats for datasets, maps, trajectories, and calibration.

All numeric text is written with ``repr`` (shortest round-trip form), so
a written file re-read yields bit-identical floats and re-written output
is byte-identical. JSON is always dumped with sorted keys for the same
reason. Formats are line-oriented and self-describing through comment
headers.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .camera import BevCameraModel, FisheyeModel, Homography
from .fusion import ImuSample, WheelSample
from .geometry import Pose2, Transform3
from .mapping import Keyframe
from .posegraph import NodeKind, PoseGraph
from .semantic import SemanticFrame
from .sim import (
    GarageWorld,
    SensorNoiseModel,
    SensorRates,
    SimDataset,
    VehicleModel,
)


class DataFormatError(Exception):
    """A file does not conform to its documented format."""


def _fmt(x: float) -> str:
    return repr(float(x))


def _parse_floats(parts: list[str], path: Path, line_no: int, expected: int) -> list[float]:
    if len(parts) != expected:
        raise DataFormatError(f"{path}:{line_no}: expected {expected} fields, got {len(parts)}")
    try:
        return [float(p) for p in parts]
    except ValueError as exc:
        raise DataFormatError(f"{path}:{line_no}: {exc}") from None


def _data_lines(path: Path) -> Iterable[tuple[int, str]]:
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            yield line_no, line


def write_json(payload, path) -> None:
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_json(path):
    return json.loads(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# Semantic frame streams


def write_frames(frames: Iterable[SemanticFrame], path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# semantic frames: 'frame <source_id> <timestamp> <n_points>'\n")
        fh.write("# followed by n_points lines of '<x> <y> <label>'\n")
        for frame in frames:
            fh.write(f"frame {frame.source_id} {_fmt(frame.timestamp)} {len(frame)}\n")
            for (x, y), label in zip(frame.xy, frame.labels):
                fh.write(f"{_fmt(x)} {_fmt(y)} {int(label)}\n")


def load_frames(path) -> list[SemanticFrame]:
    path = Path(path)
    frames: list[SemanticFrame] = []
    header: tuple[int, float, int] | None = None
    xs: list[list[float]] = []
    labels: list[int] = []

    def finish() -> None:
        nonlocal header, xs, labels
        if header is None:
            return
        source_id, timestamp, count = header
        if len(xs) != count:
            raise DataFormatError(
                f"{path}: frame {source_id} declares {count} points but has {len(xs)}"
            )
        frames.append(SemanticFrame(timestamp, np.array(xs).reshape(-1, 2), labels, source_id))
        header, xs, labels = None, [], []

    for line_no, line in _data_lines(path):
        parts = line.split()
        if parts[0] == "frame":
            finish()
            if len(parts) != 4:
                raise DataFormatError(f"{path}:{line_no}: malformed frame header")
            header = (int(parts[1]), float(parts[2]), int(parts[3]))
        else:
            if header is None:
                raise DataFormatError(f"{path}:{line_no}: point line before any frame header")
            x, y, label = _parse_floats(parts, path, line_no, 3)
            xs.append([x, y])
            labels.append(int(label))
    finish()
    return frames


# ---------------------------------------------------------------------------
# Odometry streams


def write_wheel(samples: list[WheelSample], path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# wheel encoder stream\n")
        if samples:
            fh.write(f"# wheel_radius {_fmt(samples[0].wheel_radius)}\n")
            fh.write(f"# track_width {_fmt(samples[0].track_width)}\n")
        fh.write("# columns: t w_fl w_fr w_rl w_rr\n")
        for s in samples:
            rates = " ".join(_fmt(r) for r in s.rates)
            fh.write(f"{_fmt(s.timestamp)} {rates}\n")


def load_wheel(path) -> list[WheelSample]:
    path = Path(path)
    radius = None
    track = None
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if line.startswith("# wheel_radius"):
                radius = float(line.split()[2])
            elif line.startswith("# track_width"):
                track = float(line.split()[2])
    samples: list[WheelSample] = []
    for line_no, line in _data_lines(path):
        vals = _parse_floats(line.split(), path, line_no, 5)
        if radius is None or track is None:
            raise DataFormatError(f"{path}: missing wheel_radius/track_width header")
        samples.append(WheelSample(vals[0], np.array(vals[1:]), radius, track))
    return samples


def write_imu(samples: list[ImuSample], path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# imu stream\n# columns: t yaw_rate ax ay\n")
        for s in samples:
            fh.write(f"{_fmt(s.timestamp)} {_fmt(s.yaw_rate)} {_fmt(s.accel[0])} {_fmt(s.accel[1])}\n")


def load_imu(path) -> list[ImuSample]:
    path = Path(path)
    samples: list[ImuSample] = []
    for line_no, line in _data_lines(path):
        t, yaw_rate, ax, ay = _parse_floats(line.split(), path, line_no, 4)
        samples.append(ImuSample(t, yaw_rate, np.array([ax, ay])))
    return samples


# ---------------------------------------------------------------------------
# Trajectories, landmarks, map clouds


def write_trajectory(times, poses: list[Pose2], path) -> None:
    path = Path(path)
    if len(times) != len(poses):
        raise ValueError("times and poses must have equal length")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# trajectory\n# columns: t x y yaw\n")
        for t, p in zip(times, poses):
            fh.write(f"{_fmt(t)} {_fmt(p.x)} {_fmt(p.y)} {_fmt(p.yaw)}\n")


def load_trajectory(path) -> tuple[np.ndarray, list[Pose2]]:
    path = Path(path)
    times: list[float] = []
    poses: list[Pose2] = []
    for line_no, line in _data_lines(path):
        t, x, y, yaw = _parse_floats(line.split(), path, line_no, 4)
        times.append(t)
        poses.append(Pose2(x, y, yaw))
    return np.array(times), poses


def write_ground_truth(dataset: SimDataset, path) -> None:
    """Poses plus the piecewise-constant twist starting at each time."""
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# ground truth\n# columns: t x y yaw v omega\n")
        n = len(dataset.gt_twists)
        for i, (t, p) in enumerate(zip(dataset.gt_times, dataset.gt_poses)):
            k = min(i, n - 1)
            v, omega = (dataset.gt_twists[k] if n else (0.0, 0.0))
            fh.write(
                f"{_fmt(t)} {_fmt(p.x)} {_fmt(p.y)} {_fmt(p.yaw)} {_fmt(v)} {_fmt(omega)}\n"
            )


def load_ground_truth(path) -> tuple[np.ndarray, list[Pose2], np.ndarray]:
    path = Path(path)
    times: list[float] = []
    poses: list[Pose2] = []
    twists: list[list[float]] = []
    for line_no, line in _data_lines(path):
        t, x, y, yaw, v, omega = _parse_floats(line.split(), path, line_no, 6)
        times.append(t)
        poses.append(Pose2(x, y, yaw))
        twists.append([v, omega])
    return np.array(times), poses, np.array(twists[:-1]) if twists else np.zeros((0, 2))


def write_landmarks(landmarks: Mapping[str, np.ndarray], path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# landmarks\n# columns: name x y\n")
        for name in sorted(landmarks):
            p = landmarks[name]
            fh.write(f"{name} {_fmt(p[0])} {_fmt(p[1])}\n")


def load_landmarks(path) -> dict[str, np.ndarray]:
    path = Path(path)
    out: dict[str, np.ndarray] = {}
    for line_no, line in _data_lines(path):
        parts = line.split()
        if len(parts) != 3:
            raise DataFormatError(f"{path}:{line_no}: expected 'name x y'")
        out[parts[0]] = np.array([float(parts[1]), float(parts[2])])
    return out


def write_map_cloud(xy: np.ndarray, labels: np.ndarray, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# map point cloud\n# columns: x y label\n")
        for (x, y), label in zip(xy, labels):
            fh.write(f"{_fmt(x)} {_fmt(y)} {int(label)}\n")


def load_map_cloud(path) -> tuple[np.ndarray, np.ndarray]:
    path = Path(path)
    pts: list[list[float]] = []
    labels: list[int] = []
    for line_no, line in _data_lines(path):
        x, y, label = _parse_floats(line.split(), path, line_no, 3)
        pts.append([x, y])
        labels.append(int(label))
    return np.array(pts).reshape(-1, 2), np.array(labels, dtype=np.int64)


# ---------------------------------------------------------------------------
# Pose graph dump (g2o-compatible SE2 lines, kinds in comments)


def write_pose_graph(graph: PoseGraph, path) -> None:
    path = Path(path)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# pose graph\n")
        fh.write("# VERTEX_SE2 id x y yaw / EDGE_SE2 from to dx dy dyaw i11 i12 i13 i22 i23 i33\n")
        for node_id in sorted(graph.nodes):
            node = graph.nodes[node_id]
            fh.write(f"# node {node.id} kind={node.kind.value}\n")
            p = node.pose
            fh.write(f"VERTEX_SE2 {node.id} {_fmt(p.x)} {_fmt(p.y)} {_fmt(p.yaw)}\n")
            if node.fixed:
                fh.write(f"FIX {node.id}\n")
        for i, e in enumerate(graph.edges):
            fh.write(f"# edge {i} kind={e.kind.value}\n")
            m = e.measurement
            info = e.information
            upper = [info[0, 0], info[0, 1], info[0, 2], info[1, 1], info[1, 2], info[2, 2]]
            fh.write(
                f"EDGE_SE2 {e.from_id} {e.to_id} {_fmt(m.x)} {_fmt(m.y)} {_fmt(m.yaw)} "
                + " ".join(_fmt(v) for v in upper)
                + "\n"
            )


# ---------------------------------------------------------------------------
# Datasets


def write_dataset(dataset: SimDataset, directory) -> None:
    """Persist a simulated run as a directory of stream files plus metadata."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_frames(dataset.frames, d / "frames.txt")
    write_wheel(dataset.wheel, d / "wheel.txt")
    write_imu(dataset.imu, d / "imu.txt")
    write_ground_truth(dataset, d / "groundtruth.txt")
    write_landmarks(dataset.world.landmarks, d / "landmarks.txt")
    write_map_cloud(dataset.world.xy, dataset.world.labels, d / "world.txt")
    meta = {
        "world_name": dataset.world.name,
        "extents": list(dataset.world.extents),
        "route": [[float(x), float(y)] for x, y in dataset.world.route],
        "world_meta": {k: v for k, v in sorted(dataset.world.meta.items())},
        "seed": dataset.seed,
        "vehicle": {"wheel_radius": dataset.vehicle.wheel_radius, "track_width": dataset.vehicle.track_width},
        "rates": {
            "bev_hz": dataset.rates.bev_hz,
            "wheel_hz": dataset.rates.wheel_hz,
            "imu_hz": dataset.rates.imu_hz,
            "control_hz": dataset.rates.control_hz,
        },
        "noise": {
            "wheel_rate_sigma": dataset.noise.wheel_rate_sigma,
            "wheel_scale_sigma": dataset.noise.wheel_scale_sigma,
            "imu_yaw_sigma": dataset.noise.imu_yaw_sigma,
            "imu_bias_walk": dataset.noise.imu_bias_walk,
            "imu_accel_sigma": dataset.noise.imu_accel_sigma,
            "point_jitter_sigma": dataset.noise.point_jitter_sigma,
            "point_dropout": dataset.noise.point_dropout,
        },
    }
    write_json(meta, d / "meta.json")


def load_dataset(directory) -> SimDataset:
    d = Path(directory)
    if not d.is_dir():
        raise DataFormatError(f"dataset directory {d} does not exist")
    meta = read_json(d / "meta.json")
    world_xy, world_labels = load_map_cloud(d / "world.txt")
    world = GarageWorld(
        name=meta["world_name"],
        extents=tuple(meta["extents"]),
        xy=world_xy,
        labels=world_labels,
        landmarks=load_landmarks(d / "landmarks.txt"),
        route=np.array(meta["route"]),
        meta=meta.get("world_meta", {}),
    )
    gt_times, gt_poses, gt_twists = load_ground_truth(d / "groundtruth.txt")
    return SimDataset(
        world=world,
        frames=load_frames(d / "frames.txt"),
        wheel=load_wheel(d / "wheel.txt"),
        imu=load_imu(d / "imu.txt"),
        gt_times=gt_times,
        gt_poses=gt_poses,
        gt_twists=gt_twists,
        vehicle=VehicleModel(**meta["vehicle"]),
        rates=SensorRates(**meta["rates"]),
        noise=SensorNoiseModel(**meta["noise"]),
        seed=int(meta["seed"]),
    )


# ---------------------------------------------------------------------------
# Calibration


def save_calibration(
    fisheyes: Mapping[str, tuple[FisheyeModel, Homography]],
    bev: BevCameraModel,
    path,
) -> None:
    payload = {
        "fisheye_cameras": {
            name: {
                "coefficients": [float(c) for c in model.coefficients],
                "focal": model.focal,
                "principal_point": [float(v) for v in model.principal_point],
                "theta_max": model.theta_max,
                "bev_homography": [[float(v) for v in row] for row in hom.matrix],
            }
            for name, (model, hom) in sorted(fisheyes.items())
        },
        "bev": {
            "intrinsics": [[float(v) for v in row] for row in bev.intrinsics],
            "rotation": [[float(v) for v in row] for row in bev.camera_to_vehicle.rotation],
            "translation": [float(v) for v in bev.camera_to_vehicle.translation],
            "image_size": list(bev.image_size),
        },
    }
    write_json(payload, path)


def load_calibration(path) -> tuple[dict[str, tuple[FisheyeModel, Homography]], BevCameraModel]:
    payload = read_json(path)
    try:
        fisheyes = {
            name: (
                FisheyeModel(
                    entry["coefficients"],
                    entry["focal"],
                    entry["principal_point"],
                    entry["theta_max"],
                ),
                Homography(np.array(entry["bev_homography"])),
            )
            for name, entry in payload["fisheye_cameras"].items()
        }
        bev_entry = payload["bev"]
        bev = BevCameraModel(
            np.array(bev_entry["intrinsics"]),
            Transform3(np.array(bev_entry["rotation"]), np.array(bev_entry["translation"])),
            tuple(bev_entry["image_size"]),
        )
    except KeyError as exc:
        raise DataFormatError(f"{path}: missing calibration key {exc}") from None
    return fisheyes, bev


def convert_external_recording(source_dir, output_dir) -> None:
    """Convert a vendor recording into the dataset layout used here.

    Expected output layout (all produced by :func:`write_dataset`):
    ``frames.txt`` (semantic BEV points per frame), ``wheel.txt`` (four
    wheel rates plus geometry header), ``imu.txt`` (yaw rate and planar
    acceleration), optional ``groundtruth.txt`` / ``landmarks.txt`` when
    a survey is available, and ``meta.json``.

    Vendor recording layouts vary too much to guess at; implement the
    mapping for your source format here.
    """
    raise NotImplementedError(
        "no converter for external recordings is bundled; see the docstring "
        "for the target layout"
    )


def export_keyframes(keyframes: list[Keyframe], path) -> None:
    """Keyframe trajectory (current best poses) as a trajectory file."""
    times = [kf.timestamp for kf in keyframes]
    poses = [kf.pose for kf in keyframes]
    write_trajectory(times, poses, path)
