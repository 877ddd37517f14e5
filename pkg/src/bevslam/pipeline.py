"""End-to-end runner: sensor streams in, optimized map and report out.

The offline loop mirrors the online architecture. An EKF consumes the
wheel and inertial streams continuously; every bird's-eye frame is
registered against the active submap cloud with the filter's relative
motion as the initial guess; keyframes feed the dual-submap mapper; and
a pose graph over keyframes and submap anchors is re-solved whenever a
loop closure lands or enough submaps have been finalized.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .config import RunConfig, config_to_dict
from .dataio import write_json, write_map_cloud, write_pose_graph, write_trajectory
from .evaluate import (
    absolute_trajectory_error,
    classify_closures,
    distance_error_metrics,
    endpoint_drift,
    landmark_map_positions,
    pairwise_distances,
    relative_drift_per_meter,
)
from .fusion import ViwFusion, initialize, preintegrate
from .geometry import Pose2
from .loop import LoopClosure, find_loop_candidates, verify_loop
from .mapping import Keyframe, Mapper
from .matching import icp_register
from .posegraph import (
    EdgeKind,
    NodeKind,
    OptimizationScheduler,
    PoseGraph,
    information_from_covariance,
    optimize,
)
from .render import save_map_png
from .semantic import SemanticFrame, downsample
from .sim import SimDataset, TrajectorySpec, ground_truth_distances, make_world, simulate_run


class PipelineError(Exception):
    """The pipeline cannot start or continue."""


# Edge weight when a keyframe was placed by dead reckoning (no converged
# registration to back it): roughly a few centimeters and a degree or two.
_FALLBACK_VISUAL_COV = np.diag([0.05**2, 0.05**2, 0.03**2])

# A registration covariance only measures point noise; it knows nothing of
# the correlated error baked into the map it matched against. Adding this
# floor keeps visual edges from claiming millimeter certainty.
_EDGE_COV_FLOOR = np.diag([0.02**2, 0.02**2, 0.01**2])

# A submap anchor is *defined* as its first keyframe's pose, so that edge
# is pinned much harder than any measurement.
_ANCHOR_INFO = np.diag([1e6, 1e6, 1e6])


def simulate_dataset(config: RunConfig) -> SimDataset:
    """Generate the dataset a config describes."""
    world = make_world(config.template)
    spec = TrajectorySpec(world.route, speed=config.speed, laps=config.laps)
    return simulate_run(
        world,
        trajectory=spec,
        noise=config.noise,
        rates=config.rates,
        vehicle=config.vehicle,
        seed=config.seed,
    )


@dataclass
class RunResult:
    """Everything a finished run produced, still in memory."""

    config: RunConfig
    dataset: SimDataset
    frame_times: np.ndarray
    frame_poses: list[Pose2]
    online_poses: list[Pose2]
    ekf_times: np.ndarray
    ekf_poses: list[Pose2]
    mapper: Mapper
    graph: PoseGraph
    closures: list[LoopClosure]
    counters: dict[str, int]
    optimizations: list[dict]
    timings: dict[str, float]

    def keyframe_times(self) -> dict[int, float]:
        return {k: kf.timestamp for k, kf in self.mapper.keyframes.items()}

    def submap_anchor_times(self) -> dict[int, float]:
        return {
            s.id: self.mapper.keyframes[s.keyframe_ids[0]].timestamp
            for s in self.mapper.all_submaps()
            if s.keyframe_ids
        }


def _span(times: list[float]) -> str:
    if not times:
        return "empty"
    return f"[{times[0]:.3f}, {times[-1]:.3f}]"


class _Runner:
    """Mutable state of one pipeline execution."""

    def __init__(self, config: RunConfig, dataset: SimDataset) -> None:
        self.cfg = config
        self.dataset = dataset
        self.mapper = Mapper(config.mapping)
        self.graph = PoseGraph()
        self.scheduler = OptimizationScheduler(config.submaps_per_episode)
        self.kf_node: dict[int, int] = {}
        self.submap_node: dict[int, int] = {}
        self.closures: list[LoopClosure] = []
        self.optimizations: list[dict] = []
        self.counters = {
            "frames_processed": 0,
            "frames_dropped": 0,
            "keyframes": 0,
            "icp_fallbacks": 0,
            "loop_candidates": 0,
            "loop_closures": 0,
            "loop_rejected": 0,
            "submaps_finalized": 0,
            "optimizations": 0,
        }
        # Candidate gating with SPQ disabled: keep the geometric gates,
        # drop the semantic ones to their always-pass floors.
        self.gate_cfg = (
            config.loop
            if config.spq_enabled
            else replace(config.loop, min_distinct_categories=1, min_weighted_score=0.0)
        )
        self.last_tracked = Pose2.identity()
        self.prev_ekf = Pose2.identity()
        self.travel = 0.0
        self.ref_kf_id: int | None = None
        self.ref_rel = Pose2.identity()
        self.records: list[tuple[float, int, Pose2]] = []
        self.online: list[Pose2] = []
        self.ekf: list[Pose2] = []
        self.ekf_times: list[float] = []
        self.last_icp_cov: np.ndarray | None = None

    # -- optimization -------------------------------------------------

    def _optimize(self, scope: str, free_ids=None) -> None:
        poses, report = optimize(self.graph, self.cfg.optimizer, free_ids)
        for node_id, pose in poses.items():
            self.graph.set_pose(node_id, pose)
        self.mapper.apply_poses(
            {kf_id: poses[n] for kf_id, n in self.kf_node.items()},
            {sid: poses[n] for sid, n in self.submap_node.items()},
        )
        self.optimizations.append(
            {
                "scope": scope,
                "initial_cost": report.initial_cost,
                "final_cost": report.final_cost,
                "iterations": report.iterations,
                "termination": report.termination,
            }
        )
        self.counters["optimizations"] += 1
        if self.ref_kf_id is not None:
            self.last_tracked = self.mapper.keyframes[self.ref_kf_id].pose.compose(self.ref_rel)

    # -- keyframe machinery -------------------------------------------

    def _wire_keyframe(self, outcome, prev: Keyframe | None) -> int:
        kf = outcome.keyframe
        node = self.graph.add_node(NodeKind.KEYFRAME, kf.pose)
        self.kf_node[kf.id] = node
        visual_cov = (
            self.last_icp_cov + _EDGE_COV_FLOOR
            if self.last_icp_cov is not None
            else _FALLBACK_VISUAL_COV
        )
        visual_info = information_from_covariance(visual_cov)
        if prev is not None:
            measurement = prev.pose.between(kf.pose)
            self.graph.add_edge(
                self.kf_node[prev.id], node, EdgeKind.VISUAL_ADJACENT, measurement, visual_info
            )
            if self.cfg.kinematic_edges:
                pre = preintegrate(
                    self.dataset.wheel,
                    self.dataset.imu,
                    prev.timestamp,
                    kf.timestamp,
                    self.cfg.fusion,
                )
                self.graph.add_edge(
                    self.kf_node[prev.id],
                    node,
                    EdgeKind.KINEMATIC,
                    pre.delta,
                    information_from_covariance(pre.covariance),
                )
        by_id = {s.id: s for s in self.mapper.all_submaps()}
        for sid in outcome.submap_ids:
            submap = by_id[sid]
            if sid not in self.submap_node:
                self.submap_node[sid] = self.graph.add_node(NodeKind.SUBMAP, submap.anchor)
                info = _ANCHOR_INFO
            else:
                info = visual_info
            measurement = submap.anchor.between(kf.pose)
            self.graph.add_edge(
                self.submap_node[sid], node, EdgeKind.VISUAL_SUBMAP, measurement, info
            )
        return node

    def _try_close_loop(self, kf: Keyframe, node: int) -> None:
        candidates = find_loop_candidates(
            kf, self.mapper.finalized, self.mapper.keyframes, self.gate_cfg
        )
        self.counters["loop_candidates"] += len(candidates)
        by_id = {s.id: s for s in self.mapper.finalized}
        for candidate in candidates:
            closure = verify_loop(
                kf, by_id[candidate.submap_id], candidate, self.gate_cfg, self.cfg.icp
            )
            if closure is None:
                self.counters["loop_rejected"] += 1
                continue
            self.closures.append(closure)
            self.counters["loop_closures"] += 1
            self.graph.add_edge(
                self.submap_node[closure.submap_id],
                node,
                EdgeKind.LOOP,
                closure.relative,
                information_from_covariance(closure.icp.covariance + _EDGE_COV_FLOOR),
            )
            self.scheduler.notify_loop_closure()

    # -- per-frame step -----------------------------------------------

    def step(self, frame: SemanticFrame, fusion: ViwFusion) -> None:
        t = frame.timestamp
        state = fusion.advance_to(t)
        delta = self.prev_ekf.between(state.pose)
        self.prev_ekf = state.pose
        self.ekf.append(state.pose)
        self.ekf_times.append(t)
        self.travel += math.hypot(delta.x, delta.y)
        predicted = self.last_tracked.compose(delta)

        reduced = downsample(frame, self.cfg.mapping.cell_size)
        target = self.mapper.active_target()
        tracked = predicted
        self.last_icp_cov = None
        if target is not None and len(reduced):
            result = icp_register(reduced, target, predicted, self.cfg.icp)
            if result.converged:
                tracked = result.transform
                self.last_icp_cov = result.covariance
            else:
                self.counters["icp_fallbacks"] += 1
        self.last_tracked = tracked
        self.online.append(tracked)
        self.counters["frames_processed"] += 1

        if len(reduced) and self.mapper.should_insert_keyframe(reduced, tracked):
            prev = self.mapper.last_keyframe
            outcome = self.mapper.insert_keyframe(t, tracked, reduced, self.travel)
            self.counters["keyframes"] += 1
            node = self._wire_keyframe(outcome, prev)
            self.ref_kf_id = outcome.keyframe.id
            self.ref_rel = Pose2.identity()
            if self.cfg.loop_enabled:
                self._try_close_loop(outcome.keyframe, node)
            if outcome.rotated_out is not None:
                rotated = outcome.rotated_out
                if self.cfg.optimizer_enabled:
                    free = [self.kf_node[k] for k in rotated.keyframe_ids]
                    free.append(self.submap_node[rotated.id])
                    self._optimize("local", free)
                self.mapper.finalize_submap(rotated)
                self.counters["submaps_finalized"] += 1
                self.scheduler.notify_submap_finalized()
        elif self.ref_kf_id is not None:
            self.ref_rel = self.mapper.keyframes[self.ref_kf_id].pose.between(tracked)

        if self.ref_kf_id is not None:
            self.records.append((t, self.ref_kf_id, self.ref_rel))

        if self.cfg.optimizer_enabled and self.scheduler.take():
            self._optimize("episode")

    def finish(self) -> None:
        if self.cfg.optimizer_enabled and len(self.graph.nodes) > 1:
            self._optimize("final")
        self.mapper.finish()
        self.mapper.rebuild_finalized()
        self.counters["submaps_finalized"] = len(self.mapper.finalized)

    def trajectory(self) -> tuple[np.ndarray, list[Pose2]]:
        times = np.array([t for t, _, _ in self.records])
        poses = [self.mapper.keyframes[k].pose.compose(rel) for _, k, rel in self.records]
        return times, poses


def run_slam(config: RunConfig | None = None, dataset: SimDataset | None = None) -> RunResult:
    """Run the full pipeline on a dataset (simulating one if needed)."""
    cfg = config or RunConfig()
    timings: dict[str, float] = {}
    if dataset is None:
        tick = time.perf_counter()
        dataset = simulate_dataset(cfg)
        timings["simulate_s"] = time.perf_counter() - tick

    frame_times = [f.timestamp for f in dataset.frames]
    init = initialize(frame_times, dataset.wheel, dataset.imu, cfg.fusion)
    if init is None:
        raise PipelineError(
            "no camera frame is covered by the enabled odometry streams: "
            f"frames {_span(frame_times)}, "
            f"wheel {_span([s.timestamp for s in dataset.wheel])}, "
            f"imu {_span([s.timestamp for s in dataset.imu])}"
        )
    # Anchor the map frame at the recorded start pose when the dataset
    # carries one; odometry alone cannot fix the global gauge.
    start = init.state
    if dataset.gt_poses:
        start = replace(start, pose=dataset.gt_pose_at(init.t0))

    fusion = ViwFusion(cfg.fusion, start, init.t0)
    for wheel_sample in dataset.wheel:
        if wheel_sample.timestamp >= init.t0:
            fusion.ingest_wheel(wheel_sample)
    for imu_sample in dataset.imu:
        if imu_sample.timestamp >= init.t0:
            fusion.ingest_imu(imu_sample)

    runner = _Runner(cfg, dataset)
    runner.counters["frames_dropped"] = init.dropped_frames
    runner.prev_ekf = start.pose
    runner.last_tracked = start.pose

    tick = time.perf_counter()
    wall0 = time.perf_counter()
    for frame in dataset.frames[init.frame_index :]:
        if cfg.realtime:
            lag = (frame.timestamp - init.t0) - (time.perf_counter() - wall0)
            if lag > 0:
                time.sleep(lag)
        runner.step(frame, fusion)
    runner.finish()
    timings["slam_s"] = time.perf_counter() - tick

    times, poses = runner.trajectory()
    return RunResult(
        config=cfg,
        dataset=dataset,
        frame_times=times,
        frame_poses=poses,
        online_poses=runner.online,
        ekf_times=np.array(runner.ekf_times),
        ekf_poses=runner.ekf,
        mapper=runner.mapper,
        graph=runner.graph,
        closures=runner.closures,
        counters=runner.counters,
        optimizations=runner.optimizations,
        timings=timings,
    )


# ---------------------------------------------------------------------------
# Reporting and evaluation


def run_report(result: RunResult) -> dict:
    """Deterministic summary of a run: no timings, no machine state."""
    xy, _ = result.mapper.global_cloud()
    traj_xy = np.array([[p.x, p.y] for p in result.frame_poses])
    length = float(np.sum(np.linalg.norm(np.diff(traj_xy, axis=0), axis=1))) if len(traj_xy) > 1 else 0.0
    return {
        "world": result.dataset.world.name,
        "seed": result.dataset.seed,
        "config": config_to_dict(result.config),
        "counters": dict(sorted(result.counters.items())),
        "trajectory": {"frames": len(result.frame_poses), "length_m": length},
        "map": {
            "points": int(len(xy)),
            "submaps": len(result.mapper.all_submaps()),
            "keyframes": len(result.mapper.keyframes),
        },
        "closures": [
            {
                "keyframe": c.keyframe_id,
                "submap": c.submap_id,
                "rms": c.rms,
                "inlier_fraction": c.inlier_fraction,
            }
            for c in result.closures
        ],
        "optimizations": result.optimizations,
    }


def trajectory_metrics(dataset: SimDataset, est_times: np.ndarray, est_poses: list[Pose2]) -> dict:
    """Trajectory and landmark accuracy of an estimate against ground truth."""
    ds = dataset
    ate = absolute_trajectory_error(est_times, est_poses, ds.gt_times, ds.gt_poses)
    drift = relative_drift_per_meter(est_times, est_poses, ds.gt_times, ds.gt_poses)
    end_err, length = endpoint_drift(est_times, est_poses, ds.gt_times, ds.gt_poses)

    out = {
        "ate": {"rmse": ate.rmse, "mean": ate.mean, "max": ate.max, "pairs": ate.pairs},
        "drift_per_meter": drift,
        "endpoint": {
            "error_m": end_err,
            "length_m": length,
            "percent": 100.0 * end_err / length if length > 0 else float("inf"),
        },
    }

    if ds.world.landmarks:
        mapped = landmark_map_positions(
            ds.world.landmarks, ds.gt_times, ds.gt_poses, est_times, est_poses
        )
        truth = ground_truth_distances(ds.world)
        measured = pairwise_distances(mapped)
        keys = sorted(truth)
        metrics = distance_error_metrics([truth[k] for k in keys], [measured[k] for k in keys])
        out["landmark_distances"] = {
            "mean_abs_error": metrics.mean,
            "max_abs_error": metrics.max,
            "rmse": metrics.rmse,
            "pairs": metrics.count,
        }
    return out


def evaluate_run(result: RunResult) -> dict:
    """Accuracy metrics against the dataset's ground truth."""
    ds = result.dataset
    out = trajectory_metrics(ds, result.frame_times, result.frame_poses)

    checks = classify_closures(
        result.closures,
        result.keyframe_times(),
        result.submap_anchor_times(),
        ds.gt_pose_at,
    )
    out["closures"] = {
        "accepted": len(checks),
        "correct": sum(1 for c in checks if c.correct),
        "max_translation_error": max((c.translation_error for c in checks), default=0.0),
        "max_yaw_error": max((c.yaw_error for c in checks), default=0.0),
    }
    return out


def export_run(result: RunResult, out_dir, evaluate: bool = True) -> dict:
    """Write all run artifacts to a directory; returns the report dict.

    Every file except ``timings.log`` is byte-for-byte reproducible for
    a given seed and config; wall-clock timings live only in the sidecar.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    write_trajectory(result.frame_times, result.frame_poses, out / "trajectory.txt")
    kf_times, kf_poses = result.mapper.keyframe_trajectory()
    write_trajectory(kf_times, kf_poses, out / "keyframes.txt")
    xy, labels = result.mapper.global_cloud()
    write_map_cloud(xy, labels, out / "map_cloud.txt")
    write_pose_graph(result.graph, out / "pose_graph.txt")
    if len(xy):
        save_map_png(
            xy,
            labels,
            out / "map.png",
            pixels_per_meter=result.config.map_render_pixels_per_meter,
            trajectory=result.frame_poses,
        )

    report = run_report(result)
    if evaluate:
        report["evaluation"] = evaluate_run(result)
    write_json(report, out / "report.json")

    with open(out / "timings.log", "w", encoding="utf-8") as fh:
        for stage in sorted(result.timings):
            fh.write(f"{stage} {result.timings[stage]:.3f}\n")
    return report
