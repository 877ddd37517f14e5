"""Pose-graph construction and sparse nonlinear least-squares optimization.

Nodes are keyframe and submap-anchor poses; edges are relative SE(2)
measurements from four sources: visual registration between adjacent
keyframes, pre-integrated wheel/IMU odometry over the same intervals,
keyframe-in-submap attachments, and verified loop closures. The solver
is a damped Gauss-Newton (Levenberg-Marquardt) on the standard relative
residual  r = vec(m^-1 * (a^-1 * b))  with analytic Jacobians and a
sparse normal-equation solve.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping

import numpy as np
import scipy.sparse
import scipy.sparse.linalg

from .geometry import Pose2, rot2, wrap_angle


class GraphError(Exception):
    """The graph structure does not admit the requested operation."""


class NodeKind(Enum):
    KEYFRAME = "keyframe"
    SUBMAP = "submap"


class EdgeKind(Enum):
    VISUAL_ADJACENT = "visual_adjacent"
    KINEMATIC = "kinematic"
    VISUAL_SUBMAP = "visual_submap"
    LOOP = "loop"


@dataclass
class GraphNode:
    id: int
    kind: NodeKind
    pose: Pose2
    fixed: bool = False


@dataclass(frozen=True)
class GraphEdge:
    """Relative-pose constraint from ``from_id`` to ``to_id``."""

    from_id: int
    to_id: int
    kind: EdgeKind
    measurement: Pose2
    information: np.ndarray

    def __post_init__(self) -> None:
        info = np.array(self.information, dtype=float).reshape(3, 3)
        if not np.allclose(info, info.T, atol=1e-9):
            raise ValueError("information matrix must be symmetric")
        if np.any(np.linalg.eigvalsh(info) <= 0.0):
            raise ValueError("information matrix must be positive definite")
        info.setflags(write=False)
        object.__setattr__(self, "information", info)


def information_from_covariance(cov: np.ndarray, max_condition: float = 1e6) -> np.ndarray:
    """Invert a pose covariance into an edge information matrix.

    Eigenvalues of the covariance are floored so the resulting
    information matrix has condition number at most ``max_condition``;
    a nearly perfect measurement then stays strong but finite.
    """
    c = 0.5 * (np.asarray(cov, dtype=float) + np.asarray(cov, dtype=float).T)
    vals, vecs = np.linalg.eigh(c)
    top = float(np.max(vals))
    if not np.isfinite(top) or top <= 0.0:
        raise ValueError("covariance has no positive spectrum")
    floored = np.maximum(vals, top / max_condition)
    info = vecs @ np.diag(1.0 / floored) @ vecs.T
    return 0.5 * (info + info.T)


def edge_residual(measurement: Pose2, pose_from: Pose2, pose_to: Pose2) -> np.ndarray:
    """Error vector (dx, dy, dyaw) of one edge at the given node poses."""
    err = measurement.inverse().compose(pose_from.between(pose_to))
    return err.as_array()


def edge_jacobians(measurement: Pose2, pose_from: Pose2, pose_to: Pose2) -> tuple[np.ndarray, np.ndarray]:
    """Analytic d(residual)/d(pose_from), d(residual)/d(pose_to)."""
    rt_m = rot2(measurement.yaw).T
    rt_a = rot2(pose_from.yaw).T
    pred = pose_from.between(pose_to)
    j_from = np.zeros((3, 3))
    j_to = np.zeros((3, 3))
    block = rt_m @ rt_a
    j_from[:2, :2] = -block
    j_from[:2, 2] = rt_m @ np.array([pred.y, -pred.x])
    j_from[2, 2] = -1.0
    j_to[:2, :2] = block
    j_to[2, 2] = 1.0
    return j_from, j_to


class PoseGraph:
    """Mutable container of SE(2) nodes and relative-pose edges.

    The first node added is fixed automatically: it pins the gauge
    freedom that relative measurements cannot observe. Parallel edges
    between the same pair of nodes are allowed (odometry and a loop
    closure may well constrain the same pair).
    """

    def __init__(self) -> None:
        self.nodes: dict[int, GraphNode] = {}
        self.edges: list[GraphEdge] = []
        self._next_id = 0

    def add_node(self, kind: NodeKind, pose: Pose2, fixed: bool | None = None) -> int:
        node_id = self._next_id
        self._next_id += 1
        if fixed is None:
            fixed = not self.nodes
        self.nodes[node_id] = GraphNode(node_id, kind, pose, fixed)
        return node_id

    def add_edge(
        self,
        from_id: int,
        to_id: int,
        kind: EdgeKind,
        measurement: Pose2,
        information: np.ndarray,
    ) -> GraphEdge:
        for node_id in (from_id, to_id):
            if node_id not in self.nodes:
                raise GraphError(f"edge references unknown node {node_id}")
        if from_id == to_id:
            raise GraphError(f"self-edge on node {from_id} is not allowed")
        edge = GraphEdge(from_id, to_id, kind, measurement, information)
        self.edges.append(edge)
        return edge

    def pose(self, node_id: int) -> Pose2:
        return self.nodes[node_id].pose

    def set_pose(self, node_id: int, pose: Pose2) -> None:
        self.nodes[node_id].pose = pose

    def fixed_ids(self) -> list[int]:
        return [n.id for n in self.nodes.values() if n.fixed]

    def total_cost(self, poses: Mapping[int, Pose2] | None = None) -> float:
        """Sum of r^T Omega r over all edges at the given (or current) poses."""
        get = (poses or {n: node.pose for n, node in self.nodes.items()}).__getitem__
        cost = 0.0
        for edge in self.edges:
            r = edge_residual(edge.measurement, get(edge.from_id), get(edge.to_id))
            cost += float(r @ edge.information @ r)
        return cost


@dataclass(frozen=True)
class OptimizeConfig:
    """Levenberg-Marquardt settings."""

    max_iterations: int = 50
    damping_init: float = 1e-4
    damping_factor: float = 10.0
    damping_max: float = 1e12
    gradient_tolerance: float = 1e-9
    step_tolerance: float = 1e-10
    huber_delta: float | None = None

    def __post_init__(self) -> None:
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if min(self.damping_init, self.damping_factor, self.damping_max) <= 0.0:
            raise ValueError("damping parameters must be positive")
        if self.huber_delta is not None and self.huber_delta <= 0.0:
            raise ValueError("huber_delta must be positive when set")


@dataclass(frozen=True)
class OptimizeReport:
    initial_cost: float
    final_cost: float
    iterations: int
    converged: bool
    termination: str
    cost_history: tuple[float, ...]


def _check_connectivity(graph: PoseGraph, free: set[int]) -> None:
    """Every free node must reach an anchored node through edges."""
    anchored = set(graph.nodes) - free
    if not anchored:
        raise GraphError("no fixed node: the gauge freedom is unconstrained")
    adjacency: dict[int, list[int]] = {n: [] for n in graph.nodes}
    for e in graph.edges:
        adjacency[e.from_id].append(e.to_id)
        adjacency[e.to_id].append(e.from_id)
    seen = set(anchored)
    queue = deque(anchored)
    while queue:
        for neighbor in adjacency[queue.popleft()]:
            if neighbor not in seen:
                seen.add(neighbor)
                queue.append(neighbor)
    orphans = sorted(free - seen)
    if orphans:
        raise GraphError(f"free nodes not connected to any anchor: {orphans}")


def _assemble(
    graph: PoseGraph,
    poses: dict[int, Pose2],
    col_of: dict[int, int],
    huber_delta: float | None,
) -> tuple[scipy.sparse.csr_matrix, np.ndarray, float]:
    """Whitened sparse Jacobian, residual vector, and robust cost."""
    n_rows = 3 * len(graph.edges)
    n_cols = 3 * len(col_of)
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    vals: list[np.ndarray] = []
    resid = np.zeros(n_rows)
    cost = 0.0
    for k, edge in enumerate(graph.edges):
        pa = poses[edge.from_id]
        pb = poses[edge.to_id]
        r = edge_residual(edge.measurement, pa, pb)
        quad = float(r @ edge.information @ r)
        scale = 1.0
        if huber_delta is not None and quad > huber_delta**2:
            norm = np.sqrt(quad)
            cost += huber_delta * (2.0 * norm - huber_delta)
            scale = np.sqrt(huber_delta / norm)
        else:
            cost += quad
        sqrt_info = np.linalg.cholesky(edge.information).T * scale
        row0 = 3 * k
        resid[row0 : row0 + 3] = sqrt_info @ r
        j_from, j_to = edge_jacobians(edge.measurement, pa, pb)
        for node_id, jac in ((edge.from_id, j_from), (edge.to_id, j_to)):
            if node_id not in col_of:
                continue
            block = sqrt_info @ jac
            c0 = col_of[node_id]
            rr, cc = np.meshgrid(np.arange(3), np.arange(3), indexing="ij")
            rows.append(row0 + rr.ravel())
            cols.append(c0 + cc.ravel())
            vals.append(block.ravel())
    if rows:
        jacobian = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(n_rows, n_cols),
        ).tocsr()
    else:
        jacobian = scipy.sparse.csr_matrix((n_rows, n_cols))
    return jacobian, resid, cost


def optimize(
    graph: PoseGraph,
    config: OptimizeConfig | None = None,
    free_ids: Iterable[int] | None = None,
) -> tuple[dict[int, Pose2], OptimizeReport]:
    """Minimize the total edge cost over the free node poses.

    ``free_ids`` restricts the variable set (used for the local solve
    when a submap closes); everything else is held constant. Returns the
    optimized poses of all nodes (fixed ones unchanged) and a report.
    The graph itself is not mutated.
    """
    cfg = config or OptimizeConfig()
    if free_ids is None:
        free = {n for n, node in graph.nodes.items() if not node.fixed}
    else:
        free = {n for n in free_ids if not graph.nodes[n].fixed}
    _check_connectivity(graph, free)
    poses = {n: node.pose for n, node in graph.nodes.items()}
    if not free or not graph.edges:
        cost = graph.total_cost(poses)
        return poses, OptimizeReport(cost, cost, 0, True, "nothing to optimize", (cost,))

    order = sorted(free)
    col_of = {n: 3 * i for i, n in enumerate(order)}
    lam = cfg.damping_init
    jac, resid, cost = _assemble(graph, poses, col_of, cfg.huber_delta)
    initial_cost = cost
    history = [cost]
    identity = scipy.sparse.identity(3 * len(order), format="csc")
    termination = "iteration limit"
    converged = False

    for _ in range(cfg.max_iterations):
        gradient = jac.T @ resid
        if float(np.max(np.abs(gradient), initial=0.0)) < cfg.gradient_tolerance:
            termination = "gradient below tolerance"
            converged = True
            break
        hessian = (jac.T @ jac).tocsc()
        stepped = False
        while lam <= cfg.damping_max:
            try:
                dx = scipy.sparse.linalg.spsolve(hessian + lam * identity, -gradient)
            except RuntimeError:
                dx = np.full(3 * len(order), np.nan)
            if np.all(np.isfinite(dx)):
                trial = dict(poses)
                for n, c in col_of.items():
                    p = poses[n]
                    trial[n] = Pose2(p.x + dx[c], p.y + dx[c + 1], wrap_angle(p.yaw + dx[c + 2]))
                trial_jac, trial_resid, trial_cost = _assemble(graph, trial, col_of, cfg.huber_delta)
                if trial_cost <= cost:
                    poses, jac, resid, cost = trial, trial_jac, trial_resid, trial_cost
                    history.append(cost)
                    lam = max(lam / cfg.damping_factor, 1e-12)
                    stepped = True
                    break
            lam *= cfg.damping_factor
        if not stepped:
            termination = "damping limit reached"
            break
        if float(np.linalg.norm(dx)) < cfg.step_tolerance:
            termination = "step below tolerance"
            converged = True
            break

    report = OptimizeReport(
        initial_cost=initial_cost,
        final_cost=cost,
        iterations=len(history) - 1,
        converged=converged,
        termination=termination,
        cost_history=tuple(history),
    )
    return poses, report


class OptimizationScheduler:
    """Coalesces optimization triggers into discrete episodes.

    Loop closures raise the pending flag immediately; submap
    finalizations raise it every ``submaps_per_episode`` completions.
    However many triggers accumulate between polls, one call to
    :meth:`take` claims them all, so a burst of closures costs a single
    optimizer run.
    """

    def __init__(self, submaps_per_episode: int = 2) -> None:
        if submaps_per_episode < 1:
            raise ValueError("submaps_per_episode must be at least 1")
        self.submaps_per_episode = submaps_per_episode
        self._pending = False
        self._finalized = 0
        self.closure_notices = 0
        self.episodes = 0

    @property
    def pending(self) -> bool:
        return self._pending

    def notify_loop_closure(self) -> None:
        self.closure_notices += 1
        self._pending = True

    def notify_submap_finalized(self) -> None:
        self._finalized += 1
        if self._finalized % self.submaps_per_episode == 0:
            self._pending = True

    def take(self) -> bool:
        """Claim any pending episode; returns whether the caller should optimize."""
        if not self._pending:
            return False
        self._pending = False
        self.episodes += 1
        return True
