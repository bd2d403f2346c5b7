"""Per-drone pose graph, inter-drone edge algebra and hierarchical optimisation.

Every edge carries a relative measurement ``z`` and a diagonal information
matrix.  The graph cost is the weighted sum of squared differences between
each measurement and its prediction ``between(x_i, x_j)`` with the heading
component wrapped.  Node 0 is the take-off pose and is never touched by the
optimiser.

Inter-drone loop closures never add nodes: an edge from a local pose to an
external pose of a lower-id drone is rebased onto node 0, and later
refreshed when the external pose changes, without re-running ICP.
"""

from __future__ import annotations

import copy
import io
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, TextIO

import numpy as np
import scipy.linalg
import scipy.sparse
import scipy.sparse.linalg

from .geometry import IDENTITY, Pose2, between, compose, inverse, wrap_angles


# below this the graph is consistent up to float rounding and is left untouched
NEGLIGIBLE_COST = 1e-20


class CapacityError(RuntimeError):
    """The graph would exceed its node budget."""


class GraphError(ValueError):
    """Invalid node reference or malformed graph dump."""


@dataclass(frozen=True)
class InfoMatrix3:
    """Diagonal information matrix for an ``(x, y, psi)`` residual."""

    diag: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        d = tuple(float(v) for v in self.diag)
        if len(d) != 3 or not all(v > 0 and math.isfinite(v) for v in d):
            raise ValueError(f"information weights must be 3 positive numbers, got {self.diag!r}")
        object.__setattr__(self, "diag", d)

    def scaled(self, k: float) -> "InfoMatrix3":
        return InfoMatrix3(tuple(k * v for v in self.diag))

    def as_array(self) -> np.ndarray:
        return np.array(self.diag)


@dataclass
class PgoConfig:
    omega_odom: InfoMatrix3 = field(default_factory=lambda: InfoMatrix3((50.0, 50.0, 100.0)))
    omega_lc: InfoMatrix3 = field(default_factory=lambda: InfoMatrix3((200.0, 200.0, 400.0)))
    subgraph_travel: float = 0.8
    max_subgraph_nodes: int = 440
    max_total_nodes: int = 3000
    max_iterations: int = 50
    convergence_tol: float = 1e-6
    min_index_gap: int = 50

    def __post_init__(self):
        if not isinstance(self.omega_odom, InfoMatrix3):
            self.omega_odom = InfoMatrix3(tuple(self.omega_odom))
        if not isinstance(self.omega_lc, InfoMatrix3):
            self.omega_lc = InfoMatrix3(tuple(self.omega_lc))
        if self.subgraph_travel <= 0:
            raise ValueError("subgraph_travel must be positive")
        if not 1 <= self.max_subgraph_nodes <= self.max_total_nodes:
            raise ValueError("need 1 <= max_subgraph_nodes <= max_total_nodes")
        if self.max_iterations < 1 or self.convergence_tol <= 0 or self.min_index_gap < 0:
            raise ValueError("invalid iteration / tolerance / gap settings")


@dataclass
class PoseNode:
    id: int
    pose: Pose2
    is_scan_pose: bool = False
    timestamp: float = 0.0


@dataclass(frozen=True)
class OdomEdge:
    from_id: int
    to_id: int
    measurement: Pose2
    info: InfoMatrix3

    def __post_init__(self):
        if self.to_id != self.from_id + 1:
            raise GraphError("odometry edges connect consecutive nodes only")


@dataclass(frozen=True)
class LoopEdge:
    """Loop-closure edge.

    Inter edges point from a local pose to node 0 and cache what is needed
    to refresh them when the external pose moves: the external pose value
    the edge was computed with, the ICP correction and the local pose and
    anchor used at that time.
    """

    from_id: int
    to_id: int
    measurement: Pose2
    info: InfoMatrix3
    kind: str = "intra"
    source_drone: Optional[int] = None
    source_pose_id: Optional[int] = None
    source_pose_snapshot: Optional[Pose2] = None
    icp_transform: Optional[Pose2] = None
    local_pose_snapshot: Optional[Pose2] = None
    anchor_pose: Optional[Pose2] = None

    def __post_init__(self):
        if self.kind not in ("intra", "inter"):
            raise ValueError(f"unknown loop edge kind {self.kind!r}")
        if self.kind == "inter" and (
            self.source_drone is None
            or self.source_pose_snapshot is None
            or self.icp_transform is None
            or self.local_pose_snapshot is None
            or self.anchor_pose is None
        ):
            raise ValueError("inter edges must cache source drone, snapshots and ICP transform")


# --------------------------------------------------------------------------
# inter-drone edge algebra


def compute_inter_edge(icp, local_pose, external_pose) -> Pose2:
    """Edge from the corrected local pose to the external pose.

    ``(icp * local)^-1 * external``; composing ``icp * local`` with the
    result reproduces ``external``.
    """
    return between(compose(icp, local_pose), external_pose)


def rebase_inter_edge(icp, local_pose, anchor_pose) -> Pose2:
    """Same constraint re-expressed against the never-moving anchor pose."""
    return between(compose(icp, local_pose), anchor_pose)


def update_inter_edge(edge: LoopEdge, external_pose_new: Pose2) -> LoopEdge:
    """Refresh an inter edge after the external pose was re-optimised.

    The measurement becomes ``(X_new X_old^-1 Z_icp X_local)^-1 X_0``.  The
    cached correction is folded forward to ``X_new X_old^-1 Z_icp`` so that
    successive updates compose like a single one.
    """
    if edge.kind != "inter":
        raise ValueError("only inter-drone edges can be refreshed from an external pose")
    shift = compose(external_pose_new, inverse(edge.source_pose_snapshot))
    icp_new = compose(shift, edge.icp_transform)
    measurement = rebase_inter_edge(icp_new, edge.local_pose_snapshot, edge.anchor_pose)
    return replace(
        edge,
        measurement=measurement,
        source_pose_snapshot=external_pose_new,
        icp_transform=icp_new,
    )


# --------------------------------------------------------------------------
# graph container


class PoseGraph:
    """Pose graph of one drone, seeded with its take-off pose."""

    def __init__(self, origin: Pose2 = IDENTITY, drone_id: int = 0,
                 config: Optional[PgoConfig] = None, timestamp: float = 0.0):
        self.drone_id = drone_id
        self.config = config or PgoConfig()
        self.nodes: list[PoseNode] = [PoseNode(0, origin, False, timestamp)]
        self.odom_edges: list[OdomEdge] = []
        self.loop_edges: list[LoopEdge] = []

    def __len__(self):
        return len(self.nodes)

    def __repr__(self):
        n_inter = sum(e.kind == "inter" for e in self.loop_edges)
        return (f"PoseGraph(drone={self.drone_id}, nodes={len(self.nodes)}, "
                f"intra={len(self.loop_edges) - n_inter}, inter={n_inter})")

    @property
    def anchor(self) -> Pose2:
        return self.nodes[0].pose

    @property
    def last_pose(self) -> Pose2:
        return self.nodes[-1].pose

    def pose(self, node_id: int) -> Pose2:
        self._check(node_id)
        return self.nodes[node_id].pose

    def copy(self) -> "PoseGraph":
        return copy.deepcopy(self)

    def _check(self, node_id: int):
        if not 0 <= node_id < len(self.nodes):
            raise GraphError(f"unknown node id {node_id} (graph has {len(self.nodes)} nodes)")

    def add_pose_with_odometry(self, odom: Pose2, timestamp: float = 0.0,
                               is_scan_pose: bool = False) -> int:
        if len(self.nodes) >= self.config.max_total_nodes:
            raise CapacityError(
                f"pose graph of drone {self.drone_id} is full ({self.config.max_total_nodes} poses)")
        new_id = len(self.nodes)
        self.nodes.append(PoseNode(new_id, compose(self.last_pose, odom), is_scan_pose, timestamp))
        self.odom_edges.append(OdomEdge(new_id - 1, new_id, odom, self.config.omega_odom))
        return new_id

    def add_intra_loop_edge(self, from_id: int, to_id: int, icp_result: Pose2) -> LoopEdge:
        """Constrain ``to_id`` (revisit) relative to ``from_id`` (earlier scan pose).

        ``icp_result`` is the relative pose of the later scan expressed in the
        earlier scan's frame.
        """
        self._check(from_id)
        self._check(to_id)
        if from_id >= to_id:
            raise GraphError("intra loop edges run from the earlier to the later pose")
        if to_id - from_id < self.config.min_index_gap:
            raise GraphError(
                f"index gap {to_id - from_id} below min_index_gap={self.config.min_index_gap}")
        edge = LoopEdge(from_id, to_id, icp_result, self.config.omega_lc, "intra")
        self.loop_edges.append(edge)
        return edge

    def add_inter_edge(self, local_id: int, icp, external_pose: Pose2, source_drone: int,
                       source_pose_id: Optional[int] = None) -> LoopEdge:
        """Install an inter-drone closure rebased onto node 0.

        ``icp`` is the world-frame correction that moves ``local_id`` onto its
        overlap with the external scan pose.
        """
        self._check(local_id)
        if source_drone >= self.drone_id:
            raise GraphError("inter loop closures are only made with lower-id drones")
        local = self.nodes[local_id].pose
        edge = LoopEdge(
            local_id, 0, rebase_inter_edge(icp, local, self.anchor), self.config.omega_lc,
            "inter", source_drone, source_pose_id, external_pose, Pose2.from_array(_as_vec(icp)),
            local, self.anchor,
        )
        self.loop_edges.append(edge)
        return edge

    def refresh_inter_edges(self, updates: dict) -> int:
        """Apply ``{(source_drone, source_pose_id): new_pose}`` to cached inter edges."""
        n = 0
        for k, edge in enumerate(self.loop_edges):
            if edge.kind != "inter":
                continue
            new = updates.get((edge.source_drone, edge.source_pose_id))
            if new is not None and new != edge.source_pose_snapshot:
                self.loop_edges[k] = update_inter_edge(edge, new)
                n += 1
        return n

    def loop_closure_counts(self) -> dict:
        inter = sum(e.kind == "inter" for e in self.loop_edges)
        return {"intra": len(self.loop_edges) - inter, "inter": inter}

    # array views used by the solver

    def pose_array(self) -> np.ndarray:
        return np.array([(n.pose.x, n.pose.y, n.pose.psi) for n in self.nodes])

    def set_pose_array(self, poses: np.ndarray):
        for node, p in zip(self.nodes[1:], poses[1:]):
            node.pose = Pose2(p[0], p[1], p[2])

    def edge_arrays(self):
        edges = [*self.odom_edges, *self.loop_edges]
        if not edges:
            empty = np.zeros((0, 3))
            return np.zeros(0, int), np.zeros(0, int), empty, empty
        ei = np.array([e.from_id for e in edges])
        ej = np.array([e.to_id for e in edges])
        z = np.array([(e.measurement.x, e.measurement.y, e.measurement.psi) for e in edges])
        w = np.array([e.info.diag for e in edges])
        return ei, ej, z, w


def _as_vec(p) -> np.ndarray:
    if isinstance(p, Pose2):
        return p.as_array()
    if hasattr(p, "to_pose"):
        return p.to_pose().as_array()
    return np.asarray(p, dtype=float)


# --------------------------------------------------------------------------
# cost and linearisation


def edge_residuals(poses: np.ndarray, ei, ej, z) -> np.ndarray:
    """``between(x_i, x_j) - z`` per edge, heading wrapped."""
    xi, xj = poses[ei], poses[ej]
    c, s = np.cos(xi[:, 2]), np.sin(xi[:, 2])
    dx, dy = xj[:, 0] - xi[:, 0], xj[:, 1] - xi[:, 1]
    r = np.empty((len(ei), 3))
    r[:, 0] = c * dx + s * dy - z[:, 0]
    r[:, 1] = -s * dx + c * dy - z[:, 1]
    r[:, 2] = wrap_angles(wrap_angles(xj[:, 2] - xi[:, 2]) - z[:, 2])
    return r


def _linearize(poses, ei, ej, z):
    xi, xj = poses[ei], poses[ej]
    c, s = np.cos(xi[:, 2]), np.sin(xi[:, 2])
    dx, dy = xj[:, 0] - xi[:, 0], xj[:, 1] - xi[:, 1]
    n = len(ei)
    r = np.empty((n, 3))
    r[:, 0] = c * dx + s * dy - z[:, 0]
    r[:, 1] = -s * dx + c * dy - z[:, 1]
    r[:, 2] = wrap_angles(wrap_angles(xj[:, 2] - xi[:, 2]) - z[:, 2])
    Ji = np.zeros((n, 3, 3))
    Ji[:, 0, 0], Ji[:, 0, 1], Ji[:, 0, 2] = -c, -s, -s * dx + c * dy
    Ji[:, 1, 0], Ji[:, 1, 1], Ji[:, 1, 2] = s, -c, -c * dx - s * dy
    Ji[:, 2, 2] = -1.0
    Jj = np.zeros((n, 3, 3))
    Jj[:, 0, 0], Jj[:, 0, 1] = c, s
    Jj[:, 1, 0], Jj[:, 1, 1] = -s, c
    Jj[:, 2, 2] = 1.0
    return r, Ji, Jj


def _cost(poses, ei, ej, z, w) -> float:
    if len(ei) == 0:
        return 0.0
    r = edge_residuals(poses, ei, ej, z)
    return float(np.sum(w * r * r))


def graph_cost(graph: PoseGraph) -> float:
    """Weighted sum of squared edge residuals over odometry, intra and inter edges."""
    ei, ej, z, w = graph.edge_arrays()
    return _cost(graph.pose_array(), ei, ej, z, w)


# --------------------------------------------------------------------------
# damped Gauss-Newton on a subset of variables


def _solve(H, b, damping):
    n = H.shape[0]
    diag = H.diagonal() if scipy.sparse.issparse(H) else np.diag(H)
    reg = damping * (diag + 1e-9) if damping > 0 else np.zeros(n)
    if scipy.sparse.issparse(H):
        A = (H + scipy.sparse.diags(reg)).tocsc()
        dx = scipy.sparse.linalg.spsolve(A, -b)
    else:
        A = H + np.diag(reg)
        dx = scipy.linalg.solve(A, -b, assume_a="sym")
    if not np.all(np.isfinite(dx)):
        raise np.linalg.LinAlgError("non-finite step")
    return dx


def _assemble(blocks_i, blocks_j, vi, vj, r, w, n_var):
    """Normal equations from per-edge 3x3 Jacobian blocks.

    ``vi``/``vj`` are variable-block indices (-1 for fixed endpoints).
    """
    wr = w * r
    rows, cols, vals = [], [], []
    b = np.zeros(3 * n_var)
    terms = ((blocks_i, vi), (blocks_j, vj))
    for Ja, va in terms:
        ma = va >= 0
        if np.any(ma):
            g = np.einsum("eki,ek->ei", Ja[ma], wr[ma])
            np.add.at(b, (3 * va[ma, None] + np.arange(3)).ravel(), g.ravel())
        for Jb, vb in terms:
            m = (va >= 0) & (vb >= 0)
            if not np.any(m):
                continue
            blk = np.einsum("eki,ek,ekj->eij", Ja[m], w[m], Jb[m])
            ridx = 3 * va[m, None, None] + np.arange(3)[None, :, None]
            cidx = 3 * vb[m, None, None] + np.arange(3)[None, None, :]
            rows.append(np.broadcast_to(ridx, blk.shape).ravel())
            cols.append(np.broadcast_to(cidx, blk.shape).ravel())
            vals.append(blk.ravel())
    n = 3 * n_var
    if rows:
        H = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))
    else:
        H = scipy.sparse.coo_matrix((n, n))
    H = H.tocsc() if n > 450 else H.toarray()
    return H, b


def _lm_loop(poses, linearize, apply_step, cost_fn, max_iter, tol):
    """Generic damped Gauss-Newton with monotone acceptance.

    Returns ``(poses, iterations, status)``; poses never get worse.
    """
    cost = cost_fn(poses)
    damping = 0.0
    status = "converged"
    it = 0
    for it in range(1, max_iter + 1):
        if cost <= NEGLIGIBLE_COST:
            return poses, it - 1, "converged"
        H, b = linearize(poses)
        if H.shape[0] == 0:
            return poses, it - 1, "converged"
        accepted = False
        for _ in range(12):
            try:
                dx = _solve(H, b, damping)
            except (np.linalg.LinAlgError, ValueError, RuntimeError):
                damping = max(1e-6, damping * 10)
                continue
            trial = apply_step(poses, dx)
            new_cost = cost_fn(trial)
            if new_cost <= cost:
                accepted = True
                break
            damping = max(1e-4, damping * 10)
        if not accepted:
            return poses, it, "stalled"
        decrease = cost - new_cost
        poses, cost = trial, new_cost
        damping = damping / 10 if damping > 1e-6 else 0.0
        if decrease <= tol * max(cost + decrease, 1e-300):
            return poses, it, "converged"
    else:
        status = "max_iterations"
    return poses, it, status


@dataclass
class OptimizeResult:
    cost_before: float
    cost: float
    iterations: int
    converged: bool
    status: str
    n_subgraphs: int = 1


def partition(graph: PoseGraph, config: Optional[PgoConfig] = None) -> list[np.ndarray]:
    """Split node ids into contiguous subgraphs by travelled distance.

    Travel is measured on the odometry measurements, so the split does not
    depend on the current estimate.
    """
    cfg = config or graph.config
    n = len(graph)
    steps = np.array([math.hypot(e.measurement.x, e.measurement.y) for e in graph.odom_edges])
    blocks, start, travel = [], 0, 0.0
    for k in range(1, n):
        travel += steps[k - 1]
        if travel >= cfg.subgraph_travel or k - start >= cfg.max_subgraph_nodes:
            blocks.append(np.arange(start, k))
            start, travel = k, 0.0
    blocks.append(np.arange(start, n))
    return blocks


def _apply_block_motion(poses, blocks_nodes, G):
    out = poses.copy()
    for nodes, g in zip(blocks_nodes, G):
        c, s = math.cos(g[2]), math.sin(g[2])
        p = poses[nodes]
        out[nodes, 0] = c * p[:, 0] - s * p[:, 1] + g[0]
        out[nodes, 1] = s * p[:, 0] + c * p[:, 1] + g[1]
        out[nodes, 2] = wrap_angles(p[:, 2] + g[2])
    return out


def optimize(graph: PoseGraph, config: Optional[PgoConfig] = None) -> OptimizeResult:
    """Minimise the graph cost in place with the hierarchical scheme.

    Nodes are split into subgraphs of roughly ``subgraph_travel`` meters.
    Each outer iteration first moves every subgraph rigidly (the skeleton
    problem, one 3-dof unknown per subgraph, the subgraph holding node 0
    fixed) and then refines each subgraph's interior with its first node and
    every outside node held fixed.  No solve ever involves more than
    ``max_subgraph_nodes`` poses.  Node 0 is never written.
    """
    cfg = config or graph.config
    if len(graph) < 2:
        c = graph_cost(graph)
        return OptimizeResult(c, c, 0, True, "converged", 1)
    ei, ej, z, w = graph.edge_arrays()
    for arr in (ei, ej):
        if len(arr) and (arr.min() < 0 or arr.max() >= len(graph)):
            raise GraphError("edge references a missing node")
    poses = graph.pose_array()
    anchor = poses[0].copy()
    blocks = partition(graph, cfg)
    n = len(poses)
    block_of = np.empty(n, dtype=int)
    for b, nodes in enumerate(blocks):
        block_of[nodes] = b

    def cost_fn(p):
        return _cost(p, ei, ej, z, w)

    cost_before = cost_fn(poses)
    if cost_before <= NEGLIGIBLE_COST:
        return OptimizeResult(cost_before, cost_before, 0, True, "converged", len(blocks))

    # skeleton: rigid motion per subgraph, edges crossing subgraphs only
    cross = block_of[ei] != block_of[ej]
    sk_ei, sk_ej, sk_z, sk_w = ei[cross], ej[cross], z[cross], w[cross]
    sk_vi, sk_vj = block_of[sk_ei] - 1, block_of[sk_ej] - 1  # block 0 is fixed
    n_sk = len(blocks) - 1

    def sk_linearize(p):
        r, Ji, Jj = _linearize(p, sk_ei, sk_ej, sk_z)
        Ji = Ji @ _node_block_jacobian(p[sk_ei])
        Jj = Jj @ _node_block_jacobian(p[sk_ej])
        return _assemble(Ji, Jj, sk_vi, sk_vj, r, sk_w, n_sk)

    def sk_apply(p, dx):
        return _apply_block_motion(p, blocks[1:], dx.reshape(-1, 3))

    # refinement passes: windows of whole subgraphs, each window's first node
    # and every node outside it held fixed
    def window_problems(offset):
        problems = []
        for nodes in _windows(blocks, cfg.max_subgraph_nodes, offset):
            var_nodes = nodes[1:]
            if len(var_nodes) == 0:
                continue
            local = np.full(n, -1)
            local[var_nodes] = np.arange(len(var_nodes))
            idx = np.flatnonzero((local[ei] >= 0) | (local[ej] >= 0))
            problems.append((var_nodes, idx, local[ei[idx]], local[ej[idx]]))
        return problems

    layouts = [window_problems(0)]
    if len(layouts[0]) > 1:
        layouts.append(window_problems(1))

    status = "converged"
    cost = cost_before
    it = 0
    inner = 10
    for it in range(1, cfg.max_iterations + 1):
        prev = cost
        try:
            if n_sk > 0 and len(sk_ei):
                poses, _, _ = _lm_loop(poses, sk_linearize, sk_apply, cost_fn, inner, cfg.convergence_tol)
            for var_nodes, idx, vi, vj in layouts[it % len(layouts)]:
                poses = _refine_subgraph(poses, var_nodes, idx, vi, vj, ei, ej, z, w, inner,
                                         cfg.convergence_tol)
        except (np.linalg.LinAlgError, ValueError, RuntimeError):
            status = "did_not_converge"
            break
        cost = cost_fn(poses)
        if prev - cost <= cfg.convergence_tol * max(prev, 1e-300):
            break
    else:
        status = "max_iterations"

    poses[0] = anchor
    if cost <= cost_before:
        graph.set_pose_array(poses)
    else:  # never hand back a worse iterate
        cost = cost_before
        status = "did_not_converge"
    return OptimizeResult(cost_before, cost, it, status == "converged", status, len(blocks))


def _windows(blocks, max_nodes, offset):
    """Group consecutive subgraphs into windows of at most ``max_nodes`` poses.

    With ``offset`` set, the first window is cut at half size so window
    boundaries alternate between sweeps.
    """
    windows, current, size = [], [], 0
    limit = max(1, max_nodes // 2) if offset else max_nodes
    for nodes in blocks:
        if current and size + len(nodes) > limit:
            windows.append(np.concatenate(current))
            current, size, limit = [], 0, max_nodes
        current.append(nodes)
        size += len(nodes)
    if current:
        windows.append(np.concatenate(current))
    return windows


def _node_block_jacobian(p):
    """d(node pose)/d(left-multiplied rigid motion) at identity."""
    J = np.zeros((len(p), 3, 3))
    J[:, 0, 0] = J[:, 1, 1] = J[:, 2, 2] = 1.0
    J[:, 0, 2] = -p[:, 1]
    J[:, 1, 2] = p[:, 0]
    return J


def _refine_subgraph(poses, var_nodes, idx, vi, vj, ei, ej, z, w, max_iter, tol):
    s_ei, s_ej, s_z, s_w = ei[idx], ej[idx], z[idx], w[idx]

    def local_cost(p):
        return _cost(p, s_ei, s_ej, s_z, s_w)

    def lin(p):
        r, Ji, Jj = _linearize(p, s_ei, s_ej, s_z)
        return _assemble(Ji, Jj, vi, vj, r, s_w, len(var_nodes))

    def step(p, dx):
        out = p.copy()
        d = dx.reshape(-1, 3)
        out[var_nodes] += d
        out[var_nodes, 2] = wrap_angles(out[var_nodes, 2])
        return out

    poses, _, _ = _lm_loop(poses, lin, step, local_cost, max_iter, tol)
    return poses


def optimize_dense(graph: PoseGraph, max_iterations: int = 100, tol: float = 1e-12) -> OptimizeResult:
    """Plain Gauss-Newton over every pose except node 0, no partitioning."""
    ei, ej, z, w = graph.edge_arrays()
    poses = graph.pose_array()
    n = len(poses)
    vi, vj = ei - 1, ej - 1

    def cost_fn(p):
        return _cost(p, ei, ej, z, w)

    def lin(p):
        r, Ji, Jj = _linearize(p, ei, ej, z)
        return _assemble(Ji, Jj, vi, vj, r, w, n - 1)

    def step(p, dx):
        out = p.copy()
        out[1:] += dx.reshape(-1, 3)
        out[1:, 2] = wrap_angles(out[1:, 2])
        return out

    before = cost_fn(poses)
    poses, it, status = _lm_loop(poses, lin, step, cost_fn, max_iterations, tol)
    graph.set_pose_array(poses)
    return OptimizeResult(before, cost_fn(poses), it, status == "converged", status, 1)


# --------------------------------------------------------------------------
# text dump


def _f(v: float) -> str:
    return repr(float(v))


def _pose_fields(p: Pose2) -> str:
    return f"{_f(p.x)} {_f(p.y)} {_f(p.psi)}"


def dump_graph(graph: PoseGraph, fp: Optional[TextIO] = None) -> str:
    """Line-oriented text dump; floats are written with full round-trip precision.

    Layout, one record per line::

        DRONE id
        NODE id x y psi timestamp is_scan
        ODOM from to dx dy dpsi wx wy wpsi
        INTRA from to dx dy dpsi wx wy wpsi
        INTER from to dx dy dpsi wx wy wpsi src_drone src_pose icp(3) ext(3) local(3) anchor(3)
    """
    out = io.StringIO()
    out.write("# swarm_slam pose graph v1\n")
    out.write(f"DRONE {graph.drone_id}\n")
    for nd in graph.nodes:
        out.write(f"NODE {nd.id} {_pose_fields(nd.pose)} {_f(nd.timestamp)} {int(nd.is_scan_pose)}\n")
    for e in graph.odom_edges:
        out.write(f"ODOM {e.from_id} {e.to_id} {_pose_fields(e.measurement)} "
                  f"{' '.join(_f(v) for v in e.info.diag)}\n")
    for e in graph.loop_edges:
        head = (f"{e.kind.upper()} {e.from_id} {e.to_id} {_pose_fields(e.measurement)} "
                f"{' '.join(_f(v) for v in e.info.diag)}")
        if e.kind == "inter":
            src_pose = -1 if e.source_pose_id is None else e.source_pose_id
            head += (f" {e.source_drone} {src_pose} {_pose_fields(e.icp_transform)} "
                     f"{_pose_fields(e.source_pose_snapshot)} {_pose_fields(e.local_pose_snapshot)} "
                     f"{_pose_fields(e.anchor_pose)}")
        out.write(head + "\n")
    text = out.getvalue()
    if fp is not None:
        fp.write(text)
    return text


def load_graph(lines: Iterable[str] | str, config: Optional[PgoConfig] = None) -> PoseGraph:
    """Inverse of :func:`dump_graph`.  Raises :class:`GraphError` with the line number."""
    if isinstance(lines, str):
        lines = lines.splitlines()
    graph = None
    drone_id = 0
    nodes, odom, loops = [], [], []

    def pose(vals, k):
        return Pose2(float(vals[k]), float(vals[k + 1]), float(vals[k + 2]))

    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            kind = tok[0]
            if kind == "DRONE":
                drone_id = int(tok[1])
            elif kind == "NODE":
                nodes.append(PoseNode(int(tok[1]), pose(tok, 2), bool(int(tok[6])), float(tok[5])))
            elif kind == "ODOM":
                odom.append(OdomEdge(int(tok[1]), int(tok[2]), pose(tok, 3),
                                     InfoMatrix3(tuple(float(v) for v in tok[6:9]))))
            elif kind == "INTRA":
                loops.append(LoopEdge(int(tok[1]), int(tok[2]), pose(tok, 3),
                                      InfoMatrix3(tuple(float(v) for v in tok[6:9])), "intra"))
            elif kind == "INTER":
                src_pose = int(tok[10])
                loops.append(LoopEdge(
                    int(tok[1]), int(tok[2]), pose(tok, 3),
                    InfoMatrix3(tuple(float(v) for v in tok[6:9])), "inter",
                    int(tok[9]), None if src_pose < 0 else src_pose,
                    pose(tok, 14), pose(tok, 11), pose(tok, 17), pose(tok, 20)))
                if len(tok) != 23:
                    raise ValueError("wrong field count")
            else:
                raise ValueError(f"unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            raise GraphError(f"line {lineno}: {exc}") from exc
    if not nodes:
        raise GraphError("graph dump contains no nodes")
    if [nd.id for nd in nodes] != list(range(len(nodes))):
        raise GraphError("node ids must be contiguous from 0")
    graph = PoseGraph(nodes[0].pose, drone_id, config, nodes[0].timestamp)
    graph.nodes = nodes
    graph.odom_edges = odom
    graph.loop_edges = loops
    for e in [*odom, *loops]:
        if not (0 <= e.from_id < len(nodes) and 0 <= e.to_id < len(nodes)):
            raise GraphError(f"edge {e.from_id}->{e.to_id} references a missing node")
    return graph
