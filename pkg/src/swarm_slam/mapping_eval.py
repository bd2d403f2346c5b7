"""Global map assembly and the evaluation metrics.

Stored depth frames reference a graph pose plus the odometry offset from
that pose, so re-assembling after an optimisation moves every frame
rigidly with its pose.  Metrics: mapping RMSE against the ground-truth
wall lines (segments extended to infinite lines), a segment-distance
companion, ATE with nearest-timestamp association, and grid coverage over
the cells reachable from the take-off positions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import wrap_angles
from .scan import DEFAULT_RIG, MAX_RANGE_MM, SensorRig


class MetricError(ValueError):
    """A metric is undefined for the given input."""


# --------------------------------------------------------------------------
# frame log and map


@dataclass
class FrameLog:
    """Reduced depth frames of one drone, each tied to a graph pose."""

    pose_id: list = field(default_factory=list)
    rel: list = field(default_factory=list)  # (dx, dy, dpsi) from the pose to the sensor
    depths: list = field(default_factory=list)  # (4, 8) mm, 0 = invalid
    time: list = field(default_factory=list)

    def append(self, pose_id: int, rel, depths, time: float):
        self.pose_id.append(int(pose_id))
        self.rel.append(tuple(float(v) for v in rel))
        self.depths.append(np.asarray(depths, dtype=float))
        self.time.append(float(time))

    def __len__(self):
        return len(self.pose_id)

    def arrays(self):
        n = len(self)
        return (np.array(self.pose_id, dtype=int).reshape(n),
                np.array(self.rel, dtype=float).reshape(n, 3),
                np.array(self.depths, dtype=float).reshape(n, 4, 8),
                np.array(self.time, dtype=float).reshape(n))


@dataclass
class GlobalMap:
    points: np.ndarray  # (n, 2) world meters
    drone: np.ndarray  # (n,)
    pose_id: np.ndarray  # (n,)
    generation: int = 0

    def __len__(self):
        return len(self.points)

    def subset(self, keep: np.ndarray) -> "GlobalMap":
        return GlobalMap(self.points[keep], self.drone[keep], self.pose_id[keep], self.generation)


def empty_map(generation: int = 0) -> GlobalMap:
    return GlobalMap(np.zeros((0, 2)), np.zeros(0, dtype=int), np.zeros(0, dtype=int), generation)


def compose_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise SE(2) composition of ``(n, 3)`` pose arrays."""
    c, s = np.cos(a[:, 2]), np.sin(a[:, 2])
    return np.column_stack([a[:, 0] + c * b[:, 0] - s * b[:, 1],
                            a[:, 1] + s * b[:, 0] + c * b[:, 1],
                            wrap_angles(a[:, 2] + b[:, 2])])


def frame_points(poses: np.ndarray, depths: np.ndarray, rig: SensorRig = DEFAULT_RIG):
    """World points of reduced frames taken at ``poses``; returns ``(points, frame index)``."""
    d = np.asarray(depths, dtype=float)
    ok = (d > 0) & (d <= MAX_RANGE_MM)
    k, s, c = np.nonzero(ok)
    r = d[ok] / 1000.0
    ang = poses[k, 2] + rig.bearings[s, c]
    pts = np.column_stack([poses[k, 0] + r * np.cos(ang), poses[k, 1] + r * np.sin(ang)])
    return pts, k


def assemble_map(graphs: dict, frames: dict, rig: SensorRig = DEFAULT_RIG,
                 generation: int = 0) -> GlobalMap:
    """Project every stored frame under its pose's current value."""
    parts = []
    for drone in sorted(frames):
        log = frames[drone]
        if not len(log):
            continue
        if drone not in graphs:
            raise MetricError(f"frames of drone {drone} have no pose graph")
        pid, rel, depths, _ = log.arrays()
        nodes = graphs[drone].pose_array()
        bad = (pid < 0) | (pid >= len(nodes))
        if bad.any():
            raise MetricError(f"drone {drone}: frame references unknown pose {int(pid[bad][0])}")
        pts, k = frame_points(compose_arrays(nodes[pid], rel), depths, rig)
        parts.append((pts, np.full(len(pts), drone), pid[k]))
    if not parts:
        return empty_map(generation)
    return GlobalMap(np.vstack([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
                     np.concatenate([p[2] for p in parts]), generation)


def density_filter(gmap: GlobalMap, radius: float = 0.10, min_neighbors: int = 5) -> GlobalMap:
    """Keep points with at least ``min_neighbors`` other kept points within ``radius``.

    Each pass counts neighbours over the whole current set, and passes repeat
    until nothing is removed, so the result is a fixed point: filtering it
    again changes nothing.
    """
    if radius <= 0:
        raise ValueError("radius must be positive")
    while len(gmap):
        tree = cKDTree(gmap.points)
        counts = tree.query_ball_point(gmap.points, radius, return_length=True) - 1
        keep = counts >= min_neighbors
        if keep.all():
            break
        gmap = gmap.subset(keep)
    return gmap


# --------------------------------------------------------------------------
# mapping error


def _as_points(points) -> np.ndarray:
    pts = np.asarray(getattr(points, "points", points), dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise MetricError("mapping error is undefined for an empty map")
    return pts


def line_distances(points, segments: np.ndarray) -> np.ndarray:
    """Distance of every point to the nearest wall line (segments extended)."""
    pts = _as_points(points)
    seg = np.asarray(segments, dtype=float)
    a, b = seg[:, :2], seg[:, 2:]
    u = (b - a) / np.linalg.norm(b - a, axis=1, keepdims=True)
    rel = pts[:, None, :] - a[None]
    cross = rel[..., 0] * u[None, :, 1] - rel[..., 1] * u[None, :, 0]
    return np.abs(cross).min(axis=1)


def segment_distances(points, segments: np.ndarray) -> np.ndarray:
    """Distance of every point to the nearest wall segment."""
    pts = _as_points(points)
    seg = np.asarray(segments, dtype=float)
    a, b = seg[:, :2], seg[:, 2:]
    ab = b - a
    rel = pts[:, None, :] - a[None]
    t = np.clip((rel * ab[None]).sum(-1) / (ab * ab).sum(-1)[None], 0.0, 1.0)
    diff = rel - t[..., None] * ab[None]
    return np.sqrt((diff ** 2).sum(-1)).min(axis=1)


def mapping_error(points, world) -> float:
    """RMSE of point-to-nearest-wall-line distances."""
    d = line_distances(points, world.segments)
    return float(np.sqrt(np.mean(d ** 2)))


def mapping_error_segments(points, world) -> float:
    d = segment_distances(points, world.segments)
    return float(np.sqrt(np.mean(d ** 2)))


# --------------------------------------------------------------------------
# trajectory error


def ate(est_times, est_xy, true_times, true_xy, tolerance: float) -> float:
    """Position RMSE over estimated samples matched to the nearest true timestamp.

    Samples without a true timestamp within ``tolerance`` are skipped.
    """
    et = np.asarray(est_times, dtype=float).reshape(-1)
    tt = np.asarray(true_times, dtype=float).reshape(-1)
    exy = np.asarray(est_xy, dtype=float).reshape(-1, 2)
    txy = np.asarray(true_xy, dtype=float).reshape(-1, 2)
    if len(tt) == 0 or len(et) == 0:
        raise MetricError("ATE needs non-empty trajectories")
    order = np.argsort(tt, kind="stable")
    tt, txy = tt[order], txy[order]
    idx = np.clip(np.searchsorted(tt, et), 1, max(len(tt) - 1, 1))
    left = np.clip(idx - 1, 0, len(tt) - 1)
    right = np.clip(idx, 0, len(tt) - 1)
    pick = np.where(np.abs(tt[left] - et) <= np.abs(tt[right] - et), left, right)
    ok = np.abs(tt[pick] - et) <= tolerance
    if not ok.any():
        raise MetricError("no estimated sample lies within tolerance of a true timestamp")
    err = exy[ok] - txy[pick[ok]]
    return float(np.sqrt(np.mean((err ** 2).sum(axis=1))))


# --------------------------------------------------------------------------
# coverage


@dataclass
class Coverage:
    times: np.ndarray  # sample times
    fraction: np.ndarray  # covered share of accessible cells at each time
    time_to_full: float | None
    n_cells: int
    first_seen: np.ndarray = field(repr=False, default=None)  # per accessible cell, inf if never


def accessible_cells(world, starts, cell: float) -> np.ndarray:
    """Boolean grid of cells reachable from ``starts`` without crossing a wall."""
    x0, y0, x1, y1 = world.bounds
    nx, ny = int(math.ceil((x1 - x0) / cell - 1e-9)), int(math.ceil((y1 - y0) / cell - 1e-9))
    centre = lambda i, j: (x0 + (i + 0.5) * cell, y0 + (j + 0.5) * cell)  # noqa: E731
    seen = np.zeros((nx, ny), dtype=bool)
    stack = []
    for s in starts:
        i, j = int((s[0] - x0) // cell), int((s[1] - y0) // cell)
        if 0 <= i < nx and 0 <= j < ny and not seen[i, j]:
            seen[i, j] = True
            stack.append((i, j))
    while stack:
        i, j = stack.pop()
        for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            a, b = i + di, j + dj
            if 0 <= a < nx and 0 <= b < ny and not seen[a, b]:
                if world.segments_crossed(centre(i, j), centre(a, b)) == 0:
                    seen[a, b] = True
                    stack.append((a, b))
    return seen


class CoverageGrid:
    """First time each accessible cell was sensed, filled frame by frame.

    A cell counts as sensed when a valid depth ray passes through it on the
    way to its return; the cell under the drone counts too.
    """

    def __init__(self, world, starts, cell: float = 0.25, rig: SensorRig = DEFAULT_RIG):
        if cell <= 0:
            raise ValueError("cell must be positive")
        self.cell, self.rig = cell, rig
        self.x0, self.y0 = world.bounds[0], world.bounds[1]
        self.accessible = accessible_cells(world, starts, cell)
        self.first = np.full(self.accessible.shape, np.inf)
        self.remaining = int(self.accessible.sum())
        step = cell / 2
        self._along = np.arange(1, int(math.ceil(rig.max_range / step)) + 1) * step

    def _mark(self, xy: np.ndarray, t: np.ndarray):
        nx, ny = self.first.shape
        i = np.floor((xy[:, 0] - self.x0) / self.cell).astype(int)
        j = np.floor((xy[:, 1] - self.y0) / self.cell).astype(int)
        ok = (i >= 0) & (i < nx) & (j >= 0) & (j < ny)
        i, j, t = i[ok], j[ok], t[ok]
        fresh = np.isinf(self.first[i, j]) & self.accessible[i, j]
        np.minimum.at(self.first, (i, j), t)
        if fresh.any():
            self.remaining = int((np.isinf(self.first) & self.accessible).sum())

    def add_frames(self, times, poses, depths):
        """Mark the cells seen by frames ``(n, 4, 8)`` taken at true ``poses`` ``(n, 3)``."""
        times = np.asarray(times, dtype=float).reshape(-1)
        poses = np.asarray(poses, dtype=float).reshape(-1, 3)
        d = np.asarray(depths, dtype=float).reshape(-1, 4, 8)
        self._mark(poses[:, :2], times)
        ok = (d > 0) & (d <= MAX_RANGE_MM)
        k, s, c = np.nonzero(ok)
        if not len(k):
            return
        r = d[ok] / 1000.0
        p = poses[k]
        ang = p[:, 2] + self.rig.bearings[s, c]
        along = np.minimum(self._along[None, :], r[:, None] - 1e-6)  # stop just short of the wall
        xs = p[:, 0:1] + along * np.cos(ang)[:, None]
        ys = p[:, 1:2] + along * np.sin(ang)[:, None]
        t = np.broadcast_to(times[k][:, None], xs.shape)
        self._mark(np.column_stack([xs.ravel(), ys.ravel()]), t.ravel())

    @property
    def complete(self) -> bool:
        return self.remaining == 0

    def result(self, times) -> Coverage:
        times = np.asarray(times, dtype=float).reshape(-1)
        cells = self.first[self.accessible]
        n = len(cells)
        frac = np.searchsorted(np.sort(cells), times, side="right") / n if n else np.zeros_like(times)
        full = float(cells.max()) if n and np.isfinite(cells).all() else None
        return Coverage(times, frac, full, n, cells)


def coverage(world, times, poses, depths, starts, cell: float = 0.25,
             rig: SensorRig = DEFAULT_RIG) -> Coverage:
    """Covered share of accessible cells over time from a log of frames.

    ``poses`` are the true sensor poses ``(n, 3)`` at ``times`` and
    ``depths`` the matching reduced frames ``(n, 4, 8)``.
    """
    grid = CoverageGrid(world, starts, cell, rig)
    times = np.asarray(times, dtype=float).reshape(-1)
    for lo in range(0, len(times), 512):
        sl = slice(lo, lo + 512)
        grid.add_frames(times[sl], np.asarray(poses)[sl], np.asarray(depths)[sl])
    return grid.result(times)
