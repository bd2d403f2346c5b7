"""Ground-truth 2D world, ToF sensing, kinematics and noise models.

Walls are line segments.  The simulated sensor rig raycasts one ray per
column; in a planar world every row of a column sees the same wall, so the
eight rows are copies of that range with independent noise and dropout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from importlib import resources
from pathlib import Path

import numpy as np

from .geometry import Pose2, compose
from .scan import DEFAULT_RIG, MAX_RANGE_MM, DepthFrame, SensorRig

DRONE_RADIUS = 0.05


class WorldError(ValueError):
    """Malformed or missing world fixture."""


@dataclass(frozen=True, eq=False)
class World:
    segments: np.ndarray  # (m, 4) rows x1 y1 x2 y2
    name: str = "world"
    wall_height: float = 2.0

    def __post_init__(self):
        seg = np.array(self.segments, dtype=float).reshape(-1, 4)
        if len(seg) == 0:
            raise WorldError("a world needs at least one wall segment")
        if not np.all(np.isfinite(seg)):
            raise WorldError("wall coordinates must be finite")
        if np.any(np.hypot(seg[:, 2] - seg[:, 0], seg[:, 3] - seg[:, 1]) <= 0):
            raise WorldError("zero-length wall segment")
        seg.setflags(write=False)
        object.__setattr__(self, "segments", seg)

    @property
    def bounds(self) -> tuple:
        s = self.segments
        xs, ys = np.r_[s[:, 0], s[:, 2]], np.r_[s[:, 1], s[:, 3]]
        return (float(xs.min()), float(ys.min()), float(xs.max()), float(ys.max()))

    def contains(self, p) -> bool:
        x0, y0, x1, y1 = self.bounds
        return x0 <= p[0] <= x1 and y0 <= p[1] <= y1

    # -- fixtures

    @classmethod
    def from_text(cls, text: str, name: str = "world") -> "World":
        rows = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tok = line.split()
            if len(tok) != 4:
                raise WorldError(f"line {lineno}: expected 'x1 y1 x2 y2', got {raw.strip()!r}")
            try:
                rows.append([float(t) for t in tok])
            except ValueError as exc:
                raise WorldError(f"line {lineno}: {exc}") from exc
        return cls(np.array(rows), name)

    @classmethod
    def from_file(cls, path) -> "World":
        path = Path(path)
        if not path.is_file():
            raise WorldError(f"world fixture not found: {path}")
        return cls.from_text(path.read_text(), path.stem)

    @classmethod
    def builtin(cls, name: str) -> "World":
        res = resources.files("swarm_slam") / "data" / "worlds" / f"{name}.txt"
        if not res.is_file():
            raise WorldError(f"world fixture not found: {name}")
        return cls.from_text(res.read_text(), name)

    def to_text(self) -> str:
        return "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in self.segments)

    # -- geometry queries

    def raycast_many(self, origins: np.ndarray, bearings: np.ndarray, max_range: float = 4.0,
                     circles: np.ndarray | None = None) -> np.ndarray:
        """Distance to the first wall (or circle) along each ray; ``inf`` if none within range.

        ``circles`` is an optional ``(k, 3)`` array of ``x, y, radius`` obstacles
        such as other drones.
        """
        o = np.asarray(origins, dtype=float).reshape(-1, 2)
        b = np.asarray(bearings, dtype=float).ravel()
        o = np.broadcast_to(o, (len(b), 2)) if len(o) == 1 else o
        d = np.column_stack([np.cos(b), np.sin(b)])
        a = self.segments[:, :2]
        v = self.segments[:, 2:] - a
        den = d[:, 0:1] * v[None, :, 1] - d[:, 1:2] * v[None, :, 0]
        ao = a[None] - o[:, None]
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            t = (ao[..., 0] * v[None, :, 1] - ao[..., 1] * v[None, :, 0]) / den
            u = (ao[..., 0] * d[:, None, 1] - ao[..., 1] * d[:, None, 0]) / den
        hit = (np.abs(den) > 1e-12) & (t > 1e-12) & (u >= 0) & (u <= 1)
        dist = np.where(hit, t, np.inf).min(axis=1)
        if circles is not None and len(circles):
            c = np.asarray(circles, dtype=float).reshape(-1, 3)
            oc = c[None, :, :2] - o[:, None]
            proj = oc[..., 0] * d[:, None, 0] + oc[..., 1] * d[:, None, 1]
            perp2 = np.sum(oc * oc, axis=-1) - proj ** 2
            half = np.sqrt(np.clip(c[None, :, 2] ** 2 - perp2, 0, None))
            tc = proj - half
            ok = (perp2 <= c[None, :, 2] ** 2) & (tc > 1e-12)
            dist = np.minimum(dist, np.where(ok, tc, np.inf).min(axis=1))
        return np.where(dist <= max_range, dist, np.inf)

    def raycast(self, origin, bearing: float, max_range: float = 4.0):
        """Distance to the nearest wall along one ray, or ``None`` beyond ``max_range``."""
        r = float(self.raycast_many(np.asarray(origin, float)[None], np.array([bearing]), max_range)[0])
        return None if math.isinf(r) else r

    def distance_to_walls(self, p) -> float:
        p = np.asarray(p, dtype=float)
        a, bb = self.segments[:, :2], self.segments[:, 2:]
        v = bb - a
        t = np.clip(np.sum((p - a) * v, axis=1) / np.sum(v * v, axis=1), 0, 1)
        closest = a + t[:, None] * v
        return float(np.min(np.hypot(*(closest - p).T)))

    def segments_crossed(self, p, q) -> int:
        """Number of walls the straight line from ``p`` to ``q`` crosses."""
        p, q = np.asarray(p, float), np.asarray(q, float)
        a, bb = self.segments[:, :2], self.segments[:, 2:]

        def orient(x, y, z):
            return (y[..., 0] - x[..., 0]) * (z[..., 1] - x[..., 1]) - (y[..., 1] - x[..., 1]) * (z[..., 0] - x[..., 0])

        d1, d2 = orient(a, bb, p), orient(a, bb, q)
        d3, d4 = orient(p, q, a), orient(p, q, bb)
        return int(np.sum((d1 * d2 < 0) & (d3 * d4 < 0)))

    def collides(self, p, radius: float = DRONE_RADIUS) -> bool:
        return self.distance_to_walls(p) < radius


@dataclass
class NoiseModel:
    odom_xy_sigma: float = 0.001
    odom_yaw_sigma: float = 0.001
    odom_yaw_bias: float = 0.005
    depth_sigma: float = 10.0
    depth_dropout: float = 0.02
    uwb_sigma: float = 0.05
    msg_loss: float = 0.0
    uwb_max_walls: int | None = None
    peer_echoes: bool = True  # other drones show up in depth frames

    def __post_init__(self):
        for f in ("odom_xy_sigma", "odom_yaw_sigma", "depth_sigma", "uwb_sigma"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be non-negative")
        for f in ("depth_dropout", "msg_loss"):
            if not 0 <= getattr(self, f) <= 1:
                raise ValueError(f"{f} must lie in [0, 1]")

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls(**{f.name: 0.0 for f in fields(cls) if f.name not in ("uwb_max_walls", "peer_echoes")},
                   peer_echoes=False)

    @property
    def is_zero(self) -> bool:
        return all(getattr(self, f.name) in (0, 0.0, None, False) for f in fields(self))


# --------------------------------------------------------------------------
# sensing


def true_ranges(world: World, pose: Pose2, rig: SensorRig = DEFAULT_RIG, peers=()) -> np.ndarray:
    """Noise-free range in meters for every (sensor, column); ``inf`` beyond range."""
    bearings = (rig.bearings + pose.psi).ravel()
    circles = np.array([(p[0], p[1], DRONE_RADIUS) for p in peers]) if len(peers) else None
    r = world.raycast_many(np.array([[pose.x, pose.y]]), bearings, rig.max_range, circles)
    return r.reshape(rig.bearings.shape)


def sense_depth_frame(world: World, pose: Pose2, noise: NoiseModel, rng: np.random.Generator,
                      rig: SensorRig = DEFAULT_RIG, peers=(), pose_id: int = 0,
                      timestamp_ms: int = 0, report_pose: Pose2 | None = None) -> DepthFrame:
    """Full 4 x 8 x 8 frame sensed from the true ``pose``.

    ``report_pose`` is the pose written into the frame (the drone's own
    estimate); it defaults to the true pose.
    """
    ranges_mm = true_ranges(world, pose, rig, peers) * 1000.0
    shape = (len(rig.yaws), rig.rows, rig.columns)
    depth = np.broadcast_to(ranges_mm[:, None, :], shape).copy()
    if noise.depth_sigma > 0:
        depth += rng.normal(0.0, noise.depth_sigma, shape)
    if noise.depth_dropout > 0:
        depth[rng.random(shape) < noise.depth_dropout] = 0.0
    depth[~np.isfinite(depth) | (depth > MAX_RANGE_MM) | (depth <= 0)] = 0.0
    return DepthFrame(pose_id, timestamp_ms, report_pose if report_pose is not None else pose, depth)


def slant_ranges_3d(world: World, pose: Pose2, altitude: float, rig: SensorRig = DEFAULT_RIG) -> np.ndarray:
    """Per-pixel range in mm for the tilted rows against walls of finite height.

    Rows looking down hit the floor when it is closer than the wall; pixels
    that would pass over the walls or beyond range are 0.
    """
    horiz = true_ranges(world, pose, rig)  # (4, cols)
    el = rig.row_elevations[None, :, None]
    h = horiz[:, None, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        slant_wall = h / np.cos(el)
        z_hit = altitude + h * np.tan(el)
        floor = np.where(el < 0, altitude / np.sin(-el), np.inf)
    wall_ok = np.isfinite(h) & (z_hit >= 0) & (z_hit <= world.wall_height)
    r = np.where(wall_ok, np.minimum(slant_wall, floor), floor)
    r = np.where(r <= rig.max_range, r * 1000.0, 0.0)
    return np.broadcast_to(r, (len(rig.yaws), rig.rows, rig.columns)).copy()


# --------------------------------------------------------------------------
# motion


def body_motion(vx: float, vy: float, omega: float, dt: float) -> Pose2:
    """Relative pose after holding a constant body twist for ``dt`` (SE(2) exponential)."""
    th = omega * dt
    if abs(th) < 1e-9:
        a, b = 1.0 - th * th / 6.0, th / 2.0
    else:
        a, b = math.sin(th) / th, (1.0 - math.cos(th)) / th
    return Pose2((a * vx - b * vy) * dt, (b * vx + a * vy) * dt, th)


def noisy_odometry(delta: Pose2, dt: float, noise: NoiseModel, rng: np.random.Generator) -> Pose2:
    """State-estimator view of a true relative motion: bias plus white noise."""
    if noise.odom_xy_sigma == 0 and noise.odom_yaw_sigma == 0 and noise.odom_yaw_bias == 0:
        return delta
    n = rng.normal(0.0, 1.0, 3)
    return Pose2(delta.x + noise.odom_xy_sigma * n[0], delta.y + noise.odom_xy_sigma * n[1],
                 delta.psi + noise.odom_yaw_bias * dt + noise.odom_yaw_sigma * n[2])


def integrate_step(true_pose: Pose2, est_pose: Pose2, cmd, dt: float, noise: NoiseModel,
                   rng: np.random.Generator):
    """Advance the true pose by ``cmd`` and dead-reckon the estimate.

    Returns ``(new_true, new_est, odometry)`` where ``odometry`` is the
    measured relative motion fed to the pose graph.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    delta = body_motion(cmd.v_x, cmd.v_y, cmd.omega, dt)
    odom = noisy_odometry(delta, dt, noise, rng)
    return compose(true_pose, delta), compose(est_pose, odom), odom


def uwb_range(world: World | None, a, b, noise: NoiseModel, rng: np.random.Generator):
    """Measured distance between two positions, or ``None`` if the exchange fails."""
    if noise.msg_loss > 0 and rng.random() < noise.msg_loss:
        return None
    if world is not None and noise.uwb_max_walls is not None:
        if world.segments_crossed(a, b) > noise.uwb_max_walls:
            return None
    d = math.hypot(b[0] - a[0], b[1] - a[1])
    if noise.uwb_sigma > 0:
        d += rng.normal(0.0, noise.uwb_sigma)
    return max(d, 0.0)
