"""Depth frames, per-column median reduction, projection and scan assembly.

A depth frame holds one sample of the four ToF sensors (front, back, left,
right).  In memory depths are floating-point millimeters with 0 meaning
invalid; on the wire they are int16 millimeters.  The planar frame keeps
one reduced value per column (4 x 8); the full-resolution frame keeps every
pixel (4 x 8 rows x 8 columns).

Wire layout, little-endian::

    int32 pose_id | int32 timestamp_ms | float32 x, y, psi | int16 depths[...]

which gives 84 bytes for a planar frame and 532 bytes for a full frame.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2, inverse, transform_points, wrap_angle

MAX_RANGE_MM = 4000.0
FRAMES_PER_SCAN = 20
MIN_SCAN_SPIN = math.radians(45.0)

_HEADER = struct.Struct("<iifff")
FRAME_SIZE_2D = _HEADER.size + 4 * 8 * 2
FRAME_SIZE_3D = _HEADER.size + 4 * 64 * 2


class FrameDecodeError(ValueError):
    """Buffer too short or of unknown length."""


class ScanError(ValueError):
    """Frames cannot form a valid scan."""


@dataclass(frozen=True)
class SensorRig:
    """Four 8x8 ToF sensors mounted front, back, left and right.

    Column ``k`` of a sensor looks along ``yaw + (k + 0.5) / 8 * fov - fov / 2``;
    row ``r`` is tilted by ``fov / 2 - (r + 0.5) / 8 * fov`` (row 0 on top).
    """

    yaws: tuple = (0.0, math.pi, math.pi / 2, -math.pi / 2)
    fov: float = math.radians(45.0)
    columns: int = 8
    rows: int = 8
    max_range: float = 4.0

    @property
    def column_offsets(self) -> np.ndarray:
        k = np.arange(self.columns)
        return (k + 0.5) / self.columns * self.fov - self.fov / 2

    @property
    def row_elevations(self) -> np.ndarray:
        r = np.arange(self.rows)
        return self.fov / 2 - (r + 0.5) / self.rows * self.fov

    @property
    def bearings(self) -> np.ndarray:
        """Body-frame bearing of every (sensor, column), shape (4, columns)."""
        return np.asarray(self.yaws)[:, None] + self.column_offsets[None, :]

    @property
    def total_fov(self) -> float:
        return len(self.yaws) * self.fov


DEFAULT_RIG = SensorRig()

FRONT, BACK, LEFT, RIGHT = range(4)


def valid_mask(depths: np.ndarray) -> np.ndarray:
    d = np.asarray(depths, dtype=float)
    return (d > 0) & (d <= MAX_RANGE_MM)


@dataclass(frozen=True, eq=False)
class DepthFrame:
    pose_id: int
    timestamp_ms: int
    pose: Pose2
    depths: np.ndarray  # (4, 8) reduced or (4, 8, 8) full, mm, 0 = invalid

    def __post_init__(self):
        d = np.array(self.depths, dtype=float)
        if d.shape not in ((4, 8), (4, 8, 8)):
            raise ValueError(f"depth block must be (4, 8) or (4, 8, 8), got {d.shape}")
        d[~valid_mask(d)] = 0.0
        d.setflags(write=False)
        object.__setattr__(self, "depths", d)

    @property
    def is_full(self) -> bool:
        return self.depths.ndim == 3

    @property
    def valid(self) -> np.ndarray:
        return self.depths > 0

    def reduced(self, min_valid: int = 3) -> "DepthFrame":
        if not self.is_full:
            return self
        return DepthFrame(self.pose_id, self.timestamp_ms, self.pose,
                          reduce_matrix_frame(self.depths, min_valid))

    def __eq__(self, other):
        if not isinstance(other, DepthFrame):
            return NotImplemented
        return (self.pose_id == other.pose_id and self.timestamp_ms == other.timestamp_ms
                and self.pose == other.pose and self.depths.shape == other.depths.shape
                and np.array_equal(self.depths, other.depths))

    def __hash__(self):
        return hash((self.pose_id, self.timestamp_ms, self.pose))


# --------------------------------------------------------------------------
# reduction


def reduce_matrix_frame(matrix: np.ndarray, min_valid: int = 3) -> np.ndarray:
    """Lower median of the valid pixels of every column.

    ``matrix`` has rows on the second-to-last axis and columns on the last,
    e.g. (8, 8) for one sensor or (4, 8, 8) for the rig.  A column with fewer
    than ``min_valid`` valid pixels reduces to 0 (invalid).
    """
    m = np.asarray(matrix, dtype=float)
    ok = valid_mask(m)
    vals = np.where(ok, m, np.inf)
    vals = np.sort(vals, axis=-2)
    count = ok.sum(axis=-2)
    idx = np.clip((count - 1) // 2, 0, None)
    med = np.take_along_axis(vals, idx[..., None, :], axis=-2)[..., 0, :]
    return np.where(count >= max(min_valid, 1), med, 0.0)


# --------------------------------------------------------------------------
# projection


def project_body(depths: np.ndarray, rig: SensorRig = DEFAULT_RIG) -> np.ndarray:
    """Valid reduced depths as body-frame points in meters, shape (n, 2)."""
    d = np.asarray(depths, dtype=float)
    ok = valid_mask(d)
    r = d[ok] / 1000.0
    b = rig.bearings[ok]
    return np.column_stack([r * np.cos(b), r * np.sin(b)])


def project_frame(frame: DepthFrame, rig: SensorRig = DEFAULT_RIG, pose: Pose2 | None = None) -> np.ndarray:
    """World-frame points of a frame, taken from ``pose`` if given else ``frame.pose``."""
    depths = frame.reduced().depths if frame.is_full else frame.depths
    return transform_points(pose if pose is not None else frame.pose, project_body(depths, rig))


def project_frame_3d(matrix_frame: np.ndarray, pose: Pose2, altitude: float,
                     rig: SensorRig = DEFAULT_RIG) -> np.ndarray:
    """Every valid pixel of a (4, 8, 8) frame as a world point ``(x, y, z)``."""
    d = np.asarray(matrix_frame, dtype=float)
    if d.shape != (len(rig.yaws), rig.rows, rig.columns):
        raise ValueError(f"expected a ({len(rig.yaws)}, {rig.rows}, {rig.columns}) frame, got {d.shape}")
    ok = valid_mask(d)
    az = np.broadcast_to(rig.bearings[:, None, :], d.shape)[ok] + pose.psi
    el = np.broadcast_to(rig.row_elevations[None, :, None], d.shape)[ok]
    r = d[ok] / 1000.0
    horiz = r * np.cos(el)
    return np.column_stack([pose.x + horiz * np.cos(az), pose.y + horiz * np.sin(az),
                            altitude + r * np.sin(el)])


# --------------------------------------------------------------------------
# scans


@dataclass(frozen=True, eq=False)
class Scan:
    """Map tile of up to 640 points, stored in the frame of ``anchor_pose``."""

    scan_id: int
    owner_drone: int
    anchor_pose: Pose2
    points: np.ndarray
    pose_id: int = 0
    timestamp_ms: int = 0
    n_frames: int = FRAMES_PER_SCAN

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(-1, 2)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def world_points(self, anchor: Pose2 | None = None) -> np.ndarray:
        return transform_points(anchor if anchor is not None else self.anchor_pose, self.points)

    def wire_size(self) -> int:
        """Bytes when sent as the serialized planar frames it was built from."""
        return self.n_frames * FRAME_SIZE_2D


def heading_span(frames) -> float:
    """Extent of the unwrapped heading sequence of ``frames`` in radians."""
    psi = [f.pose.psi for f in frames]
    steps = [wrap_angle(b - a) for a, b in zip(psi[:-1], psi[1:])]
    cum = np.concatenate([[0.0], np.cumsum(steps)])
    return float(cum.max() - cum.min())


def build_scan(frames, anchor: Pose2, scan_id: int = 0, owner_drone: int = 0,
               pose_id: int = 0, rig: SensorRig = DEFAULT_RIG,
               min_spin: float = MIN_SCAN_SPIN) -> Scan:
    """Stack the projections of 20 consecutive frames in the anchor frame."""
    frames = list(frames)
    if len(frames) != FRAMES_PER_SCAN:
        raise ScanError(f"a scan needs exactly {FRAMES_PER_SCAN} frames, got {len(frames)}")
    span = heading_span(frames)
    if span < min_spin - 1e-9:
        raise ScanError(f"heading span {math.degrees(span):.1f} deg is below the "
                        f"{math.degrees(min_spin):.0f} deg needed for full coverage")
    world = np.vstack([project_frame(f, rig) for f in frames])
    points = transform_points(inverse(anchor), world)
    return Scan(scan_id, owner_drone, anchor, points, pose_id, frames[0].timestamp_ms, len(frames))


# --------------------------------------------------------------------------
# wire format


def _depths_to_int16(depths: np.ndarray) -> np.ndarray:
    d = np.asarray(depths, dtype=float)
    out = np.where(valid_mask(d), np.rint(d), 0.0)
    return out.astype("<i2")


def serialize_frame(frame: DepthFrame) -> bytes:
    head = _HEADER.pack(int(frame.pose_id), int(frame.timestamp_ms),
                        frame.pose.x, frame.pose.y, frame.pose.psi)
    return head + _depths_to_int16(frame.depths).tobytes(order="C")


def deserialize_frame(buf: bytes) -> DepthFrame:
    buf = bytes(buf)
    if len(buf) == FRAME_SIZE_2D:
        shape = (4, 8)
    elif len(buf) == FRAME_SIZE_3D:
        shape = (4, 8, 8)
    else:
        raise FrameDecodeError(
            f"frame buffer of {len(buf)} bytes, expected {FRAME_SIZE_2D} or {FRAME_SIZE_3D}")
    pose_id, ts, x, y, psi = _HEADER.unpack_from(buf)
    depths = np.frombuffer(buf, dtype="<i2", offset=_HEADER.size).reshape(shape)
    return DepthFrame(pose_id, ts, Pose2(x, y, psi), depths.astype(float))


def wire_exact(frame: DepthFrame) -> DepthFrame:
    """The frame as it reads back after a trip over the wire."""
    return deserialize_frame(serialize_frame(frame))
