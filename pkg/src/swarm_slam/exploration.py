"""Cruise / Spinning / Caution exploration state machine.

Inputs are the reduced 4 x 8 depth row (mm, 0 = invalid; sensors ordered
front, back, left, right) and the neighbours heard over ranging.  Output is
a body-frame velocity command.  Positive ``omega`` turns counter-clockwise
(to the left); clockwise spins turn the drone to the right.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .geometry import Pose2, between
from .scan import BACK, DEFAULT_RIG, FRONT, LEFT, RIGHT, SensorRig, project_body, valid_mask


class Mode(str, Enum):
    CRUISE = "cruise"
    SPINNING = "spinning"
    CAUTION = "caution"


class Spin(str, Enum):
    CW = "cw"
    CCW = "ccw"

    @property
    def sign(self) -> float:
        return -1.0 if self is Spin.CW else 1.0


@dataclass
class ExploreParams:
    v_min: float = 0.1
    v_max: float = 0.5
    slope_m: float = 0.5
    d_obj: float = 0.6
    d_S: float = 0.7
    delta_d: float = 0.3
    d_C: float = 0.25
    omega_spin: float = 1.0
    k_side: float = 1.0
    k_align: float = 1.0
    v_rep: float = 0.2
    line_rms: float = 0.05
    neighbor_stale_s: float = 1.0

    def __post_init__(self):
        if not 0 <= self.v_min < self.v_max:
            raise ValueError("need 0 <= v_min < v_max")
        if not 0 < self.d_C < self.d_S:
            raise ValueError("need 0 < d_C < d_S")
        if self.delta_d <= 0 or self.omega_spin <= 0 or self.d_obj <= 0:
            raise ValueError("delta_d, omega_spin and d_obj must be positive")


@dataclass(frozen=True)
class VelocityCommand:
    v_x: float = 0.0
    v_y: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.v_x, self.v_y, self.omega)):
            raise ValueError("velocity command must be finite")

    @property
    def speed(self) -> float:
        return math.hypot(self.v_x, self.v_y)


STOP = VelocityCommand()


@dataclass(frozen=True)
class Neighbor:
    peer: int
    d_uwb: float
    position: tuple
    area: str


@dataclass
class ExploreState:
    mode: Mode = Mode.CRUISE
    spin_direction: Spin = Spin.CCW
    spin_accumulated: float = 0.0


# --------------------------------------------------------------------------
# perception helpers


def sensor_min(depths: np.ndarray, sensor: int, max_range: float = 4.0) -> float:
    """Closest valid reading of one sensor in meters; ``max_range`` when all invalid."""
    row = np.asarray(depths, dtype=float)[sensor]
    ok = valid_mask(row)
    return float(row[ok].min()) / 1000.0 if ok.any() else max_range


def side_line_angle(depths: np.ndarray, sensor: int, rms_max: float, rig: SensorRig = DEFAULT_RIG):
    """Direction (body frame, in (-pi/2, pi/2]) of a wall seen by a side sensor, or ``None``.

    Total-least-squares line through the sensor's projected points; a
    surface counts as flat when the RMS orthogonal residual is below
    ``rms_max``.
    """
    only = np.zeros_like(np.asarray(depths, dtype=float))
    only[sensor] = np.asarray(depths, dtype=float)[sensor]
    pts = project_body(only, rig)
    if len(pts) < 3:
        return None
    c = pts - pts.mean(axis=0)
    w, v = np.linalg.eigh(c.T @ c)
    rms = math.sqrt(max(w[0], 0.0) / len(pts))
    if rms >= rms_max:
        return None
    dx, dy = v[:, 1]
    ang = math.atan2(dy, dx)
    if ang > math.pi / 2:
        ang -= math.pi
    elif ang <= -math.pi / 2:
        ang += math.pi
    return ang


def area_of(bearing: float) -> str:
    """Quadrant of a body-frame bearing: F, L, B or R (45 deg boundaries)."""
    a = math.degrees(bearing)
    if -45.0 <= a <= 45.0:
        return "F"
    if 45.0 < a <= 135.0:
        return "L"
    if -135.0 <= a < -45.0:
        return "R"
    return "B"


def classify_neighbors(self_pose: Pose2, peers, now: float | None = None,
                       stale_after: float = 1.0) -> list[Neighbor]:
    """Body-frame quadrant of every peer from its last reported position.

    ``peers`` yields ``(peer_id, position, d_uwb, timestamp)``; records older
    than ``stale_after`` seconds are dropped when ``now`` is given.
    """
    out = []
    for peer, pos, d_uwb, stamp in peers:
        if now is not None and now - stamp > stale_after:
            continue
        rel = between(self_pose, Pose2(pos[0], pos[1], 0.0))
        out.append(Neighbor(peer, float(d_uwb), (float(pos[0]), float(pos[1])),
                            area_of(math.atan2(rel.y, rel.x))))
    return out


def caution_trigger(neighbors, params: ExploreParams) -> bool:
    return any(n.area == "F" and n.d_uwb < 2 * params.d_obj for n in neighbors)


# --------------------------------------------------------------------------
# per-mode steps


def _clip(v, lo, hi):
    return min(max(v, lo), hi)


def cruise_step(depths, neighbors, params: ExploreParams):
    """Wall-following forward motion; returns ``(command, next_mode or None)``."""
    d = sensor_min(depths, FRONT)
    if caution_trigger(neighbors, params):
        return STOP, Mode.CAUTION
    if d < params.d_S:
        return STOP, Mode.SPINNING
    v_x = _clip(params.slope_m * (d - params.d_S), params.v_min, params.v_max)
    d_l, d_r = sensor_min(depths, LEFT), sensor_min(depths, RIGHT)
    v_y, omega = 0.0, 0.0
    side = None
    if d_r < 2 * params.d_obj:  # right wall has priority
        side, v_y = RIGHT, -params.k_side * (d_r - params.d_obj)
    elif d_l < 2 * params.d_obj:
        side, v_y = LEFT, params.k_side * (d_l - params.d_obj)
    if side is not None:
        ang = side_line_angle(depths, side, params.line_rms)
        if ang is not None:
            omega = params.k_align * ang
    # lateral correction takes the speed budget first; forward speed keeps v_min
    v_y_max = math.sqrt(params.v_max ** 2 - params.v_min ** 2)
    v_y = _clip(v_y, -v_y_max, v_y_max)
    v_x = min(v_x, math.sqrt(max(params.v_max ** 2 - v_y ** 2, 0.0)))
    return VelocityCommand(v_x, v_y, omega), None


def spin_decision(d_l: float, d_r: float, neighbors, params: ExploreParams,
                  rng: np.random.Generator) -> Spin:
    """Turn away from a near side wall; at an open junction turn toward fewer peers."""
    if d_l < 2 * params.d_obj:
        return Spin.CW
    if d_r < 2 * params.d_obj:
        return Spin.CCW
    n_left = sum(n.area == "L" for n in neighbors)
    n_right = sum(n.area == "R" for n in neighbors)
    if n_right < n_left:
        return Spin.CW
    if n_left < n_right:
        return Spin.CCW
    return Spin.CW if rng.random() < 0.5 else Spin.CCW


def spinning_step(depths, params: ExploreParams, direction: Spin, spun: float = 0.0,
                  min_spin: float = 0.0):
    """Rotate in place until the path ahead is clear (with hysteresis)."""
    d = sensor_min(depths, FRONT)
    if d > params.d_S + params.delta_d and spun >= min_spin:
        return STOP, Mode.CRUISE
    return VelocityCommand(0.0, 0.0, direction.sign * params.omega_spin), None


def caution_step(depths, params: ExploreParams, direction: Spin, spun: float, neighbors=()):
    """Turn around by 180 deg, pushing away from anything closer than ``d_C``."""
    if spun >= math.pi:
        return STOP, Mode.CRUISE
    near = {
        "F": sensor_min(depths, FRONT), "B": sensor_min(depths, BACK),
        "L": sensor_min(depths, LEFT), "R": sensor_min(depths, RIGHT),
    }
    for n in neighbors:
        near[n.area] = min(near[n.area], n.d_uwb)
    area, dist = min(near.items(), key=lambda kv: kv[1])
    v_x = v_y = 0.0
    if dist < params.d_C:
        v_x, v_y = {"F": (-params.v_rep, 0.0), "B": (params.v_rep, 0.0),
                    "L": (0.0, -params.v_rep), "R": (0.0, params.v_rep)}[area]
    return VelocityCommand(v_x, v_y, direction.sign * params.omega_spin), None


# --------------------------------------------------------------------------
# state machine


@dataclass
class Explorer:
    """Per-drone wrapper that tracks mode, spin direction and accumulated turn."""

    params: ExploreParams = field(default_factory=ExploreParams)
    rng: np.random.Generator = field(default_factory=lambda: np.random.default_rng(0))
    state: ExploreState = field(default_factory=ExploreState)

    def step(self, depths, neighbors=(), dt: float = 0.05, min_spin: float = 0.0) -> VelocityCommand:
        """One control tick.

        ``min_spin`` keeps a spin going until at least that angle has been
        turned (used while a scan is being recorded).
        """
        p, st = self.params, self.state
        if st.mode is Mode.CRUISE:
            cmd, nxt = cruise_step(depths, neighbors, p)
            if nxt is Mode.SPINNING:
                st.spin_direction = spin_decision(sensor_min(depths, LEFT), sensor_min(depths, RIGHT),
                                                  neighbors, p, self.rng)
            elif nxt is Mode.CAUTION:
                st.spin_direction = Spin.CCW
        elif st.mode is Mode.SPINNING:
            cmd, nxt = spinning_step(depths, p, st.spin_direction, st.spin_accumulated, min_spin)
        else:
            cmd, nxt = caution_step(depths, p, st.spin_direction, st.spin_accumulated, neighbors)
        if nxt is not None:
            st.mode = nxt
            st.spin_accumulated = 0.0
            # act in the new mode on the same tick
            if nxt is Mode.SPINNING:
                cmd, _ = spinning_step(depths, p, st.spin_direction, 0.0, math.inf)
            elif nxt is Mode.CAUTION:
                cmd, _ = caution_step(depths, p, st.spin_direction, 0.0, neighbors)
            else:
                cmd, _ = cruise_step(depths, (), p)
        if st.mode is not Mode.CRUISE:
            st.spin_accumulated = min(st.spin_accumulated + abs(cmd.omega) * dt, math.tau - 1e-12)
        return cmd
