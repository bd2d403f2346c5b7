"""SE(2) pose algebra.

Poses and relative transforms are the same group element; ``Pose2`` is the
``(x, y, psi)`` vector view used by the graph and ``Transform2`` is the
``(rotation, translation)`` view standing in for a 3x3 homogeneous matrix.
Headings are always kept in the half-open interval (-pi, pi].
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    if not math.isfinite(theta):
        raise ValueError(f"cannot wrap non-finite angle {theta!r}")
    r = theta - TWO_PI * math.ceil((theta - math.pi) / TWO_PI)
    # guard the rounding at the interval edges
    if r <= -math.pi:
        r += TWO_PI
    elif r > math.pi:
        r -= TWO_PI
    return r


def wrap_angles(theta: np.ndarray) -> np.ndarray:
    """Vectorised :func:`wrap_angle`."""
    theta = np.asarray(theta, dtype=float)
    r = theta - TWO_PI * np.ceil((theta - math.pi) / TWO_PI)
    r = np.where(r <= -math.pi, r + TWO_PI, r)
    return np.where(r > math.pi, r - TWO_PI, r)


@dataclass(frozen=True)
class Pose2:
    """Planar pose ``(x, y, psi)`` in meters and radians."""

    x: float = 0.0
    y: float = 0.0
    psi: float = 0.0

    def __post_init__(self):
        x, y, psi = float(self.x), float(self.y), float(self.psi)
        if not (math.isfinite(x) and math.isfinite(y) and math.isfinite(psi)):
            raise ValueError(f"non-finite pose ({x}, {y}, {psi})")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "psi", wrap_angle(psi))

    @classmethod
    def from_array(cls, v) -> "Pose2":
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi])

    def to_transform(self) -> "Transform2":
        return Transform2(self.psi, (self.x, self.y))

    def to_matrix(self) -> np.ndarray:
        return self.to_transform().to_matrix()

    @property
    def position(self) -> tuple[float, float]:
        return (self.x, self.y)

    def distance_to(self, other: "Pose2") -> float:
        return math.hypot(other.x - self.x, other.y - self.y)

    def __matmul__(self, other: "Pose2") -> "Pose2":
        return compose(self, other)

    def inverse(self) -> "Pose2":
        return inverse(self)


@dataclass(frozen=True)
class Transform2:
    """Rigid transform stored as rotation angle plus translation."""

    rotation: float = 0.0
    translation: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, "rotation", wrap_angle(float(self.rotation)))
        tx, ty = self.translation
        object.__setattr__(self, "translation", (float(tx), float(ty)))

    @classmethod
    def identity(cls) -> "Transform2":
        return cls()

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Transform2":
        m = np.asarray(m, dtype=float)
        return cls(math.atan2(m[1, 0], m[0, 0]), (m[0, 2], m[1, 2]))

    def to_matrix(self) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        tx, ty = self.translation
        return np.array([[c, -s, tx], [s, c, ty], [0.0, 0.0, 1.0]])

    def to_pose(self) -> Pose2:
        return Pose2(self.translation[0], self.translation[1], self.rotation)


def _as_pose(t) -> Pose2:
    if isinstance(t, Pose2):
        return t
    if isinstance(t, Transform2):
        return t.to_pose()
    return Pose2.from_array(t)


def _like(template, p: Pose2):
    return p.to_transform() if isinstance(template, Transform2) else p


def compose(a, b):
    """Group product ``a * b`` (apply ``b`` in the frame of ``a``)."""
    pa, pb = _as_pose(a), _as_pose(b)
    c, s = math.cos(pa.psi), math.sin(pa.psi)
    out = Pose2(pa.x + c * pb.x - s * pb.y, pa.y + s * pb.x + c * pb.y, pa.psi + pb.psi)
    return _like(a, out)


def inverse(a):
    """Group inverse."""
    p = _as_pose(a)
    c, s = math.cos(p.psi), math.sin(p.psi)
    out = Pose2(-c * p.x - s * p.y, s * p.x - c * p.y, -p.psi)
    return _like(a, out)


def between(a, b):
    """Relative pose ``a^-1 * b``: where ``b`` sits when seen from ``a``."""
    pa, pb = _as_pose(a), _as_pose(b)
    c, s = math.cos(pa.psi), math.sin(pa.psi)
    dx, dy = pb.x - pa.x, pb.y - pa.y
    out = Pose2(c * dx + s * dy, -s * dx + c * dy, pb.psi - pa.psi)
    return _like(a, out)


def apply_to_point(t, p) -> tuple[float, float]:
    """Rigid action of ``t`` on a 2D point."""
    pt = _as_pose(t)
    c, s = math.cos(pt.psi), math.sin(pt.psi)
    return (pt.x + c * p[0] - s * p[1], pt.y + s * p[0] + c * p[1])


def transform_points(t, points: np.ndarray) -> np.ndarray:
    """Apply ``t`` to an ``(n, 2)`` array of points."""
    pt = _as_pose(t)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    c, s = math.cos(pt.psi), math.sin(pt.psi)
    rot = np.array([[c, -s], [s, c]])
    return pts @ rot.T + np.array([pt.x, pt.y])


IDENTITY = Pose2()
