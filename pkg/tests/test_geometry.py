import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarm_slam.geometry import (
    IDENTITY,
    Pose2,
    Transform2,
    apply_to_point,
    between,
    compose,
    inverse,
    transform_points,
    wrap_angle,
    wrap_angles,
)


def mat(x, y, psi):
    """Independent homogeneous-matrix oracle."""
    c, s = math.cos(psi), math.sin(psi)
    return np.array([[c, -s, x], [s, c, y], [0, 0, 1.0]])


def unmat(m):
    return np.array([m[0, 2], m[1, 2], math.atan2(m[1, 0], m[0, 0])])


def close(p: Pose2, v, tol=1e-12):
    assert abs(p.x - v[0]) < tol and abs(p.y - v[1]) < tol
    assert abs(wrap_angle(p.psi - v[2])) < tol


coords = st.floats(-50, 50, allow_nan=False)
angles = st.floats(-10, 10, allow_nan=False)
poses = st.builds(Pose2, coords, coords, angles)


def test_compose_identity_and_inverse():
    t = Transform2(0.7, (1.5, -2.0))
    assert compose(Transform2.identity(), t) == t
    r = compose(t, inverse(t))
    assert abs(r.rotation) < 1e-12 and max(map(abs, r.translation)) < 1e-12


def test_compose_matrix_oracle():
    a = Transform2(math.pi / 2, (1, 0))
    b = Transform2(0.0, (1, 0))
    expected = unmat(mat(1, 0, math.pi / 2) @ mat(1, 0, 0))
    np.testing.assert_allclose(expected, [1, 1, math.pi / 2], atol=1e-12)
    got = compose(a, b)
    np.testing.assert_allclose(got.to_matrix(), mat(1, 0, math.pi / 2) @ mat(1, 0, 0), atol=1e-12)
    close(got.to_pose(), expected)


def test_inverse_examples():
    assert inverse(Transform2.identity()) == Transform2.identity()
    expected = unmat(np.linalg.inv(mat(1, 0, math.pi / 2)))
    np.testing.assert_allclose(expected, [0, 1, -math.pi / 2], atol=1e-12)
    close(inverse(Transform2(math.pi / 2, (1, 0))).to_pose(), expected)
    t = Transform2(2.1, (3.0, -1.0))
    close(inverse(inverse(t)).to_pose(), t.to_pose().as_array())


def test_between_examples():
    p = Pose2(3, 4, 1.0)
    close(between(p, p), [0, 0, 0])
    close(between(IDENTITY, Pose2(1, 2, 0.3)), [1, 2, 0.3])
    expected = unmat(np.linalg.inv(mat(1, 0, math.pi / 2)) @ mat(1, 1, math.pi / 2))
    np.testing.assert_allclose(expected, [1, 0, 0], atol=1e-12)
    close(between(Pose2(1, 0, math.pi / 2), Pose2(1, 1, math.pi / 2)), expected)


def test_apply_to_point_examples():
    assert apply_to_point(Transform2.identity(), (3, 4)) == (3, 4)
    np.testing.assert_allclose(apply_to_point(Transform2(math.pi, (0, 0)), (1, 0)), (-1, 0), atol=1e-15)
    oracle = mat(1, 1, math.pi / 2) @ np.array([1, 0, 1.0])
    np.testing.assert_allclose(apply_to_point(Pose2(1, 1, math.pi / 2), (1, 0)), oracle[:2], atol=1e-12)
    np.testing.assert_allclose(oracle[:2], [1, 2], atol=1e-12)


def test_wrap_examples():
    assert wrap_angle(0.0) == 0.0
    assert wrap_angle(3 * math.pi) == pytest.approx(math.pi)
    assert wrap_angle(3 * math.pi) > 0
    assert wrap_angle(-math.pi) == pytest.approx(math.pi)
    # oracle: python modulo arithmetic
    oracle = (-3 * math.pi / 2 + math.pi) % (2 * math.pi) - math.pi
    assert wrap_angle(-3 * math.pi / 2) == pytest.approx(oracle)
    assert oracle == pytest.approx(math.pi / 2)


def test_wrap_rejects_non_finite():
    with pytest.raises(ValueError):
        wrap_angle(float("nan"))
    with pytest.raises(ValueError):
        Pose2(0, float("inf"), 0)


@given(st.floats(-1e4, 1e4, allow_nan=False))
def test_wrap_interval_and_congruence(theta):
    r = wrap_angle(theta)
    assert -math.pi < r <= math.pi
    k = (theta - r) / (2 * math.pi)
    assert abs(k - round(k)) < 1e-9
    assert wrap_angles(np.array([theta]))[0] == pytest.approx(r, abs=1e-12)


@given(poses, poses, poses)
def test_group_laws(a, b, c):
    lhs = compose(compose(a, b), c)
    rhs = compose(a, compose(b, c))
    close(lhs, rhs.as_array(), tol=1e-10)
    close(compose(a, IDENTITY), a.as_array(), tol=1e-10)
    close(compose(IDENTITY, a), a.as_array(), tol=1e-10)
    close(compose(a, inverse(a)), [0, 0, 0], tol=1e-10)
    for p in (lhs, rhs, inverse(a)):
        assert -math.pi < p.psi <= math.pi


@given(poses, poses)
def test_between_compose_duality(a, b):
    close(compose(a, between(a, b)), b.as_array(), tol=1e-10)
    m = np.linalg.inv(a.to_matrix()) @ b.to_matrix()
    close(between(a, b), unmat(m), tol=1e-10)


@settings(max_examples=50)
@given(poses, st.lists(st.tuples(coords, coords), min_size=2, max_size=6))
def test_apply_preserves_distances(t, pts):
    pts = np.array(pts)
    moved = transform_points(t, pts)
    d0 = np.linalg.norm(pts[:, None] - pts[None], axis=-1)
    d1 = np.linalg.norm(moved[:, None] - moved[None], axis=-1)
    np.testing.assert_allclose(d0, d1, atol=1e-10)
    np.testing.assert_allclose(moved[0], apply_to_point(t, pts[0]), atol=1e-12)


def test_transform_round_trip():
    p = Pose2(1.25, -0.5, 2.5)
    back = Transform2.from_matrix(p.to_transform().to_matrix()).to_pose()
    close(back, p.as_array())
