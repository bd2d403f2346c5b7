import math

import numpy as np
import pytest

from synthetic import STRAIGHT_WALL, displaced_pair, spin_scan
from swarm_slam.geometry import Pose2, between, compose, inverse, transform_points, wrap_angle
from swarm_slam.icp import IcpConfig, match_scans, rigid_align, should_pair, world_correction
from swarm_slam.scan import Scan


def err(a: Pose2, b: Pose2):
    return math.hypot(a.x - b.x, a.y - b.y), abs(wrap_angle(a.psi - b.psi))


def test_config_validation():
    with pytest.raises(ValueError):
        IcpConfig(min_inlier_fraction=0)
    with pytest.raises(ValueError):
        IcpConfig(max_correspondence_dist=-1)


def test_rigid_align_exact():
    rng = np.random.default_rng(0)
    src = rng.uniform(-2, 2, (30, 2))
    T = Pose2(0.3, -0.7, 1.1)
    est = rigid_align(src, transform_points(T, src))
    assert max(err(est, T)) < 1e-12


def test_identical_scans():
    pts = spin_scan()
    res = match_scans(pts, pts)
    assert res.converged
    assert max(err(res.transform, Pose2())) < 1e-12
    assert res.rmse == pytest.approx(0.0, abs=1e-12)
    assert res.inlier_fraction == 1.0


def test_corner_known_displacement():
    clean = spin_scan()
    truth = Pose2(0.2, -0.1, math.radians(10))
    res = match_scans(clean, transform_points(inverse(truth), clean), Pose2())
    assert res.converged
    dt, dr = err(res.transform, truth)
    assert dt < 1e-3 and dr < 1e-3


def test_accepts_scan_objects():
    clean = spin_scan()
    truth = Pose2(0.1, 0.05, 0.05)
    a = Scan(0, 0, Pose2(), clean)
    b = Scan(1, 0, Pose2(), transform_points(inverse(truth), clean))
    assert max(err(match_scans(a, b).transform, truth)) < 1e-6


def test_noisy_recovery_percentile():
    rng = np.random.default_rng(4)
    trans, rot = [], []
    for _ in range(40):
        ref, mov, truth = displaced_pair(rng, depth_sigma_m=0.02)
        res = match_scans(ref, mov)
        dt, dr = err(res.transform, truth)
        trans.append(dt)
        rot.append(dr)
    assert np.percentile(trans, 95) <= 0.02
    assert np.percentile(rot, 95) <= math.radians(1)


def test_truncated_mse_non_increasing():
    rng = np.random.default_rng(1)
    for _ in range(20):
        ref, mov, _ = displaced_pair(rng, depth_sigma_m=0.01)
        res = match_scans(ref, mov)
        for stage in res.history:
            assert all(b <= a + 1e-12 for a, b in zip(stage[:-1], stage[1:]))


def test_symmetry():
    rng = np.random.default_rng(2)
    for _ in range(10):
        ref, mov, _ = displaced_pair(rng)
        ab = match_scans(ref, mov).transform
        ba = match_scans(mov, ref).transform
        dt, dr = err(compose(ab, ba), Pose2())
        assert dt < 2e-4 and dr < 2e-4


def test_straight_wall_is_degenerate():
    pts = spin_scan(STRAIGHT_WALL, spin_deg=50)
    moved = transform_points(Pose2(0.3, 0.0, 0.0), pts)
    res = match_scans(pts, moved)
    assert not res.converged
    assert "degenerate" in res.reason


def test_low_overlap_rejected():
    pts = spin_scan()
    far = pts + np.array([10.0, 10.0])
    res = match_scans(pts, far)
    assert not res.converged


def test_world_correction_convention():
    # two anchors whose estimates are off; ICP reports the true relative pose
    ref_anchor, true_mov = Pose2(1.0, 2.0, 0.3), Pose2(1.5, 2.2, 0.6)
    est_mov = compose(Pose2(0.05, -0.03, 0.02), true_mov)
    T = between(ref_anchor, true_mov)
    Z = world_correction(T, ref_anchor, est_mov)
    corrected = compose(Z, est_mov)
    assert max(err(corrected, true_mov)) < 1e-12


def test_should_pair():
    assert should_pair(0.8, 1.0)
    assert not should_pair(1.0, 1.0)
    assert not should_pair(3.0, 1.0)
    with pytest.raises(ValueError):
        should_pair(-0.1)


def test_different_viewpoints_exact_without_noise():
    # two spins at different places sample the walls at different spots
    from swarm_slam.sim_world import World

    maze = World.builtin("maze2")
    rng = np.random.default_rng(0)
    exact = 0
    for _ in range(20):
        a = Pose2(rng.uniform(0.5, 1.2), rng.uniform(0.6, 4.4), rng.uniform(-3, 3))
        b = Pose2(a.x + rng.uniform(-0.4, 0.4), a.y + rng.uniform(-0.4, 0.4), rng.uniform(-3, 3))
        truth = between(a, b)
        res = match_scans(spin_scan(maze, a), spin_scan(maze, b), truth)
        if res.converged:
            assert max(err(res.transform, truth)) < 1e-9
            exact += 1
    assert exact >= 18


def test_refinement_beats_point_to_point_with_noise():
    from swarm_slam.sim_world import World

    maze = World.builtin("maze2")
    rng = np.random.default_rng(1)
    plain, refined = [], []
    for _ in range(20):
        a = Pose2(rng.uniform(0.5, 1.2), rng.uniform(0.6, 4.4), rng.uniform(-3, 3))
        b = Pose2(a.x + rng.uniform(-0.4, 0.4), a.y + rng.uniform(-0.4, 0.4), rng.uniform(-3, 3))
        A = spin_scan(maze, a, depth_sigma_m=0.01, rng=rng)
        B = spin_scan(maze, b, depth_sigma_m=0.01, rng=rng)
        truth = between(a, b)
        plain.append(err(match_scans(A, B, truth, IcpConfig(refine_iterations=0)).transform, truth)[0])
        refined.append(err(match_scans(A, B, truth).transform, truth)[0])
    assert np.median(refined) < np.median(plain)
    assert np.percentile(refined, 95) < 0.01
