import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from swarm_slam.geometry import Pose2, compose
from swarm_slam.mapping_eval import (
    CoverageGrid,
    FrameLog,
    GlobalMap,
    MetricError,
    accessible_cells,
    assemble_map,
    ate,
    coverage,
    density_filter,
    mapping_error,
    mapping_error_segments,
)
from swarm_slam.pose_graph import PoseGraph
from swarm_slam.scan import reduce_matrix_frame
from swarm_slam.sim_world import NoiseModel, World, sense_depth_frame

ROOM = World(np.array([[0, 0, 4, 0], [4, 0, 4, 4], [4, 4, 0, 4], [0, 4, 0, 0]], float), "room")


def as_map(points, drone=0):
    pts = np.asarray(points, float).reshape(-1, 2)
    n = len(pts)
    return GlobalMap(pts, np.full(n, drone), np.zeros(n, int))


# ------------------------------------------------------------------ mapping error


def test_points_on_walls_have_zero_error():
    pts = [(1.0, 0.0), (4.0, 2.5), (0.3, 4.0), (0.0, 3.9)]
    assert mapping_error(as_map(pts), ROOM) == pytest.approx(0.0, abs=1e-12)


def test_single_offset_point():
    assert mapping_error(as_map([(2.0, 0.1)]), ROOM) == pytest.approx(0.1)


def test_mixed_offsets_match_hand_computation():
    pts = [(2.0, 0.0), (2.0, 0.3), (2.0, 3.6)]  # 0.0, 0.3 and 0.4 from the nearest wall
    assert mapping_error(as_map(pts), ROOM) == pytest.approx(math.sqrt((0 + 0.09 + 0.16) / 3), abs=1e-12)
    assert mapping_error(as_map(pts), ROOM) == pytest.approx(0.2887, abs=1e-4)


def test_nearest_line_includes_extension():
    stub = World(np.array([[0, 0, 1, 0]], float))
    beyond = as_map([(3.0, 0.0)])
    assert mapping_error(beyond, stub) == pytest.approx(0.0)
    assert mapping_error_segments(beyond, stub) == pytest.approx(2.0)


def test_empty_map_is_undefined():
    with pytest.raises(MetricError):
        mapping_error(as_map(np.zeros((0, 2))), ROOM)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(-1, 5), st.floats(-1, 5)), min_size=1, max_size=40), st.randoms())
def test_mapping_error_permutation_invariant(points, rnd):
    shuffled = list(points)
    rnd.shuffle(shuffled)
    assert mapping_error(as_map(shuffled), ROOM) == pytest.approx(mapping_error(as_map(points), ROOM),
                                                                  rel=1e-12, abs=1e-15)


# ------------------------------------------------------------------ density filter


def test_isolated_point_removed_dense_cluster_kept():
    rng = np.random.default_rng(0)
    cluster = np.column_stack([np.linspace(0, 0.2, 30), rng.normal(0, 0.002, 30)])
    out = density_filter(as_map(np.vstack([cluster, [[3.0, 3.0]]])), 0.1, 5)
    assert len(out) == 30
    assert not np.any(np.all(out.points == [3.0, 3.0], axis=1))


def test_filter_removes_exactly_the_scattered_echoes():
    rng = np.random.default_rng(42)
    # 1000 points on the room walls, 4 mm apart along each wall
    s = np.arange(250) * 0.016
    walls = np.vstack([np.column_stack([s, np.zeros(250)]), np.column_stack([np.full(250, 4.0), s]),
                       np.column_stack([4.0 - s, np.full(250, 4.0)]), np.column_stack([np.zeros(250), 4 - s])])
    walls += rng.normal(0, 0.003, walls.shape)
    # 20 echoes at least 0.5 m from any wall and from each other
    echoes = []
    while len(echoes) < 20:
        p = rng.uniform(0.5, 3.5, 2)
        if all(np.hypot(*(p - q)) > 0.3 for q in echoes):
            echoes.append(p)
    pts = np.vstack([walls, echoes])
    labels = np.r_[np.zeros(1000, bool), np.ones(20, bool)]
    order = rng.permutation(len(pts))
    gmap = GlobalMap(pts[order], np.zeros(1020, int), order)
    out = density_filter(gmap, 0.10, 5)
    assert len(out) == 1000
    assert not labels[out.pose_id].any()


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=0, max_size=80),
       st.floats(0.02, 0.3), st.integers(0, 6))
def test_filter_subset_and_idempotent(points, radius, k):
    gmap = as_map(points)
    gmap = GlobalMap(gmap.points, gmap.drone, np.arange(len(gmap)))
    once = density_filter(gmap, radius, k)
    assert set(once.pose_id.tolist()) <= set(gmap.pose_id.tolist())
    twice = density_filter(once, radius, k)
    assert_allclose(twice.points, once.points)


def test_filter_rejects_non_positive_radius():
    with pytest.raises(ValueError):
        density_filter(as_map([(0, 0)]), 0.0, 5)


# ------------------------------------------------------------------ ATE


def test_ate_examples():
    t = np.linspace(0, 10, 101)
    xy = np.column_stack([np.cos(t), np.sin(t)])
    assert ate(t, xy, t, xy, 0.025) == 0.0
    assert ate(t, xy + [0.1, 0.0], t, xy, 0.025) == pytest.approx(0.1)


def test_ate_linear_drift_closed_form():
    # error grows linearly from 0 to 0.2 m; RMSE -> 0.2 * sqrt(int_0^1 s^2 ds) = 0.2 / sqrt(3)
    n = 20001
    t = np.linspace(0, 1, n)
    true = np.column_stack([t, np.zeros(n)])
    est = true + np.column_stack([np.zeros(n), 0.2 * t])
    assert ate(t, est, t, true, 1e-6) == pytest.approx(0.2 / math.sqrt(3), rel=1e-4)


def test_ate_nearest_timestamp_association():
    true_t = np.arange(0, 1.0001, 0.05)
    true_xy = np.column_stack([true_t, np.zeros_like(true_t)])
    est_t = true_t[::2] + 0.01  # every other sample, slightly late
    est_xy = np.column_stack([true_t[::2], np.zeros_like(est_t)])
    assert ate(est_t, est_xy, true_t, true_xy, 0.025) == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(MetricError):
        ate([5.0], [[0, 0]], true_t, true_xy, 0.025)
    with pytest.raises(MetricError):
        ate([], np.zeros((0, 2)), true_t, true_xy, 0.025)


# ------------------------------------------------------------------ map assembly


def _straight_graph(n, step=0.1, origin=Pose2(1.0, 2.0, 0.0)):
    g = PoseGraph(origin, 0)
    for k in range(n - 1):
        g.add_pose_with_odometry(Pose2(step, 0.0, 0.0), 0.1 * (k + 1))
    return g


def test_noise_free_frames_reproject_onto_walls():
    rng = np.random.default_rng(0)
    g = _straight_graph(10)
    log = FrameLog()
    for pid in range(10):
        pose = g.pose(pid)
        frame = sense_depth_frame(ROOM, pose, NoiseModel.zero(), rng)
        log.append(pid, (0.0, 0.0, 0.0), reduce_matrix_frame(frame.depths), 0.1 * pid)
    gmap = assemble_map({0: g}, {0: log})
    assert len(gmap) > 0
    assert mapping_error(gmap, ROOM) < 1e-6
    assert set(gmap.pose_id.tolist()) <= set(range(10))


def test_points_move_rigidly_with_their_pose():
    depths = np.full((4, 8), 1000.0)
    g = _straight_graph(3)
    log = FrameLog()
    log.append(2, (0.05, 0.0, 0.1), depths, 0.2)
    before = assemble_map({0: g}, {0: log}).points
    shift = Pose2(0.3, -0.2, 0.4)
    poses = g.pose_array()
    new = compose(g.pose(2), shift)
    poses[2] = new.as_array()
    g.set_pose_array(poses)
    after = assemble_map({0: g}, {0: log}).points
    # manual reprojection: world = R(new) R(old)^T (p - t_old) + t_new
    old = _straight_graph(3).pose(2)
    c0, s0 = math.cos(old.psi), math.sin(old.psi)
    local = (before - [old.x, old.y]) @ np.array([[c0, -s0], [s0, c0]])
    c1, s1 = math.cos(new.psi), math.sin(new.psi)
    expected = local @ np.array([[c1, -s1], [s1, c1]]).T + [new.x, new.y]
    assert_allclose(after, expected, atol=1e-9)


def test_empty_and_dangling():
    assert len(assemble_map({}, {})) == 0
    assert len(assemble_map({0: _straight_graph(2)}, {0: FrameLog()})) == 0
    log = FrameLog()
    log.append(7, (0, 0, 0), np.full((4, 8), 1000.0), 0.0)
    with pytest.raises(MetricError):
        assemble_map({0: _straight_graph(3)}, {0: log})


# ------------------------------------------------------------------ coverage


def test_accessible_cells_stop_at_walls():
    split = World(np.vstack([ROOM.segments, [[2, 0, 2, 4]]]))
    cells = accessible_cells(split, [(1.0, 1.0)], 0.25)
    assert cells.shape == (16, 16)
    assert cells.sum() == 8 * 16
    assert cells[:8].all() and not cells[8:].any()


def _frames_along(world, poses):
    rng = np.random.default_rng(0)
    return np.array([reduce_matrix_frame(sense_depth_frame(world, p, NoiseModel.zero(), rng).depths)
                     for p in poses])


def test_stationary_drone_coverage_constant():
    poses = [Pose2(2.0, 2.0, 0.3)] * 20
    times = np.arange(20) * 0.05
    cov = coverage(ROOM, times, np.array([p.as_array() for p in poses]), _frames_along(ROOM, poses),
                   [(2.0, 2.0)])
    assert cov.fraction[0] > 0
    assert np.all(cov.fraction == cov.fraction[0])


def test_sweep_is_monotone_and_reaches_full():
    poses = [Pose2(0.5 + 3.0 * k / 59, 2.0, 0.2 * k) for k in range(60)]
    times = np.arange(60) * 0.05
    arr = np.array([p.as_array() for p in poses])
    cov = coverage(ROOM, times, arr, _frames_along(ROOM, poses), [(2.0, 2.0)])
    assert np.all(np.diff(cov.fraction) >= 0)
    assert cov.n_cells == 256
    assert cov.time_to_full is not None and cov.fraction[-1] == 1.0
    # incremental filling agrees with the one-shot call
    grid = CoverageGrid(ROOM, [(2.0, 2.0)])
    for k in range(60):
        grid.add_frames(times[k:k + 1], arr[k:k + 1], _frames_along(ROOM, poses[k:k + 1]))
    assert grid.complete
    assert grid.result(times).time_to_full == cov.time_to_full


def test_blind_drone_never_completes():
    times = np.arange(5) * 0.05
    cov = coverage(ROOM, times, np.tile([2.0, 2.0, 0.0], (5, 1)), np.zeros((5, 4, 8)), [(2.0, 2.0)])
    assert cov.time_to_full is None
    assert cov.fraction[-1] == pytest.approx(1 / 256)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.floats(0.3, 3.7), st.floats(0.3, 3.7), st.floats(-3.1, 3.1)),
                min_size=1, max_size=12))
def test_coverage_monotone_property(path):
    poses = [Pose2(*p) for p in path]
    times = np.arange(len(poses)) * 0.05
    cov = coverage(ROOM, times, np.array([p.as_array() for p in poses]), _frames_along(ROOM, poses),
                   [(2.0, 2.0)])
    assert np.all(np.diff(cov.fraction) >= 0)
    assert np.all((cov.fraction >= 0) & (cov.fraction <= 1))
