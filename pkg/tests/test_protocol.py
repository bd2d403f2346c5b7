import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarm_slam.geometry import Pose2
from swarm_slam.protocol import (
    ACK,
    LINK_CAPACITY,
    POSE_UPDATE,
    RANGE_REQUEST,
    SCAN,
    TOKEN_PASS,
    App,
    ProtocolConfig,
    ProtocolSim,
    RangingRecord,
    SyntheticApp,
    decode_pose_update,
    encode_pose_update,
    predict_bandwidth,
    predict_loop_time,
    ranging_exchanges,
    supported_swarm_size,
)


class ScriptedApp(App):
    """Scans from chosen drones, canned optimisation results, and a call log."""

    def __init__(self, scan_from=(), closures=0, updates=None):
        self.scan_from = set(scan_from)
        self.closures = closures
        self.updates = updates or {}
        self.optimized = []
        self.inbox_calls = []
        self.pose_updates = []
        self.scan_id = 0

    def position(self, drone):
        return Pose2(float(drone), 0.0, 0.0)

    def measure_range(self, a, b):
        return abs(a - b) * 1.0

    def take_new_scan(self, drone):
        if drone in self.scan_from:
            self.scan_from.discard(drone)
            self.scan_id += 1
            return ("scan", drone, self.scan_id)
        return None

    def scan_size(self, scan):
        return 1680

    def process_inbox(self, drone, scans):
        self.inbox_calls.append((drone, [s for _, s in scans]))
        return len(scans), 0

    def loop_closures_since_pgo(self, drone):
        return self.closures

    def optimize(self, drone, now):
        self.optimized.append((drone, now))
        self.closures = 0
        return self.updates.get(drone, {}), True

    def receive_pose_update(self, drone, src, pose_ids, poses):
        self.pose_updates.append((drone, src, pose_ids, poses))


def make(n, app=None, loss=0.0, seed=0, first_holder=0, **kw):
    trace = []
    cfg = ProtocolConfig(n_drones=n, **kw)
    sim = ProtocolSim(cfg, np.random.default_rng(seed), app or ScriptedApp(), loss, trace, first_holder)
    return sim, trace


def test_config_validation():
    with pytest.raises(ValueError):
        ProtocolConfig(retry_limit=0)
    with pytest.raises(ValueError):
        ProtocolConfig(t_range=-1)
    assert ProtocolConfig().reclaim_timeout(2) == 6.0
    with pytest.raises(ValueError):
        RangingRecord(1, -0.1, Pose2(), 0.0)


def test_stage1_ranges_only_higher_ids():
    sim, trace = make(4, first_holder=1)
    sim.run_until(0.021 + 2 * 0.004)
    req = [(m[2], m[3]) for m in trace if m[1] == RANGE_REQUEST]
    assert req == [(1, 2), (1, 3)]
    assert sim.turn_log[0] == (pytest.approx(sim.turn_log[0][0]), 1, 2)


def test_last_drone_ranges_nobody():
    sim, trace = make(4, first_holder=3)
    sim.run_until(0.03)
    assert sim.turn_log[0][1:] == (3, 0)
    assert not [m for m in trace if m[1] == RANGE_REQUEST and m[2] == 3]


def test_full_round_six_rangings_and_records_at_both_ends():
    sim, _ = make(4)
    sim.run_until(1.0)
    rounds = sim.rounds()
    assert rounds[0] == 6 == ranging_exchanges(4)
    assert max(rounds) == 6
    d0, d3 = sim.drones[0], sim.drones[3]
    assert set(d0.ranges) == {1, 2, 3}
    assert d3.ranges[0].distance == 3.0 and d3.ranges[0].peer_position == Pose2(0, 0, 0)
    assert d0.ranges[3].peer_position == Pose2(3, 0, 0)


def test_stage3_scan_reaches_only_higher_ids():
    app = ScriptedApp(scan_from={1})
    sim, trace = make(4, app)
    sim.run_until(0.5)
    dsts = sorted(m[3] for m in trace if m[1] == SCAN)
    assert dsts == [2, 3]
    got = {d for d, scans in app.inbox_calls if scans}
    assert got == {2, 3}
    assert all(m[3] > m[2] for m in trace if m[1] in (SCAN, POSE_UPDATE))


def test_no_scan_no_message_and_empty_inbox_untouched():
    app = ScriptedApp()
    sim, trace = make(3, app)
    sim.run_until(0.5)
    assert not [m for m in trace if m[1] == SCAN]
    assert app.inbox_calls == []


def test_inbox_cap_evicts_oldest():
    sim, _ = make(2, inbox_cap=2)
    for k in range(3):
        sim._deliver_scan(1, 0, k, f"s{k}")
    inbox = sim.drones[1].scan_inbox
    assert [s for _, s in inbox] == ["s1", "s2"]
    assert sim.drones[1].stats["evictions"] == 1


def test_pgo_trigger_and_cascade():
    app = ScriptedApp(closures=3)
    sim, trace = make(4, app)
    sim.run_until(0.5)
    order = [d for d, _ in app.optimized]
    assert order[:4] == [0, 1, 2, 3]
    assert order.count(0) == 1  # no new trigger afterwards


def test_no_trigger_no_optimisation():
    app = ScriptedApp(closures=0)
    sim, _ = make(3, app)
    sim.run_until(5.0)
    assert app.optimized == []


def test_periodic_trigger():
    app = ScriptedApp(closures=0)
    sim, _ = make(2, app, pgo_period=1.0)
    sim.run_until(2.5)
    assert [d for d, _ in app.optimized].count(0) == 2


def test_stage5_pose_update_payload():
    poses = [(7, Pose2(1.0, 2.0, 0.5)), (9, Pose2(-1.5, 0.25, -2.0))]
    app = ScriptedApp(closures=3, updates={0: {2: poses}})
    sim, trace = make(3, app)
    sim.run_until(0.5)
    upd = [m for m in trace if m[1] == POSE_UPDATE]
    assert len(upd) == 1 and upd[0][2:4] == (0, 2)
    assert upd[0][4] - 8 == 24
    drone, src, ids, got = app.pose_updates[0]
    assert (drone, src, ids) == (2, 0, [7, 9])
    assert got == [p for _, p in poses]


def test_no_shared_poses_no_update():
    app = ScriptedApp(closures=3)
    sim, trace = make(3, app)
    sim.run_until(0.5)
    assert not [m for m in trace if m[1] == POSE_UPDATE]


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-3.14, 3.14)), max_size=20))
def test_pose_update_roundtrip(values):
    poses = [Pose2(*v) for v in values]
    buf = encode_pose_update(poses)
    assert len(buf) == 12 * len(poses)
    back = decode_pose_update(buf)
    assert back == [Pose2(*np.float32([p.x, p.y, p.psi]).astype(float)) for p in poses]
    assert encode_pose_update(back) == buf


def test_pose_update_bad_length():
    with pytest.raises(ValueError):
        decode_pose_update(b"\x00" * 13)


def test_listen_arbitration_lower_id_keeps():
    sim, _ = make(6, first_holder=2, listen_window_max=0.02)
    sim.run_until(0.0201)  # drone 2 is past its listening window and ranging
    assert sim.drones[2].phase == "active"
    sim.claim(5)
    assert sim.drones[5].phase == "listen"
    sim.run_until(0.1)
    assert sim.drones[5].stats["discards"] == 1
    assert sim.drones[2].stats["discards"] == 0
    assert sim.drones[2].stats["turns"] >= 1


def test_token_skips_dead_drone():
    sim, trace = make(4, first_holder=1)
    sim.kill(2)
    sim.run_until(0.2)
    passes = [m[3] for m in trace if m[1] == TOKEN_PASS][:4]
    assert passes == [2, 2, 2, 3]
    assert [c[1] for c in sim.claims[:2]] == [1, 3]


def test_all_others_dead_cycle_alone():
    sim, _ = make(3)
    sim.kill(1)
    sim.kill(2)
    sim.run_until(1.0)
    assert sim.drones[0].stats["lone_turns"] >= 3
    assert sim.drones[0].holder


def test_reclaim_timing():
    sim, _ = make(4)
    sim.run_until(0.5)
    sim.kill(0)
    sim.kill(1)
    sim.kill(3)
    # the token dies with whichever drone held it; drone 2 waits 2 * 3 s
    last = sim.drones[2].last_held
    sim.run_until(last + 5.9)
    assert not [c for c in sim.claims if c[1] == 2 and c[2] == "reclaim"]
    sim.run_until(last + 6.1)
    assert [c for c in sim.claims if c[1] == 2 and c[2] == "reclaim"]


def test_drone0_does_not_reclaim_early():
    sim, _ = make(2)
    sim.run_until(0.3)
    sim.kill(1)
    sim.run_until(1.9)
    assert not [c for c in sim.claims if c[2] == "reclaim"]


def test_determinism():
    runs = []
    for _ in range(2):
        rng = np.random.default_rng(5)
        trace = []
        sim = ProtocolSim(ProtocolConfig(n_drones=4), rng, SyntheticApp(rng, 0.2), 0.1, trace)
        sim.run_until(20.0)
        runs.append(trace)
    assert runs[0] == runs[1]


def test_loss_no_silent_scan_loss_and_liveness():
    rng = np.random.default_rng(2)
    app = SyntheticApp(rng, 0.3)
    trace = []
    sim = ProtocolSim(ProtocolConfig(n_drones=4), rng, app, 0.1, trace)
    sim.run_until(60.0)
    sent = [(m[2], m[3]) for m in trace if m[1] == SCAN]
    assert sent and all(dst > src for src, dst in sent)
    st_ = sim.stats()
    assert st_["scan_deliveries"] + st_["scan_drops"] == sum(
        (4 - 1 - src) for src in range(4) for _ in range(sim.drones[src].stats["scans_sent"]))
    assert max(sim.rounds()) <= 6
    for d in range(4):
        t = [ti for ti, di, _ in sim.turn_log if di == d]
        assert np.diff([0.0] + t + [60.0]).max() < 30.0
    assert any(m[1] == ACK and not m[6] for m in trace)


def test_loop_time_model():
    cfg = ProtocolConfig()
    assert predict_loop_time(2, cfg) == pytest.approx(0.004 + 2 * (0.002 + 0.010))
    assert ranging_exchanges(200) == 19900
    diff = predict_loop_time(10, cfg, 0.2) - predict_loop_time(10, cfg, 0.0)
    assert diff == pytest.approx(0.2 * 45 * cfg.t_scan_tx)
    times = [predict_loop_time(n, cfg) for n in range(2, 201)]
    assert all(b > a for a, b in zip(times, times[1:]))
    with pytest.raises(ValueError):
        predict_loop_time(1, cfg)


@pytest.mark.parametrize("n", [2, 4, 8])
def test_simulated_loop_time_matches_model(n):
    rng = np.random.default_rng(n)
    cfg = ProtocolConfig(n_drones=n)
    sim = ProtocolSim(cfg, rng, SyntheticApp(rng, 0.2))
    sim.run_until(30.0)
    measured = sim.loop_times().mean()
    assert measured == pytest.approx(predict_loop_time(n, cfg, 0.2), rel=0.1)


def test_bandwidth_model():
    b = predict_bandwidth(10, 5, 2048)
    assert b.scan_production == pytest.approx(10 * 5 * 2048 / 60)
    assert b.scan_production == pytest.approx(1706.67, abs=0.01)
    assert predict_bandwidth(1).swarm_total == 0
    totals = [predict_bandwidth(n).swarm_total for n in range(2, 300)]
    assert all(b > a for a, b in zip(totals, totals[1:]))
    assert predict_bandwidth(10).drone0 > predict_bandwidth(10).swarm_total / 10
    sizes = {k: supported_swarm_size(c) for k, c in LINK_CAPACITY.items()}
    assert sizes["BLE"] < sizes["UWB"] < sizes["WiFi"]
