"""Closed-loop swarm simulation: sensing, exploration, kinematics, radio and SLAM.

Every drone runs the same loop at a fixed ``dt``: sense a depth frame at
its true pose, pick a velocity command, move, and dead-reckon.  Graph poses
are sampled by time or travelled distance.  A scan is recorded over the
first 20 frames of a spin; on completion it is matched against the drone's
own earlier scans (intra closures) and queued for the token protocol, whose
app hooks below run inter-drone matching and the cascaded optimisation.

At the end of the mission the graphs are saved, one more cascade runs
offline (every drone aligns to the final poses of the lower ids), and the
map and metrics are computed from the result.  :func:`replay_run` repeats
that last part from the saved files.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import svg
from .config import ScenarioConfig, config_to_dict, dump_config, load_config
from .exploration import Explorer, Mode, classify_neighbors
from .geometry import Pose2, between, compose, wrap_angle
from .icp import match_scans, should_pair, world_correction
from .mapping_eval import (CoverageGrid, FrameLog, assemble_map, ate, compose_arrays, density_filter,
                           mapping_error, mapping_error_segments)
from .pose_graph import PoseGraph, dump_graph, graph_cost, load_graph, optimize
from .protocol import App, ProtocolSim
from .scan import (DEFAULT_RIG, FRAME_SIZE_2D, FRAME_SIZE_3D, FRAMES_PER_SCAN, DepthFrame, ScanError,
                   build_scan, project_frame_3d, reduce_matrix_frame)
from .sim_world import World, WorldError, integrate_step, noisy_odometry, sense_depth_frame, \
    slant_ranges_3d, uwb_range


class CollisionAbort(RuntimeError):
    pass


def load_world(name: str) -> World:
    """Builtin fixture by name, else a segment file path."""
    path = Path(name)
    if path.suffix or path.exists() or "/" in name:
        if not path.exists():
            raise WorldError(f"world fixture not found: {name}")
        return World.from_file(path)
    return World.builtin(name)


# --------------------------------------------------------------------------
# per-drone state


@dataclass
class DroneSim:
    id: int
    true_pose: Pose2
    graph: PoseGraph
    explorer: Explorer
    rng: np.random.Generator
    dr_pose: Pose2  # odometry only, never corrected
    since: Pose2 = field(default_factory=Pose2)  # odometry since the last graph pose
    since_travel: float = 0.0
    last_node_time: float = 0.0
    frames: FrameLog = field(default_factory=FrameLog)
    frames_3d: list = field(default_factory=list)
    node_true: list = field(default_factory=list)  # (t, x, y, psi) per graph pose
    node_dr: list = field(default_factory=list)
    scans: list = field(default_factory=list)
    recording: list | None = None
    rec_rel: Pose2 = field(default_factory=Pose2)
    rec_anchor: int = 0
    travel_since_scan: float = math.inf
    unsent: object = None
    published: dict = field(default_factory=dict)  # scan pose id -> float32 value last sent
    pending: dict = field(default_factory=dict)  # (src drone, pose id) -> Pose2
    closures_since_pgo: int = 0
    collisions: int = 0

    @property
    def est_pose(self) -> Pose2:
        return compose(self.graph.last_pose, self.since)


def _f32(p: Pose2) -> tuple:
    return tuple(np.float32(v).item() for v in (p.x, p.y, p.psi))


def _within_gate(t: Pose2, guess: Pose2, cfg) -> bool:
    d = between(guess, t)
    return math.hypot(d.x, d.y) < cfg.slam.max_correction_xy and abs(d.psi) < cfg.slam.max_correction_psi


# --------------------------------------------------------------------------
# protocol hooks


class SwarmApp(App):
    def __init__(self, sim: "Scenario"):
        self.sim = sim

    def position(self, drone):
        return self.sim.drones[drone].est_pose

    def measure_range(self, a, b):
        s = self.sim
        return uwb_range(s.world, s.drones[a].true_pose.position, s.drones[b].true_pose.position,
                         s.range_noise, s.range_rng)

    def take_new_scan(self, drone):
        d = self.sim.drones[drone]
        scan, d.unsent = d.unsent, None
        if scan is None:
            return None
        anchor = d.graph.pose(scan.pose_id)
        d.published[scan.pose_id] = _f32(anchor)
        return dataclasses.replace(scan, anchor_pose=anchor)

    def scan_size(self, scan):
        return scan.n_frames * (FRAME_SIZE_3D if self.sim.cfg.mode == "3d" else FRAME_SIZE_2D)

    def process_inbox(self, drone, scans):
        s, d = self.sim, self.sim.drones[drone]
        edges = failures = 0
        for (src, _), ext in scans:
            own = None
            for sc in d.scans:  # earliest own scan within the pairing distance
                if should_pair(d.graph.pose(sc.pose_id).distance_to(ext.anchor_pose), s.cfg.slam.pair_distance):
                    own = sc
                    break
            if own is None:
                continue
            local = d.graph.pose(own.pose_id)
            guess = between(ext.anchor_pose, local)
            res = match_scans(ext, own, guess, s.cfg.icp)
            s.icp_log.append((s.now, drone, "inter", res.converged, res.reason))
            if not res.converged or not _within_gate(res.transform, guess, s.cfg):
                failures += 1
                continue
            z = world_correction(res.transform, ext.anchor_pose, local)
            d.graph.add_inter_edge(own.pose_id, z, ext.anchor_pose, src, ext.pose_id)
            d.closures_since_pgo += 1
            edges += 1
        return edges, failures

    def loop_closures_since_pgo(self, drone):
        return self.sim.drones[drone].closures_since_pgo

    def optimize(self, drone, now):
        s, d = self.sim, self.sim.drones[drone]
        d.graph.refresh_inter_edges(d.pending)
        d.pending = {}
        res = optimize(d.graph, s.cfg.pgo)
        s.pgo_log.append((now, drone, res.cost_before, res.cost, res.converged, "mission"))
        d.closures_since_pgo = 0
        changed = []
        for pid in sorted(d.published):
            value = d.graph.pose(pid)
            if _f32(value) != d.published[pid]:
                d.published[pid] = _f32(value)
                changed.append((pid, value))
        return {j: changed for j in range(drone + 1, s.cfg.n_drones)}, res.converged

    def receive_pose_update(self, drone, src, pose_ids, poses):
        pend = self.sim.drones[drone].pending
        for pid, p in zip(pose_ids, poses):
            pend[(src, pid)] = p


# --------------------------------------------------------------------------
# the mission


class Scenario:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.world = load_world(cfg.world)
        self.now = 0.0
        n = cfg.n_drones
        self.drones = []
        for i in range(n):
            x, y, psi = cfg.takeoff[i]
            start = Pose2(float(x), float(y), float(psi))
            seed = cfg.drone_seed(i)
            g = PoseGraph(start, i, cfg.pgo)
            d = DroneSim(i, start, g, Explorer(cfg.explore, np.random.default_rng([seed, i, 1])),
                         np.random.default_rng([seed, i]), start)
            d.node_true.append((0.0, *start.as_array()))
            d.node_dr.append(tuple(start.as_array()))
            self.drones.append(d)
        self.range_noise = dataclasses.replace(cfg.noise, msg_loss=0.0)
        self.range_rng = np.random.default_rng([cfg.seed, 10_001])
        self.trace: list = []
        self.icp_log: list = []
        self.pgo_log: list = []
        self.collision_log: list = []
        self.truth: list = []  # (t, drone, x, y, psi) every step
        self.sensing: list = []  # (t, drone, x, y, psi) per frame, depths alongside
        self.sensing_depths: list = []
        self.coverage = CoverageGrid(self.world, [p[:2] for p in cfg.takeoff[:n]], cfg.evaluation.coverage_cell)
        self.app = SwarmApp(self)
        self.protocol = ProtocolSim(cfg.protocol, np.random.default_rng([cfg.seed, 10_000]), self.app,
                                    msg_loss=cfg.noise.msg_loss, trace=self.trace)
        self.aborted = False

    # ------------------------------------------------------------ SLAM

    def _add_node(self, d: DroneSim, t: float, is_scan: bool = False) -> int:
        nid = d.graph.add_pose_with_odometry(d.since, t, is_scan)
        d.since, d.since_travel, d.last_node_time = Pose2(), 0.0, t
        d.node_true.append((t, *d.true_pose.as_array()))
        d.node_dr.append(tuple(d.dr_pose.as_array()))
        return nid

    def _start_scan(self, d: DroneSim, t: float):
        if d.graph.nodes[-1].timestamp == t and d.since == Pose2():
            d.graph.nodes[-1].is_scan_pose = True
            nid = len(d.graph) - 1
        else:
            nid = self._add_node(d, t, True)
        d.recording, d.rec_rel, d.rec_anchor, d.travel_since_scan = [], Pose2(), nid, 0.0

    def _finish_scan(self, d: DroneSim, t: float):
        frames = [DepthFrame(d.rec_anchor, int(round(1000 * t)), rel, depths) for rel, depths in d.recording]
        d.recording = None
        try:
            scan = build_scan(frames, Pose2(), len(d.scans), d.id, d.rec_anchor)
        except ScanError:
            return
        scan = dataclasses.replace(scan, anchor_pose=d.graph.pose(d.rec_anchor))
        self._match_intra(d, scan)
        d.scans.append(scan)
        d.unsent = scan

    def _match_intra(self, d: DroneSim, scan):
        cfg = self.cfg
        new_pose = d.graph.pose(scan.pose_id)
        for old in d.scans:
            if scan.pose_id - old.pose_id < cfg.pgo.min_index_gap:
                continue
            old_pose = d.graph.pose(old.pose_id)
            if not should_pair(old_pose.distance_to(new_pose), cfg.slam.pair_distance):
                continue
            guess = between(old_pose, new_pose)
            res = match_scans(old, scan, guess, cfg.icp)
            self.icp_log.append((self.now, d.id, "intra", res.converged, res.reason))
            if res.converged and _within_gate(res.transform, guess, cfg):
                d.graph.add_intra_loop_edge(old.pose_id, scan.pose_id, res.transform)
                d.closures_since_pgo += 1
            return

    # ------------------------------------------------------------ one tick

    def _step_drone(self, d: DroneSim, k: int, t: float):
        cfg = self.cfg
        if (d.recording is None and d.explorer.state.mode is Mode.SPINNING
                and d.explorer.state.spin_accumulated <= cfg.explore.omega_spin * cfg.dt + 1e-9
                and d.travel_since_scan >= cfg.slam.scan_min_travel):
            self._start_scan(d, t)

        peers = ([o.true_pose.position for o in self.drones if o.id != d.id]
                 if cfg.noise.peer_echoes else ())
        full = sense_depth_frame(self.world, d.true_pose, cfg.noise, d.rng, DEFAULT_RIG, peers)
        depths = reduce_matrix_frame(full.depths)
        self.sensing.append((t, d.id, *d.true_pose.as_array()))
        self.sensing_depths.append(depths)
        self.coverage.add_frames([t], [d.true_pose.as_array()], depths[None])
        if k % cfg.slam.map_every == 0:
            d.frames.append(len(d.graph) - 1, d.since.as_array(), depths, t)
            if cfg.mode == "3d":
                d.frames_3d.append(slant_ranges_3d(self.world, d.true_pose, cfg.altitude))
        if d.recording is not None:
            d.recording.append((d.rec_rel, depths))
            if len(d.recording) == FRAMES_PER_SCAN:
                self._finish_scan(d, t)

        est = d.est_pose
        records = [(r.peer, r.peer_position.position, r.distance, r.timestamp)
                   for r in self.protocol.drones[d.id].ranges.values()]
        neighbors = classify_neighbors(est, records, t, cfg.explore.neighbor_stale_s)
        cmd = d.explorer.step(depths, neighbors, cfg.dt, math.inf if d.recording is not None else 0.0)

        new_true, _, odom = integrate_step(d.true_pose, est, cmd, cfg.dt, cfg.noise, d.rng)
        if self.world.collides(new_true.position) or not self.world.contains(new_true.position):
            d.collisions += 1
            self.collision_log.append((t, d.id, *new_true.as_array()))
            if cfg.on_collision == "abort":
                raise CollisionAbort(f"drone {d.id} collided at t={t:.2f} s")
            new_true, odom = d.true_pose, noisy_odometry(Pose2(), cfg.dt, cfg.noise, d.rng)
        d.true_pose = new_true
        d.since = compose(d.since, odom)
        d.rec_rel = compose(d.rec_rel, odom)
        d.dr_pose = compose(d.dr_pose, odom)
        d.since_travel += math.hypot(odom.x, odom.y)
        d.travel_since_scan += math.hypot(odom.x, odom.y)

        t1 = (k + 1) * cfg.dt
        self.truth.append((t1, d.id, *new_true.as_array()))
        if (t1 - d.last_node_time >= cfg.slam.node_interval - 1e-9
                or d.since_travel >= cfg.slam.node_travel):
            self._add_node(d, t1)

    def run(self) -> "ScenarioResult":
        cfg = self.cfg
        for d in self.drones:
            self.truth.append((0.0, d.id, *d.true_pose.as_array()))
        steps = int(round(cfg.duration / cfg.dt))
        try:
            for k in range(steps):
                t = k * cfg.dt
                self.now = t
                for d in self.drones:
                    self._step_drone(d, k, t)
                self.now = (k + 1) * cfg.dt
                self.protocol.run_until(self.now)
                if cfg.stop_at_full_coverage and self.coverage.complete:
                    break
        except CollisionAbort:
            self.aborted = True
        graphs_before = {d.id: dump_graph(d.graph) for d in self.drones}
        graphs = {d.id: d.graph for d in self.drones}
        final_log = final_cascade(graphs, cfg)
        self.pgo_log.extend(final_log)
        record = self.record(graphs_before)
        metrics = evaluate(record, graphs, self.world, cfg)
        return ScenarioResult(cfg, self.world, graphs, record, metrics, self)

    # ------------------------------------------------------------ records

    def record(self, graphs_before: dict) -> dict:
        frames = {}
        for d in self.drones:
            pid, rel, depths, time = d.frames.arrays()
            frames[d.id] = {"pose_id": pid, "rel": rel, "depths": depths, "time": time,
                            "node_true": np.array(d.node_true).reshape(-1, 4),
                            "node_dr": np.array(d.node_dr).reshape(-1, 3)}
            if d.frames_3d:
                frames[d.id]["slant"] = np.array(d.frames_3d)
        sensing = np.array(self.sensing).reshape(-1, 5)
        return {
            "graphs_before": graphs_before,
            "frames": frames,
            "truth": np.array(self.truth).reshape(-1, 5),
            "sensing": sensing,
            "sensing_depths": np.array(self.sensing_depths).reshape(-1, 4, 8),
            "coverage_first": self.coverage.first[self.coverage.accessible],
            "pgo_log": list(self.pgo_log),
            "icp_log": list(self.icp_log),
            "collisions": list(self.collision_log),
            "trace": self.trace,
            "protocol_stats": self.protocol.stats(),
            "scans": {d.id: len(d.scans) for d in self.drones},
            "aborted": self.aborted,
            "end_time": self.now,
        }


def final_cascade(graphs: dict, cfg: ScenarioConfig) -> list:
    """Optimise every graph in ascending id order against the lower ids' final poses."""
    log = []
    for i in sorted(graphs):
        g = graphs[i]
        updates = {}
        for e in g.loop_edges:
            if e.kind == "inter":
                updates[(e.source_drone, e.source_pose_id)] = graphs[e.source_drone].pose(e.source_pose_id)
        g.refresh_inter_edges(updates)
        res = optimize(g, cfg.pgo)
        log.append((None, i, res.cost_before, res.cost, res.converged, "final"))
    return log


# --------------------------------------------------------------------------
# evaluation


def frame_logs(frames: dict) -> dict:
    logs = {}
    for drone, f in frames.items():
        log = FrameLog()
        log.pose_id, log.rel = list(f["pose_id"]), [tuple(r) for r in f["rel"]]
        log.depths, log.time = list(f["depths"]), list(f["time"])
        logs[drone] = log
    return logs


def evaluate(record: dict, graphs: dict, world: World, cfg: ScenarioConfig) -> dict:
    """Metrics of a finished mission from its record and final graphs."""
    ev = cfg.evaluation
    raw = assemble_map(graphs, frame_logs(record["frames"]), generation=len(record["pgo_log"]))
    kept = density_filter(raw, ev.density_radius, ev.density_min_neighbors)
    truth = record["truth"]
    ate_m, dr_m = {}, {}
    for i, g in sorted(graphs.items()):
        rows = truth[truth[:, 1] == i]
        est = g.pose_array()
        nt = record["frames"][i]["node_true"]
        times = nt[:, 0]
        ate_m[str(i)] = ate(times, est[:, :2], rows[:, 0], rows[:, 2:4], cfg.dt / 2)
        dr_m[str(i)] = ate(times, record["frames"][i]["node_dr"][:, :2], rows[:, 0], rows[:, 2:4], cfg.dt / 2)
    first = record["coverage_first"]
    full = float(first.max()) if len(first) and np.isfinite(first).all() else None
    cover_final = float(np.isfinite(first).mean()) if len(first) else 0.0
    loops = {str(i): g.loop_closure_counts() for i, g in sorted(graphs.items())}
    decreases = [b - a for _, _, b, a, _, _ in record["pgo_log"]]
    return {
        "mapping_rmse_m": mapping_error(kept, world) if len(kept) else None,
        "ate_m": ate_m,
        "coverage_time_s": full,
        "loop_closures": loops,
        "dead_reckoning_ate_m": dr_m,
        "mapping_rmse_segments_m": mapping_error_segments(kept, world) if len(kept) else None,
        "mapping_rmse_unfiltered_m": mapping_error(raw, world) if len(raw) else None,
        "map_points": len(kept),
        "map_points_removed": len(raw) - len(kept),
        "coverage_fraction": cover_final,
        "scans": {str(k): v for k, v in sorted(record["scans"].items())},
        "optimize_calls": len(decreases),
        "max_cost_decrease": max(decreases) if decreases else 0.0,
        "collisions": len(record["collisions"]),
        "aborted": bool(record["aborted"]),
        "end_time_s": record["end_time"],
        "protocol": dict(sorted(record["protocol_stats"].items())),
    }


# --------------------------------------------------------------------------
# results and artifacts


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    world: World
    graphs: dict
    record: dict
    metrics: dict
    scenario: Scenario = field(repr=False, default=None)

    def global_map(self, filtered: bool = True):
        raw = assemble_map(self.graphs, frame_logs(self.record["frames"]))
        ev = self.config.evaluation
        return density_filter(raw, ev.density_radius, ev.density_min_neighbors) if filtered else raw

    def trajectories(self) -> list:
        """``(time, drone, true x, y, psi, est x, y, psi)`` per graph pose."""
        rows = []
        for i, g in sorted(self.graphs.items()):
            nt = self.record["frames"][i]["node_true"]
            for (t, x, y, psi), node in zip(nt, g.nodes):
                rows.append((t, i, x, y, psi, node.pose.x, node.pose.y, node.pose.psi))
        return rows

    def write(self, out_dir) -> Path:
        return write_artifacts(self, out_dir)


def _metrics_json(metrics: dict) -> str:
    return json.dumps(metrics, indent=2, sort_keys=False, allow_nan=False) + "\n"


def _map_rows(result: ScenarioResult):
    gmap = result.global_map()
    if result.config.mode != "3d":
        return ["drone,pose_id,x,y"] + [f"{d},{p},{x!r},{y!r}" for (x, y), d, p in
                                         zip(gmap.points.tolist(), gmap.drone.tolist(), gmap.pose_id.tolist())]
    lines = ["drone,pose_id,x,y,z"]
    for i, g in sorted(result.graphs.items()):
        f = result.record["frames"][i]
        if "slant" not in f:
            continue
        poses = compose_arrays(g.pose_array()[f["pose_id"]], f["rel"])
        for pid, pose, m in zip(f["pose_id"], poses, f["slant"]):
            for x, y, z in np.asarray(project_frame_3d(m, Pose2(*pose), result.config.altitude)).tolist():
                lines.append(f"{i},{int(pid)},{x!r},{y!r},{z!r}")
    return lines


def write_artifacts(result: ScenarioResult, out_dir) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectories.csv", "w") as fp:
        fp.write("time,drone,true_x,true_y,true_psi,est_x,est_y,est_psi\n")
        for t, i, *vals in result.trajectories():
            fp.write(f"{t!r},{i}," + ",".join(repr(float(v)) for v in vals) + "\n")
    (out / "map_points.csv").write_text("\n".join(_map_rows(result)) + "\n")
    (out / "metrics.json").write_text(_metrics_json(result.metrics))
    with open(out / "messages.log", "w") as fp:
        for t, kind, src, dst, size, seq, ok in result.record["trace"]:
            fp.write(f"{t:.6f} {kind} {src} {'-' if dst is None else dst} {size} {seq} "
                     f"{'ok' if ok else 'lost'}\n")
    gmap = result.global_map()
    trajs = {i: g.pose_array()[:, :2] for i, g in sorted(result.graphs.items())}
    (out / "map.svg").write_text(svg.render_map(result.world, gmap, trajs))
    save_dump(result, out)
    return out


def save_dump(result: ScenarioResult, out: Path):
    """Graphs before the final cascade plus everything the metrics need."""
    gdir = out / "graphs"
    gdir.mkdir(exist_ok=True)
    for i, text in sorted(result.record["graphs_before"].items()):
        (gdir / f"drone_{i}.graph").write_text(text)
    (out / "config.yaml").write_text(dump_config(result.config))
    arrays = {"truth": result.record["truth"], "coverage_first": result.record["coverage_first"]}
    for i, f in result.record["frames"].items():
        for key, val in f.items():
            arrays[f"d{i}_{key}"] = val
    np.savez_compressed(out / "frames.npz", **arrays)
    side = {k: result.record[k] for k in ("pgo_log", "collisions", "protocol_stats", "aborted", "end_time")}
    side["scans"] = {str(k): v for k, v in result.record["scans"].items()}
    side["pgo_log"] = [[t, i, b, a, c, tag] for t, i, b, a, c, tag in side["pgo_log"] if tag == "mission"]
    (out / "run.json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


class DumpError(ValueError):
    pass


def load_dump(run_dir, omega_scale: float = 1.0):
    """Config, pre-cascade graphs and record saved by :func:`write_artifacts`."""
    run = Path(run_dir)
    gfiles = sorted((run / "graphs").glob("drone_*.graph")) if (run / "graphs").is_dir() else []
    if not gfiles:
        raise DumpError(f"{run}: no graph dumps found")
    cfg = load_config(run / "config.yaml")
    if omega_scale != 1.0:
        cfg = dataclasses.replace(cfg, pgo=dataclasses.replace(
            cfg.pgo, omega_odom=cfg.pgo.omega_odom.scaled(omega_scale),
            omega_lc=cfg.pgo.omega_lc.scaled(omega_scale)))
    graphs = {}
    for path in gfiles:
        text = path.read_text()
        if not text.strip():
            raise DumpError(f"{path}: empty graph dump")
        g = load_graph(text, cfg.pgo)
        if omega_scale != 1.0:
            g = scale_information(g, omega_scale)
        graphs[g.drone_id] = g
    data = np.load(run / "frames.npz")
    side = json.loads((run / "run.json").read_text())
    frames = {}
    for i in graphs:
        frames[i] = {key[len(f"d{i}_"):]: data[key] for key in data.files if key.startswith(f"d{i}_")}
    record = {
        "graphs_before": {i: (run / "graphs" / f"drone_{i}.graph").read_text() for i in graphs},
        "frames": frames, "truth": data["truth"], "coverage_first": data["coverage_first"],
        "pgo_log": [tuple(r) for r in side["pgo_log"]], "collisions": side["collisions"],
        "protocol_stats": side["protocol_stats"], "aborted": side["aborted"],
        "end_time": side["end_time"], "scans": {int(k): v for k, v in side["scans"].items()},
        "trace": [],
    }
    return cfg, graphs, record


def scale_information(graph: PoseGraph, k: float) -> PoseGraph:
    """Copy of ``graph`` with every edge's information matrix multiplied by ``k``."""
    g = graph.copy()
    g.odom_edges = [dataclasses.replace(e, info=e.info.scaled(k)) for e in g.odom_edges]
    g.loop_edges = [dataclasses.replace(e, info=e.info.scaled(k)) for e in g.loop_edges]
    return g


def replay_run(run_dir, out_dir=None, omega_scale: float = 1.0) -> dict:
    """Re-run the final cascade and the metrics from a saved run.

    Returns ``{"metrics", "cost_before", "cost_after"}``; graph costs are
    summed over drones before and after the offline cascade.
    """
    cfg, graphs, record = load_dump(run_dir, omega_scale)
    cost_before = sum(graph_cost(g) for g in graphs.values())
    record["pgo_log"] = list(record["pgo_log"]) + final_cascade(graphs, cfg)
    cost_after = sum(graph_cost(g) for g in graphs.values())
    world = load_world(cfg.world)
    metrics = evaluate(record, graphs, world, cfg)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "metrics.json").write_text(_metrics_json(metrics))
        gmap = density_filter(assemble_map(graphs, frame_logs(record["frames"])),
                              cfg.evaluation.density_radius, cfg.evaluation.density_min_neighbors)
        trajs = {i: g.pose_array()[:, :2] for i, g in sorted(graphs.items())}
        (out / "map.svg").write_text(svg.render_map(world, gmap, trajs))
    return {"metrics": metrics, "cost_before": cost_before, "cost_after": cost_after}


def run_scenario(cfg: ScenarioConfig, out_dir=None) -> ScenarioResult:
    """Run one mission; writes the artifacts when ``out_dir`` is given."""
    result = Scenario(cfg).run()
    if out_dir is not None:
        result.write(out_dir)
    return result


__all__ = ["DroneSim", "Scenario", "ScenarioResult", "run_scenario", "replay_run", "final_cascade",
           "evaluate", "load_world", "config_to_dict"]
