"""Command-line entry point: ``swarm-slam {run,replay,scalability,report}``.

Exit status is 0 on success, 2 for invalid input (bad config, missing world
or dump) and 1 when a run aborts on a collision.
"""

from __future__ import annotations

import argparse
import collections
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import svg
from .config import ConfigError, ScenarioConfig, config_from_dict, config_to_dict, dump_config, load_config
from .protocol import (
    LINK_CAPACITY,
    ProtocolConfig,
    ProtocolSim,
    SyntheticApp,
    predict_bandwidth,
    predict_loop_time,
    ranging_exchanges,
    supported_swarm_size,
)
from .scenario import DumpError, replay_run, run_scenario
from .sim_world import WorldError

EXIT_INPUT = 2
EXIT_ABORTED = 1


def _fail(msg: str, code: int = EXIT_INPUT) -> int:
    print(f"error: {msg}", file=sys.stderr)
    return code


def _config(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    overrides = {}
    if args.seed is not None:
        overrides["seed"], overrides["seeds"] = args.seed, []
    if args.mode is not None:
        overrides["mode"] = args.mode
    if args.out is not None:
        overrides["out_dir"] = args.out
    if overrides:
        data = config_to_dict(cfg)
        data.update(overrides)
        cfg = config_from_dict(data)
    return cfg


# --------------------------------------------------------------------------
# run


def cmd_run(args) -> int:
    try:
        cfg = _config(args)
    except ConfigError as exc:
        return _fail(str(exc))
    if args.print_config:
        sys.stdout.write(dump_config(cfg))
        return 0
    seeds = list(cfg.seeds) or [cfg.seed]
    out = Path(cfg.out_dir)
    code = 0
    for seed in seeds:
        run_cfg = cfg.with_seed(seed)
        target = out if len(seeds) == 1 else out / f"seed_{seed}"
        try:
            result = run_scenario(run_cfg, target)
        except WorldError as exc:
            return _fail(str(exc))
        m = result.metrics
        ate = ", ".join(f"{k}: {v:.3f}" for k, v in m["ate_m"].items())
        cov = "never" if m["coverage_time_s"] is None else f"{m['coverage_time_s']:.2f} s"
        print(f"seed {seed}: mapping RMSE {m['mapping_rmse_m']:.3f} m, ATE [{ate}] m, coverage {cov}, "
              f"loop closures {json.dumps(m['loop_closures'])} -> {target}")
        if m["aborted"]:
            print(f"seed {seed}: aborted on collision at t = {m['end_time_s']:.2f} s", file=sys.stderr)
            code = EXIT_ABORTED
    return code


# --------------------------------------------------------------------------
# replay


def cmd_replay(args) -> int:
    try:
        res = replay_run(args.run_dir, args.out, args.omega_scale)
        base = replay_run(args.run_dir, None, 1.0) if args.omega_scale != 1.0 else res
    except (DumpError, ConfigError, WorldError, ValueError, OSError) as exc:
        return _fail(str(exc))
    m = res["metrics"]
    print(f"replay {args.run_dir}: mapping RMSE {m['mapping_rmse_m']:.4f} m")
    print(f"graph cost before {res['cost_before']:.6g}, after {res['cost_after']:.6g}")
    if args.omega_scale != 1.0:
        ratio = res["cost_after"] / base["cost_after"] if base["cost_after"] > 0 else float("nan")
        print(f"omega scale {args.omega_scale:g}: optimized cost ratio {ratio:.6f} "
              f"(expected {args.omega_scale:g}, cost is linear in the information weights)")
    if args.out:
        print(f"wrote {Path(args.out) / 'metrics.json'}")
    return 0


# --------------------------------------------------------------------------
# scalability


def measured_loop_time(n: int, cfg: ProtocolConfig, scan_fraction: float, duration: float, seed: int) -> float:
    rng = np.random.default_rng([seed, n])
    sim = ProtocolSim(dataclasses.replace(cfg, n_drones=n), rng, SyntheticApp(rng, scan_fraction, cfg.scan_bytes))
    sim.run_until(duration)
    return float(sim.loop_times().mean())


def scalability_rows(n_min: int, n_max: int, cfg: ProtocolConfig, scan_fraction: float = 0.2,
                     sim_max: int = 16, sim_duration: float = 20.0, seed: int = 0) -> list[dict]:
    if not 2 <= n_min <= n_max <= 1000:
        raise ValueError("need 2 <= n_min <= n_max <= 1000")
    rows = []
    for n in range(n_min, n_max + 1):
        bw = predict_bandwidth(n, cfg.scans_per_min, cfg.scan_bytes, cfg)
        rows.append({
            "n": n,
            "ranging_exchanges": ranging_exchanges(n),
            "loop_time_s": predict_loop_time(n, cfg, scan_fraction),
            "loop_time_sim_s": (measured_loop_time(n, cfg, scan_fraction, sim_duration, seed)
                                if n <= sim_max else None),
            "scan_traffic_Bps": bw.scan_traffic,
            "position_traffic_Bps": bw.position_traffic,
            "swarm_total_Bps": bw.swarm_total,
            "drone0_Bps": bw.drone0,
        })
    return rows


def cmd_scalability(args) -> int:
    cfg = ProtocolConfig()
    if args.config:
        try:
            cfg = dataclasses.replace(load_config(args.config).protocol, n_drones=cfg.n_drones)
        except ConfigError as exc:
            return _fail(str(exc))
    try:
        rows = scalability_rows(args.n_min, args.n_max, cfg, args.scan_fraction, args.sim_max,
                                args.sim_duration, args.seed or 0)
    except ValueError as exc:
        return _fail(str(exc))
    out = Path(args.out or "scalability")
    out.mkdir(parents=True, exist_ok=True)
    keys = list(rows[0])
    with open(out / "scalability.csv", "w") as fp:
        fp.write(",".join(keys) + "\n")
        for r in rows:
            fp.write(",".join("" if r[k] is None else repr(r[k]) for k in keys) + "\n")
    ns = [r["n"] for r in rows]
    series = {"predicted": [r["loop_time_s"] for r in rows]}
    if any(r["loop_time_sim_s"] is not None for r in rows):
        series["simulated"] = [r["loop_time_sim_s"] for r in rows]
    (out / "loop_time.svg").write_text(svg.render_chart(ns, series, "Token loop time", "drones",
                                                        "loop time [s]", log_y=True))
    bw = {"swarm total": [r["swarm_total_Bps"] for r in rows], "scans": [r["scan_traffic_Bps"] for r in rows],
          "positions": [r["position_traffic_Bps"] for r in rows], "drone 0": [r["drone0_Bps"] for r in rows]}
    (out / "bandwidth.svg").write_text(svg.render_chart(ns, bw, "Radio traffic", "drones", "bytes per second",
                                                        log_y=True))
    for name, cap in LINK_CAPACITY.items():
        n = supported_swarm_size(cap, cfg.scans_per_min, cfg.scan_bytes, cfg)
        print(f"{name} ({cap / 1e6:g} Mbit/s): up to {n} drones")
    print(f"wrote {len(rows)} rows to {out / 'scalability.csv'}")
    return 0


# --------------------------------------------------------------------------
# report


def read_messages(path: Path) -> list[tuple]:
    rows = []
    for k, line in enumerate(path.read_text().splitlines(), 1):
        parts = line.split()
        if len(parts) != 7:
            raise ValueError(f"{path}:{k}: expected 7 fields, got {len(parts)}")
        t, kind, src, dst, size, seq, ok = parts
        rows.append((float(t), kind, int(src), None if dst == "-" else int(dst), int(size), int(seq), ok == "ok"))
    return rows


def cmd_report(args) -> int:
    run = Path(args.run_dir)
    try:
        metrics = json.loads((run / "metrics.json").read_text())
        messages = read_messages(run / "messages.log")
        frames = np.load(run / "frames.npz")
    except (OSError, ValueError) as exc:
        return _fail(str(exc))
    out = Path(args.out or run)
    out.mkdir(parents=True, exist_ok=True)

    first = np.sort(frames["coverage_first"])
    t_end = float(metrics["end_time_s"])
    times = np.linspace(0.0, t_end, 200)
    frac = np.searchsorted(first, times, side="right") / max(len(first), 1)
    (out / "coverage.svg").write_text(svg.render_chart(times, {"covered": frac.tolist()}, "Coverage",
                                                       "time [s]", "fraction of accessible cells"))

    by_kind = collections.Counter(m[1] for m in messages)
    bytes_kind = collections.Counter()
    lost = collections.Counter()
    for _, kind, _, _, size, _, ok in messages:
        bytes_kind[kind] += size
        lost[kind] += not ok
    lines = [f"# Run report: {run.name}", "", "## Metrics", "",
             f"- mapping RMSE: {metrics['mapping_rmse_m']:.4f} m",
             f"- coverage time: {metrics['coverage_time_s']} s", "", "| drone | ATE [m] | dead reckoning ATE [m] | "
             "intra | inter |", "|---|---|---|---|---|"]
    for d, a in metrics["ate_m"].items():
        lc = metrics["loop_closures"][d]
        lines.append(f"| {d} | {a:.4f} | {metrics['dead_reckoning_ate_m'][d]:.4f} | {lc['intra']} | {lc['inter']} |")
    lines += ["", "## Radio traffic", "", "| kind | frames | bytes | lost |", "|---|---|---|---|"]
    for kind in sorted(by_kind):
        lines.append(f"| {kind} | {by_kind[kind]} | {bytes_kind[kind]} | {lost[kind]} |")
    if metrics.get("optimize_calls") is not None:
        lines += ["", f"Optimizations: {metrics['optimize_calls']}, largest cost decrease "
                      f"{metrics['max_cost_decrease']:.4g}."]
    (out / "report.md").write_text("\n".join(lines) + "\n")
    print(f"wrote {out / 'report.md'} and {out / 'coverage.svg'}")
    return 0


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="swarm-slam", description="Collaborative swarm SLAM simulator")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_help):
        sp.add_argument("--config", help="YAML scenario config")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--out", help=out_help)
        sp.add_argument("--mode", choices=("2d", "3d"), help="map projection mode")
        sp.add_argument("--print-config", action="store_true", help="print the effective config and exit")

    r = sub.add_parser("run", help="simulate a mission and write its artifacts")
    common(r, "output directory (default: config out_dir)")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("replay", help="re-optimize a saved run offline")
    rp.add_argument("run_dir")
    rp.add_argument("--out", help="write metrics.json and map.svg here")
    rp.add_argument("--omega-scale", type=float, default=1.0, help="multiply every information matrix")
    rp.set_defaults(func=cmd_replay)

    s = sub.add_parser("scalability", help="loop time and bandwidth versus swarm size")
    common(s, "output directory (default: scalability)")
    s.add_argument("--n-min", type=int, default=2)
    s.add_argument("--n-max", type=int, default=200)
    s.add_argument("--sim-max", type=int, default=16, help="simulate the protocol up to this size")
    s.add_argument("--sim-duration", type=float, default=20.0)
    s.add_argument("--scan-fraction", type=float, default=0.2, help="share of turns that carry a scan")
    s.set_defaults(func=cmd_scalability)

    rep = sub.add_parser("report", help="summarize a run directory")
    rep.add_argument("run_dir")
    rep.add_argument("--out", help="output directory (default: the run directory)")
    rep.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "scalability" and args.print_config:
        try:
            sys.stdout.write(dump_config(_config(args)))
        except ConfigError as exc:
            return _fail(str(exc))
        return 0
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
