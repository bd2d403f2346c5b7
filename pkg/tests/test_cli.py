import csv
import json
import re

import numpy as np
import pytest
import yaml

from swarm_slam.cli import main
from swarm_slam.config import config_from_dict, load_config

ARTIFACTS = ("trajectories.csv", "map_points.csv", "metrics.json", "messages.log", "map.svg")


def write_cfg(tmp_path, name="cfg.yaml", **data):
    path = tmp_path / name
    path.write_text(yaml.safe_dump(data))
    return str(path)


@pytest.fixture(scope="module")
def maze_run(tmp_path_factory):
    base = tmp_path_factory.mktemp("maze")
    cfg = write_cfg(base, duration=25.0, seed=3)
    assert main(["run", "--config", cfg, "--out", str(base / "a")]) == 0
    assert main(["run", "--config", cfg, "--out", str(base / "b")]) == 0
    return base


def test_one_drone_run_writes_artifacts(tmp_path, capsys):
    cfg = write_cfg(tmp_path, world="room", n_drones=1, duration=10.0)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "out")]) == 0
    for name in ARTIFACTS:
        assert (tmp_path / "out" / name).is_file()
    # a lone drone has nobody to talk to
    assert (tmp_path / "out" / "messages.log").read_text() == ""
    metrics = json.loads((tmp_path / "out" / "metrics.json").read_text())
    assert {"mapping_rmse_m", "ate_m", "coverage_time_s", "loop_closures"} <= set(metrics)
    svg = (tmp_path / "out" / "map.svg").read_text()
    assert svg.count('<g id="drone-') == 1
    assert "mapping RMSE" in capsys.readouterr().out


def test_missing_world_exits_2(tmp_path, capsys):
    cfg = write_cfg(tmp_path, world=str(tmp_path / "nowhere.txt"), n_drones=1, duration=1.0)
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 2
    assert "world fixture not found" in capsys.readouterr().err


@pytest.mark.parametrize("data, path", [
    ({"protocol": {"t_rnage": 1}}, "protocol.t_rnage"),
    ({"noise": {"uwb_sigma": "loud"}}, "noise.uwb_sigma"),
])
def test_validation_error_names_field(tmp_path, capsys, data, path):
    cfg = write_cfg(tmp_path, **data)
    assert main(["run", "--config", cfg]) != 0
    assert path in capsys.readouterr().err


def test_print_config_round_trips(tmp_path, capsys):
    cfg = write_cfg(tmp_path, n_drones=2, duration=12.5, noise={"msg_loss": 0.1})
    assert main(["run", "--config", cfg, "--seed", "9", "--mode", "3d", "--print-config"]) == 0
    echoed = yaml.safe_load(capsys.readouterr().out)
    parsed = config_from_dict(echoed)
    assert parsed.seed == 9 and parsed.mode == "3d" and parsed.noise.msg_loss == 0.1
    again = tmp_path / "again.yaml"
    again.write_text(yaml.safe_dump(echoed))
    assert load_config(again) == parsed


def test_repeated_runs_are_identical(maze_run):
    for name in ARTIFACTS:
        assert (maze_run / "a" / name).read_bytes() == (maze_run / "b" / name).read_bytes(), name
    assert (maze_run / "a" / "map.svg").read_text().count('<g id="drone-') == 3


def test_replay_of_own_dump_matches(maze_run, tmp_path):
    assert main(["replay", str(maze_run / "a"), "--out", str(tmp_path / "r")]) == 0
    assert (tmp_path / "r" / "metrics.json").read_bytes() == (maze_run / "a" / "metrics.json").read_bytes()


def test_replay_with_scaled_information(maze_run, capsys):
    assert main(["replay", str(maze_run / "a"), "--omega-scale", "2"]) == 0
    out = capsys.readouterr().out
    ratio = float(re.search(r"optimized cost ratio ([0-9.]+)", out).group(1))
    assert ratio == pytest.approx(2.0, rel=1e-6)


def test_replay_rejects_empty_dump(tmp_path, capsys):
    (tmp_path / "graphs").mkdir()
    assert main(["replay", str(tmp_path)]) == 2
    (tmp_path / "graphs" / "drone_0.graph").write_text("")
    assert main(["replay", str(tmp_path)]) == 2
    assert "error" in capsys.readouterr().err


def test_replay_reports_line_of_malformed_dump(maze_run, tmp_path, capsys):
    import shutil
    bad = tmp_path / "bad"
    shutil.copytree(maze_run / "a", bad)
    g = bad / "graphs" / "drone_1.graph"
    lines = g.read_text().splitlines()
    lines[4] = "NODE not numbers"
    g.write_text("\n".join(lines) + "\n")
    assert main(["replay", str(bad)]) == 2
    assert re.search(r"line 5", capsys.readouterr().err)


def test_scalability_table(tmp_path, capsys):
    out = tmp_path / "sc"
    assert main(["scalability", "--out", str(out), "--n-max", "200", "--sim-max", "4"]) == 0
    with open(out / "scalability.csv") as fp:
        rows = list(csv.DictReader(fp))
    assert len(rows) == 199
    loop = np.array([float(r["loop_time_s"]) for r in rows])
    assert np.all(np.diff(loop) > 0)
    assert int(rows[-1]["ranging_exchanges"]) == 19900
    simulated = [r for r in rows if r["loop_time_sim_s"]]
    assert [int(r["n"]) for r in simulated] == [2, 3, 4]
    for r in simulated:
        assert float(r["loop_time_sim_s"]) == pytest.approx(float(r["loop_time_s"]), rel=0.1)
    svg = (out / "loop_time.svg").read_text()
    assert svg.count("<polyline") == 2
    text = capsys.readouterr().out
    sizes = [int(v) for v in re.findall(r"up to (\d+) drones", text)]
    assert sizes[0] < sizes[1] < sizes[2]


def test_scalability_rejects_bad_range(tmp_path):
    assert main(["scalability", "--out", str(tmp_path), "--n-min", "1"]) == 2


def test_report(maze_run, tmp_path):
    assert main(["report", str(maze_run / "a"), "--out", str(tmp_path)]) == 0
    text = (tmp_path / "report.md").read_text()
    assert "mapping RMSE" in text and "| 2 |" in text
    assert "<polyline" in (tmp_path / "coverage.svg").read_text()


def test_3d_mode_map_has_heights(tmp_path):
    cfg = write_cfg(tmp_path, world="room", n_drones=1, duration=5.0, mode="3d")
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == 0
    with open(tmp_path / "o" / "map_points.csv") as fp:
        rows = list(csv.DictReader(fp))
    assert rows and set(rows[0]) == {"drone", "pose_id", "x", "y", "z"}
    z = np.array([float(r["z"]) for r in rows])
    assert z.min() < 0.5 < z.max()
