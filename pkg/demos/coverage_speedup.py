"""How much faster do two drones cover the maze than one?

    python3 demos/coverage_speedup.py [n_seeds]
"""

import sys

import numpy as np

from swarm_slam.config import ScenarioConfig
from swarm_slam.scenario import Scenario

n_seeds = int(sys.argv[1]) if len(sys.argv) > 1 else 5

medians = {}
for n in (1, 2):
    times = []
    for seed in range(n_seeds):
        cfg = ScenarioConfig(world="maze2", n_drones=n, seed=seed, duration=300.0,
                             takeoff=ScenarioConfig().takeoff[:n], stop_at_full_coverage=True)
        t = Scenario(cfg).run().metrics["coverage_time_s"]
        times.append(np.inf if t is None else t)
    medians[n] = float(np.median(times))
    print(f"{n} drone(s): coverage times {np.round(times, 1).tolist()} s, median {medians[n]:.1f} s")

print(f"two drones finish {100 * (1 - medians[2] / medians[1]):.0f}% sooner")
