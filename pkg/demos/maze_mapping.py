"""Three drones map the cross maze; compare the optimized map with dead reckoning.

    python3 demos/maze_mapping.py [seed] [out_dir]

Writes the usual run artifacts (map.svg, metrics.json, ...) to ``out_dir``.
"""

import sys

from swarm_slam.config import ScenarioConfig
from swarm_slam.scenario import run_scenario

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
out = sys.argv[2] if len(sys.argv) > 2 else "out/demo_maze"

result = run_scenario(ScenarioConfig(world="maze2", n_drones=3, seed=seed), out)
m = result.metrics

print(f"mapping RMSE after optimization: {100 * m['mapping_rmse_m']:.1f} cm")
for drone, err in m["ate_m"].items():
    lc = m["loop_closures"][drone]
    print(f"drone {drone}: ATE {100 * err:.1f} cm (dead reckoning {100 * m['dead_reckoning_ate_m'][drone]:.1f} cm), "
          f"{lc['intra']} own and {lc['inter']} shared loop closures")
print(f"artifacts in {out}/ (open map.svg in a browser)")
