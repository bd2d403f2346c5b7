"""The token protocol under message loss, a crash and a network partition.

    python3 demos/token_ring.py
"""

import numpy as np

from swarm_slam.protocol import ProtocolConfig, ProtocolSim, SyntheticApp, predict_loop_time

cfg = ProtocolConfig(n_drones=4)
rng = np.random.default_rng(0)
sim = ProtocolSim(cfg, rng, SyntheticApp(rng, 0.2), msg_loss=0.1)

sim.run_until(30.0)
print(f"mean loop time {1000 * sim.loop_times().mean():.1f} ms "
      f"(loss-free model {1000 * predict_loop_time(4, cfg, 0.2):.1f} ms), at most {max(sim.rounds())} rangings per round")

holder = next(d.drone for d in sim.drones if d.holder)
sim.kill(holder)
t_kill = sim.now
sim.run_until(40.0)
t, drone, how = next(c for c in sim.claims if c[0] >= t_kill)
print(f"drone {holder} crashed with the token; drone {drone} took over after {t - t_kill:.2f} s ({how})")

sim.revive(holder)
sim.isolate(2)
sim.run_until(60.0)
print(f"drone 2 cut off, token holders now {[d.drone for d in sim.drones if d.holder]}")
sim.rejoin(2)
sim.run_until(60.1)
print(f"drone 2 back, token holders now {[d.drone for d in sim.drones if d.holder]}")
