"""Energy drift of a Plummer sphere integrated in every strategy.

Usage: python demos/plummer_energy.py [N] [STEPS]
"""

import sys

from gravfarm import SimParams
from gravfarm.bench import generate_bodies
from gravfarm.rpc.fabric import LocalFabric
from gravfarm.strategies import StrategyConfig, run_simulation

n = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
steps = int(sys.argv[2]) if len(sys.argv) > 2 else 50
bodies = generate_bodies(n, "plummer", seed=5)
params = SimParams(theta=0.5, dt=1e-3)

with LocalFabric(2, mode="thread") as fabric:
    configs = [StrategyConfig("sequential"), StrategyConfig("shared", 4),
               StrategyConfig("orb_ranks", 4), StrategyConfig("gridrpc", fabric=fabric)]
    print(f"{'mode':>10} {'|dE/E0|':>9} {'force frac':>10} {'s/step':>8}")
    for cfg in configs:
        sim = run_simulation(bodies, params, cfg, steps, energy_every=steps)
        tot = sim.totals
        print(f"{cfg.mode:>10} {sim.energy_drift:9.2e} {tot.force_fraction:10.2f} {tot.total / steps:8.4f}")
