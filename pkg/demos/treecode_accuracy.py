"""Opening angle against accuracy and list length for a uniform cube.

Usage: python demos/treecode_accuracy.py [N]
"""

import sys
import time

import numpy as np

from gravfarm import SimParams
from gravfarm.bench import generate_bodies
from gravfarm.forces import brute_force_accels
from gravfarm.strategies import StepReport, StrategyConfig, evaluate

n = int(sys.argv[1]) if len(sys.argv) > 1 else 2000
bodies = generate_bodies(n, "uniform", seed=3)

t = time.perf_counter()
ref = brute_force_accels(bodies)
print(f"direct sum over {n} bodies: {time.perf_counter() - t:.2f}s")

print(f"{'theta':>6} {'median err':>11} {'max err':>9} {'entries/body':>13} {'walk s':>7} {'force s':>8}")
for theta in (1.0, 0.75, 0.5, 0.25, 0.0):
    rep = StepReport()
    acc = evaluate(bodies, SimParams(theta=theta), StrategyConfig("sequential"), rep)
    err = np.linalg.norm(acc - ref, axis=1) / np.linalg.norm(ref, axis=1)
    print(f"{theta:6.2f} {np.median(err):11.2e} {err.max():9.2e} {rep.interactions / n:13.1f} "
          f"{rep.list_build:7.3f} {rep.force:8.3f}")

# theta = 0 opens every cell, so the treecode collapses onto the direct sum
