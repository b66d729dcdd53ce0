"""ORB ranks: domain shapes, essential-set traffic and the growth of list length.

Usage: python demos/orb_exchange.py [N]
"""

import sys

import numpy as np

from gravfarm import SimParams
from gravfarm.bench import generate_bodies
from gravfarm.forces import brute_force_accels
from gravfarm.orb import collect_essential_nodes, encode_essential, orb_partition
from gravfarm.strategies import StepReport, StrategyConfig, evaluate
from gravfarm.tree import build_moment_tree

n = int(sys.argv[1]) if len(sys.argv) > 1 else 4096
bodies = generate_bodies(n, "plummer", seed=7)
params = SimParams(theta=0.5)

part, ranks = orb_partition(bodies, 4)
print("rank  bodies  box extent (x, y, z)")
for r, dom in enumerate(part.domains):
    ext = dom.max - dom.min
    print(f"{r:4d}  {np.sum(ranks == r):6d}  {ext.round(3)}")

trees = [build_moment_tree(bodies.subset(ranks == r), box=part.box) for r in range(4)]
print("\nessential sets sent by rank 0")
for d in range(1, 4):
    es = collect_essential_nodes(trees[0], part.domains[d], params.theta, 0, d)
    print(f"  -> rank {d}: {es.n_summaries:5d} summaries, {len(es.bodies):5d} raw bodies, "
          f"{len(encode_essential(es)):7d} bytes")

ref = brute_force_accels(bodies)
seq = StepReport()
a_seq = evaluate(bodies, params, StrategyConfig("sequential"), seq)
err = lambda a: np.linalg.norm(a - ref) / np.linalg.norm(ref)
print(f"\n{'P':>2} {'interactions':>13} {'vs seq':>7} {'rel L2 err':>11} {'exchange B':>11}")
print(f"{'-':>2} {seq.interactions:13d} {1.0:7.2f} {err(a_seq):11.2e} {0:11d}")
for p in (1, 2, 4, 8):
    rep = StepReport()
    acc = evaluate(bodies, params, StrategyConfig("orb_ranks", p), rep)
    print(f"{p:2d} {rep.interactions:13d} {rep.interactions / seq.interactions:7.2f} "
          f"{err(acc):11.2e} {rep.exchange_bytes:11d}")
# more sub-domains means more boundary, and more of the tree is sent finer than a global walk needs
