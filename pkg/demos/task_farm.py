"""A self-hosted agent with four compute servers, one of which dies mid-run.

Usage: python demos/task_farm.py [N]
"""

import sys

import numpy as np

from gravfarm import SimParams
from gravfarm.bench import generate_bodies
from gravfarm.rpc import client
from gravfarm.rpc.fabric import LocalFabric
from gravfarm.strategies import StrategyConfig, evaluate
from gravfarm.tree import build_moment_tree
from gravfarm.walk import build_interaction_lists

n = int(sys.argv[1]) if len(sys.argv) > 1 else 20000
bodies = generate_bodies(n, "uniform", seed=11)
params = SimParams(theta=0.5)
ref = evaluate(bodies, params, StrategyConfig("sequential"))

tree = build_moment_tree(bodies)
lists = build_interaction_lists(tree, params.theta)
edges = np.linspace(0, n, 33).astype(int)

with LocalFabric(4, mode="process") as fabric:
    print("agent at", fabric.address)
    for rec in client.query_servers(fabric.address):
        print(f"  server {rec['server_id']} at {rec['address']} capacity {rec['capacity']}")

    session = client.initialize(fabric.address)
    handle = client.handle_default(session)
    ids = []
    for i, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        if i == 16:
            print("killing one server with 16 chunks still to submit")
            fabric.kill_server(2)
        ids.append(client.call_async(handle, bodies.subset(lists.rows[a:b]), lists.slice(a, b), params))
    results = client.merge_results(client.wait_all(session))
    client.handle_destruct(handle)
    times = client.finalize(session)

    records, stats = client.query_registry(fabric.address)
    for rec in records:
        print(f"  server {rec['server_id']}: alive={rec['alive']} completed={rec['completed']}")
    print("  agent counters:", stats)

acc = np.empty((n, 3))
acc[lists.rows] = np.concatenate([results[r] for r in ids])
print(f"max |a_farm - a_seq| = {np.abs(acc - ref).max():.1e}")
print(f"init {times.init:.3f}s  compute {times.compute:.3f}s  finalize {times.finalize:.3f}s")
