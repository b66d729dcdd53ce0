"""One simulation step under each execution strategy.

Every mode performs the same KDK step and differs only in how the
accelerations at the drifted positions are produced:

``sequential``  one tree, one walk, one force loop.
``shared``      one tree; targets split into ``workers`` contiguous blocks
                (in tree order) whose lists and forces run on a thread pool.
``orb_ranks``   ORB split into ``workers`` in-process ranks, each with a
                local tree; essential sets travel between ranks as bytes and
                each rank walks its augmented tree, optionally with
                ``rank_threads`` threads of its own.
``gridrpc``     client-side tree and lists; chunks of targets go to the
                fabric's servers with call_async and are joined by wait_all.
"""

from __future__ import annotations

import queue
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .bodies import BodySet, as_bodyset
from .errors import InvalidRankCount
from .forces import compute_forces, total_energy
from .integrate import drift, kick
from .orb import collect_essential_nodes, decode_essential, encode_essential, merge_essential, orb_partition
from .params import SimParams
from .rpc import client as rpc
from .tree import build_tree, compute_mass_moments
from .walk import InteractionLists, build_interaction_lists

MODES = ("sequential", "shared", "orb_ranks", "gridrpc")
clock = time.perf_counter


@dataclass(frozen=True)
class StrategyConfig:
    """``workers`` is threads for shared and ranks for orb_ranks; gridrpc uses
    the fabric's slots and ignores it. ``chunks`` defaults to 4 x slots and
    ``per_body`` sends one call per body instead. ``fabric`` is an agent
    address or anything with an ``address`` attribute."""

    mode: str = "sequential"
    workers: int = 1
    rank_threads: int = 1
    chunks: int | None = None
    per_body: bool = False
    fabric: object = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.workers < 1 or self.rank_threads < 1:
            raise ValueError("workers and rank_threads must be >= 1")
        if self.chunks is not None and self.chunks < 1:
            raise ValueError("chunks must be >= 1")
        if self.mode == "gridrpc" and self.fabric is None:
            raise ValueError("gridrpc needs a fabric endpoint")

    @property
    def agent_address(self) -> str:
        return str(getattr(self.fabric, "address", self.fabric))


@dataclass
class StepReport:
    """Phase wall times in seconds. ``exchange`` is ORB essential-set traffic
    and merging; ``init``/``finalize`` are gridrpc session overheads."""

    tree_build: float = 0.0
    list_build: float = 0.0
    force: float = 0.0
    update: float = 0.0
    init: float = 0.0
    finalize: float = 0.0
    exchange: float = 0.0
    total: float = 0.0
    interactions: int = 0
    task_counts: list = field(default_factory=list)
    foreign_mac_failures: int = 0
    exchange_bytes: int = 0

    @property
    def force_fraction(self) -> float:
        return self.force / self.total if self.total > 0 else 0.0

    def add(self, other: "StepReport") -> None:
        for k in ("tree_build", "list_build", "force", "update", "init", "finalize", "exchange",
                  "total"):
            setattr(self, k, getattr(self, k) + getattr(other, k))
        self.interactions += other.interactions
        self.foreign_mac_failures += other.foreign_mac_failures
        self.exchange_bytes += other.exchange_bytes

    def as_dict(self) -> dict:
        d = asdict(self)
        d["force_fraction"] = self.force_fraction
        return d


_pools: dict[tuple, ThreadPoolExecutor] = {}
_pools_lock = threading.Lock()


def _pool(name: str, n: int) -> ThreadPoolExecutor:
    with _pools_lock:
        p = _pools.get((name, n))
        if p is None:
            p = _pools[(name, n)] = ThreadPoolExecutor(n, thread_name_prefix=f"gravfarm-{name}")
        return p


def _map(name: str, n: int, fn, items) -> list:
    items = list(items)
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    return list(_pool(name, n).map(fn, items))


def _blocks(n: int, k: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n, min(k, max(n, 1)) + 1).round().astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:])]


def _tree(bodies: BodySet, params: SimParams, box=None):
    return compute_mass_moments(build_tree(bodies, params.leaf_capacity, box))


def _lists_and_forces(tree, params: SimParams, threads: int, pool_name: str, report: StepReport):
    """Walk and force over contiguous tree-order blocks; returns (rows, acc, lists)."""
    order = tree.local_order
    blocks = _blocks(order.shape[0], threads)
    t = clock()
    parts = _map(pool_name, threads, lambda ab: build_interaction_lists(
        tree, params.theta, rows=order[ab[0]:ab[1]]), blocks)
    t_lists = clock()
    accs = _map(pool_name, threads, lambda L: compute_forces(L, params.eps, params.g_const), parts)
    t_force = clock()
    report.list_build += t_lists - t
    report.force += t_force - t_lists
    lists = InteractionLists.concat(parts) if len(parts) > 1 else parts[0]
    return lists.rows, np.concatenate(accs) if len(accs) > 1 else accs[0], lists


def _sequential(bodies: BodySet, params: SimParams, config: StrategyConfig, report: StepReport):
    t = clock()
    tree = _tree(bodies, params)
    report.tree_build += clock() - t
    rows, acc, lists = _lists_and_forces(tree, params, 1, "seq", report)
    report.interactions = lists.total
    report.task_counts = [len(bodies)]
    out = np.empty((len(bodies), 3))
    out[rows] = acc
    return out


def _shared(bodies: BodySet, params: SimParams, config: StrategyConfig, report: StepReport):
    t = clock()
    tree = _tree(bodies, params)
    report.tree_build += clock() - t
    rows, acc, lists = _lists_and_forces(tree, params, config.workers, "shared", report)
    report.interactions = lists.total
    report.task_counts = [b - a for a, b in _blocks(len(bodies), config.workers)]
    out = np.empty((len(bodies), 3))
    out[rows] = acc
    return out


class Channel:
    """In-process byte mailboxes between ranks."""

    def __init__(self, ranks: int):
        self._boxes = [queue.Queue() for _ in range(ranks)]
        self.bytes_sent = 0

    def send(self, dest: int, data: bytes) -> None:
        self.bytes_sent += len(data)
        self._boxes[dest].put(data)

    def recv(self, dest: int, count: int, timeout: float = 60.0) -> list[bytes]:
        return [self._boxes[dest].get(timeout=timeout) for _ in range(count)]


def _orb_ranks(bodies: BodySet, params: SimParams, config: StrategyConfig, report: StepReport):
    p = config.workers
    if not 1 <= p <= len(bodies):
        raise InvalidRankCount(f"rank count {p} must be in [1, {len(bodies)}]")
    t = clock()
    part, ranks = orb_partition(bodies, p)
    members = [np.flatnonzero(ranks == r) for r in range(p)]
    local = [bodies.subset(m) for m in members]
    trees = _map("ranks", p, lambda r: _tree(local[r], params, part.box), range(p))
    t_tree = clock()

    channel = Channel(p)

    def send_sets(r):
        for d in range(p):
            if d != r:
                es = collect_essential_nodes(trees[r], part.domains[d], params.theta, r, d,
                                             local_bodies=local[r])
                channel.send(d, encode_essential(es))

    def receive(r):
        sets = sorted((decode_essential(m) for m in channel.recv(r, p - 1)), key=lambda s: s.source)
        return merge_essential(trees[r], sets)

    _map("ranks", p, send_sets, range(p))
    merged = _map("ranks", p, receive, range(p))
    t_x = clock()
    report.tree_build += t_tree - t
    report.exchange += t_x - t_tree

    sub = [StepReport() for _ in range(p)]
    results = _map("ranks", p, lambda r: _lists_and_forces(
        merged[r], params, config.rank_threads, f"rank{r}", sub[r]), range(p))
    t_end = clock()
    # ranks overlap, so split the joint wall time by the ranks' mean phase shares
    lb = sum(s.list_build for s in sub)
    fo = sum(s.force for s in sub)
    share = lb / (lb + fo) if lb + fo > 0 else 0.5
    report.list_build += (t_end - t_x) * share
    report.force += (t_end - t_x) * (1 - share)
    out = np.empty((len(bodies), 3))
    total = 0
    for r, (rows, acc, lists) in enumerate(results):
        out[members[r][rows]] = acc
        total += lists.total
        report.foreign_mac_failures += lists.foreign_mac_failures
    report.interactions = total
    report.task_counts = [int(m.shape[0]) for m in members]
    report.exchange_bytes = channel.bytes_sent
    return out


def _gridrpc(bodies: BodySet, params: SimParams, config: StrategyConfig, report: StepReport):
    t = clock()
    tree = _tree(bodies, params)
    t_tree = clock()
    lists = build_interaction_lists(tree, params.theta)
    t_lists = clock()
    report.tree_build += t_tree - t
    report.list_build += t_lists - t_tree
    report.interactions = lists.total

    session = rpc.initialize(config.agent_address)
    handle = rpc.handle_default(session, "ComputeForces")
    n = len(bodies)
    if config.per_body:
        k = n
    else:
        k = config.chunks or 4 * max(session.slots, 1)
    blocks = _blocks(n, k)
    rids = []
    for a, b in blocks:
        rids.append(rpc.call_async(handle, bodies.subset(lists.rows[a:b]), lists.slice(a, b), params))
    results = rpc.wait_all(session)
    rpc.handle_destruct(handle)
    times = rpc.finalize(session)
    report.init += times.init
    report.force += times.compute
    report.finalize += times.finalize
    report.task_counts = [b - a for a, b in blocks]
    rpc.merge_results(results)
    acc = np.empty((n, 3))
    acc[lists.rows] = np.concatenate([results[r] for r in rids])
    return acc


_ACCEL = {"sequential": _sequential, "shared": _shared, "orb_ranks": _orb_ranks, "gridrpc": _gridrpc}


def evaluate(bodies, params: SimParams, config: StrategyConfig,
             report: StepReport | None = None) -> np.ndarray:
    """Accelerations at the current positions, rows in the caller's order."""
    report = StepReport() if report is None else report
    return _ACCEL[config.mode](as_bodyset(bodies), params, config, report)


def run_step(bodies, params: SimParams, config: StrategyConfig) -> tuple[BodySet, StepReport]:
    """One KDK step; ``bodies.acc`` must hold accelerations at the current positions."""
    report = StepReport()
    t0 = clock()
    out = as_bodyset(bodies).copy()
    half = 0.5 * params.dt
    kick(out, half)
    drift(out, params.dt)
    t1 = clock()
    out.acc = evaluate(out, params, config, report)
    t2 = clock()
    kick(out, half)
    t3 = clock()
    report.update = (t1 - t0) + (t3 - t2)
    report.total = t3 - t0
    return out, report


@dataclass
class SimulationResult:
    bodies: BodySet
    reports: list[StepReport]
    energies: list[tuple[int, float]]
    totals: StepReport

    @property
    def energy_drift(self) -> float:
        """``|E - E0| / |E0|`` at the last snapshot."""
        if len(self.energies) < 2:
            return 0.0
        e0 = self.energies[0][1]
        return abs(self.energies[-1][1] - e0) / abs(e0) if e0 != 0 else abs(self.energies[-1][1])


def run_simulation(bodies, params: SimParams, config: StrategyConfig, steps: int,
                   energy_every: int = 0, prime: bool = True) -> SimulationResult:
    """``steps`` calls of :func:`run_step`.

    With ``prime`` the starting accelerations are evaluated first (untimed).
    ``energy_every = k > 0`` records the total energy at step 0, every k-th
    step and the last step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    bs = as_bodyset(bodies).copy()
    if prime:
        bs.acc = evaluate(bs, params, config)
    energies = []
    if energy_every:
        energies.append((0, total_energy(bs, params.eps, params.g_const)))
    reports = []
    totals = StepReport()
    for i in range(1, steps + 1):
        bs, rep = run_step(bs, params, config)
        reports.append(rep)
        totals.add(rep)
        if energy_every and (i % energy_every == 0 or i == steps):
            energies.append((i, total_energy(bs, params.eps, params.g_const)))
    return SimulationResult(bs, reports, energies, totals)
