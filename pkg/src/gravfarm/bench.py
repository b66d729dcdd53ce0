"""Initial conditions, the benchmark matrix, CSV output and plot scripts."""

from __future__ import annotations

import csv
import json
import math
import os
import statistics
import sys
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .bodies import BodySet
from .errors import MalformedCsv
from .forces import total_energy
from .params import SimParams
from .strategies import MODES, StrategyConfig, run_simulation

COLUMNS = ["run_id", "mode", "n", "workers", "step", "tree_s", "list_s", "force_s", "update_s",
           "init_s", "finalize_s", "total_s", "interactions", "energy_drift", "status"]
_TIME_COLS = ["tree_s", "list_s", "force_s", "update_s", "init_s", "finalize_s", "total_s"]
SUMMARY_STEP = "median"

# exact O(N^2) energy is skipped above this size
ENERGY_MAX_N = 20000


def generate_bodies(n: int, distribution: str = "uniform", seed: int = 0) -> BodySet:
    """``uniform``: unit cube, mass 1/n, at rest. ``plummer``: Plummer sphere in
    Henon units (G = M = 1, scale radius 3 pi / 16) with isotropic virial
    velocities, recentred to zero centre of mass and momentum."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    if distribution == "uniform":
        return BodySet.from_arrays(np.full(n, 1.0 / n), rng.random((n, 3)))
    if distribution != "plummer":
        raise ValueError(f"unknown distribution {distribution!r}")
    a = 3 * math.pi / 16
    # truncate the mass profile so no body lands absurdly far out
    x = rng.uniform(0.0, 0.999, n)
    r = a / np.sqrt(x ** (-2.0 / 3.0) - 1.0)
    pos = _isotropic(rng, n) * r[:, None]
    # speed from f(q) ~ q^2 (1 - q^2)^3.5 by rejection, q = v / v_esc
    q = np.empty(n)
    todo = np.arange(n)
    while todo.size:
        trial = rng.random(todo.size)
        keep = rng.random(todo.size) * 0.1 < trial ** 2 * (1 - trial ** 2) ** 3.5
        q[todo[keep]] = trial[keep]
        todo = todo[~keep]
    v_esc = np.sqrt(2.0) * (r * r + a * a) ** -0.25
    vel = _isotropic(rng, n) * (q * v_esc)[:, None]
    mass = np.full(n, 1.0 / n)
    pos -= np.average(pos, axis=0, weights=mass)
    vel -= np.average(vel, axis=0, weights=mass)
    return BodySet.from_arrays(mass, pos, vel=vel)


def _isotropic(rng, n):
    cos_t = rng.uniform(-1.0, 1.0, n)
    phi = rng.uniform(0.0, 2 * math.pi, n)
    sin_t = np.sqrt(1.0 - cos_t ** 2)
    return np.column_stack([sin_t * np.cos(phi), sin_t * np.sin(phi), cos_t])


@dataclass
class BenchSpec:
    """Desk-scale defaults; :meth:`paper_matrix` gives the full-size matrix."""

    n: list = field(default_factory=lambda: [1000, 10000, 50000])
    workers: list = field(default_factory=lambda: [1, 2, 4, 8])
    modes: list = field(default_factory=lambda: list(MODES))
    steps: int = 5
    reps: int = 3
    seed: int = 42
    dist: str = "uniform"
    theta: float = 0.5
    eps: float = 0.025
    dt: float = 1e-3
    chunks: int | None = None
    rank_threads: int = 1

    def __post_init__(self):
        self.n = [int(x) for x in self.n]
        self.workers = [int(x) for x in self.workers]
        self.modes = list(self.modes)
        if not self.n or min(self.n) < 1 or not self.workers or min(self.workers) < 1:
            raise ValueError("body and worker counts must be >= 1")
        if self.steps < 1 or self.reps < 1:
            raise ValueError("steps and reps must be >= 1")
        bad = [m for m in self.modes if m not in MODES]
        if bad:
            raise ValueError(f"unknown modes {bad}")
        if self.dist not in ("uniform", "plummer"):
            raise ValueError(f"unknown distribution {self.dist!r}")

    @classmethod
    def paper_matrix(cls, **kw) -> "BenchSpec":
        return cls(n=[10000, 50000, 100000], workers=[1, 2, 4, 8, 16, 24], **kw)

    @classmethod
    def from_mapping(cls, values: dict, paper_matrix: bool = False) -> "BenchSpec":
        known = {f.name for f in fields(cls)}
        kw = {k: v for k, v in values.items() if k in known and v is not None}
        if paper_matrix or _truthy(values.get("paper_matrix")):
            base = cls.paper_matrix()
            return replace(base, **{k: v for k, v in kw.items() if k not in ("n", "workers")})
        return cls(**kw)

    @property
    def params(self) -> SimParams:
        return SimParams(theta=self.theta, eps=self.eps, dt=self.dt)


def _truthy(v) -> bool:
    return str(v).strip().lower() in ("1", "true", "yes", "on")


_LIST_KEYS = {"n": int, "workers": int, "modes": str}
_SCALAR_KEYS = {"steps": int, "reps": int, "seed": int, "dist": str, "theta": float, "eps": float,
                "dt": float, "chunks": int, "rank_threads": int, "out": str, "self_host": int,
                "agent": str, "paper_matrix": str}


def read_spec_file(path) -> dict:
    """Parse ``key = value`` lines (``#`` comments); keys are the long bench flags."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            key, sep, value = line.partition(":")
        key = key.strip().lstrip("-").replace("-", "_")
        value = value.strip()
        if not sep or not key:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        if key in _LIST_KEYS:
            out[key] = [_LIST_KEYS[key](x) for x in value.replace(",", " ").split()]
        elif key in _SCALAR_KEYS:
            out[key] = _SCALAR_KEYS[key](value)
        else:
            raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
    return out


def _cells(spec: BenchSpec, gridrpc_slots: int | None):
    for n in spec.n:
        for mode in spec.modes:
            if mode == "sequential":
                yield mode, n, 1
            elif mode == "gridrpc":
                # the fabric's slots decide the parallelism
                yield mode, n, gridrpc_slots or 0
            else:
                for w in spec.workers:
                    if mode == "orb_ranks" and w > n:
                        continue
                    yield mode, n, w


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6g}"
    return str(v)


def run_bench(spec: BenchSpec, out=None, self_host: int | None = None, agent: str | None = None,
              progress: bool = False) -> list[dict]:
    """Run every cell of ``spec``; returns the rows and writes them to ``out``.

    Each cell contributes ``steps x reps`` step rows and one ``median`` row
    holding, per column, the median across reps of the per-step mean.
    A failing cell leaves a single row with the error in ``status``.
    """
    fabric = None
    address = agent or os.environ.get("GRAVFARM_AGENT")
    slots = None
    try:
        if "gridrpc" in spec.modes and self_host:
            from .rpc.fabric import LocalFabric
            fabric = LocalFabric(self_host, mode="process").start()
            address = fabric.address
        if "gridrpc" in spec.modes and address:
            from .rpc.client import query_servers
            try:
                slots = sum(r["capacity"] for r in query_servers(address) if r["alive"])
            except OSError:
                slots = None
        rows = []
        run_id = 0
        params = spec.params
        for mode, n, workers in _cells(spec, slots):
            cell_rows = []
            try:
                if mode == "gridrpc" and not address:
                    raise RuntimeError("no fabric: pass --self-host K or --agent HOST:PORT")
                cfg = StrategyConfig(mode, max(workers, 1), rank_threads=spec.rank_threads,
                                     chunks=spec.chunks, fabric=address if mode == "gridrpc" else None)
                bodies = generate_bodies(n, spec.dist, spec.seed)
                with_energy = n <= ENERGY_MAX_N
                e0 = total_energy(bodies, params.eps, params.g_const) if with_energy else float("nan")
                reps = []
                for rep in range(spec.reps):
                    sim = run_simulation(bodies, params, cfg, spec.steps)
                    drift = float("nan")
                    if with_energy:
                        e1 = total_energy(sim.bodies, params.eps, params.g_const)
                        drift = abs(e1 - e0) / abs(e0)
                    steps = []
                    for i, r in enumerate(sim.reports, 1):
                        steps.append(dict(run_id=run_id, mode=mode, n=n, workers=workers, step=i,
                                          tree_s=r.tree_build + r.exchange, list_s=r.list_build,
                                          force_s=r.force, update_s=r.update, init_s=r.init,
                                          finalize_s=r.finalize, total_s=r.total,
                                          interactions=r.interactions,
                                          energy_drift=drift if i == spec.steps else float("nan"),
                                          status="ok"))
                    reps.append(steps)
                    cell_rows += steps
                    run_id += 1
                summary = dict(run_id=f"{mode}-{n}-{workers}", mode=mode, n=n, workers=workers,
                               step=SUMMARY_STEP, status="ok")
                for col in _TIME_COLS + ["interactions"]:
                    summary[col] = statistics.median(
                        sum(s[col] for s in steps) / len(steps) for steps in reps)
                drifts = [steps[-1]["energy_drift"] for steps in reps]
                summary["energy_drift"] = statistics.median(drifts)
                cell_rows.append(summary)
            except Exception as e:  # noqa: BLE001 - recorded per cell, the run goes on
                cell_rows = [dict(run_id=run_id, mode=mode, n=n, workers=workers, step="",
                                  status=f"error: {type(e).__name__}: {e}")]
                run_id += 1
            rows += cell_rows
            if progress:
                last = cell_rows[-1]
                print(f"{mode:>10} n={n:<7} workers={workers:<3} "
                      + (f"total {last['total_s']:.4f} s/step" if last["status"] == "ok" else last["status"]),
                      file=sys.stderr, flush=True)
        if out is not None:
            write_csv(rows, out)
        return rows
    finally:
        if fabric is not None:
            fabric.stop()


def write_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        for r in rows:
            w.writerow([_fmt(r.get(c, "")) for c in COLUMNS])


def read_csv(path) -> list[dict]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or header[:len(COLUMNS) - 1] != COLUMNS[:-1]:
                raise MalformedCsv(f"{path}: header does not match {COLUMNS}")
            rows = []
            for lineno, rec in enumerate(reader, 2):
                if not rec:
                    continue
                if len(rec) != len(header):
                    raise MalformedCsv(f"{path}:{lineno}: expected {len(header)} fields")
                rows.append(dict(zip(header, rec)))
    except (OSError, UnicodeDecodeError, csv.Error) as e:
        raise MalformedCsv(f"{path}: {e}") from e
    return rows


def plot_data(rows: list[dict]) -> dict:
    """``{n: {mode: {"workers": [...], "total_s": [...]}}}`` from the median rows."""
    data: dict = {}
    for lineno, r in enumerate(rows, 2):
        if r["step"] != SUMMARY_STEP or r.get("status", "ok") != "ok":
            continue
        try:
            n, w, t = int(r["n"]), int(r["workers"]), float(r["total_s"])
        except ValueError as e:
            raise MalformedCsv(f"row {lineno}: {e}") from e
        series = data.setdefault(str(n), {}).setdefault(r["mode"], {"workers": [], "total_s": []})
        series["workers"].append(w)
        series["total_s"].append(t)
    for by_mode in data.values():
        for s in by_mode.values():
            order = np.argsort(s["workers"], kind="stable")
            s["workers"] = [s["workers"][i] for i in order]
            s["total_s"] = [s["total_s"][i] for i in order]
    return data


_SCRIPT = '''"""Execution time per step against worker count, one panel per body count.

Generated by ``gravfarm plot`` from {csv}. Run with ``python {name}``.
"""
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

# BEGIN DATA
DATA = {data}
# END DATA

panels = sorted(DATA, key=int) or ["(no data)"]
fig, axes = plt.subplots(1, len(panels), figsize=(4.5 * len(panels), 3.8), squeeze=False)
for ax, n in zip(axes[0], panels):
    for mode, s in sorted(DATA.get(n, {{}}).items()):
        ax.plot(s["workers"], s["total_s"], marker="o", label=mode)
    ax.set_title(f"N = {{n}}")
    ax.set_xlabel("workers")
    ax.set_ylabel("time per step (s)")
    ax.set_xscale("log", base=2)
    if DATA.get(n):
        ax.legend()
fig.tight_layout()
out = sys.argv[1] if len(sys.argv) > 1 else {png!r}
fig.savefig(out, dpi=120)
print(out)
'''


def emit_plot_script(csv_path, out=None) -> Path:
    """Write a self-contained matplotlib script charting the CSV's median rows."""
    csv_path = Path(csv_path)
    data = plot_data(read_csv(csv_path))
    out = Path(out) if out else csv_path.with_name(csv_path.stem + "_plot.py")
    out.write_text(_SCRIPT.format(csv=csv_path.name, name=out.name,
                                  data=json.dumps(data, indent=1, sort_keys=True),
                                  png=str(out.with_suffix(".png").name)))
    return out


def extract_plot_data(script_path) -> dict:
    """The DATA block of a generated plot script."""
    text = Path(script_path).read_text()
    try:
        block = text.split("# BEGIN DATA\n", 1)[1].split("# END DATA", 1)[0]
    except IndexError:
        raise ValueError(f"{script_path} has no DATA block") from None
    return json.loads(block.strip().removeprefix("DATA = "))
