import math

import numpy as np
import pytest

from gravfarm.bodies import BodySet


def random_bodies(n, seed=0, scale=1.0, equal_mass=False):
    rng = np.random.default_rng(seed)
    mass = np.full(n, 1.0 / n) if equal_mass else rng.uniform(0.5, 1.5, n) / n
    return BodySet.from_arrays(mass, rng.random((n, 3)) * scale,
                               vel=rng.normal(scale=0.1, size=(n, 3)))


def circular_pair():
    """Unit masses at x = +-0.5 on a circular orbit about the origin (g = 1)."""
    # centripetal balance: v^2 / 0.5 = g m / 1^2  ->  v = sqrt(0.5)
    v = math.sqrt(0.5)
    return BodySet.from_arrays([1.0, 1.0], [[0.5, 0, 0], [-0.5, 0, 0]],
                               vel=[[0, v, 0], [0, -v, 0]])


def walk_oracle(tree, pos, theta, self_row=-1):
    """Recursive per-body walk written independently of the numba kernel.

    Returns the accepted point-table rows as a sorted list.
    """
    out = []

    def visit(k):
        if tree.leaf[k]:
            out.extend(tree.n_nodes + int(b) for b in tree.leaf_bodies(k) if b != self_row)
            return
        d = np.linalg.norm(pos - tree.com[k])
        box = tree.cell_box(k)
        inside = bool(np.all(pos >= box.min) and np.all(pos < box.max))
        if d > 0 and tree.side[k] / d < theta and not inside:
            out.append(k)
            return
        for j in tree.children(k):
            visit(j)

    visit(0)
    return sorted(out)


@pytest.fixture
def bodies64():
    return random_bodies(64, seed=64)


_CRITERIA = []



@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None and (rep.when == "call" or (rep.when == "setup" and rep.outcome != "passed")):
        detail = getattr(item, "criterion_detail", "")
        _CRITERIA.append((mark.args[0], rep.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, detail in _CRITERIA:
        tag = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{tag}  {name}" + (f"  [{detail}]" if detail else ""))
