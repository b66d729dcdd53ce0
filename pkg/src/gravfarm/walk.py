"""Interaction lists from a depth-first tree walk.

A cell is accepted as a single point mass when ``side / d < theta``, with ``d``
the distance from the target to the cell's centre of mass, and the target is
not inside the cell. Rejected internal cells open into their children; leaves
always contribute their individual bodies. Foreign cell summaries merged from
other ranks are appended to every list after the local walk.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .bodies import Body
from .tree import Tree


@dataclass
class InteractionList:
    """Point masses one body's force sum loops over, in traversal order."""

    mass: np.ndarray
    pos: np.ndarray

    def __len__(self) -> int:
        return self.mass.shape[0]

    @classmethod
    def empty(cls) -> "InteractionList":
        return cls(np.zeros(0), np.zeros((0, 3)))


@dataclass
class InteractionLists:
    """Lists for a batch of targets in CSR form over a tree's point table.

    ``index[offsets[i]:offsets[i + 1]]`` are point-table rows for target ``i``,
    which is tree body ``rows[i]`` (or ``-1`` for a free-standing position).
    """

    tree: Tree
    rows: np.ndarray
    offsets: np.ndarray
    index: np.ndarray
    foreign_mac_failures: int = 0

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def total(self) -> int:
        return int(self.offsets[-1] - self.offsets[0])

    def lengths(self) -> np.ndarray:
        return np.diff(self.offsets)

    def indices(self, i: int) -> np.ndarray:
        return self.index[self.offsets[i]:self.offsets[i + 1]]

    def __getitem__(self, i: int) -> InteractionList:
        m, p = self.tree.points()
        ix = self.indices(i)
        return InteractionList(m[ix], p[ix])

    def slice(self, start: int, stop: int) -> "InteractionLists":
        """Targets ``start:stop`` re-based onto their own index run."""
        a, b = self.offsets[start], self.offsets[stop]
        return InteractionLists(self.tree, self.rows[start:stop],
                                self.offsets[start:stop + 1] - a, self.index[a:b])

    @classmethod
    def concat(cls, parts: list["InteractionLists"]) -> "InteractionLists":
        tree = parts[0].tree
        rows = np.concatenate([p.rows for p in parts])
        index = np.concatenate([p.index for p in parts])
        lengths = np.concatenate([p.lengths() for p in parts])
        offsets = np.zeros(rows.shape[0] + 1, dtype=np.int64)
        np.cumsum(lengths, out=offsets[1:])
        return cls(tree, rows, offsets, index, sum(p.foreign_mac_failures for p in parts))


_SLACK = 4096


@njit(cache=True, nogil=True)
def _walk_kernel(t0, total, tpos, tself, theta, lo, side, com, child, leaf, first,
                 count, order, fpos, fside, offsets, index):
    """Walk targets ``t0..`` into ``index`` from ``total``.

    Returns ``(next_target, total, foreign_failures)``; stops early when
    ``index`` runs low so the caller can grow it and resume.
    """
    n_t = tpos.shape[0]
    n_nodes = side.shape[0]
    n_foreign = fside.shape[0]
    foreign_base = n_nodes + order.shape[0]
    cap = index.shape[0]
    theta2 = theta * theta
    bad = 0
    stack = np.empty(8 * 72, dtype=np.int64)
    for t in range(t0, n_t):
        if total + n_foreign + _SLACK > cap:
            return t, total, bad
        start = total
        px = tpos[t, 0]
        py = tpos[t, 1]
        pz = tpos[t, 2]
        me = tself[t]
        sp = 1
        stack[0] = 0
        while sp > 0:
            sp -= 1
            k = stack[sp]
            if leaf[k]:
                if total + count[k] + n_foreign + 1 > cap:
                    return t, start, bad
                for i in range(first[k], first[k] + count[k]):
                    b = order[i]
                    if b != me:
                        index[total] = n_nodes + b
                        total += 1
                continue
            dx = com[k, 0] - px
            dy = com[k, 1] - py
            dz = com[k, 2] - pz
            s = side[k]
            if s * s < theta2 * (dx * dx + dy * dy + dz * dz):
                inside = (lo[k, 0] <= px < lo[k, 0] + s and lo[k, 1] <= py < lo[k, 1] + s
                          and lo[k, 2] <= pz < lo[k, 2] + s)
                if not inside:
                    index[total] = k
                    total += 1
                    if total + n_foreign + 8 > cap:
                        return t, start, bad
                    continue
            for o in range(7, -1, -1):
                j = child[k, o]
                if j >= 0:
                    stack[sp] = j
                    sp += 1
        for f in range(n_foreign):
            s = fside[f]
            if s > 0.0:
                dx = fpos[f, 0] - px
                dy = fpos[f, 1] - py
                dz = fpos[f, 2] - pz
                if not (s * s < theta2 * (dx * dx + dy * dy + dz * dz)):
                    bad += 1
            index[total] = foreign_base + f
            total += 1
        offsets[t + 1] = total
    return n_t, total, bad


def _check(tree: Tree, theta: float) -> None:
    if not tree.has_moments:
        raise ValueError("compute_mass_moments must run before walking the tree")
    if theta < 0:
        raise ValueError("theta must be >= 0")


def _run_walk(tree: Tree, theta: float, tpos: np.ndarray, tself: np.ndarray) -> InteractionLists:
    n_t = tpos.shape[0]
    offsets = np.zeros(n_t + 1, dtype=np.int64)
    index = np.empty(max(2 * _SLACK, n_t * (64 + tree.n_foreign)), dtype=np.int32)
    fpos = np.ascontiguousarray(tree.foreign_pos)
    done, total, bad = 0, 0, 0
    while True:
        done, total, b = _walk_kernel(done, total, tpos, tself, float(theta), tree.lo, tree.side,
                                      tree.com, tree.child, tree.leaf, tree.first, tree.count,
                                      tree.order, fpos, tree.foreign_side, offsets, index)
        bad += b
        if done == n_t:
            break
        grown = np.empty(2 * index.shape[0] + tree.n_foreign, dtype=np.int32)
        grown[:total] = index[:total]
        index = grown
    return InteractionLists(tree, tself, offsets, index[:total].copy(), int(bad))


def build_interaction_lists(tree: Tree, theta: float, rows=None, targets=None) -> InteractionLists:
    """Lists for tree bodies ``rows`` (default: every local body, in tree order).

    Each body is excluded from its own list. ``targets`` may instead give
    free-standing ``(T, 3)`` positions, for which nothing is excluded.
    """
    _check(tree, theta)
    if targets is not None:
        tpos = np.ascontiguousarray(np.asarray(targets, dtype=np.float64).reshape(-1, 3))
        tself = np.full(tpos.shape[0], -1, dtype=np.int64)
    else:
        tself = tree.local_order if rows is None else np.asarray(rows, dtype=np.int64).reshape(-1)
        tpos = np.ascontiguousarray(tree.body_pos[tself])
    return _run_walk(tree, theta, tpos, tself)


def build_interaction_list(tree: Tree, body, theta: float) -> InteractionList:
    """Interaction list for one body: a tree row index or a :class:`Body`.

    A :class:`Body` whose id and position match a tree body is excluded from
    its own list.
    """
    if isinstance(body, Body):
        hit = np.flatnonzero(tree.body_ids == body.id)
        if hit.size and np.array_equal(tree.body_pos[hit[0]], body.pos):
            lists = build_interaction_lists(tree, theta, rows=hit[:1])
        else:
            lists = build_interaction_lists(tree, theta, targets=body.pos)
    else:
        lists = build_interaction_lists(tree, theta, rows=[int(body)])
    return lists[0]
