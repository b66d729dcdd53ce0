"""Oct-tree construction and monopole moments.

The tree is stored flat. Node ``k`` has a cubic cell ``[lo[k], lo[k] + side[k])``;
internal nodes list up to eight children in ``child[k]`` (``-1`` for an empty
octant), leaves own the contiguous slice ``order[first[k]:first[k] + count[k]]``
of body rows. Children always have larger indices than their parent, so a
reverse sweep over node indices is a valid post-order.

Interaction lists address a single *point table*: rows ``[0, n_nodes)`` are
cell summaries (total mass at the centre of mass), rows
``[n_nodes, n_nodes + n_bodies)`` are the bodies themselves and any trailing
rows are foreign cell summaries merged in from other ranks. Foreign raw bodies
are ordinary tree bodies stored after the ``n_local`` local ones.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .bodies import as_bodyset
from .errors import DepthLimitExceeded, EmptyInput

MAX_DEPTH = 64
ROOT_INFLATION = 1e-9


@dataclass(frozen=True)
class BoundingBox:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.min, dtype=np.float64).reshape(3).copy()
        hi = np.asarray(self.max, dtype=np.float64).reshape(3).copy()
        if np.any(lo > hi):
            raise ValueError(f"inverted box: {lo} > {hi}")
        object.__setattr__(self, "min", lo)
        object.__setattr__(self, "max", hi)

    @property
    def side(self) -> float:
        return float(np.max(self.max - self.min))

    def contains(self, p) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.min) and np.all(p <= self.max))

    def distance_to(self, p) -> float:
        """Euclidean distance from a point to the closed box (0 inside)."""
        p = np.asarray(p, dtype=np.float64)
        gap = np.maximum(0.0, np.maximum(self.min - p, p - self.max))
        return float(np.sqrt(gap @ gap))


def root_box(pos: np.ndarray) -> BoundingBox:
    """Cubic box around all positions, inflated so every body is strictly inside."""
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    center = 0.5 * (lo + hi)
    side = float(np.max(hi - lo))
    scale = max(side, float(np.max(np.abs(center))), 1.0)
    side = side + 2.0 * ROOT_INFLATION * scale
    return BoundingBox(center - 0.5 * side, center + 0.5 * side)


@njit(cache=True, nogil=True)
def _build_kernel(pos, root_lo, root_side, leaf_cap, max_depth, capacity):
    n = pos.shape[0]
    lo = np.empty((capacity, 3))
    side = np.empty(capacity)
    child = np.full((capacity, 8), -1, dtype=np.int32)
    first = np.zeros(capacity, dtype=np.int64)
    count = np.zeros(capacity, dtype=np.int64)
    leaf = np.zeros(capacity, dtype=np.bool_)
    depth = np.zeros(capacity, dtype=np.int32)
    parent = np.full(capacity, -1, dtype=np.int32)
    order = np.arange(n).astype(np.int64)
    buf = np.empty(n, dtype=np.int64)
    octs = np.empty(n, dtype=np.int8)

    lo[0] = root_lo
    side[0] = root_side
    first[0] = 0
    count[0] = n
    n_nodes = 1
    depth_hit = False
    deepest = 0

    stack = np.empty(max(8 * (max_depth + 2), 64), dtype=np.int64)
    sp = 0
    stack[sp] = 0
    sp += 1
    while sp > 0:
        sp -= 1
        k = stack[sp]
        s0 = first[k]
        c = count[k]
        if depth[k] > deepest:
            deepest = depth[k]
        if c <= leaf_cap:
            leaf[k] = True
            continue
        if depth[k] >= max_depth:
            leaf[k] = True
            depth_hit = True
            continue
        if n_nodes + 8 > capacity:
            return (n_nodes, -1, depth_hit, deepest, lo, side, child, first,
                    count, leaf, depth, parent, order)
        half = side[k] * 0.5
        mx = lo[k, 0] + half
        my = lo[k, 1] + half
        mz = lo[k, 2] + half
        tally = np.zeros(8, dtype=np.int64)
        for i in range(s0, s0 + c):
            b = order[i]
            o = 0
            if pos[b, 0] >= mx:
                o |= 1
            if pos[b, 1] >= my:
                o |= 2
            if pos[b, 2] >= mz:
                o |= 4
            octs[i] = o
            tally[o] += 1
        start = np.empty(8, dtype=np.int64)
        run = s0
        for o in range(8):
            start[o] = run
            run += tally[o]
        fill = start.copy()
        for i in range(s0, s0 + c):
            o = octs[i]
            buf[fill[o]] = order[i]
            fill[o] += 1
        for i in range(s0, s0 + c):
            order[i] = buf[i]
        # children numbered in octant order, pushed in reverse so octant 0 pops first
        first_child = n_nodes
        for o in range(8):
            if tally[o] == 0:
                continue
            j = n_nodes
            n_nodes += 1
            child[k, o] = j
            parent[j] = k
            depth[j] = depth[k] + 1
            side[j] = half
            lo[j, 0] = mx if (o & 1) else lo[k, 0]
            lo[j, 1] = my if (o & 2) else lo[k, 1]
            lo[j, 2] = mz if (o & 4) else lo[k, 2]
            first[j] = start[o]
            count[j] = tally[o]
        for j in range(n_nodes - 1, first_child - 1, -1):
            stack[sp] = j
            sp += 1
    return (n_nodes, 0, depth_hit, deepest, lo, side, child, first, count,
            leaf, depth, parent, order)


@njit(cache=True, nogil=True)
def _moments_kernel(n_nodes, child, leaf, first, count, order, body_mass, body_pos):
    mass = np.zeros(n_nodes)
    com = np.zeros((n_nodes, 3))
    for k in range(n_nodes - 1, -1, -1):
        m = 0.0
        cx = 0.0
        cy = 0.0
        cz = 0.0
        if leaf[k]:
            for i in range(first[k], first[k] + count[k]):
                b = order[i]
                mb = body_mass[b]
                m += mb
                cx += mb * body_pos[b, 0]
                cy += mb * body_pos[b, 1]
                cz += mb * body_pos[b, 2]
        else:
            for o in range(8):
                j = child[k, o]
                if j < 0:
                    continue
                mj = mass[j]
                m += mj
                cx += mj * com[j, 0]
                cy += mj * com[j, 1]
                cz += mj * com[j, 2]
        mass[k] = m
        com[k, 0] = cx / m
        com[k, 1] = cy / m
        com[k, 2] = cz / m
    return mass, com


@dataclass
class Tree:
    lo: np.ndarray
    side: np.ndarray
    child: np.ndarray
    first: np.ndarray
    count: np.ndarray
    leaf: np.ndarray
    depth: np.ndarray
    parent: np.ndarray
    order: np.ndarray
    body_ids: np.ndarray
    body_mass: np.ndarray
    body_pos: np.ndarray
    leaf_capacity: int
    depth_limited: bool = False
    mass: np.ndarray | None = None
    com: np.ndarray | None = None
    # foreign cell summaries merged from other ranks; see orb.merge_essential
    foreign_mass: np.ndarray = field(default_factory=lambda: np.zeros(0))
    foreign_pos: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    foreign_side: np.ndarray = field(default_factory=lambda: np.zeros(0))
    foreign_attach: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    # body rows >= n_local are foreign raw bodies: in the moments, never targets
    n_local: int | None = None
    _points: tuple | None = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return self.side.shape[0]

    @property
    def n_bodies(self) -> int:
        return self.order.shape[0]

    @property
    def n_targets(self) -> int:
        return self.n_bodies if self.n_local is None else self.n_local

    @property
    def local_order(self) -> np.ndarray:
        """Tree-order rows of the local bodies (all bodies unless merged)."""
        if self.n_local is None:
            return self.order
        return self.order[self.order < self.n_local]

    @property
    def n_foreign(self) -> int:
        return self.foreign_mass.shape[0]

    @property
    def root(self) -> BoundingBox:
        return self.cell_box(0)

    @property
    def max_depth(self) -> int:
        return int(self.depth.max())

    @property
    def has_moments(self) -> bool:
        return self.mass is not None

    def cell_box(self, k: int) -> BoundingBox:
        return BoundingBox(self.lo[k], self.lo[k] + self.side[k])

    def leaf_bodies(self, k: int) -> np.ndarray:
        """Body rows held by leaf ``k``."""
        return self.order[self.first[k]:self.first[k] + self.count[k]]

    def leaves(self) -> np.ndarray:
        return np.flatnonzero(self.leaf)

    def children(self, k: int) -> np.ndarray:
        c = self.child[k]
        return c[c >= 0]

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """``(mass, pos)`` of the point table that interaction lists index."""
        if self.mass is None:
            raise ValueError("mass moments not computed")
        if self._points is None:
            m = np.concatenate([self.mass, self.body_mass, self.foreign_mass])
            p = np.concatenate([self.com, self.body_pos, self.foreign_pos])
            self._points = (m, np.ascontiguousarray(p))
        return self._points

    def body_point(self, row: int) -> int:
        return self.n_nodes + row


def build_tree(bodies, leaf_capacity: int = 1, box: BoundingBox | None = None) -> Tree:
    """Oct-tree over ``bodies`` with at most ``leaf_capacity`` bodies per leaf.

    ``box`` overrides the root cell; it must be cubic and contain every body.
    Bodies that stay together down to depth 64 share one over-full leaf and a
    :class:`DepthLimitExceeded` warning is issued.
    """
    bs = as_bodyset(bodies)
    if len(bs) == 0:
        raise EmptyInput("build_tree needs at least one body")
    if leaf_capacity < 1:
        raise ValueError("leaf_capacity must be >= 1")
    if not np.all(np.isfinite(bs.pos)):
        raise ValueError("non-finite body positions")
    pos = bs.pos
    if box is None:
        box = root_box(pos)
    n = len(bs)
    capacity = max(64, 4 * n // leaf_capacity + 64)
    while True:
        out = _build_kernel(pos, box.min, box.side, leaf_capacity, MAX_DEPTH, capacity)
        n_nodes, status = out[0], out[1]
        if status == 0:
            break
        capacity *= 2
    _, _, depth_hit, _, lo, side, child, first, count, leaf, depth, parent, order = out
    if depth_hit:
        warnings.warn(f"subdivision reached depth {MAX_DEPTH}; coincident bodies share a leaf",
                      DepthLimitExceeded, stacklevel=2)
    m = n_nodes
    return Tree(lo=lo[:m].copy(), side=side[:m].copy(), child=child[:m].copy(),
                first=first[:m].copy(), count=count[:m].copy(), leaf=leaf[:m].copy(),
                depth=depth[:m].copy(), parent=parent[:m].copy(), order=order,
                body_ids=bs.ids.copy(), body_mass=bs.mass.copy(), body_pos=pos.copy(),
                leaf_capacity=leaf_capacity, depth_limited=bool(depth_hit))


def compute_mass_moments(tree: Tree) -> Tree:
    """Annotate every cell with total mass and centre of mass (in place)."""
    mass, com = _moments_kernel(tree.n_nodes, tree.child, tree.leaf, tree.first,
                                tree.count, tree.order, tree.body_mass, tree.body_pos)
    tree.mass = mass
    tree.com = com
    tree._points = None
    return tree


def build_moment_tree(bodies, leaf_capacity: int = 1, box: BoundingBox | None = None) -> Tree:
    return compute_mass_moments(build_tree(bodies, leaf_capacity, box))
