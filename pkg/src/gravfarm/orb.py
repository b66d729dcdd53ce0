"""Orthogonal recursive bisection and locally essential trees.

:func:`orb_partition` cuts the global root cube into one box per rank with
equal body counts. Each rank builds a tree over its own bodies inside the
same global cube, ships every other rank the essential part of it
(:func:`collect_essential_nodes`) and splices what it receives into its own
tree (:func:`merge_essential`): raw bodies as ordinary bodies, cell
summaries as opaque point masses.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np
from numba import njit

from .bodies import BodySet, as_bodyset
from .errors import ForeignNodeOutsideRoot, InvalidRankCount, OutOfDomain, ProtocolError
from .tree import BoundingBox, Tree, build_tree, compute_mass_moments, root_box


@dataclass
class OrbNode:
    box: BoundingBox
    rank: int = -1
    axis: int = -1
    split: float = 0.0
    low: "OrbNode | None" = None
    high: "OrbNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.low is None


@dataclass
class OrbPartition:
    root: OrbNode
    rank_count: int
    domains: list[BoundingBox]

    @property
    def box(self) -> BoundingBox:
        return self.root.box

    def leaves(self) -> list[OrbNode]:
        out, todo = [], [self.root]
        while todo:
            node = todo.pop()
            if node.is_leaf:
                out.append(node)
            else:
                todo += [node.high, node.low]
        return out

    def splits(self) -> list[OrbNode]:
        out, todo = [], [self.root]
        while todo:
            node = todo.pop()
            if not node.is_leaf:
                out.append(node)
                todo += [node.high, node.low]
        return out


def low_share(n: int, p: int) -> int:
    """Bodies sent to the low side when ``n`` bodies split over ``p`` ranks.

    The low side holds ``ceil(p / 2)`` ranks and ``ceil(n * p_low / p)`` bodies.
    Applied recursively this keeps every rank at ``n // p`` or ``n // p + 1``
    and equal-rank halves within one body of each other.
    """
    p_low = (p + 1) // 2
    return -(-n * p_low // p)


def rank_targets(n: int, p: int) -> np.ndarray:
    """Body count each rank receives from :func:`orb_partition`."""
    out = np.empty(p, dtype=np.int64)

    def fill(m, r0, r1):
        if r1 - r0 == 1:
            out[r0] = m
            return
        k = low_share(m, r1 - r0)
        mid = r0 + (r1 - r0 + 1) // 2
        fill(k, r0, mid)
        fill(m - k, mid, r1)

    fill(n, 0, p)
    return out


def _split_point(a: float, b: float) -> float:
    """A coordinate with ``a < split <= b`` when ``a < b``."""
    if a < b:
        mid = 0.5 * (a + b)
        return mid if a < mid else b
    return b


def orb_partition(bodies, p: int, box: BoundingBox | None = None) -> tuple[OrbPartition, np.ndarray]:
    """Split ``bodies`` over ``p`` ranks; returns the partition and each body's rank.

    Every cut is along the longest extent of the current bodies' bounding box
    at the median coordinate (ties ordered by id). Rank ``r`` receives
    ``rank_targets(n, p)[r]`` bodies, so counts differ by at most one; with an
    odd rank count the low side takes the larger share (3 ranks split 2:1).
    """
    bs = as_bodyset(bodies)
    n = len(bs)
    if not 1 <= p <= n:
        raise InvalidRankCount(f"rank count {p} must be in [1, {n}]")
    box = root_box(bs.pos) if box is None else box
    ranks = np.empty(n, dtype=np.int64)
    domains: list[BoundingBox | None] = [None] * p

    def cut(idx: np.ndarray, r0: int, r1: int, cell: BoundingBox) -> OrbNode:
        if r1 - r0 == 1:
            ranks[idx] = r0
            domains[r0] = cell
            return OrbNode(cell, rank=r0)
        p_low = (r1 - r0 + 1) // 2
        n_low = low_share(idx.shape[0], r1 - r0)
        sub = bs.pos[idx]
        axis = int(np.argmax(sub.max(axis=0) - sub.min(axis=0)))
        key = np.lexsort((bs.ids[idx], sub[:, axis]))
        idx = idx[key]
        coord = bs.pos[idx, axis]
        split = _split_point(coord[n_low - 1], coord[n_low])
        lo_max = cell.max.copy()
        lo_max[axis] = split
        hi_min = cell.min.copy()
        hi_min[axis] = split
        low = cut(idx[:n_low], r0, r0 + p_low, BoundingBox(cell.min, lo_max))
        high = cut(idx[n_low:], r0 + p_low, r1, BoundingBox(hi_min, cell.max))
        return OrbNode(cell, axis=axis, split=float(split), low=low, high=high)

    root = cut(np.arange(n), 0, p, box)
    return OrbPartition(root, p, domains), ranks


def locate_rank(partition: OrbPartition, pos) -> int:
    """Rank whose domain holds ``pos`` (``pos < split`` goes to the low side)."""
    pos = np.asarray(pos, dtype=np.float64).reshape(3)
    if not partition.box.contains(pos):
        raise OutOfDomain(f"{pos} outside the partition root box")
    node = partition.root
    while not node.is_leaf:
        node = node.low if pos[node.axis] < node.split else node.high
    return node.rank


@dataclass
class EssentialNodeSet:
    """Summaries and raw bodies one rank sends another.

    ``cells`` records the source-tree node of each summary; it is local
    bookkeeping and does not travel on the wire.
    """

    source: int
    dest: int
    summary_mass: np.ndarray
    summary_com: np.ndarray
    summary_side: np.ndarray
    bodies: BodySet
    cells: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    @property
    def n_summaries(self) -> int:
        return self.summary_mass.shape[0]

    def __len__(self) -> int:
        return self.n_summaries + len(self.bodies)


@njit(cache=True, nogil=True)
def _essential_kernel(theta, dmin_lo, dmin_hi, lo, side, com, child, leaf, first, count, order):
    n_nodes = side.shape[0]
    cells = np.empty(n_nodes, dtype=np.int64)
    rows = np.empty(order.shape[0], dtype=np.int64)
    nc = 0
    nb = 0
    theta2 = theta * theta
    stack = np.empty(8 * 72, dtype=np.int64)
    sp = 1
    stack[0] = 0
    while sp > 0:
        sp -= 1
        k = stack[sp]
        if leaf[k]:
            for i in range(first[k], first[k] + count[k]):
                rows[nb] = order[i]
                nb += 1
            continue
        gx = max(0.0, max(dmin_lo[0] - com[k, 0], com[k, 0] - dmin_hi[0]))
        gy = max(0.0, max(dmin_lo[1] - com[k, 1], com[k, 1] - dmin_hi[1]))
        gz = max(0.0, max(dmin_lo[2] - com[k, 2], com[k, 2] - dmin_hi[2]))
        s = side[k]
        if s * s < theta2 * (gx * gx + gy * gy + gz * gz):
            overlap = True
            for a in range(3):
                if lo[k, a] > dmin_hi[a] or lo[k, a] + s < dmin_lo[a]:
                    overlap = False
            if not overlap:
                cells[nc] = k
                nc += 1
                continue
        for o in range(7, -1, -1):
            j = child[k, o]
            if j >= 0:
                stack[sp] = j
                sp += 1
    return cells[:nc].copy(), rows[:nb].copy()


def collect_essential_nodes(local_tree: Tree, remote_domain: BoundingBox, theta: float,
                            source: int = 0, dest: int = 0,
                            local_bodies: BodySet | None = None) -> EssentialNodeSet:
    """Walk ``local_tree`` and keep what a body in ``remote_domain`` could need.

    A cell is emitted as a summary when ``side / d_min < theta``, ``d_min``
    being the distance from its centre of mass to ``remote_domain``, and the
    cell does not touch that box; otherwise the walk descends and leaves emit
    their bodies. ``local_bodies`` supplies velocities for the raw bodies
    (zeros otherwise).
    """
    if not local_tree.has_moments:
        raise ValueError("local tree needs mass moments")
    cells, rows = _essential_kernel(float(theta), remote_domain.min, remote_domain.max,
                                    local_tree.lo, local_tree.side, local_tree.com,
                                    local_tree.child, local_tree.leaf, local_tree.first,
                                    local_tree.count, local_tree.order)
    vel = np.zeros((rows.shape[0], 3)) if local_bodies is None else local_bodies.vel[rows]
    raw = BodySet(local_tree.body_ids[rows], local_tree.body_mass[rows],
                  local_tree.body_pos[rows], vel, np.zeros((rows.shape[0], 3)))
    return EssentialNodeSet(source, dest, local_tree.mass[cells].copy(),
                            local_tree.com[cells].copy(), local_tree.side[cells].copy(),
                            raw, cells)


@njit(cache=True)
def _attach_kernel(points, lo, side, child, leaf):
    out = np.empty(points.shape[0], dtype=np.int64)
    for f in range(points.shape[0]):
        k = 0
        while not leaf[k]:
            half = side[k] * 0.5
            o = 0
            if points[f, 0] >= lo[k, 0] + half:
                o |= 1
            if points[f, 1] >= lo[k, 1] + half:
                o |= 2
            if points[f, 2] >= lo[k, 2] + half:
                o |= 4
            j = child[k, o]
            if j < 0:
                break
            k = j
        out[f] = k
    return out


def merge_essential(local_tree: Tree, sets: list[EssentialNodeSet]) -> Tree:
    """Local tree augmented with the foreign items of ``sets``.

    Raw bodies are inserted as ordinary tree bodies (rows after the local
    ones, so ``n_local`` keeps the targets apart) and take part in the cell
    moments. Summaries stay opaque point masses with their original side
    length: each is routed to the deepest local cell containing it (recorded
    in ``foreign_attach``) and listed after every local walk. The local
    tree's root must be the global box.
    """
    sets = [s for s in sets if len(s)]
    if not sets:
        return local_tree
    box = local_tree.root
    raw = [s.bodies.pos for s in sets] + [s.summary_com for s in sets]
    everything = np.concatenate(raw)
    outside = np.any((everything < box.min) | (everything > box.max), axis=1)
    if np.any(outside):
        raise ForeignNodeOutsideRoot(f"{int(outside.sum())} foreign items lie outside the root box")

    tree = local_tree
    n_local = local_tree.n_targets
    if any(len(s.bodies) for s in sets):
        ids = np.concatenate([local_tree.body_ids] + [s.bodies.ids for s in sets])
        mass = np.concatenate([local_tree.body_mass] + [s.bodies.mass for s in sets])
        pos = np.concatenate([local_tree.body_pos] + [s.bodies.pos for s in sets])
        zeros = np.zeros_like(pos)
        tree = compute_mass_moments(build_tree(BodySet(ids, mass, pos, zeros, zeros),
                                               local_tree.leaf_capacity, box))
    fmass = np.concatenate([local_tree.foreign_mass] + [s.summary_mass for s in sets])
    fpos = np.ascontiguousarray(np.concatenate([local_tree.foreign_pos] + [s.summary_com for s in sets]))
    fside = np.concatenate([local_tree.foreign_side] + [s.summary_side for s in sets])
    attach = _attach_kernel(fpos, tree.lo, tree.side, tree.child, tree.leaf)
    return replace(tree, foreign_mass=fmass, foreign_pos=fpos, foreign_side=fside,
                   foreign_attach=attach, n_local=n_local, _points=None)


# canonical byte encoding --------------------------------------------------

TAG_BODY = 0x00
TAG_SUMMARY = 0x01
_SET_HEADER = struct.Struct("<III")
BODY_DTYPE = np.dtype([("id", "<u8"), ("mass", "<f8"), ("pos", "<f8", 3), ("vel", "<f8", 3)])
_BODY_ENTRY = np.dtype([("tag", "u1"), ("body", BODY_DTYPE)])
_SUMMARY_ENTRY = np.dtype([("tag", "u1"), ("mass", "<f8"), ("com", "<f8", 3), ("side", "<f8")])


def encode_essential(s: EssentialNodeSet) -> bytes:
    """Header ``<source u32, dest u32, count u32>`` then tagged entries, little-endian."""
    b = np.zeros(len(s.bodies), dtype=_BODY_ENTRY)
    b["tag"] = TAG_BODY
    b["body"]["id"] = s.bodies.ids
    b["body"]["mass"] = s.bodies.mass
    b["body"]["pos"] = s.bodies.pos
    b["body"]["vel"] = s.bodies.vel
    c = np.zeros(s.n_summaries, dtype=_SUMMARY_ENTRY)
    c["tag"] = TAG_SUMMARY
    c["mass"] = s.summary_mass
    c["com"] = s.summary_com
    c["side"] = s.summary_side
    return _SET_HEADER.pack(s.source, s.dest, len(s)) + b.tobytes() + c.tobytes()


@njit(cache=True)
def _scan_tags(buf, start, count):
    kinds = np.empty(count, dtype=np.int8)
    offs = np.empty(count, dtype=np.int64)
    p = start
    for e in range(count):
        if p >= buf.shape[0]:
            return kinds, offs, -1
        t = buf[p]
        kinds[e] = t
        offs[e] = p + 1
        if t == 0:
            p += 65
        elif t == 1:
            p += 41
        else:
            return kinds, offs, -2
    return kinds, offs, p


def decode_essential(data: bytes) -> EssentialNodeSet:
    if len(data) < _SET_HEADER.size:
        raise ProtocolError("essential set shorter than its header")
    source, dest, count = _SET_HEADER.unpack_from(data, 0)
    buf = np.frombuffer(data, dtype=np.uint8)
    kinds, offs, end = _scan_tags(buf, _SET_HEADER.size, count)
    if end == -2:
        raise ProtocolError("unknown essential-entry tag")
    if end < 0 or end > len(data):
        raise ProtocolError("truncated essential set")
    if end != len(data):
        raise ProtocolError("trailing bytes after essential set")
    bo = offs[kinds == TAG_BODY]
    so = offs[kinds == TAG_SUMMARY]
    rec = np.empty(bo.shape[0], dtype=BODY_DTYPE)
    if bo.size:
        gather = (bo[:, None] + np.arange(BODY_DTYPE.itemsize)).ravel()
        rec = buf[gather].view(BODY_DTYPE)
    summ = np.zeros((so.shape[0], 5))
    if so.size:
        gather = (so[:, None] + np.arange(40)).ravel()
        summ = buf[gather].view("<f8").reshape(-1, 5)
    bodies = BodySet(rec["id"].astype(np.int64), rec["mass"], rec["pos"], rec["vel"],
                     np.zeros((bo.shape[0], 3)))
    return EssentialNodeSet(source, dest, summ[:, 0].copy(), summ[:, 1:4].copy(),
                            summ[:, 4].copy(), bodies)
