"""Softened Newtonian accelerations, the direct-sum oracle and total energy.

Pair law: ``a_i += g * m_j * (r_j - r_i) / (|r_j - r_i|^2 + eps^2)^(3/2)``.
No fastmath anywhere: summation order is part of the contract.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from .bodies import as_bodyset
from .errors import SingularInteraction
from .walk import InteractionList, InteractionLists


@njit(cache=True, nogil=True)
def _force_kernel(tpos, offsets, index, pmass, ppos, eps2, g):
    n_t = tpos.shape[0]
    acc = np.zeros((n_t, 3))
    for t in range(n_t):
        px = tpos[t, 0]
        py = tpos[t, 1]
        pz = tpos[t, 2]
        ax = 0.0
        ay = 0.0
        az = 0.0
        for e in range(offsets[t], offsets[t + 1]):
            j = index[e]
            dx = ppos[j, 0] - px
            dy = ppos[j, 1] - py
            dz = ppos[j, 2] - pz
            r2 = dx * dx + dy * dy + dz * dz + eps2
            if r2 == 0.0:
                return acc, t
            f = g * pmass[j] / (r2 * np.sqrt(r2))
            ax += f * dx
            ay += f * dy
            az += f * dz
        acc[t, 0] = ax
        acc[t, 1] = ay
        acc[t, 2] = az
    return acc, -1


def accelerations_from_lists(tpos, offsets, index, pmass, ppos, eps: float, g_const: float) -> np.ndarray:
    """Force loop over CSR lists into an arbitrary point table."""
    acc, bad = _force_kernel(np.ascontiguousarray(tpos, dtype=np.float64),
                             offsets, index, pmass, np.ascontiguousarray(ppos),
                             float(eps) ** 2, float(g_const))
    if bad >= 0:
        raise SingularInteraction(f"target {bad}: zero separation with eps = 0")
    return acc


def compute_forces(lists: InteractionLists, eps: float, g_const: float) -> np.ndarray:
    """Accelerations for every target of ``lists``, rows in ``lists.rows`` order."""
    tree = lists.tree
    pmass, ppos = tree.points()
    return accelerations_from_lists(tree.body_pos[lists.rows], lists.offsets, lists.index,
                                    pmass, ppos, eps, g_const)


def compute_force(body_pos, ilist: InteractionList, eps: float = 0.025, g_const: float = 1.0) -> np.ndarray:
    """Acceleration at ``body_pos`` (a position or a :class:`Body`) from ``ilist``."""
    if eps < 0:
        raise ValueError("eps must be >= 0")
    pos = getattr(body_pos, "pos", body_pos)
    k = len(ilist)
    offsets = np.array([0, k], dtype=np.int64)
    index = np.arange(k, dtype=np.int32)
    return accelerations_from_lists(np.asarray(pos, dtype=np.float64).reshape(1, 3), offsets, index,
                                    np.ascontiguousarray(ilist.mass, dtype=np.float64),
                                    ilist.pos.reshape(-1, 3), eps, g_const)[0]


@njit(cache=True, nogil=True)
def _direct_kernel(mass, pos, eps2, g):
    n = mass.shape[0]
    acc = np.zeros((n, 3))
    for i in range(n):
        ax = 0.0
        ay = 0.0
        az = 0.0
        for j in range(n):
            if j == i:
                continue
            dx = pos[j, 0] - pos[i, 0]
            dy = pos[j, 1] - pos[i, 1]
            dz = pos[j, 2] - pos[i, 2]
            r2 = dx * dx + dy * dy + dz * dz + eps2
            if r2 == 0.0:
                return acc, i
            f = g * mass[j] / (r2 * np.sqrt(r2))
            ax += f * dx
            ay += f * dy
            az += f * dz
        acc[i, 0] = ax
        acc[i, 1] = ay
        acc[i, 2] = az
    return acc, -1


def brute_force_accels(bodies, eps: float = 0.025, g_const: float = 1.0) -> np.ndarray:
    """O(N^2) pairwise accelerations, summed in ascending body id.

    Rows come back in the caller's body order.
    """
    bs = as_bodyset(bodies)
    if len(bs) == 0:
        return np.zeros((0, 3))
    perm = np.argsort(bs.ids, kind="stable")
    acc_sorted, bad = _direct_kernel(bs.mass[perm], np.ascontiguousarray(bs.pos[perm]),
                                     float(eps) ** 2, float(g_const))
    if bad >= 0:
        raise SingularInteraction(f"body id {bs.ids[perm][bad]}: coincident with another body")
    acc = np.empty_like(acc_sorted)
    acc[perm] = acc_sorted
    return acc


@njit(cache=True, nogil=True)
def _potential_kernel(mass, pos, eps2, g):
    n = mass.shape[0]
    pe = 0.0
    for i in range(n):
        for j in range(i + 1, n):
            dx = pos[j, 0] - pos[i, 0]
            dy = pos[j, 1] - pos[i, 1]
            dz = pos[j, 2] - pos[i, 2]
            r2 = dx * dx + dy * dy + dz * dz + eps2
            if r2 == 0.0:
                return 0.0, i
            pe -= g * mass[i] * mass[j] / np.sqrt(r2)
    return pe, -1


def kinetic_energy(bodies) -> float:
    bs = as_bodyset(bodies)
    perm = np.argsort(bs.ids, kind="stable")
    v2 = np.einsum("ij,ij->i", bs.vel[perm], bs.vel[perm])
    return float(0.5 * np.sum(bs.mass[perm] * v2))


def potential_energy(bodies, eps: float = 0.025, g_const: float = 1.0) -> float:
    bs = as_bodyset(bodies)
    perm = np.argsort(bs.ids, kind="stable")
    pe, bad = _potential_kernel(bs.mass[perm], np.ascontiguousarray(bs.pos[perm]),
                                float(eps) ** 2, float(g_const))
    if bad >= 0:
        raise SingularInteraction("coincident bodies with eps = 0")
    return pe


def total_energy(bodies, eps: float = 0.025, g_const: float = 1.0) -> float:
    """Kinetic plus pairwise potential energy; pairs taken in ascending id order."""
    return kinetic_energy(bodies) + potential_energy(bodies, eps, g_const)
