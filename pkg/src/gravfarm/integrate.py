"""Kick-drift-kick leapfrog."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .bodies import BodySet, as_bodyset
from .forces import compute_forces
from .params import SimParams
from .tree import build_tree, compute_mass_moments
from .walk import build_interaction_lists

AccelFn = Callable[[BodySet], np.ndarray]


def treecode_accels(bodies, params: SimParams) -> np.ndarray:
    """Barnes-Hut accelerations, rows in the caller's body order."""
    bs = as_bodyset(bodies)
    tree = compute_mass_moments(build_tree(bs, params.leaf_capacity))
    lists = build_interaction_lists(tree, params.theta)
    acc = np.empty((len(bs), 3))
    acc[lists.rows] = compute_forces(lists, params.eps, params.g_const)
    return acc


def kick(bodies: BodySet, dt_half: float) -> None:
    bodies.vel += bodies.acc * dt_half


def drift(bodies: BodySet, dt: float) -> None:
    bodies.pos += bodies.vel * dt


def step_leapfrog(bodies, params: SimParams, accel_fn: AccelFn | None = None) -> BodySet:
    """One KDK step; ``bodies.acc`` must hold the accelerations at the current positions.

    ``accel_fn`` maps a :class:`BodySet` to ``(N, 3)`` accelerations and
    defaults to the sequential treecode. Returns a new set.
    """
    if accel_fn is None:
        def accel_fn(b):
            return treecode_accels(b, params)
    out = as_bodyset(bodies).copy()
    half = 0.5 * params.dt
    kick(out, half)
    drift(out, params.dt)
    out.acc = np.ascontiguousarray(accel_fn(out), dtype=np.float64)
    kick(out, half)
    return out


def prime_accels(bodies, params: SimParams, accel_fn: AccelFn | None = None) -> BodySet:
    """Copy of ``bodies`` with ``acc`` evaluated at the current positions."""
    out = as_bodyset(bodies).copy()
    out.acc = treecode_accels(out, params) if accel_fn is None else np.asarray(accel_fn(out))
    return out
