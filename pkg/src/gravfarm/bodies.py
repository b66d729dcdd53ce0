"""Body state containers.

Simulation state lives in :class:`BodySet`, a struct-of-arrays container; the
single-body :class:`Body` record exists for construction, inspection and the
wire codec.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInput


def _vec(v) -> np.ndarray:
    a = np.asarray(v, dtype=np.float64).reshape(3)
    return a.copy()


@dataclass
class Body:
    id: int
    mass: float
    pos: np.ndarray
    vel: np.ndarray = field(default_factory=lambda: np.zeros(3))
    acc: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.id = int(self.id)
        self.mass = float(self.mass)
        self.pos = _vec(self.pos)
        self.vel = _vec(self.vel)
        self.acc = _vec(self.acc)
        if not self.mass > 0:
            raise ValueError(f"body {self.id}: mass must be positive, got {self.mass}")


@dataclass
class BodySet:
    """N bodies as parallel arrays: ``ids (N,)``, ``mass (N,)`` and ``pos``,
    ``vel``, ``acc`` of shape ``(N, 3)``."""

    ids: np.ndarray
    mass: np.ndarray
    pos: np.ndarray
    vel: np.ndarray
    acc: np.ndarray

    def __post_init__(self):
        self.ids = np.ascontiguousarray(self.ids, dtype=np.int64).reshape(-1)
        n = self.ids.shape[0]
        self.mass = np.ascontiguousarray(self.mass, dtype=np.float64).reshape(n)
        self.pos = np.ascontiguousarray(self.pos, dtype=np.float64).reshape(n, 3)
        self.vel = np.ascontiguousarray(self.vel, dtype=np.float64).reshape(n, 3)
        self.acc = np.ascontiguousarray(self.acc, dtype=np.float64).reshape(n, 3)

    @classmethod
    def from_arrays(cls, mass, pos, vel=None, acc=None, ids=None) -> "BodySet":
        pos = np.asarray(pos, dtype=np.float64).reshape(-1, 3)
        n = pos.shape[0]
        mass = np.broadcast_to(np.asarray(mass, dtype=np.float64), (n,))
        vel = np.zeros((n, 3)) if vel is None else vel
        acc = np.zeros((n, 3)) if acc is None else acc
        ids = np.arange(n) if ids is None else ids
        return cls(ids=ids, mass=mass, pos=pos, vel=vel, acc=acc)

    @classmethod
    def from_bodies(cls, bodies) -> "BodySet":
        bodies = list(bodies)
        if not bodies:
            return cls.empty()
        return cls(
            ids=[b.id for b in bodies],
            mass=[b.mass for b in bodies],
            pos=np.stack([b.pos for b in bodies]),
            vel=np.stack([b.vel for b in bodies]),
            acc=np.stack([b.acc for b in bodies]),
        )

    @classmethod
    def empty(cls) -> "BodySet":
        return cls(ids=np.zeros(0), mass=np.zeros(0), pos=np.zeros((0, 3)),
                   vel=np.zeros((0, 3)), acc=np.zeros((0, 3)))

    def __len__(self) -> int:
        return self.ids.shape[0]

    def __getitem__(self, i: int) -> Body:
        return Body(self.ids[i], self.mass[i], self.pos[i], self.vel[i], self.acc[i])

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def subset(self, index) -> "BodySet":
        return BodySet(self.ids[index], self.mass[index], self.pos[index],
                       self.vel[index], self.acc[index])

    def copy(self) -> "BodySet":
        return BodySet(self.ids.copy(), self.mass.copy(), self.pos.copy(),
                       self.vel.copy(), self.acc.copy())

    def validate(self) -> None:
        if len(self) == 0:
            raise EmptyInput("no bodies")
        if not np.all(self.mass > 0):
            raise ValueError("all masses must be positive")
        for name in ("mass", "pos", "vel", "acc"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise ValueError(f"non-finite values in {name}")
        if np.unique(self.ids).shape[0] != len(self):
            raise ValueError("body ids must be unique")

    def sorted_by_id(self) -> "BodySet":
        return self.subset(np.argsort(self.ids, kind="stable"))

    def equals(self, other: "BodySet") -> bool:
        """Bitwise equality of every field."""
        return (len(self) == len(other)
                and all(np.array_equal(getattr(self, k), getattr(other, k))
                        for k in ("ids", "mass", "pos", "vel", "acc")))


def as_bodyset(bodies) -> BodySet:
    if isinstance(bodies, BodySet):
        return bodies
    return BodySet.from_bodies(bodies)
