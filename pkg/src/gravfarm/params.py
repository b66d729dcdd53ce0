from __future__ import annotations

from dataclasses import dataclass, replace


@dataclass(frozen=True)
class SimParams:
    """Numerical parameters of a run (normalised units, length scale 1)."""

    theta: float = 0.5
    eps: float = 0.025
    g_const: float = 1.0
    dt: float = 0.01
    leaf_capacity: int = 1

    def __post_init__(self):
        if not self.theta >= 0:
            raise ValueError("theta must be >= 0")
        if not self.eps >= 0:
            raise ValueError("eps must be >= 0")
        if not self.dt > 0:
            raise ValueError("dt must be > 0")
        if not self.g_const > 0:
            raise ValueError("g_const must be > 0")
        if int(self.leaf_capacity) < 1:
            raise ValueError("leaf_capacity must be >= 1")

    def with_(self, **kw) -> "SimParams":
        return replace(self, **kw)
