"""Time-series containers shared between the simulation and fitting layers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["StokesTrace", "BlochTrace"]


def _check_grid(tau: np.ndarray, *components: np.ndarray) -> None:
    if tau.ndim != 1:
        raise ValueError("tau grid must be one-dimensional")
    if tau.size > 1 and not np.all(np.diff(tau) > 0):
        raise ValueError("tau grid must be strictly increasing")
    for c in components:
        if c.shape != tau.shape:
            raise ValueError("component length does not match tau grid")
        if not np.all(np.isfinite(c)):
            raise ValueError("trace contains non-finite values")


@dataclass(frozen=True)
class StokesTrace:
    """Conditional Stokes parameters (s_HV, s_DA, s_RL) on a delay grid (s)."""

    tau: np.ndarray
    s_hv: np.ndarray
    s_da: np.ndarray
    s_rl: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        comps = tuple(np.asarray(getattr(self, n), dtype=float)
                      for n in ("s_hv", "s_da", "s_rl"))
        _check_grid(tau, *comps)
        for c in comps:
            if np.any(np.abs(c) > 1.0 + 1e-9):
                raise ValueError("Stokes component outside [-1, 1]")
        object.__setattr__(self, "tau", tau)
        for name, c in zip(("s_hv", "s_da", "s_rl"), comps):
            object.__setattr__(self, name, c)

    def component(self, name: str) -> np.ndarray:
        return {"hv": self.s_hv, "da": self.s_da, "rl": self.s_rl}[name.lower()]


@dataclass(frozen=True)
class BlochTrace:
    """Conditional spin Bloch components (<sx>, <sy>, <sz>) on a delay grid (s)."""

    tau: np.ndarray
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray

    def __post_init__(self):
        tau = np.asarray(self.tau, dtype=float)
        comps = tuple(np.asarray(getattr(self, n), dtype=float) for n in ("sx", "sy", "sz"))
        _check_grid(tau, *comps)
        object.__setattr__(self, "tau", tau)
        for name, c in zip(("sx", "sy", "sz"), comps):
            object.__setattr__(self, name, c)
