"""Tendencies of the two-scale Lorenz '96 system and its single-scale coarse model."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class L96Params:
    """Parameters of the two-scale system.

    ``K`` slow variables, each coupled to ``J`` fast variables.
    """

    K: int = 8
    J: int = 32
    h: float = 1.0
    F: float = 20.0
    b: float = 10.0
    c: float = 10.0

    def __post_init__(self):
        if self.K < 4:
            raise ValueError(f"K must be >= 4 for the cyclic stencil, got {self.K}")
        if self.J < 1:
            raise ValueError(f"J must be >= 1, got {self.J}")
        if self.b == 0:
            raise ValueError("b must be nonzero")

    @property
    def coupling(self) -> float:
        return self.h * self.c / self.b


PRESETS = {
    "c4": L96Params(c=4.0),
    "c10": L96Params(c=10.0),
}


def preset(case: str) -> L96Params:
    try:
        return PRESETS[case]
    except KeyError:
        raise ValueError(f"unknown case {case!r}; expected one of {sorted(PRESETS)}") from None


def _finite_vector(name, values, length):
    arr = np.asarray(values, dtype=np.float64)
    if arr.shape != (length,):
        raise ValueError(f"{name} must have shape ({length},), got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


@dataclass(frozen=True)
class SlowState:
    X: np.ndarray

    @classmethod
    def of(cls, X, K: int | None = None) -> "SlowState":
        X = np.asarray(X, dtype=np.float64)
        return cls(_finite_vector("X", X, K if K is not None else X.shape[0]))


@dataclass(frozen=True)
class FullState:
    X: np.ndarray
    Y: np.ndarray

    @classmethod
    def of(cls, X, Y, p: L96Params) -> "FullState":
        return cls(_finite_vector("X", X, p.K), _finite_vector("Y", Y, p.J * p.K))


def advection(x: np.ndarray) -> np.ndarray:
    """``-x[k-1] * (x[k-2] - x[k+1])`` along the last axis, cyclic."""
    return -np.roll(x, 1, axis=-1) * (np.roll(x, 2, axis=-1) - np.roll(x, -1, axis=-1))


def truth_rhs(state: FullState, p: L96Params) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(dX/dt, dY/dt)`` of the two-scale system."""
    X, Y = state.X, state.Y
    hcb = p.coupling
    dX = advection(X) - X + p.F - hcb * Y.reshape(p.K, p.J).sum(axis=1)
    # the fast stencil runs in the opposite direction to the slow one
    dY = (
        -p.c * p.b * np.roll(Y, -1) * (np.roll(Y, -2) - np.roll(Y, 1))
        - p.c * Y
        + hcb * np.repeat(X, p.J)
    )
    return dX, dY


def coarse_rhs(x: SlowState | np.ndarray, m, p: L96Params) -> np.ndarray:
    """Single-scale tendency with an additive forcing vector ``m``.

    Works on any array whose last axis has length ``K``.
    """
    X = x.X if isinstance(x, SlowState) else np.asarray(x, dtype=np.float64)
    return advection(X) - X + p.F + m
