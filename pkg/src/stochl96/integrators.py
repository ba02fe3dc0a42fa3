"""SSPRK3 time stepping, its stage-frozen stochastic extension, and a rollout driver."""
from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .kernels import DIVERGENCE_LIMIT

THIRD = 1.0 / 3.0
TWO_THIRDS = 2.0 / 3.0


class IntegrationDivergence(RuntimeError):
    """A trajectory left the finite range; ``step`` is the failing step index."""

    def __init__(self, step: int, message: str | None = None):
        self.step = step
        super().__init__(message or f"integration diverged at step {step}")


def ssprk3_step(y, f: Callable, dt: float):
    """One step of the three-stage, third-order Shu-Osher SSP Runge-Kutta scheme."""
    k1 = y + dt * f(y)
    k2 = 0.75 * y + 0.25 * (k1 + dt * f(k1))
    return y * THIRD + TWO_THIRDS * (k2 + dt * f(k2))


def stochastic_ssprk3_step(y, f: Callable, g: Callable, dW, dt: float):
    """SSPRK3 with every Euler stage extended by a noise increment.

    ``g(state, dW)`` returns the state-space increment produced by the
    Brownian increment ``dW``. The same ``dW`` enters all three stages,
    which gives a Stratonovich-consistent scheme of strong order 1/2 that
    reduces to :func:`ssprk3_step` when ``g`` vanishes.
    """
    k1 = y + dt * f(y) + g(y, dW)
    k2 = 0.75 * y + 0.25 * (k1 + dt * f(k1) + g(k1, dW))
    return y * THIRD + TWO_THIRDS * (k2 + dt * f(k2) + g(k2, dW))


def check_finite(state, step: int, limit: float = DIVERGENCE_LIMIT):
    arr = np.asarray(state)
    if not np.all(np.abs(arr) <= limit):
        raise IntegrationDivergence(step)


def rollout(initial, stepper: Callable, n_steps: int,
            hooks: Iterable[Callable] = (), limit: float = DIVERGENCE_LIMIT) -> np.ndarray:
    """Apply ``stepper(state, step)`` ``n_steps`` times.

    Returns an array of ``n_steps + 1`` states including ``initial``. Each
    hook is called as ``hook(step, state)`` after the state is accepted,
    including once for the initial state at step 0.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be nonnegative")
    hooks = tuple(hooks)
    state = np.array(initial, dtype=np.float64)
    check_finite(state, 0, limit)
    traj = np.empty((n_steps + 1,) + state.shape)
    traj[0] = state
    for hook in hooks:
        hook(0, state)
    for step in range(1, n_steps + 1):
        state = stepper(state, step)
        check_finite(state, step, limit)
        traj[step] = state
        for hook in hooks:
            hook(step, state)
    return traj
