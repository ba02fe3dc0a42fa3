"""NumPy implementations of the integration kernels.

Signatures mirror the compiled module ``_kernels_c`` exactly; both update
their array arguments in place and return the same diagnostics.
"""
import numpy as np

DIVERGENCE_LIMIT = 1.0e3
THIRD = 1.0 / 3.0
TWO_THIRDS = 2.0 / 3.0


def _advection(x):
    return -np.roll(x, 1, axis=-1) * (np.roll(x, 2, axis=-1) - np.roll(x, -1, axis=-1))


def _truth_tendency(x, y, K, J, hcb, F, b, c):
    dx = _advection(x) - x + F - hcb * y.reshape(K, J).sum(axis=1)
    dy = -c * b * np.roll(y, -1) * (np.roll(y, -2) - np.roll(y, 1)) - c * y + hcb * np.repeat(x, J)
    return dx, dy


def truth_run(x, y, K, J, h, F, b, c, dt, n_steps, store_every, out):
    """Advance the two-scale system ``n_steps`` SSPRK3 steps of size ``dt``.

    When ``store_every > 0`` the slow block is written to ``out`` at steps
    0, store_every, 2*store_every, ...  Returns the index of the first
    step producing a non-finite or out-of-range slow state, or -1.
    """
    hcb = h * c / b
    row = 0
    if store_every > 0:
        out[0] = x
        row = 1
    for step in range(1, n_steps + 1):
        dx, dy = _truth_tendency(x, y, K, J, hcb, F, b, c)
        x1 = x + dt * dx
        y1 = y + dt * dy
        dx, dy = _truth_tendency(x1, y1, K, J, hcb, F, b, c)
        x2 = 0.75 * x + 0.25 * (x1 + dt * dx)
        y2 = 0.75 * y + 0.25 * (y1 + dt * dy)
        dx, dy = _truth_tendency(x2, y2, K, J, hcb, F, b, c)
        x[:] = x * THIRD + TWO_THIRDS * (x2 + dt * dx)
        y[:] = y * THIRD + TWO_THIRDS * (y2 + dt * dy)
        if not np.all(np.abs(x) <= DIVERGENCE_LIMIT):
            return step
        if store_every > 0 and step % store_every == 0:
            out[row] = x
            row += 1
    return -1


def coarse_run(x, r, F, dt, n_steps, store_every, poly, d0, phi, c0, G,
               xi, a, bq, proj, eps, out, diverged):
    """Advance an ensemble of coarse trajectories with a linear noise model.

    Per step, for every trajectory:

        r      <- phi @ r + c0 + G @ eps[step]
        inc    =  xi @ ((a + bq * (proj.T @ x)**2) * r)
        x      <- SSPRK3 step of the drift L96(x) + poly(x) + d0 with the
                  increment ``inc`` added in each of the three stages

    ``out[n]`` receives the states at steps n*store_every. Trajectories that
    leave the finite range are frozen and ``diverged`` records the step.
    """
    alive = diverged < 0
    if store_every > 0:
        out[0] = x
    b0, b1, b2, b3 = poly

    def drift(z):
        return _advection(z) - z + F + (b0 + z * (b1 + z * (b2 + z * b3))) + d0

    for step in range(1, n_steps + 1):
        r[:] = np.where(alive[:, None], r @ phi.T + c0 + eps[step - 1] @ G.T, r)
        p = x @ proj
        inc = ((a + bq * p * p) * r) @ xi.T
        k1 = x + dt * drift(x) + inc
        k2 = 0.75 * x + 0.25 * (k1 + dt * drift(k1) + inc)
        new = x * THIRD + TWO_THIRDS * (k2 + dt * drift(k2) + inc)
        ok = np.all(np.abs(new) <= DIVERGENCE_LIMIT, axis=1)
        newly = alive & ~ok
        diverged[newly] = step
        alive &= ok
        x[:] = np.where(alive[:, None], new, x)
        if store_every > 0 and step % store_every == 0:
            out[step // store_every] = x
    return int(alive.size - alive.sum())
