"""Ensemble CRPS, its spread-weighted variant, and the per-batch training loss."""
from __future__ import annotations

import numpy as np


def _check_alpha(alpha):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1] so the score stays nonnegative, got {alpha}")


def mean_abs_error(members, obs) -> np.ndarray:
    """``(1/M) sum_i |z_i - y|`` over the last axis of ``members``."""
    z = np.asarray(members, dtype=np.float64)
    return np.abs(z - np.asarray(obs, dtype=np.float64)[..., None]).mean(axis=-1)


def pair_spread(members, fair: bool = False) -> np.ndarray:
    """Self-spread term ``(1/(2M^2)) sum_i sum_k |z_i - z_k|`` over the last axis.

    Uses the sorted-rank identity ``sum_ik |z_i - z_k| = 2 sum_i (2i - M - 1) z_(i)``.
    With ``fair`` the divisor is ``2 M (M - 1)``.
    """
    z = np.sort(np.asarray(members, dtype=np.float64), axis=-1)
    M = z.shape[-1]
    weights = 2.0 * np.arange(1, M + 1) - M - 1.0
    # weights sum to zero; shifting by the minimum keeps identical members exact
    total = 2.0 * ((z - z[..., :1]) * weights).sum(axis=-1)
    if fair:
        if M < 2:
            raise ValueError("fair spread needs at least two members")
        return total / (2.0 * M * (M - 1))
    return total / (2.0 * M * M)


def crps(members, obs, fair: bool = False) -> np.ndarray:
    """Ensemble CRPS of ``members`` (ensemble on the last axis) against ``obs``."""
    if np.shape(members)[-1] < 1:
        raise ValueError("ensemble needs at least one member")
    return mean_abs_error(members, obs) - pair_spread(members, fair)


def scaled_crps(members, obs, alpha: float, fair: bool = False) -> np.ndarray:
    """CRPS with the self-spread term weighted by ``alpha`` in [0, 1]."""
    _check_alpha(alpha)
    return mean_abs_error(members, obs) - alpha * pair_spread(members, fair)


def batch_loss(ensembles, refs, alpha: float = 1.0) -> float:
    """Mean over ensembles and lead times of the variable-summed scaled CRPS.

    ``ensembles`` has shape ``(N_b, N_t, M, K)`` and ``refs`` ``(N_b, N_t, K)``.
    """
    ens = np.asarray(ensembles, dtype=np.float64)
    ref = np.asarray(refs, dtype=np.float64)
    if ens.ndim != 4 or ref.shape != ens.shape[:2] + ens.shape[3:]:
        raise ValueError(f"shape mismatch: ensembles {ens.shape}, refs {ref.shape}")
    per_slice = scaled_crps(np.moveaxis(ens, 2, -1), ref, alpha)
    return float(per_slice.sum(axis=-1).mean())
