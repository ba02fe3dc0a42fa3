"""Proper orthogonal decomposition of sub-grid tendency fields."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import container
from .dataset import TendencyField

_HEADER = struct.Struct("<IQI")


def lag1_autocorrelation(series: np.ndarray, axis: int = -1) -> np.ndarray:
    """Sample lag-1 autocorrelation along ``axis``, each series demeaned separately."""
    s = np.moveaxis(np.asarray(series, dtype=np.float64), axis, -1)
    d = s - s.mean(axis=-1, keepdims=True)
    return (d[..., :-1] * d[..., 1:]).sum(axis=-1) / (d * d).sum(axis=-1)


@dataclass(frozen=True)
class PodBasis:
    """Mean profile, modes (as columns), scalings and unit-variance time series.

    ``series`` has shape ``(K, N)`` and ``U[:, t] = xi0 + modes @ (lambdas * series[:, t])``.
    """

    xi0: np.ndarray
    modes: np.ndarray
    lambdas: np.ndarray
    series: np.ndarray
    autocorr: np.ndarray
    rank: int

    @property
    def K(self) -> int:
        return self.xi0.shape[0]

    @property
    def degenerate(self) -> bool:
        return self.rank < self.modes.shape[1]

    def reconstruct(self) -> np.ndarray:
        return self.xi0[:, None] + self.modes @ (self.lambdas[:, None] * self.series)

    def energy_fraction(self) -> np.ndarray:
        e = self.lambdas ** 2
        return np.cumsum(e) / e.sum()


def compute_pod(u: TendencyField | np.ndarray) -> PodBasis:
    U = np.asarray(u.U if isinstance(u, TendencyField) else u, dtype=np.float64)
    K, N = U.shape
    if N <= K:
        raise ValueError(f"need more than K={K} samples, got {N}")
    xi0 = U.mean(axis=1)
    anomaly = U - xi0[:, None]
    modes, sing, vt = np.linalg.svd(anomaly, full_matrices=False)
    tol = max(K, N) * np.finfo(float).eps * (sing[0] if sing.size else 0.0)
    rank = int(np.sum(sing > tol))
    sing = np.where(sing > tol, sing, 0.0)
    # largest-magnitude entry of each mode is positive
    pivot = modes[np.argmax(np.abs(modes), axis=0), np.arange(K)]
    signs = np.where(pivot < 0, -1.0, 1.0)
    modes = modes * signs
    vt = vt * signs[:, None]
    norm = np.sqrt(N - 1.0)
    lambdas = sing / norm
    series = vt * norm
    return PodBasis(xi0, modes, lambdas, series, lag1_autocorrelation(series), rank)


def project(basis: PodBasis, x) -> np.ndarray:
    """Inner products of ``x`` with every mode; ``x`` may be batched on leading axes."""
    X = getattr(x, "X", x)
    return np.asarray(X, dtype=np.float64) @ basis.modes


def save_basis(basis: PodBasis, path) -> None:
    K, N = basis.series.shape
    meta = {
        "kind": "pod_basis", "K": K, "n_samples": N, "rank": basis.rank,
        "lambdas": basis.lambdas.tolist(), "autocorr": basis.autocorr.tolist(),
        "xi0": basis.xi0.tolist(),
    }
    container.write(path, container.Kind.POD_BASIS, _HEADER, (K, N, basis.rank),
                    [basis.xi0, basis.modes, basis.lambdas, basis.autocorr, basis.series], meta)


def read_basis_payload(reader: container.PayloadReader, K: int, N: int, rank: int) -> PodBasis:
    xi0 = reader.take(K)
    modes = reader.take(K, K)
    lambdas = reader.take(K)
    autocorr = reader.take(K)
    series = reader.take(K, N)
    return PodBasis(xi0, modes, lambdas, series, autocorr, rank)


def load_basis(path) -> PodBasis:
    kind, header, payload = container.read(path)
    if kind != container.Kind.POD_BASIS:
        raise container.ContainerError(f"{path}: expected a POD basis, found {kind.name}")
    K, N, rank = _HEADER.unpack(header)
    reader = container.PayloadReader(payload)
    basis = read_basis_payload(reader, K, N, rank)
    reader.done()
    return basis
