"""Truth-data generation, sub-grid tendency measurement and persistence."""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import container, kernels
from .dynamics import L96Params, advection
from .integrators import IntegrationDivergence

TRUTH_DT = 0.001
STORE_DT = 0.005

_HEADER = struct.Struct("<IIdQddddqddB")


@dataclass(frozen=True)
class TruthDataset:
    """Slow variables of a truth run, sampled every ``dt_store`` MTU.

    ``snapshots`` has shape ``(n_snapshots, K)``. ``fast`` holds the
    matching fast variables only when generated with ``keep_fast``.
    """

    params: L96Params
    snapshots: np.ndarray
    dt_store: float = STORE_DT
    seed: int = 0
    spinup_mtu: float = 1500.0
    production_mtu: float = 500.0
    fast: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_snapshots(self) -> int:
        return self.snapshots.shape[0]

    def sample_variance(self) -> float:
        return float(np.var(self.snapshots, ddof=1))

    def sample_std(self) -> float:
        return float(np.std(self.snapshots, ddof=1))

    def perturbation_scale(self) -> float:
        """Reference value ``S^2`` for initial-condition perturbations.

        The published values (6.45 for c=4, 5.08 for c=10) coincide with the
        pooled standard deviation of X, so that statistic is used.
        """
        return self.sample_std()


@dataclass(frozen=True)
class TendencyField:
    """Sub-grid tendencies ``U`` with shape ``(K, n_snapshots - 1)``.

    Column ``t`` is measured at snapshot ``t``.
    """

    U: np.ndarray
    dt: float = STORE_DT


def _steps(duration, dt):
    n = round(duration / dt)
    if abs(n * dt - duration) > 1e-9 * max(1.0, duration):
        raise ValueError(f"{duration} MTU is not a whole number of {dt} steps")
    return n


def generate_truth(p: L96Params, seed: int, spinup_mtu: float = 1500.0,
                   production_mtu: float = 500.0, dt: float = TRUTH_DT,
                   dt_store: float = STORE_DT, keep_fast: bool = False) -> TruthDataset:
    """Integrate the two-scale system from a standard-normal start.

    The first ``spinup_mtu`` are discarded; the slow variables of the
    following ``production_mtu`` are stored every ``dt_store``.
    """
    rng = np.random.default_rng(seed)
    state = rng.standard_normal(p.K + p.J * p.K)
    x = np.ascontiguousarray(state[:p.K])
    y = np.ascontiguousarray(state[p.K:])
    n_spin = _steps(spinup_mtu, dt)
    n_prod = _steps(production_mtu, dt)
    every = _steps(dt_store, dt)
    if n_prod % every:
        raise ValueError("production length must be a multiple of the storage interval")
    n_store = n_prod // every + 1
    empty = np.empty((0, p.K))
    failed = kernels.truth_run(x, y, p.K, p.J, p.h, p.F, p.b, p.c, dt, n_spin, 0, empty)
    if failed >= 0:
        raise IntegrationDivergence(failed, f"truth spin-up diverged at step {failed}")
    snaps = np.empty((n_store, p.K))
    fast = None
    if keep_fast:
        fast = np.empty((n_store, p.K * p.J))
        snaps[0], fast[0] = x, y
        for row in range(1, n_store):
            failed = kernels.truth_run(x, y, p.K, p.J, p.h, p.F, p.b, p.c, dt, every, 0, empty)
            if failed >= 0:
                step = n_spin + (row - 1) * every + failed
                raise IntegrationDivergence(step, f"truth run diverged at step {step}")
            snaps[row], fast[row] = x, y
    else:
        failed = kernels.truth_run(x, y, p.K, p.J, p.h, p.F, p.b, p.c, dt, n_prod, every, snaps)
        if failed >= 0:
            raise IntegrationDivergence(n_spin + failed, f"truth run diverged at step {n_spin + failed}")
    return TruthDataset(p, snaps, dt_store, seed, spinup_mtu, production_mtu, fast)


def subgrid_tendency(snapshots: np.ndarray, dt: float, F: float) -> np.ndarray:
    """Coarse tendency minus the forward-difference tendency, shape ``(K, N-1)``."""
    X = np.asarray(snapshots, dtype=np.float64)
    now, nxt = X[:-1], X[1:]
    U = advection(now) - now + F - (nxt - now) / dt
    return U.T.copy()


def measure_subgrid_tendency(ds: TruthDataset) -> TendencyField:
    if ds.n_snapshots < 2:
        raise ValueError("need at least two snapshots to measure tendencies")
    return TendencyField(subgrid_tendency(ds.snapshots, ds.dt_store, ds.params.F), ds.dt_store)


def split_train_val(ds: TruthDataset, val_fraction: float = 0.2) -> tuple[TruthDataset, TruthDataset]:
    """Contiguous split: the leading part trains, the trailing part validates."""
    n = ds.n_snapshots
    if n < 5:
        raise ValueError("need at least five snapshots to split")
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie in (0, 1)")
    n_val = int(math.floor(n * val_fraction + 1e-9))
    n_train = n - n_val
    fast = ds.fast
    train = replace(ds, snapshots=ds.snapshots[:n_train],
                    fast=None if fast is None else fast[:n_train])
    val = replace(ds, snapshots=ds.snapshots[n_train:],
                  fast=None if fast is None else fast[n_train:])
    return train, val


def _meta(ds: TruthDataset) -> dict:
    p = ds.params
    return {
        "kind": "dataset",
        "K": p.K, "J": p.J, "h": p.h, "F": p.F, "b": p.b, "c": p.c,
        "dt_store": ds.dt_store,
        "n_snapshots": ds.n_snapshots,
        "seed": ds.seed,
        "spinup_mtu": ds.spinup_mtu,
        "production_mtu": ds.production_mtu,
        "has_fast": ds.fast is not None,
        "backend": kernels.BACKEND,
    }


def save_dataset(ds: TruthDataset, path) -> None:
    p = ds.params
    values = (p.K, p.J, ds.dt_store, ds.n_snapshots, p.c, p.F, p.h, p.b, ds.seed,
              ds.spinup_mtu, ds.production_mtu, int(ds.fast is not None))
    arrays = [ds.snapshots] + ([ds.fast] if ds.fast is not None else [])
    meta = _meta(ds)
    meta.pop("backend")
    container.write(path, container.Kind.DATASET, _HEADER, values, arrays, meta)


def load_dataset(path) -> TruthDataset:
    kind, header, payload = container.read(path)
    if kind != container.Kind.DATASET:
        raise container.ContainerError(f"{path}: expected a dataset, found {kind.name}")
    K, J, dt_store, n, c, F, h, b, seed, spin, prod, has_fast = _HEADER.unpack(header)
    reader = container.PayloadReader(payload)
    snaps = reader.take(n, K)
    fast = reader.take(n, K * J) if has_fast else None
    reader.done()
    return TruthDataset(L96Params(K=K, J=J, h=h, F=F, b=b, c=c), snaps, dt_store, seed, spin, prod, fast)
