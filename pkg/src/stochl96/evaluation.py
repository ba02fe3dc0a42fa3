"""Ensemble forecasts, climate runs and verification metrics."""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .crps import crps
from .dataset import TruthDataset, generate_truth
from .dynamics import L96Params
from .integrators import IntegrationDivergence
from .models import COARSE_DT, StochasticModel, noise_spec

THREADS_ENV = "STOCHL96_THREADS"
STEPS_PER_MTU = round(1.0 / COARSE_DT)


def n_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{THREADS_ENV} must be a positive integer, got {raw!r}")
    return n


def _map(fn, items):
    """Ordered map, threaded when the thread-count variable asks for it."""
    items = list(items)
    n = n_threads()
    if n == 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


@dataclass(frozen=True)
class ForecastConfig:
    members: int = 50
    horizon_mtu: float = 2.0
    n_initial_conditions: int = 100
    ic_spacing_mtu: float = 10.0
    perturbation: float = 0.0  # fraction of S^2; 0 disables
    seed: int = 0
    ic_seed: int = 1000
    dt: float = COARSE_DT
    max_diverged_fraction: float = 0.2

    def __post_init__(self):
        if self.members < 2:
            raise ValueError("spread metrics need at least two members")
        if self.n_initial_conditions < 1:
            raise ValueError("need at least one initial condition")
        if not (self.horizon_mtu > 0 and self.ic_spacing_mtu > 0 and self.dt > 0):
            raise ValueError("horizon, spacing and dt must be positive")
        if self.perturbation < 0:
            raise ValueError("perturbation fraction must be nonnegative")

    @property
    def n_steps(self) -> int:
        return round(self.horizon_mtu / self.dt)

    @property
    def leads(self) -> np.ndarray:
        return np.arange(self.n_steps + 1) * self.dt


# -- noise streams -----------------------------------------------------------------

def member_rng(seed: int, stream: int, member: int) -> np.random.Generator:
    """Counter-based generator owned by one ensemble member."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(stream, member))))


def member_noise(seed: int, stream: int, members, n_steps: int, K: int) -> np.ndarray:
    """Standard normal draws ``(n_steps, len(members), K)``; column m depends only on member m."""
    members = list(members)
    eps = np.empty((n_steps, len(members), K))
    for j, m in enumerate(members):
        eps[:, j] = member_rng(seed, stream, m).standard_normal((n_steps, K))
    return eps


# -- forecasting -------------------------------------------------------------------

@dataclass(frozen=True)
class EnsembleTrajectory:
    states: np.ndarray  # (n_leads, M, K)
    diverged: np.ndarray  # per member: step of divergence or -1
    dt: float

    @property
    def valid(self) -> np.ndarray:
        return self.diverged < 0

    @property
    def members(self) -> np.ndarray:
        """States of the non-diverged members."""
        return self.states[:, self.valid]


def run_ensemble(model: StochasticModel, x0, eps, dt: float = COARSE_DT, F: float = 20.0,
                 store_every: int = 1, backend=None):
    """Integrate trajectories from ``x0`` (``(n_traj, K)``) with draws ``eps`` (``(n_steps, n_traj, K)``)."""
    be = kernels if backend is None else backend
    x = np.array(x0, dtype=np.float64, order="C")
    n_steps, n_traj, K = eps.shape
    if x.shape != (n_traj, K):
        raise ValueError(f"initial states {x.shape} do not match noise {eps.shape}")
    spec = noise_spec(model, K, dt)
    r = np.tile(spec.r0, (n_traj, 1))
    n_out = n_steps // store_every + 1 if store_every > 0 else 0
    out = np.empty((n_out, n_traj, K))
    diverged = np.full(n_traj, -1, dtype=np.int64)
    be.coarse_run(x, r, float(F), float(dt), int(n_steps), int(store_every), spec.poly, spec.d0,
                  spec.phi, spec.c0, spec.G, spec.xi, spec.a, spec.bq, spec.proj,
                  np.ascontiguousarray(eps), out, diverged)
    return out, diverged, x


class ExperimentAborted(RuntimeError):
    pass


def ensemble_forecast(model: StochasticModel, ic, cfg: ForecastConfig, stream: int = 0,
                      F: float = 20.0) -> EnsembleTrajectory:
    """``cfg.members`` trajectories from one initial state with independent member noise."""
    ic = np.asarray(ic, dtype=np.float64)
    K = ic.shape[-1]
    eps = member_noise(cfg.seed, stream, range(cfg.members), cfg.n_steps, K)
    out, diverged, _ = run_ensemble(model, np.tile(ic, (cfg.members, 1)), eps, cfg.dt, F)
    n_bad = int((diverged >= 0).sum())
    if n_bad > cfg.max_diverged_fraction * cfg.members:
        raise ExperimentAborted(f"{n_bad} of {cfg.members} members diverged from initial condition {stream}")
    return EnsembleTrajectory(out, diverged, cfg.dt)


# -- metrics -----------------------------------------------------------------------------
# Ensemble on axis -2, variables on axis -1; truth has the ensemble axis dropped.

def mse(members, truth) -> np.ndarray:
    """``(1/M) sum_i (x_i - y)^2``."""
    z = np.asarray(members, dtype=np.float64)
    return ((z - np.asarray(truth)[..., None, :]) ** 2).mean(axis=-2)


def spread_error(members, truth) -> tuple[np.ndarray, np.ndarray]:
    """Squared ensemble-mean error and ensemble variance (``1/M`` normalisation).

    For a reliable ensemble ``E[error] = (1 + 1/M) s^2`` and
    ``E[variance] = (1 - 1/M) s^2``.
    """
    z = np.asarray(members, dtype=np.float64)
    mean = z.mean(axis=-2)
    # shifting by one member keeps the variance of identical members exactly zero
    return (mean - np.asarray(truth)) ** 2, (z - z[..., :1, :]).var(axis=-2)


def ensemble_crps(members, truth) -> np.ndarray:
    return crps(np.moveaxis(np.asarray(members, dtype=np.float64), -2, -1), truth)


@dataclass
class MetricSeries:
    leads: np.ndarray
    mse: np.ndarray
    crps: np.ndarray
    error: np.ndarray
    spread: np.ndarray
    members: int
    diverged: int = 0

    METRICS = ("mse", "crps", "error", "spread")

    def at(self, lead_mtu: float) -> dict:
        i = int(np.argmin(np.abs(self.leads - lead_mtu)))
        return {m: float(getattr(self, m)[i]) for m in self.METRICS}


def forecast_metrics(ens: EnsembleTrajectory, truth) -> tuple[np.ndarray, ...]:
    """Per-lead metrics averaged over variables: mse, crps, error, spread."""
    z = ens.members
    err, var = spread_error(z, truth)
    return mse(z, truth).mean(-1), ensemble_crps(z, truth).mean(-1), err.mean(-1), var.mean(-1)


# -- initial conditions --------------------------------------------------------------

@dataclass(frozen=True)
class ForecastTruth:
    """Reference trajectories starting at the forecast initial conditions."""

    ics: np.ndarray  # (n_ic, K)
    segments: np.ndarray  # (n_ic, n_leads, K)
    seed: int


def forecast_truth(p: L96Params, cfg: ForecastConfig, spinup_mtu: float = 1500.0) -> ForecastTruth:
    """Fresh truth run, seeded apart from the training data, sampled every ``ic_spacing``."""
    stride = round(cfg.ic_spacing_mtu / cfg.dt)
    n_leads = cfg.n_steps + 1
    length = (cfg.n_initial_conditions - 1) * cfg.ic_spacing_mtu + cfg.horizon_mtu
    ds = generate_truth(p, cfg.ic_seed, spinup_mtu=spinup_mtu, production_mtu=length, dt_store=cfg.dt)
    starts = np.arange(cfg.n_initial_conditions) * stride
    idx = starts[:, None] + np.arange(n_leads)
    seg = ds.snapshots[idx]
    return ForecastTruth(seg[:, 0].copy(), seg, cfg.ic_seed)


def perturb_ic(ic, variance: float, fraction: float = 0.1, rng=None) -> np.ndarray:
    """Offset every variable by an independent draw from ``N(0, fraction * variance)``."""
    ic = np.asarray(ic, dtype=np.float64)
    if fraction == 0:
        return ic.copy()
    if fraction < 0 or variance < 0:
        raise ValueError("fraction and variance must be nonnegative")
    rng = np.random.default_rng(rng)
    return ic + math.sqrt(fraction * variance) * rng.standard_normal(ic.shape)


def perturbation_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(2**31,))))


def forecast_experiment(models: dict, truth: ForecastTruth, cfg: ForecastConfig,
                        variance: float | None = None, F: float = 20.0) -> dict[str, MetricSeries]:
    """Metric series per model, averaged over all initial conditions.

    With ``cfg.perturbation > 0`` every initial condition is offset once,
    and all models start from the same offset states.
    """
    ics = truth.ics
    if cfg.perturbation > 0:
        if variance is None:
            raise ValueError("perturbed forecasts need the truth sample variance")
        ics = perturb_ic(ics, variance, cfg.perturbation, perturbation_rng(cfg.seed))
    results = {}
    for name, model in models.items():
        def one(i):
            ens = ensemble_forecast(model, ics[i], cfg, stream=i, F=F)
            return forecast_metrics(ens, truth.segments[i]), int((~ens.valid).sum())
        outs = _map(one, range(len(ics)))
        stacked = [np.mean([o[0][j] for o in outs], axis=0) for j in range(4)]
        results[name] = MetricSeries(cfg.leads, *stacked, members=cfg.members,
                                     diverged=sum(o[1] for o in outs))
    return results


# -- climate -------------------------------------------------------------------------------

N_BINS = 100
RANGE_PAD = 0.05


@dataclass(frozen=True)
class ClimateHistogram:
    edges: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        if self.counts.shape != (self.edges.size - 1,):
            raise ValueError("counts do not match the bin edges")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def mass(self) -> np.ndarray:
        return self.counts / self.counts.sum()

    @property
    def density(self) -> np.ndarray:
        return self.mass / np.diff(self.edges)

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.counts) / self.counts.sum()
        c[-1] = 1.0
        return c


def climate_edges(truth_values, n_bins: int = N_BINS, pad: float = RANGE_PAD) -> np.ndarray:
    """Uniform bins over the pooled truth range widened by ``pad`` on each side."""
    v = np.asarray(truth_values, dtype=np.float64)
    lo, hi = float(v.min()), float(v.max())
    width = hi - lo if hi > lo else 1.0
    return np.linspace(lo - pad * width, hi + pad * width, n_bins + 1)


def histogram(values, edges) -> ClimateHistogram:
    """Pooled histogram; values outside the edges are counted in the outer bins."""
    v = np.clip(np.ravel(values), edges[0], edges[-1])
    counts, _ = np.histogram(v, bins=edges)
    return ClimateHistogram(np.asarray(edges, dtype=np.float64), counts.astype(np.int64))


def ks_distance(P, Q) -> float:
    P, Q = np.asarray(P, dtype=np.float64), np.asarray(Q, dtype=np.float64)
    if P.shape != Q.shape:
        raise ValueError(f"CDF grids differ: {P.shape} vs {Q.shape}")
    return float(np.max(np.abs(P - Q))) if P.size else 0.0


def hellinger(p, q) -> float:
    """Hellinger distance between two probability-mass vectors on shared bins."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise ValueError(f"bin grids differ: {p.shape} vs {q.shape}")
    if np.any(p < 0) or np.any(q < 0):
        raise ValueError("probability masses must be nonnegative")
    return float(math.sqrt(0.5 * np.sum((np.sqrt(p) - np.sqrt(q)) ** 2)))


@dataclass(frozen=True)
class ClimateDistance:
    ks: float
    hellinger: float


def climate_distance(a: ClimateHistogram, b: ClimateHistogram) -> ClimateDistance:
    if not np.array_equal(a.edges, b.edges):
        raise ValueError("histograms use different bin edges")
    return ClimateDistance(ks_distance(a.cdf, b.cdf), hellinger(a.mass, b.mass))


def climate_run(model: StochasticModel, x0, edges, length_mtu: float = 3000.0, seed: int = 0,
                dt: float = COARSE_DT, F: float = 20.0, chunk_steps: int = 20000) -> ClimateHistogram:
    """Histogram of all slow variables over one long stochastic trajectory.

    Every step after the initial state is counted. Divergence raises
    :class:`IntegrationDivergence` carrying the step index.
    """
    x = np.array(x0, dtype=np.float64).reshape(1, -1)
    K = x.shape[1]
    n_total = round(length_mtu / dt)
    rng = member_rng(seed, 2**32 - 1, 0)
    spec = noise_spec(model, K, dt)
    r = spec.r0.reshape(1, K).copy()
    counts = np.zeros(len(edges) - 1, dtype=np.int64)
    done = 0
    while done < n_total:
        n = min(chunk_steps, n_total - done)
        eps = rng.standard_normal((n, 1, K))
        out = np.empty((n + 1, 1, K))
        diverged = np.full(1, -1, dtype=np.int64)
        kernels.coarse_run(x, r, float(F), float(dt), n, 1, spec.poly, spec.d0, spec.phi, spec.c0,
                           spec.G, spec.xi, spec.a, spec.bq, spec.proj, eps, out, diverged)
        if diverged[0] >= 0:
            raise IntegrationDivergence(done + int(diverged[0]))
        counts += histogram(out[1:], edges).counts
        done += n
    return ClimateHistogram(np.asarray(edges, dtype=np.float64), counts)


def truth_climate(ds: TruthDataset, edges=None) -> ClimateHistogram:
    edges = climate_edges(ds.snapshots) if edges is None else edges
    return histogram(ds.snapshots, edges)


@dataclass
class ClimateResult:
    truth: ClimateHistogram
    models: dict = field(default_factory=dict)
    distances: dict = field(default_factory=dict)


def climate_experiment(models: dict, truth: TruthDataset, length_mtu: float = 3000.0,
                       seed: int = 0) -> ClimateResult:
    """Climate histograms of each model against the truth, on the truth's bin edges."""
    ref = truth_climate(truth)
    res = ClimateResult(ref)
    x0 = truth.snapshots[-1]

    def one(name):
        return climate_run(models[name], x0, ref.edges, length_mtu, seed, F=truth.params.F)

    for name, hist in zip(models, _map(one, list(models))):
        res.models[name] = hist
        res.distances[name] = climate_distance(hist, ref)
    return res
