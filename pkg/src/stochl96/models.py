"""Sub-grid forcing models and the derivative-fitting routines.

Every model splits its forcing into a deterministic tendency, evaluated in
each Runge-Kutta stage, and a stochastic part carried by a noise state ``r``.
The stochastic part is a per-step increment: its white-noise variant has
variance proportional to ``dt``, so it acts as ``g(X) dW`` in the stepper.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace

import numpy as np

from . import container
from .dataset import TruthDataset, measure_subgrid_tendency
from .pod import PodBasis, compute_pod

COARSE_DT = 0.005


@dataclass(frozen=True)
class PolyModel:
    """Cubic local drift plus per-variable white or AR(1) noise."""

    coeffs: np.ndarray
    variance: float
    phi: float = 0.0
    correlated: bool = False
    K: int = 8

    def __post_init__(self):
        if not self.variance > 0:
            raise ValueError("noise variance must be positive")
        if not abs(self.phi) < 1:
            raise ValueError("|phi| must be < 1")

    @property
    def name(self) -> str:
        return "poly_ou" if self.correlated else "poly_gauss"


@dataclass(frozen=True)
class GlobalModel:
    """Mean profile plus POD modes driven by independent white or AR(1) processes."""

    basis: PodBasis
    phi: np.ndarray | None = None

    def __post_init__(self):
        if self.phi is not None and not np.all(np.abs(self.phi) < 1):
            raise ValueError("|phi_i| must be < 1")

    @property
    def name(self) -> str:
        return "svd_gauss" if self.phi is None else "svd_ou"

    @property
    def K(self):
        return self.basis.K


@dataclass(frozen=True)
class CoupledOuModel:
    """POD modes driven by a coupled OU process ``r <- r + A(mu - r) + B eps sqrt(dt)``.

    With ``a`` and ``b`` set, mode ``i`` is scaled by ``a_i + b_i (xi_i . X)^2``.
    ``r0`` overrides the starting noise state (default: ``mu``).
    """

    modes: np.ndarray
    mu: np.ndarray
    A: np.ndarray
    B: np.ndarray
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    r0: np.ndarray | None = None

    def __post_init__(self):
        if (self.a is None) != (self.b is None):
            raise ValueError("multiplicative form needs both a and b")
        for name in ("mu", "A", "B", "a", "b", "r0"):
            v = getattr(self, name)
            if v is not None and not np.all(np.isfinite(v)):
                raise ValueError(f"{name} has non-finite entries")

    @property
    def multiplicative(self) -> bool:
        return self.a is not None

    @property
    def name(self) -> str:
        return "crps_mult" if self.multiplicative else "crps_ou"

    @property
    def K(self):
        return self.modes.shape[0]

    def n_params(self) -> int:
        K = self.K
        n = K + 2 * K * K
        if self.multiplicative:
            n += 2 * K
        if self.r0 is not None:
            n += K
        return n


StochasticModel = PolyModel | GlobalModel | CoupledOuModel


def initial_coupled_ou(modes: np.ndarray, multiplicative: bool = False,
                       trainable_start: bool = False) -> CoupledOuModel:
    """Untrained coupled OU model: weak, stable prior around zero."""
    K = modes.shape[0]
    return CoupledOuModel(
        modes=np.array(modes, dtype=np.float64),
        mu=np.zeros(K),
        A=0.03 * np.eye(K),
        B=0.25 * np.eye(K),
        a=np.ones(K) if multiplicative else None,
        b=np.zeros(K) if multiplicative else None,
        r0=np.zeros(K) if trainable_start else None,
    )


# -- noise processes ---------------------------------------------------------

def ar1_step(r, variance, phi, dt, eps):
    """``phi r + sqrt(dt S^2 (1 - phi^2)) eps``; stationary variance ``dt S^2``."""
    return phi * r + np.sqrt(dt * variance * (1.0 - phi * phi)) * eps


def coupled_ou_step(r, mu, A, B, eps, dt):
    """One discrete coupled OU update; works on batches of row vectors."""
    r = np.asarray(r, dtype=np.float64)
    return r + (mu - r) @ np.asarray(A).T + (np.sqrt(dt) * np.asarray(eps)) @ np.asarray(B).T


# -- forcing -----------------------------------------------------------------

def _poly(coeffs, X):
    b0, b1, b2, b3 = coeffs
    return b0 + X * (b1 + X * (b2 + X * b3))


def drift_forcing(model: StochasticModel, x) -> np.ndarray:
    """Deterministic tendency part of the forcing at state(s) ``x``."""
    X = np.asarray(getattr(x, "X", x), dtype=np.float64)
    if isinstance(model, PolyModel):
        return _poly(model.coeffs, X)
    if isinstance(model, GlobalModel):
        return np.broadcast_to(model.basis.xi0, X.shape).copy()
    return np.zeros_like(X)


def noise_scaling(model: StochasticModel, x) -> np.ndarray:
    """Per-component multiplier applied to the noise state before mapping to space."""
    X = np.asarray(getattr(x, "X", x), dtype=np.float64)
    if isinstance(model, CoupledOuModel) and model.multiplicative:
        p = X @ model.modes
        return model.a + model.b * p * p
    return np.ones_like(X)


def noise_increment(model: StochasticModel, x, r) -> np.ndarray:
    """Stochastic part of the forcing for noise state ``r`` at state ``x``."""
    r = np.asarray(r, dtype=np.float64)
    scaled = noise_scaling(model, x) * r
    return scaled @ _noise_map(model).T


def model_forcing(model: StochasticModel, x, r) -> np.ndarray:
    """Full forcing ``M(X, t)``: drift plus the stochastic term of state ``r``.

    Poly: ``b0 + b1 X + b2 X^2 + b3 X^3 + r``; global: ``xi0 + sum xi_i lambda_i r_i``;
    coupled OU: ``sum xi_i c_i(X) r_i`` with ``c_i = 1`` or ``a_i + b_i (xi_i . X)^2``.
    """
    return drift_forcing(model, x) + noise_increment(model, x, r)


def _noise_map(model: StochasticModel) -> np.ndarray:
    if isinstance(model, PolyModel):
        return np.eye(model.K)
    if isinstance(model, GlobalModel):
        return model.basis.modes * model.basis.lambdas
    return model.modes


# -- linear noise form consumed by the integration kernels ------------------

@dataclass(frozen=True)
class NoiseSpec:
    """``r <- phi r + c0 + G eps``; increment ``xi ((a + bq (proj^T X)^2) * r)``; drift ``poly(X) + d0``."""

    poly: np.ndarray
    d0: np.ndarray
    phi: np.ndarray
    c0: np.ndarray
    G: np.ndarray
    xi: np.ndarray
    a: np.ndarray
    bq: np.ndarray
    proj: np.ndarray
    r0: np.ndarray = field(default=None)


def noise_spec(model: StochasticModel, K: int, dt: float = COARSE_DT) -> NoiseSpec:
    eye = np.eye(K)
    zeros = np.zeros(K)
    ones = np.ones(K)
    if isinstance(model, PolyModel):
        scale = np.sqrt(dt * model.variance * (1.0 - model.phi ** 2))
        return NoiseSpec(np.array(model.coeffs, dtype=np.float64), zeros, model.phi * eye, zeros,
                         scale * eye, eye, ones, zeros, eye, zeros)
    if isinstance(model, GlobalModel):
        basis = model.basis
        phi = np.zeros(K) if model.phi is None else np.asarray(model.phi, dtype=np.float64)
        return NoiseSpec(np.zeros(4), basis.xi0.copy(), np.diag(phi), zeros,
                         np.diag(np.sqrt(dt * (1.0 - phi ** 2))),
                         basis.modes * basis.lambdas, ones, zeros, eye, zeros)
    A = np.asarray(model.A, dtype=np.float64)
    mu = np.asarray(model.mu, dtype=np.float64)
    a = ones if model.a is None else np.asarray(model.a, dtype=np.float64)
    bq = zeros if model.b is None else np.asarray(model.b, dtype=np.float64)
    r0 = mu.copy() if model.r0 is None else np.asarray(model.r0, dtype=np.float64)
    return NoiseSpec(np.zeros(4), zeros, eye - A, A @ mu, np.sqrt(dt) * np.asarray(model.B),
                     np.asarray(model.modes, dtype=np.float64), a, bq,
                     np.asarray(model.modes, dtype=np.float64), r0)


# -- derivative fitting ------------------------------------------------------

class RankDeficientFit(ValueError):
    pass


def fit_local_polynomial(x_samples, u_samples) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares cubic ``u ~ b0 + b1 x + b2 x^2 + b3 x^3`` pooled over all samples.

    Returns the coefficients and residuals (same shape as ``u_samples``).
    """
    x = np.asarray(x_samples, dtype=np.float64)
    u = np.asarray(u_samples, dtype=np.float64)
    if x.shape != u.shape:
        raise ValueError("x and u samples must have the same shape")
    design = np.vander(x.ravel(), 4, increasing=True)
    coeffs, _, rank, _ = np.linalg.lstsq(design, u.ravel(), rcond=None)
    if rank < 4:
        raise RankDeficientFit("cubic fit needs at least four distinct x values")
    residuals = (u.ravel() - design @ coeffs).reshape(u.shape)
    return coeffs, residuals


def fit_residual_ar1(residuals) -> tuple[float, float]:
    """Pooled sample variance and pooled lag-1 autocorrelation of residual series.

    ``residuals`` is one series or a ``(n_series, n_times)`` array.
    """
    e = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    if e.shape[1] < 2:
        raise ValueError("need at least two samples per series")
    variance = float(np.var(e, ddof=1))
    d = e - e.mean()
    phi = float((d[:, :-1] * d[:, 1:]).sum() / (d * d).sum())
    return variance, phi


@dataclass(frozen=True)
class DerivativeFit:
    coeffs: np.ndarray
    variance: float
    phi: float
    basis: PodBasis

    def models(self) -> dict[str, StochasticModel]:
        stripped = strip_series(self.basis)
        return {
            "poly_gauss": PolyModel(self.coeffs, self.variance, K=self.basis.K),
            "poly_ou": PolyModel(self.coeffs, self.variance, self.phi, correlated=True, K=self.basis.K),
            "svd_gauss": GlobalModel(stripped),
            "svd_ou": GlobalModel(stripped, self.basis.autocorr.copy()),
        }


def fit_derivative_models(ds: TruthDataset) -> DerivativeFit:
    U = measure_subgrid_tendency(ds).U
    x = ds.snapshots[:-1].T
    coeffs, residuals = fit_local_polynomial(x, U)
    variance, phi = fit_residual_ar1(residuals)
    return DerivativeFit(coeffs, variance, phi, compute_pod(U))


def strip_series(basis: PodBasis) -> PodBasis:
    return replace(basis, series=np.zeros((basis.K, 0)))


# -- persistence -------------------------------------------------------------

_POLY_HDR = struct.Struct("<Idd")
_SVD_HDR = struct.Struct("<II")
_OU_HDR = struct.Struct("<IBB")


def save_model(model: StochasticModel, path, meta: dict | None = None) -> None:
    info = {"kind": "model", "form": model.name}
    info.update(meta or {})
    if isinstance(model, PolyModel):
        kind = container.Kind.POLY_OU if model.correlated else container.Kind.POLY_GAUSS
        info.update(coeffs=list(map(float, model.coeffs)), variance=model.variance, phi=model.phi)
        container.write(path, kind, _POLY_HDR, (model.K, model.variance, model.phi),
                        [model.coeffs], info)
    elif isinstance(model, GlobalModel):
        basis = model.basis
        kind = container.Kind.SVD_GAUSS if model.phi is None else container.Kind.SVD_OU
        phi = np.zeros(basis.K) if model.phi is None else model.phi
        info.update(lambdas=basis.lambdas.tolist(), phi=np.asarray(phi).tolist())
        container.write(path, kind, _SVD_HDR, (basis.K, basis.rank),
                        [basis.xi0, basis.modes, basis.lambdas, basis.autocorr, phi], info)
    else:
        kind = container.Kind.CRPS_MULT if model.multiplicative else container.Kind.CRPS_OU
        arrays = [model.modes, model.mu, model.A, model.B]
        if model.multiplicative:
            arrays += [model.a, model.b]
        if model.r0 is not None:
            arrays.append(model.r0)
        info.update(n_params=model.n_params())
        container.write(path, kind, _OU_HDR, (model.K, int(model.multiplicative), int(model.r0 is not None)),
                        arrays, info)


def load_model(path) -> StochasticModel:
    kind, header, payload = container.read(path)
    reader = container.PayloadReader(payload)
    K = container.Kind
    if kind in (K.POLY_GAUSS, K.POLY_OU):
        k, variance, phi = _POLY_HDR.unpack(header)
        model = PolyModel(reader.take(4), variance, phi, correlated=kind == K.POLY_OU, K=k)
    elif kind in (K.SVD_GAUSS, K.SVD_OU):
        k, rank = _SVD_HDR.unpack(header)
        xi0, modes, lambdas, autocorr, phi = (reader.take(k), reader.take(k, k), reader.take(k),
                                              reader.take(k), reader.take(k))
        basis = PodBasis(xi0, modes, lambdas, np.zeros((k, 0)), autocorr, rank)
        model = GlobalModel(basis, phi if kind == K.SVD_OU else None)
    elif kind in (K.CRPS_OU, K.CRPS_MULT):
        k, mult, has_r0 = _OU_HDR.unpack(header)
        modes, mu, A, B = reader.take(k, k), reader.take(k), reader.take(k, k), reader.take(k, k)
        a = b = r0 = None
        if mult:
            a, b = reader.take(k), reader.take(k)
        if has_r0:
            r0 = reader.take(k)
        model = CoupledOuModel(modes, mu, A, B, a, b, r0)
    else:
        raise container.ContainerError(f"{path}: expected a model, found {kind.name}")
    reader.done()
    return model
