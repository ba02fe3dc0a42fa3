import numpy as np
import pytest

from stochl96 import kernels
from stochl96.dynamics import coarse_rhs, preset
from stochl96.evaluation import run_ensemble
from stochl96.integrators import ssprk3_step, stochastic_ssprk3_step
from stochl96.models import (CoupledOuModel, GlobalModel, PolyModel, ar1_step, coupled_ou_step,
                             drift_forcing, initial_coupled_ou, noise_increment)
from stochl96.pod import PodBasis

P = preset("c4")
DT = 0.005
BACKENDS = sorted(kernels.BACKENDS)


def random_basis(rng, K=8):
    modes, _ = np.linalg.qr(rng.standard_normal((K, K)))
    return PodBasis(rng.standard_normal(K), modes, np.sort(rng.uniform(1, 5, K))[::-1],
                    np.zeros((K, 0)), rng.uniform(0.9, 0.99, K), K)


def example_models(rng):
    basis = random_basis(rng)
    coeffs = np.array([-0.22, 0.575, -0.005, -0.0002])
    mult = CoupledOuModel(basis.modes, 0.1 * rng.standard_normal(8), 0.05 * rng.standard_normal((8, 8)),
                          0.1 * rng.standard_normal((8, 8)), 1 + 0.1 * rng.standard_normal(8),
                          0.0005 * rng.standard_normal(8))
    return {
        "poly_gauss": PolyModel(coeffs, 4.6),
        "poly_ou": PolyModel(coeffs, 4.6, 0.97, correlated=True),
        "svd_gauss": GlobalModel(basis),
        "svd_ou": GlobalModel(basis, basis.autocorr),
        "crps_ou": initial_coupled_ou(basis.modes),
        "crps_mult": mult,
    }


def reference_trajectory(model, x0, eps):
    """Step-by-step composition of the public forcing pieces and the reference stepper."""
    x = x0.copy()
    if isinstance(model, CoupledOuModel):
        r = np.array(model.mu if model.r0 is None else model.r0, dtype=np.float64)
    else:
        r = np.zeros(8)
    out = [x.copy()]
    for e in eps:
        if isinstance(model, PolyModel):
            r = ar1_step(r, model.variance, model.phi, DT, e)
        elif isinstance(model, GlobalModel):
            r = ar1_step(r, 1.0, 0.0 if model.phi is None else model.phi, DT, e)
        else:
            r = coupled_ou_step(r, model.mu, model.A, model.B, e, DT)
        inc = noise_increment(model, x, r)
        x = stochastic_ssprk3_step(x, lambda z: coarse_rhs(z, drift_forcing(model, z), P),
                                   lambda z, _: inc, None, DT)
        out.append(x.copy())
    return np.array(out)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("name", ["poly_gauss", "poly_ou", "svd_gauss", "svd_ou", "crps_ou", "crps_mult"])
def test_coarse_kernel_matches_reference_composition(backend, name, small_data):
    rng = np.random.default_rng(11)
    model = example_models(rng)[name]
    x0 = small_data.snapshots[100]
    eps = rng.standard_normal((40, 1, 8))
    out, diverged, _ = run_ensemble(model, x0[None], eps, backend=kernels.get_backend(backend))
    ref = reference_trajectory(model, x0, eps[:, 0])
    assert diverged[0] == -1
    np.testing.assert_allclose(out[:, 0], ref, rtol=1e-12, atol=1e-11)


def test_backends_agree_on_truth_run(rng):
    if len(BACKENDS) < 2:
        pytest.skip("compiled kernels not built")
    x0, y0 = rng.standard_normal(P.K), rng.standard_normal(P.K * P.J)
    outs = []
    for name in BACKENDS:
        x, y = x0.copy(), y0.copy()
        out = np.empty((11, P.K))
        assert kernels.get_backend(name).truth_run(x, y, P.K, P.J, P.h, P.F, P.b, P.c, 0.001, 500, 50, out) == -1
        outs.append((out, y))
    np.testing.assert_allclose(outs[0][0], outs[1][0], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(outs[0][1], outs[1][1], rtol=1e-12, atol=1e-12)


def test_truth_kernel_matches_reference_stepper(rng):
    from stochl96.dynamics import FullState, truth_rhs
    x, y = rng.standard_normal(P.K), rng.standard_normal(P.K * P.J)
    state = np.concatenate([x, y])

    def f(s):
        dX, dY = truth_rhs(FullState(s[:P.K], s[P.K:]), P)
        return np.concatenate([dX, dY])

    for _ in range(20):
        state = ssprk3_step(state, f, 0.001)
    kernels.truth_run(x, y, P.K, P.J, P.h, P.F, P.b, P.c, 0.001, 20, 0, np.empty((0, P.K)))
    np.testing.assert_allclose(x, state[:P.K], rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(y, state[P.K:], rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_diverged_trajectories_are_frozen_and_flagged(backend, rng):
    be = kernels.get_backend(backend)
    basis = random_basis(rng)
    model = CoupledOuModel(basis.modes, np.zeros(8), np.zeros((8, 8)), 400.0 * np.eye(8))
    x0 = np.tile(np.full(8, 3.0), (3, 1))
    eps = rng.standard_normal((50, 3, 8))
    eps[:, 0] = 0.0  # member 0 stays noise-free and bounded
    out, diverged, x = run_ensemble(model, x0, eps, backend=be)
    assert diverged[0] == -1
    assert np.all(diverged[1:] > 0)
    for m in (1, 2):
        frozen = out[diverged[m]:, m]
        assert np.all(frozen == frozen[0])
        assert np.all(np.abs(frozen) <= kernels.DIVERGENCE_LIMIT)


def test_truth_kernel_reports_divergence():
    be = kernels.get_backend("python")
    x = np.full(P.K, 1e6)
    y = np.zeros(P.K * P.J)
    assert be.truth_run(x, y, P.K, P.J, P.h, P.F, P.b, P.c, 0.001, 10, 0, np.empty((0, P.K))) >= 0


def test_active_backend_is_registered():
    assert kernels.BACKEND in kernels.BACKENDS
    with pytest.raises(ValueError):
        kernels.get_backend("fortran")
