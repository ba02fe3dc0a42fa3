import filecmp

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stochl96 import container
from stochl96.models import (CoupledOuModel, GlobalModel, PolyModel, RankDeficientFit, ar1_step,
                             coupled_ou_step, fit_local_polynomial, fit_residual_ar1, initial_coupled_ou,
                             load_model, model_forcing, noise_spec, save_model)
from stochl96.pod import compute_pod

vec8 = arrays(np.float64, 8, elements=st.floats(-10, 10))


@pytest.fixture(scope="module")
def basis():
    r = np.random.default_rng(4)
    return compute_pod(r.standard_normal((8, 8)) @ r.standard_normal((8, 500)) + 1.0)


def mult_model(basis, rng):
    return CoupledOuModel(basis.modes, rng.standard_normal(8), 0.1 * rng.standard_normal((8, 8)),
                          rng.standard_normal((8, 8)), rng.standard_normal(8), rng.standard_normal(8))


# -- fitting --------------------------------------------------------------------

def test_cubic_fit_recovers_exact_polynomial(rng):
    x = rng.uniform(-10, 15, (8, 200))
    coeffs, res = fit_local_polynomial(x, 1 + 2 * x - x ** 3)
    np.testing.assert_allclose(coeffs, [1, 2, 0, -1], atol=1e-8)
    assert np.abs(res).max() < 1e-8


def test_cubic_fit_of_constant(rng):
    coeffs, _ = fit_local_polynomial(rng.uniform(-5, 5, 50), np.full(50, 5.0))
    np.testing.assert_allclose(coeffs, [5, 0, 0, 0], atol=1e-10)


def test_cubic_fit_rejects_rank_deficient_design():
    with pytest.raises(RankDeficientFit):
        fit_local_polynomial(np.array([1.0, 2.0, 3.0, 1.0, 2.0]), np.ones(5))


def test_c4_linear_coefficient(c4_fit):
    assert c4_fit.coeffs[1] == pytest.approx(0.575, abs=0.1)


def test_residual_statistics_of_white_noise():
    e = np.random.default_rng(0).standard_normal(100000)
    S2, phi = fit_residual_ar1(e)
    assert S2 == pytest.approx(1.0, abs=0.05)
    assert phi == pytest.approx(0.0, abs=0.02)


def test_residual_statistics_of_ar1_series():
    r = np.random.default_rng(1)
    e = np.zeros((8, 20000))
    z = r.standard_normal(e.shape)
    for t in range(1, e.shape[1]):
        e[:, t] = 0.9 * e[:, t - 1] + z[:, t]
    _, phi = fit_residual_ar1(e)
    assert phi == pytest.approx(0.9, abs=0.02)


def test_c10_residual_statistics(c10_data):
    from stochl96.models import fit_derivative_models
    fit = fit_derivative_models(c10_data)
    assert fit.variance == pytest.approx(4.04, rel=0.2)
    assert fit.phi == pytest.approx(0.977, abs=0.01)


# -- noise processes ----------------------------------------------------------------

def test_ar1_reductions(rng):
    eps, r = rng.standard_normal(8), rng.standard_normal(8)
    np.testing.assert_allclose(ar1_step(r, 4.6, 0.0, 0.005, eps), np.sqrt(0.005 * 4.6) * eps, rtol=1e-15)
    np.testing.assert_array_equal(ar1_step(r, 4.6, 0.97, 0.005, np.zeros(8)), 0.97 * r)


def test_ar1_stationary_variance():
    dt, S2, phi = 0.005, 4.61, 0.97
    r = np.random.default_rng(2)
    n_chains, n_steps = 1000, 1000
    x = np.sqrt(dt * S2) * r.standard_normal(n_chains)  # start in the stationary law
    total_sq = 0.0
    for _ in range(n_steps):
        x = ar1_step(x, S2, phi, dt, r.standard_normal(n_chains))
        total_sq += (x * x).sum()
    assert total_sq / (n_chains * n_steps) == pytest.approx(dt * S2, rel=0.03)


def test_coupled_ou_reductions(rng):
    r, mu, eps = rng.standard_normal(8), rng.standard_normal(8), rng.standard_normal(8)
    Z = np.zeros((8, 8))
    np.testing.assert_array_equal(coupled_ou_step(r, mu, Z, Z, eps, 0.005), r)
    np.testing.assert_allclose(coupled_ou_step(r, mu, np.eye(8), Z, eps, 0.005), mu, atol=1e-15)


def test_coupled_ou_increment_variance():
    eps = np.random.default_rng(3).standard_normal((100000, 8))
    r = np.zeros((100000, 8))
    d = coupled_ou_step(r, np.zeros(8), np.zeros((8, 8)), np.eye(8), eps, 0.25) - r
    np.testing.assert_allclose(d.var(axis=0), 0.25, rtol=0.03)


def test_coupled_ou_matches_displayed_update(rng):
    r, mu, eps = rng.standard_normal(8), rng.standard_normal(8), rng.standard_normal(8)
    A, B = rng.standard_normal((8, 8)), rng.standard_normal((8, 8))
    np.testing.assert_allclose(coupled_ou_step(r, mu, A, B, eps, 0.005),
                               r + A @ (mu - r) + B @ eps * np.sqrt(0.005), atol=1e-13)


# -- forcing -------------------------------------------------------------------------

def test_published_c4_polynomial_at_origin():
    model = PolyModel(np.array([-2.20, 0.575, -0.00499, -0.000216]), 4.61, 0.974, correlated=True)
    np.testing.assert_allclose(model_forcing(model, np.zeros(8), np.zeros(8)), -2.20, rtol=1e-15)


def test_poly_forcing(rng):
    x, r = rng.standard_normal(8), rng.standard_normal(8)
    c = np.array([0.3, 1.3, -0.0128, -0.00234])
    np.testing.assert_allclose(model_forcing(PolyModel(c, 4.0), x, r),
                               c[0] + c[1] * x + c[2] * x ** 2 + c[3] * x ** 3 + r, atol=1e-14)


def test_global_forcing_without_noise_is_mean_profile(basis):
    np.testing.assert_array_equal(model_forcing(GlobalModel(basis), np.ones(8), np.zeros(8)), basis.xi0)


def test_global_forcing_sums_scaled_modes(basis, rng):
    r = rng.standard_normal(8)
    want = basis.xi0 + sum(basis.modes[:, i] * basis.lambdas[i] * r[i] for i in range(8))
    np.testing.assert_allclose(model_forcing(GlobalModel(basis), np.ones(8), r), want, atol=1e-13)


def test_multiplicative_with_zero_b_is_state_independent(basis, rng):
    a, r = rng.standard_normal(8), rng.standard_normal(8)
    m = CoupledOuModel(basis.modes, np.zeros(8), np.zeros((8, 8)), np.eye(8), a, np.zeros(8))
    want = basis.modes @ (a * r)
    for x in (np.zeros(8), 5 * rng.standard_normal(8)):
        np.testing.assert_allclose(model_forcing(m, x, r), want, atol=1e-13)


def test_multiplicative_forcing_formula(basis, rng):
    m = mult_model(basis, rng)
    x, r = rng.standard_normal(8), rng.standard_normal(8)
    want = sum(basis.modes[:, i] * (m.a[i] + m.b[i] * (basis.modes[:, i] @ x) ** 2) * r[i] for i in range(8))
    np.testing.assert_allclose(model_forcing(m, x, r), want, atol=1e-12)


@given(vec8, vec8, vec8, st.floats(-3, 3))
def test_forcing_linear_in_noise_state(x, r1, r2, s):
    b = compute_pod(np.random.default_rng(4).standard_normal((8, 100)))
    rng = np.random.default_rng(5)
    for m in (initial_coupled_ou(b.modes), mult_model(b, rng)):
        lhs = model_forcing(m, x, r1 + s * r2)
        rhs = model_forcing(m, x, r1) + s * model_forcing(m, x, r2)
        np.testing.assert_allclose(lhs, rhs, rtol=1e-9, atol=1e-9 * (1 + np.abs(lhs).max()))


def test_parameter_counts(basis):
    assert initial_coupled_ou(basis.modes).n_params() == 8 + 64 + 64
    assert initial_coupled_ou(basis.modes, multiplicative=True).n_params() == 152
    assert initial_coupled_ou(basis.modes, multiplicative=True, trainable_start=True).n_params() == 160


def test_model_validation(basis):
    with pytest.raises(ValueError):
        PolyModel(np.zeros(4), 0.0)
    with pytest.raises(ValueError):
        PolyModel(np.zeros(4), 1.0, 1.0)
    with pytest.raises(ValueError):
        GlobalModel(basis, np.full(8, 1.2))
    with pytest.raises(ValueError):
        CoupledOuModel(basis.modes, np.zeros(8), np.eye(8), np.eye(8), a=np.ones(8))


def test_noise_spec_matches_coupled_update(basis, rng):
    m = mult_model(basis, rng)
    spec = noise_spec(m, 8, 0.005)
    r, eps = rng.standard_normal(8), rng.standard_normal(8)
    np.testing.assert_allclose(spec.phi @ r + spec.c0 + spec.G @ eps,
                               coupled_ou_step(r, m.mu, m.A, m.B, eps, 0.005), atol=1e-13)


# -- persistence -----------------------------------------------------------------

def all_forms(basis, rng):
    from stochl96.models import strip_series
    b = strip_series(basis)
    return [PolyModel(rng.standard_normal(4), 4.6), PolyModel(rng.standard_normal(4), 4.6, 0.97, True),
            GlobalModel(b), GlobalModel(b, np.full(8, 0.99)), initial_coupled_ou(basis.modes),
            mult_model(basis, rng), initial_coupled_ou(basis.modes, True, True)]


def test_models_round_trip_bit_exact(tmp_path, basis, rng):
    for i, m in enumerate(all_forms(basis, rng)):
        path = tmp_path / f"m{i}.bin"
        save_model(m, path)
        back = load_model(path)
        assert type(back) is type(m) and back.name == m.name
        save_model(back, tmp_path / f"again{i}.bin")
        assert filecmp.cmp(path, tmp_path / f"again{i}.bin", shallow=False)


def test_kind_tags_are_distinct(tmp_path, basis, rng):
    kinds = set()
    for i, m in enumerate(all_forms(basis, rng)[:6]):
        save_model(m, tmp_path / f"m{i}.bin")
        kinds.add(container.peek_kind(tmp_path / f"m{i}.bin"))
    assert len(kinds) == 6


def test_loading_a_dataset_as_model_fails(tmp_path, small_data):
    from stochl96.dataset import save_dataset
    save_dataset(small_data, tmp_path / "d.bin")
    with pytest.raises(container.ContainerError):
        load_model(tmp_path / "d.bin")


@settings(max_examples=20, deadline=None)
@given(st.floats(-0.99, 0.99), st.floats(0.1, 10))
def test_ar1_spec_matches_step(phi, S2):
    m = PolyModel(np.zeros(4), S2, phi, correlated=True)
    spec = noise_spec(m, 8, 0.005)
    r, eps = np.linspace(-1, 1, 8), np.linspace(2, -2, 8)
    np.testing.assert_allclose(spec.phi @ r + spec.G @ eps, ar1_step(r, S2, phi, 0.005, eps), atol=1e-14)
