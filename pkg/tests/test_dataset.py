import filecmp

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochl96 import container, kernels
from stochl96.dataset import (TruthDataset, generate_truth, load_dataset, measure_subgrid_tendency,
                              save_dataset, split_train_val, subgrid_tendency)
from stochl96.dynamics import advection, preset
from stochl96.models import fit_local_polynomial, fit_residual_ar1

P = preset("c4")


def fake(n, K=8):
    return TruthDataset(P, np.arange(n * K, dtype=float).reshape(n, K))


def test_full_run_snapshot_count(c4_data):
    assert c4_data.n_snapshots == 100001
    assert c4_data.snapshots.shape == (100001, 8)
    assert np.all(np.isfinite(c4_data.snapshots))


# The published S^2 values for the slow variables are the pooled standard deviations.
def test_c4_slow_variable_spread(c4_data):
    assert c4_data.sample_std() == pytest.approx(6.45, rel=0.15)


def test_c10_slow_variable_spread(c10_data):
    assert c10_data.sample_std() == pytest.approx(5.08, rel=0.15)


def test_tendency_vanishes_for_forward_euler_pair(rng):
    X0 = 3 * rng.standard_normal(8)
    X1 = X0 + 0.005 * (advection(X0) - X0 + 20.0)
    U = subgrid_tendency(np.stack([X0, X1]), 0.005, 20.0)
    np.testing.assert_allclose(U, 0.0, atol=1e-10)


def test_tendency_of_rest_pair_is_forcing():
    U = subgrid_tendency(np.zeros((2, 8)), 0.005, 20.0)
    assert U.shape == (8, 1)
    assert np.all(U == 20.0)


def test_c4_polynomial_residual_variance(c4_data):
    U = measure_subgrid_tendency(c4_data).U
    _, residuals = fit_local_polynomial(c4_data.snapshots[:-1].T, U)
    S2, _ = fit_residual_ar1(residuals)
    assert S2 == pytest.approx(4.61, rel=0.2)


def test_tendency_alignment_reconstructs_next_snapshot(small_data):
    X = small_data.snapshots
    U = measure_subgrid_tendency(small_data).U.T
    nxt = X[:-1] + 0.005 * (advection(X[:-1]) - X[:-1] + 20.0 - U)
    np.testing.assert_allclose(nxt, X[1:], rtol=0, atol=1e-11)


@pytest.mark.parametrize("n, expected", [(100, (80, 20)), (100001, (80001, 20000)), (5, (4, 1))])
def test_split_sizes(n, expected):
    tr, va = split_train_val(fake(n))
    assert (tr.n_snapshots, va.n_snapshots) == expected


@given(st.integers(5, 3000))
def test_split_is_ordered_partition(n):
    ds = fake(n)
    tr, va = split_train_val(ds)
    np.testing.assert_array_equal(np.concatenate([tr.snapshots, va.snapshots]), ds.snapshots)
    assert va.n_snapshots >= 1 and tr.n_snapshots >= va.n_snapshots


def test_split_rejects_tiny_datasets():
    with pytest.raises(ValueError):
        split_train_val(fake(4))


def test_same_seed_gives_identical_bytes(tmp_path):
    a = generate_truth(P, 3, spinup_mtu=1.0, production_mtu=2.0)
    b = generate_truth(P, 3, spinup_mtu=1.0, production_mtu=2.0)
    save_dataset(a, tmp_path / "a.bin")
    save_dataset(b, tmp_path / "b.bin")
    assert filecmp.cmp(tmp_path / "a.bin", tmp_path / "b.bin", shallow=False)
    c = generate_truth(P, 4, spinup_mtu=1.0, production_mtu=2.0)
    assert not np.array_equal(a.snapshots, c.snapshots)


def test_snapshots_are_slow_block_of_full_state():
    ds = generate_truth(P, 5, spinup_mtu=1.0, production_mtu=1.0, keep_fast=True)
    plain = generate_truth(P, 5, spinup_mtu=1.0, production_mtu=1.0)
    np.testing.assert_array_equal(ds.snapshots, plain.snapshots)
    # continuing from any stored full state reproduces the next stored slow state
    x, y = ds.snapshots[10].copy(), ds.fast[10].copy()
    kernels.truth_run(x, y, P.K, P.J, P.h, P.F, P.b, P.c, 0.001, 5, 0, np.empty((0, P.K)))
    np.testing.assert_array_equal(x, ds.snapshots[11])
    np.testing.assert_array_equal(y, ds.fast[11])


def test_round_trip_is_bit_exact(tmp_path, small_data):
    save_dataset(small_data, tmp_path / "d.bin")
    back = load_dataset(tmp_path / "d.bin")
    assert back.params == small_data.params
    np.testing.assert_array_equal(back.snapshots, small_data.snapshots)
    assert (back.seed, back.spinup_mtu, back.production_mtu) == (7, 20.0, 40.0)
    assert (tmp_path / "d.bin.json").exists()


def test_round_trip_with_fast_variables(tmp_path):
    ds = generate_truth(P, 5, spinup_mtu=0.5, production_mtu=0.5, keep_fast=True)
    save_dataset(ds, tmp_path / "f.bin")
    back = load_dataset(tmp_path / "f.bin")
    np.testing.assert_array_equal(back.fast, ds.fast)


def test_wrong_kind_and_corruption_are_rejected(tmp_path, small_data):
    path = tmp_path / "d.bin"
    save_dataset(small_data, path)
    raw = bytearray(path.read_bytes())
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(container.ContainerError):
        load_dataset(bad)
    bad.write_bytes(bytes(raw[:-4]))
    with pytest.raises(container.ContainerError):
        load_dataset(bad)
    bad.write_bytes(bytes(raw[:-8]))
    with pytest.raises(container.ContainerError):
        load_dataset(bad)
    assert container.peek_kind(path) == container.Kind.DATASET


def test_production_length_must_fit_storage_interval():
    with pytest.raises(ValueError):
        generate_truth(P, 1, spinup_mtu=0.0, production_mtu=0.0123)
