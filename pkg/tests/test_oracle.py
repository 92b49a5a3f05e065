import numpy as np
import pytest
import torch
from hypothesis import given
from hypothesis import strategies as st

from pinocde.oracle import (build_dataset, compute_stats, finite_difference, integrate_newmark,
                            integrate_newmark_batch, load_dataset, normalize, save_dataset)
from pinocde.system import ExcitationSpec, ParameterSpace, ParamSpec, build_system
from pinocde.toy import sdof_system, toy_space, toy_system


def free_sdof(m=1.0, k=4.0, c=0.0, dt=0.01, T=5.0, u0=1.0):
    M, C, K = (np.array([[[x]]]) for x in (m, c, k))
    n_t = int(round(T / dt)) + 1
    return integrate_newmark_batch(M, C, K, np.zeros((1, n_t, 1)), dt, u0=np.array([[u0]]))


def test_newmark_free_vibration_close_to_cosine():
    u, _, _ = free_sdof()
    t = np.arange(u.shape[1]) * 0.01
    assert np.max(np.abs(u[0, :, 0] - np.cos(2 * t))) < 1e-3


def test_newmark_conserves_energy_without_damping():
    u, v, _ = free_sdof(dt=0.05, T=50.0)
    e = 0.5 * v[0, :, 0] ** 2 + 0.5 * 4.0 * u[0, :, 0] ** 2
    np.testing.assert_allclose(e, e[0], rtol=1e-12)


def test_newmark_second_order_convergence():
    errs = []
    for dt in (0.02, 0.01):
        u, _, _ = free_sdof(dt=dt, T=2.0)
        errs.append(abs(u[0, -1, 0] - np.cos(4.0)))
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_newmark_static_load_settles():
    M, C, K = np.array([[[1.0]]]), np.array([[[2.0]]]), np.array([[[4.0]]])
    u, _, _ = integrate_newmark_batch(M, C, K, np.full((1, 2001, 1), 8.0), 0.01)
    assert abs(u[0, -1, 0] - 2.0) < 1e-6


def test_newmark_rejects_bad_dt():
    one = np.ones((1, 1, 1))
    with pytest.raises(ValueError):
        integrate_newmark_batch(one, one, one, np.zeros((1, 5, 1)), 0.0)


def test_integrate_checks_grid_length():
    s = build_system(sdof_system(), {"m": 1.0, "k": 1.0, "c": 0.0})
    with pytest.raises(ValueError):
        integrate_newmark(s, np.zeros(10), 0.1, 2.0)


def test_batch_matches_single():
    space = toy_space()
    ds = build_dataset(toy_system(), space, 3, 0, 0, master_seed=5)
    for i in range(3):
        s = ds.sample(i)
        tr = integrate_newmark(build_system(toy_system(), s.params), s.f, space.dt, space.T)
        np.testing.assert_allclose(ds.U[i], tr.u, rtol=1e-10, atol=1e-14)


@given(c=st.lists(st.floats(-5, 5), min_size=3, max_size=3))
def test_finite_difference_exact_on_quadratics(c):
    dt = 0.1
    t = np.arange(12)[:, None] * dt
    u = c[0] + c[1] * t + c[2] * t**2
    du, ddu = finite_difference(u, dt)
    np.testing.assert_allclose(du, c[1] + 2 * c[2] * t, atol=1e-9)
    np.testing.assert_allclose(ddu, np.full_like(t, 2 * c[2]), atol=1e-8)


def test_finite_difference_numpy_matches_torch(rng):
    u = rng.normal(size=(2, 30, 3))
    a = finite_difference(u, 0.05)
    b = finite_difference(torch.tensor(u), 0.05)
    for x, y in zip(a, b):
        np.testing.assert_allclose(x, y.numpy(), rtol=1e-12)


def test_finite_difference_too_short():
    with pytest.raises(ValueError):
        finite_difference(np.zeros((2, 1)), 0.1)


def test_dataset_is_deterministic_and_worker_independent(tmp_path):
    a = build_dataset(toy_system(), toy_space(), 6, 2, 2, master_seed=3, jobs=1, chunk=3)
    b = build_dataset(toy_system(), toy_space(), 6, 2, 2, master_seed=3, jobs=4, chunk=2)
    for x, y in zip((a.P, a.F, a.U, a.dU, a.ddU), (b.P, b.F, b.U, b.dU, b.ddU)):
        np.testing.assert_array_equal(x, y)
    assert save_dataset(a, tmp_path / "a") == save_dataset(b, tmp_path / "b")
    assert (tmp_path / "a" / "u.bin").read_bytes() == (tmp_path / "b" / "u.bin").read_bytes()


def test_dataset_prefix_shares_samples():
    a = build_dataset(toy_system(), toy_space(), 4, 0, 0, master_seed=9)
    b = build_dataset(toy_system(), toy_space(), 2, 0, 0, master_seed=9)
    np.testing.assert_array_equal(a.P[:2], b.P)


def test_virtual_pairs_are_unlabelled(small_toy_dataset):
    ds = small_toy_dataset
    assert ds.U.shape[0] == ds.n_train + ds.n_test
    assert ds.trajectory(ds.indices("virtual")[0]) is None
    assert ds.F.shape[0] == ds.n_pairs


def test_save_load_round_trip(tmp_path, small_toy_dataset):
    h = save_dataset(small_toy_dataset, tmp_path / "ds")
    ds, h2 = load_dataset(tmp_path / "ds")
    assert h == h2
    np.testing.assert_array_equal(ds.U, small_toy_dataset.U)
    np.testing.assert_array_equal(ds.F, small_toy_dataset.F)
    assert ds.labels == small_toy_dataset.labels
    assert ds.norm.digest() == small_toy_dataset.norm.digest()


def test_load_detects_corruption(tmp_path, small_toy_dataset):
    save_dataset(small_toy_dataset, tmp_path / "ds")
    blob = tmp_path / "ds" / "u.bin"
    data = bytearray(blob.read_bytes())
    data[0] ^= 1
    blob.write_bytes(bytes(data))
    with pytest.raises(ValueError):
        load_dataset(tmp_path / "ds")


def test_normalisation_uses_train_split(small_toy_dataset):
    view, stats = normalize(small_toy_dataset)
    tr = small_toy_dataset.indices("train")
    np.testing.assert_allclose(view.u[tr].reshape(-1, view.u.shape[-1]).mean(axis=0), 0, atol=1e-10)
    np.testing.assert_allclose(view.u[tr].reshape(-1, view.u.shape[-1]).std(axis=0), 1, atol=1e-10)
    np.testing.assert_allclose(view.denormalize("u", view.u), small_toy_dataset.U, atol=1e-12)


def test_constant_channel_std_is_floored():
    space = ParameterSpace(params=[ParamSpec(name="m", dist="fixed", value=1.0),
                                   ParamSpec(name="k", lo=1.0, hi=2.0),
                                   ParamSpec(name="c", dist="fixed", value=0.1)],
                           excitation=ExcitationSpec(psd_params={"intensity": 1.0}, band=(0.1, 2.0)),
                           dt=0.05, T=2.0)
    ds = build_dataset(sdof_system(), space, 4, 0, 0, master_seed=0)
    stats = compute_stats(ds)
    assert stats.std["p"][0] == 1.0 and stats.std["p"][2] == 1.0
    assert np.all(np.isfinite(stats.apply("p", ds.P)))


def test_split_validation():
    with pytest.raises(ValueError):
        build_dataset(toy_system(), toy_space(), -1, 0, 0, master_seed=0)
