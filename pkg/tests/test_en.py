import numpy as np
import pytest
import torch

from pinocde.en import (ENWeights, compute_en_weights, load_en_weights, perturbation_draw,
                        perturbed_residual_max, save_en_weights, weighted_residual_norm)


def test_weighted_maxima_equal_r_on_computation_draw(small_toy_dataset):
    ds = small_toy_dataset
    r = 0.02
    w = compute_en_weights(ds, r=r, seed=4)
    Ms, Cs, Ks, Fms = ds.system_arrays()
    for i in range(ds.n_train + ds.n_test):
        L = perturbed_residual_max(ds, i, perturbation_draw(ds, i, r, 4), (Ms[i], Cs[i], Ks[i], Fms[i]))
        np.testing.assert_allclose(w.lam[i] * L, r, rtol=1e-12)


def test_fresh_draws_stay_within_factor_three(small_toy_dataset):
    ds = small_toy_dataset
    r = 0.02
    w = compute_en_weights(ds, r=r, seed=0)
    Ms, Cs, Ks, Fms = ds.system_arrays()
    for i in range(ds.n_train):
        for d in range(1, 11):
            L = perturbed_residual_max(ds, i, perturbation_draw(ds, i, r, 0, d), (Ms[i], Cs[i], Ks[i], Fms[i]))
            x = w.lam[i] * L
            assert np.all((x >= r / 3) & (x <= 3 * r))


def test_weights_are_deterministic(small_toy_dataset):
    a = compute_en_weights(small_toy_dataset, seed=2)
    b = compute_en_weights(small_toy_dataset, seed=2)
    np.testing.assert_array_equal(a.lam, b.lam)
    assert not np.array_equal(a.lam, compute_en_weights(small_toy_dataset, seed=3).lam)


def test_weights_scale_inversely_with_residual(small_toy_dataset):
    w1 = compute_en_weights(small_toy_dataset, r=0.01)
    w2 = compute_en_weights(small_toy_dataset, r=0.04)
    # residual of the perturbed truth is linear in r, so r / max|res| is scale free
    np.testing.assert_allclose(w1.lam, w2.lam, rtol=1e-6)


def test_shape_and_median(small_toy_dataset):
    ds = small_toy_dataset
    w = compute_en_weights(ds)
    assert w.shape == (ds.n_train + ds.n_test, ds.n_dof)
    assert w.median().shape == (ds.n_dof,)


def test_bad_arguments(small_toy_dataset):
    with pytest.raises(ValueError):
        compute_en_weights(small_toy_dataset, r=0.0)
    with pytest.raises(ValueError):
        compute_en_weights(small_toy_dataset, draws=0)


def test_weighted_residual_norm_numpy_and_torch(rng):
    res = rng.normal(size=(3, 10, 4))
    lam = rng.uniform(0.5, 2.0, size=(3, 4))
    expect = np.array([np.mean(np.sum((lam[b] * res[b]) ** 2, axis=1)) for b in range(3)])
    np.testing.assert_allclose(weighted_residual_norm(res, lam), expect, rtol=1e-12)
    got = weighted_residual_norm(torch.tensor(res), torch.tensor(lam))
    np.testing.assert_allclose(got.numpy(), expect, rtol=1e-12)
    with pytest.raises(ValueError):
        weighted_residual_norm(res, lam[:, :3])


def test_round_trip(tmp_path):
    w = ENWeights(lam=np.arange(6.0).reshape(2, 3), r=0.05, seed=7)
    save_en_weights(w, tmp_path / "en", "abc")
    back = load_en_weights(tmp_path / "en", "abc")
    np.testing.assert_array_equal(back.lam, w.lam)
    assert (back.r, back.seed) == (0.05, 7)
    with pytest.raises(ValueError):
        load_en_weights(tmp_path / "en", "other")


def test_weight_is_r_over_residual_maximum():
    from pinocde.en import _invert
    np.testing.assert_allclose(_invert(np.array([0.04]), 0.02, 1e6), [0.5])
    assert _invert(np.array([0.0]), 0.02, 1e6)[0] == 1e6


def test_duplicated_ode_gets_matching_weights():
    from pinocde.oracle import build_dataset
    from pinocde.system import (Connection, ExcitationSpec, Load, ParameterSpace, ParamSpec, PointMass,
                                SystemConfig)
    twins = SystemConfig(masses=(PointMass(name="a", mass="m"), PointMass(name="b", mass="m")),
                         connections=(Connection(a="a", k="k", c="c"), Connection(a="b", k="k", c="c")),
                         loads=(Load(channel=0, at="a"), Load(channel=0, at="b")))
    space = ParameterSpace(params=[ParamSpec(name="m", lo=0.5, hi=1.5), ParamSpec(name="k", lo=20, hi=40),
                                   ParamSpec(name="c", lo=0.1, hi=0.5)],
                           excitation=ExcitationSpec(psd_params={"intensity": 1.0}, band=(0.2, 5.0)),
                           dt=0.01, T=2.0)
    ds = build_dataset(twins, space, 100, 0, 0, master_seed=0)
    np.testing.assert_array_equal(ds.U[:, :, 0], ds.U[:, :, 1])
    w = compute_en_weights(ds)
    assert 0.8 <= np.mean(w.lam[:, 1] / w.lam[:, 0]) <= 1.25
