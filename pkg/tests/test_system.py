import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from pydantic import ValidationError

from pinocde.oracle import integrate_newmark
from pinocde.system import (Connection, ExcitationSpec, Load, ParameterSpace, ParamSpec, PointMass,
                            SystemConfig, build_system, excitation_psd, generate_excitation, residual,
                            sample_parameters, write_excitation_csv)
from pinocde.toy import full_layout_system, sdof_system, toy_space, toy_system


def toy_params(**kw):
    p = {"m_top": 0.5, "m_bot": 1.0, "k_c": 40.0, "c_c": 0.4}
    p.update(kw)
    return p


def test_toy_layout():
    s = build_system(toy_system(), toy_params())
    assert s.n_dof == 11
    assert s.labels[:6] == ["a1.z", "a2.z", "a3.z", "b1.z", "b2.z", "b3.z"]
    assert s.labels[6:] == [f"beam.q{i}" for i in range(1, 6)]
    assert s.force_map.shape == (11, 2)


def test_three_dimensional_layout_has_43_dofs():
    assert build_system(full_layout_system()).n_dof == 43


def test_spring_between_masses():
    cfg = SystemConfig(masses=(PointMass(name="a", mass=1.0), PointMass(name="b", mass=2.0)),
                       connections=(Connection(a="a", b="b", k=5.0, c=0.5), Connection(a="a", k=3.0)),
                       loads=(Load(channel=0, at="b"),))
    s = build_system(cfg)
    np.testing.assert_array_equal(s.K, [[8.0, -5.0], [-5.0, 5.0]])
    np.testing.assert_array_equal(s.C, [[0.5, -0.5], [-0.5, 0.5]])
    np.testing.assert_array_equal(s.force_map, [[0.0], [1.0]])


def test_attachment_uses_interpolated_mode_rows():
    from pinocde.system import _layout
    cfg = toy_system()
    lay = _layout(cfg)
    _, red = lay.bodies["beam"]
    v = lay.vectors("beam@0.25", None)["z"]
    np.testing.assert_allclose(v[6:], red.shape_at(0.25), atol=1e-15)
    np.testing.assert_array_equal(v[:6], 0.0)


def test_unknown_parameter():
    with pytest.raises(KeyError):
        build_system(toy_system(), {"m_top": 1.0})


def test_nonpositive_mass():
    with pytest.raises(ValueError):
        build_system(toy_system(), toy_params(m_bot=0.0))


def test_unknown_config_keys_rejected():
    with pytest.raises(ValidationError):
        PointMass(name="a", mass=1.0, colour="red")


def test_mass_matrix_positive_definite(rng):
    s = build_system(toy_system(), toy_params())
    x = rng.normal(size=(100, s.n_dof))
    assert np.all(np.einsum("bi,ij,bj->b", x, s.M, x) > 0)


def test_sampling_is_deterministic():
    a = sample_parameters(toy_space(), 42)
    b = sample_parameters(toy_space(), 42)
    np.testing.assert_array_equal(a.p, b.p)
    np.testing.assert_array_equal(a.f, b.f)
    assert not np.array_equal(a.f, sample_parameters(toy_space(), 43).f)


def test_fixed_parameters_ignore_seed():
    space = ParameterSpace(params=[ParamSpec(name="m", dist="fixed", value=2.5)], dt=0.1, T=1.0)
    for seed in range(5):
        assert sample_parameters(space, seed).p[0] == 2.5


def test_uniform_mean():
    space = ParameterSpace(params=[ParamSpec(name="a", lo=1.0, hi=2.0)],
                           excitation=ExcitationSpec(band=(0.0, 1.0)), dt=0.1, T=0.2)
    draws = np.array([sample_parameters(space, s).p[0] for s in range(10_000)])
    assert 1.49 <= draws.mean() <= 1.51


def test_parameter_space_validation():
    with pytest.raises(ValidationError):
        ParamSpec(name="a", lo=2.0, hi=1.0)
    with pytest.raises(ValidationError):
        ParameterSpace(params=[ParamSpec(name="a", lo=0, hi=1), ParamSpec(name="a", lo=0, hi=1)], dt=0.1, T=1)
    with pytest.raises(ValidationError):
        ParameterSpace(excitation=ExcitationSpec(band=(0.0, 6.0)), dt=0.1, T=1.0)


def test_zero_psd_gives_zero_signal():
    spec = ExcitationSpec(psd_params={"intensity": 0.0}, band=(1.0, 5.0))
    np.testing.assert_array_equal(generate_excitation(spec, 0.01, 2.0, 3), 0.0)


def test_band_noise_has_zero_mean():
    spec = ExcitationSpec(psd_params={"intensity": 1.0}, band=(1.0, 50.0), channels=2)
    x = generate_excitation(spec, 0.005, 4.0, 8)
    n = x.shape[0]
    assert np.all(np.abs(x.mean(axis=0)) <= 3 * x.std(axis=0) / math.sqrt(n))


def test_excitation_is_periodic_and_pure():
    spec = ExcitationSpec(psd_params={"intensity": 2.0}, band=(0.5, 3.0))
    a = generate_excitation(spec, 0.01, 2.0, 5)
    np.testing.assert_array_equal(a, generate_excitation(spec, 0.01, 2.0, 5))
    assert a.shape == (201, 1)
    assert a[0, 0] == a[-1, 0]


def test_band_above_nyquist_rejected():
    spec = ExcitationSpec(band=(1.0, 60.0))
    with pytest.raises(ValueError):
        generate_excitation(spec, 0.01, 1.0, 0)


def test_kanai_tajimi_periodogram_matches_target():
    spec = ExcitationSpec(kind="spectrum-with-random-phase", band=(0.5, 10.0),
                          psd_params={"intensity": 0.3, "omega_g": 15.0, "zeta_g": 0.6})
    dt, T = 0.01, 20.0
    n = int(round(T / dt))
    acc = np.zeros(n // 2 + 1)
    for seed in range(200):
        x = generate_excitation(spec, dt, T, seed)[:-1, 0]
        acc += 2 * np.abs(np.fft.rfft(x)) ** 2 * dt / n
    est = acc / 200
    f = np.fft.rfftfreq(n, dt)
    band = (f > 0.5) & (f < 10.0)
    target = excitation_psd(spec, f)
    assert np.max(np.abs(est[band] / target[band] - 1)) < 0.15


def test_harmonic_excitation():
    spec = ExcitationSpec(kind="harmonic", psd_params={"amplitude": 2.0, "frequency": 0.5, "phase": 0.3})
    x = generate_excitation(spec, 0.1, 1.0, 0)
    np.testing.assert_allclose(x[:, 0], 2.0 * np.sin(np.pi * np.arange(11) * 0.1 + 0.3))


def test_residual_zero_state():
    s = build_system(toy_system(), toy_params())
    sample = sample_parameters(toy_space(), 0)
    sample.f[:] = 0.0
    z = np.zeros((sample.f.shape[0], 11))
    np.testing.assert_array_equal(residual(s, sample, z, z, z), 0.0)


def test_residual_exact_free_vibration():
    space = ParameterSpace(params=[ParamSpec(name="m", dist="fixed", value=2.0),
                                   ParamSpec(name="k", dist="fixed", value=18.0),
                                   ParamSpec(name="c", dist="fixed", value=0.0)],
                           excitation=ExcitationSpec(psd_params={"intensity": 0.0}, band=(0.0, 1.0)),
                           dt=0.01, T=2.0)
    sample = sample_parameters(space, 0)
    s = build_system(sdof_system(), sample.params)
    t = space.time_grid()[:, None]
    w = 3.0
    r = residual(s, sample, np.cos(w * t), -w * np.sin(w * t), -(w**2) * np.cos(w * t))
    np.testing.assert_allclose(r, 0.0, atol=1e-12)


def test_residual_shape_mismatch():
    s = build_system(toy_system(), toy_params())
    sample = sample_parameters(toy_space(), 0)
    with pytest.raises(ValueError):
        residual(s, sample, np.zeros((3, 11)), np.zeros((3, 11)), np.zeros((3, 11)))


def test_oracle_residual_is_small():
    space = toy_space()
    sample = sample_parameters(space, 4)
    s = build_system(toy_system(), sample.params)
    tr = integrate_newmark(s, sample.f, space.dt, space.T)
    r = residual(s, sample, tr.u, tr.du, tr.ddu)
    # Newmark states satisfy the equation exactly at every step
    assert np.max(np.abs(r)) < 1e-10 * max(1.0, np.max(np.abs(sample.f)))


@given(a=st.floats(-3, 3), b=st.floats(-3, 3), seed=st.integers(0, 2**31))
def test_residual_is_linear(a, b, seed):
    r = np.random.default_rng(seed)
    s = build_system(toy_system(), toy_params())
    sample = sample_parameters(toy_space(), 1)
    shape = (sample.f.shape[0], 11)
    x1 = [r.normal(size=shape) for _ in range(3)]
    x2 = [r.normal(size=shape) for _ in range(3)]
    forced = residual(s, sample, *[np.zeros(shape)] * 3)
    lhs = residual(s, sample, *[a * p + b * q for p, q in zip(x1, x2)]) - forced
    rhs = a * (residual(s, sample, *x1) - forced) + b * (residual(s, sample, *x2) - forced)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_excitation_csv(tmp_path):
    write_excitation_csv(tmp_path / "f.csv", np.array([[1.0, 2.0], [3.0, 4.0]]), 0.5)
    assert (tmp_path / "f.csv").read_text().splitlines() == ["time,ch0,ch1", "0.0,1.0,2.0", "0.5,3.0,4.0"]
