import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats.qmc import discrepancy

from pinocde.system import ExcitationSpec, ParameterSpace, ParamSpec
from pinocde.toy import sdof_space, sdof_system, toy_system
from pinocde.uq import (PDFGrid, RepresentativePointSet, compare_pdf, damage_probability, evolve_pdf,
                        hat_density, korobov_lattice, load_pdf_grid, mc_propagate, oracle_provider,
                        parse_quantity, pdf_estimate, run_pdem, save_pdf_grid, select_representative_points,
                        uniform_grid)
from pinocde.uq.pdem import pdem_step


def unit_space(d, dt=0.01, T=1.0):
    return ParameterSpace(params=[ParamSpec(name=f"a{i}", lo=0.0, hi=1.0) for i in range(d)],
                          excitation=ExcitationSpec(psd_params={"intensity": 0.0}, band=(0.0, 1.0)),
                          dt=dt, T=T)


def total_variation(p):
    return np.abs(np.diff(p, axis=-1)).sum(axis=-1)


# -- representative points ----------------------------------------------------------

def test_single_point_at_medians():
    space = sdof_space()
    pts = select_representative_points(space, 1)
    np.testing.assert_allclose(pts.points[0], [p.median for p in space.params])
    assert pts.weights.tolist() == [1.0]


def test_lattice_beats_random_sets():
    pts = select_representative_points(unit_space(2), 144)
    rng = np.random.default_rng(0)
    random_mean = np.mean([discrepancy(rng.random((144, 2)), method="L2-star") for _ in range(100)])
    assert discrepancy(pts.unit, method="L2-star") < random_mean
    assert math.gcd(pts.generator, 144) == 1


def test_points_map_through_inverse_cdf():
    space = unit_space(3)
    pts = select_representative_points(space, 17)
    np.testing.assert_allclose(pts.points, pts.unit)
    np.testing.assert_allclose(pts.weights.sum(), 1.0)
    assert np.all((pts.unit > 0) & (pts.unit < 1))


def test_korobov_lattice_projections_are_uniform():
    lat = korobov_lattice(13, 3, 5)
    for j in range(3):
        np.testing.assert_allclose(np.sort(lat[:, j]), (np.arange(13) + 0.5) / 13)


# -- convection solver ----------------------------------------------------------------

def test_zero_velocity_is_stationary():
    x = uniform_grid(-1, 1, 41)
    g = evolve_pdf(np.zeros(200), x, 0.01, x0=0.013)
    np.testing.assert_allclose(g.p, np.broadcast_to(g.p[0], g.p.shape), atol=1e-12)


def test_hat_keeps_mass_and_mean():
    x = uniform_grid(-1, 1, 41)
    p = hat_density(x, [0.013, -0.31])
    np.testing.assert_allclose(p.sum(axis=1) * 0.05, 1.0, rtol=1e-14)
    np.testing.assert_allclose((p * x).sum(axis=1) * 0.05, [0.013, -0.31], atol=1e-14)
    with pytest.raises(ValueError):
        hat_density(x, [0.99])


def _translation_error(n_x, sigma, v=1.5, T=4.0, dt=0.01):
    x = uniform_grid(0, 10, n_x)
    gauss = lambda c: np.exp(-0.5 * ((x - c) / sigma) ** 2) / (sigma * math.sqrt(2 * math.pi))  # noqa: E731
    g = evolve_pdf(np.full(int(round(T / dt)) + 1, v), x, dt, p0=gauss(2.0))
    return np.abs(g.p[-1] - gauss(2.0 + v * T)).sum() * (x[1] - x[0])


def test_constant_velocity_translation():
    assert _translation_error(401, 0.5) < 0.02


def test_translation_error_shrinks_with_resolution():
    coarse, fine = _translation_error(201, 0.5), _translation_error(401, 0.5)
    assert fine < coarse / 2.5


def test_mass_conserved_over_1000_steps():
    x = uniform_grid(-3, 3, 121)
    t = np.arange(1001) * 0.01
    g = evolve_pdf(-0.8 * np.sin(2 * t), x, 0.01, x0=0.4, n_sub=1)
    assert np.max(np.abs(g.mass() - 1)) < 1e-3


@given(v=st.floats(0.05, 2.0), sign=st.sampled_from([-1.0, 1.0]), seed=st.integers(0, 1000))
def test_total_variation_never_increases(v, sign, seed):
    x = uniform_grid(-5, 5, 81)
    rng = np.random.default_rng(seed)
    p = rng.random(81) * (np.abs(x) < 3)
    g = evolve_pdf(np.full(60, sign * v), x, 0.05, p0=p)
    tv = total_variation(g.p)
    assert np.all(np.diff(tv) <= 1e-12)


@given(c=st.floats(-0.9, 0.9), seed=st.integers(0, 1000))
def test_single_step_is_tvd(c, seed):
    p = np.random.default_rng(seed).random((1, 40))
    p[:, :3] = p[:, -3:] = 0
    assert total_variation(pdem_step(p, np.array([c])))[0] <= total_variation(p)[0] + 1e-12


def test_sinusoid_support_follows_characteristic():
    A, w, dt = 1.0, 2 * math.pi, 0.005
    t = np.arange(401) * dt
    x = uniform_grid(-1.5, 1.5, 121)
    g = evolve_pdf(-A * w * np.sin(w * t), x, dt, x0=A)
    centre = (g.p * x).sum(axis=1) / g.p.sum(axis=1)
    assert np.max(np.abs(centre - A * np.cos(w * t))) < 2 * (x[1] - x[0])


def test_cfl_violation_and_bad_velocity():
    x = uniform_grid(-1, 1, 21)
    with pytest.raises(ValueError):
        evolve_pdf(np.full(10, 5.0), x, 0.1, n_sub=1)
    with pytest.raises(ValueError):
        evolve_pdf(np.array([0.0, np.nan]), x, 0.1)


def _analytic_provider(P, F):
    t = np.arange(F.shape[1]) * 0.01
    k = P[:, 1:2]
    w = np.sqrt(k)
    return 0.5 * np.cos(w * t) * 0.1, -0.5 * w * np.sin(w * t) * 0.1


def test_superposition_is_linear():
    space = sdof_space(T=1.0)
    x = uniform_grid(-0.1, 0.1, 41)
    pa = select_representative_points(space, 5)
    pb = select_representative_points(space, 3)
    union = RepresentativePointSet(points=np.vstack([pa.points, pb.points]),
                                   unit=np.vstack([pa.unit, pb.unit]), weights=np.full(8, 1 / 8),
                                   names=pa.names, generator=0)
    ga = run_pdem(_analytic_provider, space, 5, x, points=pa)
    gb = run_pdem(_analytic_provider, space, 3, x, points=pb)
    gu = run_pdem(_analytic_provider, space, 8, x, points=union, chunk=3)
    np.testing.assert_allclose(gu.p, 5 / 8 * ga.p + 3 / 8 * gb.p, atol=1e-12)


def test_range_check():
    space = sdof_space(T=1.0)
    x = uniform_grid(-0.02, 0.02, 11)
    with pytest.raises(ValueError):
        run_pdem(_analytic_provider, space, 4, x)
    g = run_pdem(_analytic_provider, space, 4, x, on_range="widen")
    assert g.x[0] < -0.05 and g.x[-1] > 0.05
    np.testing.assert_allclose(g.mass(), 1.0, atol=1e-3)


def test_pdf_grid_round_trip(tmp_path):
    g = PDFGrid(x=np.linspace(0, 1, 5), t=np.array([0.0, 0.1]), p=np.arange(10.0).reshape(2, 5))
    save_pdf_grid(g, tmp_path / "g")
    back = load_pdf_grid(tmp_path / "g")
    for a, b in ((g.x, back.x), (g.t, back.t), (g.p, back.p)):
        np.testing.assert_array_equal(a, b)


# -- Monte Carlo and statistics ----------------------------------------------------------

def test_histogram_of_identical_samples_is_a_spike():
    x = uniform_grid(-1, 1, 21)
    g = pdf_estimate(np.full((50, 1), 0.2), x)
    assert g.p[0, 12] == pytest.approx(1 / 0.1)
    assert np.count_nonzero(g.p[0]) == 1


@pytest.mark.parametrize("kde", [False, True])
def test_normal_samples_recover_normal_density(kde):
    x = uniform_grid(-5, 5, 101)
    s = np.random.default_rng(1).normal(size=(100_000, 1))
    g = pdf_estimate(s, x, kde=kde)
    exact = np.exp(-0.5 * x**2) / math.sqrt(2 * math.pi)
    assert np.abs(g.p[0] - exact).sum() * 0.1 < 0.02


def test_monte_carlo_shares_leading_samples():
    space = sdof_space(T=0.5)
    prov = oracle_provider(sdof_system(), space, parse_quantity(sdof_system(), "u:m.z"))
    a = mc_propagate(prov, space, 6, seed=3, chunk=4)
    b = mc_propagate(prov, space, 3, seed=3)
    np.testing.assert_array_equal(a.x[:3], b.x)
    assert a.x.shape == (6, space.n_t)


def test_damage_trivial_cases():
    x = np.array([[0.0, 1.0, 0.5], [0.0, 0.2, 0.1]])
    assert damage_probability(x, -1.0).dp[0] == 1.0
    assert damage_probability(x, 5.0).dp[0] == 0.0
    assert damage_probability(x, 0.5).dp[0] == 0.5
    f = damage_probability(x, 0.3, times=[0.2], dt=0.1)
    assert f.dp_star[0, 0] == 0.5
    assert damage_probability(-x, 0.5, absolute=True).dp[0] == 0.5
    with pytest.raises(ValueError):
        damage_probability(x, 0.3, times=[0.5], dt=0.1)


def test_compare_identical_and_disjoint():
    x = uniform_grid(0, 1, 11)
    a = PDFGrid(x=x, t=np.array([0.0]), p=hat_density(x, [0.3]))
    b = PDFGrid(x=x, t=np.array([0.0]), p=hat_density(x, [0.8]))
    assert compare_pdf(a, a)["max_l1"] == 0.0
    m = compare_pdf(a, b, times=[0.0], thresholds=[0.5])
    assert m["max_l1"] == pytest.approx(2.0)
    assert m["dp_star"][0]["diff"] == pytest.approx(-1.0)


def test_quantity_selectors():
    cfg = toy_system()
    q = parse_quantity(cfg, "u:a1.z")
    assert q.kind == "u" and q.vector[0] == 1.0 and q.vector.sum() == 1.0
    beam = parse_quantity(cfg, "du:beam@0.5")
    assert beam.kind == "du" and np.all(beam.vector[:6] == 0)
    with pytest.raises(ValueError):
        parse_quantity(cfg, "acc:a1.z")
