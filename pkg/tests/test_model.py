import math

import numpy as np
import pytest
from scipy.integrate import quad

from smclab import (
    InvalidArgument,
    InvalidModel,
    build_custom_model,
    mutate,
    sample_initial,
    section7_constants,
    section7_pf1,
    section7_pf1_sq,
    uniform_shift_kernel,
    weighted_reference_mean,
)

E = math.e


def test_sample_initial_support_and_errors(model, rng):
    ps = sample_initial(model, 3, rng)
    assert ps.size == 3
    assert np.all((ps.positions >= 0.0) & (ps.positions < 1.0))
    assert ps.generation == 0
    assert np.allclose(ps.potentials, np.exp(ps.positions))
    with pytest.raises(InvalidArgument):
        sample_initial(model, 0, rng)


def test_sample_initial_clt_bands(model, rng):
    m = 100_000
    ps = sample_initial(model, m, rng)
    # mean position: sd = 1/sqrt(12M)
    assert abs(ps.positions.mean() - 0.5) < 0.01
    # mean potential: eta(g0) = e - 1, 4-sigma band
    sd_g = math.sqrt((E**2 - 1) / 2 - (E - 1) ** 2)
    assert abs(ps.potentials.mean() - (E - 1)) < 4 * sd_g / math.sqrt(m)
    # mean of f * g0 = e^{2x}
    fg = np.exp(2 * ps.positions)
    sd_fg = math.sqrt((E**4 - 1) / 4 - ((E**2 - 1) / 2) ** 2)
    assert abs(fg.mean() - (E**2 - 1) / 2) < 4 * sd_fg / math.sqrt(m)


def test_mutate_support_and_mean(model, rng):
    ps = sample_initial(model, 10, rng)
    frozen = ps.positions.copy()
    moved = mutate(ps, None, rng)
    assert moved.generation == 1
    assert np.all(moved.positions >= frozen) and np.all(moved.positions <= frozen + 1.0)
    # all particles at 0: mutated mean ~ 0.5
    from smclab.model import ParticleSystem
    at_zero = ParticleSystem(model=model, positions=np.zeros(100_000),
                             potentials=np.ones(100_000), generation=0)
    moved = mutate(at_zero, None, rng)
    assert abs(moved.positions.mean() - 0.5) < 0.01


def test_kernel_is_probability_kernel():
    k = uniform_shift_kernel(0.0, 1.0)
    assert k.integrate(lambda y: np.ones_like(y), 0.37) == pytest.approx(1.0, abs=1e-12)


def test_kernel_integrate_matches_monte_carlo(rng):
    k = uniform_shift_kernel(0.0, 1.0)
    x = 0.3
    exact = k.integrate(np.exp, x)
    draws = np.exp(k.sample(np.full(100_000, x), rng))
    se = draws.std() / math.sqrt(len(draws))
    assert abs(exact - draws.mean()) < 5 * se
    # closed form for comparison
    assert exact == pytest.approx(math.exp(x) * (E - 1), rel=1e-12)


def test_potential_bounds_hold_on_samples(model, rng):
    ps = sample_initial(model, 50_000, rng)
    spec0 = model.potential(0)
    assert ps.potentials.min() >= spec0.lower
    assert ps.potentials.max() <= spec0.upper
    moved = mutate(ps, None, rng)
    spec1 = model.potential(1)
    assert spec1.ratio() == pytest.approx(E**2, rel=1e-12)
    assert moved.potentials.min() >= spec1.lower
    assert moved.potentials.max() <= spec1.upper


def test_reference_constants_exact_values():
    c0 = section7_constants(0)
    assert c0["g_mean"] == pytest.approx(E - 1, rel=1e-15)
    assert c0["gf_mean"] == pytest.approx((E**2 - 1) / 2, rel=1e-15)
    c1 = section7_constants(1)
    assert c1["g_mean"] == pytest.approx((E**2 - 1) / 2, rel=1e-15)
    assert c1["gf_mean"] == pytest.approx((E**3 - 1) * (E + 1) / 6, rel=1e-15)
    assert section7_constants(2)["g_mean"] == pytest.approx((E**3 - 1) / 3, rel=1e-15)
    with pytest.raises(NotImplementedError):
        section7_constants(3)


def test_sigma1_constant_against_quadrature_oracle():
    # independent oracle: integrate the centered weighted test function
    c0 = section7_constants(0)

    def integrand(x):
        gt = math.exp(x) / c0["g_mean"]
        return (gt * (math.exp(x) - c0["selected_f_mean"])) ** 2

    oracle, _ = quad(integrand, 0.0, 1.0, epsabs=1e-13, epsrel=1e-13)
    assert c0["sigma1_sq"] == pytest.approx(oracle, abs=1e-10)
    assert c0["sigma1_sq"] == pytest.approx(0.2662, abs=5e-5)


def test_mutation_variance_constant_against_quadrature_oracle():
    c1 = section7_constants(1)

    def integrand(x):
        return math.exp(x) * (section7_pf1_sq(x) - section7_pf1(x) ** 2)

    oracle, _ = quad(integrand, 0.0, 1.0, epsabs=1e-11, epsrel=1e-11)
    assert c1["mutation_variance"] == pytest.approx(oracle, rel=1e-9)


def test_pf1_closed_forms_against_quadrature():
    c1 = section7_constants(1)

    def f1(y):
        return np.exp(y) * (c1["g_mean"] * np.exp(y) - c1["gf_mean"])

    for x0 in (0.0, 0.37, 0.9):
        num1, _ = quad(f1, x0, x0 + 1.0)
        num2, _ = quad(lambda y: f1(y) ** 2, x0, x0 + 1.0)
        assert section7_pf1(x0) == pytest.approx(num1, rel=1e-10)
        assert section7_pf1_sq(x0) == pytest.approx(num2, rel=1e-10)


def test_weighted_reference_mean_matches_constants(model):
    for step in (0, 1, 2):
        got = weighted_reference_mean(model, step, np.exp)
        assert got == pytest.approx(section7_constants(step)["g_mean"], rel=1e-10)
    # selected-population limit of f at step 1: gf/g at step 0
    got = weighted_reference_mean(model, 1, np.exp)
    assert got == pytest.approx((E**2 - 1) / 2, rel=1e-10)


def test_custom_model_bounds_and_validation():
    spec = {
        "name": "affine",
        "initial": {"law": "uniform", "lo": 0.0, "hi": 1.0},
        "kernel": {"kind": "uniform_shift", "lo": 0.0, "hi": 1.0},
        "g": {"form": "poly", "coeffs": [1.0, 0.5]},
        "f": {"form": "poly", "coeffs": [0.0, 1.0]},
    }
    m = build_custom_model(spec)
    p1 = m.potential(1)
    assert (p1.lower, p1.upper) == (1.0, 2.0)
    assert p1.support == (0.0, 2.0)

    bad = dict(spec, g={"form": "poly", "coeffs": [0.5, -1.0]})  # hits zero on the support
    m_bad = build_custom_model(bad)
    with pytest.raises(InvalidModel):
        m_bad.potential(0)
    with pytest.raises(InvalidModel):
        build_custom_model(dict(spec, g={"form": "sine"}))
    with pytest.raises(InvalidModel):
        build_custom_model(dict(spec, initial={"law": "normal"}))
