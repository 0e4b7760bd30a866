import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbmlab.errors import DomainError
from bbmlab.levy import (LevyScheme, LevySpec, analytic_cumulant, compensator, cumulant_fn, cumulant_quadrature,
                         sample_increments, simulate_levy, small_jump_variance)
from bbmlab.stats import k_statistics, ks_test

SPEC = LevySpec()


def test_second_and_third_cumulants():
    # c0^{1-n} n! zeta(n) with c0 = sqrt 2
    k2 = 2 * (math.pi**2 / 6) / math.sqrt(2)
    k3 = 6 * 1.2020569031595942 / 2
    assert cumulant_quadrature(SPEC, 2) == pytest.approx(k2, rel=1e-9)
    assert cumulant_quadrature(SPEC, 3) == pytest.approx(k3, rel=1e-9)
    assert analytic_cumulant(SPEC, 2) == pytest.approx(k2, rel=1e-14)


@pytest.mark.parametrize("n", [4, 5, 6])
def test_higher_cumulants_two_routes(n):
    assert cumulant_quadrature(SPEC, n) == pytest.approx(analytic_cumulant(SPEC, n), rel=1e-8)


def test_cumulant_fn_at_zero():
    assert cumulant_fn(SPEC, 0.0) == 0


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 3.0))
def test_cumulant_fn_conjugate_symmetry(lam):
    assert abs(cumulant_fn(SPEC, -lam) - cumulant_fn(SPEC, lam).conjugate()) <= 1e-10


def test_cumulant_fn_curvature_is_variance():
    # -K''(0) = second cumulant
    h = 1e-2
    second = -(cumulant_fn(SPEC, h) + cumulant_fn(SPEC, -h)).real / h**2
    assert second == pytest.approx(analytic_cumulant(SPEC, 2), rel=1e-3)


def test_linear_coefficient_moves_drift():
    shifted = LevySpec(kappa=math.e, drift_const=0.5)
    assert (cumulant_fn(shifted, 0.7) - cumulant_fn(SPEC, 0.7)).imag == pytest.approx(0.7 * 1.5, rel=1e-10)


def test_tail_measure():
    assert SPEC.tail(1.0) == pytest.approx(1 / math.expm1(math.sqrt(2)))
    assert SPEC.tail(0.0) == math.inf
    with pytest.raises(DomainError):
        LevySpec(c0=-1.0)


def test_jump_sizes_follow_normalised_tail():
    sch = LevyScheme.build(SPEC, 0.05)
    rng = np.random.default_rng(8)
    jumps = sch.jump_size(1.0 - rng.random(50_000))
    assert jumps.min() >= 0.05
    cdf = lambda x: 1.0 - np.array([SPEC.tail(v) for v in np.atleast_1d(x)]) / SPEC.tail(0.05)
    assert ks_test(jumps, cdf)[1] > 1e-3


def test_scheme_parts_are_consistent():
    delta = 0.1
    sch = LevyScheme.build(SPEC, delta)
    assert sch.rate == pytest.approx(SPEC.c0 * SPEC.tail(delta))
    # the small-jump variance and the large-jump second moment add up to the second cumulant
    from scipy import integrate

    big = SPEC.c0 * integrate.quad(lambda x: x * x * float(SPEC.density(x)), delta, 60, limit=200)[0]
    assert small_jump_variance(SPEC, delta) + big == pytest.approx(analytic_cumulant(SPEC, 2), rel=1e-8)
    assert compensator(SPEC, 1.5) == 0.0
    with pytest.raises(DomainError):
        LevyScheme.build(SPEC, 0.0)


def test_increment_cumulants():
    x = sample_increments(SPEC, 1.0, 1e-3, 200_000, seed=3)
    k = k_statistics(x, 3)
    assert k[1] == pytest.approx(analytic_cumulant(SPEC, 2), rel=0.03)
    assert k[2] == pytest.approx(analytic_cumulant(SPEC, 3), rel=0.15)


def test_increments_deterministic():
    assert np.array_equal(sample_increments(SPEC, 1.0, 0.01, 100, seed=1),
                          sample_increments(SPEC, 1.0, 0.01, 100, seed=1))


def test_path_structure():
    path = simulate_levy(SPEC, 5.0, 0.05, np.random.default_rng(0), n_points=51)
    assert path.values[0] == 0.0 and path.times[-1] == 5.0
    assert np.all(np.diff(path.jump_times) >= 0) and np.all(path.jump_sizes >= 0.05)
    with pytest.raises(DomainError):
        simulate_levy(SPEC, 0.0, 0.05, np.random.default_rng(0))


def test_empirical_characteristic_function_matches_cumulant_fn():
    from bbmlab.stats import ecf

    lams = np.linspace(-5.0, 5.0, 41)
    x = sample_increments(SPEC, 1.0, 1e-3, 100_000, seed=11)
    vals, _ = ecf(x, lams)
    exact = np.exp([cumulant_fn(SPEC, lam) for lam in lams])
    assert np.max(np.abs(vals - exact)) <= 0.02


@pytest.mark.parametrize("y", [0.1, 0.5, 1.0, 2.0])
def test_tail_is_integral_of_density(y):
    from scipy import integrate

    val = integrate.quad(lambda x: float(SPEC.density(x)), y, np.inf, epsabs=1e-13, epsrel=1e-12)[0]
    assert val == pytest.approx(SPEC.tail(y), rel=1e-8)


def test_small_jump_cutoff_does_not_move_variance():
    a = sample_increments(SPEC, 1.0, 2e-3, 100_000, seed=12)
    b = sample_increments(SPEC, 1.0, 1e-3, 100_000, seed=13)
    ka, kb = k_statistics(a, 2)[1], k_statistics(b, 2)[1]
    # sampling sd of k2 for these heavy-ish tails is about 1% at this size
    assert abs(ka - kb) <= 0.05 * analytic_cumulant(SPEC, 2)
