import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bbmlab.barrier import (TAU_TRIGGER, Z_TRIGGER, BarrierPath, breakout_condition, breakout_flags, delta_shift,
                            detect_breakout, epoch_increments, estimate_pB, excursion_values, initial_population,
                            jump_sizes, rescale_path, run_epochs, time_scale)
from bbmlab.engine import make_rng, population_from, weight
from bbmlab.errors import DomainError, InsufficientSamples
from bbmlab.params import desk_params

warnings.filterwarnings("ignore", message="regime")


@pytest.fixture(scope="module")
def desk():
    return desk_params()


def test_delta_examples(desk):
    k = desk.kappa * math.exp(desk.A)
    assert delta_shift(k, desk) == 0.0
    assert delta_shift(k * math.exp(desk.c0), desk) == pytest.approx(1.0, rel=1e-12)
    assert delta_shift(k / 2, desk) == 0.0
    with pytest.raises(DomainError):
        delta_shift(-1.0, desk)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1e6), st.floats(0, 1e6))
def test_delta_monotone_nonnegative(z1, z2):
    p = desk_params()
    lo, hi = sorted((z1, z2))
    assert 0.0 <= delta_shift(lo, p) <= delta_shift(hi, p)


def test_breakout_condition(desk):
    assert breakout_condition(0.0, 0.0, desk) is None
    assert breakout_condition(0.0, desk.zeta + 1e-6, desk) == TAU_TRIGGER
    assert breakout_condition(desk.breakout_threshold * 1.01, 0.0, desk) == Z_TRIGGER
    assert breakout_condition(desk.breakout_threshold, desk.zeta, desk) is None


def test_breakout_flags_nested_in_threshold(desk):
    low = breakout_flags(desk, 400, seed=3, threshold=0.5)
    high = breakout_flags(desk, 400, seed=3, threshold=5.0)
    assert np.all(high <= low)
    assert low.sum() > high.sum()


def test_zero_threshold_catches_every_return(desk):
    z, tmax, tr = excursion_values(desk, 300, seed=9)
    flags = breakout_flags(desk, 300, seed=9, threshold=0.0)
    assert np.array_equal(flags, (z > 0) | tr | (tmax > desk.zeta))


def test_excursion_values_nonnegative(desk):
    z, tmax, tr = excursion_values(desk, 200, seed=2)
    assert np.all(z >= 0) and np.all(tmax >= 0)


def test_estimate_pB_needs_replicas(desk):
    with pytest.raises(InsufficientSamples):
        estimate_pB(desk, 100, seed=0)


def test_detect_breakout_rejects_unknown_hit(desk):
    s = population_from(desk, [1.0], make_rng(0))
    with pytest.raises(DomainError):
        detect_breakout(0, s, desk)


def test_initial_population_in_band(desk):
    x = initial_population(desk, make_rng(1))
    z = float(np.sum(weight(x, desk.a, desk.mu)))
    assert abs(z * math.exp(-desk.A) - desk.kappa) <= desk.epsilon**1.5
    assert np.all((x > 0) & (x < desk.a))


def test_zero_epochs(desk):
    path = run_epochs(desk, initial_population(desk, make_rng(1)), 0, make_rng(2))
    assert path.breakpoints == [(0.0, 0.0)] and path.epochs == []


@pytest.fixture(scope="module")
def one_epoch():
    p = desk_params(epsilon=1e-3)
    rng = make_rng(5)
    return p, run_epochs(p, initial_population(p, rng), 1, rng, dt=p.a**2 / 100)


def test_single_epoch_reaches_shift(one_epoch):
    p, path = one_epoch
    ep = path.epochs[0]
    assert ep.breakout is not None and ep.delta >= 0
    assert ep.T_n >= ep.breakout.T + p.a**2.5 - 1e-9
    assert ep.X_end == pytest.approx(ep.delta, abs=1e-8)
    assert path.value(ep.T_n + 1e6) == pytest.approx(ep.X_end, abs=1e-12)


def test_barrier_is_nondecreasing(one_epoch):
    p, path = one_epoch
    xs = path.values(np.linspace(0, path.horizon, 400))
    assert np.all(np.diff(xs) >= -1e-12)
    assert np.array_equal(jump_sizes(path), np.array([path.epochs[0].delta]))


def test_same_seed_same_path():
    p = desk_params(epsilon=1e-3)
    paths = []
    for _ in range(2):
        rng = make_rng(5)
        paths.append(run_epochs(p, initial_population(p, rng), 1, rng, dt=p.a**2 / 100))
    assert paths[0].breakpoints == paths[1].breakpoints


def test_rescaled_path_without_breakouts(desk):
    path = BarrierPath(desk.a, desk.c0, horizon=3 * time_scale(desk))
    t, raw, x_raw, x_res, j_res = rescale_path(path, desk, n_points=31)
    assert np.all(x_raw == 0.0)
    assert np.allclose(x_res, -desk.A * t) and np.allclose(j_res, -desk.A * t)


def test_increments_need_a_window(desk):
    with pytest.raises(InsufficientSamples):
        epoch_increments(BarrierPath(desk.a, desk.c0, horizon=1.0), desk, 1.0)
