import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import stats as sps

from bbmlab.errors import InsufficientSamples
from bbmlab.stats import (SampleSummary, bootstrap, ecf, k_statistics, ks_2samp, ks_test, standard_error,
                          wilson_interval)


def _exact_kstats(x):
    # Fisher's k-statistics from power sums in exact rational arithmetic
    v = [Fraction(float(t)) for t in x]
    n = len(v)
    S = [None] + [sum(t**p for t in v) for p in (1, 2, 3, 4)]
    k1 = S[1] / n
    k2 = (n * S[2] - S[1] ** 2) / (n * (n - 1))
    k3 = (2 * S[1] ** 3 - 3 * n * S[1] * S[2] + n * n * S[3]) / (n * (n - 1) * (n - 2))
    k4 = (-6 * S[1] ** 4 + 12 * n * S[1] ** 2 * S[2] - 3 * n * (n - 1) * S[2] ** 2
          - 4 * n * (n + 1) * S[1] * S[3] + n * n * (n + 1) * S[4]) / (n * (n - 1) * (n - 2) * (n - 3))
    return [float(k) for k in (k1, k2, k3, k4)]


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.integers(10, 120), elements=st.floats(-1e3, 1e3)))
def test_k_statistics_match_exact_arithmetic(x):
    k = k_statistics(x, 4)
    spread = max(1.0, float(np.max(np.abs(x - x.mean()))))
    for j, exact in enumerate(_exact_kstats(x), start=1):
        assert k[j - 1] == pytest.approx(exact, rel=1e-8, abs=1e-10 * spread**j)


def test_k_statistics_agree_with_scipy():
    x = np.random.default_rng(9).gamma(2.0, size=500)
    assert np.allclose(k_statistics(x, 4), [sps.kstat(x, j) for j in range(1, 5)], rtol=1e-9)


def test_k_statistics_shift_invariant():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(1000)
    k, ks = k_statistics(x), k_statistics(x + 1e6)
    assert ks[0] == pytest.approx(k[0] + 1e6)
    assert np.allclose(ks[1:], k[1:], rtol=1e-6, atol=1e-9)


def test_k_statistics_normal_sample():
    rng = np.random.default_rng(1)
    k = k_statistics(rng.normal(2.0, 3.0, 400_000))
    assert k[0] == pytest.approx(2.0, abs=4 * 3 / math.sqrt(4e5))
    assert k[1] == pytest.approx(9.0, rel=0.01)
    # sampling variances 6 sigma^6 / n and 24 sigma^8 / n
    assert abs(k[2]) < 4 * math.sqrt(6 * 3.0**6 / 4e5) and abs(k[3]) < 4 * math.sqrt(24 * 3.0**8 / 4e5)


def test_k_statistics_poisson_sample():
    # every cumulant of Poisson(lam) equals lam
    rng = np.random.default_rng(2)
    k = k_statistics(rng.poisson(4.0, 1_000_000))
    assert np.allclose(k, 4.0, rtol=0.03)


def test_k_statistics_errors():
    with pytest.raises(InsufficientSamples):
        k_statistics([])
    with pytest.raises(ValueError):
        k_statistics(np.ones(20), 5)


def test_ks_pvalues_uniform_under_null():
    rng = np.random.default_rng(3)
    p = np.array([ks_test(rng.exponential(2.0, 500), sps.expon(scale=2.0).cdf)[1] for _ in range(300)])
    assert ks_test(p, sps.uniform.cdf)[1] > 1e-3
    assert ks_test(rng.exponential(1.0, 2000), sps.expon(scale=2.0).cdf)[1] < 1e-6


def test_two_sample_ks():
    rng = np.random.default_rng(4)
    assert ks_2samp(rng.normal(size=3000), rng.normal(size=3000))[1] > 1e-3
    assert ks_2samp(rng.normal(size=3000), rng.normal(0.3, size=3000))[1] < 1e-6


def test_ecf_of_normal():
    rng = np.random.default_rng(5)
    vals, radius = ecf(rng.standard_normal(100_000), [0.0, 0.5, 1.0])
    assert vals[0] == 1.0
    assert np.all(np.abs(vals - np.exp(-0.5 * np.array([0.0, 0.25, 1.0]))) <= radius)


def test_bootstrap_interval_covers_mean():
    rng = np.random.default_rng(6)
    x = rng.standard_normal(5000)
    lo, hi = bootstrap(x, np.mean, n_boot=500, seed=1)
    assert lo < x.mean() < hi
    assert hi - lo == pytest.approx(2 * 1.96 / math.sqrt(5000), rel=0.2)
    assert bootstrap(x, np.mean, n_boot=50, seed=1) == bootstrap(x, np.mean, n_boot=50, seed=1)


def test_wilson_interval():
    lo, hi = wilson_interval(50, 100)
    assert lo < 0.5 < hi and lo == pytest.approx(1 - hi)
    lo, hi = wilson_interval(0, 100)
    assert lo == pytest.approx(0.0, abs=1e-15) and hi > 0
    with pytest.raises(InsufficientSamples):
        wilson_interval(0, 0)


def test_standard_error_and_summary():
    x = np.arange(100, dtype=float)
    assert standard_error(x) == pytest.approx(x.std(ddof=1) / 10)
    s = SampleSummary.of(np.random.default_rng(7).standard_normal(500), n_boot=50)
    assert s.n == 500 and set(s.ci) == {"k1", "k2", "k3", "k4"}
    assert s.ecdf.evaluate(10.0) == 1.0
