"""Estimators shared by the experiments: k-statistics, KS tests, empirical characteristic
functions and percentile bootstrap intervals."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from bbmlab.errors import InsufficientSamples

N_BOOT = 1000


def _as_sample(samples, minimum: int) -> np.ndarray:
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < minimum:
        raise InsufficientSamples(f"need at least {minimum} samples, got {x.size}")
    return x


def k_statistics(samples, order: int = 4) -> np.ndarray:
    """Unbiased cumulant estimators k1..k_order (order <= 4)."""
    if not 1 <= order <= 4:
        raise ValueError("order must be between 1 and 4")
    x = _as_sample(samples, 10)
    n = x.size
    d = x - x.mean()
    # power sums of centred data keep the estimators stable for large means
    s2, s3, s4 = (np.sum(d**p) for p in (2, 3, 4))
    k1 = x.mean()
    k2 = s2 / (n - 1)
    k3 = n * s3 / ((n - 1) * (n - 2))
    k4 = n * ((n + 1) * s4 - 3 * (n - 1) * s2 * s2 / n) / ((n - 1) * (n - 2) * (n - 3))
    return np.array([k1, k2, k3, k4][:order])


def bootstrap(samples, statistic, n_boot: int = N_BOOT, seed: int = 0, level: float = 0.95):
    """Percentile bootstrap interval of ``statistic`` (a function of a 1-d array)."""
    x = np.asarray(samples, dtype=float).ravel()
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(0xB007,)))
    vals = np.empty(n_boot)
    for b in range(n_boot):
        vals[b] = statistic(x[rng.integers(0, x.size, x.size)])
    lo, hi = np.quantile(vals, [(1 - level) / 2, (1 + level) / 2])
    return float(lo), float(hi)


def ks_test(samples, cdf) -> tuple[float, float]:
    """One-sample Kolmogorov-Smirnov test against a continuous ``cdf`` (callable)."""
    x = _as_sample(samples, 1)
    res = sps.kstest(x, cdf, method="asymp")
    return float(res.statistic), float(res.pvalue)


def ks_2samp(a, b) -> tuple[float, float]:
    a = _as_sample(a, 1)
    b = _as_sample(b, 1)
    res = sps.ks_2samp(a, b, method="asymp")
    return float(res.statistic), float(res.pvalue)


def ecf(samples, lambdas) -> tuple[np.ndarray, float]:
    """Empirical characteristic function on ``lambdas`` and its CI radius 3/sqrt(n)."""
    x = _as_sample(samples, 1)
    lam = np.atleast_1d(np.asarray(lambdas, dtype=float))
    vals = np.array([np.mean(np.exp(1j * l * x)) for l in lam])
    return vals, 3.0 / math.sqrt(x.size)


def standard_error(samples) -> float:
    x = _as_sample(samples, 2)
    return float(x.std(ddof=1) / math.sqrt(x.size))


def wilson_interval(k: int, n: int, z: float = 1.96) -> tuple[float, float]:
    if n <= 0:
        raise InsufficientSamples("empty sample")
    p = k / n
    den = 1 + z * z / n
    c = (p + z * z / (2 * n)) / den
    r = z * math.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / den
    return c - r, c + r


@dataclass
class SampleSummary:
    n: int
    mean: float
    k: np.ndarray
    ci: dict = field(default_factory=dict)
    ecdf: object = None

    @classmethod
    def of(cls, samples, n_boot: int = N_BOOT, seed: int = 0) -> "SampleSummary":
        x = _as_sample(samples, 10)
        k = k_statistics(x, 4)
        ci = {f"k{j + 1}": bootstrap(x, lambda s, j=j: k_statistics(s, 4)[j], n_boot, seed) for j in range(4)}
        return cls(n=x.size, mean=float(x.mean()), k=k, ci=ci, ecdf=sps.ecdf(x).cdf)
