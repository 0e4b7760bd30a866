"""Branching Brownian motion with selection: whenever more than N particles are alive, the
left-most ones are removed. Front position and its fluctuations are measured on a grid."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit

from bbmlab.errors import DomainError, ExtinctionError, InsufficientHorizon
from bbmlab.params import ReproductionLaw
from bbmlab.stats import k_statistics

STATISTICS = ("barycenter", "median", "rightmost")
STAT_CODES = {name: i for i, name in enumerate(STATISTICS)}


@dataclass(frozen=True)
class FrontSeries:
    times: np.ndarray
    front_positions: np.ndarray
    counts: np.ndarray
    N: int
    statistic: str = "barycenter"


@njit(cache=True)
def _trim(x, ids, n, N):
    """Remove the n - N smallest positions, ties broken by smaller id first. Returns new n."""
    excess = n - N
    if excess <= 0:
        return n
    thr = np.partition(x[:n].copy(), excess - 1)[excess - 1]
    below = 0
    for i in range(n):
        if x[i] < thr:
            below += 1
    ties_to_drop = excess - below
    # among particles sitting exactly at thr, drop the ones with the smallest ids
    tie_ids = np.empty(n, dtype=np.int64)
    nt = 0
    for i in range(n):
        if x[i] == thr:
            tie_ids[nt] = ids[i]
            nt += 1
    cut = np.sort(tie_ids[:nt])[ties_to_drop - 1] if ties_to_drop > 0 else -1
    j = 0
    for i in range(n):
        if x[i] < thr or (x[i] == thr and ids[i] <= cut):
            continue
        x[j] = x[i]
        ids[j] = ids[i]
        j += 1
    return j


@njit(cache=True)
def _front(x, n, code):
    if code == 0:
        return x[:n].mean()
    if code == 1:
        return np.median(x[:n])
    return x[:n].max()


@njit(cache=True)
def _run(rng, x, clocks, ids, n, N, cdf, ks, dt, nsteps, every, code, fronts, counts):
    """Exact branching clocks and Gaussian motion; selection applied at every substep end."""
    next_id = n
    cap = x.shape[0]
    kmax = ks[ks.shape[0] - 1]
    for k in range(nsteps):
        i = 0
        offs = np.zeros(cap)
        while i < n:
            s = offs[i]
            while True:
                rem = dt - s
                c = clocks[i]
                if c >= rem:
                    x[i] += math.sqrt(rem) * rng.standard_normal()
                    clocks[i] = c - rem
                    break
                x[i] += math.sqrt(c) * rng.standard_normal()
                s += c
                u = rng.random()
                kk = ks[cdf.shape[0] - 1]
                for j in range(cdf.shape[0]):
                    if u < cdf[j]:
                        kk = ks[j]
                        break
                if kk == 0:
                    # swap in the last particle; it has not moved yet in this substep only if beyond i
                    n -= 1
                    x[i] = x[n]
                    clocks[i] = clocks[n]
                    ids[i] = ids[n]
                    offs[i] = offs[n]
                    i -= 1
                    break
                if n + kmax > cap:
                    return -1, n
                clocks[i] = rng.standard_exponential()
                for _ in range(kk - 1):
                    x[n] = x[i]
                    clocks[n] = rng.standard_exponential()
                    ids[n] = next_id
                    offs[n] = s
                    next_id += 1
                    n += 1
            i += 1
        if n == 0:
            return k, 0
        n = _trim(x, ids, n, N)
        if (k + 1) % every == 0:
            r = (k + 1) // every - 1
            fronts[r] = _front(x, n, code)
            counts[r] = n
    return nsteps, n


def simulate_nbbm(N: int, law: ReproductionLaw, horizon: float, rng: np.random.Generator, dt: float = 0.01,
                  record_every: float = 1.0, statistic: str = "barycenter", x0: float = 0.0) -> FrontSeries:
    """N-BBM started from N particles at ``x0``; the front is recorded every ``record_every``."""
    if N < 1:
        raise DomainError(f"N must be at least 1, got {N}")
    if statistic not in STAT_CODES:
        raise DomainError(f"unknown front statistic {statistic!r}")
    every = max(1, int(round(record_every / dt)))
    nsteps = int(round(horizon / dt))
    nrec = nsteps // every
    cap = 2 * N + 64 * law.max_offspring + 64
    x = np.full(cap, float(x0))
    clocks = rng.standard_exponential(cap)
    ids = np.arange(cap, dtype=np.int64)
    fronts = np.empty(nrec)
    counts = np.empty(nrec, dtype=np.int64)
    done, n = _run(rng, x, clocks, ids, N, N, law.cdf, law.ks, float(dt), nsteps, every,
                   STAT_CODES[statistic], fronts, counts)
    if done < 0:
        raise DomainError("population overflowed the buffer within one substep; use a smaller dt")
    if n == 0:
        raise ExtinctionError(f"N-BBM died out after {done * dt:.4g} time units")
    times = dt * every * np.arange(1, nrec + 1)
    return FrontSeries(times, fronts, counts, int(N), statistic)


def default_window(N: int) -> float:
    return max(10.0 * math.log(N) ** 3, 100.0)


def front_speed(series: FrontSeries, burn_in: float, batches: int = 20):
    """Least-squares slope of the post-burn-in front and a batch-means standard error."""
    keep = series.times > burn_in
    t, f = series.times[keep], series.front_positions[keep]
    if t.size < 2 * batches:
        raise InsufficientHorizon("too few front records after the burn-in")
    v = float(np.polyfit(t, f, 1)[0])
    parts = np.array_split(np.arange(t.size), batches)
    vs = np.array([np.polyfit(t[p], f[p], 1)[0] for p in parts])
    return v, float(vs.std(ddof=1) / math.sqrt(batches))


def speed_and_cumulants(series: FrontSeries, burn_in: float, window: float | None = None) -> dict:
    """Speed and per-unit-time cumulants of front increments over disjoint windows."""
    window = default_window(series.N) if window is None else float(window)
    keep = series.times > burn_in
    t, f = series.times[keep], series.front_positions[keep]
    if t.size < 2 or t[-1] - t[0] < 10 * window:
        raise InsufficientHorizon(f"need at least 10 windows of length {window:g} after the burn-in")
    v, se = front_speed(series, burn_in)
    edges = t[0] + window * np.arange(int((t[-1] - t[0]) // window) + 1)
    vals = np.interp(edges, t, f)
    inc = np.diff(vals)
    k = k_statistics(inc, 4) / window
    return {"N": series.N, "v_hat": v, "v_se": se, "k2": float(k[1]), "k3": float(k[2]), "k4": float(k[3]),
            "windows": int(inc.size), "window": window}
