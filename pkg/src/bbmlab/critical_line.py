"""BBM with drift -c0 absorbed at a fixed depth, and the traveling wave that describes it.

Started from one particle at 0, the number Z_y of particles absorbed at -y is a continuous-time
Galton-Watson process in y. Its generating function is E[s^Z_y] = psi(psi^{-1}(s) + y), where psi
is the monotone traveling wave of 1/2 psi'' - c0 psi' = psi - f(psi). The scaled count
W_y = c0 y exp(-c0 y) Z_y converges to a limit W with P(W > x) ~ 1/x.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import brentq, minimize_scalar

from bbmlab import _kernels as K
from bbmlab.engine import make_rng
from bbmlab.errors import DomainError, InsufficientSamples, NoConvergence
from bbmlab.params import ReproductionLaw, derive_constants
from bbmlab.stats import bootstrap

MAX_EVENTS = 100_000_000
MAX_STACK = 50_000_000
MIN_TAIL_SAMPLES = 10_000


@dataclass(frozen=True)
class AbsorptionRun:
    y: float
    Z_y: int
    W_y: float
    extinction_time: float
    discarded: bool = False


def scaled_count(Z, y: float, c0: float):
    """W_y = c0 y exp(-c0 y) Z_y."""
    return c0 * y * math.exp(-c0 * y) * np.asarray(Z, dtype=float)


def _speed(law: ReproductionLaw, c0: float | None) -> float:
    if c0 is not None:
        return float(c0)
    return derive_constants(law)[2]


def simulate_absorbed(y: float, law: ReproductionLaw, rng: np.random.Generator,
                      c0: float | None = None, max_events: int = MAX_EVENTS) -> AbsorptionRun:
    """One sample of the number of particles absorbed at -y.

    ``c0`` defaults to the critical speed of ``law``; pass it explicitly for laws without
    branching. A run hitting the event cap is returned with ``discarded=True``.
    """
    if not y > 0:
        raise DomainError(f"depth y must be positive, got {y}")
    c = _speed(law, c0)
    count, tlast, discarded = K.absorbed_run(rng, float(y), c, law.cdf, law.ks, max_events, MAX_STACK)
    return AbsorptionRun(float(y), int(count), float(scaled_count(count, y, c)), float(tlast), bool(discarded))


def sample_counts(y: float, law: ReproductionLaw, n: int, seed: int, start: int = 0,
                  c0: float | None = None, max_events: int = MAX_EVENTS):
    """Absorbed counts of replicas start..start+n-1; replica r uses stream r of ``seed``.

    Returns (counts, discarded flags). Results do not depend on how replicas are chunked.
    """
    if not y > 0:
        raise DomainError(f"depth y must be positive, got {y}")
    c = _speed(law, c0)
    cdf, ks = law.cdf, law.ks
    counts = np.empty(n, dtype=np.int64)
    flags = np.zeros(n, dtype=bool)
    for i in range(n):
        cnt, _, disc = K.absorbed_run(make_rng(seed, start + i), float(y), c, cdf, ks, max_events, MAX_STACK)
        counts[i] = cnt
        flags[i] = disc
    return counts, flags


def sample_W(y: float, law: ReproductionLaw, n: int, seed: int, start: int = 0, c0: float | None = None):
    """W_y samples of the retained replicas and the number of discarded ones."""
    counts, flags = sample_counts(y, law, n, seed, start, c0)
    return scaled_count(counts[~flags], y, _speed(law, c0)), int(flags.sum())


def _require(samples, minimum: int) -> np.ndarray:
    w = np.asarray(samples, dtype=float).ravel()
    if w.size < minimum:
        raise InsufficientSamples(f"need at least {minimum} samples, got {w.size}")
    return w


def tail_statistic(samples, x: float, n_boot: int = 200, seed: int = 0, minimum: int = MIN_TAIL_SAMPLES):
    """x * P(W > x) estimated from ``samples`` with a bootstrap interval: (value, (lo, hi))."""
    w = _require(samples, minimum)
    stat = lambda s: x * np.mean(s > x)
    return float(stat(w)), bootstrap(w, stat, n_boot, seed)


def truncated_mean_statistic(samples, x: float, minimum: int = MIN_TAIL_SAMPLES) -> float:
    """E[W 1(W <= x)] - log x from ``samples``."""
    w = _require(samples, minimum)
    return float(np.sum(w[w <= x]) / w.size - math.log(x))


def _reaction_near_one(law: ReproductionLaw):
    """v -> psi - f(psi) at psi = 1 - v, accurate for small v."""
    pairs = [(float(k), q) for k, q in zip(law.ks, law.qs)]

    def g(v):
        lv = math.log1p(-v) if v < 1.0 else -math.inf
        return -v - sum(q * math.expm1(k * lv) for k, q in pairs)

    return g


def _reaction_near_q(law: ReproductionLaw, qe: float):
    """chi -> psi - f(psi) at psi = q_ext + chi, expanded in chi to avoid cancellation."""
    coef = np.zeros(law.max_offspring + 1)
    for k, q in zip(law.ks, law.qs):
        for j in range(1, k + 1):
            coef[j] += q * math.comb(int(k), j) * qe ** (k - j)
    coef[1] -= 1.0

    def g(chi):
        return -float(np.polynomial.polynomial.polyval(chi, coef))

    return g


@dataclass
class TravelingWave:
    """Monotone wave psi with psi(-inf) = 1, psi(+inf) = q_ext and psi(0) = (1 + q_ext)/2.

    ``grid``/``psi`` tabulate the solution; calling the object evaluates psi anywhere, using
    the linearised tail beyond the integrated range. The right half is stored as psi - q_ext
    and the left half as 1 - psi so both ends keep full relative precision.
    """

    grid: np.ndarray
    psi: np.ndarray
    c0: float
    q_ext: float
    residual: float
    _right: object
    _left: object
    _x_start: float
    _x_end: float
    _tail_rate: float
    _tail_amp: float

    def _state(self, x):
        """(psi - q_ext, 1 - psi, psi') at x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        span = 1.0 - self.q_ext
        chi = np.zeros_like(x)
        v = np.zeros_like(x)
        d = np.zeros_like(x)
        tail = x > self._x_start
        right = (x >= 0.0) & ~tail
        left = (x < 0.0) & (x >= self._x_end)
        e = self._tail_amp * np.exp(self._tail_rate * (x[tail] - self._x_start))
        chi[tail] = e
        d[tail] = self._tail_rate * e
        if right.any():
            sr = self._right(x[right])
            chi[right], d[right] = sr[0], sr[1]
        if left.any():
            sl = self._left(x[left])
            v[left], d[left] = sl[0], -sl[1]
        pos = x >= 0.0
        v[pos] = span - chi[pos]
        chi[~pos] = span - v[~pos]
        return chi, v, d

    def __call__(self, x):
        chi, _, _ = self._state(x)
        out = self.q_ext + chi
        return out if np.ndim(x) else float(out[0])

    def one_minus_psi(self, x):
        """1 - psi(x) without cancellation for very negative x."""
        _, v, _ = self._state(x)
        return v if np.ndim(x) else float(v[0])

    def derivative(self, x):
        _, _, d = self._state(x)
        return d if np.ndim(x) else float(d[0])

    def inverse(self, s: float) -> float:
        """psi^{-1}(s) for q_ext < s < 1, solved on 1 - s to keep precision near 1."""
        if not self.q_ext < s < 1.0:
            raise DomainError(f"psi^-1 needs q_ext < s < 1, got {s}")
        return self.inverse_one_minus(1.0 - s)

    def inverse_one_minus(self, v: float) -> float:
        """The x with 1 - psi(x) = v."""
        if not 0.0 < v < 1.0 - self.q_ext:
            raise DomainError(f"1 - psi takes values in (0, {1.0 - self.q_ext}), got {v}")
        lo, hi = -1.0, 1.0
        while self.one_minus_psi(lo) > v:
            lo *= 2.0
            if lo < 2.0 * self._x_end:
                raise DomainError(f"{v} is below the integrated range of the wave")
        while self.one_minus_psi(hi) < v:
            hi *= 2.0
        return brentq(lambda x: self.one_minus_psi(x) - v, lo, hi, xtol=1e-14, rtol=1e-15)

    def generator(self, s: float) -> float:
        """u(s) = psi'(psi^{-1}(s)), the generator of the absorbed-count process."""
        if s >= 1.0 or s <= self.q_ext:
            return 0.0
        return self.derivative(self.inverse(s))

    def finite_depth_laplace(self, x, y: float):
        """E[exp(-e^{c0 x} W_y)] = psi(psi^{-1}(s) + y) with s = exp(-e^{c0 x} c0 y e^{-c0 y})."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        out = np.empty_like(xs)
        for i, xi in enumerate(xs):
            v = -math.expm1(-math.exp(self.c0 * xi) * self.c0 * y * math.exp(-self.c0 * y))
            out[i] = self(self.inverse_one_minus(v) + y)
        return out if np.ndim(x) else float(out[0])


def _shoot(rhs, z0, state0, event, z_stop):
    res = solve_ivp(rhs, (z0, z_stop), state0, method="DOP853", rtol=1e-12, atol=1e-300,
                    dense_output=True, events=event)
    if res.status < 0:
        raise NoConvergence(f"wave integration failed: {res.message}")
    return res


class _Shifted:
    """Dense output re-expressed in the gauge-fixed coordinate."""

    def __init__(self, sol, shift):
        self.sol, self.shift = sol, shift

    def __call__(self, x):
        return self.sol(np.asarray(x) + self.shift)


def solve_traveling_wave(law: ReproductionLaw, domain=(-40.0, 40.0), bc_tolerance: float = 1e-12,
                         residual_step: float = 0.02) -> TravelingWave:
    """Shoot from the q_ext end along the decaying linear mode toward psi = 1.

    ``bc_tolerance`` is the offset from q_ext where the linearised tail is matched. The shot
    runs in psi - q_ext until psi reaches (1 + q_ext)/2, then in 1 - psi until 1 - psi
    underflows. The result is tabulated on ``domain`` and checked against the ODE with a
    fourth-order difference stencil.
    """
    _, _, c0 = derive_constants(law)
    q = law.extinction_probability()
    fprime_q = float(np.sum(law.ks * law.qs * q ** np.maximum(law.ks - 1, 0)))
    rate = c0 - math.sqrt(c0 * c0 + 2.0 * (1.0 - fprime_q))
    g_q, g_1 = _reaction_near_q(law, q), _reaction_near_one(law)
    delta = float(bc_tolerance)
    half = (1.0 - q) / 2.0

    def rhs_q(z, s):
        return (s[1], 2.0 * (c0 * s[1] + g_q(s[0])))

    def rhs_1(z, s):
        return (s[1], 2.0 * (c0 * s[1] - g_1(s[0])))

    def reach_half(z, s):
        return s[0] - half

    def vanished(z, s):
        return s[0] - 1e-290

    reach_half.terminal = vanished.terminal = True
    right = _shoot(rhs_q, 0.0, (delta, rate * delta), reach_half, -1e4)
    if right.status != 1:
        raise NoConvergence("shot never reached the midpoint", residual=float(right.y[0][-1]))
    z_half = float(right.t_events[0][0])
    chi_h, dchi_h = right.y_events[0][0]
    left = _shoot(rhs_1, z_half, (half, -dchi_h), vanished, z_half - 1e4)
    if np.any(np.diff(right.y[0]) < 0) or np.any(np.diff(left.y[0]) > 0):
        raise NoConvergence("the shot is not monotone")
    x_end = float(left.t[-1]) - z_half
    wave = TravelingWave(np.empty(0), np.empty(0), c0, q, math.nan, _Shifted(right.sol, z_half),
                         _Shifted(left.sol, z_half), -z_half, x_end, rate, delta)
    x_lo, x_hi = domain
    if x_lo < x_end:
        raise NoConvergence(f"domain starts below the integrated range ({x_end:.1f})")
    grid = np.arange(x_lo, x_hi + residual_step / 2, residual_step)
    wave.grid = grid
    wave.psi = wave(grid)
    wave.residual = wave_residual(wave, law, grid[2:-2], residual_step)
    return wave


def wave_residual(wave: TravelingWave, law: ReproductionLaw, x, h: float = 0.02) -> float:
    """max |1/2 psi'' - c0 psi' - (psi - f(psi))| over ``x`` with five-point differences."""
    x = np.asarray(x, dtype=float)
    g_q, g_1 = _reaction_near_q(law, wave.q_ext), _reaction_near_one(law)
    worst = 0.0
    for xi in x:
        pts = xi + h * np.arange(-2.0, 3.0)
        chi, v, _ = wave._state(pts)
        # difference whichever representation is small at xi
        if xi >= 0.0:
            u, react, sign = chi, g_q(chi[2]), 1.0
        else:
            u, react, sign = v, g_1(v[2]), -1.0
        d1 = (u[0] - 8 * u[1] + 8 * u[3] - u[4]) / (12 * h)
        d2 = (-u[0] + 16 * u[1] - 30 * u[2] + 16 * u[3] - u[4]) / (12 * h * h)
        worst = max(worst, abs(sign * (0.5 * d2 - wave.c0 * d1) - react))
    return float(worst)


def tail_shape_ratio(wave: TravelingWave, xs) -> np.ndarray:
    """(1 - psi(-x)) / (x e^{-c0 x}); flat in x when the tail has the expected shape."""
    xs = np.asarray(xs, dtype=float)
    return wave.one_minus_psi(-xs) / (xs * np.exp(-wave.c0 * xs))


@dataclass(frozen=True)
class LaplaceCheck:
    deviation: float
    shift: float
    x_grid: np.ndarray
    empirical: np.ndarray


def empirical_laplace(samples, x_grid, c0: float) -> np.ndarray:
    w = np.asarray(samples, dtype=float)
    return np.array([np.mean(np.exp(-math.exp(c0 * x) * w)) for x in x_grid])


def laplace_crosscheck(samples, wave: TravelingWave, x_grid=None, minimum: int = 1000,
                       shift_range=(-15.0, 15.0)) -> LaplaceCheck:
    """sup over ``x_grid`` of |E_hat[exp(-e^{c0 x} W)] - psi(x + s)|, minimised over the shift s."""
    w = _require(samples, minimum)
    xg = np.linspace(-2.0, 2.0, 41) if x_grid is None else np.asarray(x_grid, dtype=float)
    emp = empirical_laplace(w, xg, wave.c0)
    dev = lambda s: float(np.max(np.abs(emp - wave(xg + s))))
    coarse = np.arange(shift_range[0], shift_range[1], 0.05)
    s0 = coarse[int(np.argmin([dev(s) for s in coarse]))]
    best = minimize_scalar(dev, bounds=(s0 - 0.05, s0 + 0.05), method="bounded",
                           options={"xatol": 1e-8})
    s_star, d_star = (best.x, best.fun) if best.fun <= dev(s0) else (s0, dev(s0))
    return LaplaceCheck(float(d_star), float(s_star), xg, emp)


def limit_gauge_shift(wave: TravelingWave, x: float = -30.0) -> float:
    """Shift s with 1 - psi(z + s) ~ c0 |z| e^{c0 z}, the gauge in which E[e^{-e^{c0 z} W}] = psi(z + s)."""
    # 1 - psi(x) ~ (A|x| + B) e^{c0 x}; matching c0|z| e^{c0 z} as z -> -inf fixes s
    v = wave.one_minus_psi(np.array([x, x - 1.0]))
    amp = v * np.exp(-wave.c0 * np.array([x, x - 1.0]))
    slope = amp[1] - amp[0]
    return float(math.log(wave.c0 / slope) / wave.c0)
