"""Theta functions, killed Brownian motion kernels, the I/J integrals and the barrier ramp.

Positions on the unit interval are dimensionless; ``IntervalKernel`` rescales to width ``a``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate

from bbmlab.errors import DomainError, NoConvergence, QuadratureFailure

T_SWITCH = 2.0 / math.pi
REL_FLOOR = 1e-16
MAX_TERMS = 200
PI = math.pi
PI2 = math.pi * math.pi


@dataclass(frozen=True)
class ThetaEval:
    x: float
    t: float
    value: float
    terms_used: int
    representation: str


def _check_t(t):
    if not t > 0:
        raise DomainError(f"time must be positive, got {t}")


def _reduce(x):
    # theta is 2-periodic and even
    r = math.fmod(x, 2.0)
    if r > 1.0:
        r -= 2.0
    elif r < -1.0:
        r += 2.0
    return r


def _fourier(x, t, order):
    """Fourier series of d^order theta / dx^order; returns (value, terms)."""
    s = 1.0 if order == 0 else 0.0
    n = 1
    while n <= MAX_TERMS:
        e = math.exp(-0.5 * PI2 * n * n * t)
        k = PI * n
        if order == 0:
            term = 2.0 * e * math.cos(k * x)
            bound = 2.0 * e
        elif order == 1:
            term = -2.0 * k * e * math.sin(k * x)
            bound = 2.0 * k * e
        else:
            term = -2.0 * k * k * e * math.cos(k * x)
            bound = 2.0 * k * k * e
        s += term
        if bound < REL_FLOOR * (abs(s) + 1.0) and n * n * t * PI2 > 2.0 * order:
            return s, n
        n += 1
    return s, MAX_TERMS


def _gauss_logderivs(d, t):
    d2 = d * d
    l1 = -0.5 / t + 0.5 * d2 / (t * t)
    l2 = 0.5 / (t * t) - d2 / (t ** 3)
    l3 = -1.0 / (t ** 3) + 3.0 * d2 / (t ** 4)
    return l1, l2, l3


def _gauss_term(d, t, kind):
    """One image term of the Gaussian series and its derivatives.

    kind: 'v' value, 'x' d/dx, 'xx' d2/dx2, 't' d/dt, 'tt', 'ttt'.
    """
    # image sum of period-2 Gaussians counts each frequency twice
    h = 2.0 * math.exp(-0.5 * d * d / t) / math.sqrt(2.0 * PI * t)
    if kind == "v":
        return h
    if kind == "x":
        return -d / t * h
    if kind == "xx":
        return (d * d / (t * t) - 1.0 / t) * h
    l1, l2, l3 = _gauss_logderivs(d, t)
    if kind == "t":
        return h * l1
    if kind == "tt":
        return h * (l1 * l1 + l2)
    return h * (l1 ** 3 + 3.0 * l1 * l2 + l3)


def _gaussian(x, t, kind):
    """Sum over images x - 2n, expanding outward from the nearest image."""
    x = _reduce(x)
    s = _gauss_term(x, t, kind)
    terms = 1
    for k in range(1, MAX_TERMS):
        a = _gauss_term(x - 2.0 * k, t, kind)
        b = _gauss_term(x + 2.0 * k, t, kind)
        s += a + b
        terms += 2
        # image distance grows past the peak of the polynomial prefactor
        if abs(a) + abs(b) < REL_FLOOR * (abs(s) + 1.0) and 2.0 * k - 1.0 > 3.0 * math.sqrt(t):
            break
    return s, terms


def theta_fourier(x: float, t: float) -> float:
    _check_t(t)
    return _fourier(float(x), float(t), 0)[0]


def theta_gaussian(x: float, t: float) -> float:
    _check_t(t)
    return _gaussian(float(x), float(t), "v")[0]


def theta_eval(x: float, t: float) -> ThetaEval:
    _check_t(t)
    x, t = float(x), float(t)
    if t >= T_SWITCH:
        v, n = _fourier(x, t, 0)
        return ThetaEval(x, t, v, n, "fourier")
    v, n = _gaussian(x, t, "v")
    return ThetaEval(x, t, v, n, "gaussian")


def theta(x: float, t: float) -> float:
    """Heat kernel of Brownian motion on the circle of length 2, evaluated at (x, t)."""
    return theta_eval(x, t).value


def theta_dx(x: float, t: float) -> float:
    _check_t(t)
    if t >= T_SWITCH:
        return _fourier(float(x), float(t), 1)[0]
    return _gaussian(float(x), float(t), "x")[0]


def theta_dxx(x: float, t: float) -> float:
    _check_t(t)
    if t >= T_SWITCH:
        return _fourier(float(x), float(t), 2)[0]
    return _gaussian(float(x), float(t), "xx")[0]


def theta_dt(x: float, t: float) -> float:
    # heat equation: theta_t = theta_xx / 2
    return 0.5 * theta_dxx(x, t)


theta_vec = np.vectorize(theta, otypes=[float])
theta_fourier_vec = np.vectorize(theta_fourier, otypes=[float])
theta_gaussian_vec = np.vectorize(theta_gaussian, otypes=[float])


# ---------------------------------------------------------------- interval kernels

@dataclass(frozen=True)
class IntervalKernel:
    """Brownian motion killed at 0 and ``a``."""

    a: float = 1.0

    def __post_init__(self):
        if not self.a > 0:
            raise DomainError(f"interval width must be positive, got {self.a}")

    def p(self, x, y, t):
        return p_killed(self, x, y, t)

    def r(self, x, t):
        return r_exit(self, x, t)


def _sine_series(x, y, tau, shift):
    """2 sum_n exp(-pi^2 (n^2 - shift) tau / 2) sin(pi n x) sin(pi n y) on the unit interval."""
    s = 0.0
    for n in range(1, MAX_TERMS + 1):
        e = math.exp(-0.5 * PI2 * (n * n - shift) * tau)
        s += 2.0 * e * math.sin(PI * n * x) * math.sin(PI * n * y)
        if 2.0 * e < REL_FLOOR * (abs(s) + 1e-300) or e < 1e-300:
            break
    return s


def _p_unit_scaled(x, y, tau, shift=0.0):
    """exp(shift pi^2 tau / 2) p_tau^1(x, y); shift is 0 or 1."""
    if tau >= T_SWITCH:
        return _sine_series(x, y, tau, shift)
    v = 0.5 * (_gaussian(x - y, tau, "v")[0] - _gaussian(x + y, tau, "v")[0])
    return max(v, 0.0) * math.exp(0.5 * shift * PI2 * tau)


def p_killed(k: IntervalKernel, x: float, y: float, t: float) -> float:
    """Transition density of Brownian motion killed on leaving (0, a)."""
    a = k.a
    _check_t(t)
    if not (0.0 <= x <= a and 0.0 <= y <= a):
        raise DomainError(f"positions must lie in [0, {a}], got {x}, {y}")
    return _p_unit_scaled(x / a, y / a, t / (a * a)) / a


def _r_unit_scaled(x, tau, shift=0.0):
    """exp(shift pi^2 tau / 2) r_tau^1(x)."""
    if tau >= T_SWITCH:
        s = 0.0
        for n in range(1, MAX_TERMS + 1):
            e = math.exp(-0.5 * PI2 * (n * n - shift) * tau)
            term = PI * n * e * math.sin(PI * n * x)
            s += term if n % 2 == 1 else -term
            if PI * n * e < REL_FLOOR * (abs(s) + 1e-300) or e < 1e-300:
                break
        return s
    return 0.5 * _gaussian(x - 1.0, tau, "x")[0] * math.exp(0.5 * shift * PI2 * tau)


def r_exit(k: IntervalKernel, x: float, t: float) -> float:
    """Density of the exit time through the upper end a, started from x."""
    a = k.a
    _check_t(t)
    if not 0.0 < x < a:
        raise DomainError(f"start must lie in (0, {a}), got {x}")
    return max(_r_unit_scaled(x / a, t / (a * a)), 0.0) / (a * a)


def series_tail_E(t: float) -> float:
    """sum_{n >= 2} n^2 exp(-pi^2 (n^2 - 1) t / 2)."""
    _check_t(t)
    s = 0.0
    n = 2
    while True:
        term = n * n * math.exp(-0.5 * PI2 * (n * n - 1) * t)
        s += term
        # terms decrease once n^2 pi^2 t > 2; the remaining tail is below one term
        if n * n * PI2 * t > 2.0 and term < 1e-17 * s:
            return s
        n += 1


def potential_kernel(a: float, x: float, y: float) -> float:
    """Closed form of the time integral of the killed kernel: 2 (x^y)(a - x v y) / a."""
    return 2.0 * min(x, y) * (a - max(x, y)) / a


def potential_kernel_quad(a: float, x: float, y: float, t_split: float | None = None) -> float:
    """Numerical time integral of p_t^a(x, y) over (0, inf).

    Adaptive quadrature up to t_split, then the exact integral of the sine series beyond it.
    """
    k = IntervalKernel(a)
    if t_split is None:
        t_split = 2.0 * a * a
    pts = [(x - y) ** 2 / 4.0] if abs(x - y) > 0 else None
    if pts and pts[0] >= t_split:
        pts = None
    head, err = integrate.quad(lambda t: k.p(x, y, t) if t > 0 else 0.0, 0.0, t_split,
                               epsabs=1e-13, epsrel=1e-11, limit=400, points=pts)
    tail = 0.0
    for n in range(1, MAX_TERMS + 1):
        c = 0.5 * PI2 * n * n / (a * a)
        term = (2.0 / a) * math.exp(-c * t_split) / c * math.sin(PI * n * x / a) * math.sin(PI * n * y / a)
        tail += term
        if abs(term) < 1e-20:
            break
    return head + tail


# ---------------------------------------------------------------- I and J integrals

def normalize_set(S) -> list[tuple[float, float]]:
    """Sort and merge a finite union of intervals given as (lo, hi) pairs."""
    if isinstance(S, tuple) and len(S) == 2 and np.isscalar(S[0]):
        S = [S]
    out = []
    for lo, hi in sorted((float(lo), float(hi)) for lo, hi in S):
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise DomainError("time sets must be bounded")
        if lo < 0 or hi < lo:
            raise DomainError(f"bad interval ({lo}, {hi})")
        if out and lo <= out[-1][1]:
            out[-1] = (out[-1][0], max(out[-1][1], hi))
        else:
            out.append((lo, hi))
    return out


def set_measure(S) -> float:
    return sum(hi - lo for lo, hi in normalize_set(S))


def set_inf(S) -> float:
    S = normalize_set(S)
    return S[0][0] if S else math.inf


def _quad_over(fn, S, peak=None):
    total = 0.0
    for lo, hi in normalize_set(S):
        if hi == lo:
            continue
        cuts = [lo]
        for c in (peak, T_SWITCH, 4.0):
            if c is not None and lo < c < hi:
                cuts.append(c)
        cuts.append(hi)
        cuts = sorted(set(cuts))
        for s0, s1 in zip(cuts[:-1], cuts[1:]):
            val, err = integrate.quad(fn, s0, s1, epsabs=1e-11, epsrel=1e-10, limit=500)
            if not math.isfinite(val) or err > 1e-7 * max(1.0, abs(val)):
                raise QuadratureFailure(f"quadrature on [{s0}, {s1}] did not converge", residual=err)
            total += val
    return total


def integral_I(x: float, S) -> float:
    """Time integral over S of exp(pi^2 s / 2) times the unit-interval exit density at 1."""
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"x must lie in [0, 1], got {x}")
    if x == 0.0:
        return 0.0
    if x == 1.0:
        x = 1.0 - 1e-15
    fn = lambda s: _r_unit_scaled(x, s, 1.0) if s > 0 else 0.0
    return _quad_over(fn, S, peak=(1.0 - x) ** 2 / 3.0)


def integral_J(x: float, y: float, S) -> float:
    """Time integral over S of exp(pi^2 s / 2) times the unit-interval killed kernel."""
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        raise DomainError(f"positions must lie in [0, 1], got {x}, {y}")
    if x in (0.0, 1.0) or y in (0.0, 1.0):
        return 0.0
    # s = u^2 removes the 1/sqrt(s) singularity at x = y
    S2 = [(math.sqrt(lo), math.sqrt(hi)) for lo, hi in normalize_set(S)]
    fn = lambda u: 2.0 * u * _p_unit_scaled(x, y, u * u, 1.0) if u > 0 else 0.0
    peak = abs(x - y) / math.sqrt(2.0) if x != y else None
    return _quad_over(fn, S2, peak=peak)


def integral_I_width(a: float, x: float, S) -> float:
    """Width-a version computed directly from the width-a exit density."""
    k = IntervalKernel(a)
    if x <= 0.0:
        return 0.0
    fn = lambda s: math.exp(0.5 * PI2 * s / (a * a)) * k.r(x, s) if s > 0 else 0.0
    return _quad_over(fn, S, peak=(a - x) ** 2 / 3.0)


def integral_J_width(a: float, x: float, y: float, S) -> float:
    k = IntervalKernel(a)
    if x in (0.0, a) or y in (0.0, a):
        return 0.0
    S2 = [(math.sqrt(lo), math.sqrt(hi)) for lo, hi in normalize_set(S)]
    fn = lambda u: 2.0 * u * math.exp(0.5 * PI2 * u * u / (a * a)) * k.p(x, y, u * u) if u > 0 else 0.0
    peak = abs(x - y) / math.sqrt(2.0) if x != y else None
    return _quad_over(fn, S2, peak=peak)


SERIES_MIN_INF = 0.02


def _mode_integral(n, S):
    """Integral over S of exp(-pi^2 (n^2 - 1) s / 2)."""
    k = 0.5 * PI2 * (n * n - 1)
    return sum(math.exp(-k * lo) * -math.expm1(-k * (hi - lo)) / k for lo, hi in normalize_set(S))


def _remainder_series(S, coef):
    """sum_{n >= 2} coef(n) * _mode_integral(n, S), for inf S > 0."""
    s0 = set_inf(S)
    total = 0.0
    for n in range(2, 10 * MAX_TERMS):
        term = coef(n) * _mode_integral(n, S)
        total += term
        if 2.0 * n * math.exp(-0.5 * PI2 * (n * n - 1) * s0) < 1e-18 * (abs(total) + 1e-300):
            return total
    raise NoConvergence("remainder series did not converge")


def lemma_I_remainder(x: float, S) -> float:
    """I(x, S) - pi |S| sin(pi x) from the higher eigenmodes; needs inf S > 0."""
    return _remainder_series(S, lambda n: (PI * n if n % 2 else -PI * n) * math.sin(PI * n * x))


def lemma_J_remainder(x: float, y: float, S) -> float:
    return _remainder_series(S, lambda n: 2.0 * math.sin(PI * n * x) * math.sin(PI * n * y))


def lemma_I_gap(x: float, S) -> float:
    """|I(x, S) - pi |S| sin(pi x)|; from the mode remainder when inf S is away from 0, where the
    difference is far below the rounding error of I itself."""
    if set_inf(S) >= SERIES_MIN_INF:
        return abs(lemma_I_remainder(x, S))
    return abs(integral_I(x, S) - PI * set_measure(S) * math.sin(PI * x))


def lemma_I_envelope(x: float, S) -> float:
    """Shape of the bound on lemma_I_gap: 1 ^ (E_{inf S} (1 ^ |S|) sin(pi x))."""
    s0 = set_inf(S)
    e = series_tail_E(s0) if s0 > 0 else math.inf
    return min(1.0, e * min(1.0, set_measure(S)) * math.sin(PI * x))


def lemma_J_gap(x: float, y: float, S) -> float:
    if set_inf(S) >= SERIES_MIN_INF:
        return abs(lemma_J_remainder(x, y, S))
    return abs(integral_J(x, y, S) - 2.0 * set_measure(S) * math.sin(PI * x) * math.sin(PI * y))


def lemma_J_envelope(x: float, y: float, S) -> float:
    s0 = set_inf(S)
    e = series_tail_E(s0) if s0 > 0 else math.inf
    return min(min(x, y) * (1.0 - max(x, y)), e * math.sin(PI * x) * math.sin(PI * y))


# ---------------------------------------------------------------- taboo process

def taboo_density(a: float, x: float, y: float, t: float) -> float:
    """Transition density of Brownian motion conditioned to stay in (0, a) forever."""
    _check_t(t)
    if not (0.0 < x < a and 0.0 < y < a):
        raise DomainError(f"positions must lie in (0, {a}), got {x}, {y}")
    ratio = math.sin(PI * y / a) / math.sin(PI * x / a)
    return ratio * _p_unit_scaled(x / a, y / a, t / (a * a), 1.0) / a


def taboo_stationary(a: float, y: float) -> float:
    return 2.0 / a * math.sin(PI * y / a) ** 2


# ---------------------------------------------------------------- barrier ramp

def _ramp_g(t: float, order: int = 0) -> float:
    """g(t) = exp(pi^2 t/2) d/dt theta(1, t) / pi^2 and its first two derivatives.

    g rises from 0 at t = 0 to 1 as t -> inf.
    """
    if t <= 0:
        return 0.0
    if t >= T_SWITCH:
        s = 0.0
        for n in range(1, MAX_TERMS + 1):
            lam = 0.5 * PI2 * (n * n - 1)
            e = math.exp(-lam * t)
            term = n * n * e * (-lam) ** order if n > 1 or order == 0 else 0.0
            s += term if n % 2 == 1 else -term
            if n > 1 and n * n * e * (lam + 1.0) ** order < REL_FLOOR * (abs(s) + 1e-300):
                break
        return s
    # Gaussian images of theta_t at x = 1 with the exponential prefactor
    h = 0.5 * PI2
    e = math.exp(h * t) / PI2
    d0 = _gaussian(1.0, t, "t")[0]
    if order == 0:
        return e * d0
    d1 = _gaussian(1.0, t, "tt")[0]
    if order == 1:
        return e * (h * d0 + d1)
    d2 = _gaussian(1.0, t, "ttt")[0]
    return e * (h * h * d0 + 2.0 * h * d1 + d2)


def barrier_shape_default(delta: float, t: float, c0: float = math.sqrt(2.0)) -> float:
    """Smooth ramp from 0 at t = 0 to delta as t -> inf (time in units of a^2)."""
    if delta < 0:
        raise DomainError(f"shift must be non-negative, got {delta}")
    if delta == 0 or t <= 0:
        return 0.0
    g = min(max(_ramp_g(t), 0.0), 1.0)
    return math.log1p(math.expm1(c0 * delta) * g) / c0


def barrier_shape_derivs(delta: float, t: float, c0: float = math.sqrt(2.0)) -> tuple[float, float, float]:
    """(f, f', f'') of the default ramp with respect to its rescaled time."""
    if delta < 0:
        raise DomainError(f"shift must be non-negative, got {delta}")
    if delta == 0 or t <= 0:
        return 0.0, 0.0, 0.0
    K = math.expm1(c0 * delta)
    g, g1, g2 = (_ramp_g(t, k) for k in range(3))
    g = min(max(g, 0.0), 1.0)
    den = 1.0 + K * g
    f = math.log1p(K * g) / c0
    f1 = K * g1 / (c0 * den)
    f2 = (K * g2 * den - K * K * g1 * g1) / (c0 * den * den)
    return f, f1, f2


def barrier_shape_norm(delta: float, c0: float = math.sqrt(2.0), t_max: float = 10.0, n: int = 4001) -> float:
    """Grid sup of max(|f|, |f'|, |f'|^2, |f''|) over (0, t_max]."""
    grid = np.linspace(t_max / n, t_max, n)
    d = np.array([barrier_shape_derivs(delta, float(t), c0) for t in grid])
    s0, s1, s2 = np.abs(d).max(axis=0)
    return float(max(s0, s1, s1 * s1, s2))


barrier_shape_vec = np.vectorize(barrier_shape_default, otypes=[float])
