"""Spectrally positive Levy process with jump measure c0 * Lambda, where Lambda is the image
of x^{-2} dx under x -> log(1 + x) / c0, so Lambda((y, inf)) = 1 / (exp(c0 y) - 1).

Its cumulant is K(lam) = i lam (log kappa + c) + c0 int (e^{i lam x} - 1 - i lam x 1(x <= 1)) Lambda(dx)
and its n-th cumulant (n >= 2) is c0^{1-n} n! zeta(n).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit
from scipy import integrate, special

from bbmlab.engine import make_rng
from bbmlab.errors import DomainError, QuadratureFailure

QUAD_TOL = 1e-11


@dataclass(frozen=True)
class LevySpec:
    c0: float = math.sqrt(2.0)
    kappa: float = 1.0
    drift_const: float = 0.0

    def __post_init__(self):
        if not (self.c0 > 0 and self.kappa > 0):
            raise DomainError("c0 and kappa must be positive")

    def tail(self, y: float) -> float:
        """Lambda((y, inf))."""
        if y <= 0:
            return math.inf
        return 1.0 / math.expm1(self.c0 * y)

    def density(self, x):
        """Density of Lambda, c0 e^{-c0 x} / (1 - e^{-c0 x})^2."""
        x = np.asarray(x, dtype=float)
        return self.c0 * np.exp(-self.c0 * x) / np.expm1(-self.c0 * x) ** 2

    @property
    def linear_coefficient(self) -> float:
        return math.log(self.kappa) + self.drift_const


def _quad(f, lo, hi, what):
    val, err = integrate.quad(f, lo, hi, epsabs=QUAD_TOL, epsrel=QUAD_TOL, limit=400)
    if not math.isfinite(val) or err > 1e-7 * max(1.0, abs(val)):
        raise QuadratureFailure(f"{what}: estimated error {err:.3g}", residual=err)
    return val


def _small_parts(theta):
    """(cos th - 1, sin th - th) without cancellation."""
    re = -2.0 * math.sin(0.5 * theta) ** 2
    if abs(theta) < 1e-2:
        t2 = theta * theta
        im = -theta * t2 / 6.0 * (1.0 - t2 / 20.0 * (1.0 - t2 / 42.0))
    else:
        im = math.sin(theta) - theta
    return re, im


def cumulant_fn(spec: LevySpec, lam: float) -> complex:
    """K(lam) = log E[exp(i lam L_1)] by quadrature of the compensated jump integral."""
    lam = float(lam)
    if lam == 0.0:
        return 0j
    dens = lambda x: float(spec.density(x))
    re_in = _quad(lambda x: _small_parts(lam * x)[0] * dens(x), 0.0, 1.0, "real part on (0,1]")
    im_in = _quad(lambda x: _small_parts(lam * x)[1] * dens(x), 0.0, 1.0, "imaginary part on (0,1]")
    # the density is below e^-60 past 60/c0; a finite range keeps quad off the oscillating tail
    top = 60.0 / spec.c0
    re_out = _quad(lambda x: (math.cos(lam * x) - 1.0) * dens(x), 1.0, top, "real part on (1,inf)")
    im_out = _quad(lambda x: math.sin(lam * x) * dens(x), 1.0, top, "imaginary part on (1,inf)")
    return complex(spec.c0 * (re_in + re_out), lam * spec.linear_coefficient + spec.c0 * (im_in + im_out))


def cumulant_quadrature(spec: LevySpec, n: int) -> float:
    """c0 * int x^n Lambda(dx), computed as c0^{1-n} int_0^inf log(1+u)^n u^{-2} du."""
    if n < 2:
        raise DomainError("cumulants of order n >= 2 only")
    f = lambda u: math.log1p(u) ** n / (u * u)
    val = _quad(f, 0.0, 1.0, f"log-moment {n} near 0") + _quad(f, 1.0, math.inf, f"log-moment {n} tail")
    return spec.c0 ** (1 - n) * val


def analytic_cumulant(spec: LevySpec, n: int) -> float:
    """n-th cumulant of L_1 in closed form, c0^{1-n} n! zeta(n)."""
    if n < 2:
        raise DomainError("cumulants of order n >= 2 only")
    return spec.c0 ** (1 - n) * math.factorial(n) * float(special.zeta(n))


def compensator(spec: LevySpec, delta: float) -> float:
    """c0 * int_(delta, 1] x Lambda(dx)."""
    if delta >= 1.0:
        return 0.0
    return spec.c0 * _quad(lambda x: x * float(spec.density(x)), delta, 1.0, "compensator")


def small_jump_variance(spec: LevySpec, delta: float) -> float:
    """c0 * int_(0, delta] x^2 Lambda(dx)."""
    return spec.c0 * _quad(lambda x: x * x * float(spec.density(x)), 0.0, delta, "small-jump variance")


@dataclass(frozen=True)
class LevyScheme:
    """Compound Poisson for jumps above delta, Gaussian for the rest, plus a linear drift."""

    spec: LevySpec
    delta: float
    rate: float
    drift: float
    sigma2: float

    @classmethod
    def build(cls, spec: LevySpec, delta: float) -> "LevyScheme":
        if not delta > 0:
            raise DomainError(f"small-jump cutoff must be positive, got {delta}")
        rate = spec.c0 * spec.tail(delta)
        drift = spec.linear_coefficient - compensator(spec, delta)
        return cls(spec, float(delta), rate, drift, small_jump_variance(spec, delta))

    def jump_size(self, u):
        """Inverse of the normalised tail: Lambda((x, inf)) = u Lambda((delta, inf))."""
        c0 = self.spec.c0
        return np.log1p(math.expm1(c0 * self.delta) / np.asarray(u, dtype=float)) / c0


@njit(cache=True)
def _jump_sums(rng, n, lam_t, c0, em1):
    out = np.empty(n)
    for r in range(n):
        k = rng.poisson(lam_t)
        s = 0.0
        for _ in range(k):
            s += math.log1p(em1 / (1.0 - rng.random())) / c0
        out[r] = s
    return out


def sample_increments(spec: LevySpec, t: float, delta: float, n: int, seed: int, stream: int = 0) -> np.ndarray:
    """n independent copies of L_t."""
    sch = LevyScheme.build(spec, delta)
    rng = make_rng(seed, stream)
    jumps = _jump_sums(rng, n, sch.rate * t, spec.c0, math.expm1(spec.c0 * delta))
    gauss = rng.standard_normal(n) * math.sqrt(sch.sigma2 * t)
    return sch.drift * t + gauss + jumps


@dataclass(frozen=True)
class LevyPath:
    times: np.ndarray
    values: np.ndarray
    jump_times: np.ndarray
    jump_sizes: np.ndarray


def simulate_levy(spec: LevySpec, t: float, delta: float, rng: np.random.Generator, n_points: int = 101) -> LevyPath:
    """One path on [0, t] sampled on a uniform grid of ``n_points`` points."""
    sch = LevyScheme.build(spec, delta)
    if not t > 0:
        raise DomainError(f"horizon must be positive, got {t}")
    k = rng.poisson(sch.rate * t)
    jt = np.sort(rng.random(k) * t)
    js = sch.jump_size(1.0 - rng.random(k))
    grid = np.linspace(0.0, t, n_points)
    dW = rng.standard_normal(n_points - 1) * np.sqrt(sch.sigma2 * np.diff(grid))
    cum_jumps = np.concatenate([[0.0], np.cumsum(js)])[np.searchsorted(jt, grid, side="right")]
    values = sch.drift * grid + np.concatenate([[0.0], np.cumsum(dW)]) + cum_jumps
    return LevyPath(grid, values, jt, js)
