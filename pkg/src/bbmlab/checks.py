"""Deterministic verification suites shared by the CLI and the test-suite.

Each suite returns a list of Check rows; a suite passes when every row passes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from bbmlab import numerics as nm
from bbmlab.levy import LevySpec, analytic_cumulant, cumulant_fn, cumulant_quadrature


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    tolerance: float
    passed: bool


def _row(name, value, tol):
    return Check(name, float(value), float(tol), bool(value <= tol))


def theta_suite(n: int = 1000, seed: int = 0) -> list[Check]:
    """Both theta representations agree on random (x, t) in [0, 2] x [0.05, 5]."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(0.0, 2.0, n)
    ts = rng.uniform(0.05, 5.0, n)
    diff = max(abs(nm.theta_fourier(x, t) - nm.theta_gaussian(x, t)) for x, t in zip(xs, ts))
    deriv = max(abs(nm.theta_dx(x, t) - (nm.theta_gaussian(x + 1e-6, t) - nm.theta_gaussian(x - 1e-6, t)) / 2e-6)
                for x, t in zip(xs[:50], ts[:50]))
    return [_row("theta_fourier_vs_gaussian", diff, 1e-12), _row("theta_dx_vs_difference", deriv, 1e-6)]


def potential_suite(n: int = 50, a: float = 1.0, seed: int = 1) -> list[Check]:
    """Time integral of the killed kernel against 2 a^-1 (x ^ y)(a - x v y)."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n):
        x, y = rng.uniform(0.02 * a, 0.98 * a, 2)
        exact = nm.potential_kernel(a, x, y)
        worst = max(worst, abs(nm.potential_kernel_quad(a, x, y) / exact - 1.0))
    return [_row("potential_kernel_rel_err", worst, 1e-6)]


def _sets(infs, widths):
    return [[(s0, s0 + w)] for s0 in infs for w in widths]


def lemma_cases(fine: bool):
    """(x, S) cases for I and (x, y, S) cases for J.

    The coarse grid includes the extremes (x and y near the ends, the narrowest and widest sets,
    sets starting at 0); the fine grid interleaves it with 200 cases for each integral.
    """
    if not fine:
        xs, ys = [0.01, 0.25, 0.5, 0.75, 0.99], [0.01, 0.5]
        sets = _sets([0.0, 0.1, 0.5, 2.0], [1e-3, 0.1, 1.0, 3.0]) + [[(0.0, 0.05), (1.0, 1.5)]]
        return [(x, S) for x in xs for S in sets], [(x, y, S) for x in xs for y in ys for S in sets]
    sets = _sets([0.0, 0.03, 0.2, 0.8, 3.0], [2e-3, 0.03, 0.4, 2.0])
    xs = np.linspace(0.03, 0.97, 10)
    I_cases = [(float(x), S) for x in xs for S in sets]
    J_cases = [(float(x), y, S) for x in xs[::2] for y in (0.13, 0.62) for S in sets]
    return I_cases, J_cases


def lemma_constant(kind: str, cases) -> float:
    """Smallest C with gap <= C * envelope over ``cases``."""
    ratios = []
    for c in cases:
        gap = nm.lemma_I_gap(*c) if kind == "I" else nm.lemma_J_gap(*c)
        env = nm.lemma_I_envelope(*c) if kind == "I" else nm.lemma_J_envelope(*c)
        ratios.append(gap / env if env > 0 else (0.0 if gap < 1e-12 else math.inf))
    return max(ratios)


def lemma_suite() -> list[Check]:
    """Calibrate C on the coarse cases, then require gap <= C * envelope on the fine grid."""
    I_coarse, J_coarse = lemma_cases(False)
    I_fine, J_fine = lemma_cases(True)
    out = []
    for kind, coarse, fine in (("I", I_coarse, I_fine), ("J", J_coarse, J_fine)):
        C = lemma_constant(kind, coarse)
        worst = lemma_constant(kind, fine)
        out.append(Check(f"lemma_{kind}_bound_{len(fine)}_cases", worst, C, bool(worst <= C)))
    return out


def levy_suite() -> list[Check]:
    spec = LevySpec()
    out = [_row("levy_K0", abs(cumulant_fn(spec, 0.0)), 0.0)]
    worst = max(abs(cumulant_quadrature(spec, n) / analytic_cumulant(spec, n) - 1.0) for n in range(2, 7))
    out.append(_row("levy_cumulant_quadrature_vs_closed_form", worst, 1e-8))
    lam = 0.7
    sym = abs(cumulant_fn(spec, -lam) - cumulant_fn(spec, lam).conjugate())
    out.append(_row("levy_conjugate_symmetry", sym, 1e-10))
    return out


SUITES = {"theta": theta_suite, "potential": potential_suite, "lemma": lemma_suite, "levy": levy_suite}
