"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line with the measured values.

Long-running tests carry the ``slow`` marker; ``pytest -m "not slow"`` skips them.
"""

import math
import time

import numpy as np
import pytest
from scipy import stats as sps

from bbmlab import checks
from bbmlab import numerics as nm
from bbmlab.barrier import (breakout_times, collect_paths, epoch_increments, estimate_pB, breakout_flags,
                            time_scale, Z_TRIGGER)
from bbmlab.cli import main
from bbmlab.critical_line import (laplace_crosscheck, limit_gauge_shift, sample_W, solve_traveling_wave,
                                  tail_statistic, wave_residual)
from bbmlab.engine import PopulationState, advance, functional_Y, functional_Z, make_rng, weight
from bbmlab.errors import InsufficientSamples
from bbmlab.levy import LevySpec, analytic_cumulant, sample_increments
from bbmlab.nbbm import front_speed, simulate_nbbm
from bbmlab.params import ModelParams, ReproductionLaw, desk_params
from bbmlab.stats import k_statistics, ks_2samp, ks_test

SEED = 20261019
BINARY = ReproductionLaw.binary()
slow = pytest.mark.slow


def _suite_line(rows):
    worst = max(rows, key=lambda c: c.value / c.tolerance if c.tolerance else 0.0)
    return all(c.passed for c in rows), f"{len(rows)} checks, worst {worst.name}={worst.value:.3g} (tol {worst.tolerance:g})"


def test_criterion_01_theta_representations(criterion):
    t0 = time.perf_counter()
    rows = checks.theta_suite(n=1000, seed=SEED)
    ok, detail = _suite_line(rows)
    assert criterion(1, ok, f"{detail}; {time.perf_counter() - t0:.2f}s")


def test_criterion_02_potential_kernel(criterion):
    rows = checks.potential_suite(n=50, a=1.0)
    ok, detail = _suite_line(rows)
    assert criterion(2, ok, detail)


def test_criterion_03_lemma_bounds(criterion):
    rows = checks.lemma_suite()
    ok, detail = _suite_line(rows)
    assert criterion(3, ok, detail)


def _kill_start(a: float, n: int = 20):
    return a * (np.arange(n) + 0.5) / n


@slow
def test_criterion_04_z_martingale(criterion):
    a, reps = 8.0, 10_000
    mu = math.sqrt(2.0 - math.pi**2 / a**2)
    x0 = _kill_start(a)
    z0 = float(weight(x0, a, mu).sum())
    times = (a**3 / 10, a**2)
    Z = np.empty((reps, 2))
    for r in range(reps):
        s = PopulationState(x0, a=a, mu=mu, right="kill", rng=make_rng(SEED, r))
        for j, t in enumerate(times):
            advance(s, t)
            Z[r, j] = functional_Z(s)
    parts, ok = [], True
    for j, t in enumerate(times):
        m, se = Z[:, j].mean(), Z[:, j].std(ddof=1) / math.sqrt(reps)
        good = abs(m / z0 - 1.0) <= 3 * se / z0
        ok &= good
        parts.append(f"t={t:g}: mean/Z0={m / z0:.4f} +- {se / z0:.4f}")
    assert criterion(4, ok, "; ".join(parts))


@slow
def test_criterion_05_exit_rate(criterion):
    a, reps = 8.0, 3000
    mu = math.sqrt(2.0 - math.pi**2 / a**2)
    t = a**3 / 4
    x0 = _kill_start(a)
    # C: worst per-particle gap of the exact expected exit mass from its main term, on a grid
    grid = np.linspace(0.0, a, 27)[1:-1]
    C = max(abs(nm.integral_I_width(a, x, [(0.0, t)]) - math.pi * t / a**2 * math.sin(math.pi * x / a))
            for x in grid)
    R = np.empty(reps)
    for r in range(reps):
        s = PopulationState(x0, a=a, mu=mu, right="kill", rng=make_rng(SEED, r))
        if r == 0:
            z0, y0 = functional_Z(s), functional_Y(s)
        advance(s, t)
        R[r] = s.exit_total
    mean, se = R.mean(), R.std(ddof=1) / math.sqrt(reps)
    main_term = math.pi * t * z0 / a**3
    exact = sum(math.exp(mu * (x - a)) * nm.integral_I_width(a, x, [(0.0, t)]) for x in x0)
    ok = abs(mean - main_term) <= C * y0 + 3 * se
    detail = (f"mean R={mean:.4f} +- {se:.4f}, main term={main_term:.4f}, C={C:.4f}, C*Y0={C * y0:.4f}; "
              f"exact E R={exact:.4f} ({(mean - exact) / se:+.2f} SE)")
    assert criterion(5, ok, detail)
    assert abs(mean - exact) <= 3 * se


@slow
def test_criterion_06_breakout_times_exponential(criterion):
    p = desk_params()
    p_hat, (lo, hi) = estimate_pB(p, 100_000, SEED)
    T, Z0 = breakout_times(p, 1000, SEED + 1)
    keep = np.isfinite(T)
    rate = p_hat * math.pi * Z0[keep] / p.a**3
    # each run has its own rate, so test the probability-integral transforms against U(0, 1)
    u = -np.expm1(-rate * T[keep])
    D, pval = ks_test(u, sps.uniform.cdf)
    detail = (f"p_B={p_hat:.4f} [{lo:.4f},{hi:.4f}], {keep.sum()} runs ({(~keep).sum()} died out), "
              f"mean T={T[keep].mean():.2f} vs 1/rate={np.mean(1 / rate):.2f}, KS D={D:.4f} p={pval:.3g}")
    assert criterion(6, pval > 0.01, detail)


@slow
def test_criterion_07_breakout_probability_scaling(criterion):
    p = ModelParams(a=10.0, A=4.0, epsilon=0.2, eta=0.05, y=6.0, zeta=20.0)
    p_hat, (lo, hi) = estimate_pB(p, 100_000, SEED)
    target = math.pi / p.c0
    ratio = p_hat * p.breakout_threshold / target
    # diagnostic: same excursions judged on the Z' threshold alone
    z_only = breakout_flags(p.replace(zeta=1e6), 20_000, SEED).mean() * p.breakout_threshold / target
    detail = (f"p_B={p_hat:.4f} [{lo:.4f},{hi:.4f}], p_B*eps*e^A/(pi/c0)={ratio:.3f} (need 0.75..1.25); "
              f"without the tau condition {z_only:.3f}")
    assert criterion(7, 0.75 <= ratio <= 1.25, detail)


@pytest.fixture(scope="module")
def w8():
    w, dropped = sample_W(8.0, BINARY, 100_000, SEED)
    return w, dropped


@slow
def test_criterion_08_pareto_tail(criterion, w8):
    w, dropped = w8
    vals = {x: tail_statistic(w, x, seed=SEED) for x in (5, 10, 20, 50)}
    ok = all(0.8 <= v <= 1.2 for v, _ in vals.values())
    detail = ", ".join(f"x={x}: {v:.3f} [{ci[0]:.3f},{ci[1]:.3f}]" for x, (v, ci) in vals.items())
    assert criterion(8, ok, f"{detail}; {w.size} samples, {dropped} dropped")


@slow
def test_criterion_09_laplace_transform(criterion, w8):
    w, _ = w8
    wave = solve_traveling_wave(BINARY)
    resid = wave_residual(wave, BINARY, np.linspace(-10.0, 10.0, 201))
    chk = laplace_crosscheck(w, wave)
    # what the exact depth-8 law would score on the same grid
    exact = wave.finite_depth_laplace(chk.x_grid, 8.0)
    shifts = np.linspace(chk.shift - 1.0, chk.shift + 1.0, 2001)
    floor = min(float(np.max(np.abs(exact - wave(chk.x_grid + s)))) for s in shifts)
    ok = chk.deviation <= 0.02 and resid <= 1e-8
    detail = (f"sup dev={chk.deviation:.4f} at shift {chk.shift:.3f} (limit gauge {limit_gauge_shift(wave):.3f}), "
              f"exact depth-8 floor={floor:.4f}, wave residual={resid:.2e}")
    assert criterion(9, ok, detail)


@slow
def test_criterion_10_levy_cumulants(criterion):
    spec = LevySpec()
    x = sample_increments(spec, 1.0, 1e-4, 100_000, seed=SEED)
    k = k_statistics(x, 3)
    rel = [k[j] / analytic_cumulant(spec, j + 1) - 1.0 for j in (1, 2)]
    ok = all(abs(r) <= 0.05 for r in rel)
    assert criterion(10, ok, f"k2 rel err={rel[0]:+.4f}, k3 rel err={rel[1]:+.4f}")


def _fallback_ks(A: float, desk: ModelParams, lev_centered: np.ndarray):
    p = desk.replace(A=A, epsilon=desk.epsilon * math.exp(desk.A - A))
    sample = collect_paths(p, min_epochs=60, seed=SEED, max_paths=20, dt=p.a**2 / 100, cap=1_000_000)
    inc = [epoch_increments(path, p, 1.0) for path in sample.paths if path.horizon >= time_scale(p)]
    inc = np.concatenate(inc) if inc else np.empty(0)
    if inc.size < 20:
        return None, len(sample.epochs), sample.outcomes
    return ks_2samp(inc - inc.mean(), lev_centered)[0], len(sample.epochs), sample.outcomes


@slow
def test_criterion_11_barrier_versus_levy(criterion):
    p = desk_params()
    sample = collect_paths(p, min_epochs=500, seed=SEED, max_paths=4000, dt=p.a**2 / 100, cap=1_000_000)
    epochs = sample.epochs
    spec = LevySpec(c0=p.c0, kappa=p.kappa)
    lev = sample_increments(spec, 1.0, 1e-3, 20_000, seed=SEED)
    lev_c = lev - lev.mean()
    inc = [epoch_increments(path, p, 1.0) for path in sample.paths if path.horizon >= time_scale(p)]
    inc = np.concatenate(inc) if inc else np.empty(0)
    head = f"{len(epochs)} epochs over {len(sample.paths)} paths {sample.outcomes}"
    if inc.size >= 20:
        D1, p1 = ks_2samp(inc - inc.mean(), lev_c)
        part1 = f"increments n={inc.size} KS D={D1:.3f} p={p1:.3g}"
    else:
        D1, p1, part1 = math.nan, 0.0, f"increments n={inc.size} (too few windows)"
    zt = [ep for ep in epochs if ep.breakout is not None and ep.breakout.triggered_by == Z_TRIGGER]
    if len(zt) >= 20:
        d = np.array([ep.delta for ep in zt])
        pred = np.array([math.log1p(ep.breakout.Z_prime / (p.kappa * math.exp(p.A))) / p.c0 for ep in zt])
        D2, p2 = ks_2samp(d, pred)
        part2 = f"jumps n={len(zt)} KS D={D2:.3f} p={p2:.3g}"
    else:
        p2, part2 = 0.0, f"jumps n={len(zt)} (too few)"
    ok = p1 > 0.01 and p2 > 0.01
    if not ok:
        # monotone improvement in A at fixed eps e^A
        Ds = [D1]
        notes = []
        for A in (4.0, 5.0):
            D, n_ep, outc = _fallback_ks(A, p, lev_c)
            Ds.append(D)
            notes.append(f"A={A:g}: D={'n/a' if D is None else f'{D:.3f}'} ({n_ep} epochs, {outc})")
        evaluable = all(D is not None and math.isfinite(D) for D in Ds)
        ok = evaluable and Ds[0] > Ds[1] > Ds[2]
        part2 += "; fallback " + "; ".join(notes) + ("" if evaluable else "; fallback not evaluable")
    assert criterion(11, ok, f"{head}; {part1}; {part2}")


@slow
def test_criterion_12_nbbm_speed_correction(criterion):
    c0 = math.sqrt(2.0)
    Ns = (100, 1000, 10_000)
    gaps, ses = [], []
    for N in Ns:
        s = simulate_nbbm(N, BINARY, 4000.0, make_rng(SEED, N), dt=0.01)
        v, se = front_speed(s, 500.0)
        gaps.append(c0 - v)
        ses.append(se)
    gaps = np.array(gaps)
    logN = np.log(np.array(Ns, dtype=float))
    slope = float(np.polyfit(np.log(logN), np.log(gaps), 1)[0])
    literal = float(np.polyfit(logN, np.log(gaps), 1)[0])
    ok = bool(np.all(np.diff(gaps) < 0)) and -2.5 <= slope <= -1.5
    detail = (", ".join(f"N={N}: c0-v={g:.4f} +- {e:.4f}" for N, g, e in zip(Ns, gaps, ses))
              + f"; slope vs log log N={slope:.3f}, vs log N={literal:.3f}")
    assert criterion(12, ok, detail)


def _outputs(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


def test_criterion_13_determinism(criterion, tmp_path):
    small = tmp_path / "small.yaml"
    small.write_text("a: 8\nA: 3\nepsilon: 0.2\neta: 0.05\nhorizon: 60\n"
                     "options:\n  epochs: 2\n  N: [20, 50]\n  burn_in: 10\n  window: 10\n")
    nb = tmp_path / "nb.yaml"
    nb.write_text("a: 8\nA: 3\nepsilon: 0.2\neta: 0.05\nhorizon: 200\n"
                  "options:\n  N: [20, 50]\n  burn_in: 10\n  window: 10\n")
    cases = {
        "critical-line": ["--replicas", "400"],
        "levy": ["--replicas", "400"],
        "breakout-rate": ["--replicas", "200"],
        "nbbm": ["--config", str(nb)],
        "barrier-path": ["--replicas", "2", "--config", str(small)],
    }
    bad = []
    for command, extra in cases.items():
        runs = []
        for label, workers in (("a", "1"), ("b", "1"), ("c", "2")):
            d = tmp_path / command / label
            code = main([command, "--seed", str(SEED), *extra, "--workers", workers, "--out", str(d)])
            runs.append(_outputs(d) if code == 0 else code)
        if not (isinstance(runs[0], dict) and runs[0] == runs[1] == runs[2]):
            bad.append(command)
    ok = not bad
    assert criterion(13, ok, f"{len(cases)} commands x 3 runs (workers 1, 1, 2); "
                             + ("all byte-identical" if ok else f"differ or failed: {bad}"))
