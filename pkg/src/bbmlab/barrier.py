"""Moving-barrier construction: epochs of frozen barrier, breakout detection, and a smooth
shift of the barrier after each breakout.

Within an epoch the barrier is frozen until the first breakout at time T. A breakout is a hit
of the upper level whose descendants, stopped on the critical line, carry Z' > eps e^A or
keep returning after zeta. Once every excursion started by time T is resolved, the shift
Delta = log(Z_T / (kappa e^A) v 1) / c0 is applied through the ramp f_Delta between
T' = T + tau_max and T + a^{5/2}.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from bbmlab import _kernels as K
from bbmlab.engine import PopulationState, make_rng, population_from, stationary_positions, weight
from bbmlab.errors import DegenerateEpoch, DomainError, ExplosionGuard, InsufficientSamples
from bbmlab.numerics import barrier_shape_default
from bbmlab.params import ModelParams
from bbmlab.stats import wilson_interval

Z_TRIGGER, TAU_TRIGGER = "z_threshold", "tau_cap"
CHECK_EVERY = 4
MAX_EVENTS = 100_000_000


@dataclass(frozen=True)
class BreakoutRecord:
    T: float
    fugitive_id: int
    Z_prime: float
    tau_max: float
    triggered_by: str
    tier: int = 1
    Y_prime: float = 0.0


@dataclass(frozen=True)
class EpochResult:
    n: int
    T_n: float
    delta: float
    X_end: float
    Z_end: float
    Y_end: float
    good_flags: dict
    breakout: BreakoutRecord | None = None
    T_prime: float = math.nan
    Z_T: float = math.nan
    deferred: bool = False
    truncated: bool = False

    @property
    def good(self) -> bool:
        return all(self.good_flags.values())


@dataclass
class BarrierPath:
    """Barrier X(t): frozen between ramps, X_base + f_Delta((t - T')/a^2) on [T', T_n]."""

    a: float
    c0: float
    breakpoints: list = field(default_factory=lambda: [(0.0, 0.0)])
    epochs: list = field(default_factory=list)
    ramps: list = field(default_factory=list)
    horizon: float = 0.0
    stopped: str | None = None

    def value(self, t: float) -> float:
        x = 0.0
        for start, end, base, delta in self.ramps:
            if t < start:
                break
            x = base + barrier_shape_default(delta, (min(t, end) - start) / self.a**2, self.c0)
        return x

    def values(self, ts) -> np.ndarray:
        return np.array([self.value(float(t)) for t in np.atleast_1d(ts)])

    def jump_value(self, t: float) -> float:
        """Barrier value at the last epoch end T_n <= t."""
        x = 0.0
        for ep in self.epochs:
            if ep.T_n > t:
                break
            x = ep.X_end
        return x


def breakout_condition(Z_prime: float, tau_max: float, params: ModelParams) -> str | None:
    """Which part of the breakout event holds, if any (threshold checked first)."""
    if Z_prime > params.breakout_threshold:
        return Z_TRIGGER
    if tau_max > params.zeta:
        return TAU_TRIGGER
    return None


def delta_shift(Z_T: float, params: ModelParams) -> float:
    """Delta = c0^{-1} log(Z_T / (kappa e^A) v 1)."""
    if Z_T < 0:
        raise DomainError(f"Z_T must be non-negative, got {Z_T}")
    ratio = Z_T / (params.kappa * math.exp(params.A))
    return math.log(ratio) / params.c0 if ratio > 1.0 else 0.0


def _classify(state: PopulationState, e: int, params: ModelParams):
    """('breakout', record) | ('clear', None) | ('pending', None) for excursion ``e``."""
    EF, EI = state.EF, state.EI
    status = EI[e, K.E_STATUS]
    z = EF[e, K.E_Z]
    record = lambda trig, tmax: BreakoutRecord(float(EF[e, K.E_TAU]), int(EI[e, K.E_FUGITIVE]), float(z),
                                               float(tmax), trig, int(EI[e, K.E_ROOT_TIER]), float(EF[e, K.E_Y]))
    if status == K.EXC_TRUNCATED:
        return "breakout", record(TAU_TRIGGER, max(EF[e, K.E_TMAX], params.zeta))
    if z > params.breakout_threshold:
        return "breakout", record(Z_TRIGGER, EF[e, K.E_TMAX])
    if status == K.EXC_DONE:
        return ("breakout", record(TAU_TRIGGER, EF[e, K.E_TMAX])) if EF[e, K.E_TMAX] > params.zeta else ("clear", None)
    return "pending", None


def detect_breakout(hit_event: int, engine_state: PopulationState, params: ModelParams) -> BreakoutRecord | None:
    """Breakout record of the excursion opened by hit ``hit_event`` once its outcome is known.

    Returns None when the descendants have all returned (or died) without a breakout, and also
    while the outcome is still open.
    """
    if not 0 <= hit_event < engine_state.n_excursions:
        raise DomainError(f"no excursion with index {hit_event}")
    kind, rec = _classify(engine_state, hit_event, params)
    return rec if kind == "breakout" else None


def truncate_overdue(state: PopulationState, zeta: float) -> None:
    """Excursions still pending zeta after their start are cut at the current positions."""
    m = state.n_excursions
    if m == 0:
        return
    EF, EI = state.EF, state.EI
    overdue = np.nonzero((EI[:m, K.E_STATUS] == K.EXC_ACTIVE) & (state.time - EF[:m, K.E_TAU] > zeta))[0]
    for e in overdue:
        K.release_excursion(state.PF, state.PI, EF, EI, state.C, int(e), state.barrier_offset, state.a, state.mu)


def first_breakout(state: PopulationState, params: ModelParams):
    """Earliest excursion that is a breakout with all earlier ones resolved, else None.

    Returns (excursion index, record) or None; ``None`` also when an earlier excursion is
    still open.
    """
    m = state.n_excursions
    order = np.argsort(state.EF[:m, K.E_TAU], kind="stable")
    for e in order:
        kind, rec = _classify(state, int(e), params)
        if kind == "breakout":
            return int(e), rec
        if kind == "pending":
            return None
    return None


def estimate_pB(params: ModelParams, replicas: int, seed: int, start: int = 0, threshold: float | None = None,
                early_stop: bool = True):
    """Probability that an excursion from the hit level is a breakout, by exact sampling.

    Returns (p_hat, (lo, hi)) with a Wilson interval. Replica r uses stream r of ``seed``.
    """
    if replicas < 10_000:
        raise InsufficientSamples(f"need at least 10000 replicas, got {replicas}")
    hits = breakout_flags(params, replicas, seed, start, threshold, early_stop)
    k = int(hits.sum())
    return k / replicas, wilson_interval(k, replicas)


def breakout_flags(params: ModelParams, replicas: int, seed: int, start: int = 0, threshold: float | None = None,
                   early_stop: bool = True) -> np.ndarray:
    thr = params.breakout_threshold if threshold is None else float(threshold)
    out = np.zeros(replicas, dtype=bool)
    for i in range(replicas):
        z, _, tmax, _, truncated, _ = K.excursion_run(
            make_rng(seed, start + i), params.a, params.mu, params.y, params.c0, params.zeta, thr,
            params.law.cdf, params.law.ks, early_stop, MAX_EVENTS)
        out[i] = z > thr or truncated or tmax > params.zeta
    return out


def excursion_values(params: ModelParams, replicas: int, seed: int, start: int = 0):
    """Full (Z', tau_max, truncated) of excursions from the hit level, without early stopping."""
    zs = np.empty(replicas)
    ts = np.empty(replicas)
    tr = np.zeros(replicas, dtype=bool)
    for i in range(replicas):
        z, _, tmax, _, truncated, _ = K.excursion_run(
            make_rng(seed, start + i), params.a, params.mu, params.y, params.c0, params.zeta, math.inf,
            params.law.cdf, params.law.ks, False, MAX_EVENTS)
        zs[i], ts[i], tr[i] = z, tmax, truncated
    return zs, ts, tr


def initial_population(params: ModelParams, rng: np.random.Generator, band: float | None = None,
                       max_tries: int = 1000) -> np.ndarray:
    """Positions with density proportional to exp(-c0 x) sin(pi x / a), accepted when
    |e^{-A} Z - kappa| <= band (default eps^{3/2})."""
    band = params.epsilon**1.5 if band is None else band
    target = params.kappa * math.exp(params.A)
    mean_w = float(np.mean(weight(stationary_positions(20_000, params.a, params.c0, quantile=True),
                                  params.a, params.mu)))
    n = max(1, int(round(target / mean_w)))
    for _ in range(max_tries):
        x = stationary_positions(n, params.a, params.c0, rng)
        z = float(np.sum(weight(x, params.a, params.mu)))
        if abs(z * math.exp(-params.A) - params.kappa) <= band:
            return x
    raise DegenerateEpoch(f"no initial population within the Z band after {max_tries} tries")


def _good_flags(state: PopulationState, params: ModelParams, z_band: float, relaxed: bool) -> dict:
    x = state.positions
    z = float(np.sum(weight(x, state.a, state.mu)))
    yv = float(np.sum(np.exp(state.mu * (x - state.a))))
    return {
        "support_ok": bool(np.all((x > 0.0) & (x < state.a))),
        "relaxed_ok": bool(relaxed and not (state.EI[: state.n_excursions, K.E_STATUS] == K.EXC_ACTIVE).any()),
        "z_band_ok": bool(abs(z * math.exp(-params.A) - params.kappa) <= z_band),
        "y_band_ok": bool(yv <= params.eta * z),
    }


class _ZTrace:
    """Keeps (time, Z, Y) at substep ends for the current epoch."""

    def __init__(self):
        self.t, self.z, self.y = [], [], []

    def __call__(self, times, zs, ys, ns):
        self.t.extend(times.tolist())
        self.z.extend(zs.tolist())
        self.y.extend(ys.tolist())

    def at(self, T):
        k = int(np.searchsorted(np.asarray(self.t), T - 1e-12))
        k = min(k, len(self.t) - 1)
        return self.t[k], self.z[k], self.y[k]

    def clear(self):
        self.t, self.z, self.y = [], [], []


def _stopping_line_values(state: PopulationState, trace: _ZTrace, T: float):
    """Z and Y over the stopping line at T: free particles at the first substep end >= T plus
    the later returns of excursions opened by then."""
    tk, z, yv = trace.at(T)
    m = state.n_excursions
    opened = state.EF[:m, K.E_TAU] <= tk + 1e-12
    z += float(state.EF[:m, K.E_Z][opened].sum())
    yv += float(state.EF[:m, K.E_Y][opened].sum())
    # returns before tk are already counted among the free particles
    r = int(state.C[K.C_NRET])
    early = (state.RF[:r, 0] <= tk) & opened[state.RI[:r, 0]]
    z -= float(state.RF[:r, 1][early].sum())
    yv -= float(state.RF[:r, 2][early].sum())
    return z, yv


def run_epochs(params: ModelParams, positions, n_epochs: int, rng: np.random.Generator,
               z_band: float | None = None, max_time: float | None = None, dt: float | None = None,
               cap: int = 10_000_000, strict: bool = True) -> BarrierPath:
    """Simulate ``n_epochs`` barrier epochs from ``positions`` (distances from the barrier).

    The run stops early, keeping the finished epochs, when ``max_time`` is reached. With
    ``strict`` an empty population raises DegenerateEpoch and a population above ``cap`` raises
    ExplosionGuard; otherwise the path ends at the last finished epoch and ``stopped`` records
    "extinct" or "explosion".
    """
    state = population_from(params, positions, rng, right="tier", dt=dt, cap=cap)
    path = BarrierPath(params.a, params.c0)
    try:
        _epochs(state, params, path, n_epochs, params.epsilon**1.5 if z_band is None else z_band, max_time)
    except (DegenerateEpoch, ExplosionGuard) as exc:
        if strict:
            raise
        path.stopped = "extinct" if isinstance(exc, DegenerateEpoch) else "explosion"
        path.horizon = path.epochs[-1].T_n if path.epochs else 0.0
        return path
    path.horizon = state.time if path.stopped is None else path.horizon
    return path


def _epochs(state, params, path, n_epochs, z_band, max_time):
    a, c0 = params.a, params.c0
    trace = _ZTrace()
    x_cur = 0.0
    hold = a**2.5
    for n in range(1, n_epochs + 1):
        trace.clear()
        found = None
        while found is None:
            if max_time is not None and state.time >= max_time:
                path.stopped = "max_time"
                path.horizon = state.time
                return
            _advance_steps(state, CHECK_EVERY, trace)
            if state.n == 0:
                raise DegenerateEpoch(f"population died out in epoch {n} at t = {state.time:.4g}")
            truncate_overdue(state, params.zeta)
            found = first_breakout(state, params)
        e_star, rec = found
        T = rec.T
        # resolve every excursion opened by T before evaluating the stopping line
        m = state.n_excursions
        opened = np.nonzero(state.EF[:m, K.E_TAU] <= T + state.dt)[0]
        while (state.EI[opened, K.E_STATUS] == K.EXC_ACTIVE).any():
            _advance_steps(state, CHECK_EVERY, trace)
            truncate_overdue(state, params.zeta)
        truncated = bool((state.EI[opened, K.E_STATUS] == K.EXC_TRUNCATED).any())
        Z_T, _ = _stopping_line_values(state, trace, T)
        delta = delta_shift(Z_T, params)
        t_prime = T + rec.tau_max
        deferred = t_prime < state.time - CHECK_EVERY * state.dt - 1e-9
        t_prime = max(t_prime, state.time)
        t_end = max(T + hold, t_prime)
        base = x_cur
        ramp = lambda t, base=base, delta=delta, s=t_prime: base + barrier_shape_default(delta, (t - s) / a**2, c0)
        _advance_to(state, t_end, ramp)
        if state.n == 0:
            raise DegenerateEpoch(f"population died out in epoch {n} at t = {state.time:.4g}")
        x_cur = ramp(t_end)
        path.ramps.append((t_prime, t_end, base, delta))
        path.breakpoints.extend([(t_prime, base), (t_end, x_cur)])
        flags = _good_flags(state, params, z_band, relaxed=t_end > t_prime)
        x = state.positions
        ep = EpochResult(n, t_end, delta, x_cur, float(np.sum(weight(x, a, params.mu))),
                         float(np.sum(np.exp(params.mu * (x - a)))), flags, rec, t_prime, Z_T, deferred, truncated)
        path.epochs.append(ep)
        state.reset_tiers()


def breakout_time(params: ModelParams, positions, rng: np.random.Generator, dt: float | None = None,
                  max_time: float = math.inf, cap: int = 10_000_000) -> BreakoutRecord | None:
    """Run the frozen-barrier system from ``positions`` until its first breakout (None past
    ``max_time``)."""
    state = population_from(params, positions, rng, right="tier", dt=dt, cap=cap)
    trace = _ZTrace()
    while state.time < max_time:
        _advance_steps(state, CHECK_EVERY, trace)
        if state.n == 0:
            raise DegenerateEpoch(f"population died out before a breakout at t = {state.time:.4g}")
        truncate_overdue(state, params.zeta)
        found = first_breakout(state, params)
        if found is not None:
            return found[1]
        trace.clear()
    return None


def breakout_times(params: ModelParams, runs: int, seed: int, start: int = 0, dt: float | None = None):
    """First-breakout times of independent fresh runs (stream r for run r) and their Z_0.

    A run whose population dies out first gets T = nan.
    """
    T = np.empty(runs)
    Z0 = np.empty(runs)
    for i in range(runs):
        rng = make_rng(seed, start + i)
        x = initial_population(params, rng)
        Z0[i] = float(np.sum(weight(x, params.a, params.mu)))
        try:
            T[i] = breakout_time(params, x, rng, dt=dt).T
        except DegenerateEpoch:
            T[i] = math.nan
    return T, Z0


@dataclass
class PathSample:
    """Epochs pooled over independent paths, each started afresh from the initial profile."""

    paths: list
    outcomes: dict

    @property
    def epochs(self) -> list:
        return [ep for p in self.paths for ep in p.epochs]


def collect_paths(params: ModelParams, min_epochs: int, seed: int, max_paths: int, epochs_per_path: int = 50,
                  dt: float | None = None, cap: int = 1_000_000) -> PathSample:
    """Run independent paths (stream r for path r) until ``min_epochs`` epochs are finished.

    Paths that die out or exceed ``cap`` keep their finished epochs. Stops after ``max_paths``.
    """
    paths, outcomes = [], {"complete": 0, "extinct": 0, "explosion": 0}
    total = 0
    for r in range(max_paths):
        rng = make_rng(seed, r)
        x = initial_population(params, rng)
        path = run_epochs(params, x, epochs_per_path, rng, dt=dt, cap=cap, strict=False)
        key = path.stopped or "complete"
        outcomes[key] = outcomes.get(key, 0) + 1
        paths.append(path)
        total += len(path.epochs)
        if total >= min_epochs:
            break
    return PathSample(paths, outcomes)


def _advance_steps(state: PopulationState, nsteps: int, trace: _ZTrace) -> None:
    zs, ys, ns = state.step(nsteps)
    trace(state.time - state.dt * np.arange(nsteps - 1, -1, -1), zs, ys, ns)


def _advance_to(state: PopulationState, until: float, barrier_fn) -> None:
    h = state.dt
    while state.time < until - 1e-12:
        nb = int(min(256, max(1, math.ceil((until - state.time) / h - 1e-9))))
        last = min(h, until - state.time - (nb - 1) * h)
        if nb > 1:
            times = state.time + h * np.arange(1, nb)
            state.step(nb - 1, h, np.array([barrier_fn(t) for t in times]))
        state.step(1, last, np.array([barrier_fn(state.time + last)]))


def rescale_path(path: BarrierPath, params: ModelParams, t_max: float | None = None, n_points: int = 201):
    """Sample X(t a^3 c0^2 / pi^2) - A t and the epoch-end version on a uniform rescaled grid.

    Returns (t, raw_time, X_raw, X_rescaled, J_rescaled).
    """
    scale = params.a**3 * params.c0**2 / math.pi**2
    t_max = path.horizon / scale if t_max is None else t_max
    t = np.linspace(0.0, t_max, n_points)
    raw = t * scale
    x_raw = path.values(raw)
    j_raw = np.array([path.jump_value(float(s)) for s in raw])
    return t, raw, x_raw, x_raw - params.A * t, j_raw - params.A * t


def time_scale(params: ModelParams) -> float:
    """Raw time per unit of rescaled time, a^3 c0^2 / pi^2."""
    return params.a**3 * params.c0**2 / math.pi**2


def epoch_increments(path: BarrierPath, params: ModelParams, window: float) -> np.ndarray:
    """Rescaled increments X((k+1) w) - X(k w) - A w over disjoint windows of rescaled length w."""
    scale = time_scale(params)
    k = int(path.horizon / scale // window)
    if k < 1:
        raise InsufficientSamples("path shorter than one window")
    pts = path.values(np.arange(k + 1) * window * scale)
    return np.diff(pts) - params.A * window


def jump_sizes(path: BarrierPath) -> np.ndarray:
    return np.array([ep.delta for ep in path.epochs])
