"""Branching Brownian motion with drift, an absorbing barrier and tier bookkeeping.

Branch times are exact exponential clocks; motion between events uses Gaussian substeps and
boundary crossings inside a substep are detected with the Brownian bridge formula.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from bbmlab import _kernels as K
from bbmlab.errors import DomainError, ExplosionGuard
from bbmlab.params import ModelParams, ReproductionLaw

DEFAULT_CAP = 10_000_000


def make_rng(seed: int, stream_index: int = 0) -> np.random.Generator:
    """Independent stream for replica ``stream_index`` of a run seeded with ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(stream_index),)))


def sample_offspring(law: ReproductionLaw, rng: np.random.Generator) -> int:
    u = rng.random()
    return int(law.ks[np.searchsorted(law.cdf, u, side="right")])


def bridge_hit_prob(x0: float, x1: float, dt: float, b: float, lower: bool = False) -> float:
    """Probability that a Brownian bridge from x0 to x1 over time dt touches level b.

    By default b is an upper level; with ``lower`` it is a lower level.
    """
    if not dt > 0:
        raise DomainError(f"dt must be positive, got {dt}")
    d0, d1 = (x0 - b, x1 - b) if lower else (b - x0, b - x1)
    if d0 <= 0 or d1 <= 0:
        return 1.0
    return math.exp(-2.0 * d0 * d1 / dt)


@dataclass(frozen=True)
class Particle:
    id: int
    parent: int
    position: float
    tier: int
    tier_clock: float
    birth_time: float
    alive: bool = True


class PopulationState:
    """Particles of one replica plus excursion and event bookkeeping.

    Positions are absolute; the left barrier sits at ``barrier_offset`` and the hit level at
    ``barrier_offset + a``. ``right`` selects what the hit level does: ``"kill"`` absorbs,
    ``"tier"`` advances the tier and opens an excursion, ``"none"`` ignores it.
    """

    def __init__(self, positions, a: float, mu: float, law: ReproductionLaw | None = None,
                 rng: np.random.Generator | None = None, y: float = 8.0, c0: float | None = None,
                 right: str = "tier", dt: float | None = None, time: float = 0.0,
                 barrier_offset: float = 0.0, log_events: bool = False, cap: int = DEFAULT_CAP):
        if right not in ("kill", "tier", "none"):
            raise DomainError(f"unknown right boundary mode {right!r}")
        self.law = law or ReproductionLaw.binary()
        self.a, self.mu, self.y = float(a), float(mu), float(y)
        self.c0 = float(c0) if c0 is not None else math.sqrt(2.0 * max(self.law_m, 0.0))
        self.right = right
        self.dt = float(dt) if dt is not None else self.a * self.a / 400.0
        self.time = float(time)
        self.start_time = float(time)
        self.barrier_offset = float(barrier_offset)
        self.log_events = bool(log_events)
        self.cap = int(cap)
        self.rng = rng if rng is not None else make_rng(0)
        self._cdf = self.law.cdf.astype(np.float64)
        self._ks = self.law.ks.astype(np.int64)
        pos = np.asarray(positions, dtype=float).ravel() + self.barrier_offset
        n = len(pos)
        capn = max(64, 2 * n)
        self.PF = np.zeros((capn, 3))
        self.PI = np.zeros((capn, 5), dtype=np.int64)
        self.PF[:n, 0] = pos
        self.PF[:n, 1] = self.rng.standard_exponential(n)
        self.PI[:n, 1] = -1
        self.PI[:n, 2] = np.arange(n)
        self.PI[:n, 3] = -1
        self.EF = np.zeros((16, 6))
        self.EI = np.zeros((16, 4), dtype=np.int64)
        self.RF = np.zeros((64, 4))
        self.RI = np.zeros((64, 1), dtype=np.int64)
        self.LF = np.zeros((64 if log_events else 1, 2))
        self.LI = np.zeros((64 if log_events else 1, 4), dtype=np.int64)
        self.C = np.zeros(K.N_COUNTERS, dtype=np.int64)
        self.C[K.C_N] = n
        self.C[K.C_NEXTID] = n
        if self.right == "kill":
            self._kill_above()
        elif self.right == "tier":
            self._hit_above()

    @property
    def law_m(self) -> float:
        return float(np.sum((self.law.ks - 1) * self.law.qs))

    @property
    def slope(self) -> float:
        return self.c0 - self.mu

    @property
    def n(self) -> int:
        return int(self.C[K.C_N])

    @property
    def absolute_positions(self) -> np.ndarray:
        return self.PF[: self.n, 0].copy()

    @property
    def positions(self) -> np.ndarray:
        """Distances from the barrier."""
        return self.PF[: self.n, 0] - self.barrier_offset

    @property
    def tiers(self) -> np.ndarray:
        return self.PI[: self.n, 0].copy()

    @property
    def in_excursion(self) -> np.ndarray:
        return self.PI[: self.n, 1] >= 0

    @property
    def exit_total(self) -> int:
        return int(self.C[K.C_R])

    def particles(self) -> list[Particle]:
        out = []
        for i in range(self.n):
            out.append(Particle(int(self.PI[i, 2]), int(self.PI[i, 3]), float(self.PF[i, 0] - self.barrier_offset),
                                int(self.PI[i, 0]), math.nan, math.nan))
        return out

    def _grow(self):
        def grow(arr, need):
            if need <= arr.shape[0]:
                return arr
            out = np.zeros((max(need, 2 * arr.shape[0]), arr.shape[1]), dtype=arr.dtype)
            out[: arr.shape[0]] = arr
            return out

        kmax = int(self._ks[-1])
        self.PF = grow(self.PF, self.n + kmax + 1)
        self.PI = grow(self.PI, self.n + kmax + 1)
        self.EF = grow(self.EF, int(self.C[K.C_NEXC]) + self.n + 1)
        self.EI = grow(self.EI, int(self.C[K.C_NEXC]) + self.n + 1)
        self.RF = grow(self.RF, int(self.C[K.C_NRET]) + 2)
        self.RI = grow(self.RI, int(self.C[K.C_NRET]) + 2)
        if self.log_events:
            self.LF = grow(self.LF, int(self.C[K.C_NLOG]) + 4)
            self.LI = grow(self.LI, int(self.C[K.C_NLOG]) + 4)

    def _hit_above(self):
        self._grow()
        if self.log_events:
            n = self.n
            hit = (self.PI[:n, 4] == 0) & (self.PI[:n, 1] < 0) & (self.PF[:n, 0] - self.barrier_offset >= self.a)
            for i in np.nonzero(hit)[0]:
                self._grow()
                K._log(self.LF, self.LI, self.C, self.time, K.EV_HIT_A,
                       self.PI[i, 2], self.PI[i, 3], self.PF[i, 0], self.PI[i, 0])
        K.hit_above(self.rng, self.PF, self.PI, self.EF, self.EI, self.C,
                    self.time, self.barrier_offset, self.a, self.y, True)

    def _kill_above(self):
        n = self.n
        rel = self.PF[:n, 0] - self.barrier_offset
        hit = rel >= self.a
        if not hit.any():
            return
        if self.log_events:
            for i in np.nonzero(hit)[0]:
                self._grow()
                K._log(self.LF, self.LI, self.C, self.time, K.EV_KILL_RIGHT,
                                          self.PI[i, 2], self.PI[i, 3], self.PF[i, 0], self.PI[i, 0])
        keep = ~hit
        m = int(keep.sum())
        self.PF[:m] = self.PF[:n][keep]
        self.PI[:m] = self.PI[:n][keep]
        self.C[K.C_N] = m
        self.C[K.C_R] += int(hit.sum())
        self.C[K.C_KILL_RIGHT] += int(hit.sum())

    # -------------------------------------------------------------- stepping
    def step(self, nsteps: int, h: float | None = None, barrier=None, zs=None, ys=None, ns=None):
        """Run ``nsteps`` substeps; ``barrier`` gives absolute barrier values at step ends."""
        h = self.dt if h is None else float(h)
        if barrier is None:
            Xb = np.full(nsteps + 1, self.barrier_offset)
        else:
            Xb = np.empty(nsteps + 1)
            Xb[0] = self.barrier_offset
            Xb[1:] = barrier
        zs = np.empty(nsteps) if zs is None else zs
        ys = np.empty(nsteps) if ys is None else ys
        ns = np.empty(nsteps, dtype=np.int64) if ns is None else ns
        k0, resume = 0, -1
        while True:
            done, status, resume = K.run_steps(
                self.rng, self.PF, self.PI, self.EF, self.EI, self.RF, self.RI, self.LF, self.LI,
                self.C, self.time, h, Xb, k0, nsteps, resume, self.a, self.mu, self.y, self.slope,
                self._cdf, self._ks, self.right == "kill", self.right == "tier",
                self.log_events, self.cap, zs, ys, ns)
            if status == K.STATUS_GROW:
                self._grow()
                k0 = done
                continue
            if status == K.STATUS_CAP:
                raise ExplosionGuard(f"particle count exceeded cap {self.cap} near t = {self.time + done * h:.4g}")
            break
        self.time += nsteps * h
        self.barrier_offset = float(Xb[nsteps])
        return zs, ys, ns

    # -------------------------------------------------------------- tables
    @property
    def n_excursions(self) -> int:
        return int(self.C[K.C_NEXC])

    def excursions(self) -> dict:
        m = self.n_excursions
        return {
            "tau": self.EF[:m, K.E_TAU].copy(),
            "Z": self.EF[:m, K.E_Z].copy(),
            "Y": self.EF[:m, K.E_Y].copy(),
            "tau_max": self.EF[:m, K.E_TMAX].copy(),
            "pending": self.EI[:m, K.E_PENDING].copy(),
            "tier": self.EI[:m, K.E_ROOT_TIER].copy(),
            "fugitive": self.EI[:m, K.E_FUGITIVE].copy(),
            "status": self.EI[:m, K.E_STATUS].copy(),
        }

    def returns(self) -> dict:
        m = int(self.C[K.C_NRET])
        return {"time": self.RF[:m, 0].copy(), "w": self.RF[:m, 1].copy(), "y": self.RF[:m, 2].copy(),
                "position": self.RF[:m, 3].copy(), "excursion": self.RI[:m, 0].copy()}

    def event_log(self) -> list[tuple]:
        m = int(self.C[K.C_NLOG])
        return [(float(self.LF[k, 0]), K.EVENT_NAMES[self.LI[k, 0]], int(self.LI[k, 1]), int(self.LI[k, 2]),
                 float(self.LF[k, 1]), int(self.LI[k, 3])) for k in range(m)]

    def write_event_log(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            fh.write("# schema=1\n")
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["time", "event_type", "particle_id", "parent_id", "position", "tier"])
            for t, kind, pid, par, pos, tier in self.event_log():
                w.writerow([repr(t), kind, pid, par, repr(pos), tier])
        return path

    def reset_tiers(self):
        """Start a fresh tier count: every particle becomes tier 0 and excursions are dropped."""
        n = self.n
        self.PI[:n, 0] = 0
        self.PI[:n, 1] = -1
        self.C[K.C_NEXC] = 0
        self.C[K.C_NRET] = 0
        if self.right == "tier":
            self._hit_above()


def population_from(params: ModelParams, positions, rng=None, **kw) -> PopulationState:
    kw.setdefault("y", params.y)
    return PopulationState(positions, params.a, params.mu, law=params.law, rng=rng, c0=params.c0, **kw)


def advance(state: PopulationState, until: float, observers=(), barrier_fn=None) -> PopulationState:
    """Move ``state`` forward to time ``until``.

    ``barrier_fn(t)`` gives the absolute barrier position at time t (default: frozen).
    Each observer is called as ``obs(times, Z, Y, counts)`` after every block of substeps,
    with the functionals of the particles outside excursions at the substep ends.
    """
    if until < state.time - 1e-12:
        raise DomainError(f"cannot advance backwards from {state.time} to {until}")
    h = state.dt
    remaining = until - state.time
    nfull = int(math.floor(remaining / h + 1e-9))
    block = 256
    while nfull > 0:
        nb = min(block, nfull)
        times = state.time + h * np.arange(1, nb + 1)
        bar = None if barrier_fn is None else np.array([barrier_fn(t) for t in times])
        zs, ys, ns = state.step(nb, h, bar)
        for obs in observers:
            obs(times, zs, ys, ns)
        nfull -= nb
    last = until - state.time
    if last > 1e-12:
        bar = None if barrier_fn is None else np.array([barrier_fn(until)])
        zs, ys, ns = state.step(1, last, bar)
        for obs in observers:
            obs(np.array([until]), zs, ys, ns)
    return state


def weight(x, a: float, mu: float):
    """w(x) = a exp(mu (x - a)) sin(pi x / a)."""
    x = np.asarray(x, dtype=float)
    return a * np.exp(mu * (x - a)) * np.sin(np.pi * x / a)


def functional_Z(state: PopulationState, include_excursions: bool = True) -> float:
    x = state.positions
    if not include_excursions:
        x = x[~state.in_excursion]
    return float(np.sum(weight(x, state.a, state.mu)))


def functional_Y(state: PopulationState, include_excursions: bool = True) -> float:
    x = state.positions
    if not include_excursions:
        x = x[~state.in_excursion]
    return float(np.sum(np.exp(state.mu * (x - state.a))))


def exit_count(state: PopulationState, window=None) -> int:
    """Number of tier 0 hits of the upper level (or kills there) inside ``window``."""
    if window is None:
        return state.exit_total
    s, t = window
    if not state.log_events:
        if s <= state.start_time and t >= state.time:
            return state.exit_total
        raise DomainError("a time window needs an event log (log_events=True)")
    count = 0
    for time, kind, _, _, _, tier in state.event_log():
        if s <= time <= t and (kind == "kill_right" or (kind == "hit_a" and tier == 0)):
            count += 1
    return count


def stationary_positions(n: int, a: float, rate: float, rng=None, quantile: bool = False) -> np.ndarray:
    """n positions with density proportional to exp(-rate x) sin(pi x / a) on (0, a).

    With ``quantile`` the midpoints of n equal-mass cells are returned instead of draws.
    """
    grid = np.linspace(0.0, a, 20001)
    dens = np.exp(-rate * grid) * np.sin(np.pi * grid / a)
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    cdf /= cdf[-1]
    u = (np.arange(n) + 0.5) / n if quantile else rng.random(n)
    return np.interp(u, cdf, grid)
