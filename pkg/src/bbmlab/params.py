"""Reproduction laws, the model parameter bundle and derived constants."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml
from scipy.optimize import brentq

from bbmlab.errors import ConfigError, DomainError, NonSupercritical

PROB_TOL = 1e-12


@dataclass(frozen=True)
class ReproductionLaw:
    """Offspring distribution with finite support.

    ``probs`` maps an offspring count k >= 0 to q(k).
    """

    probs: tuple[tuple[int, float], ...]

    def __init__(self, probs):
        if isinstance(probs, dict):
            items = probs.items()
        else:
            items = probs
        merged: dict[int, float] = {}
        for k, q in items:
            k = int(k)
            q = float(q)
            if k < 0:
                raise DomainError(f"offspring count must be >= 0, got {k}")
            if q < 0:
                raise DomainError(f"probability q({k}) = {q} is negative")
            merged[k] = merged.get(k, 0.0) + q
        total = sum(merged.values())
        if abs(total - 1.0) > PROB_TOL:
            raise DomainError(f"offspring probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "probs", tuple(sorted((k, q) for k, q in merged.items() if q > 0)))

    @classmethod
    def binary(cls) -> "ReproductionLaw":
        return cls({2: 1.0})

    @property
    def ks(self) -> np.ndarray:
        return np.array([k for k, _ in self.probs], dtype=np.int64)

    @property
    def qs(self) -> np.ndarray:
        return np.array([q for _, q in self.probs], dtype=np.float64)

    @property
    def cdf(self) -> np.ndarray:
        c = np.cumsum(self.qs)
        c[-1] = 1.0
        return c

    @property
    def max_offspring(self) -> int:
        return int(self.ks.max())

    def generating_function(self, s):
        """f(s) = sum_k q(k) s^k."""
        s = np.asarray(s, dtype=float)
        out = np.zeros_like(s)
        for k, q in self.probs:
            out = out + q * s**k
        return out

    def extinction_probability(self) -> float:
        """Smallest root of f(s) = s on [0, 1]."""
        if dict(self.probs).get(0, 0.0) == 0.0:
            return 0.0
        g = lambda s: float(self.generating_function(s)) - s
        # f(s) - s > 0 at 0 and has a root below 1 when supercritical
        grid = np.linspace(0.0, 1.0, 2001)
        vals = np.array([g(s) for s in grid])
        idx = np.nonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
        if len(idx) == 0:
            return 1.0
        i = idx[0]
        if vals[i + 1] == 0.0:
            return float(grid[i + 1])
        return float(brentq(g, grid[i], grid[i + 1], xtol=1e-15))


def derive_constants(law: ReproductionLaw) -> tuple[float, float, float]:
    """Return (m, m2, c0) for the law, with m = E[L-1], m2 = E[L(L-1)], c0 = sqrt(2m)."""
    ks, qs = law.ks, law.qs
    m = float(np.sum((ks - 1) * qs))
    m2 = float(np.sum(ks * (ks - 1) * qs))
    if m <= 0:
        raise NonSupercritical(f"mean offspring minus one is {m}, need > 0")
    return m, m2, math.sqrt(2.0 * m)


def drift_mu(a: float, m: float) -> float:
    """Drift of the particles in an interval of width a: sqrt(2m - pi^2/a^2)."""
    if a <= 0:
        raise DomainError(f"interval width must be positive, got {a}")
    d = 2.0 * m - math.pi**2 / a**2
    if d < 0:
        # allow rounding noise at the boundary a = pi/c0
        if d > -1e-12:
            return 0.0
        raise DomainError(f"a = {a} is below pi/c0; mu would be imaginary")
    return math.sqrt(d)


def a_from_N(N: float, A: float, c0: float) -> float:
    """a = (log N + 3 log log N - A) / c0."""
    if N <= math.e:
        raise DomainError(f"N must exceed e, got {N}")
    a = (math.log(N) + 3.0 * math.log(math.log(N)) - A) / c0
    if a <= 0:
        raise DomainError(f"resulting interval width {a} is not positive")
    return a


def N_from_a(a: float, A: float, c0: float) -> float:
    """Invert a_from_N by root finding on log N."""
    target = c0 * a + A

    def g(logN):
        return logN + 3.0 * math.log(logN) - target

    # g is increasing for logN > 0; g(1) = 1 - target
    if target <= 1.0:
        raise DomainError(f"no N > e maps to a = {a} with A = {A}")
    logN = brentq(g, 1.0, max(2.0, target), xtol=1e-14, rtol=1e-15)
    return math.exp(logN)


@dataclass(frozen=True)
class ModelParams:
    a: float
    A: float
    epsilon: float
    eta: float
    y: float = 8.0
    zeta: float = 25.0
    kappa: float = 1.0
    law: ReproductionLaw = field(default_factory=ReproductionLaw.binary)
    strict: bool = False

    def __post_init__(self):
        for name in ("epsilon", "eta", "y", "zeta", "kappa"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        mu = drift_mu(self.a, self.m)
        if self.strict and mu < self.c0 / 2:
            raise DomainError(f"mu = {mu:.4g} < c0/2; a is too small for the strict regime")

    @classmethod
    def from_N(cls, N: float, A: float, **kw) -> "ModelParams":
        law = kw.get("law", ReproductionLaw.binary())
        _, _, c0 = derive_constants(law)
        return cls(a=a_from_N(N, A, c0), A=A, **kw)

    @property
    def m(self) -> float:
        return derive_constants(self.law)[0]

    @property
    def m2(self) -> float:
        return derive_constants(self.law)[1]

    @property
    def c0(self) -> float:
        return derive_constants(self.law)[2]

    @property
    def mu(self) -> float:
        return drift_mu(self.a, self.m)

    @property
    def N(self) -> float:
        return N_from_a(self.a, self.A, self.c0)

    @property
    def breakout_threshold(self) -> float:
        return self.epsilon * math.exp(self.A)

    def replace(self, **changes) -> "ModelParams":
        from dataclasses import replace

        return replace(self, **changes)


def validate_regime(p: ModelParams, C: float = 1.0) -> list[str]:
    """List which asymptotic parameter constraints fail (never raises).

    The three checks are eps <= C A^-17, eps >= C e^{-A/6} and eta <= e^{-2A}.
    """
    out = []
    if p.epsilon > C * p.A ** (-17):
        out.append("eps_upper violated")
    if p.epsilon < C * math.exp(-p.A / 6.0):
        out.append("eps_lower violated")
    if p.eta > math.exp(-2.0 * p.A):
        out.append("eta violated")
    if p.mu < p.c0 / 2:
        out.append("mu below c0/2")
    if p.y >= p.a:
        out.append("critical line offset y >= a")
    for msg in out:
        warnings.warn(f"regime: {msg}", stacklevel=2)
    return out


# preset used by the breakout experiments; it deliberately violates the asymptotic constraints
DESK_PRESET = dict(a=8.0, A=3.0, epsilon=0.2, kappa=1.0, eta=0.05, y=6.0, zeta=20.0)


def desk_params(**overrides) -> ModelParams:
    kw = dict(DESK_PRESET)
    kw.update(overrides)
    return ModelParams(**kw)


CONFIG_KEYS = {
    "reproduction_law", "a", "N", "A", "epsilon", "eta", "y", "zeta", "kappa", "seed",
    "replicas", "horizon", "workers", "output_dir", "command", "options",
}


def parse_law(spec) -> ReproductionLaw:
    """Accept {k: q}, [[k, q], ...] or a "k:q, k:q" string."""
    if isinstance(spec, ReproductionLaw):
        return spec
    if isinstance(spec, str):
        items = []
        for part in spec.replace(";", ",").split(","):
            part = part.strip()
            if not part:
                continue
            k, q = part.split(":")
            items.append((int(k), float(q)))
        return ReproductionLaw(items)
    if isinstance(spec, dict):
        return ReproductionLaw({int(k): float(v) for k, v in spec.items()})
    return ReproductionLaw([(int(k), float(q)) for k, q in spec])


def load_config(source) -> dict:
    """Load a key/value config (YAML or JSON text, a path, or a dict).

    Returns a dict with ``params`` (ModelParams) plus the raw run keys. Exactly one of
    ``a`` and ``N`` must be given; ``N`` requires ``A``.
    """
    if isinstance(source, dict):
        raw = dict(source)
    else:
        text = Path(source).read_text() if Path(str(source)).exists() else str(source)
        try:
            raw = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("config must be a key/value mapping")
    unknown = set(raw) - CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    has_a, has_N = raw.get("a") is not None, raw.get("N") is not None
    if has_a == has_N:
        raise ConfigError("give exactly one of 'a' or 'N' (with 'A')")
    if "A" not in raw:
        raise ConfigError("'A' is required")
    law = parse_law(raw.get("reproduction_law", {2: 1.0}))
    kw = {k: float(raw[k]) for k in ("epsilon", "eta", "y", "zeta", "kappa") if k in raw}
    missing = {"epsilon", "eta"} - set(kw)
    if missing:
        raise ConfigError(f"missing config keys: {sorted(missing)}")
    try:
        if has_N:
            params = ModelParams.from_N(float(raw["N"]), float(raw["A"]), law=law, **kw)
        else:
            params = ModelParams(a=float(raw["a"]), A=float(raw["A"]), law=law, **kw)
    except (DomainError, NonSupercritical) as exc:
        raise ConfigError(str(exc)) from exc
    out = {k: v for k, v in raw.items() if k not in {"a", "N", "A", "epsilon", "eta", "y", "zeta", "kappa", "reproduction_law"}}
    out["params"] = params
    return out
