"""Command-line entry point: runs experiments and verification suites, writes CSV outputs and a
manifest with content hashes of everything written."""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import multiprocessing as mp
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from bbmlab import barrier as bar
from bbmlab import checks
from bbmlab.critical_line import sample_counts, scaled_count, solve_traveling_wave
from bbmlab.engine import make_rng
from bbmlab.errors import BBMLabError, ConfigError
from bbmlab.levy import LevySpec, analytic_cumulant, sample_increments, simulate_levy
from bbmlab.nbbm import simulate_nbbm, speed_and_cumulants
from bbmlab.params import ModelParams, desk_params, load_config, validate_regime
from bbmlab.stats import k_statistics, wilson_interval

log = logging.getLogger("bbmlab")

SCHEMA = "# schema=1"
COMMANDS = ("numerics-check", "critical-line", "breakout-rate", "barrier-path", "nbbm", "levy", "verify")
STOCHASTIC = {"critical-line", "breakout-rate", "barrier-path", "nbbm", "levy"}
VERIFY_SUITES = tuple(checks.SUITES) + ("wave",)
CHUNK = 256


@dataclass
class ExperimentConfig:
    command: str
    params: ModelParams
    replicas: int = 1
    horizon: float | None = None
    output_dir: Path = Path("out")
    seed: int | None = None
    workers: int = 1
    options: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.replicas < 1:
            raise ConfigError(f"replicas must be at least 1, got {self.replicas}")
        if self.workers < 1:
            raise ConfigError(f"workers must be at least 1, got {self.workers}")
        if self.command in STOCHASTIC and self.seed is None:
            raise ConfigError(f"command {self.command!r} needs a seed")

    def echo(self) -> dict:
        """Config as written to the manifest; the worker count is left out on purpose."""
        p = self.params
        return {
            "command": self.command,
            "params": {"a": p.a, "A": p.A, "epsilon": p.epsilon, "eta": p.eta, "y": p.y, "zeta": p.zeta,
                       "kappa": p.kappa, "reproduction_law": {str(k): q for k, q in zip(p.law.ks.tolist(), p.law.qs.tolist())}},
            "replicas": self.replicas,
            "horizon": self.horizon,
            "seed": self.seed,
            "options": self.options,
        }


def git_blob_hash(data: bytes) -> str:
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def _fmt(v) -> str:
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [SCHEMA, ",".join(header)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_manifest(cfg: ExperimentConfig, files: list[Path]) -> Path:
    out = cfg.output_dir / "manifest.json"
    write_json(out, {"config": cfg.echo(), "outputs": {f.name: git_blob_hash(f.read_bytes()) for f in sorted(files)}})
    return out


def _pool_map(fn, tasks, workers):
    """Ordered map over tasks; results come back in task order whatever the worker count."""
    if workers == 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with mp.get_context("fork").Pool(workers) as pool:
        return pool.map(fn, tasks, chunksize=1)


def _chunks(n):
    return [(s, min(CHUNK, n - s)) for s in range(0, n, CHUNK)]


# ------------------------------------------------------------------ commands

def _checks_rows(results):
    return [(suite, c.name, c.value, c.tolerance, c.passed) for suite, rows in results for c in rows]


def _write_checks(cfg, results) -> tuple[list[Path], bool]:
    path = cfg.output_dir / "checks.csv"
    write_csv(path, ["suite", "name", "value", "tolerance", "passed"], _checks_rows(results))
    ok = all(c.passed for _, rows in results for c in rows)
    for suite, rows in results:
        for c in rows:
            print(f"{'PASS' if c.passed else 'FAIL'} {suite}: {c.name} value={c.value:.3e} tol={c.tolerance:.3e}")
    return [path], ok


def wave_suite(params: ModelParams) -> list[checks.Check]:
    wave = solve_traveling_wave(params.law)
    return [checks._row("wave_residual", wave.residual, 1e-8)]


def cmd_numerics_check(cfg):
    results = [(name, fn()) for name, fn in checks.SUITES.items()]
    return _write_checks(cfg, results)


def cmd_verify(cfg):
    suite = cfg.options.get("suite")
    if suite not in VERIFY_SUITES:
        raise ConfigError(f"unknown suite {suite!r}; choose from {', '.join(VERIFY_SUITES)}")
    rows = wave_suite(cfg.params) if suite == "wave" else checks.SUITES[suite]()
    return _write_checks(cfg, [(suite, rows)])


def _critical_chunk(task):
    y, law, seed, start, n, c0 = task
    return sample_counts(y, law, n, seed, start, c0)


def cmd_critical_line(cfg):
    p = cfg.params
    y = float(cfg.options.get("y", p.y))
    tasks = [(y, p.law, cfg.seed, s, n, p.c0) for s, n in _chunks(cfg.replicas)]
    parts = _pool_map(_critical_chunk, tasks, cfg.workers)
    counts = np.concatenate([c for c, _ in parts])
    flags = np.concatenate([f for _, f in parts])
    W = scaled_count(counts, y, p.c0)
    out = cfg.output_dir / "critical_line.csv"
    write_csv(out, ["replicate", "y", "Z_y", "W_y", "discarded_flag"],
              [(r, y, int(counts[r]), W[r], flags[r]) for r in range(cfg.replicas)])
    wave = solve_traveling_wave(p.law)
    xs = np.linspace(-10.0, 10.0, 401)
    wpath = cfg.output_dir / "wave.csv"
    write_csv(wpath, ["x", "psi"], zip(xs, wave(xs)))
    return [out, wpath], True


def _breakout_chunk(task):
    params, seed, start, n = task
    return bar.excursion_values(params, n, seed, start)


def cmd_breakout_rate(cfg):
    p = cfg.params
    tasks = [(p, cfg.seed, s, n) for s, n in _chunks(cfg.replicas)]
    parts = _pool_map(_breakout_chunk, tasks, cfg.workers)
    z = np.concatenate([q[0] for q in parts])
    tau = np.concatenate([q[1] for q in parts])
    trunc = np.concatenate([q[2] for q in parts])
    flag = (z > p.breakout_threshold) | trunc | (tau > p.zeta)
    out = cfg.output_dir / "excursions.csv"
    write_csv(out, ["replicate", "Z_prime", "tau_max", "truncated", "breakout"],
              [(r, z[r], tau[r], trunc[r], flag[r]) for r in range(cfg.replicas)])
    k = int(flag.sum())
    lo, hi = wilson_interval(k, cfg.replicas)
    pB = k / cfg.replicas
    summary = {"replicas": cfg.replicas, "breakouts": k, "p_B": pB, "ci_low": lo, "ci_high": hi,
               "scaled": pB * p.epsilon * math.exp(p.A) / (math.pi / p.c0)}
    spath = cfg.output_dir / "summary.json"
    write_json(spath, summary)
    return [out, spath], True


def _barrier_path(task):
    params, seed, r, n_epochs, max_time, dt, cap = task
    rng = make_rng(seed, r)
    x = bar.initial_population(params, rng)
    return bar.run_epochs(params, x, n_epochs, rng, max_time=max_time, dt=dt, cap=cap, strict=False)


def cmd_barrier_path(cfg):
    p = cfg.params
    o = cfg.options
    n_epochs = int(o.get("epochs", 10))
    dt = float(o.get("dt", p.a**2 / 100))
    cap = int(o.get("cap", 1_000_000))
    tasks = [(p, cfg.seed, r, n_epochs, cfg.horizon, dt, cap) for r in range(cfg.replicas)]
    paths = _pool_map(_barrier_path, tasks, cfg.workers)
    erows, prows = [], []
    for r, path in enumerate(paths):
        for ep in path.epochs:
            flags = ";".join(k for k, v in sorted(ep.good_flags.items()) if v)
            erows.append((r, ep.n, ep.T_n, ep.delta, ep.X_end, ep.Z_end, ep.Y_end, flags))
        if path.horizon > 0:
            t, _, x_raw, x_res, j_res = bar.rescale_path(path, p, n_points=int(o.get("points", 201)))
            prows.extend((r, *row) for row in zip(t, x_raw, x_res, j_res))
    epath = cfg.output_dir / "epochs.csv"
    lines = [SCHEMA, "path,epoch,n,T_n,delta,X_end,Z_end,Y_end,good_flags"]
    lines += [f"{r},{i},{n},{_fmt(T)},{_fmt(d)},{_fmt(X)},{_fmt(Z)},{_fmt(Y)},{f}"
              for i, (r, n, T, d, X, Z, Y, f) in enumerate(erows)]
    epath.write_text("\n".join(lines) + "\n")
    ppath = cfg.output_dir / "path.csv"
    write_csv(ppath, ["path", "t", "X_raw", "X_rescaled", "J_rescaled"], prows)
    spath = cfg.output_dir / "paths.json"
    write_json(spath, {"outcomes": [q.stopped or "complete" for q in paths], "epochs": [len(q.epochs) for q in paths]})
    return [epath, ppath, spath], True


def _nbbm_run(task):
    N, law, horizon, seed, dt, statistic = task
    return simulate_nbbm(N, law, horizon, make_rng(seed, N), dt=dt, statistic=statistic)


def cmd_nbbm(cfg):
    o = cfg.options
    Ns = [int(n) for n in np.atleast_1d(o.get("N", [100, 1000]))]
    horizon = float(cfg.horizon or 2000.0)
    burn_in = float(o.get("burn_in", horizon / 4))
    dt = float(o.get("dt", 0.01))
    statistic = o.get("statistic", "barycenter")
    window = o.get("window")
    series = _pool_map(_nbbm_run, [(N, cfg.params.law, horizon, cfg.seed, dt, statistic) for N in Ns], cfg.workers)
    fpath = cfg.output_dir / "front.csv"
    write_csv(fpath, ["N", "t", "front", "count"],
              [(s.N, t, f, c) for s in series for t, f, c in zip(s.times, s.front_positions, s.counts)])
    rows = []
    for s in series:
        # ten windows in the recorded span after the burn-in; the slack keeps flooring from losing one
        w = float(window) if window is not None else (s.times[-1] - s.times[s.times > burn_in][0]) / 10.0 * (1 - 1e-9)
        r = speed_and_cumulants(s, burn_in, w)
        rows.append((s.N, r["v_hat"], r["k2"], r["k3"], r["k4"], r["v_hat"] - 1.96 * r["v_se"], r["v_hat"] + 1.96 * r["v_se"]))
    spath = cfg.output_dir / "nbbm_summary.csv"
    write_csv(spath, ["N", "v_hat", "k2", "k3", "k4", "ci_low", "ci_high"], rows)
    return [fpath, spath], True


def _levy_chunk(task):
    spec, t, delta, seed, start, n = task
    return sample_increments(spec, t, delta, n, seed, stream=start)


def cmd_levy(cfg):
    o = cfg.options
    spec = LevySpec(c0=cfg.params.c0, kappa=cfg.params.kappa)
    delta = float(o.get("delta", 1e-4))
    t = float(cfg.horizon or 1.0)
    path = simulate_levy(spec, t, delta, make_rng(cfg.seed, 0), n_points=int(o.get("points", 101)))
    lpath = cfg.output_dir / "levy.csv"
    write_csv(lpath, ["t", "L"], zip(path.times, path.values))
    # stream offset keeps the cumulant sample independent of the path above
    tasks = [(spec, 1.0, delta, cfg.seed, 1 + s, n) for s, n in _chunks(cfg.replicas)]
    L1 = np.concatenate(_pool_map(_levy_chunk, tasks, cfg.workers))
    files = [lpath]
    if L1.size >= 10:
        k = k_statistics(L1, 4)
        spath = cfg.output_dir / "levy_summary.csv"
        write_csv(spath, ["order", "sample", "analytic"],
                  [(n, k[n - 1], analytic_cumulant(spec, n)) for n in (2, 3, 4)])
        files.append(spath)
    return files, True


HANDLERS = {
    "numerics-check": cmd_numerics_check,
    "verify": cmd_verify,
    "critical-line": cmd_critical_line,
    "breakout-rate": cmd_breakout_rate,
    "barrier-path": cmd_barrier_path,
    "nbbm": cmd_nbbm,
    "levy": cmd_levy,
}


def build_config(args) -> ExperimentConfig:
    raw = {}
    if args.config:
        raw = load_config(args.config)
        params = raw.pop("params")
    else:
        params = desk_params()
    cfg_cmd = raw.pop("command", None)
    if cfg_cmd is not None and cfg_cmd != args.command:
        raise ConfigError(f"config is for command {cfg_cmd!r}, not {args.command!r}")
    options = dict(raw.pop("options", None) or {})
    if args.command == "verify":
        options["suite"] = args.suite
    seed = args.seed if args.seed is not None else raw.get("seed")
    replicas = args.replicas if args.replicas is not None else raw.get("replicas", 1)
    workers = args.workers or raw.get("workers") or int(os.environ.get("BBMLAB_WORKERS", "1"))
    out = Path(args.out or raw.get("output_dir") or "out")
    try:
        return ExperimentConfig(args.command, params, int(replicas), raw.get("horizon"), out,
                                None if seed is None else int(seed), int(workers), options)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from exc


def run(cfg: ExperimentConfig) -> int:
    """Execute one command; returns the process exit code."""
    if cfg.command in ("breakout-rate", "barrier-path"):
        validate_regime(cfg.params)
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    files, ok = HANDLERS[cfg.command](cfg)
    write_manifest(cfg, files)
    return 0 if ok else 1


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bbmlab", description="BBM with absorption and moving barrier: experiments and checks")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("suite", nargs="?", help="suite name for 'verify': " + ", ".join(VERIFY_SUITES))
    ap.add_argument("--config", help="YAML or JSON config file")
    ap.add_argument("--replicas", type=int)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--workers", type=int, help="worker processes (default: $BBMLAB_WORKERS or 1)")
    ap.add_argument("--out", help="output directory")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(message)s")
    try:
        if args.command == "verify" and args.suite is None:
            raise ConfigError("verify needs a suite name")
        return run(build_config(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BBMLabError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
