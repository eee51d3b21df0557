"""Reproducible batch front end: `periodic-harris <command> --config <toml>`.

Commands
--------
simulate      sample paths of the configured model, export CSV + summary
hoermander    minimal bracket depth / rank verdicts at a state point
control       synthesize and integrate steering programs from start points
lyapunov      Monte Carlo fit of the one-period drift inequality
isi           spike detection and interspike-interval distribution report
toy-validate  Monte Carlo moments of the toy model against closed form

Each run reads one TOML config file; `--set key=value` (dotted keys,
TOML-typed values) overrides individual entries.  Outputs land in a fresh
run directory named by UTC timestamp and config hash under the `out`
root; every summary JSON embeds the config hash, the seed it consumed
(null for deterministic commands), and the toolkit version, so results
chain back to their inputs.

Exit codes: 0 success; 1 a checked criterion failed (rank not
established, drift fit not contracting, z-score out of range, steering
or spike collection incomplete); 2 configuration error; 3 runtime error.

Worker threads for independent replicas come from the `workers` key
(default: logical cores); the PERIODIC_HARRIS_THREADS environment
variable overrides both.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from . import control as control_mod
from . import ergodics, hoermander, sde, spikes
from . import model as model_mod

__all__ = ["main", "ConfigError"]


class ConfigError(Exception):
    """Invalid configuration: bad file, unknown key, or failed constraint."""


# ---------------------------------------------------------------------------
# config loading


def _load_toml(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(p, "rb") as fp:
            return tomllib.load(fp)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc


def _parse_override(item: str) -> tuple:
    key, sep, raw = item.partition("=")
    key = key.strip()
    if not sep or not key:
        raise ConfigError(f"override {item!r} is not of the form key=value")
    try:
        value = tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw  # bare strings may come unquoted
    return key, value


def _apply_override(cfg: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = cfg
    for part in parts[:-1]:
        nxt = node.setdefault(part, {})
        if not isinstance(nxt, dict):
            raise ConfigError(f"cannot override {dotted!r}: {part!r} is not a table")
        node = nxt
    node[parts[-1]] = value


def _config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


# ---------------------------------------------------------------------------
# validated accessors


def _check_keys(name: str, table: dict, allowed: set) -> None:
    unknown = sorted(set(table) - allowed)
    if unknown:
        raise ConfigError(f"unknown key '{name}.{unknown[0]}' "
                          f"(allowed: {', '.join(sorted(allowed))})")


def _table(cfg: dict, name: str) -> dict:
    section = cfg.get(name, {})
    if not isinstance(section, dict):
        raise ConfigError(f"[{name}] must be a table")
    return section


def _as_float(name: str, value, *, positive=False, nonneg=False) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {value!r}")
    out = float(value)
    if not math.isfinite(out):
        raise ConfigError(f"{name} must be finite")
    if positive and not out > 0.0:
        raise ConfigError(f"{name} must be > 0")
    if nonneg and out < 0.0:
        raise ConfigError(f"{name} must be >= 0")
    return out


def _as_int(name: str, value, *, minimum=None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"{name} must be >= {minimum}")
    return value


def _as_floats(name: str, value, length=None) -> list:
    if not isinstance(value, (list, tuple)):
        raise ConfigError(f"{name} must be an array")
    out = [_as_float(f"{name}[{i}]", v) for i, v in enumerate(value)]
    if length is not None and len(out) != length:
        raise ConfigError(f"{name} must have {length} entries")
    return out


def _build_signal(table: dict) -> model_mod.Signal:
    _check_keys("model.signal", table, {"s0", "s1", "base", "cos", "sin", "period"})
    explicit = {"base", "cos", "sin"} & set(table)
    sin2 = {"s0", "s1"} & set(table)
    if explicit and sin2:
        raise ConfigError("model.signal mixes the sin^2 form (s0, s1) with the "
                          "explicit form (base, cos, sin)")
    period = _as_float("model.signal.period", table.get("period", 10.0), positive=True)
    try:
        if explicit:
            return model_mod.Signal(
                period=period,
                base=_as_float("model.signal.base", table.get("base", 0.0)),
                cos_coeffs=tuple(_as_floats("model.signal.cos", table.get("cos", []))),
                sin_coeffs=tuple(_as_floats("model.signal.sin", table.get("sin", []))))
        return model_mod.Signal.from_sin2(
            s0=_as_float("model.signal.s0", table.get("s0", 0.5)),
            s1=_as_float("model.signal.s1", table.get("s1", 1.0)),
            period=period)
    except ValueError as exc:
        raise ConfigError(f"model.signal: {exc}") from exc


def _build_model(cfg: dict) -> model_mod.ModelSpec:
    section = _table(cfg, "model")
    _check_keys("model", section, {"kind", "a", "c", "signal"})
    kind = section.get("kind")
    if kind not in ("toy", "hh_det", "cir", "ou"):
        raise ConfigError("model.kind must be one of: toy, hh_det, cir, ou")
    signal = None
    if "signal" in section:
        if kind in ("toy", "hh_det"):
            raise ConfigError(f"model.signal does not apply to kind {kind!r}")
        signal = _build_signal(_table(section, "signal"))
    try:
        if kind == "toy":
            return model_mod.toy_model(c=_as_float("model.c", section.get("c", 1.0)))
        if kind == "hh_det":
            return model_mod.deterministic_hh(c=_as_float("model.c", section.get("c", 0.0)))
        if "c" in section:
            raise ConfigError(f"model.c does not apply to kind {kind!r}")
        if kind == "cir":
            a = _as_float("model.a", section.get("a", 1.0))
            return (model_mod.cir_hh(a=a, signal=signal) if signal is not None
                    else model_mod.cir_hh(a=a))
        if "a" in section:
            raise ConfigError("model.a does not apply to kind 'ou'")
        return model_mod.ou_hh(signal=signal) if signal is not None else model_mod.ou_hh()
    except ValueError as exc:
        raise ConfigError(f"model: {exc}") from exc


def _sim_config(cfg: dict) -> sde.SimConfig:
    section = _table(cfg, "sim")
    _check_keys("sim", section, {"dt", "horizon", "seed", "replicas", "scheme", "p"})
    if "p" in section:
        p = _as_float("sim.p", section["p"])
        if not 0.0 < p < 1.0:
            raise ConfigError("sim.p must lie in (0, 1)")
    try:
        return sde.SimConfig(
            dt=_as_float("sim.dt", section.get("dt", 0.01), positive=True),
            horizon=_as_float("sim.horizon", section.get("horizon", 100.0), nonneg=True),
            seed=_as_int("sim.seed", section.get("seed", 0)),
            scheme=section.get("scheme", "auto"))
    except ValueError as exc:
        raise ConfigError(f"sim: {exc}") from exc


def _workers(cfg: dict) -> int:
    env = os.environ.get("PERIODIC_HARRIS_THREADS")
    if env is not None:
        try:
            value = int(env)
        except ValueError:
            raise ConfigError("PERIODIC_HARRIS_THREADS must be an integer") from None
        if value < 1:
            raise ConfigError("PERIODIC_HARRIS_THREADS must be >= 1")
        return value
    if "workers" in cfg:
        return _as_int("workers", cfg["workers"], minimum=1)
    return os.cpu_count() or 1


def _pmap(fn, items, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _require_kind(spec: model_mod.ModelSpec, command: str, kinds: tuple) -> None:
    if spec.kind not in kinds:
        raise ConfigError(f"command {command!r} needs model.kind in "
                          f"{{{', '.join(kinds)}}}, got {spec.kind!r}")


# ---------------------------------------------------------------------------
# commands: each returns (payload, human lines, ok)


def _cmd_simulate(cfg: dict, run_dir: Path, workers: int):
    spec = _build_model(cfg)
    config = _sim_config(cfg)
    section = _table(cfg, "sim")
    replicas = _as_int("sim.replicas", section.get("replicas", 1), minimum=1)
    labels = model_mod.state_labels(spec)
    x0 = model_mod.x_star(spec)

    def one(i: int):
        rc = sde.SimConfig(dt=config.dt, horizon=config.horizon,
                           seed=config.seed + i, scheme=config.scheme)
        rec = sde.simulate_path(spec, x0, 0.0, rc)
        name = f"path_{i:03d}.csv"
        with open(run_dir / name, "w") as fp:
            sde.write_csv(rec, fp, labels=labels)
        return {
            "seed": rc.seed, "file": name,
            "min": [float(v) for v in rec.states.min(axis=0)],
            "max": [float(v) for v in rec.states.max(axis=0)],
            "truncation_events": rec.truncation_events,
            "clamp_events": rec.clamp_events,
        }

    paths = _pmap(one, list(range(replicas)), workers)
    agg = {
        "min": [min(p["min"][j] for p in paths) for j in range(spec.dim)],
        "max": [max(p["max"][j] for p in paths) for j in range(spec.dim)],
        "truncation_events": sum(p["truncation_events"] for p in paths),
        "clamp_events": sum(p["clamp_events"] for p in paths),
    }
    payload = {
        "seed": config.seed, "kind": spec.kind, "dt": config.dt,
        "horizon": config.horizon, "replicas": replicas,
        "labels": list(labels), "paths": paths, "aggregate": agg,
    }
    lines = [
        f"simulated {replicas} path(s) of {spec.kind}, horizon {config.horizon:g} "
        f"at dt {config.dt:g}",
        "coordinate ranges: " + "  ".join(
            f"{lab} [{lo:.4g}, {hi:.4g}]"
            for lab, lo, hi in zip(labels, agg["min"], agg["max"])),
        f"truncation events {agg['truncation_events']}, "
        f"clamp events {agg['clamp_events']}",
    ]
    return payload, lines, True


def _cmd_hoermander(cfg: dict, run_dir: Path, workers: int):
    spec = _build_model(cfg)
    _require_kind(spec, "hoermander", ("toy", "cir", "ou"))
    section = _table(cfg, "hoermander")
    _check_keys("hoermander", section, {"N_max", "grid", "tol", "extra_times", "x"})
    x = None
    if "x" in section:
        x = np.array(_as_floats("hoermander.x", section["x"], length=spec.dim))
    report = hoermander.full_weak_hoermander_check(
        spec, x=x,
        N_max=_as_int("hoermander.N_max", section.get("N_max", 6), minimum=1),
        time_grid_size=_as_int("hoermander.grid", section.get("grid", 64), minimum=1),
        tol=_as_float("hoermander.tol", section.get("tol", 1e-8), positive=True),
        extra_times=tuple(_as_floats("hoermander.extra_times",
                                     section.get("extra_times", []))))
    payload = {
        "seed": None, "kind": spec.kind, "x": list(report.x),
        "dim": report.dim, "N_max": report.N_max, "tol": report.tol,
        "grid": list(report.grid), "minimal_N": report.minimal_N,
        "established": report.established,
        "ranks": {str(n): [[s, rank] for s, rank, _ in rows]
                  for n, rows in report.details.items()},
    }
    if report.established:
        lines = [f"minimal N = {report.minimal_N}: rank {report.dim} at all "
                 f"{len(report.grid)} grid times (tol {report.tol:g})"]
    else:
        failing = report.failing_times(report.N_max)
        lines = [f"not established up to N = {report.N_max}; rank deficient at "
                 f"{len(failing)} of {len(report.grid)} grid times (tol {report.tol:g})"]
    return payload, lines, report.established


def _control_starts(section: dict, spec: model_mod.ModelSpec) -> tuple:
    if "starts" in section:
        if "n_starts" in section:
            raise ConfigError("control.starts and control.n_starts are exclusive")
        starts = [np.array(_as_floats(f"control.starts[{i}]", row, length=5))
                  for i, row in enumerate(section["starts"])]
        if not starts:
            raise ConfigError("control.starts must not be empty")
        return tuple(starts), None
    n = _as_int("control.n_starts", section.get("n_starts", 10), minimum=1)
    seed = _as_int("control.seed", section.get("seed", 0))
    v_lo, v_hi = _as_floats("control.v_range", section.get("v_range", [-60.0, 150.0]),
                            length=2)
    default_xi = [0.2, 20.0] if spec.kind == "cir" else [-5.0, 5.0]
    xi_lo, xi_hi = _as_floats("control.xi_range", section.get("xi_range", default_xi),
                              length=2)
    if not (v_lo < v_hi and xi_lo < xi_hi):
        raise ConfigError("control ranges must be increasing (lo < hi)")
    if spec.kind == "cir" and xi_lo <= 0.0:
        raise ConfigError("control.xi_range must be positive for the CIR model")
    rng = np.random.default_rng(seed)
    starts = []
    for _ in range(n):
        x0 = np.empty(5)
        x0[0] = rng.uniform(v_lo, v_hi)
        x0[1:4] = rng.uniform(0.0, 1.0, 3)
        x0[4] = rng.uniform(xi_lo, xi_hi)
        starts.append(x0)
    return tuple(starts), seed


def _cmd_control(cfg: dict, run_dir: Path, workers: int):
    spec = _build_model(cfg)
    _require_kind(spec, "control", ("cir", "ou"))
    section = _table(cfg, "control")
    _check_keys("control", section, {"n_starts", "starts", "seed", "dt", "tol",
                                     "eps", "k", "settle_cap", "v_range", "xi_range"})
    dt = _as_float("control.dt", section.get("dt", 0.01), positive=True)
    tol = _as_float("control.tol", section.get("tol", 1e-2), positive=True)
    knobs = dict(
        eps=_as_float("control.eps", section.get("eps", 1e-3), positive=True),
        k=_as_int("control.k", section.get("k", 3), minimum=1),
        tol=tol,
        settle_cap=_as_float("control.settle_cap", section.get("settle_cap", 500.0),
                             positive=True))
    synth = (control_mod.synthesize_cir_control if spec.kind == "cir"
             else control_mod.synthesize_ou_control)
    starts, seed = _control_starts(section, spec)

    def one(x0):
        program = synth(x0, params=spec, **knobs)
        return control_mod.integrate_control(spec, x0, program, dt=dt)

    runs = _pmap(one, list(starts), workers)
    dists = [run.terminal_distance for run in runs]
    capped = sorted({name for run in runs for name in run.capped})
    ok = max(dists) < tol and not capped
    payload = {
        "seed": seed, "kind": spec.kind, "dt": dt, "tol": tol,
        "starts": [[float(v) for v in x0] for x0 in starts],
        "runs": [run.to_json_dict() for run in runs],
        "aggregate": {
            "max_terminal_distance": max(dists),
            "all_within_tol": max(dists) < tol,
            "capped_phases": capped,
        },
    }
    lines = [
        f"steered {len(runs)} start(s) of {spec.kind} to the rest point",
        f"max terminal distance {max(dists):.3e} (tol {tol:g}); "
        f"capped phases: {', '.join(capped) if capped else 'none'}",
    ]
    return payload, lines, ok


def _cmd_lyapunov(cfg: dict, run_dir: Path, workers: int):
    spec = _build_model(cfg)
    _require_kind(spec, "lyapunov", ("cir", "ou"))
    section = _table(cfg, "lyapunov")
    _check_keys("lyapunov", section, {"replicas", "seed", "dt", "v_floor", "T", "points"})
    points = None
    if "points" in section:
        points = np.array([_as_floats(f"lyapunov.points[{i}]", row, length=5)
                           for i, row in enumerate(section["points"])])
    seed = _as_int("lyapunov.seed", section.get("seed", 0))
    report = ergodics.drift_report(
        spec, points=points,
        T=(_as_float("lyapunov.T", section["T"], positive=True)
           if "T" in section else None),
        replicas=_as_int("lyapunov.replicas", section.get("replicas", 400), minimum=100),
        seed=seed,
        dt=_as_float("lyapunov.dt", section.get("dt", 0.01), positive=True),
        v_floor=_as_float("lyapunov.v_floor", section.get("v_floor", 1.0), positive=True))
    d = report.to_json_dict()
    lam, lam_se = d["fit"]["lambda"], d["fit"]["lambda_se"]
    bound = lam + 3.0 * lam_se
    ok = bound < 1.0 and not d["fit"]["violations"]
    payload = {"seed": seed, **d, "criterion": {"lambda_plus_3se": bound, "passes": ok}}
    lines = [
        f"drift fit over {len(d['points'])} points x {d['replicas']} replicas "
        f"({spec.kind}, T = {d['T']:g})",
        f"lambda = {lam:.4f} (se {lam_se:.4f}), delta = {d['fit']['delta']:.2f}; "
        f"lambda + 3 se = {bound:.4f} {'< 1' if bound < 1.0 else '>= 1'}",
        f"pointwise 3-sigma violations: {len(d['fit']['violations'])}",
    ]
    return payload, lines, ok


def _cmd_isi(cfg: dict, run_dir: Path, workers: int):
    spec = _build_model(cfg)
    _require_kind(spec, "isi", ("cir", "ou", "hh_det"))
    section = _table(cfg, "spikes")
    _check_keys("spikes", section, {"total", "delta", "dt", "seed", "max_steps",
                                    "block", "x0"})
    x0 = (np.array(_as_floats("spikes.x0", section["x0"], length=spec.dim))
          if "x0" in section else model_mod.x_star(spec))
    seed = _as_int("spikes.seed", section.get("seed", 0))
    report = spikes.gc_report(
        spec, x0,
        total_spikes=_as_int("spikes.total", section.get("total", 500), minimum=2),
        block=(_as_int("spikes.block", section["block"], minimum=2)
               if "block" in section else None),
        delta=_as_float("spikes.delta", section.get("delta", spikes.DEFAULT_DELTA),
                        positive=True),
        dt=_as_float("spikes.dt", section.get("dt", 0.01), positive=True),
        seed=seed,
        max_steps=_as_int("spikes.max_steps", section.get("max_steps", 50_000_000),
                          minimum=1))
    with open(run_dir / "spikes.csv", "w") as fp:
        spikes.write_spike_csv(report.train, fp)
    d = report.to_json_dict()
    ok = not d["partial"]
    payload = {"seed": seed, **d}
    pooled = d["pooled_ks"]
    ks_note = (f"max block-vs-pool KS {max(pooled):.4f} over {len(pooled)} block(s)"
               if pooled else "block KS: n/a (too few intervals)")
    lines = [
        f"collected {d['n_isis']} ISIs from {spec.kind} "
        f"(requested {d['requested']} spikes, horizon {d['horizon']:.6g} ms)",
        f"{ks_note}; spike-free windows: "
        f"{d['spike_free_windows']} of {d['windows_scanned']}",
    ]
    if d["partial"]:
        lines.append("partial: the step budget ran out before the requested "
                     "spike count")
    return payload, lines, ok


def _cmd_toy_validate(cfg: dict, run_dir: Path, workers: int):
    section = _table(cfg, "toy")
    _check_keys("toy", section, {"c", "xi0", "psi0", "times", "paths", "dt", "seed"})
    c = _as_float("toy.c", section.get("c", 1.0))
    xi0 = _as_float("toy.xi0", section.get("xi0", 2.0))
    psi0 = _as_float("toy.psi0", section.get("psi0", 0.5))
    times = sorted(_as_floats("toy.times", section.get("times", [0.5, 1.0, 2.0])))
    if not times or times[0] <= 0.0:
        raise ConfigError("toy.times must be positive")
    paths = _as_int("toy.paths", section.get("paths", 10_000), minimum=100)
    dt = _as_float("toy.dt", section.get("dt", 0.005), positive=True)
    seed = _as_int("toy.seed", section.get("seed", 0))
    spec = model_mod.toy_model(c=c)

    steps = []
    for t in times:
        n = round(t / dt)
        if abs(n * dt - t) > 1e-9:
            raise ConfigError(f"toy.times entry {t:g} is not a multiple of dt {dt:g}")
        steps.append(n)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal((paths, steps[-1], 1)) * math.sqrt(dt)
    x0 = np.tile(np.array([xi0, psi0]), (paths, 1))
    states, _, _ = sde.integrate(spec, x0, 0.0, dt, noise)

    rows = []
    max_z = 0.0
    for t, n in zip(times, steps):
        sample = states[:, n, 0]
        mc_mean = float(sample.mean())
        mc_var = float(sample.var(ddof=1))
        cf_mean, cf_var = sde.toy_closed_form(c, xi0, t)
        z_mean = (mc_mean - cf_mean) / math.sqrt(mc_var / paths)
        # xi_t is Gaussian, so the sample variance has se = var * sqrt(2/(n-1))
        z_var = (mc_var - cf_var) / (mc_var * math.sqrt(2.0 / (paths - 1)))
        max_z = max(max_z, abs(z_mean), abs(z_var))
        rows.append({"t": t, "mc_mean": mc_mean, "cf_mean": cf_mean,
                     "z_mean": z_mean, "mc_var": mc_var, "cf_var": cf_var,
                     "z_var": z_var})
    ok = max_z < 3.0
    payload = {"seed": seed, "c": c, "xi0": xi0, "psi0": psi0, "paths": paths,
               "dt": dt, "rows": rows, "max_abs_z": max_z, "passes": ok}
    lines = [f"{'t':>6} {'MC mean':>12} {'closed form':>12} {'z':>8}"
             f" {'MC var':>12} {'closed form':>12} {'z':>8}"]
    for r in rows:
        lines.append(f"{r['t']:6g} {r['mc_mean']:12.6f} {r['cf_mean']:12.6f} "
                     f"{r['z_mean']:8.2f} {r['mc_var']:12.6f} {r['cf_var']:12.6f} "
                     f"{r['z_var']:8.2f}")
    lines.append(f"{paths} paths at dt {dt:g}; max |z| = {max_z:.2f} "
                 f"({'<' if ok else '>='} 3)")
    return payload, lines, ok


_COMMANDS = {
    "simulate": _cmd_simulate,
    "hoermander": _cmd_hoermander,
    "control": _cmd_control,
    "lyapunov": _cmd_lyapunov,
    "isi": _cmd_isi,
    "toy-validate": _cmd_toy_validate,
}

_TOP_KEYS = {"workers", "out", "model", "sim", "hoermander", "control",
             "lyapunov", "spikes", "toy"}


def _run(command: str, cfg: dict) -> int:
    _check_keys("config", cfg, _TOP_KEYS)
    chash = _config_hash(cfg)
    workers = _workers(cfg)
    out_root = cfg.get("out", "runs")
    if not isinstance(out_root, str):
        raise ConfigError("out must be a path string")
    stamp = time.strftime("%Y%m%dT%H%M%SZ", time.gmtime())
    run_dir = Path(out_root) / f"{stamp}-{chash}"
    k = 1
    while (run_dir / "summary.json").exists():  # same second, same config
        k += 1
        run_dir = Path(out_root) / f"{stamp}-{chash}-{k}"
    run_dir.mkdir(parents=True, exist_ok=True)

    try:
        payload, lines, ok = _COMMANDS[command](cfg, run_dir, workers)
    except BaseException:
        with contextlib.suppress(OSError):
            run_dir.rmdir()  # drop the dir again unless something was written
        raise
    payload = {"command": command, "config_hash": chash,
               "version": __version__, **payload}
    with open(run_dir / "config.json", "w") as fp:
        json.dump(cfg, fp, sort_keys=True, indent=2, default=str)
        fp.write("\n")
    with open(run_dir / "summary.json", "w") as fp:
        json.dump(payload, fp, sort_keys=True, indent=2)
        fp.write("\n")
    for line in lines:
        print(line)
    print(f"wrote {run_dir / 'summary.json'}")
    return 0 if ok else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="periodic-harris",
        description="batch runner for the periodic-harris toolkit")
    parser.add_argument("command", choices=sorted(_COMMANDS))
    parser.add_argument("--config", required=True, metavar="FILE",
                        help="TOML run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[],
                        metavar="KEY=VALUE",
                        help="override a config entry (dotted keys, TOML values)")
    args = parser.parse_args(argv)
    try:
        cfg = _load_toml(args.config)
        for item in args.overrides:
            key, value = _parse_override(item)
            _apply_override(cfg, key, value)
        return _run(args.command, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ValueError as exc:
        # argument validation inside the toolkit modules
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (sde.SimulationError, control_mod.ControlError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3
    except Exception as exc:  # pragma: no cover - defensive
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
