"""Euler-Maruyama simulation of the model SDEs.

Single paths run through a scalar loop specialized per model kind (fast
enough for multi-million-step runs); Monte Carlo work uses a vectorized
batch recursion over numpy arrays.  Both consume pre-generated Brownian
increments, so a path is reproducible bit-exactly from
(spec, x0, t0, dt, seed).

CIR input updates use full truncation: drift and diffusion arguments are
evaluated at max(xi, 0) while the recursion keeps the raw iterate; reported
paths expose the clipped value.  Gates are clamped to [0, 1] after every
step and clamp events are counted.

RNG conventions: `simulate_path` draws all increments from
numpy.random.default_rng(seed).  Helpers that need several independent
replicas of variable length (resolvent sampling) split streams as
default_rng([seed, replica, purpose]) with purpose 0 for path noise and 1
for the geometric count.
"""

from __future__ import annotations

import io
import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from . import model as _model
from .model import ModelSpec

__all__ = [
    "SimulationError", "SimConfig", "PathRecord",
    "integrate", "simulate_path", "iter_path_blocks",
    "simulate_skeleton", "skeleton_batch",
    "resolvent_counts", "resolvent_sample",
    "toy_closed_form",
    "write_csv", "write_binary", "read_binary",
]

_SCHEMES = ("auto", "euler_maruyama", "cir_full_truncation")


class SimulationError(RuntimeError):
    """Raised when the recursion leaves the representable state space."""


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.01
    horizon: float = 100.0
    seed: int = 0
    scheme: str = "auto"

    def __post_init__(self):
        if not (self.dt > 0.0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive and finite")
        if not (self.horizon >= 0.0 and math.isfinite(self.horizon)):
            raise ValueError("horizon must be nonnegative and finite")
        if self.scheme not in _SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {_SCHEMES}")

    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))


def _resolve_scheme(spec: ModelSpec, scheme: str) -> str:
    if scheme == "auto":
        return "cir_full_truncation" if spec.kind == "cir" else "euler_maruyama"
    if spec.kind == "cir" and scheme != "cir_full_truncation":
        raise ValueError("CIR mode requires the cir_full_truncation scheme")
    if spec.kind != "cir" and scheme == "cir_full_truncation":
        raise ValueError("full truncation only applies to the CIR input")
    return scheme


@dataclass(frozen=True)
class PathRecord:
    """One discretized trajectory: states[k] is the state at t0 + k*dt.

    `states` holds the reported path (CIR input clipped at 0); `noise` the
    Brownian increments, one row per step, so len(states) = len(noise) + 1.
    """

    t0: float
    dt: float
    states: np.ndarray
    noise: np.ndarray
    seed: int
    truncation_events: int = 0
    clamp_events: int = 0

    def __post_init__(self):
        if self.states.shape[0] != self.noise.shape[0] + 1:
            raise ValueError("states must have exactly one more row than noise")

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.states.shape[0])

    @property
    def dim(self) -> int:
        return self.states.shape[1]


# ---------------------------------------------------------------------------
# core recursions


def _phi_s(u: float) -> float:
    if -1e-4 < u < 1e-4:
        return 1.0 - u / 2.0 + u * u / 12.0
    try:
        return u / math.expm1(u)
    except OverflowError:
        return 0.0


def _scalar_run_toy(c, x0, t0, dt, noise, states, i0=0):
    xi, psi = float(x0[0]), float(x0[1])
    two_pi = 2.0 * math.pi
    for i in range(noise.shape[0]):
        dw = noise[i, 0]
        s = math.sin(two_pi * (t0 + (i0 + i) * dt))
        xi += -c * s * s * xi * dt + dw
        psi += (1.0 - psi) * dt + psi * dw
        if not (math.isfinite(xi) and math.isfinite(psi)):
            raise SimulationError(f"non-finite state at step {i + 1}")
        states[i + 1, 0] = xi
        states[i + 1, 1] = psi
    return 0, 0


def _scalar_run_hh(spec, x0, t0, dt, noise, states, i0=0):
    kind = spec.kind
    noisy = kind in ("cir", "ou")
    n_steps = noise.shape[0]
    grid = t0 + dt * (i0 + np.arange(n_steps))
    svals = (spec.signal.value(grid) + spec.a if kind == "cir" else
             spec.signal.value(grid) if kind == "ou"
             else np.zeros(n_steps))
    svals = np.atleast_1d(svals)
    v, n, m, h = (float(a) for a in x0[:4])
    xi = float(x0[4]) if noisy else 0.0
    trunc = clamp = 0
    for i in range(n_steps):
        t = t0 + (i0 + i) * dt
        try:
            an = 0.1 * _phi_s((10.0 - v) / 10.0)
            bn = 0.125 * math.exp(-v / 80.0)
            am = _phi_s((25.0 - v) / 10.0)
            bm = 4.0 * math.exp(-v / 18.0)
            ah = 0.07 * math.exp(-v / 20.0)
            bh = 1.0 / (math.exp((30.0 - v) / 10.0) + 1.0)
            n2 = n * n
            F = (36.0 * n2 * n2 * (v + 12.0)
                 + 120.0 * m * m * m * h * (v - 120.0)
                 + 0.3 * (v - 10.6))
            if kind == "hh_det":
                v += (spec.input_value(t) - F) * dt
            elif kind == "ou":
                dw = noise[i, 0]
                pull = svals[i] - xi
                v += (pull - F) * dt + dw
                xi += pull * dt + dw
            else:
                dw = noise[i, 0]
                if xi < 0.0:
                    trunc += 1
                    xe = 0.0
                else:
                    xe = xi
                pull = svals[i] - xe
                root = math.sqrt(xe)
                v += (pull - F) * dt + root * dw
                xi += pull * dt + root * dw
            n += (an * (1.0 - n) - bn * n) * dt
            m += (am * (1.0 - m) - bm * m) * dt
            h += (ah * (1.0 - h) - bh * h) * dt
        except OverflowError as exc:
            raise SimulationError(f"non-finite state at step {i + 1}") from exc
        if n < 0.0:
            n = 0.0
            clamp += 1
        elif n > 1.0:
            n = 1.0
            clamp += 1
        if m < 0.0:
            m = 0.0
            clamp += 1
        elif m > 1.0:
            m = 1.0
            clamp += 1
        if h < 0.0:
            h = 0.0
            clamp += 1
        elif h > 1.0:
            h = 1.0
            clamp += 1
        if not (math.isfinite(v) and math.isfinite(xi)):
            raise SimulationError(f"non-finite state at step {i + 1}")
        states[i + 1, 0] = v
        states[i + 1, 1] = n
        states[i + 1, 2] = m
        states[i + 1, 3] = h
        if noisy:
            states[i + 1, 4] = xi
    return trunc, clamp


def _batched_run(spec, x0, t0, dt, noise, states, i0=0):
    X = x0.copy()
    cir = spec.kind == "cir"
    hh = spec.kind in ("cir", "ou", "hh_det")
    trunc = clamp = 0
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for i in range(noise.shape[1]):
            t = t0 + (i0 + i) * dt
            if cir:
                neg = X[:, 4] < 0.0
                trunc += int(np.count_nonzero(neg))
                Xe = X.copy()
                Xe[neg, 4] = 0.0
            else:
                Xe = X
            b = _model.drift(spec, t, Xe)
            X = X + b * dt
            if spec.noise_dim:
                sig = _model.diffusion(spec, Xe)[..., 0]
                X = X + sig * noise[:, i]
            if hh:
                gates = X[:, 1:4]
                clipped = np.clip(gates, 0.0, 1.0)
                clamp += int(np.count_nonzero(clipped != gates))
                X[:, 1:4] = clipped
            states[:, i + 1] = X
    # step index of the first non-finite state, if any
    bad = ~np.isfinite(states).all(axis=(0, 2))
    if bad.any():
        raise SimulationError(f"non-finite state at step {int(np.argmax(bad))}")
    return trunc, clamp


def integrate(spec: ModelSpec, x0, t0: float, dt: float, noise,
              scheme: str = "auto", step_offset: int = 0):
    """Run the Euler recursion over pre-generated increments.

    x0 of shape (d,) with noise (n, m) gives raw states (n+1, d); a batch
    x0 (B, d) with noise (B, n, m) gives (B, n+1, d).  Returns
    (states, truncation_events, clamp_events).  States are the raw
    iterates; callers that report paths clip the CIR input at 0.

    Grid times are t0 + (step_offset + i) * dt, so a chunked run with a
    shared t0 reproduces a monolithic one bit-exactly.
    """
    _resolve_scheme(spec, scheme)
    x0 = np.asarray(x0, dtype=float)
    noise = np.asarray(noise, dtype=float)
    if x0.ndim == 1:
        if x0.shape != (spec.dim,) or noise.ndim != 2 or noise.shape[1] != spec.noise_dim:
            raise ValueError("shape mismatch between state, noise and model")
        states = np.empty((noise.shape[0] + 1, spec.dim))
        states[0] = x0
        if spec.kind == "toy":
            trunc, clamp = _scalar_run_toy(spec.c, x0, t0, dt, noise, states, step_offset)
        else:
            trunc, clamp = _scalar_run_hh(spec, x0, t0, dt, noise, states, step_offset)
        return states, trunc, clamp
    if x0.ndim != 2 or x0.shape[1] != spec.dim:
        raise ValueError(f"state batch must have {spec.dim} columns")
    if noise.ndim != 3 or noise.shape[0] != x0.shape[0] or noise.shape[2] != spec.noise_dim:
        raise ValueError("noise batch must have shape (B, n, noise_dim)")
    states = np.empty((x0.shape[0], noise.shape[1] + 1, spec.dim))
    states[:, 0] = x0
    trunc, clamp = _batched_run(spec, x0, t0, dt, noise, states, step_offset)
    return states, trunc, clamp


def _reported(spec: ModelSpec, states: np.ndarray) -> np.ndarray:
    if spec.kind == "cir":
        out = states.copy()
        out[..., 4] = np.maximum(out[..., 4], 0.0)
        return out
    return states


def simulate_path(spec: ModelSpec, x0, t0: float = 0.0,
                  config: SimConfig = SimConfig()) -> PathRecord:
    """One trajectory over config.horizon, reported with clipped CIR input."""
    _resolve_scheme(spec, config.scheme)
    n = config.n_steps()
    rng = np.random.default_rng(config.seed)
    noise = rng.normal(0.0, math.sqrt(config.dt), size=(n, spec.noise_dim))
    states, trunc, clamp = integrate(spec, x0, t0, config.dt, noise, config.scheme)
    return PathRecord(t0=t0, dt=config.dt, states=_reported(spec, states),
                      noise=noise, seed=config.seed,
                      truncation_events=trunc, clamp_events=clamp)


def iter_path_blocks(spec: ModelSpec, x0, t0: float = 0.0,
                     config: SimConfig = SimConfig(), block_steps: int = 50_000):
    """Stream one long path in chunks without storing it whole.

    Yields (t_start, states) where states[0] is the state at t_start, so
    consecutive chunks overlap by one row.  The recursion continues on the
    raw iterates; yielded arrays are reported (clipped) copies.
    """
    if block_steps < 1:
        raise ValueError("block_steps must be >= 1")
    _resolve_scheme(spec, config.scheme)
    total = config.n_steps()
    rng = np.random.default_rng(config.seed)
    x = np.asarray(x0, dtype=float)
    done = 0
    while done < total:
        k = min(block_steps, total - done)
        noise = rng.normal(0.0, math.sqrt(config.dt), size=(k, spec.noise_dim))
        t_start = t0 + done * config.dt
        states, _, _ = integrate(spec, x, t0, config.dt, noise, config.scheme,
                                 step_offset=done)
        x = states[-1]
        yield t_start, _reported(spec, states)
        done += k


# ---------------------------------------------------------------------------
# skeleton and resolvent sampling


def _steps_per_period(spec: ModelSpec, dt: float) -> int:
    k = int(round(spec.period / dt))
    if k < 1 or abs(k * dt - spec.period) > 1e-9 * max(1.0, spec.period):
        raise ValueError("dt must divide the signal period")
    return k


def simulate_skeleton(spec: ModelSpec, x0, k: int,
                      config: SimConfig = SimConfig()) -> np.ndarray:
    """X_T, X_{2T}, ..., X_{kT} sampled along one continuous path."""
    if k < 0:
        raise ValueError("k must be >= 0")
    out = np.empty((k, spec.dim))
    if k == 0:
        return out
    per = _steps_per_period(spec, config.dt)
    rng = np.random.default_rng(config.seed)
    x = np.asarray(x0, dtype=float)
    for j in range(k):
        noise = rng.normal(0.0, math.sqrt(config.dt), size=(per, spec.noise_dim))
        states, _, _ = integrate(spec, x, j * spec.period, config.dt, noise, config.scheme)
        x = states[-1]
        out[j] = _reported(spec, x[None, :])[0]
    return out


def skeleton_batch(spec: ModelSpec, x0, k: int, chains: int,
                   config: SimConfig = SimConfig()) -> np.ndarray:
    """Skeleton points of `chains` independent paths, shape (chains, k, d).

    x0 may be a single state (shared start) or an array (chains, d).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    per = _steps_per_period(spec, config.dt)
    x0 = np.asarray(x0, dtype=float)
    X = np.broadcast_to(x0, (chains, spec.dim)).copy() if x0.ndim == 1 else x0.copy()
    if X.shape != (chains, spec.dim):
        raise ValueError("x0 batch must have shape (chains, d)")
    rng = np.random.default_rng(config.seed)
    out = np.empty((chains, k, spec.dim))
    for j in range(k):
        noise = rng.normal(0.0, math.sqrt(config.dt), size=(chains, per, spec.noise_dim))
        states, _, _ = integrate(spec, X, j * spec.period, config.dt, noise, config.scheme)
        X = states[:, -1]
        out[:, j] = _reported(spec, X)
    return out


def resolvent_counts(p: float, count: int, seed: int = 0) -> np.ndarray:
    """Geometric horizon draws K_i with P(K = k) = (1-p) p^{k-1}, k >= 1."""
    if not 0.0 < p < 1.0:
        raise ValueError("p must lie in (0, 1)")
    return np.array([np.random.default_rng([seed, i, 1]).geometric(1.0 - p)
                     for i in range(count)], dtype=np.int64)


def resolvent_sample(spec: ModelSpec, x0, p: float, count: int,
                     config: SimConfig = SimConfig(), return_counts: bool = False):
    """Independent draws of X_{K T} with K geometric; one fresh path each."""
    ks = resolvent_counts(p, count, config.seed)
    per = _steps_per_period(spec, config.dt)
    x0 = np.asarray(x0, dtype=float)
    out = np.empty((count, spec.dim))
    for i, k in enumerate(ks):
        rng = np.random.default_rng([config.seed, i, 0])
        x = x0
        for j in range(int(k)):
            noise = rng.normal(0.0, math.sqrt(config.dt), size=(per, spec.noise_dim))
            states, _, _ = integrate(spec, x, j * spec.period, config.dt,
                                     noise, config.scheme)
            x = states[-1]
        out[i] = _reported(spec, x[None, :])[0]
    return (out, ks) if return_counts else out


# ---------------------------------------------------------------------------
# toy model closed forms


def _toy_S(c: float, t: float) -> float:
    # c * int_0^t sin^2(2 pi v) dv
    return c * (t / 2.0 - math.sin(4.0 * math.pi * t) / (8.0 * math.pi))


def toy_closed_form(c: float, xi0: float, t: float):
    """Mean and variance of the toy first component at time t."""
    if t < 0:
        raise ValueError("t must be >= 0")
    if t == 0.0:
        return float(xi0), 0.0
    st = _toy_S(c, t)
    mean = xi0 * math.exp(-st)
    var, _ = quad(lambda r: math.exp(-2.0 * (st - _toy_S(c, r))), 0.0, t, limit=200)
    return mean, var


# ---------------------------------------------------------------------------
# path export


def write_csv(record: PathRecord, fp, labels=None) -> None:
    """Write (t, state...) rows; `fp` is a path or text file object."""
    d = record.dim
    if labels is None:
        labels = {5: ("v", "n", "m", "h", "xi"), 4: ("v", "n", "m", "h"),
                  2: ("xi", "psi")}.get(d) or tuple(f"x{i}" for i in range(1, d + 1))
    if len(labels) != d:
        raise ValueError("one label per state component required")
    data = np.column_stack([record.times, record.states])
    header = ",".join(("t",) + tuple(labels))
    np.savetxt(fp, data, delimiter=",", header=header, comments="", fmt="%.17g")


_MAGIC = b"PHPR"
_BINARY_VERSION = 1


def write_binary(record: PathRecord, fp) -> None:
    """Compact little-endian frame: magic "PHPR", version u32, d u32,
    row count u64, then f64 rows of (t, x1..xd)."""
    close = False
    if isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__"):
        fp = open(fp, "wb")
        close = True
    try:
        rows = np.column_stack([record.times, record.states]).astype("<f8")
        fp.write(_MAGIC)
        fp.write(struct.pack("<IIQ", _BINARY_VERSION, record.dim, rows.shape[0]))
        fp.write(rows.tobytes())
    finally:
        if close:
            fp.close()


def read_binary(fp):
    """Inverse of write_binary; returns (times, states)."""
    close = False
    if isinstance(fp, (str, bytes)) or hasattr(fp, "__fspath__"):
        fp = open(fp, "rb")
        close = True
    try:
        if fp.read(4) != _MAGIC:
            raise ValueError("not a path frame (bad magic)")
        version, d, count = struct.unpack("<IIQ", fp.read(16))
        if version != _BINARY_VERSION:
            raise ValueError(f"unsupported frame version {version}")
        rows = np.frombuffer(fp.read(count * (d + 1) * 8), dtype="<f8")
        rows = rows.reshape(count, d + 1)
        return rows[:, 0].copy(), rows[:, 1:].copy()
    finally:
        if close:
            fp.close()
