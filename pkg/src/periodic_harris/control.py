"""Deterministic steering controls for the input-driven models.

The control system replaces the Brownian path by an absolutely continuous
control:  d phi = b~(t, phi) dt + sigma(phi) hdot(t) dt,  with b~ the
Stratonovich-corrected drift.  This module integrates such systems with a
classical RK4 scheme, builds bounded-slope polynomial ramps, and
synthesizes the multi-phase programs that steer any admissible start of
the CIR / OU neuron models into the distinguished rest point x*.

A program is an ordered list of phases.  Each phase stops after a fixed
duration or when a state predicate first holds (predicates carry a finite
hard cap), and supplies its control rate either directly or through a
factory that sees the state at phase entry; ramp targets depend on it.
Two phases of the neuron programs cover astronomically long stretches of
model time: charging the input coordinate up to the safety threshold
K(f+1) at unit rate, and letting it drain back to the target level at a
rate of order 1e-3.  Both run while the membrane block is stationary (or
pinned), so the input coordinate is an explicit integral of exponentials
and the crossing time is solved for directly instead of being stepped
through ~1e9 ms of model time.

Every run reports the phase transition times, the constants (f, C,
lambda, K) behind the charge threshold, the control effort
int hdot^2 dt, and the terminal distance to the target.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple, Optional, Union

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

from .model import ModelSpec, Signal, cir_hh, ou_hh, x_star
from .sde import PathRecord

__all__ = [
    "ControlError", "RampSpec", "smooth_ramp", "Phase", "ControlProgram",
    "ControlConstants", "estimate_control_constants", "ControlRun",
    "integrate_control", "synthesize_cir_control", "synthesize_ou_control",
]


class ControlError(RuntimeError):
    """Raised when a control run leaves the state space or hits a hard cap."""


# ---------------------------------------------------------------------------
# scalar model arithmetic (the RK4 loop is scalar; numpy round trips through
# the model module would dominate the step cost)


def _phi1(u: float) -> float:
    if -1e-4 < u < 1e-4:
        return 1.0 - u / 2.0 + u * u / 12.0
    try:
        return u / math.expm1(u)
    except OverflowError:
        return 0.0


def _rates(v: float) -> tuple:
    an = 0.1 * _phi1((10.0 - v) / 10.0)
    bn = 0.125 * math.exp(-v / 80.0)
    am = _phi1((25.0 - v) / 10.0)
    bm = 4.0 * math.exp(-v / 18.0)
    ah = 0.07 * math.exp(-v / 20.0)
    bh = 1.0 / (math.exp((30.0 - v) / 10.0) + 1.0)
    return an, bn, am, bm, ah, bh


def _current(v: float, n: float, m: float, h: float) -> float:
    n2 = n * n
    return (36.0 * n2 * n2 * (v + 12.0)
            + 120.0 * m * m * m * h * (v - 120.0)
            + 0.3 * (v - 10.6))


def _make_sig(signal: Signal) -> Callable[[float], float]:
    base = signal.base
    cos_c, sin_c = signal.cos_coeffs, signal.sin_coeffs
    if not cos_c and not sin_c:
        return lambda t: base
    w = 2.0 * math.pi / signal.period

    def value(t: float) -> float:
        out = base
        for j, a in enumerate(cos_c, start=1):
            out += a * math.cos(j * w * t)
        for j, a in enumerate(sin_c, start=1):
            out += a * math.sin(j * w * t)
        return out

    return value


def _sig_moments(signal: Signal) -> tuple:
    """Mean and variance of the signal over one period (exact for the
    trigonometric form)."""
    var = 0.5 * sum(a * a for a in signal.cos_coeffs + signal.sin_coeffs)
    return signal.base, var


def _sc(a):
    return float(a) if np.ndim(a) == 0 else a


# ---------------------------------------------------------------------------
# bounded-slope ramps


@dataclass(frozen=True)
class RampSpec:
    """A monotone transition from `start` to `end` with |r'| <= slope_bound,
    finished no later than |end - start| / slope_bound + 1."""

    start: float
    end: float
    slope_bound: float = 1.0
    order: int = 5

    def __post_init__(self):
        for name in ("start", "end"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"ramp {name} must be finite")
        if not (self.slope_bound > 0.0 and math.isfinite(self.slope_bound)):
            raise ValueError("ramp slope bound must be positive and finite")
        if not (isinstance(self.order, int) and self.order >= 1):
            raise ValueError("ramp smoothness order must be an integer >= 1")


@lru_cache(maxsize=8)
def _smoothstep_poly(order: int) -> tuple:
    """Coefficients (highest power first) of the order-N smoothstep
    S_N(u) = sum_n (-1)^n C(N+n,n) C(2N+1,N-n) u^{N+1+n} and of its
    antiderivative.  S_N rises from 0 to 1 on [0,1] with N vanishing
    derivatives at both ends and S_N <= 1 throughout."""
    n_ = order
    deg = 2 * n_ + 1
    coefs = np.zeros(deg + 1)
    for j in range(n_ + 1):
        c = (-1) ** j * math.comb(n_ + j, j) * math.comb(deg, n_ - j)
        coefs[deg - (n_ + 1 + j)] = c
    return coefs, np.polyint(coefs)


def smooth_ramp(rs: RampSpec) -> tuple:
    """Build the ramp of a RampSpec; returns (r, r') as vectorized callables.

    The derivative profile is a smoothstep cap of width w = min(1, D/s),
    a flat stretch at the slope bound, and a mirrored cap, where
    D = |end - start| and s is the slope bound.  This yields r(0) = start,
    r(t) = end for every t >= D/s + w <= D/s + 1, and |r'| <= s with
    equality only on the flat stretch.  Both callables carry the ramp
    duration D/s + w as a `duration` attribute.
    """
    delta = rs.end - rs.start
    if delta == 0.0:
        def r_const(t):
            return _sc(np.full(np.shape(t), rs.start))

        def rp_const(t):
            return _sc(np.zeros(np.shape(t)))

        r_const.duration = 0.0
        rp_const.duration = 0.0
        return r_const, rp_const

    s = rs.slope_bound
    sign = math.copysign(1.0, delta)
    dist = abs(delta)
    w = min(1.0, dist / s)
    total = dist / s + w
    step, prim = _smoothstep_poly(rs.order)
    p1 = float(np.polyval(prim, 1.0))

    def r(t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.empty_like(ts)
        lo = ts <= 0.0
        hi = ts >= total
        up = ~lo & (ts < w)
        down = ~hi & (ts > total - w)
        mid = ~(lo | hi | up | down)
        out[lo] = rs.start
        out[hi] = rs.end
        out[up] = rs.start + sign * s * w * np.polyval(prim, ts[up] / w)
        out[mid] = rs.start + sign * s * (w * p1 + (ts[mid] - w))
        out[down] = rs.end - sign * s * w * np.polyval(prim, (total - ts[down]) / w)
        return float(out[0]) if np.ndim(t) == 0 else out

    def rprime(t):
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        out = np.zeros_like(ts)
        inside = (ts > 0.0) & (ts < total)
        up = inside & (ts < w)
        down = inside & (ts > total - w)
        mid = inside & ~up & ~down
        # the smoothstep is <= 1 exactly; clip away polyval rounding so the
        # slope bound holds without tolerance
        out[up] = np.clip(np.polyval(step, ts[up] / w), 0.0, 1.0)
        out[mid] = 1.0
        out[down] = np.clip(np.polyval(step, (total - ts[down]) / w), 0.0, 1.0)
        out *= sign * s
        return float(out[0]) if np.ndim(t) == 0 else out

    r.duration = total
    rprime.duration = total
    return r, rprime


def _ramp_time(dist: float, slope: float) -> float:
    return dist / slope + min(1.0, dist / slope)


# ---------------------------------------------------------------------------
# programs


@dataclass(frozen=True)
class Phase:
    """One leg of a control program.

    Exactly one stop rule must be set: a fixed `duration` (a number, or a
    callable of the entry time and state for ramps whose length is only
    known at run time), a predicate `until(t, x)` guarded by a finite hard
    `cap`, or an `exact` advance map (t0, x0) -> (t1, x1, dh, dq) that
    moves the state in closed form and accounts for the increments of h
    and of int hdot^2 itself.

    The rate rule `law` is hdot as a function (t, x) -> float; with
    `factory=True` it is instead called once with the entry point (t0, x0)
    and must return the rate function, optionally as a pair
    (law, {"ramp_distance": ...}) so runs can report total ramp travel.
    Predicate phases that hit their cap raise by default; `on_cap="note"`
    records the phase name on the run instead (for stop rules whose
    success the theory does not guarantee).
    """

    name: str
    law: Optional[Callable] = None
    factory: bool = False
    duration: Union[float, Callable, None] = None
    until: Optional[Callable] = None
    cap: Optional[float] = None
    exact: Optional[Callable] = None
    on_cap: str = "error"
    mark: Optional[str] = None

    def __post_init__(self):
        if not (isinstance(self.name, str) and self.name):
            raise ValueError("every phase needs a nonempty name")
        rules = (self.duration is not None) + (self.until is not None) + (self.exact is not None)
        if rules != 1:
            raise ValueError(f"phase {self.name!r} must have exactly one stop rule "
                             "(duration, until, or exact)")
        if self.exact is not None:
            if self.law is not None:
                raise ValueError(f"phase {self.name!r}: an exact phase advances itself "
                                 "and takes no rate law")
        elif self.law is None:
            raise ValueError(f"phase {self.name!r} needs a rate law")
        if self.duration is not None and not callable(self.duration):
            if not (math.isfinite(self.duration) and self.duration >= 0.0):
                raise ValueError(f"phase {self.name!r}: duration must be finite and >= 0")
        if self.until is not None:
            if self.cap is None or not (math.isfinite(self.cap) and self.cap > 0.0):
                raise ValueError(f"phase {self.name!r}: a predicate stop rule needs a "
                                 "finite positive cap")
        if self.on_cap not in ("error", "note"):
            raise ValueError("on_cap must be 'error' or 'note'")


class ControlConstants(NamedTuple):
    """Bound f on |F| over the voltage trap, gate relaxation prefactor C
    and rate lam (|F(v, gates(s)) - F(v, gates(inf))| <= C e^{-lam s}),
    and the charge multiple K fixing the threshold K(f+1)."""

    f: float
    C: float
    lam: float
    K: int


@dataclass(frozen=True)
class ControlProgram:
    """An ordered tuple of phases, the steering target (if any), and the
    constants used to build the program (if any)."""

    phases: tuple
    target: Optional[tuple] = None
    constants: Optional[ControlConstants] = None

    def __post_init__(self):
        phases = tuple(self.phases)
        if not phases:
            raise ValueError("a control program needs at least one phase")
        if not all(isinstance(p, Phase) for p in phases):
            raise TypeError("program phases must be Phase instances")
        names = [p.name for p in phases]
        if len(set(names)) != len(names):
            raise ValueError("phase names must be unique within a program")
        object.__setattr__(self, "phases", phases)
        if self.target is not None:
            object.__setattr__(self, "target", tuple(float(a) for a in self.target))


# ---------------------------------------------------------------------------
# constants of the construction


_CONSTANTS_CACHE: Optional[ControlConstants] = None
_SETTLE_TOL = 1e-9
_COAST_ATOL = 2e-3


def estimate_control_constants(spec: ModelSpec) -> ControlConstants:
    """Conservative numeric values for (f, C, lam, K).

    f bounds |F| on (-12, 120) x [0,1]^3 (grid maximum padded by 5%);
    lam is the smallest of the six gate rate sums alpha_j + beta_j on the
    voltage trap, so every gate relaxes at least at rate lam; C combines
    |j0 - j_inf| <= 1 with the gate-Lipschitz constant of F on the closed
    box, giving |F(v, gates(s)) - F(v, gates(inf))| <= C e^{-lam s}; K is
    the smallest integer with (K - 121)(1 + f) - C/lam > 1, plus 2 in
    hand.  The same values serve both neuron models.
    """
    if spec.kind not in ("cir", "ou"):
        raise ValueError("control constants are defined for the CIR / OU neuron models")
    global _CONSTANTS_CACHE
    if _CONSTANTS_CACHE is None:
        _CONSTANTS_CACHE = _compute_constants()
    return _CONSTANTS_CACHE


def _compute_constants() -> ControlConstants:
    v_open = np.linspace(-12.0, 120.0, 1321)[1:-1]
    g = np.linspace(0.0, 1.0, 11)
    pow4 = g ** 4
    prod_mh = (g ** 3)[:, None] * g[None, :]
    fv = (36.0 * (v_open + 12.0))[:, None, None] * pow4[None, :, None]
    fv = fv[..., None] + (120.0 * (v_open - 120.0))[:, None, None, None] \
        * prod_mh[None, None, :, :]
    fv += (0.3 * (v_open - 10.6))[:, None, None, None]
    f = 1.05 * float(np.max(np.abs(fv)))

    an, bn, am, bm, ah, bh = (fn(v_open) for fn in
                              (np.vectorize(lambda v: _rates(v)[i], otypes=[float])
                               for i in range(6)))
    lam = float(np.min(np.minimum(an + bn, np.minimum(am + bm, ah + bh))))

    v_closed = np.linspace(-12.0, 120.0, 1321)
    ln = float(np.max(np.outer(144.0 * (v_closed + 12.0), g ** 3)))
    lm = float(np.max(360.0 * np.abs(v_closed - 120.0)) * np.max(g ** 2) * np.max(g))
    lh = float(np.max(120.0 * np.abs(v_closed - 120.0)) * np.max(g ** 3))
    c_const = max(1.0, ln + lm + lh)

    k_int = math.floor(121.0 + (1.0 + c_const / lam) / (1.0 + f)) + 1
    while not ((k_int - 121.0) * (1.0 + f) - c_const / lam > 1.0):
        k_int += 1
    return ControlConstants(f, c_const, lam, k_int + 2)


def _t1_estimate(v0: float) -> float:
    """Upper bound for the time the c = 0 membrane needs to re-enter
    (-12, 120): outside the trap the leak term alone pulls at rate at
    least 0.3 |v - 10.6|."""
    if -12.0 < v0 < 120.0:
        return 1.0
    if v0 >= 120.0:
        return math.log((v0 - 10.6) / 109.4) / 0.3 + 1.0
    return math.log((10.6 - v0) / 22.6) / 0.3 + 1.0


# ---------------------------------------------------------------------------
# the RK4 integrator


def _make_rhs(spec: ModelSpec, law: Callable) -> Callable:
    """Right-hand side of the augmented control ODE over y = (x, h, q):
    dx = b~ dt + sigma hdot dt, dh = hdot dt, dq = hdot^2 dt."""
    if spec.kind == "toy":
        c = spec.c

        def rhs_toy(t, y):
            x = y[:2]
            hd = float(law(t, x))
            s = math.sin(2.0 * math.pi * t)
            return np.array([
                -c * s * s * y[0] + hd,
                1.0 - 1.5 * y[1] + y[1] * hd,
                hd, hd * hd,
            ])

        return rhs_toy

    sig = _make_sig(spec.signal)
    if spec.kind == "cir":
        a = spec.a

        def rhs_cir(t, y):
            v, n, m, h, xi = y[0], y[1], y[2], y[3], y[4]
            if xi <= 0.0:
                raise ValueError("the input coordinate left (0, inf) during a stage "
                                 f"evaluation (xi = {xi:.6g})")
            x = y[:5]
            hd = float(law(t, x))
            an, bn, am, bm, ah, bh = _rates(v)
            pull = a + sig(t) - xi - 0.25
            flow = pull + math.sqrt(xi) * hd
            return np.array([
                flow - _current(v, n, m, h),
                an * (1.0 - n) - bn * n,
                am * (1.0 - m) - bm * m,
                ah * (1.0 - h) - bh * h,
                flow, hd, hd * hd,
            ])

        return rhs_cir

    def rhs_ou(t, y):
        v, n, m, h, xi = y[0], y[1], y[2], y[3], y[4]
        x = y[:5]
        hd = float(law(t, x))
        an, bn, am, bm, ah, bh = _rates(v)
        flow = sig(t) - xi + hd
        return np.array([
            flow - _current(v, n, m, h),
            an * (1.0 - n) - bn * n,
            am * (1.0 - m) - bm * m,
            ah * (1.0 - h) - bh * h,
            flow, hd, hd * hd,
        ])

    return rhs_ou


def _rk4_step(rhs: Callable, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    half = 0.5 * dt
    k1 = rhs(t, y)
    k2 = rhs(t + half, y + half * k1)
    k3 = rhs(t + half, y + half * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * (k2 + k3) + k4)


@dataclass(frozen=True)
class ControlRun:
    """Outcome of integrate_control.

    `segments` maps each phase that advanced the state to its PathRecord
    (exact phases contribute a single closed-form step); `transitions`
    lists (phase name, end time) for every phase; `phase_times` holds the
    marked times t1..t4 where the program defines them.
    """

    kind: str
    dt: float
    x0: tuple
    target: Optional[tuple]
    segments: dict
    transitions: tuple
    phase_times: dict
    hdot_sq_integral: float
    ramp_distance: float
    capped: tuple
    constants: Optional[ControlConstants]
    terminal: tuple

    @property
    def t_end(self) -> float:
        return self.transitions[-1][1] if self.transitions else 0.0

    @property
    def terminal_state(self) -> np.ndarray:
        return np.array(self.terminal)

    @property
    def terminal_distance(self) -> Optional[float]:
        if self.target is None:
            return None
        return float(np.linalg.norm(self.terminal_state - np.array(self.target)))

    def to_json_dict(self) -> dict:
        times = {key: self.phase_times.get(key) for key in ("t1", "t2", "t3", "t4")}
        consts = None
        if self.constants is not None:
            consts = {"f": self.constants.f, "C": self.constants.C,
                      "lambda": self.constants.lam, "K": self.constants.K}
        return {
            "kind": self.kind,
            "dt": self.dt,
            "t_end": self.t_end,
            "x0": list(self.x0),
            "terminal_state": list(self.terminal),
            "terminal_distance": self.terminal_distance,
            "phase_times": times,
            "transitions": [[name, t] for name, t in self.transitions],
            "hdot_sq_integral": self.hdot_sq_integral,
            "ramp_distance": self.ramp_distance,
            "capped_phases": list(self.capped),
            "constants": consts,
        }

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("sort_keys", True)
        return json.dumps(self.to_json_dict(), **kwargs)


def integrate_control(spec: ModelSpec, x0, program: ControlProgram,
                      dt: float = 0.01) -> ControlRun:
    """Run a control program from x0 with classical RK4 at step dt.

    Phase transition times are resolved on the step grid (predicates are
    checked at entry and after every step); fixed durations are rounded up
    to whole steps, which for ramp phases only extends into the constant
    tail.  Raises ControlError if the state leaves the state space (CIR:
    xi <= 0), becomes non-finite, or a predicate phase exhausts its hard
    cap with on_cap="error".
    """
    if not isinstance(program, ControlProgram):
        raise TypeError("program must be a ControlProgram")
    if spec.kind not in ("toy", "cir", "ou"):
        raise ValueError("the control system needs a diffusion channel; "
                         f"model kind {spec.kind!r} has none")
    if not (dt > 0.0 and math.isfinite(dt)):
        raise ValueError("dt must be positive and finite")
    x = np.asarray(x0, dtype=float)
    if x.shape != (spec.dim,):
        raise ValueError(f"x0 must have shape ({spec.dim},), got {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")
    if spec.kind == "cir" and not x[4] > 0.0:
        raise ValueError("the CIR input coordinate must start positive")

    dim = spec.dim
    y = np.zeros(dim + 2)
    y[:dim] = x
    t = 0.0
    segments: dict = {}
    transitions = []
    marks: dict = {}
    capped = []
    ramp_total = 0.0

    for ph in program.phases:
        t_enter = t
        if ph.exact is not None:
            t_next, x_next, dh, dq = ph.exact(t, y[:dim].copy())
            x_next = np.asarray(x_next, dtype=float)
            if not (t_next >= t and math.isfinite(t_next) and
                    x_next.shape == (dim,) and np.all(np.isfinite(x_next))):
                raise ControlError(f"phase {ph.name!r}: exact advance returned an "
                                   "invalid state")
            if t_next > t:
                segments[ph.name] = PathRecord(
                    t0=t, dt=t_next - t,
                    states=np.vstack([y[:dim], x_next]),
                    noise=np.array([[dh]]), seed=0)
            y[:dim] = x_next
            y[dim] += dh
            y[dim + 1] += dq
            t = float(t_next)
        else:
            law = ph.law
            if ph.factory:
                made = law(t, y[:dim].copy())
                if isinstance(made, tuple):
                    law, info = made
                    ramp_total += float(info.get("ramp_distance", 0.0))
                else:
                    law = made
            rhs = _make_rhs(spec, law)
            if ph.duration is not None:
                dur = ph.duration(t, y[:dim].copy()) if callable(ph.duration) else ph.duration
                if not (dur >= 0.0 and math.isfinite(dur)):
                    raise ControlError(f"phase {ph.name!r}: computed duration {dur!r} "
                                       "is not a finite nonnegative time")
                n_target = max(0, math.ceil(dur / dt - 1e-9))
            else:
                n_target = None
            rows = [y[:dim].copy()]
            dhs = []
            steps = 0
            proceed = not (ph.until is not None and ph.until(t, y[:dim]))
            while proceed:
                if n_target is not None and steps >= n_target:
                    break
                try:
                    y_next = _rk4_step(rhs, t, y, dt)
                except (ValueError, OverflowError) as exc:
                    raise ControlError(f"phase {ph.name!r}: {exc}") from exc
                if not np.all(np.isfinite(y_next)):
                    raise ControlError(f"phase {ph.name!r}: non-finite state near "
                                       f"t = {t + dt:.6g}")
                steps += 1
                t = t_enter + steps * dt
                if spec.kind == "cir" and y_next[4] <= 0.0:
                    raise ControlError(f"phase {ph.name!r}: left the state space "
                                       f"(xi = {y_next[4]:.6g} at t = {t:.6g})")
                rows.append(y_next[:dim].copy())
                dhs.append(y_next[dim] - y[dim])
                y = y_next
                if ph.until is not None:
                    if ph.until(t, y[:dim]):
                        break
                    if t - t_enter >= ph.cap - 1e-9:
                        if ph.on_cap == "error":
                            raise ControlError(
                                f"phase {ph.name!r}: hard cap {ph.cap:g} ms exhausted "
                                "before its stop condition held")
                        capped.append(ph.name)
                        break
            if steps > 0:
                segments[ph.name] = PathRecord(
                    t0=t_enter, dt=dt, states=np.array(rows),
                    noise=np.array(dhs)[:, None], seed=0)
        transitions.append((ph.name, t))
        if ph.mark is not None:
            marks[ph.mark] = t

    return ControlRun(
        kind=spec.kind, dt=dt, x0=tuple(float(a) for a in x),
        target=program.target, segments=segments,
        transitions=tuple(transitions), phase_times=marks,
        hdot_sq_integral=float(y[dim + 1]), ramp_distance=ramp_total,
        capped=tuple(capped), constants=program.constants,
        terminal=tuple(float(a) for a in y[:dim]))


# ---------------------------------------------------------------------------
# closed-form coasting


def _coast_quad(tau: float, xi_of: Callable, p_of: Callable,
                sqrt_den: bool, sbar: float, svar: float) -> tuple:
    """Increments of h and of int hdot^2 for hdot(s) = (p(s) - S(s)) / den
    with den = sqrt(xi) (CIR) or 1 (OU), over a coast of length tau.

    The signal enters only through its period mean and variance: p and xi
    vary on time scales of at least 1e3 periods during the coasts, so the
    residual coupling between the signal oscillation and the slow factors
    is below 1e-6 relative.
    """
    if tau <= 0.0:
        return 0.0, 0.0

    def f_h(u):
        s = tau * u
        num = p_of(s) - sbar
        return num / math.sqrt(xi_of(s)) if sqrt_den else num

    def f_q(u):
        s = tau * u
        num = p_of(s) - sbar
        val = num * num + svar
        return val / xi_of(s) if sqrt_den else val

    dh = quad(f_h, 0.0, 1.0, limit=200)[0] * tau
    dq = quad(f_q, 0.0, 1.0, limit=200)[0] * tau
    return dh, dq


def _gate_coast(kind: str, a: float, signal: Signal, v: float, gates,
                xi0: float, level: float) -> tuple:
    """Pin the membrane at v and integrate the input coordinate until it
    crosses `level`, in closed form.

    With v constant each gate is linear, j(s) = j_inf + (j0 - j_inf)
    e^{-rho_j s}, so F(v, gates(s)) expands into a finite sum of
    exponentials and xi(s) = xi0 + int F is explicit; the crossing time
    solves xi(tau) = level by bracketed root finding.  Returns
    (tau, gates_end, xi_end, dh, dq); a start within 2e-3 of the level is
    left untouched (tau = 0).
    """
    need = level - xi0
    gates = tuple(float(g) for g in gates)
    if abs(need) <= _COAST_ATOL:
        return 0.0, gates, xi0, 0.0, 0.0

    an, bn, am, bm, ah, bh = _rates(v)
    rho = (an + bn, am + bm, ah + bh)
    ginf = (an / rho[0], am / rho[1], ah / rho[2])
    dn, dm, dh_ = (gates[i] - ginf[i] for i in range(3))

    terms = []  # (coefficient, decay rate mu > 0)
    a0 = 0.3 * (v - 10.6)
    an4 = 36.0 * (v + 12.0)
    for i in range(5):
        coef = an4 * math.comb(4, i) * ginf[0] ** (4 - i) * dn ** i
        if i == 0:
            a0 += coef
        elif coef != 0.0:
            terms.append((coef, i * rho[0]))
    bm3h = 120.0 * (v - 120.0)
    for i in range(4):
        base = bm3h * math.comb(3, i) * ginf[1] ** (3 - i) * dm ** i
        for j, hfac in ((0, ginf[2]), (1, dh_)):
            coef = base * hfac
            mu = i * rho[1] + j * rho[2]
            if mu == 0.0:
                a0 += coef
            elif coef != 0.0:
                terms.append((coef, mu))

    if a0 == 0.0 or (a0 > 0.0) != (need > 0.0):
        raise ControlError(
            "the discharge coast cannot reach the target level: the pinned "
            f"membrane drives xi at rate {a0:.3g} but the level lies "
            f"{need:+.3g} away")

    def xi_of(s):
        out = xi0 + a0 * s
        for coef, mu in terms:
            out += (coef / mu) * (1.0 - math.exp(-mu * s))
        return out

    spill = sum(abs(coef) / mu for coef, mu in terms)
    tau_hi = 1.5 * (abs(need) + spill + 1.0) / abs(a0)
    g0 = xi0 - level
    for _ in range(8):
        if (xi_of(tau_hi) - level) * g0 < 0.0:
            break
        tau_hi *= 4.0
    else:
        raise ControlError("the discharge coast never crosses the target level")
    tau = brentq(lambda s: xi_of(s) - level, 0.0, tau_hi,
                 xtol=1e-9, rtol=8.9e-16, maxiter=200)

    gates_end = tuple(ginf[i] + (gates[i] - ginf[i]) * math.exp(-rho[i] * tau)
                      for i in range(3))

    def f_coast(s):
        out = a0
        for coef, mu in terms:
            out += coef * math.exp(-mu * s)
        return out

    sbar, svar = _sig_moments(signal)
    offset = (a - 0.25) if kind == "cir" else 0.0
    dh, dq = _coast_quad(tau, xi_of,
                         lambda s: f_coast(s) + xi_of(s) - offset,
                         kind == "cir", sbar, svar)
    return tau, gates_end, level, dh, dq


# ---------------------------------------------------------------------------
# program synthesis for the neuron models


def _check_neuron_start(x0: np.ndarray) -> None:
    if x0.shape != (5,):
        raise ValueError("the neuron state has 5 components (v, n, m, h, xi)")
    if not np.all(np.isfinite(x0)):
        raise ValueError("the start point must be finite")
    if np.any(x0[1:4] < 0.0) or np.any(x0[1:4] > 1.0):
        raise ValueError("gating coordinates must lie in [0, 1]")


def _check_target(target, spec: ModelSpec) -> np.ndarray:
    xs = x_star(spec)
    if target is None:
        return xs
    target = np.asarray(target, dtype=float)
    if target.shape != (5,) or not np.allclose(target, xs, atol=1e-9):
        raise ValueError("the synthesized programs steer to the rest point "
                         f"{tuple(round(float(a), 6) for a in xs)} only")
    return xs


def _check_knobs(eps: float, k: int, tol: float, settle_cap: float) -> None:
    if not (0.0 < eps < 0.5):
        raise ValueError("eps must lie in (0, 0.5)")
    if not (isinstance(k, int) and k >= 1):
        raise ValueError("the descent exponent k must be an integer >= 1")
    if not (tol > 0.0 and settle_cap > 0.0):
        raise ValueError("tol and settle_cap must be positive")


def _membrane_settled(x, c: float, tol: float) -> bool:
    """True when the (v, n, m, h) block is a fixed point of the constant
    input c dynamics to within tol."""
    v, n, m, h = x[0], x[1], x[2], x[3]
    if abs(c - _current(v, n, m, h)) > tol:
        return False
    an, bn, am, bm, ah, bh = _rates(v)
    return (abs(an * (1.0 - n) - bn * n) <= tol
            and abs(am * (1.0 - m) - bm * m) <= tol
            and abs(ah * (1.0 - h) - bh * h) <= tol)


def _trap(t, x) -> bool:
    return -12.0 < x[0] < 120.0


def synthesize_cir_control(x0, target=None, params: Optional[ModelSpec] = None, *,
                           eps: float = 1e-3, k: int = 3, tol: float = 1e-2,
                           settle_cap: float = 500.0) -> ControlProgram:
    """Six-phase program steering a CIR-HH state to x* = (v0, gate
    equilibria, 1).

    confine: hold xi at its start value until v re-enters (-12, 120).
    charge: drive xi at unit rate; the membrane sees constant input 1 and
        settles at its fixed point, after which charge-coast jumps xi to
        the threshold K(f+1) in closed form (t2).  The threshold is large
        enough that xi stays above 1 through everything that follows.
    approach: ramp v to v* at slope <= 1; relax: pin v and wait for the
        gates to enter the eps-balls around their equilibria (t3).
    descend: step v down by 10^-k so the pinned-membrane current turns
        slightly negative; discharge drains xi to 1 in closed form (t4).
    settle: hold xi = 1 (input 0 dynamics) until the state is within tol
        of x*; the stability of the rest point has no proven rate, so
        hitting the 500 ms cap is reported, not raised.

    eps, k, tol and the settle cap are configurable; `params` selects the
    CIR model (a and signal).
    """
    spec = cir_hh() if params is None else params
    if spec.kind != "cir":
        raise ValueError("synthesize_cir_control needs a CIR model spec")
    x0 = np.asarray(x0, dtype=float)
    _check_neuron_start(x0)
    if not x0[4] > 0.0:
        raise ValueError("the CIR input coordinate must start positive")
    _check_knobs(eps, k, tol, settle_cap)
    xs = _check_target(target, spec)
    consts = estimate_control_constants(spec)
    sig = _make_sig(spec.signal)
    atld = spec.a - 0.25
    vstar, nstar, mstar, hstar = xs[0], xs[1], xs[2], xs[3]
    xs_arr = xs.copy()

    def hold_current(t, x):
        return -(atld + sig(t) - x[4]) / math.sqrt(x[4])

    def near_target(t, x):
        return float(np.linalg.norm(x - xs_arr)) <= tol

    settle = Phase("settle", law=hold_current, until=near_target,
                   cap=settle_cap, on_cap="note")
    if float(np.linalg.norm(x0 - xs_arr)) <= 1e-6:
        return ControlProgram((settle,), target=tuple(xs), constants=consts)

    zeta = float(x0[4])
    root_zeta = math.sqrt(zeta)
    threshold = consts.K * (consts.f + 1.0)

    def confine_law(t, x):
        return -(atld + sig(t) - zeta) / root_zeta

    def charge_law(t, x):
        return (1.0 - (atld + sig(t) - x[4])) / math.sqrt(x[4])

    def charged(t, x):
        return x[4] >= threshold or _membrane_settled(x, 1.0, _SETTLE_TOL)

    def charge_jump(t0, x0c):
        delta = threshold - x0c[4]
        if delta <= 0.0:
            return t0, x0c, 0.0, 0.0
        sbar, svar = _sig_moments(spec.signal)
        xi0 = float(x0c[4])
        dh, dq = _coast_quad(delta, lambda s: xi0 + s,
                             lambda s: xi0 + s + 1.0 - atld, True, sbar, svar)
        x1 = x0c.copy()
        x1[4] = threshold
        return t0 + delta, x1, dh, dq

    def approach_factory(t0, x0c):
        _, rp = smooth_ramp(RampSpec(float(x0c[0]), vstar, slope_bound=1.0))

        def law(t, x):
            return (rp(t - t0) + _current(x[0], x[1], x[2], x[3])
                    - (atld + sig(t) - x[4])) / math.sqrt(x[4])

        return law, {"ramp_distance": abs(vstar - float(x0c[0]))}

    def relax_law(t, x):
        return (_current(x[0], x[1], x[2], x[3])
                - (atld + sig(t) - x[4])) / math.sqrt(x[4])

    def near_gates(t, x):
        return (abs(x[1] - nstar) <= eps and abs(x[2] - mstar) <= eps
                and abs(x[3] - hstar) <= eps)

    step_down = 10.0 ** (-k)

    def descend_factory(t0, x0c):
        _, rp = smooth_ramp(RampSpec(float(x0c[0]), float(x0c[0]) - step_down,
                                     slope_bound=step_down))

        def law(t, x):
            return (rp(t - t0) + _current(x[0], x[1], x[2], x[3])
                    - (atld + sig(t) - x[4])) / math.sqrt(x[4])

        return law, {"ramp_distance": step_down}

    def discharge(t0, x0c):
        tau, gates_end, xi_end, dh, dq = _gate_coast(
            "cir", spec.a, spec.signal, float(x0c[0]), x0c[1:4], float(x0c[4]), 1.0)
        x1 = np.array([x0c[0], *gates_end, xi_end])
        return t0 + tau, x1, dh, dq

    phases = (
        Phase("confine", law=confine_law, until=_trap,
              cap=10.0 * _t1_estimate(float(x0[0])), mark="t1"),
        Phase("charge", law=charge_law, until=charged,
              cap=10.0 * math.log(consts.C / _SETTLE_TOL) / consts.lam),
        Phase("charge-coast", exact=charge_jump, mark="t2"),
        Phase("approach", law=approach_factory, factory=True,
              duration=lambda t0, x0c: _ramp_time(abs(float(x0c[0]) - vstar), 1.0)),
        Phase("relax", law=relax_law, until=near_gates,
              cap=10.0 * (math.log(1.0 / eps) / consts.lam + 1.0), mark="t3"),
        Phase("descend", law=descend_factory, factory=True, duration=2.0),
        Phase("discharge", exact=discharge, mark="t4"),
        settle,
    )
    return ControlProgram(phases, target=tuple(xs), constants=consts)


def synthesize_ou_control(x0, target=None, params: Optional[ModelSpec] = None, *,
                          eps: float = 1e-3, k: int = 3, tol: float = 1e-2,
                          settle_cap: float = 500.0) -> ControlProgram:
    """Analog of synthesize_cir_control for OU-HH, steering to
    x* = (v0, gate equilibria, 0).

    The input coordinate lives on the whole line here, so there is no
    charge phase and nothing to keep positive; holding xi needs only
    hdot(s) = xi - S(s).  The discharge direction is not fixed either:
    xi may sit on either side of 0 after the approach, so the descend
    step of 10^-k goes down when xi must fall and up when it must rise,
    with the side chosen by a short probe integration of the ramp window.
    """
    spec = ou_hh() if params is None else params
    if spec.kind != "ou":
        raise ValueError("synthesize_ou_control needs an OU model spec")
    x0 = np.asarray(x0, dtype=float)
    _check_neuron_start(x0)
    _check_knobs(eps, k, tol, settle_cap)
    xs = _check_target(target, spec)
    consts = estimate_control_constants(spec)
    sig = _make_sig(spec.signal)
    vstar, nstar, mstar, hstar = xs[0], xs[1], xs[2], xs[3]
    xs_arr = xs.copy()

    def hold_current(t, x):
        return x[4] - sig(t)

    def near_target(t, x):
        return float(np.linalg.norm(x - xs_arr)) <= tol

    settle = Phase("settle", law=hold_current, until=near_target,
                   cap=settle_cap, on_cap="note")
    if float(np.linalg.norm(x0 - xs_arr)) <= 1e-6:
        return ControlProgram((settle,), target=tuple(xs), constants=consts)

    def approach_factory(t0, x0c):
        _, rp = smooth_ramp(RampSpec(float(x0c[0]), vstar, slope_bound=1.0))

        def law(t, x):
            return (rp(t - t0) + _current(x[0], x[1], x[2], x[3])
                    - (sig(t) - x[4]))

        return law, {"ramp_distance": abs(vstar - float(x0c[0]))}

    def relax_law(t, x):
        return _current(x[0], x[1], x[2], x[3]) - (sig(t) - x[4])

    def near_gates(t, x):
        return (abs(x[1] - nstar) <= eps and abs(x[2] - mstar) <= eps
                and abs(x[3] - hstar) <= eps)

    step_down = 10.0 ** (-k)

    def _descend_law(t0, x0c, side):
        _, rp = smooth_ramp(RampSpec(float(x0c[0]), float(x0c[0]) - side * step_down,
                                     slope_bound=step_down))

        def law(t, x):
            return (rp(t - t0) + _current(x[0], x[1], x[2], x[3])
                    - (sig(t) - x[4]))

        return law

    def _probe_xi(t0, x0c, side):
        # RK4 rehearsal of the 2 ms descend window to see which side of the
        # target level xi lands on; the v direction barely matters (the two
        # candidate ramps differ by 2e-3 in v) but the sign of xi does.
        law = _descend_law(t0, x0c, side)
        rhs = _make_rhs(spec, law)
        y = np.zeros(7)
        y[:5] = x0c
        t = t0
        for _ in range(400):
            y = _rk4_step(rhs, t, y, 0.005)
            t += 0.005
        return float(y[4])

    def descend_factory(t0, x0c):
        guess = float(x0c[4]) + 2.0 * _current(x0c[0], x0c[1], x0c[2], x0c[3])
        side = 1.0 if guess >= 0.0 else -1.0
        landing = _probe_xi(t0, x0c, side)
        if abs(landing) > _COAST_ATOL and (landing > 0.0) != (side > 0.0):
            side = -side
            landing = _probe_xi(t0, x0c, side)
            if abs(landing) > _COAST_ATOL and (landing > 0.0) != (side > 0.0):
                raise ControlError("cannot orient the discharge coast: the "
                                   "input coordinate straddles the target "
                                   "level from both descend directions")
        return _descend_law(t0, x0c, side), {"ramp_distance": step_down}

    def discharge(t0, x0c):
        tau, gates_end, xi_end, dh, dq = _gate_coast(
            "ou", 0.0, spec.signal, float(x0c[0]), x0c[1:4], float(x0c[4]), 0.0)
        x1 = np.array([x0c[0], *gates_end, xi_end])
        return t0 + tau, x1, dh, dq

    phases = (
        Phase("confine", law=hold_current, until=_trap,
              cap=10.0 * _t1_estimate(float(x0[0])), mark="t1"),
        Phase("approach", law=approach_factory, factory=True,
              duration=lambda t0, x0c: _ramp_time(abs(float(x0c[0]) - vstar), 1.0)),
        Phase("relax", law=relax_law, until=near_gates,
              cap=10.0 * (math.log(1.0 / eps) / consts.lam + 1.0), mark="t3"),
        Phase("descend", law=descend_factory, factory=True, duration=2.0),
        Phase("discharge", exact=discharge, mark="t4"),
        settle,
    )
    return ControlProgram(phases, target=tuple(xs), constants=consts)
