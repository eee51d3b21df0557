"""Concrete systems: the 2D toy model, deterministic Hodgkin-Huxley, and the
CIR-HH / OU-HH stochastic neuron models.

State conventions (time in ms, voltage in mV):

* toy      -- x = (xi, psi), 2D, one Brownian motion,
              d xi  = -c sin^2(2 pi t) xi dt + dB,
              d psi = (1 - psi) dt + psi dB.
* hh_det   -- x = (v, n, m, h), 4D, noise-free, dv/dt = c(t) - F(v,n,m,h).
* cir      -- x = (v, n, m, h, xi), the membrane voltage is driven by the
              increments of a CIR process with periodic forcing:
              dv = d xi - F dt,   d xi = [a + S(t) - xi] dt + sqrt(xi) dW.
* ou       -- same layout with an Ornstein-Uhlenbeck input,
              d xi = [S(t) - xi] dt + dW.

Gating variables follow dj = [alpha_j(v)(1-j) - beta_j(v) j] dt for
j in {n, m, h}.  The rate functions use the phi kernel from `expr` so they
are analytic through the removable singularities at v = 10 and v = 25.

All numeric entry points accept scalars or numpy arrays for the state and
vectorize over a leading batch axis; time arguments are scalar.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq
from scipy.special import expit

from .expr import Const, Expr, Kernel, Unary, Var, phi_kernel, SymVectorField

__all__ = [
    "G_K", "E_K", "G_NA", "E_NA", "G_L", "E_L",
    "alpha_n", "beta_n", "alpha_m", "beta_m", "alpha_h", "beta_h",
    "RATES", "HHRateSet", "hh_rate_exprs",
    "current_F", "gate_equilibrium", "F_infinity", "rest_potential",
    "Signal", "DEFAULT_SIGNAL", "ModelSpec",
    "toy_model", "deterministic_hh", "cir_hh", "ou_hh",
    "x_star", "state_labels", "drift", "diffusion", "stratonovich_drift",
    "symbolic_fields",
]

# Conductances (mS/cm^2) and reversal potentials (mV), resting convention
# with v = 0 at rest; potassium, sodium, leak.
G_K, E_K = 36.0, -12.0
G_NA, E_NA = 120.0, 120.0
G_L, E_L = 0.3, 10.6


# ---------------------------------------------------------------------------
# rate functions


def _phi(u):
    """u / (e^u - 1) extended through u = 0, vectorized."""
    u = np.asarray(u, dtype=float)
    small = np.abs(u) < 1e-4
    safe = np.where(small, 1.0, u)
    with np.errstate(over="ignore"):
        out = np.where(small, 1.0 - u / 2.0 + u * u / 12.0, safe / np.expm1(safe))
    return out


def _scalar_or_array(a):
    return float(a) if np.ndim(a) == 0 else a


def alpha_n(v):
    return _scalar_or_array(0.1 * _phi((10.0 - np.asarray(v, dtype=float)) / 10.0))


def beta_n(v):
    return _scalar_or_array(0.125 * np.exp(-np.asarray(v, dtype=float) / 80.0))


def alpha_m(v):
    return _scalar_or_array(_phi((25.0 - np.asarray(v, dtype=float)) / 10.0))


def beta_m(v):
    return _scalar_or_array(4.0 * np.exp(-np.asarray(v, dtype=float) / 18.0))


def alpha_h(v):
    return _scalar_or_array(0.07 * np.exp(-np.asarray(v, dtype=float) / 20.0))


def beta_h(v):
    # 1 / (e^{(30-v)/10} + 1), written through expit for stability far out.
    return _scalar_or_array(expit((np.asarray(v, dtype=float) - 30.0) / 10.0))


RATES = {
    "n": (alpha_n, beta_n),
    "m": (alpha_m, beta_m),
    "h": (alpha_h, beta_h),
}


@dataclass(frozen=True)
class HHRateSet:
    """The six gating rates as expressions in x1 (the membrane potential).

    All six are strictly positive on v in [-100, 200]; alpha_n and alpha_m
    go through their removable singularities via the phi kernel.
    """

    alpha_n: Expr
    beta_n: Expr
    alpha_m: Expr
    beta_m: Expr
    alpha_h: Expr
    beta_h: Expr

    def for_gate(self, j: str) -> tuple[Expr, Expr]:
        if j not in ("n", "m", "h"):
            raise ValueError(f"unknown gate {j!r}")
        return getattr(self, "alpha_" + j), getattr(self, "beta_" + j)


def hh_rate_exprs() -> HHRateSet:
    v = Var("x1")
    return HHRateSet(
        alpha_n=Const(0.1) * Kernel(0, (Const(10.0) - v) / Const(10.0)),
        beta_n=Const(0.125) * Unary("exp", -(v / Const(80.0))),
        alpha_m=Kernel(0, (Const(25.0) - v) / Const(10.0)),
        beta_m=Const(4.0) * Unary("exp", -(v / Const(18.0))),
        alpha_h=Const(0.07) * Unary("exp", -(v / Const(20.0))),
        beta_h=Const(1.0) / (Unary("exp", (Const(30.0) - v) / Const(10.0)) + Const(1.0)),
    )


# ---------------------------------------------------------------------------
# membrane current and equilibria


def current_F(v, n, m, h):
    """Ionic current 36 n^4 (v+12) + 120 m^3 h (v-120) + 0.3 (v-10.6)."""
    v = np.asarray(v, dtype=float)
    n = np.asarray(n, dtype=float)
    m = np.asarray(m, dtype=float)
    h = np.asarray(h, dtype=float)
    out = (
        G_K * n**4 * (v - E_K)
        + G_NA * m**3 * h * (v - E_NA)
        + G_L * (v - E_L)
    )
    return _scalar_or_array(out)


def gate_equilibrium(j: str, v):
    """j_inf(v) = alpha_j / (alpha_j + beta_j), j in {n, m, h}."""
    if j not in RATES:
        raise ValueError(f"unknown gate {j!r}")
    a_fn, b_fn = RATES[j]
    a, b = a_fn(v), b_fn(v)
    return _scalar_or_array(np.asarray(a) / (np.asarray(a) + np.asarray(b)))


def F_infinity(v):
    """F along the gate-equilibrium manifold; strictly increasing in v."""
    return current_F(
        v,
        gate_equilibrium("n", v),
        gate_equilibrium("m", v),
        gate_equilibrium("h", v),
    )


def rest_potential(c: float) -> float:
    """The unique v with F_infinity(v) = c, to residual 1e-10.

    Brackets the root by interval expansion, solves by Brent's method
    (bisection/secant hybrid), then polishes with Newton steps on a
    central-difference derivative.
    """
    c = float(c)
    lo, hi = -50.0, 150.0
    for _ in range(60):
        if F_infinity(lo) < c:
            break
        lo -= 100.0
    else:
        raise RuntimeError("bracket expansion failed on the left")
    for _ in range(60):
        if F_infinity(hi) > c:
            break
        hi += 100.0
    else:
        raise RuntimeError("bracket expansion failed on the right")
    v = brentq(lambda y: F_infinity(y) - c, lo, hi, xtol=1e-13, rtol=8.9e-16)
    for _ in range(5):
        r = F_infinity(v) - c
        if abs(r) <= 1e-10:
            break
        slope = (F_infinity(v + 1e-6) - F_infinity(v - 1e-6)) / 2e-6
        v -= r / slope
    if abs(F_infinity(v) - c) > 1e-10:
        raise RuntimeError(f"root polish stalled at residual {F_infinity(v) - c:.3e}")
    return float(v)


# ---------------------------------------------------------------------------
# periodic input signal


@dataclass(frozen=True)
class Signal:
    """Finite trigonometric signal S(t) = base + sum_k c_k cos(2 pi k t / T)
    + sum_k s_k sin(2 pi k t / T), required to be nonnegative.

    Nonnegativity is enforced at construction: accepted outright when
    base - sum|coeffs| >= 0, otherwise checked on a dense grid over one
    period.  `min_value` records the smallest sampled value.
    """

    period: float = 10.0
    base: float = 0.0
    cos_coeffs: tuple = ()
    sin_coeffs: tuple = ()
    min_value: float = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.period > 0.0 and math.isfinite(self.period)):
            raise ValueError("signal period must be positive and finite")
        object.__setattr__(self, "cos_coeffs", tuple(float(a) for a in self.cos_coeffs))
        object.__setattr__(self, "sin_coeffs", tuple(float(a) for a in self.sin_coeffs))
        object.__setattr__(self, "base", float(self.base))
        if self.cos_coeffs or self.sin_coeffs:
            norm = sum(abs(a) for a in self.cos_coeffs + self.sin_coeffs)
            if self.base - norm >= 0.0:
                mn = self.base - norm
            else:
                grid = np.linspace(0.0, self.period, 8192, endpoint=False)
                mn = float(np.min(self.value(grid)))
        else:
            mn = self.base
        object.__setattr__(self, "min_value", mn)
        if mn < 0.0:
            raise ValueError(f"signal takes negative values (min {mn:.6g}); "
                             "a nonnegative signal is required")

    @classmethod
    def from_sin2(cls, s0: float = 0.5, s1: float = 1.0, period: float = 10.0) -> "Signal":
        """S(t) = s0 + s1 sin^2(pi t / period), in trigonometric form."""
        if s0 < 0 or s1 < 0:
            raise ValueError("from_sin2 requires s0 >= 0 and s1 >= 0")
        return cls(period=period, base=s0 + s1 / 2.0, cos_coeffs=(-s1 / 2.0,))

    def value(self, t):
        t = np.asarray(t, dtype=float)
        w = 2.0 * math.pi / self.period
        out = np.full(t.shape, self.base, dtype=float)
        for k, a in enumerate(self.cos_coeffs, start=1):
            out += a * np.cos(k * w * t)
        for k, a in enumerate(self.sin_coeffs, start=1):
            out += a * np.sin(k * w * t)
        return _scalar_or_array(out)

    def as_expr(self) -> Expr:
        t = Var("t")
        w = 2.0 * math.pi / self.period
        e: Expr = Const(self.base)
        for k, a in enumerate(self.cos_coeffs, start=1):
            e = e + Const(a) * Unary("cos", Const(k * w) * t)
        for k, a in enumerate(self.sin_coeffs, start=1):
            e = e + Const(a) * Unary("sin", Const(k * w) * t)
        return e


DEFAULT_SIGNAL = Signal.from_sin2()

_KINDS = ("toy", "hh_det", "cir", "ou")
_DIMS = {"toy": 2, "hh_det": 4, "cir": 5, "ou": 5}
_NOISE_DIMS = {"toy": 1, "hh_det": 0, "cir": 1, "ou": 1}


@dataclass(frozen=True)
class ModelSpec:
    """Immutable description of one of the four systems.

    `c` is the toy damping scale, or the constant input current for the
    deterministic model when `input_fn` is not given.  `a` and `signal`
    parametrize the CIR input; `signal` alone the OU input.
    """

    kind: str
    c: float = 1.0
    a: float = 1.0
    signal: Signal = DEFAULT_SIGNAL
    input_fn: Optional[Callable[[float], float]] = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {_KINDS}")
        if self.kind == "toy" and not self.c > 0.0:
            raise ValueError("toy model requires c > 0")
        if self.kind == "cir" and not 2.0 * self.a > 1.0:
            raise ValueError(f"CIR input requires 2a > 1, got a = {self.a}")
        if not isinstance(self.signal, Signal):
            raise TypeError("signal must be a Signal instance")
        if self.input_fn is not None and self.kind != "hh_det":
            raise ValueError("input_fn is only meaningful for the deterministic model")

    @property
    def dim(self) -> int:
        return _DIMS[self.kind]

    @property
    def noise_dim(self) -> int:
        return _NOISE_DIMS[self.kind]

    @property
    def period(self) -> float:
        return 1.0 if self.kind == "toy" else self.signal.period

    def input_value(self, t: float) -> float:
        """Deterministic drive c(t); constant c when no function is set."""
        if self.kind != "hh_det":
            raise ValueError("input_value applies to the deterministic model only")
        return float(self.input_fn(t)) if self.input_fn is not None else self.c


def toy_model(c: float = 1.0) -> ModelSpec:
    return ModelSpec(kind="toy", c=c)


def deterministic_hh(c: float = 0.0, input_fn: Optional[Callable[[float], float]] = None) -> ModelSpec:
    return ModelSpec(kind="hh_det", c=c, input_fn=input_fn)


def cir_hh(a: float = 1.0, signal: Optional[Signal] = None) -> ModelSpec:
    return ModelSpec(kind="cir", a=a, signal=DEFAULT_SIGNAL if signal is None else signal)


def ou_hh(signal: Optional[Signal] = None) -> ModelSpec:
    return ModelSpec(kind="ou", signal=DEFAULT_SIGNAL if signal is None else signal)


@lru_cache(maxsize=32)
def _hh_equilibrium(c: float) -> tuple:
    v = rest_potential(c)
    return (v, gate_equilibrium("n", v), gate_equilibrium("m", v), gate_equilibrium("h", v))


def x_star(spec: ModelSpec) -> np.ndarray:
    """Distinguished target state.

    Toy: the rest point (0, 2/3) of the Stratonovich drift.  HH variants:
    membrane at the rest potential of the relevant constant input with
    gates at equilibrium; the input coordinate sits at 1 (CIR) or 0 (OU).
    """
    if spec.kind == "toy":
        return np.array([0.0, 2.0 / 3.0])
    c = spec.c if (spec.kind == "hh_det" and spec.input_fn is None) else 0.0
    v, n, m, h = _hh_equilibrium(c)
    if spec.kind == "hh_det":
        return np.array([v, n, m, h])
    xi = 1.0 if spec.kind == "cir" else 0.0
    return np.array([v, n, m, h, xi])


def state_labels(spec: ModelSpec) -> tuple:
    if spec.kind == "toy":
        return ("xi", "psi")
    if spec.kind == "hh_det":
        return ("v", "n", "m", "h")
    return ("v", "n", "m", "h", "xi")


# ---------------------------------------------------------------------------
# Ito coefficients


def _check_state(spec: ModelSpec, x) -> tuple:
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.ndim != 2 or X.shape[1] != spec.dim:
        raise ValueError(f"state must have {spec.dim} components, got shape {x.shape}")
    return X, single


def _gate_drift(v, name, j):
    a_fn, b_fn = RATES[name]
    return a_fn(v) * (1.0 - j) - b_fn(v) * j


def drift(spec: ModelSpec, t: float, x) -> np.ndarray:
    """Ito drift b(t, x); vectorized over a leading batch axis of x.

    CIR mode requires xi >= 0 (the boundary value itself is admitted
    because the truncated Euler scheme evaluates coefficients there).
    """
    X, single = _check_state(spec, x)
    out = np.empty_like(X)
    if spec.kind == "toy":
        s = math.sin(2.0 * math.pi * t)
        out[:, 0] = -spec.c * s * s * X[:, 0]
        out[:, 1] = 1.0 - X[:, 1]
    else:
        v = X[:, 0]
        Fv = current_F(v, X[:, 1], X[:, 2], X[:, 3])
        for i, j in enumerate(("n", "m", "h"), start=1):
            out[:, i] = _gate_drift(v, j, X[:, i])
        if spec.kind == "hh_det":
            out[:, 0] = spec.input_value(t) - Fv
        else:
            xi = X[:, 4]
            if spec.kind == "cir":
                if np.any(xi < 0.0):
                    raise ValueError("CIR state has negative input component")
                pull = spec.a + spec.signal.value(t) - xi
            else:
                pull = spec.signal.value(t) - xi
            out[:, 0] = pull - Fv
            out[:, 4] = pull
    return out[0] if single else out


def diffusion(spec: ModelSpec, x) -> np.ndarray:
    """Diffusion matrix sigma(x) of shape (d, noise_dim); batched to
    (N, d, noise_dim) for batched states."""
    X, single = _check_state(spec, x)
    n = X.shape[0]
    out = np.zeros((n, spec.dim, spec.noise_dim))
    if spec.kind == "toy":
        out[:, 0, 0] = 1.0
        out[:, 1, 0] = X[:, 1]
    elif spec.kind == "cir":
        xi = X[:, 4]
        if np.any(xi < 0.0):
            raise ValueError("CIR state has negative input component")
        r = np.sqrt(xi)
        out[:, 0, 0] = r
        out[:, 4, 0] = r
    elif spec.kind == "ou":
        out[:, 0, 0] = 1.0
        out[:, 4, 0] = 1.0
    return out[0] if single else out


def stratonovich_drift(spec: ModelSpec, t: float, x) -> np.ndarray:
    """Drift after Ito-to-Stratonovich conversion.

    CIR: exactly -1/4 on the voltage and input components.  Toy: -psi/2
    on the second component.  OU and deterministic: no correction.
    """
    X, single = _check_state(spec, x)
    out = np.atleast_2d(drift(spec, t, X))
    if spec.kind == "toy":
        out = out.copy()
        out[:, 1] -= 0.5 * X[:, 1]
    elif spec.kind == "cir":
        out = out.copy()
        out[:, 0] -= 0.25
        out[:, 4] -= 0.25
    return out[0] if single else out


# ---------------------------------------------------------------------------
# symbolic vector fields


def _current_expr() -> Expr:
    v, n, m, h = Var("x1"), Var("x2"), Var("x3"), Var("x4")
    return (
        Const(G_K) * n**4 * (v - Const(E_K))
        + Const(G_NA) * m**3 * h * (v - Const(E_NA))
        + Const(G_L) * (v - Const(E_L))
    )


def symbolic_fields(spec: ModelSpec) -> tuple:
    """(V0, V1) as symbolic fields over (t, x1..xd): V0 carries the
    Stratonovich drift with time component 1, V1 the diffusion column."""
    if spec.kind == "toy":
        xi, psi = Var("x1"), Var("x2")
        sin2 = Unary("sin", Const(2.0 * math.pi) * Var("t")) ** 2
        v0 = SymVectorField(2, (Const(1.0), Const(-spec.c) * sin2 * xi,
                                Const(1.0) - Const(1.5) * psi), word="V0")
        v1 = SymVectorField(2, (Const(0.0), Const(1.0), psi), word="V1")
        return v0, v1
    if spec.kind == "hh_det":
        raise ValueError("symbolic fields are defined for the noisy systems only")
    rates = hh_rate_exprs()
    v, xi = Var("x1"), Var("x5")
    s_expr = spec.signal.as_expr()
    gate_comps = []
    for i, j in enumerate(("n", "m", "h"), start=2):
        a_e, b_e = rates.for_gate(j)
        g = Var(f"x{i}")
        gate_comps.append(a_e * (Const(1.0) - g) - b_e * g)
    if spec.kind == "cir":
        pull = Const(spec.a - 0.25) + s_expr - xi
        sq = Unary("sqrt", xi)
        v1_comps = (Const(0.0), sq, Const(0.0), Const(0.0), Const(0.0), sq)
    else:
        pull = s_expr - xi
        v1_comps = (Const(0.0), Const(1.0), Const(0.0), Const(0.0), Const(0.0), Const(1.0))
    v0 = SymVectorField(5, (Const(1.0), pull - _current_expr(),
                            *gate_comps, pull), word="V0")
    v1 = SymVectorField(5, v1_comps, word="V1")
    return v0, v1
