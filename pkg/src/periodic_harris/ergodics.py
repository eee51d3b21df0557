"""Lyapunov drift verification and long-run ergodic averages.

The Lyapunov candidates are V = 1 + log^2(xi) + xi^2 + psi(v) for the
square-root input model and V = 1 + xi^2 + psi(v) for the linear one,
with psi an even C^2 bump that matches |v| outside [-1, 1].  The drift
of the period skeleton is estimated by Monte Carlo at a designed set of
test states and summarised by a nonnegative least-squares fit of
E[V(X_T)] against lambda * V(x) + delta.

Ergodic averages come in two flavours: arithmetic means of a state
functional along the period skeleton, and trapezoidal time averages of a
phase-dependent functional along one long path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .model import ModelSpec, x_star
from .sde import SimConfig, SimulationError, _reported, integrate, iter_path_blocks

__all__ = [
    "LyapunovSpec", "DriftPoint", "DriftFit", "DriftReport",
    "SkeletonAverage", "ContinuousAverage",
    "psi", "lyapunov_for", "eval_V", "default_test_points",
    "mc_drift_estimate", "fit_drift_inequality", "drift_report",
    "ergodic_average_skeleton", "ergodic_average_continuous",
    "write_drift_csv",
]


def psi(y):
    """Even C^2 bump equal to |y| for |y| > 1.

    On [-1, 1] the unique symmetric quartic with psi(1) = 1, psi'(1) = 1
    and psi''(1) = 0: psi(y) = 3/8 + (3/4) y^2 - (1/8) y^4.  Center value
    psi(0) = 3/8.
    """
    y = np.asarray(y, dtype=float)
    a = np.abs(y)
    inner = 0.375 + 0.75 * y * y - 0.125 * y ** 4
    out = np.where(a > 1.0, a, inner)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class LyapunovSpec:
    """Evaluation rule for the Lyapunov candidate of one input model."""

    kind: str
    psi_center: float = 0.375

    def __post_init__(self):
        if self.kind not in ("cir", "ou"):
            raise ValueError("Lyapunov candidates are defined for the noisy input models")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        batch = x.ndim == 2
        X = np.atleast_2d(x)
        if X.shape[1] != 5:
            raise ValueError("state must have 5 components")
        v, xi = X[:, 0], X[:, 4]
        if self.kind == "cir":
            if np.any(xi <= 0.0):
                raise ValueError("Lyapunov evaluation needs xi > 0 in CIR mode")
            out = 1.0 + np.log(xi) ** 2 + xi * xi + psi(v)
        else:
            out = 1.0 + xi * xi + psi(v)
        return out if batch else float(out[0])


def lyapunov_for(spec: ModelSpec) -> LyapunovSpec:
    if spec.kind not in ("cir", "ou"):
        raise ValueError("Lyapunov candidates are defined for the noisy input models")
    return LyapunovSpec(kind=spec.kind)


def eval_V(spec: ModelSpec, x):
    """V(x) for the model's Lyapunov candidate; batch rows accepted."""
    return lyapunov_for(spec).value(x)


def default_test_points(spec: ModelSpec) -> np.ndarray:
    """20 test states: near equilibrium, large |v|, large xi, extreme input.

    The fourth group probes xi near 0 for the square-root input (where the
    diffusion degenerates) and large negative xi for the linear one.
    """
    xs = np.asarray(x_star(spec), dtype=float)
    if xs.shape != (5,):
        raise ValueError("test point design needs a 5-dimensional model")
    pts = np.tile(xs, (20, 1))
    pts[0:5, 0] = xs[0] + np.array([0.0, -1.0, -0.5, 0.5, 1.0])
    pts[5:10, 0] = [-60.0, -30.0, 60.0, 90.0, 110.0]
    pts[10:15, 4] = [10.0, 20.0, 50.0, 100.0, 200.0]
    if spec.kind == "cir":
        pts[15:20, 4] = [0.02, 0.05, 0.1, 0.2, 0.5]
    else:
        pts[15:20, 4] = [-10.0, -20.0, -50.0, -100.0, -200.0]
    return pts


def mc_drift_estimate(spec: ModelSpec, x, T: Optional[float] = None,
                      replicas: int = 400, seed: int = 0, dt: float = 0.01):
    """Monte Carlo estimate of E[V(X_T)] from start x, with standard error."""
    if replicas < 100:
        raise ValueError("replicas must be >= 100")
    if T is None:
        T = spec.period
    if T < 0:
        raise ValueError("T must be >= 0")
    lyap = lyapunov_for(spec)
    x = np.asarray(x, dtype=float)
    if T == 0.0:
        return lyap.value(x), 0.0
    n = int(round(T / dt))
    if abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError("dt must divide the horizon T")
    rng = np.random.default_rng(seed)
    noise = rng.normal(0.0, np.sqrt(dt), size=(replicas, n, spec.noise_dim))
    x0 = np.tile(x, (replicas, 1))
    try:
        states, _, _ = integrate(spec, x0, 0.0, dt, noise)
    except SimulationError:
        # rerun one replica at a time to name the offender
        for i in range(replicas):
            try:
                integrate(spec, x, 0.0, dt, noise[i])
            except SimulationError as err:
                raise SimulationError(f"replica {i}: {err}") from err
        raise
    ends = _reported(spec, states[:, -1, :])
    vals = lyap.value(ends)
    est = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / np.sqrt(replicas))
    return est, se


@dataclass(frozen=True)
class DriftPoint:
    x: tuple
    V: float
    estimate: float
    stderr: float


@dataclass(frozen=True)
class DriftFit:
    lam: float
    delta: float
    lam_se: float
    delta_se: float
    violations: tuple
    n_used: int
    v_floor: float


def _envelope_lsq(V, est):
    """Minimise sum (lam V + delta - est)^2 over lam V_i + delta >= est_i,
    lam >= 0, delta >= 0.

    A two-variable convex QP; the optimum has at most two active
    constraints, so exhaustive enumeration of active sets is exact.
    """
    n = len(V)

    def objective(lam, delta):
        r = lam * V + delta - est
        return float(r @ r)

    def feasible(lam, delta):
        slack = 1e-9 * max(1.0, float(np.max(np.abs(est))))
        return (lam >= -1e-15 and delta >= -1e-15
                and np.all(lam * V + delta >= est - slack))

    cands = []
    # unconstrained least squares
    A = np.column_stack([V, np.ones(n)])
    cands.append(np.linalg.lstsq(A, est, rcond=None)[0])
    # one active constraint: minimise along delta = est_i - lam V_i
    for i in range(n):
        dV = V - V[i]
        den = float(dV @ dV)
        if den > 0:
            lam = float(dV @ (est - est[i])) / den
            cands.append((lam, est[i] - lam * V[i]))
    # lam = 0 or delta = 0 alone
    cands.append((0.0, float(np.mean(est))))
    sVV = float(V @ V)
    if sVV > 0:
        cands.append((float(V @ est) / sVV, 0.0))
    # two active constraints (vertices), and single constraints with an axis
    for i in range(n):
        for j in range(i + 1, n):
            if V[i] != V[j]:
                lam = (est[i] - est[j]) / (V[i] - V[j])
                cands.append((lam, est[i] - lam * V[i]))
        cands.append((0.0, est[i]))
        if V[i] != 0:
            cands.append((est[i] / V[i], 0.0))
    cands.append((0.0, 0.0))
    best, best_f = None, np.inf
    for lam, delta in cands:
        lam, delta = max(float(lam), 0.0), max(float(delta), 0.0)
        if feasible(lam, delta):
            f = objective(lam, delta)
            if best is None or f < best_f - 1e-12 * max(1.0, best_f):
                best, best_f = (lam, delta), f
    if best is None:
        raise RuntimeError("envelope fit found no feasible candidate")
    return best


def fit_drift_inequality(points: Sequence, v_floor: float = 1.0) -> DriftFit:
    """Smallest dominating pair: least squares of lam V + delta against the
    estimates, constrained to lam V_i + delta >= estimate_i with lam,
    delta >= 0, so the fitted line certifies the one-period inequality.

    `points` holds (V, estimate, stderr) triples or DriftPoint records.
    The fit uses points with V >= v_floor; violations are indices (over all
    points) with estimate_i - 3 stderr_i > lam V_i + delta.
    """
    rows = [(p.V, p.estimate, p.stderr) if isinstance(p, DriftPoint) else tuple(p)
            for p in points]
    if len(rows) < 10:
        raise ValueError("need at least 10 test points")
    arr = np.asarray(rows, dtype=float)
    V, est, se = arr[:, 0], arr[:, 1], arr[:, 2]
    keep = V >= v_floor
    if np.ptp(V[keep]) <= 1e-12 * max(1.0, np.max(np.abs(V[keep]), initial=0.0)):
        raise ValueError("degenerate design: all V values equal")
    lam, delta = _envelope_lsq(V[keep], est[keep])
    # conservative band: ordinary least-squares covariance at the solution,
    # with the one-sided residuals standing in for noise
    A = np.column_stack([V[keep], np.ones(int(np.sum(keep)))])
    resid = A @ np.array([lam, delta]) - est[keep]
    dof = max(int(np.sum(keep)) - 2, 1)
    cov = (float(resid @ resid) / dof) * np.linalg.inv(A.T @ A)
    ses = np.sqrt(np.diag(cov))
    bad = tuple(int(i) for i in np.nonzero(est - 3.0 * se > lam * V + delta)[0])
    return DriftFit(lam=lam, delta=delta, lam_se=float(ses[0]), delta_se=float(ses[1]),
                    violations=bad, n_used=int(np.sum(keep)), v_floor=v_floor)


@dataclass(frozen=True)
class DriftReport:
    kind: str
    T: float
    replicas: int
    seed: int
    dt: float
    points: tuple
    fit: DriftFit

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind, "T": self.T, "replicas": self.replicas,
            "seed": self.seed, "dt": self.dt,
            "points": [{"x": list(p.x), "V": p.V, "estimate": p.estimate,
                        "stderr": p.stderr} for p in self.points],
            "fit": {"lambda": self.fit.lam, "delta": self.fit.delta,
                    "lambda_se": self.fit.lam_se, "delta_se": self.fit.delta_se,
                    "violations": list(self.fit.violations),
                    "n_used": self.fit.n_used, "v_floor": self.fit.v_floor},
        }

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True, **kw)


def drift_report(spec: ModelSpec, points=None, T: Optional[float] = None,
                 replicas: int = 400, seed: int = 0, dt: float = 0.01,
                 v_floor: float = 1.0) -> DriftReport:
    """Estimate the one-period drift of V at each test point and fit it."""
    if points is None:
        points = default_test_points(spec)
    pts = np.asarray(points, dtype=float)
    lyap = lyapunov_for(spec)
    if T is None:
        T = spec.period
    recs = []
    for i, x in enumerate(pts):
        est, se = mc_drift_estimate(spec, x, T=T, replicas=replicas,
                                    seed=seed + i, dt=dt)
        recs.append(DriftPoint(x=tuple(float(a) for a in x),
                               V=float(lyap.value(x)), estimate=est, stderr=se))
    fit = fit_drift_inequality(recs, v_floor=v_floor)
    return DriftReport(kind=spec.kind, T=float(T), replicas=replicas, seed=seed,
                       dt=dt, points=tuple(recs), fit=fit)


def write_drift_csv(report: DriftReport, fp) -> None:
    fp.write("V,estimate,stderr\n")
    for p in report.points:
        fp.write(f"{p.V:.17g},{p.estimate:.17g},{p.stderr:.17g}\n")


# ---------------------------------------------------------------------------
# ergodic averages


@dataclass(frozen=True)
class SkeletonAverage:
    """Partial means (1/j) sum_{k<=j} G(X_{kT}) along one chain."""

    values: np.ndarray
    averages: np.ndarray
    seed: int

    @property
    def final(self) -> float:
        return float(self.averages[-1])

    def band(self, z: float = 3.0) -> float:
        """z * sample std / sqrt(n), the naive error band at the end."""
        n = len(self.values)
        return float(z * np.std(self.values, ddof=1) / np.sqrt(n))


def ergodic_average_skeleton(spec: ModelSpec, x0, G: Callable, n: int,
                             dt: float = 0.01, seed: int = 0) -> SkeletonAverage:
    """Running averages of G over the first n period-skeleton states.

    G maps a batch of states (B, d) to (B,) values and should be at most
    polynomially growing.  One continuous path is simulated; its states at
    T, 2T, ..., nT are the sample.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    per = int(round(spec.period / dt))
    if abs(per * dt - spec.period) > 1e-9 * max(1.0, spec.period):
        raise ValueError("dt must divide the signal period")
    cfg = SimConfig(dt=dt, horizon=n * spec.period, seed=seed)
    vals = np.empty(n)
    got = 0
    for t_start, states in iter_path_blocks(spec, x0, 0.0, cfg,
                                            block_steps=per * max(1, 50_000 // per)):
        # global indices of the block rows are offset + 0..len-1; the first
        # row repeats the previous block's last row, so it never counts here
        offset = int(round(t_start / dt))
        idx = np.arange(offset, offset + len(states))
        take = (idx % per == 0) & (idx > offset)
        rows = states[take]
        if len(rows):
            vals[got:got + len(rows)] = np.asarray(G(rows), dtype=float)
            got += len(rows)
    if got != n:
        raise SimulationError(f"collected {got} skeleton states, expected {n}")
    averages = np.cumsum(vals) / np.arange(1, n + 1)
    return SkeletonAverage(values=vals, averages=averages, seed=seed)


@dataclass(frozen=True)
class ContinuousAverage:
    """Trapezoidal time averages (1/t) int_0^t F(phase(s), X_s) ds."""

    times: np.ndarray
    averages: np.ndarray
    horizon: float
    seed: int

    @property
    def final(self) -> float:
        return float(self.averages[-1])


def ergodic_average_continuous(spec: ModelSpec, x0, F: Callable, horizon: float,
                               dt: float = 0.01, seed: int = 0,
                               checkpoints=None) -> ContinuousAverage:
    """Time average of F(s mod T, X_s) along one path, at checkpoints.

    F maps (phase array, state batch) to values; the integral is the
    trapezoid rule on the simulation grid.  Checkpoints default to ten
    equispaced times; each is snapped to the first grid time at or after it.
    """
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    cfg = SimConfig(dt=dt, horizon=horizon, seed=seed)
    total = cfg.n_steps()
    if checkpoints is None:
        checkpoints = [horizon * (j + 1) / 10 for j in range(10)]
    marks = sorted(set(min(total, max(1, int(np.ceil(round(c / dt, 9)))))
                       for c in checkpoints))
    T = spec.period
    integral = 0.0
    out_t, out_avg = [], []
    pending = list(marks)
    for t_start, states in iter_path_blocks(spec, x0, 0.0, cfg):
        offset = int(round(t_start / dt))
        times = (offset + np.arange(len(states))) * dt
        vals = np.asarray(F(np.mod(times, T), states), dtype=float)
        # blocks overlap by one row, so their trapezoid segments partition
        contrib = np.concatenate([[0.0], np.cumsum((vals[1:] + vals[:-1]) * 0.5 * dt)])
        while pending and pending[0] <= offset + len(states) - 1:
            k = pending.pop(0)
            out_t.append(k * dt)
            out_avg.append((integral + contrib[k - offset]) / (k * dt))
        integral += contrib[-1]
    return ContinuousAverage(times=np.asarray(out_t), averages=np.asarray(out_avg),
                             horizon=horizon, seed=seed)
