"""Model definitions: ionic current, rates, equilibria, coefficients."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import cumulative_simpson, simpson, solve_ivp

from periodic_harris import model as M
from periodic_harris.expr import Const, Var, evaluate, to_callable

# Frozen from 50-digit evaluation of the rate formulas (independent of the
# package code): roots of F_infinity(v) = c and gate equilibria.
REST = {
    -5.0: -6.9657466889260328,
    0.0: 0.046214857938441554,
    5.0: 3.3353681312284663,
    20.0: 8.5182747543251282,
}
N_INF_10 = 0.47548378767952963
M_INF_25 = 0.5006486315783903
GATES_AT_V0 = (0.3183853623363492, 0.053221629373433583, 0.59450359301705673)


# ---------------------------------------------------------------------------
# ionic current


def test_current_F_corner_values():
    assert M.current_F(10.6, 0, 0, 0) == pytest.approx(0.0, abs=1e-12)
    assert M.current_F(-12, 0, 0, 0) == pytest.approx(-6.78, abs=1e-12)
    assert M.current_F(-12, 1, 0, 0) == pytest.approx(-6.78, abs=1e-12)
    assert M.current_F(120, 0, 0, 0) == pytest.approx(32.82, abs=1e-12)
    assert M.current_F(120, 1, 0, 0) == pytest.approx(4784.82, abs=1e-12)


def test_current_F_hand_value():
    # exact rational arithmetic gives -951/1250
    assert M.current_F(0, 0.3, 0.05, 0.6) == pytest.approx(-0.7608, abs=1e-12)


def test_current_F_extremes_over_gate_box():
    rng = np.random.default_rng(11)
    n, m, h = rng.uniform(0, 1, (3, 400))
    assert np.min(M.current_F(120.0, n, m, h)) >= 32.82 - 1e-12
    assert np.max(M.current_F(-12.0, n, m, h)) <= -6.78 + 1e-12
    corners = np.array([0.0, 1.0])
    for nn in corners:
        for mm in corners:
            for hh in corners:
                assert M.current_F(120.0, nn, mm, hh) >= 32.82 - 1e-12
                assert M.current_F(-12.0, nn, mm, hh) <= -6.78 + 1e-12


def test_current_F_vectorized_matches_scalar():
    rng = np.random.default_rng(3)
    v = rng.uniform(-40, 140, 50)
    n, m, h = rng.uniform(0, 1, (3, 50))
    batch = M.current_F(v, n, m, h)
    for i in range(50):
        assert batch[i] == M.current_F(v[i], n[i], m[i], h[i])
    assert isinstance(M.current_F(1.0, 0.5, 0.5, 0.5), float)


# ---------------------------------------------------------------------------
# rates and gate equilibria


def test_rates_positive_on_grid():
    v = np.linspace(-100.0, 200.0, 3001)
    for a_fn, b_fn in M.RATES.values():
        assert np.all(a_fn(v) > 0)
        assert np.all(b_fn(v) > 0)


def test_rate_exprs_match_numeric_functions():
    rates = M.hh_rate_exprs()
    grid = np.linspace(-100.0, 200.0, 601)
    pairs = [
        (rates.alpha_n, M.alpha_n), (rates.beta_n, M.beta_n),
        (rates.alpha_m, M.alpha_m), (rates.beta_m, M.beta_m),
        (rates.alpha_h, M.alpha_h), (rates.beta_h, M.beta_h),
    ]
    for expr_form, num_fn in pairs:
        f = to_callable(expr_form)
        for v in grid:
            sym = f(0.0, (v,))
            assert sym > 0
            assert sym == pytest.approx(num_fn(float(v)), rel=1e-12, abs=1e-300)


def test_rates_analytic_through_removable_points():
    # alpha_n at v=10 and alpha_m at v=25 hit the 0/0 point of the kernel
    assert M.alpha_n(10.0) == pytest.approx(0.1, rel=1e-15)
    assert M.alpha_m(25.0) == pytest.approx(1.0, rel=1e-15)
    rates = M.hh_rate_exprs()
    assert evaluate(rates.alpha_n, 0.0, (10.0,)) == pytest.approx(0.1, rel=1e-15)
    assert evaluate(rates.alpha_m, 0.0, (25.0,)) == pytest.approx(1.0, rel=1e-15)


def test_gate_equilibrium_reference_values():
    assert M.gate_equilibrium("n", 10.0) == pytest.approx(N_INF_10, rel=1e-13)
    assert M.gate_equilibrium("m", 25.0) == pytest.approx(M_INF_25, rel=1e-13)


def test_gate_equilibrium_in_unit_interval():
    v = np.linspace(-80.0, 160.0, 241)
    for j in ("n", "m", "h"):
        vals = M.gate_equilibrium(j, v)
        assert np.all(vals > 0) and np.all(vals < 1)


def test_gate_equilibrium_unknown_gate():
    with pytest.raises(ValueError):
        M.gate_equilibrium("q", 0.0)


# ---------------------------------------------------------------------------
# rest potential


def test_rest_potential_reference_window():
    v0 = M.rest_potential(0.0)
    assert 0.0412 < v0 < 0.0512
    assert v0 == pytest.approx(REST[0.0], abs=1e-9)


def test_rest_potential_matches_high_precision_roots():
    for c, root in REST.items():
        assert M.rest_potential(c) == pytest.approx(root, abs=1e-8)


def test_rest_potential_inverse_identity():
    for c in (-5.0, 0.0, 5.0, 20.0):
        assert M.F_infinity(M.rest_potential(c)) == pytest.approx(c, abs=1e-8)


def test_rest_potential_monotone():
    cs = np.linspace(-8.0, 25.0, 12)
    vs = [M.rest_potential(c) for c in cs]
    assert all(a < b for a, b in zip(vs, vs[1:]))


def test_F_infinity_monotone_on_grid():
    v = np.linspace(-40.0, 140.0, 361)
    vals = M.F_infinity(v)
    assert np.all(np.diff(vals) > 0)


def test_equilibrium_zeroes_current():
    v0 = M.rest_potential(0.0)
    n, m, h = (M.gate_equilibrium(j, v0) for j in ("n", "m", "h"))
    assert abs(M.current_F(v0, n, m, h)) <= 1e-10
    assert (n, m, h) == pytest.approx(GATES_AT_V0, rel=1e-12)


# ---------------------------------------------------------------------------
# signal


def test_signal_from_sin2_matches_closed_form():
    sig = M.Signal.from_sin2(s0=0.5, s1=1.0, period=10.0)
    t = np.linspace(-7.0, 23.0, 301)
    want = 0.5 + 1.0 * np.sin(math.pi * t / 10.0) ** 2
    assert np.max(np.abs(sig.value(t) - want)) < 1e-14
    assert sig.min_value == pytest.approx(0.5)


def test_signal_periodicity():
    sig = M.Signal(period=7.0, base=2.0, cos_coeffs=(0.5, -0.25), sin_coeffs=(1.0,))
    t = np.linspace(0.0, 7.0, 97)
    assert np.max(np.abs(sig.value(t + 7.0) - sig.value(t))) < 1e-12


def test_signal_rejects_negative_values():
    with pytest.raises(ValueError, match="negative"):
        M.Signal(period=1.0, base=0.2, cos_coeffs=(0.5,))
    with pytest.raises(ValueError):
        M.Signal(period=-1.0)


def test_signal_zero_allowed():
    sig = M.Signal(period=3.0)
    assert sig.value(1.2) == 0.0
    assert sig.min_value == 0.0


def test_signal_expr_matches_value():
    sig = M.Signal(period=5.0, base=1.5, cos_coeffs=(0.3,), sin_coeffs=(-0.4, 0.2))
    for t in np.linspace(0.0, 10.0, 41):
        assert evaluate(sig.as_expr(), float(t), ()) == pytest.approx(
            sig.value(float(t)), rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------------------
# model specs


def test_spec_dimensions():
    assert (M.toy_model().dim, M.toy_model().noise_dim) == (2, 1)
    assert (M.deterministic_hh().dim, M.deterministic_hh().noise_dim) == (4, 0)
    assert (M.cir_hh().dim, M.cir_hh().noise_dim) == (5, 1)
    assert (M.ou_hh().dim, M.ou_hh().noise_dim) == (5, 1)
    assert M.toy_model().period == 1.0
    assert M.cir_hh().period == 10.0


def test_spec_validation():
    with pytest.raises(ValueError, match="2a > 1"):
        M.cir_hh(a=0.5)
    with pytest.raises(ValueError):
        M.toy_model(c=0.0)
    with pytest.raises(ValueError):
        M.ModelSpec(kind="nope")
    with pytest.raises(ValueError):
        M.ModelSpec(kind="cir", input_fn=lambda t: 0.0)


def test_spec_immutable():
    spec = M.cir_hh()
    with pytest.raises(Exception):
        spec.a = 2.0


def test_input_value():
    assert M.deterministic_hh(c=10.0).input_value(3.0) == 10.0
    ramp = M.deterministic_hh(input_fn=lambda t: 2.0 * t)
    assert ramp.input_value(3.0) == 6.0
    with pytest.raises(ValueError):
        M.cir_hh().input_value(0.0)


def test_x_star():
    assert M.x_star(M.toy_model()) == pytest.approx([0.0, 2.0 / 3.0])
    xs = M.x_star(M.cir_hh())
    assert xs[4] == 1.0
    assert xs[0] == pytest.approx(REST[0.0], abs=1e-9)
    assert M.x_star(M.ou_hh())[4] == 0.0
    hh10 = M.x_star(M.deterministic_hh(c=10.0))
    assert M.F_infinity(hh10[0]) == pytest.approx(10.0, abs=1e-8)
    assert M.state_labels(M.cir_hh()) == ("v", "n", "m", "h", "xi")
    assert M.state_labels(M.toy_model()) == ("xi", "psi")


# ---------------------------------------------------------------------------
# coefficients


def test_toy_drift_at_time_zero():
    d = M.drift(M.toy_model(c=2.0), 0.0, np.array([1.3, 0.4]))
    assert d == pytest.approx([0.0, 0.6])
    d = M.drift(M.toy_model(c=2.0), 0.25, np.array([1.3, 0.4]))
    assert d[0] == pytest.approx(-2.0 * 1.3)


def test_ou_equilibrium_drift_vanishes():
    spec = M.ou_hh(M.Signal(period=10.0))
    d = M.drift(spec, 4.2, M.x_star(spec))
    assert np.max(np.abs(d)) < 1e-9


def test_cir_diffusion_column():
    col = M.diffusion(M.cir_hh(), np.array([5.0, 0.3, 0.1, 0.6, 4.0]))
    assert col.shape == (5, 1)
    assert col[:, 0] == pytest.approx([2.0, 0.0, 0.0, 0.0, 2.0], abs=0.0)


def test_deterministic_diffusion_is_empty():
    assert M.diffusion(M.deterministic_hh(), M.x_star(M.deterministic_hh())).shape == (4, 0)


def test_stratonovich_corrections():
    rng = np.random.default_rng(5)
    cir, ou, toy = M.cir_hh(), M.ou_hh(), M.toy_model()
    for _ in range(20):
        t = float(rng.uniform(0, 20))
        x5 = np.concatenate([[rng.uniform(-20, 130)], rng.uniform(0, 1, 3),
                             [rng.uniform(0.01, 10)]])
        diff = M.stratonovich_drift(cir, t, x5) - M.drift(cir, t, x5)
        assert diff == pytest.approx([-0.25, 0, 0, 0, -0.25], abs=0.0)
        assert M.stratonovich_drift(ou, t, x5) == pytest.approx(M.drift(ou, t, x5), abs=0.0)
        x2 = rng.normal(size=2)
        diff = M.stratonovich_drift(toy, t, x2) - M.drift(toy, t, x2)
        assert diff == pytest.approx([0.0, -0.5 * x2[1]], abs=1e-15)


def test_cir_domain_checks():
    spec = M.cir_hh()
    bad = np.array([0.0, 0.3, 0.05, 0.6, -1.0])
    with pytest.raises(ValueError):
        M.drift(spec, 0.0, bad)
    with pytest.raises(ValueError):
        M.diffusion(spec, bad)
    # the boundary itself is fine (needed by the truncated scheme)
    edge = bad.copy()
    edge[4] = 0.0
    assert M.diffusion(spec, edge)[0, 0] == 0.0
    with pytest.raises(ValueError):
        M.drift(spec, 0.0, np.zeros(4))


def test_batched_coefficients_match_rowwise():
    rng = np.random.default_rng(17)
    spec = M.cir_hh()
    X = np.column_stack([
        rng.uniform(-20, 130, 8), rng.uniform(0, 1, 8), rng.uniform(0, 1, 8),
        rng.uniform(0, 1, 8), rng.uniform(0.01, 10, 8)])
    t = 0.7
    assert np.array_equal(M.drift(spec, t, X),
                          np.vstack([M.drift(spec, t, row) for row in X]))
    assert np.array_equal(M.stratonovich_drift(spec, t, X),
                          np.vstack([M.stratonovich_drift(spec, t, row) for row in X]))
    cols = M.diffusion(spec, X)
    assert cols.shape == (8, 5, 1)
    for i, row in enumerate(X):
        assert np.array_equal(cols[i], M.diffusion(spec, row))


# ---------------------------------------------------------------------------
# symbolic fields


def test_symbolic_fields_structure():
    v0, v1 = M.symbolic_fields(M.toy_model(c=1.0))
    assert v1.space_components == (Const(1.0), Var("x2"))
    assert v0.components[0] == Const(1.0)
    assert v1.components[0] == Const(0.0)
    with pytest.raises(ValueError):
        M.symbolic_fields(M.deterministic_hh())


def test_symbolic_fields_match_numeric():
    rng = np.random.default_rng(23)
    for spec in (M.toy_model(1.3), M.cir_hh(), M.ou_hh()):
        v0, v1 = M.symbolic_fields(spec)
        for _ in range(100):
            t = float(rng.uniform(0, 2 * spec.period))
            if spec.kind == "toy":
                x = rng.normal(size=2)
            else:
                x = np.concatenate([[rng.uniform(-20, 130)], rng.uniform(0.01, 0.99, 3),
                                    [rng.uniform(0.05, 20)]])
            want0 = M.stratonovich_drift(spec, t, x)
            want1 = M.diffusion(spec, x)[:, 0]
            got0 = np.asarray(v0.evaluate(t, tuple(x)))
            got1 = np.asarray(v1.evaluate(t, tuple(x)))
            assert np.allclose(got0, want0, rtol=1e-12, atol=1e-12)
            assert np.allclose(got1, want1, rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------------------------
# gating flow: invariance and the explicit representation


def test_gate_exponential_step_stays_in_unit_interval():
    # with v frozen the gate ODE solves exactly to a convex combination of
    # the start value and the equilibrium
    for v in np.linspace(-80.0, 150.0, 24):
        for j in ("n", "m", "h"):
            a_fn, b_fn = M.RATES[j]
            rate = a_fn(v) + b_fn(v)
            jinf = M.gate_equilibrium(j, v)
            for j0 in (0.0, 0.3, 1.0):
                for dt in (0.01, 0.1, 1.0, 10.0):
                    j1 = jinf + (j0 - jinf) * math.exp(-rate * dt)
                    assert 0.0 <= j1 <= 1.0


def test_gate_flow_invariance_full_system():
    spec = M.deterministic_hh(c=10.0)
    rhs = lambda t, x: M.drift(spec, t, x)
    for gates in ([0, 0, 0], [1, 1, 1], [0, 1, 0], [1, 0, 1]):
        x0 = np.array([5.0, *gates], dtype=float)
        sol = solve_ivp(rhs, (0.0, 1.0), x0, rtol=1e-8, atol=1e-10, dense_output=True)
        assert sol.success
        path = sol.sol(np.linspace(0.0, 1.0, 201))
        assert np.all(path[1:] >= -1e-8) and np.all(path[1:] <= 1 + 1e-8)


def test_gate_matches_explicit_representation():
    # independent oracle: quadrature of
    #   j(t) = j0 e^{-I(t)} + int_0^t alpha(v(s)) e^{-(I(t)-I(s))} ds,
    #   I(t) = int_0^t (alpha+beta)(v(s)) ds
    # along the simulated voltage path
    spec = M.deterministic_hh(c=10.0)
    x0 = M.x_star(M.deterministic_hh(c=0.0))
    rhs = lambda t, x: M.drift(spec, t, x)
    sol = solve_ivp(rhs, (0.0, 10.0), x0, rtol=1e-10, atol=1e-12, dense_output=True)
    assert sol.success
    s = np.linspace(0.0, 10.0, 10001)
    path = sol.sol(s)
    v = path[0]
    for idx, j in ((1, "n"), (2, "m"), (3, "h")):
        a_fn, b_fn = M.RATES[j]
        alpha, total = a_fn(v), a_fn(v) + b_fn(v)
        I = np.concatenate([[0.0], cumulative_simpson(total, x=s)])
        weight = np.exp(I - I[-1])
        integral = simpson(alpha * weight, x=s)
        want = x0[idx] * math.exp(-I[-1]) + integral
        assert abs(path[idx, -1] - want) < 1e-4


@settings(max_examples=8, deadline=None)
@given(
    breaks=st.lists(st.floats(min_value=10.0, max_value=190.0), min_size=0, max_size=3),
    levels=st.lists(st.floats(min_value=-6.7, max_value=32.8), min_size=1, max_size=4),
    v0=st.floats(min_value=-11.5, max_value=119.5),
    gates=st.tuples(*(st.floats(min_value=0.0, max_value=1.0),) * 3),
)
def test_voltage_trap(breaks, levels, v0, gates):
    # piecewise-constant input inside (-6.78, 32.82) cannot push the
    # voltage out of (-12, 120)
    edges = sorted(set(breaks))
    pieces = (levels * (len(edges) + 1))[: len(edges) + 1]

    def c_of_t(t):
        k = np.searchsorted(edges, t, side="right")
        return pieces[k]

    spec = M.deterministic_hh(input_fn=c_of_t)
    rhs = lambda t, x: M.drift(spec, t, x)
    x = np.array([v0, *gates], dtype=float)
    t0 = 0.0
    for t1 in [*edges, 200.0]:
        if t1 <= t0:
            continue
        sol = solve_ivp(rhs, (t0, t1), x, rtol=1e-8, atol=1e-10, max_step=1.0)
        assert sol.success
        assert np.all(sol.y[0] > -12.0) and np.all(sol.y[0] < 120.0)
        x = sol.y[:, -1]
        t0 = t1
