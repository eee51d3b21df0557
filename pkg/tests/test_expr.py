import math

import pytest
from hypothesis import assume, given, settings, strategies as st

from periodic_harris import expr as ex
from periodic_harris.expr import (
    Binary,
    BracketBlowupError,
    Const,
    EvalError,
    ExprError,
    Kernel,
    ParseError,
    Power,
    SymVectorField,
    Unary,
    Var,
    diff,
    evaluate,
    lie_bracket,
    load_field,
    negate_field,
    node_count,
    parse,
    phi_kernel,
    simplify,
    to_callable,
    to_str,
)

# ---------------------------------------------------------------------------
# phi kernel: reference values are 30-digit evaluations of
# d^k/du^k [u/(exp(u)-1)], frozen here as float literals.

PHI_REFS = {
    (0, 0.5): 0.7707470412683991,
    (0, 3.0): 0.15718708947376786,
    (0, -1.75): 2.1180644039577556,
    (0, 0.1): 0.95083319447750492,
    (1, 0.5): -0.41735496197958361,
    (1, 3.0): -0.11302732001492334,
    (1, -1.75): -0.76484588089766004,
    (1, 0.1): -0.48333888690542309,
    (2, 0.5): 0.16256128786058241,
    (2, 3.0): 0.072475913833111347,
    (2, -1.75): 0.12374801476718107,
    (3, 0.5): -0.016179199392629226,
    (3, 3.0): -0.037394640448955747,
    (4, 0.5): -0.030442328579640299,
    (4, 3.0): 0.010150639990252652,
    (6, 0.5): 0.019834760727860678,
    (6, 3.0): -0.011404770405417155,
    (8, 0.5): -0.024498140523045935,
    (8, 3.0): 0.0085715485207854061,
    (8, -1.75): 0.018147491685761716,
    (0, 0.0): 1.0,
    (1, 0.0): -0.5,
    (2, 0.0): 1.0 / 6.0,
    (3, 0.0): 0.0,
    (4, 0.0): -1.0 / 30.0,
    (8, 0.0): -1.0 / 30.0,
}


def test_phi_kernel_reference_values():
    for (k, u), ref in PHI_REFS.items():
        assert phi_kernel(k, u) == pytest.approx(ref, rel=1e-12, abs=1e-15)


def test_phi_kernel_branch_continuity():
    # series/closed-form switch at |u| = 1e-4 (order 0) and |u| = 2
    for u0 in (1e-4, -1e-4):
        gap = abs(phi_kernel(0, u0 * (1 - 1e-9)) - phi_kernel(0, u0 * (1 + 1e-9)))
        assert gap < 1e-12
    for k in range(1, 7):
        for u0 in (2.0, -2.0):
            gap = abs(phi_kernel(k, u0 - 1e-12) - phi_kernel(k, u0 + 1e-12))
            assert gap < 1e-10


def test_phi_kernel_no_nan_anywhere():
    for k in range(0, 7):
        for u in (-800.0, -5.0, -1e-8, 0.0, 1e-8, 1.0, 5.0, 800.0):
            v = phi_kernel(k, u)
            assert math.isfinite(v)


# ---------------------------------------------------------------------------
# parsing and printing


def test_parse_basic_structure():
    e = parse("sin(2*pi*t)^2")
    assert isinstance(e, Power) and e.exponent == 2
    assert isinstance(e.base, Unary) and e.base.op == "sin"
    assert evaluate(e, t=0.25) == pytest.approx(1.0, rel=1e-12)
    assert evaluate(e, t=0.5) == pytest.approx(0.0, abs=1e-12)


def test_parse_phi_and_pi():
    assert evaluate(parse("phi(0.0)")) == 1.0
    assert evaluate(parse("pi")) == math.pi
    assert evaluate(parse("phi2(0.0)")) == pytest.approx(1.0 / 6.0)


def test_parse_precedence():
    assert evaluate(parse("2+3*4")) == 14.0
    assert evaluate(parse("2-3-4")) == -5.0
    assert evaluate(parse("12/3/2")) == 2.0
    assert evaluate(parse("-2^2")) == -4.0
    assert evaluate(parse("2*x1^2"), x=(3.0,)) == 18.0


def test_parse_errors_carry_position():
    with pytest.raises(ParseError) as err:
        parse("2*+3")
    assert err.value.position == 2
    with pytest.raises(ParseError):
        parse("phi(1,2)")
    with pytest.raises(ParseError):
        parse("bogus(1)")
    with pytest.raises(ParseError):
        parse("x1 + y")
    with pytest.raises(ParseError):
        parse("x1^1.5")
    with pytest.raises(ParseError):
        parse("(1+2")


def test_print_parse_round_trip_examples():
    for text in (
        "sin(2*pi*t)^2",
        "1 - 3*x2/(x1 + 2)",
        "phi((10 - x1)/10)",
        "phi3(x1)*exp(-x1/80)",
        "-(x1 - 2)^-2",
        "sqrt(x5)*cos(t)",
    ):
        e = parse(text)
        assert parse(to_str(e)) == e


def test_eval_domain_errors():
    with pytest.raises(EvalError):
        evaluate(parse("log(x1)"), x=(-1.0,))
    with pytest.raises(EvalError):
        evaluate(parse("1/x1"), x=(0.0,))
    with pytest.raises(EvalError):
        evaluate(parse("sqrt(x1)"), x=(-4.0,))
    with pytest.raises(EvalError):
        evaluate(parse("x2"), x=(1.0,))


# ---------------------------------------------------------------------------
# differentiation


def test_diff_sin_squared_at_eighth():
    e = parse("sin(2*pi*t)^2")
    d = diff(e, "t")
    assert evaluate(d, t=0.125) == pytest.approx(2.0 * math.pi, rel=1e-12)


def test_diff_phi_at_zero_is_half():
    d = diff(parse("phi(x1)"), "x1")
    assert evaluate(d, x=(0.0,)) == pytest.approx(-0.5, rel=1e-12)
    # central difference straddling the removable singularity
    h = 1e-5
    fd = (phi_kernel(0, h) - phi_kernel(0, -h)) / (2 * h)
    assert evaluate(d, x=(0.0,)) == pytest.approx(fd, abs=1e-9)


def test_diff_quotient_rule():
    e = parse("x1/(1 + x2)")
    assert evaluate(diff(e, "x2"), x=(3.0, 1.0)) == pytest.approx(-0.75)


# hypothesis strategy for small expression trees ----------------------------

_leaf = st.one_of(
    st.floats(min_value=-3.0, max_value=3.0, allow_nan=False).map(
        lambda v: Const(round(v, 3))
    ),
    st.sampled_from([Var("t"), Var("x1"), Var("x2")]),
)


def _combine(children):
    unary = st.sampled_from(["neg", "exp", "sin", "cos"])
    return st.one_of(
        st.tuples(unary, children).map(lambda p: Unary(p[0], p[1])),
        st.tuples(children, children, st.sampled_from(["add", "sub", "mul"])).map(
            lambda p: Binary(p[2], p[0], p[1])
        ),
        st.tuples(children, st.integers(min_value=1, max_value=3)).map(
            lambda p: Power(p[0], p[1])
        ),
        children.map(lambda c: Kernel(0, c)),
    )


_tree = st.recursive(_leaf, _combine, max_leaves=12)
_point = st.tuples(
    st.floats(min_value=-1.5, max_value=1.5, allow_nan=False),
    st.floats(min_value=-1.5, max_value=1.5, allow_nan=False),
    st.floats(min_value=-1.5, max_value=1.5, allow_nan=False),
)


def _try_eval(e, t, x):
    try:
        v = evaluate(e, t, x)
    except EvalError:
        return None
    if not math.isfinite(v) or abs(v) > 1e8:
        return None
    return v


@settings(max_examples=80, deadline=None)
@given(_tree, _point)
def test_diff_matches_central_difference(e, point):
    t, x1, x2 = point
    d = diff(e, "x1")
    h = 1e-4

    def f(off):
        return _try_eval(e, t, (x1 + off, x2))

    vals = [f(-2 * h), f(-h), f(h), f(2 * h)]
    exact = _try_eval(d, t, (x1, x2))
    assume(exact is not None and all(v is not None for v in vals))
    fd_h = (vals[2] - vals[1]) / (2 * h)
    fd_2h = (vals[3] - vals[0]) / (4 * h)
    # Richardson-style error calibration: |fd_h - exact| ~ (1/3)|fd_2h - fd_h|
    budget = 10.0 * abs(fd_2h - fd_h) + 1e-6 * (1.0 + abs(exact))
    assert abs(fd_h - exact) <= budget


@settings(max_examples=80, deadline=None)
@given(_tree, _point)
def test_simplify_preserves_value(e, point):
    t, x1, x2 = point
    before = _try_eval(e, t, (x1, x2))
    assume(before is not None)
    after = _try_eval(simplify(e), t, (x1, x2))
    assume(after is not None)
    assert after == pytest.approx(before, rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(_tree)
def test_simplify_idempotent(e):
    s = simplify(e)
    assert simplify(s) == s


@settings(max_examples=60, deadline=None)
@given(_tree)
def test_print_parse_round_trip_property(e):
    s = to_str(parse(to_str(e)))
    assert to_str(parse(s)) == s


def test_simplify_examples():
    assert simplify(parse("1*x1 + 0*x2")) == Var("x1")
    assert simplify(parse("x1 - x1")) == Const(0.0)
    assert simplify(parse("0*exp(x1)")) == Const(0.0)
    assert simplify(parse("x1^0")) == Const(1.0)
    assert simplify(parse("2*3 + 1")) == Const(7.0)
    assert simplify(parse("-(-x1)")) == Var("x1")
    # constant folding must not swallow domain errors
    e = simplify(parse("log(0 - 1)"))
    with pytest.raises(EvalError):
        evaluate(e)


def test_compiled_matches_interpreter():
    e = parse("phi((10 - x1)/10) * exp(-x1/80) + sin(2*pi*t)^2")
    f = to_callable(e)
    for t, v in ((0.0, 0.0), (0.3, 25.0), (1.7, -12.0), (0.9, 10.0)):
        assert f(t, (v,)) == pytest.approx(evaluate(e, t, (v,)), rel=1e-13)


# ---------------------------------------------------------------------------
# vector fields and brackets


def _toy_fields(c):
    zero, one = Const(0.0), Const(1.0)
    sin2 = parse("sin(2*pi*t)^2")
    v0 = SymVectorField(
        2,
        (one, simplify(Const(-c) * sin2 * Var("x1")), parse("1 - 1.5*x2")),
        word="V0",
    )
    v1 = SymVectorField(2, (zero, one, Var("x2")), word="V1")
    return v0, v1


def test_field_validation():
    with pytest.raises(ExprError):
        SymVectorField(2, (Const(2.0), Const(0.0), Const(0.0)))
    with pytest.raises(ExprError):
        SymVectorField(2, (Const(0.0), Const(0.0)))
    with pytest.raises(ExprError):
        SymVectorField(2, (Const(0.0), Var("x3"), Const(0.0)))


def test_toy_bracket_hand_values():
    # [V0, V1] = (0, c*sin(2*pi*t)^2, 1), checked at several times/points
    c = 1.0
    v0, v1 = _toy_fields(c)
    br = lie_bracket(v0, v1)
    assert ex.is_zero(br.components[0])
    for t in (0.0, 0.1, 0.37, 0.5):
        for x in ((0.0, 2.0 / 3.0), (1.3, -0.4)):
            got = br.evaluate(t, x)
            want = [c * math.sin(2 * math.pi * t) ** 2, 1.0]
            assert got == pytest.approx(want, abs=1e-12)


def test_bracket_of_field_with_itself_is_zero():
    _, v1 = _toy_fields(1.0)
    br = lie_bracket(v1, v1)
    assert br.is_zero()


def test_bracket_requires_zero_time_component():
    v0, v1 = _toy_fields(1.0)
    with pytest.raises(ExprError):
        lie_bracket(v1, v0)
    assert lie_bracket(v0, v1).components[0] == Const(0.0)


def test_negate_field():
    v0, v1 = _toy_fields(2.0)
    br = negate_field(lie_bracket(v0, v1), word="[V1,V0]")
    got = br.evaluate(0.25, (0.0, 0.0))
    assert got == pytest.approx([-2.0, -1.0], abs=1e-12)


def test_bracket_blowup_guard():
    # nested exponentials double in size under differentiation
    a = SymVectorField(1, (Const(1.0), parse("exp(exp(exp(exp(x1))))")), word="A")
    b = SymVectorField(1, (Const(0.0), parse("sin(exp(exp(x1)))")), word="B")
    with pytest.raises(BracketBlowupError) as err:
        lie_bracket(a, b, max_nodes=8)
    assert "[A,B]" in str(err.value)


def test_load_field(tmp_path):
    path = tmp_path / "field.txt"
    path.write_text(
        "# drift field for the planar system\n"
        "1\n"
        "-1.0 * sin(2*pi*t)^2 * x1\n"
        "1 - 1.5*x2  # relaxation\n"
    )
    field = load_field(path)
    assert field.dim == 2
    assert field.components[0] == Const(1.0)
    assert field.evaluate(0.25, (2.0, 0.0)) == pytest.approx([-2.0, 1.0])


def test_node_count_shared_subtrees():
    x = Var("x1")
    prod = Binary("mul", x, x)
    assert node_count(prod) == 2
    assert node_count(parse("x1*x1")) == 3
