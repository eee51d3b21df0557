"""Bracket family generation and numerical span checks."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from periodic_harris import model
from periodic_harris.expr import BracketBlowupError, EvalError, is_zero
from periodic_harris.hoermander import (
    BracketSet, CheckReport, RankReport, extend, full_weak_hoermander_check,
    generate_LN, span_dimension,
)


def toy_fields(c=2.0):
    return model.symbolic_fields(model.toy_model(c=c))


# ---------------------------------------------------------------- generation

def test_depth_zero_is_the_diffusion_fields():
    v0, v1 = toy_fields()
    bs = generate_LN(v0, (v1,), 0)
    assert len(bs) == 1
    assert bs.fields == (v1,)
    assert bs.levels == ((v1,),)


def test_generation_argument_validation():
    v0, v1 = toy_fields()
    with pytest.raises(ValueError, match=">= 0"):
        generate_LN(v0, (v1,), -1)
    with pytest.raises(ValueError, match="diffusion field"):
        generate_LN(v0, (), 2)
    w0, w1 = model.symbolic_fields(model.cir_hh())
    with pytest.raises(ValueError, match="dimension"):
        generate_LN(v0, (w1,), 1)


def test_members_transport_no_time():
    v0, v1 = toy_fields()
    bs = generate_LN(v0, (v1,), 3)
    for member in bs.fields:
        assert is_zero(member.components[0])
    # a drift-type field cannot be smuggled in as a member
    with pytest.raises(ValueError, match="transports time"):
        BracketSet(dim=2, N=0, levels=((v0,),))


def test_toy_depth_one_family():
    # [V0,V1] = (0, c sin^2(2 pi t), 1) by hand; [V1,V1] = 0 is dropped.
    c = 2.0
    v0, v1 = toy_fields(c)
    bs = generate_LN(v0, (v1,), 1)
    assert len(bs) == 2
    assert [f.word for f in bs.fields] == ["V1", "[V0,V1]"]
    w = bs.levels[1][0]
    for t in (0.0, 0.13, 0.25, 1 / 6, 0.8):
        got = w.evaluate(t, (0.7, -0.2))
        want = (c * math.sin(2 * math.pi * t) ** 2, 1.0)
        assert got == pytest.approx(want, rel=1e-12, abs=1e-15)


def test_toy_depth_two_hand_enumeration():
    # Levels grow 1, 1, 2: the bracket of [V0,V1] with V1 is the constant
    # field (0, 0, 1) and the bracket with V0 picks up the time derivative.
    c = 2.0
    v0, v1 = toy_fields(c)
    bs = generate_LN(v0, (v1,), 2)
    assert [len(lvl) for lvl in bs.levels] == [1, 1, 2]
    assert len(bs) == 4
    by_word = {f.word: f for f in bs.fields}
    t, x = 0.3, (0.7, -0.2)
    s2 = math.sin(2 * math.pi * t) ** 2
    assert by_word["[[V0,V1],V1]"].evaluate(t, x) == pytest.approx([0.0, 1.0], abs=1e-15)
    want = 2 * math.pi * c * math.sin(4 * math.pi * t) + c * c * s2 * s2
    assert by_word["[V0,[V0,V1]]"].evaluate(t, x) == pytest.approx([want, 1.5], rel=1e-12)


def test_no_syntactic_duplicates_survive():
    v0, v1 = toy_fields()
    bs = generate_LN(v0, (v1,), 4)
    comps = [f.components for f in bs.fields]
    assert len(comps) == len(set(comps))


def test_extend_matches_direct_generation():
    v0, v1 = toy_fields()
    grown = extend(extend(generate_LN(v0, (v1,), 0), v0, (v1,)), v0, (v1,))
    direct = generate_LN(v0, (v1,), 2)
    assert [f.components for f in grown.fields] == [f.components for f in direct.fields]


def test_blowup_guard_identifies_the_word():
    v0, v1 = model.symbolic_fields(model.cir_hh())
    with pytest.raises(BracketBlowupError) as exc:
        generate_LN(v0, (v1,), 2, max_nodes=10)
    assert "[V0,V1]" in str(exc.value)
    assert exc.value.word == "[V0,V1]"


# ------------------------------------------------------------ span dimension

def test_toy_rank_two_everywhere_for_small_c():
    # det of the N=1 matrix is 1 - (2/3) c sin^2(2 pi s) >= 1/3 for c = 1.
    v0, v1 = toy_fields(1.0)
    bs = generate_LN(v0, (v1,), 1)
    xs = model.x_star(model.toy_model(c=1.0))
    for s in [i / 64 for i in range(64)] + [1 / 6]:
        rep = span_dimension(bs, s, xs)
        assert rep.rank == 2
        assert rep.full and rep.verdict == "full"


def test_toy_rank_drops_at_the_degenerate_time():
    # c = 2: det 1 - (2/3) c sin^2(2 pi s) vanishes at sin^2 = 3/4, s = 1/6.
    v0, v1 = toy_fields(2.0)
    bs = generate_LN(v0, (v1,), 1)
    xs = model.x_star(model.toy_model(c=2.0))
    rep = span_dimension(bs, 1 / 6, xs)
    assert rep.rank == 1 and rep.verdict == "deficient"
    assert rep.singular_values[1] < 1e-12 * rep.singular_values[0]
    assert span_dimension(bs, 0.25, xs).rank == 2


def test_duplicate_columns_leave_the_rank_alone():
    v0, v1 = toy_fields(1.0)
    doubled = BracketSet(dim=2, N=0, levels=((v1, v1),))
    single = BracketSet(dim=2, N=0, levels=((v1,),))
    xs = (0.0, 2 / 3)
    assert span_dimension(doubled, 0.2, xs).rank == span_dimension(single, 0.2, xs).rank == 1


def test_span_rejects_points_outside_the_domain():
    v0, v1 = model.symbolic_fields(model.cir_hh())
    bs = generate_LN(v0, (v1,), 1)
    with pytest.raises(EvalError):
        span_dimension(bs, 0.0, (0.0, 0.3, 0.05, 0.6, -1.0))


def test_rank_report_validation():
    v0, v1 = toy_fields()
    bs = generate_LN(v0, (v1,), 1)
    with pytest.raises(ValueError, match="positive"):
        span_dimension(bs, 0.0, (0.0, 2 / 3), tol=0.0)
    with pytest.raises(ValueError, match="exceed"):
        RankReport(s=0.0, x=(0.0,), N=1, dim=1, singular_values=(1.0,),
                   tol=1e-8, rank=2)


@settings(max_examples=20, deadline=None)
@given(c=st.floats(0.1, 5.0), s=st.floats(0.0, 1.0, exclude_max=True),
       x1=st.floats(-3.0, 3.0), x2=st.floats(-3.0, 3.0))
def test_rank_is_monotone_in_depth(c, s, x1, x2):
    v0, v1 = toy_fields(c)
    bs = generate_LN(v0, (v1,), 0)
    ranks = [span_dimension(bs, s, (x1, x2)).rank]
    for _ in range(3):
        bs = extend(bs, v0, (v1,))
        ranks.append(span_dimension(bs, s, (x1, x2)).rank)
    assert all(a <= b for a, b in zip(ranks, ranks[1:]))


# ---------------------------------------------------------------- full check

def test_full_check_toy_small_c():
    rep = full_weak_hoermander_check(model.toy_model(c=1.0))
    assert rep.established and rep.minimal_N == 1
    assert rep.failing_times(1) == ()
    assert "N = 1" in rep.summary()


def test_full_check_toy_large_c_with_augmented_grid():
    # The 64-point grid misses s = 1/6, where the depth-1 family is rank
    # deficient.  Once the grid includes it, depth 1 fails at exactly that
    # time; the constant depth-2 member (0, 0, 1) restores the span, so the
    # search settles at N = 2.
    spec = model.toy_model(c=2.0)
    plain = full_weak_hoermander_check(spec)
    assert plain.minimal_N == 1
    rep = full_weak_hoermander_check(spec, extra_times=(1 / 6,))
    assert 1 / 6 in rep.grid
    assert rep.failing_times(1) == (1 / 6,)
    assert rep.minimal_N == 2


def test_full_check_can_report_not_established():
    rep = full_weak_hoermander_check(model.toy_model(c=2.0), N_max=1,
                                     extra_times=(1 / 6,))
    assert not rep.established and rep.minimal_N is None
    assert "not established" in rep.summary()
    assert rep.failing_times(1) == (1 / 6,)


def test_full_check_hh_systems():
    # Frozen from a run of this check: both noisy conductance models reach
    # rank 5 at depth 3 (2 columns at depth 1, 4 at depth 2, 8 at depth 3).
    for spec in (model.cir_hh(), model.ou_hh()):
        rep = full_weak_hoermander_check(spec)
        assert rep.minimal_N == 3
        assert all(rank == 5 for _, rank, _ in rep.details[3])
        assert {rank for _, rank, _ in rep.details[1]} == {2}
        assert {rank for _, rank, _ in rep.details[2]} == {4}
        assert len(rep.grid) == 64


def test_verdicts_agree_across_tolerances():
    for spec in (model.cir_hh(), model.ou_hh()):
        verdicts = {full_weak_hoermander_check(spec, tol=tol).minimal_N
                    for tol in (1e-6, 1e-8, 1e-10)}
        assert len(verdicts) == 1


def test_full_rank_holds_on_a_small_ball():
    rng = np.random.default_rng(7)
    for spec in (model.cir_hh(), model.ou_hh()):
        v0, v1 = model.symbolic_fields(spec)
        bs = generate_LN(v0, (v1,), 3)
        xs = np.asarray(model.x_star(spec))
        for _ in range(20):
            d = rng.normal(size=5)
            d *= 1e-3 / np.linalg.norm(d)
            assert span_dimension(bs, 0.37, xs + d).rank == 5


def test_check_report_shape():
    rep = full_weak_hoermander_check(model.cir_hh(), extra_times=(0.123,))
    assert isinstance(rep, CheckReport)
    assert rep.x == tuple(float(a) for a in model.x_star(model.cir_hh()))
    assert rep.grid == tuple(sorted(set(rep.grid)))
    assert 0.123 in rep.grid and len(rep.grid) == 65
    for N, rows in rep.details.items():
        for s, rank, sv in rows:
            assert rank <= 5 and len(sv) >= rank
            assert all(a >= b for a, b in zip(sv, sv[1:]))
