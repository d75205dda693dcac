from __future__ import annotations

from fractions import Fraction as F

import pytest
from hypothesis import given
from hypothesis import strategies as st

from atmp.timecore import (
    INF,
    TRUE,
    And,
    Eq,
    Gt,
    Interval,
    IntervalSet,
    MultiClockConstraint,
    Not,
    TimeError,
    UnknownClock,
    Valuation,
    advance,
    constraint_from_json,
    constraint_to_json,
    delays_satisfying,
    format_time,
    free_clocks,
    holds_throughout,
    override_union,
    parse_constraint,
    parse_ext_time,
    parse_time,
    render_constraint,
    reset_clocks,
    sample_grid,
    satisfies,
    solution_set,
    window,
)


def test_satisfies_examples():
    assert satisfies({"C_Sat": F(13, 2)}, window("C_Sat", 6, 7))
    assert satisfies({"C": F(0)}, TRUE)
    assert not satisfies({"C": F(6)}, Not(Gt("C", 5)))


def test_satisfies_unknown_clock():
    with pytest.raises(UnknownClock):
        satisfies({"A": F(1)}, Gt("B", 0))


def test_advance_examples():
    assert advance({"C": F(6)}, F(1, 2)) == Valuation({"C": F(13, 2)})
    assert advance({"C": F(3)}, 0) == Valuation({"C": F(3)})
    assert advance({"A": F(1), "B": F(2)}, F(1, 3)) == Valuation({"A": F(4, 3), "B": F(7, 3)})


def test_reset_examples():
    assert reset_clocks({"C_Ser": F(13, 2)}, {"C_Ser"}) == Valuation({"C_Ser": 0})
    nu = Valuation({"A": 1, "B": 2})
    assert reset_clocks(nu, set()) == nu
    assert reset_clocks(nu, {"A"}) == Valuation({"A": 0, "B": 2})
    with pytest.raises(UnknownClock):
        reset_clocks(nu, {"Z"})


def test_override_union_examples():
    assert override_union([{"A": F(1)}, {"B": F(2)}]) == Valuation({"A": 1, "B": 2})
    assert override_union([{"A": F(1)}, {"A": F(3)}]) == Valuation({"A": 3})
    three = override_union([{"C_Sen": F(0)}, {"C_Sat": F(0)}, {"C_Ser": F(0)}])
    assert three == Valuation.zero(["C_Sen", "C_Sat", "C_Ser"])


def test_solution_set_examples():
    assert solution_set(window("C", 6, 7), "C") == IntervalSet([Interval(F(6), F(7))])
    assert solution_set(TRUE, "C") == IntervalSet.full()
    d = And(Gt("C", 5), Not(Eq("C", 6)))
    assert solution_set(d, "C") == IntervalSet(
        [Interval(F(5), F(6), False, False), Interval(F(6), INF, False, False)]
    )
    with pytest.raises(MultiClockConstraint):
        solution_set(And(Gt("A", 1), Gt("B", 1)), "A")


def test_sample_grid_examples():
    assert sample_grid(IntervalSet([Interval(F(6), F(7))]), 10) == [F(6), F(13, 2), F(7)]
    assert sample_grid(IntervalSet.full(), 2) == [F(0), F(1), F(2)]
    assert sample_grid(IntervalSet(), 5) == []


def test_parse_time_formats():
    assert parse_time("6.5") == F(13, 2)
    assert parse_time("13/2") == F(13, 2)
    assert parse_ext_time("inf") == INF
    for bad in ("-1", "x", "1e3", ""):
        with pytest.raises(TimeError):
            parse_time(bad)


def test_format_time():
    assert format_time(F(13, 2)) == "6.5"
    assert format_time(F(1, 3)) == "1/3"
    assert format_time(F(7)) == "7"
    assert format_time(INF) == "inf"


def test_parse_constraint_forms():
    assert solution_set(parse_constraint("6≤C≤7"), "C") == solution_set(window("C", 6, 7), "C")
    assert solution_set(parse_constraint("C<=3, C>1"), "C") == solution_set(window("C", 1, 3, False), "C")
    assert satisfies({"C": F(13, 2)}, parse_constraint("C=6.5"))
    assert parse_constraint("true") == TRUE
    assert free_clocks(parse_constraint("a@Sat < 2")) == {"a@Sat"}


def test_render_normalizes():
    assert render_constraint(window("C", 6, 7)) == "6≤C≤7"
    assert render_constraint(TRUE) == "true"
    assert render_constraint(And(Gt("C", 3), Not(Gt("C", 2)))) == "false"


def test_holds_throughout_and_delays():
    nu = {"C": F(6)}
    assert holds_throughout(nu, window("C", 6, 7), 1)
    assert not holds_throughout(nu, window("C", 6, 7), F(3, 2))
    assert delays_satisfying({"C": F(2)}, window("C", 6, 7)) == IntervalSet([Interval(F(4), F(5))])


def test_interval_set_algebra():
    a = IntervalSet([Interval(F(1), F(3))])
    b = IntervalSet([Interval(F(2), F(5), False)])
    assert a.intersect(b) == IntervalSet([Interval(F(2), F(3), False)])
    assert a.complement().complement() == a
    assert a.union(b) == IntervalSet([Interval(F(1), F(5))])
    assert a.covers(F(1), F(3)) and not a.covers(F(1), F(4))
    # adjacent halves merge into one canonical interval
    assert IntervalSet([Interval(F(0), F(1), True, False), Interval(F(1), F(2))]) == IntervalSet(
        [Interval(F(0), F(2))]
    )


# -- properties ----------------------------------------------------------------------------

rationals = st.fractions(min_value=0, max_value=20, max_denominator=6)
bounds = st.integers(min_value=0, max_value=10).map(F)


def constraints(clock="c"):
    leaf = st.one_of(
        st.just(TRUE),
        bounds.map(lambda b: Gt(clock, b)),
        bounds.map(lambda b: Eq(clock, b)),
    )
    return st.recursive(
        leaf,
        lambda inner: st.one_of(inner.map(Not), st.tuples(inner, inner).map(lambda p: And(*p))),
        max_leaves=6,
    )


@given(constraints(), rationals)
def test_membership_agrees_with_satisfaction(d, t):
    assert satisfies({"c": t}, d) == solution_set(d, "c").contains(t)


@given(constraints(), rationals)
def test_samples_are_members(d, t):
    s = solution_set(d, "c")
    assert all(s.contains(p) for p in sample_grid(s, 12))
    grid = sample_grid(s, 12)
    assert grid == sorted(set(grid))


valuations = st.dictionaries(st.sampled_from(["A", "B", "C"]), rationals, max_size=3).map(Valuation)


@given(valuations, rationals, rationals)
def test_advance_additive(nu, a, b):
    assert advance(advance(nu, a), b) == advance(nu, a + b)


@given(valuations, st.data())
def test_reset_idempotent(nu, data):
    lam = data.draw(st.sets(st.sampled_from(sorted(nu)))) if nu else set()
    once = reset_clocks(nu, lam)
    assert reset_clocks(once, lam) == once


@given(valuations, valuations, valuations)
def test_override_union_associative_right_biased(a, b, c):
    left = override_union([override_union([a, b]), c])
    right = override_union([a, override_union([b, c])])
    assert left == right == override_union([a, b, c])
    for k in c:
        assert left[k] == c[k]


@given(rationals)
def test_time_text_round_trip(t):
    assert parse_time(format_time(t)) == t


@given(constraints())
def test_constraint_json_round_trip(d):
    assert constraint_from_json(constraint_to_json(d)) == d
