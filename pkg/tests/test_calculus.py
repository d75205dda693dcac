from __future__ import annotations

import random
from fractions import Fraction as F

import pytest
from hypothesis import given
from hypothesis import strategies as st

from atmp.calculus import (
    INF,
    NIL,
    Arm,
    Call,
    Def,
    DelayConstraint,
    DelayExact,
    Err,
    Failed,
    Kill,
    Msg,
    Par,
    ProcessSyntaxError,
    Queue,
    Restrict,
    TimedBranch,
    TimedSelect,
    TryCatch,
    UnboundedCallExpansion,
    Undefined,
    cong_normalize,
    decompose,
    explore,
    has_error,
    has_failed_at,
    is_clean_residue,
    parse_process,
    step_instant,
    step_instant_labelled,
    step_time,
    subjects,
    time_pass,
    time_pass_or_none,
    to_sexp,
)
from atmp.env import Endpoint, Variable
from atmp.generators import gen_process
from atmp.samples import fixture_text
from atmp.timecore import window

SAT, SER = Endpoint("s", "Sat"), Endpoint("s", "Ser")


def _branch(chan, frm, labels, timeout=INF):
    return TimedBranch(chan, frm, tuple(Arm(lab, None, NIL) for lab in labels), timeout)


def test_subjects_examples():
    p1 = TimedSelect(SAT, "Ser", "Data", None, NIL, F(3, 10))
    p2 = _branch(SER, "Sat", ["Data"])
    assert subjects(Par((p1, p2))) == {(SAT, False), (SER, False)}
    assert subjects(Queue("s", "Sat")) == {(SAT, True)}
    assert subjects(NIL) == frozenset()
    assert subjects(Restrict("s", Par((p1, Queue("s", "Sat"))))) == frozenset()


def test_subjects_through_calls():
    x = Variable("x")
    d = Def("F", ("x",), TimedSelect(x, "q", "l", None, NIL), Call("F", (SAT,)))
    assert subjects(d) == {(SAT, False)}
    loop = Def("G", ("x",), Call("G", (x,)), Call("G", (SAT,)))
    with pytest.raises(UnboundedCallExpansion):
        subjects(loop)


def test_time_pass_examples():
    b = _branch(SAT, "Sen", ["Data"], F(1, 5))
    assert time_pass(F(1, 2), b) == Failed(b)
    assert time_pass(3, Kill("s")) == Kill("s")
    with pytest.raises(Undefined):
        time_pass(2, DelayExact(F(1), NIL))
    with pytest.raises(Undefined):
        time_pass(1, DelayConstraint(window("t", 0, 1), NIL))
    assert time_pass(1, _branch(SAT, "Sen", ["Data"])) == _branch(SAT, "Sen", ["Data"])
    assert time_pass(F(1, 10), b) == _branch(SAT, "Sen", ["Data"], F(1, 10))


def test_cong_normalize_examples():
    qs = Par((Queue("s", "p"), Queue("s", "q")))
    assert cong_normalize(Restrict("s", qs)) == NIL
    assert cong_normalize(DelayExact(F(0), Kill("u"))) == Kill("u")
    assert cong_normalize(Par((Kill("s"), Kill("s")))) == Kill("s")
    q1 = Queue("s", "p", (Msg("a", "l1"), Msg("b", "l2")))
    q2 = Queue("s", "p", (Msg("b", "l2"), Msg("a", "l1")))
    assert cong_normalize(q1) == cong_normalize(q2)
    same = Queue("s", "p", (Msg("a", "l1"), Msg("a", "l2")))
    swapped = Queue("s", "p", (Msg("a", "l2"), Msg("a", "l1")))
    assert cong_normalize(same) != cong_normalize(swapped)


def test_try_body_not_nil():
    with pytest.raises(ValueError):
        TryCatch(NIL, NIL)


def test_step_instant_examples():
    assert step_instant(NIL) == []
    p = Par((_branch(SAT, "Sen", ["l1"]), Queue("s", "Sen", (Msg("Sat", "l2"),))))
    assert any(has_error(q) for q in step_instant(cong_normalize(p)))
    good = Par((_branch(SAT, "Sen", ["l1"]), Queue("s", "Sen", (Msg("Sat", "l1"),))))
    assert [st.rule for st in step_instant_labelled(cong_normalize(good))] == ["R-In"]


def test_step_time_examples():
    assert step_time(NIL, 1) == NIL
    assert step_time(DelayConstraint(window("t", 0, 1), NIL), 1) is None


def test_delay_resolution_is_sampled():
    p = DelayConstraint(window("t", 6, 7), Kill("s"))
    outs = step_instant(p)
    assert {q.t for q in outs if isinstance(q, DelayExact)} == {F(6), F(13, 2), F(7)}


def test_remote_data_fixture_runs_to_kill():
    p = parse_process(fixture_text("remote_data.atmp"))
    rep = explore(p, depth=14)
    assert rep.deadlock_free and not rep.errors and rep.terminals
    for t in rep.terminals:
        _, _, comps = decompose(t)
        assert is_clean_residue(t) and Kill("s") in comps
    assert any(has_failed_at(SAT)(q) for q in rep.parents)


def test_explore_nil():
    rep = explore(NIL, depth=3)
    assert rep.terminals == [NIL] and rep.deadlock_free


def test_sexp_round_trip_and_errors():
    p = parse_process(fixture_text("remote_data.atmp"))
    assert to_sexp(parse_process(to_sexp(p))) == to_sexp(p)
    for bad in ("", "(bogus)", "(send s[p] q)", "(recv s[p] q 1 ())"):
        with pytest.raises(ProcessSyntaxError):
            parse_process(bad)


def test_err_is_recognised():
    assert has_error(Par((Err(), Kill("s"))))


# -- properties ---------------------------------------------------------------------------

seeds = st.integers(min_value=0, max_value=100_000)
times = st.sampled_from([F(0), F(1, 4), F(1, 2), F(1), F(3, 2), F(3)])


@given(seeds)
def test_normalize_idempotent(seed):
    p = gen_process(random.Random(seed))
    n = cong_normalize(p)
    assert cong_normalize(n) == n


@given(seeds, times)
def test_time_pass_preserves_subjects(seed, t):
    p = gen_process(random.Random(seed))
    q = time_pass_or_none(t, p)
    if q is not None:
        assert subjects(q) == subjects(p)


def _spent(p, inside=False):
    """Forget the timeout a failed action had left when it failed."""
    import dataclasses

    if isinstance(p, Failed):
        return Failed(_spent(p.proc, True))
    if not dataclasses.is_dataclass(p):
        return p
    if isinstance(p, tuple):
        return p
    changes = {}
    for f in dataclasses.fields(p):
        v = getattr(p, f.name)
        if isinstance(v, tuple):
            changes[f.name] = tuple(_spent(x) for x in v)
        elif dataclasses.is_dataclass(v):
            changes[f.name] = _spent(v)
    if inside and isinstance(p, (TimedSelect, TimedBranch)):
        changes["timeout"] = None
    return dataclasses.replace(p, **changes)


@given(seeds, times, times)
def test_time_pass_additive(seed, a, b):
    p = gen_process(random.Random(seed))
    whole = time_pass_or_none(a + b, p)
    if whole is not None:
        first = time_pass_or_none(a, p)
        assert first is not None
        split = time_pass_or_none(b, first)
        assert split is not None
        assert split == whole or _spent(split) == _spent(whole)


@given(seeds, times)
def test_failed_absorbs_time(seed, t):
    p = Failed(gen_process(random.Random(seed)))
    assert time_pass(t, p) == p


@given(seeds)
def test_sexp_round_trip_random(seed):
    p = gen_process(random.Random(seed))
    assert to_sexp(parse_process(to_sexp(p))) == to_sexp(p)
