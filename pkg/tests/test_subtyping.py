from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from atmp.env import CombinedEntry, QueueEntry, SessionEntry
from atmp.generators import brute_subtype, gen_local_type, widen
from atmp.subtyping import (
    ShapeMismatch,
    congruent_entry,
    subtype,
    subtype_entry,
    subtype_queue,
    subtype_sort,
)
from atmp.timecore import Valuation, window
from atmp.types import END, UNIT, Base, Delegation, ExtChoice, IntChoice, LBranch, MsgType, Rec, unfold

L1 = LBranch("l1", UNIT, window("C", 0, 1), frozenset(), END)
L2 = LBranch("l2", UNIT, window("C", 2, 4), frozenset(), END)


def test_subtype_selections():
    one = IntChoice("q", (L1,))
    two = IntChoice("q", (L1, L2))
    assert subtype(two, one)
    assert not subtype(one, two)
    assert subtype(one, one)


def test_subtype_branchings():
    one = ExtChoice("q", (L1,))
    two = ExtChoice("q", (L1, L2))
    assert subtype(one, two) and not subtype(two, one)


def test_subtype_mismatches():
    assert not subtype(IntChoice("q", (L1,)), IntChoice("r", (L1,)))
    other = LBranch("l1", UNIT, window("C", 0, 2), frozenset(), END)
    assert not subtype(IntChoice("q", (L1,)), IntChoice("q", (other,)))
    assert not subtype(IntChoice("q", (L1,)), END)


def test_subtype_sort():
    d = window("C", 0, 1)
    assert subtype_sort(Delegation(d, END), Delegation(d, END))
    assert not subtype_sort(Delegation(d, END), Delegation(window("C", 0, 2), END))
    assert not subtype_sort(Base("int"), Base("bool"))


def test_subtype_queue():
    assert subtype_queue((), ())
    d = window("C", 0, 1)
    small = Delegation(d, ExtChoice("p", (L1,)))
    big = Delegation(d, ExtChoice("p", (L1, L2)))
    assert subtype_queue((MsgType("q", "l", big),), (MsgType("q", "l", small),))
    assert not subtype_queue((MsgType("q", "l"),), ())


def test_subtype_entry():
    nu = Valuation({"C": 0})
    e = CombinedEntry(nu, IntChoice("q", (L1,)), ())
    assert subtype_entry(e, e)
    assert not subtype_entry(e, CombinedEntry(Valuation({"C": 1}), e.type, ()))
    with pytest.raises(ShapeMismatch):
        subtype_entry(e, QueueEntry(()))
    assert subtype_entry(SessionEntry(nu, IntChoice("q", (L1, L2))), SessionEntry(nu, IntChoice("q", (L1,))))


def test_congruent_entry():
    a, b = MsgType("p", "l1"), MsgType("q", "l2")
    assert congruent_entry(QueueEntry((a, b)), QueueEntry((b, a)))
    c = MsgType("p", "l2")
    assert not congruent_entry(QueueEntry((a, c)), QueueEntry((c, a)))
    e = QueueEntry((a,))
    assert congruent_entry(e, e)


def test_recursive_subtyping():
    t = Rec("X", IntChoice("q", (LBranch("l", UNIT, window("c", 0, 1), {"c"}, __import__("atmp.types").types.Var("X")),)))
    assert subtype(t, unfold(t)) and subtype(unfold(t), t)


# -- properties ------------------------------------------------------------------------

seeds = st.integers(min_value=0, max_value=100_000)


@given(seeds)
def test_reflexive(seed):
    t = gen_local_type(random.Random(seed))
    assert subtype(t, t)


@given(seeds)
def test_transitive(seed):
    rng = random.Random(seed)
    a = gen_local_type(rng)
    b = widen(rng, a)
    c = widen(rng, b)
    assert subtype(a, b) and subtype(b, c) and subtype(a, c)


@given(seeds)
def test_unfold_both_directions(seed):
    t = gen_local_type(random.Random(seed))
    assert subtype(unfold(t), t) and subtype(t, unfold(t))


@given(seeds)
def test_inversion(seed):
    rng = random.Random(seed)
    t = gen_local_type(rng)
    sup = widen(rng, t)
    u = unfold(sup)
    if not isinstance(u, IntChoice):
        return
    left = unfold(t)
    assert isinstance(left, IntChoice) and left.partner == u.partner
    for b in u.branches:
        o = left.branch(b.label)
        assert (o.guard, o.reset) == (b.guard, b.reset)


@given(seeds)
def test_agrees_with_brute_force(seed):
    rng = random.Random(seed)
    a = gen_local_type(rng)
    b = widen(rng, a) if rng.random() < 0.5 else gen_local_type(rng)
    assert subtype(a, b) == brute_subtype(a, b)
