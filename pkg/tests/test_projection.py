from __future__ import annotations

import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from atmp import samples
from atmp.generators import gen_global_type, gen_local_type
from atmp.projection import NotMergeable, merge, merge_all, project, queue_env_of
from atmp.subtyping import subtype
from atmp.timecore import window
from atmp.types import END, UNIT, Assertion, EnRoute, ExtChoice, GBranch, IntChoice, LBranch, MsgType, Rec, roles, unfold

D67 = lambda c: window(c, 6, 7)  # noqa: E731


def test_project_g_data():
    g = samples.remote_data()
    assert project(g, "Sen") == IntChoice("Sat", (LBranch("Data", UNIT, D67("C_Sen"), {"C_Sen"}, END),))
    t_sat = IntChoice("Ser", (LBranch("Data", UNIT, D67("C_Sat"), {"C_Sat"}, END),))
    assert project(g, "Sat") == ExtChoice("Sen", (LBranch("Data", UNIT, D67("C_Sat"), set(), t_sat),))
    assert project(g, "Ser") == ExtChoice("Sat", (LBranch("Data", UNIT, D67("C_Ser"), {"C_Ser"}, END),))
    assert project(END, "p") == END


def test_merge_examples():
    t = project(samples.remote_data(), "Sat")
    assert merge(t, t) == t
    a = ExtChoice("p", (LBranch("l1", UNIT, window("c", 0, 1), set(), END),))
    b = ExtChoice("p", (LBranch("l2", UNIT, window("c", 2, 3), {"c"}, END),))
    assert merge(a, b) == ExtChoice("p", a.branches + b.branches)
    i1 = IntChoice("p", (LBranch("l1", UNIT, window("c", 0, 1), set(), END),))
    i2 = IntChoice("p", i1.branches + (LBranch("l2", UNIT, window("c", 0, 1), set(), END),))
    with pytest.raises(NotMergeable):
        merge(i1, i2)


def test_merge_rejects_conflicting_assertions():
    a = ExtChoice("p", (LBranch("l", UNIT, window("c", 0, 1), set(), END),))
    b = ExtChoice("p", (LBranch("l", UNIT, window("c", 0, 2), set(), END),))
    with pytest.raises(NotMergeable):
        merge(a, b)
    with pytest.raises(NotMergeable):
        merge(a, ExtChoice("q", a.branches))
    with pytest.raises(NotMergeable):
        merge(a, END)


def test_queue_env_of():
    g = samples.remote_data()
    assert queue_env_of(g, "Sen") == ()
    en = EnRoute("p", "q", (GBranch("Data", UNIT, Assertion(), END),), "Data")
    assert queue_env_of(en, "p") == (MsgType("q", "Data", UNIT),)
    assert queue_env_of(END, "p") == ()


@given(st.integers(min_value=0, max_value=10_000))
def test_projection_commutes_with_unfolding(seed):
    g = gen_global_type(seed)
    for r in sorted(roles(g)):
        left, right = project(unfold(g), r), unfold(project(g, r))
        # equal, or equal once a role's first action sits under a nested loop binder
        assert left == right or (subtype(left, right) and subtype(right, left))
        assert unfold(left) == unfold(right) or subtype(unfold(left), right)
    assert project(g, "nobody") == END
    assert all(project(g, r) == project(g, r) for r in roles(g))


def _ext_family(rng, n):
    """External choices from one partner whose shared labels agree, so they merge."""
    base = {lab: (window("c", i, i + 1), frozenset()) for i, lab in enumerate("abcd")}
    out = []
    for _ in range(n):
        labs = sorted(rng.sample("abcd", rng.randint(1, 3)))
        out.append(ExtChoice("p", tuple(LBranch(lab, UNIT, *base[lab], END) for lab in labs)))
    return out


@given(st.integers(min_value=0, max_value=10_000), st.integers(min_value=1, max_value=4))
def test_merge_is_least_upper_bound(seed, n):
    rng = random.Random(seed)
    fam = _ext_family(rng, n)
    m = merge_all(fam)
    assert all(subtype(t, m) for t in fam)
    # any common supertype from the candidates is above the merge
    for cand in _ext_family(rng, 6):
        if all(subtype(t, cand) for t in fam):
            assert subtype(m, cand)


@given(st.integers(min_value=0, max_value=10_000))
def test_merge_idempotent_on_random_local_types(seed):
    t = gen_local_type(random.Random(seed))
    assert merge(t, t) == t


def test_rec_projection_drops_absent_role():
    g = Rec("t", samples.remote_data())
    assert project(g, "Zed") == END
