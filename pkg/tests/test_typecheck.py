from __future__ import annotations

import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from atmp.calculus import (
    NIL,
    Arm,
    DelayExact,
    Failed,
    Kill,
    Par,
    Queue,
    Restrict,
    TimedBranch,
    TimedSelect,
    cong_normalize,
    parse_process,
    step_instant,
    substitute,
    time_pass_or_none,
)
from atmp.env import CombinedEntry, Endpoint, SessionEntry, TypingEnv, Variable
from atmp.generators import canonical_process_of, gen_env, gen_global_type
from atmp.samples import fixture_text, remote_data_env, remote_data_state
from atmp.semantics import env_time_step
from atmp.timecore import INF, Valuation, window
from atmp.typecheck import (
    PreconditionViolation,
    SessionAnnotation,
    annotate,
    check_deadlock_freedom,
    check_session_fidelity,
    check_subject_reduction,
    end_env,
    open_ensemble,
    single_session_shape,
    typecheck,
)
from atmp.types import END, UNIT, ExtChoice, IntChoice, LBranch

ANN = {"s": SessionAnnotation(remote_data_env(), remote_data_state())}


def remote_data(text=None):
    return annotate(parse_process(text or fixture_text("remote_data.atmp")), ANN)


def test_end_env_examples():
    assert end_env({})
    assert end_env({Endpoint("s", "p"): SessionEntry(Valuation({}), END)})
    t = IntChoice("q", (LBranch("l", UNIT, window("c", 0, 1), frozenset(), END),))
    assert not end_env({Endpoint("s", "p"): SessionEntry(Valuation({"c": 0}), t)})
    assert not end_env({Endpoint("s", "p"): CombinedEntry(Valuation({}), END, (object(),))})


def test_remote_data_typechecks():
    rep = typecheck(remote_data())
    assert rep.ok, rep.error
    body, gamma, _ = open_ensemble(remote_data())
    assert typecheck(body, gamma).ok


def test_select_window_violation():
    text = fixture_text("remote_data.atmp").replace("Data 0.3 nil)\n       (cancel", "Data 2 nil)\n       (cancel")
    rep = typecheck(remote_data(text))
    assert not rep.ok and rep.error.rule == "T-Sel"
    assert rep.to_json()["error"]["rule"] == "T-Sel"


def test_nil_and_unannotated_restriction():
    assert typecheck(NIL).ok
    rep = typecheck(Restrict("s", Queue("s", "p")))
    assert not rep.ok and rep.error.rule == "T-Nu"


def test_explain_gives_derivation():
    rep = typecheck(remote_data(), explain=True)
    assert rep.derivation and any("T-Par" in line for line in rep.derivation)


def test_theorems_on_remote_data():
    p = remote_data()
    assert check_subject_reduction(p, steps=6).ok
    assert check_subject_reduction(p, steps=0).ok
    fid = check_session_fidelity(p)
    assert fid.ok and fid.coverage["realised"] > 0
    assert check_deadlock_freedom(p).ok


def test_nil_ensemble_is_deadlock_free():
    g = gen_global_type(0, {"roles": 1})
    p = canonical_process_of(gen_global_type(1))
    assert g == END
    assert check_deadlock_freedom(p).ok


def test_precondition_violation_lists_clause():
    two = Par((remote_data(), annotate(parse_process(fixture_text("remote_data.atmp").replace("s[", "u[")
                                                     .replace("queue s ", "queue u ")),
                                       {"u": SessionAnnotation(remote_data_env("u"), remote_data_state())})))
    with pytest.raises(PreconditionViolation) as info:
        single_session_shape(two)
    assert info.value.to_json()["precondition"][0]["clause"] == "iii"


def test_narrowing_fixed_instance():
    body, gamma, _ = open_ensemble(remote_data())
    narrow = TypingEnv({c: CombinedEntry(e.nu, _narrow(e.type), e.queue) for c, e in gamma.items()})
    assert typecheck(body, narrow).ok


def test_substitution_fixed_instance():
    t = IntChoice("q", (LBranch("l", UNIT, window("c", 0, 1), frozenset(), END),))
    nu = Valuation({"c": 0})
    p = TimedSelect(Variable("x"), "q", "l", None, NIL, F(1, 2))
    assert typecheck(p, {Variable("x"): SessionEntry(nu, t)}).ok
    sp = substitute(p, {"x": Endpoint("s", "p")})
    assert typecheck(sp, {Endpoint("s", "p"): SessionEntry(nu, t)}).ok


def _narrow(t):
    """A subtype: one more selection label, or one fewer branching label."""
    if isinstance(t, IntChoice):
        b = t.branches[0]
        return IntChoice(t.partner, t.branches + (LBranch("zz_extra", UNIT, b.guard, b.reset, END),))
    if isinstance(t, ExtChoice) and len(t.branches) > 1:
        return ExtChoice(t.partner, t.branches[:-1])
    return t


# -- properties on generated ensembles ---------------------------------------------------------

seeds = st.integers(min_value=0, max_value=100_000)


@settings(max_examples=30)
@given(seeds)
def test_generated_ensembles_type(seed):
    assert typecheck(canonical_process_of(gen_global_type(seed))).ok


@settings(max_examples=30)
@given(seeds)
def test_narrowing(seed):
    body, gamma, _ = open_ensemble(canonical_process_of(gen_global_type(seed)))
    narrow = TypingEnv({c: CombinedEntry(e.nu, _narrow(e.type), e.queue) for c, e in gamma.items()})
    assert typecheck(body, narrow).ok


@settings(max_examples=30)
@given(seeds)
def test_subject_congruence(seed):
    body, gamma, _ = open_ensemble(canonical_process_of(gen_global_type(seed)))
    shuffled = Par(tuple(reversed(body.procs))) if isinstance(body, Par) else body
    assert typecheck(shuffled, gamma).ok == typecheck(cong_normalize(shuffled), gamma).ok == True  # noqa: E712


@settings(max_examples=30)
@given(seeds, st.sampled_from([F(1, 2), F(1), F(2)]))
def test_time_shift(seed, t):
    body, gamma, _ = open_ensemble(canonical_process_of(gen_global_type(seed)))
    for nxt in step_instant(body):
        if not typecheck(nxt, gamma).ok:
            continue
        later = time_pass_or_none(t, nxt)
        if later is not None:
            assert typecheck(later, env_time_step(gamma, t)).ok


@given(seeds)
def test_failed_types_under_any_env(seed):
    rng = random.Random(seed)
    _, gamma = gen_env(rng)
    p = TimedBranch(Endpoint("s", "zz"), "q", (Arm("l", None, NIL),), INF)
    assert typecheck(Failed(p), gamma).ok
    assert typecheck(Failed(Kill("s")), gamma).ok


def test_delay_exact_types_after_resolution():
    body, gamma, _ = open_ensemble(remote_data())
    resolved = [q for q in step_instant(body) if any(isinstance(c, DelayExact) for c in getattr(q, "procs", ()))]
    assert resolved and all(typecheck(q, gamma).ok for q in resolved)
