"""Behaviour of the literal rules on the generated corpus members where they fall short.

These tests pin the counterexamples so that the gaps stay visible and explained."""

from __future__ import annotations

from atmp.calculus import explore
from atmp.generators import canonical_process_of, gen_global_type, initial_state
from atmp.semantics import canonical_env, check_completeness, check_soundness, en_route_context
from atmp.typecheck import check_subject_reduction, open_ensemble, typecheck


def test_en_route_context_rule_blocks_sender_continuation():
    # the sender of an en-route message projects to the chosen continuation only, so the
    # environment can let it move on while the global type needs every branch to step
    g = gen_global_type(6)
    st = initial_state(g)
    env = canonical_env(st)
    rep = check_completeness(st, env, depth=4)
    assert not rep.ok
    assert [str(a) for a in rep.counterexample][-2:] == ["s:r2!r0:e", "s:r2!r0:a"]
    with en_route_context("chosen"):
        assert check_completeness(st, env, depth=4).ok
        assert check_soundness(st, env, depth=4).ok


def test_en_route_context_rule_breaks_subject_reduction_witness():
    p = canonical_process_of(gen_global_type(180))
    rep = check_subject_reduction(p, steps=6)
    assert not rep.ok and "no environment re-types" in rep.message
    with en_route_context("chosen"):
        assert check_subject_reduction(p, steps=6).ok


def test_queue_cancellation_can_expose_later_message():
    # after a timeout kills the session, dropping a queued message lets a sender that has not
    # yet been killed enqueue its next label, which a receiver still expecting the dropped one reads
    for seed, tail in ((94, ["R-Fail", "R-CanQ b", "R-Out s:r0!r1:e", "R-Err e"]),
                       (107, ["R-CanQ e", "R-Time t=3", "R-Out s:r0!r2:a", "R-Err a"])):
        p = canonical_process_of(gen_global_type(seed))
        assert typecheck(p).ok
        body, _, _ = open_ensemble(p)
        rep = explore(body, depth=14)
        assert rep.errors
        labels = [lab for lab, _ in rep.trace_to(rep.errors[0])]
        assert labels[-len(tail):] == tail
