"""Acceptance criteria, one PASS/FAIL line each.

Run with `pytest tests/test_acceptance.py -s` to see the lines as they happen; they are also
collected into an "acceptance criteria" section of the terminal summary. Criteria that do not
hold under the implemented rules are strict xfails and print FAIL."""

from __future__ import annotations

import random
import time
from contextlib import contextmanager
from fractions import Fraction as F

import pytest

from atmp import frontend, samples
from atmp.calculus import (
    Kill,
    cong_normalize,
    decompose,
    explore,
    has_failed_at,
    is_clean_residue,
    parse_process,
    subjects,
    time_pass_or_none,
)
from atmp.env import CombinedEntry, Endpoint
from atmp.generators import (
    brute_subtype,
    canonical_process_of,
    gen_global_type,
    gen_local_type,
    gen_process,
    initial_state,
    widen,
)
from atmp.projection import merge_all, project
from atmp.semantics import (
    Send,
    associated,
    canonical_env,
    check_completeness,
    check_safety,
    check_soundness,
    env_nontime_steps,
    per_label_global_to_env,
    untimed_erase,
)
from atmp.subtyping import congruent_env, subtype
from atmp.timecore import window
from atmp.typecheck import (
    SessionAnnotation,
    annotate,
    check_deadlock_freedom,
    check_session_fidelity,
    check_subject_reduction,
    open_ensemble,
    single_session_shape,
    typecheck,
)
from atmp.types import END, UNIT, ExtChoice, IntChoice, LBranch, unfold

from conftest import ACCEPTANCE
from helpers import env_walk

CORPUS = range(200)


@contextmanager
def criterion(name: str, limit: float | None = None):
    """Time a criterion and log one PASS/FAIL line; failures inside the block propagate."""
    state = {"ok": False, "note": ""}
    t0 = time.perf_counter()
    try:
        yield state
        state["ok"] = True
    finally:
        dt = time.perf_counter() - t0
        ok = state["ok"] and (limit is None or dt < limit)
        budget = f" (limit {limit:g} s)" if limit is not None else ""
        note = f" [{state['note']}]" if state["note"] else ""
        line = f"{name}: {'PASS' if ok else 'FAIL'} in {dt:.2f} s{budget}{note}"
        ACCEPTANCE.append(line)
        print(line)
    if limit is not None and dt >= limit:
        pytest.fail(f"{name} took {dt:.2f} s, over {limit} s")


def _lb(label, guard, reset=(), cont=END):
    return LBranch(label, UNIT, guard, frozenset(reset), cont)


def _fixture_ensemble():
    ann = {"s": SessionAnnotation(samples.remote_data_env(), samples.remote_data_state())}
    return annotate(parse_process(samples.fixture_text("remote_data.atmp")), ann)


# -- 1 ------------------------------------------------------------------------------------------


def test_ac1_golden_projection():
    with criterion("AC1 golden projection", limit=1.0):
        pf = frontend.parse(samples.fixture_text("g_data.tnuscr"))
        g = frontend.to_global(pf)
        d = lambda c: window(c, 6, 7)  # noqa: E731
        expected = {
            "Sen": IntChoice("Sat", (_lb("Data", d("C_Sen"), {"C_Sen"}),)),
            "Sat": ExtChoice("Sen", (_lb("Data", d("C_Sat"), (), IntChoice("Ser", (_lb("Data", d("C_Sat"), {"C_Sat"}),))),)),
            "Ser": ExtChoice("Sat", (_lb("Data", d("C_Ser"), {"C_Ser"}),)),
        }
        arts = frontend.emit(pf)
        assert arts.types == expected
        assert {r: project(g, r) for r in expected} == expected


# -- 2 ------------------------------------------------------------------------------------------


def test_ac2_golden_association_and_reset_mutation():
    with criterion("AC2 golden association + reset mutation", limit=1.0):
        st, env = samples.remote_data_state(), samples.remote_data_env()
        assert associated(st, env).to_json() == {"associated": True, "failures": []}
        ser = env[Endpoint("s", "Ser")]
        t = ExtChoice("Sat", tuple(LBranch(b.label, b.sort, b.guard, frozenset(), b.cont) for b in ser.type.branches))
        rep = associated(st, env.update(Endpoint("s", "Ser"), CombinedEntry(ser.nu, t, ())))
        assert not rep.ok and "1(iii)" in rep.items()


@pytest.mark.xfail(strict=True, reason="dropping a branching label yields a subtype of the entry, "
                                       "so the projection is still below it and association holds")
def test_ac2_drop_fail_branch_mutation():
    with criterion("AC2 drop-fail mutation rejected", limit=1.0) as c:
        st, env = samples.remote_data_state(), samples.remote_data_env()
        sat = env[Endpoint("s", "Sat")]
        t = ExtChoice("Sen", tuple(b for b in sat.type.branches if b.label != "fail"))
        rep = associated(st, env.update(Endpoint("s", "Sat"), CombinedEntry(sat.nu, t, ())))
        c["note"] = f"associated={rep.ok}"
        assert not rep.ok and rep.items()


# -- 3 ------------------------------------------------------------------------------------------


def test_ac3_golden_execution():
    with criterion("AC3 golden execution", limit=5.0):
        p = parse_process(samples.fixture_text("remote_data.atmp"))
        rep = explore(p, depth=14, grid="auto")
        assert rep.terminals and not rep.errors and not rep.bad_terminals and not rep.truncated
        for t in rep.terminals:
            assert is_clean_residue(t) and Kill("s") in decompose(t)[2]
        failed = has_failed_at(Endpoint("s", "Sat"))
        assert all(any(failed(q) for _, q in rep.trace_to(t)) for t in rep.terminals)
        assert rep.deadlock_free
        assert check_deadlock_freedom(_fixture_ensemble(), depth=14).ok


# -- 4 ------------------------------------------------------------------------------------------


def test_ac4_existential_soundness():
    with criterion("AC4 per-label gap with existential soundness"):
        st, env = samples.uninhabited_choice_state(), samples.uninhabited_choice_env()
        assert associated(st, env)
        assert per_label_global_to_env(st, env) == [Send("s", "p", "q", "l2")]
        assert check_soundness(st, env, depth=4).ok


# -- 5 ------------------------------------------------------------------------------------------


def _pairs():
    for seed in CORPUS:
        st = initial_state(gen_global_type(seed))
        yield seed, st, canonical_env(st)


@pytest.mark.xfail(strict=True, reason="literal context rule for en-route messages: the sender's "
                                       "next action needs every branch to step (seed 6)")
def test_ac5_completeness():
    with criterion("AC5 completeness, 200 pairs, depth 4", limit=60.0) as c:
        bad = [seed for seed, st, env in _pairs() if not check_completeness(st, env, depth=4).ok]
        c["note"] = f"failing seeds {bad}"
        assert not bad


def test_ac5_soundness():
    with criterion("AC5 soundness, 200 pairs, depth 4", limit=60.0):
        bad = [seed for seed, st, env in _pairs() if not check_soundness(st, env, depth=4).ok]
        assert not bad, bad


@pytest.mark.xfail(strict=True, reason="same context rule: after an en-route send no environment "
                                       "re-types the sender's continuation (seed 180)")
def test_ac5_subject_reduction():
    with criterion("AC5 subject reduction, 200 ensembles, 6 steps") as c:
        bad = [seed for seed in CORPUS
               if not check_subject_reduction(canonical_process_of(gen_global_type(seed)), steps=6).ok]
        c["note"] = f"failing seeds {bad}"
        assert not bad


def test_ac5_session_fidelity():
    with criterion("AC5 session fidelity, 100 ensembles") as c:
        done, bad, seed = 0, [], 0
        while done < 100:
            p = canonical_process_of(gen_global_type(seed))
            single_session_shape(p)
            if not check_session_fidelity(p).ok:
                bad.append(seed)
            done += 1
            seed += 1
        c["note"] = f"seeds 0..{seed - 1}"
        assert not bad, bad


def test_ac5_safety():
    with criterion("AC5 safety by projection, depth 6"):
        bad = [seed for seed, st, env in _pairs()
               if associated(st, env) and not check_safety(untimed_erase(env), depth=6)[0]]
        assert not bad, bad
        assert check_safety(untimed_erase(samples.remote_data_env()), depth=6)[0]


# -- 6 ------------------------------------------------------------------------------------------


def test_ac6_subtyping_algebra():
    with criterion("AC6 subtyping algebra, 1000 types", limit=30.0):
        rng = random.Random(6)
        base = {lab: (window("c", i, i + 1), frozenset()) for i, lab in enumerate("abcd")}
        for _ in range(1000):
            t = gen_local_type(rng)
            assert subtype(t, t)
            u = widen(rng, t)
            v = widen(rng, u)
            assert subtype(t, u) and subtype(u, v) and subtype(t, v)
            assert subtype(unfold(t), t) and subtype(t, unfold(t))
            top = unfold(u)
            if isinstance(top, IntChoice):
                left = unfold(t)
                assert isinstance(left, IntChoice) and left.partner == top.partner
                for b in top.branches:
                    o = left.branch(b.label)
                    assert (o.guard, o.reset) == (b.guard, b.reset)
            other = gen_local_type(rng)
            assert subtype(t, other) == brute_subtype(t, other)
            assert subtype(t, u) == brute_subtype(t, u)
            fam = [ExtChoice("p", tuple(LBranch(lab, UNIT, *base[lab], END)
                                        for lab in sorted(rng.sample("abcd", rng.randint(1, 3)))))
                   for _ in range(rng.randint(1, 4))]
            m = merge_all(fam)
            assert all(subtype(f, m) for f in fam)


# -- 7 ------------------------------------------------------------------------------------------


def test_ac7_determinism_and_frame():
    with criterion("AC7 determinism, domain, frame, 500 env steps") as c:
        steps = seed = 0
        while steps < 500:
            _, _, env = env_walk(seed)
            seed += 1
            by_label: dict = {}
            for a, e2 in env_nontime_steps(env):
                steps += 1
                assert set(e2) == set(env)
                changed = {k for k in env if env[k] != e2[k]}
                allowed = {Endpoint(a.session, a.sender)}
                if not isinstance(a, Send):
                    allowed.add(Endpoint(a.session, a.receiver))
                assert changed <= allowed
                by_label.setdefault(a, []).append(e2)
            for results in by_label.values():
                assert all(congruent_env(results[0], r) for r in results[1:])
        c["note"] = f"{steps} steps from {seed} walks"


# -- 8 ------------------------------------------------------------------------------------------


def test_ac8_engine_algebra():
    with criterion("AC8 normalisation, subjects, additivity, 1000 processes"):
        rng = random.Random(8)
        ts = [F(0), F(1, 4), F(1, 2), F(1), F(2)]
        for _ in range(1000):
            p = gen_process(rng)
            n = cong_normalize(p)
            assert cong_normalize(n) == n
            a, b = rng.choice(ts), rng.choice(ts)
            q = time_pass_or_none(a, p)
            if q is not None:
                assert subjects(q) == subjects(p)
            whole = time_pass_or_none(a + b, p)
            if whole is not None:
                split = time_pass_or_none(b, q)
                assert split is not None and subjects(split) == subjects(whole)
                assert cong_normalize(split) == cong_normalize(whole) or _same_modulo_failed(split, whole)


def _same_modulo_failed(x, y):
    from test_calculus import _spent
    return _spent(x) == _spent(y)


def test_ac8_no_error_in_golden_fixtures():
    with criterion("AC8 error unreachable, golden fixtures"):
        fixtures = [_fixture_ensemble(), canonical_process_of(samples.remote_data())]
        pf = frontend.parse(samples.fixture_text("remote_data.tnuscr"))
        fixtures.append(canonical_process_of(frontend.to_global(pf)))
        for p in fixtures:
            assert typecheck(p).ok
            body, _, _ = open_ensemble(p)
            assert not explore(body, depth=14).errors


@pytest.mark.xfail(strict=True, reason="queue cancellation after a kill can expose a later label "
                                       "to a receiver that still expects the dropped one (seeds 94, 107)")
def test_ac8_no_error_in_generated_corpus():
    with criterion("AC8 error unreachable, generated corpus, depth 14") as c:
        bad = []
        for seed in CORPUS:
            p = canonical_process_of(gen_global_type(seed))
            assert typecheck(p).ok
            body, _, _ = open_ensemble(p)
            if explore(body, depth=14).errors:
                bad.append(seed)
        c["note"] = f"failing seeds {bad}"
        assert not bad


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q", "-s"]))
