from __future__ import annotations

import json
import random
from pathlib import Path

from hypothesis import given, settings
from hypothesis import strategies as st

from atmp import samples
from atmp.calculus import NIL, Queue, Restrict, cong_normalize
from atmp.generators import (
    brute_subtype,
    canonical_process_of,
    gen_global_type,
    gen_local_type,
    gen_process,
    runs_without_failure,
)
from atmp.projection import project
from atmp.semantics import GlobalState
from atmp.subtyping import subtype
from atmp.timecore import Valuation
from atmp.typecheck import typecheck
from atmp.types import END, check_well_formed, global_from_json, global_to_json

GOLDEN = Path(__file__).parent / "golden" / "gen_global_type_seed0.json"


def test_seed_zero_is_pinned():
    assert global_to_json(gen_global_type(0)) == json.loads(GOLDEN.read_text(encoding="utf-8"))
    assert global_from_json(json.loads(GOLDEN.read_text(encoding="utf-8"))) == gen_global_type(0)


def test_single_role_gives_end():
    assert all(gen_global_type(s, {"roles": 1}) == END for s in range(20))


def test_deterministic_per_seed():
    assert gen_global_type(42) == gen_global_type(42)
    assert gen_process(random.Random(7)) == gen_process(random.Random(7))
    assert gen_local_type(random.Random(7)) == gen_local_type(random.Random(7))


def test_many_samples_well_formed():
    for seed in range(1000):
        g = gen_global_type(seed)
        assert check_well_formed(g).ok, seed


def test_canonical_process_of_g_data():
    p = canonical_process_of(samples.remote_data())
    assert typecheck(p).ok
    from atmp.typecheck import check_deadlock_freedom
    assert check_deadlock_freedom(p).ok


def test_runs_without_failure():
    one = gen_global_type(0, {"roles": 2, "depth": 1, "rec": 0})
    assert isinstance(runs_without_failure(canonical_process_of(one)), bool)
    assert runs_without_failure(NIL)


def test_canonical_process_of_end():
    p = canonical_process_of(END, state=GlobalState(Valuation({}), END), annotate_=False)
    inner = p.body if isinstance(p, Restrict) else p
    assert all(isinstance(c, (Queue,)) or c == NIL for c in getattr(inner, "procs", (inner,)))
    assert cong_normalize(Restrict("s", inner)) == NIL


@settings(max_examples=40)
@given(st.integers(min_value=0, max_value=100_000))
def test_canonical_processes_typecheck(seed):
    assert typecheck(canonical_process_of(gen_global_type(seed))).ok


def test_brute_subtype_examples():
    g = samples.uninhabited_choice()
    full = project(g, "p")
    narrowed = samples.uninhabited_choice_env()[next(iter(samples.uninhabited_choice_env()))].type
    assert brute_subtype(full, narrowed) and not brute_subtype(narrowed, full)
    assert brute_subtype(full, narrowed) == subtype(full, narrowed)
    for seed in range(50):
        t = gen_local_type(random.Random(seed))
        assert brute_subtype(t, t)


def test_brute_subtype_agrees_on_many_pairs():
    rng = random.Random(2024)
    for _ in range(1000):
        a, b = gen_local_type(rng), gen_local_type(rng)
        assert subtype(a, b) == brute_subtype(a, b)
