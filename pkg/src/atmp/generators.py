"""Random generators and the canonical process of a global type.

Used by the property tests and by `verify`; every generator takes an explicit seed or Random.
"""

from __future__ import annotations

import random
from fractions import Fraction

from .calculus import (
    Arm,
    Call,
    Def,
    DelayConstraint,
    Failed,
    Kill,
    Msg,
    Nil,
    Par,
    Queue,
    Restrict,
    TimedBranch,
    TimedSelect,
    TryCatch,
    Cancel,
    Err,
    _children,
    explore,
)
from .env import Endpoint, TypingEnv, Variable
from .projection import NotMergeable, NotProjectable, project
from .semantics import GlobalState, canonical_env
from .timecore import INF, Valuation, conj, eq, single_clock, solution_set, window
from .types import (
    END,
    UNIT,
    Assertion,
    Base,
    Comm,
    End,
    ExtChoice,
    GBranch,
    IntChoice,
    LBranch,
    Rec,
    Var,
    check_well_formed,
    global_clocks,
    roles,
    unfold,
)


class NotRealisable(ValueError):
    """No canonical process exists for the given local type and valuation."""


# -- random global types ---------------------------------------------------------------------

DEFAULT_LIMITS = {"roles": 3, "depth": 3, "branches": 2, "const": 8, "rec": 0.3, "reset": 0.6}


def _rand_window(rng: random.Random, clock: str, kmax: int):
    lo = rng.randint(0, kmax - 1)
    hi = rng.randint(lo + 1, min(kmax, lo + 3))
    return window(clock, lo, hi)


def _gen_global(rng, names, depth, lim, rec_var, in_rec, counter):
    if depth <= 0 or (depth < lim["depth"] and rng.random() < 0.15):
        if rec_var is not None and rng.random() < 0.7:
            return Var(rec_var)
        return END
    if rec_var is None and depth >= 2 and rng.random() < lim["rec"]:
        counter[0] += 1
        x = f"X{counter[0]}"
        return Rec(x, _gen_global(rng, names, depth, lim, x, True, counter))
    p, q = rng.sample(names, 2)
    k = rng.randint(1, lim["branches"])
    labels = sorted(rng.sample(["a", "b", "c", "d", "e"], k))
    branches = []
    for lab in labels:
        reset_p = in_rec or rng.random() < lim["reset"]
        reset_q = in_rec or rng.random() < lim["reset"]
        a = Assertion(_rand_window(rng, f"c_{p}", lim["const"]), frozenset({f"c_{p}"} if reset_p else ()),
                      _rand_window(rng, f"c_{q}", lim["const"]), frozenset({f"c_{q}"} if reset_q else ()))
        cont = _gen_global(rng, names, depth - 1, lim, rec_var, in_rec, counter)
        branches.append(GBranch(lab, UNIT, a, cont))
    return Comm(p, q, tuple(branches))


def gen_global_type(seed, limits: dict | None = None, attempts: int = 400):
    """A well-formed, projectable global type with one clock c_R per role and a canonical process.

    Candidates are drawn until all conditions hold (rejection sampling)."""
    lim = {**DEFAULT_LIMITS, **(limits or {})}
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    if lim["roles"] < 2:
        return END
    names = [f"r{i}" for i in range(lim["roles"])]
    for _ in range(attempts):
        g = _gen_global(rng, names, lim["depth"], lim, None, False, [0])
        if not isinstance(g, (Comm, Rec)) or not roles(g):
            continue
        if not check_well_formed(g).ok:
            continue
        try:
            for r in roles(g):
                project(g, r)
            canonical_process_of(g)
        except (NotProjectable, NotMergeable, NotRealisable):
            continue
        return g
    raise RuntimeError("no admissible global type found; loosen the limits")


def initial_state(g) -> GlobalState:
    return GlobalState(Valuation.zero(sorted(global_clocks(g))), g)


def _mentions(p, kinds) -> bool:
    if isinstance(p, kinds):
        return True
    return any(_mentions(q, kinds) for q in _children(p))


def runs_without_failure(p, depth: int = 10) -> bool:
    """No bounded run of p reaches a timeout failure, a kill or an error."""
    body = p
    while isinstance(body, Restrict):
        body = body.body
    rep = explore(body, depth=depth, prune=lambda q: _mentions(q, (Failed, Kill, Err)))
    return rep.pruned == 0 and not rep.errors


# -- canonical processes ---------------------------------------------------------------------

_MAX_ENTRIES = 4


class _Role:
    """Builds the process of one role from its local type."""

    def __init__(self, role: str, exact: bool):
        self.role = role
        self.exact = exact
        self.defs: list = []
        self.names: dict = {}

    def point(self, iv, guard, receive: bool, resets_all: bool = False):
        """(delay, timeout) placing every possible valuation inside the guard for the whole timeout.

        Exact mode keeps valuations exact: timeout 0 unless the action resets every clock."""
        exact = self.exact and not resets_all
        c = single_clock(guard)
        if c is None:
            return Fraction(0), (INF if receive and not exact else Fraction(0))
        if c not in iv:
            raise NotRealisable(f"clock {c} is not owned by {self.role}")
        vlo, vhi = iv[c]
        for I in solution_set(guard, c).intervals:
            d = max(Fraction(0), I.lo - vlo)
            if not I.lo_closed and vlo + d <= I.lo:
                gap = Fraction(1, 2) if I.hi == INF else min(Fraction(1, 2), (I.hi - I.lo) / 4)
                d = I.lo - vlo + gap
            start = vhi + d
            if I.hi != INF and (start > I.hi or (start == I.hi and not I.hi_closed)):
                continue
            if exact:
                if vlo != vhi:
                    raise NotRealisable("valuation is not exact")
                return d, Fraction(0)
            if I.hi == INF:
                return d, (INF if receive else Fraction(0))
            n = I.hi - start
            if not I.hi_closed:
                n = n / 2
            return d, n
        raise NotRealisable(f"{self.role} cannot meet {guard} from {iv}")

    @staticmethod
    def after(iv, d, n, reset):
        out = {}
        for c, (lo, hi) in iv.items():
            if c in reset:
                out[c] = (Fraction(0), Fraction(0))
            elif n == INF:
                raise NotRealisable("clock value unbounded after an unbounded wait")
            else:
                out[c] = (lo + d, hi + d + n)
        return out

    def build(self, t, iv, chan, recs):
        if isinstance(t, End):
            return Nil()
        if isinstance(t, Rec):
            return self.call(t, iv, chan, {**recs, t.var: t})
        if isinstance(t, Var):
            if t.name not in recs:
                raise NotRealisable(f"free variable {t.name}")
            return self.call(recs[t.name], iv, chan, recs)
        if isinstance(t, IntChoice):
            b = t.branches[0]
            if not isinstance(b.sort, Base):
                raise NotRealisable("delegation payloads are not generated")
            d, n = self.point(iv, b.guard, receive=False, resets_all=set(iv) <= b.reset)
            cont = self.build(b.cont, self.after(iv, d, n, b.reset), chan, recs)
            return _delay(d, TimedSelect(chan, t.partner, b.label, None, cont, n))
        if isinstance(t, ExtChoice):
            try:
                guard = conj([b.guard for b in t.branches])
                d, n = self.point(iv, guard, receive=True,
                                  resets_all=all(set(iv) <= b.reset for b in t.branches))
            except ValueError as exc:
                raise NotRealisable(str(exc)) from exc
            arms = []
            for b in t.branches:
                if not isinstance(b.sort, Base):
                    raise NotRealisable("delegation payloads are not generated")
                arms.append(Arm(b.label, None, self.build(b.cont, self.after(iv, d, n, b.reset), chan, recs)))
            return _delay(d, TimedBranch(chan, t.partner, tuple(arms), n))
        raise NotRealisable(f"unsupported local type {t}")

    def call(self, rec: Rec, iv, chan, recs):
        if not self.exact or any(lo != hi for lo, hi in iv.values()):
            raise NotRealisable("recursion needs an exact valuation")
        key = (rec, tuple(sorted((c, lo) for c, (lo, _) in iv.items())))
        name = self.names.get(key)
        if name is None:
            same = [k for k in self.names if k[0] == rec]
            if len(same) >= _MAX_ENTRIES:
                raise NotRealisable(f"recursion {rec.var} of {self.role} does not settle on a valuation")
            name = f"{rec.var}_{self.role}_{len(same)}"
            self.names[key] = name
            body = self.build(unfold(rec), iv, Variable("x"), recs)
            self.defs.append(Def(name, ("x",), body, Nil()))
        return Call(name, (chan,))


def _delay(d, p):
    return DelayConstraint(eq("t", d), p) if d > 0 else p


def _has_rec(t) -> bool:
    if isinstance(t, Rec):
        return True
    if isinstance(t, (IntChoice, ExtChoice)):
        return any(_has_rec(b.cont) for b in t.branches)
    return False


def role_process(t, nu: Valuation, chan, role: str):
    """Process of one role realising local type t from valuation nu."""
    iv = {c: (Fraction(v), Fraction(v)) for c, v in nu.items()}
    modes = [True] if _has_rec(t) else [False, True]
    last = None
    for exact in modes:
        b = _Role(role, exact)
        try:
            p = b.build(t, iv, chan, {})
        except NotRealisable as exc:
            last = exc
            continue
        for d in reversed(b.defs):
            p = Def(d.name, d.params, d.body, p)
        return p
    raise last


def canonical_process_of(g, s: str = "s", state: GlobalState | None = None, own=None, annotate_: bool = True):
    """One process per role following its projection, with empty queues, under an annotated restriction."""
    from .typecheck import annotation_for

    state = state or initial_state(g)
    env = canonical_env(state, s, own)
    comps = []
    for ep in sorted(env, key=lambda e: e.role):
        e = env[ep]
        comps.append(role_process(e.type, e.nu, ep, ep.role))
    for ep in sorted(env, key=lambda e: e.role):
        comps.append(Queue(s, ep.role, ()))
    body = Par(tuple(comps))
    if not annotate_:
        return body
    return Restrict(s, body, annotation_for(state, s, own))


# -- random local types and brute-force subtyping ---------------------------------------------


def gen_local_type(rng: random.Random, depth: int = 3, partners=("p", "q"), clock: str = "c",
                   rec_var: str | None = None, labels=("a", "b", "c")):
    if depth <= 0:
        return Var(rec_var) if rec_var and rng.random() < 0.5 else END
    roll = rng.random()
    if roll < 0.1:
        return END
    if roll < 0.25 and rec_var is None:
        return Rec("X", gen_local_type(rng, depth, partners, clock, "X", labels))
    cls = IntChoice if rng.random() < 0.5 else ExtChoice
    k = rng.randint(1, len(labels))
    bs = []
    for lab in sorted(rng.sample(list(labels), k)):
        g = _rand_window(rng, clock, 4)
        r = frozenset({clock}) if rng.random() < 0.5 else frozenset()
        bs.append(LBranch(lab, UNIT, g, r, gen_local_type(rng, depth - 1, partners, clock, rec_var, labels)))
    return cls(rng.choice(partners), tuple(bs))


def widen(rng: random.Random, t, depth: int = 3):
    """A random supertype: drop internal branches and add external ones."""
    if depth <= 0 or isinstance(t, (End, Var)):
        return t
    if isinstance(t, Rec):
        return t
    bs = [LBranch(b.label, b.sort, b.guard, b.reset, widen(rng, b.cont, depth - 1)) for b in t.branches]
    if isinstance(t, IntChoice) and len(bs) > 1 and rng.random() < 0.5:
        bs.pop(rng.randrange(len(bs)))
    if isinstance(t, ExtChoice) and rng.random() < 0.5:
        used = {b.label for b in bs}
        free = [lab for lab in ("a", "b", "c", "d") if lab not in used]
        if free:
            bs.append(LBranch(rng.choice(free), UNIT, window("c", 0, 1), frozenset(), END))
    return type(t)(t.partner, tuple(bs))


def brute_subtype(t1, t2, fuel: int = 8) -> bool:
    """Subtyping by bounded unfolding; agrees with the coinductive check once fuel exceeds the type sizes."""
    if fuel <= 0:
        return True
    t1, t2 = unfold(t1), unfold(t2)
    if isinstance(t1, End) or isinstance(t2, End):
        return isinstance(t1, End) and isinstance(t2, End)
    if isinstance(t1, Var) or isinstance(t2, Var):
        return isinstance(t1, Var) and isinstance(t2, Var) and t1.name == t2.name
    if type(t1) is not type(t2) or t1.partner != t2.partner:
        return False
    if isinstance(t1, IntChoice):
        small, big = t2, t1
    else:
        small, big = t1, t2
    for b in small.branches:
        try:
            o = big.branch(b.label)
        except KeyError:
            return False
        if o.guard != b.guard or o.reset != b.reset or o.sort != b.sort:
            return False
        pair = (o.cont, b.cont) if isinstance(t1, IntChoice) else (b.cont, o.cont)
        if not brute_subtype(*pair, fuel - 1):
            return False
    return True


# -- random environments ---------------------------------------------------------------------


def gen_env(rng: random.Random, s: str = "s", limits: dict | None = None) -> tuple[GlobalState, TypingEnv]:
    """A reachable-looking canonical environment from a generated global type."""
    g = gen_global_type(rng, limits)
    st = initial_state(g)
    return st, canonical_env(st, s)


# -- random processes ------------------------------------------------------------------------


def gen_process(rng: random.Random, depth: int = 3, sessions=("s", "u"), roles_=("p", "q", "r")):
    """An untyped random process (runtime forms included) for algebraic properties."""

    def chan():
        return Endpoint(rng.choice(sessions), rng.choice(roles_))

    def timeout():
        return rng.choice([Fraction(0), Fraction(1, 2), Fraction(1), Fraction(2), INF])

    def go(d):
        if d <= 0:
            return rng.choice([Nil(), Queue(rng.choice(sessions), rng.choice(roles_), ())])
        k = rng.randrange(9)
        if k == 0:
            return Par(tuple(go(d - 1) for _ in range(rng.randint(2, 3))))
        if k == 1:
            return TimedSelect(chan(), rng.choice(roles_), rng.choice("ab"), None, go(d - 1), timeout())
        if k == 2:
            arms = tuple(Arm(lab, None, go(d - 1)) for lab in sorted(rng.sample("ab", rng.randint(1, 2))))
            return TimedBranch(chan(), rng.choice(roles_), arms, timeout())
        if k == 3:
            return DelayConstraint(window("t", rng.randint(0, 2), rng.randint(2, 4)), go(d - 1))
        if k == 4:
            body = TimedSelect(chan(), rng.choice(roles_), rng.choice("ab"), None, go(d - 1), timeout())
            return TryCatch(body, Cancel(chan(), Nil()))
        if k == 5:
            return Failed(go(d - 1))
        if k == 6:
            return Kill(rng.choice(sessions))
        if k == 7:
            msgs = tuple(Msg(rng.choice(roles_), rng.choice("ab"))
                         for _ in range(rng.randint(0, 2)))
            return Queue(rng.choice(sessions), rng.choice(roles_), msgs)
        s = rng.choice(sessions)
        return Restrict(s, go(d - 1))

    return go(depth)


__all__ = [
    "NotRealisable",
    "brute_subtype",
    "canonical_process_of",
    "gen_env",
    "gen_global_type",
    "gen_local_type",
    "gen_process",
    "initial_state",
    "role_process",
    "widen",
]
