"""Transition systems for timed global types and typing environments, and association."""

from __future__ import annotations

from collections import deque
from contextlib import contextmanager
from contextvars import ContextVar
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping

from .env import (
    CombinedEntry,
    Endpoint,
    QueueEntry,
    SessionEntry,
    TypingEnv,
    queue_part,
    session_part,
)
from .projection import NotProjectable, project, queue_env_of
from .subtyping import normalize_env, subtype, subtype_sort
from .timecore import (
    TRUE,
    Valuation,
    constants,
    format_time,
    free_clocks,
    midpoint,
    parse_time,
    sample_grid,
    satisfies,
    solution_set,
)
from .types import (
    End,
    EnRoute,
    Comm,
    ExtChoice,
    IntChoice,
    LBranch,
    MsgType,
    Rec,
    Var,
    global_clocks,
    infer_ownership,
    local_clocks,
    roles,
    unfold,
)

# which continuations of a transmission en route must follow a step under it:
# "all" is the literal context rule, "chosen" only the branch whose message is in flight
_EN_ROUTE_CTX: ContextVar[str] = ContextVar("en_route_ctx", default="all")


@contextmanager
def en_route_context(mode: str):
    """Temporarily select the context rule for transmissions en route ("all" or "chosen")."""
    if mode not in ("all", "chosen"):
        raise ValueError(mode)
    tok = _EN_ROUTE_CTX.set(mode)
    try:
        yield
    finally:
        _EN_ROUTE_CTX.reset(tok)


# -- labels -----------------------------------------------------------------------


@dataclass(frozen=True)
class Send:
    session: str
    sender: str
    receiver: str
    label: str

    def __str__(self):
        return f"{self.session}:{self.sender}!{self.receiver}:{self.label}"

    @property
    def subject(self) -> frozenset:
        return frozenset([self.sender])


@dataclass(frozen=True)
class Recv:
    session: str
    receiver: str
    sender: str
    label: str

    def __str__(self):
        return f"{self.session}:{self.receiver}?{self.sender}:{self.label}"

    @property
    def subject(self) -> frozenset:
        return frozenset([self.receiver])


@dataclass(frozen=True)
class Time:
    t: Fraction

    def __str__(self):
        return f"t={format_time(self.t)}"

    @property
    def subject(self) -> frozenset:
        return frozenset()


Label = Send | Recv | Time


def label_to_json(a) -> dict:
    if isinstance(a, Time):
        return {"kind": "time", "t": format_time(a.t)}
    kind = "send" if isinstance(a, Send) else "recv"
    return {"kind": kind, "text": str(a)}


# -- global states ------------------------------------------------------------------


@dataclass(frozen=True)
class GlobalState:
    nu: Valuation
    g: object

    def __str__(self):
        return f"⟨{self.nu}, {self.g}⟩"

    @classmethod
    def initial(cls, g) -> "GlobalState":
        return cls(Valuation.zero(global_clocks(g)), g)


def _gt_nontime(nu: Valuation, g, s: str, seen: frozenset = frozenset()) -> list:
    if isinstance(g, Rec):
        # a loop revisited along the same descent adds no derivation
        if g in seen:
            return []
        return _gt_nontime(nu, unfold(g), s, seen | {g})
    if isinstance(g, (End, Var)):
        return []
    out = []
    if isinstance(g, Comm):
        p, q = g.sender, g.receiver
        for b in g.branches:
            if satisfies(nu, b.assertion.out_guard):
                out.append((Send(s, p, q, b.label), nu.reset(b.assertion.out_reset),
                            EnRoute(p, q, g.branches, b.label)))
        blocked = {p, q}
    else:
        p, q = g.sender, g.receiver
        b = g.branch(g.chosen)
        if satisfies(nu, b.assertion.in_guard):
            out.append((Recv(s, q, p, b.label), nu.reset(b.assertion.in_reset), b.cont))
        blocked = {q}
    # context rules: every continuation steps with the same label and valuation
    if isinstance(g, EnRoute) and _EN_ROUTE_CTX.get() == "chosen":
        for alpha, nu1, g0 in _gt_nontime(nu, g.branch(g.chosen).cont, s, seen):
            if alpha.subject & blocked:
                continue
            branches = tuple(type(b)(b.label, b.sort, b.assertion, g0 if b.label == g.chosen else b.cont)
                             for b in g.branches)
            out.append((alpha, nu1, EnRoute(g.sender, g.receiver, branches, g.chosen)))
        return out
    per_branch = [_gt_nontime(nu, b.cont, s, seen) for b in g.branches]
    for alpha, nu1, g0 in per_branch[0]:
        if alpha.subject & blocked:
            continue
        conts = [g0]
        for steps in per_branch[1:]:
            match = next((g1 for a1, n1, g1 in steps if a1 == alpha and n1 == nu1), None)
            if match is None:
                break
            conts.append(match)
        else:
            branches = tuple(
                type(b)(b.label, b.sort, b.assertion, c) for b, c in zip(g.branches, conts)
            )
            node = Comm(g.sender, g.receiver, branches) if isinstance(g, Comm) else \
                EnRoute(g.sender, g.receiver, branches, g.chosen)
            out.append((alpha, nu1, node))
    return out


def gt_steps(state: GlobalState, grid: Iterable = (), session: str = "s") -> list:
    """All labelled successors of a timed global state."""
    out = [(a, GlobalState(n, g)) for a, n, g in _gt_nontime(state.nu, state.g, session)]
    for t in grid:
        t = parse_time(t)
        out.append((Time(t), GlobalState(state.nu.advance(t), state.g)))
    return out


# -- environment transitions ------------------------------------------------------------


def _first_to(queue: tuple, receiver: str):
    """Index of the first message addressed to receiver (queue congruence)."""
    for i, m in enumerate(queue):
        if m.receiver == receiver:
            return i
    return None


def env_nontime_steps(gamma: TypingEnv, session: str | None = None) -> list:
    out = []
    for c, e in gamma.items():
        if not isinstance(c, Endpoint) or (session is not None and c.session != session):
            continue
        sp = session_part(e)
        if sp is None:
            continue
        t = unfold(sp.type)
        nu = sp.nu
        if isinstance(t, IntChoice):
            if not isinstance(e, CombinedEntry):
                continue
            for b in t.branches:
                if satisfies(nu, b.guard):
                    new = CombinedEntry(nu.reset(b.reset), b.cont, e.queue + (MsgType(t.partner, b.label, b.sort),))
                    out.append((Send(c.session, c.role, t.partner, b.label), gamma.update(c, new)))
        elif isinstance(t, ExtChoice):
            src = Endpoint(c.session, t.partner)
            if src not in gamma:
                continue
            se = gamma[src]
            q = queue_part(se)
            if not q:
                continue
            i = _first_to(q, c.role)
            if i is None:
                continue
            m = q[i]
            try:
                b = t.branch(m.label)
            except KeyError:
                continue
            if not satisfies(nu, b.guard) or not subtype_sort(m.payload, b.sort):
                continue
            rest = q[:i] + q[i + 1:]
            g2 = gamma.update(src, QueueEntry(rest) if isinstance(se, QueueEntry) else CombinedEntry(se.nu, se.type, rest))
            cur = g2[c]
            newc = CombinedEntry(nu.reset(b.reset), b.cont, cur.queue) if isinstance(cur, CombinedEntry) \
                else SessionEntry(nu.reset(b.reset), b.cont)
            out.append((Recv(c.session, c.role, t.partner, m.label), g2.update(c, newc)))
    return out


def env_time_step(gamma: TypingEnv, t) -> TypingEnv:
    """Advance every endpoint valuation; queues and variable entries are unchanged."""
    t = parse_time(t)
    m = {}
    for c, e in gamma.items():
        if isinstance(c, Endpoint) and isinstance(e, SessionEntry):
            m[c] = SessionEntry(e.nu.advance(t), e.type)
        elif isinstance(c, Endpoint) and isinstance(e, CombinedEntry):
            m[c] = CombinedEntry(e.nu.advance(t), e.type, e.queue)
        else:
            m[c] = e
    return TypingEnv(m)


def env_steps(gamma: TypingEnv, grid: Iterable = (), session: str | None = None) -> list:
    out = env_nontime_steps(gamma, session)
    for t in grid:
        t = parse_time(t)
        out.append((Time(t), env_time_step(gamma, t)))
    return out


# -- association ---------------------------------------------------------------------------


@dataclass
class AssociationReport:
    ok: bool = True
    failures: list = field(default_factory=list)

    def fail(self, item: str, message: str) -> None:
        self.ok = False
        self.failures.append((item, message))

    def items(self) -> list[str]:
        return [i for i, _ in self.failures]

    def to_json(self) -> dict:
        return {"associated": self.ok, "failures": [{"item": i, "message": m} for i, m in self.failures]}

    def __bool__(self):
        return self.ok


def _spine_senders(g) -> frozenset:
    if isinstance(g, EnRoute):
        out = frozenset([g.sender])
    elif isinstance(g, Comm):
        out = frozenset()
    else:
        return frozenset()
    for b in g.branches:
        out |= _spine_senders(b.cont)
    return out


@lru_cache(maxsize=200_000)
def _project_cached(g, p):
    try:
        return project(g, p)
    except NotProjectable as exc:
        return exc


@lru_cache(maxsize=500_000)
def _subtype_cached(t1, t2) -> bool:
    return subtype(t1, t2)


def associated(state: GlobalState, gamma: TypingEnv, s: str = "s") -> AssociationReport:
    """Check the three-way split of gamma against a timed global state for session s."""
    rep = AssociationReport()
    g, nu = state.g, state.nu
    live = roles(g)
    dom = live | _spine_senders(g)
    gs = gamma.restrict_session(s)
    present = {c.role for c in gs}
    for p in sorted(live - present):
        rep.fail("1(i)", f"no entry for role {p}")
    queues: dict[str, tuple] = {}
    for p in sorted(dom & present):
        e = gs[Endpoint(s, p)]
        sp, qp = session_part(e), queue_part(e)
        if sp is None:
            rep.fail("1(ii)", f"entry of {p} has no timed session type")
        if qp is None:
            rep.fail("2(ii)", f"entry of {p} has no queue type")
            qp = ()
        queues[p] = qp
        if sp is None:
            continue
        proj = _project_cached(g, p)
        if isinstance(proj, Exception):
            rep.fail("1(iii)", f"projection onto {p} undefined: {proj}")
            continue
        if not _subtype_cached(proj, sp.type):
            rep.fail("1(iii)", f"projection onto {p} is not a subtype of its entry")
        needed = local_clocks(proj)
        missing = needed - set(sp.nu)
        if missing:
            rep.fail("1(iv)", f"valuation of {p} lacks clocks {sorted(missing)}")
        for clock, v in sp.nu.items():
            if clock in nu and nu[clock] != v:
                rep.fail("1(iv)", f"clock {clock} of {p} is {format_time(v)} but the global valuation says {format_time(nu[clock])}")
            elif clock not in nu and clock in global_clocks(g):
                rep.fail("1(iv)", f"clock {clock} of {p} is missing from the global valuation")
    for p in sorted(present - dom):
        e = gs[Endpoint(s, p)]
        ok = isinstance(e, CombinedEntry) and isinstance(e.type, End) and not e.queue
        if not ok:
            rep.fail("3", f"entry of {p} outside the protocol is not ((ν, End); ⊘)")
    for p in dom - present:
        queues.setdefault(p, ())
    _queue_assoc(g, queues, rep)
    return rep


def _queue_assoc(g, queues: dict, rep: AssociationReport) -> None:
    if isinstance(g, (End, Rec, Var)):
        for p, q in sorted(queues.items()):
            if q:
                rep.fail("2(iii)", f"queue of {p} is not empty although no transmission is en route")
        return
    if isinstance(g, Comm):
        q = queues.get(g.sender, ())
        if any(m.receiver == g.receiver for m in q):
            rep.fail("2(iv)(a1)", f"queue of {g.sender} already holds a message for {g.receiver}")
            return
        for b in g.branches:
            before = len(rep.failures)
            _queue_assoc(b.cont, queues, rep)
            if len(rep.failures) > before:
                return
        return
    # en route
    q = queues.get(g.sender, ())
    i = _first_to(q, g.receiver)
    b = g.branch(g.chosen)
    if i is None or q[i].label != g.chosen:
        rep.fail("2(v)(b1)", f"queue of {g.sender} does not start with {g.chosen} for {g.receiver}")
        return
    if not subtype_sort(q[i].payload, b.sort):
        rep.fail("2(v)(b1)", f"payload of queued {g.chosen} is not a subtype of the expected sort")
        return
    rest = dict(queues)
    rest[g.sender] = q[:i] + q[i + 1:]
    _queue_assoc(b.cont, rest, rep)


def ownership_of(g, own: Mapping | None = None) -> dict:
    if own is not None:
        return {r: frozenset(cs) for r, cs in own.items()}
    inferred, _ = infer_ownership(g)
    return inferred


def canonical_env(state: GlobalState, s: str = "s", own: Mapping | None = None) -> TypingEnv:
    """The environment built from projections and in-flight messages."""
    owners = ownership_of(state.g, own)
    dom = roles(state.g) | _spine_senders(state.g)
    m = {}
    for p in sorted(dom):
        clocks = owners.get(p, frozenset()) & set(state.nu)
        nu_p = state.nu.restrict(clocks)
        m[Endpoint(s, p)] = CombinedEntry(nu_p, project(state.g, p), queue_env_of(state.g, p))
    return TypingEnv(m)


# -- time grids ---------------------------------------------------------------------------


def _type_constants(t, acc: dict, depth: int = 0, seen=None) -> None:
    if seen is None:
        seen = set()
    if isinstance(t, Rec):
        if t in seen:
            return
        seen.add(t)
        _type_constants(t.body, acc, depth, seen)
        return
    if isinstance(t, (IntChoice, ExtChoice)):
        for b in t.branches:
            for c in free_clocks(b.guard):
                acc.setdefault(c, set()).update(constants(b.guard))
            _type_constants(b.cont, acc, depth + 1, seen)


def _global_constants(g, acc: dict) -> None:
    if isinstance(g, Rec):
        _global_constants(g.body, acc)
        return
    if isinstance(g, (Comm, EnRoute)):
        for b in g.branches:
            for guard in (b.assertion.out_guard, b.assertion.in_guard):
                for c in free_clocks(guard):
                    acc.setdefault(c, set()).update(constants(guard))
            _global_constants(b.cont, acc)


def grid_from_constants(nu: Mapping, consts: Mapping, mode: str = "auto") -> list[Fraction]:
    """Time steps that reach or cross the next thresholds of every clock."""
    dists: set[Fraction] = set()
    for c, vals in consts.items():
        if c not in nu:
            continue
        for k in vals:
            if k > nu[c]:
                dists.add(k - nu[c])
    pts = sorted(dists)
    if not pts:
        return [Fraction(1)]
    if mode == "full":
        out = set(pts)
        prev = Fraction(0)
        for p in pts:
            out.add(midpoint(prev, p))
            prev = p
        out.add(pts[-1] + 1)
        return sorted(out)
    out = {pts[0] / 2, pts[0]}
    out.add(midpoint(pts[0], pts[1]) if len(pts) > 1 else pts[0] + 1)
    return sorted(out)


def auto_grid(state: GlobalState | None, gamma: TypingEnv | None = None, mode: str = "auto") -> list[Fraction]:
    consts: dict = {}
    nu: dict = {}
    if state is not None:
        _global_constants(state.g, consts)
        nu.update(state.nu)
    if gamma is not None:
        for e in gamma.values():
            sp = session_part(e)
            if sp is not None:
                _type_constants(sp.type, consts)
                for k, v in sp.nu.items():
                    nu.setdefault(k, v)
    return grid_from_constants(nu, consts, mode)


# -- correspondence checks ----------------------------------------------------------------


@dataclass
class CorrespondenceReport:
    ok: bool = True
    nodes: int = 0
    steps_checked: int = 0
    counterexample: list | None = None
    message: str = ""
    witness_kinds: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "nodes": self.nodes,
            "steps_checked": self.steps_checked,
            "message": self.message,
            "counterexample": None if self.counterexample is None else [str(a) for a in self.counterexample],
            "witness_kinds": dict(sorted(self.witness_kinds.items())),
        }

    def __bool__(self):
        return self.ok


def _grid_for(grid, state, gamma):
    if grid is None or grid == "auto":
        return auto_grid(state, gamma)
    if grid == "full":
        return auto_grid(state, gamma, mode="full")
    return [parse_time(t) for t in grid]


def check_completeness(state: GlobalState, gamma: TypingEnv, s: str = "s", depth: int = 4,
                       grid=None) -> CorrespondenceReport:
    """Every environment step is mirrored by a global step that re-associates."""
    rep = CorrespondenceReport()
    assoc = associated(state, gamma, s)
    if not assoc:
        rep.ok = False
        rep.counterexample = []
        rep.message = "initial pair is not associated: " + "; ".join(f"{i} {m}" for i, m in assoc.failures)
        return rep
    seen = {(state, normalize_env(gamma))}
    frontier = deque([(state, gamma, [], 0)])
    while frontier:
        st, gm, trace, d = frontier.popleft()
        rep.nodes += 1
        if d >= depth:
            continue
        g_grid = _grid_for(grid, st, gm)
        gsteps = gt_steps(st, g_grid, s)
        for alpha, gm2 in env_steps(gm, g_grid, s):
            rep.steps_checked += 1
            match = None
            for beta, st2 in gsteps:
                if beta == alpha and associated(st2, gm2, s):
                    match = st2
                    break
            if match is None:
                rep.ok = False
                rep.counterexample = trace + [alpha]
                rep.message = f"environment step {alpha} has no matching global step"
                return rep
            key = (match, normalize_env(gm2))
            if key not in seen:
                seen.add(key)
                frontier.append((match, gm2, trace + [alpha], d + 1))
    return rep


def _candidate_valuations(st: GlobalState, grid: list) -> list[Valuation]:
    nu = st.nu
    cands = [nu]
    cands += [nu.advance(t) for t in grid]
    consts: dict = {}
    _global_constants(st.g, consts)
    for c in sorted(nu):
        vals = consts.get(c, set())
        bound = (max(vals) if vals else Fraction(0)) + 1
        pts = set(sample_grid(solution_set(TRUE, c), bound))
        pts |= set(vals)
        for v in sorted(pts):
            cands.append(Valuation({**dict(nu), c: v}))
    cands.append(Valuation.zero(nu))
    out, seen = [], set()
    for v in cands:
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def _revalue(gamma: TypingEnv, s: str, nu: Valuation) -> TypingEnv:
    m = {}
    for c, e in gamma.items():
        if isinstance(c, Endpoint) and c.session == s and isinstance(e, (SessionEntry, CombinedEntry)):
            nv = Valuation({k: (nu[k] if k in nu else v) for k, v in e.nu.items()})
            m[c] = CombinedEntry(nv, e.type, e.queue) if isinstance(e, CombinedEntry) else SessionEntry(nv, e.type)
        else:
            m[c] = e
    return TypingEnv(m)


def soundness_witness(st: GlobalState, gamma: TypingEnv, s: str, grid: list):
    """Search (ν', Γ', α') with ⟨ν', G⟩ ⊑ Γ' and a joint step that re-associates."""
    for nu1 in _candidate_valuations(st, grid):
        st1 = GlobalState(nu1, st.g)
        gm1 = gamma if nu1 == st.nu else _revalue(gamma, s, nu1)
        if nu1 != st.nu and not associated(st1, gm1, s):
            continue
        env_succ = env_nontime_steps(gm1, s)
        if not env_succ:
            continue
        for beta, st2 in gt_steps(st1, (), s):
            for alpha, gm2 in env_succ:
                if alpha == beta and associated(st2, gm2, s):
                    kind = "current" if nu1 == st.nu else "revalued"
                    return kind, nu1, beta, st2, gm2
    return None


def check_soundness(state: GlobalState, gamma: TypingEnv, s: str = "s", depth: int = 4,
                    grid=None, own: Mapping | None = None) -> CorrespondenceReport:
    """Existential soundness at every reachable global state that can act."""
    rep = CorrespondenceReport()
    assoc = associated(state, gamma, s)
    if not assoc:
        rep.ok = False
        rep.counterexample = []
        rep.message = "initial pair is not associated: " + "; ".join(f"{i} {m}" for i, m in assoc.failures)
        return rep
    seen = {state}
    frontier = deque([(state, gamma, [], 0)])
    while frontier:
        st, gm, trace, d = frontier.popleft()
        rep.nodes += 1
        g_grid = _grid_for(grid, st, gm)
        can_act = not isinstance(unfold(st.g), End)
        if can_act:
            rep.steps_checked += 1
            w = soundness_witness(st, gm, s, g_grid)
            if w is None:
                # time is always possible; accept it only when nothing else is
                t = g_grid[0]
                st_t, gm_t = GlobalState(st.nu.advance(t), st.g), env_time_step(gm, t)
                if _non_time_possible(st):
                    rep.ok = False
                    rep.counterexample = trace
                    rep.message = f"no joint non-time step at {st}"
                    return rep
                if not associated(st_t, gm_t, s):
                    rep.ok = False
                    rep.counterexample = trace + [Time(t)]
                    rep.message = "time step breaks association"
                    return rep
                rep.witness_kinds["time"] = rep.witness_kinds.get("time", 0) + 1
            else:
                rep.witness_kinds[w[0]] = rep.witness_kinds.get(w[0], 0) + 1
        if d >= depth:
            continue
        env_succ = env_steps(gm, g_grid, s)
        for beta, st2 in gt_steps(st, g_grid, s):
            if st2 in seen:
                continue
            seen.add(st2)
            gm2 = next((g2 for a, g2 in env_succ if a == beta and associated(st2, g2, s)), None)
            if gm2 is None:
                try:
                    gm2 = canonical_env(st2, s, own)
                except NotProjectable:
                    continue
                if not associated(st2, gm2, s):
                    continue
            frontier.append((st2, gm2, trace + [beta], d + 1))
    return rep


def _non_time_possible(st: GlobalState) -> bool:
    """Whether some valuation enables a non-time step of the global type."""
    g = unfold(st.g)
    if isinstance(g, End):
        return False
    for a, _, _ in _gt_nontime_any(g):
        return True
    return False


def _gt_nontime_any(g):
    g = unfold(g)
    if isinstance(g, Comm):
        for b in g.branches:
            if not solution_set_empty(b.assertion.out_guard):
                yield ("send", None, None)
    elif isinstance(g, EnRoute):
        b = g.branch(g.chosen)
        if not solution_set_empty(b.assertion.in_guard):
            yield ("recv", None, None)


def solution_set_empty(d) -> bool:
    fc = free_clocks(d)
    if not fc:
        return not satisfies({}, d)
    return solution_set(d, next(iter(fc))).is_empty()


def per_label_global_to_env(state: GlobalState, gamma: TypingEnv, s: str = "s") -> list:
    """Global non-time steps that the environment cannot mirror with the same label."""
    env_labels = {a for a, _ in env_nontime_steps(gamma, s)}
    return [a for a, _ in gt_steps(state, (), s) if a not in env_labels]


# -- untimed safety ------------------------------------------------------------------------


def _erase_type(t):
    if isinstance(t, (End, Var)):
        return t
    if isinstance(t, Rec):
        return Rec(t.var, _erase_type(t.body))
    return type(t)(t.partner, tuple(
        LBranch(b.label, _erase_sort(b.sort), TRUE, frozenset(), _erase_type(b.cont)) for b in t.branches))


def _erase_sort(s):
    from .types import Delegation

    if isinstance(s, Delegation):
        return Delegation(TRUE, _erase_type(s.cont))
    return s


def _erase_queue(q):
    return tuple(MsgType(m.receiver, m.label, _erase_sort(m.payload)) for m in q)


def untimed_erase(gamma: TypingEnv) -> TypingEnv:
    m = {}
    empty = Valuation({})
    for c, e in gamma.items():
        if isinstance(e, SessionEntry):
            m[c] = SessionEntry(empty, _erase_type(e.type))
        elif isinstance(e, QueueEntry):
            m[c] = QueueEntry(_erase_queue(e.queue))
        else:
            m[c] = CombinedEntry(empty, _erase_type(e.type), _erase_queue(e.queue))
    return TypingEnv(m)


def safe_now(gamma: TypingEnv) -> list[str]:
    """Violations of the communication clause in the current state."""
    bad = []
    for c, e in gamma.items():
        if not isinstance(c, Endpoint):
            continue
        sp = session_part(e)
        if sp is None:
            continue
        t = unfold(sp.type)
        if not isinstance(t, ExtChoice):
            continue
        src = Endpoint(c.session, t.partner)
        if src not in gamma:
            continue
        q = queue_part(gamma[src]) or ()
        i = _first_to(q, c.role)
        if i is None:
            continue
        m = q[i]
        try:
            b = t.branch(m.label)
        except KeyError:
            bad.append(f"{c} cannot receive queued {m.label} from {t.partner}")
            continue
        if not subtype_sort(m.payload, b.sort):
            bad.append(f"{c} receives {m.label} with an incompatible payload")
    return bad


def check_safety(gamma: TypingEnv, depth: int = 6) -> tuple[bool, list]:
    """Bounded check that every reachable untimed environment is safe."""
    seen = {normalize_env(gamma)}
    frontier = deque([(gamma, [], 0)])
    while frontier:
        gm, trace, d = frontier.popleft()
        bad = safe_now(gm)
        if bad:
            return False, trace + bad
        if d >= depth:
            continue
        for a, gm2 in env_nontime_steps(gm):
            key = normalize_env(gm2)
            if key not in seen:
                seen.add(key)
                frontier.append((gm2, trace + [str(a)], d + 1))
    return True, []
