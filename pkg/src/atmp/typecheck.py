"""Algorithmic typing judgement Θ·Γ ⊢ P and the typed-execution checks built on it."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping

from .calculus import (
    Call,
    Cancel,
    Def,
    DelayConstraint,
    DelayExact,
    Err,
    Failed,
    Kill,
    Nil,
    Par,
    Queue,
    Restrict,
    TimedBranch,
    TimedSelect,
    TryCatch,
    UnboundedCallExpansion,
    cong_normalize,
    decompose,
    explore,
    free_sessions,
    step_instant_labelled,
    step_time,
    subjects,
    auto_time_grid,
)
from .env import (
    CombinedEntry,
    Endpoint,
    QueueEntry,
    SessionEntry,
    TypingEnv,
    Variable,
    fuse,
    is_end_entry,
    queue_part,
    session_part,
    with_session,
)
from .semantics import (
    GlobalState,
    Recv,
    Send,
    Time,
    _type_constants,
    associated,
    auto_grid,
    canonical_env,
    env_nontime_steps,
    env_time_step,
    gt_steps,
)
from .subtyping import queue_normal_form, subtype
from .timecore import (
    INF,
    UnknownClock,
    Valuation,
    constants,
    format_time,
    free_clocks,
    holds_throughout,
    midpoint,
    parse_time,
    sample_grid,
    satisfies,
    solution_set,
)
from .types import END, Base, Delegation, ExtChoice, IntChoice, local_clocks, unfold

ProcEnv = dict  # process name -> tuple of SessionEntry, one per parameter


class TypingError(Exception):
    def __init__(self, rule: str, path: str, premise: str):
        super().__init__(f"{rule} at {path}: {premise}")
        self.rule = rule
        self.path = path
        self.premise = premise

    def to_json(self) -> dict:
        return {"rule": self.rule, "path": self.path, "premise": self.premise}


class PreconditionViolation(Exception):
    """The process is not in the single-session shape; lists the failing clauses."""

    def __init__(self, clauses: list):
        self.clauses = list(clauses)
        super().__init__("; ".join(f"({c}) {m}" for c, m in self.clauses))

    def to_json(self) -> dict:
        return {"precondition": [{"clause": c, "message": m} for c, m in self.clauses]}


@dataclass(frozen=True)
class SessionAnnotation:
    """Environment of a restricted session plus the global state it is associated with."""

    env: TypingEnv
    witness: GlobalState | None = None


@dataclass
class TypingReport:
    ok: bool
    error: TypingError | None = None
    derivation: list = field(default_factory=list)

    def __bool__(self):
        return self.ok

    def to_json(self) -> dict:
        out = {"ok": self.ok, "error": self.error.to_json() if self.error else None}
        if self.derivation:
            out["derivation"] = list(self.derivation)
        return out


def end_env(gamma: Mapping) -> bool:
    """Every session part is a subtype of End and every queue part is empty."""
    for e in gamma.values():
        sp = session_part(e)
        if sp is not None and not subtype(sp.type, END):
            return False
        q = queue_part(e)
        if q:
            return False
    return True


def _non_end(gamma: Mapping) -> list[str]:
    return [f"{c}: {e}" for c, e in gamma.items() if not end_env({c: e})]


# -- free channel usage -----------------------------------------------------------------


def _chan_use(c, kind="s") -> set:
    return {(c, kind)} if isinstance(c, (Endpoint, Variable)) else set()


def free_uses(p) -> frozenset:
    """Free channels of p tagged "s" (session use) or "q" (queue ownership)."""
    if isinstance(p, (Nil, Err, Kill)):
        return frozenset()
    if isinstance(p, Queue):
        out = {(Endpoint(p.session, p.owner), "q")}
        for m in p.messages:
            out |= _chan_use(m.payload)
        return frozenset(out)
    if isinstance(p, Par):
        out = frozenset()
        for q in p.procs:
            out |= free_uses(q)
        return out
    if isinstance(p, Restrict):
        return frozenset(u for u in free_uses(p.body)
                         if not (isinstance(u[0], Endpoint) and u[0].session == p.session))
    if isinstance(p, TimedSelect):
        return frozenset(_chan_use(p.chan) | _chan_use(p.payload)) | free_uses(p.cont)
    if isinstance(p, TimedBranch):
        out = set(_chan_use(p.chan))
        for a in p.arms:
            out |= {u for u in free_uses(a.cont) if u[0] != Variable(a.binder or "")}
        return frozenset(out)
    if isinstance(p, Def):
        params = {Variable(x) for x in p.params}
        return frozenset(u for u in free_uses(p.body) if u[0] not in params) | free_uses(p.cont)
    if isinstance(p, Call):
        out = set()
        for a in p.args:
            out |= _chan_use(a)
        return frozenset(out)
    if isinstance(p, (DelayConstraint, DelayExact)):
        return free_uses(p.cont)
    if isinstance(p, Failed):
        return free_uses(p.proc)
    if isinstance(p, TryCatch):
        return free_uses(p.body) | free_uses(p.handler)
    if isinstance(p, Cancel):
        return frozenset(_chan_use(p.chan)) | free_uses(p.cont)
    raise TypeError(p)


def free_variables(p) -> set:
    return {c.name for c, _ in free_uses(p) if isinstance(c, Variable)}


# -- time sampling -------------------------------------------------------------------------


def critical_delays(gamma: Mapping) -> set:
    """Positive delays at which some guard constant is reached by some entry."""
    out = set()
    for e in gamma.values():
        sp = session_part(e)
        if sp is None:
            continue
        consts: dict = {}
        _type_constants(sp.type, consts)
        for clock, ks in consts.items():
            if clock in sp.nu:
                for k in ks:
                    d = k - sp.nu[clock]
                    if d > 0:
                        out.add(d)
    return out


def window_points(gamma: Mapping, n) -> list[Fraction]:
    """Interval endpoints, midpoint and the critical delays (with midpoints) inside [0, n]."""
    crit = critical_delays(gamma)
    if n == INF:
        hi = (max(crit) + 1) if crit else Fraction(1)
        pts = {Fraction(0), hi} | crit
    else:
        n = parse_time(n)
        pts = {Fraction(0), n, n / 2} | {d for d in crit if d < n}
    ordered = sorted(pts)
    for a, b in zip(ordered, ordered[1:]):
        pts.add(midpoint(a, b))
    return sorted(pts)


def delay_points(gamma: Mapping, d) -> list[Fraction]:
    """Representative solutions of a delay constraint, refined by the critical delays of gamma."""
    fc = free_clocks(d)
    if not fc:
        return [Fraction(0)] if satisfies({}, d) else []
    clock = next(iter(fc))
    sols = solution_set(d, clock)
    if sols.is_empty():
        return []
    bound = (max(constants(d)) if constants(d) else Fraction(0)) + 1
    pts = set(sample_grid(sols, bound))
    pts |= {c for c in critical_delays(gamma) if sols.contains(c)}
    ordered = sorted(pts)
    for a, b in zip(ordered, ordered[1:]):
        m = midpoint(a, b)
        if sols.contains(m):
            pts.add(m)
    return sorted(pts)


def _earliest_valuation(guard, t) -> Valuation | None:
    """Smallest sampled valuation that satisfies a delegation guard."""
    clocks = set(local_clocks(t)) | set(free_clocks(guard))
    nu = {c: Fraction(0) for c in clocks}
    fc = free_clocks(guard)
    if len(fc) == 1:
        c = next(iter(fc))
        pts = sample_grid(solution_set(guard, c), (max(constants(guard)) if constants(guard) else 0) + 1)
        if not pts:
            return None
        nu[c] = pts[0]
    v = Valuation(nu)
    return v if satisfies(v, guard) else None


# -- the checker ---------------------------------------------------------------------------


class _Checker:
    def __init__(self, theta: Mapping | None, witnesses: Mapping | None, explain: bool):
        self.theta: dict = {k: tuple(v) for k, v in (theta or {}).items()}
        self.defs: dict = {}
        self.witnesses = dict(witnesses or {})
        self.lines: list | None = [] if explain else None
        self.memo: set = set()

    def fail(self, rule, path, premise):
        raise TypingError(rule, path, premise)

    def log(self, depth, rule, path, p):
        if self.lines is not None:
            text = str(p)
            if len(text) > 70:
                text = text[:67] + "..."
            self.lines.append(f"{'  ' * depth}{rule} [{path}] {text}")

    def check(self, gamma: TypingEnv, p, path: str = "P", depth: int = 0) -> None:
        key = (gamma, p, tuple(sorted(self.theta.items())))
        if key in self.memo:
            return
        self._check(gamma, p, path, depth)
        self.memo.add(key)

    def _check(self, gamma, p, path, depth):
        if isinstance(p, Nil):
            self.log(depth, "T-Nil", path, p)
            if not end_env(gamma):
                self.fail("T-Nil", path, f"entries not terminated: {', '.join(_non_end(gamma))}")
            return
        if isinstance(p, Par):
            self.log(depth, "T-Par", path, p)
            comps = list(p.procs)
            parts = self.split(gamma, comps, path)
            for i, (g, q) in enumerate(zip(parts, comps)):
                self.check(g, q, f"{path}.par[{i}]", depth + 1)
            return
        if isinstance(p, Restrict):
            self.check_restrict(gamma, p, path, depth)
            return
        if isinstance(p, Def):
            self.log(depth, "T-Def", path, p)
            self.defs[p.name] = p
            if p.name in self.theta:
                self.check_def_body(p, self.theta[p.name], path, depth)
            self.check(gamma, p.cont, f"{path}.in", depth + 1)
            return
        if isinstance(p, Call):
            self.check_call(gamma, p, path, depth)
            return
        if isinstance(p, TimedSelect):
            self.check_select(gamma, p, path, depth)
            return
        if isinstance(p, TimedBranch):
            self.check_branch(gamma, p, path, depth)
            return
        if isinstance(p, DelayConstraint):
            self.log(depth, "T-Delay-constraint", path, p)
            for t in delay_points(gamma, p.constraint):
                self.check(gamma.advance(t), p.cont, f"{path}.delay@{format_time(t)}", depth + 1)
            return
        if isinstance(p, DelayExact):
            self.log(depth, "T-Delay-exact", path, p)
            self.check(gamma.advance(p.t), p.cont, f"{path}.delay", depth + 1)
            return
        if isinstance(p, Failed):
            self.log(depth, "T-Failed", path, p)
            return
        if isinstance(p, TryCatch):
            self.log(depth, "T-Try", path, p)
            try:
                subj = subjects(p.body, self.defs)
            except UnboundedCallExpansion as exc:
                self.fail("T-Try", path, str(exc))
            if len(subj) != 1 or next(iter(subj))[1]:
                shown = ", ".join(sorted(str(c) + ("^Q" if q else "") for c, q in subj))
                self.fail("T-Try", path, f"try body must have exactly one non-queue subject, found {{{shown}}}")
            self.check(gamma, p.body, f"{path}.try", depth + 1)
            self.check(gamma, p.handler, f"{path}.catch", depth + 1)
            return
        if isinstance(p, Cancel):
            self.log(depth, "T-Cancel", path, p)
            if p.chan not in gamma:
                self.fail("T-Cancel", path, f"no entry for cancelled channel {p.chan}")
            self.check(gamma.remove(p.chan), p.cont, f"{path}.cont", depth + 1)
            return
        if isinstance(p, Err):
            self.fail("T-Err", path, "no rule types a communication error")
        if isinstance(p, Kill):
            self.log(depth, "T-Kill", path, p)
            others = {c: e for c, e in gamma.items()
                      if not (isinstance(c, Endpoint) and c.session == p.session)}
            if not end_env(others):
                self.fail("T-Kill", path, f"entries of other sessions not terminated: {', '.join(_non_end(others))}")
            return
        if isinstance(p, Queue):
            self.check_queue(gamma, p, path, depth)
            return
        raise TypeError(p)

    # -- parallel split

    def split(self, gamma: TypingEnv, comps: list, path: str) -> list[TypingEnv]:
        uses = [free_uses(c) for c in comps]
        kill_at = {c.session: i for i, c in enumerate(comps) if isinstance(c, Kill)}
        failed_at = [i for i, c in enumerate(comps) if isinstance(c, Failed)]
        parts: list[dict] = [dict() for _ in comps]

        def put(i, c, e):
            parts[i][c] = fuse(parts[i][c], e) if c in parts[i] else e

        def sink(c, e, what):
            if is_end_entry(e):
                return 0
            if isinstance(c, Endpoint) and c.session in kill_at:
                return kill_at[c.session]
            if failed_at:
                return failed_at[0]
            self.fail("T-Par", path, f"{what} of {c} ({e}) is used by no component and is not terminated")

        for c, e in gamma.items():
            sp, qp = session_part(e), queue_part(e)
            if sp is not None:
                users = [i for i, u in enumerate(uses) if (c, "s") in u]
                if len(users) > 1:
                    self.fail("T-Par", path, f"{c} is used by components {users}")
                put(users[0] if users else sink(c, sp, "session type"), c, sp)
            if qp is not None:
                qe = QueueEntry(qp)
                users = [i for i, u in enumerate(uses) if (c, "q") in u]
                if len(users) > 1:
                    self.fail("T-Par", path, f"queue of {c} appears in components {users}")
                put(users[0] if users else sink(c, qe, "queue type"), c, qe)
        return [TypingEnv(m) for m in parts]

    # -- restriction

    def check_restrict(self, gamma, p: Restrict, path, depth):
        self.log(depth, "T-Nu", path, p)
        s = p.session
        if s in gamma.sessions():
            self.fail("T-Nu", path, f"session {s} is already in the environment")
        ann = p.annotation
        if ann is None and s in self.witnesses:
            env, wit = self.witnesses[s]
            ann = SessionAnnotation(env, wit)
        if not isinstance(ann, SessionAnnotation):
            self.fail("T-Nu", path, f"restriction of {s} has no typing annotation; "
                                    "synthesize one from a protocol (typecheck --protocol)")
        if ann.witness is None:
            self.fail("T-Nu", path, f"restriction of {s} has no associated global state")
        rep = associated(ann.witness, ann.env, s)
        if not rep:
            items = "; ".join(f"{i}: {m}" for i, m in rep.failures)
            self.fail("T-Nu", path, f"environment of {s} is not associated: {items}")
        self.check(gamma.compose(ann.env), p.body, f"{path}.ν{s}", depth + 1)

    # -- definitions and calls

    def check_def_body(self, d: Def, sig: tuple, path, depth):
        if len(sig) != len(d.params):
            self.fail("T-Def", path, f"{d.name} declares {len(d.params)} parameters, signature has {len(sig)}")
        env = TypingEnv({Variable(x): e for x, e in zip(d.params, sig)})
        try:
            self.check(env, d.body, f"{path}.def {d.name}", depth + 1)
        except TypingError as exc:
            raise TypingError("T-Def", exc.path, f"body of {d.name}: {exc.rule}: {exc.premise}") from exc

    def check_call(self, gamma, p: Call, path, depth):
        self.log(depth, "T-Call", path, p)
        if len(set(p.args)) != len(p.args):
            self.fail("T-Call", path, "the same channel is passed twice")
        for a in p.args:
            if a not in gamma or session_part(gamma[a]) is None:
                self.fail("T-Call", path, f"argument {a} has no session entry")
        if p.name not in self.theta:
            d = self.defs.get(p.name)
            if d is None:
                self.fail("T-Call", path, f"unknown process {p.name}")
            # signature taken from the first call site
            sig = tuple(session_part(gamma[a]) for a in p.args)
            self.theta[p.name] = sig
            self.check_def_body(d, sig, path, depth)
        sig = self.theta[p.name]
        if len(sig) != len(p.args):
            self.fail("T-Call", path, f"{p.name} expects {len(sig)} arguments")
        rest = dict(gamma.items())
        for a, want in zip(p.args, sig):
            e = gamma[a]
            sp = session_part(e)
            if sp.nu != want.nu or not subtype(sp.type, want.type):
                self.fail("T-Call", path, f"argument {a} has {sp}, {p.name} expects {want}")
            q = queue_part(e)
            if q is None:
                del rest[a]
            else:
                rest[a] = QueueEntry(q)
        if not end_env(rest):
            self.fail("T-Call", path, f"entries not terminated: {', '.join(_non_end(rest))}")

    # -- communication

    def _entry(self, gamma, c, rule, path):
        if c not in gamma or session_part(gamma[c]) is None:
            self.fail(rule, path, f"no session entry for {c}")
        return gamma[c], session_part(gamma[c])

    def _guard(self, rule, path, nu, guard, n, what):
        try:
            ok = holds_throughout(nu, guard, n)
        except UnknownClock as exc:
            self.fail(rule, path, f"{what}: clock {exc} is not tracked by the valuation {nu}")
        if not ok:
            self.fail(rule, path, f"{what}: guard does not hold for every t ≤ {_fmt_n(n)} from {nu}")

    def check_select(self, gamma, p: TimedSelect, path, depth):
        self.log(depth, "T-Sel", path, p)
        e, sp = self._entry(gamma, p.chan, "T-Sel", path)
        t = unfold(sp.type)
        if not isinstance(t, IntChoice) or t.partner != p.to:
            self.fail("T-Sel", path, f"{p.chan} has type {sp.type}, not a selection towards {p.to}")
        try:
            b = t.branch(p.label)
        except KeyError:
            self.fail("T-Sel", path, f"label {p.label} is not offered by {sp.type}")
        self._guard("T-Sel", path, sp.nu, b.guard, p.timeout, f"sending {p.label}")
        base = gamma
        if p.payload is None:
            if not isinstance(b.sort, Base):
                self.fail("T-Sel", path, f"{p.label} carries {b.sort} but no payload is sent")
        else:
            if not isinstance(b.sort, Delegation):
                self.fail("T-Sel", path, f"{p.label} carries {b.sort}, not a session")
            if p.payload == p.chan:
                self.fail("T-Sel", path, "a channel cannot be sent over itself")
            _, dp = self._entry(gamma, p.payload, "T-Sel", path)
            if not satisfies(dp.nu, b.sort.guard):
                self.fail("T-Sel", path, f"delegated {p.payload} at {dp.nu} violates {b.sort}")
            if not subtype(dp.type, b.sort.cont):
                self.fail("T-Sel", path, f"delegated {p.payload} has type {dp.type}, expected {b.sort.cont}")
            base = gamma.remove(p.payload)
        for tt in window_points(base, p.timeout):
            g2 = base.advance(tt)
            cur = g2[p.chan]
            g2 = g2.update(p.chan, with_session(cur, cur.nu.reset(b.reset), b.cont))
            self.check(g2, p.cont, f"{path}.{p.label}@{format_time(tt)}", depth + 1)

    def check_branch(self, gamma, p: TimedBranch, path, depth):
        self.log(depth, "T-Branch", path, p)
        e, sp = self._entry(gamma, p.chan, "T-Branch", path)
        t = unfold(sp.type)
        if not isinstance(t, ExtChoice) or t.partner != p.frm:
            self.fail("T-Branch", path, f"{p.chan} has type {sp.type}, not a branching from {p.frm}")
        for b in t.branches:
            arm = p.arm(b.label)
            if arm is None:
                self.fail("T-Branch", path, f"no branch for label {b.label} expected by {sp.type}")
            self._guard("T-Branch", path, sp.nu, b.guard, p.timeout, f"receiving {b.label}")
            binder_entry = None
            if isinstance(b.sort, Delegation):
                if arm.binder is None:
                    self.fail("T-Branch", path, f"{b.label} delivers a session but the branch binds nothing")
                nu_y = _earliest_valuation(b.sort.guard, b.sort.cont)
                if nu_y is None:
                    self.fail("T-Branch", path, f"delegation guard of {b.label} is unsatisfiable")
                binder_entry = SessionEntry(nu_y, b.sort.cont)
            elif arm.binder is not None:
                self.fail("T-Branch", path, f"{b.label} carries {b.sort}; a binder needs a delegated session")
            for tt in window_points(gamma, p.timeout):
                g2 = gamma.advance(tt)
                cur = g2[p.chan]
                g2 = g2.update(p.chan, with_session(cur, cur.nu.reset(b.reset), b.cont))
                if binder_entry is not None:
                    g2 = g2.update(Variable(arm.binder), binder_entry)
                self.check(g2, arm.cont, f"{path}.{b.label}@{format_time(tt)}", depth + 1)

    # -- runtime queues

    def check_queue(self, gamma, p: Queue, path, depth):
        c = Endpoint(p.session, p.owner)
        rule = "T-Queue" if p.messages else "T-QueueEmpty"
        self.log(depth, rule, path, p)
        rest = dict(gamma.items())
        e = rest.pop(c, None)
        if e is None:
            if p.messages:
                self.fail(rule, path, f"no queue type for {c}")
            if not end_env(rest):
                self.fail(rule, path, f"entries not terminated: {', '.join(_non_end(rest))}")
            return
        sp, q = session_part(e), queue_part(e)
        if sp is not None and not subtype(sp.type, END):
            rest[c] = sp
        if q is None:
            self.fail(rule, path, f"{c} has no queue type")
        want = queue_normal_form(q)
        have = tuple(sorted(p.messages, key=lambda m: m.to))
        if len(want) != len(have):
            self.fail(rule, path, f"queue of {c} holds {len(have)} messages, its type lists {len(want)}")
        for m, mt in zip(have, want):
            if (m.to, m.label) != (mt.receiver, mt.label):
                self.fail(rule, path, f"message ({m.to},{m.label}) does not match {mt}")
            if m.payload is None:
                if not isinstance(mt.payload, Base):
                    self.fail(rule, path, f"message {m.label} lacks its {mt.payload} payload")
                continue
            if not isinstance(mt.payload, Delegation):
                self.fail(rule, path, f"message {m.label} carries a session where {mt.payload} is expected")
            de = rest.pop(m.payload, None)
            dp = session_part(de) if de is not None else None
            if dp is None:
                self.fail(rule, path, f"no entry for delegated {m.payload}")
            if not satisfies(dp.nu, mt.payload.guard) or not subtype(dp.type, mt.payload.cont):
                self.fail(rule, path, f"delegated {m.payload} with {dp} does not fit {mt.payload}")
        if not end_env(rest):
            self.fail(rule, path, f"entries not terminated: {', '.join(_non_end(rest))}")


def _fmt_n(n) -> str:
    return "∞" if n == INF else format_time(n)


def typecheck(process, gamma: Mapping | None = None, theta: Mapping | None = None,
              witnesses: Mapping | None = None, explain: bool = False) -> TypingReport:
    """Decide Θ·Γ ⊢ P; witnesses map session names to (environment, global state)."""
    gamma = gamma if isinstance(gamma, TypingEnv) else TypingEnv(gamma or {})
    ck = _Checker(theta, witnesses, explain)
    try:
        ck.check(gamma, process)
    except TypingError as exc:
        return TypingReport(False, exc, ck.lines or [])
    return TypingReport(True, None, ck.lines or [])


# -- annotations -----------------------------------------------------------------------------


def annotate(process, sessions: Mapping):
    """Attach annotations to restrictions of the given sessions and close over free ones.

    sessions maps a session name to a SessionAnnotation."""
    def walk(p):
        if isinstance(p, Restrict):
            ann = p.annotation
            if ann is None and p.session in sessions:
                ann = sessions[p.session]
            return Restrict(p.session, walk(p.body), ann)
        if isinstance(p, Par):
            return Par(tuple(walk(q) for q in p.procs))
        if isinstance(p, Def):
            return Def(p.name, p.params, p.body, walk(p.cont))
        return p

    out = walk(process)
    for s in sorted(free_sessions(out) & set(sessions), reverse=True):
        out = Restrict(s, out, sessions[s])
    return out


def annotation_for(state: GlobalState, s: str = "s", own: Mapping | None = None) -> SessionAnnotation:
    return SessionAnnotation(canonical_env(state, s, own), state)


def open_ensemble(process):
    """Peel annotated top-level restrictions: (body, Γ, {session: global state})."""
    p = cong_normalize(process)
    gamma = TypingEnv()
    states = {}
    while isinstance(p, Restrict) and isinstance(p.annotation, SessionAnnotation):
        gamma = gamma.compose(p.annotation.env)
        states[p.session] = p.annotation.witness
        p = p.body
    return p, gamma, states


# -- typed execution -------------------------------------------------------------------------


@dataclass
class MetaReport:
    ok: bool = True
    checked: int = 0
    pairs: int = 0
    relaxed: int = 0
    message: str = ""
    counterexample: list | None = None
    coverage: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def __bool__(self):
        return self.ok

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "checked": self.checked,
            "pairs": self.pairs,
            "relaxed": self.relaxed,
            "message": self.message,
            "counterexample": self.counterexample,
            "coverage": dict(self.coverage),
            "details": dict(self.details),
        }


def _killed(p) -> set:
    _, _, comps = decompose(p)
    return {c.session for c in comps if isinstance(c, Kill)}


def _cancel_moves(gamma: TypingEnv, s: str) -> list:
    """Environment updates mirroring the discarding reductions of a killed session."""
    out = []
    for c, e in gamma.items():
        if not isinstance(c, Endpoint) or c.session != s:
            continue
        sp = session_part(e)
        if sp is not None:
            t = unfold(sp.type)
            if isinstance(t, ExtChoice):
                for b in t.branches:
                    out.append((f"cancel {c}?{b.label}",
                                gamma.update(c, with_session(e, sp.nu.reset(b.reset), b.cont))))
        q = queue_part(e)
        if q:
            seen = set()
            for i, m in enumerate(q):
                if m.receiver in seen:
                    continue
                seen.add(m.receiver)
                rest = q[:i] + q[i + 1:]
                ne = QueueEntry(rest) if isinstance(e, QueueEntry) else CombinedEntry(e.nu, e.type, rest)
                out.append((f"drop {c}:{m.receiver}:{m.label}", gamma.update(c, ne)))
    return out


def _track(states: dict, alpha, gamma2: TypingEnv, killed: set):
    """Follow the global states along one environment step.

    Returns (states, waived) or None when a live session loses association. Sessions that are
    killed in the target process keep a state only while it stays associated; otherwise their
    witness is dropped and waived is set."""
    new = dict(states)
    waived = False
    if isinstance(alpha, Time):
        for s, st in states.items():
            if st is not None:
                new[s] = GlobalState(st.nu.advance(alpha.t), st.g)
    elif isinstance(alpha, (Send, Recv)):
        s = alpha.session
        st = states.get(s)
        if st is not None:
            nxt = next((st2 for beta, st2 in gt_steps(st, (), s)
                        if beta == alpha and associated(st2, gamma2, s)), None)
            if nxt is None and s not in killed:
                return None
            new[s] = nxt
            waived = nxt is None
    for s, st in list(new.items()):
        if st is None or associated(st, gamma2, s):
            continue
        if s not in killed:
            return None
        new[s] = None
        waived = True
    return new, waived


def _retype(p, gamma: TypingEnv, states: dict, theta, label, search_depth: int):
    """Find Γ' reachable from gamma that types p and keeps every live session associated.

    Returns (Γ', states, relaxed) or None. Relaxed marks a discarding move of a killed session or
    a dropped association witness for one."""
    killed = _killed(p)
    start = []
    if label is not None and label.startswith("R-Time"):
        t = parse_time(label.split("t=")[1])
        g_t = env_time_step(gamma, t)
        tr = _track(states, Time(t), g_t, killed)
        if tr is not None:
            start.append((g_t, tr[0], tr[1], 0))
    if label is not None and ":" in label and ("!" in label or "?" in label):
        for a, g2 in env_nontime_steps(gamma):
            if str(a) == label:
                tr = _track(states, a, g2, killed)
                if tr is not None:
                    start.append((g2, tr[0], tr[1], 1))
    tr = _track(states, None, gamma, killed)
    if tr is not None:
        start.append((gamma, tr[0], tr[1], 0))
    seen = {g for g, *_ in start}
    frontier = deque(start)
    while frontier:
        g, st, relaxed, d = frontier.popleft()
        if typecheck(p, g, theta).ok:
            return g, st, relaxed
        if d >= search_depth:
            continue
        for a, g2 in env_nontime_steps(g):
            if g2 in seen:
                continue
            tr = _track(st, a, g2, killed)
            if tr is not None:
                seen.add(g2)
                frontier.append((g2, tr[0], relaxed or tr[1], d + 1))
        for s in killed:
            for _, g2 in _cancel_moves(g, s):
                if g2 in seen:
                    continue
                tr = _track({**st, s: None}, None, g2, killed)
                if tr is not None:
                    seen.add(g2)
                    frontier.append((g2, tr[0], True, d + 1))
    return None


def _prepare(process, gamma, witnesses):
    if gamma is None:
        body, gamma, states = open_ensemble(process)
    else:
        body = cong_normalize(process)
        gamma = gamma if isinstance(gamma, TypingEnv) else TypingEnv(gamma)
        states = dict(witnesses or {})
    return body, gamma, states


def check_subject_reduction(process, gamma: Mapping | None = None, witnesses: Mapping | None = None,
                            steps: int = 6, grid="auto", theta: Mapping | None = None,
                            search_depth: int = 2, max_states: int = 400) -> MetaReport:
    """Re-type every process reachable within the step bound against some evolved environment.

    Without gamma the annotated top-level restrictions of process supply Γ and the global states;
    otherwise witnesses maps session names to global states."""
    rep = MetaReport()
    body, gamma, states = _prepare(process, gamma, witnesses)
    first = typecheck(body, gamma, theta)
    if not first:
        rep.ok = False
        rep.message = f"initial process is not typed: {first.error}"
        return rep
    for s, st in states.items():
        if st is not None and not associated(st, gamma, s):
            rep.ok = False
            rep.message = f"initial environment of {s} is not associated"
            return rep
    seen = {(body, gamma)}
    frontier = deque([(body, gamma, states, [], 0)])
    while frontier and rep.pairs < max_states:
        p, g, st, trace, d = frontier.popleft()
        rep.pairs += 1
        if d >= steps:
            continue
        succ = [(str(x), x.target) for x in step_instant_labelled(p)]
        times = auto_time_grid(p) if grid == "auto" else [parse_time(t) for t in grid]
        for t in times:
            q = step_time(p, t)
            if q is not None and q != p:
                succ.append((f"R-Time t={format_time(t)}", q))
        for lab, q in succ:
            rep.checked += 1
            comm = lab.split(" ", 1)[1] if " " in lab and not lab.startswith("R-Time") else lab
            found = _retype(q, g, st, theta, comm, search_depth)
            if found is None:
                rep.ok = False
                rep.counterexample = trace + [lab]
                rep.message = f"no environment re-types {q} after {lab}"
                return rep
            g2, st2, relaxed = found
            if relaxed:
                rep.relaxed += 1
            key = (q, g2)
            if key not in seen:
                seen.add(key)
                frontier.append((q, g2, st2, trace + [lab], d + 1))
    return rep


# -- single-session shape --------------------------------------------------------------------


def _calls_guarded(p, under_prefix: bool = False) -> bool:
    if isinstance(p, Call):
        return under_prefix
    if isinstance(p, (TimedSelect,)):
        return _calls_guarded(p.cont, True)
    if isinstance(p, TimedBranch):
        return all(_calls_guarded(a.cont, True) for a in p.arms)
    if isinstance(p, Def):
        return _calls_guarded(p.body, False) and _calls_guarded(p.cont, under_prefix)
    if isinstance(p, Par):
        return all(_calls_guarded(q, under_prefix) for q in p.procs)
    if isinstance(p, Restrict):
        return _calls_guarded(p.body, under_prefix)
    if isinstance(p, (DelayConstraint, DelayExact, Cancel)):
        return _calls_guarded(p.cont, under_prefix)
    if isinstance(p, Failed):
        return _calls_guarded(p.proc, under_prefix)
    if isinstance(p, TryCatch):
        return _calls_guarded(p.body, under_prefix) and _calls_guarded(p.handler, under_prefix)
    return True


def _nested_restrictions(p) -> list:
    out = []
    if isinstance(p, Restrict):
        out.append(p)
    from .calculus import _children

    for q in _children(p):
        out += _nested_restrictions(q)
    return out


def single_session_shape(process, gamma: Mapping | None = None, witnesses: Mapping | None = None):
    """Check that the process plays one role per component in one session.

    Returns (body, Γ, states, session, {role: components}); raises PreconditionViolation."""
    body, gamma, states = _prepare(process, gamma, witnesses)
    bad = []
    sessions = gamma.sessions()
    if len(sessions) != 1:
        raise PreconditionViolation([("iii", f"expected exactly one session, found {sorted(sessions)}")])
    (s,) = tuple(sessions)
    _, defs, comps = decompose(body)
    for d in defs:
        if not _calls_guarded(Def(d.name, d.params, d.body, Nil())):
            bad.append(("i", f"definition {d.name} calls a process before any communication prefix"))
    fv = free_variables(body)
    if fv:
        bad.append(("ii", f"free variables {sorted(fv)}"))
    by_role: dict = {}
    for c in comps:
        if isinstance(c, Kill):
            continue
        rs = {ch.role for ch, _ in free_uses(c) if isinstance(ch, Endpoint) and ch.session == s}
        others = {ch for ch, _ in free_uses(c) if isinstance(ch, Endpoint) and ch.session != s}
        if others:
            bad.append(("iii", f"component {c} uses channels of other sessions"))
        if len(rs) > 1:
            bad.append(("iii", f"component {c} plays several roles {sorted(rs)}"))
        elif rs:
            by_role.setdefault(next(iter(rs)), []).append(c)
    for r, cs in sorted(by_role.items()):
        active = [c for c in cs if not (isinstance(c, Queue) and not c.messages)]
        e = gamma.get(Endpoint(s, r))
        if e is None:
            bad.append(("iii", f"role {r} has no entry"))
        elif active and is_end_entry(e) and not any(isinstance(c, Failed) for c in active):
            bad.append(("iii", f"role {r} acts but its entry is terminated"))
    for c, e in gamma.items():
        if not (isinstance(c, Endpoint) and c.session == s):
            if not is_end_entry(e):
                bad.append(("iii", f"entry {c} outside the session is not terminated"))
    for c in comps:
        for r in _nested_restrictions(c):
            ann = r.annotation
            if not isinstance(ann, SessionAnnotation) or not end_env(ann.env):
                bad.append(("iv", f"nested restriction of {r.session} is not End-typed"))
    if bad:
        raise PreconditionViolation(bad)
    return body, gamma, states, s, by_role


# -- session fidelity ------------------------------------------------------------------------

_COMM_RULES = ("R-Out", "R-In")


def _silent_closure(p, limit: int = 3) -> list:
    """p plus processes reachable by instant steps that are not communications.

    Call unfoldings do not count towards the limit."""
    out = [p]
    seen = {p}
    frontier = deque([(p, 0)])
    while frontier:
        q, d = frontier.popleft()
        if d >= limit:
            continue
        for st in step_instant_labelled(q):
            if st.rule in _COMM_RULES:
                continue
            if st.target not in seen:
                seen.add(st.target)
                out.append(st.target)
                frontier.append((st.target, d if st.rule == "R-Call" else d + 1))
    return out


def _realize(p, alpha, gamma2, theta):
    """A multi-step of p ending with alpha's counterpart that gamma2 types."""
    for q in _silent_closure(p):
        if isinstance(alpha, Time):
            cands = [step_time(q, alpha.t)]
        else:
            cands = [st.target for st in step_instant_labelled(q)
                     if st.rule in _COMM_RULES and st.label == str(alpha)]
        for r in cands:
            if r is not None and typecheck(r, gamma2, theta).ok:
                return r
    return None


def check_session_fidelity(process, gamma: Mapping | None = None, witnesses: Mapping | None = None,
                           depth: int = 4, grid="auto", theta: Mapping | None = None,
                           max_states: int = 200) -> MetaReport:
    """Existential fidelity with per-label coverage.

    At every explored pair some enabled environment step must be realised by the process; the
    coverage entry counts how many enabled steps were realised overall."""
    body, gamma, states, s, _ = single_session_shape(process, gamma, witnesses)
    rep = MetaReport()
    first = typecheck(body, gamma, theta)
    if not first:
        rep.ok = False
        rep.message = f"initial process is not typed: {first.error}"
        return rep
    enabled_total = matched_total = 0
    seen = {(body, gamma)}
    frontier = deque([(body, gamma, states, [], 0)])
    while frontier and rep.pairs < max_states:
        p, g, st, trace, d = frontier.popleft()
        rep.pairs += 1
        killed = _killed(p)
        ws = st.get(s)
        g_grid = auto_grid(ws, g) if grid == "auto" else [parse_time(t) for t in grid]
        alphas = [(a, g2) for a, g2 in env_nontime_steps(g, s)]
        alphas += [(Time(t), env_time_step(g, t)) for t in g_grid]
        matched = []
        for a, g2 in alphas:
            tr = _track(st, a, g2, killed)
            if tr is None:
                continue
            st2 = tr[0]
            r = _realize(p, a, g2, theta)
            if r is not None:
                matched.append((a, g2, st2, r))
        enabled_total += len(alphas)
        matched_total += len(matched)
        rep.checked += 1
        if alphas and not matched:
            rep.ok = False
            rep.counterexample = trace
            rep.message = f"no enabled environment step of {s} is realised by {p}"
            return rep
        if d >= depth:
            continue
        for a, g2, st2, r in matched:
            key = (r, g2)
            if key not in seen:
                seen.add(key)
                frontier.append((r, g2, st2, trace + [str(a)], d + 1))
    rep.coverage = {"enabled": enabled_total, "realised": matched_total}
    return rep


# -- deadlock freedom -------------------------------------------------------------------------


def check_deadlock_freedom(process, gamma: Mapping | None = None, witnesses: Mapping | None = None,
                           depth: int = 14, grid="auto") -> MetaReport:
    """Every terminal reached within the bound is 0 in parallel with kills (and empty queues)."""
    body, gamma, states, s, _ = single_session_shape(process, gamma, witnesses)
    rep = MetaReport()
    ex = explore(body, depth=depth, grid=grid)
    rep.pairs = ex.states
    rep.checked = len(ex.terminals)
    rep.details = ex.to_json()
    if ex.errors:
        rep.ok = False
        rep.message = f"communication error reachable: {ex.errors[0]}"
        rep.counterexample = [lab for lab, _ in ex.trace_to(ex.errors[0])]
    elif ex.bad_terminals:
        rep.ok = False
        rep.message = f"stuck terminal: {ex.bad_terminals[0]}"
        rep.counterexample = [lab for lab, _ in ex.trace_to(ex.bad_terminals[0])]
    elif ex.truncated:
        rep.message = f"bounded verdict: {ex.truncated} states cut at depth {depth}"
    return rep
