"""Affine timed session π-calculus: syntax, congruence, time passing and reductions."""

from __future__ import annotations

import re
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

from .env import Endpoint, Variable
from .timecore import (
    INF,
    Constraint,
    constants,
    format_time,
    free_clocks,
    midpoint,
    parse_constraint,
    parse_time,
    render_constraint,
    sample_grid,
    solution_set,
)
from .types import _Node


class UnboundedCallExpansion(RecursionError):
    pass


class ProcessSyntaxError(ValueError):
    pass


def _node(cls):
    cls = dataclass(frozen=True, eq=True)(cls)
    cls.__hash__ = _Node.__hash__
    return cls


def _fmt_timeout(n) -> str:
    return "∞" if n == INF else format_time(n)


# -- syntax ------------------------------------------------------------------------------


@_node
class Nil(_Node):
    def __str__(self):
        return "0"


NIL = Nil()


@_node
class Par(_Node):
    procs: tuple

    def __str__(self):
        return "(" + " ∥ ".join(str(p) for p in self.procs) + ")"


@_node
class Restrict(_Node):
    session: str
    body: object
    annotation: object = None

    def __str__(self):
        return f"(ν{self.session}){self.body}"


@_node
class TimedSelect(_Node):
    chan: object
    to: str
    label: str
    payload: object
    cont: object
    timeout: object = INF

    def __str__(self):
        pl = f"⟨{self.payload}⟩" if self.payload is not None else ""
        return f"{self.chan}!{self.to}{self.label}{pl}.{self.cont}, {_fmt_timeout(self.timeout)}"


@_node
class Arm(_Node):
    label: str
    binder: str | None
    cont: object
    binder_role: str | None = None


@_node
class TimedBranch(_Node):
    chan: object
    frm: str
    arms: tuple
    timeout: object = INF

    def __post_init__(self):
        labels = [a.label for a in self.arms]
        if not labels:
            raise ValueError("branching needs at least one arm")
        if len(set(labels)) != len(labels):
            raise ValueError(f"duplicate branch labels {labels}")
        object.__setattr__(self, "arms", tuple(sorted(self.arms, key=lambda a: a.label)))

    def arm(self, label: str):
        for a in self.arms:
            if a.label == label:
                return a
        return None

    def __str__(self):
        arms = ", ".join(f"{a.label}({a.binder or ''}).{a.cont}" for a in self.arms)
        return f"{self.chan}?{self.frm}{{{arms}}}, {_fmt_timeout(self.timeout)}"


@_node
class Def(_Node):
    name: str
    params: tuple
    body: object
    cont: object

    def __str__(self):
        return f"def {self.name}({', '.join(self.params)}) = {self.body} in {self.cont}"


@_node
class Call(_Node):
    name: str
    args: tuple

    def __str__(self):
        return f"{self.name}⟨{', '.join(str(a) for a in self.args)}⟩"


@_node
class DelayConstraint(_Node):
    constraint: Constraint
    cont: object

    def __str__(self):
        return f"delay({render_constraint(self.constraint)}).{self.cont}"


@_node
class DelayExact(_Node):
    t: Fraction
    cont: object

    def __str__(self):
        return f"delay({format_time(self.t)}).{self.cont}"


@_node
class Failed(_Node):
    proc: object

    def __str__(self):
        return f"failed({self.proc})"


@_node
class TryCatch(_Node):
    body: object
    handler: object

    def __post_init__(self):
        if isinstance(self.body, Nil):
            raise ValueError("try body must not be 0")

    def __str__(self):
        return f"try {self.body} catch {self.handler}"


@_node
class Cancel(_Node):
    chan: object
    cont: object

    def __str__(self):
        return f"cancel({self.chan}).{self.cont}"


@_node
class Err(_Node):
    def __str__(self):
        return "err"


@_node
class Kill(_Node):
    session: str

    def __str__(self):
        return f"kill {self.session}"


@_node
class Msg(_Node):
    to: str
    label: str
    payload: object = None

    def __str__(self):
        pl = f"⟨{self.payload}⟩" if self.payload is not None else ""
        return f"({self.to},{self.label}{pl})"


@_node
class Queue(_Node):
    session: str
    owner: str
    messages: tuple = ()

    def __str__(self):
        body = "·".join(str(m) for m in self.messages) or "⊘"
        return f"{self.session}[{self.owner}]▸{body}"


RUNTIME_ONLY = (DelayExact, Failed, Kill, Queue, Err)


def par(*procs):
    items = [p for p in procs if not isinstance(p, Nil)]
    if not items:
        return NIL
    if len(items) == 1:
        return items[0]
    return Par(tuple(items))


def is_runtime_only(p) -> bool:
    return isinstance(p, RUNTIME_ONLY)


# -- free names and substitution ----------------------------------------------------------


def _chan_sessions(c) -> set:
    return {c.session} if isinstance(c, Endpoint) else set()


def free_sessions(p) -> set:
    if isinstance(p, (Nil, Err)):
        return set()
    if isinstance(p, Kill):
        return {p.session}
    if isinstance(p, Queue):
        out = {p.session}
        for m in p.messages:
            out |= _chan_sessions(m.payload)
        return out
    if isinstance(p, Par):
        out = set()
        for q in p.procs:
            out |= free_sessions(q)
        return out
    if isinstance(p, Restrict):
        return free_sessions(p.body) - {p.session}
    if isinstance(p, TimedSelect):
        return _chan_sessions(p.chan) | _chan_sessions(p.payload) | free_sessions(p.cont)
    if isinstance(p, TimedBranch):
        out = _chan_sessions(p.chan)
        for a in p.arms:
            out |= free_sessions(a.cont)
        return out
    if isinstance(p, Def):
        return free_sessions(p.body) | free_sessions(p.cont)
    if isinstance(p, Call):
        out = set()
        for a in p.args:
            out |= _chan_sessions(a)
        return out
    if isinstance(p, (DelayConstraint, DelayExact)):
        return free_sessions(p.cont)
    if isinstance(p, Failed):
        return free_sessions(p.proc)
    if isinstance(p, TryCatch):
        return free_sessions(p.body) | free_sessions(p.handler)
    if isinstance(p, Cancel):
        return _chan_sessions(p.chan) | free_sessions(p.cont)
    raise TypeError(p)


def all_sessions(p) -> set:
    """Free and bound session names."""
    out = free_sessions(p)
    for q in _children(p):
        out |= all_sessions(q)
    if isinstance(p, Restrict):
        out.add(p.session)
    return out


def _children(p) -> list:
    if isinstance(p, Par):
        return list(p.procs)
    if isinstance(p, Restrict):
        return [p.body]
    if isinstance(p, TimedSelect):
        return [p.cont]
    if isinstance(p, TimedBranch):
        return [a.cont for a in p.arms]
    if isinstance(p, Def):
        return [p.body, p.cont]
    if isinstance(p, (DelayConstraint, DelayExact, Cancel)):
        return [p.cont]
    if isinstance(p, Failed):
        return [p.proc]
    if isinstance(p, TryCatch):
        return [p.body, p.handler]
    return []


def fresh_session(avoid: set, base: str = "s") -> str:
    i = 1
    while f"{base}{i}" in avoid:
        i += 1
    return f"{base}{i}"


def _sub_chan(c, m: dict):
    if isinstance(c, Variable) and c.name in m:
        return m[c.name]
    return c


def substitute(p, m: dict):
    """Capture-avoiding replacement of channel variables by channels."""
    if not m:
        return p
    if isinstance(p, (Nil, Err, Kill)):
        return p
    if isinstance(p, Queue):
        return Queue(p.session, p.owner, tuple(Msg(x.to, x.label, _sub_chan(x.payload, m)) for x in p.messages))
    if isinstance(p, Par):
        return Par(tuple(substitute(q, m) for q in p.procs))
    if isinstance(p, Restrict):
        incoming = set()
        for c in m.values():
            incoming |= _chan_sessions(c)
        if p.session in incoming:
            new = fresh_session(incoming | all_sessions(p.body) | {p.session}, p.session)
            body = rename_session(p.body, p.session, new)
            return Restrict(new, substitute(body, m), p.annotation)
        return Restrict(p.session, substitute(p.body, m), p.annotation)
    if isinstance(p, TimedSelect):
        return TimedSelect(_sub_chan(p.chan, m), p.to, p.label, _sub_chan(p.payload, m),
                           substitute(p.cont, m), p.timeout)
    if isinstance(p, TimedBranch):
        arms = []
        for a in p.arms:
            inner = {k: v for k, v in m.items() if k != a.binder}
            arms.append(Arm(a.label, a.binder, substitute(a.cont, inner), a.binder_role))
        return TimedBranch(_sub_chan(p.chan, m), p.frm, tuple(arms), p.timeout)
    if isinstance(p, Def):
        return Def(p.name, p.params, p.body, substitute(p.cont, m))
    if isinstance(p, Call):
        return Call(p.name, tuple(_sub_chan(a, m) for a in p.args))
    if isinstance(p, DelayConstraint):
        return DelayConstraint(p.constraint, substitute(p.cont, m))
    if isinstance(p, DelayExact):
        return DelayExact(p.t, substitute(p.cont, m))
    if isinstance(p, Failed):
        return Failed(substitute(p.proc, m))
    if isinstance(p, TryCatch):
        return TryCatch(substitute(p.body, m), substitute(p.handler, m))
    if isinstance(p, Cancel):
        return Cancel(_sub_chan(p.chan, m), substitute(p.cont, m))
    raise TypeError(p)


def _ren_chan(c, old, new):
    if isinstance(c, Endpoint) and c.session == old:
        return Endpoint(new, c.role)
    return c


def rename_session(p, old: str, new: str):
    """Rename free occurrences of session old to new."""
    if isinstance(p, (Nil, Err)):
        return p
    if isinstance(p, Kill):
        return Kill(new) if p.session == old else p
    if isinstance(p, Queue):
        return Queue(new if p.session == old else p.session, p.owner,
                     tuple(Msg(x.to, x.label, _ren_chan(x.payload, old, new)) for x in p.messages))
    if isinstance(p, Par):
        return Par(tuple(rename_session(q, old, new) for q in p.procs))
    if isinstance(p, Restrict):
        if p.session == old:
            return p
        if p.session == new:
            inner = fresh_session(all_sessions(p.body) | {old, new}, new)
            p = Restrict(inner, rename_session(p.body, new, inner), p.annotation)
        return Restrict(p.session, rename_session(p.body, old, new), p.annotation)
    if isinstance(p, TimedSelect):
        return TimedSelect(_ren_chan(p.chan, old, new), p.to, p.label, _ren_chan(p.payload, old, new),
                           rename_session(p.cont, old, new), p.timeout)
    if isinstance(p, TimedBranch):
        return TimedBranch(_ren_chan(p.chan, old, new), p.frm,
                           tuple(Arm(a.label, a.binder, rename_session(a.cont, old, new), a.binder_role)
                                 for a in p.arms), p.timeout)
    if isinstance(p, Def):
        return Def(p.name, p.params, rename_session(p.body, old, new), rename_session(p.cont, old, new))
    if isinstance(p, Call):
        return Call(p.name, tuple(_ren_chan(a, old, new) for a in p.args))
    if isinstance(p, DelayConstraint):
        return DelayConstraint(p.constraint, rename_session(p.cont, old, new))
    if isinstance(p, DelayExact):
        return DelayExact(p.t, rename_session(p.cont, old, new))
    if isinstance(p, Failed):
        return Failed(rename_session(p.proc, old, new))
    if isinstance(p, TryCatch):
        return TryCatch(rename_session(p.body, old, new), rename_session(p.handler, old, new))
    if isinstance(p, Cancel):
        return Cancel(_ren_chan(p.chan, old, new), rename_session(p.cont, old, new))
    raise TypeError(p)


# -- subjects ------------------------------------------------------------------------------

CALL_CUTOFF = 32


def subjects(p, defs: dict | None = None, _depth: int = 0) -> frozenset:
    """Pairs (channel, is_queue) of channels on which p may act first."""
    defs = defs or {}
    if isinstance(p, (Nil, Err, Kill)):
        return frozenset()
    if isinstance(p, Queue):
        return frozenset([(Endpoint(p.session, p.owner), True)])
    if isinstance(p, Par):
        out = frozenset()
        for q in p.procs:
            out |= subjects(q, defs, _depth)
        return out
    if isinstance(p, Restrict):
        return frozenset(x for x in subjects(p.body, defs, _depth)
                         if not (isinstance(x[0], Endpoint) and x[0].session == p.session))
    if isinstance(p, Def):
        inner = dict(defs)
        inner[p.name] = p
        body = frozenset(x for x in subjects(p.body, inner, _depth)
                         if not (isinstance(x[0], Variable) and x[0].name in p.params))
        return subjects(p.cont, inner, _depth) | body
    if isinstance(p, Call):
        if p.name not in defs:
            return frozenset()
        if _depth >= CALL_CUTOFF:
            raise UnboundedCallExpansion(f"call {p.name} does not reach a prefix")
        d = defs[p.name]
        return subjects(substitute(d.body, dict(zip(d.params, p.args))), defs, _depth + 1)
    if isinstance(p, (TimedSelect, TimedBranch, Cancel)):
        return frozenset([(p.chan, False)])
    if isinstance(p, (DelayConstraint, DelayExact)):
        return subjects(p.cont, defs, _depth)
    if isinstance(p, TryCatch):
        return subjects(p.body, defs, _depth)
    if isinstance(p, Failed):
        return subjects(p.proc, defs, _depth)
    raise TypeError(p)


def single_subject(p, defs=None):
    """The endpoint s[r] when subj(p) is exactly {s[r]} without a queue tag."""
    subj = subjects(p, defs)
    if len(subj) == 1:
        (c, q), = subj
        if not q and isinstance(c, Endpoint):
            return c
    return None


# -- time passing -------------------------------------------------------------------------


class Undefined(Exception):
    """Time cannot pass here (distinct from a timeout failure)."""


def time_pass(t, p):
    """Φ_t(p); raises Undefined where time cannot elapse."""
    t = parse_time(t)
    return _tp(t, p)


def _tp(t, p, active: bool = True):
    if isinstance(p, Call) and active and t > 0:
        # a call in active position unfolds before time can pass
        raise Undefined(f"time cannot pass over the unexpanded call {p.name}")
    if isinstance(p, (Nil, Err, Kill, Queue, Failed, Call)):
        return p
    if isinstance(p, Par):
        return Par(tuple(_tp(t, q, active) for q in p.procs))
    if isinstance(p, Restrict):
        return Restrict(p.session, _tp(t, p.body, active), p.annotation)
    if isinstance(p, Def):
        return Def(p.name, p.params, p.body, _tp(t, p.cont, active))
    if isinstance(p, TryCatch):
        return TryCatch(_tp(t, p.body, active), _tp(t, p.handler, False))
    if isinstance(p, Cancel):
        return Cancel(p.chan, _tp(t, p.cont, False))
    if isinstance(p, DelayConstraint):
        raise Undefined("time cannot pass over an unresolved delay")
    if isinstance(p, DelayExact):
        if p.t < t:
            raise Undefined(f"time {format_time(t)} exceeds the delay {format_time(p.t)}")
        return DelayExact(p.t - t, p.cont)
    if isinstance(p, (TimedSelect, TimedBranch)):
        if p.timeout == INF:
            return p
        if p.timeout >= t:
            if isinstance(p, TimedSelect):
                return TimedSelect(p.chan, p.to, p.label, p.payload, p.cont, p.timeout - t)
            return TimedBranch(p.chan, p.frm, p.arms, p.timeout - t)
        return Failed(p)
    raise TypeError(p)


def time_pass_or_none(t, p):
    try:
        return time_pass(t, p)
    except Undefined:
        return None


def timed_positions(p) -> tuple[list, list, bool]:
    """Finite timeouts and exact delays that Φ touches, and whether a symbolic delay blocks time."""
    timeouts: list = []
    delays: list = []
    blocked = False

    def walk(q, active=True):
        nonlocal blocked
        if isinstance(q, Par):
            for r in q.procs:
                walk(r, active)
        elif isinstance(q, Restrict):
            walk(q.body, active)
        elif isinstance(q, Def):
            walk(q.cont, active)
        elif isinstance(q, TryCatch):
            walk(q.body, active)
            walk(q.handler, False)
        elif isinstance(q, Cancel):
            walk(q.cont, False)
        elif isinstance(q, Call) and active:
            blocked = True
        elif isinstance(q, DelayConstraint):
            blocked = True
        elif isinstance(q, DelayExact):
            delays.append(q.t)
        elif isinstance(q, (TimedSelect, TimedBranch)):
            if q.timeout != INF:
                timeouts.append(q.timeout)

    walk(p)
    return timeouts, delays, blocked


def is_time_fixpoint(p) -> bool:
    """Φ_t(p) = p for every t."""
    timeouts, delays, blocked = timed_positions(p)
    return not timeouts and not delays and not blocked


def auto_time_grid(p) -> list[Fraction]:
    """Delays that reach every deadline and cross every finite timeout."""
    timeouts, delays, blocked = timed_positions(p)
    if blocked:
        return []
    cap = min(delays) if delays else INF
    marks = sorted({x for x in timeouts + delays if x > 0})
    out: set[Fraction] = set()
    for b in marks:
        if b <= cap:
            out.add(b)
    for n in sorted(set(timeouts)):
        if n >= cap:
            continue
        above = [b for b in marks if b > n]
        step = midpoint(n, above[0]) if above else n + 1
        if step <= cap:
            out.add(step)
    return sorted(x for x in out if x > 0)


# -- congruence normal form ------------------------------------------------------------------


def _msg_key(m) -> str:
    return m.to


def _normal_queue(msgs: tuple) -> tuple:
    return tuple(sorted(msgs, key=_msg_key))


def _sort_key(p) -> str:
    return repr(p)


def cong_normalize(p):
    """Canonical representative of the congruence class of p."""
    if isinstance(p, (Nil, Err, Kill, Call)):
        return p
    if isinstance(p, Queue):
        return Queue(p.session, p.owner, _normal_queue(p.messages))
    if isinstance(p, TimedSelect):
        return TimedSelect(p.chan, p.to, p.label, p.payload, cong_normalize(p.cont), p.timeout)
    if isinstance(p, TimedBranch):
        return TimedBranch(p.chan, p.frm, tuple(Arm(a.label, a.binder, cong_normalize(a.cont), a.binder_role)
                                                for a in p.arms), p.timeout)
    if isinstance(p, DelayConstraint):
        return DelayConstraint(p.constraint, cong_normalize(p.cont))
    if isinstance(p, DelayExact):
        if p.t == 0:
            return cong_normalize(p.cont)
        return DelayExact(p.t, cong_normalize(p.cont))
    if isinstance(p, Failed):
        return Failed(cong_normalize(p.proc))
    if isinstance(p, TryCatch):
        return TryCatch(cong_normalize(p.body), cong_normalize(p.handler))
    if isinstance(p, Cancel):
        return Cancel(p.chan, cong_normalize(p.cont))
    res, defs, comps = _flatten(p)
    return _rebuild(res, defs, comps)


def _flatten(p) -> tuple[list, list, list]:
    """Restrictions, definitions and parallel components of a composite term."""
    if isinstance(p, Nil):
        return [], [], []
    if isinstance(p, Restrict):
        res, defs, comps = _flatten(p.body)
        return [(p.session, p.annotation)] + res, defs, comps
    if isinstance(p, Def):
        res, defs, comps = _flatten(p.cont)
        body = cong_normalize(p.body)
        return res, [Def(p.name, p.params, body, NIL)] + defs, comps
    if isinstance(p, Par):
        res, defs, comps = [], [], []
        for q in p.procs:
            r2, d2, c2 = _flatten(q)
            res, defs, comps = _merge_flat((res, defs, comps), (r2, d2, c2))
        return res, defs, comps
    n = cong_normalize(p)
    if isinstance(n, Nil):
        return [], [], []
    if isinstance(n, (Par, Restrict, Def)):
        return _flatten(n)
    return [], [], [n]


def _flat_sessions(flat) -> set:
    res, defs, comps = flat
    out = {s for s, _ in res}
    for q in defs + comps:
        out |= all_sessions(q)
    return out


def _merge_flat(a, b):
    ra, da, ca = a
    rb, db, cb = b
    used = _flat_sessions(a)
    for i, (s, ann) in enumerate(list(rb)):
        if s in used:
            new = fresh_session(used | _flat_sessions((rb, db, cb)), s)
            db = [rename_session(d, s, new) for d in db]
            cb = [rename_session(c, s, new) for c in cb]
            rb = rb[:i] + [(new, ann)] + rb[i + 1:]
            used.add(new)
        else:
            used.add(s)
    names = {d.name for d in da}
    for d in db:
        if d.name in names:
            if d in da:
                continue
            raise ProcessSyntaxError(f"process name {d.name} defined twice in parallel")
        da = da + [d]
    return ra + rb, da, ca + cb


def _rebuild(res, defs, comps):
    comps = [c for c in comps if not isinstance(c, Nil)]
    # dedupe kills
    seen_kill: set = set()
    out = []
    for c in comps:
        if isinstance(c, Kill):
            if c.session in seen_kill:
                continue
            seen_kill.add(c.session)
        out.append(c)
    comps = out
    kept = []
    for s, ann in res:
        users = [c for c in comps if s in free_sessions(c)] + [d for d in defs if s in free_sessions(d)]
        if not users:
            continue
        if all(isinstance(c, (Kill, Queue)) for c in users) and \
                all(not c.messages for c in users if isinstance(c, Queue)) and \
                all(not (free_sessions(c) - {s}) for c in users):
            comps = [c for c in comps if c not in users]
            continue
        kept.append((s, ann))
    comps.sort(key=_sort_key)
    body = par(*comps)
    for d in sorted(defs, key=lambda d: d.name, reverse=True):
        body = Def(d.name, d.params, d.body, body)
    if isinstance(body, Nil) and not kept:
        return NIL
    for s, ann in sorted(kept, key=lambda x: x[0], reverse=True):
        body = Restrict(s, body, ann)
    return body


def decompose(p) -> tuple[list, list, list]:
    """Split a normal form into restrictions, definitions and components."""
    res, defs = [], []
    while isinstance(p, Restrict):
        res.append((p.session, p.annotation))
        p = p.body
    while isinstance(p, Def):
        defs.append(Def(p.name, p.params, p.body, NIL))
        p = p.cont
    comps = list(p.procs) if isinstance(p, Par) else ([] if isinstance(p, Nil) else [p])
    return res, defs, comps


def congruent(p, q) -> bool:
    return cong_normalize(p) == cong_normalize(q)


# -- reductions ----------------------------------------------------------------------------


@dataclass(frozen=True)
class Step:
    rule: str
    target: object
    subject: object = None
    label: str | None = None

    def __str__(self):
        return f"{self.rule}{' ' + self.label if self.label else ''}"


def _hole(comp):
    """Innermost body under a try-catch context."""
    while isinstance(comp, TryCatch):
        comp = comp.body
    return comp


def _find_queue(comps, session, owner):
    for j, c in enumerate(comps):
        if isinstance(c, Queue) and c.session == session and c.owner == owner:
            return j
    return None


def _delay_solutions(d: Constraint) -> list[Fraction]:
    clocks = free_clocks(d)
    if not clocks:
        return [Fraction(0)]
    (clock,) = tuple(clocks)
    bound = (max(constants(d)) if constants(d) else Fraction(0)) + 1
    return sample_grid(solution_set(d, clock), bound)


def _replace(comps, changes: dict, extra=()):
    out = [changes.get(i, c) for i, c in enumerate(comps)]
    return [c for c in out if c is not None] + list(extra)


def step_instant_labelled(p) -> list[Step]:
    """All instantaneous successors of a normalised process, tagged with the rule used."""
    res, defs, comps = decompose(p)
    defmap = {d.name: d for d in defs}
    kills = {c.session for c in comps if isinstance(c, Kill)}
    out: list[Step] = []

    def emit(rule, new_comps, subject=None, label=None):
        out.append(Step(rule, cong_normalize(_rebuild(res, defs, new_comps)), subject, label))

    for i, comp in enumerate(comps):
        h = _hole(comp)
        if isinstance(h, TimedSelect) and isinstance(h.chan, Endpoint):
            j = _find_queue(comps, h.chan.session, h.chan.role)
            if j is not None:
                q = comps[j]
                nq = Queue(q.session, q.owner, q.messages + (Msg(h.to, h.label, h.payload),))
                emit("R-Out", _replace(comps, {i: h.cont, j: nq}), h.chan,
                     f"{h.chan.session}:{h.chan.role}!{h.to}:{h.label}")
        elif isinstance(h, TimedBranch) and isinstance(h.chan, Endpoint):
            s, me = h.chan.session, h.chan.role
            j = _find_queue(comps, s, h.frm)
            if j is not None:
                q = comps[j]
                k = next((n for n, m in enumerate(q.messages) if m.to == me), None)
                if k is not None:
                    m = q.messages[k]
                    arm = h.arm(m.label)
                    nq = Queue(q.session, q.owner, q.messages[:k] + q.messages[k + 1:])
                    if arm is None:
                        emit("R-Err", _replace(comps, {i: None, j: None}, [Err()]), h.chan, m.label)
                    else:
                        cont = arm.cont
                        if arm.binder is not None and m.payload is not None:
                            cont = substitute(cont, {arm.binder: m.payload})
                        emit("R-In", _replace(comps, {i: cont, j: nq}), h.chan,
                             f"{s}:{me}?{h.frm}:{m.label}")
                elif s in kills and comp is h:
                    avoid = set()
                    for c in comps:
                        avoid |= all_sessions(c)
                    avoid |= {x for x, _ in res}
                    for arm in h.arms:
                        if arm.binder is not None:
                            s2 = fresh_session(avoid, s)
                            cont = substitute(arm.cont, {arm.binder: Endpoint(s2, arm.binder_role or arm.binder)})
                            new = Restrict(s2, par(cont, Kill(s2)))
                        else:
                            new = arm.cont
                        emit("R-CanIn", _replace(comps, {i: new}), h.chan, arm.label)
        elif isinstance(h, DelayConstraint):
            for t in _delay_solutions(h.constraint):
                emit("R-Det", _replace(comps, {i: DelayExact(t, h.cont)}), None, format_time(t))
        elif isinstance(h, Cancel) and isinstance(h.chan, Endpoint):
            emit("R-Can", _replace(comps, {i: h.cont}, [Kill(h.chan.session)]), h.chan)
        elif isinstance(h, Call) and comp is h and h.name in defmap:
            d = defmap[h.name]
            if len(d.params) == len(h.args):
                emit("R-Call", _replace(comps, {i: substitute(d.body, dict(zip(d.params, h.args)))}), None, h.name)
        if isinstance(comp, Failed):
            c = single_subject(comp.proc, defmap)
            if c is not None:
                emit("R-Fail", _replace(comps, {i: Kill(c.session)}), c)
        if isinstance(comp, TryCatch):
            if isinstance(comp.body, Failed):
                c = single_subject(comp.body.proc, defmap)
                if c is not None:
                    emit("R-FailCatch", _replace(comps, {i: comp.handler}, [Kill(c.session)]), c)
            c = single_subject(comp.body, defmap)
            if c is not None and c.session in kills:
                emit("R-Cat", _replace(comps, {i: comp.handler}), c)
        if isinstance(comp, Queue) and comp.session in kills and comp.messages:
            done = set()
            for k, m in enumerate(comp.messages):
                if m.to in done:
                    continue
                done.add(m.to)
                nq = Queue(comp.session, comp.owner, comp.messages[:k] + comp.messages[k + 1:])
                extra = [Kill(m.payload.session)] if isinstance(m.payload, Endpoint) else []
                emit("R-CanQ", _replace(comps, {i: nq}, extra), Endpoint(comp.session, comp.owner), m.label)
    return out


def step_instant(p) -> list:
    seen, out = set(), []
    for st in step_instant_labelled(p):
        if st.target not in seen:
            seen.add(st.target)
            out.append(st.target)
    return out


def step_time(p, t):
    q = time_pass_or_none(t, p)
    return None if q is None else cong_normalize(q)


# -- exploration --------------------------------------------------------------------------------


def has_error(p) -> bool:
    if isinstance(p, Err):
        return True
    res, defs, comps = decompose(p)
    return any(isinstance(c, Err) for c in comps)


def is_clean_residue(p) -> bool:
    """0, kills and empty queues only (the shape of a properly terminated process)."""
    _, _, comps = decompose(p)
    return all(isinstance(c, Kill) or (isinstance(c, Queue) and not c.messages) for c in comps)


def has_failed_at(endpoint) -> Callable:
    def pred(p) -> bool:
        _, _, comps = decompose(p)
        for c in comps:
            inner = c.body if isinstance(c, TryCatch) else c
            if isinstance(inner, Failed) and any(ch == endpoint for ch, q in subjects(inner.proc)):
                return True
        return False
    return pred


@dataclass
class ExplorationReport:
    states: int = 0
    edges: int = 0
    terminals: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    bad_terminals: list = field(default_factory=list)
    truncated: int = 0
    pruned: int = 0
    parents: dict = field(default_factory=dict)

    @property
    def deadlock_free(self) -> bool:
        return not self.bad_terminals and not self.errors

    def trace_to(self, p) -> list:
        out = []
        while p in self.parents and self.parents[p] is not None:
            prev, lab = self.parents[p]
            out.append((lab, p))
            p = prev
        return list(reversed(out))

    def to_json(self) -> dict:
        return {
            "states": self.states,
            "edges": self.edges,
            "terminals": [str(t) for t in self.terminals],
            "errors": [str(t) for t in self.errors],
            "bad_terminals": [str(t) for t in self.bad_terminals],
            "truncated": self.truncated,
            "pruned": self.pruned,
            "deadlock_free": self.deadlock_free,
        }


def successors(p, grid=None) -> list[tuple[str, object]]:
    out = [(str(st), st.target) for st in step_instant_labelled(p)]
    times = auto_time_grid(p) if grid is None or grid == "auto" else [parse_time(t) for t in grid]
    for t in times:
        q = step_time(p, t)
        if q is not None and q != p:
            out.append((f"R-Time t={format_time(t)}", q))
    return out


def explore(p, depth: int = 14, grid="auto", policy: str = "bfs",
            prune: Callable | None = None) -> ExplorationReport:
    """Bounded search over instant and time reductions."""
    root = cong_normalize(p)
    rep = ExplorationReport()
    rep.parents[root] = None
    work = deque([(root, 0)])
    while work:
        cur, d = work.popleft() if policy == "bfs" else work.pop()
        rep.states += 1
        if has_error(cur):
            rep.errors.append(cur)
            continue
        if prune is not None and prune(cur):
            rep.pruned += 1
            continue
        succ = successors(cur, grid)
        instant = [s for s in succ if not s[0].startswith("R-Time")]
        if not instant and is_time_fixpoint(cur):
            rep.terminals.append(cur)
            if not is_clean_residue(cur):
                rep.bad_terminals.append(cur)
            continue
        if not succ:
            # time can pass but never changes anything observable on the grid
            rep.terminals.append(cur)
            if not is_clean_residue(cur):
                rep.bad_terminals.append(cur)
            continue
        if d >= depth:
            rep.truncated += 1
            continue
        for lab, nxt in succ:
            rep.edges += 1
            if nxt not in rep.parents:
                rep.parents[nxt] = (cur, lab)
                work.append((nxt, d + 1))
    return rep


# -- S-expression syntax ------------------------------------------------------------------------

_SEXP_TOKEN = re.compile(r'\s*(?:;[^\n]*\n?\s*)*(\(|\)|"[^"]*"|[^\s()";]+)')


def _read_sexp(text: str):
    toks = []
    pos = 0
    text = text.rstrip()
    while pos < len(text):
        m = _SEXP_TOKEN.match(text, pos)
        if not m or m.end() == pos:
            rest = text[pos:].strip()
            if not rest or rest.startswith(";"):
                break
            raise ProcessSyntaxError(f"cannot read process text near {text[pos:pos + 20]!r}")
        toks.append(m.group(1))
        pos = m.end()
        # skip trailing comments/whitespace
        while pos < len(text) and (text[pos].isspace() or text[pos] == ";"):
            if text[pos] == ";":
                nl = text.find("\n", pos)
                pos = len(text) if nl < 0 else nl + 1
            else:
                pos += 1
    stack: list[list] = [[]]
    for tok in toks:
        if tok == "(":
            stack.append([])
        elif tok == ")":
            if len(stack) == 1:
                raise ProcessSyntaxError("unbalanced ')'")
            done = stack.pop()
            stack[-1].append(done)
        else:
            stack[-1].append(tok[1:-1] if tok.startswith('"') else tok)
    if len(stack) != 1:
        raise ProcessSyntaxError("unbalanced '('")
    return stack[0]


def _chan(tok):
    if not isinstance(tok, str):
        raise ProcessSyntaxError(f"expected a channel, got {tok!r}")
    if "[" in tok:
        if not tok.endswith("]"):
            raise ProcessSyntaxError(f"malformed endpoint {tok!r}")
        s, r = tok[:-1].split("[", 1)
        return Endpoint(s, r)
    return Variable(tok)


def _timeout(tok):
    if tok in ("inf", "∞"):
        return INF
    try:
        return parse_time(tok)
    except Exception as exc:
        raise ProcessSyntaxError(f"bad timeout {tok!r}") from exc


def _split_kw(items: list) -> tuple[list, dict]:
    pos, kw = [], {}
    i = 0
    while i < len(items):
        it = items[i]
        if isinstance(it, str) and it.startswith(":") and len(it) > 1:
            if i + 1 >= len(items):
                raise ProcessSyntaxError(f"keyword {it} needs a value")
            kw[it[1:]] = items[i + 1]
            i += 2
        else:
            pos.append(it)
            i += 1
    return pos, kw


def _proc(x):
    if isinstance(x, str):
        if x in ("0", "nil"):
            return NIL
        if x == "err":
            return Err()
        raise ProcessSyntaxError(f"unexpected atom {x!r}")
    if not x:
        raise ProcessSyntaxError("empty form")
    head, args = x[0], x[1:]
    args, kw = _split_kw(args)
    try:
        if head in ("nil", "0"):
            return NIL
        if head == "err":
            return Err()
        if head == "par":
            return Par(tuple(_proc(a) for a in args)) if len(args) > 1 else (_proc(args[0]) if args else NIL)
        if head in ("new", "restrict"):
            return Restrict(args[0], _proc(args[1]))
        if head in ("send", "sel"):
            chan, to, label, timeout = args[0], args[1], args[2], args[3]
            cont = _proc(args[4]) if len(args) > 4 else NIL
            payload = _chan(kw["payload"]) if "payload" in kw else None
            return TimedSelect(_chan(chan), to, label, payload, cont, _timeout(timeout))
        if head in ("recv", "branch"):
            chan, frm, timeout = args[0], args[1], args[2]
            arms = []
            for a in args[3:]:
                if not isinstance(a, list) or not a:
                    raise ProcessSyntaxError(f"malformed arm {a!r}")
                if len(a) == 1:
                    arms.append(Arm(a[0], None, NIL))
                elif len(a) == 2:
                    arms.append(Arm(a[0], None, _proc(a[1])))
                else:
                    binder, role = (a[1].split(":", 1) + [None])[:2]
                    arms.append(Arm(a[0], binder, _proc(a[2]), role))
            return TimedBranch(_chan(chan), frm, tuple(arms), _timeout(timeout))
        if head == "delay":
            return DelayConstraint(parse_constraint(args[0]), _proc(args[1]) if len(args) > 1 else NIL)
        if head == "wait":
            return DelayExact(parse_time(args[0]), _proc(args[1]) if len(args) > 1 else NIL)
        if head == "failed":
            return Failed(_proc(args[0]))
        if head == "try":
            return TryCatch(_proc(args[0]), _proc(args[1]) if len(args) > 1 else NIL)
        if head == "cancel":
            return Cancel(_chan(args[0]), _proc(args[1]) if len(args) > 1 else NIL)
        if head == "kill":
            return Kill(args[0])
        if head == "queue":
            msgs = []
            for m in args[2:]:
                if not isinstance(m, list) or len(m) not in (2, 3):
                    raise ProcessSyntaxError(f"malformed message {m!r}")
                msgs.append(Msg(m[0], m[1], _chan(m[2]) if len(m) == 3 else None))
            return Queue(args[0], args[1], tuple(msgs))
        if head == "def":
            sig = args[0]
            if not isinstance(sig, list) or not sig:
                raise ProcessSyntaxError("def needs (Name params...)")
            return Def(sig[0], tuple(sig[1:]), _proc(args[1]), _proc(args[2]) if len(args) > 2 else NIL)
        if head == "call":
            return Call(args[0], tuple(_chan(a) for a in args[1:]))
    except IndexError as exc:
        raise ProcessSyntaxError(f"too few arguments in ({head} ...)") from exc
    except ValueError as exc:
        if isinstance(exc, ProcessSyntaxError):
            raise
        raise ProcessSyntaxError(str(exc)) from exc
    raise ProcessSyntaxError(f"unknown form {head!r}")


def parse_process(text: str):
    """Read a process from the S-expression syntax (several top-level forms run in parallel)."""
    forms = _read_sexp(text)
    if not forms:
        raise ProcessSyntaxError("no process in input")
    procs = [_proc(f) for f in forms]
    return procs[0] if len(procs) == 1 else Par(tuple(procs))


def to_sexp(p) -> str:
    """Inverse of parse_process for source-level and runtime terms."""
    if isinstance(p, Nil):
        return "nil"
    if isinstance(p, Err):
        return "(err)"
    if isinstance(p, Par):
        return "(par " + " ".join(to_sexp(q) for q in p.procs) + ")"
    if isinstance(p, Restrict):
        return f"(new {p.session} {to_sexp(p.body)})"
    if isinstance(p, TimedSelect):
        pl = f" :payload {p.payload}" if p.payload is not None else ""
        return f"(send {p.chan} {p.to} {p.label} {_sexp_time(p.timeout)} {to_sexp(p.cont)}{pl})"
    if isinstance(p, TimedBranch):
        arms = []
        for a in p.arms:
            if a.binder is None:
                arms.append(f"({a.label} {to_sexp(a.cont)})")
            else:
                b = a.binder + (f":{a.binder_role}" if a.binder_role else "")
                arms.append(f"({a.label} {b} {to_sexp(a.cont)})")
        return f"(recv {p.chan} {p.frm} {_sexp_time(p.timeout)} {' '.join(arms)})"
    if isinstance(p, DelayConstraint):
        return f'(delay "{render_constraint(p.constraint)}" {to_sexp(p.cont)})'
    if isinstance(p, DelayExact):
        return f"(wait {format_time(p.t)} {to_sexp(p.cont)})"
    if isinstance(p, Failed):
        return f"(failed {to_sexp(p.proc)})"
    if isinstance(p, TryCatch):
        return f"(try {to_sexp(p.body)} {to_sexp(p.handler)})"
    if isinstance(p, Cancel):
        return f"(cancel {p.chan} {to_sexp(p.cont)})"
    if isinstance(p, Kill):
        return f"(kill {p.session})"
    if isinstance(p, Queue):
        ms = " ".join(f"({m.to} {m.label}{' ' + str(m.payload) if m.payload is not None else ''})"
                      for m in p.messages)
        return f"(queue {p.session} {p.owner}{' ' + ms if ms else ''})"
    if isinstance(p, Def):
        return f"(def ({' '.join((p.name,) + tuple(p.params))}) {to_sexp(p.body)} {to_sexp(p.cont)})"
    if isinstance(p, Call):
        return f"(call {' '.join([p.name] + [str(a) for a in p.args])})"
    raise TypeError(p)


def _sexp_time(n) -> str:
    return "inf" if n == INF else format_time(n)
