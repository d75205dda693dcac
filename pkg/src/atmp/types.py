"""Sorts, timed global types, timed local types and queue types."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Union

from .timecore import (
    TRUE,
    Constraint,
    Eq,
    INF,
    MultiClockConstraint,
    And,
    Not,
    constraint_from_json,
    constraint_to_json,
    free_clocks,
    render_constraint,
    solution_set,
)

BASE_TAGS = ("unit", "int", "bool", "str")


class _Node:
    """Frozen dataclass nodes with a cached structural hash."""

    __slots__ = ()

    def __hash__(self):
        try:
            return object.__getattribute__(self, "_h")
        except AttributeError:
            h = hash((type(self).__name__,) + tuple(getattr(self, f) for f in self.__dataclass_fields__))
            object.__setattr__(self, "_h", h)
            return h


# -- sorts ---------------------------------------------------------------------


@dataclass(frozen=True, eq=True)
class Base(_Node):
    tag: str = "unit"

    def __post_init__(self):
        if self.tag not in BASE_TAGS:
            raise ValueError(f"unknown base sort {self.tag!r}")

    __hash__ = _Node.__hash__

    def __str__(self):
        return self.tag


@dataclass(frozen=True, eq=True)
class Delegation(_Node):
    guard: Constraint
    cont: "LocalType"

    __hash__ = _Node.__hash__

    def __str__(self):
        return f"⟨{render_constraint(self.guard)}, {self.cont}⟩"


Sort = Union[Base, Delegation]
UNIT = Base("unit")


# -- shared recursion nodes ------------------------------------------------------


@dataclass(frozen=True, eq=True)
class End(_Node):
    __hash__ = _Node.__hash__

    def __str__(self):
        return "End"


END = End()


@dataclass(frozen=True, eq=True)
class Var(_Node):
    name: str

    __hash__ = _Node.__hash__

    def __str__(self):
        return self.name


@dataclass(frozen=True, eq=True)
class Rec(_Node):
    var: str
    body: object

    __hash__ = _Node.__hash__

    def __str__(self):
        return f"μ{self.var}.{self.body}"


# -- global types ------------------------------------------------------------------


@dataclass(frozen=True, eq=True)
class Assertion(_Node):
    out_guard: Constraint = TRUE
    out_reset: frozenset = frozenset()
    in_guard: Constraint = TRUE
    in_reset: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "out_reset", frozenset(self.out_reset))
        object.__setattr__(self, "in_reset", frozenset(self.in_reset))

    __hash__ = _Node.__hash__

    def __str__(self):
        return "{" + ", ".join([
            render_constraint(self.out_guard), _render_reset(self.out_reset),
            render_constraint(self.in_guard), _render_reset(self.in_reset),
        ]) + "}"


@dataclass(frozen=True, eq=True)
class GBranch(_Node):
    label: str
    sort: Sort
    assertion: Assertion
    cont: "GlobalType"

    __hash__ = _Node.__hash__


def _sorted_branches(branches) -> tuple:
    items = tuple(sorted(branches, key=lambda b: b.label))
    if not items:
        raise ValueError("a choice needs at least one branch")
    labels = [b.label for b in items]
    if len(set(labels)) != len(labels):
        raise ValueError(f"duplicate labels in choice: {labels}")
    return items


@dataclass(frozen=True, eq=True)
class Comm(_Node):
    sender: str
    receiver: str
    branches: tuple

    def __post_init__(self):
        object.__setattr__(self, "branches", _sorted_branches(self.branches))

    __hash__ = _Node.__hash__

    def branch(self, label: str) -> GBranch:
        for b in self.branches:
            if b.label == label:
                return b
        raise KeyError(label)

    def labels(self) -> list[str]:
        return [b.label for b in self.branches]

    def __str__(self):
        return f"{self.sender}→{self.receiver}:" + _render_gbranches(self.branches)


@dataclass(frozen=True, eq=True)
class EnRoute(_Node):
    """A transmission that has been sent but not yet received."""

    sender: str
    receiver: str
    branches: tuple
    chosen: str

    def __post_init__(self):
        object.__setattr__(self, "branches", _sorted_branches(self.branches))
        if self.chosen not in [b.label for b in self.branches]:
            raise ValueError(f"chosen label {self.chosen!r} not among branches")

    __hash__ = _Node.__hash__

    branch = Comm.branch
    labels = Comm.labels

    def __str__(self):
        return f"{self.sender}⇝{self.receiver}:{self.chosen}:" + _render_gbranches(self.branches)


GlobalType = Union[Comm, EnRoute, Rec, Var, End]


def _render_gbranches(branches) -> str:
    inner = ", ".join(f"{b.label}({b.sort}){b.assertion}.{b.cont}" for b in branches)
    return "{" + inner + "}"


# -- local types -------------------------------------------------------------------


@dataclass(frozen=True, eq=True)
class LBranch(_Node):
    label: str
    sort: Sort
    guard: Constraint
    reset: frozenset
    cont: "LocalType"

    def __post_init__(self):
        object.__setattr__(self, "reset", frozenset(self.reset))

    __hash__ = _Node.__hash__


@dataclass(frozen=True, eq=True)
class IntChoice(_Node):
    partner: str
    branches: tuple

    def __post_init__(self):
        object.__setattr__(self, "branches", _sorted_branches(self.branches))

    __hash__ = _Node.__hash__
    branch = Comm.branch
    labels = Comm.labels

    def __str__(self):
        return f"{self.partner}⊕" + _render_lbranches(self.branches)


@dataclass(frozen=True, eq=True)
class ExtChoice(_Node):
    partner: str
    branches: tuple

    def __post_init__(self):
        object.__setattr__(self, "branches", _sorted_branches(self.branches))

    __hash__ = _Node.__hash__
    branch = Comm.branch
    labels = Comm.labels

    def __str__(self):
        return f"{self.partner}&" + _render_lbranches(self.branches)


LocalType = Union[IntChoice, ExtChoice, Rec, Var, End]
Choice = (IntChoice, ExtChoice)


def _render_reset(r: Iterable[str]) -> str:
    r = sorted(r)
    return ", ".join(f"{c}:=0" for c in r) if r else "∅"


def _render_lbranches(branches) -> str:
    def one(b):
        sort = "" if b.sort == UNIT else f"({b.sort})"
        return f"{b.label}{sort}{{{render_constraint(b.guard)}, {_render_reset(b.reset)}}}.{b.cont}"
    if len(branches) == 1:
        return one(branches[0])
    return "{" + ", ".join(one(b) for b in branches) + "}"


# -- queue types ---------------------------------------------------------------------


@dataclass(frozen=True, eq=True)
class MsgType(_Node):
    receiver: str
    label: str
    payload: Sort = UNIT

    __hash__ = _Node.__hash__

    def __str__(self):
        pay = "" if self.payload == UNIT else f"({self.payload})"
        return f"({self.receiver},{self.label}{pay})"


QueueType = tuple  # tuple[MsgType, ...]; () is the empty queue


def receivers(q: Iterable[MsgType]) -> frozenset[str]:
    return frozenset(m.receiver for m in q)


def render_queue(q: Iterable[MsgType]) -> str:
    q = tuple(q)
    return "·".join(str(m) for m in q) if q else "⊘"


# -- recursion helpers ----------------------------------------------------------------


def subst(t, var: str, repl):
    """Replace free occurrences of var in t by repl (repl is closed)."""
    if isinstance(t, Var):
        return repl if t.name == var else t
    if isinstance(t, End):
        return t
    if isinstance(t, Rec):
        if t.var == var:
            return t
        return Rec(t.var, subst(t.body, var, repl))
    if isinstance(t, Comm):
        return Comm(t.sender, t.receiver, tuple(
            GBranch(b.label, _subst_sort(b.sort, var, repl), b.assertion, subst(b.cont, var, repl))
            for b in t.branches))
    if isinstance(t, EnRoute):
        return EnRoute(t.sender, t.receiver, tuple(
            GBranch(b.label, _subst_sort(b.sort, var, repl), b.assertion, subst(b.cont, var, repl))
            for b in t.branches), t.chosen)
    if isinstance(t, (IntChoice, ExtChoice)):
        return type(t)(t.partner, tuple(
            LBranch(b.label, b.sort, b.guard, b.reset, subst(b.cont, var, repl)) for b in t.branches))
    raise TypeError(t)


def _subst_sort(s, var, repl):
    # payload types of global branches are closed local types; untouched
    return s


def unfold(t):
    """Unfold top-level recursion until a non-recursive node appears."""
    seen = 0
    while isinstance(t, Rec):
        t = subst(t.body, t.var, t)
        seen += 1
        if seen > 10_000:
            raise ValueError("unguarded recursion")
    return t


unfold_one = unfold


def free_vars(t, bound: frozenset = frozenset()) -> frozenset[str]:
    if isinstance(t, Var):
        return frozenset() if t.name in bound else frozenset([t.name])
    if isinstance(t, End):
        return frozenset()
    if isinstance(t, Rec):
        return free_vars(t.body, bound | {t.var})
    out = frozenset()
    for b in t.branches:
        out |= free_vars(b.cont, bound)
    return out


def roles(g) -> frozenset[str]:
    """Roles of a global type; the sender of an en-route message is excluded."""
    if isinstance(g, (End, Var)):
        return frozenset()
    if isinstance(g, Rec):
        return roles(g.body)
    out = frozenset([g.receiver]) if isinstance(g, EnRoute) else frozenset([g.sender, g.receiver])
    for b in g.branches:
        out |= roles(b.cont)
    return out


def all_roles(g) -> frozenset[str]:
    """Every role mentioned anywhere, senders of en-route nodes included."""
    if isinstance(g, (End, Var)):
        return frozenset()
    if isinstance(g, Rec):
        return all_roles(g.body)
    out = frozenset([g.sender, g.receiver])
    for b in g.branches:
        out |= all_roles(b.cont)
    return out


def global_clocks(g) -> frozenset[str]:
    if isinstance(g, (End, Var)):
        return frozenset()
    if isinstance(g, Rec):
        return global_clocks(g.body)
    out = frozenset()
    for b in g.branches:
        a = b.assertion
        out |= free_clocks(a.out_guard) | free_clocks(a.in_guard) | a.out_reset | a.in_reset
        out |= global_clocks(b.cont)
    return out


def local_clocks(t) -> frozenset[str]:
    if isinstance(t, (End, Var)):
        return frozenset()
    if isinstance(t, Rec):
        return local_clocks(t.body)
    out = frozenset()
    for b in t.branches:
        out |= free_clocks(b.guard) | b.reset | local_clocks(b.cont)
    return out


def infer_ownership(g) -> tuple[dict[str, frozenset], list[str]]:
    """Attribute each clock to the roles whose actions mention it."""
    owners: dict[str, set] = {}

    def walk(t, seen):
        if isinstance(t, (End, Var)):
            return
        if isinstance(t, Rec):
            walk(t.body, seen)
            return
        for b in t.branches:
            a = b.assertion
            for c in free_clocks(a.out_guard) | a.out_reset:
                owners.setdefault(c, set()).add(t.sender)
            for c in free_clocks(a.in_guard) | a.in_reset:
                owners.setdefault(c, set()).add(t.receiver)
            walk(b.cont, seen)

    walk(g, set())
    conflicts = []
    own: dict[str, set] = {}
    for c, rs in sorted(owners.items()):
        if len(rs) > 1:
            conflicts.append(f"clock {c} is used by several roles: {', '.join(sorted(rs))}")
        for r in rs:
            own.setdefault(r, set()).add(c)
    return {r: frozenset(cs) for r, cs in own.items()}, conflicts


# -- well-formedness ---------------------------------------------------------------------


@dataclass
class Failure:
    kind: str
    message: str

    def to_json(self) -> dict:
        return {"kind": self.kind, "message": self.message}


@dataclass
class WellFormedReport:
    failures: list = field(default_factory=list)
    ownership: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.failures

    def add(self, kind: str, message: str) -> None:
        self.failures.append(Failure(kind, message))

    def kinds(self) -> set[str]:
        return {f.kind for f in self.failures}

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "failures": [f.to_json() for f in self.failures],
            "ownership": {r: sorted(cs) for r, cs in sorted(self.ownership.items())},
        }


def check_structure(t, report: WellFormedReport, where: str = "type") -> None:
    """Closedness, guardedness, self-communication and label uniqueness."""

    def walk(t, bound: frozenset, unguarded: frozenset):
        if isinstance(t, End):
            return
        if isinstance(t, Var):
            if t.name not in bound:
                report.add("unclosed", f"free recursion variable {t.name} in {where}")
            elif t.name in unguarded:
                report.add("unguarded", f"recursion variable {t.name} is not guarded in {where}")
            return
        if isinstance(t, Rec):
            walk(t.body, bound | {t.var}, unguarded | {t.var})
            return
        if not t.branches:
            report.add("empty-choice", f"empty index set in {where}")
        labels = [b.label for b in t.branches]
        if len(set(labels)) != len(labels):
            report.add("duplicate-labels", f"duplicate labels {labels} in {where}")
        if isinstance(t, (Comm, EnRoute)) and t.sender == t.receiver:
            report.add("self-communication", f"role {t.sender} communicates with itself")
        for b in t.branches:
            if isinstance(b.sort, Delegation):
                check_structure(b.sort.cont, report, where=f"payload of {b.label}")
            walk(b.cont, bound, frozenset())

    walk(t, frozenset(), frozenset())


def check_well_formed(g, own: Mapping[str, Iterable[str]] | None = None) -> WellFormedReport:
    report = WellFormedReport()
    check_structure(g, report, "global type")
    inferred, conflicts = infer_ownership(g)
    if own is None:
        for msg in conflicts:
            report.add("ownership", msg)
        ownership = inferred
    else:
        ownership = {r: frozenset(cs) for r, cs in own.items()}
        seen: dict[str, str] = {}
        for r, cs in sorted(ownership.items()):
            for c in cs:
                if c in seen:
                    report.add("ownership", f"clock {c} is owned by both {seen[c]} and {r}")
                seen[c] = r
    report.ownership = ownership
    _check_actions(g, ownership, report, explicit=own is not None)
    _check_infinite_satisfiability(g, report)
    return report


def _check_actions(g, ownership, report, explicit: bool) -> None:
    def walk(t):
        if isinstance(t, (End, Var)):
            return
        if isinstance(t, Rec):
            walk(t.body)
            return
        for b in t.branches:
            a = b.assertion
            for side, guard in (("output", a.out_guard), ("input", a.in_guard)):
                if len(free_clocks(guard)) > 1:
                    report.add("multi-clock", f"{side} guard of {b.label} mentions several clocks")
            if explicit:
                so = ownership.get(t.sender, frozenset())
                ro = ownership.get(t.receiver, frozenset())
                bad_out = (free_clocks(a.out_guard) | a.out_reset) - so
                bad_in = (free_clocks(a.in_guard) | a.in_reset) - ro
                if bad_out:
                    report.add("ownership", f"{t.sender} uses clocks {sorted(bad_out)} it does not own in {b.label}")
                if bad_in:
                    report.add("ownership", f"{t.receiver} uses clocks {sorted(bad_in)} it does not own in {b.label}")
            walk(b.cont)

    walk(g)


def _has_upper_bound(d: Constraint) -> bool:
    if _has_eq(d):
        return True
    try:
        c = next(iter(free_clocks(d)), None)
        s = solution_set(d, c)
    except MultiClockConstraint:
        return True
    return bool(s.intervals) and s.intervals[-1].hi != INF


def _has_eq(d: Constraint) -> bool:
    if isinstance(d, Eq):
        return True
    if isinstance(d, Not):
        return _has_eq(d.arg)
    if isinstance(d, And):
        return _has_eq(d.left) or _has_eq(d.right)
    return False


def _check_infinite_satisfiability(g, report: WellFormedReport) -> None:
    def recs(t):
        if isinstance(t, Rec):
            yield t
            yield from recs(t.body)
        elif isinstance(t, (Comm, EnRoute)):
            for b in t.branches:
                yield from recs(b.cont)

    for r in recs(g):
        if _restrictive_body(r.body) and not _all_roles_reset(r):
            report.add(
                "infinite-satisfiability",
                f"loop {r.var} uses resets, equalities or upper bounds but not every role resets in each iteration",
            )


def _restrictive_body(t) -> bool:
    if isinstance(t, (End, Var)):
        return False
    if isinstance(t, Rec):
        return _restrictive_body(t.body)
    for b in t.branches:
        a = b.assertion
        if a.out_reset or a.in_reset or _has_upper_bound(a.out_guard) or _has_upper_bound(a.in_guard):
            return True
        if _restrictive_body(b.cont):
            return True
    return False


def _all_roles_reset(r: Rec) -> bool:
    participants = roles(r.body)

    def walk(t, resetters: frozenset) -> bool:
        if isinstance(t, End):
            return True
        if isinstance(t, Var):
            if t.name != r.var:
                return True
            return participants <= resetters
        if isinstance(t, Rec):
            return walk(t.body, resetters)
        for b in t.branches:
            a = b.assertion
            nxt = resetters
            if a.out_reset:
                nxt = nxt | {t.sender}
            if a.in_reset:
                nxt = nxt | {t.receiver}
            if not walk(b.cont, nxt):
                return False
        return True

    return walk(r.body, frozenset())


def check_local(t) -> WellFormedReport:
    report = WellFormedReport()
    check_structure(t, report, "local type")
    return report


# -- JSON -------------------------------------------------------------------------------


def sort_to_json(s: Sort) -> dict:
    if isinstance(s, Base):
        return {"sort": "base", "tag": s.tag}
    return {"sort": "delegation", "guard": constraint_to_json(s.guard), "type": local_to_json(s.cont)}


def sort_from_json(d: Mapping) -> Sort:
    if d["sort"] == "base":
        return Base(d["tag"])
    return Delegation(constraint_from_json(d["guard"]), local_from_json(d["type"]))


def global_to_json(g) -> dict:
    if isinstance(g, End):
        return {"node": "end"}
    if isinstance(g, Var):
        return {"node": "var", "name": g.name}
    if isinstance(g, Rec):
        return {"node": "rec", "var": g.var, "body": global_to_json(g.body)}
    out = {
        "node": "comm" if isinstance(g, Comm) else "enroute",
        "from": g.sender,
        "to": g.receiver,
        "branches": [
            {
                "label": b.label,
                "sort": sort_to_json(b.sort),
                "out_guard": constraint_to_json(b.assertion.out_guard),
                "out_reset": sorted(b.assertion.out_reset),
                "in_guard": constraint_to_json(b.assertion.in_guard),
                "in_reset": sorted(b.assertion.in_reset),
                "cont": global_to_json(b.cont),
            }
            for b in g.branches
        ],
    }
    if isinstance(g, EnRoute):
        out["chosen"] = g.chosen
    return out


def global_from_json(d: Mapping):
    node = d["node"]
    if node == "end":
        return END
    if node == "var":
        return Var(d["name"])
    if node == "rec":
        return Rec(d["var"], global_from_json(d["body"]))
    branches = tuple(
        GBranch(
            b["label"],
            sort_from_json(b["sort"]),
            Assertion(
                constraint_from_json(b["out_guard"]), frozenset(b["out_reset"]),
                constraint_from_json(b["in_guard"]), frozenset(b["in_reset"]),
            ),
            global_from_json(b["cont"]),
        )
        for b in d["branches"]
    )
    if node == "comm":
        return Comm(d["from"], d["to"], branches)
    if node == "enroute":
        return EnRoute(d["from"], d["to"], branches, d["chosen"])
    raise ValueError(f"unknown global node {node!r}")


def local_to_json(t) -> dict:
    if isinstance(t, End):
        return {"node": "end"}
    if isinstance(t, Var):
        return {"node": "var", "name": t.name}
    if isinstance(t, Rec):
        return {"node": "rec", "var": t.var, "body": local_to_json(t.body)}
    return {
        "node": "select" if isinstance(t, IntChoice) else "offer",
        "partner": t.partner,
        "branches": [
            {
                "label": b.label,
                "sort": sort_to_json(b.sort),
                "guard": constraint_to_json(b.guard),
                "reset": sorted(b.reset),
                "cont": local_to_json(b.cont),
            }
            for b in t.branches
        ],
    }


def local_from_json(d: Mapping):
    node = d["node"]
    if node == "end":
        return END
    if node == "var":
        return Var(d["name"])
    if node == "rec":
        return Rec(d["var"], local_from_json(d["body"]))
    branches = tuple(
        LBranch(b["label"], sort_from_json(b["sort"]), constraint_from_json(b["guard"]),
                frozenset(b["reset"]), local_from_json(b["cont"]))
        for b in d["branches"]
    )
    if node == "select":
        return IntChoice(d["partner"], branches)
    if node == "offer":
        return ExtChoice(d["partner"], branches)
    raise ValueError(f"unknown local node {node!r}")


def queue_to_json(q: Iterable[MsgType]) -> list:
    return [{"to": m.receiver, "label": m.label, "payload": sort_to_json(m.payload)} for m in q]


def queue_from_json(data: Iterable[Mapping]) -> tuple:
    return tuple(MsgType(m["to"], m["label"], sort_from_json(m["payload"])) for m in data)
