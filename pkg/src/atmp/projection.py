"""Projection of timed global types onto roles, merge, and queue environments."""

from __future__ import annotations

from .types import (
    END,
    Comm,
    End,
    EnRoute,
    ExtChoice,
    IntChoice,
    LBranch,
    MsgType,
    Rec,
    Var,
    free_vars,
    roles,
)


class NotProjectable(ValueError):
    pass


class NotMergeable(NotProjectable):
    pass


def merge(t1, t2):
    """Binary merge of two local types."""
    if t1 == t2:
        return t1
    if isinstance(t1, ExtChoice) and isinstance(t2, ExtChoice):
        if t1.partner != t2.partner:
            raise NotMergeable(f"external choices from different partners {t1.partner} and {t2.partner}")
        right = {b.label: b for b in t2.branches}
        out = []
        for b in t1.branches:
            other = right.pop(b.label, None)
            if other is None:
                out.append(b)
                continue
            if (b.sort, b.guard, b.reset) != (other.sort, other.guard, other.reset):
                raise NotMergeable(f"label {b.label} appears with different payload or time assertion")
            out.append(LBranch(b.label, b.sort, b.guard, b.reset, merge(b.cont, other.cont)))
        out.extend(right.values())
        return ExtChoice(t1.partner, tuple(out))
    if isinstance(t1, IntChoice) and isinstance(t2, IntChoice):
        if t1.partner != t2.partner:
            raise NotMergeable(f"internal choices towards different partners {t1.partner} and {t2.partner}")
        if t1.labels() != t2.labels():
            raise NotMergeable(f"internal choices with different labels {t1.labels()} and {t2.labels()}")
        out = []
        for b, other in zip(t1.branches, t2.branches):
            if (b.sort, b.guard, b.reset) != (other.sort, other.guard, other.reset):
                raise NotMergeable(f"label {b.label} appears with different payload or time assertion")
            out.append(LBranch(b.label, b.sort, b.guard, b.reset, merge(b.cont, other.cont)))
        return IntChoice(t1.partner, tuple(out))
    if isinstance(t1, Rec) and isinstance(t2, Rec) and t1.var == t2.var:
        return Rec(t1.var, merge(t1.body, t2.body))
    if isinstance(t1, Var) and isinstance(t2, Var) and t1.name == t2.name:
        return t1
    if isinstance(t1, End) and isinstance(t2, End):
        return END
    raise NotMergeable(f"cannot merge {t1} with {t2}")


def merge_all(types):
    types = list(types)
    if not types:
        raise NotMergeable("empty merge")
    out = types[0]
    for t in types[1:]:
        out = merge(out, t)
    return out


def project(g, p: str):
    """Local type of role p, or NotProjectable."""
    if isinstance(g, End):
        return END
    if isinstance(g, Var):
        return g
    if isinstance(g, Rec):
        if p in roles(g.body) or free_vars(g):
            return Rec(g.var, project(g.body, p))
        return END
    if isinstance(g, Comm):
        if p == g.sender:
            return IntChoice(g.receiver, tuple(
                LBranch(b.label, b.sort, b.assertion.out_guard, b.assertion.out_reset, project(b.cont, p))
                for b in g.branches))
        if p == g.receiver:
            return _receiver_view(g, p)
        return merge_all(project(b.cont, p) for b in g.branches)
    if isinstance(g, EnRoute):
        if p == g.sender:
            return project(g.branch(g.chosen).cont, p)
        if p == g.receiver:
            return _receiver_view(g, p)
        return merge_all(project(b.cont, p) for b in g.branches)
    raise TypeError(g)


def _receiver_view(g, p):
    return ExtChoice(g.sender, tuple(
        LBranch(b.label, b.sort, b.assertion.in_guard, b.assertion.in_reset, project(b.cont, p))
        for b in g.branches))


def try_project(g, p: str):
    try:
        return project(g, p)
    except NotProjectable:
        return None


def queue_env_of(g, p: str) -> tuple:
    """Messages sent by p that are still in flight along the runtime spine of g."""
    out: list[MsgType] = []
    t = g
    while True:
        if isinstance(t, EnRoute):
            b = t.branch(t.chosen)
            if t.sender == p:
                out.append(MsgType(t.receiver, t.chosen, b.sort))
            t = b.cont
            continue
        if isinstance(t, Comm):
            # en-route nodes only ever appear before plain communications
            # on a runtime spine, except under context steps where every
            # branch carries the same in-flight prefix
            conts = [queue_env_of(b.cont, p) for b in t.branches]
            first = conts[0]
            if any(c != first for c in conts[1:]):
                raise NotProjectable(f"branches of {t.sender}→{t.receiver} disagree on in-flight messages of {p}")
            out.extend(first)
            return tuple(out)
        return tuple(out)
