"""Coinductive subtyping for local types, sorts, queues and environment entries."""

from __future__ import annotations

from .env import CombinedEntry, QueueEntry, SessionEntry
from .types import Base, Delegation, End, ExtChoice, IntChoice, Rec, Var, unfold


class ShapeMismatch(ValueError):
    pass


def subtype(t1, t2) -> bool:
    """Decide t1 ⩽ t2 (fewer external, more internal branches on the left)."""
    return _Checker().sub(t1, t2)


class _Checker:
    def __init__(self):
        self.assumed: set = set()

    def sub(self, t1, t2) -> bool:
        if t1 is t2:
            return True
        if isinstance(t1, Rec) or isinstance(t2, Rec):
            key = (t1, t2)
            if key in self.assumed:
                return True
            self.assumed.add(key)
            if isinstance(t1, Rec):
                return self.sub(unfold(t1), t2)
            return self.sub(t1, unfold(t2))
        if isinstance(t1, End) and isinstance(t2, End):
            return True
        if isinstance(t1, Var) or isinstance(t2, Var):
            return isinstance(t1, Var) and isinstance(t2, Var) and t1.name == t2.name
        if isinstance(t1, IntChoice) and isinstance(t2, IntChoice):
            if t1.partner != t2.partner:
                return False
            left = {b.label: b for b in t1.branches}
            for b2 in t2.branches:
                b1 = left.get(b2.label)
                if b1 is None or b1.guard != b2.guard or b1.reset != b2.reset:
                    return False
                if not self.sort(b2.sort, b1.sort) or not self.sub(b1.cont, b2.cont):
                    return False
            return True
        if isinstance(t1, ExtChoice) and isinstance(t2, ExtChoice):
            if t1.partner != t2.partner:
                return False
            right = {b.label: b for b in t2.branches}
            for b1 in t1.branches:
                b2 = right.get(b1.label)
                if b2 is None or b1.guard != b2.guard or b1.reset != b2.reset:
                    return False
                if not self.sort(b1.sort, b2.sort) or not self.sub(b1.cont, b2.cont):
                    return False
            return True
        return False

    def sort(self, s1, s2) -> bool:
        if isinstance(s1, Base) and isinstance(s2, Base):
            return s1.tag == s2.tag
        if isinstance(s1, Delegation) and isinstance(s2, Delegation):
            return s1.guard == s2.guard and self.sub(s1.cont, s2.cont)
        return False


def subtype_sort(s1, s2) -> bool:
    return _Checker().sort(s1, s2)


def subtype_queue(q1, q2) -> bool:
    """Positionwise: same receiver and label, payload of the right ⩽ left."""
    q1, q2 = tuple(q1), tuple(q2)
    if len(q1) != len(q2):
        return False
    for m1, m2 in zip(q1, q2):
        if m1.receiver != m2.receiver or m1.label != m2.label:
            return False
        if not subtype_sort(m2.payload, m1.payload):
            return False
    return True


def queue_normal_form(q) -> tuple:
    """Canonical representative modulo swapping messages to distinct receivers."""
    return tuple(sorted(q, key=lambda m: m.receiver))


def congruent_queue(q1, q2) -> bool:
    return queue_normal_form(q1) == queue_normal_form(q2)


def subtype_entry(e1, e2) -> bool:
    if type(e1) is not type(e2):
        raise ShapeMismatch(f"cannot compare {type(e1).__name__} with {type(e2).__name__}")
    if isinstance(e1, SessionEntry):
        return e1.nu == e2.nu and subtype(e1.type, e2.type)
    if isinstance(e1, QueueEntry):
        return subtype_queue(e1.queue, e2.queue)
    return e1.nu == e2.nu and subtype(e1.type, e2.type) and subtype_queue(e1.queue, e2.queue)


def subtype_entry_mod(e1, e2) -> bool:
    """Entry subtyping up to queue congruence."""
    if type(e1) is not type(e2):
        return False
    if isinstance(e1, SessionEntry):
        return subtype_entry(e1, e2)
    if isinstance(e1, QueueEntry):
        return subtype_queue(queue_normal_form(e1.queue), queue_normal_form(e2.queue))
    return (e1.nu == e2.nu and subtype(e1.type, e2.type)
            and subtype_queue(queue_normal_form(e1.queue), queue_normal_form(e2.queue)))


def congruent_entry(e1, e2) -> bool:
    if type(e1) is not type(e2):
        return False
    if isinstance(e1, SessionEntry):
        return e1 == e2
    if isinstance(e1, QueueEntry):
        return congruent_queue(e1.queue, e2.queue)
    return e1.nu == e2.nu and e1.type == e2.type and congruent_queue(e1.queue, e2.queue)


def subtype_env(g1, g2) -> bool:
    """Pointwise entry subtyping over equal domains (up to queue congruence)."""
    if set(g1) != set(g2):
        return False
    return all(subtype_entry_mod(g1[c], g2[c]) for c in g1)


def congruent_env(g1, g2) -> bool:
    if set(g1) != set(g2):
        return False
    return all(congruent_entry(g1[c], g2[c]) for c in g1)


def normalize_env(g):
    """Representative of the congruence class of an environment."""
    from .env import TypingEnv

    out = {}
    for c, e in g.items():
        if isinstance(e, QueueEntry):
            out[c] = QueueEntry(queue_normal_form(e.queue))
        elif isinstance(e, CombinedEntry):
            out[c] = CombinedEntry(e.nu, e.type, queue_normal_form(e.queue))
        else:
            out[c] = e
    return TypingEnv(out)
