"""Channels, typing-environment entries and typing environments."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator, Mapping

from .timecore import Valuation
from .types import (
    End,
    local_from_json,
    local_to_json,
    queue_from_json,
    queue_to_json,
    render_queue,
)


@dataclass(frozen=True, order=True)
class Endpoint:
    session: str
    role: str

    def __str__(self):
        return f"{self.session}[{self.role}]"


@dataclass(frozen=True, order=True)
class Variable:
    name: str

    def __str__(self):
        return self.name


Channel = Endpoint | Variable


def channel_key(c) -> tuple:
    return (0, c.session, c.role) if isinstance(c, Endpoint) else (1, c.name, "")


@dataclass(frozen=True)
class SessionEntry:
    nu: Valuation
    type: object

    def __str__(self):
        return f"({self.nu}, {self.type})"


@dataclass(frozen=True)
class QueueEntry:
    queue: tuple = ()

    def __str__(self):
        return render_queue(self.queue)


@dataclass(frozen=True)
class CombinedEntry:
    nu: Valuation
    type: object
    queue: tuple = ()

    def __str__(self):
        return f"(({self.nu}, {self.type}); {render_queue(self.queue)})"

    @property
    def session(self) -> SessionEntry:
        return SessionEntry(self.nu, self.type)


Entry = SessionEntry | QueueEntry | CombinedEntry


def session_part(e):
    if isinstance(e, SessionEntry):
        return e
    if isinstance(e, CombinedEntry):
        return SessionEntry(e.nu, e.type)
    return None


def queue_part(e):
    if isinstance(e, QueueEntry):
        return e.queue
    if isinstance(e, CombinedEntry):
        return e.queue
    return None


def with_queue(e, queue: tuple):
    if isinstance(e, SessionEntry):
        return CombinedEntry(e.nu, e.type, tuple(queue))
    if isinstance(e, QueueEntry):
        return QueueEntry(tuple(queue))
    return CombinedEntry(e.nu, e.type, tuple(queue))


def with_session(e, nu, t):
    if isinstance(e, (QueueEntry, CombinedEntry)):
        return CombinedEntry(nu, t, queue_part(e))
    return SessionEntry(nu, t)


def fuse(a, b):
    """Compose two entries for the same channel (session with queue)."""
    if isinstance(a, SessionEntry) and isinstance(b, QueueEntry):
        return CombinedEntry(a.nu, a.type, b.queue)
    if isinstance(a, QueueEntry) and isinstance(b, SessionEntry):
        return CombinedEntry(b.nu, b.type, a.queue)
    raise CompositionError(f"cannot compose {a} with {b}")


class CompositionError(ValueError):
    pass


class TypingEnv(Mapping):
    """Immutable map from channels to entries."""

    __slots__ = ("_map", "_key")

    def __init__(self, entries: Mapping | Iterable = ()):
        pairs = entries.items() if isinstance(entries, Mapping) else entries
        self._map = dict(pairs)
        self._key = tuple(sorted(self._map.items(), key=lambda kv: channel_key(kv[0])))

    def __getitem__(self, c):
        return self._map[c]

    def __iter__(self) -> Iterator:
        return iter(k for k, _ in self._key)

    def __len__(self):
        return len(self._map)

    def __hash__(self):
        return hash(self._key)

    def __eq__(self, other):
        if isinstance(other, TypingEnv):
            return self._key == other._key
        return NotImplemented

    def __repr__(self):
        return "{" + ", ".join(f"{k}: {v}" for k, v in self._key) + "}"

    def update(self, c, entry) -> "TypingEnv":
        m = dict(self._map)
        m[c] = entry
        return TypingEnv(m)

    def remove(self, *cs) -> "TypingEnv":
        m = dict(self._map)
        for c in cs:
            m.pop(c, None)
        return TypingEnv(m)

    def compose(self, other: "TypingEnv") -> "TypingEnv":
        m = dict(self._map)
        for c, e in other.items():
            m[c] = fuse(m[c], e) if c in m else e
        return TypingEnv(m)

    def restrict_session(self, s: str) -> "TypingEnv":
        return TypingEnv({c: e for c, e in self._map.items() if isinstance(c, Endpoint) and c.session == s})

    def without_session(self, s: str) -> "TypingEnv":
        return TypingEnv({c: e for c, e in self._map.items() if not (isinstance(c, Endpoint) and c.session == s)})

    def sessions(self) -> set[str]:
        return {c.session for c in self._map if isinstance(c, Endpoint)}

    def advance(self, t) -> "TypingEnv":
        """Add t to every session valuation (variables included)."""
        m = {}
        for c, e in self._map.items():
            if isinstance(e, SessionEntry):
                m[c] = SessionEntry(e.nu.advance(t), e.type)
            elif isinstance(e, CombinedEntry):
                m[c] = CombinedEntry(e.nu.advance(t), e.type, e.queue)
            else:
                m[c] = e
        return TypingEnv(m)

    def to_json(self) -> dict:
        return {str(c): entry_to_json(e) for c, e in self._key}


def entry_to_json(e) -> dict:
    if isinstance(e, SessionEntry):
        return {"kind": "session", "nu": e.nu.to_json(), "type": local_to_json(e.type)}
    if isinstance(e, QueueEntry):
        return {"kind": "queue", "queue": queue_to_json(e.queue)}
    return {"kind": "combined", "nu": e.nu.to_json(), "type": local_to_json(e.type),
            "queue": queue_to_json(e.queue)}


def entry_from_json(d: Mapping):
    if d["kind"] == "session":
        return SessionEntry(Valuation.from_json(d["nu"]), local_from_json(d["type"]))
    if d["kind"] == "queue":
        return QueueEntry(queue_from_json(d["queue"]))
    return CombinedEntry(Valuation.from_json(d["nu"]), local_from_json(d["type"]), queue_from_json(d["queue"]))


def parse_channel(text: str):
    text = text.strip()
    if text.endswith("]") and "[" in text:
        s, r = text[:-1].split("[", 1)
        return Endpoint(s, r)
    return Variable(text)


def is_end_entry(e) -> bool:
    """Entry whose session part is End and whose queue part is empty."""
    if isinstance(e, SessionEntry):
        return isinstance(e.type, End)
    if isinstance(e, QueueEntry):
        return not e.queue
    return isinstance(e.type, End) and not e.queue
