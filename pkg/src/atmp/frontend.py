"""Timed protocol language: parser, printer, protocol checks and artifact emission."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from fractions import Fraction

from .projection import NotProjectable, project
from .timecore import INF, format_time, parse_time, render_constraint, window
from .types import (
    BASE_TAGS,
    END,
    Assertion,
    Base,
    Comm,
    End,
    ExtChoice,
    GBranch,
    IntChoice,
    Rec,
    Var,
    check_well_formed,
    local_to_json,
    roles as roles_of,
)


class ParseError(ValueError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}" if line else message)
        self.message = message
        self.line = line
        self.col = col

    def to_json(self) -> dict:
        return {"error": "parse", "message": self.message, "line": self.line, "column": self.col}


class ScopeError(ParseError):
    def to_json(self) -> dict:
        return {"error": "scope", "message": self.message, "line": self.line, "column": self.col}


# -- syntax tree -----------------------------------------------------------------------------


@dataclass(frozen=True)
class Timing:
    lo: Fraction
    hi: object
    lo_closed: bool
    hi_closed: bool
    clock: str
    resets: tuple = ()

    def constraint(self, clock: str):
        return window(clock, self.lo, self.hi, self.lo_closed, self.hi_closed)

    def render(self) -> str:
        lb = "[" if self.lo_closed else "("
        rb = "]" if self.hi_closed else ")"
        hi = "inf" if self.hi == INF else format_time(self.hi)
        return (f"within {lb}{format_time(self.lo)};{hi}{rb} using {self.clock} "
                f"and resetting ({', '.join(self.resets)})")


@dataclass(frozen=True)
class Message:
    label: str
    payload: str
    sender: str
    receiver: str
    send: Timing
    recv: Timing | None = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Choice:
    role: str
    blocks: tuple
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class RecStmt:
    name: str
    body: tuple
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Continue:
    name: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ProtocolFile:
    name: str
    roles: tuple
    body: tuple

    def global_type(self):
        return to_global(self)


# -- lexer -------------------------------------------------------------------------------------

_TOKEN = re.compile(r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>//[^\n]*|/\*.*?\*/)
  | (?P<num>\d+(?:\.\d+)?(?:/\d+)?)
  | (?P<id>[A-Za-z_][A-Za-z0-9_@]*)
  | (?P<sym>[{}()\[\];,:])
""", re.VERBOSE | re.DOTALL)


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _lex(text: str) -> list[_Tok]:
    out = []
    pos, line, col = 0, 1, 1
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        tok = m.group()
        if kind in ("num", "id", "sym"):
            out.append(_Tok(kind, tok, line, col))
        nls = tok.count("\n")
        if nls:
            line += nls
            col = len(tok) - tok.rfind("\n")
        else:
            col += len(tok)
        pos = m.end()
    out.append(_Tok("eof", "", line, col))
    return out


class _Parser:
    def __init__(self, text: str):
        self.toks = _lex(text)
        self.i = 0

    @property
    def cur(self) -> _Tok:
        return self.toks[self.i]

    def err(self, msg, tok=None, cls=ParseError):
        tok = tok or self.cur
        raise cls(msg, tok.line, tok.col)

    def take(self, text=None, kind=None) -> _Tok:
        t = self.cur
        if text is not None and t.text != text:
            self.err(f"expected {text!r}, found {t.text or 'end of input'!r}")
        if kind is not None and t.kind != kind:
            self.err(f"expected {kind}, found {t.text or 'end of input'!r}")
        self.i += 1
        return t

    def at(self, text) -> bool:
        return self.cur.text == text

    def parse(self) -> ProtocolFile:
        if self.at("global"):
            self.take("global")
        self.take("protocol")
        name = self.take(kind="id").text
        self.take("(")
        roles = []
        while True:
            self.take("role")
            roles.append(self.take(kind="id").text)
            if self.at(","):
                self.take(",")
                continue
            break
        self.take(")")
        if len(set(roles)) != len(roles):
            self.err("duplicate role declaration")
        start = self.cur
        body = self.block()
        if not body:
            self.err("protocol body is empty", start)
        self.take(kind="eof")
        return ProtocolFile(name, tuple(roles), body)

    def block(self) -> tuple:
        self.take("{")
        out = []
        while not self.at("}"):
            if self.cur.kind == "eof":
                self.err("unterminated block")
            out.append(self.stmt())
        self.take("}")
        return tuple(out)

    def stmt(self):
        t = self.cur
        if t.text == "rec":
            self.take()
            name = self.take(kind="id").text
            return RecStmt(name, self.block(), t.line)
        if t.text == "continue":
            self.take()
            name = self.take(kind="id").text
            if self.at(";"):
                self.take(";")
            return Continue(name, t.line)
        if t.text == "choice":
            self.take()
            self.take("at")
            role = self.take(kind="id").text
            blocks = [self.block()]
            while self.at("or"):
                self.take("or")
                blocks.append(self.block())
            return Choice(role, tuple(blocks), t.line)
        return self.message()

    def message(self) -> Message:
        t = self.take(kind="id")
        label = t.text
        self.take("(")
        payload = "unit"
        if not self.at(")"):
            payload = self.take(kind="id").text
            if payload not in BASE_TAGS:
                self.err(f"unknown payload sort {payload!r}")
        self.take(")")
        self.take("from")
        sender = self.take(kind="id").text
        self.take("to")
        receiver = self.take(kind="id").text
        send = self.timing()
        recv = None
        if self.at("received"):
            self.take("received")
            recv = self.timing()
        self.take(";")
        return Message(label, payload, sender, receiver, send, recv, t.line)

    def timing(self) -> Timing:
        self.take("within")
        if self.at("["):
            lo_closed = True
        elif self.at("("):
            lo_closed = False
        else:
            self.err("expected '[' or '(' to open a time window")
        self.take()
        lo = self.number()
        self.take(";")
        if self.cur.text in ("inf", "∞"):
            self.take()
            hi = INF
        else:
            hi = self.number()
        if self.at("]"):
            hi_closed = True
        elif self.at(")"):
            hi_closed = False
        else:
            self.err("expected ']' or ')' to close a time window")
        self.take()
        if hi != INF and (lo > hi or (lo == hi and not (lo_closed and hi_closed))):
            self.err("empty time window")
        self.take("using")
        clock = self.take(kind="id").text
        resets: list = []
        if self.at("and"):
            self.take("and")
            self.take("resetting")
            self.take("(")
            while not self.at(")"):
                resets.append(self.take(kind="id").text)
                if self.at(","):
                    self.take(",")
            self.take(")")
        return Timing(lo, hi if hi == INF else hi, lo_closed, hi_closed, clock, tuple(resets))

    def number(self) -> Fraction:
        t = self.take(kind="num")
        return parse_time(t.text)


def parse(text: str) -> ProtocolFile:
    """Parse protocol text and resolve its scopes."""
    pf = _Parser(text).parse()
    _scope_check(pf)
    return pf


def _scope_check(pf: ProtocolFile) -> None:
    declared = set(pf.roles)

    def walk(stmts, recs):
        for i, st in enumerate(stmts):
            if isinstance(st, Message):
                for r in (st.sender, st.receiver):
                    if r not in declared:
                        raise ScopeError(f"role {r} is not declared", st.line)
                if st.sender == st.receiver:
                    raise ScopeError(f"role {st.sender} sends to itself", st.line)
            elif isinstance(st, Choice):
                if st.role not in declared:
                    raise ScopeError(f"role {st.role} is not declared", st.line)
                for b in st.blocks:
                    if not b or not isinstance(b[0], Message) or b[0].sender != st.role:
                        raise ScopeError(f"every branch of the choice at {st.role} must start with a message from it",
                                         st.line)
                    walk(b, recs)
            elif isinstance(st, RecStmt):
                walk(st.body, recs | {st.name})
            elif isinstance(st, Continue):
                if st.name not in recs:
                    raise ScopeError(f"continue {st.name} outside rec {st.name}", st.line)
                if i != len(stmts) - 1:
                    raise ParseError(f"statements after continue {st.name}", st.line)

    walk(pf.body, frozenset())


# -- printing ------------------------------------------------------------------------------------


def print_protocol(pf: ProtocolFile) -> str:
    lines = [f"global protocol {pf.name}({', '.join('role ' + r for r in pf.roles)}) {{"]

    def emit(stmts, depth):
        pad = "  " * depth
        for st in stmts:
            if isinstance(st, Message):
                pay = "" if st.payload == "unit" else st.payload
                text = f"{pad}{st.label}({pay}) from {st.sender} to {st.receiver} {st.send.render()}"
                if st.recv is not None:
                    text += f" received {st.recv.render()}"
                lines.append(text + ";")
            elif isinstance(st, Choice):
                lines.append(f"{pad}choice at {st.role} {{")
                for k, b in enumerate(st.blocks):
                    if k:
                        lines.append(f"{pad}}} or {{")
                    emit(b, depth + 1)
                lines.append(f"{pad}}}")
            elif isinstance(st, RecStmt):
                lines.append(f"{pad}rec {st.name} {{")
                emit(st.body, depth + 1)
                lines.append(f"{pad}}}")
            else:
                lines.append(f"{pad}continue {st.name};")

    emit(pf.body, 1)
    lines.append("}")
    return "\n".join(lines) + "\n"


# -- translation to global types ---------------------------------------------------------------


def role_clock(clock: str, role: str) -> str:
    return f"{clock}@{role}"


def _assertion(m: Message) -> Assertion:
    if m.recv is None:
        out_c, in_c = role_clock(m.send.clock, m.sender), role_clock(m.send.clock, m.receiver)
        return Assertion(
            m.send.constraint(out_c), frozenset(role_clock(c, m.sender) for c in m.send.resets),
            m.send.constraint(in_c), frozenset(role_clock(c, m.receiver) for c in m.send.resets))
    return Assertion(m.send.constraint(m.send.clock), frozenset(m.send.resets),
                     m.recv.constraint(m.recv.clock), frozenset(m.recv.resets))


def to_global(pf: ProtocolFile):
    def tr(stmts, k):
        if not stmts:
            return k
        st, rest = stmts[0], stmts[1:]
        if isinstance(st, Message):
            return Comm(st.sender, st.receiver,
                        (GBranch(st.label, Base(st.payload), _assertion(st), tr(rest, k)),))
        if isinstance(st, Continue):
            return Var(st.name)
        if isinstance(st, RecStmt):
            return Rec(st.name, tr(st.body, tr(rest, k)))
        k2 = tr(rest, k)
        heads = [tr(b, k2) for b in st.blocks]
        receivers = {h.receiver for h in heads}
        if len(receivers) != 1:
            raise ScopeError(f"branches of the choice at {st.role} address different roles {sorted(receivers)}",
                             st.line)
        branches = [b for h in heads for b in h.branches]
        labels = [b.label for b in branches]
        if len(set(labels)) != len(labels):
            raise ScopeError(f"duplicate labels {labels} in the choice at {st.role}", st.line)
        return Comm(st.role, receivers.pop(), tuple(branches))

    return tr(list(pf.body), END)


# -- protocol checks --------------------------------------------------------------------------


@dataclass
class ProtocolReport:
    ok: bool = True
    failures: list = field(default_factory=list)
    ownership: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def add(self, kind: str, message: str) -> None:
        self.ok = False
        self.failures.append({"kind": kind, "message": message})

    def to_json(self) -> dict:
        return {"ok": self.ok, "failures": list(self.failures), "warnings": list(self.warnings),
                "ownership": {r: sorted(cs) for r, cs in sorted(self.ownership.items())}}


def _ops(m: Message):
    """(role clock, timing, resets) for the sender and receiver sides of a message."""
    if m.recv is None:
        return [(role_clock(m.send.clock, r), m.send, {role_clock(c, r) for c in m.send.resets})
                for r in (m.sender, m.receiver)]
    return [(m.send.clock, m.send, set(m.send.resets)), (m.recv.clock, m.recv, set(m.recv.resets))]


def _paths(stmts, prefix=()):
    """Message sequences along every syntactic path (loops taken once)."""
    if not stmts:
        yield prefix
        return
    st, rest = stmts[0], stmts[1:]
    if isinstance(st, Message):
        yield from _paths(rest, prefix + (st,))
    elif isinstance(st, Continue):
        yield prefix
    elif isinstance(st, RecStmt):
        yield from _paths(list(st.body) + list(rest), prefix)
    else:
        for b in st.blocks:
            yield from _paths(list(b) + list(rest), prefix)


def _messages(stmts):
    for st in stmts:
        if isinstance(st, Message):
            yield st
        elif isinstance(st, Choice):
            for b in st.blocks:
                yield from _messages(b)
        elif isinstance(st, RecStmt):
            yield from _messages(st.body)


def check_protocol(pf: ProtocolFile) -> ProtocolReport:
    """Well-formedness of the global type plus per-clock ordering and feasibility along paths."""
    rep = ProtocolReport()
    try:
        g = to_global(pf)
    except ParseError as exc:
        rep.add("scope", exc.message)
        return rep
    wf = check_well_formed(g)
    rep.ownership = wf.ownership
    for f in wf.failures:
        rep.add(f.kind, f.message)
    for r in pf.roles:
        try:
            project(g, r)
        except NotProjectable as exc:
            rep.add("projection", f"role {r}: {exc}")
    for m in _messages(pf.body):
        for tm in (m.send, m.recv):
            if tm is not None and any(c != tm.clock for c in tm.resets):
                others = ", ".join(c for c in tm.resets if c != tm.clock)
                rep.warnings.append(f"line {m.line}: {m.label} resets {others}, which it does not use")
    seen: set = set()
    for path in _paths(list(pf.body)):
        last: dict = {}
        value: dict = {}
        for m in path:
            for clock, tm, resets in _ops(m):
                prev = last.get(clock)
                if prev is not None and tm.hi != INF and prev.lo > tm.hi:
                    msg = (f"clock {clock}: lower bound {format_time(prev.lo)} exceeds the upper bound "
                           f"{format_time(tm.hi)} of {m.label} on line {m.line}")
                    if msg not in seen:
                        seen.add(msg)
                        rep.add("strict-increase", msg)
                v, strict = value.get(clock, (Fraction(0), False))
                if v < tm.lo or (v == tm.lo and not tm.lo_closed):
                    v, strict = tm.lo, not tm.lo_closed
                if tm.hi != INF and (v > tm.hi or (v == tm.hi and (strict or not tm.hi_closed))):
                    msg = f"clock {clock}: no non-decreasing time satisfies {m.label} on line {m.line}"
                    if msg not in seen:
                        seen.add(msg)
                        rep.add("monotone", msg)
                value[clock] = (v, strict)
                last[clock] = tm
                for c in resets:
                    value[c] = (Fraction(0), False)
                    last.pop(c, None)
    return rep


# -- emission ------------------------------------------------------------------------------------


def automaton(t) -> dict:
    """Locations and guarded send/receive edges of a local type."""
    locs: list[str] = []
    edges: list[dict] = []
    ids: dict = {}

    def loc_of(u, env) -> str:
        while isinstance(u, Rec):
            env = {**env, u.var: None}
            key = ("rec", u)
            if key in ids:
                return ids[key]
            name = f"q{len(locs)}"
            locs.append(name)
            ids[key] = name
            env[u.var] = name
            visit(u.body, env, name)
            return name
        if isinstance(u, Var):
            return env.get(u.name) or f"unbound:{u.name}"
        key = (u, tuple(sorted((k, v) for k, v in env.items() if v)))
        if key in ids:
            return ids[key]
        name = f"q{len(locs)}"
        locs.append(name)
        ids[key] = name
        visit(u, env, name)
        return name

    def visit(u, env, name):
        if isinstance(u, (End, Var)) or not isinstance(u, (IntChoice, ExtChoice)):
            return
        for b in u.branches:
            dst = loc_of(b.cont, env)
            edges.append({
                "src": name,
                "dst": dst,
                "action": "!" if isinstance(u, IntChoice) else "?",
                "partner": u.partner,
                "label": b.label,
                "sort": str(b.sort),
                "guard": render_constraint(b.guard),
                "reset": sorted(b.reset),
            })

    init = loc_of(t, {})
    finals = sorted({ids[k] for k in ids if isinstance(k[0], End)}, key=locs.index)
    edges.sort(key=lambda e: (locs.index(e["src"]), e["label"]))
    return {"initial": init, "locations": locs, "edges": edges, "final": finals}


def _dot_escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace('"', '\\"')


def render_dot(automata: dict) -> str:
    out = ["digraph protocol {"]
    for role in sorted(automata):
        a = automata[role]
        out.append(f'  subgraph "cluster_{_dot_escape(role)}" {{')
        out.append(f'    label="{_dot_escape(role)}";')
        for loc in a["locations"]:
            shape = "doublecircle" if loc in a["final"] else "circle"
            out.append(f'    "{_dot_escape(role)}_{loc}" [label="{loc}", shape={shape}];')
        for e in a["edges"]:
            reset = ", ".join(f"{c}:=0" for c in e["reset"]) or "∅"
            lab = f'{e["partner"]}{e["action"]}{e["label"]} {{{e["guard"]}; {reset}}}'
            out.append(f'    "{_dot_escape(role)}_{e["src"]}" -> "{_dot_escape(role)}_{e["dst"]}" '
                       f'[label="{_dot_escape(lab)}"];')
        out.append("  }")
    out.append("}")
    return "\n".join(out) + "\n"


@dataclass
class Artifacts:
    types: dict
    automata: dict
    dot: str

    def files(self) -> dict:
        """File name to UTF-8 text, ready to be written."""
        out = {}
        for r in sorted(self.types):
            out[f"{r}.type.json"] = dumps(local_to_json(self.types[r]))
            out[f"{r}.cta.json"] = dumps(self.automata[r])
        out["protocol.dot"] = self.dot
        return out


def emit(pf: ProtocolFile, role: str | None = None) -> Artifacts:
    g = to_global(pf)
    chosen = [role] if role is not None else sorted(pf.roles)
    types = {}
    for r in chosen:
        types[r] = project(g, r) if r in roles_of(g) or r in pf.roles else END
    autos = {r: automaton(t) for r, t in types.items()}
    return Artifacts(types, autos, render_dot(autos))


def dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, indent=2) + "\n"
