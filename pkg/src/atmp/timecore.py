"""Exact rational time, clock constraints, valuations and interval sets."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Union

INF = math.inf

Time = Fraction
ExtTime = Union[Fraction, float]  # float only ever holds INF


class TimeError(ValueError):
    pass


class UnknownClock(KeyError):
    pass


class MultiClockConstraint(ValueError):
    pass


_DECIMAL = re.compile(r"^\d+(\.\d+)?$")
_RATIO = re.compile(r"^\d+/\d+$")


def parse_time(text: str | int | Fraction) -> Fraction:
    """Parse "6", "6.5" or "13/2" into an exact non-negative rational."""
    if isinstance(text, Fraction):
        value = text
    elif isinstance(text, int):
        value = Fraction(text)
    else:
        s = text.strip()
        if not (_DECIMAL.match(s) or _RATIO.match(s)):
            raise TimeError(f"bad time value {text!r}")
        value = Fraction(s)
    if value < 0:
        raise TimeError(f"negative time {text!r}")
    return value


def parse_ext_time(text: str) -> ExtTime:
    if str(text).strip() in ("inf", "∞"):
        return INF
    return parse_time(text)


def format_time(t: ExtTime) -> str:
    """Lossless text rendering: integer, terminating decimal, or p/q."""
    if t == INF:
        return "inf"
    t = Fraction(t)
    if t.denominator == 1:
        return str(t.numerator)
    d = t.denominator
    k = 0
    while d % 2 == 0 or d % 5 == 0:
        d //= 2 if d % 2 == 0 else 5
        k += 1
    if d == 1:
        scaled = t * 10**k
        whole, frac = divmod(scaled.numerator, 10**k)
        return f"{whole}.{str(frac).rjust(k, '0').rstrip('0')}"
    return f"{t.numerator}/{t.denominator}"


# -- constraints -----------------------------------------------------------


class Constraint:
    __slots__ = ()

    def __and__(self, other: "Constraint") -> "Constraint":
        return And(self, other)

    def __invert__(self) -> "Constraint":
        return Not(self)

    def __str__(self) -> str:
        return render_constraint(self)


@dataclass(frozen=True)
class TrueC(Constraint):
    pass


@dataclass(frozen=True)
class Gt(Constraint):
    clock: str
    bound: Fraction


@dataclass(frozen=True)
class Eq(Constraint):
    clock: str
    bound: Fraction


@dataclass(frozen=True)
class Not(Constraint):
    arg: Constraint


@dataclass(frozen=True)
class And(Constraint):
    left: Constraint
    right: Constraint


TRUE = TrueC()


def false_() -> Constraint:
    return Not(TRUE)


def gt(c: str, b) -> Constraint:
    return Gt(c, parse_time(b))


def eq(c: str, b) -> Constraint:
    return Eq(c, parse_time(b))


def le(c: str, b) -> Constraint:
    return Not(gt(c, b))


def lt(c: str, b) -> Constraint:
    return And(Not(gt(c, b)), Not(eq(c, b)))


def ge(c: str, b) -> Constraint:
    return Not(lt(c, b))


def window(clock: str, lo, hi, lo_closed: bool = True, hi_closed: bool = True) -> Constraint:
    """Canonical constraint for a single-clock window; hi may be INF."""
    lo = parse_time(lo)
    hi = INF if hi == INF or hi == "inf" else parse_time(hi)
    parts: list[Constraint] = []
    if lo > 0 or not lo_closed:
        parts.append(ge(clock, lo) if lo_closed else gt(clock, lo))
    if hi != INF:
        parts.append(le(clock, hi) if hi_closed else lt(clock, hi))
    if not parts:
        return TRUE
    out = parts[0]
    for p in parts[1:]:
        out = And(out, p)
    return out


def conj(items: Iterable[Constraint]) -> Constraint:
    out: Constraint | None = None
    for c in items:
        if isinstance(c, TrueC):
            continue
        out = c if out is None else And(out, c)
    return TRUE if out is None else out


def free_clocks(d: Constraint) -> frozenset[str]:
    if isinstance(d, TrueC):
        return frozenset()
    if isinstance(d, (Gt, Eq)):
        return frozenset([d.clock])
    if isinstance(d, Not):
        return free_clocks(d.arg)
    if isinstance(d, And):
        return free_clocks(d.left) | free_clocks(d.right)
    raise TypeError(d)


def constants(d: Constraint) -> set[Fraction]:
    if isinstance(d, (Gt, Eq)):
        return {d.bound}
    if isinstance(d, Not):
        return constants(d.arg)
    if isinstance(d, And):
        return constants(d.left) | constants(d.right)
    return set()


def rename_clocks(d: Constraint, mapping: Mapping[str, str]) -> Constraint:
    if isinstance(d, Gt):
        return Gt(mapping.get(d.clock, d.clock), d.bound)
    if isinstance(d, Eq):
        return Eq(mapping.get(d.clock, d.clock), d.bound)
    if isinstance(d, Not):
        return Not(rename_clocks(d.arg, mapping))
    if isinstance(d, And):
        return And(rename_clocks(d.left, mapping), rename_clocks(d.right, mapping))
    return d


# -- valuations ------------------------------------------------------------


class Valuation(Mapping[str, Fraction]):
    """Immutable clock valuation."""

    __slots__ = ("_items", "_map", "_hash")

    def __init__(self, assignment: Mapping[str, object] | Iterable = ()):
        pairs = assignment.items() if isinstance(assignment, Mapping) else assignment
        m = {str(k): parse_time(v) for k, v in pairs}
        self._map = m
        self._items = tuple(sorted(m.items()))
        self._hash = hash(self._items)

    @classmethod
    def zero(cls, clocks: Iterable[str]) -> "Valuation":
        return cls({c: 0 for c in clocks})

    def __getitem__(self, k: str) -> Fraction:
        return self._map[k]

    def __iter__(self):
        return iter(k for k, _ in self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __hash__(self) -> int:
        return self._hash

    def __eq__(self, other) -> bool:
        if isinstance(other, Valuation):
            return self._items == other._items
        if isinstance(other, Mapping):
            return dict(self._items) == dict(other)
        return NotImplemented

    def __repr__(self) -> str:
        inner = ", ".join(f"{k}={format_time(v)}" for k, v in self._items)
        return "{" + inner + "}"

    def advance(self, t) -> "Valuation":
        return advance(self, t)

    def reset(self, clocks: Iterable[str]) -> "Valuation":
        return reset_clocks(self, clocks)

    def restrict(self, clocks: Iterable[str]) -> "Valuation":
        keep = set(clocks)
        return Valuation({k: v for k, v in self._items if k in keep})

    def to_json(self) -> dict:
        return {k: format_time(v) for k, v in self._items}

    @classmethod
    def from_json(cls, data: Mapping[str, str]) -> "Valuation":
        return cls({k: parse_time(v) for k, v in data.items()})


def satisfies(nu: Mapping[str, Fraction], d: Constraint) -> bool:
    if isinstance(d, TrueC):
        return True
    if isinstance(d, (Gt, Eq)):
        if d.clock not in nu:
            raise UnknownClock(d.clock)
        v = nu[d.clock]
        return v > d.bound if isinstance(d, Gt) else v == d.bound
    if isinstance(d, Not):
        return not satisfies(nu, d.arg)
    if isinstance(d, And):
        return satisfies(nu, d.left) and satisfies(nu, d.right)
    raise TypeError(d)


def advance(nu: Mapping[str, Fraction], t) -> Valuation:
    t = parse_time(t)
    return Valuation({k: v + t for k, v in nu.items()})


def reset_clocks(nu: Mapping[str, Fraction], clocks: Iterable[str]) -> Valuation:
    clocks = frozenset(clocks)
    missing = clocks - set(nu)
    if missing:
        raise UnknownClock(sorted(missing)[0])
    return Valuation({k: (Fraction(0) if k in clocks else v) for k, v in nu.items()})


def override_union(valuations: Iterable[Mapping[str, Fraction]]) -> Valuation:
    out: dict[str, Fraction] = {}
    for v in valuations:
        out.update(v)
    return Valuation(out)


# -- interval sets -----------------------------------------------------------


@dataclass(frozen=True)
class Interval:
    lo: Fraction
    hi: ExtTime
    lo_closed: bool = True
    hi_closed: bool = True

    def __post_init__(self):
        if self.hi == INF and self.hi_closed:
            object.__setattr__(self, "hi_closed", False)

    def empty(self) -> bool:
        if self.lo < self.hi:
            return False
        return not (self.lo == self.hi and self.lo_closed and self.hi_closed)

    def contains(self, t) -> bool:
        if t < self.lo or (t == self.lo and not self.lo_closed):
            return False
        if t > self.hi or (t == self.hi and not self.hi_closed):
            return False
        return True

    def __str__(self) -> str:
        left = "[" if self.lo_closed else "("
        right = "]" if self.hi_closed else ")"
        return f"{left}{format_time(self.lo)},{format_time(self.hi)}{right}"


class IntervalSet:
    """Canonical union of disjoint, non-adjacent intervals within [0, inf)."""

    __slots__ = ("intervals",)

    def __init__(self, intervals: Iterable[Interval] = ()):
        self.intervals: tuple[Interval, ...] = _canonical(intervals)

    @classmethod
    def full(cls) -> "IntervalSet":
        return cls([Interval(Fraction(0), INF, True, False)])

    @classmethod
    def point(cls, t) -> "IntervalSet":
        t = parse_time(t)
        return cls([Interval(t, t)])

    def __eq__(self, other) -> bool:
        return isinstance(other, IntervalSet) and self.intervals == other.intervals

    def __hash__(self) -> int:
        return hash(self.intervals)

    def __repr__(self) -> str:
        if not self.intervals:
            return "∅"
        return " ∪ ".join(str(i) for i in self.intervals)

    def is_empty(self) -> bool:
        return not self.intervals

    def contains(self, t) -> bool:
        return any(i.contains(t) for i in self.intervals)

    __contains__ = contains

    def union(self, other: "IntervalSet") -> "IntervalSet":
        return IntervalSet(self.intervals + other.intervals)

    def intersect(self, other: "IntervalSet") -> "IntervalSet":
        out = []
        for a in self.intervals:
            for b in other.intervals:
                if a.lo > b.lo or (a.lo == b.lo and not a.lo_closed):
                    lo, lc = a.lo, a.lo_closed
                else:
                    lo, lc = b.lo, b.lo_closed
                if a.hi < b.hi or (a.hi == b.hi and not a.hi_closed):
                    hi, hc = a.hi, a.hi_closed
                else:
                    hi, hc = b.hi, b.hi_closed
                iv = Interval(lo, hi, lc, hc)
                if not iv.empty():
                    out.append(iv)
        return IntervalSet(out)

    def complement(self) -> "IntervalSet":
        out = []
        cur, cur_closed = Fraction(0), True
        for iv in self.intervals:
            gap = Interval(cur, iv.lo, cur_closed, not iv.lo_closed)
            if not gap.empty():
                out.append(gap)
            if iv.hi == INF:
                return IntervalSet(out)
            cur, cur_closed = iv.hi, not iv.hi_closed
        out.append(Interval(cur, INF, cur_closed, False))
        return IntervalSet(out)

    def covers(self, lo, hi) -> bool:
        """True when the closed interval [lo, hi] lies inside the set."""
        probe = IntervalSet([Interval(lo, hi, True, hi != INF)])
        return self.intersect(probe) == probe

    def shift(self, delta: Fraction) -> "IntervalSet":
        """Translate by -delta and clip at 0 (times relative to a clock value)."""
        out = []
        for iv in self.intervals:
            hi = iv.hi if iv.hi == INF else iv.hi - delta
            lo = iv.lo - delta
            lc = iv.lo_closed
            if lo < 0:
                lo, lc = Fraction(0), True
            cand = Interval(lo, hi, lc, iv.hi_closed)
            if hi != INF and hi < 0:
                continue
            if not cand.empty():
                out.append(cand)
        return IntervalSet(out)

    def endpoints(self) -> list[Fraction]:
        pts = []
        for iv in self.intervals:
            pts.append(iv.lo)
            if iv.hi != INF:
                pts.append(iv.hi)
        return pts


def _canonical(intervals: Iterable[Interval]) -> tuple[Interval, ...]:
    items = sorted((i for i in intervals if not i.empty()), key=lambda i: (i.lo, not i.lo_closed))
    merged: list[Interval] = []
    for iv in items:
        if merged:
            last = merged[-1]
            touches = iv.lo < last.hi or (iv.lo == last.hi and (iv.lo_closed or last.hi_closed))
            if touches:
                if iv.hi > last.hi or (iv.hi == last.hi and iv.hi_closed):
                    merged[-1] = Interval(last.lo, iv.hi, last.lo_closed, iv.hi_closed)
                continue
        merged.append(iv)
    return tuple(merged)


def solution_set(d: Constraint, clock: str | None = None) -> IntervalSet:
    """The set of values t with {clock=t} satisfying d."""
    extra = free_clocks(d) - ({clock} if clock else set())
    if extra:
        raise MultiClockConstraint(f"constraint mentions {sorted(extra)} besides {clock}")
    return _solve(d)


def _solve(d: Constraint) -> IntervalSet:
    if isinstance(d, TrueC):
        return IntervalSet.full()
    if isinstance(d, Gt):
        return IntervalSet([Interval(d.bound, INF, False, False)])
    if isinstance(d, Eq):
        return IntervalSet.point(d.bound)
    if isinstance(d, Not):
        return _solve(d.arg).complement()
    if isinstance(d, And):
        return _solve(d.left).intersect(_solve(d.right))
    raise TypeError(d)


def single_clock(d: Constraint) -> str | None:
    fc = free_clocks(d)
    if len(fc) > 1:
        raise MultiClockConstraint(f"constraint over several clocks: {sorted(fc)}")
    return next(iter(fc)) if fc else None


def holds_throughout(nu: Mapping[str, Fraction], d: Constraint, span: ExtTime) -> bool:
    """True when nu + t satisfies d for every 0 <= t <= span."""
    c = single_clock(d)
    if c is None:
        return satisfies(nu, d)
    if c not in nu:
        raise UnknownClock(c)
    start = nu[c]
    return solution_set(d, c).covers(start, INF if span == INF else start + span)


def delays_satisfying(nu: Mapping[str, Fraction], d: Constraint) -> IntervalSet:
    """Delays t >= 0 such that nu + t satisfies d."""
    c = single_clock(d)
    if c is None:
        return IntervalSet.full() if satisfies(nu, d) else IntervalSet()
    if c not in nu:
        raise UnknownClock(c)
    return solution_set(d, c).shift(nu[c])


def midpoint(a: Fraction, b: Fraction) -> Fraction:
    return (a + b) / 2


def sample_grid(s: IntervalSet, bound) -> list[Fraction]:
    """Endpoints plus one interior point of every interval clipped to [0, bound]."""
    bound = parse_time(bound)
    pts: set[Fraction] = set()
    for iv in s.intervals:
        if iv.lo > bound:
            continue
        hi, hc = iv.hi, iv.hi_closed
        if hi == INF or hi > bound:
            hi, hc = bound, True
        clipped = Interval(iv.lo, hi, iv.lo_closed, hc)
        if clipped.empty():
            continue
        if clipped.lo_closed:
            pts.add(clipped.lo)
        if clipped.hi_closed:
            pts.add(Fraction(clipped.hi))
        if clipped.lo < clipped.hi:
            pts.add(midpoint(clipped.lo, Fraction(clipped.hi)))
    return sorted(pts)


# -- rendering and JSON -----------------------------------------------------------


def render_constraint(d: Constraint) -> str:
    c = None
    try:
        c = single_clock(d)
    except MultiClockConstraint:
        pass
    if isinstance(d, TrueC):
        return "true"
    if c is not None:
        s = solution_set(d, c)
        if s.is_empty():
            return "false"
        parts = []
        for iv in s.intervals:
            lo_op = "≤" if iv.lo_closed else "<"
            hi_op = "≤" if iv.hi_closed else "<"
            if iv.lo == iv.hi:
                parts.append(f"{c}={format_time(iv.lo)}")
            elif iv.hi == INF:
                if iv.lo == 0 and iv.lo_closed:
                    parts.append("true")
                else:
                    parts.append(f"{format_time(iv.lo)}{lo_op}{c}")
            elif iv.lo == 0 and iv.lo_closed:
                parts.append(f"{c}{hi_op}{format_time(iv.hi)}")
            else:
                parts.append(f"{format_time(iv.lo)}{lo_op}{c}{hi_op}{format_time(iv.hi)}")
        return " ∨ ".join(parts)
    return _render_raw(d)


def _render_raw(d: Constraint) -> str:
    if isinstance(d, TrueC):
        return "true"
    if isinstance(d, Gt):
        return f"{d.clock}>{format_time(d.bound)}"
    if isinstance(d, Eq):
        return f"{d.clock}={format_time(d.bound)}"
    if isinstance(d, Not):
        return f"¬({_render_raw(d.arg)})"
    return f"({_render_raw(d.left)} ∧ {_render_raw(d.right)})"


def constraint_to_json(d: Constraint) -> dict:
    if isinstance(d, TrueC):
        return {"op": "true"}
    if isinstance(d, Gt):
        return {"op": "gt", "clock": d.clock, "bound": format_time(d.bound)}
    if isinstance(d, Eq):
        return {"op": "eq", "clock": d.clock, "bound": format_time(d.bound)}
    if isinstance(d, Not):
        return {"op": "not", "arg": constraint_to_json(d.arg)}
    return {"op": "and", "left": constraint_to_json(d.left), "right": constraint_to_json(d.right)}


def constraint_from_json(data: Mapping) -> Constraint:
    op = data["op"]
    if op == "true":
        return TRUE
    if op == "gt":
        return Gt(data["clock"], parse_time(data["bound"]))
    if op == "eq":
        return Eq(data["clock"], parse_time(data["bound"]))
    if op == "not":
        return Not(constraint_from_json(data["arg"]))
    if op == "and":
        return And(constraint_from_json(data["left"]), constraint_from_json(data["right"]))
    raise ValueError(f"unknown constraint op {op!r}")


# -- textual constraints -------------------------------------------------------------

_TOKEN = re.compile(r"\s*(\d+(?:\.\d+)?(?:/\d+)?|[A-Za-z_][\w@']*|≤|<=|≥|>=|<|>|==|=|∧|&&|∨|\|\||¬|!|,|\(|\))")
_OPS = {"≤": "le", "<=": "le", "<": "lt", "≥": "ge", ">=": "ge", ">": "gt", "=": "eq", "==": "eq"}
_FLIP = {"le": "ge", "lt": "gt", "ge": "le", "gt": "lt", "eq": "eq"}


class ConstraintSyntaxError(ValueError):
    pass


def _tokens(text: str) -> list[str]:
    out, pos = [], 0
    text = text.strip()
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if not m:
            raise ConstraintSyntaxError(f"unexpected character {text[pos]!r} in constraint {text!r}")
        out.append(m.group(1))
        pos = m.end()
        while pos < len(text) and text[pos].isspace():
            pos += 1
    return out


def _is_num(tok: str) -> bool:
    return tok[0].isdigit()


def _bound(clock: str, op: str, k: Fraction) -> Constraint:
    if op == "le":
        return window(clock, 0, k)
    if op == "lt":
        return window(clock, 0, k, True, False)
    if op == "ge":
        return window(clock, k, INF)
    if op == "gt":
        return window(clock, k, INF, False)
    return Eq(clock, k)


class _ConstraintParser:
    def __init__(self, text: str):
        self.text = text
        self.toks = _tokens(text)
        self.i = 0

    def peek(self):
        return self.toks[self.i] if self.i < len(self.toks) else None

    def take(self, expect=None):
        tok = self.peek()
        if tok is None or (expect is not None and tok != expect):
            raise ConstraintSyntaxError(f"expected {expect or 'a token'} in constraint {self.text!r}")
        self.i += 1
        return tok

    def parse(self) -> Constraint:
        d = self.disj()
        if self.peek() is not None:
            raise ConstraintSyntaxError(f"trailing {self.peek()!r} in constraint {self.text!r}")
        return d

    def disj(self) -> Constraint:
        d = self.conj()
        while self.peek() in ("∨", "||", "or"):
            self.take()
            d = Not(And(Not(d), Not(self.conj())))
        return d

    def conj(self) -> Constraint:
        d = self.atom()
        while self.peek() in (",", "∧", "&&", "and"):
            self.take()
            d = And(d, self.atom())
        return d

    def atom(self) -> Constraint:
        tok = self.peek()
        if tok in ("¬", "!", "not"):
            self.take()
            return Not(self.atom())
        if tok == "(":
            self.take()
            d = self.disj()
            self.take(")")
            return d
        if tok == "true":
            self.take()
            return TRUE
        if tok == "false":
            self.take()
            return false_()
        terms = [self.take()]
        ops = []
        while self.peek() in _OPS:
            ops.append(_OPS[self.take()])
            terms.append(self.take())
        if not ops:
            raise ConstraintSyntaxError(f"expected a comparison in constraint {self.text!r}")
        return self.chain(terms, ops)

    def chain(self, terms, ops) -> Constraint:
        clocks = [t for t in terms if not _is_num(t)]
        if len(set(clocks)) != 1 or len(clocks) != 1:
            raise ConstraintSyntaxError(f"each comparison must mention exactly one clock: {self.text!r}")
        clock = clocks[0]
        ci = terms.index(clock)
        lo, hi, lo_c, hi_c, parts = Fraction(0), INF, True, True, []
        for j, op in enumerate(ops):
            a, b = terms[j], terms[j + 1]
            if a == clock:
                rel, k = op, parse_time(b)
            elif b == clock:
                rel, k = _FLIP[op], parse_time(a)
            else:
                raise ConstraintSyntaxError(f"comparison between two constants in {self.text!r}")
            parts.append((rel, k))
        if len(parts) == 2 and ci == 1 and {parts[0][0], parts[1][0]} <= {"ge", "gt", "le", "lt"}:
            (r1, k1), (r2, k2) = parts
            if r1 in ("ge", "gt") and r2 in ("le", "lt"):
                lo, lo_c, hi, hi_c = k1, r1 == "ge", k2, r2 == "le"
                return window(clock, lo, hi, lo_c, hi_c)
        return conj(_bound(clock, r, k) for r, k in parts)


def parse_constraint(text: str) -> Constraint:
    """Parse constraints such as "6≤C≤7", "C<=3, C>1", "C=6.5" or "true"."""
    return _ConstraintParser(text).parse()
