"""Exact events of the probability algebra of [0,1).

An event is a canonical finite union of half-open rational intervals.
Every operation returns a canonical value, so structural equality is
the same thing as distance zero.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Iterator, Sequence

Rational = Fraction

ZERO = Fraction(0)
ONE = Fraction(1)


def as_rational(value: object) -> Fraction:
    """Coerce ints, Fractions and ``p/q`` strings to an exact Fraction."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("booleans are not rationals")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, str):
        return parse_rational(value)
    raise TypeError(f"cannot read {value!r} as an exact rational")


_RATIONAL_RE = re.compile(r"^\s*([+-]?\d+)\s*(?:/\s*(\d+)\s*)?$")


def parse_rational(text: str) -> Fraction:
    m = _RATIONAL_RE.match(text)
    if not m:
        raise ValueError(f"not a rational literal: {text!r}")
    num = int(m.group(1))
    den = int(m.group(2)) if m.group(2) is not None else 1
    if den == 0:
        raise ValueError(f"zero denominator in {text!r}")
    return Fraction(num, den)


def format_rational(q: Fraction) -> str:
    return str(q)


@dataclass(frozen=True, order=True)
class Interval:
    lo: Fraction
    hi: Fraction

    def __post_init__(self) -> None:
        if not (ZERO <= self.lo < self.hi <= ONE):
            raise ValueError(f"bad interval [{self.lo}, {self.hi})")

    @property
    def length(self) -> Fraction:
        return self.hi - self.lo

    def __str__(self) -> str:
        return f"[{self.lo}, {self.hi})"


def _canonical(pairs: Iterable[tuple[Fraction, Fraction]]) -> tuple[Interval, ...]:
    items = sorted((lo, hi) for lo, hi in pairs if lo < hi)
    merged: list[list[Fraction]] = []
    for lo, hi in items:
        if merged and lo <= merged[-1][1]:
            if hi > merged[-1][1]:
                merged[-1][1] = hi
        else:
            merged.append([lo, hi])
    return tuple(Interval(lo, hi) for lo, hi in merged)


@dataclass(frozen=True)
class Event:
    """A canonical (sorted, merged) union of half-open intervals."""

    intervals: tuple[Interval, ...] = ()

    @classmethod
    def of(cls, *pairs: tuple[object, object]) -> Event:
        return cls(_canonical((as_rational(a), as_rational(b)) for a, b in pairs))

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[Fraction, Fraction]]) -> Event:
        return cls(_canonical(pairs))

    @classmethod
    def empty(cls) -> Event:
        return _EMPTY

    @classmethod
    def full(cls) -> Event:
        return _FULL

    def pairs(self) -> Iterator[tuple[Fraction, Fraction]]:
        for iv in self.intervals:
            yield iv.lo, iv.hi

    @property
    def is_empty(self) -> bool:
        return not self.intervals

    def measure(self) -> Fraction:
        return sum((iv.length for iv in self.intervals), ZERO)

    def union(self, other: Event) -> Event:
        return Event(_canonical([*self.pairs(), *other.pairs()]))

    def intersect(self, other: Event) -> Event:
        out: list[tuple[Fraction, Fraction]] = []
        a, b = self.intervals, other.intervals
        i = j = 0
        while i < len(a) and j < len(b):
            lo = max(a[i].lo, b[j].lo)
            hi = min(a[i].hi, b[j].hi)
            if lo < hi:
                out.append((lo, hi))
            if a[i].hi <= b[j].hi:
                i += 1
            else:
                j += 1
        return Event(_canonical(out))

    def complement(self) -> Event:
        out: list[tuple[Fraction, Fraction]] = []
        cursor = ZERO
        for iv in self.intervals:
            if cursor < iv.lo:
                out.append((cursor, iv.lo))
            cursor = iv.hi
        if cursor < ONE:
            out.append((cursor, ONE))
        return Event(_canonical(out))

    def difference(self, other: Event) -> Event:
        return self.intersect(other.complement())

    def symdiff(self, other: Event) -> Event:
        return self.difference(other).union(other.difference(self))

    def issubset(self, other: Event) -> bool:
        return self.difference(other).is_empty

    def dist(self, other: Event) -> Fraction:
        return self.symdiff(other).measure()

    __or__ = union
    __and__ = intersect
    __sub__ = difference
    __xor__ = symdiff

    def __invert__(self) -> Event:
        return self.complement()

    def __str__(self) -> str:
        if not self.intervals:
            return "empty"
        return " + ".join(str(iv) for iv in self.intervals)

    def __repr__(self) -> str:
        return f"Event({self})"


_EMPTY = Event(())
_FULL = Event((Interval(ZERO, ONE),))


_BINARY = {
    "union": Event.union,
    "intersect": Event.intersect,
    "symdiff": Event.symdiff,
    "difference": Event.difference,
}


def boolean_apply(op: str, a: Event, b: Event | None = None) -> Event:
    if op == "complement":
        if b is not None:
            raise TypeError("complement takes exactly one event")
        return a.complement()
    if op not in _BINARY:
        raise ValueError(f"unknown Boolean operation {op!r}")
    if b is None:
        raise TypeError(f"{op} takes exactly two events")
    return _BINARY[op](a, b)


def measure(a: Event) -> Fraction:
    return a.measure()


def dist(a: Event, b: Event) -> Fraction:
    return a.dist(b)


def _mass_window(a: Event, start: Fraction, stop: Fraction) -> Event:
    """The part of ``a`` lying between cumulative masses ``start`` and ``stop``."""
    out: list[tuple[Fraction, Fraction]] = []
    seen = ZERO
    for iv in a.intervals:
        nxt = seen + iv.length
        lo_mass = max(start, seen)
        hi_mass = min(stop, nxt)
        if lo_mass < hi_mass:
            out.append((iv.lo + (lo_mass - seen), iv.lo + (hi_mass - seen)))
        seen = nxt
        if seen >= stop:
            break
    return Event(_canonical(out))


def sub_event(a: Event, m: object) -> Event:
    """Left-most part of ``a`` of measure exactly ``m``."""
    m = as_rational(m)
    total = a.measure()
    if not (ZERO <= m <= total):
        raise ValueError(f"sub_event mass {m} outside [0, {total}]")
    return _mass_window(a, ZERO, m)


def fair_partition(a: Event, k: int) -> list[Event]:
    """Split ``a`` left to right into ``k`` parts of equal measure."""
    if k < 1:
        raise ValueError("fair_partition needs k >= 1")
    total = a.measure()
    return [_mass_window(a, total * i / k, total * (i + 1) / k) for i in range(k)]


def union_all(events: Iterable[Event]) -> Event:
    pairs: list[tuple[Fraction, Fraction]] = []
    for e in events:
        pairs.extend(e.pairs())
    return Event(_canonical(pairs))


def intersect_all(events: Iterable[Event]) -> Event:
    out = _FULL
    for e in events:
        out = out & e
    return out


def refine(events: Sequence[Event]) -> list[tuple[tuple[bool, ...], Event]]:
    """Non-empty atoms of the Boolean algebra generated by ``events``.

    Returns (sign pattern, atom) pairs; pattern[i] says whether the atom lies
    inside events[i].
    """
    cells: list[tuple[tuple[bool, ...], Event]] = [((), _FULL)]
    for e in events:
        nxt: list[tuple[tuple[bool, ...], Event]] = []
        for pattern, cell in cells:
            inside = cell & e
            outside = cell - e
            if not inside.is_empty:
                nxt.append((pattern + (True,), inside))
            if not outside.is_empty:
                nxt.append((pattern + (False,), outside))
        cells = nxt
    return cells


def is_partition(parts: Sequence[Event]) -> bool:
    total = ZERO
    for p in parts:
        total += p.measure()
    return total == ONE and union_all(parts) == _FULL


_EVENT_PIECE = re.compile(r"\[\s*([^,\]\)]+?)\s*,\s*([^,\]\)]+?)\s*\)")


def parse_event(text: str) -> Event:
    """Read ``[p/q, r/s) + [a/b, c/d)``; ``empty`` denotes the null event."""
    body = text.strip()
    if body in ("empty", "{}", ""):
        return _EMPTY
    pairs: list[tuple[Fraction, Fraction]] = []
    pos = 0
    for chunk in body.split("+"):
        chunk = chunk.strip()
        m = _EVENT_PIECE.fullmatch(chunk)
        if not m:
            raise ValueError(f"bad interval literal {chunk!r} at offset {pos}")
        lo, hi = parse_rational(m.group(1)), parse_rational(m.group(2))
        Interval(lo, hi)
        pairs.append((lo, hi))
        pos += len(chunk) + 1
    return Event(_canonical(pairs))
