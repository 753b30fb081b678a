"""Simple random variables with values in a classical structure.

A simple random variable is a finite partition of [0,1) into events, each
labelled by an element.  Everything here is exact: event maps are unions of
cells of the common refinement on which the structure's decision procedure
says yes.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping, Sequence

from .events import ONE, ZERO, Event, parse_event, union_all
from .structures import Element, Exists, Formula, Structure, StructureError


class RVError(ValueError):
    pass


@dataclass(frozen=True)
class SimpleRV:
    """Canonical cells (element, event): merged by element, ordered by enumeration index."""

    cells: tuple[tuple[Element, Event], ...]

    @classmethod
    def build(cls, M: Structure, cells: Sequence[tuple[Element, Event]]) -> SimpleRV:
        grouped: dict[Element, list[Event]] = {}
        for a, e in cells:
            if e.is_empty:
                continue
            grouped.setdefault(M.canonical(a), []).append(e)
        merged = [(a, union_all(es)) for a, es in grouped.items()]
        total = sum((e.measure() for _, e in merged), ZERO)
        if total != ONE or union_all(e for _, e in merged) != Event.full():
            raise RVError("cells of a simple random variable must partition [0,1)")
        merged.sort(key=lambda c: M.index_of(c[0]))
        return cls(tuple(merged))

    @classmethod
    def constant(cls, M: Structure, a: Element) -> SimpleRV:
        return cls(((M.canonical(a), Event.full()),))

    def values(self) -> list[Element]:
        return [a for a, _ in self.cells]

    def event_of(self, a: Element) -> Event:
        for b, e in self.cells:
            if b == a:
                return e
        return Event.empty()

    def mass(self, a: Element) -> Fraction:
        return self.event_of(a).measure()

    def render(self, M: Structure | None = None) -> str:
        name = M.element_name if M is not None else str
        return "{" + "; ".join(f"{name(a)}: {e}" for a, e in self.cells) + "}"

    def __str__(self) -> str:
        return self.render()


def refinement(rvs: Sequence[SimpleRV]) -> list[tuple[tuple[Element, ...], Event]]:
    """Non-empty cells of the common refinement, with the value tuple on each."""
    cells: list[tuple[tuple[Element, ...], Event]] = [((), Event.full())]
    for f in rvs:
        nxt = []
        for vals, cell in cells:
            for a, e in f.cells:
                piece = cell & e
                if not piece.is_empty:
                    nxt.append((vals + (a,), piece))
        cells = nxt
    return cells


def rv_dist(M: Structure, f: SimpleRV, g: SimpleRV) -> Fraction:
    total = ZERO
    for (a, b), cell in refinement([f, g]):
        if not M.decide_eq(a, b):
            total += cell.measure()
    return total


def _binding(phi: Formula, rvs: Sequence[SimpleRV] | Mapping[str, SimpleRV]) -> tuple[list[str], list[SimpleRV]]:
    if isinstance(rvs, Mapping):
        names = sorted(phi.free_vars())
        missing = [n for n in names if n not in rvs]
        if missing:
            raise RVError(f"no random variable for {missing}")
        return names, [rvs[n] for n in names]
    names = phi.ordered_free_vars()
    if len(names) != len(rvs):
        raise RVError(f"formula has free variables {names}; {len(rvs)} random variable(s) given")
    return names, list(rvs)


def _ordered(rest: list[str], rvs: Sequence[SimpleRV] | Mapping[str, SimpleRV]) -> list[SimpleRV]:
    if isinstance(rvs, Mapping):
        missing = [n for n in rest if n not in rvs]
        if missing:
            raise RVError(f"no random variable for {missing}")
        return [rvs[n] for n in rest]
    if len(rest) != len(rvs):
        raise RVError(f"expected random variables for {rest}")
    return list(rvs)


def event_map(M: Structure, phi: Formula, rvs: Sequence[SimpleRV] | Mapping[str, SimpleRV]) -> Event:
    """The event where ``phi`` holds of the random variables, pointwise."""
    if not phi.is_qf and not M.is_decidable:
        raise StructureError(f"{M.name} refuses quantified event maps; use left_ce_existential")
    names, fs = _binding(phi, rvs)
    hits: list[Event] = []
    cache: dict[tuple, bool] = {}
    for vals, cell in refinement(fs):
        key = tuple(M.canonical(v) for v in vals)
        if key not in cache:
            cache[key] = M.decide(phi, dict(zip(names, vals)))
        if cache[key]:
            hits.append(cell)
    return union_all(hits)


def mu_formula(M: Structure, phi: Formula, rvs) -> Fraction:
    return event_map(M, phi, rvs).measure()


def _split_witness_var(phi: Formula, witness_var: str | None) -> tuple[str, list[str]]:
    names = phi.ordered_free_vars()
    if witness_var is None:
        if not names:
            raise RVError("formula has no free variable to witness")
        witness_var = names[-1]
    if witness_var not in names:
        names = names + [witness_var]
    rest = [n for n in names if n != witness_var]
    return witness_var, rest


def fullness_witness(
    M: Structure,
    phi: Formula,
    rvs: Sequence[SimpleRV] | Mapping[str, SimpleRV],
    witness_var: str | None = None,
    search_limit: int = 100_000,
) -> SimpleRV:
    """A simple g with the event of phi(f, g) equal to the event of (exists y) phi(f, y).

    ``rvs`` are matched with the free variables other than ``witness_var``
    (default: the last free variable in natural order), in order or by name.
    """
    if not M.is_decidable:
        raise StructureError("fullness witnesses need a decidable structure")
    y, rest = _split_witness_var(phi, witness_var)
    rvs = _ordered(rest, rvs)
    exists = Exists(y, phi)
    default = M.enumerate(0)
    cells: list[tuple[Element, Event]] = []
    for vals, cell in refinement(rvs):
        env = dict(zip(rest, vals))
        if M.decide(exists, env):
            cells.append((M.find_witness(phi, y, env, search_limit), cell))
        else:
            cells.append((default, cell))
    return SimpleRV.build(M, cells)


def left_ce_existential(
    M: Structure,
    phi: Formula,
    rvs: Sequence[SimpleRV] | Mapping[str, SimpleRV],
    witness_var: str | None = None,
) -> Iterator[Fraction]:
    """Nondecreasing lower bounds for the measure of (exists y) phi, phi quantifier-free.

    Stage s takes the best simple g whose values come from the first s+1
    enumerated elements and whose cells refine the cells of ``rvs`` (finer
    dyadic cells never help, since phi's truth is constant on each cell).
    Only the quantifier-free oracle is consulted.
    """
    if not phi.is_qf:
        raise RVError("left_ce_existential takes a quantifier-free formula")
    y, rest = _split_witness_var(phi, witness_var)
    rvs = _ordered(rest, rvs)
    pending = [(dict(zip(rest, vals)), cell.measure()) for vals, cell in refinement(rvs)]
    value = ZERO
    stage = 0
    while True:
        b = M.enumerate(stage)
        still = []
        for env, mass in pending:
            env2 = dict(env)
            env2[y] = b
            if M.qf_decide(phi, env2):
                value += mass
            else:
                still.append((env, mass))
        pending = still
        yield value
        stage += 1


def witness_partition_rv(
    M: Structure,
    thetas: Sequence[Formula],
    rvs: Sequence[SimpleRV],
    parts: Sequence[Event],
    witness_var: str = "x",
    search_limit: int = 100_000,
) -> SimpleRV:
    """A simple g with the event of theta_i(g, f) equal to parts[i] for every i.

    The thetas must be exhaustive and pairwise contradictory; the remaining
    free variables of each theta are matched to ``rvs`` in natural order.
    """
    if len(thetas) != len(parts):
        raise RVError("one event per formula is required")
    total = sum((p.measure() for p in parts), ZERO)
    if total != ONE or union_all(parts) != Event.full():
        raise RVError("the events must partition [0,1)")
    binds = []
    for i, theta in enumerate(thetas):
        _, rest = _split_witness_var(theta, witness_var)
        if len(rest) > len(rvs):
            raise RVError(f"formula {i} has free variables {rest}")
        binds.append(rest)
    names = sorted({n for rest in binds for n in rest}, key=_nat)
    if len(names) != len(rvs):
        names = [f"y{j}" for j in range(1, len(rvs) + 1)]
    zones = []
    for i, theta in enumerate(thetas):
        zone = event_map(M, Exists(witness_var, theta), dict(zip(names, rvs)))
        if not parts[i].issubset(zone):
            raise RVError(f"part {i} is not inside the event where formula {i} is satisfiable")
        zones.append(zone)
    cells: list[tuple[Element, Event]] = []
    for vals, cell in refinement(rvs):
        env = dict(zip(names, vals))
        for i, theta in enumerate(thetas):
            piece = cell & parts[i]
            if piece.is_empty:
                continue
            cells.append((M.find_witness(theta, witness_var, env, search_limit), piece))
    return SimpleRV.build(M, cells)


def _nat(name: str):
    from .structures import natural_key

    return natural_key(name)


_CELL = re.compile(r"\s*([^:;{}]+?)\s*:\s*([^;{}]+?)\s*(?:;|$)")


def parse_rv(text: str, M: Structure) -> SimpleRV:
    """Read ``{e0: [0,1/2); e1: [1/2,1)}``; element names go through the structure."""
    body = text.strip()
    if not (body.startswith("{") and body.endswith("}")):
        raise RVError(f"random variable literal must be braced: {text!r}")
    body = body[1:-1]
    cells: list[tuple[Element, Event]] = []
    pos = 0
    while pos < len(body):
        m = _CELL.match(body, pos)
        if not m:
            raise RVError(f"bad cell in random variable literal at offset {pos + 1}")
        cells.append((M.parse_element(m.group(1)), parse_event(m.group(2))))
        pos = m.end()
    return SimpleRV.build(M, cells)
