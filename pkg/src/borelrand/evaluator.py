"""Semantic evaluation of two-sorted formulas in a randomization of M.

Quantifier-free formulas are evaluated exactly.  A quantifier is bracketed
by searching a grid of candidates: an event variable takes, inside every atom
of the current refinement, a prefix whose mass is a multiple of 1/mesh of
the atom; a random variable splits every atom into pieces labelled by
witnesses realising every type over the values present there.  Since the
matrix is Lipschitz in the masses it reads, the grid optimum is off by at
most L/(2 mesh), which widens the reported interval.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterator, Mapping

from . import restricted as R
from .errors import ResourceCapError
from .events import Event, ZERO, ONE, refine, sub_event, union_all
from .qe import Binder, prenex_parts
from .randvars import SimpleRV, event_map, refinement
from .rformula import B, Ev, RFormula, eval_qf, eval_term, to_restricted
from .structures import Structure


@dataclass(frozen=True)
class Bracket:
    lo: Fraction
    hi: Fraction

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def mid(self) -> Fraction:
        return (self.lo + self.hi) / 2

    def contains(self, q) -> bool:
        return self.lo <= q <= self.hi

    def to_json(self) -> dict:
        from .events import format_rational

        return {"lo": format_rational(self.lo), "hi": format_rational(self.hi)}


def eval_qf_formula(M: Structure | None, phi: RFormula, rvs: Mapping[str, SimpleRV], events: Mapping[str, Event]) -> Fraction:
    cache: dict[Ev, Event] = {}

    def ev_value(t: Ev) -> Event:
        if t not in cache:
            if M is None:
                raise ValueError("ev terms need a structure")
            if t.args:
                cache[t] = event_map(M, t.phi, {a: rvs[a] for a in t.args})
            else:
                cache[t] = Event.full() if M.decide(t.phi, {}) else Event.empty()
        return cache[t]

    return eval_qf(phi, lambda atom: eval_term(atom.term, events, ev_value).measure())


def _compositions(total: int, parts: int) -> Iterator[tuple[int, ...]]:
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def _split(atom: Event, counts: tuple[int, ...], mesh: int) -> list[Event]:
    mass = atom.measure()
    out, start = [], ZERO
    for c in counts:
        stop = start + mass * c / mesh
        out.append(sub_event(atom, stop) - sub_event(atom, start))
        start = stop
    return out


class _Search:
    def __init__(self, M, prefix: list[Binder], matrix: RFormula, mesh: int, max_candidates: int) -> None:
        self.M = M
        self.prefix = prefix
        self.matrix = matrix
        self.mesh = mesh
        self.max_candidates = max_candidates
        self.visited = 0
        fn, atoms = to_restricted(matrix)
        vec = R.lipschitz_vector(fn, len(atoms))
        self.lip = {}
        for b in prefix:
            self.lip[b.var] = sum(
                (l for l, a in zip(vec, atoms) if b.var in (a.term.event_vars() | a.term.k_vars())),
                ZERO,
            )

    def atoms(self, rvs: Mapping[str, SimpleRV], events: Mapping[str, Event]) -> list[Event]:
        cells = [c for _, c in refinement(list(rvs.values()))] if rvs else [Event.full()]
        evs = list(events.values())
        out = []
        for cell in cells:
            for _, piece in refine(evs):
                part = piece & cell
                if not part.is_empty:
                    out.append(part)
        return out

    def _tick(self, n: int) -> None:
        self.visited += n
        if self.visited > self.max_candidates:
            raise ResourceCapError(f"evaluator explored more than {self.max_candidates} candidates")

    def run(self, depth: int, rvs: dict[str, SimpleRV], events: dict[str, Event]) -> Bracket:
        if depth == len(self.prefix):
            v = eval_qf_formula(self.M, self.matrix, rvs, events)
            return Bracket(v, v)
        b = self.prefix[depth]
        factor, cands = self.candidates(b, rvs, events)
        slack = self.lip[b.var] * factor / (2 * self.mesh)
        best: Bracket | None = None
        for cand in cands:
            self._tick(1)
            if b.sort == B:
                inner = self.run(depth + 1, rvs, {**events, b.var: cand})
            else:
                inner = self.run(depth + 1, {**rvs, b.var: cand}, events)
            if best is None:
                best = inner
            elif b.kind == "inf":
                best = Bracket(min(best.lo, inner.lo), min(best.hi, inner.hi))
            else:
                best = Bracket(max(best.lo, inner.lo), max(best.hi, inner.hi))
        assert best is not None
        if b.kind == "inf":
            return Bracket(max(best.lo - slack, ZERO), best.hi)
        return Bracket(best.lo, min(best.hi + slack, ONE))

    def candidates(self, b: Binder, rvs, events) -> tuple[int, Iterator]:
        """(rounding factor, candidate stream) for one binder.

        Rounding a split of an atom into p pieces to the mesh moves at most
        (p - 1)/(2 mesh) of its mass; events are splits into p = 2 pieces.
        """
        atoms = self.atoms(rvs, events)
        g = self.mesh
        if b.sort == B:
            count = (g + 1) ** len(atoms)
            if count > self.max_candidates:
                raise ResourceCapError(f"{count} event candidates at mesh {g}")
            stream = (
                union_all(sub_event(a, a.measure() * k / g) for a, k in zip(atoms, ks))
                for ks in itertools.product(range(g + 1), repeat=len(atoms))
            )
            return 1, stream
        M = self.M
        options = []
        consts = [M.constant(c) for c in sorted(M.signature.constants)]
        for a in atoms:
            vals = []
            for f in rvs.values():
                for v, e in f.cells:
                    if not (e & a).is_empty:
                        vals.append(v)
            wit = []
            for w in M.witnesses(vals + consts):
                w = M.canonical(w)
                if w not in wit:
                    wit.append(w)
            options.append((a, wit))
        count = math.prod(math.comb(g + len(w) - 1, len(w) - 1) for _, w in options)
        if count > self.max_candidates:
            raise ResourceCapError(f"{count} random-variable candidates at mesh {g}")
        per_atom = [list(_compositions(g, len(w))) for _, w in options]

        def stream() -> Iterator[SimpleRV]:
            for choice in itertools.product(*per_atom):
                cells = []
                for (a, wit), counts in zip(options, choice):
                    for w, piece in zip(wit, _split(a, counts, g)):
                        if not piece.is_empty:
                            cells.append((w, piece))
                yield SimpleRV.build(M, cells)

        return max(len(w) for _, w in options) - 1, stream()


def eval_rformula(
    M: Structure | None,
    phi: RFormula,
    rvs: Mapping[str, SimpleRV] | None = None,
    events: Mapping[str, Event] | None = None,
    mesh: int = 8,
    max_candidates: int = 2_000_000,
) -> Bracket:
    """An interval containing the value of ``phi``; exact (width 0) when quantifier-free."""
    rvs = dict(rvs or {})
    events = dict(events or {})
    free = phi.free()
    missing = [v for v, s in free.items() if (v not in events if s == B else v not in rvs)]
    if missing:
        raise KeyError(f"no value assigned to {sorted(missing)}")
    prefix, matrix = prenex_parts(phi)
    if M is None and any(b.sort != B for b in prefix):
        raise ValueError("random-variable quantifiers need a structure")
    search = _Search(M, prefix, matrix, mesh, max_candidates)
    used_rvs = {k: v for k, v in rvs.items() if k in free}
    used_events = {k: v for k, v in events.items() if k in free}
    return search.run(0, used_rvs, used_events)
