"""Isolated types, realization repair and back-and-forth isomorphisms.

Two flavours run side by side.  For the probability algebra ("apa") the type
of an event x over context events A1..Am is the vector of masses of x inside
each of the 2^m atoms A1^s1 & ... & Am^sm.  For a randomization of an
effectively omega-categorical M ("k") the type of a random variable g over
f1..fn is the vector of masses of [theta_i(g, f)], one per isolating formula
of (n+1)-types.

Realization sets are closed, and a point inside one is reached by chasing
formally included balls whose centres come from a guided repair of the
previous centre.  The back-and-forth alternates domain and range extensions
over the canonical enumerations of both presentations; its partial maps are
only approximately elementary, at the working precision.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

from .errors import SearchTimeout
from .events import Event, ONE, ZERO, format_rational, refine, sub_event, union_all
from .presentations import (
    CEClosedSet,
    ComputablePoint,
    EventPresentation,
    KSpecial,
    RandomizationPresentation,
    RationalBall,
    Special,
    _nth_radius,
    cantor_unpair,
    enumerate_terms,
)
from .randvars import SimpleRV, mu_formula, refinement, rv_dist
from .rformula import Compl, EBot, ETerm, ETop, Join, Meet, compl, join, meet
from .structures import Element, Formula, Structure, parse_classical, type_variables


class InfeasibleType(ValueError):
    """Targets that no point can realize over the given context."""


# --------------------------------------------------------------------------
# isolated types


def patterns(m: int) -> list[tuple[bool, ...]]:
    return list(itertools.product((True, False), repeat=m))


def atom_of(pattern: Sequence[bool], context: Sequence[Event]) -> Event:
    out = Event.full()
    for sign, a in zip(pattern, context):
        out = out & (a if sign else ~a)
    return out


def _pattern_str(pattern: Sequence[bool]) -> str:
    return "".join("+" if s else "-" for s in pattern) or "."


@dataclass(frozen=True)
class IsolatedType:
    """A type given by rational targets.

    flavor "apa": targets[i] is the mass of x inside atom patterns[i].
    flavor "k": targets[i] is the mass of [theta_i(x, f)].
    """

    flavor: str
    targets: tuple[Fraction, ...]
    patterns: tuple[tuple[bool, ...], ...] = ()
    thetas: tuple[Formula, ...] = ()

    def __post_init__(self) -> None:
        if self.flavor not in ("apa", "k"):
            raise ValueError(f"unknown type flavor {self.flavor!r}")
        if any(not ZERO <= r <= ONE for r in self.targets):
            raise InfeasibleType("type targets must lie in [0,1]")

    def to_json(self) -> dict:
        if self.flavor == "apa":
            labels = [_pattern_str(p) for p in self.patterns]
        else:
            labels = [str(t) for t in self.thetas]
        return {
            "flavor": self.flavor,
            "targets": {lab: format_rational(r) for lab, r in zip(labels, self.targets) if self.flavor == "apa" or r},
        }


def apa_type(point: Event, context: Sequence[Event]) -> IsolatedType:
    pats = patterns(len(context))
    return IsolatedType("apa", tuple((point & atom_of(p, context)).measure() for p in pats), tuple(pats))


def psi_apa(B: Event, context: Sequence[Event], p: IsolatedType) -> Fraction:
    return max(abs((B & atom_of(pat, context)).measure() - r) for pat, r in zip(p.patterns, p.targets))


class TypeTable:
    """Classification of value tuples by the isolating formulas of (n+1)-types."""

    def __init__(self, M: Structure, n: int) -> None:
        if not M.is_effectively_omega_categorical:
            raise ValueError(f"{M.name} is not effectively omega-categorical")
        self.M = M
        self.n = n
        self.names = type_variables(n)
        self.thetas = list(M.isolating_formulas(n))
        self._cls: dict[tuple, int] = {}
        self._ach: dict[tuple, frozenset[int]] = {}
        self._wit: dict[tuple, Element] = {}

    def classify(self, vals: Sequence[Element]) -> int:
        key = tuple(self.M.canonical(v) for v in vals)
        if key not in self._cls:
            env = dict(zip(self.names, key))
            for i, theta in enumerate(self.thetas):
                if self.M.decide(theta, env):
                    self._cls[key] = i
                    break
            else:
                raise ValueError(f"no isolating formula holds at {key}")
        return self._cls[key]

    def achievable(self, fvals: Sequence[Element]) -> frozenset[int]:
        """Indices i with (exists x) theta_i(x, fvals)."""
        key = tuple(self.M.canonical(v) for v in fvals)
        if key not in self._ach:
            self._ach[key] = frozenset(self.classify((w,) + key) for w in self.M.witnesses(list(key)))
        return self._ach[key]

    def witness(self, i: int, fvals: Sequence[Element]) -> Element:
        key = (i,) + tuple(self.M.canonical(v) for v in fvals)
        if key not in self._wit:
            env = dict(zip(self.names[1:], key[1:]))
            self._wit[key] = self.M.find_witness(self.thetas[i], "x", env)
        return self._wit[key]

    def events(self, g: SimpleRV, fs: Sequence[SimpleRV]) -> list[Event]:
        parts: list[list[Event]] = [[] for _ in self.thetas]
        for vals, cell in refinement([g, *fs]):
            parts[self.classify(vals)].append(cell)
        return [union_all(p) for p in parts]

    def zones(self, fs: Sequence[SimpleRV]) -> list[tuple[list[int], Event]]:
        """The context split by the set of realizable formulas, in first-seen order."""
        cells = refinement(list(fs)) if fs else [((), Event.full())]
        groups: dict[frozenset[int], list[Event]] = {}
        for vals, cell in cells:
            groups.setdefault(self.achievable(vals), []).append(cell)
        return [(sorted(key), union_all(es)) for key, es in groups.items()]


_TABLES: dict[tuple[int, int], tuple[Structure, TypeTable]] = {}


def type_table(M: Structure, n: int) -> TypeTable:
    key = (id(M), n)
    if key not in _TABLES or _TABLES[key][0] is not M:
        _TABLES[key] = (M, TypeTable(M, n))
    return _TABLES[key][1]


def k_type(M: Structure, g: SimpleRV, fs: Sequence[SimpleRV]) -> IsolatedType:
    tab = type_table(M, len(fs))
    return IsolatedType("k", tuple(e.measure() for e in tab.events(g, fs)), thetas=tuple(tab.thetas))


def psi_k(M: Structure, g: SimpleRV, fs: Sequence[SimpleRV], p: IsolatedType) -> Fraction:
    evs = type_table(M, len(fs)).events(g, fs)
    return max(abs(e.measure() - r) for e, r in zip(evs, p.targets))


def isolated_type_of(pres, point, context: Sequence = (), flavor: str = "apa", k: int = 8) -> IsolatedType:
    """Targets of ``point`` over ``context`` to within 2^-k.

    Points may be concrete values (Event or SimpleRV), generated terms of
    ``pres``, or ComputablePoints.
    """
    if flavor == "apa":
        ev = _as_event(pres, point, k + 2)
        return apa_type(ev, [_as_event(pres, c, k + 2) for c in context])
    if flavor == "k":
        if not isinstance(pres, RandomizationPresentation):
            raise ValueError("the k flavor needs a randomization presentation")
        if not pres.M.is_effectively_omega_categorical:
            raise ValueError(f"{pres.M.name} is not effectively omega-categorical")
        g = _as_rv(pres, point, k + 2)
        return k_type(pres.M, g, [_as_rv(pres, c, k + 2) for c in context])
    raise ValueError(f"unknown type flavor {flavor!r}")


def _as_event(pres, x, k: int) -> Event:
    if isinstance(x, ComputablePoint):
        x = x.seq(k + 1)
    if isinstance(x, Event):
        return x
    if pres is None:
        raise ValueError("terms need a presentation")
    return pres.denote(x, k + 1)


def _as_rv(pres: RandomizationPresentation, x, k: int) -> SimpleRV:
    if isinstance(x, ComputablePoint):
        x = x.seq(k)
    if isinstance(x, SimpleRV):
        return x
    return pres.denote_rv(x, k)


# --------------------------------------------------------------------------
# repairs


def near_realization_repair(B: Event, context: Sequence[Event], p: IsolatedType) -> Event:
    """B' realizing p exactly, changed only by the per-atom surplus or deficit.

    Surplus is trimmed to a left prefix of B inside the atom; a deficit is
    filled by a left prefix of the atom outside B.
    """
    if p.flavor != "apa":
        raise ValueError("near_realization_repair takes an apa type")
    out = []
    for pat, r in zip(p.patterns, p.targets):
        atom = atom_of(pat, context)
        if r > atom.measure():
            raise InfeasibleType(f"target {r} exceeds atom {_pattern_str(pat)} of measure {atom.measure()}")
        cur = B & atom
        have = cur.measure()
        if have > r:
            out.append(sub_event(cur, r))
        elif have < r:
            out.append(cur | sub_event(atom - B, r - have))
        else:
            out.append(cur)
    return union_all(out)


def _check_k_targets(tab: TypeTable, zones, targets: Sequence[Fraction]) -> None:
    covered = set()
    for idx, zone in zones:
        covered.update(idx)
        if sum((targets[i] for i in idx), ZERO) != zone.measure():
            raise InfeasibleType("targets do not add up to the measure of their zone")
    if any(r and i not in covered for i, r in enumerate(targets)):
        raise InfeasibleType("a positive target sits on an unrealizable formula")


def _k_repair(tab: TypeTable, g: SimpleRV, fs: Sequence[SimpleRV], targets: Sequence[Fraction]) -> SimpleRV:
    zones = tab.zones(fs)
    _check_k_targets(tab, zones, targets)
    parts = tab.events(g, fs)
    new = list(parts)
    for idx, zone in zones:
        pool = []
        for i in idx:
            if parts[i].measure() > targets[i]:
                new[i] = sub_event(parts[i], targets[i])
                pool.append(parts[i] - new[i])
        spare = union_all(pool)
        for i in idx:
            deficit = targets[i] - new[i].measure()
            if deficit > 0:
                piece = sub_event(spare, deficit)
                new[i] = new[i] | piece
                spare = spare - piece
    cells: list[tuple[Element, Event]] = []
    for vals, cell in refinement([g, *fs]):
        keep = cell & new[tab.classify(vals)]
        if not keep.is_empty:
            cells.append((vals[0], keep))
    fcells = refinement(list(fs)) if fs else [((), Event.full())]
    for i, part in enumerate(new):
        moved = part - parts[i]
        if moved.is_empty:
            continue
        for fvals, fcell in fcells:
            piece = moved & fcell
            if not piece.is_empty:
                cells.append((tab.witness(i, fvals), piece))
    return SimpleRV.build(tab.M, cells)


def k_realization_repair(g: SimpleRV, fs: Sequence[SimpleRV], p: IsolatedType, M: Structure) -> SimpleRV:
    """g' with mu[theta_i(g', f)] = r_i exactly, agreeing with g off the moved mass.

    Within each zone (where the same formulas are realizable) surplus parts
    are trimmed to a left prefix and deficits take the freed mass; moved mass
    gets the first witness of its formula.
    """
    if p.flavor != "k":
        raise ValueError("k_realization_repair takes a k type")
    tab = type_table(M, len(fs))
    if len(p.targets) != len(tab.thetas):
        raise ValueError("type and context sizes disagree")
    return _k_repair(tab, g, fs, p.targets)


def _floor_dyadic(q: Fraction, depth: int) -> Fraction:
    return Fraction((q.numerator << depth) // q.denominator, 1 << depth)


def feasible_k_targets(
    tab: TypeTable, fs: Sequence[SimpleRV], raw: Sequence[Fraction], depth: int | None = None
) -> tuple[list[Fraction], bool]:
    """Targets made consistent with the zones of ``fs``: rescaled inside each zone
    (all mass to its first formula when the raw targets give it none), optionally
    rounded to multiples of 2^-depth by cumulative flooring.  Also reports whether
    anything other than rounding changed.
    """
    out = [ZERO] * len(raw)
    changed = False
    covered: set[int] = set()
    for idx, zone in tab.zones(fs):
        covered.update(idx)
        mz = zone.measure()
        rs = [raw[i] for i in idx]
        total = sum(rs, ZERO)
        if total != mz:
            changed = True
            rs = [r * mz / total for r in rs] if total else [mz] + [ZERO] * (len(rs) - 1)
        if depth is not None:
            cum, prev, rounded = ZERO, ZERO, []
            for j, r in enumerate(rs):
                cum += r
                cut = mz if j == len(rs) - 1 else min(_floor_dyadic(cum, depth), mz)
                rounded.append(cut - prev)
                prev = cut
            rs = rounded
        for i, r in zip(idx, rs):
            out[i] = r
    if any(r and i not in covered for i, r in enumerate(raw)):
        changed = True
    return out, changed


# --------------------------------------------------------------------------
# guided realization inside an event presentation


def _context_atoms(ctx_terms: Sequence[ETerm], ctx_events: Sequence[Event]) -> list[tuple[tuple[bool, ...], ETerm, Event]]:
    out = []
    for pat, ev in refine(list(ctx_events)):
        term = meet(*(t if s else compl(t) for s, t in zip(pat, ctx_terms)))
        out.append((pat, term, ev))
    return out


class ApaRealizer:
    """Builds generated points of ``pres`` whose type over ``context`` nears the targets.

    The candidate from centre C keeps C inside each atom and then trims a
    surplus (or fills a deficit from the atom outside C) with a cut
    sigma([0, t)), t dyadic at the search depth, chosen by bisection.
    """

    def __init__(self, pres: EventPresentation, context: Sequence[ETerm], targets: dict[tuple[bool, ...], Fraction], prec: int) -> None:
        self.pres = pres
        self.context = list(context)
        self.prec = prec
        self.ctx_events = [pres.denote(t, prec) for t in self.context]
        self.atoms = _context_atoms(self.context, self.ctx_events)
        self.renormalized = False
        self.targets: dict[tuple[bool, ...], Fraction] = {}
        for pat, _, ev in self.atoms:
            r = targets.get(pat, ZERO)
            clipped = min(max(r, ZERO), ev.measure())
            if clipped != r:
                self.renormalized = True
            self.targets[pat] = clipped
        if any(r and pat not in self.targets for pat, r in targets.items()):
            self.renormalized = True
        self._cuts: dict[Fraction, Event] = {}

    @property
    def m(self) -> int:
        return len(self.context)

    def _cut(self, t: Fraction) -> Event:
        if t not in self._cuts:
            self._cuts[t] = self.pres.denote(self.pres.cut(t), self.prec)
        return self._cuts[t]

    def _bisect(self, X: Event, need: Fraction, depth: int) -> Fraction:
        """Largest t = a/2^depth with mu(X & cut(t)) <= need."""
        lo, hi = 0, 1 << depth
        if (X & self._cut(ONE)).measure() <= need:
            return ONE
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if (X & self._cut(Fraction(mid, 1 << depth))).measure() <= need:
                lo = mid
            else:
                hi = mid
        return Fraction(lo, 1 << depth)

    def build(self, centre: ETerm | None, depth: int) -> ETerm:
        C_ev = Event.empty() if centre is None else self.pres.denote(centre, self.prec)
        C = EBot() if centre is None else centre
        pieces = []
        for pat, a_term, a_ev in self.atoms:
            r = self.targets[pat]
            inside = a_ev & C_ev
            have = inside.measure()
            if have > r:
                t = self._bisect(inside, r, depth)
                pieces.append(meet(a_term, C, self.pres.cut(t)))
            else:
                t = self._bisect(a_ev - C_ev, r - have, depth)
                pieces.append(join(meet(a_term, C), meet(a_term, compl(C), self.pres.cut(t))))
        return join(*pieces)

    def psi(self, D: ETerm) -> Fraction:
        ev = self.pres.denote(D, self.prec)
        return max((abs((ev & a_ev).measure() - self.targets[pat]) for pat, _, a_ev in self.atoms), default=ZERO)

    def error(self) -> Fraction:
        """Bound on the error of one estimate at the working precision."""
        return ZERO if self.pres.exact else Fraction(self.m + 2, 1 << self.prec)

    def meets(self, ball: RationalBall, D: ETerm) -> bool:
        """The search predicate psi(D) + delta < (eps - d(C, D)) / 2^m."""
        err = self.error()
        d = self.pres.eval_dist(ball.center, D, self.prec) if not isinstance(ball.center, EBot) else self.pres.eval_mu(D, self.prec)
        return self.psi(D) + 2 * err < (ball.radius - d - err) / (1 << self.m)


def realizations_enumerator(pres, context: Sequence, p: IsolatedType, prec: int = 24) -> CEClosedSet:
    """Balls (generated point, rational radius) meeting the realization set of p.

    For an event presentation the candidates at search depth j are the guided
    repair of the centre at bisection depth j, followed by the first j
    enumerated generated points.
    """
    if p.flavor == "apa":
        if not isinstance(pres, EventPresentation):
            raise ValueError("apa realizations live in an event presentation")
        targets = dict(zip(p.patterns, p.targets))
        real = ApaRealizer(pres, list(context), targets, prec)

        def ball(i: int) -> RationalBall:
            a, b = cantor_unpair(i)
            return RationalBall(enumerate_terms(a), _nth_radius(b))

        def test(b: RationalBall, depth: int) -> bool:
            if real.meets(b, real.build(b.center, depth + 1)):
                return True
            return real.meets(b, enumerate_terms(depth))

        return CEClosedSet(ball, test)
    if not isinstance(pres, RandomizationPresentation):
        raise ValueError("k realizations live in a randomization presentation")
    tab = type_table(pres.M, len(context))
    fs = [_as_rv(pres, c, prec) for c in context]
    m = len(tab.thetas)

    def kball(i: int) -> RationalBall:
        a, b = cantor_unpair(i)
        return RationalBall(KSpecial(a), _nth_radius(b))

    def ktest(b: RationalBall, depth: int) -> bool:
        g = pres.special_rv(b.center.index)
        targets, _ = feasible_k_targets(tab, fs, p.targets, depth + 1)
        D = _k_repair(tab, g, fs, targets)
        return psi_k(pres.M, D, fs, p) < (b.radius - rv_dist(pres.M, g, D)) / m

    return CEClosedSet(kball, ktest)


# --------------------------------------------------------------------------
# chasing formally included balls


@dataclass
class ChainLink:
    radius: Fraction
    depth: int
    psi: Fraction
    step: Fraction

    def to_json(self) -> dict:
        return {
            "radius": format_rational(self.radius),
            "depth": self.depth,
            "psi": format_rational(self.psi),
            "step": format_rational(self.step),
        }


class Chase:
    """A computable point in a realization set, seq(j) within 2^-j of the limit.

    Level j holds a centre D_j whose ball of radius 2^-j meets the realization
    set (witnessed by the search predicate) and is formally included in the
    ball of level j - 1.
    """

    def __init__(
        self,
        build: Callable[[int], object],
        meets: Callable[[RationalBall, object], bool],
        dist: Callable[[object, object], Fraction],
        psi: Callable[[object], Fraction],
        slack: int,
        max_extra: int = 24,
        fallback: Callable[[int], object] | None = None,
        fallback_limit: int = 2000,
    ) -> None:
        self._build = build
        self._meets = meets
        self._dist = dist
        self._psi = psi
        self.slack = slack
        self.max_extra = max_extra
        self.fallback = fallback
        self.fallback_limit = fallback_limit
        self.chain: list[object] = []
        self.links: list[ChainLink] = []

    def _admissible(self, j: int, D) -> tuple[bool, Fraction]:
        r = Fraction(1, 1 << j)
        if not self._meets(RationalBall(D, r), D):
            return False, ZERO
        if not self.chain:
            return True, ZERO
        step = self._dist(self.chain[-1], D)
        return step + r < 2 * r, step

    def _extend(self) -> None:
        j = len(self.chain) + 1
        for extra in range(self.max_extra):
            depth = j + self.slack + extra
            D = self._build(depth)
            ok, step = self._admissible(j, D)
            if ok:
                self.chain.append(D)
                self.links.append(ChainLink(Fraction(1, 1 << j), depth, self._psi(D), step))
                return
        if self.fallback is not None:
            for i in range(self.fallback_limit):
                D = self.fallback(i)
                ok, step = self._admissible(j, D)
                if ok:
                    self.chain.append(D)
                    self.links.append(ChainLink(Fraction(1, 1 << j), -1 - i, self._psi(D), step))
                    return
        raise SearchTimeout(f"no formally included ball of radius 2^-{j} found", state=len(self.chain))

    def seq(self, j: int):
        j = max(j, 1)
        while len(self.chain) < j:
            self._extend()
        return self.chain[j - 1]

    def point(self, label: str = "") -> ComputablePoint:
        return ComputablePoint(self.seq, label)


def apa_chase(pres: EventPresentation, context: Sequence[ETerm], targets: dict, prec: int) -> tuple[Chase, ApaRealizer]:
    real = ApaRealizer(pres, context, targets, prec)
    chase = Chase(
        build=lambda depth: real.build(None, depth),
        meets=real.meets,
        dist=lambda a, b: pres.eval_dist(a, b, prec),
        psi=real.psi,
        slack=real.m + 3,
        fallback=enumerate_terms,
    )
    return chase, real


# --------------------------------------------------------------------------
# partial maps and back-and-forth


@dataclass
class PartialMap:
    """Pairs (domain point of pres1, range point of pres2) and the step log."""

    domain: list = field(default_factory=list)
    range: list = field(default_factory=list)
    log: list[dict] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.domain)

    def copy(self) -> PartialMap:
        return PartialMap(list(self.domain), list(self.range), list(self.log))


def _label(t) -> str:
    if isinstance(t, (Special, KSpecial)):
        return t.sexpr()
    size = _term_size(t)
    return t.sexpr() if size <= 12 else f"<term of {size} nodes>"


def _term_size(t) -> int:
    seen: set[int] = set()
    stack = [t]
    while stack:
        u = stack.pop()
        if id(u) in seen:
            continue
        seen.add(id(u))
        stack.extend(u.children() if isinstance(u, ETerm) else ())
    return len(seen)


def _work_prec(k: int) -> int:
    return k + 6


def extend_partial_map(
    pres1,
    pres2,
    pmap: PartialMap,
    point,
    flavor: str = "apa",
    k: int = 6,
    side: str = "domain",
) -> PartialMap:
    """Add ``point`` (of pres1 when side is "domain", of pres2 for "range").

    The type of the point over its side of the map is transported to the
    other side and realized there by a chased computable point, cut at the
    working precision k + 6.
    """
    if side not in ("domain", "range"):
        raise ValueError("side is 'domain' or 'range'")
    src, dst = (pres1, pres2) if side == "domain" else (pres2, pres1)
    src_ctx, dst_ctx = (pmap.domain, pmap.range) if side == "domain" else (pmap.range, pmap.domain)
    w = _work_prec(k)
    if flavor == "apa":
        src_events = [src.denote(t, w) for t in src_ctx]
        pev = src.denote(point, w)
        targets = {pat: (pev & ev).measure() for pat, ev in refine(src_events)}
        chase, real = apa_chase(dst, dst_ctx, targets, w + len(dst_ctx) + 8)
        image = chase.seq(w)
        entry = {
            "targets": {_pattern_str(p): format_rational(r) for p, r in sorted(targets.items(), reverse=True)},
            "renormalized": real.renormalized,
            "psi": format_rational(real.psi(image)),
        }
    elif flavor == "k":
        image, entry = _k_extend(src, dst, src_ctx, dst_ctx, point, w)
        chase = entry.pop("_chase")
    else:
        raise ValueError(f"unknown flavor {flavor!r}")
    out = pmap.copy()
    if side == "domain":
        out.domain.append(point)
        out.range.append(image)
    else:
        out.domain.append(image)
        out.range.append(point)
    out.log.append(
        {
            "step": len(pmap.log),
            "side": side,
            "point": _label(point),
            "image": _label(image),
            **entry,
            "chain": [link.to_json() for link in chase.links[:w]],
            "precision": w,
        }
    )
    return out


def _k_extend(src: RandomizationPresentation, dst: RandomizationPresentation, src_ctx, dst_ctx, point, w: int):
    M = src.M
    tab = type_table(M, len(src_ctx))
    fs_src = [src.special_rv(t.index) for t in src_ctx]
    fs_dst = [dst.special_rv(t.index) for t in dst_ctx]
    g = src.special_rv(point.index)
    raw = [e.measure() for e in tab.events(g, fs_src)]
    _, renorm = feasible_k_targets(tab, fs_dst, raw)
    start = dst.special_rv(0)
    m = len(tab.thetas)
    slack = max(m - 1, 1).bit_length() + 2

    def build(depth: int) -> KSpecial:
        targets, _ = feasible_k_targets(tab, fs_dst, raw, depth)
        return KSpecial(dst.index_of_rv(_k_repair(tab, start, fs_dst, targets)))

    exact_targets, _ = feasible_k_targets(tab, fs_dst, raw)

    def psi(D: KSpecial) -> Fraction:
        evs = tab.events(dst.special_rv(D.index), fs_dst)
        return max(abs(e.measure() - r) for e, r in zip(evs, exact_targets))

    def meets(ball: RationalBall, D: KSpecial) -> bool:
        return psi(D) < (ball.radius - dst.eval_dist_k(ball.center, D)) / m

    chase = Chase(build, meets, lambda a, b: dst.eval_dist_k(a, b), psi, slack)
    image = chase.seq(w)
    entry = {
        "targets": {str(tab.thetas[i]): format_rational(r) for i, r in enumerate(raw) if r},
        "renormalized": renorm,
        "psi": format_rational(psi(image)),
        "_chase": chase,
    }
    return image, entry


class BackAndForth:
    """Alternating extensions: even steps take the next enumerated point of
    pres1 into the domain, odd steps the next point of pres2 into the range."""

    def __init__(self, pres1, pres2, flavor: str = "apa", k: int = 6) -> None:
        if flavor == "apa":
            if not (isinstance(pres1, EventPresentation) and isinstance(pres2, EventPresentation)):
                raise ValueError("the apa flavor takes two presentations of B([0,1))")
        elif flavor == "k":
            if not (isinstance(pres1, RandomizationPresentation) and isinstance(pres2, RandomizationPresentation)):
                raise ValueError("the k flavor takes two randomization presentations")
            if pres1.M.signature != pres2.M.signature:
                raise ValueError("the presentations are of different signatures")
            if not pres1.M.is_effectively_omega_categorical:
                raise ValueError(f"{pres1.M.name} is not effectively omega-categorical")
        else:
            raise ValueError(f"unknown flavor {flavor!r}")
        self.pres1 = pres1
        self.pres2 = pres2
        self.flavor = flavor
        self.k = k
        self.map = PartialMap()
        self._next = [0, 0]
        self._dom_index: dict[str, int] = {}
        self._rng_index: dict[str, int] = {}

    def _enumerated(self, i: int):
        return enumerate_terms(i) if self.flavor == "apa" else KSpecial(i)

    def _key(self, t) -> str | None:
        if isinstance(t, (Special, KSpecial)) or _term_size(t) <= 12:
            return t.sexpr()
        return None

    def _add(self, point, side: str) -> None:
        self.map = extend_partial_map(self.pres1, self.pres2, self.map, point, self.flavor, self.k, side)
        n = len(self.map) - 1
        for t, index in ((self.map.domain[n], self._dom_index), (self.map.range[n], self._rng_index)):
            key = self._key(t)
            if key is not None:
                index.setdefault(key, n)

    def step(self) -> None:
        side = "domain" if len(self.map.log) % 2 == 0 else "range"
        slot = 0 if side == "domain" else 1
        index = self._dom_index if side == "domain" else self._rng_index
        while True:
            point = self._enumerated(self._next[slot])
            self._next[slot] += 1
            if point.sexpr() not in index:
                break
        self._add(point, side)

    def run(self, steps: int) -> IsoOracle:
        for _ in range(steps):
            self.step()
        return IsoOracle(self)

    def log_json(self) -> str:
        return json.dumps(self.map.log, sort_keys=True, indent=1)


class IsoOracle:
    """The map on generated points induced by a back-and-forth run.

    Points in the domain map to their partners; Boolean combinations map
    homomorphically; other special points extend the domain on demand.
    """

    def __init__(self, engine: BackAndForth) -> None:
        self.engine = engine

    @property
    def k(self) -> int:
        return self.engine.k

    def _lookup(self, t, forward: bool, k: int):
        if k > self.engine.k:
            raise ValueError(f"the run was made at precision {self.engine.k}")
        eng = self.engine
        index = eng._dom_index if forward else eng._rng_index
        key = eng._key(t)
        if key is not None and key in index:
            n = index[key]
            return eng.map.range[n] if forward else eng.map.domain[n]
        if isinstance(t, (ETop, EBot)):
            return t
        if isinstance(t, Compl):
            return compl(self._lookup(t.arg, forward, k))
        if isinstance(t, Meet):
            return meet(*(self._lookup(c, forward, k) for c in t.items))
        if isinstance(t, Join):
            return join(*(self._lookup(c, forward, k) for c in t.items))
        if isinstance(t, (Special, KSpecial)):
            eng._add(t, "domain" if forward else "range")
            return self._lookup(t, forward, k)
        raise TypeError(f"not a generated point: {t}")

    def map(self, t, k: int | None = None):
        return self._lookup(t, True, self.k if k is None else k)

    def inverse(self, t, k: int | None = None):
        return self._lookup(t, False, self.k if k is None else k)

    @property
    def log(self) -> list[dict]:
        return self.engine.map.log


def back_and_forth(pres1, pres2, flavor: str = "apa", steps: int = 8, k: int = 6) -> IsoOracle:
    return BackAndForth(pres1, pres2, flavor, k).run(steps)


def preservation_table(oracle: IsoOracle, count: int) -> list[dict]:
    """Measures, distances and meet measures on the first ``count`` enumerated
    points of pres1 against their images."""
    eng = oracle.engine
    k = oracle.k
    pts = [eng._enumerated(i) for i in range(count)]
    imgs = [oracle.map(p) for p in pts]
    rows = []
    if eng.flavor == "apa":
        p1, p2 = eng.pres1, eng.pres2
        ev1 = [p1.denote(p, k + 4) for p in pts]
        ev2 = [p2.denote(q, k + 4) for q in imgs]
        for i, j in itertools.combinations_with_replacement(range(count), 2):
            rows.append(
                {
                    "pair": [i, j],
                    "dist": [(ev1[i] ^ ev1[j]).measure(), (ev2[i] ^ ev2[j]).measure()],
                    "mu": [ev1[i].measure(), ev2[i].measure()],
                    "meet": [(ev1[i] & ev1[j]).measure(), (ev2[i] & ev2[j]).measure()],
                }
            )
        return rows
    eq = parse_classical("(= x y)", eng.pres1.M.signature)
    rv1 = [eng.pres1.denote_rv(p) for p in pts]
    rv2 = [eng.pres2.denote_rv(q) for q in imgs]
    for i, j in itertools.combinations_with_replacement(range(count), 2):
        rows.append(
            {
                "pair": [i, j],
                "eq": [mu_formula(eng.pres1.M, eq, [rv1[i], rv1[j]]), mu_formula(eng.pres2.M, eq, [rv2[i], rv2[j]])],
                "dist": [rv_dist(eng.pres1.M, rv1[i], rv1[j]), rv_dist(eng.pres2.M, rv2[i], rv2[j])],
            }
        )
    return rows


def max_deviation(rows: list[dict]) -> Fraction:
    out = ZERO
    for row in rows:
        for key, val in row.items():
            if key != "pair":
                out = max(out, abs(val[0] - val[1]))
    return out
