"""Presentations of the probability algebra and of randomizations.

A presentation of B([0,1)) names special points by natural numbers and
answers measure queries on Boolean terms over them to any requested
precision.  The standard presentation lists the dyadic intervals in heap
order: index 2^l - 1 + a names [a/2^l, (a+1)/2^l).  Scrambled presentations
apply a measure-preserving map sigma to every special point.

A randomization presentation induced by a classical structure names simple
random variables by codes: code i unpairs to (n-1, L) and L unpairs to n
element indices followed by n heap-interval indices.  Most codes are not
partitions, so special points are listed through a dense re-indexing by
(partition tree, element assignment) pairs.
"""

from __future__ import annotations

import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterator, Sequence

from .errors import SearchTimeout
from .events import Event, ONE, ZERO, as_rational, format_rational, parse_rational, union_all
from .randvars import SimpleRV, event_map, rv_dist
from .rformula import ETerm, compl, join, meet
from .rformula import Compl as TCompl
from .rformula import EBot, ETop, Join, Meet
from .structures import Formula, Structure, load_structure, parse_classical

# --------------------------------------------------------------------------
# terms over special points


@dataclass(frozen=True)
class Special(ETerm):
    index: int

    def sexpr(self) -> str:
        return f"(sp {self.index})"


@dataclass(frozen=True)
class KSpecial:
    index: int

    def sexpr(self) -> str:
        return f"(ksp {self.index})"

    def __str__(self) -> str:
        return self.sexpr()


@dataclass(frozen=True)
class PEv(ETerm):
    """The event of a classical formula applied to K-sort special points."""

    phi: Formula
    args: tuple[KSpecial, ...]

    def sexpr(self) -> str:
        return f"(ev \"{self.phi}\" " + " ".join(a.sexpr() for a in self.args) + ")"


def leaves(t: ETerm) -> int:
    """Number of distinct leaf nodes; shared subterms are counted once."""
    seen: set[int] = set()
    count = 0
    stack = [t]
    while stack:
        u = stack.pop()
        if id(u) in seen:
            continue
        seen.add(id(u))
        if isinstance(u, (Special, PEv)):
            count += 1
        else:
            stack.extend(u.children())
    return max(count, 1)


def heap_interval(i: int) -> tuple[Fraction, Fraction]:
    if i < 0:
        raise ValueError("special point indices are natural numbers")
    level = (i + 1).bit_length() - 1
    a = i + 1 - (1 << level)
    return Fraction(a, 1 << level), Fraction(a + 1, 1 << level)


def heap_index(a: int, level: int) -> int:
    return (1 << level) - 1 + a


def cut_indices(t: Fraction) -> list[int]:
    """Heap indices of disjoint dyadic intervals whose union is [0, t) (t dyadic)."""
    t = as_rational(t)
    if not 0 <= t <= 1 or t.denominator & (t.denominator - 1):
        raise ValueError("cuts are taken at dyadic points of [0,1]")
    if t == 1:
        return [0]
    out, start = [], ZERO
    level = 0
    while start < t:
        level += 1
        width = Fraction(1, 1 << level)
        if start + width <= t:
            out.append(heap_index(int(start * (1 << level)), level))
            start += width
    return out


# --------------------------------------------------------------------------
# measure-preserving maps


class Scramble(ABC):
    exact = True
    name = "id"

    @abstractmethod
    def image(self, lo: Fraction, hi: Fraction, tol: Fraction) -> Event:
        """sigma([lo, hi)) as a rational event within ``tol`` in measure distance."""


class Identity(Scramble):
    def image(self, lo, hi, tol):
        return Event.of((lo, hi))


def _rotate(lo: Fraction, hi: Fraction, r: Fraction) -> Event:
    a, b = lo + r, hi + r
    if b <= 1:
        return Event.of((a, b))
    if a >= 1:
        return Event.of((a - 1, b - 1))
    return Event.of((a, ONE), (ZERO, b - 1))


class Rotation(Scramble):
    def __init__(self, r: Fraction) -> None:
        self.r = as_rational(r) % 1
        self.name = f"rot:{format_rational(self.r)}"

    def image(self, lo, hi, tol):
        return _rotate(lo, hi, self.r)


class SqrtTwoRotation(Scramble):
    """Rotation by sqrt(2) - 1, approximated by dyadic rationals on demand."""

    exact = False
    name = "rot:sqrt2"

    @staticmethod
    def approx(tol: Fraction) -> Fraction:
        j = 1
        while Fraction(1, 1 << j) > tol:
            j += 1
        return Fraction(math.isqrt(2 << (2 * j)), 1 << j) - 1

    def image(self, lo, hi, tol):
        return _rotate(lo, hi, self.approx(tol / 2))


class DigitPermutation(Scramble):
    """Permute the first n binary digits: digit p of sigma(x) is digit perm[p] of x."""

    def __init__(self, perm: Sequence[int]) -> None:
        perm = list(perm)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError(f"{perm} is not a permutation of 0..{len(perm) - 1}")
        self.perm = perm
        self.name = "digitperm:" + ",".join(map(str, perm))

    def _block(self, a: int) -> int:
        n = len(self.perm)
        bits = [(a >> (n - 1 - p)) & 1 for p in range(n)]
        out = 0
        for p in range(n):
            out = (out << 1) | bits[self.perm[p]]
        return out

    def image(self, lo, hi, tol):
        n = len(self.perm)
        pieces = []
        for lo_d, hi_d in _dyadic_pieces(lo, hi):
            width = hi_d - lo_d
            level = (1 / width).numerator.bit_length() - 1
            if level >= n:
                head = int(lo_d * (1 << n))
                rest = lo_d - Fraction(head, 1 << n)
                base = Fraction(self._block(head), 1 << n)
                pieces.append((base + rest, base + rest + width))
            else:
                first = int(lo_d * (1 << n))
                for a in range(first, first + (1 << (n - level))):
                    b = Fraction(self._block(a), 1 << n)
                    pieces.append((b, b + Fraction(1, 1 << n)))
        return Event.from_pairs(pieces)


def _dyadic_pieces(lo: Fraction, hi: Fraction) -> list[tuple[Fraction, Fraction]]:
    """Split a dyadic-endpoint interval into aligned dyadic intervals."""
    if lo.denominator & (lo.denominator - 1) or hi.denominator & (hi.denominator - 1):
        raise ValueError("digit permutations act on dyadic intervals")
    out = []
    while lo < hi:
        level = 0
        while True:
            w = Fraction(1, 1 << level)
            if (lo / w).denominator == 1 and lo + w <= hi:
                break
            level += 1
        out.append((lo, lo + w))
        lo += w
    return out


def parse_scramble(text: str) -> Scramble:
    if text in ("std", "id", ""):
        return Identity()
    if text == "rot:sqrt2":
        return SqrtTwoRotation()
    if text.startswith("rot:"):
        return Rotation(parse_rational(text[4:]))
    if text.startswith("digitperm:"):
        try:
            return DigitPermutation([int(x) for x in text[len("digitperm:"):].split(",")])
        except ValueError as exc:
            raise ValueError(f"bad digit permutation {text!r}: {exc}") from None
    raise ValueError(f"unknown presentation {text!r}")


# --------------------------------------------------------------------------
# presentations of B([0,1))


class EventPresentation:
    """B([0,1)) with special point i = sigma(i-th heap interval)."""

    def __init__(self, scramble: Scramble | None = None) -> None:
        self.scramble = scramble or Identity()
        self.name = "std" if isinstance(self.scramble, Identity) else self.scramble.name

    @property
    def exact(self) -> bool:
        return self.scramble.exact

    def special(self, i: int) -> Special:
        return Special(i)

    def cut(self, t: Fraction) -> ETerm:
        """A generated point of measure t: the join of the specials forming [0, t) before sigma."""
        idx = cut_indices(t)
        return join(*(Special(i) for i in idx)) if idx else EBot()

    def denote(self, t: ETerm, k: int, ev_value: Callable[[PEv, int], Event] | None = None) -> Event:
        """A rational event within 2^-k of the denotation of ``t``."""
        tol = Fraction(1, (1 << k) * leaves(t))
        memo: dict[int, Event] = {}
        return self._denote(t, tol, ev_value, k, memo)

    def _denote(self, t, tol, ev_value, k, memo) -> Event:
        # Boolean operations are 1-Lipschitz in each argument, so sharing a
        # leaf approximation across occurrences keeps the total error bound.
        key = id(t)
        if key not in memo:
            memo[key] = self._denote_node(t, tol, ev_value, k, memo)
        return memo[key]

    def _denote_node(self, t, tol, ev_value, k, memo) -> Event:
        if isinstance(t, Special):
            lo, hi = heap_interval(t.index)
            return self.scramble.image(lo, hi, tol)
        if isinstance(t, ETop):
            return Event.full()
        if isinstance(t, EBot):
            return Event.empty()
        if isinstance(t, TCompl):
            return ~self._denote(t.arg, tol, ev_value, k, memo)
        if isinstance(t, Meet):
            out = Event.full()
            for c in t.items:
                out = out & self._denote(c, tol, ev_value, k, memo)
            return out
        if isinstance(t, Join):
            return union_all(self._denote(c, tol, ev_value, k, memo) for c in t.items)
        if isinstance(t, PEv):
            if ev_value is None:
                raise ValueError("this presentation has no random-variable sort")
            return ev_value(t, k)
        raise TypeError(f"not a generated point: {t}")

    def eval_mu(self, t: ETerm, k: int) -> Fraction:
        return self.denote(t, k).measure()

    def eval_dist(self, a: ETerm, b: ETerm, k: int) -> Fraction:
        return (self.denote(a, k + 1) ^ self.denote(b, k + 1)).measure()

    def enumerate_term(self, i: int) -> ETerm:
        return enumerate_terms(i)


def enumerate_terms(i: int) -> ETerm:
    """The canonical enumeration of generated points.

    Block n lists special n, its complement, then its meets and joins with
    each earlier special point.
    """
    n = 0
    while True:
        size = 2 + 2 * n
        if i < size:
            break
        i -= size
        n += 1
    s = Special(n)
    if i == 0:
        return s
    if i == 1:
        return compl(s)
    j, kind = divmod(i - 2, 2)
    return meet(s, Special(j)) if kind == 0 else join(s, Special(j))


# --------------------------------------------------------------------------
# rational balls and formal inclusion


@dataclass(frozen=True)
class RationalBall:
    center: object
    radius: Fraction

    def __post_init__(self) -> None:
        object.__setattr__(self, "radius", as_rational(self.radius))
        if self.radius <= 0:
            raise ValueError("ball radius must be positive")


def formal_inclusion(b1: RationalBall, b2: RationalBall, dist: Callable[[object, object, int], Fraction], k: int, exact: bool) -> bool:
    """Is B(p; e) formally included in B(q; d), i.e. d(p,q) + e < d?

    ``dist(p, q, k)`` must be within 2^-k; for inexact oracles the test adds
    that error to the estimate, so a yes answer is always sound.
    """
    if exact:
        return dist(b1.center, b2.center, 0) + b1.radius < b2.radius
    err = Fraction(1, 1 << k)
    return dist(b1.center, b2.center, k) + err + b1.radius < b2.radius


# --------------------------------------------------------------------------
# c.e. closed sets


class CEClosedSet:
    """A set given by an enumeration of the rational balls that meet it.

    ``test(ball, depth)`` is the search predicate at a given search depth; the
    stream revisits every (ball, depth) pair fairly.  A predicate that ignores
    the depth is declared with ``depth_sensitive=False`` and each ball is then
    tested once.
    """

    def __init__(
        self,
        balls: Callable[[int], RationalBall],
        test: Callable[[RationalBall, int], bool],
        depth_sensitive: bool = True,
    ) -> None:
        self._balls = balls
        self._test = test
        self.depth_sensitive = depth_sensitive

    def stream(self) -> Iterator[RationalBall]:
        stage = 0
        pending: list[int] = []
        while True:
            pending.append(stage)
            keep = []
            for i in pending:
                if self._test(self._balls(i), stage - i):
                    yield self._balls(i)
                elif self.depth_sensitive:
                    keep.append(i)
            pending = keep
            stage += 1

    def emits(self, ball: RationalBall, max_depth: int = 12) -> bool:
        return any(self._test(ball, d) for d in range(max_depth + 1))

    def take(self, n: int, max_stage: int = 10_000) -> list[RationalBall]:
        out = []
        gen = self.stream()
        while len(out) < n:
            out.append(next(gen))
        return out


# --------------------------------------------------------------------------
# randomization presentations


def cantor_pair(a: int, b: int) -> int:
    return (a + b) * (a + b + 1) // 2 + b


def cantor_unpair(z: int) -> tuple[int, int]:
    w = (math.isqrt(8 * z + 1) - 1) // 2
    t = w * (w + 1) // 2
    b = z - t
    return w - b, b


def _pair_list(items: Sequence[int]) -> int:
    out = items[-1]
    for x in reversed(items[:-1]):
        out = cantor_pair(x, out)
    return out


def _unpair_list(z: int, m: int) -> list[int]:
    out = []
    for _ in range(m - 1):
        x, z = cantor_unpair(z)
        out.append(x)
    out.append(z)
    return out


class MalformedCode(ValueError):
    pass


def decode(i: int) -> tuple[list[int], list[int]]:
    """Code -> (element indices, heap interval indices)."""
    n1, rest = cantor_unpair(i)
    n = n1 + 1
    items = _unpair_list(rest, 2 * n)
    return items[:n], items[n:]


def encode(elements: Sequence[int], intervals: Sequence[int]) -> int:
    if len(elements) != len(intervals) or not elements:
        raise ValueError("a code needs one interval per element")
    return cantor_pair(len(elements) - 1, _pair_list(list(elements) + list(intervals)))


def tree_leaves(p: int, lo: Fraction = ZERO, hi: Fraction = ONE) -> list[tuple[Fraction, Fraction]]:
    """Partition of [lo, hi) coded by p: 0 is the whole interval, 1 + pair(l, r) splits it."""
    if p == 0:
        return [(lo, hi)]
    left, right = cantor_unpair(p - 1)
    mid = (lo + hi) / 2
    return tree_leaves(left, lo, mid) + tree_leaves(right, mid, hi)


def tree_code(pieces: Sequence[tuple[Fraction, Fraction]], lo: Fraction = ZERO, hi: Fraction = ONE) -> int:
    """Inverse of tree_leaves for a partition of [lo, hi) into aligned dyadic intervals."""
    if len(pieces) == 1:
        if pieces[0] != (lo, hi):
            raise ValueError("not an aligned dyadic partition")
        return 0
    mid = (lo + hi) / 2
    left = [q for q in pieces if q[1] <= mid]
    right = [q for q in pieces if q[0] >= mid]
    if len(left) + len(right) != len(pieces):
        raise ValueError("not an aligned dyadic partition")
    return 1 + cantor_pair(tree_code(left, lo, mid), tree_code(right, mid, hi))


def _interval_heap_index(lo: Fraction, hi: Fraction) -> int:
    level = (1 / (hi - lo)).numerator.bit_length() - 1
    return heap_index(int(lo * (1 << level)), level)


class RandomizationPresentation:
    """Induced presentation of M^[0,1), optionally scrambled by sigma on the event side.

    K-sort special point n unpairs to (p, a): p codes a dyadic partition tree
    and a unpairs to one element index per leaf.  This lists every well-formed
    code (with repetitions of the same function), so no index is malformed;
    ``code_rv`` reads raw codes and rejects malformed ones.
    """

    def __init__(self, M: Structure, scramble: Scramble | None = None, name: str | None = None) -> None:
        self.M = M
        self.events = EventPresentation(scramble)
        self.name = name or (f"induced:{M.name}" + ("" if self.events.name == "std" else "@" + self.events.name))
        self._cache: dict[int, SimpleRV] = {}

    @property
    def exact(self) -> bool:
        return True

    def code_rv(self, i: int) -> SimpleRV:
        """The simple function named by raw code i, in code coordinates (before sigma)."""
        els, ivs = decode(i)
        pieces = [Event.of(heap_interval(j)) for j in ivs]
        total = sum((p.measure() for p in pieces), ZERO)
        if total != 1 or union_all(pieces) != Event.full():
            raise MalformedCode(f"code {i}: intervals do not partition [0,1)")
        return SimpleRV.build(self.M, [(self.M.enumerate(a), p) for a, p in zip(els, pieces)])

    def special_parts(self, n: int) -> tuple[list[int], list[tuple[Fraction, Fraction]]]:
        p, a = cantor_unpair(n)
        cells = tree_leaves(p)
        return _unpair_list(a, len(cells)), cells

    def special_code(self, n: int) -> int:
        els, cells = self.special_parts(n)
        return encode(els, [_interval_heap_index(lo, hi) for lo, hi in cells])

    def special_rv(self, n: int) -> SimpleRV:
        if n not in self._cache:
            els, cells = self.special_parts(n)
            self._cache[n] = SimpleRV.build(self.M, [(self.M.enumerate(e), Event.of(c)) for e, c in zip(els, cells)])
        return self._cache[n]

    def special_index(self, cells: Sequence[tuple[int, tuple[Fraction, Fraction]]]) -> int:
        """Index of the special point with the given (element index, dyadic cell) list."""
        ordered = sorted(cells, key=lambda c: c[1])
        p = tree_code([c for _, c in ordered])
        return cantor_pair(p, _pair_list([e for e, _ in ordered]))

    def index_of_rv(self, rv: SimpleRV) -> int:
        """A special index for a simple function whose cells are unions of dyadic intervals."""
        cells = []
        for a, e in rv.cells:
            for lo, hi in e.pairs():
                for piece in _dyadic_pieces(lo, hi):
                    cells.append((self.M.index_of(a), piece))
        return self.special_index(cells)

    def denote_rv(self, t: KSpecial, k: int = 0) -> SimpleRV:
        rv = self.special_rv(t.index)
        if isinstance(self.events.scramble, Identity):
            return rv
        tol = Fraction(1, 1 << (k + 1))
        cells = []
        for a, e in rv.cells:
            cells.append((a, union_all(self.events.scramble.image(iv.lo, iv.hi, tol) for iv in e.intervals)))
        return SimpleRV.build(self.M, cells)

    def ev_event(self, t: PEv, k: int) -> Event:
        rvs = [self.denote_rv(a, k) for a in t.args]
        names = t.phi.ordered_free_vars()
        if len(names) != len(rvs):
            raise ValueError(f"{t.phi} needs {len(names)} argument(s)")
        return event_map(self.M, t.phi, dict(zip(names, rvs)))

    def eval_mu(self, t: ETerm, k: int) -> Fraction:
        return self.events.denote(t, k, self.ev_event).measure()

    def eval_dist_k(self, a: KSpecial, b: KSpecial, k: int = 0) -> Fraction:
        """d(f, g) = mu[f != g]; sigma preserves measure, so code coordinates are exact."""
        return rv_dist(self.M, self.special_rv(a.index), self.special_rv(b.index))


def load_presentation(descriptor: str) -> EventPresentation | RandomizationPresentation:
    """std, rot:p/q, rot:sqrt2, digitperm:<perm>, induced:<structure>[@<scramble>]."""
    if descriptor.startswith("induced:"):
        body = descriptor[len("induced:"):]
        struct, _, scr = body.partition("@")
        return RandomizationPresentation(load_structure(struct), parse_scramble(scr) if scr else None)
    return EventPresentation(parse_scramble(descriptor))


# --------------------------------------------------------------------------
# computable points


@dataclass
class ComputablePoint:
    """seq(k) is a generated point within 2^-k of the limit."""

    seq: Callable[[int], object]
    label: str = ""


# --------------------------------------------------------------------------
# awareness


def _ball_sequence(pres: RandomizationPresentation) -> Callable[[int], RationalBall]:
    """Fair enumeration of balls (K special point, rational radius in (0,1])."""

    def ball(i: int) -> RationalBall:
        a, b = cantor_unpair(i)
        return RationalBall(KSpecial(a), _nth_radius(b))

    return ball


def _nth_radius(i: int) -> Fraction:
    # radii in (0,1]: 1, 1/2, 1/3, 2/3, 1/4, 3/4, ... (lowest terms, by denominator)
    q = 1
    while True:
        ps = [p for p in range(1, q + 1) if math.gcd(p, q) == 1]
        if i < len(ps):
            return Fraction(ps[i], q)
        i -= len(ps)
        q += 1


def max_element_mass(rv: SimpleRV) -> Fraction:
    return max(e.measure() for _, e in rv.cells)


def aware_enumerator(pres: RandomizationPresentation, strategy: str = "induced") -> CEClosedSet:
    """The balls B(f; eps) that contain a constant random variable.

    A constant c is within eps of f iff mu[f = c] > 1 - eps, so a ball is
    emitted once some element is found with mass above 1 - eps.
    """
    M = pres.M
    if strategy == "induced":

        def test(ball: RationalBall, depth: int) -> bool:
            rv = pres.special_rv(ball.center.index)
            return max_element_mass(rv) > 1 - ball.radius

    elif strategy == "recognizable":
        if not M.is_effectively_recognizable:
            raise ValueError(f"{M.name} has no recognizer")

        def test(ball: RationalBall, depth: int) -> bool:
            for j in range(depth + 1):
                a = M.enumerate(j)
                phi = M.recognizer(a)
                mass = pres.eval_mu(PEv(phi, (ball.center,)), depth + 2)
                if mass > 1 - ball.radius + Fraction(1, 1 << (depth + 2)):
                    return True
            return False

    else:
        raise ValueError(f"unknown awareness strategy {strategy!r}")
    return CEClosedSet(_ball_sequence(pres), test, depth_sensitive=strategy != "induced")


def constants_from_aware(ce: CEClosedSet, pres: RandomizationPresentation, count: int, max_stage: int = 200_000) -> list[ComputablePoint]:
    """The first ``count`` constants located by the emitted balls of radius < 1/2.

    a_n.seq(k) chases emitted balls formally included in the n-th one until
    the radius drops below 2^-k.
    """
    emitted: list[RationalBall] = []
    gen = ce.stream()

    def more() -> None:
        emitted.append(next(gen))

    small: list[RationalBall] = []
    steps = 0
    while len(small) < count:
        more()
        steps += 1
        if steps > max_stage:
            raise SearchTimeout("aware enumerator stalled", state=len(emitted))
        if emitted[-1].radius < Fraction(1, 2):
            small.append(emitted[-1])

    def chase(start: RationalBall) -> Callable[[int], KSpecial]:
        chain = [start]

        def seq(k: int) -> KSpecial:
            target = Fraction(1, 1 << k)
            i = 0
            while chain[-1].radius >= target:
                while i >= len(emitted):
                    more()
                    if len(emitted) > max_stage:
                        raise SearchTimeout("no formally included ball found", state=(start, k))
                b = emitted[i]
                i += 1
                if b.radius < chain[-1].radius / 2 and formal_inclusion(b, chain[-1], lambda p, q, _: pres.eval_dist_k(p, q), 0, True):
                    chain.append(b)
            return chain[-1].center

        return seq

    return [ComputablePoint(chase(b), f"a{n}") for n, b in enumerate(small)]


def majority_element(pres: RandomizationPresentation, point: ComputablePoint):
    """The constant a computable point converges to (its value on more than half the mass)."""
    rv = pres.special_rv(point.seq(2).index)
    for a, e in rv.cells:
        if e.measure() > Fraction(1, 2):
            return a
    raise ValueError("point is not within 1/4 of a constant")


@dataclass
class InducedClassical:
    """M^(#): special point i is the constant inside the i-th small emitted ball."""

    pres: RandomizationPresentation
    points: list[ComputablePoint]

    def equal(self, i: int, j: int) -> bool:
        d = self.pres.eval_dist_k(self.points[i].seq(3), self.points[j].seq(3))
        return d < Fraction(1, 2)

    def element(self, i: int):
        return majority_element(self.pres, self.points[i])


def induced_classical_presentation(pres: RandomizationPresentation, count: int, strategy: str = "induced") -> InducedClassical:
    return InducedClassical(pres, constants_from_aware(aware_enumerator(pres, strategy), pres, count))


def roundtrip_distances(M: Structure, count: int = 5) -> list[tuple[int, int, Fraction]]:
    """For each of the first constants of M, a round-trip point at distance 0 from it."""
    pres = RandomizationPresentation(M)
    search = count
    while True:
        ic = induced_classical_presentation(pres, search)
        found = {}
        for n in range(search):
            a = ic.element(n)
            found.setdefault(M.index_of(a), n)
        if all(i in found for i in range(count)) or search > 40 * count:
            break
        search *= 2
    out = []
    for i in range(count):
        if i not in found:
            raise SearchTimeout(f"constant {i} not located", state=search)
        n = found[i]
        limit = SimpleRV.constant(M, ic.element(n))
        out.append((i, n, rv_dist(M, SimpleRV.constant(M, M.enumerate(i)), limit)))
    return out


# --------------------------------------------------------------------------
# decidability transfer


@dataclass
class Decision:
    value: bool
    estimate: Fraction
    precision: int


def decide_via_randomization(
    pres: RandomizationPresentation,
    phi: Formula | str,
    points: Sequence[ComputablePoint],
    max_k: int = 30,
) -> Decision:
    """M |= phi(a) read off a measure: mu[phi(a')] for a' close to the constants a.

    With d(a'_i, a_i) < 2^-k, the measure is within n 2^-k of the 0/1 value at a.
    """
    if isinstance(phi, str):
        phi = parse_classical(phi, pres.M.signature)
    names = phi.ordered_free_vars()
    if len(names) != len(points):
        raise ValueError(f"formula has free variables {names}; {len(points)} point(s) given")
    n = max(len(points), 1)
    k = 1
    while k <= max_k:
        err = Fraction(n, 1 << k)
        if err < Fraction(1, 4):
            approx = tuple(p.seq(k) for p in points)
            est = pres.eval_mu(PEv(phi, approx), k + 2) if points else (ONE if pres.M.decide(phi, {}) else ZERO)
            margin = err + Fraction(1, 1 << (k + 2))
            if est - margin > Fraction(1, 2) or est + margin < Fraction(1, 2):
                return Decision(est > Fraction(1, 2), est, k)
        k += 1
    raise SearchTimeout("estimate never cleared the 1/2 threshold", state=k)
