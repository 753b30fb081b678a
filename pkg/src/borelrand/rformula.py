"""Two-sorted formulas: event terms and [0,1]-valued formulas over them.

Event terms are built from event variables, top/bottom, meets, joins,
complements and ``(ev "<classical formula>" X1 ... Xn)``.  Real formulas are
measures of event terms combined with restricted connectives, plus inf/sup
over either sort.  The same AST serves for the probability-algebra language
(no ``ev`` terms, no K quantifiers).
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

from . import restricted as R
from .events import Event, as_rational, format_rational, parse_rational
from .sexpr import ParseError, SList, String, Symbol, quote, read
from .structures import Formula, Signature, natural_key, parse_classical

B, K = "B", "K"


# --------------------------------------------------------------------------
# event terms


class ETerm:
    def children(self) -> tuple[ETerm, ...]:
        return ()

    def event_vars(self) -> frozenset[str]:
        return frozenset().union(*(c.event_vars() for c in self.children()))

    def k_vars(self) -> frozenset[str]:
        return frozenset().union(*(c.k_vars() for c in self.children()))

    def __str__(self) -> str:
        return self.sexpr()


@dataclass(frozen=True)
class EVar(ETerm):
    name: str

    def event_vars(self):
        return frozenset({self.name})

    def sexpr(self) -> str:
        return self.name


@dataclass(frozen=True)
class ETop(ETerm):
    def sexpr(self) -> str:
        return "(top)"


@dataclass(frozen=True)
class EBot(ETerm):
    def sexpr(self) -> str:
        return "(bot)"


@dataclass(frozen=True)
class Compl(ETerm):
    arg: ETerm

    def children(self):
        return (self.arg,)

    def sexpr(self) -> str:
        return f"(compl {self.arg.sexpr()})"


@dataclass(frozen=True)
class Meet(ETerm):
    items: tuple[ETerm, ...]

    def children(self):
        return self.items

    def sexpr(self) -> str:
        return "(meet " + " ".join(t.sexpr() for t in self.items) + ")"


@dataclass(frozen=True)
class Join(ETerm):
    items: tuple[ETerm, ...]

    def children(self):
        return self.items

    def sexpr(self) -> str:
        return "(join " + " ".join(t.sexpr() for t in self.items) + ")"


@dataclass(frozen=True)
class Ev(ETerm):
    """The event where ``phi`` holds; phi's free variables are exactly ``args``."""

    phi: Formula
    args: tuple[str, ...]

    def k_vars(self):
        return frozenset(self.args)

    def sexpr(self) -> str:
        return "(ev " + " ".join([quote(str(self.phi)), *self.args]) + ")"


def ev(phi: Formula | str, args: Sequence[str], signature: Signature | None = None) -> Ev:
    """Canonical ``ev`` term: phi's free variables (natural order) renamed to ``args``."""
    if isinstance(phi, str):
        phi = parse_classical(phi, signature)
    names = phi.ordered_free_vars()
    if len(names) != len(args):
        raise ValueError(f"formula {phi} has free variables {names}; {len(args)} argument(s) given")
    renamed = phi.rename(dict(zip(names, args)))
    return Ev(renamed, tuple(sorted(set(args), key=natural_key)))


def meet(*items: ETerm) -> ETerm:
    flat: list[ETerm] = []
    for t in items:
        if isinstance(t, ETop):
            continue
        if isinstance(t, EBot):
            return EBot()
        flat.extend(t.items if isinstance(t, Meet) else (t,))
    if not flat:
        return ETop()
    return flat[0] if len(flat) == 1 else Meet(tuple(flat))


def join(*items: ETerm) -> ETerm:
    flat: list[ETerm] = []
    for t in items:
        if isinstance(t, EBot):
            continue
        if isinstance(t, ETop):
            return ETop()
        flat.extend(t.items if isinstance(t, Join) else (t,))
    if not flat:
        return EBot()
    return flat[0] if len(flat) == 1 else Join(tuple(flat))


def compl(t: ETerm) -> ETerm:
    if isinstance(t, Compl):
        return t.arg
    if isinstance(t, ETop):
        return EBot()
    if isinstance(t, EBot):
        return ETop()
    return Compl(t)


def symdiff(a: ETerm, b: ETerm) -> ETerm:
    return join(meet(a, compl(b)), meet(compl(a), b))


def event_bases(t: ETerm) -> list[ETerm]:
    """Maximal opaque subterms (variables and ev terms), in first-occurrence order."""
    out: list[ETerm] = []

    def walk(u: ETerm) -> None:
        if isinstance(u, (EVar, Ev)):
            if u not in out:
                out.append(u)
        for c in u.children():
            walk(c)

    walk(t)
    return out


def truth_of(t: ETerm, value: Mapping[ETerm, bool]) -> bool:
    """Boolean value of ``t`` when each base is assigned true or false."""
    if isinstance(t, (EVar, Ev)):
        return value[t]
    if isinstance(t, ETop):
        return True
    if isinstance(t, EBot):
        return False
    if isinstance(t, Compl):
        return not truth_of(t.arg, value)
    if isinstance(t, Meet):
        return all(truth_of(c, value) for c in t.items)
    if isinstance(t, Join):
        return any(truth_of(c, value) for c in t.items)
    raise TypeError(t)


def substitute_event(t: ETerm, mapping: Mapping[ETerm, ETerm]) -> ETerm:
    if t in mapping:
        return mapping[t]
    if isinstance(t, Compl):
        return Compl(substitute_event(t.arg, mapping))
    if isinstance(t, Meet):
        return Meet(tuple(substitute_event(c, mapping) for c in t.items))
    if isinstance(t, Join):
        return Join(tuple(substitute_event(c, mapping) for c in t.items))
    return t


# --------------------------------------------------------------------------
# real formulas


class RFormula:
    def children(self) -> tuple[RFormula, ...]:
        return ()

    def free(self) -> dict[str, str]:
        """Free variables with their sorts."""
        out: dict[str, str] = {}
        for c in self.children():
            out.update(c.free())
        return out

    @property
    def is_qf(self) -> bool:
        return all(c.is_qf for c in self.children())

    def quantifier_count(self) -> int:
        return sum(c.quantifier_count() for c in self.children())

    def __str__(self) -> str:
        return self.sexpr()


@dataclass(frozen=True)
class Mu(RFormula):
    term: ETerm

    def free(self):
        out = {v: B for v in self.term.event_vars()}
        out.update({v: K for v in self.term.k_vars()})
        return out

    def sexpr(self) -> str:
        return f"(mu {self.term.sexpr()})"


@dataclass(frozen=True)
class RConst(RFormula):
    value: Fraction

    def sexpr(self) -> str:
        if self.value == 0:
            return "(c0)"
        if self.value == 1:
            return "(c1)"
        return f"(const {format_rational(self.value)})"


# connective name -> (arity, monotonicity per slot: +1 nondecreasing, -1 nonincreasing)
CONNECTIVES: dict[str, tuple[int, tuple[int, ...]]] = {
    "sub": (2, (1, -1)),
    "half": (1, (1,)),
    "add": (2, (1, 1)),
    "neg": (1, (-1,)),
    "min": (2, (1, 1)),
    "max": (2, (1, 1)),
}


@dataclass(frozen=True)
class RApp(RFormula):
    op: str
    args: tuple[RFormula, ...]

    def __post_init__(self) -> None:
        if self.op not in CONNECTIVES:
            raise ValueError(f"unknown connective {self.op!r}")
        if len(self.args) != CONNECTIVES[self.op][0]:
            raise ValueError(f"{self.op} takes {CONNECTIVES[self.op][0]} argument(s)")

    def children(self):
        return self.args

    def sexpr(self) -> str:
        return f"({self.op} " + " ".join(a.sexpr() for a in self.args) + ")"


@dataclass(frozen=True)
class Quant(RFormula):
    kind: str  # "inf" or "sup"
    sort: str  # "B" or "K"
    var: str
    body: RFormula

    def children(self):
        return (self.body,)

    def free(self):
        out = self.body.free()
        out.pop(self.var, None)
        return out

    @property
    def is_qf(self) -> bool:
        return False

    def quantifier_count(self) -> int:
        return 1 + self.body.quantifier_count()

    def sexpr(self) -> str:
        return f"({self.kind} ({self.sort} {self.var}) {self.body.sexpr()})"


def sub(a, b):
    return RApp("sub", (a, b))


def half(a):
    return RApp("half", (a,))


def rconst(q) -> RConst:
    q = as_rational(q)
    if not 0 <= q <= 1:
        raise ValueError("constants must lie in [0,1]")
    return RConst(q)


def all_vars(phi: RFormula) -> set[str]:
    out: set[str] = set()

    def walk(f: RFormula) -> None:
        if isinstance(f, Mu):
            out.update(f.term.event_vars() | f.term.k_vars())
        if isinstance(f, Quant):
            out.add(f.var)
        for c in f.children():
            walk(c)

    walk(phi)
    return out


def mu_atoms(phi: RFormula) -> list[Mu]:
    out: list[Mu] = []

    def walk(f: RFormula) -> None:
        if isinstance(f, Mu):
            if f not in out:
                out.append(f)
        for c in f.children():
            walk(c)

    walk(phi)
    return out


def map_terms(phi: RFormula, fn: Callable[[ETerm], ETerm]) -> RFormula:
    if isinstance(phi, Mu):
        return Mu(fn(phi.term))
    if isinstance(phi, RApp):
        return RApp(phi.op, tuple(map_terms(a, fn) for a in phi.args))
    if isinstance(phi, Quant):
        return Quant(phi.kind, phi.sort, phi.var, map_terms(phi.body, fn))
    return phi


def rename_var(phi: RFormula, old: str, new: str) -> RFormula:
    """Rename free occurrences of a variable of either sort."""

    def term(t: ETerm) -> ETerm:
        if isinstance(t, EVar):
            return EVar(new) if t.name == old else t
        if isinstance(t, Ev):
            if old not in t.args:
                return t
            return ev(t.phi.rename({old: new}), [new if a == old else a for a in t.args])
        if isinstance(t, Compl):
            return Compl(term(t.arg))
        if isinstance(t, Meet):
            return Meet(tuple(term(c) for c in t.items))
        if isinstance(t, Join):
            return Join(tuple(term(c) for c in t.items))
        return t

    def walk(f: RFormula) -> RFormula:
        if isinstance(f, Mu):
            return Mu(term(f.term))
        if isinstance(f, RApp):
            return RApp(f.op, tuple(walk(a) for a in f.args))
        if isinstance(f, Quant):
            if f.var == old:
                return f
            return Quant(f.kind, f.sort, f.var, walk(f.body))
        return f

    return walk(phi)


# --------------------------------------------------------------------------
# restricted functions <-> quantifier-free formulas


def to_restricted(phi: RFormula, atoms: list[RFormula] | None = None) -> tuple[R.RestrictedFn, list[RFormula]]:
    """Compile a quantifier-free formula: measure atoms become variables."""
    if not phi.is_qf:
        raise ValueError("only quantifier-free formulas compile to restricted functions")
    atoms = [] if atoms is None else atoms
    memo: dict[RFormula, R.RestrictedFn] = {}

    def walk(f: RFormula) -> R.RestrictedFn:
        if f in memo:
            return memo[f]
        if isinstance(f, Mu):
            if f not in atoms:
                atoms.append(f)
            out: R.RestrictedFn = R.Var(atoms.index(f))
        elif isinstance(f, RConst):
            out = R.const(f.value)
        else:
            kids = [walk(a) for a in f.args]
            out = {
                "sub": lambda: R.TruncSub(*kids),
                "half": lambda: R.Half(*kids),
                "add": lambda: R.TruncAdd(*kids),
                "neg": lambda: R.Neg(*kids),
                "min": lambda: R.Min(*kids),
                "max": lambda: R.Max(*kids),
            }[f.op]()
        memo[f] = out
        return out

    return walk(phi), atoms


def from_restricted(v: R.RestrictedFn, leaves: Sequence[RFormula]) -> RFormula:
    """Rebuild a formula, substituting ``leaves[i]`` for variable i (shared subterms stay shared)."""
    out: dict[int, RFormula] = {}
    for node in R._postorder(v):
        if isinstance(node, R.Var):
            f = leaves[node.index]
        elif isinstance(node, R.Zero):
            f = RConst(Fraction(0))
        elif isinstance(node, R.One):
            f = RConst(Fraction(1))
        elif isinstance(node, R.Const):
            f = RConst(node.value)
        else:
            kids = tuple(out[id(c)] for c in node.children)
            f = RApp(R._KEYWORD[type(node)], kids)
        out[id(node)] = f
    return out[id(v)]


# --------------------------------------------------------------------------
# evaluation of quantifier-free formulas


def eval_term(t: ETerm, events: Mapping[str, Event], ev_value: Callable[[Ev], Event] | None = None) -> Event:
    if isinstance(t, EVar):
        if t.name not in events:
            raise KeyError(f"no event assigned to {t.name}")
        return events[t.name]
    if isinstance(t, ETop):
        return Event.full()
    if isinstance(t, EBot):
        return Event.empty()
    if isinstance(t, Compl):
        return ~eval_term(t.arg, events, ev_value)
    if isinstance(t, Meet):
        out = Event.full()
        for c in t.items:
            out = out & eval_term(c, events, ev_value)
        return out
    if isinstance(t, Join):
        out = Event.empty()
        for c in t.items:
            out = out | eval_term(c, events, ev_value)
        return out
    if isinstance(t, Ev):
        if ev_value is None:
            raise ValueError("ev terms need a structure and random variables")
        return ev_value(t)
    raise TypeError(t)


def eval_qf(phi: RFormula, atom_value: Callable[[Mu], Fraction]) -> Fraction:
    """Exact value of a quantifier-free formula given the measure of each atom."""
    cache: dict[RFormula, Fraction] = {}

    def walk(f: RFormula) -> Fraction:
        if f in cache:
            return cache[f]
        if isinstance(f, Mu):
            out = atom_value(f)
        elif isinstance(f, RConst):
            out = f.value
        elif isinstance(f, RApp):
            a = [walk(x) for x in f.args]
            op = f.op
            if op == "sub":
                out = max(a[0] - a[1], Fraction(0))
            elif op == "half":
                out = a[0] / 2
            elif op == "add":
                out = min(a[0] + a[1], Fraction(1))
            elif op == "neg":
                out = 1 - a[0]
            elif op == "min":
                out = min(a)
            else:
                out = max(a)
        else:
            raise ValueError("formula is not quantifier-free")
        cache[f] = out
        return out

    return walk(phi)


# --------------------------------------------------------------------------
# parsing


def parse_rformula(text: str, signature: Signature | None = None) -> RFormula:
    """Read the s-expression grammar; sorts of free variables follow their use."""
    reader = _Reader(signature)
    phi = reader.real(read(text), {})
    clash = reader.used[B] & reader.used[K]
    if clash:
        raise ParseError(f"variable {sorted(clash)[0]} used at both sorts")
    return phi


class _Reader:
    def __init__(self, signature: Signature | None) -> None:
        self.signature = signature
        self.used: dict[str, set[str]] = {B: set(), K: set()}

    def _use(self, name: str, sort: str, bound: Mapping[str, str], pos: int) -> None:
        if name in bound:
            if bound[name] != sort:
                raise ParseError(f"variable {name} is bound at sort {bound[name]} but used at sort {sort}", pos)
        else:
            self.used[sort].add(name)

    def real(self, node, bound: Mapping[str, str]) -> RFormula:
        if not isinstance(node, SList) or node.head is None:
            raise ParseError("expected a real-valued formula", getattr(node, "pos", None))
        head, args = node.head, node.items[1:]
        if head == "mu":
            self._count(node, 1)
            return Mu(self.event(args[0], bound))
        if head in ("c0", "c1"):
            self._count(node, 0)
            return RConst(Fraction(int(head == "c1")))
        if head == "const":
            self._count(node, 1)
            if not isinstance(args[0], Symbol):
                raise ParseError("const takes a rational", node.pos)
            try:
                return rconst(parse_rational(args[0].name))
            except ValueError as exc:
                raise ParseError(str(exc), args[0].pos) from None
        if head in CONNECTIVES:
            self._count(node, CONNECTIVES[head][0])
            return RApp(head, tuple(self.real(a, bound) for a in args))
        if head in ("inf", "sup"):
            self._count(node, 2)
            decl = args[0]
            if not (isinstance(decl, SList) and len(decl.items) == 2 and decl.head in (B, K) and isinstance(decl.items[1], Symbol)):
                raise ParseError("binder must look like (K X) or (B C)", decl.pos)
            var = decl.items[1].name
            inner = dict(bound)
            inner[var] = decl.head
            return Quant(head, decl.head, var, self.real(args[1], inner))
        raise ParseError(f"unknown real-sort form {head!r}", node.pos)

    def event(self, node, bound: Mapping[str, str]) -> ETerm:
        if isinstance(node, Symbol):
            self._use(node.name, B, bound, node.pos)
            return EVar(node.name)
        if not isinstance(node, SList) or node.head is None:
            raise ParseError("expected an event term", getattr(node, "pos", None))
        head, args = node.head, node.items[1:]
        if head in ("top", "bot"):
            self._count(node, 0)
            return ETop() if head == "top" else EBot()
        if head == "compl":
            self._count(node, 1)
            return Compl(self.event(args[0], bound))
        if head in ("meet", "join"):
            if not args:
                raise ParseError(f"{head} needs at least one argument", node.pos)
            items = tuple(self.event(a, bound) for a in args)
            if len(items) == 1:
                return items[0]
            return Meet(items) if head == "meet" else Join(items)
        if head == "ev":
            if not args or not isinstance(args[0], String):
                raise ParseError("ev takes a quoted classical formula first", node.pos)
            names = []
            for a in args[1:]:
                if not isinstance(a, Symbol):
                    raise ParseError("ev arguments must be K variables", a.pos)
                self._use(a.name, K, bound, a.pos)
                names.append(a.name)
            try:
                return ev(args[0].value, names, self.signature)
            except ParseError:
                raise
            except ValueError as exc:
                raise ParseError(str(exc), node.pos) from None
        raise ParseError(f"unknown event form {head!r}", node.pos)

    @staticmethod
    def _count(node: SList, n: int) -> None:
        if len(node.items) - 1 != n:
            raise ParseError(f"{node.head} takes {n} argument(s), got {len(node.items) - 1}", node.pos)


def free_sorted(phi: RFormula, sort: str) -> list[str]:
    return sorted((v for v, s in phi.free().items() if s == sort), key=natural_key)


def iter_subformulas(phi: RFormula) -> Iterable[RFormula]:
    yield phi
    for c in phi.children():
        yield from iter_subformulas(c)
