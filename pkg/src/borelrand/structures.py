"""Classical first-order formulas and decidable countable structures.

The infinite built-ins (pure set, dense linear order) decide quantifiers by
testing finitely many candidates: both theories eliminate quantifiers, so a
quantified variable only needs to range over the current parameters plus one
representative of each remaining quantifier-free type.
"""

from __future__ import annotations

import itertools
import json
import re
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from pathlib import Path
from typing import Hashable, Iterable, Iterator, Mapping, Sequence, Union

from .sexpr import ParseError, SList, Symbol, read

Element = Hashable


class StructureError(ValueError):
    pass


# --------------------------------------------------------------------------
# signatures


@dataclass(frozen=True)
class Signature:
    relations: Mapping[str, int] = field(default_factory=dict)
    functions: Mapping[str, int] = field(default_factory=dict)
    constants: tuple[str, ...] = ()
    constant_prefix: str | None = None

    def __post_init__(self) -> None:
        names = [*self.relations, *self.functions, *self.constants]
        if len(names) != len(set(names)):
            raise StructureError("signature symbols must be distinct")
        for name, arity in [*self.relations.items(), *self.functions.items()]:
            if arity < 0:
                raise StructureError(f"negative arity for {name}")

    def is_constant(self, name: str) -> bool:
        if name in self.constants:
            return True
        if self.constant_prefix is not None:
            rest = name[len(self.constant_prefix):]
            return name.startswith(self.constant_prefix) and rest.isdigit()
        return False

    def key(self) -> tuple:
        return (
            tuple(sorted(self.relations.items())),
            tuple(sorted(self.functions.items())),
            tuple(sorted(self.constants)),
            self.constant_prefix,
        )

    def to_json(self) -> dict:
        return {
            "relations": dict(sorted(self.relations.items())),
            "functions": dict(sorted(self.functions.items())),
            "constants": sorted(self.constants),
            "constant_prefix": self.constant_prefix,
        }

    @classmethod
    def from_json(cls, data: Mapping) -> Signature:
        return cls(
            relations=dict(data.get("relations", {})),
            functions=dict(data.get("functions", {})),
            constants=tuple(data.get("constants", ())),
            constant_prefix=data.get("constant_prefix"),
        )


# --------------------------------------------------------------------------
# terms and formulas


class Term(ABC):
    @abstractmethod
    def variables(self) -> frozenset[str]: ...

    @abstractmethod
    def constants(self) -> frozenset[str]: ...

    @abstractmethod
    def rename(self, mapping: Mapping[str, str]) -> Term: ...


@dataclass(frozen=True)
class TVar(Term):
    name: str

    def variables(self) -> frozenset[str]:
        return frozenset((self.name,))

    def constants(self) -> frozenset[str]:
        return frozenset()

    def rename(self, mapping: Mapping[str, str]) -> Term:
        return TVar(mapping.get(self.name, self.name))

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class TConst(Term):
    name: str

    def variables(self) -> frozenset[str]:
        return frozenset()

    def constants(self) -> frozenset[str]:
        return frozenset((self.name,))

    def rename(self, mapping: Mapping[str, str]) -> Term:
        return self

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class TApp(Term):
    fn: str
    args: tuple[Term, ...]

    def variables(self) -> frozenset[str]:
        return frozenset().union(*(a.variables() for a in self.args))

    def constants(self) -> frozenset[str]:
        return frozenset().union(*(a.constants() for a in self.args))

    def rename(self, mapping: Mapping[str, str]) -> Term:
        return TApp(self.fn, tuple(a.rename(mapping) for a in self.args))

    def __str__(self) -> str:
        return "(" + " ".join([self.fn, *map(str, self.args)]) + ")"


class Formula(ABC):
    """First-order formula over a signature."""

    @abstractmethod
    def free_vars(self) -> frozenset[str]: ...

    @abstractmethod
    def all_vars(self) -> frozenset[str]: ...

    @abstractmethod
    def constants(self) -> frozenset[str]: ...

    @abstractmethod
    def depth(self) -> int:
        """Quantifier depth."""

    @abstractmethod
    def rename(self, mapping: Mapping[str, str]) -> Formula:
        """Capture-avoiding renaming of free variables."""

    def ordered_free_vars(self) -> list[str]:
        return sorted(self.free_vars(), key=natural_key)

    @property
    def is_qf(self) -> bool:
        return self.depth() == 0


@dataclass(frozen=True)
class Truth(Formula):
    value: bool

    def free_vars(self) -> frozenset[str]:
        return frozenset()

    all_vars = free_vars

    def constants(self) -> frozenset[str]:
        return frozenset()

    def depth(self) -> int:
        return 0

    def rename(self, mapping: Mapping[str, str]) -> Formula:
        return self

    def __str__(self) -> str:
        return "(true)" if self.value else "(false)"


@dataclass(frozen=True)
class Atom(Formula):
    rel: str
    args: tuple[Term, ...]

    def free_vars(self) -> frozenset[str]:
        return frozenset().union(*(a.variables() for a in self.args))

    all_vars = free_vars

    def constants(self) -> frozenset[str]:
        return frozenset().union(*(a.constants() for a in self.args))

    def depth(self) -> int:
        return 0

    def rename(self, mapping: Mapping[str, str]) -> Formula:
        return Atom(self.rel, tuple(a.rename(mapping) for a in self.args))

    def __str__(self) -> str:
        return "(" + " ".join([self.rel, *map(str, self.args)]) + ")"


@dataclass(frozen=True)
class Eq(Formula):
    left: Term
    right: Term

    def free_vars(self) -> frozenset[str]:
        return self.left.variables() | self.right.variables()

    all_vars = free_vars

    def constants(self) -> frozenset[str]:
        return self.left.constants() | self.right.constants()

    def depth(self) -> int:
        return 0

    def rename(self, mapping: Mapping[str, str]) -> Formula:
        return Eq(self.left.rename(mapping), self.right.rename(mapping))

    def __str__(self) -> str:
        return f"(= {self.left} {self.right})"


@dataclass(frozen=True)
class Not(Formula):
    body: Formula

    def free_vars(self) -> frozenset[str]:
        return self.body.free_vars()

    def all_vars(self) -> frozenset[str]:
        return self.body.all_vars()

    def constants(self) -> frozenset[str]:
        return self.body.constants()

    def depth(self) -> int:
        return self.body.depth()

    def rename(self, mapping: Mapping[str, str]) -> Formula:
        return Not(self.body.rename(mapping))

    def __str__(self) -> str:
        return f"(not {self.body})"


@dataclass(frozen=True)
class _Junction(Formula):
    items: tuple[Formula, ...]
    keyword = ""

    def free_vars(self) -> frozenset[str]:
        return frozenset().union(*(f.free_vars() for f in self.items))

    def all_vars(self) -> frozenset[str]:
        return frozenset().union(*(f.all_vars() for f in self.items))

    def constants(self) -> frozenset[str]:
        return frozenset().union(*(f.constants() for f in self.items))

    def depth(self) -> int:
        return max((f.depth() for f in self.items), default=0)

    def rename(self, mapping: Mapping[str, str]) -> Formula:
        return type(self)(tuple(f.rename(mapping) for f in self.items))

    def __str__(self) -> str:
        return "(" + " ".join([self.keyword, *map(str, self.items)]) + ")"


class And(_Junction):
    keyword = "and"


class Or(_Junction):
    keyword = "or"


@dataclass(frozen=True)
class Implies(Formula):
    left: Formula
    right: Formula

    def free_vars(self) -> frozenset[str]:
        return self.left.free_vars() | self.right.free_vars()

    def all_vars(self) -> frozenset[str]:
        return self.left.all_vars() | self.right.all_vars()

    def constants(self) -> frozenset[str]:
        return self.left.constants() | self.right.constants()

    def depth(self) -> int:
        return max(self.left.depth(), self.right.depth())

    def rename(self, mapping: Mapping[str, str]) -> Formula:
        return Implies(self.left.rename(mapping), self.right.rename(mapping))

    def __str__(self) -> str:
        return f"(implies {self.left} {self.right})"


@dataclass(frozen=True)
class _Quantifier(Formula):
    var: str
    body: Formula
    keyword = ""

    def free_vars(self) -> frozenset[str]:
        return self.body.free_vars() - {self.var}

    def all_vars(self) -> frozenset[str]:
        return self.body.all_vars() | {self.var}

    def constants(self) -> frozenset[str]:
        return self.body.constants()

    def depth(self) -> int:
        return 1 + self.body.depth()

    def rename(self, mapping: Mapping[str, str]) -> Formula:
        inner = {k: v for k, v in mapping.items() if k != self.var}
        if not inner:
            return self
        var, body = self.var, self.body
        if var in inner.values():
            taken = set(inner.values()) | body.all_vars() | set(inner)
            fresh = fresh_name(var, taken)
            body = body.rename({var: fresh})
            var = fresh
        return type(self)(var, body.rename(inner))

    def __str__(self) -> str:
        return f"({self.keyword} {self.var} {self.body})"


class Exists(_Quantifier):
    keyword = "exists"


class Forall(_Quantifier):
    keyword = "forall"


def natural_key(name: str) -> tuple:
    return tuple(int(p) if p.isdigit() else p for p in re.split(r"(\d+)", name))


def fresh_name(base: str, taken: Iterable[str]) -> str:
    taken = set(taken)
    stem = base.rstrip("0123456789") or "v"
    i = 0
    while f"{stem}{i}" in taken:
        i += 1
    return f"{stem}{i}"


def conj(items: Sequence[Formula]) -> Formula:
    items = tuple(items)
    if not items:
        return Truth(True)
    if len(items) == 1:
        return items[0]
    return And(items)


def disj(items: Sequence[Formula]) -> Formula:
    items = tuple(items)
    if not items:
        return Truth(False)
    if len(items) == 1:
        return items[0]
    return Or(items)


# --------------------------------------------------------------------------
# parsing


_KEYWORDS = {"and", "or", "not", "implies", "->", "exists", "forall", "=", "true", "false"}


def parse_classical(text: str, signature: Signature | None = None) -> Formula:
    """Parse the s-expression syntax, resolving symbols against ``signature``.

    Without a signature every relation symbol is accepted with the arity of
    its first use.
    """
    return _ClassicalReader(signature).formula(read(text))


class _ClassicalReader:
    def __init__(self, signature: Signature | None) -> None:
        self.signature = signature
        self.seen: dict[str, int] = {}

    def formula(self, node) -> Formula:
        if not isinstance(node, SList) or not node.items:
            raise ParseError("expected a formula", getattr(node, "pos", None))
        head = node.head
        args = node.items[1:]
        if head is None:
            raise ParseError("formula head must be a symbol", node.pos)
        if head == "true" and not args:
            return Truth(True)
        if head == "false" and not args:
            return Truth(False)
        if head == "and":
            return And(tuple(self.formula(a) for a in args)) if args else Truth(True)
        if head == "or":
            return Or(tuple(self.formula(a) for a in args)) if args else Truth(False)
        if head == "not":
            self._arity(node, 1)
            return Not(self.formula(args[0]))
        if head in ("implies", "->"):
            self._arity(node, 2)
            return Implies(self.formula(args[0]), self.formula(args[1]))
        if head in ("exists", "forall"):
            self._arity(node, 2)
            if not isinstance(args[0], Symbol):
                raise ParseError("quantified variable must be a symbol", node.pos)
            cls = Exists if head == "exists" else Forall
            return cls(args[0].name, self.formula(args[1]))
        if head == "=":
            self._arity(node, 2)
            return Eq(self.term(args[0]), self.term(args[1]))
        return Atom(head, self._relation_args(head, args, node.pos))

    def _relation_args(self, rel: str, args, pos) -> tuple[Term, ...]:
        sig = self.signature
        if sig is not None:
            if rel not in sig.relations:
                raise ParseError(f"unknown relation symbol {rel!r}", pos)
            if sig.relations[rel] != len(args):
                raise ParseError(
                    f"relation {rel} has arity {sig.relations[rel]}, got {len(args)}", pos
                )
        else:
            prior = self.seen.setdefault(rel, len(args))
            if prior != len(args):
                raise ParseError(f"relation {rel} used with arities {prior} and {len(args)}", pos)
        return tuple(self.term(a) for a in args)

    def term(self, node) -> Term:
        if isinstance(node, Symbol):
            if node.name in _KEYWORDS:
                raise ParseError(f"keyword {node.name!r} used as a term", node.pos)
            if self.signature is not None and self.signature.is_constant(node.name):
                return TConst(node.name)
            return TVar(node.name)
        if isinstance(node, SList) and node.head is not None:
            fn = node.head
            args = node.items[1:]
            sig = self.signature
            if sig is not None:
                if fn not in sig.functions:
                    raise ParseError(f"unknown function symbol {fn!r}", node.pos)
                if sig.functions[fn] != len(args):
                    raise ParseError(f"function {fn} has arity {sig.functions[fn]}", node.pos)
            return TApp(fn, tuple(self.term(a) for a in args))
        raise ParseError("expected a term", getattr(node, "pos", None))

    @staticmethod
    def _arity(node: SList, n: int) -> None:
        if len(node.items) - 1 != n:
            raise ParseError(f"{node.head} expects {n} argument(s)", node.pos)


# --------------------------------------------------------------------------
# structures


class Structure(ABC):
    """A decidable (or quantifier-free decidable) presentation of a countable structure."""

    name: str = "structure"
    is_decidable: bool = True
    is_effectively_omega_categorical: bool = False
    is_effectively_recognizable: bool = False

    @property
    @abstractmethod
    def signature(self) -> Signature: ...

    @abstractmethod
    def enumerate(self, i: int) -> Element: ...

    @abstractmethod
    def index_of(self, a: Element) -> int:
        """Least enumeration index of ``a``."""

    @abstractmethod
    def witnesses(self, params: Sequence[Element]) -> list[Element]:
        """Candidates sufficient to decide one quantifier over ``params``."""

    def holds(self, rel: str, args: tuple[Element, ...]) -> bool:
        raise StructureError(f"{self.name} has no relation {rel}")

    def apply(self, fn: str, args: tuple[Element, ...]) -> Element:
        raise StructureError(f"{self.name} has no function {fn}")

    def constant(self, name: str) -> Element:
        raise StructureError(f"{self.name} has no constant {name}")

    def canonical(self, a: Element) -> Element:
        return a

    def decide_eq(self, a: Element, b: Element) -> bool:
        return self.canonical(a) == self.canonical(b)

    def element_name(self, a: Element) -> str:
        return str(a)

    def parse_element(self, text: str) -> Element:
        raise StructureError(f"cannot read element {text!r} of {self.name}")

    def contains(self, a: Element) -> bool:
        return True

    # -- evaluation ------------------------------------------------------

    def _bind(self, phi: Formula, params) -> dict[str, Element]:
        if isinstance(params, Mapping):
            env = dict(params)
            missing = phi.free_vars() - set(env)
            if missing:
                raise StructureError(f"unassigned free variables {sorted(missing)}")
            return env
        names = phi.ordered_free_vars()
        params = tuple(params)
        if len(params) != len(names):
            raise StructureError(
                f"formula has free variables {names} but {len(params)} parameter(s) given"
            )
        return dict(zip(names, params))

    def decide(self, phi: Formula, params: Sequence[Element] | Mapping[str, Element] = ()) -> bool:
        """Truth of ``phi`` at the parameters.

        A sequence is matched against the free variables in natural sort order.
        """
        if not phi.is_qf and not self.is_decidable:
            raise StructureError(f"{self.name} only decides quantifier-free formulas")
        env = self._bind(phi, params)
        consts = tuple(self.constant(c) for c in sorted(phi.constants()))
        return self._eval(phi, env, consts)

    def qf_decide(self, phi: Formula, params=()) -> bool:
        if not phi.is_qf:
            raise StructureError("qf_decide called on a quantified formula")
        env = self._bind(phi, params)
        return self._eval(phi, env, ())

    def term_value(self, t: Term, env: Mapping[str, Element]) -> Element:
        if isinstance(t, TVar):
            return env[t.name]
        if isinstance(t, TConst):
            return self.constant(t.name)
        assert isinstance(t, TApp)
        return self.apply(t.fn, tuple(self.term_value(a, env) for a in t.args))

    def _eval(self, phi: Formula, env: dict[str, Element], consts: tuple) -> bool:
        if isinstance(phi, Truth):
            return phi.value
        if isinstance(phi, Eq):
            return self.decide_eq(self.term_value(phi.left, env), self.term_value(phi.right, env))
        if isinstance(phi, Atom):
            return self.holds(phi.rel, tuple(self.term_value(a, env) for a in phi.args))
        if isinstance(phi, Not):
            return not self._eval(phi.body, env, consts)
        if isinstance(phi, And):
            return all(self._eval(f, env, consts) for f in phi.items)
        if isinstance(phi, Or):
            return any(self._eval(f, env, consts) for f in phi.items)
        if isinstance(phi, Implies):
            return (not self._eval(phi.left, env, consts)) or self._eval(phi.right, env, consts)
        if isinstance(phi, (Exists, Forall)):
            others = [v for k, v in env.items() if k != phi.var]
            want = isinstance(phi, Exists)
            for cand in self.witnesses(tuple(others) + consts):
                env2 = dict(env)
                env2[phi.var] = cand
                if self._eval(phi.body, env2, consts) == want:
                    return want
            return not want
        raise TypeError(f"not a formula: {phi!r}")

    def find_witness(self, phi: Formula, var: str, env: Mapping[str, Element], limit: int = 100_000) -> Element:
        """First element in enumeration order making ``phi`` true at ``var``."""
        for i in range(limit):
            b = self.enumerate(i)
            env2 = dict(env)
            env2[var] = b
            if self.decide(phi, env2):
                return b
        raise StructureError(f"no witness among the first {limit} elements")

    # -- omega-categoricity and recognizability ---------------------------

    def isolating_formulas(self, n: int) -> list[Formula]:
        raise StructureError(f"{self.name} is not flagged effectively omega-categorical")

    def recognizer(self, a: Element) -> Formula:
        raise StructureError(f"{self.name} is not effectively recognizable")


def type_variables(n: int) -> list[str]:
    return ["x"] + [f"y{j}" for j in range(1, n + 1)]


def _set_partitions(items: list[str]) -> Iterator[list[list[str]]]:
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def _diagram_formula(blocks: Sequence[Sequence[str]], order: bool) -> Formula:
    lits: list[Formula] = []
    for block in blocks:
        for a, b in zip(block, block[1:]):
            lits.append(Eq(TVar(a), TVar(b)))
    for i, bi in enumerate(blocks):
        for bj in blocks[i + 1:]:
            if order:
                lits.append(Atom("<", (TVar(bi[0]), TVar(bj[0]))))
            else:
                lits.append(Not(Eq(TVar(bi[0]), TVar(bj[0]))))
    if not lits:
        return Eq(TVar(blocks[0][0]), TVar(blocks[0][0]))
    return conj(lits)


class PureSet(Structure):
    """The infinite set with no structure; elements are ``e0, e1, ...``."""

    name = "pureset"
    is_effectively_omega_categorical = True

    @cached_property
    def signature(self) -> Signature:
        return Signature()

    def enumerate(self, i: int) -> Element:
        return i

    def index_of(self, a: Element) -> int:
        return int(a)

    def witnesses(self, params: Sequence[Element]) -> list[Element]:
        distinct = sorted(set(params))
        fresh = 0
        while fresh in distinct:
            fresh += 1
        return distinct + [fresh]

    def element_name(self, a: Element) -> str:
        return f"e{a}"

    def parse_element(self, text: str) -> Element:
        m = re.fullmatch(r"e?(\d+)", text.strip())
        if not m:
            raise StructureError(f"pure set elements look like e3, got {text!r}")
        return int(m.group(1))

    def contains(self, a: Element) -> bool:
        return isinstance(a, int) and a >= 0

    def isolating_formulas(self, n: int) -> list[Formula]:
        return [_diagram_formula(p, order=False) for p in _set_partitions(type_variables(n))]


def _calkin_wilf(n: int) -> Fraction:
    """n-th positive rational (n >= 1) of the Calkin-Wilf tree in breadth-first order."""
    a, b = 1, 1
    for bit in bin(n)[3:]:
        if bit == "0":
            a, b = a, a + b
        else:
            a, b = a + b, b
    return Fraction(a, b)


def _calkin_wilf_index(q: Fraction) -> int:
    a, b = q.numerator, q.denominator
    bits: list[str] = []
    while (a, b) != (1, 1):
        if a < b:
            bits.append("0")
            b -= a
        else:
            bits.append("1")
            a -= b
    return int("1" + "".join(reversed(bits)), 2)


class DenseOrder(Structure):
    """(Q, <); elements are exact rationals."""

    name = "dlo"
    is_effectively_omega_categorical = True

    @cached_property
    def signature(self) -> Signature:
        return Signature(relations={"<": 2})

    def enumerate(self, i: int) -> Element:
        if i == 0:
            return Fraction(0)
        q = _calkin_wilf((i + 1) // 2)
        return q if i % 2 == 1 else -q

    def index_of(self, a: Element) -> int:
        q = Fraction(a)
        if q == 0:
            return 0
        j = _calkin_wilf_index(abs(q))
        return 2 * j - 1 if q > 0 else 2 * j

    def witnesses(self, params: Sequence[Element]) -> list[Element]:
        pts = sorted(set(Fraction(p) for p in params))
        if not pts:
            return [Fraction(0)]
        out = [pts[0] - 1]
        for lo, hi in zip(pts, pts[1:]):
            out += [lo, (lo + hi) / 2]
        out += [pts[-1], pts[-1] + 1]
        return out

    def holds(self, rel: str, args: tuple[Element, ...]) -> bool:
        if rel != "<":
            return super().holds(rel, args)
        return args[0] < args[1]

    def canonical(self, a: Element) -> Element:
        return Fraction(a)

    def parse_element(self, text: str) -> Element:
        from .events import parse_rational

        return parse_rational(text)

    def contains(self, a: Element) -> bool:
        return isinstance(a, (int, Fraction)) and not isinstance(a, bool)

    def isolating_formulas(self, n: int) -> list[Formula]:
        out: list[Formula] = []
        for part in _set_partitions(type_variables(n)):
            for perm in itertools.permutations(part):
                out.append(_diagram_formula(perm, order=True))
        return out


class FiniteStructure(Structure):
    """A finite structure given by relation tuples, function tables and constants."""

    def __init__(
        self,
        size: int,
        relations: Mapping[str, Iterable[Sequence[int]]] | None = None,
        functions: Mapping[str, Sequence] | None = None,
        constants: Mapping[str, int] | None = None,
        name: str = "finite",
        relation_arities: Mapping[str, int] | None = None,
    ) -> None:
        if size < 1:
            raise StructureError("finite structures need at least one element")
        self.size = size
        self.name = name
        self.relations: dict[str, frozenset[tuple[int, ...]]] = {}
        arities: dict[str, int] = dict(relation_arities or {})
        for rel, tuples in (relations or {}).items():
            ts = frozenset(tuple(int(v) for v in t) for t in tuples)
            lengths = {len(t) for t in ts}
            if rel in arities:
                lengths.add(arities[rel])
            if len(lengths) > 1:
                raise StructureError(f"relation {rel} mixes arities {sorted(lengths)}")
            arities[rel] = lengths.pop() if lengths else arities.get(rel, 1)
            for t in ts:
                if any(not (0 <= v < size) for v in t):
                    raise StructureError(f"relation {rel} mentions an element outside 0..{size - 1}")
            self.relations[rel] = ts
        self.functions: dict[str, tuple[int, tuple[int, ...]]] = {}
        for fn, table in (functions or {}).items():
            flat = list(_flatten(table))
            arity = 0
            while size**arity < len(flat):
                arity += 1
            if size**arity != len(flat):
                raise StructureError(f"function table {fn} has {len(flat)} entries, not a power of {size}")
            if any(not (isinstance(v, int) and 0 <= v < size) for v in flat):
                raise StructureError(f"function {fn} is not total on 0..{size - 1}")
            self.functions[fn] = (arity, tuple(flat))
        self.consts: dict[str, int] = {}
        for c, v in (constants or {}).items():
            if not (isinstance(v, int) and 0 <= v < size):
                raise StructureError(f"constant {c} names no element")
            self.consts[c] = v
        self._signature = Signature(
            relations=arities,
            functions={f: a for f, (a, _) in self.functions.items()},
            constants=tuple(self.consts),
        )
        self.is_effectively_omega_categorical = True
        self.is_effectively_recognizable = len(self.automorphisms) == 1

    @property
    def signature(self) -> Signature:
        return self._signature

    @classmethod
    def from_json(cls, data: Mapping, name: str = "finite") -> FiniteStructure:
        if "size" not in data:
            raise StructureError("structure file needs a 'size' field")
        return cls(
            int(data["size"]),
            data.get("relations", {}),
            data.get("functions", {}),
            data.get("constants", {}),
            name=name,
            relation_arities=data.get("arities"),
        )

    @classmethod
    def load(cls, path: str | Path) -> FiniteStructure:
        p = Path(path)
        return cls.from_json(json.loads(p.read_text()), name=f"finite:{p}")

    def enumerate(self, i: int) -> Element:
        return i % self.size

    def index_of(self, a: Element) -> int:
        return int(a)

    def witnesses(self, params: Sequence[Element]) -> list[Element]:
        return list(range(self.size))

    def holds(self, rel: str, args: tuple[Element, ...]) -> bool:
        if rel not in self.relations:
            return super().holds(rel, args)
        return tuple(args) in self.relations[rel]

    def apply(self, fn: str, args: tuple[Element, ...]) -> Element:
        if fn not in self.functions:
            return super().apply(fn, args)
        arity, table = self.functions[fn]
        idx = 0
        for a in args:
            idx = idx * self.size + a
        return table[idx]

    def constant(self, name: str) -> Element:
        if name not in self.consts:
            return super().constant(name)
        return self.consts[name]

    def parse_element(self, text: str) -> Element:
        try:
            v = int(text.strip().lstrip("e"))
        except ValueError as exc:
            raise StructureError(f"bad element {text!r}") from exc
        if not 0 <= v < self.size:
            raise StructureError(f"element {v} outside 0..{self.size - 1}")
        return v

    def contains(self, a: Element) -> bool:
        return isinstance(a, int) and 0 <= a < self.size

    def to_json(self) -> dict:
        return {
            "size": self.size,
            "relations": {r: sorted(map(list, ts)) for r, ts in sorted(self.relations.items())},
            "functions": {f: list(t) for f, (_, t) in sorted(self.functions.items())},
            "constants": dict(sorted(self.consts.items())),
        }

    @cached_property
    def automorphisms(self) -> list[tuple[int, ...]]:
        found = []
        for perm in itertools.permutations(range(self.size)):
            if self._is_automorphism(perm):
                found.append(perm)
        return found

    def _is_automorphism(self, perm: tuple[int, ...]) -> bool:
        for ts in self.relations.values():
            if frozenset(tuple(perm[v] for v in t) for t in ts) != ts:
                return False
        for arity, table in self.functions.values():
            for args in itertools.product(range(self.size), repeat=arity):
                idx = 0
                for a in args:
                    idx = idx * self.size + a
                img = 0
                for a in args:
                    img = img * self.size + perm[a]
                if table[img] != perm[table[idx]]:
                    return False
        return all(perm[v] == v for v in self.consts.values())

    def _orbit_formula(self, tup: Sequence[int], names: Sequence[str]) -> Formula:
        zs = [f"z{i}" for i in range(self.size)]
        taken = set(names)
        zs = [z if z not in taken else fresh_name(z, taken | set(zs)) for z in zs]
        lits: list[Formula] = []
        for i, j in itertools.combinations(range(self.size), 2):
            lits.append(Not(Eq(TVar(zs[i]), TVar(zs[j]))))
        w = fresh_name("w", taken | set(zs))
        lits.append(Forall(w, disj([Eq(TVar(w), TVar(z)) for z in zs])))
        for rel, ts in sorted(self.relations.items()):
            arity = self._signature.relations[rel]
            for args in itertools.product(range(self.size), repeat=arity):
                atom = Atom(rel, tuple(TVar(zs[a]) for a in args))
                lits.append(atom if args in ts else Not(atom))
        for fn, (arity, table) in sorted(self.functions.items()):
            for idx, args in enumerate(itertools.product(range(self.size), repeat=arity)):
                lits.append(Eq(TApp(fn, tuple(TVar(zs[a]) for a in args)), TVar(zs[table[idx]])))
        for c, v in sorted(self.consts.items()):
            lits.append(Eq(TConst(c), TVar(zs[v])))
        for name, v in zip(names, tup):
            lits.append(Eq(TVar(name), TVar(zs[v])))
        body: Formula = conj(lits)
        for z in reversed(zs):
            body = Exists(z, body)
        return body

    def isolating_formulas(self, n: int) -> list[Formula]:
        names = type_variables(n)
        seen: set[tuple[int, ...]] = set()
        out: list[Formula] = []
        for tup in itertools.product(range(self.size), repeat=n + 1):
            if tup in seen:
                continue
            orbit = {tuple(p[v] for v in tup) for p in self.automorphisms}
            seen |= orbit
            out.append(self._orbit_formula(tup, names))
        return out

    def recognizer(self, a: Element) -> Formula:
        if self.size == 1:
            return Eq(TVar("x"), TVar("x"))
        if any(p[a] != a for p in self.automorphisms):
            raise StructureError(f"element {a} of {self.name} is moved by an automorphism")
        return self._orbit_formula((a,), ["x"])


def _flatten(table) -> Iterator:
    for v in table:
        if isinstance(v, (list, tuple)):
            yield from _flatten(v)
        else:
            yield v


class NamedExpansion(Structure):
    """Expansion of a structure by constants ``c0, c1, ...`` naming every element."""

    is_effectively_recognizable = True

    def __init__(self, base: Structure, prefix: str = "c") -> None:
        self.base = base
        self.prefix = prefix
        self.name = f"named:{base.name}"
        self.is_decidable = base.is_decidable
        sig = base.signature
        self._signature = Signature(
            relations=sig.relations,
            functions=sig.functions,
            constants=sig.constants,
            constant_prefix=prefix,
        )

    @property
    def signature(self) -> Signature:
        return self._signature

    def enumerate(self, i: int) -> Element:
        return self.base.enumerate(i)

    def index_of(self, a: Element) -> int:
        return self.base.index_of(a)

    def witnesses(self, params: Sequence[Element]) -> list[Element]:
        return self.base.witnesses(params)

    def holds(self, rel, args):
        return self.base.holds(rel, args)

    def apply(self, fn, args):
        return self.base.apply(fn, args)

    def constant(self, name: str) -> Element:
        if self._signature.is_constant(name) and name not in self.base.signature.constants:
            return self.base.enumerate(int(name[len(self.prefix):]))
        return self.base.constant(name)

    def canonical(self, a):
        return self.base.canonical(a)

    def element_name(self, a):
        return self.base.element_name(a)

    def parse_element(self, text):
        return self.base.parse_element(text)

    def contains(self, a):
        return self.base.contains(a)

    def recognizer(self, a: Element) -> Formula:
        return Eq(TVar("x"), TConst(f"{self.prefix}{self.base.index_of(self.canonical(a))}"))


GRAPH3 = {"size": 3, "relations": {"E": [[0, 1], [1, 0]]}}


def load_structure(descriptor: str) -> Structure:
    """Resolve ``pureset``, ``dlo``, ``point``, ``graph3``, ``finite:<path>``, ``named:<d>``."""
    d = descriptor.strip()
    if d.startswith("named:"):
        return NamedExpansion(load_structure(d[len("named:"):]))
    if d.startswith("finite:"):
        return FiniteStructure.load(d[len("finite:"):])
    if d == "pureset":
        return PureSet()
    if d == "dlo":
        return DenseOrder()
    if d == "point":
        return FiniteStructure(1, name="point")
    if d == "graph3":
        return FiniteStructure.from_json(GRAPH3, name="graph3")
    raise StructureError(f"unknown structure descriptor {descriptor!r}")


def isolating_formulas(M: Structure, n: int) -> list[Formula]:
    if not M.is_effectively_omega_categorical:
        raise StructureError(f"{M.name} is not flagged effectively omega-categorical")
    return M.isolating_formulas(n)


def recognizer(M: Structure, a: Element) -> Formula:
    if not M.is_effectively_recognizable:
        raise StructureError(f"{M.name} is not effectively recognizable")
    return M.recognizer(a)


def decide(M: Structure, phi: Formula, params=()) -> bool:
    return M.decide(phi, params)


def enumerate_elements(M: Structure, i: int) -> Element:
    return M.enumerate(i)


FormulaLike = Union[Formula, str]


def as_formula(phi: FormulaLike, signature: Signature | None = None) -> Formula:
    return parse_classical(phi, signature) if isinstance(phi, str) else phi
