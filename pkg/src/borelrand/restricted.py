"""Restricted connectives: functions built from 0, 1, x/2 and truncated subtraction.

Evaluation is exact.  A batch of rational inputs is scaled by a common
denominator times a power of two large enough that every intermediate value
becomes an integer, so a whole grid is evaluated with integer numpy arrays
(int64 when it fits, Python integers otherwise).
"""

from __future__ import annotations

import itertools
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass
from fractions import Fraction
from functools import reduce
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import ResourceCapError
from .events import as_rational

# --------------------------------------------------------------------------
# AST


class RestrictedFn(ABC):
    """Node of a restricted-function DAG.  Nodes are immutable and may be shared."""

    children: tuple[RestrictedFn, ...] = ()

    def expand(self) -> RestrictedFn:
        """Rewrite macro nodes into the core generators."""
        return self._rebuild(tuple(c.expand() for c in self.children))

    def _rebuild(self, kids: tuple[RestrictedFn, ...]) -> RestrictedFn:
        return self

    @property
    def arity(self) -> int:
        cached = self.__dict__.get("_arity")
        if cached is None:
            cached = 1 + max((v.index for v in _postorder(self) if isinstance(v, Var)), default=-1)
            object.__setattr__(self, "_arity", cached)
        return cached

    def __call__(self, *xs) -> Fraction:
        return eval_restricted(self, xs)

    def sexpr(self, leaf: Callable[[int], str] | None = None) -> str:
        return to_sexpr(self, leaf)

    def __str__(self) -> str:
        return self.sexpr()


@dataclass(frozen=True, eq=False)
class Zero(RestrictedFn):
    pass


@dataclass(frozen=True, eq=False)
class One(RestrictedFn):
    pass


@dataclass(frozen=True, eq=False)
class Var(RestrictedFn):
    index: int


@dataclass(frozen=True, eq=False)
class Half(RestrictedFn):
    arg: RestrictedFn

    @property
    def children(self):
        return (self.arg,)

    def _rebuild(self, kids):
        return Half(*kids)


@dataclass(frozen=True, eq=False)
class _Binary(RestrictedFn):
    left: RestrictedFn
    right: RestrictedFn

    @property
    def children(self):
        return (self.left, self.right)

    def _rebuild(self, kids):
        return type(self)(*kids)


class TruncSub(_Binary):
    """a ∸ b = max(a - b, 0)"""


class TruncAdd(_Binary):
    """a ⊕ b = min(1, a + b), a macro for 1 ∸ ((1 ∸ a) ∸ b)"""

    def expand(self):
        a, b = self.left.expand(), self.right.expand()
        return TruncSub(One(), TruncSub(TruncSub(One(), a), b))


class Min(_Binary):
    def expand(self):
        a, b = self.left.expand(), self.right.expand()
        return TruncSub(a, TruncSub(a, b))


class Max(_Binary):
    def expand(self):
        a, b = self.left.expand(), self.right.expand()
        na, nb = TruncSub(One(), a), TruncSub(One(), b)
        return TruncSub(One(), TruncSub(na, TruncSub(na, nb)))


@dataclass(frozen=True, eq=False)
class Neg(RestrictedFn):
    arg: RestrictedFn

    @property
    def children(self):
        return (self.arg,)

    def expand(self):
        return TruncSub(One(), self.arg.expand())


@dataclass(frozen=True, eq=False)
class Const(RestrictedFn):
    """A rational constant in [0,1].

    Dyadic constants are macros for sums of halvings of 1; other rationals are
    kept as 0-ary connectives and cannot be expanded.
    """

    value: Fraction

    def __post_init__(self) -> None:
        v = Fraction(self.value)
        object.__setattr__(self, "value", v)
        if not (0 <= v <= 1):
            raise ValueError(f"constant {v} is outside [0,1]")

    @property
    def dyadic(self) -> bool:
        d = self.value.denominator
        return d & (d - 1) == 0

    def expand(self):
        v = self.value
        if not self.dyadic:
            raise ValueError(f"constant {v} is not dyadic, so it has no expansion into core nodes")
        if v == 0:
            return Zero()
        if v == 1:
            return One()
        terms: list[RestrictedFn] = []
        power: RestrictedFn = One()
        j = 0
        num, den = v.numerator, v.denominator
        bits = den.bit_length() - 1
        for j in range(1, bits + 1):
            power = Half(power)
            if (num >> (bits - j)) & 1:
                terms.append(power)
        return reduce(lambda a, b: TruncSub(One(), TruncSub(TruncSub(One(), a), b)), terms)


# --------------------------------------------------------------------------
# builders


def const(q) -> RestrictedFn:
    q = as_rational(q)
    if q == 0:
        return Zero()
    if q == 1:
        return One()
    return Const(q)


def balanced(op: Callable[[RestrictedFn, RestrictedFn], RestrictedFn], items: Sequence[RestrictedFn], empty: RestrictedFn) -> RestrictedFn:
    items = list(items)
    if not items:
        return empty
    while len(items) > 1:
        nxt = [op(items[i], items[i + 1]) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def max_all(items: Sequence[RestrictedFn]) -> RestrictedFn:
    return balanced(Max, items, Zero())


def min_all(items: Sequence[RestrictedFn]) -> RestrictedFn:
    return balanced(Min, items, One())


def add_all(items: Sequence[RestrictedFn]) -> RestrictedFn:
    return balanced(TruncAdd, items, Zero())


def scale(k: int, t: RestrictedFn) -> RestrictedFn:
    """min(1, k*t) as a k-fold truncated sum."""
    if k < 0:
        raise ValueError("scale factor must be a natural number")
    if k == 0:
        return Zero()
    return add_all([t] * k)


def abs_diff(a: RestrictedFn, b: RestrictedFn) -> RestrictedFn:
    return Max(TruncSub(a, b), TruncSub(b, a))


# --------------------------------------------------------------------------
# traversal


def _postorder(root: RestrictedFn) -> list[RestrictedFn]:
    seen: set[int] = set()
    order: list[RestrictedFn] = []
    stack: list[tuple[RestrictedFn, bool]] = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for c in reversed(node.children):
            if id(c) not in seen:
                stack.append((c, False))
    return order


def size(v: RestrictedFn) -> int:
    return len(_postorder(v))


def half_depth(v: RestrictedFn) -> int:
    depth: dict[int, int] = {}
    for node in _postorder(v):
        if isinstance(node, Half):
            d = depth[id(node.arg)] + 1
        else:
            d = max((depth[id(c)] for c in node.children), default=0)
        depth[id(node)] = d
    return depth[id(v)]


def to_sexpr(v: RestrictedFn, leaf: Callable[[int], str] | None = None) -> str:
    leaf = leaf or (lambda i: f"(x {i})")
    text: dict[int, str] = {}
    for node in _postorder(v):
        kids = [text[id(c)] for c in node.children]
        if isinstance(node, Zero):
            s = "(c0)"
        elif isinstance(node, One):
            s = "(c1)"
        elif isinstance(node, Var):
            s = leaf(node.index)
        elif isinstance(node, Const):
            s = f"(const {node.value})"
        else:
            s = f"({_KEYWORD[type(node)]} {' '.join(kids)})"
        text[id(node)] = s
    return text[id(v)]


_KEYWORD = {Half: "half", TruncSub: "sub", TruncAdd: "add", Min: "min", Max: "max", Neg: "neg"}


# --------------------------------------------------------------------------
# Lipschitz bounds


def lipschitz_vector(v: RestrictedFn, arity: int | None = None) -> tuple[Fraction, ...]:
    """Per-coordinate constants L with |v(x) - v(y)| <= sum_i L_i |x_i - y_i|.

    Core rules: Var gives a unit vector, constants give 0, Half halves and
    truncated subtraction adds.  Macro nodes use their own (tighter, still
    sound) rules: min and max take the coordinatewise maximum, negation keeps
    the vector and truncated addition adds.
    """
    n = v.arity if arity is None else arity
    zero = (Fraction(0),) * n
    vec: dict[int, tuple[Fraction, ...]] = {}
    for node in _postorder(v):
        if isinstance(node, Var):
            out = tuple(Fraction(1) if i == node.index else Fraction(0) for i in range(n))
        elif isinstance(node, (Zero, One, Const)):
            out = zero
        elif isinstance(node, Half):
            out = tuple(x / 2 for x in vec[id(node.arg)])
        elif isinstance(node, Neg):
            out = vec[id(node.arg)]
        elif isinstance(node, (TruncSub, TruncAdd)):
            out = tuple(a + b for a, b in zip(vec[id(node.left)], vec[id(node.right)]))
        elif isinstance(node, (Min, Max)):
            out = tuple(max(a, b) for a, b in zip(vec[id(node.left)], vec[id(node.right)]))
        else:
            raise TypeError(node)
        vec[id(node)] = out
    return vec[id(v)]


def lipschitz_modulus(v: RestrictedFn) -> Fraction:
    """A single constant L with |v(x) - v(y)| <= L * ||x - y||_1."""
    return max(lipschitz_vector(v), default=Fraction(0))


# --------------------------------------------------------------------------
# evaluation


def _lcm(values: Iterable[int]) -> int:
    return reduce(math.lcm, values, 1)


def _eval_scaled(v: RestrictedFn, columns: Sequence[np.ndarray], scale_: int, like: np.ndarray) -> np.ndarray:
    order = _postorder(v)
    uses: dict[int, int] = {}
    for node in order:
        for c in node.children:
            uses[id(c)] = uses.get(id(c), 0) + 1
    val: dict[int, np.ndarray] = {}
    for node in order:
        if isinstance(node, Zero):
            out = np.zeros_like(like)
        elif isinstance(node, One):
            out = np.full_like(like, scale_)
        elif isinstance(node, Const):
            out = np.full_like(like, node.value.numerator * (scale_ // node.value.denominator))
        elif isinstance(node, Var):
            out = columns[node.index]
        else:
            kids = [val[id(c)] for c in node.children]
            if isinstance(node, Half):
                out = kids[0] // 2
            elif isinstance(node, Neg):
                out = scale_ - kids[0]
            elif isinstance(node, TruncSub):
                out = np.maximum(kids[0] - kids[1], 0)
            elif isinstance(node, TruncAdd):
                out = np.minimum(kids[0] + kids[1], scale_)
            elif isinstance(node, Min):
                out = np.minimum(kids[0], kids[1])
            elif isinstance(node, Max):
                out = np.maximum(kids[0], kids[1])
            else:
                raise TypeError(node)
            for c in node.children:
                uses[id(c)] -= 1
                if uses[id(c)] == 0:
                    del val[id(c)]
        val[id(node)] = out
    return val[id(v)]


def eval_batch(v: RestrictedFn, points: Sequence[Sequence], chunk: int = 8192) -> list[Fraction]:
    """Exact values of ``v`` at many rational points."""
    pts = [tuple(as_rational(x) for x in p) for p in points]
    if not pts:
        return []
    n = v.arity
    for p in pts:
        if len(p) < n:
            raise ValueError(f"need at least {n} inputs, got {len(p)}")
        if any(not (0 <= x <= 1) for x in p[:n]):
            raise ValueError("inputs of restricted functions must lie in [0,1]")
    den = _lcm(x.denominator for p in pts for x in p[:n])
    den = math.lcm(den, _lcm(c.value.denominator for c in _postorder(v) if isinstance(c, Const)))
    scale_ = den << half_depth(v)
    dtype: object = np.int64 if scale_ < (1 << 60) else object
    out: list[Fraction] = []
    for start in range(0, len(pts), chunk):
        block = pts[start:start + chunk]
        like = np.zeros(len(block), dtype=dtype)
        cols = [
            np.array([p[i].numerator * (scale_ // p[i].denominator) for p in block], dtype=dtype)
            for i in range(n)
        ]
        res = _eval_scaled(v, cols, scale_, like)
        out.extend(Fraction(int(r), scale_) for r in res)
    return out


def eval_restricted(v: RestrictedFn, xs: Sequence) -> Fraction:
    return eval_batch(v, [tuple(xs)])[0]


def eval_float(v: RestrictedFn, X: np.ndarray) -> np.ndarray:
    """Floating-point evaluation on the rows of ``X`` (used only inside searches)."""
    X = np.asarray(X, dtype=float)
    cols = [X[:, i] for i in range(X.shape[1])] if X.ndim == 2 else []
    like = np.zeros(X.shape[0])
    order = _postorder(v)
    val: dict[int, np.ndarray] = {}
    for node in order:
        if isinstance(node, Zero):
            out = like
        elif isinstance(node, One):
            out = like + 1.0
        elif isinstance(node, Const):
            out = like + float(node.value)
        elif isinstance(node, Var):
            out = cols[node.index]
        else:
            k = [val[id(c)] for c in node.children]
            if isinstance(node, Half):
                out = k[0] * 0.5
            elif isinstance(node, Neg):
                out = 1.0 - k[0]
            elif isinstance(node, TruncSub):
                out = np.maximum(k[0] - k[1], 0.0)
            elif isinstance(node, TruncAdd):
                out = np.minimum(k[0] + k[1], 1.0)
            elif isinstance(node, Min):
                out = np.minimum(k[0], k[1])
            else:
                out = np.maximum(k[0], k[1])
        val[id(node)] = out
    return val[id(v)]


def eval_interval(v: RestrictedFn, LO: np.ndarray, HI: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Natural interval extension over boxes [LO, HI] (rows are boxes)."""
    like = np.zeros(LO.shape[0])
    lo_v: dict[int, np.ndarray] = {}
    hi_v: dict[int, np.ndarray] = {}
    for node in _postorder(v):
        key = id(node)
        if isinstance(node, Zero):
            lo, hi = like, like
        elif isinstance(node, One):
            lo = hi = like + 1.0
        elif isinstance(node, Const):
            lo = hi = like + float(node.value)
        elif isinstance(node, Var):
            lo, hi = LO[:, node.index], HI[:, node.index]
        else:
            kl = [lo_v[id(c)] for c in node.children]
            kh = [hi_v[id(c)] for c in node.children]
            if isinstance(node, Half):
                lo, hi = kl[0] * 0.5, kh[0] * 0.5
            elif isinstance(node, Neg):
                lo, hi = 1.0 - kh[0], 1.0 - kl[0]
            elif isinstance(node, TruncSub):
                lo, hi = np.maximum(kl[0] - kh[1], 0.0), np.maximum(kh[0] - kl[1], 0.0)
            elif isinstance(node, TruncAdd):
                lo, hi = np.minimum(kl[0] + kl[1], 1.0), np.minimum(kh[0] + kh[1], 1.0)
            elif isinstance(node, Min):
                lo, hi = np.minimum(kl[0], kl[1]), np.minimum(kh[0], kh[1])
            else:
                lo, hi = np.maximum(kl[0], kl[1]), np.maximum(kh[0], kh[1])
        lo_v[key], hi_v[key] = lo, hi
    return lo_v[id(v)], hi_v[id(v)]


# --------------------------------------------------------------------------
# computable functions


class ComputableFn(ABC):
    """A function [0,1]^n -> [0,1] given by rational approximations and a modulus."""

    arity: int

    @abstractmethod
    def approx(self, x: Sequence[Fraction], k: int) -> Fraction:
        """A rational within 2^-k of the value at ``x``."""

    def approx_many(self, points: Sequence[Sequence[Fraction]], k: int) -> list[Fraction]:
        return [self.approx(p, k) for p in points]

    def lipschitz(self) -> tuple[Fraction, ...] | None:
        return None

    def modulus(self, eps: Fraction) -> Fraction:
        """delta with |u(x) - u(y)| <= eps whenever ||x - y||_1 <= delta."""
        L = self.lipschitz()
        if L is None:
            raise ValueError("this function carries no modulus of continuity")
        top = max(L, default=Fraction(0))
        return Fraction(self.arity or 1) if top == 0 else Fraction(eps) / top

    def restricted(self) -> RestrictedFn | None:
        return None

    def eval_float(self, X: np.ndarray) -> np.ndarray | None:
        return None

    def eval_interval(self, LO: np.ndarray, HI: np.ndarray) -> tuple[np.ndarray, np.ndarray] | None:
        return None


class RestrictedComputable(ComputableFn):
    def __init__(self, fn: RestrictedFn, arity: int | None = None) -> None:
        self.fn = fn
        self.arity = fn.arity if arity is None else arity

    def approx(self, x, k):
        return eval_restricted(self.fn, tuple(x) + (Fraction(0),) * (self.fn.arity - len(x)))

    def approx_many(self, points, k):
        return eval_batch(self.fn, points)

    def lipschitz(self):
        return lipschitz_vector(self.fn, self.arity)

    def restricted(self):
        return self.fn

    def eval_float(self, X):
        return eval_float(self.fn, X)

    def eval_interval(self, LO, HI):
        return eval_interval(self.fn, LO, HI)


class OracleFn(ComputableFn):
    """Wraps ``fn(x, k)``; ``lipschitz`` or ``modulus`` must be declared by the caller."""

    def __init__(
        self,
        arity: int,
        fn: Callable[[Sequence[Fraction], int], Fraction],
        lipschitz: Sequence | None = None,
        modulus: Callable[[Fraction], Fraction] | None = None,
        vectorized: Callable[[np.ndarray], np.ndarray] | None = None,
    ) -> None:
        self.arity = arity
        self._fn = fn
        self._lip = None if lipschitz is None else tuple(as_rational(x) for x in lipschitz)
        self._modulus = modulus
        self._vec = vectorized

    def approx(self, x, k):
        return Fraction(self._fn(tuple(x), k))

    def lipschitz(self):
        return self._lip

    def modulus(self, eps):
        if self._modulus is not None:
            return Fraction(self._modulus(Fraction(eps)))
        return super().modulus(eps)

    def eval_float(self, X):
        return None if self._vec is None else self._vec(X)


def as_computable(u: ComputableFn | RestrictedFn) -> ComputableFn:
    return RestrictedComputable(u) if isinstance(u, RestrictedFn) else u


# --------------------------------------------------------------------------
# partial minimum


@dataclass
class PartialMinSpec:
    """g(r) = min{ u(z) : z_i in [0, b_i(r)] for minimized i, z_j = p_j(r) otherwise }."""

    base: ComputableFn
    minimized: tuple[int, ...]
    bounds: tuple[RestrictedFn, ...]
    passive: Mapping[int, RestrictedFn]
    arity: int


_FLOAT_SLACK = 2.0 ** -36


class PartialMin(ComputableFn):
    def __init__(self, spec: PartialMinSpec) -> None:
        self.spec = spec
        self.arity = spec.arity
        base_l = spec.base.lipschitz()
        if base_l is None:
            raise ValueError("partial minimisation needs Lipschitz bounds for the base function")
        width = max([spec.base.arity, *(i + 1 for i in spec.minimized), *(j + 1 for j in spec.passive)])
        self._base_l = tuple(base_l) + (Fraction(0),) * (width - len(base_l))

    def lipschitz(self):
        s = self.spec
        out = [Fraction(0)] * self.arity
        for i, b in zip(s.minimized, s.bounds):
            for c, l in enumerate(lipschitz_vector(b, self.arity)):
                out[c] += self._base_l[i] * l
        for j, p in s.passive.items():
            for c, l in enumerate(lipschitz_vector(p, self.arity)):
                out[c] += self._base_l[j] * l
        return tuple(out)

    def _frames(self, points: Sequence[Sequence[Fraction]]) -> tuple[np.ndarray, np.ndarray]:
        s = self.spec
        pts = [tuple(p) for p in points]
        width = max([s.base.arity, *(i + 1 for i in s.minimized), *(j + 1 for j in s.passive)])
        template = np.zeros((len(pts), width))
        for j, p in s.passive.items():
            template[:, j] = [float(x) for x in eval_batch(p, pts)] if pts else []
        highs = np.zeros((len(pts), len(s.minimized)))
        for col, b in enumerate(s.bounds):
            highs[:, col] = [float(x) for x in eval_batch(b, pts)] if pts else []
        return template, highs

    def bracket_many(self, points, tol: float) -> tuple[np.ndarray, np.ndarray]:
        template, highs = self._frames(points)
        return _branch_and_bound(self.spec.base, self._base_l, self.spec.minimized, template, highs, tol)

    def approx_many(self, points, k):
        tol = 2.0 ** -(k + 1)
        lo, hi = self.bracket_many(points, tol)
        out = []
        for l, h in zip(lo, hi):
            mid = (max(l, 0.0) + min(h, 1.0)) / 2
            out.append(Fraction(mid))
        return out

    def approx(self, x, k):
        return self.approx_many([tuple(x)], k)[0]


def _split_axes(interval, base: np.ndarray, mi: np.ndarray, lo: np.ndarray, w: np.ndarray, Lm: np.ndarray) -> np.ndarray:
    """Per box, the axis whose collapse to its midpoint raises the interval
    lower bound most; boxes where no axis helps fall back to the widest
    Lipschitz extent.  Splitting along a plateau never tightens the bound, so
    this keeps the box count down where minimisers form a segment or face.
    """
    fallback = np.argmax(w * Lm, axis=1)
    D = w.shape[1]
    XL = base.copy()
    XL[:, mi] = lo
    XH = base.copy()
    XH[:, mi] = lo + w
    whole = interval(XL, XH)
    if whole is None or D < 2:
        return fallback
    gains = np.empty_like(w)
    for j in range(D):
        a, b = XL.copy(), XH.copy()
        mid = lo[:, j] + w[:, j] / 2
        a[:, mi[j]] = mid
        b[:, mi[j]] = mid
        gains[:, j] = interval(a, b)[0] - whole[0]
    best = np.argmax(gains, axis=1)
    useful = gains[np.arange(w.shape[0]), best] > 1e-12
    return np.where(useful, best, fallback)


def _branch_and_bound(
    u: ComputableFn,
    L: Sequence[Fraction],
    minimized: Sequence[int],
    template: np.ndarray,
    highs: np.ndarray,
    tol: float,
    max_boxes: int = 4_000_000,
) -> tuple[np.ndarray, np.ndarray]:
    """Brackets of min u over boxes, one per template row, vectorised over rows."""
    P, D = highs.shape
    mi = np.array(minimized, dtype=int)
    Lm = np.array([float(L[i]) for i in minimized]) if D else np.zeros(0)
    f = u.eval_float
    if f(template[:1]) is None:
        f = lambda X: np.array([float(u.approx([Fraction(x) for x in row], 40)) for row in X])  # noqa: E731
    interval = u.eval_interval
    ub = np.full(P, np.inf)
    pid = np.arange(P)
    lo = np.zeros((P, D))
    w = highs.copy()
    total = 0
    while pid.size:
        total += pid.size
        if total > max_boxes:
            raise ResourceCapError("partial-minimum search exceeded its box budget")
        X = template[pid].copy()
        if D:
            X[:, mi] = lo + w / 2
        vals = f(X)
        np.minimum.at(ub, pid, vals)
        lb = vals - (w / 2) @ Lm if D else vals
        if D:
            XL = template[pid].copy()
            XH = XL.copy()
            XL[:, mi] = lo
            XH[:, mi] = lo + w
            iv = interval(XL, XH)
            if iv is not None:
                lb = np.maximum(lb, iv[0])
        lb = np.maximum(lb, 0.0)
        keep = lb < ub[pid] - tol
        if not D:
            break
        pid, lo, w = pid[keep], lo[keep], w[keep]
        if not pid.size:
            break
        axis = _split_axes(interval, template[pid], mi, lo, w, Lm)
        rows = np.arange(pid.size)
        half = w[rows, axis] / 2
        w2 = w.copy()
        w2[rows, axis] = half
        lo2 = lo.copy()
        lo2[rows, axis] += half
        pid = np.concatenate([pid, pid])
        lo = np.concatenate([lo, lo2])
        w = np.concatenate([w2, w2])
    return np.maximum(ub - tol - _FLOAT_SLACK, 0.0), ub + _FLOAT_SLACK


def min_fn(
    u: ComputableFn | RestrictedFn,
    minimized: Sequence[int] | None = None,
    bounds: Sequence[RestrictedFn] | None = None,
    passive: Mapping[int, RestrictedFn] | None = None,
    arity: int | None = None,
) -> PartialMin:
    """The lower-orthant minimum of ``u``.

    With no pairing given, every minimized coordinate i is bounded by input
    coordinate i and the others pass through, which is exactly
    min{u(s) : s_i <= r_i}.
    """
    u = as_computable(u)
    minimized = tuple(range(u.arity)) if minimized is None else tuple(minimized)
    if bounds is None:
        bounds = tuple(Var(i) for i in minimized)
    if passive is None:
        passive = {j: Var(j) for j in range(u.arity) if j not in minimized}
    if arity is None:
        arity = max(
            [u.arity if not minimized else 0]
            + [b.arity for b in bounds]
            + [p.arity for p in passive.values()]
        )
    if len(bounds) != len(minimized):
        raise ValueError("one bound per minimized coordinate")
    missing = set(range(u.arity)) - set(minimized) - set(passive)
    if missing:
        raise ValueError(f"coordinates {sorted(missing)} are neither minimized nor passive")
    return PartialMin(PartialMinSpec(u, minimized, tuple(bounds), dict(passive), arity))


# --------------------------------------------------------------------------
# approximation by restricted functions


def _dyadic_exponent(limit: Fraction) -> int:
    """Least j >= 0 with 2^-j <= limit."""
    j = 0
    while Fraction(1, 1 << j) > limit:
        j += 1
    return j


def _round_dyadic(q: Fraction, j: int) -> Fraction:
    scaled = q * (1 << j)
    n = math.floor(scaled + Fraction(1, 2))
    return min(max(Fraction(n, 1 << j), Fraction(0)), Fraction(1))


@dataclass
class ApproxReport:
    slopes: tuple[int, ...]
    meshes: tuple[Fraction, ...]
    grid_points: int
    cones: int


def approx_restricted(
    u: ComputableFn | RestrictedFn,
    eps,
    domain: str = "cube",
    max_points: int = 2_000_000,
    report: list | None = None,
) -> RestrictedFn:
    """A restricted v with sup |u - v| < eps (on the cube, or on the simplex sum x <= 1).

    v is the upper envelope of cones c_p ∸ sum_i K_i |x_i - p_i| over a dyadic
    grid, with integer slopes K_i >= L_i and K_i h_i <= eps/(4n).  Centres c_p
    are dyadic and within eps/16 of u(p), so |u - v| <= eps/4 + eps/16 < eps/3,
    which the grid check of verify_sup_close always accepts.
    """
    eps = as_rational(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    u = as_computable(u)
    if u.restricted() is not None:
        return u.restricted()
    n = u.arity
    L = u.lipschitz()
    if L is None:
        delta = u.modulus(eps / 16)
        if delta <= 0:
            raise ValueError("modulus must be positive")
        K = [math.ceil(1 / delta)] * n
    else:
        K = [math.ceil(x) for x in L]
    if n == 0 or all(k == 0 for k in K):
        c = u.approx([Fraction(0)] * n, _dyadic_exponent(eps / 64))
        if report is not None:
            report.append(ApproxReport(tuple(K), (), 1, 1))
        return const(_round_dyadic(c, _dyadic_exponent(eps / 64)))
    budget = eps / (4 * n)
    exps = [(_dyadic_exponent(budget / k) if k else 0) for k in K]
    axes = [
        [Fraction(i, 1 << e) for i in range((1 << e) + 1)] if k else [Fraction(0)]
        for k, e in zip(K, exps)
    ]
    count = math.prod(len(a) for a in axes)
    if count > max_points:
        raise ResourceCapError(f"approximation grid needs {count} points (cap {max_points})")
    shape = tuple(len(a) for a in axes)
    idx = np.indices(shape).reshape(n, -1).T
    pts = [tuple(axes[i][j] for i, j in enumerate(row)) for row in idx]
    inside = np.ones(len(pts), dtype=bool)
    if domain == "simplex":
        slack = sum(Fraction(1, 2 << e) for k, e in zip(K, exps) if k)
        inside = np.array([sum(p) <= 1 + slack for p in pts])
    elif domain != "cube":
        raise ValueError(f"unknown domain {domain!r}")
    live = [p for p, ok in zip(pts, inside) if ok]
    jc = _dyadic_exponent(eps / 64)
    vals = u.approx_many(live, jc + 1)
    centre = np.full(len(pts), -1, dtype=object)
    centre[np.flatnonzero(inside)] = [_round_dyadic(c, jc) for c in vals]
    # prune cones that a grid neighbour dominates: c_q - K_i h_i >= c_p
    top = max(jc, *exps)
    scaled = np.array([-(1 << 62) if c == -1 else int(c * (1 << top)) for c in centre], dtype=np.int64).reshape(shape)
    dominated = scaled <= 0
    for i, (k, e) in enumerate(zip(K, exps)):
        if not k or shape[i] < 2:
            continue
        step = k << (top - e)
        fwd = np.full(shape, False)
        sl_a = [slice(None)] * n
        sl_b = [slice(None)] * n
        sl_a[i], sl_b[i] = slice(0, -1), slice(1, None)
        fwd[tuple(sl_a)] = scaled[tuple(sl_b)] - step >= scaled[tuple(sl_a)]
        bwd = np.full(shape, False)
        bwd[tuple(sl_b)] = scaled[tuple(sl_a)] - step >= scaled[tuple(sl_b)]
        dominated |= fwd | bwd
    keep = (~dominated).reshape(-1) & inside
    absd: dict[tuple[int, Fraction], RestrictedFn] = {}

    def dist_term(i: int, p: Fraction) -> RestrictedFn:
        key = (i, p)
        if key not in absd:
            x = Var(i)
            if p == 0:
                t = x
            elif p == 1:
                t = Neg(x)
            else:
                t = abs_diff(x, Const(p))
            absd[key] = scale(K[i], t)
        return absd[key]

    cones = []
    for flat in np.flatnonzero(keep):
        p = pts[flat]
        terms = [dist_term(i, p[i]) for i in range(n) if K[i]]
        cones.append(TruncSub(const(centre[flat]), add_all(terms)))
    if report is not None:
        report.append(ApproxReport(tuple(K), tuple(Fraction(1, 1 << e) for e in exps), len(live), len(cones)))
    return max_all(cones)


def verify_sup_close(
    u: ComputableFn | RestrictedFn,
    v: RestrictedFn,
    eps,
    domain: str = "cube",
    max_points: int = 4_000_000,
) -> bool:
    """Grid test: true only if sup |u - v| < eps; always true if sup |u - v| < eps/6.

    The mesh 2^-m satisfies n 2^-m / 2 < min(delta_u(eps/6), delta_v(eps/6)),
    u is sampled to within eps/6, and the test asks max |s - v(p)| < eps/2.
    """
    eps = as_rational(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    u = as_computable(u)
    n = max(u.arity, v.arity)
    lv = lipschitz_modulus(v)
    delta_v = eps / 6 / lv if lv else None
    lu = u.lipschitz()
    if lu is None:
        delta_u = u.modulus(eps / 6)
    else:
        top = max(lu, default=Fraction(0))
        delta_u = eps / 6 / top if top else None
    deltas = [d for d in (delta_u, delta_v) if d is not None]
    if n == 0 or not deltas:
        pts = [tuple(Fraction(0) for _ in range(n))]
    else:
        target = min(deltas)
        m = 0
        while Fraction(n, 2 << m) >= target:
            m += 1
        if (2**m + 1) ** n > max_points and domain == "cube":
            raise ResourceCapError(f"verification grid too large ({(2**m + 1) ** n} points)")
        axis = [Fraction(i, 1 << m) for i in range((1 << m) + 1)]
        if domain == "simplex":
            limit = 1 + Fraction(n, 2 << m)
            pts = [p for p in _simplex_grid(axis, n, limit, max_points)]
        else:
            pts = list(itertools.product(axis, repeat=n))
    k = _dyadic_exponent(eps / 6)
    s = u.approx_many(pts, k)
    pad = (Fraction(0),) * max(v.arity - n, 0)
    t = eval_batch(v, [p + pad for p in pts])
    worst = max(abs(a - b) for a, b in zip(s, t))
    return worst < eps / 2


def _simplex_grid(axis: list[Fraction], n: int, limit: Fraction, cap: int):
    count = 0
    stack: list[tuple[Fraction, ...]] = [()]
    while stack:
        head = stack.pop()
        if len(head) == n:
            count += 1
            if count > cap:
                raise ResourceCapError("verification grid too large")
            yield head
            continue
        used = sum(head)
        for a in reversed(axis):
            if used + a <= limit:
                stack.append(head + (a,))


def substitute(v: RestrictedFn, mapping: Sequence[RestrictedFn]) -> RestrictedFn:
    """Compose: variable i of ``v`` is replaced by ``mapping[i]`` (sharing preserved)."""
    out: dict[int, RestrictedFn] = {}
    for node in _postorder(v):
        if isinstance(node, Var):
            new = mapping[node.index]
        elif node.children:
            kids = tuple(out[id(c)] for c in node.children)
            new = type(node)(*kids)
        else:
            new = node
        out[id(node)] = new
    return out[id(v)]
