"""Quantifier elimination for atomless probability algebras and for randomizations.

The passes are exact except for one lossy step per eliminated quantifier:
the call to ``approx_restricted``, which spends that quantifier's share of
the budget.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from . import restricted as R
from .errors import ResourceCapError
from .events import Event, ZERO, fair_partition, format_rational, refine, union_all
from .randvars import SimpleRV, event_map
from .rformula import (
    B,
    K,
    ETerm,
    EVar,
    Ev,
    Mu,
    Quant,
    RApp,
    RConst,
    RFormula,
    all_vars,
    compl,
    ev,
    event_bases,
    from_restricted,
    join,
    meet,
    rename_var,
    to_restricted,
    truth_of,
)
from .structures import Exists, Formula, Not, Structure, conj, fresh_name, natural_key

# --------------------------------------------------------------------------
# prenex form


@dataclass(frozen=True)
class Binder:
    kind: str
    sort: str
    var: str

    def flipped(self) -> Binder:
        return Binder("sup" if self.kind == "inf" else "inf", self.sort, self.var)


def prenex(phi: RFormula) -> RFormula:
    prefix, matrix = prenex_parts(phi)
    return attach(prefix, matrix)


def attach(prefix: Sequence[Binder], matrix: RFormula) -> RFormula:
    out = matrix
    for b in reversed(prefix):
        out = Quant(b.kind, b.sort, b.var, out)
    return out


def prenex_parts(phi: RFormula) -> tuple[list[Binder], RFormula]:
    """Pull quantifiers out through connectives, flipping in antitone slots.

    Bound variables are renamed apart from each other and from free variables.
    """
    taken = set(phi.free()) | set()
    seen: set[str] = set()

    def walk(f: RFormula) -> tuple[list[Binder], RFormula]:
        if isinstance(f, Quant):
            var = f.var
            body = f.body
            if var in seen or var in taken:
                new = fresh_name(var, taken | seen | all_vars(phi))
                body = rename_var(body, var, new)
                var = new
            seen.add(var)
            pre, mat = walk(body)
            return [Binder(f.kind, f.sort, var)] + pre, mat
        if isinstance(f, RApp):
            from .rformula import CONNECTIVES

            prefix: list[Binder] = []
            kids = []
            for arg, sign in zip(f.args, CONNECTIVES[f.op][1]):
                pre, mat = walk(arg)
                prefix.extend(pre if sign > 0 else [b.flipped() for b in pre])
                kids.append(mat)
            return prefix, RApp(f.op, tuple(kids))
        return [], f

    return walk(phi)


# --------------------------------------------------------------------------
# Boolean normal form


def sign_patterns(n: int) -> list[tuple[bool, ...]]:
    return list(itertools.product((True, False), repeat=n))


def pattern_term(params: Sequence[ETerm], pattern: Sequence[bool]) -> ETerm:
    return meet(*(p if s else compl(p) for p, s in zip(params, pattern)))


def _param_key(t: ETerm) -> tuple:
    return (0 if isinstance(t, EVar) else 1, natural_key(t.sexpr()))


def parameters_of(psi: RFormula, exclude: Sequence[ETerm] = ()) -> list[ETerm]:
    """Opaque event parameters of a quantifier-free formula, in a canonical order."""
    out: list[ETerm] = []
    for atom in _mu_atoms(psi):
        for b in event_bases(atom.term):
            if b not in exclude and b not in out:
                out.append(b)
    return sorted(out, key=_param_key)


def _mu_atoms(psi: RFormula) -> list[Mu]:
    from .rformula import mu_atoms

    return mu_atoms(psi)


@dataclass
class NormalForm:
    """psi = u(s_0..s_{N-1}, r_0..r_{N-1}) with s_k = mu(x ∩ Y^k), r_k = mu(Y^k)."""

    u: R.RestrictedFn
    params: list[ETerm]
    patterns: list[tuple[bool, ...]]

    @property
    def atoms(self) -> list[ETerm]:
        return [pattern_term(self.params, p) for p in self.patterns]


def boolean_normal_form(psi: RFormula, x: str, params: Sequence[ETerm] | None = None) -> NormalForm:
    xv = EVar(x)
    params = parameters_of(psi, [xv]) if params is None else list(params)
    patterns = sign_patterns(len(params))
    n_atoms = len(patterns)
    fn, atoms = to_restricted(psi)
    images: list[R.RestrictedFn] = []
    for atom in atoms:
        bases = event_bases(atom.term)
        stray = [b for b in bases if b != xv and b not in params]
        if stray:
            raise ValueError(f"atom {atom} mentions {stray[0]}, which is neither the variable nor a parameter")
        parts: list[R.RestrictedFn] = []
        for k, pat in enumerate(patterns):
            value = dict(zip(params, pat))
            value[xv] = True
            inside = truth_of(atom.term, value)
            value[xv] = False
            outside = truth_of(atom.term, value)
            s, r = R.Var(k), R.Var(n_atoms + k)
            if inside and outside:
                parts.append(r)
            elif inside:
                parts.append(s)
            elif outside:
                parts.append(R.TruncSub(r, s))
        images.append(R.add_all(parts))
    u = R.substitute(fn, images) if atoms else fn
    return NormalForm(u, params, patterns)


# --------------------------------------------------------------------------
# elimination of one event quantifier


@dataclass
class QEStage:
    binder: str
    budget: Fraction
    atoms: list[str] = field(default_factory=list)
    thetas: list[str] = field(default_factory=list)
    psi3: str | None = None
    Phi: str | None = None
    zeta: str | None = None
    grid_points: int = 0
    cones: int = 0
    skipped: bool = False

    def to_json(self) -> dict:
        out = {
            "binder": self.binder,
            "budget": format_rational(self.budget),
            "atoms": self.atoms,
            "grid_points": self.grid_points,
            "cones": self.cones,
            "skipped": self.skipped,
        }
        for key in ("thetas", "psi3", "Phi", "zeta"):
            val = getattr(self, key)
            if val:
                out[key] = val
        return out


@dataclass
class QETrace:
    formula: str
    eps: Fraction
    prenex: str = ""
    stages: list[QEStage] = field(default_factory=list)
    result: str = ""

    @property
    def budget_spent(self) -> Fraction:
        return sum((s.budget for s in self.stages if not s.skipped), ZERO)

    def to_json(self) -> dict:
        return {
            "formula": self.formula,
            "eps": format_rational(self.eps),
            "prenex": self.prenex,
            "stages": [s.to_json() for s in self.stages],
            "budget_spent": format_rational(self.budget_spent),
            "result": self.result,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True, indent=2)


def _reduced_inputs(n_atoms: int) -> list[R.RestrictedFn]:
    """Atom measures as functions of the first n_atoms-1 of them (they sum to 1)."""
    head = [R.Var(k) for k in range(n_atoms - 1)]
    last = R.Neg(R.add_all(head)) if head else R.One()
    return head + [last]


def _approximate(g: R.ComputableFn, budget: Fraction, n_inputs: int, stage: QEStage, max_points: int) -> R.RestrictedFn:
    rep: list = []
    v = R.approx_restricted(g, budget, domain="simplex" if n_inputs > 1 else "cube", max_points=max_points, report=rep)
    if rep:
        stage.grid_points, stage.cones = rep[0].grid_points, rep[0].cones
    return v


def eliminate_event(kind: str, x: str, psi: RFormula, budget: Fraction, stage: QEStage, max_points: int = 400_000) -> RFormula:
    """A quantifier-free formula within budget/3 of inf_x psi (or sup_x psi)."""
    if kind == "sup":
        inner = eliminate_event("inf", x, RApp("neg", (psi,)), budget, stage, max_points)
        return _neg(inner)
    nf = boolean_normal_form(psi, x)
    n_atoms = len(nf.patterns)
    stage.atoms = [t.sexpr() for t in nf.atoms]
    if not any(isinstance(n, R.Var) and n.index < n_atoms for n in R._postorder(nf.u)):
        stage.skipped = True
        return psi
    inputs = _reduced_inputs(n_atoms)
    g = R.min_fn(
        R.RestrictedComputable(nf.u, 2 * n_atoms),
        minimized=list(range(n_atoms)),
        bounds=inputs,
        passive={n_atoms + k: inputs[k] for k in range(n_atoms)},
        arity=n_atoms - 1,
    )
    v = _approximate(g, budget, n_atoms - 1, stage, max_points)
    return from_restricted(v, [Mu(t) for t in nf.atoms[:-1]])


def _neg(f: RFormula) -> RFormula:
    if isinstance(f, RConst):
        return RConst(1 - f.value)
    if isinstance(f, RApp) and f.op == "neg":
        return f.args[0]
    return RApp("neg", (f,))


def qe_apa(phi: RFormula, eps, trace: QETrace | None = None, max_points: int = 400_000) -> RFormula:
    """Quantifier-free formula within eps of phi over atomless probability algebras."""
    eps = Fraction(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    if any(s == K for s in phi.free().values()) or _has_k_binder(phi):
        raise ValueError("qe_apa handles the event sort only; use qe_randomization")
    prefix, matrix = prenex_parts(phi)
    if trace is not None:
        trace.prenex = attach(prefix, matrix).sexpr()
    if not prefix:
        return matrix
    share = eps / len(prefix)
    for b in reversed(prefix):
        stage = QEStage(f"({b.kind} ({b.sort} {b.var}))", share)
        matrix = eliminate_event(b.kind, b.var, matrix, share, stage, max_points)
        if trace is not None:
            trace.stages.append(stage)
    if trace is not None:
        trace.result = matrix.sexpr()
    return matrix


def _has_k_binder(phi: RFormula) -> bool:
    if isinstance(phi, Quant) and phi.sort == K:
        return True
    return any(_has_k_binder(c) for c in phi.children())


# --------------------------------------------------------------------------
# the witness-partition rewrite


@dataclass
class WitnessRewrite:
    var: str
    phis: list[Formula]
    thetas: list[Formula]
    theta_args: list[tuple[str, ...]]
    bnames: list[str]
    psi3: RFormula
    Phi: RFormula
    zones: list[Ev]


def _ev_terms(psi: RFormula) -> list[Ev]:
    out: list[Ev] = []
    for atom in _mu_atoms(psi):
        for b in event_bases(atom.term):
            if isinstance(b, Ev) and b not in out:
                out.append(b)
    return out


def witness_partition_rewrite(psi1: RFormula, X: str) -> WitnessRewrite:
    if not psi1.is_qf:
        raise ValueError("the rewrite takes a quantifier-free formula")
    used = all_vars(psi1)
    for atom in _mu_atoms(psi1):
        if X in atom.term.event_vars():
            raise ValueError(f"{X} occurs outside an ev term")
    with_x = [t for t in _ev_terms(psi1) if X in t.args]
    with_x.sort(key=lambda t: natural_key(t.sexpr()))
    m = len(with_x)
    patterns = sign_patterns(m)
    others = sorted({a for t in with_x for a in t.args if a != X}, key=natural_key)
    thetas = [conj([t.phi if s else Not(t.phi) for t, s in zip(with_x, pat)]) for pat in patterns]
    bnames: list[str] = []
    for j in range(len(patterns)):
        name = fresh_name(f"B{j + 1}", used | set(bnames)) if f"B{j + 1}" in used else f"B{j + 1}"
        bnames.append(name)
    bvars = [EVar(b) for b in bnames]
    replace = {
        t: join(*(bvars[j] for j, pat in enumerate(patterns) if pat[i]))
        for i, t in enumerate(with_x)
    }
    from .rformula import map_terms, substitute_event

    psi3 = map_terms(psi1, lambda term: substitute_event(term, replace))
    zones = [_canonical_zone(th, X) for th in thetas]
    Phi = _phi_formula(bvars, zones)
    return WitnessRewrite(X, [t.phi for t in with_x], thetas, [tuple([X] + others)] * len(thetas), bnames, psi3, Phi, zones)


def _canonical_zone(theta: Formula, X: str) -> Ev:
    body = Exists(X, theta)
    free = body.ordered_free_vars()
    return ev(body, free) if free else Ev(body, ())


def _phi_formula(bvars: Sequence[EVar], zones: Sequence[ETerm]) -> RFormula:
    overlap = [
        Mu(meet(bvars[i], join(*bvars[:i]))) for i in range(1, len(bvars))
    ]
    terms: list[RFormula] = []
    terms.append(_radd(overlap) if overlap else RConst(Fraction(0)))
    terms.append(RApp("sub", (RConst(Fraction(1)), Mu(join(*bvars)))))
    for b, z in zip(bvars, zones):
        terms.append(RApp("sub", (Mu(b), Mu(meet(b, z)))))
    return _rmax(terms)


def _radd(items: Sequence[RFormula]) -> RFormula:
    return _balanced("add", items)


def _rmax(items: Sequence[RFormula]) -> RFormula:
    return _balanced("max", items)


def _balanced(op: str, items: Sequence[RFormula]) -> RFormula:
    items = list(items)
    while len(items) > 1:
        nxt = [RApp(op, (items[i], items[i + 1])) for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]


def _rscale(c: int, t: RFormula) -> RFormula:
    return _radd([t] * c) if c > 0 else RConst(Fraction(0))


# --------------------------------------------------------------------------
# definable families


def beta_constant(n: int) -> int:
    return math.ceil(Fraction(6 * (n + 1) ** 2, n))


def lipschitz_in(psi: RFormula, names: Sequence[str]) -> Fraction:
    """L with |psi(B) - psi(B')| <= L * sum_i mu(B_i △ B'_i)."""
    fn, atoms = to_restricted(psi)
    vec = R.lipschitz_vector(fn, len(atoms))
    per_name = []
    for name in names:
        per_name.append(sum((l for l, a in zip(vec, atoms) if name in a.term.event_vars()), ZERO))
    return max(per_name, default=ZERO)


def definable_family_inf(psi3: RFormula, Phi: RFormula, bnames: Sequence[str]) -> RFormula:
    """zeta = inf_B [psi3 ⊕ alpha(inf_B' Min(beta(Phi(B')) ⊕ d(B, B'), 1))]."""
    n = len(bnames)
    c = beta_constant(n)
    L = math.ceil(lipschitz_in(psi3, bnames))
    taken = set(all_vars(psi3)) | set(all_vars(Phi))
    primed = []
    for b in bnames:
        p = fresh_name(b + "p", taken)
        taken.add(p)
        primed.append(p)
    Phi_p = Phi
    for b, p in zip(bnames, primed):
        Phi_p = rename_var(Phi_p, b, p)
    dist = _radd([Mu(join(meet(EVar(b), compl(EVar(p))), meet(compl(EVar(b)), EVar(p)))) for b, p in zip(bnames, primed)])
    inner = RApp("min", (RApp("add", (_rscale(c, Phi_p), dist)), RConst(Fraction(1))))
    for p in reversed(primed):
        inner = Quant("inf", B, p, inner)
    body = RApp("add", (psi3, _rscale(L, inner)))
    for b in reversed(list(bnames)):
        body = Quant("inf", B, b, body)
    return body


# --------------------------------------------------------------------------
# the ClaimDef repair


@dataclass
class Repair:
    events: list[Event]
    t: Fraction
    distance: Fraction


def phi_value(E: Sequence[Event], zones: Sequence[Event]) -> Fraction:
    """Exact value of the witness-partition constraint at E."""
    overlap = ZERO
    for i in range(1, len(E)):
        overlap += (E[i] & union_all(E[:i])).measure()
    overlap = min(overlap, Fraction(1))
    uncovered = 1 - union_all(E).measure()
    outside = [(e - z).measure() for e, z in zip(E, zones)]
    return max([overlap, uncovered, *outside])


def zone_events(M: Structure, thetas: Sequence[Formula], rvs: Sequence[SimpleRV], witness_var: str, names: Sequence[str]) -> list[Event]:
    return [event_map(M, Exists(witness_var, th), dict(zip(names, rvs))) if names else
            (Event.full() if M.decide(Exists(witness_var, th), {}) else Event.empty()) for th in thetas]


def claimdef_repair(
    E: Sequence[Event],
    rvs: Sequence[SimpleRV],
    thetas: Sequence[Formula],
    M: Structure,
    witness_var: str = "x",
    names: Sequence[str] | None = None,
) -> Repair:
    """Repair E into an exact witness partition B (Phi(B) = 0) close to E.

    Step 1 makes a partition: every sign cell of E covered by several E_i is
    split fairly among them and the uncovered cell is split fairly among all
    indices.  Step 2 moves the part of each B_i outside its zone into the
    least index whose zone contains it.
    """
    n = len(E)
    if len(thetas) != n:
        raise ValueError("one formula per event")
    if names is None:
        names = sorted({v for th in thetas for v in th.free_vars() if v != witness_var}, key=natural_key)
    zones = zone_events(M, thetas, rvs, witness_var, names)
    if union_all(zones) != Event.full():
        raise ValueError("the zones do not cover [0,1); the formulas are not exhaustive")
    t = phi_value(E, zones)
    V: list[list[Event]] = [[] for _ in range(n)]
    for pattern, cell in refine(list(E)):
        owners = [i for i, s in enumerate(pattern) if s] or list(range(n))
        for i, piece in zip(owners, fair_partition(cell, len(owners))):
            V[i].append(piece)
    Vs = [union_all(v) for v in V]
    out: list[list[Event]] = [[] for _ in range(n)]
    zone_cells = refine(zones)
    for i in range(n):
        out[i].append(Vs[i] & zones[i])
        stray = Vs[i] - zones[i]
        if stray.is_empty:
            continue
        for pattern, cell in zone_cells:
            piece = stray & cell
            if piece.is_empty:
                continue
            j = pattern.index(True)
            out[j].append(piece)
    Bs = [union_all(o) for o in out]
    d = sum(((a ^ b).measure() for a, b in zip(E, Bs)), ZERO)
    return Repair(Bs, t, d)


# --------------------------------------------------------------------------
# randomization QE


def _transport_min(rw: WitnessRewrite, stage: QEStage, budget: Fraction, max_points: int) -> RFormula:
    """inf{psi3 : Phi = 0}, eliminated over the atoms of the zone and parameter events."""
    bvars = [EVar(b) for b in rw.bnames]
    params = parameters_of(rw.psi3, bvars)
    for z in rw.zones:
        if z not in params:
            params.append(z)
    params.sort(key=_param_key)
    zone_pos = [params.index(z) for z in rw.zones]
    kept = []
    for pat in sign_patterns(len(params)):
        admissible = [i for i, p in enumerate(zone_pos) if pat[p]]
        if admissible:
            kept.append((pat, admissible))
    n_kept = len(kept)
    if n_kept == 0:
        raise ValueError("no atom meets any zone")
    stage.atoms = [pattern_term(params, pat).sexpr() for pat, _ in kept]
    # coordinates of U: z variables first, then one w per kept atom
    n_z = sum(len(a) - 1 for _, a in kept)
    w_index = [n_z + j for j in range(n_kept)]
    s: dict[tuple[int, int], R.RestrictedFn] = {}
    zpos = 0
    z_owner: list[int] = []
    for j, (_, admissible) in enumerate(kept):
        w = R.Var(w_index[j])
        acc: list[R.RestrictedFn] = []
        for i in admissible[:-1]:
            room = R.TruncSub(w, R.add_all(acc)) if acc else w
            val = R.Min(R.Var(zpos), room)
            s[(i, j)] = val
            acc.append(val)
            z_owner.append(j)
            zpos += 1
        s[(admissible[-1], j)] = R.TruncSub(w, R.add_all(acc)) if acc else w
    fn, atoms = to_restricted(rw.psi3)
    images = []
    for atom in atoms:
        parts = []
        for (i, j), val in s.items():
            value = dict(zip(params, kept[j][0]))
            for k, bv in enumerate(bvars):
                value[bv] = k == i
            if truth_of(atom.term, value):
                parts.append(val)
        images.append(R.add_all(parts))
    U = R.substitute(fn, images) if atoms else fn
    inputs = _reduced_inputs(n_kept)
    g = R.min_fn(
        R.RestrictedComputable(U, n_z + n_kept),
        minimized=list(range(n_z)),
        bounds=[inputs[j] for j in z_owner],
        passive={w_index[j]: inputs[j] for j in range(n_kept)},
        arity=n_kept - 1,
    )
    v = _approximate(g, budget, n_kept - 1, stage, max_points)
    return from_restricted(v, [Mu(pattern_term(params, pat)) for pat, _ in kept[:-1]])


def eliminate_k(kind: str, X: str, psi1: RFormula, budget: Fraction, stage: QEStage, max_m: int, max_points: int) -> RFormula:
    if kind == "sup":
        return _neg(eliminate_k("inf", X, RApp("neg", (psi1,)), budget, stage, max_m, max_points))
    rw = witness_partition_rewrite(psi1, X)
    if not rw.phis:
        stage.skipped = True
        return psi1
    if len(rw.phis) > max_m:
        raise ResourceCapError(f"{len(rw.phis)} ev terms mention {X}; the cap is {max_m} (2^m atoms)")
    stage.thetas = [str(t) for t in rw.thetas]
    stage.psi3 = rw.psi3.sexpr()
    stage.Phi = rw.Phi.sexpr()
    stage.zeta = definable_family_inf(rw.psi3, rw.Phi, rw.bnames).sexpr()
    return _transport_min(rw, stage, budget, max_points)


def qe_randomization(
    phi: RFormula,
    eps,
    trace: QETrace | None = None,
    max_m: int = 4,
    max_points: int = 400_000,
) -> RFormula:
    """Quantifier-free formula within eps of phi in every randomization.

    The construction reads only the formula, never a structure, so the output
    depends on the signature alone.
    """
    eps = Fraction(eps)
    if eps <= 0:
        raise ValueError("eps must be positive")
    prefix, matrix = prenex_parts(phi)
    if trace is not None:
        trace.prenex = attach(prefix, matrix).sexpr()
    if prefix:
        share = eps / len(prefix)
        for b in reversed(prefix):
            stage = QEStage(f"({b.kind} ({b.sort} {b.var}))", share)
            if b.sort == K:
                matrix = eliminate_k(b.kind, b.var, matrix, share, stage, max_m, max_points)
            else:
                matrix = eliminate_event(b.kind, b.var, matrix, share, stage, max_points)
            if trace is not None:
                trace.stages.append(stage)
    if trace is not None:
        trace.result = matrix.sexpr()
    return matrix
