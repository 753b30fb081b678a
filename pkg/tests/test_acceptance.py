"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Tolerances are pinned here exactly as stated in the criteria; none of them
may be loosened to make a run pass.
"""

from __future__ import annotations

import itertools
import random
import sys
import time
from fractions import Fraction as F

import numpy as np
import pytest

from borelrand.categoricity import (
    apa_type,
    back_and_forth,
    max_deviation,
    near_realization_repair,
    preservation_table,
    psi_apa,
)
from borelrand.cli import execute
from borelrand.events import Event
from borelrand.evaluator import eval_qf_formula, eval_rformula
from borelrand.presentations import (
    ComputablePoint,
    KSpecial,
    RandomizationPresentation,
    decide_via_randomization,
    load_presentation,
    roundtrip_distances,
)
from borelrand.qe import claimdef_repair, phi_value, qe_apa, qe_randomization, zone_events
from borelrand.randvars import SimpleRV, event_map, fullness_witness, left_ce_existential, mu_formula
from borelrand.restricted import (
    Max,
    Min,
    OracleFn,
    TruncAdd,
    Var,
    approx_restricted,
    lipschitz_modulus,
    min_fn,
    verify_sup_close,
)
from borelrand.rformula import Quant, eval_term, iter_subformulas, parse_rformula, to_restricted
from borelrand.structures import Exists, load_structure, parse_classical

from conftest import random_rv
from oracles import (
    apa_bracket,
    cells,
    cells_measure,
    grid_min,
    grid_of,
    holds,
    mu_formula_brute,
    random_formula,
    restricted_numpy,
    table_from_json,
)
from test_restricted import random_restricted

GRAPH3 = {"size": 3, "relations": {"E": [[0, 1], [1, 0]]}}
BESPOKE4 = {
    "size": 4,
    "relations": {"R": [[0, 1], [1, 2], [2, 3], [3, 3], [0, 0]], "P": [[1], [3]]},
    "functions": {"s": [1, 2, 3, 0]},
    "constants": {"c": 2},
}


VERDICTS: list[tuple[int, str]] = []


def verdict(n: int, ok: bool, detail: str) -> None:
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    VERDICTS.append((n, line))
    print(line, file=sys.__stdout__, flush=True)
    assert ok, line


def random_event(rng: random.Random, den: int = 64, pieces: int = 3) -> Event:
    out = []
    for _ in range(rng.randint(0, pieces)):
        a, b = sorted(rng.sample(range(den + 1), 2))
        out.append((F(a, den), F(b, den)))
    return Event.from_pairs(out)


# --------------------------------------------------------------------------
# 1. event-algebra laws


def test_criterion_1_event_laws():
    rng = random.Random(1)
    start = time.perf_counter()
    bad = []
    for trial in range(1000):
        a, b, c = (random_event(rng, rng.choice([8, 12, 30, 64])) for _ in range(3))
        n = grid_of(a, b, c)
        ca, cb, cc = cells(a, n), cells(b, n), cells(c, n)
        full = Event.full()
        checks = [
            cells(a | b, n) == ca | cb,
            cells(a & b, n) == ca & cb,
            cells(b | c, n) == cb | cc,
            cells(~a, n) == frozenset(range(n)) - ca,
            a | (b & c) == (a | b) & (a | c),
            a & (b | c) == (a & b) | (a & c),
            ~(a | b) == ~a & ~b,
            a | ~a == full and (a & ~a).is_empty,
            (a | b).measure() + (a & b).measure() == a.measure() + b.measure(),
            a.measure() == cells_measure(ca, n),
            ((a ^ b).measure() == 0) == (a == b),
            (a ^ b).measure() == (b ^ a).measure(),
            (a ^ c).measure() <= (a ^ b).measure() + (b ^ c).measure(),
        ]
        if not all(checks):
            bad.append(trial)
    elapsed = time.perf_counter() - start
    verdict(1, not bad and elapsed < 5, f"1000 triples, {len(bad)} violations, {elapsed:.2f}s (< 5s)")


# --------------------------------------------------------------------------
# 2. formula measures against a per-cell evaluator


def test_criterion_2_formula_measures(tmp_path):
    import json

    path = tmp_path / "bespoke4.json"
    path.write_text(json.dumps(BESPOKE4))
    setups = [
        (load_structure("graph3"), table_from_json(GRAPH3), {"E": 2}, {}, []),
        (load_structure(f"finite:{path}"), table_from_json(BESPOKE4), {"R": 2, "P": 1}, {"s": 1}, ["c"]),
    ]
    rng = random.Random(2)
    pool = count = mismatches = 0
    for M, table, rels, funcs, consts in setups:
        for _ in range(120):
            phi = random_formula(rng, rels, ["a", "b"], rng.randint(0, 2), funcs, consts, budget=6)
            assert phi.depth() <= 2
            pool += 1
            names = phi.ordered_free_vars()
            for _ in range(3):
                fs = [random_rv(rng, M, elements=M.size, pieces=4, den=12) for _ in names]
                count += 1
                if mu_formula(M, phi, fs) != mu_formula_brute(phi, fs, table):
                    mismatches += 1
    verdict(2, mismatches == 0 and pool >= 200, f"{pool} formulas (100+ per structure), {count} checks, {mismatches} mismatches")


# --------------------------------------------------------------------------
# 3. fullness and the left-c.e. stream


def test_criterion_3_fullness():
    rng = random.Random(3)
    builtins = [
        (load_structure("pureset"), {}, 4),
        (load_structure("graph3"), {"E": 2}, 3),
        (load_structure("point"), {}, 1),
        (load_structure("dlo"), {"<": 2}, 4),
    ]
    instances = bad = 0
    while instances < 120:
        M, rels, elements = builtins[instances % len(builtins)]
        phi = random_formula(rng, rels, ["a", "y"], rng.randint(0, 2), budget=5)
        if "y" not in phi.free_vars():
            continue
        others = [v for v in phi.ordered_free_vars() if v != "y"]
        fs = {v: random_rv(rng, M, elements=elements, pieces=3, den=8) for v in others}
        g = fullness_witness(M, phi, fs, witness_var="y")
        want = event_map(M, Exists("y", phi), fs)
        got = event_map(M, phi, {**fs, "y": g})
        instances += 1
        if (want ^ got).measure() != 0:
            bad += 1
    streams = stream_bad = 0
    for M, rels, elements in builtins:
        done = 0
        while done < 10:
            phi = random_formula(rng, rels, ["a", "y"], 0, budget=5)
            if "y" not in phi.free_vars():
                continue
            others = [v for v in phi.ordered_free_vars() if v != "y"]
            fs = {v: random_rv(rng, M, elements=elements, pieces=3, den=8) for v in others}
            exact = event_map(M, Exists("y", phi), fs).measure()
            vals = list(itertools.islice(left_ce_existential(M, phi, fs, witness_var="y"), 64))
            done += 1
            streams += 1
            if vals != sorted(vals) or vals[-1] != exact or any(v > exact for v in vals):
                stream_bad += 1
    verdict(
        3,
        bad == 0 and stream_bad == 0,
        f"{instances} fullness instances ({bad} with nonzero symmetric difference); "
        f"{streams} left-c.e. streams ({stream_bad} decreasing or short of the exact value)",
    )


# --------------------------------------------------------------------------
# 4. near realization


def test_criterion_4_near_realization():
    rng = random.Random(4)
    bad = 0
    for trial in range(600):
        m = trial % 4
        ctx = [random_event(rng, 32) for _ in range(m)]
        p = apa_type(random_event(rng, 32), ctx)
        B = random_event(rng, 32) if trial % 5 else random_event(rng, 32) ^ Event.of((0, F(1, 64)))
        n = len(p.targets)
        psi = psi_apa(B, ctx, p)
        eps = n * psi + F(rng.randint(1, 64), 256)  # psi < eps / n
        B2 = near_realization_repair(B, ctx, p)
        if psi_apa(B2, ctx, p) != 0 or not (B ^ B2).measure() < eps:
            bad += 1
    verdict(4, bad == 0, f"600 instances with m <= 3, {bad} failures (psi = 0 exactly, d < eps when psi < eps/n)")


# --------------------------------------------------------------------------
# 5. ClaimDef modulus


def _theta_lists():
    # exhaustive, pairwise exclusive formula lists with n = 1..4 entries
    return {
        1: ["(= x x)"],
        2: ["(= x y1)", "(not (= x y1))"],
        3: ["(= x y1)", "(and (= x y2) (not (= x y1)))", "(and (not (= x y1)) (not (= x y2)))"],
        4: [
            "(= x y1)",
            "(and (= x y2) (not (= x y1)))",
            "(and (= x y3) (not (= x y1)) (not (= x y2)))",
            "(and (not (= x y1)) (not (= x y2)) (not (= x y3)))",
        ],
    }


def test_criterion_5_claimdef():
    rng = random.Random(5)
    lists = _theta_lists()
    structures = [load_structure("pureset"), load_structure("point")]
    count = bad = 0
    for trial in range(240):
        M = structures[trial % 2]
        n = trial % 4 + 1
        thetas = [parse_classical(t) for t in lists[n]]
        names = sorted({v for th in thetas for v in th.free_vars() if v != "x"})
        fs = [random_rv(rng, M, elements=3, pieces=3, den=8) for _ in names]
        if trial % 3 == 0:
            E = [random_event(rng, 16) for _ in range(n)]
        else:
            # near partitions: a random partition with a little noise
            cuts = sorted(rng.sample(range(1, 32), n - 1)) if n > 1 else []
            pts = [0, *cuts, 32]
            E = [Event.of((F(a, 32), F(b, 32))) ^ random_event(rng, 64, 1) for a, b in zip(pts, pts[1:])]
        rep = claimdef_repair(E, fs, thetas, M, names=names)
        zones = zone_events(M, thetas, fs, "x", names)
        count += 1
        if phi_value(rep.events, zones) != 0 or rep.distance > F(6 * (n + 1) ** 2, n) * rep.t:
            bad += 1
    verdict(5, bad == 0, f"{count} instances with n <= 4 over pureset and point, {bad} failures (Phi = 0, d <= 6(n+1)^2 t / n)")


# --------------------------------------------------------------------------
# 6. APA quantifier elimination against a grid bracket

APA_CORPUS = [
    "(inf (B x) (max (sub (const 1/3) (mu (meet x A))) (mu (meet x (compl A)))))",
    "(inf (B x) (mu (join (meet x (compl A)) (meet (compl x) A))))",
    "(inf (B x) (max (sub (mu x) (const 1/2)) (sub (const 1/2) (mu x))))",
    "(sup (B x) (min (mu (meet x A)) (mu (meet (compl x) (compl A)))))",
    "(sup (B x) (sub (mu (meet x A)) (mu (meet x (compl A)))))",
    "(inf (B x) (sub (const 1/2) (mu (join x A))))",
    "(sup (B x) (half (mu (meet x A))))",
    "(inf (B x) (max (sub (const 1/4) (mu (meet x A))) (sub (const 1/4) (mu (meet x (compl A))))))",
    "(sup (B x) (min (mu (meet x A)) (sub (const 1/2) (mu x))))",
    "(inf (B x) (add (mu (meet x A)) (sub (const 1/3) (mu x))))",
    "(sup (B x) (sub (mu (meet x A)) (half (mu (meet x (compl A))))))",
    "(inf (B x) (max (sub (mu A) (mu (meet x A))) (mu (meet x (compl A)))))",
    "(sup (B x) (min (mu (meet x A)) (mu (meet (compl x) A))))",
    "(inf (B x) (mu (join (meet x (compl A)) (meet (compl x) A))))",
    "(sup (B x) (neg (mu (join (meet x A) (meet (compl x) (compl A))))))",
    "(inf (B x) (neg (min (mu (meet x A)) (mu (meet (compl x) A)))))",
    "(sup (B x) (max (half (mu (meet x A))) (sub (mu (meet (compl x) A)) (const 1/8))))",
    "(inf (B x) (max (sub (const 3/8) (mu x)) (mu (meet x A))))",
    "(sup (B x) (min (sub (mu (meet x (compl A))) (const 1/4)) (neg (mu x))))",
    "(inf (B x) (add (half (mu (meet x (compl A)))) (sub (const 1/2) (mu (meet x A)))))",
]


def test_criterion_6_apa_qe():
    eps = F(1, 32)
    rng = random.Random(6)
    events = [random_event(rng, 64) for _ in range(200)]
    start = time.perf_counter()
    worst = 0.0
    bad = checked = 0
    for text in APA_CORPUS:
        phi = parse_rformula(text)
        out = qe_apa(phi, eps)
        assert not any(isinstance(s, Quant) for s in iter_subformulas(out))
        params = sorted(phi.free())
        fn, atoms = to_restricted(out)
        X = np.array([[float(eval_term(a.term, {"A": e}).measure()) for a in atoms] for e in events]).reshape(len(events), len(atoms))
        vals = restricted_numpy(fn, X) if atoms else np.full(len(events), float(eval_qf_formula(None, out, {}, {})))
        for j, e in enumerate(events):
            r = e.measure()
            masses = [r, 1 - r] if params else [F(1)]
            lo, hi = apa_bracket(phi.kind, phi.body, params, masses)
            got = float(eval_qf_formula(None, out, {}, {"A": e})) if j < 10 else float(vals[j])
            miss = max(lo - got, got - hi, 0.0)
            worst = max(worst, miss)
            checked += 1
            # |out - bracket| <= eps + bracket width
            if miss > float(eps) + (hi - lo):
                bad += 1
    elapsed = time.perf_counter() - start
    verdict(
        6,
        bad == 0 and elapsed < 120,
        f"{len(APA_CORPUS)} formulas x {len(events)} events at eps = 1/32, {bad} outside eps + width "
        f"(worst distance to bracket {worst:.4f}), {elapsed:.1f}s (< 120s)",
    )


# --------------------------------------------------------------------------
# 7. randomization quantifier elimination


def test_criterion_7_randomization_qe():
    eps = F(1, 16)
    rng = random.Random(7)
    pure, point = load_structure("pureset"), load_structure("point")
    cases = [
        ("pureset", '(inf (K X) (mu (ev "(= x y)" X Y)))', 0),
        ("pureset", '(sup (K X) (mu (ev "(= x y)" X Y)))', 1),
        ("point", '(inf (K X) (mu (ev "(= x y)" X Y)))', 1),
    ]
    bad = []
    for name, text, target in cases:
        M = pure if name == "pureset" else point
        out = qe_randomization(parse_rformula(text), eps)
        if any(isinstance(s, Quant) for s in iter_subformulas(out)):
            bad.append(f"{text}: quantifier left")
        for _ in range(8):
            Y = random_rv(rng, M, elements=4 if M is pure else 1, pieces=3, den=8)
            br = eval_rformula(M, out, rvs={"Y": Y})
            if abs(br.mid - target) > eps + br.width:
                bad.append(f"{text} on {name}: {br.lo}..{br.hi}")
        texts = {
            s: execute(["qe", "--structure", s, "--formula", text, "--eps", "1/16", "--no-trace"])[0]["formula"]
            for s in ("pureset", "point")
        }
        if len(set(texts.values())) != 1 or texts["pureset"] != out.sexpr():
            bad.append(f"{text}: output depends on the structure")
    verdict(7, not bad, "three instances within eps + width of 0, 1, 1; identical text across structures" + (f"; {bad}" if bad else ""))


# --------------------------------------------------------------------------
# 8. decidability transfer


def _constant_point(pres, a):
    idx = pres.index_of_rv(SimpleRV.constant(pres.M, a))
    return ComputablePoint(lambda k: KSpecial(idx))


def test_criterion_8_decidability_transfer():
    rng = random.Random(8)
    setups = [("graph3", {"E": 2}), ("pureset", {}), ("point", {}), ("dlo", {"<": 2})]
    graph_table = table_from_json(GRAPH3)
    count = bad = 0
    for name, rels in setups:
        M = load_structure(name)
        pres = RandomizationPresentation(M)
        pool = [M.enumerate(0)] if name == "point" else [M.enumerate(i) for i in range(3)]
        pts = {a: _constant_point(pres, a) for a in pool}
        for _ in range(25):
            phi = random_formula(rng, rels, ["a", "b"], rng.randint(0, 2), budget=5)
            names = phi.ordered_free_vars()
            for vals in itertools.islice(itertools.product(pool, repeat=len(names)), 3):
                env = dict(zip(names, vals))
                got = decide_via_randomization(pres, phi, [pts[env[v]] for v in names]).value
                want = M.decide(phi, env)
                count += 1
                if got != want or (name == "graph3" and want != holds(phi, env, graph_table)):
                    bad += 1
    trips = roundtrip_distances(load_structure("pureset"), 5)
    trip_ok = [d for _, _, d in trips] == [0] * 5
    verdict(8, bad == 0 and count >= 200 and trip_ok, f"{count} decisions, {bad} disagreements; round trip distances {[str(d) for _, _, d in trips]}")


# --------------------------------------------------------------------------
# 9. back-and-forth


@pytest.mark.parametrize(
    "pres1,pres2,flavor",
    [("std", "rot:1/3", "apa"), ("std", "digitperm:2,0,1", "apa"), ("induced:pureset", "induced:pureset@digitperm:1,0", "k")],
)
def test_criterion_9_back_and_forth(pres1, pres2, flavor):
    start = time.perf_counter()
    iso = back_and_forth(load_presentation(pres1), load_presentation(pres2), flavor, steps=8, k=6)
    rows = preservation_table(iso, 4)
    dev = max_deviation(rows)
    elapsed = time.perf_counter() - start
    what = "distances, measures, meets" if flavor == "apa" else "mu[X=Y] and distances"
    verdict(
        9,
        dev <= F(1, 16) and elapsed < 120,
        f"{pres1} vs {pres2}: {what} on 4 points, max deviation {dev} (<= 1/16), {elapsed:.1f}s (< 120s)",
    )


# --------------------------------------------------------------------------
# 10. restricted calculus


def test_criterion_10_restricted():
    problems = []
    corpus = [
        ("1/3", OracleFn(0, lambda p, k: F(1, 3), lipschitz=()), F(1, 8)),
        ("5/7", OracleFn(0, lambda p, k: F(5, 7), lipschitz=()), F(1, 32)),
        ("x^2", OracleFn(1, lambda p, k: p[0] ** 2, lipschitz=[2]), F(1, 8)),
        ("x^2", OracleFn(1, lambda p, k: p[0] ** 2, lipschitz=[2]), F(1, 16)),
        ("max(xy,(1-x)/2)", OracleFn(2, lambda p, k: max(p[0] * p[1], (1 - p[0]) / 2), lipschitz=[1, 1]), F(1, 8)),
        ("max(x^2,1-y)", OracleFn(2, lambda p, k: max(p[0] ** 2, 1 - p[1]), lipschitz=[2, 1]), F(1, 8)),
        ("max(x/2,y/3)", OracleFn(2, lambda p, k: max(p[0] / 2, p[1] / 3), lipschitz=[F(1, 2), F(1, 3)]), F(1, 16)),
    ]
    for label, u, eps in corpus:
        v = approx_restricted(u, eps)
        if not verify_sup_close(u, v, eps):
            problems.append(f"approx {label} at {eps}")
    rng = random.Random(10)
    k = 6
    tol = 2 * 2.0**-k
    mesh = 512
    for seed in range(12):
        u = random_restricted(random.Random(seed), 2, 10)
        g = min_fn(u)
        L = float(lipschitz_modulus(u))
        for _ in range(6):
            r = [rng.randint(0, 32) / 32, rng.randint(0, 32) / 32]
            got = float(g.approx([F(r[0]), F(r[1])], k))
            hi = grid_min(lambda S: restricted_numpy(u, S), r, mesh)
            lo = hi - L * 2 / (2 * mesh)  # the exhaustive grid brackets the true minimum
            if not (lo - tol <= got <= hi + tol):
                problems.append(f"min_fn seed {seed} at {r}: {got} vs [{lo}, {hi}]")
    x, y = Var(0), Var(1)
    axis = [F(i, 32) for i in range(33)]
    for a, b in itertools.product(axis, repeat=2):
        for fn, want in ((Min(x, y), min(a, b)), (Max(x, y), max(a, b)), (TruncAdd(x, y), min(F(1), a + b))):
            if fn(a, b) != want or fn.expand()(a, b) != want:
                problems.append(f"{fn} at {(a, b)}")
                break
    verdict(10, not problems, f"{len(corpus)} approximations verified, 72 min_fn points within 2*2^-{k}, macros exact on 1/32 grid" + (f"; {problems[:3]}" if problems else ""))
