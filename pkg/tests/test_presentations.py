from __future__ import annotations

import math
import random
from fractions import Fraction as F

import pytest
from hypothesis import given
from hypothesis import strategies as st

from borelrand.events import Event, parse_event
from borelrand.presentations import (
    CEClosedSet,
    ComputablePoint,
    DigitPermutation,
    EventPresentation,
    KSpecial,
    MalformedCode,
    PEv,
    RandomizationPresentation,
    RationalBall,
    Special,
    aware_enumerator,
    constants_from_aware,
    cut_indices,
    decide_via_randomization,
    decode,
    encode,
    enumerate_terms,
    formal_inclusion,
    heap_interval,
    induced_classical_presentation,
    load_presentation,
    majority_element,
    parse_scramble,
    roundtrip_distances,
    tree_code,
    tree_leaves,
)
from borelrand.randvars import SimpleRV, event_map, parse_rv, rv_dist
from borelrand.rformula import compl, join, meet
from borelrand.structures import load_structure, parse_classical

from conftest import random_rv
from oracles import table_from_json, holds

E = parse_event
PURE = load_structure("pureset")
GRAPH = load_structure("graph3")
GRAPH_TABLE = table_from_json({"size": 3, "relations": {"E": [[0, 1], [1, 0]]}})


def constant_point(pres: RandomizationPresentation, a) -> ComputablePoint:
    idx = pres.index_of_rv(SimpleRV.constant(pres.M, a))
    return ComputablePoint(lambda k: KSpecial(idx), f"const {a}")


class TestHeapCodes:
    def test_first_levels(self):
        assert heap_interval(0) == (0, 1)
        assert heap_interval(1) == (0, F(1, 2))
        assert heap_interval(2) == (F(1, 2), 1)
        assert heap_interval(3) == (0, F(1, 4))

    def test_cut_union(self):
        for t in (F(0), F(3, 8), F(1, 2), F(13, 16), F(1)):
            pieces = [Event.of(heap_interval(i)) for i in cut_indices(t)]
            total = Event.empty()
            for p in pieces:
                assert (total & p).is_empty
                total = total | p
            assert total == (Event.of((0, t)) if t else Event.empty())

    def test_cut_rejects_nondyadic(self):
        with pytest.raises(ValueError):
            cut_indices(F(1, 3))

    def test_enumeration_blocks(self):
        assert enumerate_terms(0) == Special(0)
        assert enumerate_terms(1) == compl(Special(0))
        assert enumerate_terms(2) == Special(1)
        assert enumerate_terms(4) == meet(Special(1), Special(0))
        assert enumerate_terms(5) == join(Special(1), Special(0))


class TestCodes:
    def test_singleton_code(self):
        pres = RandomizationPresentation(PURE)
        assert pres.code_rv(encode([0], [0])) == SimpleRV.constant(PURE, 0)

    def test_two_cells(self):
        pres = RandomizationPresentation(PURE)
        rv = pres.code_rv(encode([0, 1], [1, 2]))
        assert rv == parse_rv("{e0: [0,1/2); e1: [1/2,1)}", PURE)

    def test_malformed(self):
        pres = RandomizationPresentation(PURE)
        with pytest.raises(MalformedCode):
            pres.code_rv(encode([0, 1], [1, 1]))

    @given(st.integers(0, 5000))
    def test_encode_decode(self, i):
        els, ivs = decode(i)
        assert encode(els, ivs) == i

    @given(st.integers(0, 3000))
    def test_tree_codes(self, p):
        cells = tree_leaves(p)
        assert sum(b - a for a, b in cells) == 1
        assert all(cells[j][1] == cells[j + 1][0] for j in range(len(cells) - 1))
        assert tree_code(cells) == p

    @given(st.integers(0, 2000))
    def test_special_index_roundtrip(self, n):
        pres = RandomizationPresentation(PURE)
        rv = pres.special_rv(n)
        assert pres.special_rv(pres.index_of_rv(rv)) == rv

    def test_dist_matches_refinement(self):
        # independent distance: refine both functions to the common cut points
        pres = RandomizationPresentation(GRAPH)
        rng = random.Random(5)
        for _ in range(40):
            a, b = rng.randrange(3000), rng.randrange(3000)
            f, g = pres.special_rv(a), pres.special_rv(b)
            cuts = sorted({F(0), F(1)} | {x for rv in (f, g) for _, e in rv.cells for pr in e.pairs() for x in pr})
            want = F(0)
            for lo, hi in zip(cuts, cuts[1:]):
                mid = (lo + hi) / 2
                val = lambda rv: next(el for el, e in rv.cells if any(p <= mid < q for p, q in e.pairs()))
                if val(f) != val(g):
                    want += hi - lo
            assert pres.eval_dist_k(KSpecial(a), KSpecial(b)) == want == rv_dist(GRAPH, f, g)


def _bits(x: F, n: int) -> int:
    return int(x * (1 << n))


class TestScrambles:
    @pytest.mark.parametrize("perm", [[1, 0], [2, 0, 1], [0, 2, 3, 1]])
    def test_digitperm_pointwise(self, perm):
        sigma = DigitPermutation(perm)
        n = len(perm)
        rng = random.Random(len(perm))
        for _ in range(50):
            level = rng.randint(0, n + 2)
            a = rng.randrange(1 << level)
            lo, hi = F(a, 1 << level), F(a + 1, 1 << level)
            img = sigma.image(lo, hi, F(1, 1024))
            assert img.measure() == hi - lo
            # sample points and move their leading digits by hand
            for _ in range(6):
                x = lo + (hi - lo) * F(rng.randrange(64), 64)
                head = _bits(x, n)
                digits = [(head >> (n - 1 - p)) & 1 for p in range(n)]
                moved = 0
                for p in range(n):
                    moved = (moved << 1) | digits[perm[p]]
                y = F(moved, 1 << n) + (x - F(head, 1 << n))
                assert any(p <= y < q for p, q in img.pairs())

    def test_rotation_wraps(self):
        rot = parse_scramble("rot:1/3")
        assert rot.image(F(1, 2), F(1), 0) == Event.of((F(5, 6), 1), (0, F(1, 3)))

    def test_sqrt2_tolerance(self):
        rot = parse_scramble("rot:sqrt2")
        r = math.sqrt(2) - 1
        for k in (4, 8, 12):
            img = rot.image(F(0), F(1, 4), F(1, 1 << k))
            (start, _end), = img.pairs()
            assert abs(float(start) - r) <= 2**-k
            assert img.measure() == F(1, 4)

    def test_bad_descriptor(self):
        for bad in ("digitperm:0,0", "rot:x", "shuffle"):
            with pytest.raises(ValueError):
                parse_scramble(bad)

    @pytest.mark.parametrize("desc", ["std", "rot:1/3", "rot:sqrt2", "digitperm:2,0,1"])
    def test_measure_preserving_denote(self, desc):
        pres = load_presentation(desc)
        for i in range(40):
            t = enumerate_terms(i)
            got = pres.eval_mu(t, 10)
            want = EventPresentation().eval_mu(t, 10)
            if pres.exact:
                assert got == want
            else:
                assert abs(got - want) <= F(2, 1 << 10)


class TestFormalInclusion:
    std = EventPresentation()

    def test_examples(self):
        a = Special(3)  # [0,1/4)
        assert formal_inclusion(RationalBall(a, F(1, 8)), RationalBall(a, F(1, 2)), self.std.eval_dist, 8, True)
        assert not formal_inclusion(RationalBall(a, F(1, 2)), RationalBall(a, F(1, 2)), self.std.eval_dist, 8, True)

    def test_precision_margin(self):
        pres = load_presentation("rot:sqrt2")
        a, b = Special(3), Special(4)  # [0,1/4) and [1/4,1/2): distance 1/2
        inner = RationalBall(a, F(1, 8))
        outer = RationalBall(b, F(1, 2) + F(1, 8) + F(1, 64))
        assert not formal_inclusion(inner, outer, pres.eval_dist, 4, False)
        assert formal_inclusion(inner, outer, pres.eval_dist, 10, False)

    def test_radius_positive(self):
        with pytest.raises(ValueError):
            RationalBall(Special(0), 0)


class TestAwareness:
    pres = RandomizationPresentation(PURE)

    def _ball(self, rv, r):
        return RationalBall(KSpecial(self.pres.index_of_rv(rv)), r)

    def test_mass_threshold(self):
        ce = aware_enumerator(self.pres)
        f = parse_rv("{e0: [0,3/4); e1: [3/4,1)}", PURE)
        assert ce.emits(self._ball(f, F(3, 10)))
        assert not ce.emits(self._ball(f, F(2, 10)))

    def test_constant_always(self):
        ce = aware_enumerator(self.pres)
        f = SimpleRV.constant(PURE, 4)
        for r in (F(1), F(1, 3), F(1, 1000)):
            assert ce.emits(self._ball(f, r))

    def test_recognizable_strategy(self):
        M = load_structure("named:pureset")
        pres = RandomizationPresentation(M)
        ce = aware_enumerator(pres, "recognizable")
        f = parse_rv("{e0: [0,3/4); e1: [3/4,1)}", M)
        ball = RationalBall(KSpecial(pres.index_of_rv(f)), F(3, 10))
        assert ce.emits(ball)
        assert not ce.emits(RationalBall(ball.center, F(2, 10)))

    def test_recognizable_needs_recognizer(self):
        with pytest.raises(ValueError):
            aware_enumerator(self.pres, "recognizable")

    def test_stream_sound(self):
        ce = aware_enumerator(self.pres)
        for ball in ce.take(60):
            rv = self.pres.special_rv(ball.center.index)
            assert max(e.measure() for _, e in rv.cells) > 1 - ball.radius

    def test_depth_sensitive_stream(self):
        # a predicate that only succeeds at depth 3 is still emitted
        ce = CEClosedSet(lambda i: RationalBall(Special(i), 1), lambda b, d: d >= 3 and b.center.index % 2 == 0)
        got = [b.center.index for b in ce.take(4)]
        assert sorted(got) == [0, 2, 4, 6]


class TestConstants:
    def test_pureset_first_constants(self):
        pres = RandomizationPresentation(PURE)
        ic = induced_classical_presentation(pres, 160)
        found = {ic.element(n) for n in range(160)}
        assert set(range(5)) <= found

    def test_sequences_converge(self):
        pres = RandomizationPresentation(PURE)
        pts = constants_from_aware(aware_enumerator(pres), pres, 6)
        for p in pts:
            limit = SimpleRV.constant(PURE, majority_element(pres, p))
            for k in (1, 2, 3):
                assert rv_dist(PURE, pres.special_rv(p.seq(k).index), limit) < F(1, 1 << k)

    def test_equality(self):
        pres = RandomizationPresentation(PURE)
        ic = induced_classical_presentation(pres, 20)
        for i in range(20):
            for j in range(20):
                assert ic.equal(i, j) == (ic.element(i) == ic.element(j))

    def test_roundtrip(self):
        assert [d for _, _, d in roundtrip_distances(PURE, 5)] == [0] * 5
        assert [d for _, _, d in roundtrip_distances(GRAPH, 3)] == [0] * 3


class TestDecide:
    def test_graph_examples(self):
        pres = RandomizationPresentation(GRAPH)
        zero = constant_point(pres, 0)
        assert decide_via_randomization(pres, "(exists y (E x y))", [zero]).value is True
        assert decide_via_randomization(pres, "(not (= x x))", [zero]).value is False

    def test_against_brute_force(self):
        pres = RandomizationPresentation(GRAPH)
        pts = [constant_point(pres, a) for a in range(3)]
        for text in ("(E x y)", "(exists z (and (E x z) (E z y)))", "(forall z (not (E z y)))"):
            phi = parse_classical(text)
            names = phi.ordered_free_vars()
            for a in range(3):
                for b in range(3):
                    vals = dict(zip(names, (a, b)))
                    d = decide_via_randomization(pres, phi, [pts[vals[n]] for n in names])
                    assert d.value == holds(phi, vals, GRAPH_TABLE)

    def test_noisy_points_refine(self):
        # seq(k) is e_a on all but 2^-(k+1) of the space
        pres = RandomizationPresentation(PURE)

        def noisy(a):
            def seq(k):
                w = F(1, 1 << (k + 1))
                rv = SimpleRV.build(PURE, [(a, Event.of((0, 1 - w))), (a + 1, Event.of((1 - w, 1)))])
                return KSpecial(pres.index_of_rv(rv))

            return ComputablePoint(seq)

        d = decide_via_randomization(pres, "(= x y)", [noisy(2), noisy(2)])
        assert d.value is True and d.precision >= 3
        assert decide_via_randomization(pres, "(= x y)", [noisy(2), noisy(3)]).value is False

    def test_arity(self):
        pres = RandomizationPresentation(PURE)
        with pytest.raises(ValueError):
            decide_via_randomization(pres, "(= x y)", [constant_point(pres, 0)])

    def test_pev_measure(self):
        pres = RandomizationPresentation(GRAPH)
        rng = random.Random(11)
        phi = parse_classical("(exists z (and (E x z) (not (= z y))))")
        for _ in range(20):
            f, g = random_rv(rng, GRAPH, den=8), random_rv(rng, GRAPH, den=8)
            fi, gi = pres.index_of_rv(f), pres.index_of_rv(g)
            want = event_map(GRAPH, phi, [f, g]).measure()
            assert pres.eval_mu(PEv(phi, (KSpecial(fi), KSpecial(gi))), 6) == want
