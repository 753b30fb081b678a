from __future__ import annotations

import itertools
import random
from fractions import Fraction as F

import pytest

from borelrand.sexpr import ParseError
from borelrand.structures import (
    Exists,
    FiniteStructure,
    Not,
    Signature,
    StructureError,
    decide,
    enumerate_elements,
    isolating_formulas,
    load_structure,
    parse_classical,
    recognizer,
)

from oracles import dlo_table, holds, pureset_table, random_formula, table_from_json


@pytest.fixture(scope="module")
def graph3():
    return load_structure("graph3")


class TestParse:
    def test_free_variable(self):
        phi = parse_classical("(exists y (< x y))")
        assert isinstance(phi, Exists)
        assert phi.free_vars() == {"x"}

    def test_contradiction_shape(self):
        phi = parse_classical("(and (= x y) (not (= x y)))")
        assert phi.ordered_free_vars() == ["x", "y"]
        M = load_structure("pureset")
        assert not any(M.decide(phi, (a, b)) for a in range(3) for b in range(3))

    def test_arity_error(self):
        with pytest.raises(ParseError):
            parse_classical("(R x)", Signature(relations={"R": 2}))

    def test_unknown_symbol(self):
        with pytest.raises(ParseError):
            parse_classical("(S x)", Signature(relations={"R": 2}))

    def test_roundtrip_text(self):
        text = "(forall z (implies (E x z) (exists w (and (E z w) (not (= w x))))))"
        assert str(parse_classical(text)) == text


class TestDecide:
    def test_dlo_density(self):
        M = load_structure("dlo")
        phi = parse_classical("(exists y (and (< a y) (< y b)))")
        assert decide(M, phi, (F(0), F(1)))

    def test_pureset_infinite(self):
        M = load_structure("pureset")
        assert decide(M, parse_classical("(exists x (not (= x a)))"), (0,))

    def test_graph_isolated_vertex(self, graph3):
        # brute force over the 3-element universe: vertex 2 has no neighbour
        phi = parse_classical("(exists y (E x y))")
        assert not decide(graph3, phi, (2,))
        assert decide(graph3, phi, (0,))

    def test_qf_only_refuses(self):
        M = load_structure("pureset")
        M.is_decidable = False
        with pytest.raises(StructureError):
            M.decide(parse_classical("(exists y (= x y))"), (0,))
        assert M.qf_decide(parse_classical("(= x y)"), (0, 0))

    def test_arity_mismatch(self, graph3):
        with pytest.raises(StructureError):
            graph3.decide(parse_classical("(E x y)"), (0,))


class TestEnumerate:
    def test_pureset(self):
        M = load_structure("pureset")
        assert [enumerate_elements(M, i) for i in range(4)] == [0, 1, 2, 3]
        assert M.element_name(3) == "e3"

    def test_dlo_bijection(self):
        M = load_structure("dlo")
        seen = [M.enumerate(i) for i in range(200)]
        assert len(set(seen)) == 200
        assert all(M.index_of(q) == i for i, q in enumerate(seen))
        for q in (F(0), F(1, 2), F(-3, 4), F(5)):
            assert q in [M.enumerate(i) for i in range(M.index_of(q) + 1)]

    def test_finite_wraparound(self, graph3):
        assert [graph3.enumerate(i) for i in range(7)] == [0, 1, 2, 0, 1, 2, 0]


class TestIsolatingFormulas:
    def test_counts(self):
        assert len(isolating_formulas(load_structure("pureset"), 1)) == 2
        assert len(isolating_formulas(load_structure("dlo"), 1)) == 3
        assert len(isolating_formulas(load_structure("pureset"), 0)) == 1

    def test_not_categorical(self):
        M = load_structure("named:pureset")
        with pytest.raises(StructureError):
            isolating_formulas(M, 1)

    @pytest.mark.parametrize("name,n", [("pureset", 1), ("pureset", 2), ("dlo", 1), ("dlo", 2), ("graph3", 1), ("point", 2)])
    def test_partition_of_tuples(self, name, n):
        M = load_structure(name)
        thetas = isolating_formulas(M, n)
        pool = [M.enumerate(i) for i in range(6)]
        for tup in itertools.product(pool, repeat=n + 1):
            hits = [i for i, th in enumerate(thetas) if M.decide(th, tup)]
            assert len(hits) == 1, (tup, hits)


class TestRecognizer:
    def test_point(self):
        M = load_structure("point")
        phi = recognizer(M, 0)
        assert str(phi) == "(= x x)"

    def test_named_constants(self):
        M = load_structure("named:pureset")
        phi = recognizer(M, 4)
        assert str(phi) == "(= x c4)"
        assert [b for b in range(8) if M.decide(phi, (b,))] == [4]

    def test_pureset_refused(self):
        with pytest.raises(StructureError):
            recognizer(load_structure("pureset"), 0)

    def test_rigid_finite(self):
        M = FiniteStructure(3, {"<": [[0, 1], [0, 2], [1, 2]]})
        for a in range(3):
            phi = recognizer(M, a)
            assert [b for b in range(3) if M.decide(phi, (b,))] == [a]

    def test_graph_not_recognizable(self, graph3):
        with pytest.raises(StructureError):
            recognizer(graph3, 0)


def _pool(seed, rels, free, depth, count, **kw):
    rng = random.Random(seed)
    return [random_formula(rng, rels, free, rng.randint(0, depth), budget=6, **kw) for _ in range(count)]


class TestAgainstBruteForce:
    def test_graph3_depth3(self, graph3):
        table = table_from_json({"size": 3, "relations": {"E": [[0, 1], [1, 0]]}})
        for phi in _pool(1, {"E": 2}, ["a", "b"], 3, 150):
            names = phi.ordered_free_vars()
            for vals in itertools.product(range(3), repeat=len(names)):
                env = dict(zip(names, vals))
                assert graph3.decide(phi, env) == holds(phi, env, table), (str(phi), env)

    def test_bespoke(self, bespoke4):
        path, data = bespoke4
        M = load_structure(f"finite:{path}")
        table = table_from_json(data)
        for phi in _pool(2, {"R": 2, "P": 1}, ["a"], 3, 150, funcs={"s": 1}, consts=["c"]):
            names = phi.ordered_free_vars()
            for vals in itertools.product(range(4), repeat=len(names)):
                env = dict(zip(names, vals))
                assert M.decide(phi, env) == holds(phi, env, table), (str(phi), env)

    def test_pureset(self):
        M = load_structure("pureset")
        for phi in _pool(3, {}, ["a", "b"], 3, 150):
            names = phi.ordered_free_vars()
            for vals in itertools.product(range(3), repeat=len(names)):
                env = dict(zip(names, vals))
                assert M.decide(phi, env) == holds(phi, env, pureset_table(vals, phi.depth())), str(phi)

    def test_dlo(self):
        M = load_structure("dlo")
        params = [F(0), F(1, 2), F(-2)]
        for phi in _pool(4, {"<": 2}, ["a", "b"], 2, 120):
            names = phi.ordered_free_vars()
            for vals in itertools.product(params, repeat=len(names)):
                env = dict(zip(names, vals))
                assert M.decide(phi, env) == holds(phi, env, dlo_table(vals, phi.depth())), str(phi)

    def test_dlo_oracle_hand_checked(self):
        cases = [
            ("(forall q1 (exists q2 (< q2 q1)))", {}, True),
            ("(exists q1 (forall q2 (not (< q2 q1))))", {}, False),
            ("(exists q1 (and (< a q1) (< q1 b)))", {"a": F(0), "b": F(1)}, True),
            ("(exists q1 (and (< a q1) (< q1 b)))", {"a": F(1), "b": F(0)}, False),
            ("(forall q1 (or (< q1 a) (< a q1) (= q1 a)))", {"a": F(3)}, True),
        ]
        for text, env, want in cases:
            assert holds(parse_classical(text), env, dlo_table()) == want, text

    def test_renaming_and_double_negation(self, graph3):
        for phi in _pool(5, {"E": 2}, ["a"], 2, 60):
            renamed = phi.rename({"a": "zz"})
            for v in range(3):
                assert graph3.decide(phi, {"a": v}) == graph3.decide(Not(Not(phi)), {"a": v})
                if "a" in phi.free_vars():
                    assert graph3.decide(phi, {"a": v}) == graph3.decide(renamed, {"zz": v})
