from __future__ import annotations

import itertools
import random
from fractions import Fraction as F

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from borelrand import restricted as R
from borelrand.restricted import (
    Const,
    Half,
    Max,
    Min,
    Neg,
    One,
    OracleFn,
    TruncAdd,
    TruncSub,
    Var,
    Zero,
    approx_restricted,
    eval_batch,
    eval_restricted,
    lipschitz_modulus,
    min_fn,
    verify_sup_close,
)

from oracles import grid_min, restricted_numpy, restricted_value

x, y = Var(0), Var(1)


def random_restricted(rng: random.Random, arity: int, size: int) -> R.RestrictedFn:
    if size <= 1:
        pick = rng.random()
        if pick < 0.7:
            return Var(rng.randrange(arity))
        if pick < 0.8:
            return One()
        if pick < 0.9:
            return Zero()
        return Const(F(rng.randint(0, 8), 8))
    kind = rng.choice(["half", "sub", "sub", "add", "min", "max", "neg"])
    if kind in ("half", "neg"):
        a = random_restricted(rng, arity, size - 1)
        return Half(a) if kind == "half" else Neg(a)
    a = random_restricted(rng, arity, size // 2)
    b = random_restricted(rng, arity, size - size // 2)
    return {"sub": TruncSub, "add": TruncAdd, "min": Min, "max": Max}[kind](a, b)


unit = st.fractions(0, 1, max_denominator=64)


class TestEval:
    def test_examples(self):
        assert eval_restricted(TruncSub(x, y), (F(3, 4), F(1, 4))) == F(1, 2)
        assert eval_restricted(TruncSub(x, y), (F(1, 4), F(3, 4))) == 0
        assert eval_restricted(TruncAdd(Half(One()), Half(Half(One()))), ()) == F(3, 4)

    def test_outside_cube(self):
        with pytest.raises(ValueError):
            eval_restricted(x, (F(3, 2),))

    def test_nondyadic_constant_kept(self):
        c = Const(F(1, 3))
        assert eval_restricted(c, ()) == F(1, 3)
        with pytest.raises(ValueError):
            c.expand()

    @given(st.integers(0, 10_000), st.lists(unit, min_size=3, max_size=3))
    def test_against_recursive_oracle(self, seed, pt):
        v = random_restricted(random.Random(seed), 3, 12)
        got = eval_restricted(v, pt)
        assert got == restricted_value(v, pt)
        assert 0 <= got <= 1

    @given(st.integers(0, 10_000))
    def test_batch_matches_pointwise(self, seed):
        rng = random.Random(seed)
        v = random_restricted(rng, 2, 10)
        pts = [(F(rng.randint(0, 12), 12), F(rng.randint(0, 7), 7)) for _ in range(20)]
        assert eval_batch(v, pts) == [eval_restricted(v, p) for p in pts]

    @given(st.integers(0, 10_000), st.lists(unit, min_size=2, max_size=2))
    def test_expansion_preserves_value(self, seed, pt):
        v = random_restricted(random.Random(seed), 2, 10)
        assert eval_restricted(v.expand(), pt) == eval_restricted(v, pt)


class TestLipschitz:
    def test_examples(self):
        assert lipschitz_modulus(TruncSub(x, y)) == 1
        assert lipschitz_modulus(Half(x)) == F(1, 2)
        assert lipschitz_modulus(TruncAdd(TruncSub(x, y), TruncSub(y, x))) == 2

    def test_abs_bound_is_sound(self):
        v = TruncAdd(TruncSub(x, y), TruncSub(y, x))
        rng = random.Random(0)
        worst = F(0)
        for _ in range(500):
            a = (F(rng.randint(0, 64), 64), F(rng.randint(0, 64), 64))
            b = (F(rng.randint(0, 64), 64), F(rng.randint(0, 64), 64))
            d = abs(a[0] - b[0]) + abs(a[1] - b[1])
            if d:
                worst = max(worst, abs(v(*a) - v(*b)) / d)
        assert worst <= 1 <= lipschitz_modulus(v)

    @given(st.integers(0, 10_000), st.lists(unit, min_size=4, max_size=4))
    def test_structural_bound(self, seed, pts):
        v = random_restricted(random.Random(seed), 2, 14)
        a, b = pts[:2], pts[2:]
        L = lipschitz_modulus(v)
        assert abs(v(*a) - v(*b)) <= L * (abs(a[0] - b[0]) + abs(a[1] - b[1]))


class TestMacros:
    def test_identities_on_dyadic_grid(self):
        axis = [F(i, 32) for i in range(33)]
        for a, b in itertools.product(axis, repeat=2):
            assert Min(x, y)(a, b) == min(a, b)
            assert Max(x, y)(a, b) == max(a, b)
            assert TruncAdd(x, y)(a, b) == min(1, a + b)
            assert Min(x, y).expand()(a, b) == min(a, b)
            assert Max(x, y).expand()(a, b) == max(a, b)
            assert TruncAdd(x, y).expand()(a, b) == min(1, a + b)
            assert Neg(x).expand()(a) == 1 - a

    def test_dyadic_constants_expand(self):
        for num in range(0, 33):
            q = F(num, 32)
            assert eval_restricted(Const(q).expand(), ()) == q


def _float_min_oracle(u: R.RestrictedFn, bound_fns, r: float, mesh: int) -> float:
    bounds = [float(restricted_numpy(b, np.array([[r]]))[0]) for b in bound_fns]
    return grid_min(lambda S: restricted_numpy(u, S), bounds, mesh)


class TestMinFn:
    def test_identity_min_is_zero(self):
        g = min_fn(x)
        for r in (F(0), F(1, 3), F(1)):
            assert abs(g.approx([r], 10)) <= F(1, 1024)

    def test_decreasing_function_unchanged(self):
        g = min_fn(Neg(x))
        for r in (F(0), F(1, 3), F(7, 8)):
            assert abs(g.approx([r], 10) - (1 - r)) <= F(1, 1024)

    def test_paired_bounds(self):
        u = Max(TruncSub(Const(F(1, 3)), x), y)
        bounds = (Var(0), Neg(Var(0)))
        g = min_fn(u, minimized=(0, 1), bounds=bounds, passive={}, arity=1)
        k = 8
        for j in range(0, 65, 4):
            r = F(j, 64)
            want = max(F(1, 3) - r, F(0))
            got = g.approx([r], k)
            assert abs(got - want) <= F(2, 1 << k)
            grid = _float_min_oracle(u, bounds, float(r), 64)
            assert abs(float(got) - grid) <= 2 ** -k + 1 / 64

    @pytest.mark.parametrize("seed", range(8))
    def test_random_against_grid(self, seed):
        rng = random.Random(seed)
        u = random_restricted(rng, 2, 10)
        g = min_fn(u)
        k = 6
        for _ in range(8):
            r = (rng.randint(0, 32) / 32, rng.randint(0, 32) / 32)
            got = float(g.approx([F(r[0]), F(r[1])], k))
            L = float(lipschitz_modulus(u))
            mesh = 512
            grid = grid_min(lambda S: restricted_numpy(u, S), list(r), mesh)
            # the grid min overshoots the true min by at most L * n / (2 mesh)
            assert grid - L / mesh - 2 * 2**-k <= got <= grid + 2 * 2**-k

    def test_order_properties(self):
        u = Max(TruncSub(x, Half(y)), TruncSub(Const(F(5, 8)), TruncAdd(x, y)))
        g = min_fn(u)
        k = 8
        tol = F(2, 1 << k)
        axis = [F(i, 8) for i in range(9)]
        vals = {}
        for r in itertools.product(axis, repeat=2):
            vals[r] = g.approx(list(r), k)
            assert vals[r] <= u(*r) + F(1, 1 << k)
        # min over a larger orthant is smaller: non-increasing in each bound
        for (a, b), v in vals.items():
            if a < 1:
                assert vals[(a + F(1, 8), b)] <= v + tol
            if b < 1:
                assert vals[(a, b + F(1, 8))] <= v + tol
        # idempotence on the sampled grid
        for (a, b), v in vals.items():
            inner = min(vals[(c, d)] for c in axis for d in axis if c <= a and d <= b)
            assert abs(inner - v) <= tol


class TestApproxRestricted:
    def test_restricted_input_returned(self):
        assert approx_restricted(x, F(1, 8)) is x
        assert verify_sup_close(x, x, F(1, 100))

    def test_constant_third(self):
        u = OracleFn(0, lambda p, k: F(1, 3), lipschitz=())
        v = approx_restricted(u, F(1, 8))
        val = eval_restricted(v, ())
        assert abs(val - F(1, 3)) < F(1, 8)
        assert (val.denominator & (val.denominator - 1)) == 0
        assert verify_sup_close(u, v, F(1, 8))

    def test_square(self):
        u = OracleFn(1, lambda p, k: p[0] ** 2, lipschitz=[2])
        v = approx_restricted(u, F(1, 4))
        assert verify_sup_close(u, v, F(1, 4))
        X = np.linspace(0, 1, 2001).reshape(-1, 1)
        assert np.max(np.abs(restricted_numpy(v, X) - X[:, 0] ** 2)) < 0.25

    def test_max_composition(self):
        u = OracleFn(
            2,
            lambda p, k: max(p[0] * p[1], (1 - p[0]) / 2),
            lipschitz=[1, 1],
        )
        v = approx_restricted(u, F(1, 8))
        assert verify_sup_close(u, v, F(1, 8))

    def test_bad_eps(self):
        with pytest.raises(ValueError):
            approx_restricted(x, 0)


class TestVerify:
    def test_identity(self):
        assert verify_sup_close(x, x, F(1, 16))

    def test_zero_far(self):
        assert not verify_sup_close(x, Zero(), F(1, 2))

    def test_mesh_margins(self):
        # v is within eps/8 of u everywhere: the check must accept (completeness at eps/6)
        u = OracleFn(1, lambda p, k: p[0] / 2, lipschitz=[F(1, 2)])
        v = TruncSub(Half(x), Const(F(1, 64)))
        assert verify_sup_close(u, v, F(1, 8))
        # and a gap of 3/4 * eps somewhere must be rejected (soundness)
        w = TruncAdd(Half(x), Const(F(3, 32)))
        assert not verify_sup_close(u, w, F(1, 8))
