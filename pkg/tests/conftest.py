from __future__ import annotations

import sys
from fractions import Fraction as F
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

sys.path.insert(0, str(Path(__file__).parent))

from borelrand.events import Event  # noqa: E402

settings.register_profile(
    "repo",
    deadline=None,
    derandomize=True,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


def pytest_terminal_summary(terminalreporter):
    # criterion lines printed during a captured run are replayed here
    mod = sys.modules.get("test_acceptance")
    if mod and mod.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(mod.VERDICTS, key=lambda v: v[0]):
            terminalreporter.write_line(line)


def dyadic_events(depth: int = 4):
    """Events that are unions of cells [j/2^depth, (j+1)/2^depth)."""
    n = 1 << depth
    return st.sets(st.integers(0, n - 1)).map(
        lambda cells: Event.from_pairs((F(j, n), F(j + 1, n)) for j in cells)
    )


def rational_events(max_den: int = 12, max_pieces: int = 3):
    point = st.integers(1, max_den).flatmap(lambda q: st.integers(0, q).map(lambda p: F(p, q)))
    pair = st.tuples(point, point).filter(lambda t: t[0] != t[1]).map(lambda t: (min(t), max(t)))
    return st.lists(pair, max_size=max_pieces).map(Event.from_pairs)


@pytest.fixture(scope="session")
def bespoke4(tmp_path_factory):
    """A size-4 structure with a binary relation, a unary function and a constant."""
    import json

    data = {
        "size": 4,
        "relations": {"R": [[0, 1], [1, 2], [2, 3], [3, 3], [0, 0]], "P": [[1], [3]]},
        "functions": {"s": [1, 2, 3, 0]},
        "constants": {"c": 2},
    }
    path = tmp_path_factory.mktemp("structs") / "bespoke4.json"
    path.write_text(json.dumps(data))
    return path, data


def simple_rvs(M, elements: int = 3, depth: int = 3):
    """Simple random variables constant on each dyadic cell of the given depth."""
    from borelrand.randvars import SimpleRV

    n = 1 << depth

    def build(labels):
        return SimpleRV.build(
            M, [(M.enumerate(a), Event.of((F(j, n), F(j + 1, n)))) for j, a in enumerate(labels)]
        )

    return st.lists(st.integers(0, elements - 1), min_size=n, max_size=n).map(build)


def random_rv(rng, M, elements: int = 3, pieces: int = 3, den: int = 12):
    """A simple random variable on random rational cut points."""
    from borelrand.randvars import SimpleRV

    cuts = sorted({F(rng.randint(1, den - 1), den) for _ in range(pieces - 1)})
    pts = [F(0), *cuts, F(1)]
    return SimpleRV.build(
        M, [(M.enumerate(rng.randrange(elements)), Event.of((a, b))) for a, b in zip(pts, pts[1:])]
    )
