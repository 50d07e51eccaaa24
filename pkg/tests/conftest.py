import os
import sys

import numpy as np
import pytest
from hypothesis import strategies as st

sys.path.insert(0, os.path.dirname(__file__))

from kikuchi.complex import Complex, Shape  # noqa: E402
from kikuchi.hypergraph import closure, region  # noqa: E402


def random_complex(rng, max_vertices=6, max_card=3, max_generators=4):
    n = int(rng.integers(1, max_vertices + 1))
    gens = [int(rng.integers(1, 2 ** n)) for _ in range(int(rng.integers(1, max_generators + 1)))]
    return Complex(closure(gens, n), Shape(rng.integers(1, max_card + 1, size=n)))


def graph_complex(n, edges, cards=None):
    K = closure([region([i]) for i in range(n)] + [region(e) for e in edges], n)
    return Complex(K, Shape(cards if cards is not None else [2] * n))


@st.composite
def complexes(draw, max_vertices=5, max_card=3):
    n = draw(st.integers(1, max_vertices))
    gens = draw(st.lists(st.integers(1, 2 ** n - 1), min_size=1, max_size=4))
    cards = draw(st.lists(st.integers(1, max_card), min_size=n, max_size=n))
    return Complex(closure(gens, n), Shape(cards))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def horn():
    return Complex(closure([0b0111, 0b1011, 0b1101], 4), Shape([2] * 4))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
