from fractions import Fraction

import numpy as np
import pytest
from hypothesis import strategies as st

from symlie.pauli_core import PauliSum


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pauli_sums(n: int, max_terms: int = 5, letters: str = "IXYZ"):
    word = st.text(alphabet=letters, min_size=n, max_size=n)
    coeff = st.fractions(min_value=-3, max_value=3, max_denominator=8)
    return st.dictionaries(word, coeff, max_size=max_terms).map(lambda t: PauliSum(n, t))


def random_diagonal(rng, n: int, terms: int = 6, mode: str = "exact") -> PauliSum:
    out = {}
    for _ in range(terms):
        bits = rng.integers(0, 2, n)
        w = "".join("Z" if b else "I" for b in bits)
        out[w] = out.get(w, 0) + Fraction(int(rng.integers(-4, 5)), int(rng.integers(1, 4)))
    h = PauliSum(n, out)
    return h if mode == "exact" else h.to_float()
