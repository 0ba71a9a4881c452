from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings

from symlie import densesim
from symlie.errors import ValidationError
from symlie.pauli_core import (
    PauliString, PauliSum, bracket, diagonal_part, hs_inner, is_symmetric, make_generator,
    mul_pauli, support,
)
from symlie.symmetry import twirl

from conftest import pauli_sums


def ps(word):
    return PauliString.from_word(word)


def test_single_qubit_products():
    assert mul_pauli(ps("X"), ps("Y")) == (1j, ps("Z"))
    assert mul_pauli(ps("III"), ps("XYZ")) == (1, ps("XYZ"))


def test_two_site_product_matches_dense():
    phase, out = mul_pauli(ps("XX"), ps("YY"))
    assert (phase, out) == (-1, ps("ZZ"))
    dense = densesim.pauli_matrix("XX") @ densesim.pauli_matrix("YY")
    assert np.allclose(dense, phase * densesim.pauli_matrix(out.word))


def test_product_length_mismatch():
    with pytest.raises(ValidationError):
        mul_pauli(ps("X"), ps("XY"))


def test_bracket_examples():
    z1 = make_generator("Zlocal", [0], 2)
    r = make_generator("R", [0, 1], 2)
    assert bracket(z1, r) == make_generator("T", [0, 1], 2) * 2
    assert not bracket(r, r)
    # i[R_{a1}, T_{1a}] = Z_1 - Z_a with a = site 0, 1 = site 1
    got = bracket(make_generator("R", [0, 1], 2), make_generator("T", [1, 0], 2))
    assert got == PauliSum(2, {"IZ": 1, "ZI": -1})


def test_bracket_mode_mismatch():
    a = PauliSum(1, {"Z": 1})
    with pytest.raises(ValidationError):
        bracket(a, a.to_float())


def test_inner_products():
    z1, z2 = PauliSum(2, {"ZI": 1}), PauliSum(2, {"IZ": 1})
    assert hs_inner(z1, z1) == 1
    assert hs_inner(z1, z2) == 0
    assert hs_inner(make_generator("R", [0, 1], 2), PauliSum(2, {"XX": 1})) == Fraction(1, 2)


def test_support_and_diagonal_part():
    assert support(PauliSum(4, {"IZIZ": 1})) == {1, 3}
    assert support(PauliSum.zero(3)) == frozenset()
    assert support(make_generator("R", [0, 1], 5) + make_generator("Zlocal", [3], 5)) == {0, 1, 3}
    assert diagonal_part(PauliSum(2, {"ZZ": 1, "XX": 1})) == PauliSum(2, {"ZZ": 1})
    assert not diagonal_part(make_generator("R", [0, 1], 2))


def test_generators():
    assert make_generator("R", [0, 1], 3) == PauliSum(3, {"XXI": Fraction(1, 2), "YYI": Fraction(1, 2)})
    assert make_generator("T", [0, 2], 3) == PauliSum(3, {"XIY": Fraction(1, 2), "YIX": Fraction(-1, 2)})
    assert make_generator("Zmono", [0, 1, 2], 4) == PauliSum(4, {"ZZZI": 1})
    with pytest.raises(ValidationError):
        make_generator("R", [1, 1], 3)


def test_t_generator_from_dense_commutator():
    z, r = densesim.to_matrix(make_generator("Zlocal", [0], 2)), densesim.to_matrix(make_generator("R", [0, 1], 2))
    assert np.allclose(0.5j * (z @ r - r @ z), densesim.to_matrix(make_generator("T", [0, 1], 2)))


def test_symmetry_checks():
    assert is_symmetric(make_generator("R", [0, 1], 2))
    assert not is_symmetric(PauliSum(1, {"X": 1}))
    for w in ("ZIZ", "ZZZ", "IZI"):
        assert is_symmetric(PauliSum(3, {w: 1}))


@settings(max_examples=40, deadline=None)
@given(pauli_sums(3), pauli_sums(3))
def test_antisymmetry(a, b):
    assert bracket(a, b) == -bracket(b, a)


@settings(max_examples=30, deadline=None)
@given(pauli_sums(3, 3), pauli_sums(3, 3), pauli_sums(3, 3))
def test_jacobi(a, b, c):
    # the Hermitian bracket i[.,.] satisfies the Jacobi identity with a plus sign
    total = bracket(a, bracket(b, c)) + bracket(b, bracket(c, a)) + bracket(c, bracket(a, b))
    assert not total


@settings(max_examples=30, deadline=None)
@given(pauli_sums(4), pauli_sums(4))
def test_bracket_matches_dense_commutator(a, b):
    ma, mb = densesim.to_matrix(a), densesim.to_matrix(b)
    assert np.allclose(densesim.to_matrix(bracket(a, b)), 1j * (ma @ mb - mb @ ma), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(pauli_sums(3), pauli_sums(3))
def test_inner_symmetric_positive(a, b):
    assert hs_inner(a, b) == hs_inner(b, a)
    if a:
        assert hs_inner(a, a) > 0


@settings(max_examples=40, deadline=None)
@given(pauli_sums(3))
def test_symmetric_iff_twirl_keeps_everything(a):
    assert is_symmetric(a) == (twirl(a) == a)


@settings(max_examples=30, deadline=None)
@given(pauli_sums(3))
def test_diagonal_part_idempotent(a):
    assert diagonal_part(diagonal_part(a)) == diagonal_part(a)


def test_json_round_trip():
    a = PauliSum(4, {"ZZIZ": Fraction(-1, 2), "XXII": 3})
    assert PauliSum.from_json(a.to_json()) == a
    f = a.to_float()
    assert PauliSum.from_json(f.to_json()) == f
