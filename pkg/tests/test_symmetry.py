import cmath
import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings

from symlie import densesim
from symlie.errors import ValidationError
from symlie.lie_closure import klocal_symmetric_basis
from symlie.pauli_core import PauliSum, bracket, is_symmetric, make_generator, support
from symlie.symmetry import (
    SymmetrySpec, character_function, charge_span_test, charge_vector, charge_vector_bruteforce,
    diagonal_table_to_pauli, diagonal_values, dim_gap_bound, full_symmetric_dim, irrep_count,
    s_k_dimension, s_k_test, sector_multiplicities, trace_zero_scan, twirl, xi_functions,
)

from conftest import pauli_sums, random_diagonal

Q = SymmetrySpec.qubits


def test_multiplicities():
    assert sector_multiplicities(Q(2)) == {2: 1, 0: 2, -2: 1}
    assert sector_multiplicities(Q(1)) == {1: 1, -1: 1}
    assert sector_multiplicities(SymmetrySpec.qudits(2, 3)) == {0: 1, 1: 2, 2: 3, 3: 2, 4: 1}


def test_irreps_and_bounds():
    for l in range(6):
        assert irrep_count(Q(5), l) == l + 1
    assert irrep_count(SymmetrySpec.qudits(2, 3)) == 5
    assert dim_gap_bound(5, 2, Q(5)) == 3
    assert dim_gap_bound(4, 4, Q(4)) == 0
    assert dim_gap_bound(3, 2, SymmetrySpec.qudits(3, 3)) == 2


def test_full_symmetric_dim_against_nullspace():
    assert full_symmetric_dim(Q(1)) == 2
    assert full_symmetric_dim(SymmetrySpec.qudits(2, 3)) == 19
    # oracle: commutant of sum Z on the 64-dim operator space
    n = 3
    q = densesim.to_matrix(PauliSum(n, {"ZII": 1, "IZI": 1, "IIZ": 1}))
    eye = np.eye(2 ** n)
    ad = np.kron(q, eye) - np.kron(eye, q.T)
    null = ad.shape[0] - np.linalg.matrix_rank(ad)
    assert full_symmetric_dim(Q(3)) == null == 20


def test_charge_vector_examples():
    assert charge_vector(PauliSum.identity(2)).sectors == {2: 1, 0: 2, -2: 1}
    assert charge_vector(PauliSum(1, {"Z": 1})).sectors == {1: 1, -1: -1}
    assert charge_vector(PauliSum(2, {"ZZ": 1})).sectors == {2: 1, 0: -2, -2: 1}


@settings(max_examples=40, deadline=None)
@given(pauli_sums(4))
def test_charge_vector_matches_enumeration(a):
    cv = charge_vector(a)
    assert cv == charge_vector_bruteforce(a)
    assert math.isclose(float(cv.total()), np.trace(densesim.to_matrix(a)).real, abs_tol=1e-9)


@settings(max_examples=25, deadline=None)
@given(pauli_sums(3), pauli_sums(3))
def test_brackets_with_symmetric_have_zero_charge(a, b):
    b = twirl(b)
    assert all(v == 0 for v in charge_vector(bracket(a, b)).values())


def test_charge_vector_permutation_invariant(rng):
    h = random_diagonal(rng, 4)
    perm = [2, 0, 3, 1]
    moved = PauliSum(4, {"".join(p.word[perm[j]] for j in range(4)): c for p, c in h.items()})
    assert charge_vector(h) == charge_vector(moved)


def test_character_function(rng):
    th = 0.37
    for w in ("ZIZ", "ZZZ", "III"):
        got = character_function(PauliSum(3, {w: 1}), th)
        k = w.count("Z")
        assert cmath.isclose(got, 8 * math.cos(th) ** (3 - k) * (1j * math.sin(th)) ** k, abs_tol=1e-12)
    got = character_function(PauliSum(2, {"ZZ": 1}), th)
    assert math.isclose(got.real, -4 * math.sin(th) ** 2, abs_tol=1e-12)
    assert math.isclose(got.real, 2 * math.cos(2 * th) - 2, abs_tol=1e-12)
    a = random_diagonal(rng, 3)
    cv = charge_vector(a)
    for t in np.linspace(0, 2 * math.pi, 7):
        expect = sum(cmath.exp(1j * q * t) * float(v) for q, v in cv.sectors.items())
        assert cmath.isclose(character_function(a, t), expect, abs_tol=1e-12)


def test_twirl_examples():
    r = make_generator("R", [0, 1], 2)
    assert twirl(r) == r
    assert not twirl(PauliSum(1, {"X": 1}))
    assert twirl(PauliSum(2, {"XX": 1})) == r


def test_twirl_matches_numeric_average():
    a = PauliSum(2, {"XX": 1, "XY": 2, "ZX": 1, "YZ": -1})
    m = densesim.to_matrix(a)
    acc = np.zeros_like(m)
    thetas = np.linspace(0, 2 * math.pi, 16, endpoint=False)
    z = densesim.to_matrix(PauliSum(2, {"ZI": 1, "IZ": 1}))
    for t in thetas:
        u = np.diag(np.exp(1j * t * np.diag(z)))
        acc += u @ m @ u.conj().T
    assert np.allclose(acc / len(thetas), densesim.to_matrix(twirl(a)))


@settings(max_examples=40, deadline=None)
@given(pauli_sums(3), pauli_sums(3))
def test_twirl_properties(a, b):
    t = twirl(a)
    assert is_symmetric(t)
    assert twirl(t) == t
    assert twirl(a + b) == t + twirl(b)
    assert support(t) <= support(a)


def test_twirl_image_dimension():
    assert len(klocal_symmetric_basis(3, 3)) == full_symmetric_dim(Q(3))


def test_s_k_examples():
    zzz = PauliSum(3, {"ZZZ": 1})
    rep = s_k_test(zzz, 2)
    assert not rep.passed and rep.violations == {3: 1}
    assert rep.to_json() == {"pass": False, "violations": {"3": 1.0}}
    assert s_k_test(zzz, 3).passed
    assert s_k_test(PauliSum(4, {"ZZZI": 1, "ZZIZ": -1}), 2).passed
    with pytest.raises(ValidationError):
        s_k_test(make_generator("R", [0, 1], 3), 2)


def test_charge_span_examples():
    gens = klocal_symmetric_basis(3, 2)
    assert charge_span_test(gens[3], gens)
    assert not charge_span_test(PauliSum(3, {"ZZZ": 1}), gens)
    proj = diagonal_table_to_pauli({"000": 1}, 3)  # projector on total charge +3
    assert not charge_span_test(proj, gens)


def test_s_k_agrees_with_charge_span(rng):
    for n in (3, 4, 5):
        for k in range(1, n):
            gens = klocal_symmetric_basis(n, k) if n < 5 or k < 3 else None
            if gens is None:
                continue
            for _ in range(4):
                h = random_diagonal(rng, n)
                assert s_k_test(h, k).passed == charge_span_test(h, gens)


def test_s_k_dimension():
    assert s_k_dimension(4, 2) == 3
    assert s_k_dimension(4, 0) == 1
    assert s_k_dimension(6, 5) == 6


def test_xi_functions_full_rank():
    for n in range(1, 7):
        thetas = np.linspace(0.1, 1.4, n + 1)
        assert np.linalg.matrix_rank(xi_functions(n, thetas)) == n + 1


def test_trace_zeros():
    tz = trace_zero_scan([1, -1], n=3, k=2)
    assert tz.pi_multiples == [Fraction(1, 2), Fraction(3, 2)] and tz.non_universal
    assert not trace_zero_scan([0], n=3, k=1).thetas
    assert not trace_zero_scan([0], n=3, k=1).non_universal
    tz = trace_zero_scan([0, 1, 2])
    assert np.allclose(tz.thetas, [2 * math.pi / 3, 4 * math.pi / 3])
    assert not trace_zero_scan([1, -1], n=3, k=3).non_universal


def test_trace_zeros_float_roots():
    tz = trace_zero_scan([0, 1, 3])
    for t in tz.thetas:
        assert abs(1 + cmath.exp(1j * t) + cmath.exp(3j * t)) < 1e-9


def test_diagonal_tables():
    assert diagonal_table_to_pauli({z: 1 for z in ("00", "01", "10", "11")}, 2) == PauliSum.identity(2)
    assert diagonal_table_to_pauli({"0": 1, "1": -1}, 1) == PauliSum(1, {"Z": 1})
    got = diagonal_table_to_pauli({"11": 1}, 2)
    q = Fraction(1, 4)
    assert got == PauliSum(2, {"II": q, "ZI": -q, "IZ": -q, "ZZ": q})


def test_diagonal_round_trip(rng):
    vals = {i: Fraction(int(rng.integers(-9, 9)), 4) for i in range(16)}
    h = diagonal_table_to_pauli(vals, 4)
    assert diagonal_values(h) == [vals[i] for i in range(16)]


def test_spec_json():
    s = SymmetrySpec.qudits(2, 3)
    assert SymmetrySpec.from_json(s.to_json()) == s
    assert SymmetrySpec.from_json({"qubits": 2}) == Q(2)
    assert SymmetrySpec.from_json({"qudits": {"n": 2, "d": 3}}) == s
