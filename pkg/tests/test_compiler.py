import itertools
import json
import math

import numpy as np
import pytest

from symlie import densesim
from symlie import expr as E
from symlie.compiler import (
    CircuitPlan, Prim, QubitSystem, ancilla_sector_error, chain_hamiltonian, compile_target,
    conjugation_identity_error, diagonal_with_ancilla, expand_to_pulses, star_allowed,
    swap_identity_error, swap_route, synthesize_hamiltonian, target_unitary, verify_plan,
)
from symlie.errors import BudgetExceeded, Unsynthesizable, ValidationError
from symlie.lie_closure import close, klocal_symmetric_basis
from symlie.pauli_core import PauliSum, is_symmetric, make_generator

from conftest import random_diagonal


def zmono(sites, n, c=1):
    return make_generator("Zmono", sites, n) * c


# -- chains -------------------------------------------------------------------------------

def test_two_site_chain():
    ch = chain_hamiltonian((0, 1), 2)
    assert ch.realized == PauliSum(2, {"ZI": 1, "IZ": -1})
    assert ch.sign == -1


def test_three_site_chain_with_ancilla():
    # ancilla first: (Z_a - Z_2) Z_a Z_1 Z_2 = Z_1 (Z_2 - Z_a)
    ch = chain_hamiltonian((2, 0, 1), 3, ancilla=2)
    z1z2 = PauliSum(3, {"ZZI": 1})
    z1za = PauliSum(3, {"ZIZ": 1})
    assert ch.realized in (z1z2 - z1za, z1za - z1z2)


def test_four_site_chain_with_ancilla():
    ch = chain_hamiltonian((3, 0, 1, 2), 4, ancilla=3)
    d = PauliSum(4, {"ZZZI": 1, "ZZIZ": -1})
    assert ch.realized in (d, -d)


def test_chain_signs_depend_only_on_length(rng):
    signs = {}
    for v in range(2, 7):
        for _ in range(10):
            sites = tuple(int(s) for s in rng.permutation(7)[:v])
            ch = chain_hamiltonian(sites, 7)
            assert E.evaluate(ch.expr, QubitSystem(7).op, QubitSystem(7).algebra) == ch.realized
            signs.setdefault(v, set()).add(ch.sign)
    assert all(len(s) == 1 for s in signs.values())
    assert {v: s.pop() for v, s in signs.items()} == {2: -1, 3: 1, 4: -1, 5: 1, 6: -1}


def test_chain_too_short():
    with pytest.raises(ValidationError):
        chain_hamiltonian((0,), 2)


# -- diagonal synthesis ------------------------------------------------------------------

def test_zzz_plan_structure():
    plan = diagonal_with_ancilla(PauliSum(3, {"ZZZ": 1}), -0.7)
    assert plan.report["membership_checked"]
    hs = [s.hamiltonian for s in plan.steps]
    assert hs[0] == PauliSum(4, {"ZZZI": 1, "ZZIZ": -1})
    assert hs[1] == PauliSum(4, {"ZZII": 1, "ZIIZ": -1})
    assert verify_plan(plan, target_unitary(PauliSum(3, {"ZZZ": 1}), -0.7), 1e-12).passed


def test_single_z_plan():
    plan = diagonal_with_ancilla(PauliSum(1, {"Z": 1}), 0.5)
    assert [s.hamiltonian for s in plan.steps] == [PauliSum(2, {"ZI": 1, "IZ": -1}), PauliSum(2, {"IZ": 1})]
    assert verify_plan(plan, target_unitary(PauliSum(1, {"Z": 1}), 0.5), 1e-12).passed


def test_zero_plan_is_empty():
    assert diagonal_with_ancilla(PauliSum.zero(3)).steps == []


def test_non_diagonal_rejected():
    with pytest.raises(ValidationError):
        diagonal_with_ancilla(make_generator("R", [0, 1], 2))


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_random_diagonal_plans_exact(rng, n):
    for _ in range(3):
        h = random_diagonal(rng, n)
        t = float(rng.uniform(-2, 2))
        plan = diagonal_with_ancilla(h, t)
        rep = verify_plan(plan, target_unitary(h, t), 1e-10)
        assert rep.passed, rep
        assert all(is_symmetric(s.hamiltonian) for s in plan.steps)


# -- synthesis from a basis --------------------------------------------------------------

def test_synthesis_examples():
    r, t = make_generator("R", [0, 1], 2), make_generator("T", [0, 1], 2)
    basis = close([r, t])
    plan = synthesize_hamiltonian(r, basis, 0.4)
    assert len(plan.steps) == 1 and plan.steps[0].prim == Prim("R", (0, 1))
    h = PauliSum(2, {"ZI": 1, "IZ": -1})
    plan = synthesize_hamiltonian(h, basis, 0.3)
    assert verify_plan(plan, target_unitary(h, 0.3), 1e-12).passed
    with pytest.raises(Unsynthesizable) as err:
        synthesize_hamiltonian(PauliSum(3, {"ZZZ": 1}), close(klocal_symmetric_basis(3, 2)))
    assert err.value.residual > 0


@pytest.mark.parametrize("scheme", ["trotter2", "groupcomm"])
def test_bracket_expansion_meets_epsilon(scheme):
    basis = close([make_generator("R", [0, 1], 2), make_generator("T", [0, 1], 2)])
    h = PauliSum(2, {"ZI": 1, "IZ": -1})
    plan = synthesize_hamiltonian(h, basis, 0.3)
    out = expand_to_pulses(plan, 1e-2, scheme)
    err = densesim.distance(densesim.run_plan(out).matrix, target_unitary(h, 0.3))
    assert err <= 1e-2
    assert out.report["measured_error"] <= 1e-2
    assert all(s.prim.gen in ("R", "T") for s in out.steps)


def test_primitive_plan_passes_through():
    plan = diagonal_with_ancilla(PauliSum(1, {"Z": 1}), 0.5)
    pulses = expand_to_pulses(plan)
    again = expand_to_pulses(pulses)
    assert [(s.prim, s.duration) for s in again.steps] == [(s.prim, s.duration) for s in pulses.steps]


def test_groupcomm_budget_error():
    basis = close([make_generator("R", [0, 1], 2), make_generator("T", [0, 1], 2)])
    plan = synthesize_hamiltonian(PauliSum(2, {"ZI": 1, "IZ": -1}), basis, 0.3)
    with pytest.raises(BudgetExceeded) as err:
        expand_to_pulses(plan, 1e-8, "groupcomm", max_pulses=100)
    assert err.value.achievable is not None


def test_zzz_end_to_end(rng):
    res = compile_target(PauliSum(3, {"ZZZ": 1}), -0.7, 1e-2)
    assert res.hamiltonian_check.distance <= 1e-10
    assert res.pulse_check.distance <= 1e-2 and res.pulse_check.leakage <= 1e-2
    plan = res.pulse_plan
    assert all(s.prim.gen in ("R", "Za") for s in plan.steps)
    # product inputs leave the ancilla in |0> up to eps^2
    u = densesim.run_plan(plan).matrix
    for _ in range(5):
        psi = rng.normal(size=8) + 1j * rng.normal(size=8)
        psi /= np.linalg.norm(psi)
        out = (u @ np.kron(psi, [1, 0])).reshape(8, 2)
        assert np.linalg.norm(out[:, 0]) ** 2 >= 1 - 1e-4


# -- geometry ----------------------------------------------------------------------------

def test_identities():
    assert swap_identity_error() <= 1e-12
    assert conjugation_identity_error(4, 0, 3, 0.9) <= 1e-12
    psi = np.ones(8) / math.sqrt(8)
    assert ancilla_sector_error(psi, 0.4) <= 1e-12


@pytest.mark.parametrize("geometry", ["none", "chain-star", "chain-zz"])
def test_long_range_zz_routed(geometry):
    h = zmono([0, 3], 4)
    res = compile_target(h, 0.6, 1e-2, geometry)
    assert res.pulse_check.passed
    anc = 4
    for s in res.pulse_plan.steps:
        p = s.prim
        if geometry == "chain-star":
            assert star_allowed(p, anc)
        elif geometry == "chain-zz" and len(p.sites) == 2:
            line = [anc, 0, 1, 2, 3]
            assert abs(line.index(p.sites[0]) - line.index(p.sites[1])) == 1


def test_nearest_neighbour_plan_unchanged():
    sysm = QubitSystem(3, (3,))
    from symlie.compiler import Step
    prims = [(Prim("R", (0, 3)), 0.2), (Prim("R", (0, 1)), -0.4), (Prim("Za", (3,)), 0.1)]
    steps = [Step(sysm.op(p), d, p) for p, d in prims]
    plan = CircuitPlan(3, [3], "pulse", steps, 1e-2)
    for geometry in ("chain-zz", "chain-star", "none"):
        routed = swap_route(plan, geometry)
        assert [(s.prim, s.duration) for s in routed.steps] == [(s.prim, s.duration) for s in steps]


def test_unknown_geometry():
    with pytest.raises(ValidationError):
        compile_target(PauliSum(2, {"ZZ": 1}), 1.0, 1e-2, "ring")


def test_nondiagonal_symmetric_target_compiles():
    h = PauliSum(3, {"XXI": 0.5, "YYI": 0.5, "IXX": 0.3, "IYY": 0.3, "ZZZ": 0.4, "ZII": 0.1})
    for geometry in ("none", "chain-star"):
        res = compile_target(h, 0.8, 1e-2, geometry)
        assert res.hamiltonian_check.distance <= 1e-10
        assert res.pulse_check.distance <= 1e-2


def test_asymmetric_target_rejected():
    with pytest.raises(ValidationError):
        compile_target(PauliSum(2, {"XI": 1.0}))


def test_plan_json_round_trip():
    res = compile_target(PauliSum(3, {"ZZZ": 1}), -0.7, 1e-2)
    data = json.loads(json.dumps(res.to_json()))
    assert data["level"] == "pulse" and data["ancilla"] == [3]
    assert {"gen", "sites", "duration"} <= set(data["steps"][0])
    back = CircuitPlan.from_json(data)
    rep = verify_plan(back, target_unitary(PauliSum(3, {"ZZZ": 1}), -0.7), 1e-2)
    assert rep.passed
