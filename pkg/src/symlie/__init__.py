"""Symmetric Lie-algebra analysis and ancilla-assisted pulse compilation."""

from .errors import BudgetExceeded, SymlieError, Unsynthesizable, ValidationError, VerificationError
from .pauli_core import EXACT, FLOAT, PauliString, PauliSum, bracket, make_generator
from .symmetry import SymmetrySpec, charge_vector, s_k_test
from .lie_closure import LieBasis, close, member
from .compiler import CircuitPlan, compile_target, diagonal_with_ancilla, verify_plan
from .qudit_energy import QuditOperator, QuditSpec, qudit_synthesize

__all__ = [
    "BudgetExceeded", "SymlieError", "Unsynthesizable", "ValidationError", "VerificationError",
    "EXACT", "FLOAT", "PauliString", "PauliSum", "bracket", "make_generator",
    "SymmetrySpec", "charge_vector", "s_k_test",
    "LieBasis", "close", "member",
    "CircuitPlan", "compile_target", "diagonal_with_ancilla", "verify_plan",
    "QuditOperator", "QuditSpec", "qudit_synthesize",
]
__version__ = "0.1.0"
