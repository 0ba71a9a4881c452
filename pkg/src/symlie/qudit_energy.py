"""Energy-conserving control of equal-gap qudits with one or two ancillary qubits.

Site ordering is systems ``0..n-1`` followed by the ancillas; level ``r`` of a
system carries energy ``r * gap`` and the ancilla's ``|1>`` carries ``gap``.
Operators are scipy sparse matrices over the full composite space.

Synthesis of ``exp(-i H t)`` (:func:`qudit_synthesize`):

* diagonal unitaries are lifted to commuting chain operators whose action on
  the ancilla ``|0>`` sector is a basis of all diagonals (see
  :func:`lift_diagonal`);
* the rest is a product of two-level (Givens) rotations inside each energy
  sector.  A rotation between neighbouring states ``p, q`` is
  ``exp(-i R b/2) U exp(i R b/2) U^dagger`` with ``U = I - 2|p><p|`` diagonal;
  distant states are joined through pi/2 rotations along a path.
"""

from __future__ import annotations

import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import densesim
from . import expr as E
from ._linalg import inverse, rank
from .compiler import (
    DEFAULT_MAX_PULSES,
    BlockRouter,
    CircuitPlan,
    Prim,
    Step,
    _Expander,
    _expand_step,
    _inverse,
    _merge,
    chain_tree,
    diagonal_with_ancilla,
    verify_plan,
)
from .errors import BudgetExceeded, ValidationError, VerificationError
from .pauli_core import FLOAT, make_generator
from .symmetry import SymmetrySpec, diagonal_table_to_pauli, sector_multiplicities

MAX_DIM = 4096
TOL = 1e-12


@dataclass(frozen=True)
class QuditSpec:
    n: int
    d: int
    gap: float = 1.0
    ancillas: int = 1

    def __post_init__(self):
        if self.d < 2 or self.n < 1:
            raise ValidationError("need d >= 2 and n >= 1")
        if not 0 <= self.ancillas <= 2:
            raise ValidationError("ancilla count must be 0, 1 or 2")

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.d,) * self.n + (2,) * self.ancillas

    @property
    def dim(self) -> int:
        return self.d ** self.n * 2 ** self.ancillas

    @property
    def system_dim(self) -> int:
        return self.d ** self.n

    @property
    def ancilla_sites(self) -> tuple[int, ...]:
        return tuple(range(self.n, self.n + self.ancillas))

    def with_ancillas(self, k: int) -> "QuditSpec":
        return QuditSpec(self.n, self.d, self.gap, k)

    def symmetry(self) -> SymmetrySpec:
        return SymmetrySpec.qudits(self.n, self.d)

    def to_json(self) -> dict:
        return {"n": self.n, "d": self.d, "gap": self.gap, "ancillas": self.ancillas}

    @classmethod
    def from_json(cls, data: Mapping) -> "QuditSpec":
        try:
            return cls(int(data["n"]), int(data["d"]), float(data.get("gap", 1.0)),
                       int(data.get("ancillas", 1)))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"bad QuditSpec JSON: {exc}") from exc


@dataclass
class QuditOperator:
    matrix: sp.csr_matrix
    dims: tuple[int, ...]
    hermitian: bool = True

    def __post_init__(self):
        self.matrix = sp.csr_matrix(self.matrix, dtype=complex)
        self.dims = tuple(self.dims)
        if int(np.prod(self.dims)) != self.matrix.shape[0]:
            raise ValidationError("dims do not match the matrix size")
        herm = _is_zero(self.matrix - self.matrix.getH())
        if self.hermitian and not herm:
            raise ValidationError("operator flagged Hermitian is not Hermitian")
        self.hermitian = herm

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()

    def to_json(self) -> dict:
        m = self.matrix.tocoo()
        order = np.lexsort((m.col, m.row))
        entries = [[int(m.row[k]), int(m.col[k]), float(m.data[k].real), float(m.data[k].imag)]
                   for k in order if m.data[k] != 0]
        return {"dims": list(self.dims), "entries": entries}

    @classmethod
    def from_json(cls, data: Mapping) -> "QuditOperator":
        try:
            dims = tuple(int(x) for x in data["dims"])
            dim = int(np.prod(dims))
            rows, cols, vals = [], [], []
            for i, j, re, im in data["entries"]:
                rows.append(int(i))
                cols.append(int(j))
                vals.append(complex(re, im))
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"bad operator JSON: {exc}") from exc
        m = sp.csr_matrix((vals, (rows, cols)), shape=(dim, dim), dtype=complex)
        return cls(m, dims, hermitian=False)


def _is_zero(m, tol: float = TOL) -> bool:
    if sp.issparse(m):
        m = m.tocsr()
        m.eliminate_zeros()
        return m.nnz == 0 or float(abs(m).max()) <= tol
    return float(np.abs(m).max(initial=0.0)) <= tol


def _ketbra(d: int, i: int, j: int) -> sp.csr_matrix:
    return sp.csr_matrix(([1.0], ([i], [j])), shape=(d, d), dtype=complex)


def _embed(dims: Sequence[int], factors: Mapping[int, Any]) -> sp.csr_matrix:
    out = sp.identity(1, dtype=complex, format="csr")
    for k, dk in enumerate(dims):
        f = factors.get(k)
        m = sp.csr_matrix(f, dtype=complex) if f is not None else sp.identity(dk, dtype=complex, format="csr")
        out = sp.kron(out, m, format="csr")
    return out


def _check_level(spec: QuditSpec, l: int) -> None:
    if not 1 <= l <= spec.d - 1:
        raise ValidationError(f"level {l} outside 1..{spec.d - 1}")


def _check_site(spec: QuditSpec, j: int, ancilla: bool = False) -> None:
    hi = spec.n + spec.ancillas if ancilla else spec.n
    if not 0 <= j < hi:
        raise ValidationError(f"site {j} out of range")


def _interaction_matrix(spec: QuditSpec, kind: str, idx: tuple, lv: tuple) -> sp.csr_matrix:
    d, n, dims = spec.d, spec.n, spec.dims
    if kind == "R":
        if len(idx) != 2 or idx[0] == idx[1]:
            raise ValidationError("R needs two distinct sites")
        for j in idx:
            _check_site(spec, j, ancilla=True)
        x, y = idx
        if x >= n and y >= n:
            raise ValidationError("R between two ancillas is not an interaction of this model")
        if x >= n or y >= n:
            j, a = (x, y) if y >= n else (y, x)
            (l,) = lv or (1,)
            _check_level(spec, l)
            up = _embed(dims, {j: _ketbra(d, l - 1, l), a: _ketbra(2, 1, 0)})
        else:
            l, l2 = lv or (1, 1)
            _check_level(spec, l)
            _check_level(spec, l2)
            up = _embed(dims, {x: _ketbra(d, l - 1, l), y: _ketbra(d, l2, l2 - 1)})
        return (up + up.getH()).tocsr()
    if kind == "T":
        # T_{a,j} = i/2 [Z_a, R_{a,j}]
        j, a = idx
        r = _interaction_matrix(spec, "R", (j, a), lv)
        z = _interaction_matrix(spec, "Za", (a,), ())
        return (0.5j * (z @ r - r @ z)).tocsr()
    if kind == "Z":
        (j,) = idx
        if j >= n:
            return _interaction_matrix(spec, "Za", idx, ())
        _check_site(spec, j)
        (l,) = lv or (1,)
        _check_level(spec, l)
        return _embed(dims, {j: _ketbra(d, l - 1, l - 1) - _ketbra(d, l, l)})
    if kind == "Za":
        (a,) = idx
        if not n <= a < n + spec.ancillas:
            raise ValidationError(f"site {a} is not an ancilla")
        return _embed(dims, {a: sp.csr_matrix(np.diag([1.0, -1.0]))})
    if kind == "P":
        (j,) = idx
        _check_site(spec, j)
        (l,) = lv
        if not 0 <= l < d:
            raise ValidationError(f"level {l} outside 0..{d - 1}")
        return _embed(dims, {j: _ketbra(d, l, l)})
    raise ValidationError(f"unknown interaction kind {kind!r}")


def build_interaction(kind: str, indices: Sequence[int], levels: Sequence[int] = (),
                      spec: QuditSpec | None = None) -> QuditOperator:
    """``R`` (system-ancilla ``R^{(l)}_{j,a}`` or system-system ``R^{(l,l')}_{j,j'}``),
    ``T`` (``i/2 [Z_a, R^{(l)}_{a,j}]``), ``Z`` (``|l-1><l-1| - |l><l|`` on site j),
    ``Za`` (Pauli Z on an ancilla) or ``P`` (``|l><l|`` on site j).
    """
    if spec is None:
        raise ValidationError("a QuditSpec is required")
    m = _interaction_matrix(spec, kind, tuple(int(i) for i in indices), tuple(int(l) for l in levels))
    return QuditOperator(m, spec.dims)


def intrinsic_hamiltonian(spec: QuditSpec, with_ancillas: bool = False) -> sp.csr_matrix:
    """``gap * (sum_j sum_r r |r><r|_j)`` (plus ``gap |1><1|`` per ancilla)."""
    levels = np.arange(spec.d, dtype=float)
    dims = spec.dims if with_ancillas else (spec.d,) * spec.n
    diag = np.zeros(int(np.prod(dims)))
    for k, dk in enumerate(dims):
        local = levels if k < spec.n else np.array([0.0, 1.0])
        shape = [1] * len(dims)
        shape[k] = dk
        diag = diag + np.broadcast_to(local.reshape(shape), dims).ravel()
    return sp.diags(spec.gap * diag, format="csr", dtype=complex)


def total_hamiltonian(spec: QuditSpec) -> sp.csr_matrix:
    return intrinsic_hamiltonian(spec, with_ancillas=True)


def _as_matrix(op) -> sp.csr_matrix:
    if isinstance(op, QuditOperator):
        return op.matrix
    if sp.issparse(op):
        return sp.csr_matrix(op, dtype=complex)
    return sp.csr_matrix(np.asarray(op, dtype=complex))


def check_energy_conserving(op, spec: QuditSpec) -> bool:
    """True iff ``op`` commutes with the intrinsic Hamiltonian of matching size.

    Accepts operators on the systems alone or on systems plus ancillas.
    """
    m = _as_matrix(op)
    if m.shape[0] == spec.dim:
        h = total_hamiltonian(spec)
    elif m.shape[0] == spec.system_dim:
        h = intrinsic_hamiltonian(spec)
    else:
        raise ValidationError(f"operator size {m.shape[0]} matches neither {spec.dim} nor {spec.system_dim}")
    scale = max(1.0, float(abs(m).max()) if m.nnz else 1.0)
    return _is_zero(h @ m - m @ h, TOL * scale)


# -- a system of qudits plus ancillas for the compiler -----------------------------------

class QuditSystem:
    """Materializes primitives over a QuditSpec for the pulse expander."""

    kind = "qudit"

    def __init__(self, spec: QuditSpec):
        if spec.ancillas < 1:
            raise ValidationError("synthesis needs at least one ancilla")
        if spec.dim > MAX_DIM:
            raise BudgetExceeded(f"composite dimension {spec.dim} exceeds {MAX_DIM}")
        self.spec = spec
        self.n = spec.n
        self.ancilla = spec.ancilla_sites
        self.dims = spec.dims
        self.total = len(self.dims)
        self.algebra = E.MatrixAlgebra(spec.dim)
        self._cache: dict[Prim, sp.csr_matrix] = {}

    def op(self, p: Prim) -> sp.csr_matrix:
        got = self._cache.get(p)
        if got is None:
            got = self._cache[p] = self._build(p)
        return got

    def _build(self, p: Prim) -> sp.csr_matrix:
        g = p.gen
        if g in ("R", "T", "Z", "Za"):
            return _interaction_matrix(self.spec, g, p.sites, p.levels)
        if g in ("ZZ", "Zmono"):
            m = _embed(self.dims, {})
            for j in p.sites:
                m = m @ _interaction_matrix(self.spec, "Z", (j,), (1,))
            return m.tocsr()
        if g == "G":
            raise ValidationError("opaque generator leaves cannot be materialized")
        raise ValidationError(f"unknown qudit primitive {g!r}")

    def bracket(self, a, b):
        return (1j * (a @ b - b @ a)).tocsr()

    def inner(self, a, b) -> float:
        return float(np.real(a.conj().multiply(b).sum()))

    def is_zero(self, a) -> bool:
        return _is_zero(a, 1e-10)

    def equal(self, a, b) -> bool:
        scale = max(1.0, float(abs(a).max()) if a.nnz else 0.0, float(abs(b).max()) if b.nnz else 0.0)
        return _is_zero(a - b, 1e-9 * scale)

    def norm(self, a) -> float:
        return float(abs(a).sum(axis=1).max()) if a.nnz else 0.0


def system_prim(n: int, x: int, y: int, lx: int | None, ly: int | None) -> Prim:
    """Canonical R primitive between sites x, y with their levels (system site first)."""
    if x >= n or y >= n:
        j, l = (x, lx) if y >= n else (y, ly)
        a = y if y >= n else x
        return Prim("R", (j, a), (l,))
    if x > y:
        x, y, lx, ly = y, x, ly, lx
    return Prim("R", (x, y), (lx, ly))


# -- diagonal decompositions -------------------------------------------------------------

def _apply_axis(arr: np.ndarray, mat: np.ndarray, axis: int) -> np.ndarray:
    moved = np.moveaxis(arr, axis, -1)
    out = moved @ np.asarray(mat).T
    return np.moveaxis(out, -1, axis)


def _table_array(table, d: int | None, n: int | None, exact: bool) -> tuple[np.ndarray, int, int]:
    if isinstance(table, Mapping):
        keys = list(table)
        if n is None:
            n = len(keys[0])
        if d is None:
            d = max(max(k) for k in keys) + 1
        arr = np.empty((d,) * n, dtype=object if exact else float)
        if len(table) != d ** n:
            raise ValidationError(f"table needs all {d ** n} entries")
        for k, v in table.items():
            arr[tuple(k)] = Fraction(v) if exact else float(v)
        return arr, d, n
    a = np.asarray(table)
    if n is not None and d is not None:
        a = a.reshape((d,) * n)
    elif d is not None:
        n = int(round(math.log(a.size, d)))
        a = a.reshape((d,) * n)
    else:
        d, n = a.shape[0], a.ndim
    if a.size != d ** n:
        raise ValidationError("table size is not d^n")
    if exact:
        out = np.empty(a.shape, dtype=object)
        for idx in np.ndindex(a.shape):
            out[idx] = Fraction(a[idx].item() if hasattr(a[idx], "item") else a[idx])
        return out, d, n
    return a.astype(float), d, n


@lru_cache(maxsize=None)
def _z_basis(d: int) -> tuple[tuple, tuple]:
    """Columns: diagonals of I, Z^{(1)}, ..., Z^{(d-1)}; and the exact inverse."""
    b = [[Fraction(0)] * d for _ in range(d)]
    for r in range(d):
        b[r][0] = Fraction(1)
    for l in range(1, d):
        b[l - 1][l] += 1
        b[l][l] -= 1
    return tuple(map(tuple, b)), tuple(map(tuple, inverse(b)))


@dataclass
class DiagDecomposition:
    """Coefficients over products of ``Z^{(l)}_j``; key = level per site, 0 for identity."""

    d: int
    n: int
    coeffs: dict[tuple[int, ...], Fraction]

    @property
    def identity(self) -> Fraction:
        return self.coeffs.get((0,) * self.n, Fraction(0))

    def terms(self) -> dict[str, Fraction]:
        out = {}
        for key, c in sorted(self.coeffs.items()):
            name = " ".join(f"Z{l}_{j}" for j, l in enumerate(key) if l) or "I"
            out[name] = c
        return out

    def reconstruct(self) -> np.ndarray:
        b, _ = _z_basis(self.d)
        arr = np.zeros((self.d,) * self.n, dtype=object)
        for key, c in self.coeffs.items():
            vec = np.array([c], dtype=object)
            for l in key:
                col = np.array([b[r][l] for r in range(self.d)], dtype=object)
                vec = np.multiply.outer(vec, col)
            arr = arr + vec.reshape((self.d,) * self.n)
        return arr

    def to_json(self) -> dict:
        return {"d": self.d, "n": self.n,
                "terms": [{"levels": list(k), "num": c.numerator, "den": c.denominator}
                          for k, c in sorted(self.coeffs.items())]}


def qudit_diag_decompose(table, d: int | None = None, n: int | None = None) -> DiagDecomposition:
    """Exact expansion of a diagonal table over ``I`` and products of ``Z^{(l)}_j``.

    ``table`` maps level tuples to values, or is an array of shape ``(d,)*n``.
    The identity coefficient equals the mean of the table.
    """
    arr, d, n = _table_array(table, d, n, exact=True)
    _, binv = _z_basis(d)
    m = np.array(binv, dtype=object)
    for ax in range(n):
        arr = _apply_axis(arr, m, ax)
    coeffs = {idx: Fraction(arr[idx]) for idx in np.ndindex(arr.shape) if arr[idx] != 0}
    return DiagDecomposition(d, n, coeffs)


@lru_cache(maxsize=None)
def _lift_maps(d: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-site maps for the projector-last basis.

    ``F`` sends level values to coefficients over ``{I, |1><1|, ..., |d-1><d-1|}``;
    ``Zinv`` inverts the map sending index l to the coefficients of ``Z^{(l)}``
    (index 0 to the identity) in that same basis.
    """
    f = np.eye(d)
    f[1:, 0] = -1.0
    z = np.zeros((d, d))
    z[0, 0] = 1.0
    z[0, 1], z[1, 1] = 1.0, -2.0
    z[2:, 1] = -1.0
    for l in range(2, d):
        z[l - 1, l], z[l, l] = 1.0, -1.0
    return f, np.linalg.inv(z)


def lift_coefficients(values: np.ndarray, d: int) -> tuple[float, dict[tuple, float]]:
    """Coefficients of ``values`` (shape ``(d,)*n``) over the basis
    ``I`` and ``Z^{(l_1)}_{j_1} ... Z^{(l_{s-1})}_{j_{s-1}} |l_s><l_s|_{j_s}`` (``j_1 < ... < j_s``, l >= 1).

    Returns ``(identity_coefficient, {(sites, levels): coefficient})``.
    """
    n = values.ndim
    f, zinv = _lift_maps(d)
    c = np.asarray(values, dtype=float)
    for ax in range(n):
        c = _apply_axis(c, f, ax)
    out: dict[tuple, float] = {}
    for m in range(n - 1, -1, -1):
        block = c[(slice(None),) * m + (slice(1, None),) + (0,) * (n - m - 1)]
        for ax in range(m):
            block = _apply_axis(block, zinv, ax)
        for idx in np.ndindex(block.shape):
            x = float(block[idx])
            if abs(x) <= 1e-14:
                continue
            pre = [(j, r) for j, r in enumerate(idx[:m]) if r]
            sites = tuple(j for j, _ in pre) + (m,)
            levels = tuple(r for _, r in pre) + (idx[m] + 1,)
            out[(sites, levels)] = x
    return float(c[(0,) * n]), out


@dataclass
class QuditChain:
    sites: tuple[int, ...]
    levels: tuple[int, ...]
    expr: E.Expr
    realized: sp.csr_matrix
    sign: int

    @property
    def lifted(self) -> sp.csr_matrix:
        """Operator acting on the ancilla |0> sector as ``Z...Z |l_s><l_s|``."""
        return (self.realized * (-0.5 * self.sign)).tocsr()


def qudit_chain(system: QuditSystem, sites: Sequence[int], levels: Sequence[int]) -> QuditChain:
    """Chain ``(a, j_1, ..., j_s)`` of embedded level-pair couplings.

    Every coupling vanishes when its site leaves its level pair, so the chain
    realizes ``c (Z^{(l_1)}...Z^{(l_s)} - Z^{(l_1)}...Z^{(l_{s-1})} Pi^{(l_s)}_{j_s} Z_a)``
    with ``Pi^{(l)} = |l-1><l-1| + |l><l|``; the sign c is checked here.
    """
    spec, n = system.spec, system.n
    a = system.ancilla[0]
    lv = dict(zip(sites, levels))
    tree = chain_tree([a] + list(sites),
                      lambda x, y: E.Leaf(system_prim(n, x, y, lv.get(x), lv.get(y))),
                      lambda x: E.Leaf(Prim("Za", (x,))))
    realized = E.evaluate(tree, system.op, system.algebra)
    zs = [_interaction_matrix(spec, "Z", (j,), (l,)) for j, l in zip(sites, levels)]
    full = _embed(system.dims, {})
    for z in zs:
        full = full @ z
    pre = _embed(system.dims, {})
    for z in zs[:-1]:
        pre = pre @ z
    last_pi = zs[-1] @ zs[-1]
    expected = (full - pre @ last_pi @ _interaction_matrix(spec, "Za", (a,), ())).tocsr()
    if system.equal(realized, expected):
        c = 1
    elif system.equal(realized, -expected):
        c = -1
    else:
        raise VerificationError(f"qudit chain identity failed for sites {tuple(sites)}")
    return QuditChain(tuple(sites), tuple(levels), tree, realized, c)


def lift_diagonal(values: np.ndarray, system: QuditSystem, duration: float = 1.0) -> list[Step]:
    """Commuting steps acting on the ancilla |0> sector as ``exp(-i diag(values) duration)``."""
    d = system.spec.d
    n = system.n
    a = system.ancilla[0]
    values = np.asarray(values, dtype=float).reshape((d,) * n)
    if d == 2:
        table = {i: v for i, v in enumerate(values.ravel())}
        pauli = diagonal_table_to_pauli(table, n, mode=FLOAT)
        plan = diagonal_with_ancilla(pauli, duration, verify_membership=False)
        return [Step(_pauli_to_sparse(st.hamiltonian, system), st.duration, st.prim, st.expr)
                for st in plan.steps]
    ident, coeffs = lift_coefficients(values, d)
    steps = []
    for (sites, levels), x in sorted(coeffs.items(), key=lambda kv: (-len(kv[0][0]), kv[0])):
        ch = _chain_cached(system, sites, levels)
        ex = E.Scale(-0.5 * ch.sign, ch.expr)
        steps.append(Step(ch.lifted, x * duration, None, ex))
    if abs(ident) > 1e-14:
        za = Prim("Za", (a,))
        steps.append(Step(system.op(za), ident * duration, za))
    return steps


def _pauli_to_sparse(h, system: QuditSystem) -> sp.csr_matrix:
    # the qubit plan lives on systems plus one ancilla; embed into the qudit space
    m = sp.csr_matrix(densesim.to_matrix(h))
    extra = system.total - h.n
    if extra:
        m = sp.kron(m, sp.identity(2 ** extra, format="csr"), format="csr")
    return m


_CHAINS: dict = {}


def _chain_cached(system: QuditSystem, sites, levels) -> QuditChain:
    key = (system.spec, tuple(sites), tuple(levels))
    if key not in _CHAINS:
        _CHAINS[key] = qudit_chain(system, sites, levels)
    return _CHAINS[key]


# -- F-ladder -------------------------------------------------------------------------------

def _index(r: Sequence[int], d: int) -> int:
    out = 0
    for x in r:
        out = out * d + int(x)
    return out


def _digits(idx: int, d: int, n: int) -> tuple[int, ...]:
    out = []
    for _ in range(n):
        idx, x = divmod(idx, d)
        out.append(x)
    return tuple(reversed(out))


def f_operator(r_out: Sequence[int], r_in: Sequence[int], d: int) -> np.ndarray:
    """``F(r', r) = |r'><r| - |r><r'|`` on ``(C^d)^n``."""
    n = len(r_in)
    m = np.zeros((d ** n, d ** n))
    i, j = _index(r_out, d), _index(r_in, d)
    m[i, j] += 1
    m[j, i] -= 1
    return m


def f_ladder_error(r1, r2, r3, d: int) -> float:
    """``|| [F(r3, r2), F(r2, r1)] - F(r3, r1) ||`` with the plain commutator."""
    a, b = f_operator(r3, r2, d), f_operator(r2, r1, d)
    return float(np.abs(a @ b - b @ a - f_operator(r3, r1, d)).max())


def f_ladder_path(r_in: Sequence[int], r_out: Sequence[int], d: int) -> list[tuple[int, ...]]:
    """Shortest path of single-quantum moves between two states of equal total level."""
    if sum(r_in) != sum(r_out) or len(r_in) != len(r_out):
        raise ValidationError("F-ladder paths join states with the same N(r)")
    n = len(r_in)
    src, dst = tuple(r_in), tuple(r_out)
    prev = {src: None}
    q = deque([src])
    while q:
        cur = q.popleft()
        if cur == dst:
            break
        for v, w in itertools.permutations(range(n), 2):
            if cur[v] + 1 < d and cur[w] >= 1:
                nxt = list(cur)
                nxt[v] += 1
                nxt[w] -= 1
                nxt = tuple(nxt)
                if nxt not in prev:
                    prev[nxt] = cur
                    q.append(nxt)
    path = [dst]
    while prev[path[-1]] is not None:
        path.append(prev[path[-1]])
    return path[::-1]


def f_ladder_chain_error(path: Sequence[Sequence[int]], d: int) -> float:
    """Nested commutators of consecutive F's along ``path`` versus ``F(end, start)``."""
    acc = f_operator(path[1], path[0], d)
    for k in range(2, len(path)):
        f = f_operator(path[k], path[k - 1], d)
        acc = f @ acc - acc @ f
    return float(np.abs(acc - f_operator(path[-1], path[0], d)).max())


def embedded_swap_error(d: int, l: int, l2: int) -> float:
    """``exp(i pi/4 (2R + Z Z))`` on the embedded level pairs of two qudits vs ``e^{i pi/4}`` SWAP."""
    spec = QuditSpec(2, d, 1.0, 0)
    r = _interaction_matrix(spec, "R", (0, 1), (l, l2)).toarray()
    zz = (_interaction_matrix(spec, "Z", (0,), (l,)) @ _interaction_matrix(spec, "Z", (1,), (l2,))).toarray()
    u = sla.expm(1j * math.pi / 4 * (2 * r + zz))
    states = [_index((l - 1 + x, l2 - 1 + y), d) for x in (0, 1) for y in (0, 1)]
    block = u[np.ix_(states, states)]
    swap = np.eye(4)[[0, 2, 1, 3]]
    leak = np.abs(u[:, states]).sum() - np.abs(block).sum()
    return float(max(np.abs(block - np.exp(1j * math.pi / 4) * swap).max(), abs(leak)))


# -- two ancillas -----------------------------------------------------------------------------

@dataclass
class TwoAncillaReduction:
    identity_error: float
    reversed_order_error: float
    plan: CircuitPlan
    sector_error: float


def two_ancilla_reduce(j: int, j2: int, l: int, l2: int, spec: QuditSpec, t: float = 1.0) -> TwoAncillaReduction:
    """Replace ``R^{(l,l')}_{j,j'}`` by couplings to a second ancilla b.

    ``R^{(l,l')}_{j,j'} Z_b = 1/2 [R^{(l')}_{j',b}, [R^{(l)}_{j,b}, Z_b]]``, so on the
    ``|0>_b`` sector the bracket generates ``exp(-i t R^{(l,l')}_{j,j'})``.
    """
    if spec.ancillas < 2:
        raise ValidationError("the reduction needs a second ancilla")
    if j == j2:
        raise ValidationError("two distinct systems are required")
    system = QuditSystem(spec)
    b = spec.n + 1
    r_sys = system.op(system_prim(spec.n, j, j2, l, l2))
    rjb = system.op(Prim("R", (j, b), (l,)))
    rj2b = system.op(Prim("R", (j2, b), (l2,)))
    zb = system.op(Prim("Za", (b,)))

    def comm(x, y):
        return (x @ y - y @ x).tocsr()

    lhs = (r_sys @ zb).tocsr()
    err = float(abs(lhs - 0.5 * comm(rj2b, comm(rjb, zb))).max())
    err_rev = float(abs(lhs - 0.5 * comm(rjb, comm(rj2b, zb))).max())
    if err > 1e-12:
        raise VerificationError(f"two-ancilla identity failed ({err:.2e})")
    # plain [A,[B,C]] = -bracket(A, bracket(B, C))
    tree = E.Scale(Fraction(-1, 2), E.Bracket(E.Leaf(Prim("R", (j2, b), (l2,))),
                                             E.Bracket(E.Leaf(Prim("R", (j, b), (l,))),
                                                       E.Leaf(Prim("Za", (b,))))))
    plan = CircuitPlan(spec.n, [b], "hamiltonian", [Step(lhs, t, None, tree)],
                       primitives="R(star)+Zb", dims=spec.dims, system=system)
    one = spec.with_ancillas(1)
    target = sla.expm(-1j * t * _interaction_matrix(one, "R", (j, j2) if j < j2 else (j2, j),
                                                   (l, l2) if j < j2 else (l2, l)).toarray())
    rep = verify_plan(plan, target, 1e-10)
    return TwoAncillaReduction(err, err_rev, plan, rep.distance)


# -- synthesis --------------------------------------------------------------------------------

def _sectors(d: int, n: int) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for idx in range(d ** n):
        out.setdefault(sum(_digits(idx, d, n)), []).append(idx)
    return out


def _neighbour_prim(p: int, q: int, d: int, n: int) -> tuple[Prim, int] | None:
    """Nearest-neighbour coupling joining basis states p and q, with the lower state."""
    rp, rq = _digits(p, d, n), _digits(q, d, n)
    diff = [k for k in range(n) if rp[k] != rq[k]]
    if len(diff) != 2 or diff[1] != diff[0] + 1:
        return None
    j = diff[0]
    lo, hi = (rp, rq) if rp[j] < rq[j] else (rq, rp)
    if hi[j] != lo[j] + 1 or lo[j + 1] != hi[j + 1] + 1:
        return None
    return Prim("R", (j, j + 1), (hi[j], lo[j + 1])), (p if lo == rp else q)


def _path(p: int, q: int, states: Sequence[int], d: int, n: int) -> list[int]:
    allowed = set(states)
    prev = {p: None}
    dq = deque([p])
    while dq:
        cur = dq.popleft()
        if cur == q:
            break
        for nb in sorted(allowed):
            if nb not in prev and _neighbour_prim(cur, nb, d, n) is not None:
                prev[nb] = cur
                dq.append(nb)
    if q not in prev:
        raise ValidationError("energy sector is not connected by nearest-neighbour moves")
    out = [q]
    while prev[out[-1]] is not None:
        out.append(prev[out[-1]])
    return out[::-1]


def _phase_diag(dim: int, entries: Mapping[int, complex]) -> np.ndarray:
    h = np.zeros(dim)
    for k, ph in entries.items():
        h[k] = -np.angle(ph)
    return h


def _two_level_euler(u: np.ndarray) -> tuple[tuple[complex, complex], float, tuple[complex, complex]]:
    """``u = diag(d1) exp(-i beta sigma_x) diag(d2)`` for a 2x2 unitary."""
    c, s = abs(u[0, 0]), abs(u[1, 0])
    beta = math.atan2(s, c)
    if s < 1e-14:
        return (u[0, 0], u[1, 1]), 0.0, (1.0, 1.0)
    if c < 1e-14:
        return (1.0, 1j * u[1, 0]), math.pi / 2, (1.0, 1j * u[0, 1])
    d1 = u[0, 0] / math.cos(beta)
    d2 = u[1, 0] / (-1j * math.sin(beta))
    e2 = u[0, 1] / (d1 * -1j * math.sin(beta))
    return (d1, d2), beta, (1.0, e2)


class _OpList:
    """Time-ordered list of ("diag", h) and ("R", prim, duration) items."""

    def __init__(self, dim: int):
        self.dim = dim
        self.items: list = []

    def diag(self, h: np.ndarray) -> None:
        if self.items and self.items[-1][0] == "diag":
            self.items[-1] = ("diag", self.items[-1][1] + h)
        else:
            self.items.append(("diag", np.asarray(h, dtype=float)))

    def hop(self, prim: Prim, duration: float) -> None:
        if abs(duration) > 1e-15:
            self.items.append(("R", prim, duration))

    def rotation(self, p: int, q: int, beta: float, d: int, n: int) -> None:
        """``exp(-i beta (|p><q| + |q><p|))`` for neighbouring states."""
        if abs(beta) < 1e-15:
            return
        prim, _ = _neighbour_prim(p, q, d, n)
        proj = np.zeros(self.dim)
        proj[p] = math.pi
        self.diag(-proj)
        self.hop(prim, -beta / 2)
        self.diag(proj)
        self.hop(prim, beta / 2)


def _givens_ops(v: np.ndarray, d: int, n: int) -> _OpList:
    dim = d ** n
    ops = _OpList(dim)
    final = np.ones(dim, dtype=complex)
    rotations = []
    for states in _sectors(d, n).values():
        m = v[np.ix_(states, states)].copy()
        k = len(states)
        for c in range(k):
            for r in range(k - 1, c, -1):
                b = m[r, c]
                if abs(b) < 1e-15:
                    continue
                a = m[c, c]
                nrm = math.hypot(abs(a), abs(b))
                g = np.array([[np.conj(a), np.conj(b)], [-b, a]]) / nrm
                m[[c, r], :] = g @ m[[c, r], :]
                rotations.append((states, states[c], states[r], g.conj().T))
        for i, s in enumerate(states):
            final[s] = m[i, i]
    ops.diag(-np.angle(final))
    for states, p, q, u2 in reversed(rotations):
        _two_level(ops, states, p, q, u2, d, n)
    return ops


def _two_level(ops: _OpList, states, p: int, q: int, u2: np.ndarray, d: int, n: int) -> None:
    path = _path(p, q, states, d, n)
    x1 = path[1]
    omega = (-1j) ** (len(path) - 2)
    u = np.array([[u2[0, 0], u2[0, 1] * omega], [u2[1, 0] * np.conj(omega), u2[1, 1]]])
    transport = list(zip(path[1:-1], path[2:]))
    for x, y in reversed(transport):
        ops.rotation(x, y, -math.pi / 2, d, n)
    (d1a, d1b), beta, (d2a, d2b) = _two_level_euler(u)
    ops.diag(_phase_diag(ops.dim, {p: d2a, x1: d2b}))
    ops.rotation(p, x1, beta, d, n)
    ops.diag(_phase_diag(ops.dim, {p: d1a, x1: d1b}))
    for x, y in transport:
        ops.rotation(x, y, math.pi / 2, d, n)


def _wrap(h: np.ndarray) -> np.ndarray:
    return (h + math.pi) % (2 * math.pi) - math.pi


def _steps_from_ops(ops: _OpList, system: QuditSystem) -> list[Step]:
    steps: list[Step] = []
    for item in ops.items:
        if item[0] == "diag":
            h = _wrap(item[1])
            if np.abs(h).max(initial=0.0) > 1e-14:
                steps += lift_diagonal(h, system, 1.0)
        else:
            _, prim, dur = item
            steps.append(Step(system.op(prim), dur, prim))
    return steps


def _single_primitive(h: sp.csr_matrix, system: QuditSystem) -> Prim | None:
    spec = system.spec
    d, n = spec.d, spec.n
    cands = [Prim("R", (j, j + 1), (l, l2)) for j in range(n - 1)
             for l in range(1, d) for l2 in range(1, d)]
    for p in cands:
        m = system.op(p)
        if m.nnz and h.nnz == m.nnz:
            c = system.inner(m, h) / system.inner(m, m)
            if system.equal(h, m * c):
                return p
    return None


def _embed_system_op(h: sp.csr_matrix, spec: QuditSpec) -> sp.csr_matrix:
    return sp.kron(h, sp.identity(2, format="csr"), format="csr")


def qudit_synthesize(h, spec: QuditSpec, t: float = 1.0, level: str = "hamiltonian",
                     epsilon: float = 1e-2, scheme: str = "trotter2",
                     max_pulses: int = DEFAULT_MAX_PULSES) -> CircuitPlan:
    """Plan for ``exp(-i H t)`` on the systems using ``{R^{(l)}_{j,a}, R^{(l,l')}_{j,j+1}, Z_a}``.

    ``H`` acts on the systems only and must commute with the intrinsic
    Hamiltonian.  The hamiltonian-level plan is verified to 1e-10 on the
    ancilla |0> sector; a pulse-level plan is verified to ``epsilon``.
    """
    m = _as_matrix(h)
    one = spec.with_ancillas(1)
    if m.shape[0] != spec.system_dim:
        raise ValidationError(f"H must act on the {spec.system_dim}-dimensional system space")
    if not _is_zero(m - m.getH()):
        raise ValidationError("H is not Hermitian")
    if not check_energy_conserving(m, one):
        raise ValidationError("H does not commute with the intrinsic Hamiltonian")
    system = QuditSystem(one)
    d, n = spec.d, spec.n
    target = sla.expm(-1j * t * m.toarray())
    prim = _single_primitive(_embed_system_op(m, one), system)
    if prim is not None:
        c = system.inner(system.op(prim), _embed_system_op(m, one)) / system.inner(system.op(prim), system.op(prim))
        steps = [Step(system.op(prim), c * t, prim)]
    elif _is_zero(m - sp.diags(m.diagonal())):
        steps = lift_diagonal(np.real(m.diagonal()), system, t)
    else:
        steps = _steps_from_ops(_givens_ops(target, d, n), system)
    plan = CircuitPlan(n, [n], "hamiltonian", steps, primitives="R(l)+R(l,l')+Za",
                       dims=one.dims, system=system)
    check = verify_plan(plan, target, 1e-10)
    plan.report["hamiltonian_distance"] = check.distance
    if not check.passed:
        raise VerificationError("hamiltonian-level qudit plan failed verification", measured=check.distance)
    if level == "hamiltonian":
        return plan
    if level != "pulse":
        raise ValidationError(f"unknown plan level {level!r}")
    return qudit_expand(plan, target, epsilon, scheme, max_pulses)


def qudit_expand(plan: CircuitPlan, target: np.ndarray, epsilon: float, scheme: str = "trotter2",
                 max_pulses: int = DEFAULT_MAX_PULSES) -> CircuitPlan:
    """Pulse plan restricted to nearest-neighbour system couplings (routing by qudit swaps)."""
    system: QuditSystem = plan.system
    n, a = system.n, system.ancilla[0]
    router = BlockRouter(n, a, system, _qudit_swap_block(system))
    run = _expand_step(system, scheme, epsilon / (2 * max(1, len(plan.steps))), max_pulses)
    seq = []
    for st in plan.steps:
        seq += router.route(st, run)
        if len(seq) > max_pulses:
            raise BudgetExceeded(f"pulse count exceeds {max_pulses}")
    seq = _merge(seq)
    steps = [Step(system.op(p), dur, p) for p, dur in seq]
    out = CircuitPlan(plan.n, list(plan.ancilla), "pulse", steps, epsilon, plan.phase,
                      plan.primitives, scheme, plan.dims, dict(plan.report), system)
    rep = verify_plan(out, target, epsilon)
    out.report.update(pulses=len(steps), measured_error=rep.distance, leakage=rep.leakage)
    if not rep.passed:
        raise VerificationError(f"qudit pulse plan misses epsilon: {rep.distance:.3e}",
                                measured=rep.distance)
    return out


_SWAPS: dict = {}


def qudit_swap_pulses(d: int) -> list:
    """Pulses for the two-qudit SWAP on sites (0, 1) with the ancilla at site 2."""
    if d not in _SWAPS:
        spec = QuditSpec(2, d, 1.0, 1)
        perm = [_index((y, x), d) for x in range(d) for y in range(d)]
        swap = np.eye(d * d)[perm]
        system = QuditSystem(spec)
        steps = _steps_from_ops(_givens_ops(swap, d, 2), system)
        run = _expand_step(system, "trotter2", 1e-12, DEFAULT_MAX_PULSES)
        seq = []
        for st in steps:
            seq += run(st)
        _SWAPS[d] = _merge(seq)
    return _SWAPS[d]


def _qudit_swap_block(system: QuditSystem):
    d, a = system.spec.d, system.ancilla[0]

    def block(i: int, j: int) -> list:
        relabel = {0: i, 1: j, 2: a}
        return [(Prim(p.gen, tuple(relabel[s] for s in p.sites), p.levels), dur)
                for p, dur in qudit_swap_pulses(d)]
    return block


# -- the energy-conserving algebra ------------------------------------------------------------

@dataclass
class EnergyAlgebraReport:
    multiplicities: dict[int, int]
    dim: int
    closure_dim: int | None
    closure_ok: bool | None
    exact_rank: int | None = None

    def to_json(self) -> dict:
        return {"multiplicities": {str(k): v for k, v in sorted(self.multiplicities.items())},
                "dim": self.dim, "closure_dim": self.closure_dim, "closure_ok": self.closure_ok,
                "exact_rank": self.exact_rank}


def energy_multiplicities(spec: QuditSpec) -> dict[int, int]:
    return {e: len(v) for e, v in sorted(_sectors(spec.d, spec.n).items())}


def energy_algebra_dim(spec: QuditSpec, closure: bool = True, max_dim: int = 5000) -> EnergyAlgebraReport:
    """Multiplicities m_E by enumeration, ``dim = sum m_E^2``, and the dense Lie closure
    of all diagonal projectors plus nearest-neighbour ``R^{(l,l')}_{j,j+1}``."""
    mult = energy_multiplicities(spec)
    assert mult == {int(k): v for k, v in sector_multiplicities(spec.symmetry()).items()}
    dim = sum(m * m for m in mult.values())
    if not closure:
        return EnergyAlgebraReport(mult, dim, None, None)
    d, n = spec.d, spec.n
    size = d ** n
    if size > 512:
        raise BudgetExceeded(f"closure check limited to d^n <= 512 (got {size})")
    sys_spec = QuditSpec(n, d, spec.gap, 0)
    gens = [np.diag(np.eye(size)[k]) for k in range(size)]
    gens += [_interaction_matrix(sys_spec, "R", (j, j + 1), (l, l2)).toarray()
             for j in range(n - 1) for l in range(1, d) for l2 in range(1, d)]
    basis: list[np.ndarray] = []
    raw: list[np.ndarray] = []

    def vec(m):
        return np.concatenate([m.real.ravel(), m.imag.ravel()])

    def admit(m) -> bool:
        v = vec(m)
        nv = np.linalg.norm(v)
        if nv < 1e-9:
            return False
        w = v / nv
        for _ in range(2):
            for b in basis:
                w = w - (b @ w) * b
        nw = np.linalg.norm(w)
        if nw < 1e-9:
            return False
        basis.append(w / nw)
        raw.append(m)
        return True

    queue = deque()
    for g in gens:
        if admit(g):
            queue.append(g)
    while queue:
        e = queue.popleft()
        for g in gens:
            c = 1j * (g @ e - e @ g)
            if admit(c):
                queue.append(c)
                if len(basis) > max_dim:
                    raise BudgetExceeded(f"closure exceeded {max_dim} elements")
    exact = None
    if len(raw) <= 200:
        rows = []
        for m in raw:
            v = vec(m)
            iv = np.rint(v)
            if np.abs(v - iv).max() > 1e-9:
                rows = None
                break
            rows.append([int(x) for x in iv])
        if rows is not None:
            exact = rank(rows)
    return EnergyAlgebraReport(mult, dim, len(basis), len(basis) == dim, exact)


def sparse_triplets(m, dims: Sequence[int]) -> dict:
    return QuditOperator(_as_matrix(m), tuple(dims), hermitian=False).to_json()
