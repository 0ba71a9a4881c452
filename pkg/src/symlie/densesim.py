"""Dense-matrix ground truth used to certify every other module.

Basis ordering is big-endian: site 0 is the most significant digit of a
basis index, matching the left-to-right Pauli word convention.
"""

from __future__ import annotations

import io
import json
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

from .errors import BudgetExceeded, ValidationError
from .pauli_core import PauliSum

log = logging.getLogger(__name__)

DIM_BUDGET = 2 ** 12
HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-12


@dataclass
class DenseUnitary:
    matrix: np.ndarray
    dims: tuple[int, ...] = field(default=())

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=complex)
        if not self.dims:
            self.dims = (self.matrix.shape[0],)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def __matmul__(self, other: "DenseUnitary") -> "DenseUnitary":
        return DenseUnitary(self.matrix @ other.matrix, self.dims)

    def unitarity_error(self) -> float:
        m = self.matrix
        return float(np.abs(m.conj().T @ m - np.eye(m.shape[0])).max())


def _check_budget(dim: int) -> None:
    if dim > DIM_BUDGET:
        raise BudgetExceeded(f"dense dimension {dim} exceeds budget {DIM_BUDGET}")


def pauli_matrix(word: str) -> np.ndarray:
    """Dense matrix of one Pauli word (phase-free)."""
    n = len(word)
    dim = 1 << n
    _check_budget(dim)
    x = z = 0
    ny = 0
    for ch in word:
        x <<= 1
        z <<= 1
        if ch in "XY":
            x |= 1
        if ch in "ZY":
            z |= 1
        ny += ch == "Y"
    idx = np.arange(dim)
    # P = i^{#Y} X^x Z^z ; Z^z|i> = (-1)^{z.i}|i>, X^x|i> = |i ^ x>
    parity = np.zeros(dim, dtype=np.int64)
    zi = idx & z
    while np.any(zi):
        parity ^= zi & 1
        zi = zi >> 1
    vals = (1j ** ny) * (1 - 2 * parity)
    m = np.zeros((dim, dim), dtype=complex)
    m[idx ^ x, idx] = vals
    return m


def to_matrix(a) -> np.ndarray:
    """Dense matrix of a :class:`PauliSum`, a qudit operator or a sparse matrix."""
    if isinstance(a, PauliSum):
        dim = 1 << a.n
        _check_budget(dim)
        m = np.zeros((dim, dim), dtype=complex)
        for p, c in a.items():
            m += float(c) * pauli_matrix(p.word)
        return m
    mat = getattr(a, "matrix", a)
    if sp.issparse(mat):
        _check_budget(mat.shape[0])
        return mat.toarray().astype(complex)
    mat = np.asarray(mat, dtype=complex)
    _check_budget(mat.shape[0])
    return mat


def hermitian_part(h: np.ndarray) -> np.ndarray:
    dev = float(np.abs(h - h.conj().T).max()) if h.size else 0.0
    scale = max(1.0, float(np.abs(h).max()) if h.size else 1.0)
    if dev > HERMITIAN_TOL * scale:
        raise ValidationError(f"matrix is not Hermitian (deviation {dev:.3e})")
    if dev:
        log.debug("symmetrizing Hermitian input, deviation %.3e", dev)
    return (h + h.conj().T) / 2


class _Exp:
    """Cached eigendecomposition giving exp(-i H t) for any t."""

    __slots__ = ("vals", "vecs")

    def __init__(self, h: np.ndarray):
        self.vals, self.vecs = np.linalg.eigh(hermitian_part(h))

    def __call__(self, t: float) -> np.ndarray:
        return (self.vecs * np.exp(-1j * self.vals * t)) @ self.vecs.conj().T


def expm_unitary(h, t: float, dims: Sequence[int] = ()) -> DenseUnitary:
    """``exp(-i H t)`` via eigendecomposition."""
    m = to_matrix(h)
    u = _Exp(m)(t)
    return DenseUnitary(u, tuple(dims) or (m.shape[0],))


def _step_matrix(step):
    op = getattr(step, "hamiltonian", None)
    if op is None:
        op = step[0]
    return op


def _step_duration(step) -> float:
    d = getattr(step, "duration", None)
    if d is None:
        d = step[1]
    return float(d)


def run_plan(plan, mode: str = "unitary", state: np.ndarray | None = None, dim: int | None = None):
    """Execute ``prod_i exp(-i H_i t_i)`` with the first step applied first.

    ``plan`` may be a CircuitPlan-like object with ``steps`` or a plain list
    of ``(hamiltonian, duration)`` pairs.  Steps sharing a hamiltonian object
    or label reuse one eigendecomposition.
    """
    steps = list(getattr(plan, "steps", plan))
    if dim is None:
        dim = getattr(plan, "dim", None)
    cache: dict = {}
    cur = None
    if mode == "state":
        if state is None:
            raise ValidationError("state mode needs an input state")
        cur = np.asarray(state, dtype=complex).copy()
        dim = cur.shape[0]
    for step in steps:
        op = _step_matrix(step)
        key = getattr(step, "cache_key", None) or id(op)
        ex = cache.get(key)
        if ex is None:
            ex = cache[key] = (_Exp(to_matrix(op)), op)
        u = ex[0](_step_duration(step))
        if cur is None:
            cur = u
        elif mode == "state":
            cur = u @ cur
        else:
            cur = u @ cur
    if cur is None:
        if dim is None:
            raise ValidationError("empty plan without a dimension")
        _check_budget(dim)
        cur = np.eye(dim, dtype=complex) if mode != "state" else np.asarray(state, dtype=complex)
    if mode == "state":
        return cur
    return DenseUnitary(cur, tuple(getattr(plan, "dims", ()) or ()))


def ancilla_block(u, ancilla: int, dims: Sequence[int] | None = None, level: int = 0):
    """Return ``(<level|U|level>, leakage)`` for the ancilla at position ``ancilla``.

    Leakage is the largest singular value of the part of ``U|level>`` that
    leaves the ancilla level.
    """
    m = getattr(u, "matrix", u)
    m = np.asarray(m, dtype=complex)
    if dims is None:
        dims = getattr(u, "dims", None)
        if not dims or len(dims) < 2:
            n = int(round(np.log2(m.shape[0])))
            dims = (2,) * n
    dims = tuple(dims)
    if int(np.prod(dims)) != m.shape[0]:
        raise ValidationError("dims do not match matrix")
    if not 0 <= ancilla < len(dims):
        raise ValidationError("ancilla index out of range")
    k = len(dims)
    t = m.reshape(dims + dims)
    t = np.moveaxis(t, [ancilla, k + ancilla], [0, k])
    rest = int(np.prod(dims)) // dims[ancilla]
    t = t.reshape(dims[ancilla], rest, dims[ancilla], rest)
    block = t[level, :, level, :]
    out = np.concatenate([t[j, :, level, :] for j in range(dims[ancilla]) if j != level], axis=0)
    leak = float(np.linalg.norm(out, 2)) if out.size else 0.0
    return block, leak


def distance(u, v) -> float:
    """``min_phi ||U - e^{i phi} V||`` in operator norm."""
    a = np.asarray(getattr(u, "matrix", u), dtype=complex)
    b = np.asarray(getattr(v, "matrix", v), dtype=complex)
    if a.shape != b.shape:
        raise ValidationError("distance needs equal shapes")
    eye = np.eye(a.shape[0])
    unitary = (np.abs(a.conj().T @ a - eye).max() < 1e-9 and np.abs(b.conj().T @ b - eye).max() < 1e-9)
    w = a @ b.conj().T
    phases = np.sort(np.angle(np.linalg.eigvals(w)))
    gaps = np.diff(np.concatenate([phases, [phases[0] + 2 * np.pi]]))
    i = int(np.argmax(gaps))
    arc = 2 * np.pi - gaps[i]
    start = phases[(i + 1) % len(phases)]
    centre = start + arc / 2
    if unitary:
        return float(2 * np.sin(min(arc, 2 * np.pi) / 4))

    def f(phi):
        return np.linalg.norm(a - np.exp(1j * phi) * b, 2)

    best = min((f(p), p) for p in np.linspace(-np.pi, np.pi, 73))
    res = minimize_scalar(f, bounds=(best[1] - 0.1, best[1] + 0.1), method="bounded",
                          options={"xatol": 1e-12})
    return float(min(res.fun, best[0], f(centre)))


# -- matrix I/O --------------------------------------------------------------

def dump_matrix(m: np.ndarray, fh, dims: Sequence[int] = ()) -> None:
    """Binary format: one JSON header line, then row-major complex128 bytes."""
    m = np.ascontiguousarray(m, dtype=np.complex128)
    header = {"shape": list(m.shape), "dtype": "complex128", "order": "C",
              "dims": list(dims) or [m.shape[0]]}
    fh.write((json.dumps(header, sort_keys=True) + "\n").encode())
    fh.write(m.tobytes(order="C"))


def load_matrix(fh) -> tuple[np.ndarray, list[int]]:
    header = json.loads(fh.readline().decode())
    if header.get("dtype") != "complex128":
        raise ValidationError("unsupported matrix dtype")
    shape = tuple(header["shape"])
    data = fh.read(int(np.prod(shape)) * 16)
    return np.frombuffer(data, dtype=np.complex128).reshape(shape).copy(), header["dims"]


def matrix_to_text(m: np.ndarray, tol: float = 0.0) -> str:
    """Text inspection format: a shape line then ``i j re im`` per nonzero entry."""
    m = np.asarray(m, dtype=complex)
    buf = io.StringIO()
    buf.write(f"# {m.shape[0]} {m.shape[1]}\n")
    for i, j in zip(*np.nonzero(np.abs(m) > tol)):
        z = m[i, j]
        buf.write(f"{i} {j} {z.real:.17g} {z.imag:.17g}\n")
    return buf.getvalue()


def matrix_from_text(text: str) -> np.ndarray:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    rows, cols = map(int, lines[0].lstrip("#").split())
    m = np.zeros((rows, cols), dtype=complex)
    for ln in lines[1:]:
        i, j, re, im = ln.split()
        m[int(i), int(j)] = float(re) + 1j * float(im)
    return m
