"""Real Lie algebras generated by symmetric Pauli-sum generators.

Elements are kept exactly as they were produced (a generator, or the
bracket of a generator with an earlier element) so every element has a
short provenance record.  A separate echelon structure over the Pauli-string
basis decides linear independence and membership.
"""

from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

from . import expr as E
from .errors import BudgetExceeded, ValidationError
from .pauli_core import EXACT, FLOAT, PauliSum, bracket, encode, hs_inner, is_symmetric
from .symmetry import (
    SymmetrySpec,
    full_symmetric_dim,
    irrep_count,
    s_k_dimension,
    twirl,
)

FLOAT_REL_TOL = 1e-10


# -- echelon structures -----------------------------------------------------------

class _IntEchelon:
    """Fraction-free echelon form over the integers.

    Row i is the primitive integer vector of element i reduced against rows
    0..i-1; the pivot of a row is its smallest Pauli code.  For each row we
    keep ``row_i = ecoef_i * e_i - sum_j bcoef_ij * row_j`` so coordinates in
    terms of the raw elements can be recovered by back substitution.
    """

    def __init__(self):
        self.rows: list[dict[int, int]] = []
        self.pivot_of: dict[int, int] = {}
        self.ecoef: list[Fraction] = []
        self.bcoef: list[dict[int, Fraction]] = []

    @staticmethod
    def _integerize(a: PauliSum) -> tuple[dict[int, int], int]:
        den = 1
        for v in a._t.values():
            den = den * v.denominator // math.gcd(den, v.denominator)
        return {k: int(v * den) for k, v in a._t.items()}, den

    def reduce(self, vec: dict[int, int]):
        """Return ``(remainder, alpha, beta)`` with remainder = alpha*vec - sum beta_j row_j."""
        v = dict(vec)
        alpha = 1
        beta: dict[int, int] = {}
        heap = list(v)
        heapq.heapify(heap)
        seen = set()
        while heap:
            k = heapq.heappop(heap)
            if k in seen:
                continue
            seen.add(k)
            c = v.get(k)
            if not c:
                continue
            j = self.pivot_of.get(k)
            if j is None:
                continue
            row = self.rows[j]
            p = row[k]
            g = math.gcd(p, c)
            a, b = p // g, c // g
            if a != 1:
                for kk in v:
                    v[kk] *= a
                alpha *= a
                for jj in beta:
                    beta[jj] *= a
            for kk, rv in row.items():
                nv = v.get(kk, 0) - b * rv
                if nv:
                    if kk not in v:
                        heapq.heappush(heap, kk)
                    v[kk] = nv
                else:
                    v.pop(kk, None)
            beta[j] = beta.get(j, 0) + b
        return v, alpha, beta

    def try_add(self, a: PauliSum) -> bool:
        vec, den = self._integerize(a)
        rem, alpha, beta = self.reduce(vec)
        if not rem:
            return False
        g = 0
        for x in rem.values():
            g = math.gcd(g, x)
        piv = min(rem)
        if rem[piv] < 0:
            g = -g
        row = {k: x // g for k, x in rem.items()}
        i = len(self.rows)
        self.rows.append(row)
        self.pivot_of[piv] = i
        # row = (alpha*den*e - sum beta_j row_j) / g
        self.ecoef.append(Fraction(alpha * den, g))
        self.bcoef.append({j: Fraction(b, g) for j, b in beta.items()})
        return True


def _back_substitute(gamma: dict[int, object], ecoef, bcoef) -> dict[int, object]:
    """Turn row coordinates into raw-element coordinates."""
    heap = [-j for j in gamma]
    heapq.heapify(heap)
    gamma = dict(gamma)
    coords: dict[int, object] = {}
    done = set()
    while heap:
        i = -heapq.heappop(heap)
        if i in done:
            continue
        done.add(i)
        gi = gamma.pop(i, 0)
        if not gi:
            continue
        coords[i] = gi * ecoef[i]
        for j, bj in bcoef[i].items():
            if j not in gamma:
                heapq.heappush(heap, -j)
                gamma[j] = 0
            gamma[j] -= gi * bj
    return {i: c for i, c in coords.items() if c}


class _FloatBasis:
    """Classical Gram-Schmidt applied twice over the orthonormal Pauli basis."""

    def __init__(self):
        self.rows: list[dict[int, float]] = []
        self.index: dict[int, set[int]] = {}
        self.ecoef: list[float] = []
        self.bcoef: list[dict[int, float]] = []

    def _project(self, v: dict[int, float]):
        beta: dict[int, float] = {}
        for _ in range(2):
            cand = set()
            for k in v:
                cand |= self.index.get(k, set())
            coef = {}
            for j in cand:
                row = self.rows[j]
                s = sum(x * v.get(k, 0.0) for k, x in row.items())
                if s:
                    coef[j] = s
            for j, s in coef.items():
                for k, x in self.rows[j].items():
                    v[k] = v.get(k, 0.0) - s * x
                beta[j] = beta.get(j, 0.0) + s
            v = {k: x for k, x in v.items() if abs(x) > 1e-15}
        return v, beta

    def try_add(self, a: PauliSum, scale: float | None = None) -> bool:
        v0 = dict(a._t)
        nrm0 = math.sqrt(sum(x * x for x in v0.values()))
        if nrm0 == 0:
            return False
        v, beta = self._project(v0)
        nrm = math.sqrt(sum(x * x for x in v.values()))
        if nrm <= FLOAT_REL_TOL * nrm0:
            return False
        i = len(self.rows)
        row = {k: x / nrm for k, x in v.items()}
        self.rows.append(row)
        for k in row:
            self.index.setdefault(k, set()).add(i)
        self.ecoef.append(1 / nrm)
        self.bcoef.append({j: b / nrm for j, b in beta.items()})
        return True

    def residual(self, a: PauliSum):
        v, beta = self._project(dict(a._t))
        return math.sqrt(sum(x * x for x in v.values())), beta


# -- basis ----------------------------------------------------------------------

@dataclass
class LieBasis:
    """Basis of a real Lie algebra of Hermitian Pauli sums.

    ``records[i]`` is ``("leaf", g)`` for generator g or ``("bracket", g, j)``
    for ``bracket(generators[g], elements[j])``.
    """

    n: int
    mode: str
    generators: list[PauliSum]
    elements: list[PauliSum] = field(default_factory=list)
    records: list[tuple] = field(default_factory=list)
    closed: bool = False
    spec: SymmetrySpec | None = None
    _ech: object = field(default=None, repr=False)

    @property
    def dim(self) -> int:
        return len(self.elements)

    def __len__(self) -> int:
        return len(self.elements)

    @property
    def traceless_dim(self) -> int:
        has_identity = member(PauliSum.identity(self.n, self.mode), self).member
        return self.dim - 1 if has_identity else self.dim

    @property
    def provenance(self) -> list[E.Expr]:
        return [provenance_expression(i, self) for i in range(self.dim)]

    def to_json(self) -> dict:
        recs = []
        for r in self.records:
            if r[0] == "leaf":
                recs.append({"leaf": r[1]})
            else:
                recs.append({"bracket": [{"leaf": r[1]}, {"element": r[2]}]})
        return {
            "n": self.n,
            "mode": self.mode,
            "closed": self.closed,
            "dim": self.dim,
            "generators": [g.to_json() for g in self.generators],
            "elements": [e.to_json() for e in self.elements],
            "provenance": recs,
        }


def _new_echelon(mode: str):
    return _IntEchelon() if mode == EXACT else _FloatBasis()


def close(generators: Sequence[PauliSum], spec: SymmetrySpec | None = None,
          max_dim: int | None = None, check_symmetric: bool = True) -> LieBasis:
    """Smallest bracket-closed real span containing ``generators``.

    Generators are admitted one at a time; a generator already in the span
    of the closed algebra built so far changes nothing and is skipped.  The
    span of all right-nested brackets ``[g1, [g2, ... g_m]]`` is the generated
    algebra, so closing under brackets with the admitted generators suffices.
    """
    gens = list(generators)
    if not gens:
        raise ValidationError("no generators")
    n, mode = gens[0].n, gens[0].mode
    for g in gens:
        if g.n != n or g.mode != mode:
            raise ValidationError("generators must share n and mode")
    if spec is not None and spec.n != n:
        raise ValidationError("spec size differs from generators")
    if check_symmetric:
        for i, g in enumerate(gens):
            if not is_symmetric(g, spec):
                raise ValidationError(f"generator {i} is not symmetric")
    if max_dim is None:
        max_dim = full_symmetric_dim(spec or SymmetrySpec.qubits(n))

    basis = LieBasis(n, mode, gens, spec=spec)
    ech = _new_echelon(mode)
    basis._ech = ech
    active: list[int] = []
    queue: list[tuple[int, int]] = []

    def admit(op: PauliSum, record: tuple) -> bool:
        if not ech.try_add(op):
            return False
        if len(basis.elements) + 1 > max_dim:
            raise BudgetExceeded(f"closure dimension exceeds budget {max_dim}",
                                 achievable=len(basis.elements))
        idx = len(basis.elements)
        basis.elements.append(op)
        basis.records.append(record)
        queue.extend((g, idx) for g in active)
        return True

    for gi, g in enumerate(gens):
        if not g:
            continue
        if not admit(g, ("leaf", gi)):
            continue
        active.append(gi)
        new_idx = len(basis.elements) - 1
        queue.extend((gi, j) for j in range(new_idx))
        head = 0
        while head < len(queue):
            ga, ej = queue[head]
            head += 1
            c = bracket(gens[ga], basis.elements[ej])
            if c:
                admit(c, ("bracket", ga, ej))
        queue.clear()
    basis.closed = True
    return basis


def provenance_expression(index: int, basis: LieBasis) -> E.Expr:
    """Expression tree over generator indices that evaluates to element ``index``."""
    if not 0 <= index < basis.dim:
        raise ValidationError("element index out of range")
    chain = []
    i = index
    while basis.records[i][0] == "bracket":
        _, g, j = basis.records[i]
        chain.append(g)
        i = j
    node: E.Expr = E.Leaf(basis.records[i][1])
    for g in reversed(chain):
        node = E.Bracket(E.Leaf(g), node)
    return node


def evaluate_provenance(tree: E.Expr, basis: LieBasis) -> PauliSum:
    return E.evaluate(tree, lambda k: basis.generators[k], E.PauliAlgebra(basis.n, basis.mode))


@dataclass
class Membership:
    member: bool
    residual: object
    coordinates: dict[int, object] | None

    def expression(self, basis: LieBasis) -> E.Expr:
        if not self.member:
            raise ValidationError("not a member")
        parts = [E.Scale(c, provenance_expression(i, basis)) for i, c in sorted(self.coordinates.items())]
        return E.Sum(tuple(parts))


def member(h: PauliSum, basis: LieBasis) -> Membership:
    """Membership of ``h`` in span(basis) with coordinates over the elements.

    Exact mode reports as residual the squared norm of the echelon remainder
    (zero iff member); float mode reports the orthogonal residual norm.
    """
    if h.n != basis.n or h.mode != basis.mode:
        raise ValidationError("operator and basis disagree on n or mode")
    ech = basis._ech
    if basis.mode == EXACT:
        vec, den = ech._integerize(h)
        rem, alpha, beta = ech.reduce(vec)
        if rem:
            scale = Fraction(1, alpha * den)
            res = sum((Fraction(x) * scale) ** 2 for x in rem.values())
            return Membership(False, res, None)
        gamma = {j: Fraction(b, alpha * den) for j, b in beta.items()}
        coords = _back_substitute(gamma, ech.ecoef, ech.bcoef)
        return Membership(True, Fraction(0), coords)
    res, beta = ech.residual(h)
    nrm = math.sqrt(hs_inner(h, h)) or 1.0
    if res > FLOAT_REL_TOL * nrm:
        return Membership(False, res, None)
    coords = _back_substitute(beta, ech.ecoef, ech.bcoef)
    return Membership(True, res, coords)


def verify_closed(basis: LieBasis) -> bool:
    """Check every pairwise bracket lies in the span (quadratic; small bases only)."""
    for a, b in itertools.combinations(basis.elements, 2):
        c = bracket(a, b)
        if c and not member(c, basis).member:
            return False
    return True


def klocal_symmetric_basis(n: int, k: int, spec: SymmetrySpec | None = None,
                           mode: str = EXACT) -> list[PauliSum]:
    """Independent twirled Pauli strings supported on at most k sites.

    Strings are visited in canonical order (I < X < Y < Z, site 0 first); the
    identity string is always first.
    """
    if not 0 <= k <= n:
        raise ValidationError("need 0 <= k <= n")
    ech = _new_echelon(mode)
    out = []
    for letters in itertools.product("IXYZ", repeat=n):
        if sum(ch != "I" for ch in letters) > k:
            continue
        tw = twirl(PauliSum(n, {"".join(letters): 1}, mode), spec)
        if tw and ech.try_add(tw):
            out.append(tw)
    return out


def diagonal_monomials(n: int, mode: str = EXACT, include_identity: bool = True) -> list[PauliSum]:
    out = []
    for bits in itertools.product("IZ", repeat=n):
        w = "".join(bits)
        if w == "I" * n and not include_identity:
            continue
        out.append(PauliSum(n, {w: 1}, mode))
    return out


@dataclass
class DimensionRow:
    k: int
    dim: int
    traceless_dim: int
    s_k_dim: int
    irreps: int
    gap_bound: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def dimension_report(n: int, ks: Sequence[int], spec: SymmetrySpec | None = None,
                     mode: str = EXACT, max_dim: int | None = None) -> dict:
    """Closure dimensions per locality k plus the irrep-count bound check."""
    spec = spec or SymmetrySpec.qubits(n)
    rows = []
    for k in ks:
        basis = close(klocal_symmetric_basis(n, k, spec, mode), spec, max_dim=max_dim,
                      check_symmetric=False)
        rows.append(DimensionRow(k, basis.dim, basis.traceless_dim, s_k_dimension(n, k, spec),
                                 irrep_count(spec, k), irrep_count(spec, n) - irrep_count(spec, k)))
    ok = True
    for a, b in itertools.combinations(sorted(rows, key=lambda r: r.k), 2):
        if b.dim - a.dim < b.irreps - a.irreps:
            ok = False
    return {"n": n, "full_symmetric_dim": full_symmetric_dim(spec), "bound_ok": ok,
            "rows": [r.to_json() for r in rows]}
