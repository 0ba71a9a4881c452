"""Abelian (U(1)-type) symmetry tools: sectors, charge vectors, twirling and
the weight-sum membership test for diagonal Hamiltonians.

Convention: a qubit site has charges ``(+1, -1)`` for ``|0>, |1>``, so the total
charge of a basis state of Hamming weight w is ``n - 2w`` and the symmetry
acts as ``(e^{i theta Z})^{(x) n}``.
"""

from __future__ import annotations

import cmath
import itertools
import math
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _linalg
from .errors import ValidationError
from .pauli_core import (
    EXACT,
    FLOAT,
    PauliString,
    PauliSum,
    diagonal_part,
    is_diagonal,
)


@dataclass(frozen=True)
class SymmetrySpec:
    """Per-site integer charge lists; site j acts as diag(e^{i c theta})."""

    sites: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        sites = tuple(tuple(int(c) for c in s) for s in self.sites)
        if any(len(s) == 0 for s in sites):
            raise ValidationError("every site needs at least one charge")
        object.__setattr__(self, "sites", sites)

    @classmethod
    def qubits(cls, n: int) -> "SymmetrySpec":
        return cls(((1, -1),) * n)

    @classmethod
    def qudits(cls, n: int, d: int) -> "SymmetrySpec":
        return cls((tuple(range(d)),) * n)

    @property
    def n(self) -> int:
        return len(self.sites)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(len(s) for s in self.sites)

    @property
    def is_qubit(self) -> bool:
        return all(len(s) == 2 for s in self.sites)

    def restrict(self, l: int) -> "SymmetrySpec":
        if not 0 <= l <= self.n:
            raise ValidationError(f"cannot restrict {self.n} sites to {l}")
        return SymmetrySpec(self.sites[:l])

    def to_json(self) -> dict:
        return {"sites": [list(s) for s in self.sites]}

    @classmethod
    def from_json(cls, data: Mapping) -> "SymmetrySpec":
        if "sites" in data:
            return cls(tuple(tuple(s) for s in data["sites"]))
        if "qubits" in data:
            return cls.qubits(int(data["qubits"]))
        if "qudits" in data:
            q = data["qudits"]
            return cls.qudits(int(q["n"]), int(q["d"]))
        raise ValidationError("SymmetrySpec JSON needs 'sites', 'qubits' or 'qudits'")


def _spec(spec: SymmetrySpec | None, n: int) -> SymmetrySpec:
    spec = SymmetrySpec.qubits(n) if spec is None else spec
    if spec.n != n:
        raise ValidationError(f"spec has {spec.n} sites, operator has {n}")
    return spec


@dataclass(frozen=True)
class ChargeVector:
    """Sector traces ``Tr(Pi_q A)`` keyed by total charge q."""

    sectors: dict[int, object]

    def __getitem__(self, q: int):
        return self.sectors[q]

    def values(self) -> list:
        return [self.sectors[q] for q in sorted(self.sectors)]

    def total(self):
        return sum(self.sectors.values())

    def to_json(self) -> dict:
        return {"sectors": {str(q): float(v) for q, v in sorted(self.sectors.items())}}


# -- counting ----------------------------------------------------------------

def _convolve(polys: Iterable[Mapping[int, object]], zero=0) -> dict[int, object]:
    acc: dict[int, object] = {0: 1}
    for p in polys:
        nxt: dict[int, object] = {}
        for q, a in acc.items():
            for c, b in p.items():
                nxt[q + c] = nxt.get(q + c, zero) + a * b
        acc = nxt
    return acc


def sector_multiplicities(spec: SymmetrySpec) -> dict[int, int]:
    """Number of basis states per total charge."""
    counts = _convolve(Counter(s) for s in spec.sites)
    return {q: int(m) for q, m in sorted(counts.items())}


def irrep_count(spec: SymmetrySpec, l: int | None = None) -> int:
    """Distinct total charges on the first ``l`` sites (all sites by default)."""
    sub = spec if l is None else spec.restrict(l)
    return len(sector_multiplicities(sub))


def dim_gap_bound(n: int, k: int, spec: SymmetrySpec | None = None) -> int:
    spec = _spec(spec, n)
    if not 0 <= k <= n:
        raise ValidationError("need 0 <= k <= n")
    return irrep_count(spec, n) - irrep_count(spec, k)


def full_symmetric_dim(spec: SymmetrySpec) -> int:
    return sum(m * m for m in sector_multiplicities(spec).values())


# -- charge vectors ------------------------------------------------------------

def charge_vector(a: PauliSum, spec: SymmetrySpec | None = None) -> ChargeVector:
    """``Tr(Pi_q A)`` per sector from the diagonal part of ``a``.

    Each diagonal string contributes the coefficients of the product of
    per-site polynomials ``t^{c0} +- t^{c1}`` (a signed sector count).
    """
    spec = _spec(spec, a.n)
    if not spec.is_qubit:
        raise ValidationError("Pauli sums need a two-charge (qubit) spec")
    zero = Fraction(0) if a.mode == EXACT else 0.0
    out = {q: zero for q in sector_multiplicities(spec)}
    cache: dict[int, dict[int, int]] = {}
    for p, c in diagonal_part(a).items():
        poly = cache.get(p.code)
        if poly is None:
            polys = []
            for j, (c0, c1) in enumerate(spec.sites):
                sign = -1 if p.letter(j) == "Z" else 1
                polys.append({c0: 1, c1: sign} if c0 != c1 else {c0: 1 + sign})
            poly = cache[p.code] = _convolve(polys)
        for q, m in poly.items():
            if m:
                out[q] += c * m
    return ChargeVector(dict(sorted(out.items())))


def charge_vector_bruteforce(a: PauliSum, spec: SymmetrySpec | None = None) -> ChargeVector:
    """Enumerate all basis states; reference implementation for tests."""
    spec = _spec(spec, a.n)
    zero = Fraction(0) if a.mode == EXACT else 0.0
    out = {q: zero for q in sector_multiplicities(spec)}
    diag = list(diagonal_part(a).items())
    for bits in itertools.product((0, 1), repeat=a.n):
        q = sum(spec.sites[j][b] for j, b in enumerate(bits))
        val = zero
        for p, c in diag:
            s = sum(bits[j] for j in range(a.n) if p.letter(j) == "Z")
            val += -c if s % 2 else c
        out[q] += val
    return ChargeVector(dict(sorted(out.items())))


def character_function(a: PauliSum, theta: float, spec: SymmetrySpec | None = None) -> complex:
    """``Tr(A U(theta))`` with ``U(theta) = (x)_j diag(e^{i c theta})``."""
    cv = charge_vector(a, spec)
    return complex(sum(cmath.exp(1j * q * theta) * float(v) for q, v in cv.sectors.items()))


def xi_functions(n: int, thetas: Sequence[float]) -> np.ndarray:
    """Matrix ``cos^{n-v}(theta) (i sin theta)^v`` for v = 0..n (columns)."""
    th = np.asarray(thetas, dtype=float)[:, None]
    v = np.arange(n + 1)[None, :]
    return np.cos(th) ** (n - v) * (1j * np.sin(th)) ** v


# -- twirl ---------------------------------------------------------------------

# X = a + b, Y = -i a + i b with a = |0><1|, b = |1><0|; exponents of i.
_IN = {("X", 0): 0, ("X", 1): 0, ("Y", 0): 3, ("Y", 1): 1}
# a = (X + iY)/2, b = (X - iY)/2; exponents of i of the numerator.
_OUT = {(0, "X"): 0, (0, "Y"): 1, (1, "X"): 0, (1, "Y"): 3}


def _twirl_string(p: PauliString, deltas: Sequence[int]) -> dict[str, Fraction]:
    flip = [j for j in range(p.n) if p.letter(j) in "XY"]
    if not flip:
        return {p.word: Fraction(1)}
    base = list(p.word)
    out: dict[str, Fraction] = {}
    m = len(flip)
    for pattern in itertools.product("XY", repeat=m):
        # dp: total charge -> counts of i^0..i^3
        dp: dict[int, list[int]] = {0: [1, 0, 0, 0]}
        for j, qch in zip(flip, pattern):
            pch = p.letter(j)
            nxt: dict[int, list[int]] = {}
            for tot, cnt in dp.items():
                for s, dq in ((0, deltas[j]), (1, -deltas[j])):
                    e = _IN[(pch, s)] + _OUT[(s, qch)]
                    row = nxt.setdefault(tot + dq, [0, 0, 0, 0])
                    for k in range(4):
                        row[(k + e) & 3] += cnt[k]
            dp = nxt
        cnt = dp.get(0)
        if not cnt:
            continue
        re, im = cnt[0] - cnt[2], cnt[1] - cnt[3]
        if im:
            raise AssertionError("twirl produced a non-Hermitian term")
        if re:
            w = base[:]
            for j, qch in zip(flip, pattern):
                w[j] = qch
            out["".join(w)] = Fraction(re, 2 ** m)
    return out


def twirl(a: PauliSum, spec: SymmetrySpec | None = None) -> PauliSum:
    """Average ``U(theta) A U(theta)^dagger`` over the symmetry group."""
    spec = _spec(spec, a.n)
    if not spec.is_qubit:
        raise ValidationError("Pauli sums need a two-charge (qubit) spec")
    deltas = [c0 - c1 for c0, c1 in spec.sites]
    acc: dict[str, object] = {}
    for p, c in a.items():
        for w, f in _twirl_string(p, deltas).items():
            acc[w] = acc.get(w, 0) + c * (f if a.mode == EXACT else float(f))
    return PauliSum(a.n, acc, a.mode)


# -- weight-sum test -------------------------------------------------------------

@dataclass(frozen=True)
class SkReport:
    passed: bool
    violations: dict[int, object]

    def to_json(self) -> dict:
        return {"pass": self.passed,
                "violations": {str(y): float(v) for y, v in sorted(self.violations.items())}}


def weight_sums(h_diag: PauliSum) -> dict[int, object]:
    """Sum of Z^b coefficients per Hamming weight of b."""
    if not is_diagonal(h_diag):
        raise ValidationError("operator is not diagonal")
    zero = Fraction(0) if h_diag.mode == EXACT else 0.0
    sums = {y: zero for y in range(h_diag.n + 1)}
    for p, c in h_diag.items():
        sums[len(p.support)] += c
    return sums


def s_k_test(h_diag: PauliSum, k: int, tol: float = 1e-10) -> SkReport:
    """Diagonal H lies in the k-local algebra iff its weight sums vanish above k."""
    sums = weight_sums(h_diag)
    bad = {}
    for y in range(k + 1, h_diag.n + 1):
        v = sums[y]
        if (v != 0) if h_diag.mode == EXACT else abs(v) > tol:
            bad[y] = v
    return SkReport(not bad, bad)


def _in_span(target: Sequence, rows: Sequence[Sequence], exact: bool) -> bool:
    if exact:
        return _linalg.rank(list(rows) + [target]) == _linalg.rank(rows) if rows else all(x == 0 for x in target)
    a = np.array([[float(x) for x in r] for r in rows]) if rows else np.zeros((0, len(target)))
    b = np.array([float(x) for x in target])
    if not rows:
        return bool(np.allclose(b, 0))
    coef, *_ = np.linalg.lstsq(a.T, b, rcond=None)
    return bool(np.linalg.norm(a.T @ coef - b) <= 1e-10 * max(1.0, np.linalg.norm(b)))


def charge_span_test(h: PauliSum, generators: Sequence[PauliSum], spec: SymmetrySpec | None = None) -> bool:
    """Is the charge vector of ``h`` a real combination of the generators' ones?"""
    spec = _spec(spec, h.n)
    target = charge_vector(h, spec).values()
    rows = [charge_vector(g, spec).values() for g in generators]
    return _in_span(target, rows, h.mode == EXACT)


def _local_diag_charge_vectors(spec: SymmetrySpec, k: int) -> list[list[int]]:
    """Charge vectors of single-level projectors on at most k sites."""
    keys = list(sector_multiplicities(spec))
    full = [Counter(s) for s in spec.sites]
    rows = []
    for size in range(0, k + 1):
        for subset in itertools.combinations(range(spec.n), size):
            for levels in itertools.product(*(range(len(spec.sites[j])) for j in subset)):
                polys = list(full)
                for j, lv in zip(subset, levels):
                    polys[j] = {spec.sites[j][lv]: 1}
                poly = _convolve(polys)
                rows.append([poly.get(q, 0) for q in keys])
    return rows


def s_k_dimension(n: int, k: int, spec: SymmetrySpec | None = None) -> int:
    """Dimension of the span of charge vectors of k-local symmetric operators.

    Only diagonal parts matter and every k-local diagonal operator is
    symmetric, so single-level projectors on at most k sites span the set.
    """
    spec = _spec(spec, n)
    if not 0 <= k <= n:
        raise ValidationError("need 0 <= k <= n")
    return _linalg.rank(_local_diag_charge_vectors(spec, k))


# -- trace zeros -------------------------------------------------------------------

@dataclass(frozen=True)
class TraceZeros:
    thetas: list[float]
    pi_multiples: list[Fraction] | None
    non_universal: bool

    def to_json(self) -> dict:
        d = {"thetas": self.thetas, "non_universal": self.non_universal}
        if self.pi_multiples is not None:
            d["pi_multiples"] = [str(f) for f in self.pi_multiples]
        return d


def trace_zero_scan(charges: Sequence[int] | SymmetrySpec, n: int | None = None,
                    k: int | None = None, tol: float = 1e-10) -> TraceZeros:
    """Zeros of ``sum_c e^{i c theta}`` on [0, 2 pi) for one site's charges.

    The flag reports that a zero exists and ``k < n``, in which case the
    k-local algebra is strictly smaller than the full symmetric one.
    """
    if isinstance(charges, SymmetrySpec):
        if len(set(charges.sites)) > 1:
            raise ValidationError("trace_zero_scan needs identical sites")
        n = charges.n if n is None else n
        charges = charges.sites[0]
    cs = sorted(int(c) for c in charges)
    if not cs:
        raise ValidationError("empty charge list")
    exact: list[Fraction] | None = None
    uniq = sorted(set(cs))
    m = len(cs)
    if m == 1:
        exact = []
    elif len(uniq) == m:
        steps = {b - a for a, b in zip(uniq, uniq[1:])}
        if len(steps) == 1:
            s = steps.pop()
            # geometric sum vanishes at theta = 2 pi j / (m s) unless m | j
            exact = [Fraction(2 * j, m * s) for j in range(1, m * s) if j % m]
    if exact is not None:
        thetas = [float(f) * math.pi for f in exact]
    else:
        coeffs = np.zeros(cs[-1] - cs[0] + 1)
        for c in cs:
            coeffs[c - cs[0]] += 1
        roots = np.roots(coeffs[::-1])
        thetas = sorted({round(float(np.angle(z)) % (2 * math.pi), 12)
                         for z in roots if abs(abs(z) - 1) < 1e-8})
        thetas = [t for t in thetas
                  if abs(sum(cmath.exp(1j * c * t) for c in cs)) < max(tol, 1e-8)]
    flag = bool(thetas) and n is not None and k is not None and k < n
    return TraceZeros(thetas, exact, flag)


# -- diagonal tables -----------------------------------------------------------------

def _bits_index(key, n: int) -> int:
    if isinstance(key, str):
        if len(key) != n or set(key) - {"0", "1"}:
            raise ValidationError(f"bad bitstring {key!r}")
        return int(key, 2)
    if isinstance(key, int):
        return key
    bits = tuple(key)
    if len(bits) != n:
        raise ValidationError(f"bad bit tuple {key!r}")
    return int("".join(str(int(b)) for b in bits), 2) if n else 0


def diagonal_table_to_pauli(h: Mapping, n: int, mode: str = EXACT) -> PauliSum:
    """Walsh transform ``h~(b) = 2^-n sum_z (-1)^{b.z} h(z)``; site 0 is the leftmost bit."""
    size = 1 << n
    zero = Fraction(0) if mode == EXACT else 0.0
    vals = [zero] * size
    for key, v in h.items():
        vals[_bits_index(key, n)] = Fraction(v) if mode == EXACT and not isinstance(v, float) else (
            Fraction(str(v)) if mode == EXACT else float(v))
    step = 1
    while step < size:
        for i in range(0, size, 2 * step):
            for j in range(i, i + step):
                a, b = vals[j], vals[j + step]
                vals[j], vals[j + step] = a + b, a - b
        step *= 2
    terms = {}
    for b, v in enumerate(vals):
        if v:
            word = "".join("Z" if (b >> (n - 1 - j)) & 1 else "I" for j in range(n))
            terms[word] = v / size
    return PauliSum(n, terms, mode)


def diagonal_values(a: PauliSum) -> list:
    """``<z|A|z>`` for every basis index z (site 0 most significant)."""
    n = a.n
    size = 1 << n
    zero = Fraction(0) if a.mode == EXACT else 0.0
    vals = [zero] * size
    for p, c in diagonal_part(a).items():
        zmask = int("".join("1" if p.letter(j) == "Z" else "0" for j in range(n)) or "0", 2)
        for z in range(size):
            vals[z] += -c if (z & zmask).bit_count() & 1 else c
    return vals
