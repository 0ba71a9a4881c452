"""Exact algebra of n-qubit Pauli strings and Hermitian Pauli sums.

Words are bit-packed, two bits per site with site 0 in the most significant
position and the codes I=0, X=1, Y=2, Z=3.  Integer order of the packed code
is therefore the lexicographic order of the word under I < X < Y < Z.

A Lie-algebra element ``iH`` is stored through its Hermitian part ``H`` and
:func:`bracket` returns ``i(AB - BA)``, which is again Hermitian.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from typing import Iterable, Iterator, Mapping

from .errors import ValidationError

EXACT = "exact"
FLOAT = "float"
FLOAT_DROP = 1e-12

_LETTERS = "IXYZ"
_CODE = {c: i for i, c in enumerate(_LETTERS)}

# phase exponent e (mod 4) -> i**e
_PHASES = (1, 1j, -1, -1j)


def _lo_mask(n: int) -> int:
    return int("01" * n, 2) if n else 0


def encode(word: str) -> int:
    code = 0
    for ch in word:
        try:
            code = (code << 2) | _CODE[ch]
        except KeyError:
            raise ValidationError(f"bad Pauli letter {ch!r} in {word!r}") from None
    return code


def decode(code: int, n: int) -> str:
    return "".join(_LETTERS[(code >> (2 * (n - 1 - j))) & 3] for j in range(n))


def _xz(code: int, mask: int) -> tuple[int, int]:
    lo = code & mask
    hi = (code >> 1) & mask
    return hi ^ lo, hi


def _mul_codes(a: int, b: int, mask: int) -> tuple[int, int]:
    """Return (phase exponent, code) with a*b = i**e * code."""
    x1, z1 = _xz(a, mask)
    x2, z2 = _xz(b, mask)
    x3, z3 = x1 ^ x2, z1 ^ z2
    e = (x1 & z1).bit_count() + (x2 & z2).bit_count() + 2 * (z1 & x2).bit_count()
    e -= (x3 & z3).bit_count()
    return e & 3, (z3 << 1) | (x3 ^ z3)


@dataclass(frozen=True, slots=True, order=True)
class PauliString:
    """A Pauli word without phase; equality and order follow the word."""

    n: int
    code: int

    @classmethod
    def from_word(cls, word: str) -> "PauliString":
        return cls(len(word), encode(word))

    @property
    def word(self) -> str:
        return decode(self.code, self.n)

    def __str__(self) -> str:
        return self.word

    def letter(self, site: int) -> str:
        return _LETTERS[(self.code >> (2 * (self.n - 1 - site))) & 3]

    @property
    def support(self) -> frozenset[int]:
        return frozenset(j for j in range(self.n) if self.letter(j) != "I")

    @property
    def is_diagonal(self) -> bool:
        x, _ = _xz(self.code, _lo_mask(self.n))
        return x == 0


def mul_pauli(p: PauliString, q: PauliString) -> tuple[complex, PauliString]:
    """Operator product ``p @ q`` as ``(phase, string)``."""
    if p.n != q.n:
        raise ValidationError(f"length mismatch {p.n} vs {q.n}")
    e, code = _mul_codes(p.code, q.code, _lo_mask(p.n))
    return _PHASES[e], PauliString(p.n, code)


def _coerce(value, mode: str):
    if mode == EXACT:
        if isinstance(value, Fraction):
            return value
        if isinstance(value, (int, Rational)):
            return Fraction(value)
        if isinstance(value, float):
            if value != value or value in (float("inf"), float("-inf")):
                raise ValidationError("non-finite coefficient")
            return Fraction(value)
        if isinstance(value, str):
            return Fraction(value)
        raise ValidationError(f"coefficient {value!r} is not rational")
    if isinstance(value, complex):
        raise ValidationError("coefficients must be real")
    return float(value)


class PauliSum:
    """Real linear combination of Pauli strings (a Hermitian operator).

    Coefficients are :class:`fractions.Fraction` in exact mode and ``float``
    in float mode.  Zero terms are never stored.
    """

    __slots__ = ("n", "mode", "_t")

    def __init__(self, n: int, terms: Mapping | None = None, mode: str = EXACT):
        if mode not in (EXACT, FLOAT):
            raise ValidationError(f"unknown mode {mode!r}")
        if n < 0:
            raise ValidationError("negative site count")
        self.n = n
        self.mode = mode
        t: dict[int, object] = {}
        for key, c in (terms or {}).items():
            if isinstance(key, PauliString):
                if key.n != n:
                    raise ValidationError(f"term {key.word} has wrong length for n={n}")
                code = key.code
            else:
                if len(key) != n:
                    raise ValidationError(f"term {key!r} has wrong length for n={n}")
                code = encode(key)
            c = _coerce(c, mode) + t.get(code, 0)
            t[code] = c
        self._t = {k: v for k, v in t.items() if not _negligible(v, mode)}

    @classmethod
    def _raw(cls, n: int, t: dict, mode: str) -> "PauliSum":
        obj = cls.__new__(cls)
        obj.n, obj.mode, obj._t = n, mode, t
        return obj

    @classmethod
    def zero(cls, n: int, mode: str = EXACT) -> "PauliSum":
        return cls._raw(n, {}, mode)

    @classmethod
    def identity(cls, n: int, mode: str = EXACT) -> "PauliSum":
        return cls._raw(n, {0: _coerce(1, mode)}, mode)

    @classmethod
    def single(cls, word: str, coeff=1, mode: str = EXACT) -> "PauliSum":
        return cls(len(word), {word: coeff}, mode)

    # -- views -------------------------------------------------------------
    @property
    def terms(self) -> dict[str, object]:
        return {decode(k, self.n): self._t[k] for k in sorted(self._t)}

    def items(self) -> Iterator[tuple[PauliString, object]]:
        for k in sorted(self._t):
            yield PauliString(self.n, k), self._t[k]

    def coeff(self, word: str | PauliString):
        code = word.code if isinstance(word, PauliString) else encode(word)
        return self._t.get(code, 0 if self.mode == FLOAT else Fraction(0))

    def __len__(self) -> int:
        return len(self._t)

    def __bool__(self) -> bool:
        return bool(self._t)

    def __iter__(self):
        return self.items()

    # -- arithmetic --------------------------------------------------------
    def _check(self, other: "PauliSum") -> None:
        if not isinstance(other, PauliSum):
            raise ValidationError("operand is not a PauliSum")
        if other.n != self.n:
            raise ValidationError(f"site count mismatch {self.n} vs {other.n}")
        if other.mode != self.mode:
            raise ValidationError(f"mode mismatch {self.mode} vs {other.mode}")

    def __add__(self, other: "PauliSum") -> "PauliSum":
        self._check(other)
        t = dict(self._t)
        for k, v in other._t.items():
            t[k] = t.get(k, 0) + v
        return PauliSum._raw(self.n, _prune(t, self.mode), self.mode)

    def __sub__(self, other: "PauliSum") -> "PauliSum":
        return self + (-other)

    def __neg__(self) -> "PauliSum":
        return PauliSum._raw(self.n, {k: -v for k, v in self._t.items()}, self.mode)

    def __mul__(self, scalar) -> "PauliSum":
        if isinstance(scalar, PauliSum):
            raise TypeError("use bracket() or densesim for operator products")
        s = _coerce(scalar, self.mode)
        if s == 0:
            return PauliSum.zero(self.n, self.mode)
        return PauliSum._raw(self.n, _prune({k: v * s for k, v in self._t.items()}, self.mode), self.mode)

    __rmul__ = __mul__

    def __truediv__(self, scalar) -> "PauliSum":
        s = _coerce(scalar, self.mode)
        if s == 0:
            raise ZeroDivisionError("division of PauliSum by zero")
        return self * (1 / s)

    def __eq__(self, other) -> bool:
        if not isinstance(other, PauliSum):
            return NotImplemented
        return self.n == other.n and self._t == other._t

    def __hash__(self):
        return hash((self.n, frozenset(self._t.items())))

    def __repr__(self) -> str:
        if not self._t:
            return f"PauliSum(n={self.n}, 0)"
        body = " + ".join(f"{c}*{w}" for w, c in self.terms.items())
        return f"PauliSum({body})"

    def to_float(self) -> "PauliSum":
        if self.mode == FLOAT:
            return self
        return PauliSum._raw(self.n, _prune({k: float(v) for k, v in self._t.items()}, FLOAT), FLOAT)

    def to_exact(self) -> "PauliSum":
        if self.mode == EXACT:
            return self
        return PauliSum._raw(self.n, {k: Fraction(v) for k, v in self._t.items()}, EXACT)

    def norm1(self) -> float:
        return float(sum(abs(v) for v in self._t.values()))

    def max_abs(self) -> float:
        return float(max((abs(v) for v in self._t.values()), default=0.0))

    def embed(self, n_new: int, sites: Iterable[int] | None = None) -> "PauliSum":
        """Place this operator onto ``n_new`` sites; site j goes to ``sites[j]``."""
        sites = list(range(self.n)) if sites is None else list(sites)
        if len(sites) != self.n or len(set(sites)) != self.n or any(not 0 <= s < n_new for s in sites):
            raise ValidationError("bad embedding sites")
        t = {}
        for p, c in self.items():
            w = ["I"] * n_new
            for j, s in enumerate(sites):
                w[s] = p.letter(j)
            t[encode("".join(w))] = c
        return PauliSum._raw(n_new, t, self.mode)

    def to_json(self) -> dict:
        terms = []
        for w, c in self.terms.items():
            if self.mode == EXACT:
                terms.append({"pauli": w, "num": c.numerator, "den": c.denominator})
            else:
                terms.append({"pauli": w, "coeff": c})
        return {"n": self.n, "mode": self.mode, "terms": terms}

    @classmethod
    def from_json(cls, data: Mapping) -> "PauliSum":
        try:
            n = int(data["n"])
            mode = data.get("mode", EXACT)
            terms: dict[str, object] = {}
            for term in data.get("terms", []):
                w = term["pauli"]
                if "num" in term:
                    c = Fraction(int(term["num"]), int(term.get("den", 1)))
                else:
                    c = term["coeff"]
                    if mode == EXACT:
                        c = Fraction(str(c)) if isinstance(c, float) else Fraction(c)
                terms[w] = _coerce(c, mode) + terms.get(w, 0)
        except (KeyError, TypeError, ZeroDivisionError) as exc:
            raise ValidationError(f"malformed PauliSum JSON: {exc}") from exc
        return cls(n, terms, mode)


def _negligible(v, mode: str) -> bool:
    return v == 0 if mode == EXACT else abs(v) < FLOAT_DROP


def _prune(t: dict, mode: str) -> dict:
    if mode == EXACT:
        return {k: v for k, v in t.items() if v != 0}
    return {k: v for k, v in t.items() if abs(v) >= FLOAT_DROP}


def _same(a: PauliSum, b: PauliSum) -> None:
    a._check(b)


def bracket(a: PauliSum, b: PauliSum) -> PauliSum:
    """Hermitian bracket ``i(AB - BA)``."""
    _same(a, b)
    mask = _lo_mask(a.n)
    out: dict[int, object] = {}
    bx = [(k, v, *_xz(k, mask)) for k, v in b._t.items()]
    for ka, va in a._t.items():
        x1, z1 = _xz(ka, mask)
        w1 = (x1 & z1).bit_count()
        for kb, vb, x2, z2 in bx:
            if ((x1 & z2).bit_count() + (z1 & x2).bit_count()) & 1 == 0:
                continue
            x3, z3 = x1 ^ x2, z1 ^ z2
            e = (w1 + (x2 & z2).bit_count() + 2 * (z1 & x2).bit_count() - (x3 & z3).bit_count()) & 3
            # AB - BA = 2 i^e P for anticommuting strings, e odd; times i
            c = va * vb * (-2 if e == 1 else 2)
            key = (z3 << 1) | (x3 ^ z3)
            out[key] = out.get(key, 0) + c
    return PauliSum._raw(a.n, _prune(out, a.mode), a.mode)


def hs_inner(a: PauliSum, b: PauliSum):
    """Normalized Hilbert-Schmidt inner product ``Tr(A B) / 2**n``."""
    _same(a, b)
    small, big = (a, b) if len(a) <= len(b) else (b, a)
    total = 0 if a.mode == FLOAT else Fraction(0)
    for k, v in small._t.items():
        w = big._t.get(k)
        if w is not None:
            total += v * w
    return total


def support(a: PauliSum) -> frozenset[int]:
    sites: set[int] = set()
    for p, _ in a.items():
        sites |= p.support
    return frozenset(sites)


def diagonal_part(a: PauliSum) -> PauliSum:
    mask = _lo_mask(a.n)
    t = {k: v for k, v in a._t.items() if _xz(k, mask)[0] == 0}
    return PauliSum._raw(a.n, t, a.mode)


def is_diagonal(a: PauliSum) -> bool:
    mask = _lo_mask(a.n)
    return all(_xz(k, mask)[0] == 0 for k in a._t)


def _word(n: int, letters: Mapping[int, str]) -> str:
    w = ["I"] * n
    for j, ch in letters.items():
        w[j] = ch
    return "".join(w)


def make_generator(kind: str, sites: Iterable[int], n: int, mode: str = EXACT) -> PauliSum:
    """Named generators: ``R`` hopping, ``T`` its rotated partner, ``Zmono`` and ``Zlocal``.

    R_rs = (X_r X_s + Y_r Y_s)/2 and T_rs = (X_r Y_s - Y_r X_s)/2 = (i/2)[Z_r, R_rs].
    """
    sites = [int(s) for s in sites]
    if len(set(sites)) != len(sites):
        raise ValidationError(f"repeated sites {sites}")
    if any(not 0 <= s < n for s in sites):
        raise ValidationError(f"sites {sites} out of range for n={n}")
    half = Fraction(1, 2)
    if kind in ("R", "T"):
        if len(sites) != 2:
            raise ValidationError(f"{kind} needs exactly two sites")
        r, s = sites
        if kind == "R":
            terms = {_word(n, {r: "X", s: "X"}): half, _word(n, {r: "Y", s: "Y"}): half}
        else:
            terms = {_word(n, {r: "X", s: "Y"}): half, _word(n, {r: "Y", s: "X"}): -half}
        return PauliSum(n, terms, mode)
    if kind == "Zmono":
        return PauliSum(n, {_word(n, {j: "Z" for j in sites}): 1}, mode)
    if kind == "Zlocal":
        if len(sites) != 1:
            raise ValidationError("Zlocal needs one site")
        return PauliSum(n, {_word(n, {sites[0]: "Z"}): 1}, mode)
    if kind == "I":
        return PauliSum.identity(n, mode)
    raise ValidationError(f"unknown generator kind {kind!r}")


def charge_operator(n: int, site_charges=None, mode: str = EXACT) -> PauliSum:
    """Total charge as a Pauli sum; qubit site charges ``(c0, c1)`` for |0>, |1>."""
    if site_charges is None:
        site_charges = [(1, -1)] * n
    if len(site_charges) != n:
        raise ValidationError("charge list length differs from n")
    terms: dict[str, object] = {}
    const = Fraction(0)
    for j, ch in enumerate(site_charges):
        if len(ch) != 2:
            raise ValidationError("Pauli sums need two charges (one qubit) per site")
        c0, c1 = ch
        const += Fraction(c0 + c1, 2)
        terms[_word(n, {j: "Z"})] = Fraction(c0 - c1, 2)
    terms["I" * n] = const
    return PauliSum(n, terms, mode)


def is_symmetric(a: PauliSum, spec=None, tol: float = 1e-10) -> bool:
    """True iff ``a`` commutes with the total charge of ``spec`` (default: qubit Z charges)."""
    charges = None if spec is None else spec.sites
    if charges is not None and len(charges) != a.n:
        raise ValidationError("spec site count differs from operator")
    q = charge_operator(a.n, charges, a.mode)
    c = bracket(a, q)
    if a.mode == EXACT:
        return not c
    return c.max_abs() <= tol
