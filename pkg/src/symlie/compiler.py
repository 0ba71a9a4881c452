"""Constructive synthesis of symmetric unitaries from hopping interactions.

Pipeline for a diagonal target ``exp(-i H t)`` on n qubits:

1. :func:`diagonal_with_ancilla` telescopes every monomial ``Z^b`` into chain
   operators ``Z^{b_s} - Z^{b_{s-1}} Z_a`` (one per prefix of b) plus a
   ``Z_a`` term.  On the ancilla ``|0>`` sector these act as ``Z^{b_s} - Z^{b_{s-1}}``
   and ``I``.  Each chain operator is a nested bracket of ``R`` couplings
   (:func:`chain_hamiltonian`), so the plan only uses ``{R_rs, Z_a}``.
2. :func:`expand_to_pulses` turns every step into primitive pulses.
3. :func:`swap_route` restricts couplings to a geometry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Any, Callable, Iterable, NamedTuple, Sequence

import numpy as np

from . import densesim
from . import expr as E
from .errors import BudgetExceeded, Unsynthesizable, ValidationError, VerificationError
from .lie_closure import LieBasis, close, member
from .pauli_core import (
    EXACT,
    PauliSum,
    bracket,
    hs_inner,
    is_diagonal,
    is_symmetric,
    make_generator,
)

DEFAULT_MAX_PULSES = 400_000


class Prim(NamedTuple):
    """A primitive coupling: generator name, sites and (qudit) levels."""

    gen: str
    sites: tuple[int, ...]
    levels: tuple[int, ...] = ()

    def to_json(self) -> dict:
        d = {"gen": self.gen, "sites": list(self.sites)}
        if self.levels:
            d["levels"] = list(self.levels)
        return d

    @classmethod
    def from_json(cls, d) -> "Prim":
        return cls(d["gen"], tuple(d["sites"]), tuple(d.get("levels", ())))


# -- systems ---------------------------------------------------------------------

class QubitSystem:
    """Materializes qubit primitives as Pauli sums on ``n + len(ancilla)`` sites."""

    kind = "qubit"

    def __init__(self, n: int, ancilla: Sequence[int] = (), mode: str = EXACT):
        self.n = n
        self.ancilla = tuple(ancilla)
        self.mode = mode
        self.total = n + len(self.ancilla)
        self.dims = (2,) * self.total
        self.algebra = E.PauliAlgebra(self.total, mode)
        self._cache: dict[Prim, PauliSum] = {}

    def op(self, p: Prim) -> PauliSum:
        got = self._cache.get(p)
        if got is None:
            got = self._cache[p] = self._build(p)
        return got

    def _build(self, p: Prim) -> PauliSum:
        g, s = p.gen, p.sites
        if g in ("R", "T"):
            return make_generator(g, s, self.total, self.mode)
        if g in ("Z", "Za"):
            return make_generator("Zlocal", s, self.total, self.mode)
        if g in ("ZZ", "Zmono"):
            return make_generator("Zmono", s, self.total, self.mode)
        if g == "SWAPH":
            # XX + YY + ZZ, the exchange coupling
            return make_generator("R", s, self.total, self.mode) * 2 + make_generator("Zmono", s, self.total, self.mode)
        raise ValidationError(f"unknown qubit primitive {g!r}")

    def matrix(self, p: Prim) -> np.ndarray:
        return densesim.to_matrix(self.op(p))

    # helpers used by the expander
    def bracket(self, a, b):
        return bracket(a, b)

    def inner(self, a, b) -> float:
        return hs_inner(a, b)

    def is_zero(self, a) -> bool:
        return not a

    def norm(self, a) -> float:
        return a.norm1()

    def equal(self, a, b) -> bool:
        return a == b


@dataclass
class Step:
    """One factor ``exp(-i H t)`` of a plan."""

    hamiltonian: Any
    duration: float
    prim: Prim | None = None
    expr: E.Expr | None = None

    @property
    def cache_key(self):
        return self.prim

    def to_json(self) -> dict:
        if self.prim is not None:
            d = self.prim.to_json()
            d["duration"] = float(self.duration)
            return d
        d = {"duration": float(self.duration)}
        if isinstance(self.hamiltonian, PauliSum):
            d["hamiltonian"] = self.hamiltonian.to_json()
        if self.expr is not None:
            d["expr"] = E.to_json(self.expr, _key_json)
        return d


def _key_json(k):
    return k.to_json() if isinstance(k, Prim) else k


def _key_parse(k):
    return Prim.from_json(k) if isinstance(k, dict) else k


@dataclass
class CircuitPlan:
    n: int
    ancilla: list[int]
    level: str
    steps: list[Step]
    epsilon: float | None = None
    phase: float = 0.0
    primitives: str = "R+Za"
    scheme: str | None = None
    dims: tuple[int, ...] = ()
    report: dict = field(default_factory=dict)
    system: Any = field(default=None, repr=False, compare=False)

    @property
    def total_sites(self) -> int:
        return self.n + len(self.ancilla)

    @property
    def dim(self) -> int:
        return int(np.prod(self.dims)) if self.dims else 2 ** self.total_sites

    def __len__(self) -> int:
        return len(self.steps)

    def to_json(self) -> dict:
        d = {"n": self.n, "ancilla": list(self.ancilla), "level": self.level,
             "epsilon": self.epsilon, "primitives": self.primitives,
             "steps": [s.to_json() for s in self.steps], "phase": float(self.phase)}
        if self.scheme:
            d["scheme"] = self.scheme
        if self.dims and any(x != 2 for x in self.dims):
            d["dims"] = list(self.dims)
        if self.report:
            d["report"] = self.report
        return d

    @classmethod
    def from_json(cls, data, system=None) -> "CircuitPlan":
        try:
            n = int(data["n"])
            anc = [int(a) for a in data.get("ancilla", [])]
            dims = tuple(data.get("dims", ()))
            system = system or QubitSystem(n, anc)
            steps = []
            for s in data["steps"]:
                if "gen" in s:
                    p = Prim.from_json(s)
                    steps.append(Step(system.op(p), float(s["duration"]), p))
                else:
                    h = PauliSum.from_json(s["hamiltonian"])
                    ex = E.from_json(s["expr"], _key_parse) if "expr" in s else None
                    steps.append(Step(h, float(s["duration"]), None, ex))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed plan JSON: {exc}") from exc
        return cls(n, anc, data.get("level", "pulse"), steps, data.get("epsilon"),
                   float(data.get("phase", 0.0)), data.get("primitives", "R+Za"),
                   data.get("scheme"), dims)


# -- chain identities ----------------------------------------------------------------

@dataclass(frozen=True)
class ChainSpec:
    sites: tuple[int, ...]
    sign: int = 0


@dataclass
class ChainResult:
    chain: ChainSpec
    expr: E.Expr
    realized: PauliSum
    sign: int


def chain_target(sites: Sequence[int], total: int, mode: str = EXACT) -> PauliSum:
    """``(Z_{r1} - Z_{rv}) Z_{r1} ... Z_{rv}`` expanded with Z^2 = I."""
    r1, rv = sites[0], sites[-1]
    rest1 = [s for s in sites if s != r1]
    restv = [s for s in sites if s != rv]
    return (make_generator("Zmono", rest1, total, mode)
            - make_generator("Zmono", restv, total, mode))


def chain_tree(sites: Sequence[int], r_leaf: Callable[[int, int], E.Expr],
               z_leaf: Callable[[int], E.Expr]) -> E.Expr:
    """Nested Hermitian-bracket tree for the chain through ``sites``.

    Plain commutators: for v odd ``[R_{1v},[R_{v,v-1},...,[R_{32},R_{21}]]]``,
    for v even ``[R_{1v},[R_{v,v-1},...,[R_{21}, Z_1/2]]]``.  The tree uses the
    Hermitian bracket, so an even number N of plain commutators contributes
    ``(-i)^N = (-1)^{N/2}``, folded into the top-level scale.
    """
    r = list(sites)
    v = len(r)
    if v % 2:
        node: E.Expr = E.Bracket(r_leaf(r[2], r[1]), r_leaf(r[1], r[0]))
        start = 3
    else:
        node = E.Bracket(r_leaf(r[1], r[0]), E.Scale(Fraction(1, 2), z_leaf(r[0])))
        start = 2
    count = 1
    for k in range(start, v):
        node = E.Bracket(r_leaf(r[k], r[k - 1]), node)
        count += 1
    node = E.Bracket(r_leaf(r[0], r[v - 1]), node)
    count += 1
    return E.Scale(Fraction((-1) ** (count // 2)), node)


def chain_hamiltonian(sites: Sequence[int], total: int, ancilla: int | None = None,
                      mode: str = EXACT) -> ChainResult:
    """R-bracket chain realizing ``c_v (Z_{r1} - Z_{rv}) Z_{r1}...Z_{rv}``; c_v found by evaluation."""
    r = [int(s) for s in sites]
    v = len(r)
    if v < 2:
        raise ValidationError("a chain needs at least two sites")
    if len(set(r)) != v or any(not 0 <= s < total for s in r):
        raise ValidationError(f"bad chain sites {r}")
    tree = chain_tree(r, lambda a, b: E.Leaf(Prim("R", (a, b))),
                      lambda a: E.Leaf(Prim("Za" if a == ancilla else "Z", (a,))))
    system = QubitSystem(total, (), mode)
    realized = E.evaluate(tree, system.op, system.algebra)
    target = chain_target(r, total, mode)
    if realized == target:
        c = 1
    elif realized == -target:
        c = -1
    else:
        raise VerificationError(f"chain identity failed for sites {r}")
    return ChainResult(ChainSpec(tuple(r), c), tree, realized, c)


# -- diagonal synthesis with one ancilla -------------------------------------------------

def _sorted_support(word: str) -> tuple[int, ...]:
    return tuple(j for j, ch in enumerate(word) if ch == "Z")


def diagonal_with_ancilla(h_diag: PauliSum, t: float = 1.0, ancilla: int | None = None,
                          verify_membership: bool | None = None) -> CircuitPlan:
    """Hamiltonian-level plan for ``exp(-i H t)`` using R couplings and Z on one ancilla.

    Each monomial Z^b with sites j_1 < ... < j_w is written as
    ``I + sum_s (Z^{b_s} - Z^{b_{s-1}})`` with prefixes b_s = {j_1..j_s}; the
    difference is realized by the chain ``(a, j_1, ..., j_s)`` as
    ``Z^{b_s} - Z^{b_{s-1}} Z_a`` and the identity by ``Z_a``.  All steps are
    diagonal and commute, so the factorization is exact.
    """
    if not is_diagonal(h_diag):
        raise ValidationError("target is not diagonal")
    n = h_diag.n
    a = n if ancilla is None else ancilla
    if a != n:
        raise ValidationError("the ancilla must be the site after the system (index n)")
    total = n + 1
    mode = h_diag.mode
    prefix_coeff: dict[tuple[int, ...], object] = {}
    ident = 0
    for p, c in h_diag.items():
        sup = _sorted_support(p.word)
        ident += c
        for s in range(1, len(sup) + 1):
            key = sup[:s]
            prefix_coeff[key] = prefix_coeff.get(key, 0) + c
    steps: list[Step] = []
    system = QubitSystem(n, (a,), mode)
    order = sorted(prefix_coeff, key=lambda b: (-len(b), b))
    for b in order:
        c = prefix_coeff[b]
        if c == 0:
            continue
        ch = chain_hamiltonian((a,) + b, total, ancilla=a, mode=mode)
        # realized = sign * (Z^{b} - Z^{b'} Z_a)
        ham = ch.realized * ch.sign
        steps.append(Step(ham, float(c) * t, None, E.Scale(Fraction(ch.sign), ch.expr)))
    if ident != 0:
        steps.append(Step(system.op(Prim("Za", (a,))), float(ident) * t, Prim("Za", (a,))))
    plan = CircuitPlan(n, [a], "hamiltonian", steps, primitives="R+Za")
    if verify_membership is None:
        verify_membership = total <= 5
    for st in steps:
        if st.expr is not None:
            got = E.evaluate(st.expr, system.op, system.algebra)
            if got != st.hamiltonian:
                raise VerificationError("step tree does not evaluate to its hamiltonian")
        if not is_symmetric(st.hamiltonian):
            raise VerificationError("non-symmetric step")
    if verify_membership and steps:
        alg = primitive_algebra(n, a, mode)
        for st in steps:
            if not member(st.hamiltonian, alg).member:
                raise VerificationError("step is not in the primitive algebra")
    plan.report["membership_checked"] = bool(verify_membership and steps)
    return plan


_PRIM_ALG: dict = {}


def primitive_algebra(n: int, a: int | None = None, mode: str = EXACT) -> LieBasis:
    """Closure of ``{R_rs : all pairs} + {Z_a}`` on n system qubits plus the ancilla."""
    a = n if a is None else a
    key = (n, a, mode)
    if key not in _PRIM_ALG:
        total = n + 1
        gens = [make_generator("R", (r, s), total, mode)
                for r in range(total) for s in range(r + 1, total)]
        gens.append(make_generator("Zlocal", (a,), total, mode))
        _PRIM_ALG[key] = close(gens)
    return _PRIM_ALG[key]


# -- synthesis from a Lie basis ------------------------------------------------------------

def identify_primitive(op: PauliSum) -> Prim | None:
    """Recognize R_rs, T_rs, Z_j or a Z monomial."""
    terms = op.terms
    n = op.n
    if len(terms) == 1:
        (w, c), = terms.items()
        if c == 1 and set(w) <= {"I", "Z"} and "Z" in w:
            sites = tuple(j for j, ch in enumerate(w) if ch == "Z")
            return Prim("Z" if len(sites) == 1 else "Zmono", sites)
    if len(terms) == 2:
        for w in terms:
            sites = tuple(j for j, ch in enumerate(w) if ch != "I")
            if len(sites) == 2:
                for g in ("R", "T"):
                    for s in (sites, sites[::-1]):
                        if make_generator(g, s, n, op.mode) == op:
                            return Prim(g, s)
    return None


def synthesize_hamiltonian(h: PauliSum, basis: LieBasis, t: float = 1.0) -> CircuitPlan:
    """One hamiltonian-level step whose tree is the provenance-weighted sum."""
    m = member(h, basis)
    if not m.member:
        raise Unsynthesizable("target is not in the Lie algebra", residual=m.residual)
    labels: dict[int, Any] = {}
    for i, g in enumerate(basis.generators):
        p = identify_primitive(g)
        labels[i] = p if p is not None else Prim("G", (i,))
    tree = _relabel(m.expression(basis), labels)
    steps = []
    if h:
        direct = next((i for i, g in enumerate(basis.generators) if g == h), None)
        if direct is not None and isinstance(labels[direct], Prim) and labels[direct].gen != "G":
            steps.append(Step(h, t, labels[direct]))
        else:
            steps.append(Step(h, t, None, tree))
    plan = CircuitPlan(h.n, [], "hamiltonian", steps, primitives="generators")
    plan.report["generators"] = [g.to_json() for g in basis.generators]
    return plan


def _relabel(node: E.Expr, labels) -> E.Expr:
    if isinstance(node, E.Leaf):
        return E.Leaf(labels[node.key])
    if isinstance(node, E.Bracket):
        return E.Bracket(_relabel(node.left, labels), _relabel(node.right, labels))
    if isinstance(node, E.Scale):
        return E.Scale(node.coeff, _relabel(node.child, labels))
    return E.Sum(tuple(_relabel(k, labels) for k in node.children))


# -- pulse expansion --------------------------------------------------------------------------

Pulse = tuple  # (Prim, duration)


class _Expander:
    """Recursive expansion of expression trees into primitive pulses.

    Bracket nodes use an exact conjugation whenever one operand rotates the
    other in a plane (``ad_A^2 B = -lambda^2 B``); then
    ``i[A,B] = -lambda U B U^dagger`` with ``U = exp(-i A pi/(2 lambda))``.
    Otherwise a symmetric pair of group commutators is used.
    """

    def __init__(self, system, scheme: str, max_pulses: int, resolve=None):
        self.system = system
        self.scheme = scheme
        self.max_pulses = max_pulses
        self.resolve = resolve or system.op
        self.values: dict[int, Any] = {}
        self.model_error = 0.0
        self.counts = {"conjugation": 0, "groupcomm": 0, "trotter": 0}
        self._rot: dict = {}

    def value(self, node: E.Expr):
        v = self.values.get(id(node))
        if v is None:
            v = E.evaluate(node, self.resolve, self.system.algebra)
            self.values[id(node)] = v
        return v

    def rotation(self, a_node: E.Expr, b_node: E.Expr):
        """How ``A`` rotates ``B`` under ``ad_A = i[A, .]``.

        ``("zero",)`` if they commute; ``("single", lam)`` if
        ``ad_A^2 B = -lam^2 B``; ``("double", lam)`` if ``ad_A^3 B = -lam^2 ad_A B``
        and the ad_A-invariant part ``B + ad_A^2 B / lam^2`` commutes with ``ad_A B``.
        """
        key = (id(a_node), id(b_node))
        if key in self._rot:
            return self._rot[key]
        A, B = self.value(a_node), self.value(b_node)
        sysm = self.system
        out = None
        c1 = sysm.bracket(A, B)
        if sysm.is_zero(c1):
            out = ("zero",)
        else:
            c2 = sysm.bracket(A, c1)
            mu = _ratio(sysm, c2, B)
            if mu > 0 and sysm.equal(c2, B * (-mu)):
                out = ("single", math.sqrt(float(mu)))
            else:
                c3 = sysm.bracket(A, c2)
                nu = _ratio(sysm, c3, c1)
                if nu > 0 and sysm.equal(c3, c1 * (-nu)):
                    b0 = B + c2 * (1 / nu if isinstance(nu, float) else Fraction(1) / nu)
                    if sysm.is_zero(sysm.bracket(b0, c1)):
                        out = ("double", math.sqrt(float(nu)))
        self._rot[key] = out
        return out

    def pulses(self, node: E.Expr, t: float, eps: float) -> list[Pulse]:
        if t == 0:
            return []
        if isinstance(node, E.Leaf):
            return [(node.key, t)]
        if isinstance(node, E.Scale):
            return self.pulses(node.child, float(node.coeff) * t, eps)
        if isinstance(node, E.Sum):
            return self._sum(node, t, eps)
        return self._bracket(node, t, eps)

    def _check(self, seq):
        if len(seq) > self.max_pulses:
            raise BudgetExceeded(f"pulse count exceeds {self.max_pulses}")
        return seq

    def _bracket(self, node: E.Bracket, t: float, eps: float) -> list[Pulse]:
        a, b = node.left, node.right
        if self.scheme != "groupcomm":
            for rot, other, sign in ((a, b, 1.0), (b, a, -1.0)):
                how = self.rotation(rot, other)
                if how and how[0] == "zero":
                    return []
                if how and how[0] == "single":
                    self.counts["conjugation"] += 1
                    return self._conjugate(rot, other, math.pi / (2 * how[1]), -how[1] * t * sign, eps)
            for rot, other, sign in ((a, b, 1.0), (b, a, -1.0)):
                how = self.rotation(rot, other)
                if how and how[0] == "double":
                    lam, ts = how[1], t * sign
                    s = math.pi / (2 * lam)
                    self.counts["conjugation"] += 2
                    return (self._conjugate(rot, other, s, -lam * ts / 2, eps)
                            + self._conjugate(rot, other, -s, lam * ts / 2, eps))
        return self._groupcomm(a, b, t, eps)

    def _conjugate(self, a, b, s: float, tau: float, eps: float) -> list[Pulse]:
        """``U exp(-i B tau) U^dagger`` with ``U = exp(-i A s)``."""
        out = self.pulses(a, -s, eps) + self.pulses(b, tau, eps) + self.pulses(a, s, eps)
        return self._check(out)

    def _groupcomm(self, a, b, t: float, eps: float) -> list[Pulse]:
        """``exp(-i i[A,B] t) = exp([A,B] t)`` from balanced group commutators.

        ``W(y) = e^{iBy} e^{iAy} e^{-iBy} e^{-iAy} = exp(y^2 [A,B] + O(y^3))`` and the
        cubic terms cancel in ``W(y) W(-y)``.  For ``t < 0`` A and B swap roles.
        Model error per step ``K x^4`` with ``K = |A||B|(|A|+|B|)^2``, x^2 = |t|/r.
        """
        if t < 0:
            a, b, t = b, a, -t
        na, nb = self.system.norm(self.value(a)), self.system.norm(self.value(b))
        K = na * nb * (na + nb) ** 2
        r = max(1, math.ceil(2 * K * t * t / eps))
        x = math.sqrt(t / r)
        y = x / math.sqrt(2)
        self.counts["groupcomm"] += 1
        inner_eps = eps / (32 * r)

        def W(yy):
            # time order: A(+y), B(+y), A(-y), B(-y)
            return (self.pulses(a, yy, inner_eps) + self.pulses(b, yy, inner_eps)
                    + self.pulses(a, -yy, inner_eps) + self.pulses(b, -yy, inner_eps))

        # W(-y) is applied after W(y) (operator order W(y) W(-y) acts W(-y) first)
        one = W(-y) + W(y)
        if len(one) * r > self.max_pulses:
            raise BudgetExceeded(f"group commutator needs {len(one) * r} pulses",
                                 achievable=2 * K * t * t * len(one) / self.max_pulses)
        self.model_error += K * t * t / r
        return one * r

    def _sum(self, node: E.Sum, t: float, eps: float) -> list[Pulse]:
        kids = [k for k in node.children]
        if not kids:
            return []
        vals = [self.value(k) for k in kids]
        commuting = all(self.system.is_zero(self.system.bracket(vals[i], vals[j]))
                        for i in range(len(kids)) for j in range(i + 1, len(kids)))
        if commuting or len(kids) == 1:
            out = []
            for k in kids:
                out += self.pulses(k, t, eps / len(kids))
            return self._check(out)
        norms = [self.system.norm(v) for v in vals]
        tot = sum(norms)
        C = sum(2 * norms[i] * norms[j] for i in range(len(kids)) for j in range(i + 1, len(kids))) * tot / 12
        r = max(1, math.ceil(math.sqrt(2 * C * abs(t) ** 3 / eps)))
        self.counts["trotter"] += 1
        self.model_error += C * abs(t) ** 3 / r ** 2
        inner_eps = eps / (4 * r * len(kids))
        dt = t / r
        half = [self.pulses(k, dt / 2, inner_eps) for k in kids]
        layer = []
        for h in half:
            layer += h
        for h in reversed(half):
            layer += h
        if len(layer) * r > self.max_pulses:
            raise BudgetExceeded(f"Trotter expansion needs {len(layer) * r} pulses")
        return layer * r


def _ratio(system, num, den):
    """Least-squares ``-<num, den>/<den, den>``."""
    dd = system.inner(den, den)
    if not dd:
        return 0
    return -system.inner(num, den) / dd


def _merge(pulses: Iterable[Pulse], tol: float = 1e-15) -> list[Pulse]:
    out: list[list] = []
    for p, d in pulses:
        if out and out[-1][0] == p:
            out[-1][1] += d
        else:
            out.append([p, d])
    return [(p, d) for p, d in out if abs(d) > tol]


def expand_to_pulses(plan: CircuitPlan, epsilon: float = 1e-2, scheme: str = "trotter2",
                     system=None, max_pulses: int = DEFAULT_MAX_PULSES,
                     target=None, verify: bool = True) -> CircuitPlan:
    """Primitive pulse sequence for a hamiltonian-level plan.

    ``scheme='trotter2'`` uses exact conjugations for brackets where possible
    and symmetric Trotter splitting for non-commuting sums; ``'groupcomm'``
    forces group commutators for every bracket.  When ``verify`` is set the
    pulse plan is simulated against the hamiltonian-level plan and the
    repetition counts are doubled until the measured error is within ``epsilon``.
    """
    if scheme not in ("trotter2", "groupcomm"):
        raise ValidationError(f"unknown scheme {scheme!r}")
    system = system or plan.system or QubitSystem(plan.n, plan.ancilla)
    if plan.level == "pulse" or all(s.prim is not None for s in plan.steps):
        out = replace(plan, level="pulse", epsilon=epsilon, scheme=scheme,
                      steps=list(plan.steps), report=dict(plan.report))
        out.report.setdefault("model_error", 0.0)
        return out
    budget = epsilon
    for attempt in range(6):
        ex = _Expander(system, scheme, max_pulses)
        seq: list[Pulse] = []
        nsteps = max(1, len(plan.steps))
        for st in plan.steps:
            if st.prim is not None:
                seq.append((st.prim, st.duration))
            elif st.expr is not None:
                seq += ex.pulses(st.expr, st.duration, budget / (2 * nsteps))
            else:
                raise ValidationError("hamiltonian step without provenance cannot be expanded")
            if len(seq) > max_pulses:
                raise BudgetExceeded(f"pulse count exceeds {max_pulses}")
        seq = _merge(seq)
        steps = [Step(system.op(p), d, p) for p, d in seq]
        out = CircuitPlan(plan.n, list(plan.ancilla), "pulse", steps, epsilon, plan.phase,
                          plan.primitives, scheme, plan.dims,
                          {"model_error": ex.model_error, "expansions": dict(ex.counts),
                           "pulses": len(steps)}, system)
        if not verify:
            return out
        ref = target if target is not None else densesim.run_plan(plan, dim=plan.dim).matrix
        err = _plan_error(out, ref)
        out.report["measured_error"] = err
        if err <= epsilon:
            return out
        budget /= 4
    raise BudgetExceeded(f"could not reach epsilon={epsilon}; measured {err:.3e}", achievable=err)


def _plan_error(plan: CircuitPlan, ref: np.ndarray) -> float:
    u = densesim.run_plan(plan, dim=plan.dim).matrix
    if plan.ancilla:
        dims = plan.dims or (2,) * plan.total_sites
        blk, leak = densesim.ancilla_block(u, plan.ancilla[0], dims)
        rblk, _ = densesim.ancilla_block(ref, plan.ancilla[0], dims)
        return max(densesim.distance(blk, rblk), leak)
    return densesim.distance(u, ref)


# -- verification ------------------------------------------------------------------------------

@dataclass
class VerifyReport:
    distance: float
    leakage: float
    passed: bool
    tolerance: float
    phase: float

    def to_json(self) -> dict:
        return {"distance": self.distance, "leakage": self.leakage, "pass": self.passed,
                "tolerance": self.tolerance, "phase": self.phase}


def target_unitary(h, t: float) -> np.ndarray:
    return densesim.expm_unitary(h, t).matrix


def verify_plan(plan: CircuitPlan, target: np.ndarray, tol: float | None = None) -> VerifyReport:
    """Compare the plan's unitary (ancilla |0> sector if any) with ``target``."""
    tol = plan.epsilon if tol is None else tol
    if tol is None:
        tol = 1e-10
    u = densesim.run_plan(plan, dim=plan.dim).matrix
    if plan.ancilla:
        dims = plan.dims or (2,) * plan.total_sites
        blk, leak = densesim.ancilla_block(u, plan.ancilla[0], dims)
    else:
        blk, leak = u, 0.0
    if blk.shape != target.shape:
        raise ValidationError(f"target shape {target.shape} does not match sector {blk.shape}")
    dist = densesim.distance(blk, target)
    w = np.trace(blk @ target.conj().T)
    phase = float(np.angle(w)) if abs(w) > 1e-12 else 0.0
    return VerifyReport(dist, leak, dist <= tol and leak <= tol, tol, phase)


# -- geometry --------------------------------------------------------------------------------

GEOMETRIES = ("none", "chain-star", "chain-zz")


def _inverse(seq: Sequence[Pulse]) -> list[Pulse]:
    return [(p, -d) for p, d in reversed(seq)]


def _relabel_prim(p: Prim, perm: dict[int, int]) -> Prim:
    return Prim(p.gen, tuple(perm.get(s, s) for s in p.sites), p.levels)


def _relabel_expr(node: E.Expr, perm: dict[int, int]) -> E.Expr:
    if isinstance(node, E.Leaf):
        return E.Leaf(_relabel_prim(node.key, perm)) if isinstance(node.key, Prim) else node
    if isinstance(node, E.Bracket):
        return E.Bracket(_relabel_expr(node.left, perm), _relabel_expr(node.right, perm))
    if isinstance(node, E.Scale):
        return E.Scale(node.coeff, _relabel_expr(node.child, perm))
    return E.Sum(tuple(_relabel_expr(k, perm) for k in node.children))


def star_allowed(p: Prim, ancilla: int | None) -> bool:
    """Nearest-neighbour couplings on the system chain, any site to the ancilla, Z on the ancilla."""
    s = p.sites
    if len(s) == 1:
        return p.gen == "Za" or (ancilla is not None and s[0] == ancilla)
    if len(s) != 2 or p.gen not in ("R", "T"):
        return False
    if ancilla in s:
        return True
    return abs(s[0] - s[1]) == 1


def _path_order(step_prims: Iterable[Prim], ancilla) -> list[int] | None:
    """System sites of the system-system couplings, in path order; None if not a simple path."""
    adj: dict[int, set] = {}
    for p in step_prims:
        if len(p.sites) == 2 and ancilla not in p.sites:
            x, y = p.sites
            adj.setdefault(x, set()).add(y)
            adj.setdefault(y, set()).add(x)
    if not adj:
        return []
    if any(len(v) > 2 for v in adj.values()):
        return None
    ends = [k for k, v in adj.items() if len(v) == 1]
    if len(ends) != 2:
        return None
    order, prev = [min(ends)], None
    while True:
        nxt = [y for y in adj[order[-1]] if y != prev]
        if not nxt:
            break
        prev = order[-1]
        order.append(nxt[0])
    return order if len(order) == len(adj) else None


def _arrangement_swaps(n: int, path: list[int]) -> tuple[list[tuple[int, int]], dict[int, int]]:
    """Adjacent transpositions that bring ``path`` onto consecutive positions.

    Returns the swaps in application order and the final position of every site.
    """
    s = len(path)
    q0 = min(min(path), n - s)
    others = [x for x in range(n) if x not in path]
    target = others[:q0] + list(path) + others[q0:]
    line = list(range(n))
    swaps = []
    for i, x in enumerate(target):
        k = line.index(x)
        while k > i:
            line[k - 1], line[k] = line[k], line[k - 1]
            swaps.append((k - 1, k))
            k -= 1
    return swaps, {x: i for i, x in enumerate(line)}


class BlockRouter:
    """Routes whole hamiltonian-level steps onto a nearest-neighbour chain plus ancilla star.

    A step whose system-system couplings form a path is conjugated by a
    permutation that places the path on consecutive sites.  Each swap is a
    block that is exact on the ancilla |0> sector, so routing happens between
    sector-exact blocks and never inside a nested bracket.
    """

    def __init__(self, n: int, ancilla: int, system, swap_block: Callable[[int, int], list[Pulse]],
                 allowed: Callable[[Prim], bool] | None = None):
        self.n = n
        self.ancilla = ancilla
        self.system = system
        self.swap_block = swap_block
        self.allowed = allowed or (lambda p: star_allowed(p, ancilla))

    def route(self, st: Step, expand: Callable[[Step], list[Pulse]]) -> list[Pulse]:
        prims = [st.prim] if st.prim is not None else [k for k in E.leaves(st.expr) if isinstance(k, Prim)]
        if st.prim is None and len(prims) != len(E.leaves(st.expr)):
            raise ValidationError("step has non-primitive leaves")
        if all(self.allowed(p) for p in prims):
            return expand(st)
        path = _path_order(prims, self.ancilla)
        if path is None:
            raise ValidationError("step couplings do not form a routable chain")
        swaps, perm = _arrangement_swaps(self.n, path)
        if st.prim is not None:
            moved = Step(None, st.duration, _relabel_prim(st.prim, perm))
            moved.hamiltonian = self.system.op(moved.prim)
        else:
            ex = _relabel_expr(st.expr, perm)
            moved = Step(E.evaluate(ex, self.system.op, self.system.algebra), st.duration, None, ex)
        if not all(self.allowed(p) for p in ([moved.prim] if moved.prim else E.leaves(moved.expr))):
            raise ValidationError("geometry cannot host the step after routing")
        forward: list[Pulse] = []
        for i, j in swaps:
            forward += self.swap_block(i, j)
        return forward + expand(moved) + _inverse(forward)


class _PulseRouter:
    """Pulse-level routing with swaps built from system-only couplings (chain-zz)."""

    def __init__(self, plan: CircuitPlan):
        self.plan = plan
        self.anc = plan.ancilla[0] if plan.ancilla else None
        self.line = ([self.anc] if self.anc is not None else []) + list(range(plan.n))
        self.pos = {s: i for i, s in enumerate(self.line)}

    def allowed(self, p: Prim) -> bool:
        s = p.sites
        if len(s) == 1:
            return p.gen in ("Za", "Z")
        if len(s) != 2 or p.gen not in ("R", "T", "ZZ", "Zmono"):
            return False
        return abs(self.pos[s[0]] - self.pos[s[1]]) == 1

    def swap(self, i: int, j: int) -> list[Pulse]:
        """exp(i pi/4 (XX+YY+ZZ)) = e^{i pi/4} SWAP, an exact unitary on the full space."""
        return [(Prim("R", (i, j)), -math.pi / 2), (Prim("ZZ", (i, j)), -math.pi / 4)]

    def route(self, p: Prim, d: float) -> list[Pulse]:
        if self.allowed(p):
            return [(p, d)]
        if len(p.sites) != 2 or any(s not in self.pos for s in p.sites):
            raise ValidationError(f"chain-zz cannot host {p.gen} on {p.sites}")
        a, b = p.sites
        fixed, moving = (a, b) if self.pos[a] < self.pos[b] else (b, a)
        if moving == self.anc:
            fixed, moving = moving, fixed
        pf, pm = self.pos[fixed], self.pos[moving]
        step = -1 if pm > pf else 1
        forward: list[Pulse] = []
        cur = pm
        while abs(cur - pf) > 1:
            i, j = sorted((self.line[cur], self.line[cur + step]))
            forward += self.swap(i, j)
            cur += step
        moved = Prim(p.gen, tuple({fixed: fixed, moving: self.line[cur]}[s] for s in p.sites), p.levels)
        if not self.allowed(moved):
            raise ValidationError(f"chain-zz cannot host {p.gen}")
        return forward + [(moved, d)] + _inverse(forward)


def _expand_step(system, scheme: str, eps: float, max_pulses: int) -> Callable[[Step], list[Pulse]]:
    def run(st: Step) -> list[Pulse]:
        if st.prim is not None:
            return [(st.prim, st.duration)]
        ex = _Expander(system, scheme, max_pulses)
        return ex.pulses(st.expr, st.duration, eps)
    return run


def qubit_star_swap(n: int, system: QubitSystem) -> Callable[[int, int], list[Pulse]]:
    """Swap block for the ancilla-star geometry: R pulse plus an ancilla-mediated ZZ phase."""
    cache: dict = {}

    def block(i: int, j: int) -> list[Pulse]:
        if (i, j) not in cache:
            zz = make_generator("Zmono", (i, j), n)
            dplan = diagonal_with_ancilla(zz, -math.pi / 4, verify_membership=False)
            sub = expand_to_pulses(dplan, 1e-12, system=system, verify=False)
            cache[(i, j)] = [(Prim("R", (i, j)), -math.pi / 2)] + [(s.prim, s.duration) for s in sub.steps]
        return cache[(i, j)]
    return block


def swap_route(plan: CircuitPlan, geometry: str, system=None, epsilon: float | None = None,
               scheme: str = "trotter2", max_pulses: int = DEFAULT_MAX_PULSES) -> CircuitPlan:
    """Restrict couplings to ``geometry``; the implemented sector unitary is unchanged.

    ``chain-zz``: line (ancilla, 0, ..., n-1) with nearest-neighbour R and ZZ;
    long-range pulses are conjugated by swaps made of R and ZZ, which are exact
    on the full space.  Works on pulse-level plans (hamiltonian-level plans are
    expanded first).

    ``chain-star``: nearest-neighbour R on the system chain, R from the ancilla
    to every site, Z on the ancilla.  Swaps need an ancilla-mediated ZZ phase,
    which is exact only on the ancilla |0> sector, so whole hamiltonian-level
    steps are routed.  A pulse-level plan is accepted only if it already fits.
    """
    if geometry not in GEOMETRIES:
        raise ValidationError(f"unknown geometry {geometry!r}")
    if geometry == "none":
        return plan
    system = system or plan.system or QubitSystem(plan.n, plan.ancilla)
    eps = plan.epsilon if epsilon is None else epsilon
    eps = 1e-2 if eps is None else eps
    if geometry == "chain-zz":
        if plan.level != "pulse":
            plan = expand_to_pulses(plan, eps, scheme, system=system, max_pulses=max_pulses)
        if any(s.prim is None for s in plan.steps):
            raise ValidationError("expand the plan to primitive steps before routing")
        router = _PulseRouter(plan)
        seq: list[Pulse] = []
        for st in plan.steps:
            seq += router.route(st.prim, st.duration)
    else:
        if not plan.ancilla:
            raise ValidationError("chain-star routing needs an ancilla")
        anc = plan.ancilla[0]
        if plan.level == "pulse":
            bad = [s.prim for s in plan.steps if s.prim is None or not star_allowed(s.prim, anc)]
            if bad:
                raise ValidationError("chain-star routes hamiltonian-level plans; pulse plan has "
                                      f"{len(bad)} disallowed pulses")
            seq = [(s.prim, s.duration) for s in plan.steps]
        else:
            router = BlockRouter(plan.n, anc, system, qubit_star_swap(plan.n, system))
            run = _expand_step(system, scheme, eps / (2 * max(1, len(plan.steps))), max_pulses)
            seq = []
            for st in plan.steps:
                seq += router.route(st, run)
    seq = _merge(seq)
    if len(seq) > max_pulses:
        raise BudgetExceeded(f"routed plan needs {len(seq)} pulses")
    steps = [Step(system.op(p), d, p) for p, d in seq]
    report = dict(plan.report)
    report.update(geometry=geometry, pulses=len(steps))
    return CircuitPlan(plan.n, list(plan.ancilla), "pulse", steps, eps, plan.phase,
                       f"{plan.primitives}@{geometry}", plan.scheme or scheme, plan.dims, report, system)


# -- identity checks used by tests and the CLI ------------------------------------------------

def swap_identity_error() -> float:
    """Phase-aligned distance between exp(i pi/4 (XX+YY+ZZ)) and SWAP."""
    h = PauliSum(2, {"XX": 1, "YY": 1, "ZZ": 1})
    u = densesim.expm_unitary(h, -math.pi / 4).matrix
    swap = np.eye(4)[[0, 2, 1, 3]]
    return densesim.distance(u, swap)


def swap_matrix(n: int, i: int, j: int) -> np.ndarray:
    dim = 2 ** n
    perm = np.arange(dim)
    bi, bj = n - 1 - i, n - 1 - j
    for x in range(dim):
        vi, vj = (x >> bi) & 1, (x >> bj) & 1
        y = x & ~((1 << bi) | (1 << bj)) | (vi << bj) | (vj << bi)
        perm[x] = y
    m = np.zeros((dim, dim))
    m[perm, np.arange(dim)] = 1
    return m


def conjugation_identity_error(n: int, l: int, m: int, theta: float) -> float:
    """``|| S_{l+1,m} e^{i theta Z_l Z_{l+1}} S_{l+1,m} - e^{i theta Z_l Z_m} ||``."""
    s = swap_matrix(n, l + 1, m)
    a = densesim.expm_unitary(make_generator("Zmono", (l, l + 1), n), -theta).matrix
    b = densesim.expm_unitary(make_generator("Zmono", (l, m), n), -theta).matrix
    return float(np.linalg.norm(s @ a @ s - b, 2))


def ancilla_sector_error(psi: np.ndarray, theta: float) -> float:
    """Check ``e^{i theta (Z_3 - Z_a) Z_1 Z_2}(psi (x) |0>) = (e^{i theta (Z1Z2Z3 - Z1Z2)} psi) (x) |0>``."""
    h4 = PauliSum(4, {"ZZZI": 1, "ZZIZ": -1})
    h3 = PauliSum(3, {"ZZZ": 1, "ZZI": -1})
    zero = np.array([1.0, 0.0])
    lhs = densesim.expm_unitary(h4, -theta).matrix @ np.kron(psi, zero)
    rhs = np.kron(densesim.expm_unitary(h3, -theta).matrix @ psi, zero)
    return float(np.abs(lhs - rhs).max())


# -- end-to-end --------------------------------------------------------------------------------

@dataclass
class CompileResult:
    hamiltonian_plan: CircuitPlan
    pulse_plan: CircuitPlan
    hamiltonian_check: VerifyReport
    pulse_check: VerifyReport

    def to_json(self) -> dict:
        d = self.pulse_plan.to_json()
        d["verification"] = {"hamiltonian_level": self.hamiltonian_check.to_json(),
                             "pulse_level": self.pulse_check.to_json()}
        return d


def compile_target(h: PauliSum, t: float = 1.0, epsilon: float = 1e-2, geometry: str = "none",
                   scheme: str = "trotter2", max_pulses: int = DEFAULT_MAX_PULSES) -> CompileResult:
    """Compile ``exp(-i H t)`` for a symmetric H with one ancilla; both levels are verified.

    Diagonal targets use :func:`diagonal_with_ancilla`; other symmetric targets
    go through the two-level (Givens) route of the qudit module with d = 2.
    """
    if not is_symmetric(h):
        raise ValidationError("target is not symmetric")
    if geometry not in GEOMETRIES:
        raise ValidationError(f"unknown geometry {geometry!r}")
    target = target_unitary(h, t)
    if is_diagonal(h):
        hplan = diagonal_with_ancilla(h.to_exact() if h.mode != EXACT else h, t)
    else:
        from .qudit_energy import QuditSpec, qudit_synthesize

        hplan = qudit_synthesize(densesim.to_matrix(h), QuditSpec(h.n, 2), t)
    hcheck = verify_plan(hplan, target, 1e-10)
    if not hcheck.passed:
        raise VerificationError("hamiltonian-level plan failed verification", measured=hcheck.distance)
    system = hplan.system
    if geometry == "chain-star" or hplan.report.get("needs_block_routing"):
        pplan = swap_route(hplan, "chain-star", system, epsilon, scheme, max_pulses)
    else:
        pplan = expand_to_pulses(hplan, epsilon, scheme, system=system, max_pulses=max_pulses)
        if geometry == "chain-zz":
            pplan = swap_route(pplan, geometry, system, epsilon)
    pcheck = verify_plan(pplan, target, epsilon)
    pplan.report["measured_error"] = pcheck.distance
    if not pcheck.passed:
        raise VerificationError(f"pulse plan misses epsilon: {pcheck.distance:.3e}",
                                measured=pcheck.distance)
    return CompileResult(hplan, pplan, hcheck, pcheck)
