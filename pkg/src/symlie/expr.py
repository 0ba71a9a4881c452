"""Expression trees recording how an operator is built from generators.

``Bracket(a, b)`` always means the Hermitian bracket ``i[a, b]``.  Leaves
carry an opaque key; :func:`evaluate` resolves keys through a callable so
the same trees serve Pauli sums and dense qudit matrices.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Any, Callable, Protocol


class Expr:
    __slots__ = ()


@dataclass(frozen=True)
class Leaf(Expr):
    key: Any


@dataclass(frozen=True)
class Bracket(Expr):
    left: Expr
    right: Expr


@dataclass(frozen=True)
class Scale(Expr):
    coeff: Any
    child: Expr


@dataclass(frozen=True)
class Sum(Expr):
    children: tuple[Expr, ...]


class Algebra(Protocol):
    def bracket(self, a, b): ...
    def add(self, a, b): ...
    def scale(self, c, a): ...
    def zero(self): ...


class PauliAlgebra:
    def __init__(self, n: int, mode: str = "exact"):
        from .pauli_core import PauliSum

        self._zero = PauliSum.zero(n, mode)

    def bracket(self, a, b):
        from .pauli_core import bracket

        return bracket(a, b)

    def add(self, a, b):
        return a + b

    def scale(self, c, a):
        return a * c

    def zero(self):
        return self._zero


class MatrixAlgebra:
    """Dense or sparse matrices with the Hermitian bracket i(AB - BA)."""

    def __init__(self, dim: int):
        self.dim = dim

    def bracket(self, a, b):
        return 1j * (a @ b - b @ a)

    def add(self, a, b):
        return a + b

    def scale(self, c, a):
        return a * complex(c) if isinstance(c, complex) else a * float(c)

    def zero(self):
        import scipy.sparse as sp

        return sp.csr_matrix((self.dim, self.dim), dtype=complex)


def evaluate(expr: Expr, resolve: Callable[[Any], Any], algebra: Algebra):
    """Evaluate ``expr`` bottom-up without recursion (trees can be deep)."""
    memo: dict[int, Any] = {}
    stack: list[tuple[Expr, bool]] = [(expr, False)]
    while stack:
        node, ready = stack.pop()
        if id(node) in memo:
            continue
        if isinstance(node, Leaf):
            memo[id(node)] = resolve(node.key)
            continue
        kids = _children(node)
        if not ready:
            stack.append((node, True))
            stack.extend((k, False) for k in kids if id(k) not in memo)
            continue
        if isinstance(node, Bracket):
            val = algebra.bracket(memo[id(node.left)], memo[id(node.right)])
        elif isinstance(node, Scale):
            val = algebra.scale(node.coeff, memo[id(node.child)])
        elif isinstance(node, Sum):
            val = algebra.zero()
            for k in node.children:
                val = algebra.add(val, memo[id(k)])
        else:
            raise TypeError(f"unknown node {node!r}")
        memo[id(node)] = val
    return memo[id(expr)]


def _children(node: Expr) -> tuple[Expr, ...]:
    if isinstance(node, Bracket):
        return (node.left, node.right)
    if isinstance(node, Scale):
        return (node.child,)
    if isinstance(node, Sum):
        return node.children
    return ()


def depth(expr: Expr) -> int:
    best = 0
    stack = [(expr, 0)]
    while stack:
        node, d = stack.pop()
        if isinstance(node, Bracket):
            best = max(best, d + 1)
        stack.extend((k, d + isinstance(node, Bracket)) for k in _children(node))
    return best


def leaves(expr: Expr) -> list[Any]:
    out, stack = [], [expr]
    while stack:
        node = stack.pop()
        if isinstance(node, Leaf):
            out.append(node.key)
        stack.extend(reversed(_children(node)))
    return out


def _coeff_json(c):
    if isinstance(c, Fraction):
        return {"num": c.numerator, "den": c.denominator}
    return {"value": float(c)}


def to_json(expr: Expr, key_json: Callable[[Any], Any] = lambda k: k):
    if isinstance(expr, Leaf):
        return {"leaf": key_json(expr.key)}
    if isinstance(expr, Bracket):
        return {"bracket": [to_json(expr.left, key_json), to_json(expr.right, key_json)]}
    if isinstance(expr, Scale):
        return {"scale": _coeff_json(expr.coeff), "child": to_json(expr.child, key_json)}
    return {"sum": [to_json(k, key_json) for k in expr.children]}


def from_json(data, key_parse: Callable[[Any], Any] = lambda k: k) -> Expr:
    if "leaf" in data:
        return Leaf(key_parse(data["leaf"]))
    if "bracket" in data:
        a, b = data["bracket"]
        return Bracket(from_json(a, key_parse), from_json(b, key_parse))
    if "scale" in data:
        c = data["scale"]
        coeff = Fraction(c["num"], c["den"]) if "num" in c else float(c["value"])
        return Scale(coeff, from_json(data["child"], key_parse))
    return Sum(tuple(from_json(k, key_parse) for k in data["sum"]))
