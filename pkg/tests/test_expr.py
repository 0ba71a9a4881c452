from fractions import Fraction

from symlie.expr import Bracket, Leaf, PauliAlgebra, Scale, Sum, depth, evaluate, from_json, leaves, to_json
from symlie.pauli_core import PauliSum, bracket


def _tree():
    a, b, c = Leaf("XI"), Leaf("ZZ"), Leaf("IY")
    return Sum((Scale(Fraction(-1, 2), Bracket(a, Bracket(b, c))), Scale(0.25, c)))


def test_json_round_trip_preserves_tree():
    t = _tree()
    assert from_json(to_json(t)) == t


def test_depth_counts_nested_brackets():
    assert depth(_tree()) == 2
    assert depth(Leaf("X")) == 0


def test_leaves_in_left_to_right_order():
    assert leaves(_tree()) == ["XI", "ZZ", "IY", "IY"]


def test_evaluate_matches_direct_brackets():
    op = lambda w: PauliSum(2, {w: 1})
    got = evaluate(_tree(), op, PauliAlgebra(2))
    want = bracket(op("XI"), bracket(op("ZZ"), op("IY"))) * Fraction(-1, 2) + op("IY") * Fraction(1, 4)
    assert got == want


def test_evaluate_handles_deep_trees():
    node = Leaf("ZI")
    for _ in range(5000):
        node = Scale(1, node)
    assert evaluate(node, lambda w: PauliSum(2, {w: 1}), PauliAlgebra(2)) == PauliSum(2, {"ZI": 1})
