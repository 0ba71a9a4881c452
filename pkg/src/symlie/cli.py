"""Command-line entry point.

Exit codes: 0 success, 1 invalid input, 2 budget exceeded, 3 verification
failure.  Structured results are JSON (stdout, or ``--out``); diagnostics go
to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from fractions import Fraction
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import compiler, lie_closure, qudit_energy, symmetry
from .errors import SymlieError, ValidationError, VerificationError
from .pauli_core import EXACT, FLOAT, PauliSum, is_diagonal

log = logging.getLogger("symlie")


def _load_json(path: str) -> Any:
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise ValidationError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path} is not valid JSON: {exc}") from exc


def _jsonable(x):
    if isinstance(x, Fraction):
        return float(x)
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def _emit(args, payload: dict) -> None:
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2) + "\n"
    if getattr(args, "out", None):
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _budget(args) -> int | None:
    if args.max_dim is not None:
        return args.max_dim
    env = os.environ.get("SYMLIE_BUDGET_DIM")
    if env:
        try:
            return int(env)
        except ValueError as exc:
            raise ValidationError(f"SYMLIE_BUDGET_DIM must be an integer, got {env!r}") from exc
    return None


def _load_target(path: str, mode: str) -> tuple[PauliSum, float | None]:
    """PauliSum JSON, optionally wrapped as ``{"hamiltonian": ..., "time": t}``."""
    data = _load_json(path)
    t = None
    if isinstance(data, dict) and "hamiltonian" in data:
        t = data.get("time")
        data = data["hamiltonian"]
    h = PauliSum.from_json(data)
    h = h.to_exact() if mode == EXACT else h.to_float()
    return h, (float(t) if t is not None else None)


# -- subcommands --------------------------------------------------------------------------

def cmd_dims(args) -> int:
    if args.qudits is not None:
        spec = qudit_energy.QuditSpec(args.qudits, args.d)
        rep = qudit_energy.energy_algebra_dim(spec, closure=not args.no_closure)
        print(f"qudits n={spec.n} d={spec.d}: multiplicities {rep.multiplicities}, "
              f"sum m^2 = {rep.dim}, closure {rep.closure_dim}", file=sys.stderr)
        _emit(args, rep.to_json())
        return 0
    if args.qubits is None:
        raise ValidationError("dims needs --qubits or --qudits")
    n = args.qubits
    kmax = n if args.kmax is None else args.kmax
    if not 1 <= kmax <= n:
        raise ValidationError("--kmax must lie in 1..n")
    rep = lie_closure.dimension_report(n, range(1, kmax + 1), mode=args.mode, max_dim=_budget(args))
    lines = [f"{'k':>3} {'dim':>6} {'traceless':>9} {'dim S_k':>7} {'irreps':>6}"]
    for r in rep["rows"]:
        lines.append(f"{r['k']:>3} {r['dim']:>6} {r['traceless_dim']:>9} {r['s_k_dim']:>7} {r['irreps']:>6}")
    lines.append(f"full symmetric dim {rep['full_symmetric_dim']}, bound holds: {rep['bound_ok']}")
    # the table goes to stdout only when the JSON goes to a file
    print("\n".join(lines), file=sys.stdout if args.out else sys.stderr)
    _emit(args, rep)
    return 0


def cmd_charge_test(args) -> int:
    h, _ = _load_target(args.target, args.mode)
    if not is_diagonal(h):
        raise ValidationError("charge-test takes a diagonal Hamiltonian")
    rep = symmetry.s_k_test(h, args.k)
    _emit(args, rep.to_json())
    return 0


def _generators(args) -> list[PauliSum]:
    if args.generators:
        data = _load_json(args.generators)
        items = data["generators"] if isinstance(data, dict) else data
        gens = [PauliSum.from_json(g) for g in items]
        return [g.to_exact() if args.mode == EXACT else g.to_float() for g in gens]
    if args.qubits is None or args.k is None:
        raise ValidationError("close needs --generators or --qubits with --k")
    return lie_closure.klocal_symmetric_basis(args.qubits, args.k, mode=args.mode)


def cmd_close(args) -> int:
    gens = _generators(args)
    basis = lie_closure.close(gens, max_dim=_budget(args))
    out = basis.to_json()
    if args.member:
        h, _ = _load_target(args.member, args.mode)
        m = lie_closure.member(h, basis)
        out = {"dim": basis.dim, "member": m.member, "residual": float(m.residual)}
        if args.out:
            out["basis"] = basis.to_json()
    print(f"closure dimension {basis.dim}", file=sys.stderr)
    _emit(args, out)
    return 0


def _time(args, t_file: float | None) -> float:
    if args.time is not None:
        return args.time
    return 1.0 if t_file is None else t_file


def cmd_compile(args) -> int:
    h, t_file = _load_target(args.target, args.mode)
    if args.ancilla not in ("auto", str(h.n)):
        raise ValidationError(f"the ancilla sits after the systems (site {h.n}); use --ancilla auto")
    res = compiler.compile_target(h, _time(args, t_file), args.epsilon, args.geometry,
                                  args.scheme, args.max_pulses)
    out = res.to_json()
    out["time"] = _time(args, t_file)
    print(f"{len(res.pulse_plan.steps)} pulses, sector distance "
          f"{res.pulse_check.distance:.3e} (epsilon {args.epsilon})", file=sys.stderr)
    _emit(args, out)
    return 0


def cmd_verify(args) -> int:
    h, t_file = _load_target(args.target, args.mode)
    data = _load_json(args.plan)
    dims = tuple(data.get("dims", ()))
    if dims and any(x != 2 for x in dims):
        raise ValidationError("verify handles qubit plans; qudit plans are checked by qudit-compile")
    plan = compiler.CircuitPlan.from_json(data)
    eps = args.epsilon if args.epsilon is not None else (plan.epsilon or 1e-10)
    t = _time(args, t_file)
    rep = compiler.verify_plan(plan, compiler.target_unitary(h, t), eps)
    _emit(args, rep.to_json())
    if not rep.passed:
        raise VerificationError(f"plan misses epsilon: distance {rep.distance:.3e}", measured=rep.distance)
    return 0


def cmd_qudit_compile(args) -> int:
    spec = qudit_energy.QuditSpec.from_json(_load_json(args.spec))
    data = _load_json(args.target)
    t = data.get("time") if isinstance(data, dict) else None
    op = qudit_energy.QuditOperator.from_json(data.get("operator", data))
    plan = qudit_energy.qudit_synthesize(op, spec, _time(args, t), level=args.level,
                                         epsilon=args.epsilon, max_pulses=args.max_pulses)
    out = {"spec": spec.to_json(), "time": _time(args, t), "level": plan.level,
           "steps": len(plan.steps), "report": plan.report}
    if plan.level == "pulse":
        out["plan"] = plan.to_json()
    print(f"{len(plan.steps)} {plan.level}-level steps", file=sys.stderr)
    _emit(args, out)
    return 0


def cmd_identities(args) -> int:
    rng = np.random.default_rng(args.seed)
    signs = {}
    for v in range(2, 7):
        total = max(v, 6)
        seen = set()
        for _ in range(args.samples):
            sites = [int(s) for s in rng.permutation(total)[:v]]
            seen.add(compiler.chain_hamiltonian(sites, total).sign)
        if len(seen) != 1:
            raise VerificationError(f"inconsistent chain sign for v={v}: {sorted(seen)}")
        signs[str(v)] = seen.pop()
    psi = rng.normal(size=8) + 1j * rng.normal(size=8)
    psi /= np.linalg.norm(psi)
    theta = float(rng.uniform(-math.pi, math.pi))
    two_anc = {}
    for d in (2, 3):
        spec = qudit_energy.QuditSpec(2, d, 1.0, 2)
        worst = 0.0
        for l in range(1, d):
            for l2 in range(1, d):
                r = qudit_energy.two_ancilla_reduce(0, 1, l, l2, spec, theta)
                worst = max(worst, r.identity_error, r.reversed_order_error, r.sector_error)
        two_anc[str(d)] = worst
    out = {
        "chain_signs": signs,
        "swap_error": compiler.swap_identity_error(),
        "conjugation_error": compiler.conjugation_identity_error(4, 0, 3, theta),
        "ancilla_sector_error": compiler.ancilla_sector_error(psi, theta),
        "two_ancilla_error": two_anc,
        "embedded_swap_error": max(qudit_energy.embedded_swap_error(3, l, l2)
                                   for l in (1, 2) for l2 in (1, 2)),
    }
    for v, c in signs.items():
        print(f"c_{v} = {c:+d}", file=sys.stderr)
    _emit(args, out)
    tol = 1e-12
    if max(out["swap_error"], out["conjugation_error"], out["ancilla_sector_error"],
           out["embedded_swap_error"], *two_anc.values()) > tol:
        raise VerificationError("an identity exceeded 1e-12")
    return 0


# -- parser ---------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--mode", choices=(EXACT, FLOAT), default=EXACT)
    common.add_argument("--max-dim", type=int, default=None,
                        help="closure budget (default: full symmetric dimension; env SYMLIE_BUDGET_DIM)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default=None, help="write JSON here instead of stdout")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="symlie", description="Symmetric Lie-algebra analysis and compilation.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("dims", parents=[common], help="closure dimensions per locality")
    s.add_argument("--qubits", type=int)
    s.add_argument("--kmax", type=int)
    s.add_argument("--qudits", type=int, help="number of qudits (energy-conserving algebra)")
    s.add_argument("--d", type=int, default=3)
    s.add_argument("--no-closure", action="store_true")
    s.set_defaults(func=cmd_dims)

    s = sub.add_parser("charge-test", parents=[common], help="weight-sum membership test for diagonal H")
    s.add_argument("--target", required=True)
    s.add_argument("--k", type=int, required=True)
    s.set_defaults(func=cmd_charge_test)

    s = sub.add_parser("close", parents=[common], help="Lie closure of generators")
    s.add_argument("--generators")
    s.add_argument("--qubits", type=int)
    s.add_argument("--k", type=int)
    s.add_argument("--member", help="PauliSum JSON to test for membership")
    s.set_defaults(func=cmd_close)

    helps = {"compile": "compile exp(-i H t) for a qubit Hamiltonian",
             "qudit-compile": "compile an energy-conserving qudit unitary"}
    for name, func in (("compile", cmd_compile), ("qudit-compile", cmd_qudit_compile)):
        s = sub.add_parser(name, parents=[common], help=helps[name])
        s.add_argument("--target", required=True)
        s.add_argument("--epsilon", type=float, default=1e-2)
        s.add_argument("--time", type=float, default=None)
        s.add_argument("--scheme", choices=("trotter2", "groupcomm"), default="trotter2")
        s.add_argument("--max-pulses", type=int, default=compiler.DEFAULT_MAX_PULSES)
        s.set_defaults(func=func)
        if name == "compile":
            s.add_argument("--ancilla", default="auto")
            s.add_argument("--geometry", choices=compiler.GEOMETRIES, default="none")
        else:
            s.add_argument("--spec", required=True, help="QuditSpec JSON")
            s.add_argument("--level", choices=("hamiltonian", "pulse"), default="pulse")

    s = sub.add_parser("verify", parents=[common], help="check a plan against exp(-i H t)")
    s.add_argument("--plan", required=True)
    s.add_argument("--target", required=True)
    s.add_argument("--epsilon", type=float, default=None)
    s.add_argument("--time", type=float, default=None)
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("identities", parents=[common], help="chain, swap and ancilla identity suite")
    s.add_argument("--samples", type=int, default=10)
    s.set_defaults(func=cmd_identities)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code else 0
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except SymlieError as exc:
        print(f"error: {exc}", file=sys.stderr)
        achieved = getattr(exc, "achievable", None) or getattr(exc, "measured", None)
        if achieved is not None:
            print(f"  achievable/measured: {achieved}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
