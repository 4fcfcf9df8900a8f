"""Command-line surface: generate, inspect, scale, certify, reduce, verify.

All reports are plain text with a stable line grammar; identical seeds and
flags produce byte-identical output files.  Exit codes: 0 success, 1
invariant or certificate failure, 2 usage/parse error, 3 budget exceeded.
"""

import argparse
import sys
from itertools import combinations

import numpy as np

from .arrangement import (
    ComplexArrangement,
    InvariantViolation,
    complex_to_real,
    generate_grid,
    generate_grouped,
    generate_random_planted,
    pairwise_zero_intersection,
    read_arrangement,
    write_arrangement,
)
from .certifier import CertifyBudget, certify
from .dependency import (
    build_sg_system,
    find_special_spaces,
    is_dependent_triple,
    read_system,
    validate_system,
    write_system,
)
from .errors import (
    BudgetExceededError,
    OptimizeTimeoutError,
    ParseError,
    SgcertError,
)
from .linalg import Tolerance
from .scaling import optimize, sample_admissible

_EXIT_OK = 0
_EXIT_FAIL = 1
_EXIT_USAGE = 2
_EXIT_BUDGET = 3


def _fmt(x: float) -> str:
    return f"{x:.17g}"


def _tol_from(args) -> Tolerance:
    return Tolerance(rank_tol=args.rank_tol, residual_tol=args.residual_tol)


def _out_stream(path):
    return sys.stdout if path in (None, "-") else open(path, "w", encoding="utf-8")


def _emit(stream, lines):
    stream.write("\n".join(lines) + "\n")


def _load_real(path, tol):
    arr = read_arrangement(path)
    if isinstance(arr, ComplexArrangement):
        raise SgcertError(f"{path} holds a complex arrangement; run 'reduce' first")
    return arr


def cmd_gen(args) -> int:
    tol = _tol_from(args)
    if args.kind != "grouped" and args.l is None:
        raise SgcertError(f"--l is required for kind {args.kind}")
    if args.kind == "grouped":
        arr = generate_grouped(args.k, args.delta, args.n, args.l, args.seed, tol)
    elif args.kind == "grid":
        arr = generate_grid(args.l)
    elif args.kind == "random-planted":
        arr = generate_random_planted(args.n, args.k, args.l, args.triples,
                                      args.seed, tol)
    else:  # pragma: no cover - argparse choices guard this
        raise SgcertError(f"unknown kind {args.kind}")
    write_arrangement(args.out, arr)
    print(f"wrote {args.out}: n {arr.n} ambient {arr.ambient} dim {arr.dimension(tol)}")
    return _EXIT_OK


def cmd_triples(args) -> int:
    tol = _tol_from(args)
    arr = _load_real(args.input, tol)
    with _out_stream(args.out) as stream:
        specials = find_special_spaces(arr, arr.max_dim(), tol)
        lines = []
        for sp in specials:
            members = " ".join(str(i) for i in sp.member_indices)
            lines.append(f"special size {sp.size} dim {sp.span_basis.shape[0]} members {members}")
        count = 0
        for i, j, l in combinations(range(arr.n), 3):
            if is_dependent_triple(arr.spaces[i], arr.spaces[j], arr.spaces[l], tol):
                lines.append(f"triple {i} {j} {l}")
                count += 1
        lines.append(f"total special {len(specials)} triples {count}")
        _emit(stream, lines)
    return _EXIT_OK


def cmd_system(args) -> int:
    tol = _tol_from(args)
    arr = _load_real(args.input, tol)
    sys_obj = build_sg_system(arr, arr.max_dim(), tol)
    write_system(args.out, sys_obj)
    print(f"wrote {args.out}: w {sys_obj.w} alpha {sys_obj.alpha} delta {_fmt(sys_obj.delta)}")
    return _EXIT_OK


def cmd_scale(args) -> int:
    tol = _tol_from(args)
    arr = _load_real(args.input, tol)
    sample = sample_admissible(arr, args.trials, args.seed, tol, args.workers)
    total_dim = arr.dimension(tol)
    non_basis = sum(
        1 for h in sample.sets
        if sum(arr.spaces[i].dim for i in h) != total_dim
    )
    if non_basis:
        print(f"warning: {non_basis} of {args.trials} sampled sets do not span; "
              "p may sit outside the basis hull", file=sys.stderr)
    result = optimize(arr, sample.p_hat, eps_target=args.eps,
                      max_iter=args.max_iter, t_cap=args.tcap, tol=tol)
    with _out_stream(args.out) as stream:
        lines = ["matrix v1",
                 f"rows {arr.ambient} cols {arr.ambient}"]
        for r in range(arr.ambient):
            lines.append(" ".join(_fmt(v) for v in result.M[r]))
        lines.append(f"gap {_fmt(result.achieved_eps)}")
        if result.obstruction is not None:
            lines.append(f"obstruction {result.obstruction}")
        _emit(stream, lines)
    return _EXIT_FAIL if result.obstruction is not None else _EXIT_OK


_BRANCH_NAMES = {"entry": "bound", "separated": "bound",
                 "harvest": "collapse", "scale-collapse": "scale-collapse"}


def cmd_certify(args) -> int:
    tol = _tol_from(args)
    arr = _load_real(args.input, tol)
    if args.system:
        sys_obj = read_system(args.system)
    else:
        sys_obj = build_sg_system(arr, arr.max_dim(), tol)
    report = validate_system(arr, sys_obj, tol)
    if not report.ok:
        for v in report.violations:
            print(f"violation: {v}", file=sys.stderr)
        return _EXIT_FAIL
    budget = CertifyBudget(trials=args.trials, seed=args.seed,
                           max_rounds=args.max_rounds,
                           wall_clock=args.wall_clock, workers=args.workers)
    result = certify(arr, sys_obj, tol, budget=budget, beta=args.beta)
    with _out_stream(args.out) as stream:
        lines = []
        for rec in result.rounds:
            branch = _BRANCH_NAMES.get(rec.branch, rec.branch)
            lines.append(
                f"round {rec.index} n {rec.n} delta {_fmt(rec.delta)} "
                f"d {rec.d} branch {branch} loss {rec.loss}"
            )
        lines.append(f"final bound {result.final_bound} measured {result.measured}")
        _emit(stream, lines)
    return _EXIT_OK if result.sound else _EXIT_FAIL


def cmd_reduce(args) -> int:
    tol = _tol_from(args)
    arr = read_arrangement(args.input)
    if not isinstance(arr, ComplexArrangement):
        raise SgcertError(f"{args.input} is already a real arrangement")
    real = complex_to_real(arr.spaces, tol)
    write_arrangement(args.out, real)
    print(f"wrote {args.out}: n {real.n} ambient {real.ambient} "
          f"dims {' '.join(str(v.dim) for v in real.spaces)}")
    return _EXIT_OK


def cmd_verify(args) -> int:
    tol = _tol_from(args)
    arr = read_arrangement(args.input)
    failures = []
    if isinstance(arr, ComplexArrangement):
        print(f"complex arrangement: n {arr.n} ambient {arr.ambient}")
    else:
        for i, v in enumerate(arr.spaces):
            gram = v.basis @ v.basis.T
            err = np.abs(gram - np.eye(v.dim)).max() if v.dim else 0.0
            if err > tol.residual_tol:
                failures.append(f"space {i}: basis rows not orthonormal (residual {err:.3e})")
        bad_pairs = pairwise_zero_intersection(arr, tol)
        if bad_pairs:
            print(f"note: {len(bad_pairs)} pairs intersect nontrivially "
                  f"(first: {bad_pairs[0]})")
    if args.system:
        sys_obj = read_system(args.system)
        if isinstance(arr, ComplexArrangement):
            failures.append("cannot validate a system against a complex arrangement")
        else:
            report = validate_system(arr, sys_obj, tol)
            failures.extend(report.violations)
    for f in failures:
        print(f"violation: {f}", file=sys.stderr)
    print(f"verify: {'ok' if not failures else f'{len(failures)} violations'}")
    return _EXIT_OK if not failures else _EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sgcert",
        description="subspace arrangements, dependency systems, scaling, and "
                    "dimension certification",
    )
    parser.add_argument("--rank-tol", type=float, default=1e-9,
                        help="relative singular value cutoff for rank decisions")
    parser.add_argument("--residual-tol", type=float, default=1e-8,
                        help="membership/orthonormality residual threshold")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate an arrangement file")
    p.add_argument("--kind", required=True, choices=["grouped", "grid", "random-planted"])
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--delta", type=float, default=0.5)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--l", type=int, default=None, help="ambient dimension")
    p.add_argument("--triples", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("triples", help="list dependent triples and special spaces")
    p.add_argument("input")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_triples)

    p = sub.add_parser("system", help="build the dependency system of an arrangement")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_system)

    p = sub.add_parser("scale", help="compute the scaling map for sampled weights")
    p.add_argument("input")
    p.add_argument("--eps", type=float, default=1e-6)
    p.add_argument("--trials", type=int, default=4096)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-iter", type=int, default=10000)
    p.add_argument("--tcap", type=float, default=60.0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_scale)

    p = sub.add_parser("certify", help="run the dimension certification recursion")
    p.add_argument("input")
    p.add_argument("--system", default=None, help="system file (default: build one)")
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--trials", type=int, default=2048)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--max-rounds", type=int, default=None)
    p.add_argument("--wall-clock", type=float, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("reduce", help="realify a complex arrangement file")
    p.add_argument("input")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reduce)

    p = sub.add_parser("verify", help="run the invariant suite over a file")
    p.add_argument("input")
    p.add_argument("--system", default=None)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    except (BudgetExceededError, OptimizeTimeoutError) as exc:
        print(f"budget exceeded: {exc}", file=sys.stderr)
        return _EXIT_BUDGET
    except (SgcertError, InvariantViolation, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
