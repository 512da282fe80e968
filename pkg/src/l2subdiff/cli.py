"""Command-line entry point: ``l2subdiff <command> [options]``.

Exit status is 0 on success, 1 when a check fails and 2 on bad input.
Every option can also be given in a flat ``key = value`` file passed with
``--config``; keys are option names with dashes or underscores, and command
line flags override file values.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import platform
import sys
import time
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy

from .caputo import assemble, caputo_polynomial, write_coefficients_csv
from .harness import run_convergence_study
from .mesh import MeshAssumptionConfig, analyze_mesh, build_graded, lambda_cap, read_mesh_csv, write_mesh_csv
from .monotone import (
    barrier_check,
    comparison_trial,
    compute_representation,
    inverse_monotonicity_oracle,
    plus_lambda_probe,
    replay_plus_lambda,
    write_representation_csv,
)
from .spatial import SpatialGrid1D
from .stepper import NonlinearSolveConfig, ProblemSpec, solve, write_trajectory_csv

log = logging.getLogger("l2subdiff")

EXIT_OK, EXIT_CHECK, EXIT_INPUT = 0, 1, 2


class InputError(ValueError):
    pass


# ---------------------------------------------------------------- problems

PROBLEMS = ("sine", "reaction", "semilinear-sine")


def make_problem(name: str, alpha: float, T: float, X: float, lam: float, flavor: str, mode: int = 1, a: float = 1.0):
    """Named test problems with ``u_0 = sin(k pi x / X)``.

    ``sine``: ``f = 0``; ``reaction``: ``f = lam u``; ``semilinear-sine``: ``f = lam sin(u)``.
    """
    u0 = lambda x: np.sin(mode * math.pi * x / X)  # noqa: E731
    common = dict(alpha=alpha, T=T, X=X, a=a, u0=u0, flavor=flavor, name=name)
    if name == "sine":
        return ProblemSpec(**common)
    if name == "reaction":
        return ProblemSpec(
            f=lambda x, t, s: lam * s, dfds=lambda x, t, s: np.full_like(s, lam), lipschitz=abs(lam), **common
        )
    if name == "semilinear-sine":
        return ProblemSpec(f=lambda x, t, s: lam * np.sin(s), dfds=lambda x, t, s: lam * np.cos(s), lipschitz=abs(lam), **common)
    raise InputError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)} or give a file")


def read_config(path: str | Path) -> dict[str, str]:
    """Flat ``key = value`` pairs; ``#`` starts a comment."""
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc
    for num, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InputError(f"{path}:{num}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _problem_from_args(args) -> ProblemSpec:
    name = args.problem
    lam, X, mode, a = args.lam, args.X, 1, 1.0
    if Path(name).is_file():
        cfg = read_config(name)
        name = cfg.get("problem", "sine")
        lam = float(cfg.get("lambda", lam))
        X = float(cfg.get("X", X))
        mode = int(cfg.get("mode", 1))
        a = float(cfg.get("a", 1.0))
    return make_problem(name, args.alpha, args.T, X, lam, args.flavor, mode, a)


# ---------------------------------------------------------------- helpers


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in str(text).split(",") if s.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _ints(text: str) -> list[int]:
    vals = _floats(text)
    if any(v != int(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}")
    return [int(v) for v in vals]


def _r_value(text: str, alpha: float) -> float:
    """Grading exponents may be written as numbers or as ``crit`` / ``2crit`` for ``3 - alpha`` multiples."""
    text = text.strip()
    if text.endswith("crit"):
        k = float(text[:-4] or 1.0)
        return k * (3.0 - alpha)
    return float(text)


def _versions() -> dict:
    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"package": pkg, "numpy": np.__version__, "scipy": scipy.__version__, "python": platform.python_version()}


def _emit(payload: dict, path) -> None:
    payload = {**payload, "versions": _versions()}
    text = json.dumps(payload, indent=2, default=_jsonable)
    if path:
        Path(path).write_text(text)
    print(text)


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _mesh_from_args(args):
    if getattr(args, "mesh", "graded") == "file":
        if not args.mesh_file:
            raise InputError("--mesh file needs --mesh-file")
        return read_mesh_csv(args.mesh_file)
    return build_graded(args.T, args.M, args.r)


# ---------------------------------------------------------------- commands


def cmd_solve(args) -> int:
    problem = _problem_from_args(args)
    mesh = build_graded(args.T, args.M, args.r)
    grid = SpatialGrid1D(problem.X, args.N)
    cfg = NonlinearSolveConfig(args.method, args.rtol, args.max_iter)
    traj = solve(problem, mesh, grid, cfg)
    if args.out:
        write_trajectory_csv(traj, args.out)
    _emit({"command": "solve", **traj.summary()}, args.json)
    return EXIT_OK


def cmd_convergence(args) -> int:
    problem = _problem_from_args(args)
    rs = [_r_value(s, args.alpha) for s in args.r_list.split(",")]
    grid = SpatialGrid1D(problem.X, args.N)
    cfg = NonlinearSolveConfig(args.method, args.rtol, args.max_iter)
    start = time.perf_counter()
    reports = run_convergence_study(problem, rs, args.M_list, grid, cfg, args.ref, args.out, args.workers)
    payload = {
        "command": "convergence",
        "N": args.N,
        "Ms": args.M_list,
        "elapsed_s": time.perf_counter() - start,
        "reports": [rep.to_dict() for rep in reports],
    }
    _emit(payload, args.json)
    ok = all(rep.cells for rep in reports)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_operator_check(args) -> int:
    mesh = _mesh_from_args(args)
    op = assemble(mesh, args.alpha, args.flavor)
    t = mesh.points
    # exactness on linears everywhere, and on quadratics from the second row (L2 only)
    lin = np.array([op.apply(t[: m + 1], m) for m in range(1, mesh.M + 1)])
    lin_ref = caputo_polynomial([(1.0, 1.0)], args.alpha, t[1:])
    quad = np.array([op.apply(t[: m + 1] ** 2, m) for m in range(2, mesh.M + 1)])
    quad_ref = caputo_polynomial([(1.0, 2.0)], args.alpha, t[2:])
    lin_err = float(np.max(np.abs(lin - lin_ref) / np.abs(lin_ref)))
    quad_err = float(np.max(np.abs(quad - quad_ref) / np.abs(quad_ref))) if quad.size else 0.0
    defects = float(op.row_sum_defects().max())
    diag_ratio = float(op.diagonal_bound_ratio().min())
    checks = {
        "row_sums": defects <= 1e-12,
        "diagonal_bound": diag_ratio >= 1.0 - 1e-12,
        "linear_exact": lin_err <= 1e-10,
    }
    if args.flavor == "l2":
        checks["quadratic_exact"] = quad_err <= 1e-10
    diag = analyze_mesh(mesh, MeshAssumptionConfig(args.sigma_star), args.alpha)
    if args.out:
        write_coefficients_csv(op, args.out)
    if args.mesh_out:
        write_mesh_csv(mesh, args.mesh_out)
    _emit(
        {
            "command": "operator-check",
            "alpha": args.alpha,
            "flavor": args.flavor,
            "M": mesh.M,
            "max_row_sum_defect": defects,
            "min_diagonal_bound_ratio": diag_ratio,
            "linear_rel_error": lin_err,
            "quadratic_rel_error": quad_err,
            "z_matrix": op.is_z_matrix(),
            "mesh": diag.to_dict(),
            "checks": checks,
            "passed": all(checks.values()),
        },
        args.json,
    )
    return EXIT_OK if all(checks.values()) else EXIT_CHECK


def cmd_monotonicity_probe(args) -> int:
    mesh = _mesh_from_args(args)
    op = assemble(mesh, args.alpha, "l2")
    lam = args.lam if args.lam is not None else 0.5 * lambda_cap(mesh, args.alpha)
    start = time.perf_counter()
    rep = compute_representation(op, args.beta_max)
    inv = inverse_monotonicity_oracle(op)
    payload = {
        "command": "monotonicity-probe",
        "alpha": args.alpha,
        "M": mesh.M,
        "r": mesh.r,
        "lambda": lam,
        "seed": args.seed,
        "trials": args.trials,
        "representation": rep.to_dict(),
        "inverse": {"nonneg": inv.nonneg, "min_entry": inv.min_entry, "max_entry": inv.max_entry},
    }
    ok = rep.sign_ok and inv.nonneg
    if args.plus_lambda:
        probe = plus_lambda_probe(op, lam, args.trials, args.seed)
        out = probe.to_dict()
        if probe.found:
            U = replay_plus_lambda(op, lam, probe.counterexample["g"])
            out["replay_max_U"] = float(U.max())
        payload["plus_lambda"] = out
    else:
        trial = comparison_trial(op, lam, args.trials, args.seed)
        payload["comparison"] = trial.to_dict()
        ok = ok and trial.violations == 0
    payload["elapsed_s"] = time.perf_counter() - start
    payload["passed"] = ok
    if args.beta_out:
        write_representation_csv(rep, args.beta_out, args.kappa_out)
    _emit(payload, args.json)
    return EXIT_OK if ok else EXIT_CHECK


def cmd_barrier_check(args) -> int:
    results = []
    for M in args.M_list:
        op = assemble(build_graded(args.T, M, args.r), args.alpha, "l2")
        res = barrier_check(op, args.lam, args.gamma, args.sharp_ell)
        results.append({"M": M, "C_fit": res.C_fit, "exploratory": res.exploratory})
    Cs = [r["C_fit"] for r in results]
    variation = max(Cs) / min(Cs) - 1.0
    ok = all(math.isfinite(c) and c > 0 for c in Cs) and variation < args.max_variation
    _emit(
        {
            "command": "barrier-check",
            "alpha": args.alpha,
            "gamma": args.gamma,
            "r": args.r,
            "lambda": args.lam,
            "sharp_ell": args.sharp_ell,
            "results": results,
            "variation": variation,
            "passed": ok,
        },
        args.json,
    )
    return EXIT_OK if ok else EXIT_CHECK


# ---------------------------------------------------------------- parser


def _common(p, M_default=64):
    p.add_argument("--alpha", type=float, required=True)
    p.add_argument("--T", type=float, default=1.0)
    p.add_argument("--json", help="also write the JSON summary here")


def _solver_opts(p):
    p.add_argument("--N", type=int, default=255, help="interior spatial nodes")
    p.add_argument("--problem", default="sine", help=f"one of {', '.join(PROBLEMS)} or a key=value file")
    p.add_argument("--lambda", dest="lam", type=float, default=1.0, help="reaction strength")
    p.add_argument("--X", type=float, default=1.0)
    p.add_argument("--flavor", choices=("l2", "l1"), default="l2")
    p.add_argument("--method", choices=("fixed-point", "newton"), default="fixed-point")
    p.add_argument("--rtol", type=float, default=1e-12)
    p.add_argument("--max-iter", type=int, default=50)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="l2subdiff", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="key = value file with option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="march one problem and export the trajectory")
    _common(p)
    _solver_opts(p)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--M", type=int, default=64)
    p.add_argument("--out", help="trajectory CSV")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("convergence", help="errors and fitted orders over an M ladder")
    _common(p)
    _solver_opts(p)
    p.add_argument("--r", dest="r_list", default="1,crit,2crit", help="comma list; 'crit' means 3-alpha")
    p.add_argument("--M", dest="M_list", type=_ints, default=[32, 64, 128, 256])
    p.add_argument("--ref", choices=("auto", "eigen", "fine"), default="auto")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="study CSV")
    p.set_defaults(func=cmd_convergence)

    p = sub.add_parser("operator-check", help="row sums, diagonal bound and polynomial exactness")
    _common(p)
    p.add_argument("--mesh", choices=("graded", "file"), default="graded")
    p.add_argument("--mesh-file")
    p.add_argument("--M", type=int, default=64)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--flavor", choices=("l2", "l1"), default="l2")
    p.add_argument("--sigma-star", type=float, default=None)
    p.add_argument("--out", help="coefficient CSV (m, j, a_mj)")
    p.add_argument("--mesh-out", help="mesh CSV (j, t_j, tau_j, rho_j)")
    p.set_defaults(func=cmd_operator_check)

    p = sub.add_parser("monotonicity-probe", help="representation, inverse sign and randomised comparison")
    _common(p)
    p.add_argument("--mesh", choices=("graded", "file"), default="graded")
    p.add_argument("--mesh-file")
    p.add_argument("--M", type=int, default=32)
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, default=None, help="default: half the step-size cap")
    p.add_argument("--plus-lambda", action="store_true", help="probe delta + lambda instead")
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--beta-max", type=float, default=0.999)
    p.add_argument("--beta-out", help="per-j beta CSV")
    p.add_argument("--kappa-out", help="per-(m, j) kappa CSV (with --beta-out)")
    p.set_defaults(func=cmd_monotonicity_probe)

    p = sub.add_parser("barrier-check", help="fit the stability barrier over several M")
    _common(p)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--sharp-ell", action="store_true")
    p.add_argument("--r", type=float, default=1.0)
    p.add_argument("--M", dest="M_list", type=_ints, default=[64, 128, 256])
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--max-variation", type=float, default=0.25)
    p.set_defaults(func=cmd_barrier_check)
    return parser


_BOOL = {"1": True, "true": True, "yes": True, "on": True, "0": False, "false": False, "no": False, "off": False}


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return
    values = read_config(known.config)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in subparsers.choices.values():
        defaults = {}
        for action in sp._actions:
            names = {s.lstrip("-").replace("-", "_") for s in action.option_strings} | {action.dest}
            hit = names & values.keys()
            if not hit:
                continue
            raw = values[hit.pop()]
            if isinstance(action, argparse._StoreTrueAction):
                if raw.lower() not in _BOOL:
                    raise InputError(f"config value for {action.dest} must be a boolean, got {raw!r}")
                defaults[action.dest] = _BOOL[raw.lower()]
            else:
                # argparse runs string defaults through the option's type
                defaults[action.dest] = raw
                action.required = False
        sp.set_defaults(**defaults)


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config(parser, argv)
        args = parser.parse_args(argv)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except SystemExit as exc:  # argparse reports usage errors with status 2
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (InputError, ValueError, argparse.ArgumentTypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
