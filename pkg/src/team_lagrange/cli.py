"""Command line front end: validate, solve, oracle, certify, insure.

Exit codes: 0 success, 1 semantic failure, 2 input error, 3 result/instance
digest mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from typing import Sequence

import numpy as np

from . import __version__
from .certification import Tolerances, check_kkt, insurance_scheme
from .documents import (
    DocumentError,
    instance_digest,
    load_instance,
    load_result,
    result_from_dict,
    result_to_dict,
    save_json,
)
from .errors import (
    BallNotSupportedByOracle,
    EmptyFeasibleSet,
    InvalidInput,
    NotIntegralObjective,
    OracleTooLarge,
    PreconditionFailed,
    SolverNotConverged,
)
from .lagrangian import lagrangian_terms
from .saddle_solver import SolveOptions, oracle_solve, solve
from .team_model import (
    IntegralQuadratic,
    check_recourse_sufficient,
    slater_information,
    slater_material,
    validate_instance,
)

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_MISMATCH = 0, 1, 2, 3

log = logging.getLogger("team_lagrange")


def _bool(text: str) -> bool:
    low = text.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected true/false, got {text!r}")


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2))


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def _read_instance(path):
    """(instance, None) or (None, exit code) after reporting the problem."""
    try:
        return load_instance(path), None
    except FileNotFoundError:
        _err(f"{path}: no such file")
    except (OSError, DocumentError, InvalidInput) as exc:
        _err(f"{path}: {exc}")
    return None, EXIT_INPUT


def _read_result(inst, path):
    try:
        doc = load_result(path)
    except FileNotFoundError:
        _err(f"{path}: no such file")
        return None, EXIT_INPUT
    except (OSError, DocumentError) as exc:
        _err(f"{path}: {exc}")
        return None, EXIT_INPUT
    if doc.get("digest") != instance_digest(inst):
        _err(f"{path}: result digest {doc.get('digest')} does not match instance {instance_digest(inst)}")
        return None, EXIT_MISMATCH
    return doc, None


def _tolerances(doc) -> Tolerances:
    opts = doc.get("options") or {}
    return Tolerances(kkt_tol=float(opts.get("kkt_tol", 1e-4)), feas_tol=float(opts.get("feas_tol", 1e-6)))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_validate(args) -> int:
    try:
        inst = load_instance(args.instance)
    except FileNotFoundError:
        _err(f"{args.instance}: no such file")
        return EXIT_INPUT
    except DocumentError as exc:
        _err(f"{args.instance}: {exc}")
        return EXIT_INPUT
    except (OSError, InvalidInput) as exc:
        # structurally readable but semantically invalid (e.g. overlapping blocks)
        _err(f"{args.instance}: {exc}")
        _emit({"ok": False, "error": type(exc).__name__, "message": str(exc)})
        return EXIT_FAIL

    report = validate_instance(inst)
    info = slater_information(inst)
    out = {"ok": report.ok and info.passed, "checks": report.to_dict(),
           "slater_information": {"theta": info.theta, "theta_min": info.theta_min, "passed": info.passed}}
    if args.slater_e:
        try:
            mat = slater_material(inst)
            out["slater_material"] = {"kappa": mat.kappa, "passed": mat.passed}
            out["ok"] = out["ok"] and mat.passed
        except SolverNotConverged as exc:
            out["slater_material"] = {"error": str(exc), "passed": False}
            out["ok"] = False
    if args.recourse:
        try:
            with open(args.recourse, encoding="utf-8") as fh:
                table = json.load(fh)
            safe = {}
            for name, rows in table.items():
                if name not in inst.dm_ids:
                    raise DocumentError(f"unknown DM {name!r}")
                t = inst.dm_ids.index(name)
                safe[t] = np.array([rows[s] for s in inst.scenario_ids], dtype=float)
        except (OSError, KeyError, ValueError, TypeError) as exc:
            _err(f"{args.recourse}: {exc}")
            return EXIT_INPUT
        try:
            rec = check_recourse_sufficient(inst, safe)
            out["recourse"] = {
                "passed": rec.passed,
                "worst_margin": {inst.dm_ids[t]: m for t, m in rec.worst_margin.items()},
                "failures": [{"dm": inst.dm_ids[t], "scenario": inst.scenario_ids[a], "row": r, "margin": m}
                             for t, a, r, m in rec.failures]}
        except InvalidInput as exc:
            out["recourse"] = {"passed": False, "error": str(exc)}
        out["ok"] = out["ok"] and out["recourse"]["passed"]
    _emit(out)
    return EXIT_OK if out["ok"] else EXIT_FAIL


def _summary(inst, solution) -> str:
    terms = lagrangian_terms(inst, solution.program, solution.multipliers)
    rep = solution.residuals
    lines = [f"instance {inst.name or '(unnamed)'}: {solution.status} after {solution.iterations} iterations",
             f"  primal value F(x)            {solution.primal_value: .10g}",
             f"  dual value                   {solution.dual_value: .10g}",
             "  Lagrangian at the solution:",
             f"    objective                  {terms['objective']: .10g}"]
    for t, val in terms["material"].items():
        lines.append(f"    E p.g   [{inst.dm_ids[t]}]{'':<{max(0, 16 - len(inst.dm_ids[t]))}}{val: .10g}")
    for t, val in terms["information"].items():
        lines.append(f"    E q.(x - E x) [{inst.dm_ids[t]}]{'':<{max(0, 10 - len(inst.dm_ids[t]))}}{val: .10g}")
    lines.append(f"    total                      {terms['total']: .10g}")
    lines.append("  certificate: " + ("pass" if rep.passed else "FAIL"))
    for key, val in rep.scalars().items():
        lines.append(f"    {key:<26} {val:.3e}")
    return "\n".join(lines)


def cmd_solve(args) -> int:
    inst, code = _read_instance(args.instance)
    if inst is None:
        return code
    report = validate_instance(inst)
    if not report.ok:
        for chk in report.failures():
            _err(f"{chk.name}: {chk.detail}")
        return EXIT_INPUT
    env = os.environ.get("TEAM_LAGRANGE_THREADS")
    threads = int(env) if env else args.threads
    opts = SolveOptions(max_outer=args.max_outer, step0=args.step0, kkt_tol=args.kkt_tol,
                        feas_tol=args.feas_tol, seed=args.seed, normalize_q=args.normalize_q,
                        threads=threads)
    log_fh = open(args.log, "w", encoding="utf-8") if args.log else None
    try:
        record = (lambda rec: log_fh.write(json.dumps(rec) + "\n")) if log_fh else None
        solution = solve(inst, opts, log_record=record)
    except PreconditionFailed as exc:
        _err(str(exc))
        return EXIT_INPUT
    finally:
        if log_fh:
            log_fh.close()

    insurance = None
    if isinstance(inst.objective, IntegralQuadratic):
        insurance = insurance_scheme(inst, solution, seed=opts.seed).to_dict(inst)
    doc = result_to_dict(inst, solution, options=opts.to_dict(), insurance=insurance)
    summary = _summary(inst, solution)
    if args.out:
        save_json(doc, args.out)
        if not args.quiet:
            print(summary)
    else:
        _emit(doc)
        if not args.quiet:
            print(summary, file=sys.stderr)
    return EXIT_OK if solution.converged else EXIT_FAIL


def cmd_oracle(args) -> int:
    inst, code = _read_instance(args.instance)
    if inst is None:
        return code
    try:
        res = oracle_solve(inst, args.grid, args.slack)
    except OracleTooLarge as exc:
        _err(str(exc))
        return EXIT_FAIL
    except (BallNotSupportedByOracle, EmptyFeasibleSet) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_FAIL
    values = res.program.values
    _emit({"digest": instance_digest(inst), "value": res.value, "grid_step": res.grid_step,
           "slack": res.slack, "grid_points": res.grid_points,
           "program": {inst.dm_ids[t]: {inst.scenario_ids[a]: values[a, sl].tolist()
                                        for a in range(inst.atom_count)}
                       for t, sl in enumerate(inst.slices)}})
    return EXIT_OK


def cmd_certify(args) -> int:
    inst, code = _read_instance(args.instance)
    if inst is None:
        return code
    doc, code = _read_result(inst, args.result)
    if doc is None:
        return code
    try:
        program, mult = result_from_dict(inst, doc)
    except (DocumentError, InvalidInput) as exc:
        _err(f"{args.result}: {exc}")
        return EXIT_INPUT
    report = check_kkt(inst, (program, mult), _tolerances(doc))
    _emit(report.to_dict())
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_insure(args) -> int:
    inst, code = _read_instance(args.instance)
    if inst is None:
        return code
    if not isinstance(inst.objective, IntegralQuadratic):
        _err("insurance needs an integral objective")
        return EXIT_INPUT
    doc, code = _read_result(inst, args.result)
    if doc is None:
        return code
    try:
        program, mult = result_from_dict(inst, doc)
    except (DocumentError, InvalidInput) as exc:
        _err(f"{args.result}: {exc}")
        return EXIT_INPUT
    tols = _tolerances(doc)
    if not check_kkt(inst, (program, mult), tols).passed:
        print("warning: result is not certified; reporting insurance anyway", file=sys.stderr)
    try:
        rep = insurance_scheme(inst, (program, mult), n_samples=args.samples, seed=args.seed)
    except NotIntegralObjective as exc:
        _err(str(exc))
        return EXIT_INPUT
    out = rep.to_dict(inst)
    _emit(out)
    for label, table in (("premium", out["premium"]), ("compensation", out["compensation"])):
        print(f"{label}:", file=sys.stderr)
        for dm, row in table.items():
            cells = "  ".join(f"{s}={v: .6f}" for s, v in row.items())
            print(f"  {dm}: {cells}", file=sys.stderr)
    print(f"no_regret_violation: {rep.no_regret_violation:.3e}", file=sys.stderr)
    return EXIT_OK if rep.no_regret_violation <= tols.kkt_tol else EXIT_FAIL


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="team-lagrange",
                                     description="Stochastic Lagrange multipliers for team decision problems")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check an instance file")
    p.add_argument("instance")
    p.add_argument("--slater-e", action="store_true", help="also check strict material feasibility")
    p.add_argument("--recourse", metavar="SAFE_ACTIONS", help="JSON file of safe actions per DM and scenario")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("solve", help="compute a certified solution and multipliers")
    p.add_argument("instance")
    p.add_argument("--out", help="write the result document here (default: standard output)")
    p.add_argument("--log", help="write one JSON record per outer iteration")
    p.add_argument("--max-outer", type=int, default=20000)
    p.add_argument("--step0", type=float, default=1.0)
    p.add_argument("--kkt-tol", type=float, default=1e-4)
    p.add_argument("--feas-tol", type=float, default=1e-6)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--normalize-q", type=_bool, default=True, metavar="{true,false}")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--quiet", action="store_true", help="suppress the human summary")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("oracle", help="brute-force grid search (box instances only)")
    p.add_argument("instance")
    p.add_argument("--grid", type=float, default=0.01)
    p.add_argument("--slack", type=float, default=1e-9)
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("certify", help="recompute the certificate of a result")
    p.add_argument("instance")
    p.add_argument("result")
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("insure", help="insurance tables with the no-regret check")
    p.add_argument("instance")
    p.add_argument("result")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_insure)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
