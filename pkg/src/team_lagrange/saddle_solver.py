"""Dual subgradient solver for the team problem and a brute-force grid oracle.

The outer loop minimises the dual function over ``(p, q)``; each step needs
one maximisation of the Lagrangian over all programs (per atom for integral
objectives).  A primal candidate is recovered by adapting and projecting the
inner maximisers, and the loop stops as soon as a candidate certifies.
"""
from __future__ import annotations

import logging
import math
import os
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .certification import CertReport, Tolerances, check_kkt, cs_residuals
from .errors import (
    BallNotSupportedByOracle,
    EmptyFeasibleSet,
    EmptyHistory,
    OracleTooLarge,
    PreconditionFailed,
    SolverNotConverged,
)
from .lagrangian import (
    InnerOptions,
    MultiplierPair,
    dual_subgradient,
    dual_value,
    integrand_values,
    lagrangian_value,
)
from .programs import (
    AdaptedProgram,
    Program,
    adapt_values,
    as_values,
    constraint_values,
    evaluate_objective,
    project_values,
)
from .team_model import (
    IntegralQuadratic,
    ProblemInstance,
    slater_information,
    slater_material,
    validate_instance,
)

log = logging.getLogger(__name__)

ORACLE_LIMIT = 10_000_000
ORACLE_CHUNK = 200_000
CANDIDATE_NAMES = ("last", "ergodic", "last+slater", "ergodic+slater")


@dataclass
class SolveOptions:
    max_outer: int = 20000
    step0: float = 1.0
    inner_tol: float = 1e-8
    max_inner: int = 10000
    kkt_tol: float = 1e-4
    feas_tol: float = 1e-6
    seed: int = 0
    normalize_q: bool = True
    multiplier_cap: float = 1e6
    threads: Optional[int] = None
    check_preconditions: bool = True

    def __post_init__(self):
        if self.max_outer < 1:
            raise ValueError("max_outer must be at least 1")
        for name in ("step0", "inner_tol", "kkt_tol", "feas_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.threads is None:
            env = os.environ.get("TEAM_LAGRANGE_THREADS")
            self.threads = int(env) if env else os.cpu_count() or 1

    @property
    def inner(self) -> InnerOptions:
        return InnerOptions(inner_tol=self.inner_tol, max_inner=self.max_inner)

    @property
    def tolerances(self) -> Tolerances:
        return Tolerances(kkt_tol=self.kkt_tol, feas_tol=self.feas_tol)

    def to_dict(self) -> dict:
        return {k: v for k, v in vars(self).items()}


@dataclass
class Solution:
    program: AdaptedProgram
    multipliers: MultiplierPair
    primal_value: float
    dual_value: float
    residuals: CertReport
    iterations: int
    converged: bool
    status: str = "converged"


@dataclass
class OracleResult:
    value: float
    program: AdaptedProgram
    grid_step: float
    slack: float
    grid_points: int


# ---------------------------------------------------------------------------
# primal recovery
# ---------------------------------------------------------------------------

def primal_recovery(inst: ProblemInstance, iterate_history: Sequence) -> AdaptedProgram:
    """Step-weighted average of inner maximisers, adapted, then projected.

    ``iterate_history`` holds ``(weight, program)`` pairs or bare programs
    (equal weights).
    """
    if not len(iterate_history):
        raise EmptyHistory("no iterates to average")
    total = np.zeros((inst.atom_count, inst.total_dim))
    wsum = 0.0
    for item in iterate_history:
        weight, prog = item if isinstance(item, tuple) else (1.0, item)
        total += weight * as_values(inst, prog)
        wsum += weight
    return _recover(inst, total / wsum)


def _recover(inst: ProblemInstance, v: np.ndarray) -> AdaptedProgram:
    return AdaptedProgram(project_values(inst, adapt_values(inst, v)))


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------

def blend_toward_slater(inst: ProblemInstance, v: np.ndarray, witness: np.ndarray, kappa: float) -> np.ndarray:
    """Smallest convex step toward a strictly feasible witness that restores g >= 0.

    With affine g, g((1-s) v + s w) >= (1-s) g(v) + s kappa, so s = viol / (viol + kappa)
    suffices.  Adaptedness and admissibility survive the convex combination.
    """
    viol = max((float(np.maximum(0.0, -g).max()) for g in constraint_values(inst, v).values()), default=0.0)
    if viol == 0.0 or not kappa > 0:
        return v
    s = viol / (viol + kappa)
    return (1.0 - s) * v + s * witness


def check_preconditions(inst: ProblemInstance):
    """Raise PreconditionFailed unless the instance is valid with Slater points.

    Returns the strictly feasible material witness, or None without constraints.
    """
    report = validate_instance(inst)
    if not report.ok:
        raise PreconditionFailed("validation failed: " + "; ".join(
            f"{c.name}: {c.detail}" for c in report.failures()))
    if not slater_information(inst).passed:
        raise PreconditionFailed("interior condition: some admissible set has empty interior")
    return _material_witness(inst) if inst.constraints else None


def _material_witness(inst: ProblemInstance):
    try:
        res = slater_material(inst)
    except SolverNotConverged as exc:
        raise PreconditionFailed(f"strict material feasibility undecided: {exc}") from exc
    if not res.kappa > 0:
        raise PreconditionFailed(f"no strictly feasible program: best uniform constraint slack is {res.kappa:.6g}")
    return res


def _expand_p(inst: ProblemInstance, p_blocks: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
    return {t: pb[inst.partitions[t].block_of] for t, pb in p_blocks.items()}


def _pair(inst: ProblemInstance, p_blocks, q) -> MultiplierPair:
    return MultiplierPair(p=_expand_p(inst, p_blocks), q=q, q_tilde=adapt_values(inst, q))


def _screen(inst, cand, mult, dual, lstar_or_none, opts):
    """Cheap residuals of a candidate against the already computed inner maximum."""
    primal = evaluate_objective(inst, cand)
    if lstar_or_none is not None:
        gap = float(np.max(lstar_or_none - integrand_values(inst, cand, mult)))
    else:
        gap = dual.value - lagrangian_value(inst, cand, mult)
    cs_as, _ = cs_residuals(inst, cand, mult)
    material = max((float(np.maximum(0.0, -g).max()) for g in constraint_values(inst, cand).values()),
                   default=0.0) + 0.0
    dgap = dual.value - primal
    merit = max(gap / opts.kkt_tol, cs_as / opts.kkt_tol, abs(dgap) / opts.kkt_tol,
                material / opts.feas_tol)
    return {"primal": primal, "gap": max(gap, 0.0), "cs": cs_as, "material": material,
            "duality_gap": dgap, "merit": merit}


def solve(inst: ProblemInstance, opts: SolveOptions | None = None,
          log_record: Callable[[dict], None] | None = None) -> Solution:
    """Dual subgradient descent with certificate-driven stopping."""
    opts = opts or SolveOptions()
    if opts.check_preconditions:
        witness = check_preconditions(inst)
    else:
        try:
            witness = _material_witness(inst) if inst.constraints else None
        except PreconditionFailed:
            witness = None
    inner = opts.inner
    tols = opts.tolerances
    integral = isinstance(inst.objective, IntegralQuadratic)

    p_blocks = {t: np.zeros((inst.partitions[t].block_count, con.out_dim))
                for t, con in inst.constraints.items()}
    q = np.zeros((inst.atom_count, inst.total_dim))
    start = slater_information(inst).center
    avg_sum = np.zeros_like(start)
    weight_sum = 0.0

    best = None          # (merit, candidate values, multipliers)
    best_gap = math.inf
    status = "max_outer"
    k = 0
    for k in range(1, opts.max_outer + 1):
        mult = _pair(inst, p_blocks, q)
        dual = dual_value(inst, mult, inner, start=start)
        x_star = dual.argmax.values
        start = x_star
        alpha = opts.step0 / math.sqrt(k)
        avg_sum += alpha * x_star
        weight_sum += alpha

        candidates = [_recover(inst, x_star).values, _recover(inst, avg_sum / weight_sum).values]
        if witness is not None:
            candidates += [blend_toward_slater(inst, c, witness.witness, witness.kappa) for c in candidates]
        lstar = dual.pointwise if integral else None
        screens = [_screen(inst, c, mult, dual, lstar, opts) for c in candidates]
        pick = min(range(len(candidates)), key=lambda i: screens[i]["merit"])
        sc = screens[pick]
        best_gap = min(best_gap, sc["gap"])
        if best is None or sc["merit"] < best[0]:
            best = (sc["merit"], candidates[pick], mult)
        if log_record is not None:
            log_record({"k": k, "alpha": alpha, "dual_value": dual.value, "primal_value": sc["primal"],
                        "stationarity_gap": sc["gap"], "best_stationarity_gap": best_gap,
                        "cs_residual": sc["cs"], "material_residual": sc["material"],
                        "adaptedness_residual": float(np.abs(x_star - adapt_values(inst, x_star)).max()),
                        "candidate": CANDIDATE_NAMES[pick]})
        if sc["merit"] <= 1.0:
            report = check_kkt(inst, (AdaptedProgram(candidates[pick]), mult), tols, inner, seed=opts.seed)
            if report.passed:
                status = "converged"
                best = (sc["merit"], candidates[pick], mult)
                break

        dp, dq = dual_subgradient(inst, mult, x_star)
        for t in p_blocks:
            p_blocks[t] = np.maximum(0.0, p_blocks[t] - alpha * dp[t])
        q = q - alpha * dq
        peak = max([float(np.abs(q).max(initial=0.0))] + [float(pb.max(initial=0.0)) for pb in p_blocks.values()])
        if peak > opts.multiplier_cap:
            status = "multiplier_blowup"
            log.warning("multiplier magnitude %.3g exceeded cap at iteration %d", peak, k)
            break

    _, values, mult = best
    if opts.normalize_q:
        mult = mult.normalized(inst)
    program = AdaptedProgram(values)
    report = check_kkt(inst, (program, mult), tols, inner, seed=opts.seed)
    converged = status == "converged" and report.passed
    if status == "converged" and not converged:
        status = "max_outer"
    return Solution(program=program, multipliers=mult, primal_value=report.primal_value,
                    dual_value=report.dual_value, residuals=report, iterations=k,
                    converged=converged, status=status)


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

def _grid(lo: float, hi: float, h: float) -> np.ndarray:
    count = int(math.floor((hi - lo) / h + 1e-9)) + 1
    pts = lo + h * np.arange(count)
    if hi - pts[-1] > 1e-12:
        pts = np.append(pts, hi)
    return pts


def oracle_solve(inst: ProblemInstance, h: float, delta: float, limit: int = ORACLE_LIMIT) -> OracleResult:
    """Exhaustive search over a grid of adapted programs.

    Each block-coordinate of each DM takes values on a grid of step ``h``;
    combinations violating any constraint row by more than ``delta`` at any
    atom are discarded.
    """
    if any(A.kind != "box" for A in inst.admissible):
        raise BallNotSupportedByOracle("grid oracle supports box admissible sets only")
    grids, col_of = [], np.empty((inst.atom_count, inst.total_dim), dtype=int)
    for t, sl in enumerate(inst.slices):
        A, part = inst.admissible[t], inst.partitions[t]
        first = len(grids)
        for b in range(part.block_count):
            for j in range(inst.dims[t]):
                grids.append(_grid(float(A.lo[b, j]), float(A.hi[b, j]), h))
        for j in range(inst.dims[t]):
            col_of[:, sl.start + j] = first + part.block_of * inst.dims[t] + j
    sizes = [len(g) for g in grids]
    total = math.prod(sizes)
    if total > limit:
        raise OracleTooLarge(total, limit)

    best_val, best_x = -math.inf, None
    P = inst.prob
    obj = inst.objective
    for lo_idx in range(0, total, ORACLE_CHUNK):
        idx = np.unravel_index(np.arange(lo_idx, min(total, lo_idx + ORACLE_CHUNK)), sizes)
        Z = np.stack([g[i] for g, i in zip(grids, idx)], axis=1)
        X = Z[:, col_of]
        ok = np.ones(len(Z), dtype=bool)
        for t, G in inst.dense.items():
            g = inst.constraints[t].b + np.einsum("nrm,snm->snr", G, X)
            ok &= np.all(g >= -delta, axis=(1, 2))
        if not ok.any():
            continue
        X = X[ok]
        if isinstance(obj, IntegralQuadratic):
            vals = (obj.d + np.einsum("nm,snm->sn", obj.c, X)
                    - 0.5 * np.einsum("snm,nmk,snk->sn", X, obj.Q, X)) @ P
        else:
            s = X @ obj.w
            vals = np.einsum("nm,snm->sn", obj.r, X) @ P - obj.lam * ((s - (s @ P)[:, None]) ** 2) @ P
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best_x = float(vals[i]), X[i].copy()
    if best_x is None:
        raise EmptyFeasibleSet(f"no grid point satisfies the constraints within slack {delta}")
    return OracleResult(value=best_val, program=AdaptedProgram(best_x), grid_step=h, slack=delta,
                        grid_points=total)
