"""Optimality certificates for a candidate (program, multipliers) pair.

Every check here recomputes from scratch; nothing is taken from the solver.
A certificate accepts any object exposing ``program`` and ``multipliers``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import NotIntegralObjective
from .lagrangian import (
    InnerOptions,
    MultiplierPair,
    dual_value,
    integrand_values,
    lagrangian_value,
    linear_terms,
)
from .programs import (
    ADAPTEDNESS_TOL,
    MATERIAL_TOL,
    FeasibilityReport,
    as_values,
    constraint_values,
    evaluate_objective,
    feasibility_residuals,
)
from .scenario_space import cond_expect, is_measurable
from .team_model import IntegralQuadratic, ProblemInstance

log = logging.getLogger(__name__)

ADMISSIBILITY_TOL = 1e-9
MAX_VERTEX_DIM = 12


@dataclass
class Tolerances:
    kkt_tol: float = 1e-4
    feas_tol: float = MATERIAL_TOL
    adaptedness_tol: float = ADAPTEDNESS_TOL
    admissibility_tol: float = ADMISSIBILITY_TOL


@dataclass
class CertReport:
    gap_kind: str                  # "stationarity" (integral) or "saddle" (mean-variance)
    stationarity_gap: float
    cs_as_residual: float
    cs_expected_residual: float
    feasibility: FeasibilityReport
    multipliers_nonneg_adapted: bool   # p >= 0 and constant on blocks
    multipliers_integrable: bool       # all entries finite
    duality_gap: float
    primal_value: float
    dual_value: float
    tolerances: Tolerances = field(default_factory=Tolerances)

    @property
    def passed(self) -> bool:
        tol = self.tolerances
        return bool(
            self.stationarity_gap <= tol.kkt_tol
            and self.cs_as_residual <= tol.kkt_tol
            and self.cs_expected_residual <= tol.kkt_tol
            and self.feasibility.max_material <= tol.feas_tol
            and self.feasibility.max_adaptedness <= tol.adaptedness_tol
            and self.feasibility.max_admissibility <= tol.admissibility_tol
            and self.multipliers_nonneg_adapted and self.multipliers_integrable
            and abs(self.duality_gap) <= tol.kkt_tol)

    def scalars(self) -> dict[str, float]:
        return {
            "stationarity_gap": self.stationarity_gap,
            "cs_as_residual": self.cs_as_residual,
            "cs_expected_residual": self.cs_expected_residual,
            "material_residual": self.feasibility.max_material,
            "adaptedness_residual": self.feasibility.max_adaptedness,
            "admissibility_residual": self.feasibility.max_admissibility,
            "duality_gap": self.duality_gap,
            "primal_value": self.primal_value,
            "dual_value": self.dual_value,
        }

    def to_dict(self) -> dict:
        out = {"gap_kind": self.gap_kind, **self.scalars(),
               "multipliers_nonneg_adapted": self.multipliers_nonneg_adapted,
               "multipliers_integrable": self.multipliers_integrable,
               "pass": self.passed,
               "tolerances": vars(self.tolerances).copy()}
        return out


def _unpack(solution):
    if isinstance(solution, tuple):
        return solution
    return solution.program, solution.multipliers


def cs_residuals(inst: ProblemInstance, v: np.ndarray, mult: MultiplierPair) -> tuple[float, float]:
    """(max_{t,w} sum_r |p g|, max_t |E p_t . g_t|) at program values ``v``."""
    P = inst.prob
    as_res, exp_res = 0.0, 0.0
    for t, g in constraint_values(inst, v).items():
        prod = mult.p[t] * g
        as_res = max(as_res, float(np.abs(prod).sum(axis=1).max()))
        exp_res = max(exp_res, abs(float(P @ prod.sum(axis=1))))
    return as_res, exp_res


def multiplier_validity(inst: ProblemInstance, mult: MultiplierPair) -> tuple[bool, bool]:
    a = all(np.all(pt >= 0) and is_measurable(inst.partitions[t], pt) for t, pt in mult.p.items())
    b = bool(np.all(np.isfinite(mult.q))) and all(np.all(np.isfinite(pt)) for pt in mult.p.values())
    return bool(a), b


def sample_programs(inst: ProblemInstance, n_samples: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from A(w) per atom and DM, shape (n_samples, n_atoms, m_total)."""
    n = inst.atom_count
    out = np.empty((n_samples, n, inst.total_dim))
    for t, sl in enumerate(inst.slices):
        m = inst.dims[t]
        if inst.admissible[t].kind == "box":
            lo, hi = inst.box_bounds(t)
            out[:, :, sl] = lo + (hi - lo) * rng.random((n_samples, n, m))
        else:
            c, rad = inst.ball_params(t)
            u = np.empty((n_samples, n, m))
            todo = np.ones((n_samples, n), dtype=bool)
            while todo.any():
                draw = rng.uniform(-1.0, 1.0, (n_samples, n, m))
                inside = (np.linalg.norm(draw, axis=2) <= 1.0) & todo
                u[inside] = draw[inside]
                todo &= ~inside
            out[:, :, sl] = c + rad[:, None] * u
    return out


def lagrangian_batch(inst: ProblemInstance, X: np.ndarray, mult: MultiplierPair) -> np.ndarray:
    """L evaluated at a stack of programs X (S, n_atoms, m_total)."""
    P = inst.prob
    lin, const = linear_terms(inst, mult)
    obj = inst.objective
    if isinstance(obj, IntegralQuadratic):
        per_atom = (obj.d + np.einsum("nm,snm->sn", obj.c + lin, X)
                    - 0.5 * np.einsum("snm,nmk,snk->sn", X, obj.Q, X) + const)
        return per_atom @ P
    s = X @ obj.w
    mean = s @ P
    return (np.einsum("nm,snm->sn", obj.r + lin, X) + const) @ P - obj.lam * ((s - mean[:, None]) ** 2) @ P


def _max_lagrangian_mv(inst, v, mult, inner, n_samples, seed):
    rng = np.random.default_rng(seed)
    best = dual_value(inst, mult, inner, start=v).value
    if n_samples > 0:
        X = sample_programs(inst, n_samples, rng)
        vals = lagrangian_batch(inst, X, mult)
        i = int(np.argmax(vals))
        best = max(best, float(vals[i]), dual_value(inst, mult, inner, start=X[i]).value)
    return best


def check_kkt(inst: ProblemInstance, solution, tols: Tolerances | None = None,
              inner: InnerOptions | None = None, n_samples: int = 200, seed: int = 0) -> CertReport:
    """Recompute every Kuhn-Tucker residual for ``(program, multipliers)``."""
    tols = tols or Tolerances()
    inner = inner or InnerOptions()
    program, mult = _unpack(solution)
    v = as_values(inst, program)
    primal = evaluate_objective(inst, v)
    if isinstance(inst.objective, IntegralQuadratic):
        dual = dual_value(inst, mult, inner, start=v)
        gap = float(np.max(dual.pointwise - integrand_values(inst, v, mult)))
        phi, kind = dual.value, "stationarity"
    else:
        phi = _max_lagrangian_mv(inst, v, mult, inner, n_samples, seed)
        gap, kind = phi - lagrangian_value(inst, v, mult), "saddle"
    cs_as, cs_exp = cs_residuals(inst, v, mult)
    valid_a, valid_b = multiplier_validity(inst, mult)
    return CertReport(gap_kind=kind, stationarity_gap=max(gap, 0.0), cs_as_residual=cs_as,
                      cs_expected_residual=cs_exp, feasibility=feasibility_residuals(inst, v),
                      multipliers_nonneg_adapted=valid_a, multipliers_integrable=valid_b,
                      duality_gap=phi - primal, primal_value=primal, dual_value=phi, tolerances=tols)


@dataclass
class SaddleCheck:
    violation: float
    n_samples: int
    warning: bool = False


def saddle_sample_check(inst: ProblemInstance, solution, n_samples: int = 1000, seed: int = 0,
                        inner: InnerOptions | None = None) -> SaddleCheck:
    """Largest sampled excess of L(x) over F(x_bar); zero means no violation found."""
    program, mult = _unpack(solution)
    v = as_values(inst, program)
    if n_samples <= 0:
        log.warning("saddle check with no samples is vacuous")
        return SaddleCheck(violation=0.0, n_samples=0, warning=True)
    rng = np.random.default_rng(seed)
    X = sample_programs(inst, n_samples, rng)
    vals = lagrangian_batch(inst, X, mult)
    best = float(vals.max())
    if not isinstance(inst.objective, IntegralQuadratic):
        start = X[int(np.argmax(vals))]
        best = max(best, dual_value(inst, mult, inner or InnerOptions(), start=start).value)
    return SaddleCheck(violation=max(0.0, best - evaluate_objective(inst, v)), n_samples=n_samples)


def duality_gap(inst: ProblemInstance, solution, inner: InnerOptions | None = None) -> float:
    program, mult = _unpack(solution)
    v = as_values(inst, program)
    return dual_value(inst, mult, inner or InnerOptions(), start=v).value - evaluate_objective(inst, v)


# ---------------------------------------------------------------------------
# no-regret insurance
# ---------------------------------------------------------------------------

@dataclass
class InsuranceReport:
    premium: np.ndarray         # (dm, atom): q~_t . x_t
    compensation: np.ndarray    # (dm, atom): q_t . x_t
    fairness_residual: float
    no_regret_violation: float

    def to_dict(self, inst: ProblemInstance) -> dict:
        def table(arr):
            return {inst.dm_ids[t]: {inst.scenario_ids[a]: float(arr[t, a]) for a in range(inst.atom_count)}
                    for t in range(inst.dm_count)}
        return {"premium": table(self.premium), "compensation": table(self.compensation),
                "fairness_residual": self.fairness_residual,
                "no_regret_violation": self.no_regret_violation}


def _box_vertices(inst: ProblemInstance, w: int) -> np.ndarray | None:
    if inst.total_dim > MAX_VERTEX_DIM or any(A.kind != "box" for A in inst.admissible):
        return None
    lo = np.concatenate([inst.box_bounds(t)[0][w] for t in range(inst.dm_count)])
    hi = np.concatenate([inst.box_bounds(t)[1][w] for t in range(inst.dm_count)])
    corners = np.array(list(itertools.product((0.0, 1.0), repeat=inst.total_dim)))
    return lo + corners * (hi - lo)


def insurance_scheme(inst: ProblemInstance, solution, n_samples: int = 100, seed: int = 0) -> InsuranceReport:
    """Insurance transfers with the sampled no-regret check.

    The adjusted payoff of atom ``w`` is ``f(w, a) + sum_t (q_t - q~_t)(w) . a_t``.
    Candidate deviations are uniform samples of A(w) plus the box vertices;
    when material constraints are present only deviations satisfying them at
    ``w`` are admitted.
    """
    obj = inst.objective
    if not isinstance(obj, IntegralQuadratic):
        raise NotIntegralObjective("insurance needs an integral objective")
    program, mult = _unpack(solution)
    v = as_values(inst, program)
    T, n = inst.dm_count, inst.atom_count
    premium = np.array([np.einsum("nm,nm->n", mult.q_tilde[:, sl], v[:, sl]) for sl in inst.slices])
    compensation = np.array([np.einsum("nm,nm->n", mult.q[:, sl], v[:, sl]) for sl in inst.slices])
    fairness = 0.0
    for t in range(T):
        cond = cond_expect(inst.space, inst.partitions[t], compensation[t])
        fairness = max(fairness, float(np.abs(cond - premium[t]).max()))

    rng = np.random.default_rng(seed)
    samples = sample_programs(inst, n_samples, rng) if n_samples > 0 else np.empty((0, n, inst.total_dim))
    dq = mult.q - mult.q_tilde
    worst = 0.0
    for w in range(n):
        cands = samples[:, w, :]
        verts = _box_vertices(inst, w)
        if verts is not None:
            cands = np.vstack([cands, verts])
        if inst.constraints:
            ok = np.ones(len(cands), dtype=bool)
            for t, G in inst.dense.items():
                g = inst.constraints[t].b[w] + cands @ G[w].T
                ok &= np.all(g >= 0.0, axis=1)
            cands = cands[ok]
        if not len(cands):
            continue
        payoff = obj.d[w] + cands @ (obj.c[w] + dq[w]) - 0.5 * np.einsum("sm,mk,sk->s", cands, obj.Q[w], cands)
        ref = obj.d[w] + v[w] @ (obj.c[w] + dq[w]) - 0.5 * v[w] @ obj.Q[w] @ v[w]
        worst = max(worst, float(payoff.max() - ref))
    return InsuranceReport(premium=premium, compensation=compensation,
                           fairness_residual=fairness, no_regret_violation=worst)

