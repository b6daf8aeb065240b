"""Stochastic multipliers with the Lagrangian and its dual function.

For multipliers ``p`` (material) and ``q`` (informational) the Lagrangian is

    L(x) = F(x) + sum_t E p_t . g_t(x^t) + sum_t E q_t . (x_t - E_t x_t)

and, because ``E q_t (x_t - E_t x_t) = E (q_t - E_t q_t) x_t``, an integral
objective makes ``L`` the expectation of the per-atom integrand

    l(w, a) = f(w, a) + sum_t p_t(w) . g_t(w, a^t) + (q_t(w) - q~_t(w)) . a_t.

Maximising ``L`` over all (non-adapted) programs therefore splits into one
small concave problem per atom, solved here by projected gradient ascent.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Mapping, Optional

import numpy as np

from .errors import (
    DimensionMismatch,
    InnerNotConverged,
    MaterialMultiplierNotAdapted,
    NegativeMaterialMultiplier,
    NotIntegralObjective,
)
from .programs import (
    Program,
    ProgramLike,
    adapt_values,
    as_values,
    constraint_values,
    evaluate_objective,
    objective_pointwise,
    project_values,
)
from .scenario_space import is_measurable
from .team_model import IntegralQuadratic, ProblemInstance, slater_information

log = logging.getLogger(__name__)

ARMIJO_SLOPE = 1e-4
ARMIJO_SHRINK = 0.5
MAX_BACKTRACK = 60
MAX_EXPAND = 60


@dataclass(frozen=True, eq=False)
class MultiplierPair:
    p: Mapping[int, np.ndarray]   # t -> (n_atoms, l_t), block-constant, >= 0
    q: np.ndarray                 # (n_atoms, m_total)
    q_tilde: np.ndarray           # E_t q_t, stacked

    def normalized(self, inst: ProblemInstance) -> "MultiplierPair":
        """Gauge representative with E_t q_t = 0."""
        q = self.q - self.q_tilde
        return replace(self, q=q, q_tilde=adapt_values(inst, q))


@dataclass
class InnerOptions:
    inner_tol: float = 1e-8
    max_inner: int = 10000


@dataclass
class DualEvaluation:
    value: float
    argmax: Program
    pointwise: Optional[np.ndarray]   # l*(w) per atom, integral kind only
    pg_norm: float
    iterations: int
    warning: bool = False


def make_multipliers(inst: ProblemInstance, p_values: Mapping[int, object] | None = None,
                     q_values: ProgramLike | None = None, tol: float = 0.0) -> MultiplierPair:
    n = inst.atom_count
    p = {}
    p_values = dict(p_values or {})
    for t, con in inst.constraints.items():
        raw = p_values.pop(t, None)
        pt = np.zeros((n, con.out_dim)) if raw is None else np.asarray(raw, dtype=float).reshape(n, con.out_dim)
        if np.any(pt < -tol):
            raise NegativeMaterialMultiplier(f"p of DM {inst.dm_ids[t]} has a negative entry")
        if not is_measurable(inst.partitions[t], pt, tol):
            raise MaterialMultiplierNotAdapted(f"p of DM {inst.dm_ids[t]} is not block-constant")
        p[t] = pt
    if p_values:
        raise DimensionMismatch(f"multipliers given for unconstrained DMs {sorted(p_values)}")
    q = np.zeros((n, inst.total_dim)) if q_values is None else as_values(inst, q_values).copy()
    return MultiplierPair(p=p, q=q, q_tilde=adapt_values(inst, q))


def zero_multipliers(inst: ProblemInstance) -> MultiplierPair:
    return make_multipliers(inst)


def lagrangian_value(inst: ProblemInstance, x: ProgramLike, mult: MultiplierPair) -> float:
    v = as_values(inst, x)
    P = inst.prob
    total = evaluate_objective(inst, v)
    for t, g in constraint_values(inst, v).items():
        total += float(P @ np.einsum("nr,nr->n", mult.p[t], g))
    total += float(P @ np.einsum("nm,nm->n", mult.q, v - adapt_values(inst, v)))
    return total


def lagrangian_terms(inst: ProblemInstance, x: ProgramLike, mult: MultiplierPair) -> dict:
    """The Lagrangian split into the objective plus per-DM multiplier terms."""
    v = as_values(inst, x)
    P = inst.prob
    drift = v - adapt_values(inst, v)
    material = {t: float(P @ np.einsum("nr,nr->n", mult.p[t], g))
                for t, g in constraint_values(inst, v).items()}
    information = {t: float(P @ np.einsum("nm,nm->n", mult.q[:, sl], drift[:, sl]))
                   for t, sl in enumerate(inst.slices)}
    objective = evaluate_objective(inst, v)
    return {"objective": objective, "material": material, "information": information,
            "total": objective + sum(material.values()) + sum(information.values())}


def linear_terms(inst: ProblemInstance, mult: MultiplierPair) -> tuple[np.ndarray, np.ndarray]:
    """Per-atom coefficient of ``a`` and constant contributed by the multipliers."""
    lin = mult.q - mult.q_tilde
    const = np.zeros(inst.atom_count)
    for t, G in inst.dense.items():
        lin = lin + np.einsum("nr,nrm->nm", mult.p[t], G)
        const += np.einsum("nr,nr->n", mult.p[t], inst.constraints[t].b)
    return lin, const


def _require_integral(inst: ProblemInstance) -> IntegralQuadratic:
    if not isinstance(inst.objective, IntegralQuadratic):
        raise NotIntegralObjective("operation needs an integral objective")
    return inst.objective


def integrand_values(inst: ProblemInstance, v: np.ndarray, mult: MultiplierPair) -> np.ndarray:
    """l(w, v(w)) for every atom."""
    _require_integral(inst)
    lin, const = linear_terms(inst, mult)
    return objective_pointwise(inst, v) + np.einsum("nm,nm->n", lin, v) + const


def pointwise_integrand(inst: ProblemInstance, w: int, a, mult: MultiplierPair) -> float:
    obj = _require_integral(inst)
    a = np.asarray(a, dtype=float).reshape(inst.total_dim)
    val = obj.d[w] + obj.c[w] @ a - 0.5 * a @ obj.Q[w] @ a
    for t, con in inst.constraints.items():
        g = con.b[w] + sum(Mi[w] @ a[inst.slices[i]] for i, Mi in con.M.items())
        val += mult.p[t][w] @ g
    val += (mult.q[w] - mult.q_tilde[w]) @ a
    return float(val)


def integrand_gradient(inst: ProblemInstance, w: int, a, mult: MultiplierPair) -> np.ndarray:
    obj = _require_integral(inst)
    a = np.asarray(a, dtype=float).reshape(inst.total_dim)
    lin, _ = linear_terms(inst, mult)
    return obj.c[w] + lin[w] - obj.Q[w] @ a


def lagrangian_gradient(inst: ProblemInstance, x: ProgramLike, mult: MultiplierPair) -> np.ndarray:
    """Euclidean gradient of L with respect to the per-atom decision values."""
    v = as_values(inst, x)
    P = inst.prob
    lin, _ = linear_terms(inst, mult)
    obj = inst.objective
    if isinstance(obj, IntegralQuadratic):
        return P[:, None] * (obj.c + lin - np.einsum("nmk,nk->nm", obj.Q, v))
    s = v @ obj.w
    return P[:, None] * (obj.r + lin - 2.0 * obj.lam * np.outer(s - P @ s, obj.w))


# ---------------------------------------------------------------------------
# inner maximisation
# ---------------------------------------------------------------------------

def _ascend_pointwise(inst: ProblemInstance, base: np.ndarray, Q: np.ndarray, start: np.ndarray,
                      opts: InnerOptions, rows=None) -> tuple[np.ndarray, np.ndarray, int]:
    """Projected gradient ascent with Armijo backtracking, all given atoms at once.

    Maximises ``base . a - 0.5 a' Q a`` per atom.  Returns the iterate, the
    per-atom projected-gradient norms and the iteration count.  Increments of
    the quadratic are computed in closed form so the sufficient-increase test
    stays meaningful near the optimum.
    """
    def proj(v):
        return project_values(inst, v, rows)

    a = proj(start)
    it = 0
    for it in range(1, opts.max_inner + 1):
        g = base - np.einsum("nmk,nk->nm", Q, a)
        pg = np.linalg.norm(a - proj(a + g), axis=1)
        active = pg > opts.inner_tol
        if not active.any():
            return a, pg, it - 1
        def increment(step):
            trial = proj(a + step[:, None] * g)
            d = trial - a
            slope = np.einsum("nm,nm->n", g, d)
            curv = 0.5 * np.einsum("nm,nmk,nk->n", d, Q, d)
            return trial, slope, curv

        step = np.where(active, 1.0, 0.0)
        pending = active.copy()
        new = a.copy()
        gain = np.zeros(len(a))
        full = np.zeros(len(a), dtype=bool)
        for j in range(MAX_BACKTRACK):
            trial, slope, curv = increment(step)
            ok = pending & ((1.0 - ARMIJO_SLOPE) * slope >= curv)
            new[ok] = trial[ok]
            gain[ok] = (slope - curv)[ok]
            if j == 0:
                full = ok.copy()
            pending &= ~ok
            if not pending.any():
                break
            step = np.where(pending, step * ARMIJO_SHRINK, 0.0)
        # unit step accepted: keep doubling while the exact increment grows
        grow = full.copy()
        step = np.where(grow, 1.0, 0.0)
        for _ in range(MAX_EXPAND):
            if not grow.any():
                break
            step = np.where(grow, step * 2.0, 0.0)
            trial, slope, curv = increment(step)
            better = grow & ((1.0 - ARMIJO_SLOPE) * slope >= curv) & (slope - curv > gain)
            new[better] = trial[better]
            gain[better] = (slope - curv)[better]
            grow = better
        if np.array_equal(new, a):
            break
        a = new
    g = base - np.einsum("nmk,nk->nm", Q, a)
    pg = np.linalg.norm(a - proj(a + g), axis=1)
    return a, pg, it


def _ascend_joint(inst: ProblemInstance, lin: np.ndarray, start: np.ndarray,
                  opts: InnerOptions) -> tuple[np.ndarray, float, int]:
    """Joint projected gradient ascent for the mean-variance Lagrangian.

    The search direction is the gradient in the probability-weighted inner
    product (the Euclidean gradient divided by P(w)); the projection onto the
    product of per-atom sets is unchanged by that rescaling.
    """
    obj = inst.objective
    P = inst.prob
    base = obj.r + lin
    x = project_values(inst, start)
    pg = np.inf
    it = 0

    def direction(x):
        s = x @ obj.w
        return base - 2.0 * obj.lam * np.outer(s - P @ s, obj.w)

    for it in range(1, opts.max_inner + 1):
        g = direction(x)
        pg = float(np.linalg.norm(x - project_values(inst, x + g)))
        if pg <= opts.inner_tol:
            return x, pg, it - 1
        def increment(step):
            trial = project_values(inst, x + step * g)
            d = trial - x
            slope = float(P @ np.einsum("nm,nm->n", g, d))
            sd = d @ obj.w
            curv = obj.lam * float(P @ (sd - P @ sd) ** 2)
            return trial, slope, curv

        step = 1.0
        accepted = None
        for j in range(MAX_BACKTRACK):
            trial, slope, curv = increment(step)
            if (1.0 - ARMIJO_SLOPE) * slope >= curv:
                accepted, gain = trial, slope - curv
                break
            step *= ARMIJO_SHRINK
        if accepted is None:
            break
        if j == 0:
            for _ in range(MAX_EXPAND):
                step *= 2.0
                trial, slope, curv = increment(step)
                if not ((1.0 - ARMIJO_SLOPE) * slope >= curv and slope - curv > gain):
                    break
                accepted, gain = trial, slope - curv
        if np.array_equal(accepted, x):
            break
        x = accepted
    g = direction(x)
    pg = float(np.linalg.norm(x - project_values(inst, x + g)))
    return x, pg, it


def _mean_variance_box(inst: ProblemInstance, base: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Exact maximiser of E[base . x] - lam Var(w . x) over a product of boxes.

    Uses Var(s) = min_mu E(s - mu)^2.  For fixed mu every atom solves
    max base . a - lam (w . a - mu)^2; with u_i = w_i a_i the map
    sigma -> max{base . a : w . a = sigma} is concave piecewise linear with
    slopes base_i / w_i, so the optimal sigma fills segments greedily.  The
    optimal mu is the root of E sigma(mu) - mu, which is non-increasing.
    """
    obj = inst.objective
    P = inst.prob
    lo = np.concatenate([inst.box_bounds(t)[0] for t in range(inst.dm_count)], axis=1)
    hi = np.concatenate([inst.box_bounds(t)[1] for t in range(inst.dm_count)], axis=1)
    w, lam = obj.w, obj.lam
    # coordinates outside the variance term are linear: go to the better bound
    x = np.where(base > 0, hi, np.where(base < 0, lo, np.clip(start, lo, hi)))
    live = np.flatnonzero(w != 0.0)
    if lam == 0.0 or live.size == 0:
        return x
    wl = w[live]
    u_lo = np.minimum(wl * lo[:, live], wl * hi[:, live])
    u_hi = np.maximum(wl * lo[:, live], wl * hi[:, live])
    rho = base[:, live] / wl
    order = np.argsort(-rho, axis=1, kind="stable")
    rho_s = np.take_along_axis(rho, order, axis=1)
    length = np.take_along_axis(u_hi - u_lo, order, axis=1)
    seg_start = u_lo.sum(axis=1)[:, None] + np.concatenate(
        [np.zeros((len(base), 1)), np.cumsum(length, axis=1)[:, :-1]], axis=1)

    def fill(mu):
        return np.clip(mu + rho_s / (2.0 * lam) - seg_start, 0.0, length)

    def excess(mu):
        sigma = u_lo.sum(axis=1) + fill(mu).sum(axis=1)
        return float(P @ sigma) - mu

    a, b = float(u_lo.sum(axis=1).min()), float(u_hi.sum(axis=1).max())
    for _ in range(200):
        mid = 0.5 * (a + b)
        if excess(mid) > 0.0:
            a = mid
        else:
            b = mid
        if b - a <= 1e-15 * (1.0 + abs(mid)):
            break
    u_sorted = fill(0.5 * (a + b))
    u = u_lo.copy()
    np.put_along_axis(u, order, np.take_along_axis(u_lo, order, axis=1) + u_sorted, axis=1)
    x[:, live] = np.clip(u / wl, lo[:, live], hi[:, live])
    return x


def _check_inner(pg_max: float, opts: InnerOptions) -> bool:
    if pg_max > 100 * opts.inner_tol:
        raise InnerNotConverged(f"projected gradient norm {pg_max:.3g} after {opts.max_inner} iterations")
    if pg_max > opts.inner_tol:
        log.warning("inner ascent stopped at projected gradient norm %.3g", pg_max)
        return True
    return False


def maximize_pointwise(inst: ProblemInstance, w: int, mult: MultiplierPair,
                       opts: InnerOptions | None = None, start=None) -> tuple[np.ndarray, float]:
    """Maximiser and maximum of l(w, .) over A(w)."""
    opts = opts or InnerOptions()
    obj = _require_integral(inst)
    lin, const = linear_terms(inst, mult)
    if start is None:
        start = slater_information(inst).center[w]
    start = np.asarray(start, dtype=float).reshape(1, inst.total_dim)
    rows = [w]
    a, pg, _ = _ascend_pointwise(inst, obj.c[rows] + lin[rows], obj.Q[rows], start, opts, rows)
    _check_inner(float(pg[0]), opts)
    a = a[0]
    return a, float(obj.d[w] + obj.c[w] @ a - 0.5 * a @ obj.Q[w] @ a + lin[w] @ a + const[w])


def dual_value(inst: ProblemInstance, mult: MultiplierPair, opts: InnerOptions | None = None,
               start: ProgramLike | None = None) -> DualEvaluation:
    """phi(p, q) = max over all programs of L, with a maximiser."""
    opts = opts or InnerOptions()
    lin, const = linear_terms(inst, mult)
    if start is None:
        start = slater_information(inst).center
    start = as_values(inst, start)
    P = inst.prob
    if isinstance(inst.objective, IntegralQuadratic):
        obj = inst.objective
        a, pg, its = _ascend_pointwise(inst, obj.c + lin, obj.Q, start, opts)
        pg_max = float(pg.max())
        warn = _check_inner(pg_max, opts)
        lstar = objective_pointwise(inst, a) + np.einsum("nm,nm->n", lin, a) + const
        return DualEvaluation(value=float(P @ lstar), argmax=Program(a), pointwise=lstar,
                              pg_norm=pg_max, iterations=its, warning=warn)
    if all(A.kind == "box" for A in inst.admissible):
        x = _mean_variance_box(inst, inst.objective.r + lin, start)
        # polish away bisection round-off; normally zero iterations
        x, pg_max, its = _ascend_joint(inst, lin, x, opts)
    else:
        x, pg_max, its = _ascend_joint(inst, lin, start, opts)
    warn = _check_inner(pg_max, opts)
    return DualEvaluation(value=lagrangian_value(inst, x, mult), argmax=Program(x), pointwise=None,
                          pg_norm=pg_max, iterations=its, warning=warn)


def dual_subgradient(inst: ProblemInstance, mult: MultiplierPair,
                     argmax: ProgramLike) -> tuple[dict[int, np.ndarray], np.ndarray]:
    """Gradient of the dual at ``mult``: per-block p components, per-atom q components.

    The p component of block B of DM t is sum over w in B of P(w) g_t(w, argmax);
    the q component at w is P(w) (argmax_t(w) - E_t argmax_t(w)).
    """
    v = as_values(inst, argmax)
    P = inst.prob
    dp = {}
    for t, g in constraint_values(inst, v).items():
        part = inst.partitions[t]
        sums = np.zeros((part.block_count, g.shape[1]))
        np.add.at(sums, part.block_of, P[:, None] * g)
        dp[t] = sums
    dq = P[:, None] * (v - adapt_values(inst, v))
    return dp, dq


def shift_q(inst: ProblemInstance, mult: MultiplierPair, y: np.ndarray) -> MultiplierPair:
    """Add a shift to q, recomputing q~ (a block-constant shift is a gauge change)."""
    q = mult.q + y
    return replace(mult, q=q, q_tilde=adapt_values(inst, q))

