"""Team structure and problem data with their structural validators.

A :class:`ProblemInstance` bundles the scenario space, the team graph (stages
and precedence), each decision maker's information partition, admissible set,
optional affine constraint map and the team objective.  Decisions of all DMs
at one atom are stacked into a single vector; ``inst.slices[t]`` locates DM
``t`` inside it.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    CycleDetected,
    DimensionMismatch,
    EmptyStage,
    SafeActionNotAdapted,
    SafeActionNotAdmissible,
    SolverNotConverged,
    StageOrderViolation,
    UnknownDM,
)
from .scenario_space import Partition, ScenarioSpace, is_measurable, refines

PSD_TOL = 1e-12


# ---------------------------------------------------------------------------
# team graph
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TeamGraph:
    stages: tuple[int, ...]
    edges: tuple[tuple[int, int], ...]
    # precedes[i, j] is True iff i strictly precedes j (transitive closure)
    precedes: np.ndarray = field(repr=False)

    @property
    def dm_count(self) -> int:
        return len(self.stages)


def build_team_graph(stages: Sequence[int], edges: Sequence[Sequence[int]] = ()) -> TeamGraph:
    stages = tuple(int(s) for s in stages)
    n = len(stages)
    if n == 0:
        raise ValueError("a team needs at least one decision maker")
    if min(stages) < 0:
        raise ValueError("stages must be non-negative")
    reach = np.zeros((n, n), dtype=bool)
    clean_edges = []
    for e in edges:
        t, s = (int(v) for v in e)
        if not (0 <= t < n and 0 <= s < n):
            raise UnknownDM(f"edge ({t}, {s}) names an unknown DM")
        reach[t, s] = True
        clean_edges.append((t, s))
    for k in range(n):
        reach |= reach[:, [k]] & reach[[k], :]
    if np.any(np.diag(reach)):
        cyc = [int(i) for i in np.flatnonzero(np.diag(reach))]
        raise CycleDetected(f"DMs {cyc} lie on a cycle")
    for t, s in zip(*np.nonzero(reach)):
        if stages[t] >= stages[s]:
            raise StageOrderViolation(
                f"DM {t} precedes DM {s} but stage {stages[t]} >= {stages[s]}")
    missing = sorted(set(range(max(stages) + 1)) - set(stages))
    if missing:
        raise EmptyStage(f"stages {missing} have no decision maker")
    reach.setflags(write=False)
    return TeamGraph(stages=stages, edges=tuple(clean_edges), precedes=reach)


def topological_enumeration(graph: TeamGraph) -> list[int]:
    """DMs grouped by increasing stage, ascending id inside a stage."""
    return sorted(range(graph.dm_count), key=lambda t: (graph.stages[t], t))


def predecessors(graph: TeamGraph, t: int) -> list[int]:
    """All ``i`` with ``i`` preceding or equal to ``t``."""
    if not 0 <= t < graph.dm_count:
        raise UnknownDM(f"no DM {t}")
    return sorted([int(i) for i in np.flatnonzero(graph.precedes[:, t])] + [t])


def strict_predecessors(graph: TeamGraph, t: int) -> list[int]:
    return [i for i in predecessors(graph, t) if i != t]


# ---------------------------------------------------------------------------
# problem data
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AdmissibleSet:
    """Box or ball, parameters given per block of the owner's partition."""

    kind: str
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    center: np.ndarray | None = None
    radius: np.ndarray | None = None

    @property
    def block_count(self) -> int:
        return (self.lo if self.kind == "box" else self.center).shape[0]

    @property
    def dim(self) -> int:
        return (self.lo if self.kind == "box" else self.center).shape[1]


def box(lo, hi) -> AdmissibleSet:
    lo = np.atleast_2d(np.asarray(lo, dtype=float))
    hi = np.atleast_2d(np.asarray(hi, dtype=float))
    if lo.shape != hi.shape:
        raise DimensionMismatch("box bounds differ in shape")
    return AdmissibleSet("box", lo=lo, hi=hi)


def ball(center, radius) -> AdmissibleSet:
    center = np.atleast_2d(np.asarray(center, dtype=float))
    radius = np.atleast_1d(np.asarray(radius, dtype=float))
    if radius.shape != (center.shape[0],):
        raise DimensionMismatch("ball needs one radius per block")
    return AdmissibleSet("ball", center=center, radius=radius)


@dataclass(frozen=True, eq=False)
class ConstraintSpec:
    """g_t(w, a) = b(w) + sum_i M[i](w) @ a_i, rows >= 0 required."""

    b: np.ndarray                 # (n_atoms, out_dim)
    M: Mapping[int, np.ndarray]   # i -> (n_atoms, out_dim, m_i)

    @property
    def out_dim(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True, eq=False)
class IntegralQuadratic:
    """f(w, a) = d(w) + c(w) . a - 0.5 a' Q(w) a on the stacked decision vector."""

    c: np.ndarray  # (n_atoms, m)
    Q: np.ndarray  # (n_atoms, m, m)
    d: np.ndarray | None = None  # (n_atoms,), zeros when omitted
    kind: str = "integral_quadratic"

    def __post_init__(self):
        object.__setattr__(self, "c", np.asarray(self.c, dtype=float))
        object.__setattr__(self, "Q", np.asarray(self.Q, dtype=float))
        d = np.zeros(self.c.shape[0]) if self.d is None else np.asarray(self.d, dtype=float)
        object.__setattr__(self, "d", d)


@dataclass(frozen=True, eq=False)
class MeanVariance:
    """F(x) = E[r . x] - lam * Var(w . x) on the stacked decision vector."""

    r: np.ndarray  # (n_atoms, m)
    w: np.ndarray  # (m,)
    lam: float
    kind: str = "mean_variance"

    def __post_init__(self):
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float))
        object.__setattr__(self, "lam", float(self.lam))


Objective = IntegralQuadratic | MeanVariance


@dataclass(frozen=True, eq=False)
class ProblemInstance:
    space: ScenarioSpace
    graph: TeamGraph
    dims: tuple[int, ...]
    partitions: tuple[Partition, ...]
    admissible: tuple[AdmissibleSet, ...]
    constraints: Mapping[int, ConstraintSpec]
    objective: Objective
    dm_ids: tuple[str, ...] = ()
    scenario_ids: tuple[str, ...] = ()
    name: str = ""
    slices: tuple[slice, ...] = field(init=False, repr=False)
    # dense constraint maps on the stacked vector: t -> (n_atoms, l_t, m_total)
    dense: Mapping[int, np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        offsets = np.concatenate([[0], np.cumsum(self.dims)]).astype(int)
        object.__setattr__(self, "slices",
                           tuple(slice(int(offsets[t]), int(offsets[t + 1])) for t in range(len(self.dims))))
        if not self.dm_ids:
            object.__setattr__(self, "dm_ids", tuple(f"dm{t}" for t in range(len(self.dims))))
        if not self.scenario_ids:
            object.__setattr__(self, "scenario_ids", tuple(f"w{a}" for a in range(self.space.atom_count)))
        dense = {}
        for t, con in self.constraints.items():
            G = np.zeros((self.atom_count, con.out_dim, self.total_dim))
            for i, Mi in con.M.items():
                G[:, :, self.slices[i]] = Mi
            dense[t] = G
        object.__setattr__(self, "dense", dense)

    @property
    def dm_count(self) -> int:
        return len(self.dims)

    @property
    def atom_count(self) -> int:
        return self.space.atom_count

    @property
    def total_dim(self) -> int:
        return int(sum(self.dims))

    @property
    def prob(self) -> np.ndarray:
        return self.space.prob

    def box_bounds(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        """Per-atom lower/upper bounds of a box-shaped admissible set."""
        A, part = self.admissible[t], self.partitions[t]
        return A.lo[part.block_of], A.hi[part.block_of]

    def ball_params(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        A, part = self.admissible[t], self.partitions[t]
        return A.center[part.block_of], A.radius[part.block_of]

    def split(self, x: np.ndarray) -> list[np.ndarray]:
        return [x[..., sl] for sl in self.slices]


def make_instance(space, graph, dims, partitions, admissible, constraints=None, objective=None,
                  **names) -> ProblemInstance:
    """Assemble an instance, checking every array shape."""
    n, T = space.atom_count, graph.dm_count
    dims = tuple(int(m) for m in dims)
    if len(dims) != T or len(partitions) != T or len(admissible) != T:
        raise DimensionMismatch("dims, partitions and admissible sets need one entry per DM")
    if any(m <= 0 for m in dims):
        raise DimensionMismatch("decision dimensions must be positive")
    for t in range(T):
        if partitions[t].atom_count != n:
            raise DimensionMismatch(f"partition of DM {t} is over {partitions[t].atom_count} atoms")
        A = admissible[t]
        if A.kind not in ("box", "ball"):
            raise DimensionMismatch(f"unknown admissible kind {A.kind!r}")
        if A.block_count != partitions[t].block_count or A.dim != dims[t]:
            raise DimensionMismatch(
                f"admissible set of DM {t} must be {partitions[t].block_count} blocks x {dims[t]} dims")
    constraints = dict(constraints or {})
    for t, con in constraints.items():
        if not 0 <= t < T:
            raise UnknownDM(f"constraint attached to unknown DM {t}")
        if con.b.ndim != 2 or con.b.shape[0] != n:
            raise DimensionMismatch(f"constraint intercept of DM {t} must be (atoms, rows)")
        for i, Mi in con.M.items():
            if not 0 <= i < T:
                raise UnknownDM(f"constraint of DM {t} references unknown DM {i}")
            if Mi.shape != (n, con.out_dim, dims[i]):
                raise DimensionMismatch(
                    f"coefficient M[{t},{i}] must have shape {(n, con.out_dim, dims[i])}, got {Mi.shape}")
    m = sum(dims)
    if objective is None:
        raise DimensionMismatch("an objective is required")
    if isinstance(objective, IntegralQuadratic):
        if objective.c.shape != (n, m) or objective.Q.shape != (n, m, m) or objective.d.shape != (n,):
            raise DimensionMismatch(f"quadratic objective must be c:(n, {m}), Q:(n, {m}, {m}), d:(n,)")
    elif isinstance(objective, MeanVariance):
        if objective.r.shape != (n, m) or objective.w.shape != (m,):
            raise DimensionMismatch(f"mean-variance data must be r:(n, {m}) and w:({m},)")
    else:
        raise DimensionMismatch(f"unsupported objective {type(objective).__name__}")
    return ProblemInstance(space=space, graph=graph, dims=dims, partitions=tuple(partitions),
                           admissible=tuple(admissible), constraints=constraints,
                           objective=objective, **names)


# ---------------------------------------------------------------------------
# support functions of admissible sets
# ---------------------------------------------------------------------------

def support(inst: ProblemInstance, i: int, D: np.ndarray) -> np.ndarray:
    """max over a in A_i(w) of D[w, r] . a, shape (n_atoms, rows)."""
    A = inst.admissible[i]
    if A.kind == "box":
        lo, hi = inst.box_bounds(i)
        return np.maximum(D * lo[:, None, :], D * hi[:, None, :]).sum(axis=2)
    c, rad = inst.ball_params(i)
    return np.einsum("nrm,nm->nr", D, c) + rad[:, None] * np.linalg.norm(D, axis=2)


def _constraint_range(inst: ProblemInstance, t: int, over) -> tuple[np.ndarray, np.ndarray]:
    con = inst.constraints[t]
    lo = con.b.copy()
    hi = con.b.copy()
    for i, Mi in con.M.items():
        if i in over:
            hi += support(inst, i, Mi)
            lo -= support(inst, i, -Mi)
    return lo, hi


def constraint_bound(inst: ProblemInstance) -> float:
    """Upper bound on the Euclidean norm of every g_t over the admissible sets."""
    c = 0.0
    for t, con in inst.constraints.items():
        lo, hi = _constraint_range(inst, t, set(con.M))
        row_max = np.maximum(np.abs(lo), np.abs(hi))
        c = max(c, float(np.sqrt((row_max ** 2).sum(axis=1)).max()))
    return c


# ---------------------------------------------------------------------------
# structural validation
# ---------------------------------------------------------------------------

@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""
    locations: list = field(default_factory=list)


@dataclass
class ValidationReport:
    checks: list[Check]
    bound_c: float

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "bound_c": self.bound_c,
                "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail,
                            "locations": c.locations} for c in self.checks]}


def validate_instance(inst: ProblemInstance) -> ValidationReport:
    checks = []
    T = inst.dm_count

    bad = []
    for t, s in zip(*np.nonzero(inst.graph.precedes)):
        if not refines(inst.partitions[s], inst.partitions[t]):
            bad.append([inst.dm_ids[t], inst.dm_ids[s]])
    checks.append(Check("information refinement", not bad,
                        "" if not bad else "a successor observes less than its predecessor", bad))

    bad = []
    for t in range(T):
        A = inst.admissible[t]
        if A.kind == "box":
            finite = np.all(np.isfinite(A.lo)) and np.all(np.isfinite(A.hi))
            for b in np.flatnonzero(np.any(A.lo > A.hi, axis=1)):
                bad.append([inst.dm_ids[t], int(b)])
        else:
            finite = np.all(np.isfinite(A.center)) and np.all(np.isfinite(A.radius))
            for b in np.flatnonzero(~(A.radius > 0)):
                bad.append([inst.dm_ids[t], int(b)])
        if not finite:
            bad.append([inst.dm_ids[t], "non-finite"])
    checks.append(Check("admissible sets nonempty and bounded", not bad,
                        "" if not bad else "empty or unbounded admissible set", bad))

    bad_meas, bad_pred = [], []
    for t, con in inst.constraints.items():
        part = inst.partitions[t]
        data = [con.b] + [Mi for Mi in con.M.values()]
        if not all(is_measurable(part, d) for d in data):
            bad_meas.append(inst.dm_ids[t])
        allowed = set(predecessors(inst.graph, t))
        for i in con.M:
            if i not in allowed:
                bad_pred.append([inst.dm_ids[t], inst.dm_ids[i]])
    checks.append(Check("constraint measurability", not bad_meas,
                        "" if not bad_meas else "constraint data not F_t-measurable", bad_meas))
    checks.append(Check("constraint scope", not bad_pred,
                        "" if not bad_pred else "constraint depends on a non-predecessor", bad_pred))

    bad = []
    obj = inst.objective
    if isinstance(obj, IntegralQuadratic):
        for a in range(inst.atom_count):
            Q = obj.Q[a]
            scale = max(1.0, float(np.abs(Q).max()))
            if not np.allclose(Q, Q.T, atol=1e-12 * scale):
                bad.append([inst.scenario_ids[a], "asymmetric"])
            elif np.linalg.eigvalsh(Q).min() < -PSD_TOL * scale:
                bad.append([inst.scenario_ids[a], float(np.linalg.eigvalsh(Q).min())])
    elif not obj.lam >= 0:
        bad.append(["lambda", float(obj.lam)])
    checks.append(Check("objective concavity", not bad,
                        "" if not bad else "objective not concave", bad))

    c = constraint_bound(inst)
    checks.append(Check("constraint bound", math.isfinite(c), f"c = {c:.6g}"))
    return ValidationReport(checks=checks, bound_c=c)


# ---------------------------------------------------------------------------
# Slater-type conditions and recourse
# ---------------------------------------------------------------------------

@dataclass
class SlaterInfo:
    theta: list[float]      # per DM
    theta_min: float
    center: np.ndarray      # adapted program, stacked (n_atoms, m_total)

    @property
    def passed(self) -> bool:
        return self.theta_min > 0


def slater_information(inst: ProblemInstance) -> SlaterInfo:
    theta = []
    center = np.zeros((inst.atom_count, inst.total_dim))
    for t in range(inst.dm_count):
        A = inst.admissible[t]
        if A.kind == "box":
            theta.append(float(((A.hi - A.lo) / 2).min()))
            lo, hi = inst.box_bounds(t)
            center[:, inst.slices[t]] = (lo + hi) / 2
        else:
            theta.append(float(A.radius.min()))
            center[:, inst.slices[t]] = inst.ball_params(t)[0]
    return SlaterInfo(theta=theta, theta_min=min(theta), center=center)


@dataclass
class SlaterMaterial:
    kappa: float
    witness: np.ndarray     # adapted program, stacked
    iterations: int

    @property
    def passed(self) -> bool:
        return self.kappa > 0


def all_constraint_values(inst: ProblemInstance, x: np.ndarray) -> dict[int, np.ndarray]:
    return {t: inst.constraints[t].b + np.einsum("nrm,nm->nr", G, x) for t, G in inst.dense.items()}


def _project_blocks(inst: ProblemInstance, t: int, z: np.ndarray) -> np.ndarray:
    A = inst.admissible[t]
    if A.kind == "box":
        return np.clip(z, A.lo, A.hi)
    d = z - A.center
    norm = np.linalg.norm(d, axis=1)
    scale = np.where(norm > A.radius, A.radius / np.maximum(norm, 1e-300), 1.0)
    return A.center + d * scale[:, None]


def slater_material(inst: ProblemInstance, max_iter: int = 5000, step0: float = 1.0,
                    stall_window: int = 500, stall_tol: float = 1e-6,
                    target: float | None = None) -> SlaterMaterial:
    """Maximise the smallest constraint slack over adapted programs.

    Projected subgradient ascent on the block values with steps
    ``step0 / sqrt(k + 1)``; the best iterate is returned.  With ``target``
    set, stops as soon as the slack reaches it (enough to decide the sign).
    """
    center = slater_information(inst).center
    if not inst.constraints:
        return SlaterMaterial(kappa=math.inf, witness=center, iterations=0)
    parts = inst.partitions
    z = [center[[blk[0] for blk in parts[t].blocks], inst.slices[t]].copy()
         for t in range(inst.dm_count)]

    def stacked(zs):
        x = np.empty((inst.atom_count, inst.total_dim))
        for t in range(inst.dm_count):
            x[:, inst.slices[t]] = zs[t][parts[t].block_of]
        return x

    def min_slack(x):
        best, where = math.inf, None
        for t, g in all_constraint_values(inst, x).items():
            a, r = np.unravel_index(np.argmin(g), g.shape)
            if g[a, r] < best:
                best, where = float(g[a, r]), (t, int(a), int(r))
        return best, where

    x = stacked(z)
    best_s, _ = min_slack(x)
    best_x = x
    history = [best_s]
    k = 0
    for k in range(1, max_iter + 1):
        s, (t, a, r) = min_slack(x)
        if s > best_s:
            best_s, best_x = s, x
        if target is not None and best_s >= target:
            break
        grad = inst.dense[t][a, r]
        alpha = step0 / math.sqrt(k + 1)
        moved = 0.0
        for i in range(inst.dm_count):
            gi = grad[inst.slices[i]]
            if not np.any(gi):
                continue
            b = parts[i].block_of[a]
            new = z[i].copy()
            new[b] += alpha * gi
            new = _project_blocks(inst, i, new)
            moved = max(moved, float(np.abs(new - z[i]).max()))
            z[i] = new
        x = stacked(z)
        history.append(best_s)
        if moved <= 1e-15:
            break
    else:
        s, _ = min_slack(x)
        if s > best_s:
            best_s, best_x = s, x
        if len(history) > stall_window and best_s - history[-stall_window] > stall_tol * (1 + abs(best_s)):
            raise SolverNotConverged(f"min slack still rising after {max_iter} iterations (best {best_s:.6g})")
    return SlaterMaterial(kappa=best_s, witness=best_x, iterations=k)


@dataclass
class RecourseReport:
    passed: bool
    worst_margin: dict[int, float]
    failures: list[tuple[int, int, int, float]]   # (dm, atom, row, margin)


def check_recourse_sufficient(inst: ProblemInstance, safe_actions: Mapping[int, np.ndarray],
                              tol: float = 1e-12) -> RecourseReport:
    """Sufficient check for relatively complete recourse.

    For every constrained DM ``s`` the safe action must keep ``g_s >= 0`` against
    the worst admissible choice of all strict predecessors.  With affine ``g``
    the worst case is the support function of each predecessor's set, which is
    attained at a box vertex (or at the ball boundary point opposite the row).
    """
    safe = {}
    for s, act in safe_actions.items():
        act = np.asarray(act, dtype=float).reshape(inst.atom_count, inst.dims[s])
        if not is_measurable(inst.partitions[s], act):
            raise SafeActionNotAdapted(f"safe action of DM {inst.dm_ids[s]} is not block-constant")
        A = inst.admissible[s]
        if A.kind == "box":
            lo, hi = inst.box_bounds(s)
            outside = np.any((act < lo - tol) | (act > hi + tol))
        else:
            c, rad = inst.ball_params(s)
            outside = np.any(np.linalg.norm(act - c, axis=1) > rad + tol)
        if outside:
            raise SafeActionNotAdmissible(f"safe action of DM {inst.dm_ids[s]} leaves its admissible set")
        safe[s] = act
    worst, failures = {}, []
    for s, con in inst.constraints.items():
        if s not in safe:
            raise SafeActionNotAdmissible(f"no safe action supplied for constrained DM {inst.dm_ids[s]}")
        margin = con.b.copy()
        for i, Mi in con.M.items():
            if i == s:
                margin += np.einsum("nrm,nm->nr", Mi, safe[s])
            else:
                margin -= support(inst, i, -Mi)
        worst[s] = float(margin.min())
        for a, r in zip(*np.nonzero(margin < -tol)):
            failures.append((s, int(a), int(r), float(margin[a, r])))
    return RecourseReport(passed=not failures, worst_margin=worst, failures=failures)
