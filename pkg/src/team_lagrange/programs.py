"""Programs, adapted programs, projection and feasibility residuals."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .errors import DimensionMismatch, NoConstraintForDM
from .scenario_space import block_average
from .team_model import IntegralQuadratic, ProblemInstance

ADAPT_TOL = 1e-9
MATERIAL_TOL = 1e-6
ADAPTEDNESS_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class Program:
    """Decisions of all DMs, stacked per atom: ``values[w, inst.slices[t]]``."""

    values: np.ndarray

    def component(self, inst: ProblemInstance, t: int) -> np.ndarray:
        return self.values[:, inst.slices[t]]


@dataclass(frozen=True, eq=False)
class AdaptedProgram(Program):
    """A program whose DM components are constant on their partition blocks."""


ProgramLike = Union[Program, np.ndarray, Sequence[np.ndarray]]


def as_values(inst: ProblemInstance, x: ProgramLike) -> np.ndarray:
    if isinstance(x, Program):
        v = x.values
    elif isinstance(x, np.ndarray):
        v = x.astype(float, copy=False)
    else:
        parts = [np.asarray(p, dtype=float).reshape(inst.atom_count, -1) for p in x]
        if len(parts) != inst.dm_count:
            raise DimensionMismatch(f"expected {inst.dm_count} DM components, got {len(parts)}")
        v = np.concatenate(parts, axis=1)
    if v.ndim == 1 and inst.total_dim == 1:
        v = v[:, None]
    if v.shape != (inst.atom_count, inst.total_dim):
        raise DimensionMismatch(f"program shape {v.shape} != {(inst.atom_count, inst.total_dim)}")
    return v


def project_values(inst: ProblemInstance, v: np.ndarray, rows=None) -> np.ndarray:
    """Euclidean projection onto A(w) = prod_t A_t(w), atom by atom.

    With ``rows`` given, ``v`` holds only those atoms (in that order).
    """
    out = np.empty_like(v)
    sel = slice(None) if rows is None else rows
    for t, sl in enumerate(inst.slices):
        if inst.admissible[t].kind == "box":
            lo, hi = inst.box_bounds(t)
            out[:, sl] = np.clip(v[:, sl], lo[sel], hi[sel])
        else:
            c, rad = inst.ball_params(t)
            c, rad = c[sel], rad[sel]
            d = v[:, sl] - c
            norm = np.linalg.norm(d, axis=1)
            scale = np.where(norm > rad, rad / np.maximum(norm, 1e-300), 1.0)
            out[:, sl] = c + d * scale[:, None]
    return out


def project_admissible(inst: ProblemInstance, raw: ProgramLike) -> Program:
    return Program(project_values(inst, as_values(inst, raw)))


def adapt_values(inst: ProblemInstance, v: np.ndarray) -> np.ndarray:
    """Replace each DM component by its conditional expectation on the DM's partition."""
    out = np.empty_like(v)
    for t, sl in enumerate(inst.slices):
        part = inst.partitions[t]
        out[:, sl] = block_average(inst.space, part, v[:, sl])[part.block_of]
    return out


def adapt(inst: ProblemInstance, x: ProgramLike) -> AdaptedProgram:
    v = adapt_values(inst, as_values(inst, x))
    drift = float(admissibility_residual(inst, v).max(initial=0.0))
    if drift > ADAPT_TOL:
        raise ValueError(f"averaged program left the admissible sets by {drift:.3g}; input is not a program")
    return AdaptedProgram(project_values(inst, v))


def admissibility_residual(inst: ProblemInstance, x: ProgramLike) -> np.ndarray:
    """Distance of x_t(w) to A_t(w), shape (dm_count, n_atoms)."""
    v = as_values(inst, x)
    return np.array([np.linalg.norm(v[:, sl] - p, axis=1)
                     for sl, p in zip(inst.slices, inst.split(project_values(inst, v)))])


def adaptedness_residual(inst: ProblemInstance, x: ProgramLike) -> np.ndarray:
    """max_w |x_t(w) - E_t x_t(w)|_inf per DM."""
    v = as_values(inst, x)
    return np.array([float(np.abs(v[:, sl] - adapt_values(inst, v)[:, sl]).max())
                     for sl in inst.slices])


def constraint_values(inst: ProblemInstance, v: np.ndarray) -> dict[int, np.ndarray]:
    """g_t(w, x^t(w)) for every constrained DM, shape (n_atoms, l_t) each."""
    return {t: inst.constraints[t].b + np.einsum("nrm,nm->nr", G, v) for t, G in inst.dense.items()}


def evaluate_constraints(inst: ProblemInstance, x: ProgramLike, t: int, w: int) -> np.ndarray:
    if t not in inst.constraints:
        raise NoConstraintForDM(f"DM {t} carries no material constraint")
    v = as_values(inst, x)
    con = inst.constraints[t]
    out = con.b[w].copy()
    for i, Mi in con.M.items():
        out += Mi[w] @ v[w, inst.slices[i]]
    return out


@dataclass
class FeasibilityReport:
    material_residual: dict[int, np.ndarray]   # t -> per-atom max(0, -min row)
    adaptedness_residual: np.ndarray           # per DM
    admissibility_residual: np.ndarray         # (dm, atom)

    @property
    def max_material(self) -> float:
        return max((float(r.max()) for r in self.material_residual.values()), default=0.0)

    @property
    def max_adaptedness(self) -> float:
        return float(self.adaptedness_residual.max(initial=0.0))

    @property
    def max_admissibility(self) -> float:
        return float(self.admissibility_residual.max(initial=0.0))

    def feasible(self, material_tol=MATERIAL_TOL, adaptedness_tol=ADAPTEDNESS_TOL,
                 admissibility_tol=1e-12) -> bool:
        return (self.max_material <= material_tol and self.max_adaptedness <= adaptedness_tol
                and self.max_admissibility <= admissibility_tol)


def feasibility_residuals(inst: ProblemInstance, x: ProgramLike) -> FeasibilityReport:
    v = as_values(inst, x)
    material = {t: np.maximum(0.0, -g.min(axis=1)) + 0.0 for t, g in constraint_values(inst, v).items()}
    return FeasibilityReport(material_residual=material,
                             adaptedness_residual=adaptedness_residual(inst, v),
                             admissibility_residual=admissibility_residual(inst, v))


def objective_pointwise(inst: ProblemInstance, v: np.ndarray) -> np.ndarray:
    """f(w, x(w)) per atom; integral objectives only."""
    obj = inst.objective
    return obj.d + np.einsum("nm,nm->n", obj.c, v) - 0.5 * np.einsum("nm,nmk,nk->n", v, obj.Q, v)


def evaluate_objective(inst: ProblemInstance, x: ProgramLike) -> float:
    v = as_values(inst, x)
    obj, P = inst.objective, inst.prob
    if isinstance(obj, IntegralQuadratic):
        return float(P @ objective_pointwise(inst, v))
    s = v @ obj.w
    mean = float(P @ s)
    return float(P @ np.einsum("nm,nm->n", obj.r, v)) - obj.lam * float(P @ (s - mean) ** 2)
