"""JSON instance and result documents.

Instance files store admissible sets and constraint data per block of the
owning DM's partition, so measurability holds by construction on load.
Result files carry the sha256 of the canonical instance text; a result can
only be certified against the instance it was produced for.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import __version__
from .errors import InvalidInput
from .lagrangian import MultiplierPair
from .programs import AdaptedProgram, adapt_values
from .scenario_space import make_space, validate_partition
from .team_model import (
    ConstraintSpec,
    IntegralQuadratic,
    MeanVariance,
    ProblemInstance,
    ball,
    box,
    build_team_graph,
    make_instance,
)


class DocumentError(InvalidInput):
    """Malformed JSON or a document that does not follow the schema."""


# ---------------------------------------------------------------------------
# instances
# ---------------------------------------------------------------------------

def _require(obj: Mapping, key: str, where: str):
    if not isinstance(obj, Mapping) or key not in obj:
        raise DocumentError(f"{where}: missing key {key!r}")
    return obj[key]


def _floats(value, where: str, ndim: int) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise DocumentError(f"{where}: expected numbers") from exc
    if arr.ndim != ndim:
        raise DocumentError(f"{where}: expected a {ndim}-d array, got shape {arr.shape}")
    return arr


def instance_from_dict(doc: Mapping[str, Any]) -> ProblemInstance:
    scenarios = _require(doc, "scenarios", "instance")
    dms = _require(doc, "dms", "instance")
    if not scenarios or not dms:
        raise DocumentError("instance needs at least one scenario and one DM")
    scen_ids = [str(_require(s, "id", "scenario")) for s in scenarios]
    if len(set(scen_ids)) != len(scen_ids):
        raise DocumentError("duplicate scenario ids")
    atom = {sid: a for a, sid in enumerate(scen_ids)}
    space = make_space([_require(s, "prob", f"scenario {s.get('id')}") for s in scenarios])
    n = space.atom_count

    dm_ids = [str(_require(d, "id", "dm")) for d in dms]
    if len(set(dm_ids)) != len(dm_ids):
        raise DocumentError("duplicate DM ids")
    dm_index = {did: t for t, did in enumerate(dm_ids)}

    def dm_ref(name, where):
        if str(name) not in dm_index:
            raise DocumentError(f"{where}: unknown DM {name!r}")
        return dm_index[str(name)]

    stages, dims, parts, admissible = [], [], [], []
    for d, did in zip(dms, dm_ids):
        where = f"DM {did}"
        stages.append(int(_require(d, "stage", where)))
        dims.append(int(_require(d, "dim", where)))
        blocks = []
        for block in _require(d, "partition", where):
            try:
                blocks.append([atom[str(s)] for s in block])
            except KeyError as exc:
                raise DocumentError(f"{where}: partition names unknown scenario {exc.args[0]!r}") from None
        try:
            parts.append(validate_partition(n, blocks))
        except InvalidInput as exc:
            raise type(exc)(f"partition of DM {did}: {exc}") from None
        adm = _require(d, "admissible", where)
        per_block = _require(adm, "per_block", where)
        kind = _require(adm, "kind", where)
        if kind == "box":
            admissible.append(box(_floats([_require(b, "lo", where) for b in per_block], where, 2),
                                  _floats([_require(b, "hi", where) for b in per_block], where, 2)))
        elif kind == "ball":
            admissible.append(ball(_floats([_require(b, "center", where) for b in per_block], where, 2),
                                   _floats([_require(b, "radius", where) for b in per_block], where, 1)))
        else:
            raise DocumentError(f"{where}: unknown admissible kind {kind!r}")

    edges = [(dm_ref(a, "order"), dm_ref(b, "order")) for a, b in doc.get("order", [])]
    graph = build_team_graph(stages, edges)

    constraints = {}
    for c in doc.get("constraints", []):
        t = dm_ref(_require(c, "dm", "constraint"), "constraint")
        where = f"constraint of DM {dm_ids[t]}"
        if t in constraints:
            raise DocumentError(f"{where}: given twice")
        rows = int(_require(c, "dim", where))
        per_block = _require(c, "per_block", where)
        if len(per_block) != parts[t].block_count:
            raise DocumentError(f"{where}: expected {parts[t].block_count} blocks, got {len(per_block)}")
        b = _floats([_require(blk, "b", where) for blk in per_block], where, 2)
        keys = sorted({k for blk in per_block for k in _require(blk, "M", where)},
                      key=lambda k: dm_ref(k, where))
        M = {}
        for k in keys:
            i = dm_ref(k, where)
            M[i] = _floats([blk["M"].get(k, np.zeros((rows, dims[i])).tolist()) for blk in per_block], where, 3)
        if b.shape[1] != rows:
            raise DocumentError(f"{where}: intercept has {b.shape[1]} rows, dim says {rows}")
        constraints[t] = ConstraintSpec(b=b[parts[t].block_of], M={i: Mi[parts[t].block_of] for i, Mi in M.items()})

    obj = _require(doc, "objective", "instance")
    kind = _require(obj, "kind", "objective")
    if kind == "integral_quadratic":
        per = _require(obj, "per_scenario", "objective")
        if len(per) != n:
            raise DocumentError(f"objective: expected {n} scenarios, got {len(per)}")
        objective = IntegralQuadratic(
            c=_floats([_require(s, "c", "objective") for s in per], "objective c", 2),
            Q=_floats([_require(s, "Q", "objective") for s in per], "objective Q", 3),
            d=_floats([s.get("d", 0.0) for s in per], "objective d", 1))
    elif kind == "mean_variance":
        objective = MeanVariance(r=_floats(_require(obj, "per_scenario_r", "objective"), "objective r", 2),
                                 w=_floats(_require(obj, "w", "objective"), "objective w", 1),
                                 lam=float(_require(obj, "lambda", "objective")))
    else:
        raise DocumentError(f"unknown objective kind {kind!r}")

    return make_instance(space, graph, dims, parts, admissible, constraints, objective,
                         dm_ids=tuple(dm_ids), scenario_ids=tuple(scen_ids), name=str(doc.get("name", "")))


def _generating_edges(inst: ProblemInstance) -> list[tuple[int, int]]:
    """Transitive reduction of the precedence relation."""
    T = inst.dm_count
    prec = inst.graph.precedes
    return [(i, j) for i in range(T) for j in range(T)
            if prec[i, j] and not any(prec[i, k] and prec[k, j] for k in range(T))]


def instance_to_dict(inst: ProblemInstance) -> dict:
    sid, did = inst.scenario_ids, inst.dm_ids
    dms = []
    for t in range(inst.dm_count):
        part, A = inst.partitions[t], inst.admissible[t]
        if A.kind == "box":
            per_block = [{"lo": A.lo[b].tolist(), "hi": A.hi[b].tolist()} for b in range(part.block_count)]
        else:
            per_block = [{"center": A.center[b].tolist(), "radius": float(A.radius[b])}
                         for b in range(part.block_count)]
        dms.append({"id": did[t], "stage": int(inst.graph.stages[t]), "dim": inst.dims[t],
                    "partition": [[sid[a] for a in blk] for blk in part.blocks],
                    "admissible": {"kind": A.kind, "per_block": per_block}})
    constraints = []
    for t in sorted(inst.constraints):
        con, part = inst.constraints[t], inst.partitions[t]
        reps = [blk[0] for blk in part.blocks]
        constraints.append({"dm": did[t], "dim": con.out_dim, "per_block": [
            {"b": con.b[a].tolist(), "M": {did[i]: con.M[i][a].tolist() for i in sorted(con.M)}}
            for a in reps]})
    obj = inst.objective
    if isinstance(obj, IntegralQuadratic):
        per = []
        for a in range(inst.atom_count):
            entry = {"c": obj.c[a].tolist(), "Q": obj.Q[a].tolist()}
            if obj.d[a] != 0.0:
                entry["d"] = float(obj.d[a])
            per.append(entry)
        objective = {"kind": "integral_quadratic", "per_scenario": per}
    else:
        objective = {"kind": "mean_variance", "lambda": obj.lam,
                     "per_scenario_r": obj.r.tolist(), "w": obj.w.tolist()}
    out = {"scenarios": [{"id": sid[a], "prob": float(inst.prob[a])} for a in range(inst.atom_count)],
           "dms": dms,
           "order": [[did[i], did[j]] for i, j in _generating_edges(inst)],
           "constraints": constraints,
           "objective": objective}
    if inst.name:
        out["name"] = inst.name
    return out


def _load_json(path) -> Any:
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise DocumentError(f"{path}: not valid JSON ({exc})") from None


def parse_instance(text: str) -> ProblemInstance:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DocumentError(f"not valid JSON ({exc})") from None
    return instance_from_dict(doc)


def serialize_instance(inst: ProblemInstance) -> str:
    return json.dumps(instance_to_dict(inst), indent=2) + "\n"


def load_instance(path) -> ProblemInstance:
    return instance_from_dict(_load_json(path))


def save_instance(inst: ProblemInstance, path) -> None:
    Path(path).write_text(serialize_instance(inst), encoding="utf-8")


def canonical_text(inst: ProblemInstance) -> str:
    return json.dumps(instance_to_dict(inst), sort_keys=True, separators=(",", ":"))


def instance_digest(inst: ProblemInstance) -> str:
    return "sha256:" + hashlib.sha256(canonical_text(inst).encode("utf-8")).hexdigest()


# ---------------------------------------------------------------------------
# results
# ---------------------------------------------------------------------------

def _per_dm(inst: ProblemInstance, values: np.ndarray) -> dict:
    return {inst.dm_ids[t]: {inst.scenario_ids[a]: values[a, sl].tolist() for a in range(inst.atom_count)}
            for t, sl in enumerate(inst.slices)}


def _from_per_dm(inst: ProblemInstance, table: Mapping, where: str) -> np.ndarray:
    out = np.zeros((inst.atom_count, inst.total_dim))
    for t, sl in enumerate(inst.slices):
        rows = _require(table, inst.dm_ids[t], where)
        for a, sid in enumerate(inst.scenario_ids):
            out[a, sl] = _floats(_require(rows, sid, where), where, 1)
    return out


def result_to_dict(inst: ProblemInstance, solution, options: Mapping | None = None,
                   insurance: Mapping | None = None, oracle: Mapping | None = None) -> dict:
    mult = solution.multipliers
    p = {inst.dm_ids[t]: {inst.scenario_ids[a]: mult.p[t][a].tolist() for a in range(inst.atom_count)}
         for t in sorted(mult.p)}
    doc = {"digest": instance_digest(inst),
           "version": __version__,
           "converged": bool(solution.converged),
           "status": solution.status,
           "iterations": int(solution.iterations),
           "value_primal": float(solution.primal_value),
           "value_dual": float(solution.dual_value),
           "program": _per_dm(inst, solution.program.values),
           "p": p,
           "q": _per_dm(inst, mult.q),
           "q_tilde": _per_dm(inst, mult.q_tilde),
           "report": solution.residuals.to_dict(),
           "insurance": insurance,
           "options": dict(options or {})}
    if oracle is not None:
        doc["oracle"] = oracle
    return doc


def result_from_dict(inst: ProblemInstance, doc: Mapping) -> tuple[AdaptedProgram, MultiplierPair]:
    """Program and multipliers of a result document, read against ``inst``."""
    program = _from_per_dm(inst, _require(doc, "program", "result"), "result program")
    q = _from_per_dm(inst, _require(doc, "q", "result"), "result q")
    p = {}
    p_doc = _require(doc, "p", "result")
    for t in inst.constraints:
        rows = _require(p_doc, inst.dm_ids[t], "result p")
        p[t] = np.array([_floats(_require(rows, sid, "result p"), "result p", 1) for sid in inst.scenario_ids])
    # built directly so that invalid multipliers reach the certificate instead of raising
    return AdaptedProgram(program), MultiplierPair(p=p, q=q, q_tilde=adapt_values(inst, q))


def load_result(path) -> dict:
    return _load_json(path)


def save_json(doc: Mapping, path) -> None:
    Path(path).write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
