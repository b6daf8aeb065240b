"""Finite probability spaces, partitions and (conditional) expectations.

On a finite space every sub-sigma-algebra is generated by a partition of the
atoms, so a :class:`Partition` stands in for an information field.  Functions
of the scenario are stored as ``(n_atoms, dim)`` arrays; conditional
expectations keep that layout and repeat the block value on every atom of the
block.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import (
    EmptyBlock,
    InvalidInput,
    NonPositiveProbability,
    OverlappingBlocks,
    ProbabilitySumMismatch,
    SpaceMismatch,
    UncoveredAtom,
)

PROB_SUM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ScenarioSpace:
    prob: np.ndarray

    @property
    def atom_count(self) -> int:
        return int(self.prob.shape[0])

    def __len__(self) -> int:
        return self.atom_count


@dataclass(frozen=True, eq=False)
class Partition:
    atom_count: int
    blocks: tuple[tuple[int, ...], ...]
    block_of: np.ndarray = field(repr=False)

    @property
    def block_count(self) -> int:
        return len(self.blocks)

    def is_discrete(self) -> bool:
        return self.block_count == self.atom_count

    def is_trivial(self) -> bool:
        return self.block_count == 1

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Partition):
            return NotImplemented
        return self.atom_count == other.atom_count and set(self.blocks) == set(other.blocks)

    def __hash__(self) -> int:
        return hash((self.atom_count, frozenset(self.blocks)))


@dataclass(frozen=True, eq=False)
class ScenarioFunction:
    """A random vector: one row of ``values`` per atom."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValueError("scenario function values must be 1-D or 2-D")
        object.__setattr__(self, "values", v)

    @property
    def atom_count(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


ArrayLike = Union[ScenarioFunction, np.ndarray, Sequence[float], Sequence[Sequence[float]]]


def make_space(probs: Iterable[float]) -> ScenarioSpace:
    p = np.asarray(list(probs), dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise InvalidInput("probabilities must be a nonempty flat list")
    if not np.all(np.isfinite(p)) or np.any(p <= 0.0):
        bad = [int(i) for i in np.flatnonzero(~(p > 0.0))]
        raise NonPositiveProbability(f"atoms {bad} have non-positive probability")
    total = float(p.sum())
    if abs(total - 1.0) > PROB_SUM_TOL:
        raise ProbabilitySumMismatch(f"probabilities sum to {total!r}")
    # kept as given: renormalising by a sum that is 1 only to rounding is not idempotent
    p.setflags(write=False)
    return ScenarioSpace(prob=p)


def validate_partition(space: ScenarioSpace | int, blocks: Iterable[Iterable[int]]) -> Partition:
    n = space if isinstance(space, int) else space.atom_count
    block_of = np.full(n, -1, dtype=int)
    normalized = []
    for b_idx, block in enumerate(blocks):
        members = tuple(sorted(int(a) for a in block))
        if not members:
            raise EmptyBlock(f"block {b_idx} is empty")
        if len(set(members)) != len(members):
            raise OverlappingBlocks(f"block {b_idx} repeats an atom")
        for a in members:
            if a < 0 or a >= n:
                raise SpaceMismatch(f"atom {a} outside 0..{n - 1}")
            if block_of[a] >= 0:
                raise OverlappingBlocks(f"atom {a} lies in blocks {block_of[a]} and {b_idx}")
            block_of[a] = b_idx
        normalized.append(members)
    missing = np.flatnonzero(block_of < 0)
    if missing.size:
        raise UncoveredAtom(f"atoms {missing.tolist()} are not covered")
    block_of.setflags(write=False)
    return Partition(atom_count=n, blocks=tuple(normalized), block_of=block_of)


def trivial_partition(n: int) -> Partition:
    return validate_partition(n, [range(n)])


def discrete_partition(n: int) -> Partition:
    return validate_partition(n, [[a] for a in range(n)])


def refines(fine: Partition, coarse: Partition) -> bool:
    """True iff every block of ``fine`` sits inside a block of ``coarse``."""
    if fine.atom_count != coarse.atom_count:
        raise SpaceMismatch("partitions live on different spaces")
    for block in fine.blocks:
        if len({int(coarse.block_of[a]) for a in block}) != 1:
            return False
    return True


def _values(space: ScenarioSpace, x: ArrayLike) -> tuple[np.ndarray, bool]:
    if isinstance(x, ScenarioFunction):
        v, flat = x.values, False
    else:
        v = np.asarray(x, dtype=float)
        flat = v.ndim == 1
        if flat:
            v = v[:, None]
    if v.ndim != 2 or v.shape[0] != space.atom_count:
        raise SpaceMismatch(f"function has {v.shape[0] if v.ndim else 0} atoms, space has {space.atom_count}")
    return v, flat


def block_average(space: ScenarioSpace, part: Partition, values: np.ndarray) -> np.ndarray:
    """Per-block conditional means, shape ``(block_count, dim)``.

    Means are taken relative to the block's first atom, so a block-constant
    input is reproduced bit for bit.
    """
    ref = values[[b[0] for b in part.blocks]]
    weighted = space.prob[:, None] * (values - ref[part.block_of])
    sums = np.zeros((part.block_count, values.shape[1]))
    np.add.at(sums, part.block_of, weighted)
    masses = np.bincount(part.block_of, weights=space.prob, minlength=part.block_count)
    return ref + sums / masses[:, None]


def cond_expect(space: ScenarioSpace, part: Partition, x: ArrayLike):
    """E(x | part), replicated on each atom; returns the input's type."""
    if part.atom_count != space.atom_count:
        raise SpaceMismatch("partition and space disagree on the atom count")
    v, flat = _values(space, x)
    out = block_average(space, part, v)[part.block_of]
    if isinstance(x, ScenarioFunction):
        return ScenarioFunction(out)
    return out[:, 0] if flat else out


def expect(space: ScenarioSpace, x: ArrayLike) -> np.ndarray:
    v, _ = _values(space, x)
    return space.prob @ v


def is_measurable(part: Partition, values: np.ndarray, tol: float = 0.0) -> bool:
    """Whether ``values`` (first axis = atoms) is constant on every block."""
    v = np.asarray(values, dtype=float).reshape(part.atom_count, -1)
    for block in part.blocks:
        ref = v[block[0]]
        if np.any(np.abs(v[list(block)] - ref) > tol):
            return False
    return True
