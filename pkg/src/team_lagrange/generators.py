"""Reference instances and a seeded random instance generator.

Random instances are kept small enough for the grid oracle: box bounds,
constraint intercepts and coefficients all live on the 0.01 lattice, so the
oracle grid contains points on every constraint face.
"""
from __future__ import annotations

import numpy as np

from .scenario_space import discrete_partition, make_space, trivial_partition, validate_partition
from .team_model import (
    ConstraintSpec,
    IntegralQuadratic,
    MeanVariance,
    ProblemInstance,
    ball,
    box,
    build_team_graph,
    make_instance,
    predecessors,
)


def symmetric_instance() -> ProblemInstance:
    """Two equally likely atoms, one uninformed DM on [0, 1].

    f(w1, a) = -a^2 and f(w2, a) = -(a - 1)^2; the adapted optimum is 0.5
    with value -0.25, and the informational multiplier is q - q~ = (1, -1).
    """
    space = make_space([0.5, 0.5])
    obj = IntegralQuadratic(c=[[0.0], [2.0]], Q=[[[2.0]], [[2.0]]], d=[0.0, -1.0])
    return make_instance(space, build_team_graph([0]), [1], [trivial_partition(2)],
                         [box([[0.0]], [[1.0]])], {}, obj,
                         dm_ids=("trader",), scenario_ids=("low", "high"), name="symmetric")


def scalar_constrained_instance() -> ProblemInstance:
    """One atom, f(a) = a on [0, 2], g(a) = 1 - a: optimum a = 1 with p = 1."""
    space = make_space([1.0])
    con = ConstraintSpec(b=np.array([[1.0]]), M={0: np.array([[[-1.0]]])})
    obj = IntegralQuadratic(c=[[1.0]], Q=[[[0.0]]])
    return make_instance(space, build_team_graph([0]), [1], [trivial_partition(1)],
                         [box([[0.0]], [[2.0]])], {0: con}, obj, name="scalar_constrained")


def static_team_instance(information: str = "mixed") -> ProblemInstance:
    """Three simultaneous DMs, two atoms, no material constraints.

    ``information`` is "mixed" (DM 0 observes the state, DMs 1 and 2 do not),
    "none" or "full".  f(w, a) = -sum_t (a_t - target(w))^2 - 0.5 (a_1 - a_2)^2
    with targets 0.2 and 0.8, so every optimum lies on the 0.1 grid: the
    informed team value is -0.18, the uninformed one -0.27, full information 0.
    """
    space = make_space([0.5, 0.5])
    n = 2
    layouts = {"mixed": [discrete_partition(n), trivial_partition(n), trivial_partition(n)],
               "none": [trivial_partition(n)] * 3,
               "full": [discrete_partition(n)] * 3}
    parts = layouts[information]
    targets = np.array([[0.2, 0.2, 0.2], [0.8, 0.8, 0.8]])
    K = np.array([[0.0, 0.0, 0.0], [0.0, 1.0, -1.0], [0.0, -1.0, 1.0]])
    Q = np.stack([2.0 * np.eye(3) + K] * n)
    c = 2.0 * targets
    d = -(targets ** 2).sum(axis=1)
    sets = [box([[0.0]] * p.block_count, [[1.0]] * p.block_count) for p in parts]
    suffix = "" if information == "mixed" else f"_{information}"
    return make_instance(space, build_team_graph([0, 0, 0]), [1, 1, 1], parts, sets, {},
                         IntegralQuadratic(c=c, Q=Q, d=d),
                         dm_ids=("scout", "left", "right"), scenario_ids=("calm", "storm"),
                         name=f"static_team{suffix}")


def mean_variance_instance() -> ProblemInstance:
    """Two-stage portfolio: an uninformed first DM and an informed second DM."""
    space = make_space([0.3, 0.4, 0.3])
    parts = [trivial_partition(3), discrete_partition(3)]
    r = np.array([[0.10, 0.02], [0.05, 0.04], [-0.02, 0.08]])
    obj = MeanVariance(r=r, w=np.array([1.0, 1.0]), lam=0.5)
    con = ConstraintSpec(b=np.full((3, 1), 1.0),
                         M={0: -np.ones((3, 1, 1)), 1: -np.ones((3, 1, 1))})
    return make_instance(space, build_team_graph([0, 1], [(0, 1)]), [1, 1], parts,
                         [box([[0.0]], [[1.0]]), box([[0.0]] * 3, [[1.0]] * 3)], {1: con}, obj,
                         dm_ids=("allocator", "rebalancer"), name="mean_variance")


def _random_filtration(rng, n, depth):
    """Partitions refining one another, coarsest first."""
    chain = [trivial_partition(n)]
    for _ in range(depth - 1):
        blocks = []
        for blk in chain[-1].blocks:
            blk = list(blk)
            if len(blk) > 1 and rng.random() < 0.6:
                cut = int(rng.integers(1, len(blk)))
                perm = list(rng.permutation(blk))
                blocks += [perm[:cut], perm[cut:]]
            else:
                blocks.append(blk)
        chain.append(validate_partition(n, blocks))
    return chain


def random_instance(seed: int, max_atoms: int = 4, max_dms: int = 3, max_dim: int = 2,
                    max_block_dim: int = 3, constraint_prob: float = 0.6) -> ProblemInstance:
    """Small random box-constrained quadratic team problem (strictly concave f).

    ``max_block_dim`` caps the number of adapted unknowns (sum of dims times
    blocks) so the 0.01 grid oracle stays below ten million points.
    """
    rng = np.random.default_rng(seed)
    while True:
        n = int(rng.integers(1, max_atoms + 1))
        T = int(rng.integers(1, max_dms + 1))
        stages = sorted(int(s) for s in rng.integers(0, T, size=T))
        # make stages contiguous from 0
        remap = {s: i for i, s in enumerate(sorted(set(stages)))}
        stages = [remap[s] for s in stages]
        chain = _random_filtration(rng, n, max(stages) + 1)
        parts = [chain[s] for s in stages]
        dims = [int(rng.integers(1, max_dim + 1)) for _ in range(T)]
        if sum(m * p.block_count for m, p in zip(dims, parts)) <= max_block_dim:
            break
    edges = [(t, s) for t in range(T) for s in range(T)
             if stages[t] < stages[s] and rng.random() < 0.6]
    graph = build_team_graph(stages, edges)
    probs = rng.uniform(0.5, 1.5, size=n)
    space = make_space(probs / probs.sum())

    admissible, centers = [], []
    for t in range(T):
        lo = rng.choice([-0.5, -0.25, 0.0], size=(parts[t].block_count, dims[t]))
        hi = lo + rng.choice([0.5, 0.75, 1.0], size=lo.shape)
        admissible.append(box(lo, hi))
        centers.append(((lo + hi) / 2)[parts[t].block_of])

    m = sum(dims)
    Q = np.empty((n, m, m))
    c = np.empty((n, m))
    lo_all = np.concatenate([admissible[t].lo[parts[t].block_of] for t in range(T)], axis=1)
    hi_all = np.concatenate([admissible[t].hi[parts[t].block_of] for t in range(T)], axis=1)
    for w in range(n):
        A = rng.normal(0.0, 0.5, size=(m, m))
        Q[w] = A @ A.T + 0.5 * np.eye(m)
        target = rng.uniform(lo_all[w] - 0.3, hi_all[w] + 0.3)
        c[w] = Q[w] @ target
    obj = IntegralQuadratic(c=c, Q=Q)

    constraints = {}
    for t in range(T):
        if rng.random() >= constraint_prob:
            continue
        rows = int(rng.integers(1, 3))
        preds = predecessors(graph, t)
        nb = parts[t].block_count
        M = {}
        for i in preds:
            coef = rng.choice([-1.0, 0.0, 1.0], size=(nb, rows, dims[i]))
            if i == t:
                coef[:, :, 0] = rng.choice([-1.0, 1.0], size=(nb, rows))
            M[i] = coef
        at_center = sum(np.einsum("nrm,nm->nr", M[i][parts[t].block_of], centers[i]) for i in preds)
        slack = rng.uniform(0.05, 0.4, size=(nb, rows))
        b_blocks = np.empty((nb, rows))
        for bidx, blk in enumerate(parts[t].blocks):
            b_blocks[bidx] = np.round(-at_center[blk[0]] + slack[bidx], 2)
        constraints[t] = ConstraintSpec(b=b_blocks[parts[t].block_of],
                                        M={i: M[i][parts[t].block_of] for i in preds})
    return make_instance(space, graph, dims, parts, admissible, constraints, obj,
                         name=f"random_{seed}")


def full_information_instance() -> ProblemInstance:
    """One atom, one DM on [0, 1], f = a - a^2: optimum 0.5 with value 0.25."""
    space = make_space([1.0])
    obj = IntegralQuadratic(c=[[1.0]], Q=[[[2.0]]])
    return make_instance(space, build_team_graph([0]), [1], [discrete_partition(1)],
                         [box([[0.0]], [[1.0]])], {}, obj, name="full_information")


def chain_instance() -> ProblemInstance:
    """Three-stage chain on a refining filtration with ball action sets and a budget.

    Stage 0 sees nothing, stage 1 learns whether the state is low or high,
    stage 2 observes it exactly.  The last DM must keep a shared budget:
    a_0 + a_1 + a_2 <= 1.5 in every coordinate sum.
    """
    space = make_space([0.2, 0.3, 0.3, 0.2])
    parts = [trivial_partition(4), validate_partition(4, [[0, 1], [2, 3]]), discrete_partition(4)]
    graph = build_team_graph([0, 1, 2], [(0, 1), (1, 2)])
    admissible = [
        ball([[0.0, 0.0]], [1.0]),
        ball([[0.2, 0.0], [0.0, 0.2]], [0.8, 0.8]),
        box([[0.0]] * 4, [[1.0]] * 4),
    ]
    dims = [2, 2, 1]
    con = ConstraintSpec(b=np.full((4, 1), 1.5),
                         M={0: -np.ones((4, 1, 2)), 1: -np.ones((4, 1, 2)), 2: -np.ones((4, 1, 1))})
    targets = np.array([[0.9, 0.1, 0.3, -0.2, 0.6],
                        [0.5, 0.5, 0.4, 0.1, 0.8],
                        [0.1, 0.9, -0.1, 0.5, 0.2],
                        [0.3, 0.3, 0.0, 0.6, 0.9]])
    Q = np.stack([np.diag([1.0, 1.5, 1.0, 2.0, 1.0]) + 0.2 * np.ones((5, 5))] * 4)
    c = np.einsum("nmk,nk->nm", Q, targets)
    return make_instance(space, graph, dims, parts, admissible, {2: con},
                         IntegralQuadratic(c=c, Q=Q),
                         dm_ids=("planner", "scheduler", "operator"),
                         scenario_ids=("lo_a", "lo_b", "hi_a", "hi_b"), name="chain")
