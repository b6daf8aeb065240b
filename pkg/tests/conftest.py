import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from team_lagrange import generators as gen
from team_lagrange.lagrangian import make_multipliers
from team_lagrange.scenario_space import make_space, trivial_partition, validate_partition
from team_lagrange.team_model import (
    ConstraintSpec,
    IntegralQuadratic,
    MeanVariance,
    ball,
    box,
    build_team_graph,
    make_instance,
)

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

ACCEPTANCE_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_LINES] = []


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(request):
    """``criterion(n, title, ok, detail)`` prints and records one pass/fail line."""
    def record(n, title, ok, detail=""):
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}" + (f"  ({detail})" if detail else "")
        print(line)
        request.config.stash[ACCEPTANCE_LINES].append(line)
        return ok
    return record


def scalar_instance(probs, c, Q, lo=0.0, hi=1.0, d=None, partition=None, g=None):
    """One DM with a scalar box decision; ``g = (b, M)`` per atom for 1 row."""
    space = make_space(probs)
    n = space.atom_count
    part = partition or trivial_partition(n)
    cons = {}
    if g is not None:
        b, M = g
        cons[0] = ConstraintSpec(b=np.asarray(b, float).reshape(n, 1),
                                 M={0: np.asarray(M, float).reshape(n, 1, 1)})
    obj = IntegralQuadratic(c=np.asarray(c, float).reshape(n, 1), Q=np.asarray(Q, float).reshape(n, 1, 1), d=d)
    return make_instance(space, build_team_graph([0]), [1], [part],
                         [box([[lo]] * part.block_count, [[hi]] * part.block_count)], cons, obj)


def random_mixed_instance(rng, n=None, T=None, with_balls=True, mean_variance=False):
    """Random instance on a filtration with box or ball sets and optional constraints."""
    n = n or int(rng.integers(1, 6))
    T = T or int(rng.integers(1, 4))
    space = make_space(_probs(rng, n))
    stages = list(range(T))
    perm = rng.permutation(n)
    parts = []
    cuts = sorted(rng.choice(np.arange(1, n), size=min(T - 1, n - 1), replace=False)) if n > 1 else []
    for t in range(T):
        k = min(t, len(cuts))
        bounds = [0] + list(cuts[:k]) + [n]
        parts.append(validate_partition(n, [perm[bounds[j]:bounds[j + 1]].tolist() for j in range(len(bounds) - 1)]))
    dims = [int(rng.integers(1, 3)) for _ in range(T)]
    graph = build_team_graph(stages, [(t, t + 1) for t in range(T - 1)])
    sets = []
    for t in range(T):
        nb = parts[t].block_count
        if with_balls and rng.random() < 0.4:
            sets.append(ball(rng.normal(0, 0.5, (nb, dims[t])), rng.uniform(0.3, 1.5, nb)))
        else:
            lo = rng.uniform(-1, 0, (nb, dims[t]))
            sets.append(box(lo, lo + rng.uniform(0.2, 2.0, (nb, dims[t]))))
    m = sum(dims)
    if mean_variance:
        obj = MeanVariance(r=rng.normal(0, 1, (n, m)), w=rng.normal(0, 1, m), lam=float(rng.uniform(0, 2)))
    else:
        A = rng.normal(0, 1, (n, m, m))
        obj = IntegralQuadratic(c=rng.normal(0, 1, (n, m)), Q=np.einsum("nij,nkj->nik", A, A) + 0.1 * np.eye(m),
                                d=rng.normal(0, 1, n))
    cons = {}
    for t in range(T):
        if rng.random() < 0.5:
            rows = int(rng.integers(1, 3))
            blk = parts[t].block_of
            b = rng.uniform(0.5, 2.0, (parts[t].block_count, rows))[blk]
            M = {i: rng.normal(0, 1, (parts[t].block_count, rows, dims[i]))[blk] for i in range(t + 1)}
            cons[t] = ConstraintSpec(b=b, M=M)
    return make_instance(space, graph, dims, parts, sets, cons, obj)


def random_multipliers(inst, rng, scale=2.0):
    p = {t: np.abs(rng.normal(0, scale, (inst.partitions[t].block_count, con.out_dim)))[inst.partitions[t].block_of]
         for t, con in inst.constraints.items()}
    return make_multipliers(inst, p, rng.normal(0, scale, (inst.atom_count, inst.total_dim)))


def random_shift(inst, rng):
    """Block-constant (adapted) perturbation of q."""
    y = np.empty((inst.atom_count, inst.total_dim))
    for t, sl in enumerate(inst.slices):
        part = inst.partitions[t]
        y[:, sl] = rng.normal(0, 3, (part.block_count, inst.dims[t]))[part.block_of]
    return y


def central_difference(fun, a, h=1e-6):
    grad = np.empty_like(a)
    for j in range(a.size):
        e = np.zeros_like(a)
        e.flat[j] = h
        grad.flat[j] = (fun(a + e) - fun(a - e)) / (2 * h)
    return grad


def _probs(rng, n):
    p = rng.uniform(0.2, 1.0, n)
    return p / p.sum()


@pytest.fixture
def symmetric():
    return gen.symmetric_instance()


@pytest.fixture
def scalar_constrained():
    return gen.scalar_constrained_instance()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
