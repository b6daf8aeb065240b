import numpy as np
import pytest

from conftest import random_mixed_instance, scalar_instance
from team_lagrange.errors import DimensionMismatch, NoConstraintForDM
from team_lagrange.generators import mean_variance_instance, symmetric_instance
from team_lagrange.programs import (
    ADAPT_TOL,
    AdaptedProgram,
    adapt,
    adapt_values,
    admissibility_residual,
    as_values,
    evaluate_constraints,
    evaluate_objective,
    feasibility_residuals,
    project_admissible,
    project_values,
)
from team_lagrange.scenario_space import make_space, trivial_partition
from team_lagrange.team_model import (
    ConstraintSpec,
    IntegralQuadratic,
    MeanVariance,
    ball,
    box,
    build_team_graph,
    make_instance,
)


def _ball_instance():
    space = make_space([1.0])
    obj = IntegralQuadratic(c=np.zeros((1, 2)), Q=np.eye(2)[None])
    return make_instance(space, build_team_graph([0]), [2], [trivial_partition(1)],
                         [ball([[0.0, 0.0]], [1.0])], {}, obj)


def test_project_admissible_examples():
    inst = scalar_instance([1.0], c=[0.0], Q=[1.0])
    assert project_admissible(inst, np.array([[1.7]])).values[0, 0] == 1.0
    np.testing.assert_allclose(project_admissible(_ball_instance(), np.array([[3.0, 4.0]])).values, [[0.6, 0.8]])
    inside = np.array([[0.1, -0.2]])
    np.testing.assert_array_equal(project_admissible(_ball_instance(), inside).values, inside)
    with pytest.raises(DimensionMismatch):
        project_admissible(inst, np.zeros((1, 2)))


def test_adapt_examples():
    inst = scalar_instance([0.5, 0.5], c=[0, 0], Q=[1, 1])
    out = adapt(inst, np.array([[0.2], [0.8]]))
    assert isinstance(out, AdaptedProgram)
    np.testing.assert_allclose(out.values, [[0.5], [0.5]])
    np.testing.assert_array_equal(adapt(inst, out).values, out.values)

    space = make_space([0.5, 0.5])
    obj = IntegralQuadratic(c=np.zeros((2, 2)), Q=np.stack([np.eye(2)] * 2))
    inst = make_instance(space, build_team_graph([0]), [2], [trivial_partition(2)],
                         [ball([[0.0, 0.0]], [1.0])], {}, obj)
    out = adapt(inst, np.array([[1.0, 0.0], [0.0, 1.0]]))
    assert np.linalg.norm(out.values[0]) <= 1.0


def test_adapt_rejects_non_programs():
    inst = scalar_instance([0.5, 0.5], c=[0, 0], Q=[1, 1])
    with pytest.raises(ValueError):
        adapt(inst, np.array([[2.0], [2.0]]))


def test_feasibility_residual_examples():
    inst = scalar_instance([0.5, 0.5], c=[0, 0], Q=[1, 1], lo=0.0, hi=2.0, g=([1.0, 1.0], [-1.0, -1.0]))
    rep = feasibility_residuals(inst, np.array([[0.5], [0.5]]))
    assert rep.max_material == 0.0 and rep.max_adaptedness == 0.0 and rep.max_admissibility == 0.0
    assert rep.feasible()
    rep = feasibility_residuals(inst, np.array([[1.5], [1.5]]))
    assert rep.max_material == pytest.approx(0.5)
    rep = feasibility_residuals(inst, np.array([[0.0], [1.0]]))
    assert rep.max_adaptedness == pytest.approx(0.5)
    assert not rep.feasible()


def test_evaluate_objective_examples():
    inst = scalar_instance([1.0], c=[1.0], Q=[2.0])
    assert evaluate_objective(inst, np.array([[0.5]])) == pytest.approx(0.25)
    assert evaluate_objective(symmetric_instance(), np.full((2, 1), 0.5)) == pytest.approx(-0.25)

    mv = mean_variance_instance()
    risk_neutral = make_instance(mv.space, mv.graph, mv.dims, mv.partitions, mv.admissible, mv.constraints,
                                 MeanVariance(r=mv.objective.r, w=mv.objective.w, lam=0.0))
    x = np.random.default_rng(0).uniform(0, 1, (3, 2))
    assert evaluate_objective(risk_neutral, x) == pytest.approx(float(mv.prob @ (mv.objective.r * x).sum(axis=1)))


def test_mean_variance_matches_raw_moment_formula():
    mv = mean_variance_instance()
    rng = np.random.default_rng(1)
    for _ in range(20):
        x = rng.uniform(0, 1, (3, 2))
        s = x @ mv.objective.w
        raw = mv.prob @ (mv.objective.r * x).sum(axis=1) - mv.objective.lam * (mv.prob @ s ** 2 - (mv.prob @ s) ** 2)
        assert evaluate_objective(mv, x) == pytest.approx(raw, abs=1e-12)


def test_evaluate_constraints_examples():
    inst = scalar_instance([1.0], c=[0.0], Q=[1.0], g=([1.0], [-1.0]))
    assert evaluate_constraints(inst, np.array([[0.3]]), 0, 0)[0] == pytest.approx(0.7)
    flat = scalar_instance([1.0], c=[0.0], Q=[1.0], g=([0.4], [0.0]))
    assert evaluate_constraints(flat, np.array([[0.9]]), 0, 0)[0] == 0.4
    with pytest.raises(NoConstraintForDM):
        evaluate_constraints(scalar_instance([1.0], c=[0.0], Q=[1.0]), np.array([[0.3]]), 0, 0)


def test_evaluate_constraints_on_diamond_matches_dense_arithmetic():
    rng = np.random.default_rng(5)
    space = make_space([0.3, 0.7])
    part = trivial_partition(2)
    graph = build_team_graph([0, 1, 1, 2], [(0, 1), (0, 2), (1, 3), (2, 3)])
    dims = [1, 2, 1, 2]
    M = {i: np.repeat(rng.normal(size=(1, 2, dims[i])), 2, axis=0) for i in range(4)}
    con = ConstraintSpec(b=np.repeat(rng.normal(size=(1, 2)), 2, axis=0), M=M)
    obj = IntegralQuadratic(c=np.zeros((2, 6)), Q=np.stack([np.eye(6)] * 2))
    inst = make_instance(space, graph, dims, [part] * 4,
                         [box(-np.ones((1, m)), np.ones((1, m))) for m in dims], {3: con}, obj)
    x = rng.uniform(-1, 1, (2, 6))
    dense = np.concatenate([M[i][1] for i in range(4)], axis=1)
    np.testing.assert_allclose(evaluate_constraints(inst, x, 3, 1), con.b[1] + dense @ x[1], atol=1e-14)


def test_as_values_accepts_per_dm_lists():
    inst = symmetric_instance()
    np.testing.assert_array_equal(as_values(inst, [[0.1, 0.2]]), [[0.1], [0.2]])


# ---------------------------------------------------------------------------
# properties
# ---------------------------------------------------------------------------

def test_adapt_preserves_admissibility_and_is_idempotent():
    rng = np.random.default_rng(11)
    for _ in range(200):
        inst = random_mixed_instance(rng)
        x = project_values(inst, rng.normal(0, 2, (inst.atom_count, inst.total_dim)))
        pre = adapt_values(inst, x)
        assert admissibility_residual(inst, pre).max() <= ADAPT_TOL
        once = adapt(inst, x).values
        np.testing.assert_allclose(adapt(inst, once).values, once, atol=1e-12)


def test_projection_is_idempotent_and_nonexpansive():
    rng = np.random.default_rng(12)
    for _ in range(100):
        inst = random_mixed_instance(rng)
        u, v = (rng.normal(0, 2, (inst.atom_count, inst.total_dim)) for _ in range(2))
        pu, pv = project_values(inst, u), project_values(inst, v)
        np.testing.assert_allclose(project_values(inst, pu), pu, atol=1e-14)
        assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-12


@pytest.mark.parametrize("mean_variance", [False, True])
def test_objective_is_concave_along_segments(mean_variance):
    rng = np.random.default_rng(13)
    for _ in range(50):
        inst = random_mixed_instance(rng, mean_variance=mean_variance)
        x, y = (project_values(inst, rng.normal(0, 2, (inst.atom_count, inst.total_dim))) for _ in range(2))
        fx, fy = evaluate_objective(inst, x), evaluate_objective(inst, y)
        for s in np.linspace(0, 1, 11):
            assert evaluate_objective(inst, s * x + (1 - s) * y) >= s * fx + (1 - s) * fy - 1e-9


def test_constraints_are_affine():
    rng = np.random.default_rng(14)
    for _ in range(50):
        inst = random_mixed_instance(rng)
        x, y = (rng.normal(0, 1, (inst.atom_count, inst.total_dim)) for _ in range(2))
        s = rng.uniform()
        for t in inst.constraints:
            for w in range(inst.atom_count):
                lhs = evaluate_constraints(inst, s * x + (1 - s) * y, t, w)
                rhs = s * evaluate_constraints(inst, x, t, w) + (1 - s) * evaluate_constraints(inst, y, t, w)
                np.testing.assert_allclose(lhs, rhs, atol=1e-10)
