import itertools
import math

import numpy as np
import pytest

from conftest import random_mixed_instance, scalar_instance
from team_lagrange.errors import (
    CycleDetected,
    DimensionMismatch,
    EmptyStage,
    SafeActionNotAdapted,
    SafeActionNotAdmissible,
    StageOrderViolation,
    UnknownDM,
)
from team_lagrange.generators import chain_instance, static_team_instance
from team_lagrange.programs import adapt_values, constraint_values, project_values
from team_lagrange.scenario_space import discrete_partition, make_space, trivial_partition
from team_lagrange.team_model import (
    ConstraintSpec,
    IntegralQuadratic,
    ball,
    box,
    build_team_graph,
    check_recourse_sufficient,
    make_instance,
    predecessors,
    slater_information,
    slater_material,
    topological_enumeration,
    validate_instance,
)


# ---------------------------------------------------------------------------
# team graph
# ---------------------------------------------------------------------------

def test_build_team_graph_examples():
    chain = build_team_graph([0, 1], [(0, 1)])
    assert chain.precedes[0, 1] and not chain.precedes[1, 0]
    static = build_team_graph([0, 0])
    assert not static.precedes.any()
    with pytest.raises(StageOrderViolation):
        build_team_graph([1, 0], [(0, 1)])


def test_build_team_graph_errors():
    with pytest.raises(CycleDetected):
        build_team_graph([0, 1, 2], [(0, 1), (1, 2), (2, 0)])
    with pytest.raises(EmptyStage):
        build_team_graph([0, 2])
    with pytest.raises(UnknownDM):
        build_team_graph([0, 1], [(0, 5)])


def test_transitive_closure():
    g = build_team_graph([0, 1, 2], [(0, 1), (1, 2)])
    assert g.precedes[0, 2]


def test_topological_enumeration_examples():
    assert topological_enumeration(build_team_graph([0, 1, 2], [(0, 1), (1, 2)])) == [0, 1, 2]
    assert topological_enumeration(build_team_graph([0, 0, 1], [(0, 2), (1, 2)])) == [0, 1, 2]
    assert topological_enumeration(build_team_graph([1, 0])) == [1, 0]


def test_topological_enumeration_respects_order_on_random_dags():
    rng = np.random.default_rng(3)
    for _ in range(200):
        n = int(rng.integers(1, 9))
        stages = np.sort(rng.integers(0, n, n))
        stages = np.unique(stages, return_inverse=True)[1]
        edges = [(i, j) for i in range(n) for j in range(n) if stages[i] < stages[j] and rng.random() < 0.3]
        g = build_team_graph(stages.tolist(), edges)
        pos = {t: k for k, t in enumerate(topological_enumeration(g))}
        for i, j in itertools.permutations(range(n), 2):
            if g.precedes[i, j]:
                assert pos[i] < pos[j]


def test_predecessors_examples():
    assert predecessors(build_team_graph([0, 1, 2], [(0, 1), (1, 2)]), 2) == [0, 1, 2]
    assert predecessors(build_team_graph([0, 0, 0]), 1) == [1]
    diamond = build_team_graph([0, 1, 1, 2], [(0, 1), (0, 2), (1, 3), (2, 3)])
    assert predecessors(diamond, 3) == [0, 1, 2, 3]
    with pytest.raises(UnknownDM):
        predecessors(diamond, 7)


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def test_validate_well_formed_chain_reports_bound():
    rep = validate_instance(chain_instance())
    assert rep.ok
    assert math.isfinite(rep.bound_c) and rep.bound_c > 0


def test_validate_flags_non_measurable_constraint():
    inst = scalar_instance([0.5, 0.5], c=[0, 0], Q=[1, 1], g=([1.0, 1.0], [-1.0, -2.0]))
    rep = validate_instance(inst)
    assert not rep.ok
    assert [c.detail for c in rep.failures()] == ["constraint data not F_t-measurable"]


def test_validate_flags_non_concave_objective():
    space = make_space([1.0])
    # eigenvalues of [[1, 0], [0, -0.1]] are 1 and -0.1 (characteristic polynomial (1-x)(-0.1-x))
    obj = IntegralQuadratic(c=[[0.0, 0.0]], Q=[[[1.0, 0.0], [0.0, -0.1]]])
    inst = make_instance(space, build_team_graph([0]), [2], [trivial_partition(1)],
                         [box([[0.0, 0.0]], [[1.0, 1.0]])], {}, obj)
    rep = validate_instance(inst)
    assert [c.detail for c in rep.failures()] == ["objective not concave"]
    assert rep.failures()[0].locations[0][1] == pytest.approx(-0.1)


def test_validate_flags_information_loss_along_order():
    space = make_space([0.5, 0.5])
    obj = IntegralQuadratic(c=np.zeros((2, 2)), Q=np.stack([np.eye(2)] * 2))
    inst = make_instance(space, build_team_graph([0, 1], [(0, 1)]), [1, 1],
                         [discrete_partition(2), trivial_partition(2)],
                         [box([[0.0]] * 2, [[1.0]] * 2), box([[0.0]], [[1.0]])], {}, obj)
    rep = validate_instance(inst)
    assert [c.name for c in rep.failures()] == ["information refinement"]


def test_validate_flags_constraint_on_non_predecessor():
    space = make_space([1.0])
    obj = IntegralQuadratic(c=np.zeros((1, 2)), Q=np.eye(2)[None])
    con = ConstraintSpec(b=np.ones((1, 1)), M={1: -np.ones((1, 1, 1))})
    inst = make_instance(space, build_team_graph([0, 0]), [1, 1], [trivial_partition(1)] * 2,
                         [box([[0.0]], [[1.0]])] * 2, {0: con}, obj)
    assert [c.name for c in validate_instance(inst).failures()] == ["constraint scope"]


def test_make_instance_dimension_checks():
    space = make_space([1.0])
    with pytest.raises(DimensionMismatch):
        make_instance(space, build_team_graph([0]), [2], [trivial_partition(1)],
                      [box([[0.0]], [[1.0]])], {}, IntegralQuadratic(c=[[0.0]], Q=[[[1.0]]]))
    with pytest.raises(DimensionMismatch):
        make_instance(space, build_team_graph([0]), [1], [trivial_partition(1)],
                      [box([[0.0]], [[1.0]])], {}, IntegralQuadratic(c=[[0.0, 1.0]], Q=[[[1.0]]]))


def test_validate_is_idempotent():
    inst = chain_instance()
    assert validate_instance(inst).to_dict() == validate_instance(inst).to_dict()


def test_constraint_bound_dominates_random_admissible_points():
    rng = np.random.default_rng(8)
    for _ in range(20):
        inst = random_mixed_instance(rng)
        c = validate_instance(inst).bound_c
        if not inst.constraints:
            continue
        for _ in range(50):
            raw = rng.normal(0, 3, (inst.atom_count, inst.total_dim))
            v = project_values(inst, raw)
            for g in constraint_values(inst, v).values():
                assert np.linalg.norm(g, axis=1).max() <= c + 1e-9


# ---------------------------------------------------------------------------
# Slater conditions
# ---------------------------------------------------------------------------

def test_slater_information_examples():
    space = make_space([1.0])
    obj = IntegralQuadratic(c=np.zeros((1, 2)), Q=np.eye(2)[None])
    inst = make_instance(space, build_team_graph([0]), [2], [trivial_partition(1)],
                         [box([[0.0, 0.0]], [[2.0, 2.0]])], {}, obj)
    info = slater_information(inst)
    assert info.theta_min == 1.0 and info.passed
    np.testing.assert_array_equal(info.center, [[1.0, 1.0]])

    flat = make_instance(space, build_team_graph([0]), [2], [trivial_partition(1)],
                         [box([[0.0, 1.0]], [[2.0, 1.0]])], {}, obj)
    assert slater_information(flat).theta_min == 0.0 and not slater_information(flat).passed

    round_ = make_instance(space, build_team_graph([0]), [2], [trivial_partition(1)],
                           [ball([[0.3, -0.2]], [0.3])], {}, obj)
    info = slater_information(round_)
    assert info.theta_min == pytest.approx(0.3)
    np.testing.assert_array_equal(info.center, [[0.3, -0.2]])


def test_slater_information_ball_fits_inside():
    rng = np.random.default_rng(2)
    for _ in range(20):
        inst = random_mixed_instance(rng)
        info = slater_information(inst)
        c = info.center
        np.testing.assert_array_equal(adapt_values(inst, c), c)
        for _ in range(100):
            d = rng.normal(size=c.shape)
            for sl in inst.slices:
                d[:, sl] /= np.linalg.norm(d[:, sl], axis=1, keepdims=True)
            pt = c + info.theta_min * d * (1 - 1e-12)
            np.testing.assert_allclose(project_values(inst, pt), pt, atol=1e-12)


def test_slater_material_examples():
    inst = scalar_instance([1.0], c=[0.0], Q=[1.0], lo=0.0, hi=2.0, g=([1.0], [-1.0]))
    res = slater_material(inst)
    assert res.kappa == pytest.approx(1.0, abs=1e-6)
    assert res.witness[0, 0] == pytest.approx(0.0, abs=1e-6)

    infeasible = scalar_instance([1.0], c=[0.0], Q=[1.0], g=([-1.0], [0.0]))
    assert slater_material(infeasible).kappa == pytest.approx(-1.0)
    assert not slater_material(infeasible).passed

    free = scalar_instance([1.0], c=[0.0], Q=[1.0])
    assert slater_material(free).kappa == math.inf


def test_slater_material_witness_properties():
    rng = np.random.default_rng(4)
    for _ in range(10):
        inst = random_mixed_instance(rng)
        if not inst.constraints:
            continue
        res = slater_material(inst)
        x = res.witness
        np.testing.assert_allclose(adapt_values(inst, x), x, atol=1e-12)
        np.testing.assert_allclose(project_values(inst, x), x, atol=1e-12)
        slack = min(g.min() for g in constraint_values(inst, x).values())
        assert slack == pytest.approx(res.kappa, abs=1e-6)


# ---------------------------------------------------------------------------
# recourse
# ---------------------------------------------------------------------------

def _two_dm_recourse(lo0=-1.0, hi0=1.0, kind="box"):
    """g_1 = a_0 - a_1 on a 1-atom space, A_0 = [lo0, hi0] or a ball, A_1 = [-1, 1]."""
    space = make_space([1.0])
    obj = IntegralQuadratic(c=np.zeros((1, 2)), Q=np.eye(2)[None])
    A0 = box([[lo0]], [[hi0]]) if kind == "box" else ball([[0.0]], [1.0])
    con = ConstraintSpec(b=np.zeros((1, 1)), M={0: np.ones((1, 1, 1)), 1: -np.ones((1, 1, 1))})
    return make_instance(space, build_team_graph([0, 1], [(0, 1)]), [1, 1], [trivial_partition(1)] * 2,
                         [A0, box([[-1.0]], [[1.0]])], {1: con}, obj)


def test_recourse_examples():
    inst = scalar_instance([1.0], c=[0.0], Q=[1.0], g=([1.0], [-1.0]))
    assert check_recourse_sufficient(inst, {0: [[0.0]]}).passed

    inst = _two_dm_recourse()
    ok = check_recourse_sufficient(inst, {1: [[-1.0]]})
    assert ok.passed and ok.worst_margin[1] == pytest.approx(0.0)
    bad = check_recourse_sufficient(inst, {1: [[0.0]]})
    assert not bad.passed and bad.worst_margin[1] == pytest.approx(-1.0)
    assert bad.failures == [(1, 0, 0, -1.0)]


def test_recourse_ball_predecessor_is_exact():
    inst = _two_dm_recourse(kind="ball")
    assert check_recourse_sufficient(inst, {1: [[-1.0]]}).passed
    assert check_recourse_sufficient(inst, {1: [[-0.999]]}).worst_margin[1] == pytest.approx(-0.001)


def test_recourse_rejects_bad_safe_actions():
    inst = _two_dm_recourse()
    with pytest.raises(SafeActionNotAdmissible):
        check_recourse_sufficient(inst, {1: [[-2.0]]})
    with pytest.raises(SafeActionNotAdmissible):
        check_recourse_sufficient(inst, {})
    two_atoms = scalar_instance([0.5, 0.5], c=[0, 0], Q=[1, 1], g=([1.0, 1.0], [-1.0, -1.0]))
    with pytest.raises(SafeActionNotAdapted):
        check_recourse_sufficient(two_atoms, {0: [[0.0], [0.5]]})


def test_static_team_graph_has_no_order():
    inst = static_team_instance()
    assert not inst.graph.precedes.any()
    assert all(predecessors(inst.graph, t) == [t] for t in range(3))
