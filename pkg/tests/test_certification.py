import numpy as np
import pytest

from conftest import random_mixed_instance
from team_lagrange.certification import (
    Tolerances,
    check_kkt,
    cs_residuals,
    duality_gap,
    insurance_scheme,
    saddle_sample_check,
)
from team_lagrange.errors import NotIntegralObjective
from team_lagrange.generators import (
    mean_variance_instance,
    random_instance,
    scalar_constrained_instance,
    symmetric_instance,
)
from team_lagrange.lagrangian import make_multipliers, shift_q, zero_multipliers
from team_lagrange.lagrangian import MultiplierPair
from team_lagrange.programs import AdaptedProgram, adapt_values, constraint_values, project_values
from team_lagrange.saddle_solver import oracle_solve, solve
from team_lagrange.team_model import validate_instance


@pytest.fixture(scope="module")
def hand_triple():
    inst = symmetric_instance()
    x = AdaptedProgram(np.full((2, 1), 0.5))
    return inst, x, make_multipliers(inst, q_values=np.array([[1.0], [-1.0]]))


def test_hand_triple_passes(hand_triple):
    inst, x, mult = hand_triple
    rep = check_kkt(inst, (x, mult))
    assert rep.passed
    for key, val in rep.scalars().items():
        if key not in ("primal_value", "dual_value"):
            assert abs(val) <= 1e-10, key
    assert rep.gap_kind == "stationarity"


def test_zero_q_fails_with_quarter_gap(hand_triple):
    inst, x, _ = hand_triple
    rep = check_kkt(inst, (x, zero_multipliers(inst)))
    assert not rep.passed
    assert rep.stationarity_gap == pytest.approx(0.25, abs=1e-12)


def test_constrained_scalar_certificate():
    inst = scalar_constrained_instance()
    rep = check_kkt(inst, (AdaptedProgram(np.array([[1.0]])), make_multipliers(inst, {0: [[1.0]]})))
    assert rep.cs_as_residual == 0.0 and rep.cs_expected_residual == 0.0
    assert rep.passed


def test_negative_p_flags_validity():
    inst = scalar_constrained_instance()
    bad = MultiplierPair(p={0: np.array([[-1.0]])}, q=np.zeros((1, 1)), q_tilde=np.zeros((1, 1)))
    rep = check_kkt(inst, (AdaptedProgram(np.array([[1.0]])), bad))
    assert not rep.multipliers_nonneg_adapted and not rep.passed


def test_saddle_sample_check_examples(hand_triple):
    inst, x, mult = hand_triple
    assert saddle_sample_check(inst, (x, mult), n_samples=1000).violation <= 1e-4
    assert saddle_sample_check(inst, (x, zero_multipliers(inst)), n_samples=1000).violation >= 0.25 - 0.01
    empty = saddle_sample_check(inst, (x, mult), n_samples=0)
    assert empty.violation == 0.0 and empty.warning


def test_duality_gap_examples(hand_triple):
    inst, x, mult = hand_triple
    assert abs(duality_gap(inst, (x, mult))) <= 1e-10
    # zero multipliers: full-information value 0 minus adapted value -0.25
    assert duality_gap(inst, (x, zero_multipliers(inst))) == pytest.approx(0.25)


def test_duality_gap_weak_duality_random():
    rng = np.random.default_rng(1)
    for _ in range(30):
        inst = random_mixed_instance(rng)
        x = adapt_values(inst, project_values(inst, rng.normal(0, 1, (inst.atom_count, inst.total_dim))))
        if any(g.min() < 0 for g in constraint_values(inst, x).values()):
            continue
        p = {t: np.abs(rng.normal(size=(inst.partitions[t].block_count, c.out_dim)))[inst.partitions[t].block_of]
             for t, c in inst.constraints.items()}
        mult = make_multipliers(inst, p, rng.normal(size=(inst.atom_count, inst.total_dim)))
        assert duality_gap(inst, (x, mult)) >= -1e-8


def test_insurance_on_symmetric(hand_triple):
    inst, x, mult = hand_triple
    rep = insurance_scheme(inst, (x, mult))
    assert rep.no_regret_violation <= 1e-8
    np.testing.assert_allclose(rep.premium, 0.0, atol=1e-12)
    np.testing.assert_allclose(rep.compensation, [[0.5, -0.5]])
    assert rep.fairness_residual <= 1e-10
    table = rep.to_dict(inst)
    assert table["compensation"]["trader"] == {"low": 0.5, "high": -0.5}


def test_insurance_net_transfer_is_gauge_invariant(hand_triple):
    inst, x, mult = hand_triple
    shifted = shift_q(inst, mult, np.array([[0.7], [0.7]]))
    a, b = insurance_scheme(inst, (x, mult)), insurance_scheme(inst, (x, shifted))
    assert not np.allclose(a.premium, b.premium)
    np.testing.assert_allclose(a.compensation - a.premium, b.compensation - b.premium, atol=1e-12)


def test_insurance_rejects_mean_variance():
    inst = mean_variance_instance()
    with pytest.raises(NotIntegralObjective):
        insurance_scheme(inst, (AdaptedProgram(np.zeros((3, 2))), zero_multipliers(inst)))


def test_fairness_identity_random():
    rng = np.random.default_rng(2)
    for _ in range(1000 // 20):
        inst = random_mixed_instance(rng, n=4)
        for _ in range(20):
            x = adapt_values(inst, project_values(inst, rng.normal(size=(inst.atom_count, inst.total_dim))))
            mult = make_multipliers(inst, None, rng.normal(0, 3, (inst.atom_count, inst.total_dim)))
            assert insurance_scheme(inst, (x, mult), n_samples=0).fairness_residual <= 1e-10


def test_cs_forms_agree():
    rng = np.random.default_rng(3)
    for _ in range(50):
        inst = random_mixed_instance(rng)
        if not inst.constraints:
            continue
        x = adapt_values(inst, project_values(inst, rng.normal(size=(inst.atom_count, inst.total_dim))))
        g = constraint_values(inst, x)
        if any(v.min() < 0 for v in g.values()):
            continue
        # multipliers supported where the constraint is slack give nonzero CS, zero elsewhere
        p = {t: _block_constant(inst, t, np.where(rng.random(g[t].shape) < 0.5, 1.0, 0.0)) for t in inst.constraints}
        mult = make_multipliers(inst, p)
        as_res, exp_res = cs_residuals(inst, x, mult)
        assert exp_res <= as_res + 1e-12
        assert (as_res <= 1e-12) == (exp_res <= 1e-12)


def _block_constant(inst, t, values):
    part = inst.partitions[t]
    return values[[blk[0] for blk in part.blocks]][part.block_of]


def test_certificate_gauge_invariant():
    rng = np.random.default_rng(4)
    inst = random_instance(9)
    sol = solve(inst)
    base = check_kkt(inst, sol).scalars()
    for _ in range(20):
        y = np.empty((inst.atom_count, inst.total_dim))
        for t, sl in enumerate(inst.slices):
            part = inst.partitions[t]
            y[:, sl] = rng.normal(0, 5, (part.block_count, inst.dims[t]))[part.block_of]
        rep = check_kkt(inst, (sol.program, shift_q(inst, sol.multipliers, y))).scalars()
        for key in base:
            assert rep[key] == pytest.approx(base[key], abs=1e-10), key


def test_certificate_soundness_against_grid():
    for seed in (0, 1, 2):
        inst = random_instance(seed)
        sol = solve(inst)
        assert sol.converged
        c = validate_instance(inst).bound_c
        rows = sum(con.out_dim for con in inst.constraints.values())
        oracle = oracle_solve(inst, 0.02, 0.0)
        tau = Tolerances().kkt_tol
        assert oracle.value <= sol.primal_value + tau * (1 + rows * c)


def test_no_regret_bounded_by_stationarity():
    for seed in range(20):
        inst = random_instance(seed)
        if inst.constraints:
            continue
        sol = solve(inst)
        rep = insurance_scheme(inst, sol)
        assert rep.no_regret_violation <= sol.residuals.stationarity_gap + 1e-10
