import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.exceptions import NotFittedError

from bevplan.exceptions import DegenerateDataError, DomainError
from bevplan.learning import (
    LearnerConfig, LossWeights, MaxMarginCostLearner, TrainingExample, composite_losses,
    dataset_objective, distill_feature_loss, distill_loss, distill_map_loss, distill_plan_loss,
    learn_weights, planning_loss, planning_loss_subgradient, semantic_map_loss,
)
from bevplan.planner import N_FEATURES, CostWeights

from conftest import straight_traj
from oracles import bce_loop, central_difference, clear_of_ties, l1_loop, random_example, scan_argmin

ONES = np.ones(N_FEATURES)


def _example(phis, human_phi, ys, human_y=0.0, teacher=None):
    cands = [straight_traj(y=y) for y in ys]
    return TrainingExample(cands, np.array(phis, dtype=float), straight_traj(y=human_y),
                           np.asarray(human_phi, dtype=float), teacher=teacher)


# -- map losses -------------------------------------------------------------------

def test_map_loss_single_cell():
    assert semantic_map_loss(np.ones((1, 1, 1, 1)), np.full((1, 1, 1, 1), 0.5)) == pytest.approx(math.log(2))


def test_map_loss_perfect_prediction_is_near_zero(rng):
    gt = (rng.uniform(size=(11, 4, 4, 4)) > 0.5).astype(float)
    expected = gt.size * -math.log(1 - 1e-7)
    assert semantic_map_loss(gt, gt) == pytest.approx(expected, rel=1e-6)
    assert semantic_map_loss(gt, gt) < 1e-3


@given(seed=st.integers(0, 2 ** 31))
def test_map_loss_matches_loop(seed):
    rng = np.random.default_rng(seed)
    gt, pred = rng.uniform(size=(2, 3, 4, 5, 4))
    pred[0, 0, 0, 0] = 0.0      # exercises the clamp
    assert semantic_map_loss(gt, pred) == pytest.approx(bce_loop(gt, pred), abs=1e-9, rel=1e-12)


def test_map_loss_shape_mismatch():
    with pytest.raises(DomainError):
        semantic_map_loss(np.zeros((1, 2, 2, 4)), np.zeros((1, 2, 3, 4)))


def test_distill_map_examples():
    half = np.full((1, 1, 1, 1), 0.5)
    assert distill_map_loss(half, half) == pytest.approx(math.log(2))
    p = np.full((1, 1, 1, 1), 0.9)
    assert distill_map_loss(p, p) == pytest.approx(-(0.9 * math.log(0.9) + 0.1 * math.log(0.1)))
    assert distill_map_loss(p, p) == pytest.approx(0.3251, abs=1e-4)


@pytest.mark.parametrize("teacher", [0.03, 0.3, 0.5, 0.77, 0.98])
def test_distill_map_minimized_at_teacher(teacher):
    t = np.full((1, 1, 1, 1), teacher)
    q = scan_argmin(lambda q: distill_map_loss(t, np.full((1, 1, 1, 1), q)))
    assert abs(q - teacher) < 1e-6


def test_distill_feature_loss(rng):
    a = rng.normal(size=(6, 5, 40))
    assert distill_feature_loss(a, a) == 0.0
    assert distill_feature_loss(a, a + 0.5) == pytest.approx(0.5 * a.size, rel=1e-12)
    b = rng.normal(size=a.shape)
    assert abs(distill_feature_loss(a, b) - l1_loop(a, b)) < 1e-9
    with pytest.raises(DomainError):
        distill_feature_loss(a, b[:, :, :3])


# -- planning loss ----------------------------------------------------------------

def test_planning_loss_examples():
    base = np.full(N_FEATURES, 2.0)
    assert planning_loss(_example([base], base, [0.0]), ONES) == (0.0, 0)
    # competitor 1 cheaper and 3 m (10 x 0.3) away from the human
    cheaper = base - np.eye(N_FEATURES)[0]
    loss, k = planning_loss(_example([base, cheaper], base, [0.0, 0.3]), ONES)
    assert (loss, k) == (pytest.approx(4.0), 1)
    pricier = base + 10 * np.eye(N_FEATURES)[0]
    assert planning_loss(_example([base, pricier], base, [0.0, 0.3]), ONES)[0] == 0.0


def test_zero_loss_zero_gradient():
    base = np.full(N_FEATURES, 2.0)
    ex = _example([base, base + 10 * np.eye(N_FEATURES)[0]], base, [0.0, 0.3])
    assert not planning_loss_subgradient(ex, ONES).any()


def test_two_candidate_subgradient_is_feature_difference():
    base = np.full(N_FEATURES, 2.0)
    other = base - np.eye(N_FEATURES)[0] + 0.5 * np.eye(N_FEATURES)[4]
    ex = _example([base, other], base, [0.0, 0.3])
    np.testing.assert_array_equal(planning_loss_subgradient(ex, ONES), base - other)


def test_subgradient_matches_finite_differences():
    rng = np.random.default_rng(7)
    checked = 0
    while checked < 100:
        ex = random_example(rng)
        w = rng.uniform(0.1, 3.0, N_FEATURES)
        if not clear_of_ties(ex, w):
            continue
        fd = central_difference(lambda v: planning_loss(ex, v)[0], w)
        g = planning_loss_subgradient(ex, w)
        assert np.all(np.abs(fd - g) <= 1e-4 * np.maximum(1.0, np.abs(g)))
        checked += 1


# -- plan distillation ------------------------------------------------------------

def _distill_case(teacher_y, student_ys, student_phis, teacher_phi):
    human = straight_traj(y=0.0)
    teacher = (straight_traj(y=teacher_y), np.asarray(teacher_phi, float))
    cands = [(straight_traj(y=y), np.asarray(p, float)) for y, p in zip(student_ys, student_phis)]
    return teacher, cands, human


def test_distill_plan_gate():
    phis = [np.full(N_FEATURES, 1.0), np.full(N_FEATURES, 2.0)]
    # student's best (y = 0.1, l1 = 1) is closer than the teacher's (l1 = 3)
    t, c, h = _distill_case(0.3, [0.1, 0.5], phis, np.full(N_FEATURES, 5.0))
    assert distill_plan_loss(t, c, h, ONES) == 0.0
    # equal distances: still zero, the inequality is strict
    t, c, h = _distill_case(-0.1, [0.1, 0.5], phis, np.full(N_FEATURES, 5.0))
    assert distill_plan_loss(t, c, h, ONES) == 0.0


def test_distill_plan_equals_planning_loss_toward_teacher():
    phis = [np.full(N_FEATURES, 1.0), np.full(N_FEATURES, 1.5), np.full(N_FEATURES, 3.0)]
    teacher_phi = np.full(N_FEATURES, 1.2)
    # teacher l1 = 1; student's best (cheapest, y = 0.3) has l1 = 3, i.e. 2 m farther
    t, c, h = _distill_case(0.1, [0.3, -0.5, 0.1], phis, teacher_phi)
    got = distill_plan_loss(t, c, h, ONES)
    substituted = TrainingExample([tr for tr, _ in c], np.array(phis), t[0], teacher_phi)
    assert got == pytest.approx(planning_loss(substituted, ONES)[0])
    # enumerate the brackets by hand: f(T_t) - f(S_k) + l1(T_t, S_k)
    brackets = [9 * 1.2 - 9 * 1.0 + 2.0, 9 * 1.2 - 9 * 1.5 + 6.0, 9 * 1.2 - 9 * 3.0 + 0.0]
    assert got == pytest.approx(max(0.0, *brackets))


def test_composite_losses():
    parts = {"M_T": 1.0, "P_T": 2.0, "M_S": 1.0, "P_S": 2.0, "DM": 1.0, "DP": 2.0, "DF": 3.0}
    teacher, student = composite_losses(parts)
    assert teacher == 3.0
    assert student == 3.0 + 6.0
    assert distill_loss(1.0, 2.0, 3.0) == 6.0
    _, no_distill = composite_losses(parts, LossWeights(lambda_D=0.0))
    assert no_distill == teacher
    with pytest.raises(DomainError):
        composite_losses({**parts, "DM": -1.0})


# -- learner ----------------------------------------------------------------------

def test_already_optimal_dataset_is_left_alone():
    base = np.full(N_FEATURES, 1.0)
    ex = _example([base, base + 10 * np.eye(N_FEATURES)[0]], base, [0.0, 0.3])
    w, curve = learn_weights([ex], LearnerConfig(0.01, 20))
    assert curve[0] == 0.0 and not curve.any()
    np.testing.assert_array_equal(w.as_array(), ONES)


def test_negative_step_is_projected_to_zero():
    human = np.zeros(N_FEATURES)
    human[3] = 500.0
    ex = _example([np.zeros(N_FEATURES)], human, [0.3])
    w, _ = learn_weights([ex], LearnerConfig(0.01, 1))
    assert w.w_route == 0.0
    assert np.all(w.as_array() >= 0)


def test_degenerate_data():
    ex = _example([np.zeros(N_FEATURES)] * 2, np.zeros(N_FEATURES), [0.0, 0.3])
    with pytest.raises(DegenerateDataError):
        learn_weights([ex])
    with pytest.raises(DomainError):
        learn_weights([])


def _separable_dataset(rng, n=30):
    """Random examples where the human beats every candidate under a hidden weight vector."""
    w_true = rng.uniform(0.5, 3.0, N_FEATURES)
    out = []
    for _ in range(n):
        ex = random_example(rng, 6)
        need = ex.distances + ex.human_features @ w_true + 1.0
        phi = ex.features.copy()
        costs = phi @ w_true
        # raise each candidate's cost past the human's plus its margin
        phi[:, 0] += np.maximum(0.0, need - costs) / w_true[0]
        out.append(TrainingExample(ex.candidates, phi, ex.human, ex.human_features))
    return out


def test_learner_reduces_loss_and_is_order_invariant():
    rng = np.random.default_rng(3)
    data = _separable_dataset(rng)
    w1, curve = learn_weights(data)
    assert curve[-1] < curve[0]
    shuffled = [data[i] for i in rng.permutation(len(data))]
    w2, curve2 = learn_weights(shuffled)
    np.testing.assert_array_equal(w1.as_array(), w2.as_array())
    np.testing.assert_array_equal(curve, curve2)


def test_estimator_wrapper():
    rng = np.random.default_rng(5)
    data = _separable_dataset(rng, 10)
    est = MaxMarginCostLearner(n_iter=50)
    with pytest.raises(NotFittedError):
        est.predict(data)
    est.fit(data)
    assert est.get_params()["n_iter"] == 50
    assert len(est.loss_curve_) == 51
    assert isinstance(est.weights_, CostWeights)
    assert est.predict(data).shape == (10,)
    assert est.score(data) == pytest.approx(-est.loss_curve_[-1])


def test_teacher_term_enters_the_objective():
    phis = [np.full(N_FEATURES, 1.0), np.full(N_FEATURES, 1.5)]
    teacher = (straight_traj(y=0.1), np.full(N_FEATURES, 1.2))
    ex = _example(phis, np.full(N_FEATURES, 0.5), [0.3, -0.5], teacher=teacher)
    plain, _ = dataset_objective([ex], ONES, LossWeights(lambda_D=0.0))
    full, _ = dataset_objective([ex], ONES)
    assert full == pytest.approx(plain + distill_plan_loss(teacher, list(zip(ex.candidates, ex.features)),
                                                          ex.human, ONES))
    assert full > plain
