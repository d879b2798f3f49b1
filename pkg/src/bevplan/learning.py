"""Losses for map forecasting, max-margin planning and teacher-student distillation.

Cost weights are learned by projected subgradient descent on the
structured hinge

    L_P = max_T [ f(T_human) - f(T) + l1(T_human, T) ]_+

over the sampled candidate set.  Since ``f = w . phi`` the subgradient is
``phi(T_human) - phi(T*)`` for the maximizing candidate ``T*``.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import ConfigurationError, DegenerateDataError, DomainError
from .planner import CostWeights, N_FEATURES, argmin_cost, total_cost
from .trajectory import l1_distance
from .validation import as_float_array, check_nonnegative

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    lambda_M: float = 1.0
    lambda_P: float = 1.0
    lambda_D: float = 1.0
    lambda_DM: float = 1.0
    lambda_DP: float = 1.0
    lambda_DF: float = 1.0

    def __post_init__(self):
        check_nonnegative(list(vars(self).values()), name="loss weights")


@dataclass(frozen=True)
class LearnerConfig:
    learning_rate: float = 0.01
    iterations: int = 200
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate > 0 or self.iterations <= 0:
            raise ConfigurationError("learning rate and iteration count must be positive")


@dataclass(frozen=True, eq=False)
class TrainingExample:
    """One planning scene: candidates and the human trajectory, all featurized on the same maps.

    ``teacher`` optionally holds ``(trajectory, features)`` for the teacher
    planner's choice, featurized on this (student) example's maps; it enables
    the plan-distillation term.
    """

    candidates: list            # list of Trajectory
    features: np.ndarray        # (n, N_FEATURES)
    human: object               # Trajectory
    human_features: np.ndarray  # (N_FEATURES,)
    scenario_id: str = ""
    teacher: tuple = None
    distances: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        phi = as_float_array(self.features, ndim=2, name="candidate features")
        if len(phi) == 0 or len(phi) != len(self.candidates):
            raise DomainError("need one feature row per candidate and at least one candidate")
        if phi.shape[1] != N_FEATURES:
            raise DomainError(f"features must have {N_FEATURES} columns")
        object.__setattr__(self, "features", phi)
        object.__setattr__(self, "human_features", as_float_array(self.human_features, ndim=1))
        if self.distances is None:
            d = np.array([l1_distance(self.human, t) for t in self.candidates])
            object.__setattr__(self, "distances", d)


def _weights(w):
    return w.as_array() if isinstance(w, CostWeights) else np.asarray(w, dtype=np.float64)


# -- map losses ------------------------------------------------------------------

def _values(x):
    return np.asarray(getattr(x, "values", x), dtype=np.float64)


def semantic_map_loss(gt, pred, eps=EPS):
    """Per-class binary cross-entropy summed over frames, classes and cells."""
    y, p = _values(gt), _values(pred)
    if y.shape != p.shape:
        raise DomainError(f"shape mismatch: {y.shape} vs {p.shape}")
    p = np.clip(p, eps, 1 - eps)
    return float(-np.sum(y * np.log(p) + (1 - y) * np.log1p(-p)))


def distill_map_loss(teacher, student, eps=EPS):
    """Soft-label cross-entropy of the student's maps against the teacher's."""
    return semantic_map_loss(teacher, student, eps)


def distill_feature_loss(teacher_fb, student_fb):
    t, s = _values(teacher_fb), _values(student_fb)
    if t.shape != s.shape:
        raise DomainError(f"shape mismatch: {t.shape} vs {s.shape}")
    return float(np.sum(np.abs(t - s)))


# -- planning losses -------------------------------------------------------------

def _brackets(example, w, target_features=None, distances=None):
    w = _weights(w)
    ref = example.human_features if target_features is None else target_features
    d = example.distances if distances is None else distances
    return (ref @ w) - total_cost(example.features, w) + d


def planning_loss(example, w):
    """Max-margin planning loss and the index of the maximizing candidate."""
    b = _brackets(example, w)
    k = int(np.argmax(b))
    return max(0.0, float(b[k])), k


def planning_loss_subgradient(example, w):
    loss, k = planning_loss(example, w)
    if loss <= 0:
        return np.zeros(N_FEATURES)
    return example.human_features - example.features[k]


def _teacher_terms(example, w):
    """Distances from the teacher's choice and the gate deciding whether distillation applies."""
    teacher_traj, teacher_phi = example.teacher
    w = _weights(w)
    s_best = argmin_cost(total_cost(example.features, w))
    d_student = example.distances[s_best]
    d_teacher = l1_distance(example.human, teacher_traj)
    active = d_student > d_teacher
    to_teacher = np.array([l1_distance(teacher_traj, t) for t in example.candidates])
    return active, np.asarray(teacher_phi, dtype=np.float64), to_teacher


def distill_plan_loss(teacher_best, student_candidates, human, w):
    """Plan distillation: the planning loss toward the teacher's choice, gated on the student being worse.

    Parameters
    ----------
    teacher_best : (Trajectory, features)
        Teacher's selected trajectory with features evaluated on the student's maps.
    student_candidates : list of (Trajectory, features)
    human : Trajectory
    w : CostWeights or array
    """
    trajs = [t for t, _ in student_candidates]
    phi = np.array([f for _, f in student_candidates], dtype=np.float64)
    w = _weights(w)
    s_best = argmin_cost(total_cost(phi, w))
    if not l1_distance(human, trajs[s_best]) > l1_distance(human, teacher_best[0]):
        return 0.0
    d = np.array([l1_distance(teacher_best[0], t) for t in trajs])
    b = np.asarray(teacher_best[1], dtype=np.float64) @ w - phi @ w + d
    return max(0.0, float(b.max()))


def distill_plan_subgradient(example, w):
    if example.teacher is None:
        return np.zeros(N_FEATURES)
    active, teacher_phi, to_teacher = _teacher_terms(example, w)
    if not active:
        return np.zeros(N_FEATURES)
    b = _brackets(example, w, teacher_phi, to_teacher)
    k = int(np.argmax(b))
    if b[k] <= 0:
        return np.zeros(N_FEATURES)
    return teacher_phi - example.features[k]


def distill_loss(l_dm, l_dp, l_df, lw=None):
    lw = lw or LossWeights()
    return lw.lambda_DM * l_dm + lw.lambda_DP * l_dp + lw.lambda_DF * l_df


def composite_losses(parts, lw=None):
    """Teacher and student training losses from their component values.

    ``parts`` maps ``M_T, P_T, M_S, P_S`` and optionally ``DM, DP, DF`` to
    non-negative numbers.
    """
    lw = lw or LossWeights()
    check_nonnegative(list(parts.values()), name="loss components")
    teacher = lw.lambda_M * parts["M_T"] + lw.lambda_P * parts["P_T"]
    l_d = distill_loss(parts.get("DM", 0.0), parts.get("DP", 0.0), parts.get("DF", 0.0), lw)
    student = lw.lambda_M * parts["M_S"] + lw.lambda_P * parts["P_S"] + lw.lambda_D * l_d
    return teacher, student


# -- weight learning -------------------------------------------------------------

def dataset_objective(dataset, w, lw=None):
    """Mean planning loss (plus weighted plan distillation) and its subgradient.

    Sums use ``math.fsum`` so the result does not depend on example order.
    """
    lw = lw or LossWeights()
    losses, grads = [], []
    for ex in dataset:
        loss, _ = planning_loss(ex, w)
        g = lw.lambda_P * planning_loss_subgradient(ex, w)
        total = lw.lambda_P * loss
        if ex.teacher is not None and lw.lambda_D * lw.lambda_DP > 0:
            scale = lw.lambda_D * lw.lambda_DP
            total += scale * distill_plan_loss(
                ex.teacher, list(zip(ex.candidates, ex.features)), ex.human, w)
            g = g + scale * distill_plan_subgradient(ex, w)
        losses.append(total)
        grads.append(g)
    n = len(dataset)
    mean_grad = np.array([math.fsum(col) for col in zip(*grads)]) / n
    return math.fsum(losses) / n, mean_grad


def learn_weights(dataset, cfg=None, init=None, loss_weights=None):
    """Projected full-batch subgradient descent on the dataset objective.

    Returns the learned :class:`CostWeights` and the loss curve (mean loss
    before each update, plus the final value).
    """
    dataset = list(dataset)
    cfg = cfg or LearnerConfig()
    if not dataset:
        raise DomainError("empty dataset")
    if all(not np.any(ex.features) and not np.any(ex.human_features) for ex in dataset):
        raise DegenerateDataError("all candidate and human features are zero")
    w = np.ones(N_FEATURES) if init is None else _weights(init).copy()
    curve = []
    for _ in range(cfg.iterations):
        loss, g = dataset_objective(dataset, w, loss_weights)
        curve.append(loss)
        w = np.maximum(0.0, w - cfg.learning_rate * g)
    curve.append(dataset_objective(dataset, w, loss_weights)[0])
    return CostWeights.from_array(w), np.array(curve)


class MaxMarginCostLearner(BaseEstimator):
    """Estimator wrapper around :func:`learn_weights`.

    Parameters
    ----------
    learning_rate : float, default=0.01
    n_iter : int, default=200
    init_weights : CostWeights, default=None
        Starting point; all-ones when ``None``.
    loss_weights : LossWeights, default=None
        Only ``lambda_P`` and ``lambda_D * lambda_DP`` affect the weights.
    random_state : int, default=0
        Recorded for provenance; full-batch descent is deterministic.

    Attributes
    ----------
    weights_ : CostWeights
    loss_curve_ : ndarray of shape (n_iter + 1,)
    """

    def __init__(self, learning_rate=0.01, n_iter=200, init_weights=None, loss_weights=None,
                 random_state=0):
        self.learning_rate = learning_rate
        self.n_iter = n_iter
        self.init_weights = init_weights
        self.loss_weights = loss_weights
        self.random_state = random_state

    def fit(self, X, y=None):
        cfg = LearnerConfig(self.learning_rate, self.n_iter, self.random_state)
        self.weights_, self.loss_curve_ = learn_weights(X, cfg, self.init_weights, self.loss_weights)
        self.n_iter_ = self.n_iter
        return self

    def _check_fitted(self):
        if not hasattr(self, "weights_"):
            from sklearn.exceptions import NotFittedError
            raise NotFittedError("call fit before predict")

    def predict(self, X):
        """Index of the selected candidate for each example."""
        self._check_fitted()
        return np.array([argmin_cost(total_cost(ex.features, self.weights_)) for ex in X])

    def score(self, X, y=None):
        """Negative mean planning loss (higher is better)."""
        self._check_fitted()
        return -dataset_objective(list(X), self.weights_, self.loss_weights)[0]
