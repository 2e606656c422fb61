"""
Training objectives for feedback-labeled client data.

Positive feedback trains with categorical cross entropy on the pseudo label.
Negative feedback turns the pseudo label into a complementary label, trained
through the complementary posterior Q^T f. The two are mixed with the weight
alpha = 1 - p**t. The noise-robust variants swap cross entropy for the
active-passive combination NCE + 2 RCE.

Scalar functions take one posterior and return a float. `batch_objective`
returns the mean loss of a batch together with its gradient with respect to
the posteriors; `fedfeed.models` chains that through the softmax.
"""

import json
import logging
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple, Union

import numpy as np

from fedfeed.common.const import PROB_EPS
from fedfeed.utils.schedulers import schedule_alpha

LOG = logging.getLogger("fedfeed.losses")

LOSS_KINDS = ("cce", "complementary", "scheduled", "robust", "robust_scheduled")
_NEEDS_Q = ("complementary", "scheduled", "robust_scheduled")


class UndefinedLossError(ValueError):
    """The objective has no terms to average, e.g. both feedback batches are empty"""


def _probs(posterior) -> np.ndarray:
    return np.asarray(getattr(posterior, "probs", posterior), dtype=np.float64)


def _check_label(label: int, num_classes: int):
    if not 0 <= label < num_classes:
        raise IndexError(f"label {label} out of range [0, {num_classes})")


@dataclass(frozen=True, eq=False)
class TransitionMatrix:
    """q[c, d] = P(complementary label d | true class c); zero diagonal, rows sum to 1"""

    Q: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.Q, dtype=np.float64, copy=True)
        validate_transition_matrix(matrix)
        matrix.setflags(write=False)
        object.__setattr__(self, "Q", matrix)

    @property
    def num_classes(self) -> int:
        return self.Q.shape[0]

    @classmethod
    def uniform(cls, num_classes: int) -> "TransitionMatrix":
        matrix = np.full((num_classes, num_classes), 1.0 / (num_classes - 1))
        np.fill_diagonal(matrix, 0.0)
        return cls(matrix)

    def to_json(self) -> str:
        return json.dumps(self.Q.tolist())

    @classmethod
    def from_json(cls, payload: str) -> "TransitionMatrix":
        return cls(np.array(json.loads(payload), dtype=np.float64))


def validate_transition_matrix(matrix: np.ndarray, tol: float = 1e-9):
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] < 2:
        raise ValueError(f"transition matrix must be C x C with C >= 2, got {matrix.shape}")
    if np.any(np.diag(matrix) != 0.0):
        raise ValueError("transition matrix diagonal must be exactly 0")
    if np.any(matrix < 0.0) or np.any(matrix > 1.0):
        raise ValueError("transition matrix entries must lie in [0, 1]")
    if np.any(np.abs(matrix.sum(axis=1) - 1.0) > tol):
        raise ValueError("transition matrix rows must sum to 1")


def _as_matrix(Q: Union[TransitionMatrix, np.ndarray]) -> np.ndarray:
    if isinstance(Q, TransitionMatrix):
        return Q.Q
    return np.asarray(Q, dtype=np.float64)


@dataclass(frozen=True, eq=False)
class LossSpec:
    """
    Which objective to train with.

    kind: cce | complementary | scheduled | robust | robust_scheduled
    Q: transition matrix for the kinds that see negative feedback
    p: scheduler base, alpha = 1 - p**t
    A: the constant standing in for log 0 inside reverse cross entropy
    weights: (NCE weight, RCE weight) of the robust loss
    t: scheduler step (round index, or epoch index when schedule_unit == "epoch")
    """

    kind: str = "cce"
    Q: Optional[TransitionMatrix] = None
    p: float = 0.8
    A: float = -4.0
    weights: Tuple[float, float] = (1.0, 2.0)
    t: int = 0
    schedule_unit: str = field(default="round")

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}")
        if not 0.0 < self.p < 1.0:
            raise ValueError(f"scheduler p must lie in (0, 1), got {self.p}")
        if self.A >= 0.0:
            raise ValueError(f"RCE constant A must be negative, got {self.A}")
        if self.schedule_unit not in ("round", "epoch"):
            raise ValueError(f"unknown schedule unit {self.schedule_unit!r}")
        if self.kind in _NEEDS_Q:
            if self.Q is None:
                raise ValueError(f"loss kind {self.kind!r} needs a transition matrix")
            if not isinstance(self.Q, TransitionMatrix):
                object.__setattr__(self, "Q", TransitionMatrix(self.Q))

    @property
    def alpha(self) -> float:
        if self.kind in ("scheduled", "robust_scheduled"):
            return schedule_alpha(self.p, self.t)
        return 0.0

    @property
    def uses_positive(self) -> bool:
        return self.kind != "complementary"

    @property
    def uses_negative(self) -> bool:
        return self.kind in _NEEDS_Q

    def at_step(self, t: int) -> "LossSpec":
        return replace(self, t=t)


# scalar objectives


def cce(posterior, label: int) -> float:
    probs = _probs(posterior)
    _check_label(label, len(probs))
    return float(-np.log(max(probs[label], PROB_EPS)))


def complementary_posterior(Q, f):
    """output[d] = sum_c Q[c, d] f[c]"""
    matrix = _as_matrix(Q)
    probs = _probs(f)
    return probs @ matrix


def complementary_loss(posterior, comp_label: int, Q) -> float:
    probs = _probs(posterior)
    _check_label(comp_label, len(probs))
    return cce(complementary_posterior(Q, probs), comp_label)


def nce(posterior, label: int) -> float:
    probs = _probs(posterior)
    _check_label(label, len(probs))
    neg_log = -np.log(np.maximum(probs, PROB_EPS))
    return float(neg_log[label] / neg_log.sum())


def rce(posterior, label: int, A: float = -4.0) -> float:
    if A >= 0:
        raise ValueError(f"RCE constant A must be negative, got {A}")
    probs = _probs(posterior)
    _check_label(label, len(probs))
    return float(-A * (1.0 - probs[label]))


def robust_loss(posterior, label: int, A: float = -4.0, weights=(1.0, 2.0)) -> float:
    return weights[0] * nce(posterior, label) + weights[1] * rce(posterior, label, A)


def scheduled_loss(
    pos_posteriors: Sequence,
    pos_labels: Sequence[int],
    neg_posteriors: Sequence,
    neg_labels: Sequence[int],
    Q,
    p: float,
    t: int,
) -> float:
    """(1 - alpha) * mean positive CCE + alpha * mean complementary loss"""
    if len(pos_labels) == 0 and len(neg_labels) == 0:
        raise UndefinedLossError("scheduled loss needs at least one non-empty batch")
    alpha = schedule_alpha(p, t)
    loss = 0.0
    if len(pos_labels):
        loss += (1.0 - alpha) * float(
            np.mean([cce(f, y) for f, y in zip(pos_posteriors, pos_labels)])
        )
    if len(neg_labels):
        loss += alpha * float(
            np.mean(
                [complementary_loss(f, y, Q) for f, y in zip(neg_posteriors, neg_labels)]
            )
        )
    return loss


# batched terms: (per-example values, d value / d posterior)


def _cce_terms(P: np.ndarray, y: np.ndarray):
    rows = np.arange(len(y))
    p_y = P[rows, y]
    values = -np.log(np.maximum(p_y, PROB_EPS))
    grad = np.zeros_like(P)
    grad[rows, y] = np.where(p_y > PROB_EPS, -1.0 / np.maximum(p_y, PROB_EPS), 0.0)
    return values, grad


def _nce_terms(P: np.ndarray, y: np.ndarray):
    rows = np.arange(len(y))
    clamped = np.maximum(P, PROB_EPS)
    neg_log = -np.log(clamped)
    inv = np.where(P > PROB_EPS, 1.0 / clamped, 0.0)
    numer = neg_log[rows, y]
    denom = neg_log.sum(axis=1)
    values = numer / denom
    grad = (numer / denom**2)[:, None] * inv
    grad[rows, y] -= inv[rows, y] / denom
    return values, grad


def _rce_terms(P: np.ndarray, y: np.ndarray, A: float):
    rows = np.arange(len(y))
    values = -A * (1.0 - P[rows, y])
    grad = np.zeros_like(P)
    grad[rows, y] = A
    return values, grad


def _robust_terms(P: np.ndarray, y: np.ndarray, spec: LossSpec):
    nce_values, nce_grad = _nce_terms(P, y)
    rce_values, rce_grad = _rce_terms(P, y, spec.A)
    w_nce, w_rce = spec.weights
    return w_nce * nce_values + w_rce * rce_values, w_nce * nce_grad + w_rce * rce_grad


def _complementary_terms(P: np.ndarray, y: np.ndarray, spec: LossSpec, robust: bool):
    matrix = spec.Q.Q
    R = P @ matrix
    values, grad_r = _robust_terms(R, y, spec) if robust else _cce_terms(R, y)
    return values, grad_r @ matrix.T


def batch_objective(
    P: np.ndarray, labels: np.ndarray, negative: np.ndarray, spec: LossSpec
) -> Tuple[float, np.ndarray]:
    """
    Mean loss of a batch and its gradient with respect to the posteriors `P`.

    `negative[i]` marks example i as negative feedback, in which case `labels[i]`
    is its complementary label. Positive and negative terms are averaged
    separately and mixed with the scheduler weight; an empty side contributes 0
    while the other side keeps its weight.
    """
    P = np.asarray(P, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    negative = np.asarray(negative, dtype=bool)
    if len(labels) and (labels.min() < 0 or labels.max() >= P.shape[1]):
        raise IndexError(f"labels must lie in [0, {P.shape[1]})")

    pos_idx = np.flatnonzero(~negative)
    neg_idx = np.flatnonzero(negative)
    if len(neg_idx) and not spec.uses_negative:
        raise ValueError(f"loss kind {spec.kind!r} cannot train on negative feedback")
    if len(pos_idx) and not spec.uses_positive:
        raise ValueError(f"loss kind {spec.kind!r} cannot train on positive feedback")
    if len(pos_idx) == 0 and len(neg_idx) == 0:
        raise UndefinedLossError("batch has neither positive nor negative examples")

    robust = spec.kind in ("robust", "robust_scheduled")
    if spec.kind in ("scheduled", "robust_scheduled"):
        alpha = spec.alpha
        pos_weight, neg_weight = 1.0 - alpha, alpha
    else:
        pos_weight, neg_weight = 1.0, 1.0

    loss = 0.0
    grad = np.zeros_like(P)
    if len(pos_idx):
        P_pos, y_pos = P[pos_idx], labels[pos_idx]
        values, term_grad = _robust_terms(P_pos, y_pos, spec) if robust else _cce_terms(P_pos, y_pos)
        loss += pos_weight * values.mean()
        grad[pos_idx] = term_grad * (pos_weight / len(pos_idx))
    if len(neg_idx):
        values, term_grad = _complementary_terms(P[neg_idx], labels[neg_idx], spec, robust)
        loss += neg_weight * values.mean()
        grad[neg_idx] = term_grad * (neg_weight / len(neg_idx))
    return float(loss), grad


def split_means(
    P: np.ndarray, labels: np.ndarray, negative: np.ndarray, spec: LossSpec
) -> Tuple[Optional[float], Optional[float], Optional[float]]:
    """Unweighted (pos mean, neg mean) and the weighted total, None for empty parts"""
    negative = np.asarray(negative, dtype=bool)
    robust = spec.kind in ("robust", "robust_scheduled")
    loss_pos = loss_neg = None
    if (~negative).any():
        P_pos, y_pos = P[~negative], np.asarray(labels)[~negative]
        values, _ = _robust_terms(P_pos, y_pos, spec) if robust else _cce_terms(P_pos, y_pos)
        loss_pos = float(values.mean())
    if negative.any() and spec.uses_negative:
        values, _ = _complementary_terms(P[negative], np.asarray(labels)[negative], spec, robust)
        loss_neg = float(values.mean())
    if loss_pos is None and loss_neg is None:
        return None, None, None
    total, _ = batch_objective(P, labels, negative, spec)
    return loss_pos, loss_neg, total


def estimate_Q(seed_model, D_v) -> TransitionMatrix:
    """
    Row c averages, over validation examples of gold class c that the seed model
    gets wrong, the seed posterior with entry c zeroed and renormalised. Rows
    without such examples fall back to the uniform off-diagonal distribution.
    """
    from fedfeed.models import predict_proba

    num_classes = D_v.num_classes
    matrix = TransitionMatrix.uniform(num_classes).Q.copy()
    if len(D_v) == 0:
        return TransitionMatrix(matrix)

    P = predict_proba(seed_model, D_v.features)
    predicted = np.argmax(P, axis=1)
    for cls in range(num_classes):
        wrong = (D_v.labels == cls) & (predicted != cls)
        if not wrong.any():
            LOG.debug(f"no validation errors for class {cls}; uniform transition row")
            continue
        rows = P[wrong].copy()
        rows[:, cls] = 0.0
        rows /= rows.sum(axis=1, keepdims=True)
        row = rows.mean(axis=0)
        row[cls] = 0.0
        matrix[cls] = row / row.sum()
    return TransitionMatrix(matrix)
