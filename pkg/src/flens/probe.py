"""Linear probes: logistic-regression classifiers on frozen embeddings.

A probe measures how much attribute information a representation retains,
so fitting must be reproducible: deterministic full-batch gradient descent
from zero initialization with an Armijo backtracking line search. No
stochasticity anywhere.

Multiclass probes use reference coding: one weight vector per class with
the last class pinned at zero logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BinaryLabels, EmbeddingMatrix, GroupLabels
from .errors import DegenerateLabels, LineSearchError, ShapeError, ValidationError

DEFAULT_L2 = 1e-4
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 1000

_ARMIJO_C1 = 1e-4
_BACKTRACK = 0.5
_MAX_BACKTRACKS = 60


@dataclass(frozen=True, eq=False)
class ProbeModel:
    """Fitted probe: (classes-1) x d weights, per-class bias, final data loss."""

    weights: np.ndarray
    bias: np.ndarray
    classes: int
    training_loss: float

    def __post_init__(self) -> None:
        w = np.asarray(self.weights, dtype=np.float64)
        b = np.asarray(self.bias, dtype=np.float64)
        if self.classes < 2:
            raise ValidationError("probe needs at least two classes")
        if w.ndim != 2 or w.shape[0] != self.classes - 1:
            raise ShapeError("weights must be (classes-1) x d")
        if b.shape != (self.classes - 1,):
            raise ShapeError("bias must have classes-1 entries")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
            raise ValidationError("probe parameters must be finite")
        w.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "bias", b)

    @property
    def dims(self) -> int:
        return int(self.weights.shape[1])

    def predict(self, embeddings: EmbeddingMatrix) -> np.ndarray:
        """Argmax class index per row; ties go to the lowest class index."""
        if embeddings.dims != self.dims:
            raise ShapeError(f"probe expects d={self.dims}, got d={embeddings.dims}")
        logits = _full_logits(embeddings.values, self.weights, self.bias)
        return np.argmax(logits, axis=1)


def _class_indices(labels: GroupLabels | BinaryLabels) -> tuple[np.ndarray, int]:
    """Map labels onto class indices 0..c-1; binary -1/+1 become 0/1."""
    if isinstance(labels, BinaryLabels):
        return ((labels.labels + 1) // 2).astype(np.int64), 2
    if isinstance(labels, GroupLabels):
        return labels.labels, labels.group_count
    raise ShapeError("labels must be GroupLabels or BinaryLabels")


def _full_logits(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """n x classes logit matrix with the reference class's zero column appended."""
    free = x @ w.T + b
    return np.hstack([free, np.zeros((x.shape[0], 1))])


def loss_and_gradient(
    w: np.ndarray,
    b: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    classes: int,
    l2: float,
) -> tuple[float, float, np.ndarray, np.ndarray]:
    """Objective value, data term, and gradients for the probe.

    Objective: mean cross-entropy plus 0.5 * l2 * sum(w**2). The bias is
    not penalized. Returns (objective, mean cross-entropy, grad_w, grad_b).
    """
    n = x.shape[0]
    logits = _full_logits(x, w, b)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.sum(np.exp(shifted), axis=1))
    log_probs = shifted - log_norm[:, None]
    data_loss = float(-np.mean(log_probs[np.arange(n), y]))
    objective = data_loss + 0.5 * l2 * float(np.sum(w * w))
    residual = np.exp(log_probs)
    residual[np.arange(n), y] -= 1.0
    free = residual[:, : classes - 1]
    grad_w = free.T @ x / n + l2 * w
    grad_b = free.sum(axis=0) / n
    return objective, data_loss, grad_w, grad_b


def fit_probe(
    train: EmbeddingMatrix,
    labels: GroupLabels | BinaryLabels,
    l2: float = DEFAULT_L2,
    max_iter: int = DEFAULT_MAX_ITER,
    tol: float = DEFAULT_TOL,
) -> ProbeModel:
    """Fit by full-batch gradient descent with backtracking line search.

    Starts from zero parameters and stops when the gradient max-norm drops
    below tol or max_iter steps were taken, whichever comes first.
    """
    y, classes = _class_indices(labels)
    if y.size != train.rows:
        raise ShapeError("labels length differs from embedding rows")
    if np.unique(y).size < 2:
        raise DegenerateLabels("training labels contain fewer than two classes")
    if l2 < 0.0:
        raise ValidationError("l2 penalty must be nonnegative")
    x = train.values
    w = np.zeros((classes - 1, train.dims))
    b = np.zeros(classes - 1)
    value, data_loss, grad_w, grad_b = loss_and_gradient(w, b, x, y, classes, l2)
    for _ in range(max_iter):
        grad_norm = max(
            float(np.max(np.abs(grad_w))) if grad_w.size else 0.0,
            float(np.max(np.abs(grad_b))) if grad_b.size else 0.0,
        )
        if grad_norm < tol:
            break
        sq_norm = float(np.sum(grad_w**2) + np.sum(grad_b**2))
        step = 1.0
        for _ in range(_MAX_BACKTRACKS):
            w_new = w - step * grad_w
            b_new = b - step * grad_b
            trial = loss_and_gradient(w_new, b_new, x, y, classes, l2)
            if trial[0] <= value - _ARMIJO_C1 * step * sq_norm:
                break
            step *= _BACKTRACK
        else:
            raise LineSearchError("no descent step found; gradient may be inconsistent")
        w, b = w_new, b_new
        value, data_loss, grad_w, grad_b = trial
    return ProbeModel(weights=w, bias=b, classes=classes, training_loss=data_loss)


def evaluate_probe(
    model: ProbeModel, test: EmbeddingMatrix, labels: GroupLabels | BinaryLabels
) -> float:
    """Argmax-class accuracy of the probe on held-out data."""
    y, classes = _class_indices(labels)
    if classes != model.classes:
        raise ShapeError(f"model has {model.classes} classes, labels imply {classes}")
    if y.size != test.rows:
        raise ShapeError("labels length differs from embedding rows")
    predictions = model.predict(test)
    return float(np.count_nonzero(predictions == y) / y.size)
