"""Per-scale predictive models backing the conformity scorers.

Each scale trains its own multinomial logistic regression on the feature
subset it is allowed to see, by full-batch gradient descent on the softmax
cross-entropy with an L2 penalty. The scorer derived from a model is
``1 - predicted probability of the candidate class``; the oracle scorer,
used by the asymptotic study, is the negated true conditional probability
computed from the generative parameters.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conformal import ConformityScorer
from .errors import EmptyTraining, ShapeError
from .synth import SynthConfig, oracle_conditional


@dataclass(frozen=True)
class TrainConfig:
    """Gradient-descent hyperparameters. Defaults suit standardized features."""

    learning_rate: float = 0.1
    epochs: int = 2000
    l2: float = 1e-4
    seed: int = 0


@dataclass(frozen=True)
class LogisticModel:
    """Trained softmax classifier restricted to a feature subset.

    ``feature_mean``/``feature_scale`` are the training-split statistics
    used to standardize inputs, applied identically at prediction time.
    ``loss_history`` holds the penalized loss at the start of every epoch
    plus the final value.
    """

    weights: np.ndarray = field(repr=False)
    bias: np.ndarray = field(repr=False)
    feature_indices: tuple[int, ...]
    feature_mean: np.ndarray = field(repr=False)
    feature_scale: np.ndarray = field(repr=False)
    n_features_in: int
    loss_history: tuple[float, ...] = field(repr=False, default=())

    def __post_init__(self) -> None:
        for name in ("weights", "bias", "feature_mean", "feature_scale"):
            arr = np.asarray(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_classes(self) -> int:
        return int(self.weights.shape[0])


def softmax(scores: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by subtracting the row max."""
    shifted = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def ce_loss_and_grad(
    weights: np.ndarray,
    bias: np.ndarray,
    features: np.ndarray,
    labels_onehot: np.ndarray,
    l2: float,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Penalized mean cross-entropy and its analytic gradient.

    The L2 penalty applies to the weights only, not the bias.
    """
    n = features.shape[0]
    probs = softmax(features @ weights.T + bias)
    loss = -np.sum(labels_onehot * np.log(probs)) / n
    loss += 0.5 * l2 * float(np.sum(weights**2))
    delta = (probs - labels_onehot) / n
    grad_w = delta.T @ features + l2 * weights
    grad_b = delta.sum(axis=0)
    return float(loss), grad_w, grad_b


def train_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    feature_indices: Sequence[int],
    config: TrainConfig = TrainConfig(),
) -> LogisticModel:
    """Fit a softmax classifier on a feature subset by full-batch descent.

    Weights start at zero, so zero epochs yields the uniform predictor.
    Training is deterministic: same data and config give bit-identical
    weights. A class absent from the training labels triggers a warning
    (its probabilities may degenerate) but training proceeds.

    Raises
    ------
    EmptyTraining
        If there are no training rows.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels, dtype=int)
    if X.shape[0] == 0:
        raise EmptyTraining("training data is empty")
    if X.shape[0] != y.shape[0]:
        raise ShapeError(f"{X.shape[0]} feature rows vs {y.shape[0]} labels")
    idx = tuple(int(i) for i in feature_indices)
    if any(i < 0 or i >= X.shape[1] for i in idx):
        raise ShapeError(f"feature_indices {idx} out of range for {X.shape[1]} columns")
    missing = sorted(set(range(n_classes)) - set(y.tolist()))
    if missing:
        warnings.warn(
            f"classes {missing} absent from training data; their probabilities "
            "may degenerate",
            stacklevel=2,
        )

    sub = X[:, idx]
    mean = sub.mean(axis=0)
    scale = sub.std(axis=0)
    scale = np.where(scale > 0.0, scale, 1.0)
    Xs = (sub - mean) / scale
    onehot = np.zeros((X.shape[0], n_classes))
    onehot[np.arange(X.shape[0]), y] = 1.0

    W = np.zeros((n_classes, len(idx)))
    b = np.zeros(n_classes)
    losses = []
    for _ in range(config.epochs):
        loss, gw, gb = ce_loss_and_grad(W, b, Xs, onehot, config.l2)
        losses.append(loss)
        W = W - config.learning_rate * gw
        b = b - config.learning_rate * gb
    final_loss, _, _ = ce_loss_and_grad(W, b, Xs, onehot, config.l2)
    losses.append(final_loss)
    return LogisticModel(
        weights=W,
        bias=b,
        feature_indices=idx,
        feature_mean=mean,
        feature_scale=scale,
        n_features_in=int(X.shape[1]),
        loss_history=tuple(losses),
    )


def predict_proba(model: LogisticModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities for one feature vector or a batch of rows."""
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != model.n_features_in:
        raise ShapeError(
            f"input has {X.shape[1]} features, model expects {model.n_features_in}"
        )
    Xs = (X[:, model.feature_indices] - model.feature_mean) / model.feature_scale
    probs = softmax(Xs @ model.weights.T + model.bias)
    return probs[0] if single else probs


def logistic_scorer(model: LogisticModel, scale_id: int = 1) -> ConformityScorer:
    """Conformity score ``1 - predicted probability of the candidate class``."""

    def score_fn(X: np.ndarray, y: np.ndarray) -> np.ndarray:
        probs = predict_proba(model, np.atleast_2d(np.asarray(X, dtype=float)))
        y_idx = np.asarray(y, dtype=int)
        return 1.0 - probs[np.arange(probs.shape[0]), y_idx]

    return ConformityScorer(scale_id=scale_id, score_fn=score_fn)


@dataclass(frozen=True)
class OracleModel:
    """Generative parameters sufficient to evaluate the true conditional."""

    config: SynthConfig

    def conditional(self, x: np.ndarray) -> np.ndarray:
        return oracle_conditional(self.config, x)


def oracle_scorer(oracle: OracleModel, scale_id: int = 1) -> ConformityScorer:
    """Conformity score ``-P(candidate class | features)`` from the true model."""

    def score_fn(X: np.ndarray, y: np.ndarray) -> np.ndarray:
        probs = oracle_conditional(oracle.config, np.atleast_2d(np.asarray(X, dtype=float)))
        y_idx = np.asarray(y, dtype=int)
        return -probs[np.arange(probs.shape[0]), y_idx]

    return ConformityScorer(scale_id=scale_id, score_fn=score_fn)
