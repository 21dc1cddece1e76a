"""Split and transductive conformal prediction over finite label spaces.

A conformity score ranks how unusual a (feature, label) pair looks relative
to calibration data; rank-based p-values turn those ranks into prediction
sets that carry a distribution-free marginal coverage guarantee under
exchangeability.

All types here are immutable after construction and all operations are pure
functions of their inputs, so everything is safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

from .errors import EmptyCalibration, InvalidAlpha

# Batch scoring contract: score_fn(X, y) with X of shape (n, d) and y of
# shape (n,) returns (n,) scores. Higher score = less conforming.
ScoreFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class LabelSpace:
    """Ordered, finite set of at least two distinct class identifiers."""

    labels: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "labels", tuple(self.labels))
        if len(self.labels) < 2:
            raise ValueError(f"label space needs at least 2 labels, got {len(self.labels)}")
        if len(set(self.labels)) != len(self.labels):
            raise ValueError("label identifiers must be distinct")

    @classmethod
    def of_size(cls, n_classes: int) -> "LabelSpace":
        """Label space 0..n_classes-1."""
        return cls(tuple(range(n_classes)))

    @property
    def size(self) -> int:
        return len(self.labels)

    def __iter__(self) -> Iterator[int]:
        return iter(self.labels)


@dataclass(frozen=True)
class ConformityScorer:
    """A conformity score function tagged with the scale it belongs to.

    Parameters
    ----------
    scale_id : int
        Scale index, 1-based.
    score_fn : callable
        Vectorized map ``(X, y) -> scores`` where ``X`` has shape (n, d)
        and ``y`` shape (n,). Must be deterministic and total on valid
        inputs; NaN outputs are rejected downstream because they break
        the score ordering.
    """

    scale_id: int
    score_fn: ScoreFn

    def __call__(self, features: np.ndarray, labels: np.ndarray) -> np.ndarray:
        return self.score_fn(features, labels)


@dataclass(frozen=True)
class CalibrationScores:
    """Sorted conformity scores from a held-out calibration split.

    The sorted array is the empirical reference distribution for p-values;
    it is stored read-only and queried by binary search.
    """

    scale_id: int
    scores: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        scores = np.asarray(self.scores, dtype=float)
        if scores.ndim != 1 or scores.size == 0:
            raise EmptyCalibration("calibration scores must be a non-empty 1-D array")
        if np.isnan(scores).any():
            raise ValueError("NaN conformity score in calibration data")
        scores = np.sort(scores)
        scores.setflags(write=False)
        object.__setattr__(self, "scores", scores)

    @property
    def n(self) -> int:
        return int(self.scores.size)


@dataclass(frozen=True)
class PredictionSet:
    """A finite subset of the label space for one test point and one method.

    Empty sets are legal outcomes (possible at large alpha) and count as
    miscoverage in all metrics.
    """

    method_id: str
    members: tuple[int, ...]
    alpha_used: float
    label_space: LabelSpace

    def __post_init__(self) -> None:
        order = {lab: i for i, lab in enumerate(self.label_space.labels)}
        members = tuple(self.members)
        if len(set(members)) != len(members):
            raise ValueError("prediction set members must be distinct")
        unknown = [m for m in members if m not in order]
        if unknown:
            raise ValueError(f"members {unknown} not in the label space")
        members = tuple(sorted(members, key=order.__getitem__))
        object.__setattr__(self, "members", members)

    def __contains__(self, label: int) -> bool:
        return label in self.members

    def __len__(self) -> int:
        return len(self.members)


def score_calibration(
    scorer: ConformityScorer,
    features: np.ndarray,
    labels: np.ndarray,
) -> CalibrationScores:
    """Score every calibration pair and return the sorted score collection.

    Parameters
    ----------
    scorer : ConformityScorer
    features : array of shape (n, d) or (n,)
        Calibration feature rows. A 1-D input is treated as n points with
        a single feature.
    labels : array of shape (n,)
        True labels of the calibration rows.

    Raises
    ------
    EmptyCalibration
        If there are no calibration pairs.
    ValueError
        If the scorer emits NaN.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    y = np.asarray(labels)
    if X.shape[0] == 0:
        raise EmptyCalibration("calibration data is empty")
    if X.shape[0] != y.shape[0]:
        raise ValueError(f"{X.shape[0]} feature rows vs {y.shape[0]} labels")
    raw = np.asarray(scorer(X, y), dtype=float).reshape(-1)
    return CalibrationScores(scale_id=scorer.scale_id, scores=raw)


def conformal_pvalue(
    calib: CalibrationScores,
    candidate_score: float | np.ndarray,
    *,
    smoothed: bool = False,
    rng: np.random.Generator | None = None,
) -> float | np.ndarray:
    """Rank-based conformal p-value of a candidate score.

    Deterministic mode returns ``(#{A_i >= s} + 1) / (n + 1)``; ties count
    toward inclusion. With ``smoothed=True`` ties are broken by a uniform
    draw, ``(#{A_i > s} + U (#{A_i = s} + 1)) / (n + 1)``, which requires
    an explicit ``rng``.

    Accepts a scalar or an array of candidate scores and returns a matching
    scalar or array.
    """
    s = np.asarray(candidate_score, dtype=float)
    if np.isnan(s).any():
        raise ValueError("NaN candidate conformity score")
    n = calib.n
    if smoothed:
        if rng is None:
            raise ValueError("smoothed p-values need an explicit rng")
        gt = n - np.searchsorted(calib.scores, s, side="right")
        ge = n - np.searchsorted(calib.scores, s, side="left")
        u = rng.uniform(size=s.shape)
        p = (gt + u * (ge - gt + 1)) / (n + 1)
    else:
        ge = n - np.searchsorted(calib.scores, s, side="left")
        p = (ge + 1) / (n + 1)
    if s.ndim == 0:
        return float(p)
    return p


def pvalue_matrix(
    scorer: ConformityScorer,
    calib: CalibrationScores,
    features: np.ndarray,
    labels: LabelSpace,
    *,
    smoothed: bool = False,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """P-values for every (test point, candidate label) pair.

    Returns an array of shape (n_points, n_labels) aligned with
    ``labels.labels``. This is the batch workhorse behind
    :func:`prediction_set` and the experiment harness.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n = X.shape[0]
    out = np.empty((n, labels.size), dtype=float)
    for j, lab in enumerate(labels.labels):
        scores = np.asarray(scorer(X, np.full(n, lab)), dtype=float).reshape(-1)
        out[:, j] = conformal_pvalue(calib, scores, smoothed=smoothed, rng=rng)
    return out


def prediction_set(
    scorer: ConformityScorer,
    calib: CalibrationScores,
    x: np.ndarray,
    labels: LabelSpace,
    alpha_k: float,
    *,
    smoothed: bool = False,
    rng: np.random.Generator | None = None,
) -> PredictionSet:
    """Single-scale conformal prediction set at miscoverage ``alpha_k``.

    Keeps every label whose conformal p-value exceeds ``alpha_k``.

    Raises
    ------
    InvalidAlpha
        If ``alpha_k`` is outside the open interval (0, 1).
    ValueError
        If the scorer and calibration scores carry different scale ids.
    """
    check_alpha(alpha_k)
    if scorer.scale_id != calib.scale_id:
        raise ValueError(
            f"scorer is scale {scorer.scale_id} but calibration is scale {calib.scale_id}"
        )
    x2 = np.asarray(x, dtype=float).reshape(1, -1)
    p = pvalue_matrix(scorer, calib, x2, labels, smoothed=smoothed, rng=rng)[0]
    members = tuple(lab for lab, pv in zip(labels.labels, p) if pv > alpha_k)
    return PredictionSet(
        method_id=f"scale_{scorer.scale_id}",
        members=members,
        alpha_used=float(alpha_k),
        label_space=labels,
    )


def transductive_pvalue(
    scorer: ConformityScorer,
    features: np.ndarray,
    labels: np.ndarray,
    x_new: np.ndarray,
    y_candidate: int,
) -> float:
    """Full-conformal p-value: scores recomputed over the whole training set.

    Provided for small-n parity with the split construction; since scorers
    here are fixed functions (never refit on the augmented sample), this
    agrees with :func:`conformal_pvalue` applied to freshly scored training
    data.
    """
    X = np.asarray(features, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise EmptyCalibration("training data is empty")
    calib = score_calibration(scorer, X, np.asarray(labels))
    x2 = np.asarray(x_new, dtype=float).reshape(1, -1)
    cand = np.asarray(scorer(x2, np.full(1, y_candidate)), dtype=float).reshape(-1)[0]
    return float(conformal_pvalue(calib, cand))


def check_alpha(alpha: float) -> None:
    """Reject miscoverage levels outside the open interval (0, 1)."""
    try:
        a = float(alpha)
    except (TypeError, ValueError):
        raise InvalidAlpha(f"alpha must be a real number in (0, 1), got {alpha!r}") from None
    if not (np.isfinite(a) and 0.0 < a < 1.0):
        raise InvalidAlpha(f"alpha must lie in (0, 1), got {alpha!r}")
