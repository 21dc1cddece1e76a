"""Combining per-scale prediction sets and splitting the miscoverage budget.

The multi-scale set is the intersection of the per-scale sets, so it is a
subset of each of them and never larger than the smallest. The budget
split across scales can be uniform or chosen to minimize the product of
expected per-scale set sizes, which reduces to equalizing the elasticity
d/da ln f_k(a) across scales subject to the budget constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .conformal import (
    CalibrationScores,
    ConformityScorer,
    LabelSpace,
    PredictionSet,
    check_alpha,
    prediction_set,
    pvalue_matrix,
)
from .errors import (
    EmptyEvaluation,
    IncompatibleSets,
    InfeasibleAllocation,
    InvalidAlpha,
)

_SUM_TOL = 1e-12


@dataclass(frozen=True)
class AllocationPlan:
    """Per-scale miscoverage levels that sum to the total budget."""

    alphas: tuple[float, ...]
    total: float

    def __post_init__(self) -> None:
        alphas = tuple(float(a) for a in self.alphas)
        object.__setattr__(self, "alphas", alphas)
        if not alphas:
            raise InvalidAlpha("allocation plan needs at least one scale")
        for a in alphas:
            check_alpha(a)
        if abs(sum(alphas) - self.total) > _SUM_TOL:
            raise InvalidAlpha(
                f"per-scale alphas sum to {sum(alphas)!r}, expected {self.total!r}"
            )

    @property
    def n_scales(self) -> int:
        return len(self.alphas)


@dataclass(frozen=True)
class SizeCurve:
    """Empirical mean prediction-set size as a function of alpha.

    ``sizes`` is non-increasing along ``grid`` (enforced by isotonic
    projection after estimation) and bounded by the label-space size.
    """

    scale_id: int
    grid: np.ndarray = field(repr=False)
    sizes: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=float)
        sizes = np.asarray(self.sizes, dtype=float)
        if grid.ndim != 1 or grid.size == 0 or grid.shape != sizes.shape:
            raise InvalidAlpha("size curve needs matching 1-D grid and sizes")
        if np.any(grid <= 0.0) or np.any(grid >= 1.0):
            raise InvalidAlpha("size-curve grid must lie inside (0, 1)")
        if grid.size > 1 and np.any(np.diff(grid) <= 0.0):
            raise InvalidAlpha("size-curve grid must be strictly increasing")
        if np.any(sizes < 0.0):
            raise ValueError("set sizes cannot be negative")
        if sizes.size > 1 and np.any(np.diff(sizes) > 1e-9):
            raise ValueError("size curve must be non-increasing; project it first")
        for arr in (grid, sizes):
            arr.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "sizes", sizes)


def intersect_sets(sets: Sequence[PredictionSet]) -> PredictionSet:
    """Intersect per-scale prediction sets for one test point.

    The result keeps only labels present in every input, carries
    ``method_id="multiscale"``, and uses the summed per-scale alphas.

    Raises
    ------
    IncompatibleSets
        If the inputs are empty or built over different label spaces.
    """
    sets = list(sets)
    if not sets:
        raise IncompatibleSets("need at least one prediction set to intersect")
    space = sets[0].label_space
    for s in sets[1:]:
        if s.label_space != space:
            raise IncompatibleSets(
                f"label spaces differ: {space.labels} vs {s.label_space.labels}"
            )
    members = set(sets[0].members)
    for s in sets[1:]:
        members &= set(s.members)
    return PredictionSet(
        method_id="multiscale",
        members=tuple(members),
        alpha_used=float(sum(s.alpha_used for s in sets)),
        label_space=space,
    )


def allocate_uniform(alpha: float, n_scales: int) -> AllocationPlan:
    """Split the budget evenly, alpha_k = alpha / K."""
    check_alpha(alpha)
    if not isinstance(n_scales, (int, np.integer)) or n_scales < 1:
        raise InvalidAlpha(f"number of scales must be a positive integer, got {n_scales!r}")
    share = alpha / n_scales
    if not 0.0 < share < 1.0:
        raise InvalidAlpha(f"per-scale share {share!r} outside (0, 1)")
    return AllocationPlan(alphas=(share,) * n_scales, total=float(alpha))


def pav_non_increasing(values: Sequence[float]) -> np.ndarray:
    """Least-squares projection onto non-increasing sequences.

    Pool-adjacent-violators with unit weights, run on the negated input.
    """
    y = -np.asarray(values, dtype=float)
    means: list[float] = []
    counts: list[int] = []
    for v in y:
        means.append(float(v))
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, c2 = means.pop(), counts.pop()
            m1, c1 = means.pop(), counts.pop()
            c = c1 + c2
            means.append((m1 * c1 + m2 * c2) / c)
            counts.append(c)
    return -np.repeat(means, counts)


def estimate_size_curve(
    scorer: ConformityScorer,
    calib: CalibrationScores,
    eval_points: np.ndarray,
    labels: LabelSpace,
    grid: Sequence[float],
) -> SizeCurve:
    """Mean prediction-set size over evaluation points at each grid alpha.

    Sizes are projected onto non-increasing sequences before the curve is
    returned, so the result always satisfies the monotonicity the budget
    allocator relies on.
    """
    X = np.asarray(eval_points, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise EmptyEvaluation("no evaluation points for the size curve")
    grid_arr = np.asarray(grid, dtype=float)
    if grid_arr.ndim != 1 or grid_arr.size == 0:
        raise InvalidAlpha("size-curve grid must be a non-empty 1-D sequence")
    if np.any(grid_arr <= 0.0) or np.any(grid_arr >= 1.0):
        raise InvalidAlpha("size-curve grid must lie inside (0, 1)")
    if grid_arr.size > 1 and np.any(np.diff(grid_arr) <= 0.0):
        raise InvalidAlpha("size-curve grid must be strictly increasing")
    pmat = pvalue_matrix(scorer, calib, X, labels)
    sizes = np.array([(pmat > a).sum(axis=1).mean() for a in grid_arr])
    sizes = np.clip(pav_non_increasing(sizes), 0.0, labels.size)
    return SizeCurve(scale_id=scorer.scale_id, grid=grid_arr, sizes=sizes)


def default_size_curve_grid(
    alpha: float,
    n_scales: int,
    n_calib: int,
    *,
    alpha_max: float | None = None,
    n_points: int = 25,
) -> np.ndarray:
    """Log-spaced alpha grid for size-curve estimation.

    Spans ``[alpha/(10K), min(0.5, 5*alpha_max)]`` with a floor at
    ``1/(n_calib+1)``: below that, p-value quantization means no label can
    ever be excluded, so smaller alphas carry no information.
    """
    check_alpha(alpha)
    hi_anchor = alpha if alpha_max is None else float(alpha_max)
    lo = max(alpha / (10.0 * n_scales), 1.0 / (n_calib + 1))
    hi = min(0.5, 5.0 * hi_anchor)
    if hi <= lo:
        raise InvalidAlpha(f"empty size-curve grid range [{lo}, {hi}]")
    return np.geomspace(lo, hi, n_points)


class _LogCurve:
    """Piecewise-linear interpolant of ln f over the curve's alpha grid."""

    # elasticity = slope of ln f; sizes are floored so the log exists even
    # where the empirical curve hits zero
    _FLOOR = 1e-9

    def __init__(self, curve: SizeCurve) -> None:
        self.grid = np.asarray(curve.grid, dtype=float)
        self.logf = np.log(np.maximum(curve.sizes, self._FLOOR))
        if self.grid.size > 1:
            self.slopes = np.diff(self.logf) / np.diff(self.grid)
        else:
            self.slopes = np.empty(0)

    @property
    def lo(self) -> float:
        return float(self.grid[0])

    @property
    def hi(self) -> float:
        return float(self.grid[-1])

    def strictly_monotone_elasticity(self) -> bool:
        return self.slopes.size > 0 and bool(np.all(np.diff(self.slopes) > 0.0))

    def logf_at(self, alpha: np.ndarray | float) -> np.ndarray | float:
        return np.interp(alpha, self.grid, self.logf)


def _equalize_elasticity(curves: list[_LogCurve], alpha: float) -> list[float]:
    # Exact multiplier solve for piecewise-linear ln f: each scale keeps
    # absorbing budget while its marginal slope is below the shared
    # threshold -lambda*, so filling grid segments in global slope order
    # lands every scale at the same elasticity. Convexity (checked by the
    # caller) makes the fill optimal. Segments tied at the marginal slope
    # split the leftover budget proportionally, which keeps identical
    # curves at the exactly uniform allocation.
    alloc = [c.lo for c in curves]
    budget = alpha - sum(alloc)
    segments = [
        (float(c.slopes[j]), k, float(c.grid[j + 1] - c.grid[j]))
        for k, c in enumerate(curves)
        for j in range(c.slopes.size)
    ]
    segments.sort(key=lambda t: (t[0], t[1]))
    i = 0
    while i < len(segments) and budget > 1e-15:
        slope = segments[i][0]
        group = [seg for seg in segments[i:] if seg[0] == slope]
        i += len(group)
        total_width = sum(w for _, _, w in group)
        if total_width <= budget:
            for _, k, w in group:
                alloc[k] += w
            budget -= total_width
        else:
            for _, k, w in group:
                alloc[k] += budget * (w / total_width)
            budget = 0.0
    return alloc


def _projected_grid_search(
    curves: list[_LogCurve], alpha: float, *, n_steps: int = 2001, max_sweeps: int = 60
) -> list[float]:
    # Fallback when some elasticity is flat or non-monotone (corner
    # solutions): coordinate sweeps over scale pairs, scanning each
    # pairwise budget line on a fine grid until no sweep improves.
    los = [c.lo for c in curves]
    his = [c.hi for c in curves]
    alloc = [min(max(alpha / len(curves), lo), hi) for lo, hi in zip(los, his)]
    resid = alpha - sum(alloc)
    for k in range(len(alloc)):
        if abs(resid) <= 1e-15:
            break
        room = (his[k] - alloc[k]) if resid > 0 else (los[k] - alloc[k])
        step = np.clip(resid, min(room, 0.0), max(room, 0.0))
        alloc[k] += float(step)
        resid -= float(step)
    if len(curves) == 1:
        return alloc
    for _ in range(max_sweeps):
        improved = False
        for i in range(len(curves)):
            for j in range(i + 1, len(curves)):
                pair_budget = alloc[i] + alloc[j]
                lo_i = max(los[i], pair_budget - his[j])
                hi_i = min(his[i], pair_budget - los[j])
                if hi_i < lo_i:
                    continue
                cand = np.linspace(lo_i, hi_i, n_steps)
                vals = curves[i].logf_at(cand) + curves[j].logf_at(pair_budget - cand)
                best = int(np.argmin(vals))
                current = curves[i].logf_at(alloc[i]) + curves[j].logf_at(alloc[j])
                if vals[best] < current - 1e-14:
                    alloc[i] = float(cand[best])
                    alloc[j] = float(pair_budget - cand[best])
                    improved = True
        if not improved:
            break
    return alloc


def allocation_objective(curves: Sequence[SizeCurve], alphas: Sequence[float]) -> float:
    """Sum of log interpolated sizes; the allocator's surrogate objective."""
    return float(
        sum(_LogCurve(c).logf_at(a) for c, a in zip(curves, alphas))
    )


def allocate_optimal(curves: Sequence[SizeCurve], alpha: float) -> AllocationPlan:
    """Budget split minimizing the summed log of expected set sizes.

    Works on log-linear interpolants of the size curves: the first-order
    condition equalizes the per-scale elasticities d/da ln f_k at a shared
    multiplier, found exactly by an ordered segment fill when every
    interpolant has strictly increasing elasticity. Otherwise (flat or
    non-monotone elasticity, where only corner solutions exist) it falls
    back to a projected grid search. Each alpha_k stays inside its curve's
    grid range.

    Raises
    ------
    InfeasibleAllocation
        If no point of the box ``[lo_k, hi_k]^K`` sums to ``alpha``.
    """
    check_alpha(alpha)
    curves = list(curves)
    if not curves:
        raise InfeasibleAllocation("no size curves supplied")
    logcurves = [_LogCurve(c) for c in curves]
    lo_sum = sum(c.lo for c in logcurves)
    hi_sum = sum(c.hi for c in logcurves)
    if alpha < lo_sum - _SUM_TOL or alpha > hi_sum + _SUM_TOL:
        raise InfeasibleAllocation(
            f"alpha={alpha} outside the reachable range [{lo_sum:.6g}, {hi_sum:.6g}]"
        )
    if len(logcurves) == 1:
        alloc = [float(alpha)]
    elif all(c.strictly_monotone_elasticity() for c in logcurves):
        alloc = _equalize_elasticity(logcurves, alpha)
    else:
        alloc = _projected_grid_search(logcurves, alpha)
    # absorb float residue so the plan sums to alpha exactly
    resid = alpha - sum(alloc)
    if abs(resid) > 0.0:
        order = np.argsort([-(c.hi - a) for c, a in zip(logcurves, alloc)])
        for k in order:
            lo_k, hi_k = logcurves[k].lo, logcurves[k].hi
            nudged = min(max(alloc[k] + resid, lo_k), hi_k)
            resid -= nudged - alloc[k]
            alloc[k] = nudged
            if abs(resid) <= _SUM_TOL / 10:
                break
    return AllocationPlan(alphas=tuple(alloc), total=float(alpha))


def multiscale_predict(
    scorers: Sequence[ConformityScorer],
    calibs: Sequence[CalibrationScores],
    plan: AllocationPlan,
    x: np.ndarray,
    labels: LabelSpace,
) -> PredictionSet:
    """Intersection of per-scale prediction sets at the plan's alphas."""
    if not (len(scorers) == len(calibs) == plan.n_scales):
        raise IncompatibleSets(
            f"got {len(scorers)} scorers, {len(calibs)} calibrations, "
            f"{plan.n_scales} allocated scales"
        )
    check_alpha(plan.total)
    sets = [
        prediction_set(scorer, calib, x, labels, a)
        for scorer, calib, a in zip(scorers, calibs, plan.alphas)
    ]
    return intersect_sets(sets)
