"""Monte Carlo studies: coverage/size sweeps, the noise table, dependence
and large-sample behaviour, plus the metrics they report.

Every study derives one seed per replication from a base seed through
named substreams (see :func:`derive_seed`), so a full rerun with the same
base seed reproduces byte-identical CSV outputs, and replications are
independent and order-insensitive.

Single-scale methods are evaluated at the full budget ``alpha`` (they are
standalone baselines); the multi-scale method intersects per-scale sets
built at the allocated ``alpha_k``. Every replication verifies, exactly,
that the intersection is a subset of each per-scale component set and
never larger than the smallest one. Empty sets count as miscoverage.
"""

from __future__ import annotations

import os
import tempfile
import zlib
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .conformal import (
    CalibrationScores,
    ConformityScorer,
    LabelSpace,
    PredictionSet,
    check_alpha,
    pvalue_matrix,
    score_calibration,
)
from .errors import (
    EmptyEvaluation,
    InvalidConfig,
    InvalidDistribution,
)
from .models import (
    OracleModel,
    TrainConfig,
    logistic_scorer,
    oracle_scorer,
    train_logistic,
)
from .multiscale import (
    SizeCurve,
    allocate_optimal,
    allocate_uniform,
    default_size_curve_grid,
    estimate_size_curve,
)
from .synth import SynthConfig, generate_dataset, split_dataset, with_seed

DEFAULT_SPLIT = (0.4, 0.3, 0.3)


def derive_seed(base_seed: int, stream: str, index: int = 0) -> int:
    """Named substream seed: hashes (base, crc32(stream), index) through
    a SeedSequence so every replication of every study gets its own
    reproducible generator."""
    key = zlib.crc32(stream.encode("utf-8"))
    ss = np.random.SeedSequence([int(base_seed) % 2**64, key, int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


def empirical_coverage(covered: Sequence[bool]) -> float:
    """Fraction of test points whose true label was in the prediction set."""
    flags = np.asarray(covered, dtype=bool)
    if flags.size == 0:
        raise EmptyEvaluation("no coverage flags to average")
    return float(flags.mean())


def minimal_oracle_set(conditional: Sequence[float], alpha: float) -> PredictionSet:
    """Smallest label set whose conditional mass reaches 1 - alpha.

    Labels are taken in descending probability (ties broken by label
    order); once the cumulative mass reaches the target, every label tied
    with the last one taken is also included.
    """
    check_alpha(alpha)
    p = np.asarray(conditional, dtype=float)
    if p.ndim != 1 or p.size < 2:
        raise InvalidDistribution("conditional must be a 1-D vector over >= 2 labels")
    if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-9:
        raise InvalidDistribution(f"not a probability vector (sum={p.sum()!r})")
    order = np.argsort(-p, kind="stable")
    cum = np.cumsum(p[order])
    cutoff = int(np.searchsorted(cum, 1.0 - alpha - 1e-12, side="left"))
    threshold = p[order[min(cutoff, p.size - 1)]]
    members = tuple(int(i) for i in np.flatnonzero(p >= threshold))
    return PredictionSet(
        method_id="oracle",
        members=members,
        alpha_used=float(alpha),
        label_space=LabelSpace.of_size(p.size),
    )


@dataclass(frozen=True)
class MethodResult:
    """Per-test-point outcomes for one method in one replication."""

    method_id: str
    covered: np.ndarray = field(repr=False)
    sizes: np.ndarray = field(repr=False)

    @property
    def coverage(self) -> float:
        return float(np.asarray(self.covered, dtype=bool).mean())

    @property
    def mean_size(self) -> float:
        return float(np.asarray(self.sizes, dtype=float).mean())


@dataclass(frozen=True)
class SweepResult:
    """Per-alpha, per-method aggregates over all replications."""

    alpha_grid: tuple[float, ...]
    method_ids: tuple[str, ...]
    coverage: np.ndarray = field(repr=False)
    mean_size: np.ndarray = field(repr=False)
    se_coverage: np.ndarray = field(repr=False)
    replication_seeds: tuple[int, ...] = ()
    n_test: int = 0
    n_replications: int = 0

    def method_index(self, method_id: str) -> int:
        return self.method_ids.index(method_id)


@dataclass(frozen=True)
class NoiseTableRow:
    """One noise level: pooled coverage, pointwise coverage summary,
    mean multi-scale set size (band width), and band width / coverage."""

    noise: float
    overall_coverage: float
    pw_mean: float
    pw_min: float
    pw_max: float
    band_width: float
    efficiency: float


@dataclass(frozen=True)
class NoiseTableResult:
    rows: tuple[NoiseTableRow, ...]
    test_seeds: tuple[int, ...]
    replication_seeds: dict[str, tuple[int, ...]] = field(repr=False)


@dataclass(frozen=True)
class DependenceRow:
    rho: float
    coverage: float
    mean_size: float


@dataclass(frozen=True)
class DependenceResult:
    rows: tuple[DependenceRow, ...]
    replication_seeds: dict[str, tuple[int, ...]] = field(repr=False)


@dataclass(frozen=True)
class AsymptoticRow:
    n: int
    mean_sym_diff: float


@dataclass(frozen=True)
class AsymptoticResult:
    rows: tuple[AsymptoticRow, ...]
    test_seed: int
    replication_seeds: dict[str, tuple[int, ...]] = field(repr=False)


# --- study configs -------------------------------------------------------


@dataclass(frozen=True)
class SweepConfig:
    synth: SynthConfig
    alpha_grid: tuple[float, ...] = (0.05, 0.1, 0.15, 0.2, 0.25, 0.3)
    allocation: str = "uniform"
    n_replications: int = 200
    base_seed: int = 0
    split_fractions: tuple[float, float, float] = DEFAULT_SPLIT
    train: TrainConfig = TrainConfig()

    def __post_init__(self) -> None:
        for i, a in enumerate(self.alpha_grid):
            if not 0.0 < float(a) < 1.0:
                raise InvalidConfig(f"alpha_grid[{i}]={a!r} outside (0, 1)")
        if self.allocation not in ("uniform", "optimal"):
            raise InvalidConfig(f"allocation must be 'uniform' or 'optimal', got {self.allocation!r}")
        if self.n_replications < 1:
            raise InvalidConfig("n_replications must be >= 1")


@dataclass(frozen=True)
class NoiseTableConfig:
    synth: SynthConfig
    noise_levels: tuple[float, ...] = (0.05, 0.10, 0.15, 0.20)
    alpha: float = 0.1
    n_replications: int = 200
    base_seed: int = 0
    split_fractions: tuple[float, float, float] = DEFAULT_SPLIT
    train: TrainConfig = TrainConfig()
    scorer: str = "logistic"
    test_grid_size: int = 300

    def __post_init__(self) -> None:
        check_alpha(self.alpha)
        for i, lvl in enumerate(self.noise_levels):
            if float(lvl) < 0.0:
                raise InvalidConfig(f"noise_levels[{i}]={lvl!r} is negative")
        if self.scorer not in ("logistic", "oracle"):
            raise InvalidConfig(f"scorer must be 'logistic' or 'oracle', got {self.scorer!r}")
        if self.n_replications < 1:
            raise InvalidConfig("n_replications must be >= 1")


@dataclass(frozen=True)
class DependenceConfig:
    synth: SynthConfig
    rho_grid: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    alpha: float = 0.1
    n_replications: int = 500
    base_seed: int = 0
    split_fractions: tuple[float, float, float] = DEFAULT_SPLIT
    train: TrainConfig = TrainConfig()

    def __post_init__(self) -> None:
        check_alpha(self.alpha)
        for i, r in enumerate(self.rho_grid):
            if not 0.0 <= float(r) <= 1.0:
                raise InvalidConfig(f"rho_grid[{i}]={r!r} outside [0, 1]")
        if self.n_replications < 1:
            raise InvalidConfig("n_replications must be >= 1")


@dataclass(frozen=True)
class AsymptoticConfig:
    synth: SynthConfig
    n_grid: tuple[int, ...] = (100, 500, 2000, 5000)
    alpha: float = 0.1
    n_replications: int = 30
    base_seed: int = 0
    test_grid_size: int = 200

    def __post_init__(self) -> None:
        check_alpha(self.alpha)
        if any(int(n) < 1 for n in self.n_grid):
            raise InvalidConfig("n_grid entries must be positive")
        if list(self.n_grid) != sorted(self.n_grid):
            raise InvalidConfig("n_grid must be increasing")
        if self.n_replications < 1:
            raise InvalidConfig("n_replications must be >= 1")


# --- pipeline pieces ------------------------------------------------------


@dataclass(frozen=True)
class ReplicationData:
    """Everything one replication needs to evaluate methods on test points."""

    pvalues: tuple[np.ndarray, ...]
    y_test: np.ndarray
    labels: LabelSpace
    scorers: tuple[ConformityScorer, ...]
    calibs: tuple[CalibrationScores, ...]
    X_calib: np.ndarray
    X_test: np.ndarray


def _fit_scorers(
    synth_cfg: SynthConfig,
    X_train: np.ndarray,
    y_train: np.ndarray,
    train_cfg: TrainConfig,
    scorer_kind: str,
) -> tuple[ConformityScorer, ...]:
    if scorer_kind == "oracle":
        oracle = OracleModel(synth_cfg)
        return tuple(
            oracle_scorer(oracle, scale_id=k + 1) for k in range(synth_cfg.n_scales)
        )
    scorers = []
    for k in range(synth_cfg.n_scales):
        model = train_logistic(
            X_train, y_train, synth_cfg.n_classes, (k,), train_cfg
        )
        scorers.append(logistic_scorer(model, scale_id=k + 1))
    return tuple(scorers)


def run_replication(
    synth_cfg: SynthConfig,
    split_fractions: Sequence[float],
    train_cfg: TrainConfig,
    data_seed: int,
    split_seed: int,
    *,
    scorer_kind: str = "logistic",
    test_features: np.ndarray | None = None,
    test_labels: np.ndarray | None = None,
) -> ReplicationData:
    """Generate data, train per-scale scorers, calibrate, and compute the
    per-scale p-value matrices on the test points.

    By default the dataset's own test split is used; passing
    ``test_features``/``test_labels`` evaluates on a frozen external grid
    instead (the dataset's test rows are then ignored).
    """
    ds = generate_dataset(with_seed(synth_cfg, data_seed))
    split = split_dataset(ds.n_points, split_fractions, split_seed)
    labels = ds.label_space()
    X, y = ds.features, ds.labels
    scorers = _fit_scorers(synth_cfg, X[split.train], y[split.train], train_cfg, scorer_kind)
    calibs = tuple(
        score_calibration(sc, X[split.calib], y[split.calib]) for sc in scorers
    )
    if test_features is None:
        X_test, y_test = X[split.test], y[split.test]
    else:
        X_test = np.asarray(test_features, dtype=float)
        y_test = np.asarray(test_labels, dtype=int)
    pmats = tuple(
        pvalue_matrix(sc, cb, X_test, labels) for sc, cb in zip(scorers, calibs)
    )
    return ReplicationData(
        pvalues=pmats,
        y_test=y_test,
        labels=labels,
        scorers=scorers,
        calibs=calibs,
        X_calib=X[split.calib],
        X_test=X_test,
    )


def verify_intersection_masks(
    ms_mask: np.ndarray, component_masks: Sequence[np.ndarray]
) -> None:
    """Exact subset and size-domination checks for the intersection.

    Raises AssertionError on any violation; this runs inside every study
    so a violation can never go unnoticed.
    """
    comp_sizes = []
    for cm in component_masks:
        if np.any(ms_mask & ~cm):
            raise AssertionError("multiscale set escaped a per-scale component set")
        comp_sizes.append(cm.sum(axis=1))
    if np.any(ms_mask.sum(axis=1) > np.min(comp_sizes, axis=0)):
        raise AssertionError("multiscale set larger than the smallest per-scale set")


def _masks_for_alpha(
    rep: ReplicationData, alpha: float, plan_alphas: Sequence[float]
) -> tuple[list[np.ndarray], list[np.ndarray], np.ndarray]:
    """Single-scale masks at the full alpha, component masks at the
    allocated alphas, and their verified intersection."""
    single = [p > alpha for p in rep.pvalues]
    components = [p > a_k for p, a_k in zip(rep.pvalues, plan_alphas)]
    ms = np.logical_and.reduce(components)
    verify_intersection_masks(ms, components)
    return single, components, ms


def _mask_method_result(method_id: str, mask: np.ndarray, y_test: np.ndarray) -> MethodResult:
    covered = mask[np.arange(mask.shape[0]), y_test]
    return MethodResult(method_id=method_id, covered=covered, sizes=mask.sum(axis=1))


def run_coverage_sweep(config: SweepConfig) -> SweepResult:
    """Coverage and mean set size per (alpha, method) over fresh replications."""
    K = config.synth.n_scales
    method_ids = tuple(f"scale_{k + 1}" for k in range(K)) + ("multiscale",)
    A, M, R = len(config.alpha_grid), len(method_ids), config.n_replications
    cov = np.zeros((A, M, R))
    msize = np.zeros((A, M, R))
    seeds = tuple(derive_seed(config.base_seed, "sweep-data", r) for r in range(R))
    for r in range(R):
        rep = run_replication(
            config.synth,
            config.split_fractions,
            config.train,
            seeds[r],
            derive_seed(config.base_seed, "sweep-split", r),
        )
        curves: list[SizeCurve] | None = None
        if config.allocation == "optimal":
            grid = default_size_curve_grid(
                min(config.alpha_grid),
                K,
                rep.calibs[0].n,
                alpha_max=max(config.alpha_grid),
            )
            curves = [
                estimate_size_curve(sc, cb, rep.X_calib, rep.labels, grid)
                for sc, cb in zip(rep.scorers, rep.calibs)
            ]
        for ai, alpha in enumerate(config.alpha_grid):
            if curves is None:
                plan = allocate_uniform(alpha, K)
            else:
                plan = allocate_optimal(curves, alpha)
            single, _, ms = _masks_for_alpha(rep, alpha, plan.alphas)
            for mi, mask in enumerate(single + [ms]):
                res = _mask_method_result(method_ids[mi], mask, rep.y_test)
                cov[ai, mi, r] = res.coverage
                msize[ai, mi, r] = res.mean_size
    se = cov.std(axis=2, ddof=1) / np.sqrt(R) if R > 1 else np.zeros((A, M))
    return SweepResult(
        alpha_grid=tuple(float(a) for a in config.alpha_grid),
        method_ids=method_ids,
        coverage=cov.mean(axis=2),
        mean_size=msize.mean(axis=2),
        se_coverage=se,
        replication_seeds=seeds,
        n_test=int(rep.y_test.size),
        n_replications=R,
    )


def run_noise_table(config: NoiseTableConfig) -> NoiseTableResult:
    """Coverage/size metrics per noise level on a frozen test grid.

    The test grid (features and labels) is drawn once per noise level and
    held fixed across replications, so pointwise coverage is the fraction
    of replications covering each individual point.
    """
    K = config.synth.n_scales
    plan = allocate_uniform(config.alpha, K)
    rows = []
    test_seeds = []
    rep_seeds: dict[str, tuple[int, ...]] = {}
    for li, level in enumerate(config.noise_levels):
        level_cfg = replace(config.synth, noise_sd=float(level))
        test_seed = derive_seed(config.base_seed, "noise-test", li)
        test_seeds.append(test_seed)
        test_ds = generate_dataset(
            replace(level_cfg, n_points=config.test_grid_size, seed=test_seed)
        )
        R = config.n_replications
        seeds = tuple(derive_seed(config.base_seed, f"noise-data-{li}", r) for r in range(R))
        rep_seeds[format(float(level), ".6g")] = seeds
        covered = np.zeros((R, config.test_grid_size), dtype=bool)
        size_total = 0.0
        for r in range(R):
            rep = run_replication(
                level_cfg,
                config.split_fractions,
                config.train,
                seeds[r],
                derive_seed(config.base_seed, f"noise-split-{li}", r),
                scorer_kind=config.scorer,
                test_features=test_ds.features,
                test_labels=test_ds.labels,
            )
            _, _, ms = _masks_for_alpha(rep, config.alpha, plan.alphas)
            res = _mask_method_result("multiscale", ms, rep.y_test)
            covered[r] = res.covered
            size_total += float(np.sum(res.sizes))
        pw = covered.mean(axis=0)
        overall = float(covered.mean())
        band = size_total / (R * config.test_grid_size)
        efficiency = band / overall if overall > 0 else float("inf")
        rows.append(
            NoiseTableRow(
                noise=float(level),
                overall_coverage=overall,
                pw_mean=float(pw.mean()),
                pw_min=float(pw.min()),
                pw_max=float(pw.max()),
                band_width=band,
                efficiency=efficiency,
            )
        )
    return NoiseTableResult(
        rows=tuple(rows), test_seeds=tuple(test_seeds), replication_seeds=rep_seeds
    )


def run_dependence_study(config: DependenceConfig) -> DependenceResult:
    """Multi-scale coverage and mean size as cross-scale dependence grows.

    At rho = 1 all scale features are identical, so the trained scorers
    coincide and the intersection collapses to the single set at
    ``max_k alpha_k``: coverage approaches ``1 - max_k alpha_k`` instead
    of the nominal ``1 - alpha``.
    """
    K = config.synth.n_scales
    plan = allocate_uniform(config.alpha, K)
    rows = []
    rep_seeds: dict[str, tuple[int, ...]] = {}
    for ri, rho in enumerate(config.rho_grid):
        base = replace(config.synth, dependence=float(rho))
        R = config.n_replications
        seeds = tuple(derive_seed(config.base_seed, f"dep-data-{ri}", r) for r in range(R))
        rep_seeds[format(float(rho), ".6g")] = seeds
        covered_all = []
        sizes_all = []
        for r in range(R):
            rep = run_replication(
                base,
                config.split_fractions,
                config.train,
                seeds[r],
                derive_seed(config.base_seed, f"dep-split-{ri}", r),
            )
            _, _, ms = _masks_for_alpha(rep, config.alpha, plan.alphas)
            res = _mask_method_result("multiscale", ms, rep.y_test)
            covered_all.append(res.covered)
            sizes_all.append(res.sizes)
        rows.append(
            DependenceRow(
                rho=float(rho),
                coverage=float(np.concatenate(covered_all).mean()),
                mean_size=float(np.concatenate(sizes_all).mean()),
            )
        )
    return DependenceResult(rows=tuple(rows), replication_seeds=rep_seeds)


def run_asymptotic_study(config: AsymptoticConfig) -> AsymptoticResult:
    """Mean symmetric difference between the multi-scale set (true-model
    scorers at every scale) and the minimal conditional set, per
    calibration size, on a frozen test grid.

    Every scale uses the same true-conditional scorer, so the scorers'
    limits agree across scales by construction.
    """
    K = config.synth.n_scales
    m = config.synth.n_classes
    plan = allocate_uniform(config.alpha, K)
    test_seed = derive_seed(config.base_seed, "asym-test", 0)
    test_ds = generate_dataset(
        replace(config.synth, n_points=config.test_grid_size, seed=test_seed)
    )
    oracle = OracleModel(config.synth)
    conditional = oracle.conditional(test_ds.features)
    target_masks = np.zeros((config.test_grid_size, m), dtype=bool)
    for i in range(config.test_grid_size):
        ideal = minimal_oracle_set(conditional[i], config.alpha)
        target_masks[i, list(ideal.members)] = True

    labels = LabelSpace.of_size(m)
    scorers = tuple(oracle_scorer(oracle, scale_id=k + 1) for k in range(K))
    rows = []
    rep_seeds: dict[str, tuple[int, ...]] = {}
    for ni, n in enumerate(config.n_grid):
        R = config.n_replications
        seeds = tuple(derive_seed(config.base_seed, f"asym-data-{ni}", r) for r in range(R))
        rep_seeds[str(int(n))] = seeds
        diffs = np.zeros(R)
        for r in range(R):
            calib_ds = generate_dataset(
                replace(config.synth, n_points=int(n), seed=seeds[r])
            )
            calibs = tuple(
                score_calibration(sc, calib_ds.features, calib_ds.labels)
                for sc in scorers
            )
            pmats = [
                pvalue_matrix(sc, cb, test_ds.features, labels)
                for sc, cb in zip(scorers, calibs)
            ]
            components = [p > a_k for p, a_k in zip(pmats, plan.alphas)]
            ms = np.logical_and.reduce(components)
            verify_intersection_masks(ms, components)
            diffs[r] = float((ms ^ target_masks).sum(axis=1).mean())
        rows.append(AsymptoticRow(n=int(n), mean_sym_diff=float(diffs.mean())))
    return AsymptoticResult(
        rows=tuple(rows), test_seed=test_seed, replication_seeds=rep_seeds
    )


# --- CSV / JSON output ----------------------------------------------------


def _fmt(x: float) -> str:
    return format(float(x), ".6g")


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file in the same directory, then rename."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def sweep_csv(result: SweepResult) -> str:
    lines = ["alpha,method,coverage,mean_size,se_coverage"]
    for ai, alpha in enumerate(result.alpha_grid):
        for mi, method in enumerate(result.method_ids):
            lines.append(
                ",".join(
                    [
                        _fmt(alpha),
                        method,
                        _fmt(result.coverage[ai, mi]),
                        _fmt(result.mean_size[ai, mi]),
                        _fmt(result.se_coverage[ai, mi]),
                    ]
                )
            )
    return "\n".join(lines) + "\n"


def noise_table_csv(result: NoiseTableResult) -> str:
    lines = ["noise,overall_coverage,pw_mean,pw_min,pw_max,band_width,efficiency"]
    for row in result.rows:
        lines.append(
            ",".join(
                _fmt(v)
                for v in (
                    row.noise,
                    row.overall_coverage,
                    row.pw_mean,
                    row.pw_min,
                    row.pw_max,
                    row.band_width,
                    row.efficiency,
                )
            )
        )
    return "\n".join(lines) + "\n"


def dependence_csv(result: DependenceResult) -> str:
    lines = ["rho,coverage,mean_size"]
    for row in result.rows:
        lines.append(",".join(_fmt(v) for v in (row.rho, row.coverage, row.mean_size)))
    return "\n".join(lines) + "\n"


def asymptotic_csv(result: AsymptoticResult) -> str:
    lines = ["n,mean_sym_diff"]
    for row in result.rows:
        lines.append(f"{row.n},{_fmt(row.mean_sym_diff)}")
    return "\n".join(lines) + "\n"
