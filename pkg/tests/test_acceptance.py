"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
report. The full suite is a few minutes single-threaded; the heavyweight
entries are the 200-replication coverage run (criterion 1) and the
40-replication noise table (criterion 7).
"""

import json

import numpy as np
import pytest

import oracles
from mscp.cli import main as cli_main
from mscp.conformal import (
    CalibrationScores,
    conformal_pvalue,
    prediction_set,
)
from mscp.experiments import (
    AsymptoticConfig,
    NoiseTableConfig,
    SweepConfig,
    derive_seed,
    run_asymptotic_study,
    run_coverage_sweep,
    run_noise_table,
    run_replication,
    verify_intersection_masks,
    _masks_for_alpha,
)
from mscp.models import TrainConfig, ce_loss_and_grad
from mscp.multiscale import (
    SizeCurve,
    allocate_optimal,
    allocate_uniform,
    allocation_objective,
    multiscale_predict,
)
from mscp.synth import SynthConfig


def report(number: int, name: str, detail: str) -> None:
    print(f"ACCEPTANCE {number} ({name}): PASS  [{detail}]")


def test_criterion_1_coverage_validity():
    # default K=3 config, alpha=0.1, uniform allocation, 200 x 300 evaluations
    cfg = SweepConfig(
        synth=SynthConfig(n_points=1000),
        alpha_grid=(0.1,),
        allocation="uniform",
        n_replications=200,
        base_seed=1,
    )
    result = run_coverage_sweep(cfg)
    assert result.n_test == 300
    mi = result.method_index("multiscale")
    pooled = result.coverage[0, mi]
    floor = 0.9 - 3 * np.sqrt(0.09 / 60000)
    assert pooled >= floor, f"pooled coverage {pooled:.4f} below floor {floor:.4f}"
    report(1, "coverage validity", f"pooled={pooled:.4f} >= floor={floor:.4f}")


def test_criterion_2_subset_and_efficiency():
    # exact per-point subset and size domination for the intersection,
    # cross-checked against the per-point public API; the same exact checks
    # also run inside every study via verify_intersection_masks
    synth = SynthConfig(n_points=1000)
    plan = allocate_uniform(0.1, 3)
    total_ms = 0.0
    total_comp = np.zeros(3)
    n_points = 0
    for r in range(10):
        rep = run_replication(
            synth, (0.4, 0.3, 0.3), TrainConfig(),
            derive_seed(2, "acc2-data", r), derive_seed(2, "acc2-split", r),
        )
        _, components, ms = _masks_for_alpha(rep, 0.1, plan.alphas)
        verify_intersection_masks(ms, components)
        for k, cm in enumerate(components):
            assert not np.any(ms & ~cm), "subset violation"
            total_comp[k] += cm.sum()
        comp_sizes = np.stack([cm.sum(axis=1) for cm in components])
        assert np.all(ms.sum(axis=1) <= comp_sizes.min(axis=0)), "size violation"
        total_ms += ms.sum()
        n_points += ms.shape[0]
        if r == 0:
            # independent route: per-point API must agree with the masks
            for i in range(25):
                x = rep.X_test[i]
                combined = multiscale_predict(rep.scorers, rep.calibs, plan, x, rep.labels)
                members = tuple(
                    lab for j, lab in enumerate(rep.labels.labels) if ms[i, j]
                )
                assert combined.members == members
                for scorer, calib, a_k in zip(rep.scorers, rep.calibs, plan.alphas):
                    single = prediction_set(scorer, calib, x, rep.labels, a_k)
                    assert set(combined.members) <= set(single.members)
    mean_ms = total_ms / n_points
    mean_comp = total_comp / n_points
    assert mean_ms <= mean_comp.min()
    report(
        2,
        "subset/efficiency",
        f"0 violations over {n_points} points; mean sizes ms={mean_ms:.3f} "
        f"<= min per-scale={mean_comp.min():.3f}",
    )


def test_criterion_3_pvalue_super_uniformity():
    rng = np.random.default_rng(3)
    reps, n = 10_000, 99
    pvals = np.empty(reps)
    for r in range(reps):
        draws = rng.standard_normal(n + 1)
        calib = CalibrationScores(scale_id=1, scores=draws[:n])
        pvals[r] = conformal_pvalue(calib, draws[n])
    worst = -np.inf
    for t in np.arange(0.05, 0.951, 0.05):
        freq = float((pvals <= t).mean())
        bound = t + 3 * np.sqrt(t * (1 - t) / reps)
        worst = max(worst, freq - t)
        assert freq <= bound, f"P(p <= {t:.2f}) = {freq:.4f} exceeds {bound:.4f}"
    report(3, "super-uniformity", f"10000 reps, max excess over t = {worst:+.4f}")


def test_criterion_4_allocator_first_order_condition():
    grid = np.geomspace(0.002, 0.45, 4001)
    curves = [
        SizeCurve(scale_id=1, grid=grid, sizes=grid**-2.0),
        SizeCurve(scale_id=2, grid=grid, sizes=grid**-1.0),
    ]
    plan = allocate_optimal(curves, 0.1)
    assert plan.alphas[0] == pytest.approx(0.0667, abs=0.002)
    assert plan.alphas[1] == pytest.approx(0.0333, abs=0.002)
    obj = allocation_objective(curves, plan.alphas)
    (g1, g2), obj_grid = oracles.grid_search_allocation(curves, 0.1, step=1e-4)
    assert abs(obj - obj_grid) <= 1e-6
    report(
        4,
        "allocator FOC",
        f"alphas=({plan.alphas[0]:.4f}, {plan.alphas[1]:.4f}), "
        f"|obj - grid| = {abs(obj - obj_grid):.2e}",
    )


def test_criterion_5_conservative_coverage_under_dependence():
    # rho=1 makes both scale features identical, so the trained scorers
    # coincide; the intersection must equal the single-scale set at
    # alpha_k = 0.05 exactly, and pooled coverage clears the 0.95 level
    synth = SynthConfig(n_points=1000, n_scales=2, scale_weights=(1.0, 0.6), dependence=1.0)
    plan = allocate_uniform(0.1, 2)
    covered = []
    for r in range(70):
        rep = run_replication(
            synth, (0.4, 0.3, 0.3), TrainConfig(),
            derive_seed(5, "acc5-data", r), derive_seed(5, "acc5-split", r),
        )
        assert np.array_equal(rep.pvalues[0], rep.pvalues[1])
        _, components, ms = _masks_for_alpha(rep, 0.1, plan.alphas)
        single_05 = rep.pvalues[0] > 0.05
        assert np.array_equal(ms, single_05), "intersection differs from the 0.05 set"
        covered.append(ms[np.arange(ms.shape[0]), rep.y_test])
    covered = np.concatenate(covered)
    assert covered.size >= 20_000
    pooled = float(covered.mean())
    floor = 0.95 - 3 * np.sqrt(0.95 * 0.05 / covered.size)
    assert pooled >= floor, f"coverage {pooled:.4f} below {floor:.4f}"
    assert floor > 0.9, "floor must sit strictly above the nominal 1 - alpha"
    report(
        5,
        "conservative coverage",
        f"exact set equality over {covered.size} evaluations, pooled={pooled:.4f} >= {floor:.4f}",
    )


def test_criterion_6_asymptotic_optimality():
    cfg = AsymptoticConfig(
        synth=SynthConfig(n_points=1000),
        n_grid=(100, 500, 2000, 5000),
        alpha=0.1,
        n_replications=30,
        base_seed=6,
        test_grid_size=200,
    )
    result = run_asymptotic_study(cfg)
    by_n = {row.n: row.mean_sym_diff for row in result.rows}
    assert by_n[5000] <= by_n[100] + 0.05, (
        f"sym diff rose from {by_n[100]:.4f} at n=100 to {by_n[5000]:.4f} at n=5000"
    )
    assert by_n[5000] <= 0.15, f"sym diff {by_n[5000]:.4f} above 0.15 at n=5000"
    detail = ", ".join(f"n={n}: {d:.4f}" for n, d in sorted(by_n.items()))
    report(6, "asymptotic optimality", detail)


# Table 1 as printed in the source material: noise level, overall coverage,
# band width, efficiency score.
PRINTED_TABLE = (
    (0.05, 0.867, 2.897, 3.343),
    (0.10, 0.883, 3.037, 3.438),
    (0.15, 0.867, 3.100, 3.577),
    (0.20, 0.950, 3.269, 3.441),
)


def test_criterion_7_noise_table_arithmetic_and_trend():
    # arithmetic: band width / overall coverage reproduces the printed
    # efficiency column within 0.001 relative tolerance on every row (the
    # printed inputs are themselves rounded to 3 decimals, which already
    # perturbs the ratio by ~1.5e-3 absolute, so the check is relative)
    for noise, coverage, band, printed_eff in PRINTED_TABLE:
        computed = band / coverage
        rel = abs(computed - printed_eff) / printed_eff
        assert rel <= 1e-3, (
            f"row {noise}: computed {computed:.4f} vs printed {printed_eff} "
            f"(rel diff {rel:.2e})"
        )
    abs_diffs = [abs(b / c - e) for _, c, b, e in PRINTED_TABLE]

    # trend substitute: band width non-decreasing in noise, slack 0.1
    cfg = NoiseTableConfig(
        synth=SynthConfig(n_points=1000),
        noise_levels=(0.05, 0.10, 0.15, 0.20),
        alpha=0.1,
        n_replications=40,
        base_seed=20240801,
        test_grid_size=300,
    )
    result = run_noise_table(cfg)
    bands = [row.band_width for row in result.rows]
    for i in range(len(bands) - 1):
        assert bands[i + 1] >= bands[i] - 0.1, f"band width dropped: {bands}"
    for row in result.rows:
        assert row.efficiency == pytest.approx(
            row.band_width / row.overall_coverage, abs=1e-9
        )
    report(
        7,
        "noise-table arithmetic",
        f"max rel diff {max(abs(b / c - e) / e for _, c, b, e in PRINTED_TABLE):.2e}, "
        f"max abs diff {max(abs_diffs):.2e}, bands={['%.3f' % b for b in bands]}",
    )


def test_criterion_8_sweep_determinism(tmp_path):
    cfg_path = tmp_path / "sweep.json"
    cfg_path.write_text(json.dumps({
        "n_points": 300,
        "replications": 5,
        "epochs": 300,
        "alpha_grid": [0.1, 0.2],
        "seed": 99,
    }))
    payloads = []
    for name in ("run_a", "run_b"):
        out = tmp_path / name
        out.mkdir()
        code = cli_main(["study", "sweep", "--config", str(cfg_path), "--out", str(out)])
        assert code == 0
        payloads.append((out / "sweep.csv").read_bytes())
    assert payloads[0] == payloads[1], "same base seed must give byte-identical CSVs"
    report(8, "determinism", f"{len(payloads[0])} identical bytes")


def test_criterion_9_gradient_check():
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 4))
        m = int(rng.integers(2, 5))
        n = int(rng.integers(2, 21))
        X = rng.normal(size=(n, d))
        y = rng.integers(0, m, size=n)
        onehot = np.zeros((n, m))
        onehot[np.arange(n), y] = 1.0
        W = rng.normal(size=(m, d)) * 0.5
        b = rng.normal(size=m) * 0.5
        _, gw, gb = ce_loss_and_grad(W, b, X, onehot, 1e-4)
        fgw, fgb = oracles.finite_difference_grad(W, b, X, onehot, 1e-4)
        denom = max(np.abs(fgw).max(), np.abs(fgb).max(), 1e-8)
        rel = max(np.abs(gw - fgw).max(), np.abs(gb - fgb).max()) / denom
        worst = max(worst, rel)
        assert rel <= 1e-4, f"gradient relative error {rel:.2e}"
    report(9, "gradient check", f"50 instances, worst relative error {worst:.2e}")
