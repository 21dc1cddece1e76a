"""Command-line entry point: data generation, training, prediction, studies.

Configs are flat JSON objects; command-line flags override file values and
the fully resolved config is persisted to the output directory before any
work starts, so every artifact is reproducible from its own audit trail.
Exit codes: 0 success, 1 usage/config error, 2 runtime/data error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict
from typing import Any, Sequence

import numpy as np

from .conformal import LabelSpace, prediction_set, pvalue_matrix, score_calibration
from .errors import CONFIG_ERRORS, InvalidConfig, MscpError, UsageError
from .experiments import (
    AsymptoticConfig,
    DependenceConfig,
    NoiseTableConfig,
    SweepConfig,
    asymptotic_csv,
    atomic_write_text,
    dependence_csv,
    noise_table_csv,
    run_asymptotic_study,
    run_coverage_sweep,
    run_dependence_study,
    run_noise_table,
    sweep_csv,
)
from .models import TrainConfig, logistic_scorer, train_logistic
from .multiscale import (
    allocate_optimal,
    allocate_uniform,
    default_size_curve_grid,
    estimate_size_curve,
    multiscale_predict,
)
from .synth import (
    SynthConfig,
    generate_dataset,
    read_dataset_csv,
    split_dataset,
    write_dataset_csv,
)

_SYNTH_KEYS = (
    "n_points",
    "n_scales",
    "n_classes",
    "noise_sd",
    "scale_weights",
    "dependence",
    "seed",
)
_TRAIN_KEYS = ("learning_rate", "epochs", "l2")
_STUDIES = ("sweep", "noise-table", "dependence", "asymptotic")


class _Parser(argparse.ArgumentParser):
    # route argparse usage failures through our exit-code contract
    def error(self, message: str) -> None:  # type: ignore[override]
        raise UsageError(message)


def _load_config(path: str | None) -> dict[str, Any]:
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise InvalidConfig(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise InvalidConfig(f"config file {path} must hold a JSON object")
    return cfg


def _check_keys(cfg: dict[str, Any], allowed: Sequence[str], context: str) -> None:
    unknown = sorted(set(cfg) - set(allowed))
    if unknown:
        raise InvalidConfig(f"unknown {context} config key(s): {', '.join(unknown)}")


def _pop_int(cfg: dict[str, Any], key: str, default: int) -> int:
    value = cfg.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidConfig(f"{key} must be an integer, got {value!r}")
    return value


def _resolve_synth(cfg: dict[str, Any], seed_override: int | None, defaults: SynthConfig) -> SynthConfig:
    seed = cfg.get("seed", defaults.seed)
    if seed_override is not None:
        seed = seed_override
    weights = cfg.get("scale_weights", defaults.scale_weights)
    try:
        return SynthConfig(
            n_points=cfg.get("n_points", defaults.n_points),
            n_scales=cfg.get("n_scales", defaults.n_scales),
            n_classes=cfg.get("n_classes", defaults.n_classes),
            noise_sd=cfg.get("noise_sd", defaults.noise_sd),
            scale_weights=tuple(weights) if weights is not None else None,
            dependence=cfg.get("dependence", defaults.dependence),
            seed=seed,
        )
    except TypeError as exc:
        raise InvalidConfig(str(exc)) from None


def _resolve_train(cfg: dict[str, Any]) -> TrainConfig:
    return TrainConfig(
        learning_rate=float(cfg.get("learning_rate", 0.1)),
        epochs=_pop_int(cfg, "epochs", 2000),
        l2=float(cfg.get("l2", 1e-4)),
    )


def _dump_json(payload: dict[str, Any]) -> str:
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def _require_out_dir(path: str) -> str:
    if not os.path.isdir(path):
        raise FileNotFoundError(f"output directory does not exist: {path}")
    return path


def _synth_dict(cfg: SynthConfig) -> dict[str, Any]:
    d = asdict(cfg)
    d["scale_weights"] = list(cfg.scale_weights)
    return d


# --- generate ---------------------------------------------------------------


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, _SYNTH_KEYS, "generate")
    synth = _resolve_synth(cfg, args.seed, SynthConfig(n_points=1000))
    out = _require_out_dir(args.out)
    resolved = {"command": "generate", "synth": _synth_dict(synth)}
    atomic_write_text(os.path.join(out, "resolved_config.json"), _dump_json(resolved))
    dataset = generate_dataset(synth)
    write_dataset_csv(dataset, os.path.join(out, "dataset.csv"))
    print(f"wrote {dataset.n_points} rows to {os.path.join(out, 'dataset.csv')}")
    return 0


# --- train ------------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, ("dataset", "split_fractions", "seed") + _TRAIN_KEYS, "train")
    dataset_path = args.dataset or cfg.get("dataset")
    if not dataset_path:
        raise InvalidConfig("train needs a dataset path (--dataset or config key 'dataset')")
    fractions = tuple(cfg.get("split_fractions", (0.4, 0.3, 0.3)))
    seed = args.seed if args.seed is not None else _pop_int(cfg, "seed", 0)
    train_cfg = _resolve_train(cfg)
    out = _require_out_dir(args.out)
    resolved = {
        "command": "train",
        "dataset": dataset_path,
        "split_fractions": list(fractions),
        "seed": seed,
        "train": asdict(train_cfg),
    }
    atomic_write_text(os.path.join(out, "resolved_config.json"), _dump_json(resolved))

    dataset = read_dataset_csv(dataset_path)
    labels = dataset.label_space()
    split = split_dataset(dataset.n_points, fractions, seed)
    models = []
    for k in range(dataset.n_scales):
        model = train_logistic(
            dataset.features[split.train],
            dataset.labels[split.train],
            labels.size,
            (k,),
            train_cfg,
        )
        models.append(
            {
                "scale_id": k + 1,
                "feature_indices": list(model.feature_indices),
                "weights": model.weights.tolist(),
                "bias": model.bias.tolist(),
                "feature_mean": model.feature_mean.tolist(),
                "feature_scale": model.feature_scale.tolist(),
                "n_features_in": model.n_features_in,
                "final_loss": model.loss_history[-1],
            }
        )
    atomic_write_text(
        os.path.join(out, "models.json"),
        _dump_json({"n_classes": labels.size, "models": models}),
    )
    print(f"trained {dataset.n_scales} scale models -> {os.path.join(out, 'models.json')}")
    return 0


# --- predict ----------------------------------------------------------------


def _build_pipeline(dataset_path: str, fractions, seed: int, train_cfg: TrainConfig):
    dataset = read_dataset_csv(dataset_path)
    labels = dataset.label_space()
    split = split_dataset(dataset.n_points, fractions, seed)
    scorers, calibs = [], []
    for k in range(dataset.n_scales):
        model = train_logistic(
            dataset.features[split.train],
            dataset.labels[split.train],
            labels.size,
            (k,),
            train_cfg,
        )
        scorer = logistic_scorer(model, scale_id=k + 1)
        scorers.append(scorer)
        calibs.append(
            score_calibration(scorer, dataset.features[split.calib], dataset.labels[split.calib])
        )
    return dataset, labels, split, scorers, calibs


def cmd_predict(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    _check_keys(cfg, ("split_fractions", "seed") + _TRAIN_KEYS, "predict")
    fractions = tuple(cfg.get("split_fractions", (0.4, 0.3, 0.3)))
    seed = args.seed if args.seed is not None else _pop_int(cfg, "seed", 0)
    train_cfg = _resolve_train(cfg)
    if (args.index is None) == (args.x is None):
        raise UsageError("predict needs exactly one of --index or --x")

    dataset, labels, split, scorers, calibs = _build_pipeline(
        args.dataset, fractions, seed, train_cfg
    )
    K = dataset.n_scales
    if args.index is not None:
        if not 0 <= args.index < split.test.size:
            raise UsageError(
                f"--index {args.index} out of range for {split.test.size} test points"
            )
        row = split.test[args.index]
        x = dataset.features[row]
        true_label: int | None = int(dataset.labels[row])
    else:
        try:
            x = np.array([float(v) for v in args.x.split(",")])
        except ValueError:
            raise UsageError(f"--x must be comma-separated numbers, got {args.x!r}") from None
        if x.size != K:
            raise UsageError(f"--x has {x.size} entries, dataset has {K} scales")
        true_label = None

    if args.alloc == "uniform":
        plan = allocate_uniform(args.alpha, K)
    else:
        grid = default_size_curve_grid(args.alpha, K, calibs[0].n)
        curves = [
            estimate_size_curve(sc, cb, dataset.features[split.calib], labels, grid)
            for sc, cb in zip(scorers, calibs)
        ]
        plan = allocate_optimal(curves, args.alpha)

    scale_reports = []
    for scorer, calib, alpha_k in zip(scorers, calibs, plan.alphas):
        pvals = pvalue_matrix(scorer, calib, x.reshape(1, -1), labels)[0]
        pset = prediction_set(scorer, calib, x, labels, alpha_k)
        scale_reports.append(
            {
                "scale_id": scorer.scale_id,
                "alpha_k": alpha_k,
                "p_values": {str(lab): float(p) for lab, p in zip(labels.labels, pvals)},
                "members": list(pset.members),
            }
        )
    combined = multiscale_predict(scorers, calibs, plan, x, labels)

    if args.json:
        payload = {
            "alpha": args.alpha,
            "allocation": args.alloc,
            "alphas": list(plan.alphas),
            "x": [float(v) for v in x],
            "test_index": args.index,
            "true_label": true_label,
            "scales": scale_reports,
            "multiscale": {
                "members": list(combined.members),
                "alpha_used": combined.alpha_used,
            },
        }
        print(json.dumps(payload, indent=2, sort_keys=True))
    else:
        where = f"test index {args.index}" if args.index is not None else "feature literal"
        print(f"point ({where}): x = [{', '.join(format(v, '.6g') for v in x)}]")
        if true_label is not None:
            print(f"true label: {true_label}")
        print(f"allocation ({args.alloc}): alpha = {args.alpha:g}")
        for rep in scale_reports:
            pstr = ", ".join(f"{lab}: {p:.4f}" for lab, p in rep["p_values"].items())
            members = "{" + ", ".join(str(m) for m in rep["members"]) + "}"
            print(
                f"  scale {rep['scale_id']}: alpha_k = {rep['alpha_k']:.6g}, "
                f"p-values {{{pstr}}}, set {members}"
            )
        members = "{" + ", ".join(str(m) for m in combined.members) + "}"
        print(f"multiscale: set {members}")
    return 0


# --- study ------------------------------------------------------------------


def _study_common(cfg: dict[str, Any], args: argparse.Namespace, defaults: SynthConfig):
    seed = args.seed if args.seed is not None else _pop_int(cfg, "seed", 0)
    synth = _resolve_synth(
        {k: cfg[k] for k in _SYNTH_KEYS if k in cfg and k != "seed"}, None, defaults
    )
    fractions = tuple(cfg.get("split_fractions", (0.4, 0.3, 0.3)))
    train_cfg = _resolve_train(cfg)
    reps = cfg.get("replications")
    return seed, synth, fractions, train_cfg, reps


def cmd_study(args: argparse.Namespace) -> int:
    cfg = _load_config(args.config)
    out = _require_out_dir(args.out)
    common_keys = _SYNTH_KEYS + _TRAIN_KEYS + ("replications", "split_fractions")

    if args.study == "sweep":
        _check_keys(cfg, common_keys + ("alpha_grid", "allocation"), "sweep")
        seed, synth, fractions, train_cfg, reps = _study_common(cfg, args, SynthConfig(n_points=1000))
        study_cfg = SweepConfig(
            synth=synth,
            alpha_grid=tuple(cfg.get("alpha_grid", SweepConfig.alpha_grid)),
            allocation=cfg.get("allocation", "uniform"),
            n_replications=reps if reps is not None else 200,
            base_seed=seed,
            split_fractions=fractions,
            train=train_cfg,
        )
        resolved = _resolved_study_payload("sweep", study_cfg)
        atomic_write_text(os.path.join(out, "resolved_config.json"), _dump_json(resolved))
        result = run_coverage_sweep(study_cfg)
        atomic_write_text(os.path.join(out, "sweep.csv"), sweep_csv(result))
        sidecar = dict(resolved)
        sidecar["replication_seeds"] = list(result.replication_seeds)
        sidecar["reference_lines"] = {
            "total": [[a, 1.0 - a] for a in study_cfg.alpha_grid],
            "per_scale_uniform": [
                [a, 1.0 - a / synth.n_scales] for a in study_cfg.alpha_grid
            ],
        }
        atomic_write_text(os.path.join(out, "sweep_run.json"), _dump_json(sidecar))
        print(f"wrote {os.path.join(out, 'sweep.csv')}")
        return 0

    if args.study == "noise-table":
        _check_keys(
            cfg,
            common_keys + ("noise_levels", "alpha", "scorer", "test_grid_size"),
            "noise-table",
        )
        seed, synth, fractions, train_cfg, reps = _study_common(cfg, args, SynthConfig(n_points=1000))
        study_cfg = NoiseTableConfig(
            synth=synth,
            noise_levels=tuple(cfg.get("noise_levels", NoiseTableConfig.noise_levels)),
            alpha=float(cfg.get("alpha", 0.1)),
            n_replications=reps if reps is not None else 200,
            base_seed=seed,
            split_fractions=fractions,
            train=train_cfg,
            scorer=cfg.get("scorer", "logistic"),
            test_grid_size=_pop_int(cfg, "test_grid_size", 300),
        )
        resolved = _resolved_study_payload("noise-table", study_cfg)
        atomic_write_text(os.path.join(out, "resolved_config.json"), _dump_json(resolved))
        result = run_noise_table(study_cfg)
        atomic_write_text(os.path.join(out, "noise_table.csv"), noise_table_csv(result))
        sidecar = dict(resolved)
        sidecar["test_seeds"] = list(result.test_seeds)
        sidecar["replication_seeds"] = {
            k: list(v) for k, v in result.replication_seeds.items()
        }
        atomic_write_text(os.path.join(out, "noise_table_run.json"), _dump_json(sidecar))
        print(f"wrote {os.path.join(out, 'noise_table.csv')}")
        return 0

    if args.study == "dependence":
        _check_keys(cfg, common_keys + ("rho_grid", "alpha"), "dependence")
        defaults = SynthConfig(n_points=1000, n_scales=2, scale_weights=(1.0, 0.6))
        seed, synth, fractions, train_cfg, reps = _study_common(cfg, args, defaults)
        study_cfg = DependenceConfig(
            synth=synth,
            rho_grid=tuple(cfg.get("rho_grid", DependenceConfig.rho_grid)),
            alpha=float(cfg.get("alpha", 0.1)),
            n_replications=reps if reps is not None else 500,
            base_seed=seed,
            split_fractions=fractions,
            train=train_cfg,
        )
        resolved = _resolved_study_payload("dependence", study_cfg)
        atomic_write_text(os.path.join(out, "resolved_config.json"), _dump_json(resolved))
        result = run_dependence_study(study_cfg)
        atomic_write_text(os.path.join(out, "dependence.csv"), dependence_csv(result))
        sidecar = dict(resolved)
        sidecar["replication_seeds"] = {
            k: list(v) for k, v in result.replication_seeds.items()
        }
        atomic_write_text(os.path.join(out, "dependence_run.json"), _dump_json(sidecar))
        print(f"wrote {os.path.join(out, 'dependence.csv')}")
        return 0

    # asymptotic
    _check_keys(
        cfg,
        _SYNTH_KEYS + ("replications", "n_grid", "alpha", "test_grid_size"),
        "asymptotic",
    )
    seed = args.seed if args.seed is not None else _pop_int(cfg, "seed", 0)
    synth = _resolve_synth(
        {k: cfg[k] for k in _SYNTH_KEYS if k in cfg and k != "seed"},
        None,
        SynthConfig(n_points=1000),
    )
    reps = cfg.get("replications")
    study_cfg = AsymptoticConfig(
        synth=synth,
        n_grid=tuple(int(n) for n in cfg.get("n_grid", AsymptoticConfig.n_grid)),
        alpha=float(cfg.get("alpha", 0.1)),
        n_replications=reps if reps is not None else 30,
        base_seed=seed,
        test_grid_size=_pop_int(cfg, "test_grid_size", 200),
    )
    resolved = _resolved_study_payload("asymptotic", study_cfg)
    atomic_write_text(os.path.join(out, "resolved_config.json"), _dump_json(resolved))
    result = run_asymptotic_study(study_cfg)
    atomic_write_text(os.path.join(out, "asymptotic.csv"), asymptotic_csv(result))
    sidecar = dict(resolved)
    sidecar["test_seed"] = result.test_seed
    sidecar["replication_seeds"] = {k: list(v) for k, v in result.replication_seeds.items()}
    atomic_write_text(os.path.join(out, "asymptotic_run.json"), _dump_json(sidecar))
    print(f"wrote {os.path.join(out, 'asymptotic.csv')}")
    return 0


def _resolved_study_payload(study: str, study_cfg) -> dict[str, Any]:
    payload: dict[str, Any] = {"command": "study", "study": study}
    for key, value in asdict(study_cfg).items():
        if key == "synth":
            payload["synth"] = _synth_dict(study_cfg.synth)
        elif key == "train":
            payload["train"] = dict(value)
        elif isinstance(value, tuple):
            payload[key] = list(value)
        else:
            payload[key] = value
    return payload


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mscp", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_gen = sub.add_parser("generate", help="generate a synthetic dataset CSV")
    p_gen.add_argument("--config", default=None, help="JSON config path")
    p_gen.add_argument("--seed", type=int, default=None, help="override config seed")
    p_gen.add_argument("--out", required=True, help="existing output directory")
    p_gen.set_defaults(func=cmd_generate)

    p_train = sub.add_parser("train", help="train per-scale logistic models")
    p_train.add_argument("--config", default=None)
    p_train.add_argument("--dataset", default=None, help="dataset CSV path")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", required=True)
    p_train.set_defaults(func=cmd_train)

    p_pred = sub.add_parser("predict", help="per-scale and multiscale sets for one point")
    p_pred.add_argument("--dataset", required=True, help="dataset CSV path")
    p_pred.add_argument("--alpha", type=float, required=True)
    p_pred.add_argument("--alloc", choices=("uniform", "optimal"), default="uniform")
    p_pred.add_argument("--index", type=int, default=None, help="test-split point index")
    p_pred.add_argument("--x", default=None, help="comma-separated feature literal")
    p_pred.add_argument("--seed", type=int, default=None)
    p_pred.add_argument("--config", default=None)
    p_pred.add_argument("--json", action="store_true", help="machine-readable output")
    p_pred.set_defaults(func=cmd_predict)

    p_study = sub.add_parser("study", help="run a Monte Carlo study")
    p_study.add_argument("study", choices=_STUDIES, metavar="study",
                         help=f"one of: {', '.join(_STUDIES)}")
    p_study.add_argument("--config", default=None)
    p_study.add_argument("--seed", type=int, default=None)
    p_study.add_argument("--out", required=True)
    p_study.set_defaults(func=cmd_study)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (MscpError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
