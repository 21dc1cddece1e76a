"""Synthetic multi-scale classification data with a closed-form conditional.

Each scale contributes one Gaussian feature; a weighted sum of the features
plus Gaussian noise forms a latent score, and labels are equiprobable
quantile bins of that latent. Because the latent is Gaussian given the
features, the true conditional class distribution is available in closed
form, which the oracle scorer and the asymptotic study rely on.

A dependence knob rho in [0, 1] makes the higher-scale features share a
fraction of the first feature's randomness: rho = 0 gives independent
features, rho = 1 makes all features identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.special import ndtr, ndtri

from .conformal import LabelSpace
from .errors import InvalidConfig, ParseError

_MAX_SEED = 2**64


def default_scale_weights(n_scales: int) -> tuple[float, ...]:
    """Informativeness decreasing with scale index: (1.0, 0.6, 0.3, 0.15, ...)."""
    weights = []
    for k in range(n_scales):
        if k == 0:
            weights.append(1.0)
        elif k == 1:
            weights.append(0.6)
        else:
            weights.append(0.3 * 0.5 ** (k - 2))
    return tuple(weights)


@dataclass(frozen=True)
class SynthConfig:
    """Parameters of the generative process.

    ``scale_weights`` defaults to :func:`default_scale_weights`, so the
    first scale is the most informative. ``dependence`` is the shared-noise
    fraction between the first feature and every later one.
    """

    n_points: int
    n_scales: int = 3
    n_classes: int = 4
    noise_sd: float = 0.1
    scale_weights: tuple[float, ...] | None = None
    dependence: float = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.n_scales, int) or self.n_scales < 1:
            raise InvalidConfig(f"n_scales must be a positive integer, got {self.n_scales!r}")
        if self.scale_weights is None:
            object.__setattr__(self, "scale_weights", default_scale_weights(self.n_scales))
        else:
            object.__setattr__(
                self, "scale_weights", tuple(float(w) for w in self.scale_weights)
            )
        if not isinstance(self.n_classes, int) or self.n_classes < 2:
            raise InvalidConfig(f"n_classes must be an integer >= 2, got {self.n_classes!r}")
        if not isinstance(self.n_points, int) or self.n_points < self.n_scales + self.n_classes:
            raise InvalidConfig(
                f"n_points must be an integer >= n_scales + n_classes, got {self.n_points!r}"
            )
        if not (isinstance(self.noise_sd, (int, float)) and self.noise_sd >= 0.0):
            raise InvalidConfig(f"noise_sd must be >= 0, got {self.noise_sd!r}")
        if len(self.scale_weights) != self.n_scales:
            raise InvalidConfig(
                f"scale_weights has {len(self.scale_weights)} entries for "
                f"{self.n_scales} scales"
            )
        if sum(abs(w) for w in self.scale_weights) <= 0.0:
            raise InvalidConfig("scale_weights must not all be zero")
        if not (isinstance(self.dependence, (int, float)) and 0.0 <= self.dependence <= 1.0):
            raise InvalidConfig(f"dependence must lie in [0, 1], got {self.dependence!r}")
        if not isinstance(self.seed, int) or not 0 <= self.seed < _MAX_SEED:
            raise InvalidConfig(f"seed must be an integer in [0, 2^64), got {self.seed!r}")

    def label_space(self) -> LabelSpace:
        return LabelSpace.of_size(self.n_classes)


@dataclass(frozen=True)
class Dataset:
    """Generated features (one column per scale) and integer labels."""

    features: np.ndarray = field(repr=False)
    labels: np.ndarray = field(repr=False)
    config: SynthConfig | None = None

    def __post_init__(self) -> None:
        X = np.asarray(self.features, dtype=float)
        y = np.asarray(self.labels, dtype=int)
        if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
            raise InvalidConfig("features must be (n, K) with n matching labels")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)

    @property
    def n_points(self) -> int:
        return int(self.features.shape[0])

    @property
    def n_scales(self) -> int:
        return int(self.features.shape[1])

    def label_space(self) -> LabelSpace:
        if self.config is not None:
            return self.config.label_space()
        return LabelSpace.of_size(int(self.labels.max()) + 1)


@dataclass(frozen=True)
class SplitIndices:
    """Disjoint train/calibration/test row indices covering the dataset."""

    train: np.ndarray = field(repr=False)
    calib: np.ndarray = field(repr=False)
    test: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        parts = []
        for name in ("train", "calib", "test"):
            idx = np.asarray(getattr(self, name), dtype=int)
            if idx.size == 0:
                raise InvalidConfig(f"{name} split is empty")
            idx.setflags(write=False)
            object.__setattr__(self, name, idx)
            parts.append(idx)
        combined = np.concatenate(parts)
        if np.unique(combined).size != combined.size:
            raise InvalidConfig("split indices overlap")


def latent_sd(config: SynthConfig) -> float:
    """Marginal standard deviation of the latent score (features + noise)."""
    w = np.asarray(config.scale_weights, dtype=float)
    rho = float(config.dependence)
    tail = w[1:]
    shared = (w[0] + rho * tail.sum()) ** 2
    independent = (1.0 - rho**2) * float((tail**2).sum())
    return math.sqrt(shared + independent + config.noise_sd**2)


def bin_edges(config: SynthConfig) -> np.ndarray:
    """Interior label-bin edges: latent quantiles at j/m, j = 1..m-1."""
    m = config.n_classes
    return latent_sd(config) * ndtri(np.arange(1, m) / m)


def generate_dataset(config: SynthConfig) -> Dataset:
    """Draw the features, latent, and quantile-binned labels. Deterministic per seed."""
    rng = np.random.default_rng(config.seed)
    n, K = config.n_points, config.n_scales
    rho = float(config.dependence)
    X = np.empty((n, K))
    X[:, 0] = rng.standard_normal(n)
    if K > 1:
        eps = rng.standard_normal((n, K - 1))
        X[:, 1:] = rho * X[:, [0]] + math.sqrt(1.0 - rho**2) * eps
    noise = rng.standard_normal(n)
    z = X @ np.asarray(config.scale_weights) + config.noise_sd * noise
    y = np.digitize(z, bin_edges(config))
    return Dataset(features=X, labels=y, config=config)


def split_dataset(
    n: int, fractions: Sequence[float], seed: int
) -> SplitIndices:
    """Seeded shuffle split into train/calibration/test by cumulative fractions."""
    fracs = tuple(float(f) for f in fractions)
    if len(fracs) != 3 or any(f <= 0.0 for f in fracs):
        raise InvalidConfig(f"need three positive fractions, got {fractions!r}")
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise InvalidConfig(f"fractions sum to {sum(fracs)!r}, expected 1.0")
    perm = np.random.default_rng(seed).permutation(n)
    cut1 = int(round(fracs[0] * n))
    cut2 = int(round((fracs[0] + fracs[1]) * n))
    if not 0 < cut1 < cut2 < n:
        raise InvalidConfig(f"fractions {fractions!r} leave an empty split at n={n}")
    return SplitIndices(train=perm[:cut1], calib=perm[cut1:cut2], test=perm[cut2:])


def oracle_conditional(config: SynthConfig, x: np.ndarray) -> np.ndarray:
    """True class probabilities given the full feature vector.

    Given x, the latent is Gaussian with mean ``sum_k w_k x_k`` and the
    configured noise standard deviation, so class probabilities are CDF
    differences at the label-bin edges. With zero noise the vector is
    one-hot. Accepts a single (K,) vector or an (n, K) batch.
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    if single:
        X = X[None, :]
    if X.shape[1] != config.n_scales:
        raise InvalidConfig(
            f"feature vector has {X.shape[1]} entries for {config.n_scales} scales"
        )
    mu = X @ np.asarray(config.scale_weights)
    edges = bin_edges(config)
    m = config.n_classes
    if config.noise_sd == 0.0:
        bins = np.digitize(mu, edges)
        probs = np.zeros((X.shape[0], m))
        probs[np.arange(X.shape[0]), bins] = 1.0
    else:
        cdf = np.empty((X.shape[0], m + 1))
        cdf[:, 0] = 0.0
        cdf[:, -1] = 1.0
        cdf[:, 1:-1] = ndtr((edges[None, :] - mu[:, None]) / config.noise_sd)
        probs = np.diff(cdf, axis=1)
    return probs[0] if single else probs


# --- CSV interchange ----------------------------------------------------
# Header x1,...,xK,label; floats printed with 17 significant digits so a
# round trip reproduces the exact same doubles.


def write_dataset_csv(dataset: Dataset, path: str) -> None:
    K = dataset.n_scales
    lines = [",".join([f"x{k + 1}" for k in range(K)] + ["label"])]
    for row, lab in zip(dataset.features, dataset.labels):
        lines.append(",".join(format(v, ".17g") for v in row) + f",{int(lab)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_dataset_csv(path: str) -> Dataset:
    """Parse a dataset CSV; malformed rows raise ParseError with a line number."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ParseError(f"{path}: empty file")
    header = lines[0].split(",")
    if header[-1] != "label" or any(
        name != f"x{k + 1}" for k, name in enumerate(header[:-1])
    ):
        raise ParseError(f"{path}:1: bad header {lines[0]!r}")
    K = len(header) - 1
    if K < 1:
        raise ParseError(f"{path}:1: no feature columns")
    feats, labs = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line:
            continue
        cells = line.split(",")
        if len(cells) != K + 1:
            raise ParseError(f"{path}:{lineno}: expected {K + 1} columns, got {len(cells)}")
        try:
            feats.append([float(c) for c in cells[:-1]])
            labs.append(int(cells[-1]))
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from None
    if not feats:
        raise ParseError(f"{path}: no data rows")
    return Dataset(features=np.array(feats), labels=np.array(labs), config=None)


def with_seed(config: SynthConfig, seed: int) -> SynthConfig:
    """Copy of the config with a different seed."""
    return replace(config, seed=seed)
