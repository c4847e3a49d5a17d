"""Local objectives, synthetic data and mini-batch gradients.

Two objectives are supported, both averaged over a node's shard:

* least squares, ``(1/2 m_i) * sum((<a, w> - b)^2)``
* ridge-regularised logistic regression,
  ``(1/m_i) * sum(log(1 + exp(<a, w>)) - b <a, w>) + ridge/2 * ||w||^2``
"""

from __future__ import annotations

import csv
import enum
import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from pame.errors import DimensionMismatch, EmptyBatch, InvalidSize
from pame.linalg import largest_eigenvalue_psd
from pame.rng import Purpose, stream

EXHAUSTIVE_SUBSET_LIMIT = 31

__all__ = [
    "Dataset",
    "GroundTruth",
    "LossKind",
    "LossSpec",
    "epsilon_estimate",
    "gen_linear_regression",
    "gen_logistic",
    "gradient",
    "lipschitz_constant",
    "load_datasets",
    "loss_value",
    "save_datasets",
]


class LossKind(str, enum.Enum):
    LINEAR_REGRESSION = "LinearRegression"
    LOGISTIC = "Logistic"


@dataclass(frozen=True)
class LossSpec:
    kind: LossKind = LossKind.LINEAR_REGRESSION
    ridge: float = 0.001

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", LossKind(self.kind))
        if self.ridge < 0:
            raise ValueError(f"ridge must be non-negative, got {self.ridge}")


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    targets: np.ndarray
    node_id: int = 0

    def __post_init__(self) -> None:
        a = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        b = np.asarray(self.targets, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "features", a)
        object.__setattr__(self, "targets", b)
        if a.shape[0] < 1 or a.shape[0] != b.shape[0]:
            raise InvalidSize(f"need >= 1 aligned rows, got {a.shape[0]} features and {b.shape[0]} targets")

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True, eq=False)
class GroundTruth:
    w_star: np.ndarray
    sparsity: float
    noise_scale: float = 0.0
    extra: dict = field(default_factory=dict)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _sparse_truth(n: int, sparsity: float, rng: np.random.Generator) -> np.ndarray:
    if not 0 < sparsity <= 1:
        raise InvalidSize(f"sparsity must lie in (0, 1], got {sparsity}")
    k = max(1, math.ceil(sparsity * n - 1e-9))
    support = rng.choice(n, size=k, replace=False)
    w = np.zeros(n)
    w[support] = rng.uniform(0.5, 2.0, size=k) * rng.choice([-1.0, 1.0], size=k)
    return w


def _check_sizes(n: int, samples_per_node: int, m: int) -> None:
    if n < 1 or samples_per_node < 1 or m < 1:
        raise InvalidSize(f"n, samples_per_node and m must be positive, got {n}, {samples_per_node}, {m}")


def gen_linear_regression(
    n: int,
    samples_per_node: int,
    m: int,
    sparsity: float = 0.01,
    seed: int = 0,
    noise_scale: float = 0.5,
    heterogeneous: bool = False,
) -> tuple[GroundTruth, list[Dataset]]:
    """Sparse least-squares data, ``b = <a, w*> + noise_scale * e``.

    With ``heterogeneous=True`` node ``i``'s features are scaled by
    ``1 + 0.5 * i / m``.
    """
    _check_sizes(n, samples_per_node, m)
    w_star = _sparse_truth(n, sparsity, stream(seed, Purpose.DATA, 0))
    shards = []
    for i in range(m):
        rng = stream(seed, Purpose.DATA, 1, i)
        a = rng.standard_normal((samples_per_node, n))
        e = rng.standard_normal(samples_per_node)
        if heterogeneous:
            a *= 1.0 + 0.5 * i / m
        shards.append(Dataset(a, a @ w_star + noise_scale * e, node_id=i))
    return GroundTruth(w_star, sparsity, noise_scale), shards


def gen_logistic(
    n: int,
    samples_per_node: int,
    m: int,
    sparsity: float = 0.5,
    seed: int = 0,
    label_skew: int | None = None,
) -> tuple[GroundTruth, list[Dataset]]:
    """Logistic data with ``b ~ Bernoulli(sigmoid(<a, w*>))``.

    ``label_skew=None`` shards i.i.d. ``label_skew=c`` deals labels in sorted
    blocks: node ``i`` only receives the ``c`` label values starting at
    ``floor(2 i / m)``, so every shard holds at most ``c`` distinct labels.
    """
    _check_sizes(n, samples_per_node, m)
    if label_skew is not None and label_skew < 1:
        raise InvalidSize(f"label_skew must be >= 1, got {label_skew}")
    w_star = _sparse_truth(n, sparsity, stream(seed, Purpose.DATA, 0))
    shards = []
    for i in range(m):
        rng = stream(seed, Purpose.DATA, 1, i)
        if label_skew is None or label_skew >= 2:
            allowed = (0.0, 1.0)
        else:
            allowed = (float((2 * i) // m),)
        rows: list[np.ndarray] = []
        labels: list[np.ndarray] = []
        have = 0
        while have < samples_per_node:
            a = rng.standard_normal((samples_per_node, n))
            b = (rng.random(samples_per_node) < _sigmoid(a @ w_star)).astype(np.float64)
            keep = np.isin(b, allowed)
            rows.append(a[keep])
            labels.append(b[keep])
            have += int(keep.sum())
        a = np.concatenate(rows)[:samples_per_node]
        b = np.concatenate(labels)[:samples_per_node]
        shards.append(Dataset(a, b, node_id=i))
    truth = GroundTruth(w_star, sparsity, extra={"label_skew": label_skew})
    return truth, shards


def _rows(ds: Dataset, batch: Sequence[int] | np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    if batch is None:
        return ds.features, ds.targets
    idx = np.asarray(batch, dtype=np.int64)
    if idx.size == 0:
        raise EmptyBatch("batch is empty")
    if idx.min() < 0 or idx.max() >= ds.size:
        raise EmptyBatch(f"batch indices out of range [0, {ds.size})")
    return ds.features[idx], ds.targets[idx]


def _check_dim(ds: Dataset, w: np.ndarray) -> None:
    if w.shape != (ds.dim,):
        raise DimensionMismatch(f"w has shape {w.shape}, dataset has {ds.dim} features")


def loss_value(spec: LossSpec, ds: Dataset, w: np.ndarray, batch=None) -> float:
    w = np.asarray(w, dtype=np.float64)
    _check_dim(ds, w)
    a, b = _rows(ds, batch)
    z = a @ w
    if spec.kind is LossKind.LINEAR_REGRESSION:
        return float(0.5 * np.mean((z - b) ** 2))
    return float(np.mean(np.logaddexp(0.0, z) - b * z) + 0.5 * spec.ridge * (w @ w))


def gradient(spec: LossSpec, ds: Dataset, w: np.ndarray, batch=None) -> np.ndarray:
    """Gradient of the loss restricted to ``batch`` (``None`` = full shard)."""
    w = np.asarray(w, dtype=np.float64)
    _check_dim(ds, w)
    a, b = _rows(ds, batch)
    z = a @ w
    if spec.kind is LossKind.LINEAR_REGRESSION:
        return a.T @ (z - b) / len(b)
    return a.T @ (_sigmoid(z) - b) / len(b) + spec.ridge * w


def lipschitz_constant(spec: LossSpec, ds: Dataset) -> float:
    """Gradient Lipschitz constant of the full-shard loss.

    Exact for least squares; an upper bound (curvature of the log-loss is at
    most 1/4) for logistic.
    """
    a = ds.features
    gram = a @ a.T if a.shape[0] <= a.shape[1] else a.T @ a
    top = largest_eigenvalue_psd(gram / ds.size)
    if spec.kind is LossKind.LINEAR_REGRESSION:
        return top
    return 0.25 * top + spec.ridge


def _batch_pairs(size: int):
    subsets = [
        np.array(c)
        for r in range(1, size + 1)
        for c in itertools.combinations(range(size), r)
    ]
    return list(itertools.combinations(subsets, 2))


def _random_batch(size: int, rng: np.random.Generator) -> np.ndarray:
    k = int(rng.integers(1, size + 1))
    return np.sort(rng.choice(size, size=k, replace=False))


def _linear_sup(ds: Dataset, b1: np.ndarray, b2: np.ndarray, radius: float) -> float:
    # grad_B(w) = G_B w - h_B is affine, so the sup of each coordinate of the
    # difference over the box ||w||_inf <= radius is radius*||row||_1 + |offset|.
    def parts(batch):
        a, b = ds.features[batch], ds.targets[batch]
        return a.T @ a / len(batch), a.T @ b / len(batch)

    g1, h1 = parts(b1)
    g2, h2 = parts(b2)
    return float(np.max(radius * np.abs(g1 - g2).sum(axis=1) + np.abs(h1 - h2)))


def epsilon_estimate(
    spec: LossSpec,
    datasets: Sequence[Dataset],
    delta: float,
    trials: int = 200,
    seed: int = 0,
) -> float:
    """Estimate of the largest batch-to-batch gradient gap on ``||w||_inf <= 2 delta``.

    Shards with at most 5 samples have all batch pairs enumerated; larger
    shards draw ``trials`` random pairs (uniform size, then uniform subset).
    For least squares the sup over ``w`` is taken in closed form; for
    logistic each trial also draws ``w`` uniformly from the box. The estimate
    is a running maximum, so a longer run never lowers it.
    """
    if delta <= 0 or trials < 1:
        raise InvalidSize(f"need delta > 0 and trials >= 1, got {delta}, {trials}")
    radius = 2.0 * delta
    best = 0.0
    for ds in datasets:
        if ds.size == 1:
            continue
        rng = stream(seed, Purpose.EPSILON, ds.node_id)
        exhaustive = (2 ** ds.size - 1) <= EXHAUSTIVE_SUBSET_LIMIT
        pairs = _batch_pairs(ds.size) if exhaustive else None
        if spec.kind is LossKind.LINEAR_REGRESSION:
            draws = pairs if exhaustive else (
                (_random_batch(ds.size, rng), _random_batch(ds.size, rng)) for _ in range(trials)
            )
            for b1, b2 in draws:
                best = max(best, _linear_sup(ds, b1, b2, radius))
            continue
        for _ in range(trials):
            if exhaustive:
                b1, b2 = pairs[int(rng.integers(len(pairs)))]
            else:
                b1, b2 = _random_batch(ds.size, rng), _random_batch(ds.size, rng)
            w = rng.uniform(-radius, radius, size=ds.dim)
            gap = gradient(spec, ds, w, b1) - gradient(spec, ds, w, b2)
            best = max(best, float(np.max(np.abs(gap))))
    return best


def save_datasets(directory: str | Path, datasets: Sequence[Dataset], truth: GroundTruth | None = None) -> Path:
    """One CSV per node plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for ds in datasets:
        name = f"node_{ds.node_id:04d}.csv"
        with open(directory / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"feature_{j}" for j in range(ds.dim)] + ["target"])
            for row, target in zip(ds.features, ds.targets):
                writer.writerow([repr(float(v)) for v in row] + [repr(float(target))])
        files.append({"node_id": ds.node_id, "file": name, "rows": ds.size})
    manifest = {"n": datasets[0].dim, "m": len(datasets), "shards": files}
    if truth is not None:
        manifest["w_star"] = truth.w_star.tolist()
        manifest["sparsity"] = truth.sparsity
        manifest["noise_scale"] = truth.noise_scale
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def load_datasets(directory: str | Path) -> tuple[list[Dataset], GroundTruth | None]:
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    shards = []
    for entry in manifest["shards"]:
        data = np.loadtxt(directory / entry["file"], delimiter=",", skiprows=1, ndmin=2)
        shards.append(Dataset(data[:, :-1], data[:, -1], node_id=entry["node_id"]))
    truth = None
    if "w_star" in manifest:
        truth = GroundTruth(np.array(manifest["w_star"]), manifest["sparsity"], manifest["noise_scale"])
    return shards, truth
