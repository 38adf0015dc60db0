"""Data-dependent detectors: class-conditional Mahalanobis distance,
Local Outlier Factor, and an isolation forest built from scratch.

All three fit on in-distribution training features and emit scores oriented
larger = more in-distribution (raw LOF and isolation-forest anomaly measures
are negated on the way out).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist

from .core import Rng
from .errors import (
    DegenerateDensity,
    DimensionMismatch,
    EmptyClass,
    InvalidConfig,
    InvalidK,
    PerturbationUnsupported,
    SingularCovariance,
)

MAHALANOBIS_DEFAULT_REG_SCALE = 1e-6  # times trace(cov)/d


@dataclass(frozen=True)
class MahalanobisModel:
    """Class-conditional means with a shared, ridge-regularized precision."""

    means: np.ndarray      # n_labels x d
    precision: np.ndarray  # d x d, symmetric positive definite
    reg: float


def fit_mahalanobis(features: np.ndarray, labels: np.ndarray,
                    reg: float | None = None) -> MahalanobisModel:
    """Fit per-label means and a covariance pooled over every
    (sample, positive label) pair; multi-label samples contribute once per
    positive label.

    ``reg`` is the ridge added to the covariance before inversion; by
    default 1e-6 * trace(cov)/d, because toy feature dimensions can be
    rank-deficient.
    """
    feats = np.asarray(features, dtype=np.float64)
    labs = np.asarray(labels, dtype=np.float64)
    if feats.ndim != 2 or labs.ndim != 2 or feats.shape[0] != labs.shape[0]:
        raise DimensionMismatch("features and labels must be 2-D with equal rows")
    if reg is not None and reg < 0:
        raise InvalidConfig(f"reg must be >= 0, got {reg}")

    n_labels = labs.shape[1]
    d = feats.shape[1]
    means = np.empty((n_labels, d))
    cov = np.zeros((d, d))
    total_pairs = 0
    for i in range(n_labels):
        pos = labs[:, i] == 1.0
        if not pos.any():
            raise EmptyClass(f"label {i} has no positive instances")
        means[i] = feats[pos].mean(axis=0)
        centered = feats[pos] - means[i]
        cov += centered.T @ centered
        total_pairs += int(pos.sum())
    cov /= total_pairs

    if reg is None:
        reg = MAHALANOBIS_DEFAULT_REG_SCALE * float(np.trace(cov)) / d
    regularized = cov + reg * np.eye(d)
    try:
        chol = scipy.linalg.cholesky(regularized, lower=True)
    except scipy.linalg.LinAlgError as exc:
        raise SingularCovariance(f"covariance not positive definite (reg={reg})") from exc
    precision = scipy.linalg.cho_solve((chol, True), np.eye(d))
    precision = 0.5 * (precision + precision.T)
    return MahalanobisModel(means=means, precision=precision, reg=float(reg))


def mahalanobis_labelwise(model: MahalanobisModel, features: np.ndarray) -> np.ndarray:
    """Negative squared Mahalanobis distance to each label mean. Entries are
    <= 0, with 0 exactly at the mean."""
    feats = np.asarray(features, dtype=np.float64)
    if feats.ndim != 2 or feats.shape[1] != model.means.shape[1]:
        raise DimensionMismatch(
            f"features must be (n, {model.means.shape[1]}), got {feats.shape}"
        )
    out = np.empty((feats.shape[0], model.means.shape[0]))
    for i, mu in enumerate(model.means):
        diff = feats - mu
        out[:, i] = -np.einsum("nd,dk,nk->n", diff, model.precision, diff)
    return out


def mahalanobis_score(model: MahalanobisModel, features: np.ndarray,
                      agg: str = "max", epsilon: float = 0.0,
                      input_model=None) -> np.ndarray:
    """Aggregated Mahalanobis score with optional input perturbation.

    With epsilon > 0 the features are shifted by epsilon * sign of the
    gradient of the top label's score (gradient ascent; the analytic
    gradient is -2 * precision @ (x - mu)). Perturbation assumes features
    are raw model inputs (identity feature map), so it requires the harness
    model to be passed as evidence of that setup.
    """
    if agg not in ("max", "sum"):
        raise InvalidConfig(f"agg must be 'max' or 'sum', got {agg!r}")
    if epsilon < 0:
        raise InvalidConfig(f"epsilon must be >= 0, got {epsilon}")
    feats = np.asarray(features, dtype=np.float64)
    if epsilon > 0:
        if input_model is None:
            raise PerturbationUnsupported(
                "Mahalanobis perturbation requires features that are model "
                "inputs (pass the harness model)"
            )
        top = np.argmax(mahalanobis_labelwise(model, feats), axis=1)
        grad = -2.0 * (feats - model.means[top]) @ model.precision
        feats = feats + epsilon * np.sign(grad)

    from .scoring import aggregate

    return aggregate(mahalanobis_labelwise(model, feats), agg)


@dataclass(frozen=True)
class LofIndex:
    """Reference features with precomputed k-distances and local
    reachability densities."""

    train: np.ndarray
    k: int
    kdist: np.ndarray
    lrd: np.ndarray


def fit_lof(train: np.ndarray, k: int = 20) -> LofIndex:
    """Precompute neighborhood statistics for classical LOF with Euclidean
    distance. Neighbor sets include every point tied at the k-th distance."""
    feats = np.asarray(train, dtype=np.float64)
    if feats.ndim != 2:
        raise DimensionMismatch("train features must be 2-D")
    n = feats.shape[0]
    if not 1 <= k < n:
        raise InvalidK(f"k must satisfy 1 <= k < {n}, got {k}")

    dists = cdist(feats, feats)
    np.fill_diagonal(dists, np.inf)  # a training point is not its own neighbor
    kdist = np.partition(dists, k - 1, axis=1)[:, k - 1]

    lrd = np.empty(n)
    for a in range(n):
        neigh = np.nonzero(dists[a] <= kdist[a])[0]
        reach = np.maximum(kdist[neigh], dists[a, neigh])
        mean_reach = reach.mean()
        lrd[a] = np.inf if mean_reach == 0.0 else 1.0 / mean_reach
    return LofIndex(train=feats, k=k, kdist=kdist, lrd=lrd)


def lof_raw(index: LofIndex, query: np.ndarray) -> np.ndarray:
    """LOF values for query points against the fitted reference set.

    A query whose whole neighborhood coincides with it has infinite local
    reachability density; its LOF is defined as 1 (maximally inlier).
    """
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 2 or q.shape[1] != index.train.shape[1]:
        raise DimensionMismatch(
            f"query must be (n, {index.train.shape[1]}), got {q.shape}"
        )
    dists = cdist(q, index.train)
    out = np.empty(q.shape[0])
    for r in range(q.shape[0]):
        kd = np.partition(dists[r], index.k - 1)[index.k - 1]
        neigh = np.nonzero(dists[r] <= kd)[0]
        reach = np.maximum(index.kdist[neigh], dists[r, neigh])
        mean_reach = reach.mean()
        if mean_reach == 0.0:
            out[r] = 1.0
            continue
        neighbor_lrd = index.lrd[neigh]
        if not np.all(np.isfinite(neighbor_lrd)):
            raise DegenerateDensity(
                "reference set has >= k duplicated points near the query"
            )
        out[r] = neighbor_lrd.mean() * mean_reach  # mean(lrd_b) / lrd_q
    return out


def lof_score(index: LofIndex, query: np.ndarray) -> np.ndarray:
    """Negated LOF, oriented larger = more in-distribution."""
    return -lof_raw(index, query)


@dataclass(frozen=True)
class _Leaf:
    size: int


@dataclass(frozen=True)
class _Split:
    dim: int
    value: float
    left: "_Leaf | _Split"
    right: "_Leaf | _Split"


@dataclass(frozen=True)
class IsolationForestModel:
    trees: tuple
    subsample: int
    n_trees: int
    seed: int


def _harmonic(m: int) -> float:
    return float(np.sum(1.0 / np.arange(1, m + 1))) if m >= 1 else 0.0


def average_path_length(n: int) -> float:
    """Expected unsuccessful-search path length c(n) = 2 H(n-1) - 2(n-1)/n,
    with the exact harmonic number; c(1) = c(0) = 0."""
    if n <= 1:
        return 0.0
    return 2.0 * _harmonic(n - 1) - 2.0 * (n - 1) / n


def _build_tree(points: np.ndarray, depth: int, limit: int,
                gen: np.random.Generator):
    n = points.shape[0]
    if n <= 1 or depth >= limit:
        return _Leaf(n)
    lo = points.min(axis=0)
    hi = points.max(axis=0)
    splittable = np.nonzero(hi > lo)[0]
    if splittable.size == 0:
        return _Leaf(n)
    dim = int(splittable[gen.integers(splittable.size)])
    value = float(gen.uniform(lo[dim], hi[dim]))
    mask = points[:, dim] < value
    return _Split(
        dim=dim,
        value=value,
        left=_build_tree(points[mask], depth + 1, limit, gen),
        right=_build_tree(points[~mask], depth + 1, limit, gen),
    )


def fit_iforest(train: np.ndarray, n_trees: int = 100,
                subsample: int | None = None, rng: Rng = Rng(0)) -> IsolationForestModel:
    """Isolation forest: each tree is grown on a uniform random subsample
    with uniform random axis-aligned splits, depth-limited to
    ceil(log2(subsample)). Each tree owns an independently split RNG stream,
    so construction order (or parallelism) cannot change the result."""
    feats = np.asarray(train, dtype=np.float64)
    if feats.ndim != 2:
        raise DimensionMismatch("train features must be 2-D")
    n = feats.shape[0]
    if subsample is None:
        subsample = min(256, n)
    if n_trees < 1 or not 2 <= subsample <= n:
        raise InvalidConfig(
            f"need n_trees >= 1 and 2 <= subsample <= {n}, got "
            f"n_trees={n_trees} subsample={subsample}"
        )
    limit = math.ceil(math.log2(subsample))
    trees = []
    for t in range(n_trees):
        gen = rng.split(f"tree-{t}").generator()
        idx = gen.choice(n, size=subsample, replace=False)
        trees.append(_build_tree(feats[idx], 0, limit, gen))
    return IsolationForestModel(trees=tuple(trees), subsample=subsample,
                                n_trees=n_trees, seed=rng.seed)


def _path_lengths(node, points: np.ndarray, idx: np.ndarray, depth: int,
                  out: np.ndarray) -> None:
    if isinstance(node, _Leaf):
        out[idx] = depth + average_path_length(node.size)
        return
    mask = points[idx, node.dim] < node.value
    _path_lengths(node.left, points, idx[mask], depth + 1, out)
    _path_lengths(node.right, points, idx[~mask], depth + 1, out)


def iforest_anomaly(model: IsolationForestModel, query: np.ndarray) -> np.ndarray:
    """Anomaly measure s = 2^(-E[path length] / c(subsample)) in (0, 1);
    values near 1 are anomalous."""
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 2:
        raise DimensionMismatch("query must be 2-D")
    total = np.zeros(q.shape[0])
    all_idx = np.arange(q.shape[0])
    lengths = np.empty(q.shape[0])
    for tree in model.trees:
        _path_lengths(tree, q, all_idx, 0, lengths)
        total += lengths
    expected = total / model.n_trees
    return np.power(2.0, -expected / average_path_length(model.subsample))


def iforest_score(model: IsolationForestModel, query: np.ndarray) -> np.ndarray:
    """Negated anomaly measure, oriented larger = more in-distribution."""
    return -iforest_anomaly(model, query)


@dataclass(frozen=True)
class FittedDetector:
    """Immutable fitted state for the data-dependent scorers, plus an
    optional calibrated acceptance threshold."""

    mahalanobis: MahalanobisModel | None = None
    lof: LofIndex | None = None
    iforest: IsolationForestModel | None = None
    threshold: float | None = None
