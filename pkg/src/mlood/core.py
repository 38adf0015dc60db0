"""Shared data model: validated matrices, datasets, score specs, seeded RNG.

The matrix carrier throughout the toolkit is a 2-D float64 ``numpy.ndarray``
marked read-only. ``matrix_new`` is the validating constructor; everything
built on top (logits, features, labels, inputs) goes through it or produces
plain float64 arrays from pure operations.

Score vectors are 1-D float64 arrays with a fixed orientation: larger means
more in-distribution. Every scorer in this package emits that orientation.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    InvalidConfig,
    InvalidK,
    InvalidSpec,
    NonFiniteValue,
)

# Bases producing one score per (sample, label); combined with an aggregator.
LABELWISE_BASES = ("logit", "sigmoid_prob", "odin_prob", "energy", "mahalanobis")
# Bases producing one score per sample directly; no aggregator applies.
GLOBAL_BASES = ("msp", "lof", "iforest")

AGGREGATORS = ("max", "sum", "topk")


def matrix_new(rows: int, cols: int, data: Sequence[float] | np.ndarray) -> np.ndarray:
    """Build a validated rows x cols float64 matrix from row-major data.

    Raises DimensionMismatch if the data length is wrong and NonFiniteValue
    if any entry is NaN or infinite. The returned array is read-only.
    """
    if rows < 0 or cols < 0:
        raise DimensionMismatch(f"negative shape ({rows}, {cols})")
    arr = np.asarray(data, dtype=np.float64).reshape(-1)
    if arr.size != rows * cols:
        raise DimensionMismatch(
            f"expected {rows * cols} values for a {rows}x{cols} matrix, got {arr.size}"
        )
    arr = arr.reshape(rows, cols).copy()
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("matrix entries must be finite")
    arr.flags.writeable = False
    return arr


def as_matrix(data: np.ndarray) -> np.ndarray:
    """Validate an existing 2-D array through the same checks as matrix_new."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionMismatch(f"expected a 2-D array, got ndim={arr.ndim}")
    return matrix_new(arr.shape[0], arr.shape[1], arr)


def row(m: np.ndarray, i: int) -> np.ndarray:
    """Copy of row i of a matrix."""
    if not 0 <= i < m.shape[0]:
        raise IndexOutOfRange(f"row {i} out of range for {m.shape[0]} rows")
    return m[i].copy()


@dataclass(frozen=True)
class LabeledDataset:
    """Paired inputs (N x d) and binary labels (N x K)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = as_matrix(self.inputs)
        labels = as_matrix(self.labels)
        if inputs.shape[0] != labels.shape[0]:
            raise DimensionMismatch(
                f"inputs have {inputs.shape[0]} rows but labels have {labels.shape[0]}"
            )
        if not np.all((labels == 0.0) | (labels == 1.0)):
            raise NonFiniteValue("label entries must be exactly 0 or 1")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def n_labels(self) -> int:
        return self.labels.shape[1]


@dataclass(frozen=True)
class ScoreSpec:
    """One scoring method: a base score, an aggregator, and hyperparameters.

    Label-wise bases (logit, sigmoid_prob, odin_prob, energy, mahalanobis)
    require an aggregator in {max, sum, topk}; topk also needs k. Global
    bases (msp, lof, iforest) take no aggregator -- sum aggregation does not
    apply to tree- or KNN-based detectors.

    ``hyper`` carries named parameters: temperature, epsilon, n_neighbors,
    n_trees, subsample, seed.
    """

    base: str
    aggregator: str | None = None
    k: int | None = None
    hyper: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.base in GLOBAL_BASES:
            if self.aggregator is not None:
                raise InvalidSpec(f"base {self.base!r} takes no aggregator")
        elif self.base in LABELWISE_BASES:
            if self.aggregator not in AGGREGATORS:
                raise InvalidSpec(
                    f"base {self.base!r} needs an aggregator in {AGGREGATORS}"
                )
            if self.aggregator == "topk":
                if self.k is None or self.k < 1:
                    raise InvalidK("topk aggregation needs k >= 1")
            elif self.k is not None:
                raise InvalidSpec("k only applies to the topk aggregator")
        else:
            raise InvalidSpec(f"unknown base {self.base!r}")

    def name(self) -> str:
        """Stable identifier used in report rows, e.g. 'energy/sum'."""
        if self.aggregator is None:
            return self.base
        if self.aggregator == "topk":
            return f"{self.base}/topk{self.k}"
        return f"{self.base}/{self.aggregator}"


@dataclass(frozen=True)
class Rng:
    """Deterministic seeded randomness source.

    The stream algorithm is numpy's PCG64 bit generator, seeded directly
    with the 64-bit ``seed``. Child streams are derived by hashing
    ``"{seed}:{label}"`` with SHA-256 and taking the first 8 bytes
    little-endian as the child seed, so splitting is a pure function of
    (seed, label) with no hidden state.
    """

    seed: int

    def __post_init__(self):
        if not 0 <= self.seed < 2**64:
            raise InvalidConfig(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def split(self, label: str) -> "Rng":
        digest = hashlib.sha256(f"{self.seed}:{label}".encode("utf-8")).digest()
        return Rng(int.from_bytes(digest[:8], "little"))

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.PCG64(self.seed))


def rng_split(rng: Rng, label: str) -> Rng:
    """Functional alias for Rng.split."""
    return rng.split(label)
