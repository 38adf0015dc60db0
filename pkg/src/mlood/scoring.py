"""Label-wise OOD scoring functions and their aggregators.

A label-wise base turns an N x K logit matrix into an N x K matrix of
per-label scores (larger = more in-distribution per label); an aggregator
reduces each row to a single score. The energy family uses
softplus(f) = log(1 + e^f), the negated label-wise free energy, computed in
the overflow-safe form max(f, 0) + log1p(exp(-|f|)).

All row reductions share one canonical path: the row is sorted descending
and summed by cumulative addition. This fixes the reduction order (results
are independent of any row-level parallelism) and makes the identities
top-k(K) == full sum and top-k(1) == max hold bit-for-bit, not just to
tolerance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
from scipy.special import expit

from .core import GLOBAL_BASES, ScoreSpec
from .errors import (
    InvalidK,
    MissingInput,
    NonFiniteValue,
    PerturbationUnsupported,
    UnfittedDetector,
)
from .harness import LinearModel, bce_input_grad, forward

if TYPE_CHECKING:
    from .baselines import FittedDetector


def _check_logits(logits) -> np.ndarray:
    arr = np.asarray(logits, dtype=np.float64)
    if arr.ndim != 2:
        raise NonFiniteValue(f"logits must be 2-D (n, n_labels), got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteValue("logits must be finite")
    return arr


def softplus(x: np.ndarray) -> np.ndarray:
    """log(1 + e^x) without overflow at large |x|."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def _sorted_desc(values: np.ndarray) -> np.ndarray:
    return -np.sort(-values, axis=1)


def _reduce(values: np.ndarray, aggregator: str, k: int | None = None) -> np.ndarray:
    """Canonical row reduction: max, full sum, or top-k sum.

    Sums run over the descending-sorted row via cumulative addition, so
    top-k sums are pointwise nondecreasing in k and coincide exactly with
    max at k=1 and with the full sum at k=K.
    """
    n_labels = values.shape[1]
    if aggregator == "max":
        return values.max(axis=1)
    if aggregator == "sum":
        k = n_labels
    elif aggregator == "topk":
        if k is None or not 1 <= k <= n_labels:
            raise InvalidK(f"k must be in [1, {n_labels}], got {k}")
    else:
        raise InvalidK(f"unknown aggregator {aggregator!r}")
    return np.cumsum(_sorted_desc(values), axis=1)[:, k - 1]


def aggregate(labelwise: np.ndarray, aggregator: str, k: int | None = None) -> np.ndarray:
    """Reduce an N x K label-wise score matrix to one score per row."""
    return _reduce(np.asarray(labelwise, dtype=np.float64), aggregator, k)


def labelwise_energy(logits) -> np.ndarray:
    """Negated label-wise free energy: softplus of each logit.

    Entries are strictly positive wherever float64 can represent e^f
    (logits above about -745); below that the correctly rounded value
    underflows to +0.
    """
    return softplus(_check_logits(logits))


def joint_energy(logits) -> np.ndarray:
    """Sum over labels of the label-wise energies; strictly positive."""
    return _reduce(labelwise_energy(logits), "sum")


def max_energy(logits) -> np.ndarray:
    """Largest label-wise energy; equals softplus of the row max logit."""
    return _reduce(labelwise_energy(logits), "max")


def topk_joint_energy(logits, k: int) -> np.ndarray:
    """Sum of the k largest label-wise energies per row (selection over
    values, so duplicates are included on ties)."""
    return _reduce(labelwise_energy(logits), "topk", k)


def max_logit(logits) -> np.ndarray:
    """Row maximum of the raw logits."""
    return _reduce(_check_logits(logits), "max")


def sum_logit(logits) -> np.ndarray:
    """Row sum of the raw logits. Mixes positive and negative terms; kept as
    the summation ablation of the raw-logit base."""
    return _reduce(_check_logits(logits), "sum")


def msp(logits) -> np.ndarray:
    """Maximum softmax probability over the label logits, max-shifted for
    stability. In (0, 1]; identically 1 when there is a single label."""
    arr = _check_logits(logits)
    shifted = arr - arr.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex.max(axis=1) / ex.sum(axis=1)


def sigmoid_prob(logits) -> np.ndarray:
    """Per-label sigmoid probability sigma(f) = e^f / (1 + e^f)."""
    return expit(_check_logits(logits))


def odin_labelwise(model: LinearModel, inputs: np.ndarray, temperature: float,
                   epsilon: float) -> np.ndarray:
    """Temperature-scaled per-label sigmoids after the confidence-targeted
    input shift.

    The perturbed input is x_hat = x - epsilon * sign(-grad_x L), where L is
    the binary cross-entropy toward target 1 for the label with the largest
    sigmoid output (lowest index on ties). Inputs are not clamped after the
    shift.
    """
    if temperature <= 0:
        raise PerturbationUnsupported(f"temperature must be > 0, got {temperature}")
    if epsilon < 0:
        raise PerturbationUnsupported(f"epsilon must be >= 0, got {epsilon}")
    inputs = np.asarray(inputs, dtype=np.float64)
    logits = forward(model, inputs)
    if epsilon > 0:
        top = np.argmax(expit(logits), axis=1)
        picked = logits[np.arange(logits.shape[0]), top]
        # grad_x of BCE toward 1 for the top label: (sigma(f) - 1) * W_top
        grad = (expit(picked) - 1.0)[:, None] * model.W[top]
        inputs = inputs - epsilon * np.sign(-grad)
        logits = forward(model, inputs)
    return expit(logits / temperature)


def odin(model: LinearModel, inputs: np.ndarray, temperature: float = 1.0,
         epsilon: float = 0.0) -> np.ndarray:
    """Max over labels of the ODIN-calibrated sigmoid probabilities."""
    return _reduce(odin_labelwise(model, inputs, temperature, epsilon), "max")


def odin_from_logits(logits, temperature: float = 1.0) -> np.ndarray:
    """Ingested-logits fallback: per-label sigmoids at f / T, no perturbation
    (input gradients do not exist without a model)."""
    if temperature <= 0:
        raise PerturbationUnsupported(f"temperature must be > 0, got {temperature}")
    return expit(_check_logits(logits) / temperature)


@dataclass(frozen=True)
class ScoreData:
    """Inputs available to the scoring dispatch; any subset may be present.

    logits feed the logit-based bases directly; inputs + model enable ODIN
    perturbation and derive logits when none were ingested; features feed
    the data-dependent detectors.
    """

    logits: np.ndarray | None = None
    features: np.ndarray | None = None
    inputs: np.ndarray | None = None
    model: LinearModel | None = None


def _resolve_logits(data: ScoreData) -> np.ndarray:
    if data.logits is not None:
        return _check_logits(data.logits)
    if data.model is not None and data.inputs is not None:
        return forward(data.model, data.inputs)
    raise MissingInput("need logits, or a model with inputs")


def score(spec: ScoreSpec, data: ScoreData,
          fitted: "FittedDetector | None" = None) -> np.ndarray:
    """Evaluate one scoring method. Output is oriented larger = in-distribution;
    LOF and isolation-forest anomaly measures are negated to comply."""
    from .baselines import iforest_score, lof_score, mahalanobis_labelwise, mahalanobis_score

    hyper = dict(spec.hyper)
    temperature = float(hyper.get("temperature", 1.0))
    epsilon = float(hyper.get("epsilon", 0.0))

    if spec.base == "energy":
        return _reduce(labelwise_energy(_resolve_logits(data)), spec.aggregator, spec.k)
    if spec.base == "logit":
        return _reduce(_resolve_logits(data), spec.aggregator, spec.k)
    if spec.base == "sigmoid_prob":
        return _reduce(sigmoid_prob(_resolve_logits(data)), spec.aggregator, spec.k)
    if spec.base == "msp":
        return msp(_resolve_logits(data))
    if spec.base == "odin_prob":
        if data.model is not None and data.inputs is not None:
            labelwise = odin_labelwise(data.model, data.inputs, temperature, epsilon)
        elif data.logits is not None:
            if epsilon > 0:
                raise PerturbationUnsupported(
                    "ODIN perturbation needs a model with inputs; "
                    "ingested logits only support epsilon = 0"
                )
            labelwise = odin_from_logits(data.logits, temperature)
        else:
            raise MissingInput("ODIN needs a model with inputs, or logits")
        return _reduce(labelwise, spec.aggregator, spec.k)
    if spec.base == "mahalanobis":
        if fitted is None or fitted.mahalanobis is None:
            raise UnfittedDetector("mahalanobis requires a fitted detector")
        feats = data.features if data.features is not None else data.inputs
        if feats is None:
            raise MissingInput("mahalanobis needs features (or inputs)")
        if spec.aggregator == "topk":
            return _reduce(mahalanobis_labelwise(fitted.mahalanobis, feats),
                           "topk", spec.k)
        return mahalanobis_score(fitted.mahalanobis, feats, agg=spec.aggregator,
                                 epsilon=epsilon, input_model=data.model)
    if spec.base == "lof":
        if fitted is None or fitted.lof is None:
            raise UnfittedDetector("lof requires a fitted index")
        feats = data.features if data.features is not None else data.inputs
        if feats is None:
            raise MissingInput("lof needs features (or inputs)")
        return lof_score(fitted.lof, feats)
    if spec.base == "iforest":
        if fitted is None or fitted.iforest is None:
            raise UnfittedDetector("iforest requires a fitted model")
        feats = data.features if data.features is not None else data.inputs
        if feats is None:
            raise MissingInput("iforest needs features (or inputs)")
        return iforest_score(fitted.iforest, feats)
    raise MissingInput(f"no dispatch for base {spec.base!r}")
