"""Detection threshold selection and the FPR@TPR / AUROC / AUPR metrics.

Conventions, fixed across the toolkit:

* scores are oriented so that larger means more in-distribution;
* the detector accepts a score as in-distribution when score >= tau, so the
  threshold returned by ``select_threshold`` achieves TPR >= tpr_target
  exactly (the boundary is inclusive; this only matters on exact ties);
* AUROC uses midrank tie handling (ties count half);
* AUPR treats in-distribution as the positive class and uses step
  interpolation (average precision), ties processed as a single threshold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import EmptyScores, InvalidConfig


def _as_scores(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64).reshape(-1)
    if arr.size == 0:
        raise EmptyScores("score vector is empty")
    return arr


def select_threshold(in_scores, tpr_target: float = 0.95) -> float:
    """Threshold tau such that classifying score >= tau as in-distribution
    accepts at least a tpr_target fraction of the in-distribution scores.

    tau is the ceil(tpr_target * n)-th largest in-distribution score.
    """
    if not 0.0 < tpr_target <= 1.0:
        raise InvalidConfig(f"tpr_target must be in (0, 1], got {tpr_target}")
    scores = _as_scores(in_scores)
    k = math.ceil(tpr_target * scores.size)
    return float(np.sort(scores)[scores.size - k])


def detect(score: float, tau: float) -> str:
    """Classify one score against a threshold: 'in' iff score >= tau."""
    return "in" if score >= tau else "out"


def fpr_at_tpr(in_scores, ood_scores, tpr_target: float = 0.95) -> float:
    """Fraction of OOD scores accepted as in-distribution at the threshold
    that keeps tpr_target of the in-distribution data."""
    tau = select_threshold(in_scores, tpr_target)
    ood = _as_scores(ood_scores)
    return float(np.mean(ood >= tau))


def _midranks(values: np.ndarray) -> np.ndarray:
    """1-based ranks with ties assigned the mean rank of their group."""
    order = np.argsort(values, kind="mergesort")
    sorted_vals = values[order]
    n = values.size
    boundaries = np.nonzero(np.diff(sorted_vals))[0] + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [n]))
    # mean of ranks start+1 .. end is (start + 1 + end) / 2
    group_ranks = 0.5 * (starts + 1 + ends)
    ranks = np.empty(n, dtype=np.float64)
    ranks[order] = np.repeat(group_ranks, ends - starts)
    return ranks


def auroc(in_scores, ood_scores) -> float:
    """Probability a random in-distribution score exceeds a random OOD score,
    ties counting half (Mann-Whitney statistic, midrank tie handling)."""
    inside = _as_scores(in_scores)
    outside = _as_scores(ood_scores)
    ranks = _midranks(np.concatenate([inside, outside]))
    n_in, n_ood = inside.size, outside.size
    rank_sum = float(np.sum(ranks[:n_in]))
    return (rank_sum - n_in * (n_in + 1) / 2.0) / (n_in * n_ood)


def aupr(in_scores, ood_scores) -> float:
    """Average precision with in-distribution as the positive class.

    Thresholds sweep the distinct score values descending; each tie group is
    one threshold. AP = sum over thresholds of (R_t - R_{t-1}) * P_t.
    """
    inside = _as_scores(in_scores)
    outside = _as_scores(ood_scores)
    scores = np.concatenate([inside, outside])
    positive = np.concatenate(
        [np.ones(inside.size, dtype=bool), np.zeros(outside.size, dtype=bool)]
    )
    order = np.argsort(-scores, kind="mergesort")
    scores = scores[order]
    positive = positive[order]

    # last index of each distinct-score group in descending order
    group_ends = np.nonzero(np.diff(scores))[0]
    group_ends = np.concatenate((group_ends, [scores.size - 1]))
    tp = np.cumsum(positive)[group_ends].astype(np.float64)
    predicted = (group_ends + 1).astype(np.float64)  # tp + fp at each cut

    precision = tp / predicted
    recall = tp / inside.size
    prev_recall = np.concatenate(([0.0], recall[:-1]))
    return float(np.sum((recall - prev_recall) * precision))


def roc_points(in_scores, ood_scores) -> np.ndarray:
    """Raw (FPR, TPR) pairs swept over every distinct threshold, descending.

    Includes the (0, 0) start point; the last row is always (1, 1).
    """
    inside = _as_scores(in_scores)
    outside = _as_scores(ood_scores)
    scores = np.concatenate([inside, outside])
    is_in = np.concatenate(
        [np.ones(inside.size, dtype=bool), np.zeros(outside.size, dtype=bool)]
    )
    order = np.argsort(-scores, kind="mergesort")
    scores = scores[order]
    is_in = is_in[order]
    group_ends = np.nonzero(np.diff(scores))[0]
    group_ends = np.concatenate((group_ends, [scores.size - 1]))
    tp = np.cumsum(is_in)[group_ends]
    fp = (group_ends + 1) - tp
    tpr = tp / inside.size
    fpr = fp / outside.size
    return np.column_stack(
        (np.concatenate(([0.0], fpr)), np.concatenate(([0.0], tpr)))
    )


@dataclass(frozen=True)
class EvalReport:
    """Metric triple plus the threshold used to compute FPR@TPR."""

    fpr_at_tpr: float
    auroc: float
    aupr: float
    threshold: float
    tpr_target: float
    n_in: int
    n_ood: int

    def to_dict(self) -> dict:
        return {
            "fpr95": self.fpr_at_tpr,
            "auroc": self.auroc,
            "aupr": self.aupr,
            "tau": self.threshold,
            "tpr_target": self.tpr_target,
            "n_in": self.n_in,
            "n_ood": self.n_ood,
        }


def evaluate(in_scores, ood_scores, tpr_target: float = 0.95) -> EvalReport:
    """Bundle FPR@TPR, AUROC and AUPR for one in/OOD score split."""
    inside = _as_scores(in_scores)
    outside = _as_scores(ood_scores)
    tau = select_threshold(inside, tpr_target)
    return EvalReport(
        fpr_at_tpr=float(np.mean(outside >= tau)),
        auroc=auroc(inside, outside),
        aupr=aupr(inside, outside),
        threshold=tau,
        tpr_target=tpr_target,
        n_in=int(inside.size),
        n_ood=int(outside.size),
    )
