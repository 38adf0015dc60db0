import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlood.core import Rng
from mlood.errors import EmptyScores
from mlood.metrics import (
    aupr,
    auroc,
    detect,
    evaluate,
    fpr_at_tpr,
    roc_points,
    select_threshold,
)


# ------------------------------------------------------------------ oracles

def auroc_bruteforce(in_scores, ood_scores):
    """O(n*m) pair count: wins + half ties."""
    wins = 0.0
    for a in in_scores:
        for b in ood_scores:
            if a > b:
                wins += 1.0
            elif a == b:
                wins += 0.5
    return wins / (len(in_scores) * len(ood_scores))


def aupr_bruteforce(in_scores, ood_scores):
    """Exhaustive threshold sweep at each distinct score, descending."""
    in_scores = list(in_scores)
    all_scores = sorted(set(in_scores) | set(ood_scores), reverse=True)
    ap = 0.0
    prev_recall = 0.0
    for t in all_scores:
        tp = sum(1 for s in in_scores if s >= t)
        fp = sum(1 for s in ood_scores if s >= t)
        precision = tp / (tp + fp)
        recall = tp / len(in_scores)
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def threshold_bruteforce(in_scores, tpr_target):
    """k-th largest by explicit sort, k = ceil(target * n)."""
    import math

    ordered = sorted(in_scores, reverse=True)
    return ordered[math.ceil(tpr_target * len(ordered)) - 1]


def random_split(seed, n_in, n_ood, tie_heavy=False):
    gen = Rng(seed).generator()
    if tie_heavy:
        pool = gen.integers(0, 6, n_in + n_ood).astype(float)
    else:
        pool = gen.standard_normal(n_in + n_ood)
    return pool[:n_in], pool[n_in:] + (0.0 if tie_heavy else 0.3)


# ------------------------------------------------------------------- tests

class TestSelectThreshold:
    def test_hundred_scores(self):
        scores = np.arange(1.0, 101.0)
        assert select_threshold(scores, 0.95) == 6.0
        assert select_threshold(scores, 0.95) == threshold_bruteforce(scores, 0.95)

    def test_single_element(self):
        assert select_threshold([5.0], 0.95) == 5.0

    def test_ties(self):
        tau = select_threshold([3.0, 3.0, 3.0], 0.95)
        assert tau == 3.0
        assert np.mean(np.array([3.0, 3.0, 3.0]) >= tau) == 1.0

    def test_target_one_uses_minimum(self):
        gen = Rng(0).generator()
        scores = gen.standard_normal(37)
        assert select_threshold(scores, 1.0) == scores.min()

    def test_empty(self):
        with pytest.raises(EmptyScores):
            select_threshold([], 0.95)

    @given(st.lists(st.floats(-100, 100), min_size=1, max_size=60),
           st.floats(0.01, 1.0))
    @settings(max_examples=100)
    def test_matches_enumeration_oracle(self, scores, target):
        assert select_threshold(scores, target) == threshold_bruteforce(scores, target)
        achieved = np.mean(np.asarray(scores) >= select_threshold(scores, target))
        assert achieved >= target - 1e-12


class TestDetect:
    def test_boundary_is_in(self):
        assert detect(6.0, 6.0) == "in"

    def test_below_is_out(self):
        assert detect(5.9, 6.0) == "out"

    def test_monotone(self):
        tau = 1.5
        decisions = [detect(s, tau) for s in np.linspace(0, 3, 31)]
        flipped = "".join("1" if d == "in" else "0" for d in decisions)
        assert "10" not in flipped  # raising the score never flips in -> out


class TestFprAtTpr:
    def test_enumeration_example(self):
        assert fpr_at_tpr(np.arange(1.0, 101.0), [5.5, 6.5, 10.0], 0.95) == \
               pytest.approx(2.0 / 3.0)

    def test_perfect_separation(self):
        assert fpr_at_tpr([2.0, 3.0], [0.5, 1.0], 0.95) == 0.0

    def test_tie_at_threshold_counts_as_fp(self):
        tau = select_threshold(np.arange(1.0, 101.0), 0.95)
        assert fpr_at_tpr(np.arange(1.0, 101.0), [tau], 0.95) == 1.0


class TestAuroc:
    def test_perfect(self):
        assert auroc([2.0, 3.0], [1.0]) == 1.0

    def test_single_tie(self):
        assert auroc([1.0], [1.0]) == 0.5

    def test_interleaved(self):
        assert auroc([1.0, 3.0], [2.0]) == 0.5

    def test_identical_multisets(self):
        scores = [0.1, 0.5, 2.0, 7.0]
        assert auroc(scores, scores) == 0.5


class TestAupr:
    def test_perfect(self):
        assert aupr([2.0, 3.0], [1.0]) == 1.0

    def test_two_point_curve(self):
        assert aupr([1.0], [2.0]) == 0.5

    def test_matches_sweep_oracle_unbalanced(self):
        gen = Rng(1).generator()
        inside = gen.standard_normal(150)
        outside = gen.standard_normal(10)
        assert aupr(inside, outside) == pytest.approx(
            aupr_bruteforce(inside, outside), abs=1e-12
        )


class TestOracleEquivalence:
    @pytest.mark.parametrize("tie_heavy", [False, True])
    def test_sorted_equals_bruteforce(self, tie_heavy):
        for seed in range(30):
            gen = Rng(seed).generator()
            n_in = int(gen.integers(1, 200))
            n_ood = int(gen.integers(1, 200))
            inside, outside = random_split(seed, n_in, n_ood, tie_heavy)
            assert auroc(inside, outside) == pytest.approx(
                auroc_bruteforce(inside, outside), abs=1e-12
            )
            assert aupr(inside, outside) == pytest.approx(
                aupr_bruteforce(inside, outside), abs=1e-12
            )


class TestInvariance:
    @pytest.mark.parametrize("transform", [
        np.exp,
        lambda x: 3.5 * x + 11.0,
    ])
    def test_strictly_increasing_transform(self, transform):
        inside, outside = random_split(7, 80, 70)
        assert auroc(transform(inside), transform(outside)) == \
               pytest.approx(auroc(inside, outside), abs=1e-12)
        assert aupr(transform(inside), transform(outside)) == \
               pytest.approx(aupr(inside, outside), abs=1e-12)
        assert fpr_at_tpr(transform(inside), transform(outside), 0.95) == \
               pytest.approx(fpr_at_tpr(inside, outside, 0.95), abs=1e-12)

    @given(st.integers(0, 1000))
    @settings(max_examples=60)
    def test_complement(self, seed):
        inside, outside = random_split(seed, 23, 31, tie_heavy=seed % 2 == 0)
        assert auroc(inside, outside) + auroc(outside, inside) == \
               pytest.approx(1.0, abs=1e-12)


class TestEvaluate:
    def test_separated(self):
        report = evaluate([5.0, 6.0, 7.0], [1.0, 2.0], 0.95)
        assert (report.fpr_at_tpr, report.auroc, report.aupr) == (0.0, 1.0, 1.0)

    def test_identical_distributions(self):
        scores = [1.0, 2.0, 3.0, 4.0]
        assert evaluate(scores, scores, 0.95).auroc == 0.5

    def test_enumeration_case(self):
        inside = np.arange(1.0, 101.0)
        outside = np.array([5.5, 6.5, 10.0])
        report = evaluate(inside, outside, 0.95)
        assert report.fpr_at_tpr == pytest.approx(2.0 / 3.0)
        assert report.threshold == 6.0
        assert report.auroc == pytest.approx(auroc_bruteforce(inside, outside), abs=1e-12)
        assert report.n_in == 100 and report.n_ood == 3

    def test_report_dict_keys(self):
        d = evaluate([1.0, 2.0], [0.0]).to_dict()
        assert list(d) == ["fpr95", "auroc", "aupr", "tau", "tpr_target",
                           "n_in", "n_ood"]


class TestRocPoints:
    def test_starts_at_origin_ends_at_one_one(self):
        inside, outside = random_split(3, 40, 30)
        pts = roc_points(inside, outside)
        assert pts[0].tolist() == [0.0, 0.0]
        assert pts[-1].tolist() == [1.0, 1.0]
        assert np.all(np.diff(pts[:, 0]) >= 0) and np.all(np.diff(pts[:, 1]) >= 0)
