import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mlood.baselines import FittedDetector
from mlood.core import Rng, ScoreSpec
from mlood.errors import (
    InvalidK,
    MissingInput,
    NonFiniteValue,
    PerturbationUnsupported,
    UnfittedDetector,
)
from mlood.harness import LinearModel
from mlood.metrics import auroc
from mlood.scoring import (
    ScoreData,
    aggregate,
    joint_energy,
    labelwise_energy,
    max_energy,
    max_logit,
    msp,
    odin,
    odin_from_logits,
    score,
    sigmoid_prob,
    softplus,
    sum_logit,
    topk_joint_energy,
)

LN2 = math.log(2.0)

# high-precision (mpmath, 40 digits) evaluations of log(1 + e^x) and friends
SOFTPLUS_1_M2_3 = [1.31326168752, 0.126928011043, 3.04858735157]
JOINT_1_M2_3 = 4.48877705013
TOP2_1_M2_3 = 4.36184903909
SIGMOID_1_M2_3 = [0.73105857863, 0.119202922022, 0.952574126822]
SUM_SIGMOID_1_M2_3 = 1.80283562747
MSP_1_2_3 = 0.665240955775
SIGMOID_0_003 = 0.500749999438

finite_logits = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def random_logits(seed=0, n=50, k=7, scale=10.0):
    gen = Rng(seed).generator()
    return scale * gen.standard_normal((n, k))


class TestLabelwiseEnergy:
    def test_zero_logit(self):
        assert labelwise_energy([[0.0]])[0, 0] == pytest.approx(LN2, abs=1e-12)

    def test_reference_values(self):
        got = labelwise_energy([[1.0, -2.0, 3.0]])[0]
        np.testing.assert_allclose(got, SOFTPLUS_1_M2_3, atol=1e-9)

    def test_extreme_logits_no_overflow(self):
        e = labelwise_energy([[80.0, -80.0]])
        assert e[0, 0] == pytest.approx(80.0 + math.exp(-80.0), abs=1e-12)
        assert 0.0 < e[0, 1] == pytest.approx(math.exp(-80.0), rel=1e-12)

    def test_rejects_nan(self):
        with pytest.raises(NonFiniteValue):
            labelwise_energy([[float("nan")]])

    @given(arrays(np.float64, (5, 4),
                  elements=st.floats(-700, 1e6, allow_nan=False, allow_infinity=False)))
    @settings(max_examples=100)
    def test_positivity(self, logits):
        # strict positivity holds wherever e^f is representable in float64;
        # below about -745 the correctly rounded softplus underflows to +0
        assert np.all(labelwise_energy(logits) > 0.0)

    @given(arrays(np.float64, (5, 4), elements=finite_logits))
    @settings(max_examples=100)
    def test_nonnegative_and_finite_on_full_range(self, logits):
        values = labelwise_energy(logits)
        assert np.all(values >= 0.0) and np.all(np.isfinite(values))

    @given(arrays(np.float64, (3, 5), elements=st.floats(-500, 500)),
           st.integers(0, 2), st.integers(0, 4),
           st.floats(1e-3, 10.0))
    @settings(max_examples=100)
    def test_single_logit_monotonicity(self, logits, r, c, bump):
        base = labelwise_energy(logits)
        bumped_logits = logits.copy()
        bumped_logits[r, c] += bump
        bumped = labelwise_energy(bumped_logits)
        assert bumped[r, c] > base[r, c]
        assert joint_energy(bumped_logits)[r] > joint_energy(logits)[r]
        assert max_energy(bumped_logits)[r] >= max_energy(logits)[r]


class TestJointEnergy:
    def test_twenty_zero_logits(self):
        got = joint_energy(np.zeros((1, 20)))[0]
        assert got == pytest.approx(20 * LN2, abs=1e-9)

    def test_reference_value(self):
        assert joint_energy([[1.0, -2.0, 3.0]])[0] == pytest.approx(JOINT_1_M2_3, abs=1e-9)

    def test_permutation_invariance(self):
        gen = Rng(3).generator()
        logits = gen.standard_normal((1, 9))
        permuted = logits[:, gen.permutation(9)]
        assert joint_energy(logits)[0] == joint_energy(permuted)[0]

    def test_strictly_positive(self):
        assert np.all(joint_energy(random_logits(scale=100.0)) > 0)

    def test_matches_sum_aggregation(self):
        logits = random_logits(seed=5)
        np.testing.assert_array_equal(
            joint_energy(logits), aggregate(labelwise_energy(logits), "sum")
        )


class TestMaxEnergy:
    def test_reference_value(self):
        assert max_energy([[1.0, -2.0, 3.0]])[0] == pytest.approx(3.04858735157, abs=1e-9)

    def test_constant_row(self):
        assert max_energy(np.full((1, 6), 2.5))[0] == softplus(np.array(2.5))

    def test_softplus_of_max_identity(self):
        logits = random_logits(seed=11, n=1000, k=8)
        np.testing.assert_array_equal(
            max_energy(logits), softplus(logits.max(axis=1))
        )


class TestTopkJointEnergy:
    def test_k_equals_K_is_joint_exactly(self):
        logits = random_logits(seed=2, n=1000, k=9)
        np.testing.assert_array_equal(
            topk_joint_energy(logits, 9), joint_energy(logits)
        )

    def test_k1_is_max_exactly(self):
        logits = random_logits(seed=2, n=1000, k=9)
        np.testing.assert_array_equal(
            topk_joint_energy(logits, 1), max_energy(logits)
        )

    def test_reference_value(self):
        assert topk_joint_energy([[1.0, -2.0, 3.0]], 2)[0] == \
               pytest.approx(TOP2_1_M2_3, abs=1e-6)

    def test_invalid_k(self):
        with pytest.raises(InvalidK):
            topk_joint_energy([[1.0, 2.0]], 3)
        with pytest.raises(InvalidK):
            topk_joint_energy([[1.0, 2.0]], 0)

    @given(arrays(np.float64, (4, 6), elements=st.floats(-100, 100)))
    @settings(max_examples=100)
    def test_nondecreasing_in_k(self, logits):
        stacked = np.stack([topk_joint_energy(logits, k) for k in range(1, 7)])
        assert np.all(np.diff(stacked, axis=0) >= 0.0)


class TestLogitScores:
    def test_reference_values(self):
        assert max_logit([[1.0, -2.0, 3.0]])[0] == 3.0
        assert sum_logit([[1.0, -2.0, 3.0]])[0] == 2.0

    def test_all_negative_row(self):
        assert max_logit([[-1.0, -2.0]])[0] == -1.0
        assert sum_logit([[-1.0, -2.0]])[0] == -3.0

    def test_rank_equivalence_with_max_energy(self):
        gen = Rng(4).generator()
        li = 5 * gen.standard_normal((80, 6))
        lo = 5 * gen.standard_normal((60, 6)) - 2
        assert auroc(max_energy(li), max_energy(lo)) == \
               auroc(max_logit(li), max_logit(lo))

    def test_gap_bound(self):
        # 0 < max_energy - max_logit <= ln 2 when max_logit >= 0, -> 0 as it grows
        grid = np.linspace(0.0, 60.0, 601).reshape(-1, 1)
        gap = max_energy(grid) - max_logit(grid)
        assert np.all(gap > 0.0)
        assert np.all(gap <= LN2)
        big = np.linspace(40.0, 200.0, 101).reshape(-1, 1)
        assert np.all(max_energy(big) - max_logit(big) <= 2.0**-50)


class TestMsp:
    def test_uniform(self):
        assert msp([[0.0, 0.0]])[0] == pytest.approx(0.5, abs=1e-15)

    def test_reference_value(self):
        assert msp([[1.0, 2.0, 3.0]])[0] == pytest.approx(MSP_1_2_3, abs=1e-9)

    def test_single_label(self):
        np.testing.assert_array_equal(msp(random_logits(n=20, k=1)), np.ones(20))

    @given(arrays(np.float64, (4, 5), elements=finite_logits))
    @settings(max_examples=100)
    def test_range(self, logits):
        values = msp(logits)
        assert np.all(values > 0.0) and np.all(values <= 1.0)


class TestSigmoidProb:
    def test_zero(self):
        assert sigmoid_prob([[0.0]])[0, 0] == 0.5

    def test_reference_values(self):
        np.testing.assert_allclose(
            sigmoid_prob([[1.0, -2.0, 3.0]])[0], SIGMOID_1_M2_3, atol=1e-9
        )

    @given(arrays(np.float64, (3, 4), elements=st.floats(-200, 200)))
    @settings(max_examples=100)
    def test_symmetry(self, logits):
        total = sigmoid_prob(logits) + sigmoid_prob(-logits)
        np.testing.assert_allclose(total, 1.0, atol=1e-12)

    def test_sum_and_max_aggregation(self):
        probs = sigmoid_prob([[1.0, -2.0, 3.0]])
        assert aggregate(probs, "sum")[0] == pytest.approx(SUM_SIGMOID_1_M2_3, abs=1e-9)
        assert aggregate(probs, "max")[0] == pytest.approx(0.952574126822, abs=1e-9)


def toy_model(seed=0, k=4, d=6):
    gen = Rng(seed).generator()
    return LinearModel(gen.standard_normal((k, d)), gen.standard_normal(k))


class TestOdin:
    def test_identity_settings_match_sigmoid_max(self):
        model = toy_model()
        gen = Rng(9).generator()
        x = gen.uniform(0, 1, (30, 6))
        from mlood.harness import forward

        expected = sigmoid_prob(forward(model, x)).max(axis=1)
        np.testing.assert_array_equal(odin(model, x, 1.0, 0.0), expected)

    def test_temperature_from_logits(self):
        got = odin_from_logits([[1.0, -2.0, 3.0]], temperature=1000.0)
        assert got.max() == pytest.approx(SIGMOID_0_003, abs=1e-9)

    def test_t1_logits_reference(self):
        got = odin_from_logits([[1.0, -2.0, 3.0]], temperature=1.0)
        assert aggregate(got, "max")[0] == pytest.approx(0.952574126822, abs=1e-9)

    def test_rank_equivalence_with_max_logit(self):
        model = toy_model(seed=3)
        gen = Rng(10).generator()
        xi = gen.uniform(0, 1, (50, 6))
        xo = gen.uniform(0, 1, (40, 6)) + 0.3
        from mlood.harness import forward

        assert auroc(odin(model, xi, 1.0, 0.0), odin(model, xo, 1.0, 0.0)) == \
               auroc(max_logit(forward(model, xi)), max_logit(forward(model, xo)))

    def test_perturbation_moves_inputs(self):
        model = toy_model(seed=1)
        gen = Rng(11).generator()
        x = gen.uniform(0.2, 0.8, (10, 6))
        unperturbed = odin(model, x, 1.0, 0.0)
        perturbed = odin(model, x, 1.0, 0.01)
        assert not np.array_equal(unperturbed, perturbed)

    def test_perturbation_direction_is_the_literal_formula(self):
        # x_hat = x - eps*sign(-grad l_yhat); grad = (sigma(f)-1) W_yhat,
        # so the shift is -eps*sign(W_yhat) wherever W is nonzero
        model = LinearModel(np.array([[2.0, -3.0]]), np.array([0.0]))
        x = np.array([[0.5, 0.5]])
        eps = 0.01
        from mlood.harness import forward
        from scipy.special import expit

        x_hat = x - eps * np.sign(model.W[0])
        expected = expit(forward(model, x_hat))
        np.testing.assert_allclose(odin(model, x, 1.0, eps), expected.max(axis=1))


class TestDispatch:
    def test_energy_sum_equals_joint(self):
        logits = random_logits(seed=6)
        spec = ScoreSpec("energy", "sum")
        np.testing.assert_array_equal(
            score(spec, ScoreData(logits=logits)), joint_energy(logits)
        )

    def test_logit_sum(self):
        got = score(ScoreSpec("logit", "sum"), ScoreData(logits=[[1.0, -2.0, 3.0]]))
        assert got[0] == 2.0

    def test_unfitted_lof(self):
        with pytest.raises(UnfittedDetector):
            score(ScoreSpec("lof", hyper={"n_neighbors": 20}),
                  ScoreData(features=np.zeros((3, 2))))

    def test_unfitted_mahalanobis(self):
        with pytest.raises(UnfittedDetector):
            score(ScoreSpec("mahalanobis", "max"),
                  ScoreData(features=np.zeros((3, 2))), FittedDetector())

    def test_missing_input(self):
        with pytest.raises(MissingInput):
            score(ScoreSpec("energy", "sum"), ScoreData())

    def test_odin_logits_only_rejects_perturbation(self):
        with pytest.raises(PerturbationUnsupported):
            score(ScoreSpec("odin_prob", "max", hyper={"epsilon": 0.001}),
                  ScoreData(logits=[[1.0, 2.0]]))

    def test_numerical_safety_at_extreme_logits(self):
        logits = np.array([[1e6, -1e6, 123.0, -456.0]])
        for fn in (labelwise_energy, joint_energy, max_energy, msp, sigmoid_prob):
            assert np.all(np.isfinite(fn(logits)))
