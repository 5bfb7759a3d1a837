import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from milreg import (
    MilModel,
    attention_pool,
    attention_weights,
    clam_instance_loss,
    forward,
    instance_forward,
    make_bag,
    mean_pool,
    weseg_percentage,
    weseg_proxy_labels,
)
from milreg.pooling import attention_scores, softmax


def zeroed_model(method, d, h=8):
    model = MilModel.initialize(method, d, attention_dim=h, rng=np.random.default_rng(0))
    for key in model.params:
        model.params[key] = np.zeros_like(model.params[key])
    return model


def random_bag(rng, n, d, target=0.5):
    return make_bag("s", "c", rng.normal(size=(n, d)), target)


class TestInstanceForward:
    def test_zero_parameters_give_half(self):
        bag = random_bag(np.random.default_rng(0), 5, 3)
        logits, probs = instance_forward(bag, zeroed_model("meanpool", 3))
        assert np.all(logits == 0.0)
        assert np.all(probs == 0.5)

    def test_duplicated_instance_scores_identically(self):
        rng = np.random.default_rng(1)
        row = rng.normal(size=4)
        bag = make_bag("s", "c", np.tile(row, (5, 1)), 0.5)
        model = MilModel.initialize("meanpool", 4, rng=rng)
        _, probs = instance_forward(bag, model)
        assert np.all(probs == probs[0])

    def test_matches_sigmoid_linear_oracle(self):
        rng = np.random.default_rng(2)
        bag = random_bag(rng, 7, 5)
        model = MilModel.initialize("meanpool", 5, rng=rng)
        logits, probs = instance_forward(bag, model)
        w, b = model.params["w"], model.params["b"][0]
        for i in range(7):
            z = sum(bag.features[i, j] * w[j] for j in range(5)) + b
            assert logits[i] == pytest.approx(z, abs=1e-12)
            assert probs[i] == pytest.approx(1.0 / (1.0 + math.exp(-z)), abs=1e-12)

    def test_dimension_mismatch_errors(self):
        bag = random_bag(np.random.default_rng(0), 3, 4)
        with pytest.raises(ValueError, match="dimension"):
            instance_forward(bag, zeroed_model("meanpool", 5))


class TestMeanPool:
    def test_constant_vector(self):
        assert mean_pool(np.full(9, 0.37)) == pytest.approx(0.37)

    def test_two_extremes(self):
        assert mean_pool(np.array([0.0, 1.0])) == 0.5

    def test_matches_brute_force(self):
        rng = np.random.default_rng(3)
        probs = rng.uniform(size=1000)
        assert mean_pool(probs) == pytest.approx(sum(probs.tolist()) / 1000, abs=1e-12)

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            mean_pool(np.array([]))


class TestAttention:
    def test_single_instance_gets_all_attention(self):
        rng = np.random.default_rng(4)
        bag = random_bag(rng, 1, 6)
        model = MilModel.initialize("abmil", 6, rng=rng)
        assert attention_weights(bag, model).tolist() == [1.0]

    def test_identical_instances_share_attention_uniformly(self):
        rng = np.random.default_rng(5)
        row = rng.normal(size=6)
        bag = make_bag("s", "c", np.tile(row, (4, 1)), 0.5)
        model = MilModel.initialize("abmil", 6, rng=rng)
        np.testing.assert_allclose(attention_weights(bag, model), np.full(4, 0.25), atol=1e-12)

    def test_softmax_shift_invariance(self):
        rng = np.random.default_rng(6)
        bag = random_bag(rng, 8, 6)
        model = MilModel.initialize("abmil", 6, rng=rng)
        scores = attention_scores(bag, model)
        np.testing.assert_allclose(softmax(scores + 17.3), softmax(scores), atol=1e-9)

    def test_missing_attention_params_errors(self):
        bag = random_bag(np.random.default_rng(0), 3, 4)
        with pytest.raises(ValueError, match="attention"):
            attention_weights(bag, zeroed_model("meanpool", 4))

    def test_weights_form_distribution(self):
        rng = np.random.default_rng(7)
        bag = random_bag(rng, 20, 6)
        a = attention_weights(bag, MilModel.initialize("abmil", 6, rng=rng))
        assert np.all(a >= 0)
        assert a.sum() == pytest.approx(1.0, abs=1e-6)


class TestAttentionPool:
    def test_uniform_weights_equal_mean_pool(self):
        probs = np.array([0.2, 0.8, 0.5])
        assert attention_pool(probs, np.full(3, 1 / 3)) == pytest.approx(mean_pool(probs))

    def test_one_hot_selects_single_prob(self):
        probs = np.array([0.2, 0.8, 0.5])
        assert attention_pool(probs, np.array([0.0, 1.0, 0.0])) == pytest.approx(0.8)

    def test_matches_dot_product_oracle(self):
        rng = np.random.default_rng(8)
        probs = rng.uniform(size=50)
        weights = rng.uniform(size=50)
        weights /= weights.sum()
        expected = sum(p * w for p, w in zip(probs.tolist(), weights.tolist()))
        assert attention_pool(probs, weights) == pytest.approx(expected, abs=1e-12)

    def test_length_mismatch_errors(self):
        with pytest.raises(ValueError):
            attention_pool(np.array([0.5, 0.5]), np.array([1.0]))

    def test_non_distribution_weights_error(self):
        with pytest.raises(ValueError):
            attention_pool(np.array([0.5, 0.5]), np.array([0.9, 0.9]))


class TestClamInstanceLoss:
    def test_saturated_logits_give_near_zero_loss(self):
        weights = softmax(np.array([3.0, 2.0, -2.0, -3.0]))
        logits = np.array([30.0, 20.0, -20.0, -30.0])
        assert clam_instance_loss(weights, logits, k=2) < 0.01

    def test_zero_logits_give_ln2(self):
        weights = softmax(np.array([1.0, 0.5, -0.5, -1.0]))
        assert clam_instance_loss(weights, np.zeros(4), k=2) == pytest.approx(
            math.log(2.0), abs=1e-12
        )

    def test_hand_computed_example(self):
        weights = np.array([0.4, 0.3, 0.2, 0.1])
        logits = np.array([2.0, -1.0, 0.0, -2.0])
        # k=1: top attention -> instance 0 (label 1), bottom -> instance 3 (label 0)
        def bce(p, t):
            return -(t * math.log(p) + (1 - t) * math.log(1 - p))

        sig = lambda z: 1.0 / (1.0 + math.exp(-z))
        expected = (bce(sig(2.0), 1) + bce(sig(-2.0), 0)) / 2.0
        assert clam_instance_loss(weights, logits, k=1) == pytest.approx(expected, abs=1e-12)

    def test_k_bounds(self):
        weights = np.full(4, 0.25)
        logits = np.zeros(4)
        with pytest.raises(ValueError):
            clam_instance_loss(weights, logits, k=3)
        with pytest.raises(ValueError):
            clam_instance_loss(weights, logits, k=0)


class TestWesegProxyLabels:
    def test_zero_target_all_zero(self):
        assert weseg_proxy_labels(np.array([0.9, 0.1]), 0.0).tolist() == [0, 0]

    def test_full_target_all_one(self):
        assert weseg_proxy_labels(np.array([0.9, 0.1]), 1.0).tolist() == [1, 1]

    def test_sort_oracle_example(self):
        labels = weseg_proxy_labels(np.array([0.9, 0.1, 0.5, 0.7]), 0.5)
        assert labels.tolist() == [1, 0, 0, 1]

    def test_ties_break_to_lower_index(self):
        labels = weseg_proxy_labels(np.array([0.5, 0.5, 0.2]), 1.0 / 3.0)
        assert labels.tolist() == [1, 0, 0]

    @given(
        n=st.integers(min_value=1, max_value=200),
        hundredths=st.integers(min_value=0, max_value=100),
    )
    @settings(max_examples=200, deadline=None)
    def test_one_count_matches_exact_rational_rounding(self, n, hundredths):
        probs = np.random.default_rng(n).uniform(size=n)
        labels = weseg_proxy_labels(probs, hundredths / 100.0)
        # exact half-up rounding of the rational hundredths*n/100
        expected = (2 * hundredths * n + 100) // 200
        assert labels.sum() == min(expected, n)


class TestWesegPercentage:
    def test_all_above(self):
        assert weseg_percentage(np.array([0.8, 0.9]), 0.5) == 1.0

    def test_all_at_or_below(self):
        assert weseg_percentage(np.array([0.5, 0.2]), 0.5) == 0.0

    def test_counting_oracle(self):
        assert weseg_percentage(np.array([0.9, 0.2, 0.6]), 0.5) == pytest.approx(2.0 / 3.0)

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            weseg_percentage(np.array([]), 0.5)

    def test_threshold_bounds(self):
        with pytest.raises(ValueError):
            weseg_percentage(np.array([0.5]), 0.0)


class TestForward:
    def test_meanpool_constant_probs(self):
        bag = random_bag(np.random.default_rng(0), 6, 4)
        pred = forward(bag, zeroed_model("meanpool", 4))
        assert pred.bag_estimate.value == pytest.approx(0.5)
        assert pred.attention is None

    def test_abmil_symmetric_bag_equals_mean(self):
        rng = np.random.default_rng(9)
        row = rng.normal(size=5)
        bag = make_bag("s", "c", np.tile(row, (6, 1)), 0.5)
        model = MilModel.initialize("abmil", 5, rng=rng)
        pred = forward(bag, model)
        assert pred.bag_estimate.value == pytest.approx(mean_pool(pred.instance_probs))

    @pytest.mark.parametrize("method", ["meanpool", "abmil", "clam", "weseg"])
    def test_estimate_in_unit_interval(self, method):
        rng = np.random.default_rng(10)
        for _ in range(10):
            bag = random_bag(rng, int(rng.integers(2, 20)), 6)
            model = MilModel.initialize(method, 6, rng=rng)
            est = forward(bag, model).bag_estimate.value
            assert 0.0 <= est <= 1.0

    @pytest.mark.parametrize("method", ["meanpool", "abmil", "clam"])
    def test_pooling_closure(self, method):
        rng = np.random.default_rng(11)
        bag = random_bag(rng, 15, 6)
        model = MilModel.initialize(method, 6, rng=rng)
        pred = forward(bag, model)
        assert pred.instance_probs.min() - 1e-12 <= pred.bag_estimate.value
        assert pred.bag_estimate.value <= pred.instance_probs.max() + 1e-12

    @pytest.mark.parametrize("method", ["meanpool", "abmil", "clam", "weseg"])
    def test_permutation_invariance(self, method):
        rng = np.random.default_rng(12)
        X = rng.normal(size=(9, 5))
        perm = rng.permutation(9)
        model = MilModel.initialize(method, 5, rng=rng)
        pred = forward(make_bag("s", "c", X, 0.5), model)
        pred_perm = forward(make_bag("s", "c", X[perm], 0.5), model)
        np.testing.assert_allclose(pred_perm.instance_logits, pred.instance_logits[perm], atol=1e-12)
        if pred.attention is not None:
            np.testing.assert_allclose(pred_perm.attention, pred.attention[perm], atol=1e-12)
        assert pred_perm.bag_estimate.value == pytest.approx(pred.bag_estimate.value, abs=1e-9)
