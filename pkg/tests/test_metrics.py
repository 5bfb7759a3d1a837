import math

import numpy as np
import pytest

from milreg import (
    MetricReport,
    aggregate_folds,
    build_heatmap,
    interpretability_auc,
    pearson,
    roc_auc,
    roc_curve,
    spearman,
)
from milreg.preprocessing import PatchGrid

# ---------------------------------------------------------------------------
# brute-force reference implementations (kept deliberately naive)


def pearson_oracle(x, y):
    n = len(x)
    mx = sum(x) / n
    my = sum(y) / n
    cov = sum((a - mx) * (b - my) for a, b in zip(x, y)) / n
    sx = math.sqrt(sum((a - mx) ** 2 for a in x) / n)
    sy = math.sqrt(sum((b - my) ** 2 for b in y) / n)
    return cov / (sx * sy)


def mean_ranks_oracle(values):
    ranks = [0.0] * len(values)
    for i, v in enumerate(values):
        positions = [j + 1 for j, w in enumerate(sorted(values)) if w == v]
        ranks[i] = sum(positions) / len(positions)
    return ranks


def auc_pair_counting_oracle(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    total = 0.0
    for p in pos:
        for q in neg:
            if p > q:
                total += 1.0
            elif p == q:
                total += 0.5
    return total / (len(pos) * len(neg))


# ---------------------------------------------------------------------------


class TestPearson:
    def test_positive_affine_gives_one(self):
        t = np.array([0.1, 0.4, 0.2, 0.9])
        assert pearson(2 * t + 3, t) == pytest.approx(1.0, abs=1e-12)

    def test_negation_gives_minus_one(self):
        t = np.array([0.1, 0.4, 0.2, 0.9])
        assert pearson(-t, t) == pytest.approx(-1.0, abs=1e-12)

    def test_matches_covariance_oracle(self):
        rng = np.random.default_rng(1)
        x = rng.normal(size=10)
        y = rng.normal(size=10)
        assert pearson(x, y) == pytest.approx(pearson_oracle(x.tolist(), y.tolist()), abs=1e-12)

    def test_constant_input_warns_and_returns_nan(self):
        with pytest.warns(UserWarning):
            out = pearson(np.ones(5), np.arange(5.0))
        assert math.isnan(out)

    def test_affine_invariance(self):
        rng = np.random.default_rng(2)
        x = rng.normal(size=30)
        y = rng.normal(size=30)
        assert pearson(3.0 * x + 1.0, y) == pytest.approx(pearson(x, y), abs=1e-9)
        assert pearson(x, 0.5 * y - 2.0) == pytest.approx(pearson(x, y), abs=1e-9)


class TestSpearman:
    def test_monotone_map_gives_one(self):
        t = np.array([0.2, 0.5, 0.1, 0.9, 0.6])
        assert spearman(t**3, t) == pytest.approx(1.0, abs=1e-12)

    def test_reversed_gives_minus_one(self):
        t = np.array([1.0, 2.0, 3.0, 4.0])
        assert spearman(t[::-1].copy(), t) == pytest.approx(-1.0, abs=1e-12)

    def test_ties_match_mean_rank_oracle(self):
        x = [1.0, 2.0, 2.0, 3.0, 2.0, 0.5]
        y = [0.3, 0.3, 0.9, 0.1, 0.8, 0.8]
        expected = pearson_oracle(mean_ranks_oracle(x), mean_ranks_oracle(y))
        assert spearman(np.array(x), np.array(y)) == pytest.approx(expected, abs=1e-12)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=40)
        y = rng.normal(size=40)
        assert spearman(np.exp(x), y) == pytest.approx(spearman(x, y), abs=1e-12)


class TestRocAuc:
    def test_perfect_separation(self):
        assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0

    def test_all_ties_give_half(self):
        assert roc_auc(np.ones(6), [0, 1, 0, 1, 0, 1]) == 0.5

    def test_matches_pair_counting_oracle(self):
        rng = np.random.default_rng(4)
        scores = np.round(rng.uniform(size=20), 1)  # force ties
        labels = rng.integers(0, 2, size=20)
        labels[:2] = [0, 1]
        expected = auc_pair_counting_oracle(scores.tolist(), labels.tolist())
        assert roc_auc(scores, labels) == pytest.approx(expected, abs=1e-12)

    def test_single_class_raises(self):
        with pytest.raises(ValueError):
            roc_auc([0.1, 0.2, 0.3], [1, 1, 1])

    def test_monotone_invariance(self):
        rng = np.random.default_rng(5)
        scores = rng.normal(size=50)
        labels = rng.integers(0, 2, size=50)
        labels[:2] = [0, 1]
        base = roc_auc(scores, labels)
        assert roc_auc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
        assert roc_auc(scores**3, labels) == pytest.approx(base, abs=1e-12)

    def test_negation_complements(self):
        rng = np.random.default_rng(6)
        scores = rng.normal(size=30)
        labels = rng.integers(0, 2, size=30)
        labels[:2] = [0, 1]
        assert roc_auc(scores, labels) + roc_auc(-scores, labels) == pytest.approx(1.0, abs=1e-12)


class TestRocCurve:
    def test_endpoints_and_monotonicity(self):
        rng = np.random.default_rng(7)
        scores = rng.uniform(size=25)
        labels = rng.integers(0, 2, size=25)
        labels[:2] = [0, 1]
        fpr, tpr, thresholds = roc_curve(scores, labels)
        assert fpr[0] == 0.0 and tpr[0] == 0.0
        assert fpr[-1] == 1.0 and tpr[-1] == 1.0
        assert np.all(np.diff(fpr) >= 0) and np.all(np.diff(tpr) >= 0)
        assert thresholds[0] == np.inf


class TestInterpretabilityAuc:
    def test_logits_equal_labels(self):
        labels = [np.array([0, 1, 1, 0]), np.array([1, 0, 0, 0])]
        scores = [l.astype(float) for l in labels]
        result = interpretability_auc(scores, labels)
        assert result.auc == 1.0
        assert result.n_slides_used == 2
        assert result.n_slides_excluded == 0

    def test_inverted_attention_scores_zero(self):
        labels = [np.array([0, 1, 1, 0])]
        scores = [1.0 - labels[0].astype(float)]
        assert interpretability_auc(scores, labels).auc == 0.0

    def test_single_class_slides_excluded_and_counted(self):
        labels = [np.array([1, 1, 1]), np.array([0, 1, 0])]
        scores = [np.array([0.2, 0.3, 0.1]), np.array([0.1, 0.9, 0.2])]
        result = interpretability_auc(scores, labels)
        assert result.n_slides_excluded == 1
        assert result.n_slides_used == 1
        assert result.auc == 1.0

    def test_micro_pools_patches(self):
        labels = [np.array([1, 1]), np.array([0, 0])]
        scores = [np.array([0.9, 0.8]), np.array([0.1, 0.2])]
        result = interpretability_auc(scores, labels, average="micro")
        assert result.auc == 1.0
        assert result.n_slides_excluded == 2


class TestAggregateFolds:
    def test_single_fold(self):
        fold = MetricReport(pearson=0.9, spearman=0.8, auc=0.7)
        agg = aggregate_folds([fold])
        assert agg.pearson == 0.9
        assert agg.std["pearson"] == 0.0
        assert agg.per_fold == (fold,)

    def test_constant_folds_have_zero_std(self):
        folds = [MetricReport(pearson=0.7, spearman=0.7, auc=0.7)] * 5
        agg = aggregate_folds(folds)
        assert agg.auc == pytest.approx(0.7)
        assert agg.std["auc"] == 0.0

    def test_two_folds_sample_std(self):
        folds = [MetricReport(pearson=0.6, spearman=0.5), MetricReport(pearson=0.8, spearman=0.5)]
        agg = aggregate_folds(folds)
        # n-1 formula by hand: sqrt(((0.6-0.7)^2 + (0.8-0.7)^2) / 1)
        assert agg.pearson == pytest.approx(0.7)
        assert agg.std["pearson"] == pytest.approx(math.sqrt(0.02), abs=1e-12)
        assert agg.auc is None


class TestBuildHeatmap:
    def grid(self):
        return PatchGrid(patch_size_px=16, coords=((0, 0), (0, 1), (1, 0)))

    def test_constant_values_map_to_half(self):
        hm = build_heatmap(self.grid(), np.array([3.0, 3.0, 3.0]), "attention")
        filled = hm.grid[~np.isnan(hm.grid)]
        assert np.all(filled == 0.5)

    def test_min_max_normalization(self):
        hm = build_heatmap(self.grid(), np.array([0.0, 10.0, 5.0]), "logits")
        assert hm.grid[0, 0] == 0.0
        assert hm.grid[0, 1] == 1.0
        assert hm.grid[1, 0] == 0.5
        assert np.isnan(hm.grid[1, 1])

    def test_length_mismatch_without_coords_errors(self):
        with pytest.raises(ValueError):
            build_heatmap(self.grid(), np.array([1.0, 2.0]), "logits")

    def test_explicit_coords_allow_any_order(self):
        hm = build_heatmap(
            self.grid(),
            np.array([5.0, 0.0]),
            "logits",
            coords=[(1, 0), (0, 0)],
        )
        assert hm.grid[1, 0] == 1.0
        assert hm.grid[0, 0] == 0.0

    def test_coords_outside_grid_error(self):
        with pytest.raises(ValueError):
            build_heatmap(self.grid(), np.array([1.0]), "logits", coords=[(5, 5)])

    def test_unknown_kind_rejected(self):
        with pytest.raises(ValueError):
            build_heatmap(self.grid(), np.array([1.0, 2.0, 3.0]), "saliency")
