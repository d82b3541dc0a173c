import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ratecast.ratings import (DegenerateScaleError, MetricKind, MetricMatrix, RatingMatrix, RatingScale,
                              quantize, thresholds_by_percentile, thresholds_even)


def matrix_from_sample(sample, kind=MetricKind.LOWER_IS_BETTER):
    """Pack a 1-d sample into the off-diagonal of the smallest square matrix that holds it."""
    sample = np.asarray(sample, dtype=np.float64)
    n = 2
    while n * (n - 1) < sample.size:
        n += 1
    values = np.full((n, n), np.nan)
    off = ~np.eye(n, dtype=bool)
    slots = np.flatnonzero(off)[: sample.size]
    values.flat[slots] = sample
    return MetricMatrix(values, np.isnan(values), kind)


def oracle_percentile(sample, q):
    """Linear interpolation between closest ranks, written out by hand."""
    s = np.sort(np.asarray(sample, dtype=np.float64))
    pos = q / 100.0 * (s.size - 1)
    lo = int(np.floor(pos))
    hi = min(lo + 1, s.size - 1)
    return s[lo] + (pos - lo) * (s[hi] - s[lo])


class TestMetricMatrix:
    def test_diagonal_forced_missing(self):
        m = MetricMatrix(np.ones((3, 3)), np.zeros((3, 3), dtype=bool))
        assert m.missing.diagonal().all()
        assert m.observed_count() == 6

    def test_negative_and_nan_are_missing(self):
        values = np.array([[0, -1, 5], [np.nan, 0, 2], [3, 4, 0]], dtype=float)
        m = MetricMatrix(values, np.zeros((3, 3), dtype=bool))
        assert m.missing[0, 1] and m.missing[1, 0]
        assert m.observed_count() == 4

    def test_rejects_non_square(self):
        with pytest.raises(ValueError):
            MetricMatrix(np.ones((2, 3)), np.zeros((2, 3), dtype=bool))

    def test_kind_aliases(self):
        assert MetricKind.parse("RTT") is MetricKind.LOWER_IS_BETTER
        assert MetricKind.parse("abw") is MetricKind.HIGHER_IS_BETTER
        assert MetricKind.parse("higher_is_better") is MetricKind.HIGHER_IS_BETTER


class TestPercentileThresholds:
    def test_five_values_match_hand_percentiles(self):
        tau = thresholds_by_percentile(matrix_from_sample([10, 20, 30, 40, 50])).thresholds
        assert tau == pytest.approx([18, 26, 34, 42], abs=1e-12)

    def test_repeated_values_match_brute_force_oracle(self):
        sample = np.repeat([10.0, 20.0, 30.0, 40.0, 50.0], 200)
        m = matrix_from_sample(sample)
        tau = thresholds_by_percentile(m).thresholds
        expected = [oracle_percentile(sample, q) for q in (20, 40, 60, 80)]
        assert tau == pytest.approx(expected, abs=1e-12)
        assert tau == pytest.approx([18, 26, 34, 42], abs=1e-9)

    @given(st.lists(st.floats(0.1, 1000.0), min_size=12, max_size=80, unique=True))
    @settings(max_examples=50, deadline=None)
    def test_agrees_with_oracle(self, sample):
        tau = thresholds_by_percentile(matrix_from_sample(sample)).thresholds
        expected = [oracle_percentile(sample, q) for q in (20, 40, 60, 80)]
        assert tau == pytest.approx(expected, rel=1e-12)

    def test_single_value_is_degenerate(self):
        with pytest.raises(DegenerateScaleError):
            thresholds_by_percentile(matrix_from_sample(np.full(30, 7.0)))

    def test_too_few_values_is_degenerate(self):
        with pytest.raises(DegenerateScaleError):
            thresholds_by_percentile(matrix_from_sample([1.0, 2.0]))

    def test_uniform_sample_hits_analytic_quantiles(self):
        sample = np.random.default_rng(7).random(100_000)
        tau = thresholds_by_percentile(matrix_from_sample(sample)).thresholds
        assert np.max(np.abs(np.array(tau) - [0.2, 0.4, 0.6, 0.8])) < 0.02

    @pytest.mark.parametrize("seed", range(4))
    def test_balanced_classes(self, seed):
        sample = np.random.default_rng(seed).lognormal(4.0, 1.0, 5000)
        m = matrix_from_sample(sample)
        counts = quantize(m, thresholds_by_percentile(m)).class_counts()
        assert np.all(np.abs(counts / counts.sum() - 0.2) <= 0.02)


class TestEvenThresholds:
    @pytest.mark.parametrize("upper,expected", [
        (300, (75.0, 150.0, 225.0, 300.0)),
        (100, (25.0, 50.0, 75.0, 100.0)),
        (80, (20.0, 40.0, 60.0, 80.0)),
    ])
    def test_published_vectors_bit_exact(self, upper, expected):
        assert thresholds_even(upper).thresholds == expected

    @pytest.mark.parametrize("upper", [0, -5, float("inf")])
    def test_invalid_upper(self, upper):
        with pytest.raises(ValueError):
            thresholds_even(upper)


class TestRatingScale:
    def test_rejects_unsorted(self):
        with pytest.raises(DegenerateScaleError):
            RatingScale((10.0, 5.0, 20.0, 30.0))

    def test_rejects_nonpositive(self):
        with pytest.raises(DegenerateScaleError):
            RatingScale((0.0, 5.0, 20.0, 30.0))

    def test_rtt_examples(self):
        scale = RatingScale((75, 150, 225, 300), "rtt")
        assert scale.rate(100) == 4
        assert scale.rate(400) == 1
        assert scale.rate(10) == 5

    def test_abw_example(self):
        assert RatingScale((20, 40, 60, 80), "abw").rate(90) == 5
        assert RatingScale((20, 40, 60, 80), "abw").rate(5) == 1

    def test_value_on_threshold_falls_in_lower_bin(self):
        rtt = RatingScale((75, 150, 225, 300), "rtt")
        abw = RatingScale((20, 40, 60, 80), "abw")
        # lower bin: higher rating for RTT, lower rating for ABW
        assert rtt.rate([75, 150, 300]).tolist() == [5, 4, 2]
        assert abw.rate([20, 40, 80]).tolist() == [1, 2, 4]

    @given(st.lists(st.floats(0, 1000), min_size=2, max_size=50), st.sampled_from(["rtt", "abw"]))
    def test_monotone_and_in_range(self, values, kind):
        scale = RatingScale((75, 150, 225, 300), kind)
        v = np.sort(np.asarray(values))
        r = scale.rate(v)
        assert r.min() >= 1 and r.max() <= 5
        steps = np.diff(r)
        assert np.all(steps <= 0) if kind == "rtt" else np.all(steps >= 0)


class TestQuantize:
    def test_omits_missing_and_diagonal(self):
        values = np.array([[0, 10, 200], [50, 0, -1], [np.nan, 400, 0]], dtype=float)
        m = MetricMatrix(values, np.zeros((3, 3), dtype=bool))
        r = quantize(m, thresholds_even(300))
        assert len(r) == 4
        dense = r.to_dense()
        assert dense[0, 1] == 5 and dense[0, 2] == 3 and dense[1, 0] == 5 and dense[2, 1] == 1

    def test_kind_mismatch(self):
        m = MetricMatrix(np.ones((3, 3)), np.zeros((3, 3), dtype=bool), "abw")
        with pytest.raises(ValueError):
            quantize(m, thresholds_even(300, kind="rtt"))


class TestRatingMatrix:
    def test_rejects_duplicates(self):
        with pytest.raises(ValueError):
            RatingMatrix(3, [0, 0], [1, 1], [2, 3])

    def test_rejects_diagonal(self):
        with pytest.raises(ValueError):
            RatingMatrix(3, [1], [1], [2])

    def test_rejects_out_of_range_rating(self):
        with pytest.raises(ValueError):
            RatingMatrix(3, [0], [1], [6])

    def test_subset_and_counts(self):
        r = RatingMatrix(3, [0, 1, 2], [1, 2, 0], [1, 5, 5])
        assert r.class_counts().tolist() == [1, 0, 0, 0, 2]
        assert len(r.subset(np.array([True, False, True]))) == 2
