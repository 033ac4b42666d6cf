"""Stationarity testing and neighborhood sampling.

The ADF implementation is checked against statsmodels as an independent
reference, and against the textbook 1%/5%/10% Dickey-Fuller critical values.
"""
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from statsmodels.tsa.stattools import adfuller

from graphtnc.data import MultivariateSeries
from graphtnc.neighborhood import (
    NeighborhoodCache,
    NeighborhoodSpec,
    adf_test,
    default_max_lag,
    mackinnon_pvalue,
    neighborhood_halfwidth,
    sample_pairs,
    sample_positive,
    span_is_stationary,
)


def noise(n, seed):
    return np.random.default_rng(seed).standard_normal(n)


def walk(n, seed):
    return np.cumsum(noise(n, seed))


class TestAdfAgainstStatsmodels:
    @pytest.mark.parametrize("lag", [0, 1, 3, 5])
    def test_fixed_lag_statistic_and_pvalue(self, lag):
        for i in range(8):
            y = noise(140, 100 + i) if i % 2 == 0 else walk(140, 100 + i)
            mine = adf_test(y, max_lag=lag, autolag=False)
            stat, pval, *_ = adfuller(y, maxlag=lag, autolag=None)
            assert abs(mine.statistic - stat) < 1e-6
            assert abs(mine.p_value - pval) < 1e-8
            assert mine.used_lag == lag

    def test_aic_lag_selection(self):
        for i in range(10):
            y = noise(140, 300 + i) if i % 2 == 0 else walk(140, 300 + i)
            mine = adf_test(y, max_lag=6)
            stat, _, used, *_ = adfuller(y, maxlag=6, autolag="AIC")
            assert abs(mine.statistic - stat) < 1e-6
            assert mine.used_lag == used

    def test_white_noise_is_rejected(self):
        hits = sum(adf_test(noise(200, 1000 + i)).p_value < 0.05 for i in range(20))
        assert hits >= 18

    def test_random_walk_is_kept(self):
        hits = sum(adf_test(walk(200, 2000 + i)).p_value < 0.05 for i in range(20))
        assert hits <= 4


class TestMackinnonPvalue:
    def test_textbook_critical_values(self):
        # Dickey-Fuller constant-only asymptotic critical values.
        assert mackinnon_pvalue(-3.43) == pytest.approx(0.01, abs=1e-3)
        assert mackinnon_pvalue(-2.86) == pytest.approx(0.05, abs=2e-3)
        assert mackinnon_pvalue(-2.57) == pytest.approx(0.10, abs=3e-3)

    def test_saturation(self):
        assert mackinnon_pvalue(3.0) == 1.0
        assert mackinnon_pvalue(-20.0) == 0.0

    def test_monotone_in_statistic(self):
        grid = np.linspace(-8.0, 2.0, 200)
        p = [mackinnon_pvalue(t) for t in grid]
        assert all(a <= b + 1e-12 for a, b in zip(p, p[1:]))


class TestAdfValidation:
    def test_constant_series(self):
        with pytest.raises(ValueError, match="constant"):
            adf_test(np.full(50, 1.0))

    def test_non_finite(self):
        y = noise(50, 0)
        y[3] = np.nan
        with pytest.raises(ValueError, match="finite"):
            adf_test(y)

    def test_too_short_for_lag(self):
        with pytest.raises(ValueError, match="too short"):
            adf_test(noise(8, 0), max_lag=5)

    def test_negative_lag(self):
        with pytest.raises(ValueError, match="non-negative"):
            adf_test(noise(50, 0), max_lag=-1)

    def test_default_max_lag_is_cube_root(self):
        assert default_max_lag(200) == 5
        assert default_max_lag(100) == 4
        assert default_max_lag(10) == 2


class TestSpanVote:
    def test_noise_span_is_stationary(self):
        assert span_is_stationary(np.random.default_rng(12).standard_normal((3, 150)))

    def test_walk_span_is_not(self):
        walks = np.cumsum(np.random.default_rng(11).standard_normal((3, 150)), axis=1)
        assert not span_is_stationary(walks)

    def test_tie_counts_as_majority(self):
        # one rejecting row + one non-rejecting row: 1 of 2 passes the vote
        g = np.random.default_rng(0)
        rows = np.stack([g.standard_normal(150), np.cumsum(g.standard_normal(150))])
        assert adf_test(rows[0]).p_value < 0.05 <= adf_test(rows[1]).p_value
        assert span_is_stationary(rows)

    def test_constant_rows_are_skipped(self):
        rows = np.vstack([np.full(150, 2.5), noise(150, 13)])
        assert span_is_stationary(rows)

    def test_all_constant_raises(self):
        with pytest.raises(ValueError, match="constant"):
            span_is_stationary(np.ones((2, 60)))


class TestHalfwidthSearch:
    def test_stationary_series_reaches_cap(self):
        series = MultivariateSeries(np.random.default_rng(5).standard_normal((3, 200)))
        assert neighborhood_halfwidth(series, 80, 10) == 40
        assert neighborhood_halfwidth(series, 80, 10, max_delta=20) == 20

    def test_structural_break_stops_growth(self):
        vals = np.random.default_rng(6).standard_normal((3, 200)) * 0.3
        vals[:, 100:] += 8.0
        series = MultivariateSeries(vals)
        assert neighborhood_halfwidth(series, 85, 10) == 10

    def test_halfwidth_is_window_multiple(self):
        series = MultivariateSeries(np.random.default_rng(7).standard_normal((4, 160)))
        for t in (0, 40, 110, 150):
            d = neighborhood_halfwidth(series, t, 10)
            assert d % 10 == 0 and 10 <= d <= 40

    def test_window_out_of_range(self):
        series = MultivariateSeries(noise(50, 0)[None, :])
        with pytest.raises(ValueError, match="no window"):
            neighborhood_halfwidth(series, 45, 10)

    def test_cap_below_window(self):
        series = MultivariateSeries(np.random.default_rng(8).standard_normal((2, 80)))
        with pytest.raises(ValueError, match="max_delta"):
            neighborhood_halfwidth(series, 20, 10, max_delta=5)


class TestNeighborhoodSpec:
    def test_valid(self):
        spec = NeighborhoodSpec(center=30, halfwidth=20, series_length=100, window_width=10)
        assert spec.halfwidth == 20

    def test_halfwidth_below_window(self):
        with pytest.raises(ValueError, match="halfwidth"):
            NeighborhoodSpec(center=30, halfwidth=5, series_length=100, window_width=10)

    def test_center_out_of_range(self):
        with pytest.raises(ValueError, match="no window"):
            NeighborhoodSpec(center=95, halfwidth=10, series_length=100, window_width=10)


class TestSampling:
    @given(
        length=st.integers(40, 300),
        w=st.integers(2, 12),
        seed=st.integers(0, 1000),
        data=st.data(),
    )
    @settings(max_examples=60, deadline=None)
    def test_pair_ranges(self, length, w, seed, data):
        last = length - w
        t = data.draw(st.integers(0, last))
        d = data.draw(st.integers(w, max(w, length // 3)))
        spec = NeighborhoodSpec(t, d, length, w)
        pos_lo, pos_hi = max(0, t - d), min(last, t + d)
        if pos_lo == 0 and pos_hi == last:
            with pytest.raises(ValueError, match="no negatives"):
                sample_pairs(spec, 4, 4, np.random.default_rng(seed))
            return
        pos, neg = sample_pairs(spec, 7, 9, np.random.default_rng(seed))
        assert pos.shape == (7,) and neg.shape == (9,)
        assert ((pos >= pos_lo) & (pos <= pos_hi)).all()
        assert ((neg >= 0) & (neg <= last)).all()
        assert ((neg < pos_lo) | (neg > pos_hi)).all()

    def test_negatives_cover_both_sides(self):
        spec = NeighborhoodSpec(center=50, halfwidth=10, series_length=110, window_width=10)
        _, neg = sample_pairs(spec, 1, 400, np.random.default_rng(3))
        assert (neg < 40).any() and (neg > 60).any()

    def test_same_seed_same_draws(self):
        spec = NeighborhoodSpec(center=50, halfwidth=10, series_length=110, window_width=10)
        a = sample_pairs(spec, 5, 5, np.random.default_rng(9))
        b = sample_pairs(spec, 5, 5, np.random.default_rng(9))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_single_positive_in_range(self):
        spec = NeighborhoodSpec(center=8, halfwidth=10, series_length=60, window_width=10)
        for s in range(20):
            p = sample_positive(spec, np.random.default_rng(s))
            assert 0 <= p <= 18


class TestCache:
    def test_memoizes_per_anchor(self, tiny_dataset, monkeypatch):
        import graphtnc.neighborhood as nb

        calls = []
        original = nb.neighborhood_halfwidth

        def counting(series, t, w, **kw):
            calls.append(t)
            return original(series, t, w, **kw)

        monkeypatch.setattr(nb, "neighborhood_halfwidth", counting)
        cache = NeighborhoodCache(tiny_dataset)
        first = cache.halfwidth(0, 30)
        again = cache.halfwidth(0, 30)
        other = cache.halfwidth(1, 30)
        assert first == again
        assert len(calls) == 2
        assert isinstance(other, int)

    def test_spec_fields(self, tiny_dataset):
        cache = NeighborhoodCache(tiny_dataset, max_delta=20)
        spec = cache.spec(0, 25)
        series, _ = tiny_dataset.samples[0]
        assert spec.center == 25
        assert spec.series_length == series.length
        assert spec.window_width == tiny_dataset.window_width
        assert tiny_dataset.window_width <= spec.halfwidth <= 20
