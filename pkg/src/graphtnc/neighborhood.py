"""Temporal neighborhoods via unit-root testing.

A window's neighborhood is the largest symmetric span around it that still
looks stationary, probed by growing the span one window width at a time and
checking per-feature augmented Dickey-Fuller rejections. Positive samples
for the contrastive loss come from inside the neighborhood, negatives from
the rest of the series.

The ADF regression is the constant-only variant with AIC lag selection; the
p-value uses the MacKinnon response-surface approximation, so there is no
runtime dependency on a stats package.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import MultivariateSeries

# Response-surface coefficients for the constant-only case (no trend), one
# series. Polynomial in the test statistic; probit scale.
_TAU_MAX = 2.74
_TAU_MIN = -18.83
_TAU_STAR = -1.61
_TAU_SMALLP = (2.1659, 1.4412, 0.038269)
_TAU_LARGEP = (1.7339, 0.93202, -0.12745, -0.010368)


class AdfResult(NamedTuple):
    statistic: float
    p_value: float
    used_lag: int


def _norm_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def mackinnon_pvalue(statistic: float) -> float:
    """Approximate p-value of the constant-only ADF t-statistic."""
    if statistic > _TAU_MAX:
        return 1.0
    if statistic < _TAU_MIN:
        return 0.0
    coefs = _TAU_SMALLP if statistic <= _TAU_STAR else _TAU_LARGEP
    z = sum(c * statistic**i for i, c in enumerate(coefs))
    return _norm_cdf(z)


def default_max_lag(n: int) -> int:
    return int(np.floor((n - 1) ** (1.0 / 3.0)))


def _ols_tstat_first(y: np.ndarray, x: np.ndarray) -> float:
    """t-ratio of the first regressor, pseudoinverse-based like standard
    econometrics packages."""
    pinv = np.linalg.pinv(x)
    beta = pinv @ y
    resid = y - x @ beta
    df = len(y) - x.shape[1]
    scale = float(resid @ resid) / df
    var0 = float((pinv @ pinv.T)[0, 0]) * scale
    return float(beta[0] / math.sqrt(var0))


def _ols_aic(y: np.ndarray, x: np.ndarray) -> float:
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    n = len(y)
    ssr = float(resid @ resid)
    llf = -n / 2.0 * (math.log(2 * math.pi) + math.log(ssr / n) + 1.0)
    return -2.0 * llf + 2.0 * x.shape[1]


def adf_test(series, max_lag: int | None = None, autolag: bool = True) -> AdfResult:
    """Unit-root t-test on a univariate series, constant-only regression.

    With ``autolag`` the lag order minimizing AIC over 0..max_lag is chosen
    on a common trimmed sample, then the statistic is refit at that lag on
    the longest usable sample. With ``autolag=False`` the lag is exactly
    ``max_lag``. Small p-values reject the unit root (stationary).
    """
    y = np.asarray(series, dtype=np.float64).ravel()
    n = len(y)
    if not np.isfinite(y).all():
        raise ValueError("series contains non-finite values")
    if np.ptp(y) == 0.0:
        raise ValueError("constant series has no unit-root statistic")
    if max_lag is None:
        max_lag = default_max_lag(n)
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    if n <= max_lag + 3:
        raise ValueError(f"series of length {n} too short for max_lag={max_lag}")

    dy = np.diff(y)

    def design(lag: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        nobs = len(dy) - lag
        level = y[-nobs - 1 : -1]
        dlags = np.column_stack(
            [dy[lag - j : len(dy) - j] for j in range(1, lag + 1)]
        ) if lag else np.empty((nobs, 0))
        return dy[lag:], level, dlags

    if autolag:
        target, level, dlags = design(max_lag)
        ones = np.ones_like(target)
        best = None
        for p in range(max_lag + 1):
            x = np.column_stack([ones, level, dlags[:, :p]])
            key = (_ols_aic(target, x), p)
            if best is None or key < best:
                best = key
        used = best[1]
    else:
        used = max_lag

    target, level, dlags = design(used)
    x = np.column_stack([level, dlags, np.ones_like(target)])
    stat = _ols_tstat_first(target, x)
    return AdfResult(stat, mackinnon_pvalue(stat), used)


def span_is_stationary(
    values: np.ndarray, alpha: float = 0.05, max_lag: int | None = None
) -> bool:
    """Majority vote of per-feature unit-root rejections over an (N, L) span.

    Constant features carry no evidence and are skipped; the vote is over
    the remaining features. An all-constant span is degenerate.
    """
    values = np.asarray(values, dtype=np.float64)
    rejected = 0
    tested = 0
    for row in values:
        if np.ptp(row) == 0.0:
            continue
        tested += 1
        if adf_test(row, max_lag=max_lag).p_value < alpha:
            rejected += 1
    if tested == 0:
        raise ValueError("all features constant over the span")
    return rejected * 2 >= tested


def neighborhood_halfwidth(
    series: MultivariateSeries,
    t: int,
    w: int,
    max_delta: int | None = None,
    alpha: float = 0.05,
    max_lag: int | None = None,
) -> int:
    """Largest stationary halfwidth around the window at t, grown in steps
    of w up to max_delta (default 4w). Uses signals only."""
    length = series.length
    if not 0 <= t <= length - w:
        raise ValueError(f"no window of width {w} at t={t} in series of length {length}")
    if max_delta is None:
        max_delta = 4 * w
    if max_delta < w:
        raise ValueError("max_delta must be at least w")
    delta = w
    while delta + w <= max_delta:
        cand = delta + w
        lo, hi = max(0, t - cand), min(length, t + cand + w)
        if not span_is_stationary(series.values[:, lo:hi], alpha, max_lag):
            break
        delta = cand
    return delta


@dataclass(frozen=True)
class NeighborhoodSpec:
    """Sampling region around an anchor window."""

    center: int
    halfwidth: int
    series_length: int
    window_width: int

    def __post_init__(self):
        t, d, length, w = (
            self.center,
            self.halfwidth,
            self.series_length,
            self.window_width,
        )
        if w < 1 or length < w:
            raise ValueError("window must fit in the series")
        if not 0 <= t <= length - w:
            raise ValueError(f"no window of width {w} at t={t}")
        if d < w:
            raise ValueError("halfwidth must be at least the window width")


def sample_pairs(
    spec: NeighborhoodSpec, n_pos: int, n_neg: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Uniform positive starts from [t-delta, t+delta] (clipped to valid
    starts) and uniform negative starts from the complement."""
    t, d, w = spec.center, spec.halfwidth, spec.window_width
    last = spec.series_length - w
    pos_lo, pos_hi = max(0, t - d), min(last, t + d)
    positives = rng.integers(pos_lo, pos_hi + 1, size=n_pos)

    n_left = pos_lo
    n_right = last - pos_hi
    if n_left + n_right == 0:
        raise ValueError("neighborhood covers every valid start; no negatives exist")
    raw = rng.integers(0, n_left + n_right, size=n_neg)
    negatives = np.where(raw < n_left, raw, pos_hi + 1 + (raw - n_left))
    return positives, negatives


def sample_positive(spec: NeighborhoodSpec, rng: np.random.Generator) -> int:
    """One positive start, for trainers that never need negatives."""
    t, d, w = spec.center, spec.halfwidth, spec.window_width
    last = spec.series_length - w
    return int(rng.integers(max(0, t - d), min(last, t + d) + 1))


class NeighborhoodCache:
    """Memoizes halfwidths per (sample, anchor) so several training runs over
    the same dataset pay the ADF cost once."""

    def __init__(self, dataset, max_delta: int | None = None, alpha: float = 0.05,
                 max_lag: int | None = None):
        self.dataset = dataset
        self.max_delta = max_delta
        self.alpha = alpha
        self.max_lag = max_lag
        self._cache: dict[tuple[int, int], int] = {}

    def halfwidth(self, sample_index: int, t: int) -> int:
        key = (sample_index, t)
        if key not in self._cache:
            series, _ = self.dataset.samples[sample_index]
            self._cache[key] = neighborhood_halfwidth(
                series, t, self.dataset.window_width,
                max_delta=self.max_delta, alpha=self.alpha, max_lag=self.max_lag,
            )
        return self._cache[key]

    def spec(self, sample_index: int, t: int) -> NeighborhoodSpec:
        series, _ = self.dataset.samples[sample_index]
        return NeighborhoodSpec(
            center=t,
            halfwidth=self.halfwidth(sample_index, t),
            series_length=series.length,
            window_width=self.dataset.window_width,
        )
