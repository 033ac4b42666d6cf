"""Frozen-representation probing and the statistics used to compare methods:
accuracy, tie-aware average precision, exact Wilcoxon signed-rank, and
percentile bootstrap intervals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .training import adam_step, collect_grads, init_adam, zero_grads
from .util import derive_rng


@dataclass(frozen=True)
class ProbeConfig:
    n_classes: int
    learning_rate: float = 1e-3
    epochs: int = 100
    patience: int = 10
    batch_size: int = 64
    validation_fraction: float = 0.2
    weight_decay: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 2:
            raise ValueError("need at least two classes")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")


@dataclass
class ProbeParams:
    """One affine map from representation space to class logits."""

    weights: np.ndarray
    bias: np.ndarray

    def logits(self, representations: np.ndarray) -> np.ndarray:
        return np.asarray(representations, dtype=np.float64) @ self.weights + self.bias

    def scores(self, representations: np.ndarray) -> np.ndarray:
        z = self.logits(representations)
        z -= z.max(axis=1, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=1, keepdims=True)

    def predict(self, representations: np.ndarray) -> np.ndarray:
        return np.argmax(self.logits(representations), axis=1)


def train_probe(
    representations: np.ndarray, labels: np.ndarray, config: ProbeConfig
) -> ProbeParams:
    """Softmax regression on frozen representations, Adam with early stop on
    a held-out validation split."""
    x = np.asarray(representations, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or len(x) == 0:
        raise ValueError("representations must be a non-empty (M, h) array")
    if y.shape != (len(x),):
        raise ValueError("labels must align with representations")
    if y.min() < 0 or y.max() >= config.n_classes:
        raise ValueError(f"labels must lie in [0, {config.n_classes})")

    seed = config.seed
    order = derive_rng(seed, "probe", "split").permutation(len(x))
    n_val = int(round(len(x) * config.validation_fraction))
    if config.validation_fraction > 0:
        n_val = max(1, min(len(x) - 1, n_val))
    val_idx, train_idx = order[:n_val], order[n_val:]

    h = x.shape[1]
    bound = 1.0 / np.sqrt(h)
    init_rng = derive_rng(seed, "probe", "init")
    params = {
        "w": ad.parameter(init_rng.uniform(-bound, bound, (h, config.n_classes))),
        "b": ad.parameter(np.zeros(config.n_classes)),
    }
    state = init_adam(params)

    def ce_value(idx) -> float:
        logits = ad.affine(ad.constant(x[idx]), params["w"], params["b"])
        return float(ad.cross_entropy(logits, y[idx]).value)

    best_val = np.inf
    best_epoch = -1
    best = {k: p.value.copy() for k, p in params.items()}
    for epoch in range(config.epochs):
        perm = derive_rng(seed, "probe", "epoch", epoch).permutation(train_idx)
        for lo in range(0, len(perm), config.batch_size):
            idx = perm[lo : lo + config.batch_size]
            zero_grads(params)
            logits = ad.affine(ad.constant(x[idx]), params["w"], params["b"])
            loss = ad.cross_entropy(logits, y[idx])
            loss.backward()
            adam_step(params, collect_grads(params), state,
                      config.learning_rate, config.weight_decay)
        v = ce_value(val_idx if len(val_idx) else train_idx)
        if v < best_val:
            best_val = v
            best_epoch = epoch
            best = {k: p.value.copy() for k, p in params.items()}
        elif epoch - best_epoch >= config.patience:
            break
    return ProbeParams(best["w"], best["b"])


def average_precision(scores: np.ndarray, positives: np.ndarray) -> float:
    """Interpolation-free average precision with grouped ties.

    Items are ranked by score; each tied block is treated as one group, every
    positive in it contributing the precision at the end of the block. With a
    single all-tied block this reduces to the prevalence.
    """
    s = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(positives, dtype=bool)
    if s.shape != pos.shape or s.ndim != 1:
        raise ValueError("scores and positives must be aligned vectors")
    total_pos = int(pos.sum())
    if total_pos == 0:
        raise ValueError("no positive examples")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    p_sorted = pos[order]
    ap = 0.0
    seen = 0
    tp = 0
    i = 0
    n = len(s)
    while i < n:
        j = i
        while j + 1 < n and s_sorted[j + 1] == s_sorted[i]:
            j += 1
        block_tp = int(p_sorted[i : j + 1].sum())
        seen = j + 1
        tp += block_tp
        ap += block_tp * (tp / seen)
        i = j + 1
    return ap / total_pos


@dataclass
class EvalResult:
    accuracy: float
    auprc: float
    per_class_auprc: np.ndarray
    confusion: np.ndarray

    def __post_init__(self):
        self.per_class_auprc = np.asarray(self.per_class_auprc, dtype=np.float64)
        self.confusion = np.asarray(self.confusion, dtype=np.int64)


def evaluate(probe: ProbeParams, representations: np.ndarray, labels: np.ndarray) -> EvalResult:
    """Accuracy from argmax predictions (ties to the lowest class index) and
    macro AUPRC over one-vs-rest softmax scores; classes without positives
    are skipped by the macro average and reported as NaN."""
    x = np.asarray(representations, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if x.ndim != 2 or y.shape != (len(x),) or len(x) == 0:
        raise ValueError("representations and labels must be aligned and non-empty")
    n_classes = probe.weights.shape[1]
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"labels must lie in [0, {n_classes})")
    scores = probe.scores(x)
    preds = np.argmax(scores, axis=1)
    accuracy = float(np.mean(preds == y))
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (y, preds), 1)
    per_class = np.full(n_classes, np.nan)
    for c in range(n_classes):
        if (y == c).any():
            per_class[c] = average_precision(scores[:, c], y == c)
    macro = float(np.nanmean(per_class))
    return EvalResult(accuracy, macro, per_class, confusion)


class WilcoxonResult(NamedTuple):
    p_value: float
    statistic: float  # sum of positive-difference ranks
    n: int  # pairs remaining after dropping zero differences
    exact: bool
    degenerate: bool


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="stable")
    ranks = np.empty(len(x))
    sx = x[order]
    i = 0
    while i < len(x):
        j = i
        while j + 1 < len(x) and sx[j + 1] == sx[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def _exact_two_sided(double_ranks: np.ndarray, double_w: int) -> float:
    """Distribution of twice the rank sum via integer convolution over all
    sign assignments; equivalent to enumerating the 2^n patterns."""
    total = int(double_ranks.sum())
    counts = np.zeros(total + 1, dtype=np.float64)
    counts[0] = 1.0
    for r in double_ranks:
        shifted = np.zeros_like(counts)
        shifted[r:] = counts[: total + 1 - r]
        counts += shifted
    counts /= counts.sum()
    lower = counts[: double_w + 1].sum()
    upper = counts[double_w:].sum()
    return float(min(1.0, 2.0 * min(lower, upper)))


def wilcoxon_signed_rank(a, b, exact_cutoff: int = 25) -> WilcoxonResult:
    """Two-sided paired signed-rank test. Exact for n <= exact_cutoff, normal
    approximation with tie and continuity corrections beyond. Zero
    differences are dropped; if all are zero the result is degenerate."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be aligned vectors")
    d = a - b
    d = d[d != 0.0]
    n = len(d)
    if n == 0:
        return WilcoxonResult(1.0, 0.0, 0, True, True)
    ranks = _midranks(np.abs(d))
    w_pos = float(ranks[d > 0].sum())
    if n <= exact_cutoff:
        double_ranks = np.rint(2.0 * ranks).astype(np.int64)
        double_w = int(round(2.0 * w_pos))
        return WilcoxonResult(_exact_two_sided(double_ranks, double_w), w_pos, n,
                              True, False)
    mean = n * (n + 1) / 4.0
    var = n * (n + 1) * (2 * n + 1) / 24.0
    _, tie_counts = np.unique(np.abs(d), return_counts=True)
    var -= float(((tie_counts**3 - tie_counts) / 48.0).sum())
    diff = w_pos - mean
    correction = 0.5 * np.sign(diff)
    z = (diff - correction) / math.sqrt(var)
    p = math.erfc(abs(z) / math.sqrt(2.0))
    return WilcoxonResult(min(1.0, p), w_pos, n, False, False)


def bootstrap_ci(
    values,
    b: int = 1000,
    level: float = 0.95,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Percentile interval of resampled means."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 1 or len(values) == 0:
        raise ValueError("need a non-empty vector of values")
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    rng = rng or np.random.default_rng(0)
    idx = rng.integers(0, len(values), size=(b, len(values)))
    means = values[idx].mean(axis=1)
    alpha = (1.0 - level) / 2.0
    lo, hi = np.quantile(means, [alpha, 1.0 - alpha])
    return float(lo), float(hi)


def export_embeddings(representations: np.ndarray, labels, path) -> None:
    """CSV with header z_0..z_{h-1},label; full-precision decimals."""
    x = np.asarray(representations, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("representations must be a 2-D array")
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (len(x),):
        raise ValueError("labels must align with representations")
    header = ",".join([f"z_{i}" for i in range(x.shape[1])] + ["label"])
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row, lab in zip(x, y):
            fh.write(",".join(f"{v:.17g}" for v in row) + f",{lab}\n")
