"""Contrastive training: discriminator, loss, analytic gradients with a
finite-difference audit, Adam, and the full loop with early stopping.

The loss for an anchor window representation z_t with positive samples z_l
and negative samples z_k is

    L = -[ mean_l log D(z_t, z_l)
         + mean_k ((1 - m) log(1 - D(z_t, z_k)) + m log D(z_t, z_k)) ]

where D is a small two-layer network ending in a sigmoid and m is the
probability that a window drawn from outside the neighborhood is actually a
positive. With an uninformative discriminator (D = 1/2 everywhere) the loss
is exactly 2 ln 2 for every m.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import LabeledDataset
from .encoder import EncoderConfig, adjacency_stack, encode, encode_values, init_encoder
from .neighborhood import NeighborhoodCache, sample_pairs
from .util import canonical_json, config_digest, derive_rng

PROB_EPS = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    weight_decay: float = 1e-5
    epochs: int = 100
    patience: int = 10
    m: float = 0.05
    window_width: int | None = None  # None: use the dataset's width
    n_pos: int = 5
    n_neg: int = 5
    anchors_per_epoch: int = 192
    batch_anchors: int = 32
    val_anchors: int = 32
    validation_fraction: float = 0.2
    max_delta: int | None = None  # None: 4w
    adf_alpha: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.m < 1.0:
            raise ValueError("m must lie in [0, 1)")
        if self.learning_rate <= 0 or self.weight_decay < 0:
            raise ValueError("learning_rate must be positive, weight_decay non-negative")
        if min(self.epochs, self.patience, self.n_pos, self.n_neg,
               self.anchors_per_epoch, self.batch_anchors, self.val_anchors) < 1:
            raise ValueError("counts must be positive")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must lie in [0, 1)")


@dataclass
class TrainReport:
    method: str
    train_loss: tuple[float, ...]
    val_loss: tuple[float, ...]
    best_epoch: int
    stopped_epoch: int
    wall_time: float
    seed: int
    config_digest: str

    def __post_init__(self):
        if not all(np.isfinite(self.train_loss)) or not all(np.isfinite(self.val_loss)):
            raise ValueError("loss history contains non-finite entries")

    def to_json(self, include_wall_time: bool = True) -> str:
        payload = dict(self.__dict__)
        if not include_wall_time:
            payload.pop("wall_time")
        return canonical_json(payload)


def init_discriminator(out_dim: int, rng: np.random.Generator) -> dict[str, Tensor]:
    """Affine 2h -> 4h, rectifier, affine 4h -> 1 (pre-sigmoid logit)."""
    h = out_dim

    def u(fan_in, shape):
        b = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-b, b, shape)

    return {
        "disc_w1": ad.parameter(u(2 * h, (2 * h, 4 * h))),
        "disc_b1": ad.parameter(np.zeros(4 * h)),
        "disc_w2": ad.parameter(u(4 * h, (4 * h, 1))),
        "disc_b2": ad.parameter(np.zeros(1)),
    }


def discriminate(z_a, z_b, dparams: dict[str, Tensor]) -> Tensor:
    """Probability that the two representations come from the same
    neighborhood, clamped away from 0 and 1. Accepts (B, h) batches."""
    za, zb = ad.as_tensor(z_a), ad.as_tensor(z_b)
    if za.value.shape != zb.value.shape:
        raise ValueError(f"shape mismatch {za.value.shape} vs {zb.value.shape}")
    squeeze = za.value.ndim == 1
    if squeeze:
        za, zb = ad.reshape(za, (1, -1)), ad.reshape(zb, (1, -1))
    x = ad.concat([za, zb], axis=1)
    hidden = ad.relu(ad.affine(x, dparams["disc_w1"], dparams["disc_b1"]))
    logit = ad.affine(hidden, dparams["disc_w2"], dparams["disc_b2"])
    prob = ad.clip(ad.sigmoid(logit), PROB_EPS, 1.0 - PROB_EPS)
    return ad.reshape(prob, (() if squeeze else (-1,)))


def _pair_terms(d_pos: Tensor, d_neg: Tensor, m: float) -> Tensor:
    pos_term = ad.tmean(ad.log(d_pos))
    one = ad.constant(1.0)
    neg_term = ad.tmean(
        ad.constant(1.0 - m) * ad.log(one - d_neg) + ad.constant(m) * ad.log(d_neg)
    )
    return -(pos_term + neg_term)


def tnc_loss(anchor, positives, negatives, dparams: dict[str, Tensor], m: float) -> Tensor:
    """Loss for one anchor against its sampled positives and negatives."""
    if not 0.0 <= m < 1.0:
        raise ValueError("m must lie in [0, 1)")
    pos = ad.as_tensor(positives)
    neg = ad.as_tensor(negatives)
    if pos.value.ndim != 2 or pos.value.shape[0] == 0:
        raise ValueError("need at least one positive sample")
    if neg.value.ndim != 2 or neg.value.shape[0] == 0:
        raise ValueError("need at least one negative sample")
    a = ad.reshape(ad.as_tensor(anchor), (1, -1))
    tile_p = a[np.zeros(pos.value.shape[0], dtype=np.intp)]
    tile_n = a[np.zeros(neg.value.shape[0], dtype=np.intp)]
    return _pair_terms(
        discriminate(tile_p, pos, dparams), discriminate(tile_n, neg, dparams), m
    )


@dataclass
class ContrastBatch:
    """Windows for a batch of anchors, each with the same number of positive
    and negative companions."""

    anchor_signals: np.ndarray  # (A, n, w)
    pos_signals: np.ndarray  # (A * n_pos, n, w)
    neg_signals: np.ndarray  # (A * n_neg, n, w)
    anchor_ahat: np.ndarray | None = None
    pos_ahat: np.ndarray | None = None
    neg_ahat: np.ndarray | None = None

    @property
    def n_anchors(self) -> int:
        return self.anchor_signals.shape[0]


def contrastive_loss(
    enc_params: dict[str, Tensor],
    econfig: EncoderConfig,
    dparams: dict[str, Tensor],
    batch: ContrastBatch,
    m: float,
) -> Tensor:
    """Mean loss over the batch; per-anchor means coincide with the global
    mean because every anchor carries equal sample counts."""
    z_a = encode(enc_params, econfig, batch.anchor_signals, batch.anchor_ahat)
    z_p = encode(enc_params, econfig, batch.pos_signals, batch.pos_ahat)
    z_n = encode(enc_params, econfig, batch.neg_signals, batch.neg_ahat)
    a = batch.n_anchors
    rep_p = np.repeat(np.arange(a, dtype=np.intp), z_p.value.shape[0] // a)
    rep_n = np.repeat(np.arange(a, dtype=np.intp), z_n.value.shape[0] // a)
    return _pair_terms(
        discriminate(z_a[rep_p], z_p, dparams),
        discriminate(z_a[rep_n], z_n, dparams),
        m,
    )


def discriminate_values(
    z_a: np.ndarray,
    z_b: np.ndarray,
    dparams: dict,
    preact_log: list | None = None,
) -> np.ndarray:
    """Tape-free mirror of :func:`discriminate` over (B, h) batches."""
    w1 = dparams["disc_w1"].value if isinstance(dparams["disc_w1"], Tensor) else dparams["disc_w1"]
    b1 = dparams["disc_b1"].value if isinstance(dparams["disc_b1"], Tensor) else dparams["disc_b1"]
    w2 = dparams["disc_w2"].value if isinstance(dparams["disc_w2"], Tensor) else dparams["disc_w2"]
    b2 = dparams["disc_b2"].value if isinstance(dparams["disc_b2"], Tensor) else dparams["disc_b2"]
    pre = np.concatenate([z_a, z_b], axis=1) @ w1 + b1
    if preact_log is not None:
        preact_log.append(("disc", pre))
    hidden = np.where(pre > 0.0, pre, 0.0)
    logit = hidden @ w2 + b2
    prob = np.clip(ad.sigmoid_value(logit), PROB_EPS, 1.0 - PROB_EPS)
    return prob.reshape(-1)


def contrastive_loss_value(
    enc_params: dict,
    econfig: EncoderConfig,
    dparams: dict,
    batch: ContrastBatch,
    m: float,
    preact_log: list | None = None,
) -> float:
    """Tape-free mirror of :func:`contrastive_loss`; identical arithmetic."""
    z_a = encode_values(enc_params, econfig, batch.anchor_signals, batch.anchor_ahat, preact_log)
    z_p = encode_values(enc_params, econfig, batch.pos_signals, batch.pos_ahat, preact_log)
    z_n = encode_values(enc_params, econfig, batch.neg_signals, batch.neg_ahat, preact_log)
    a = batch.n_anchors
    rep_p = np.repeat(np.arange(a, dtype=np.intp), z_p.shape[0] // a)
    rep_n = np.repeat(np.arange(a, dtype=np.intp), z_n.shape[0] // a)
    d_pos = discriminate_values(z_a[rep_p], z_p, dparams, preact_log)
    d_neg = discriminate_values(z_a[rep_n], z_n, dparams, preact_log)
    pos_term = np.log(d_pos).sum() * (1.0 / d_pos.size)
    neg_inner = (1.0 - m) * np.log(1.0 - d_neg) + m * np.log(d_neg)
    neg_term = neg_inner.sum() * (1.0 / d_neg.size)
    return -(pos_term + neg_term)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def collect_grads(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {
        k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.value))
        for k, p in params.items()
    }


def compute_gradients(
    batch: ContrastBatch,
    econfig: EncoderConfig,
    enc_params: dict[str, Tensor],
    dparams: dict[str, Tensor],
    m: float,
) -> tuple[float, dict[str, np.ndarray]]:
    """Analytic gradients of the batch loss for every trainable scalar."""
    merged = {**enc_params, **dparams}
    zero_grads(merged)
    loss = contrastive_loss(enc_params, econfig, dparams, batch, m)
    value = float(loss.value)
    if not np.isfinite(value):
        raise FloatingPointError(f"non-finite loss {value}")
    loss.backward()
    return value, collect_grads(merged)


# A central difference (L(x+e) - L(x-e))/2e inherits the rounding of the two
# loss evaluations: about one ulp of |L| each, so ~|L|*eps/(2*step) of noise
# in the quotient. Coordinates whose gradient sits below that noise cannot be
# confirmed or refuted by the probe, so sampling skips them. Exact zeros stay
# in the pool: a silently dropped backward term shows up as analytic 0 against
# a large numeric value.
GRAD_RESOLUTION = 5e-7


def finite_diff_check(
    loss_fn,
    params: dict[str, Tensor],
    step: float = 1e-5,
    coords_per_group: int = 200,
    rng: np.random.Generator | None = None,
    value_fn=None,
) -> float:
    """Worst relative disagreement between the analytic gradient and central
    differences over a random subsample of coordinates per parameter group.

    Sampling is restricted to coordinates the probe can resolve (gradient
    exactly zero or at least GRAD_RESOLUTION in magnitude). ``value_fn``, when
    given, must return the same scalar as ``loss_fn(params).value`` and is
    used for the difference probes; pass a tape-free evaluation to cut the
    probe cost.
    """
    rng = rng or np.random.default_rng(0)
    if value_fn is None:
        value_fn = lambda ps: float(loss_fn(ps).value)
    zero_grads(params)
    loss_fn(params).backward()
    grads = collect_grads(params)
    worst = 0.0
    for name, p in params.items():
        flat = p.value.reshape(-1)
        gflat = grads[name].reshape(-1)
        pool = np.flatnonzero((gflat == 0.0) | (np.abs(gflat) >= GRAD_RESOLUTION))
        if pool.size == 0:
            pool = np.arange(flat.size)
        if pool.size <= coords_per_group:
            coords = pool
        else:
            coords = pool[rng.choice(pool.size, size=coords_per_group, replace=False)]
        for i in coords:
            keep = flat[i]
            flat[i] = keep + step
            up = value_fn(params)
            flat[i] = keep - step
            down = value_fn(params)
            flat[i] = keep
            numeric = (up - down) / (2.0 * step)
            analytic = gflat[i]
            denom = max(abs(analytic), abs(numeric), 1e-8)
            worst = max(worst, abs(analytic - numeric) / denom)
    return worst


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0


def init_adam(params: dict[str, Tensor]) -> AdamState:
    return AdamState(
        m={k: np.zeros_like(p.value) for k, p in params.items()},
        v={k: np.zeros_like(p.value) for k, p in params.items()},
    )


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """Bias-corrected Adam with the decay folded into the gradient."""
    state.step += 1
    t = state.step
    c1 = 1.0 - beta1**t
    c2 = 1.0 - beta2**t
    for k, p in params.items():
        g = grads[k]
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for {k}")
        if weight_decay:
            g = g + weight_decay * p.value
        m = state.m[k]
        v = state.v[k]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


class WindowBank:
    """Per-dataset window store: signals plus, for graph-aware encoders, the
    precomputed normalized adjacency stacks."""

    def __init__(self, dataset: LabeledDataset, use_graph: bool):
        self.width = dataset.window_width
        self.signals = [series.values for series, _ in dataset.samples]
        self.ahat = (
            [adjacency_stack(graphs) for _, graphs in dataset.samples]
            if use_graph
            else None
        )

    def gather(self, anchors: list[tuple[int, int]]):
        w = self.width
        sig = np.stack([self.signals[j][:, t : t + w] for j, t in anchors])
        if self.ahat is None:
            return sig, None
        return sig, np.stack([self.ahat[j][t : t + w] for j, t in anchors])


def default_split(n_samples: int, validation_fraction: float, seed: int):
    """Deterministic train/validation sample split."""
    order = derive_rng(seed, "split").permutation(n_samples)
    n_val = int(round(n_samples * validation_fraction))
    if validation_fraction > 0:
        n_val = max(1, min(n_samples - 1, n_val))
    return np.sort(order[n_val:]), np.sort(order[:n_val])


def sample_anchors(
    rng: np.random.Generator,
    sample_indices: np.ndarray,
    length: int,
    width: int,
    count: int,
) -> list[tuple[int, int]]:
    picks = rng.integers(0, len(sample_indices), size=count)
    starts = rng.integers(0, length - width + 1, size=count)
    return [(int(sample_indices[p]), int(t)) for p, t in zip(picks, starts)]


def _assemble_batch(
    bank: WindowBank,
    cache: NeighborhoodCache,
    anchors: list[tuple[int, int]],
    pair_rngs,
    n_pos: int,
    n_neg: int,
) -> ContrastBatch:
    pos_keys: list[tuple[int, int]] = []
    neg_keys: list[tuple[int, int]] = []
    for (j, t), rng in zip(anchors, pair_rngs):
        spec = cache.spec(j, t)
        pos, neg = sample_pairs(spec, n_pos, n_neg, rng)
        pos_keys.extend((j, int(l)) for l in pos)
        neg_keys.extend((j, int(l)) for l in neg)
    a_sig, a_ahat = bank.gather(anchors)
    p_sig, p_ahat = bank.gather(pos_keys)
    n_sig, n_ahat = bank.gather(neg_keys)
    return ContrastBatch(a_sig, p_sig, n_sig, a_ahat, p_ahat, n_ahat)


def snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {k: p.value.copy() for k, p in params.items()}


def restore(params: dict[str, Tensor], arrays: dict[str, np.ndarray]) -> None:
    for k, p in params.items():
        p.value = arrays[k].copy()


def train_contrastive(
    dataset: LabeledDataset,
    econfig: EncoderConfig,
    tconfig: TrainConfig,
    method: str,
    train_indices: np.ndarray | None = None,
    val_indices: np.ndarray | None = None,
    cache: NeighborhoodCache | None = None,
):
    """Shared loop for the graph-aware model and its signal-only ablation.

    Anchor, pair, and validation draws come from streams derived per
    (seed, epoch) or (seed, epoch, anchor), so runs are reproducible and two
    methods trained on the same dataset and seed see identical samples.
    """
    if tconfig.window_width is not None and tconfig.window_width != dataset.window_width:
        raise ValueError(
            f"config window width {tconfig.window_width} does not match "
            f"dataset width {dataset.window_width}"
        )
    if not dataset.samples:
        raise ValueError("empty dataset")
    w = dataset.window_width
    length = dataset.length
    seed = tconfig.seed
    if train_indices is None or val_indices is None:
        train_indices, val_indices = default_split(
            len(dataset.samples), tconfig.validation_fraction, seed
        )
    if len(train_indices) == 0:
        raise ValueError("no training samples")
    cache = cache or NeighborhoodCache(
        dataset, max_delta=tconfig.max_delta, alpha=tconfig.adf_alpha
    )
    bank = WindowBank(dataset, econfig.use_graph)

    enc_params = init_encoder(econfig, derive_rng(seed, "init", method))
    dparams = init_discriminator(econfig.out_dim, derive_rng(seed, "init", method, "disc"))
    merged = {**enc_params, **dparams}
    state = init_adam(merged)

    started = time.perf_counter()
    train_hist: list[float] = []
    val_hist: list[float] = []
    best_val = np.inf
    best_epoch = -1
    best_enc = snapshot(enc_params)
    best_disc = snapshot(dparams)

    for epoch in range(tconfig.epochs):
        srng = derive_rng(seed, "sampling", epoch)
        anchors = sample_anchors(
            srng, train_indices, length, w, tconfig.anchors_per_epoch
        )
        epoch_loss = 0.0
        b = tconfig.batch_anchors
        for lo in range(0, len(anchors), b):
            chunk = anchors[lo : lo + b]
            rngs = [derive_rng(seed, "pairs", epoch, lo + i) for i in range(len(chunk))]
            batch = _assemble_batch(bank, cache, chunk, rngs, tconfig.n_pos, tconfig.n_neg)
            value, grads = compute_gradients(batch, econfig, enc_params, dparams, tconfig.m)
            adam_step(merged, grads, state, tconfig.learning_rate, tconfig.weight_decay)
            epoch_loss += value * len(chunk)
        train_hist.append(epoch_loss / len(anchors))

        vrng = derive_rng(seed, "validation", epoch)
        val_pool = val_indices if len(val_indices) else train_indices
        v_anchors = sample_anchors(vrng, val_pool, length, w, tconfig.val_anchors)
        v_rngs = [
            derive_rng(seed, "validation", epoch, "pairs", i)
            for i in range(len(v_anchors))
        ]
        v_batch = _assemble_batch(bank, cache, v_anchors, v_rngs, tconfig.n_pos, tconfig.n_neg)
        v_loss = float(
            contrastive_loss(enc_params, econfig, dparams, v_batch, tconfig.m).value
        )
        val_hist.append(v_loss)

        if v_loss < best_val:
            best_val = v_loss
            best_epoch = epoch
            best_enc = snapshot(enc_params)
            best_disc = snapshot(dparams)
        elif epoch - best_epoch >= tconfig.patience:
            break

    restore(enc_params, best_enc)
    restore(dparams, best_disc)
    report = TrainReport(
        method=method,
        train_loss=tuple(train_hist),
        val_loss=tuple(val_hist),
        best_epoch=best_epoch,
        stopped_epoch=len(train_hist),
        wall_time=time.perf_counter() - started,
        seed=seed,
        config_digest=config_digest({"encoder": econfig, "train": tconfig}),
    )
    return enc_params, dparams, report


def train_graphtnc(
    dataset: LabeledDataset,
    econfig: EncoderConfig,
    tconfig: TrainConfig,
    train_indices: np.ndarray | None = None,
    val_indices: np.ndarray | None = None,
    cache: NeighborhoodCache | None = None,
):
    """Train the graph-aware encoder. The discriminator is returned for
    audit; only the encoder is needed downstream."""
    if not econfig.use_graph:
        raise ValueError("econfig.use_graph must be set; use the ablation trainer otherwise")
    return train_contrastive(
        dataset, econfig, tconfig, "graphtnc", train_indices, val_indices, cache
    )
