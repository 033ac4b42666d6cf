"""Reference methods trained on the same windows, encoder, and optimizer as
the graph-aware contrastive model: the signal-only contrastive ablation, two
non-contrastive twins (EMA teacher and stop-gradient), and a fully
supervised encoder-plus-classifier.

All methods draw anchors from the same per-epoch streams, so any two methods
trained on one dataset and seed see identical anchor windows.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import LabeledDataset, window_label
from .encoder import EncoderConfig, encode, init_encoder
from .neighborhood import NeighborhoodCache, sample_positive
from .training import (
    AdamState,
    TrainConfig,
    TrainReport,
    WindowBank,
    adam_step,
    collect_grads,
    default_split,
    init_adam,
    restore,
    sample_anchors,
    snapshot,
    train_contrastive,
    zero_grads,
)
from .util import config_digest, derive_rng

PROJ_WIDTH = 128
NORM_FLOOR_SQ = 1e-24


def train_tnc_nograph(
    dataset: LabeledDataset,
    econfig: EncoderConfig,
    tconfig: TrainConfig,
    train_indices: np.ndarray | None = None,
    val_indices: np.ndarray | None = None,
    cache: NeighborhoodCache | None = None,
):
    """Same contrastive pipeline, GRU fed the raw signal, graphs ignored."""
    if econfig.use_graph:
        econfig = EncoderConfig(
            n_nodes=econfig.n_nodes,
            graph_dim=econfig.graph_dim,
            interact_dim=econfig.interact_dim,
            out_dim=econfig.out_dim,
            gru_hidden=econfig.gru_hidden,
            use_graph=False,
        )
    return train_contrastive(
        dataset, econfig, tconfig, "tnc", train_indices, val_indices, cache
    )


def _init_chain(prefix: str, dims: tuple[int, ...], rng) -> dict[str, Tensor]:
    params: dict[str, Tensor] = {}
    for i, (fan_in, fan_out) in enumerate(zip(dims, dims[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        params[f"{prefix}_w{i}"] = ad.parameter(rng.uniform(-bound, bound, (fan_in, fan_out)))
        params[f"{prefix}_b{i}"] = ad.parameter(np.zeros(fan_out))
    return params


def _chain_forward(params: dict[str, Tensor], prefix: str, x: Tensor) -> Tensor:
    i = 0
    while f"{prefix}_w{i}" in params:
        x = ad.affine(x, params[f"{prefix}_w{i}"], params[f"{prefix}_b{i}"])
        i += 1
        if f"{prefix}_w{i}" in params:
            x = ad.relu(x)
    return x


def _cosine_rows(a: Tensor, b: Tensor) -> Tensor:
    dot = ad.tsum(a * b, axis=1)
    na = ad.sqrt(ad.clip(ad.tsum(a * a, axis=1), NORM_FLOOR_SQ, np.inf))
    nb = ad.sqrt(ad.clip(ad.tsum(b * b, axis=1), NORM_FLOOR_SQ, np.inf))
    return dot / (na * nb)


@dataclass
class ByolParams:
    """Student and EMA-teacher branches plus the student-only predictor."""

    student_enc: dict[str, Tensor]
    student_proj: dict[str, Tensor]
    predictor: dict[str, Tensor]
    teacher_enc: dict[str, Tensor]
    teacher_proj: dict[str, Tensor]
    ema_rate: float

    def __post_init__(self):
        if not 0.0 <= self.ema_rate <= 1.0:
            raise ValueError("ema_rate must lie in [0, 1]")
        for s, t in ((self.student_enc, self.teacher_enc),
                     (self.student_proj, self.teacher_proj)):
            if set(s) != set(t) or any(s[k].value.shape != t[k].value.shape for k in s):
                raise ValueError("student and teacher weights must be shape-identical")

    def trainable(self) -> dict[str, Tensor]:
        return {**self.student_enc, **self.student_proj, **self.predictor}


def init_byol(econfig: EncoderConfig, rng, ema_rate: float = 0.99) -> ByolParams:
    """Teacher starts as a copy of the student."""
    h = econfig.out_dim
    student_enc = init_encoder(econfig, rng)
    student_proj = _init_chain("proj", (h, PROJ_WIDTH, PROJ_WIDTH), rng)
    predictor = _init_chain("pred", (PROJ_WIDTH, PROJ_WIDTH, PROJ_WIDTH), rng)
    teacher_enc = {k: ad.parameter(v.value.copy()) for k, v in student_enc.items()}
    teacher_proj = {k: ad.parameter(v.value.copy()) for k, v in student_proj.items()}
    return ByolParams(student_enc, student_proj, predictor, teacher_enc, teacher_proj,
                      ema_rate)


def ema_update(params: ByolParams) -> None:
    tau = params.ema_rate
    for src, dst in ((params.student_enc, params.teacher_enc),
                     (params.student_proj, params.teacher_proj)):
        for k in src:
            dst[k].value = tau * dst[k].value + (1.0 - tau) * src[k].value


def byol_loss(params: ByolParams, econfig: EncoderConfig, views) -> Tensor:
    """Symmetrized normalized-MSE, 2 - 2 cos per direction averaged, in [0, 4].
    The teacher branch enters as data, so gradients reach only the student."""
    sig1, ahat1, sig2, ahat2 = views

    def student(sig, ahat):
        z = encode(params.student_enc, econfig, sig, ahat)
        return _chain_forward(params.predictor, "pred",
                              _chain_forward(params.student_proj, "proj", z))

    def teacher(sig, ahat):
        z = encode(params.teacher_enc, econfig, sig, ahat)
        return ad.constant(_chain_forward(params.teacher_proj, "proj", z).value)

    fwd = ad.constant(2.0) - ad.constant(2.0) * _cosine_rows(student(sig1, ahat1),
                                                             teacher(sig2, ahat2))
    rev = ad.constant(2.0) - ad.constant(2.0) * _cosine_rows(student(sig2, ahat2),
                                                             teacher(sig1, ahat1))
    return ad.constant(0.5) * (ad.tmean(fwd) + ad.tmean(rev))


def byol_step(
    views,
    params: ByolParams,
    econfig: EncoderConfig,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> float:
    """One optimization step on the student followed by the teacher EMA."""
    trainable = params.trainable()
    zero_grads(trainable)
    loss = byol_loss(params, econfig, views)
    loss.backward()
    adam_step(trainable, collect_grads(trainable), state, lr, weight_decay)
    ema_update(params)
    return float(loss.value)


@dataclass
class SimSiamParams:
    """One shared branch; the predictor breaks the symmetry, the stop-gradient
    prevents collapse."""

    encoder: dict[str, Tensor]
    projector: dict[str, Tensor]
    predictor: dict[str, Tensor]

    def trainable(self) -> dict[str, Tensor]:
        return {**self.encoder, **self.projector, **self.predictor}


def init_simsiam(econfig: EncoderConfig, rng) -> SimSiamParams:
    h = econfig.out_dim
    return SimSiamParams(
        encoder=init_encoder(econfig, rng),
        projector=_init_chain("proj", (h, PROJ_WIDTH, PROJ_WIDTH), rng),
        predictor=_init_chain("pred", (PROJ_WIDTH, PROJ_WIDTH, PROJ_WIDTH), rng),
    )


def simsiam_loss(params: SimSiamParams, econfig: EncoderConfig, views) -> Tensor:
    """0.5 * [-cos(pred(p1), sg(p2)) - cos(pred(p2), sg(p1))], in [-1, 1]."""
    sig1, ahat1, sig2, ahat2 = views
    p1 = _chain_forward(params.projector, "proj",
                        encode(params.encoder, econfig, sig1, ahat1))
    p2 = _chain_forward(params.projector, "proj",
                        encode(params.encoder, econfig, sig2, ahat2))
    q1 = _chain_forward(params.predictor, "pred", p1)
    q2 = _chain_forward(params.predictor, "pred", p2)
    sg1, sg2 = ad.constant(p1.value), ad.constant(p2.value)
    half = ad.constant(0.5)
    return half * (ad.tmean(-_cosine_rows(q1, sg2)) + ad.tmean(-_cosine_rows(q2, sg1)))


def simsiam_step(
    views,
    params: SimSiamParams,
    econfig: EncoderConfig,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> float:
    trainable = params.trainable()
    zero_grads(trainable)
    loss = simsiam_loss(params, econfig, views)
    loss.backward()
    adam_step(trainable, collect_grads(trainable), state, lr, weight_decay)
    return float(loss.value)


def _positive_views(bank, cache, anchors, pair_rngs):
    pos_keys = [
        (j, sample_positive(cache.spec(j, t), rng))
        for (j, t), rng in zip(anchors, pair_rngs)
    ]
    a_sig, a_ahat = bank.gather(anchors)
    p_sig, p_ahat = bank.gather(pos_keys)
    return a_sig, a_ahat, p_sig, p_ahat


def _loop(dataset, tconfig, method, split, digest, train_loss_value,
          val_loss_value, trainable):
    """Shared epoch scaffolding: per-epoch anchors, early stopping on the
    validation loss, best-snapshot restore, report assembly.

    train_loss_value(epoch, anchors, adam) runs the optimization for one
    anchor chunk sequence and returns the mean loss; val_loss_value(epoch,
    anchors) only evaluates.
    """
    started = time.perf_counter()
    state = init_adam(trainable)
    train_hist: list[float] = []
    val_hist: list[float] = []
    best_val = np.inf
    best_epoch = -1
    best = snapshot(trainable)
    seed = tconfig.seed
    train_idx, val_idx = split
    length = dataset.length
    w = dataset.window_width

    for epoch in range(tconfig.epochs):
        srng = derive_rng(seed, "sampling", epoch)
        anchors = sample_anchors(srng, train_idx, length, w, tconfig.anchors_per_epoch)
        train_hist.append(train_loss_value(epoch, anchors, state))

        vrng = derive_rng(seed, "validation", epoch)
        pool = val_idx if len(val_idx) else train_idx
        v_anchors = sample_anchors(vrng, pool, length, w, tconfig.val_anchors)
        v_loss = val_loss_value(epoch, v_anchors)
        val_hist.append(v_loss)
        if v_loss < best_val:
            best_val = v_loss
            best_epoch = epoch
            best = snapshot(trainable)
        elif epoch - best_epoch >= tconfig.patience:
            break

    restore(trainable, best)
    return TrainReport(
        method=method,
        train_loss=tuple(train_hist),
        val_loss=tuple(val_hist),
        best_epoch=best_epoch,
        stopped_epoch=len(train_hist),
        wall_time=time.perf_counter() - started,
        seed=seed,
        config_digest=digest,
    )


def _prepare(dataset, econfig, tconfig, train_indices, val_indices, needs_delta,
             method_cache):
    if tconfig.window_width is not None and tconfig.window_width != dataset.window_width:
        raise ValueError("config window width does not match dataset width")
    if train_indices is None or val_indices is None:
        train_indices, val_indices = default_split(
            len(dataset.samples), tconfig.validation_fraction, tconfig.seed
        )
    cache = None
    if needs_delta:
        cache = method_cache or NeighborhoodCache(
            dataset, max_delta=tconfig.max_delta, alpha=tconfig.adf_alpha
        )
    bank = WindowBank(dataset, econfig.use_graph)
    split = (np.asarray(train_indices), np.asarray(val_indices))
    digest = config_digest({"encoder": econfig, "train": tconfig})
    return bank, cache, split, digest


def train_byol(
    dataset: LabeledDataset,
    econfig: EncoderConfig,
    tconfig: TrainConfig,
    ema_rate: float = 0.99,
    train_indices: np.ndarray | None = None,
    val_indices: np.ndarray | None = None,
    cache: NeighborhoodCache | None = None,
):
    """Teacher-student training on temporal positive pairs; no negatives."""
    bank, cache, split, digest = _prepare(dataset, econfig, tconfig, train_indices,
                                          val_indices, True, cache)
    params = init_byol(econfig, derive_rng(tconfig.seed, "init", "byol"), ema_rate)

    def train_value(epoch, anchors, state):
        total = 0.0
        b = tconfig.batch_anchors
        for lo in range(0, len(anchors), b):
            chunk = anchors[lo : lo + b]
            rngs = [derive_rng(tconfig.seed, "pairs", epoch, lo + i)
                    for i in range(len(chunk))]
            views = _positive_views(bank, cache, chunk, rngs)
            total += byol_step(views, params, econfig, state,
                               tconfig.learning_rate, tconfig.weight_decay) * len(chunk)
        return total / len(anchors)

    def val_value(epoch, anchors):
        rngs = [derive_rng(tconfig.seed, "validation", epoch, "pairs", i)
                for i in range(len(anchors))]
        views = _positive_views(bank, cache, anchors, rngs)
        return float(byol_loss(params, econfig, views).value)

    report = _loop(dataset, tconfig, "byol", split, digest, train_value, val_value,
                   params.trainable())
    return params, report


def train_simsiam(
    dataset: LabeledDataset,
    econfig: EncoderConfig,
    tconfig: TrainConfig,
    train_indices: np.ndarray | None = None,
    val_indices: np.ndarray | None = None,
    cache: NeighborhoodCache | None = None,
):
    """Stop-gradient twin training on temporal positive pairs."""
    bank, cache, split, digest = _prepare(dataset, econfig, tconfig, train_indices,
                                          val_indices, True, cache)
    params = init_simsiam(econfig, derive_rng(tconfig.seed, "init", "simsiam"))

    def train_value(epoch, anchors, state):
        total = 0.0
        b = tconfig.batch_anchors
        for lo in range(0, len(anchors), b):
            chunk = anchors[lo : lo + b]
            rngs = [derive_rng(tconfig.seed, "pairs", epoch, lo + i)
                    for i in range(len(chunk))]
            views = _positive_views(bank, cache, chunk, rngs)
            total += simsiam_step(views, params, econfig, state,
                                  tconfig.learning_rate, tconfig.weight_decay) * len(chunk)
        return total / len(anchors)

    def val_value(epoch, anchors):
        rngs = [derive_rng(tconfig.seed, "validation", epoch, "pairs", i)
                for i in range(len(anchors))]
        views = _positive_views(bank, cache, anchors, rngs)
        return float(simsiam_loss(params, econfig, views).value)

    report = _loop(dataset, tconfig, "simsiam", split, digest, train_value, val_value,
                   params.trainable())
    return params, report


def train_supervised(
    dataset: LabeledDataset,
    econfig: EncoderConfig,
    tconfig: TrainConfig,
    n_classes: int | None = None,
    train_indices: np.ndarray | None = None,
    val_indices: np.ndarray | None = None,
):
    """Encoder plus a one-layer classifier trained jointly on window labels."""
    if any(series.states is None for series, _ in dataset.samples):
        raise ValueError("supervised training needs labeled samples")
    n_classes = n_classes or dataset.metadata.n_states
    bank, _, split, digest = _prepare(dataset, econfig, tconfig, train_indices,
                                      val_indices, False, None)
    rng = derive_rng(tconfig.seed, "init", "supervised")
    params = init_encoder(econfig, rng)
    params.update(_init_chain("clf", (econfig.out_dim, n_classes), rng))
    w = dataset.window_width

    def batch_ce(anchors):
        sig, ahat = bank.gather(anchors)
        labels = np.array([
            window_label(dataset.samples[j][0].states, t, w) for j, t in anchors
        ])
        logits = _chain_forward(params, "clf", encode(params, econfig, sig, ahat))
        return ad.cross_entropy(logits, labels)

    def train_value(epoch, anchors, state):
        total = 0.0
        b = tconfig.batch_anchors
        for lo in range(0, len(anchors), b):
            chunk = anchors[lo : lo + b]
            zero_grads(params)
            loss = batch_ce(chunk)
            loss.backward()
            adam_step(params, collect_grads(params), state,
                      tconfig.learning_rate, tconfig.weight_decay)
            total += float(loss.value) * len(chunk)
        return total / len(anchors)

    def val_value(epoch, anchors):
        return float(batch_ce(anchors).value)

    report = _loop(dataset, tconfig, "supervised", split, digest, train_value,
                   val_value, params)
    return params, report
