"""Contrastive loss, gradient checking, the optimizer, and the training loop."""
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from graphtnc import autodiff as ad
from graphtnc.encoder import EncoderConfig, adjacency_stack, encode, init_encoder
from graphtnc.training import (
    ContrastBatch,
    TrainConfig,
    TrainReport,
    WindowBank,
    adam_step,
    contrastive_loss,
    contrastive_loss_value,
    default_split,
    discriminate,
    finite_diff_check,
    init_adam,
    init_discriminator,
    restore,
    sample_anchors,
    snapshot,
    tnc_loss,
    train_contrastive,
    train_graphtnc,
)
from graphtnc.util import derive_rng

ENC = EncoderConfig(n_nodes=6, graph_dim=2, interact_dim=3, out_dim=4, gru_hidden=5)


def zero_discriminator(h):
    disc = init_discriminator(h, np.random.default_rng(0))
    for p in disc.values():
        p.value = np.zeros_like(p.value)
    return disc


def manual_disc_prob(za, zb, disc):
    x = np.concatenate([za, zb], axis=1)
    pre = x @ disc["disc_w1"].value + disc["disc_b1"].value
    hidden = np.maximum(pre, 0.0)
    logit = hidden @ disc["disc_w2"].value + disc["disc_b2"].value
    return np.clip(1.0 / (1.0 + np.exp(-logit)), 1e-7, 1.0 - 1e-7).ravel()


class TestTncLoss:
    @pytest.mark.parametrize("m", [0.0, 0.05, 0.5])
    def test_uninformative_discriminator_gives_two_log_two(self, m):
        rng = np.random.default_rng(1)
        anchor = rng.standard_normal(4)
        pos = rng.standard_normal((3, 4))
        neg = rng.standard_normal((5, 4))
        loss = tnc_loss(anchor, pos, neg, zero_discriminator(4), m)
        assert abs(float(loss.value) - 2.0 * np.log(2.0)) < 1e-12

    @pytest.mark.parametrize("m", [0.0, 0.2, 0.9])
    def test_matches_manual_formula(self, m):
        rng = np.random.default_rng(2)
        disc = init_discriminator(4, rng)
        anchor = rng.standard_normal(4)
        pos = rng.standard_normal((3, 4))
        neg = rng.standard_normal((6, 4))
        d_pos = manual_disc_prob(np.tile(anchor, (3, 1)), pos, disc)
        d_neg = manual_disc_prob(np.tile(anchor, (6, 1)), neg, disc)
        want = -(np.log(d_pos).mean()
                 + ((1.0 - m) * np.log(1.0 - d_neg) + m * np.log(d_neg)).mean())
        got = float(tnc_loss(anchor, pos, neg, disc, m).value)
        assert got == pytest.approx(want, rel=1e-12)

    def test_rejects_bad_m_and_empty_samples(self):
        disc = zero_discriminator(4)
        z = np.zeros(4)
        zs = np.zeros((2, 4))
        with pytest.raises(ValueError, match="m must"):
            tnc_loss(z, zs, zs, disc, 1.0)
        with pytest.raises(ValueError, match="positive"):
            tnc_loss(z, np.zeros((0, 4)), zs, disc, 0.1)
        with pytest.raises(ValueError, match="negative"):
            tnc_loss(z, zs, np.zeros((0, 4)), disc, 0.1)

    def test_discriminator_output_range_and_shapes(self):
        rng = np.random.default_rng(3)
        disc = init_discriminator(4, rng)
        single = discriminate(rng.standard_normal(4), rng.standard_normal(4), disc)
        batch = discriminate(rng.standard_normal((5, 4)), rng.standard_normal((5, 4)), disc)
        assert single.value.shape == ()
        assert batch.value.shape == (5,)
        assert 0.0 < float(single.value) < 1.0
        with pytest.raises(ValueError, match="mismatch"):
            discriminate(rng.standard_normal(4), rng.standard_normal(5), disc)


def random_batch(seed, n_anchors=3, n_pos=2, n_neg=2, width=5):
    rng = np.random.default_rng(seed)
    n = ENC.n_nodes

    def adj(count):
        from graphtnc.encoder import normalized_adjacency

        return np.stack([
            np.stack([
                normalized_adjacency(
                    frozenset((i, j) for i in range(n) for j in range(i + 1, n)
                              if rng.random() < 0.3),
                    n,
                )
                for _ in range(width)
            ])
            for _ in range(count)
        ])

    return ContrastBatch(
        anchor_signals=rng.standard_normal((n_anchors, n, width)),
        pos_signals=rng.standard_normal((n_anchors * n_pos, n, width)),
        neg_signals=rng.standard_normal((n_anchors * n_neg, n, width)),
        anchor_ahat=adj(n_anchors),
        pos_ahat=adj(n_anchors * n_pos),
        neg_ahat=adj(n_anchors * n_neg),
    )


class TestContrastiveLoss:
    def test_taped_and_tape_free_agree_bitwise(self):
        params = init_encoder(ENC, np.random.default_rng(4))
        disc = init_discriminator(ENC.out_dim, np.random.default_rng(5))
        batch = random_batch(6)
        taped = float(contrastive_loss(params, ENC, disc, batch, 0.05).value)
        plain = contrastive_loss_value(params, ENC, disc, batch, 0.05)
        assert taped == plain

    def test_equals_mean_of_per_anchor_losses(self):
        params = init_encoder(ENC, np.random.default_rng(7))
        disc = init_discriminator(ENC.out_dim, np.random.default_rng(8))
        batch = random_batch(9, n_anchors=3, n_pos=2, n_neg=2)
        whole = float(contrastive_loss(params, ENC, disc, batch, 0.1).value)
        z_a = encode(params, ENC, batch.anchor_signals, batch.anchor_ahat).value
        z_p = encode(params, ENC, batch.pos_signals, batch.pos_ahat).value
        z_n = encode(params, ENC, batch.neg_signals, batch.neg_ahat).value
        per = [
            float(tnc_loss(z_a[i], z_p[2 * i : 2 * i + 2], z_n[2 * i : 2 * i + 2],
                           disc, 0.1).value)
            for i in range(3)
        ]
        assert whole == pytest.approx(np.mean(per), rel=1e-12)


class TestFiniteDiffCheck:
    def test_correct_gradient_passes(self):
        params = {"p": ad.parameter(np.random.default_rng(10).standard_normal(12))}

        def loss_fn(ps):
            return ad.tsum(ad.square(ps["p"]))

        assert finite_diff_check(loss_fn, params) < 1e-7

    def test_broken_backward_is_caught(self):
        params = {"p": ad.parameter(np.random.default_rng(11).standard_normal(12) + 2.0)}

        def loss_fn(ps):
            p = ps["p"]
            # right value, wrong backward: claims d/dp sum(p^2) = 3p
            return ad._op(
                np.sum(p.value**2), (p,), lambda g: p._accumulate(g * 3.0 * p.value)
            )

        assert finite_diff_check(loss_fn, params) > 0.1

    def test_value_fn_is_used_for_probes(self):
        params = {"p": ad.parameter(np.array([1.0, -2.0, 3.0]))}
        calls = []

        def loss_fn(ps):
            return ad.tsum(ad.square(ps["p"]))

        def value_fn(ps):
            calls.append(1)
            return float(np.sum(ps["p"].value ** 2))

        assert finite_diff_check(loss_fn, params, value_fn=value_fn) < 1e-7
        assert len(calls) == 6  # two probes per coordinate


def reference_adam(values, grads_seq, lr, wd, beta1=0.9, beta2=0.999, eps=1e-8):
    p = {k: v.copy() for k, v in values.items()}
    m = {k: np.zeros_like(v) for k, v in values.items()}
    v = {k: np.zeros_like(val) for k, val in values.items()}
    for t, grads in enumerate(grads_seq, start=1):
        for k in p:
            g = grads[k] + wd * p[k]
            m[k] = beta1 * m[k] + (1 - beta1) * g
            v[k] = beta2 * v[k] + (1 - beta2) * g * g
            mhat = m[k] / (1 - beta1**t)
            vhat = v[k] / (1 - beta2**t)
            p[k] = p[k] - lr * mhat / (np.sqrt(vhat) + eps)
    return p


class TestAdam:
    def test_matches_textbook_updates(self):
        rng = np.random.default_rng(12)
        values = {"a": rng.standard_normal((3, 4)), "b": rng.standard_normal(5)}
        grads_seq = [
            {k: rng.standard_normal(v.shape) for k, v in values.items()}
            for _ in range(4)
        ]
        params = {k: ad.parameter(v.copy()) for k, v in values.items()}
        state = init_adam(params)
        for grads in grads_seq:
            adam_step(params, grads, state, lr=0.01, weight_decay=0.003)
        want = reference_adam(values, grads_seq, lr=0.01, wd=0.003)
        for k in values:
            np.testing.assert_allclose(params[k].value, want[k], rtol=1e-12, atol=1e-15)
        assert state.step == 4

    def test_rejects_non_finite_gradient(self):
        params = {"a": ad.parameter(np.ones(3))}
        state = init_adam(params)
        with pytest.raises(FloatingPointError, match="a"):
            adam_step(params, {"a": np.array([1.0, np.inf, 0.0])}, state, lr=0.1)


class TestSplitsAndAnchors:
    @given(n=st.integers(2, 60), frac=st.floats(0.0, 0.9), seed=st.integers(0, 99))
    @settings(max_examples=50, deadline=None)
    def test_split_partitions(self, n, frac, seed):
        tr, va = default_split(n, frac, seed)
        assert sorted(np.concatenate([tr, va]).tolist()) == list(range(n))
        assert list(tr) == sorted(tr) and list(va) == sorted(va)
        if frac == 0.0:
            assert len(va) == 0
        else:
            assert 1 <= len(va) <= n - 1

    def test_split_is_seed_deterministic(self):
        assert all(
            np.array_equal(a, b)
            for a, b in zip(default_split(20, 0.25, 7), default_split(20, 0.25, 7))
        )

    @given(seed=st.integers(0, 500))
    @settings(max_examples=30, deadline=None)
    def test_anchor_ranges(self, seed):
        allowed = np.array([2, 5, 9])
        anchors = sample_anchors(np.random.default_rng(seed), allowed, 50, 8, 16)
        assert len(anchors) == 16
        assert all(j in (2, 5, 9) and 0 <= t <= 42 for j, t in anchors)


class TestWindowBank:
    def test_gather_matches_direct_slices(self, tiny_dataset):
        bank = WindowBank(tiny_dataset, use_graph=True)
        keys = [(0, 3), (2, 40), (5, 100)]
        sig, ahat = bank.gather(keys)
        w = tiny_dataset.window_width
        for out, adj, (j, t) in zip(sig, ahat, keys):
            series, graphs = tiny_dataset.samples[j]
            assert np.array_equal(out, series.values[:, t : t + w])
            assert np.array_equal(adj, adjacency_stack(graphs)[t : t + w])

    def test_signal_only_bank(self, tiny_dataset):
        sig, ahat = WindowBank(tiny_dataset, use_graph=False).gather([(1, 0)])
        assert ahat is None and sig.shape[0] == 1


class TestSnapshotRestore:
    def test_roundtrip_is_decoupled(self):
        params = {"a": ad.parameter(np.arange(4.0))}
        saved = snapshot(params)
        params["a"].value += 100.0
        restore(params, saved)
        assert np.array_equal(params["a"].value, np.arange(4.0))
        saved["a"][0] = -1.0
        assert params["a"].value[0] == 0.0


class TestTrainLoop:
    def test_smoke_and_report_consistency(self, tiny_dataset, fast_train):
        enc, disc, report = train_graphtnc(tiny_dataset, ENC, fast_train)
        assert report.method == "graphtnc"
        assert report.stopped_epoch == len(report.train_loss) == len(report.val_loss)
        assert 0 <= report.best_epoch < report.stopped_epoch
        assert all(np.isfinite(v) for v in report.train_loss)
        assert enc["graph_w"].value.shape == (6, 2)
        assert report.seed == fast_train.seed

    def test_rerun_is_bit_identical(self, tiny_dataset, fast_train):
        enc1, _, rep1 = train_graphtnc(tiny_dataset, ENC, fast_train)
        enc2, _, rep2 = train_graphtnc(tiny_dataset, ENC, fast_train)
        assert rep1.to_json(include_wall_time=False) == rep2.to_json(include_wall_time=False)
        assert all(np.array_equal(enc1[k].value, enc2[k].value) for k in enc1)

    def test_methods_share_anchor_streams(self, tiny_dataset, fast_train):
        # same (seed, epoch) sampling streams regardless of method name
        a = derive_rng(fast_train.seed, "sampling", 0).integers(0, 100, 5)
        b = derive_rng(fast_train.seed, "sampling", 0).integers(0, 100, 5)
        assert np.array_equal(a, b)

    def test_window_width_mismatch(self, tiny_dataset, fast_train):
        from dataclasses import replace

        bad = replace(fast_train, window_width=7)
        with pytest.raises(ValueError, match="width"):
            train_graphtnc(tiny_dataset, ENC, bad)

    def test_graph_trainer_requires_graph_config(self, tiny_dataset, fast_train):
        nograph = EncoderConfig(n_nodes=6, use_graph=False)
        with pytest.raises(ValueError, match="use_graph"):
            train_graphtnc(tiny_dataset, nograph, fast_train)


class TestConfigAndReport:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"m": 1.0},
            {"learning_rate": 0.0},
            {"weight_decay": -1e-3},
            {"epochs": 0},
            {"n_neg": 0},
            {"validation_fraction": 1.0},
        ],
    )
    def test_config_validation(self, kwargs):
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)

    def test_report_json_wall_time_toggle(self):
        rep = TrainReport(
            method="graphtnc",
            train_loss=(1.0, 0.9),
            val_loss=(1.1, 1.0),
            best_epoch=1,
            stopped_epoch=2,
            wall_time=12.5,
            seed=3,
            config_digest="ab" * 8,
        )
        with_time = json.loads(rep.to_json())
        without = json.loads(rep.to_json(include_wall_time=False))
        assert with_time["wall_time"] == 12.5
        assert "wall_time" not in without
        assert without["best_epoch"] == 1

    def test_report_rejects_non_finite_history(self):
        with pytest.raises(ValueError, match="non-finite"):
            TrainReport("m", (np.nan,), (1.0,), 0, 1, 0.0, 0, "00")
