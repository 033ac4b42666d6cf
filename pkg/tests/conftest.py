"""Shared fixtures: a small synthetic dataset and fast training settings.

The tiny dataset keeps the full 4-state structure of the default benchmark
but shrinks every axis so unit tests stay in the low seconds.
"""
from __future__ import annotations

import pytest

from graphtnc.synth import SynthConfig, generate_dataset
from graphtnc.training import TrainConfig


@pytest.fixture(scope="session")
def tiny_config() -> SynthConfig:
    return SynthConfig(n_features=6, length=120, n_samples=6, window_width=10, seed=7)


@pytest.fixture(scope="session")
def tiny_dataset(tiny_config):
    return generate_dataset(tiny_config)


@pytest.fixture()
def fast_train() -> TrainConfig:
    return TrainConfig(
        epochs=2,
        patience=2,
        n_pos=2,
        n_neg=2,
        anchors_per_epoch=8,
        batch_anchors=4,
        val_anchors=4,
        seed=3,
    )
