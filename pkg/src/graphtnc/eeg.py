"""Ingestion of grasp-and-lift EEG recordings into the dataset format.

Each recording ships as a pair of CSVs: ``*_data.csv`` with an id column and
32 channel columns, and ``*_events.csv`` with the same ids and 6 binary event
columns. Every timestep gets one of 7 states: the earliest-indexed active
event, or "no action" when no event is active. The scalp montage is a static
graph over the 32 electrodes, repeated at every timestep.
"""
from __future__ import annotations

import csv
import json
from importlib import resources
from pathlib import Path

import numpy as np

from .data import (
    DatasetMeta,
    DynamicGraphSequence,
    LabeledDataset,
    MultivariateSeries,
    canonical_edges,
)
from .util import config_digest

N_CHANNELS = 32
EVENT_COLUMNS = (
    "HandStart",
    "FirstDigitTouch",
    "BothStartLoadPhase",
    "LiftOff",
    "Replace",
    "BothReleased",
)
NO_ACTION = len(EVENT_COLUMNS)  # state 6
N_STATES = NO_ACTION + 1


def default_montage() -> dict:
    """The editable montage shipped with the package."""
    text = resources.files("graphtnc.assets").joinpath("montage_10_20.json").read_text()
    return json.loads(text)


def montage_edges(montage: dict, channel_names: list[str]):
    """Resolve the montage adjacency against the channel order of the data
    files; returns a canonical edge set over channel indices."""
    index = {name: i for i, name in enumerate(channel_names)}
    missing = [n for n in montage["nodes"] if n not in index]
    if missing:
        raise ValueError(f"montage nodes absent from the data channels: {missing}")
    if set(montage["nodes"]) != set(channel_names):
        extra = sorted(set(channel_names) - set(montage["nodes"]))
        raise ValueError(f"data channels absent from the montage: {extra}")
    pairs = []
    for a, neighbors in montage["adjacency"].items():
        if a not in index:
            raise ValueError(f"montage adjacency names unknown electrode {a!r}")
        for b in neighbors:
            if b not in index:
                raise ValueError(f"montage adjacency names unknown electrode {b!r}")
            pairs.append((index[a], index[b]))
    return canonical_edges(pairs)


def _read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [row[1:] for row in reader]  # drop the id column
    return header[1:], np.asarray(rows, dtype=np.float64)


def read_signals(path) -> tuple[list[str], np.ndarray]:
    """Channel names and the (T, 32) matrix; errors on a wrong channel count."""
    names, values = _read_csv(path)
    if len(names) != N_CHANNELS:
        raise ValueError(
            f"{path}: expected {N_CHANNELS} channel columns, got {len(names)}"
        )
    return names, values


def read_labels(path) -> np.ndarray:
    """Per-timestep state from the 6 event columns: earliest-indexed active
    event wins, none active means 'no action'."""
    names, values = _read_csv(path)
    if tuple(names) != EVENT_COLUMNS:
        raise ValueError(
            f"{path}: unknown event columns {names}, expected {list(EVENT_COLUMNS)}"
        )
    active = values > 0
    labels = np.where(active.any(axis=1), active.argmax(axis=1), NO_ACTION)
    return labels.astype(np.int64)


def ingest_eeg(
    signal_csvs,
    event_csvs,
    montage: dict | str | Path | None = None,
    n_signals: int = 100,
    length: int = 60,
    window_width: int = 5,
    name: str = "eeg",
) -> LabeledDataset:
    """Cut the recordings into ``n_signals`` consecutive segments of
    ``length`` timesteps, each labeled per timestep and carrying the static
    montage graph at every step."""
    signal_csvs = [Path(p) for p in signal_csvs]
    event_csvs = [Path(p) for p in event_csvs]
    if len(signal_csvs) != len(event_csvs) or not signal_csvs:
        raise ValueError("need matching, non-empty lists of data and event files")
    if isinstance(montage, (str, Path)):
        montage = json.loads(Path(montage).read_text())
    elif montage is None:
        montage = default_montage()

    samples = []
    edges = None
    graphs = None
    for data_path, event_path in zip(signal_csvs, event_csvs):
        channel_names, x = read_signals(data_path)
        labels = read_labels(event_path)
        if len(x) != len(labels):
            raise ValueError(
                f"{data_path} and {event_path} disagree on length "
                f"({len(x)} vs {len(labels)})"
            )
        if edges is None:
            edges = montage_edges(montage, channel_names)
            graphs = DynamicGraphSequence(N_CHANNELS, (edges,) * length)
        for lo in range(0, len(x) - length + 1, length):
            if len(samples) == n_signals:
                break
            seg = slice(lo, lo + length)
            samples.append(
                (MultivariateSeries(x[seg].T.copy(), labels[seg]), graphs)
            )
        if len(samples) == n_signals:
            break
    if len(samples) < n_signals:
        raise ValueError(
            f"recordings yield only {len(samples)} full segments of length "
            f"{length}, need {n_signals}"
        )
    digest = config_digest({
        "n_signals": n_signals,
        "length": length,
        "window_width": window_width,
        "edges": sorted(tuple(e) for e in edges),
    })
    meta = DatasetMeta(name=name, n_states=N_STATES, seed=0, config_digest=digest)
    return LabeledDataset(tuple(samples), window_width, meta)
