"""Domain types for signal/graph sequences, windowing, and dataset persistence.

A dataset directory holds ``manifest.json`` plus, per sample ``i``,
``signals_<i>.csv`` (T rows by N columns), ``states_<i>.csv`` (one integer per
row, omitted for unlabeled data) and ``graphs_<i>.jsonl`` (one JSON edge list
per timestep). Signals are written with 17 significant digits so the
save/load round trip is exact.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

EdgeSet = frozenset  # of (i, j) tuples with i < j


def canonical_edges(pairs) -> EdgeSet:
    """Normalize an iterable of node pairs to a canonical undirected edge set."""
    out = set()
    for i, j in pairs:
        i, j = int(i), int(j)
        if i == j:
            raise ValueError(f"self-loop ({i},{j}) is not a valid edge")
        out.add((min(i, j), max(i, j)))
    return frozenset(out)


def _frozen(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class MultivariateSeries:
    """An N x T signal matrix with optional per-timestep integer state labels."""

    values: np.ndarray
    states: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ValueError(f"values must be 2-d (N x T), got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("values contain NaN or Inf")
        object.__setattr__(self, "values", _frozen(values))
        if self.states is not None:
            states = np.asarray(self.states, dtype=np.int64)
            if states.shape != (values.shape[1],):
                raise ValueError(
                    f"states length {states.shape} does not match series length {values.shape[1]}"
                )
            if states.min(initial=0) < 0:
                raise ValueError("state labels must be non-negative")
            object.__setattr__(self, "states", _frozen(states))

    @property
    def n_features(self) -> int:
        return self.values.shape[0]

    @property
    def length(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class DynamicGraphSequence:
    """T edge sets over a fixed node set; a static graph is a constant sequence."""

    n_nodes: int
    edges: tuple[EdgeSet, ...]

    def __post_init__(self):
        edges = tuple(canonical_edges(e) for e in self.edges)
        for t, es in enumerate(edges):
            for i, j in es:
                if not (0 <= i < self.n_nodes and 0 <= j < self.n_nodes):
                    raise ValueError(f"edge ({i},{j}) at t={t} outside [0,{self.n_nodes})")
        object.__setattr__(self, "edges", edges)

    @property
    def length(self) -> int:
        return len(self.edges)


@dataclass(frozen=True)
class WindowPair:
    """A signal window of w columns and the w graphs aligned with it."""

    signal: np.ndarray
    graphs: tuple[EdgeSet, ...]
    start: int
    width: int

    def __post_init__(self):
        signal = np.asarray(self.signal, dtype=np.float64)
        if signal.ndim != 2 or signal.shape[1] != self.width:
            raise ValueError(f"signal shape {signal.shape} inconsistent with width {self.width}")
        if len(self.graphs) != self.width:
            raise ValueError(f"{len(self.graphs)} graphs for width {self.width}")
        object.__setattr__(self, "signal", _frozen(signal))
        object.__setattr__(self, "graphs", tuple(self.graphs))


@dataclass(frozen=True)
class DatasetMeta:
    name: str
    n_states: int
    seed: int | None = None
    config_digest: str | None = None


@dataclass(frozen=True)
class LabeledDataset:
    samples: tuple[tuple[MultivariateSeries, DynamicGraphSequence], ...]
    window_width: int
    metadata: DatasetMeta = field(default_factory=lambda: DatasetMeta("dataset", 0))

    def __post_init__(self):
        if not self.samples:
            raise ValueError("dataset has no samples")
        n = self.samples[0][0].n_features
        t = self.samples[0][0].length
        for k, (series, graphs) in enumerate(self.samples):
            if series.n_features != n:
                raise ValueError(f"sample {k} has {series.n_features} features, expected {n}")
            if series.length != t:
                raise ValueError(f"sample {k} has length {series.length}, expected {t}")
            if graphs.length != series.length:
                raise ValueError(
                    f"sample {k}: {graphs.length} graphs for series of length {series.length}"
                )
            if graphs.n_nodes != n:
                raise ValueError(f"sample {k}: graph node count {graphs.n_nodes} != {n}")
            if series.states is not None and self.metadata.n_states:
                if series.states.max(initial=0) >= self.metadata.n_states:
                    raise ValueError(f"sample {k} has a state >= {self.metadata.n_states}")
        object.__setattr__(self, "samples", tuple(self.samples))

    @property
    def n_features(self) -> int:
        return self.samples[0][0].n_features

    @property
    def length(self) -> int:
        return self.samples[0][0].length

    @property
    def n_samples(self) -> int:
        return len(self.samples)


def extract_window(
    series: MultivariateSeries, graphs: DynamicGraphSequence, t: int, w: int
) -> WindowPair:
    """Slice columns t..t+w-1 of the signal together with the aligned graphs."""
    if w < 1:
        raise ValueError(f"window width must be >= 1, got {w}")
    if t < 0 or t + w > series.length:
        raise ValueError(f"window [{t},{t + w}) outside series of length {series.length}")
    if graphs.length != series.length:
        raise ValueError("series and graph sequence lengths differ")
    return WindowPair(
        signal=series.values[:, t : t + w], graphs=graphs.edges[t : t + w], start=t, width=w
    )


def window_label(states: np.ndarray, t: int, w: int) -> int:
    """Majority state over the window; ties go to the state seen earliest."""
    seg = np.asarray(states[t : t + w])
    if seg.size != w:
        raise ValueError("window exceeds the labeled range")
    uniq, first_pos, counts = np.unique(seg, return_index=True, return_counts=True)
    best = counts.max()
    contenders = uniq[counts == best]
    positions = first_pos[counts == best]
    return int(contenders[np.argmin(positions)])


def adjacency_matrix(edges: EdgeSet, n_nodes: int) -> np.ndarray:
    """Binary symmetric adjacency with zero diagonal."""
    a = np.zeros((n_nodes, n_nodes), dtype=np.float64)
    for i, j in edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    return a


def tiled_windows(dataset: LabeledDataset, stride: int | None = None):
    """Non-overlapping (by default) windows tiling every sample.

    Returns ``(signals, graph_lists, labels, sample_idx, starts)`` where
    ``signals`` is (M, N, w) and labels come from the majority rule. Used for
    probing and embedding export so that every run scores the same windows.
    """
    w = dataset.window_width
    stride = w if stride is None else stride
    signals, graph_lists, labels, sample_idx, starts = [], [], [], [], []
    for k, (series, graphs) in enumerate(dataset.samples):
        for t in range(0, series.length - w + 1, stride):
            signals.append(series.values[:, t : t + w])
            graph_lists.append(graphs.edges[t : t + w])
            labels.append(window_label(series.states, t, w) if series.states is not None else -1)
            sample_idx.append(k)
            starts.append(t)
    return (
        np.stack(signals),
        graph_lists,
        np.asarray(labels, dtype=np.int64),
        np.asarray(sample_idx, dtype=np.int64),
        np.asarray(starts, dtype=np.int64),
    )


def save_dataset(dataset: LabeledDataset, directory: str | Path) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    has_states = all(series.states is not None for series, _ in dataset.samples)
    manifest = {
        "name": dataset.metadata.name,
        "n_features": dataset.n_features,
        "length": dataset.length,
        "n_states": dataset.metadata.n_states,
        "window_width": dataset.window_width,
        "n_samples": dataset.n_samples,
        "seed": dataset.metadata.seed,
        "config_digest": dataset.metadata.config_digest,
        "has_states": has_states,
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    for i, (series, graphs) in enumerate(dataset.samples):
        np.savetxt(directory / f"signals_{i}.csv", series.values.T, fmt="%.17g", delimiter=",")
        if series.states is not None:
            np.savetxt(directory / f"states_{i}.csv", series.states, fmt="%d")
        with open(directory / f"graphs_{i}.jsonl", "w") as fh:
            for es in graphs.edges:
                fh.write(json.dumps(sorted([list(e) for e in es])) + "\n")


def load_dataset(directory: str | Path) -> LabeledDataset:
    directory = Path(directory)
    manifest_path = directory / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"missing manifest file: {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    n, t = manifest["n_features"], manifest["length"]
    samples = []
    for i in range(manifest["n_samples"]):
        sig_path = directory / f"signals_{i}.csv"
        graph_path = directory / f"graphs_{i}.jsonl"
        if not sig_path.exists():
            raise FileNotFoundError(f"missing signals file: {sig_path}")
        if not graph_path.exists():
            raise FileNotFoundError(f"missing graphs file: {graph_path}")
        values = np.loadtxt(sig_path, delimiter=",", ndmin=2).T
        if values.shape != (n, t):
            raise ValueError(f"{sig_path}: shape {values.shape} does not match manifest ({n},{t})")
        states = None
        if manifest.get("has_states", False):
            states_path = directory / f"states_{i}.csv"
            if not states_path.exists():
                raise FileNotFoundError(f"missing states file: {states_path}")
            states = np.loadtxt(states_path, dtype=np.int64, ndmin=1)
            if states.shape != (t,):
                raise ValueError(f"{states_path}: {states.shape[0]} states for length {t}")
        edges = []
        with open(graph_path) as fh:
            for line in fh:
                line = line.strip()
                if line:
                    pairs = json.loads(line)
                    edges.append(canonical_edges(pairs))
        if len(edges) != t:
            raise ValueError(f"{graph_path}: {len(edges)} graphs for length {t}")
        samples.append(
            (MultivariateSeries(values, states), DynamicGraphSequence(n, tuple(edges)))
        )
    meta = DatasetMeta(
        name=manifest["name"],
        n_states=manifest["n_states"],
        seed=manifest.get("seed"),
        config_digest=manifest.get("config_digest"),
    )
    return LabeledDataset(tuple(samples), manifest["window_width"], meta)
