"""Synthetic benchmark: hidden-state process, per-state signal generators,
evolving random graphs, and graph-filtered mixing.

A hidden Markov chain drives everything. While a state is active its signal
generator advances (a nonlinear autoregressive moving-average recurrence or a
Gaussian-process path, per feature), and its random graph drifts by
single-edge edits. The observed signal blends each timestep's features with
their graph-neighbor aggregate:

    x[t+1] = r * A[t] @ f[t] + (1 - r) * f[t],      x[0] = f[0]

where A[t] is the binary adjacency at time t and r in [0, 1] sets how much
the graph shapes the signal.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np

from .data import (
    DatasetMeta,
    DynamicGraphSequence,
    LabeledDataset,
    MultivariateSeries,
    adjacency_matrix,
    canonical_edges,
)
from .util import config_digest, derive_rng


@dataclass(frozen=True)
class HmmSpec:
    """Row-stochastic transition matrix plus initial distribution."""

    n_states: int
    transition: np.ndarray
    initial: np.ndarray

    def __post_init__(self):
        tr = np.asarray(self.transition, dtype=np.float64)
        init = np.asarray(self.initial, dtype=np.float64)
        s = self.n_states
        if tr.shape != (s, s):
            raise ValueError(f"transition must be {s}x{s}, got {tr.shape}")
        if init.shape != (s,):
            raise ValueError(f"initial must have length {s}")
        if (tr < 0).any() or (init < 0).any():
            raise ValueError("probabilities must be non-negative")
        if np.abs(tr.sum(axis=1) - 1.0).max() > 1e-12:
            raise ValueError("transition rows must sum to 1")
        if abs(init.sum() - 1.0) > 1e-12:
            raise ValueError("initial distribution must sum to 1")
        object.__setattr__(self, "transition", tr)
        object.__setattr__(self, "initial", init)


@dataclass(frozen=True)
class NarmaSpec:
    """Second-order recurrence f' = a*f + b*f*mean(last two) + c*u*u_prev + d*u
    with uniform drive u on [0, drive_scale] and additive Gaussian noise.
    ``level`` offsets the emitted values without entering the recurrence."""

    a: float = 0.3
    b: float = 0.05
    c: float = 1.5
    d: float = 0.1
    drive_scale: float = 0.5
    noise: float = 0.0
    level: float = 0.0

    kind = "narma"


@dataclass(frozen=True)
class GpSpec:
    """Stationary Gaussian-process path per feature; squared-exponential or
    periodic kernel, optionally offset by a constant mean ``level``."""

    kernel: str = "rbf"  # "rbf" | "periodic"
    length_scale: float = 2.0
    variance: float = 1.0
    period: float = 10.0
    noise: float = 0.0
    level: float = 0.0

    def __post_init__(self):
        if self.kernel not in ("rbf", "periodic"):
            raise ValueError(f"unknown kernel {self.kernel!r}")
        if self.length_scale <= 0 or self.variance <= 0 or self.period <= 0:
            raise ValueError("length_scale, variance, and period must be positive")

    kind = "gp"


StateGeneratorSpec = Union[NarmaSpec, GpSpec]


@dataclass(frozen=True)
class SynthConfig:
    n_features: int = 10
    length: int = 500
    n_samples: int = 30
    hmm: HmmSpec = field(default_factory=lambda: default_hmm(4))
    generators: tuple[StateGeneratorSpec, ...] = ()
    edge_prob: tuple[float, ...] = (0.15, 0.35, 0.1, 0.6)
    mix_weight: float = 0.1
    seed: int = 0
    window_width: int = 20
    flip_prob: tuple[float, ...] | None = None  # overrides the p/(10*(1-p)) rule
    restart_on_reentry: bool = True
    name: str = "synthetic"

    def __post_init__(self):
        if not 0.0 <= self.mix_weight <= 1.0:
            raise ValueError("mix_weight must lie in [0, 1]")
        gens = self.generators or default_generators(self.hmm.n_states)
        if len(gens) != self.hmm.n_states:
            raise ValueError(f"need {self.hmm.n_states} generators, got {len(gens)}")
        if len(self.edge_prob) != self.hmm.n_states:
            raise ValueError("edge_prob must have one entry per state")
        for p in self.edge_prob:
            if not 0.0 < p < 1.0:
                raise ValueError(f"edge probability {p} outside (0, 1)")
        if self.flip_prob is not None and len(self.flip_prob) != self.hmm.n_states:
            raise ValueError("flip_prob must have one entry per state")
        object.__setattr__(self, "generators", tuple(gens))
        object.__setattr__(self, "edge_prob", tuple(float(p) for p in self.edge_prob))


def default_hmm(n_states: int, self_prob: float = 0.98) -> HmmSpec:
    off = (1.0 - self_prob) / (n_states - 1) if n_states > 1 else 0.0
    tr = np.full((n_states, n_states), off)
    np.fill_diagonal(tr, self_prob)
    return HmmSpec(n_states, tr, np.full(n_states, 1.0 / n_states))


def default_generators(n_states: int) -> tuple[StateGeneratorSpec, ...]:
    """Four regimes: two recurrences at well-separated levels, two smoothness
    levels of zero-mean GP.

    The level offsets make state changes into or out of a recurrence regime
    show up as structural breaks, which is what the stationarity-based
    neighborhood search keys on. The GP pair is close in signal distribution
    so that the co-evolving graphs carry most of the information separating
    those two states.
    """
    pool: list[StateGeneratorSpec] = [
        NarmaSpec(a=0.3, b=0.05, c=1.5, d=0.1, noise=0.05, level=1.2),
        NarmaSpec(a=-0.5, b=0.2, c=4.0, d=1.2, noise=0.05, level=-1.2),
        GpSpec(kernel="rbf", length_scale=2.8, noise=0.05),
        GpSpec(kernel="rbf", length_scale=3.2, noise=0.05),
    ]
    if n_states <= 4:
        return tuple(pool[:n_states])
    extra = [GpSpec(kernel="periodic", length_scale=1.0, period=6.0 + 4.0 * k, noise=0.05)
             for k in range(n_states - 4)]
    return tuple(pool + extra)


def default_config(mix_weight: float = 0.1, seed: int = 0, **overrides) -> SynthConfig:
    return SynthConfig(mix_weight=mix_weight, seed=seed, **overrides)


def sample_states(hmm: HmmSpec, length: int, rng: np.random.Generator) -> np.ndarray:
    """Draw a state path of the given length from the chain."""
    cum = np.cumsum(hmm.transition, axis=1)
    states = np.empty(length, dtype=np.int64)
    u = rng.random(length)
    states[0] = np.searchsorted(np.cumsum(hmm.initial), u[0], side="right")
    for t in range(1, length):
        states[t] = np.searchsorted(cum[states[t - 1]], u[t], side="right")
    return np.minimum(states, hmm.n_states - 1)


class _NarmaProcess:
    def __init__(self, spec: NarmaSpec, n_features: int, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        self.f = np.zeros(n_features)
        self.f_prev = np.zeros(n_features)
        self.u_prev = rng.uniform(0.0, spec.drive_scale, n_features)

    def emit(self) -> np.ndarray:
        s = self.spec
        u = self.rng.uniform(0.0, s.drive_scale, self.f.shape)
        nxt = (
            s.a * self.f
            + s.b * self.f * 0.5 * (self.f + self.f_prev)
            + s.c * u * self.u_prev
            + s.d * u
        )
        if s.noise > 0:
            nxt = nxt + s.noise * self.rng.standard_normal(self.f.shape)
        self.f_prev, self.f, self.u_prev = self.f, nxt, u
        return nxt + s.level


_CHOL_CACHE: dict[tuple, np.ndarray] = {}


def _gp_cholesky(spec: GpSpec, length: int) -> np.ndarray:
    key = (spec.kernel, round(spec.length_scale, 12), round(spec.variance, 12),
           round(spec.period, 12), length)
    if key not in _CHOL_CACHE:
        t = np.arange(length, dtype=np.float64)
        d = np.abs(t[:, None] - t[None, :])
        if spec.kernel == "rbf":
            k = spec.variance * np.exp(-0.5 * (d / spec.length_scale) ** 2)
        else:
            k = spec.variance * np.exp(
                -2.0 * np.sin(np.pi * d / spec.period) ** 2 / spec.length_scale**2
            )
        k[np.diag_indices(length)] += 1e-8
        _CHOL_CACHE[key] = np.linalg.cholesky(k)
    return _CHOL_CACHE[key]


class _GpProcess:
    """Emits a presampled stationary path one step per activation."""

    def __init__(self, spec: GpSpec, n_features: int, horizon: int, rng: np.random.Generator):
        self.spec = spec
        self.rng = rng
        chol = _gp_cholesky(spec, horizon)
        self.path = chol @ rng.standard_normal((horizon, n_features))
        self.cursor = 0

    def emit(self) -> np.ndarray:
        out = self.path[self.cursor] + self.spec.level
        self.cursor += 1
        if self.spec.noise > 0:
            out += self.spec.noise * self.rng.standard_normal(out.shape)
        return out


def _make_process(spec: StateGeneratorSpec, n_features: int, horizon: int,
                  rng: np.random.Generator):
    if isinstance(spec, NarmaSpec):
        return _NarmaProcess(spec, n_features, rng)
    return _GpProcess(spec, n_features, horizon, rng)


def gen_latent_features(
    states: np.ndarray,
    generators: tuple[StateGeneratorSpec, ...],
    n_features: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Column t comes from the generator of states[t]; each generator keeps its
    own internal state across (possibly separated) activations."""
    length = len(states)
    if states.max(initial=0) >= len(generators):
        raise ValueError(
            f"state {int(states.max())} has no generator (have {len(generators)})"
        )
    seeds = rng.integers(0, 2**63 - 1, size=len(generators))
    procs = [
        _make_process(spec, n_features, length, np.random.default_rng(int(seed)))
        for spec, seed in zip(generators, seeds)
    ]
    out = np.empty((n_features, length), dtype=np.float64)
    for t in range(length):
        out[:, t] = procs[states[t]].emit()
    return out


def _all_pairs(n: int) -> np.ndarray:
    return np.array([(i, j) for i in range(n) for j in range(i + 1, n)], dtype=np.int64)


def flip_rate(edge_prob: float) -> float:
    """Per-step edit probability derived from the edge density, capped at 1."""
    return min(1.0, edge_prob / (10.0 * (1.0 - edge_prob)))


def evolve_graphs(
    states: np.ndarray,
    edge_prob: tuple[float, ...],
    n_nodes: int,
    rng: np.random.Generator,
    flip_prob: tuple[float, ...] | None = None,
    restart_on_reentry: bool = True,
) -> DynamicGraphSequence:
    """Per-state random graphs with single-edge drift.

    Entering a state draws a fresh graph with that state's edge density (or
    resumes the cached one when ``restart_on_reentry`` is off). Each later
    step inside the state mutates the graph with the state's flip rate: an
    edit adds one uniformly chosen absent edge or removes one existing edge,
    with equal probability, and is a no-op when the chosen side is empty.
    """
    pairs = _all_pairs(n_nodes)
    n_pairs = len(pairs)
    q = [flip_prob[s] if flip_prob is not None else flip_rate(edge_prob[s])
         for s in range(len(edge_prob))]
    cached: dict[int, np.ndarray] = {}
    masks = np.empty((len(states), n_pairs), dtype=bool)
    current: np.ndarray | None = None
    for t, s in enumerate(states):
        s = int(s)
        if t == 0 or s != states[t - 1]:
            if restart_on_reentry or s not in cached:
                current = rng.random(n_pairs) < edge_prob[s]
            else:
                current = cached[s].copy()
        else:
            current = current.copy()
            if rng.random() < q[s]:
                if rng.random() < 0.5:
                    absent = np.flatnonzero(~current)
                    if absent.size:
                        current[absent[rng.integers(absent.size)]] = True
                else:
                    present = np.flatnonzero(current)
                    if present.size:
                        current[present[rng.integers(present.size)]] = False
        cached[s] = current
        masks[t] = current
    edge_sets = tuple(
        canonical_edges(map(tuple, pairs[mask])) for mask in masks
    )
    return DynamicGraphSequence(n_nodes, edge_sets)


def mix_signal(
    features: np.ndarray, graphs: DynamicGraphSequence, mix_weight: float
) -> MultivariateSeries:
    """Apply the one-step graph filter to the latent features."""
    f = np.asarray(features, dtype=np.float64)
    if f.ndim != 2:
        raise ValueError("features must be N x T")
    if not 0.0 <= mix_weight <= 1.0:
        raise ValueError("mix_weight must lie in [0, 1]")
    n, length = f.shape
    if graphs.length != length or graphs.n_nodes != n:
        raise ValueError(
            f"graphs ({graphs.n_nodes} nodes, length {graphs.length}) do not match "
            f"features {f.shape}"
        )
    x = np.empty_like(f)
    x[:, 0] = f[:, 0]
    for t in range(length - 1):
        a = adjacency_matrix(graphs.edges[t], n)
        x[:, t + 1] = mix_weight * (a @ f[:, t]) + (1.0 - mix_weight) * f[:, t]
    return MultivariateSeries(x)


def generate_dataset(config: SynthConfig) -> LabeledDataset:
    """Materialize the benchmark; a pure function of the config (seed included).

    Each sample draws from its own derived stream, so samples could be built
    in parallel without changing the result.
    """
    samples = []
    for j in range(config.n_samples):
        states = sample_states(
            config.hmm, config.length, derive_rng(config.seed, "sample", j, "states")
        )
        feats = gen_latent_features(
            states, config.generators, config.n_features,
            derive_rng(config.seed, "sample", j, "features"),
        )
        graphs = evolve_graphs(
            states, config.edge_prob, config.n_features,
            derive_rng(config.seed, "sample", j, "graphs"),
            flip_prob=config.flip_prob,
            restart_on_reentry=config.restart_on_reentry,
        )
        series = mix_signal(feats, graphs, config.mix_weight)
        samples.append((MultivariateSeries(series.values, states), graphs))
    meta = DatasetMeta(
        name=config.name,
        n_states=config.hmm.n_states,
        seed=config.seed,
        config_digest=config_digest(config),
    )
    return LabeledDataset(tuple(samples), config.window_width, meta)


def config_to_json(config: SynthConfig) -> dict:
    gens = []
    for g in config.generators:
        if isinstance(g, NarmaSpec):
            gens.append({"kind": "narma", "a": g.a, "b": g.b, "c": g.c, "d": g.d,
                         "drive_scale": g.drive_scale, "noise": g.noise, "level": g.level})
        else:
            gens.append({"kind": "gp", "kernel": g.kernel, "length_scale": g.length_scale,
                         "variance": g.variance, "period": g.period, "noise": g.noise,
                         "level": g.level})
    return {
        "n_features": config.n_features,
        "length": config.length,
        "n_samples": config.n_samples,
        "hmm": {
            "n_states": config.hmm.n_states,
            "transition": config.hmm.transition.tolist(),
            "initial": config.hmm.initial.tolist(),
        },
        "generators": gens,
        "edge_prob": list(config.edge_prob),
        "mix_weight": config.mix_weight,
        "seed": config.seed,
        "window_width": config.window_width,
        "flip_prob": list(config.flip_prob) if config.flip_prob is not None else None,
        "restart_on_reentry": config.restart_on_reentry,
        "name": config.name,
    }


def config_from_json(payload: dict) -> SynthConfig:
    payload = dict(payload)
    if "hmm" in payload:
        h = payload["hmm"]
        payload["hmm"] = HmmSpec(h["n_states"], np.asarray(h["transition"]),
                                 np.asarray(h["initial"]))
    gens = []
    for g in payload.get("generators", []) or []:
        g = dict(g)
        kind = g.pop("kind")
        gens.append(NarmaSpec(**g) if kind == "narma" else GpSpec(**g))
    payload["generators"] = tuple(gens)
    if payload.get("edge_prob") is not None:
        payload["edge_prob"] = tuple(payload["edge_prob"])
    if payload.get("flip_prob") is not None:
        payload["flip_prob"] = tuple(payload["flip_prob"])
    return SynthConfig(**payload)
