"""Full comparison protocol: for each split, generate or load data, train the
requested methods on identical samples, probe frozen representations, and
aggregate accuracy and macro AUPRC with bootstrap intervals and paired
signed-rank tests against the graph-aware model.

A split is an independent generation seed plus a fresh 60/20/20 sample
partition. Methods inside a split share the data, the anchor streams, and
the neighborhood cache, so their per-split metrics are paired.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import (
    train_byol,
    train_simsiam,
    train_supervised,
    train_tnc_nograph,
)
from .data import LabeledDataset, load_dataset, tiled_windows
from .encoder import EncoderConfig, encode_values, normalized_adjacency, save_checkpoint
from .evaluation import (
    EvalResult,
    ProbeConfig,
    ProbeParams,
    bootstrap_ci,
    evaluate,
    export_embeddings,
    train_probe,
    wilcoxon_signed_rank,
)
from .neighborhood import NeighborhoodCache
from .synth import SynthConfig, config_from_json, generate_dataset
from .training import TrainConfig, train_graphtnc
from .util import canonical_json, config_digest, derive_rng

METHODS = ("graphtnc", "tnc", "byol", "simsiam", "supervised")
TRAIN_FRACTION, VAL_FRACTION = 0.6, 0.2


@dataclass(frozen=True)
class ExperimentSpec:
    out_dir: str
    methods: tuple[str, ...] = ("graphtnc", "tnc")
    n_splits: int = 10
    seeds: tuple[int, ...] = tuple(range(10))
    synth: SynthConfig | None = None
    dataset_dir: str | None = None
    encoder: EncoderConfig | None = None  # None: defaults sized from the data
    train: TrainConfig = field(default_factory=TrainConfig)
    probe_epochs: int = 100
    probe_patience: int = 10
    stride: int | None = None  # None: window width (non-overlapping tiling)
    bootstrap_resamples: int = 1000
    ci_level: float = 0.95

    def __post_init__(self):
        if not self.methods:
            raise ValueError("need at least one method")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if len(self.seeds) < self.n_splits:
            raise ValueError("need at least one seed per split")
        if (self.synth is None) == (self.dataset_dir is None):
            raise ValueError("exactly one of synth or dataset_dir must be set")


def spec_from_json(payload: dict, out_dir: str | None = None) -> ExperimentSpec:
    """Build a spec from a parsed JSON config; flags may override out_dir."""
    payload = dict(payload)
    if out_dir is not None:
        payload["out_dir"] = out_dir
    if payload.get("synth") is not None:
        payload["synth"] = config_from_json(payload["synth"])
    if payload.get("encoder") is not None:
        payload["encoder"] = EncoderConfig(**payload["encoder"])
    if payload.get("train") is not None:
        payload["train"] = TrainConfig(**payload["train"])
    for key in ("methods", "seeds"):
        if payload.get(key) is not None:
            payload[key] = tuple(payload[key])
    return ExperimentSpec(**payload)


def partition_samples(n_samples: int, seed: int):
    """60/20/20 train/validation/test over sample indices."""
    order = derive_rng(seed, "partition").permutation(n_samples)
    n_train = int(round(n_samples * TRAIN_FRACTION))
    n_val = int(round(n_samples * VAL_FRACTION))
    n_train = max(1, min(n_samples - 2, n_train))
    n_val = max(1, min(n_samples - n_train - 1, n_val))
    return (
        np.sort(order[:n_train]),
        np.sort(order[n_train : n_train + n_val]),
        np.sort(order[n_train + n_val :]),
    )


def window_representations(
    params, econfig: EncoderConfig, signals: np.ndarray, graph_lists, chunk: int = 128
) -> np.ndarray:
    """Frozen-encoder representations for a stack of windows."""
    out = []
    n = econfig.n_nodes
    for lo in range(0, len(signals), chunk):
        sig = signals[lo : lo + chunk]
        ahat = None
        if econfig.use_graph:
            ahat = np.stack([
                np.stack([normalized_adjacency(e, n) for e in edges])
                for edges in graph_lists[lo : lo + chunk]
            ])
        out.append(encode_values(params, econfig, sig, ahat))
    return np.concatenate(out, axis=0)


def _split_dataset(spec: ExperimentSpec, seed: int) -> LabeledDataset:
    if spec.synth is not None:
        return generate_dataset(replace(spec.synth, seed=seed))
    return load_dataset(spec.dataset_dir)


def _encoder_config(spec: ExperimentSpec, dataset: LabeledDataset) -> EncoderConfig:
    if spec.encoder is not None:
        return spec.encoder
    return EncoderConfig(n_nodes=dataset.n_features)


def write_report(directory: Path, report) -> None:
    """Persist a training report reproducibly: the report proper (a pure
    function of spec and seed, so reruns must produce identical bytes) in
    report.json, the wall-clock measurement separately in timing.json."""
    directory = Path(directory)
    (directory / "report.json").write_text(
        report.to_json(include_wall_time=False) + "\n"
    )
    (directory / "timing.json").write_text(
        json.dumps({"wall_time": report.wall_time}) + "\n"
    )


def _train_method(method, dataset, econfig, tconfig, tr, va, cache):
    """Returns (encoder params for representations, encoder config actually
    used, probe override or None, checkpoint extras, report)."""
    if method == "graphtnc":
        enc, disc, report = train_graphtnc(dataset, econfig, tconfig, tr, va, cache)
        return enc, econfig, None, {k: p.value for k, p in disc.items()}, report
    if method == "tnc":
        enc, disc, report = train_tnc_nograph(dataset, econfig, tconfig, tr, va, cache)
        used = dataclasses.replace(econfig, use_graph=False)
        return enc, used, None, {k: p.value for k, p in disc.items()}, report
    if method == "byol":
        params, report = train_byol(dataset, econfig, tconfig,
                                    train_indices=tr, val_indices=va, cache=cache)
        extras = {f"proj/{k}": p.value for k, p in params.student_proj.items()}
        extras |= {f"pred/{k}": p.value for k, p in params.predictor.items()}
        extras |= {f"teacher/{k}": p.value for k, p in params.teacher_enc.items()}
        return params.student_enc, econfig, None, extras, report
    if method == "simsiam":
        params, report = train_simsiam(dataset, econfig, tconfig,
                                       train_indices=tr, val_indices=va, cache=cache)
        extras = {f"proj/{k}": p.value for k, p in params.projector.items()}
        extras |= {f"pred/{k}": p.value for k, p in params.predictor.items()}
        return params.encoder, econfig, None, extras, report
    if method == "supervised":
        params, report = train_supervised(dataset, econfig, tconfig,
                                          train_indices=tr, val_indices=va)
        enc = {k: p for k, p in params.items() if not k.startswith("clf_")}
        head = ProbeParams(params["clf_w0"].value.copy(), params["clf_b0"].value.copy())
        extras = {"clf_w0": head.weights, "clf_b0": head.bias}
        return enc, econfig, head, extras, report
    raise ValueError(f"unknown method {method!r}")


def _aggregate(spec: ExperimentSpec, metrics: dict[str, dict[str, list[float]]]):
    """Comparison rows: one per (method, metric) with mean, spread, CI, and a
    paired signed-rank p-value against the graph-aware model."""
    rows = []
    base_seed = spec.seeds[0]
    reference = metrics.get("graphtnc")
    for method in spec.methods:
        for metric in ("accuracy", "auprc"):
            values = np.asarray(metrics[method][metric])
            rng = derive_rng(base_seed, "bootstrap", method, metric)
            lo, hi = bootstrap_ci(values, spec.bootstrap_resamples, spec.ci_level, rng)
            p = None
            if reference is not None and method != "graphtnc":
                p = wilcoxon_signed_rank(reference[metric], values).p_value
            rows.append({
                "method": method,
                "metric": metric,
                "mean": float(values.mean()),
                "std": float(values.std(ddof=1)) if len(values) > 1 else 0.0,
                "ci_lo": lo,
                "ci_hi": hi,
                "wilcoxon_p_vs_graphtnc": p,
                "values": [float(v) for v in values],
            })
    return rows


def _write_comparison(out: Path, spec_digest: str, rows) -> None:
    payload = {"spec_digest": spec_digest, "rows": rows}
    (out / "comparison.json").write_text(canonical_json(payload) + "\n")
    cols = ["method", "metric", "mean", "std", "ci_lo", "ci_hi",
            "wilcoxon_p_vs_graphtnc"]
    lines = [",".join(cols)]
    for row in rows:
        cells = []
        for c in cols:
            v = row[c]
            cells.append("" if v is None else (f"{v:.17g}" if isinstance(v, float) else str(v)))
        lines.append(",".join(cells))
    (out / "comparison.csv").write_text("\n".join(lines) + "\n")


def run_experiment(spec: ExperimentSpec):
    """Train, probe, and evaluate every (split, method); write checkpoints,
    reports, embeddings, and the final comparison table. Artifacts are
    flushed as each method finishes, so an aborted run keeps its partial
    results. Returns the comparison rows."""
    out = Path(spec.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    spec_digest = config_digest(replace(spec, out_dir=""))
    metrics: dict[str, dict[str, list[float]]] = {
        m: {"accuracy": [], "auprc": []} for m in spec.methods
    }

    for i in range(spec.n_splits):
        seed = spec.seeds[i]
        dataset = _split_dataset(spec, seed)
        econfig = _encoder_config(spec, dataset)
        tconfig = replace(spec.train, seed=seed)
        tr, va, te = partition_samples(dataset.n_samples, seed)
        cache = NeighborhoodCache(dataset, max_delta=tconfig.max_delta,
                                  alpha=tconfig.adf_alpha)
        signals, graph_lists, labels, sample_idx, _ = tiled_windows(dataset, spec.stride)
        in_train = np.isin(sample_idx, tr)
        in_test = np.isin(sample_idx, te)
        split_dir = out / "splits" / f"split_{i:02d}"

        for method in spec.methods:
            enc, used_cfg, head, extras, report = _train_method(
                method, dataset, econfig, tconfig, tr, va, cache
            )
            reps_train = window_representations(enc, used_cfg, signals[in_train],
                                                [g for g, m in zip(graph_lists, in_train) if m])
            reps_test = window_representations(enc, used_cfg, signals[in_test],
                                               [g for g, m in zip(graph_lists, in_test) if m])
            if head is None:
                probe = train_probe(
                    reps_train,
                    labels[in_train],
                    ProbeConfig(
                        n_classes=dataset.metadata.n_states,
                        epochs=spec.probe_epochs,
                        patience=spec.probe_patience,
                        seed=seed,
                    ),
                )
            else:
                probe = head
            result = evaluate(probe, reps_test, labels[in_test])
            metrics[method]["accuracy"].append(result.accuracy)
            metrics[method]["auprc"].append(result.auprc)

            mdir = split_dir / method
            mdir.mkdir(parents=True, exist_ok=True)
            save_checkpoint(mdir / "checkpoint.npz", used_cfg, enc, extras)
            write_report(mdir, report)
            (mdir / "eval.json").write_text(canonical_json({
                "accuracy": result.accuracy,
                "auprc": result.auprc,
                "per_class_auprc": result.per_class_auprc,
                "confusion": result.confusion,
                "spec_digest": spec_digest,
                "seed": seed,
            }) + "\n")
            export_embeddings(reps_test, labels[in_test], mdir / "embeddings.csv")

    rows = _aggregate(spec, metrics)
    _write_comparison(out, spec_digest, rows)
    return rows
