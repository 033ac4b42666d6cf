"""Command-line pipeline: dataset synthesis, training, probing, evaluation,
method comparison, gradient auditing, embedding export, and EEG ingestion.

Exit codes: 0 success, 2 usage error, 1 runtime failure.
"""
from __future__ import annotations

import argparse
import dataclasses
import itertools
import json
import sys
from pathlib import Path

import numpy as np

from .data import load_dataset, save_dataset, tiled_windows
from .encoder import (
    EncoderConfig,
    init_encoder,
    load_checkpoint,
    normalized_adjacency,
    save_checkpoint,
)
from .evaluation import ProbeConfig, ProbeParams, evaluate, export_embeddings, train_probe
from .experiment import (
    METHODS,
    _train_method,
    partition_samples,
    run_experiment,
    spec_from_json,
    window_representations,
    write_report,
)
from .synth import config_from_json, default_config, generate_dataset
from .training import (
    ContrastBatch,
    TrainConfig,
    contrastive_loss,
    contrastive_loss_value,
    finite_diff_check,
    init_discriminator,
)
from .util import canonical_json, derive_rng

GRADCHECK_THRESHOLD = 1e-4


def _load_json(path) -> dict:
    return json.loads(Path(path).read_text())


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="graphtnc",
        description="Joint time-series and graph representation pipeline.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    p.add_argument("--config", help="synthesis config JSON (defaults used if omitted)")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--mix-weight", type=float, help="override the graph mixing weight r")

    p = sub.add_parser("train", help="train one method on a dataset directory")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--method", required=True, choices=METHODS)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--encoder-config", help="encoder config JSON")
    p.add_argument("--train-config", help="training config JSON")
    p.add_argument("--epochs", type=int, help="override epochs")

    p = sub.add_parser("probe", help="fit a linear probe on frozen representations")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="probe parameter file (.npz)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--epochs", type=int, default=100)

    p = sub.add_parser("eval", help="evaluate a checkpoint + probe on the test split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--probe", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="metrics JSON path")
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("compare", help="run the multi-split method comparison")
    p.add_argument("--config", required=True, help="experiment spec JSON")
    p.add_argument("--out", help="override the spec's output directory")

    p = sub.add_parser("gradcheck", help="audit analytic gradients of the full loss")
    p.add_argument("--config", help="encoder config JSON")
    p.add_argument("--seed", type=int, required=True)

    p = sub.add_parser("export-embeddings", help="encode every window to CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("ingest-eeg", help="build a dataset from grasp-and-lift CSVs")
    p.add_argument("--data-dir", required=True, help="directory of *_data.csv/*_events.csv")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--montage", help="montage JSON (package default if omitted)")
    p.add_argument("--n-signals", type=int, default=100)
    p.add_argument("--length", type=int, default=60)
    p.add_argument("--window", type=int, default=5)
    return parser


def parse_cli(argv):
    return build_parser().parse_args(argv)


def _cmd_synth(args) -> int:
    if args.config:
        config = config_from_json(_load_json(args.config))
    else:
        config = default_config()
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.mix_weight is not None:
        overrides["mix_weight"] = args.mix_weight
    if overrides:
        config = dataclasses.replace(config, **overrides)
    dataset = generate_dataset(config)
    save_dataset(dataset, args.out)
    print(f"wrote {dataset.n_samples} samples to {args.out}")
    return 0


def _encoder_from_args(args, dataset) -> EncoderConfig:
    if getattr(args, "encoder_config", None):
        return EncoderConfig(**_load_json(args.encoder_config))
    return EncoderConfig(n_nodes=dataset.n_features)


def _cmd_train(args) -> int:
    dataset = load_dataset(args.data)
    econfig = _encoder_from_args(args, dataset)
    payload = _load_json(args.train_config) if args.train_config else {}
    payload["seed"] = args.seed
    if args.epochs is not None:
        payload["epochs"] = args.epochs
    tconfig = TrainConfig(**payload)
    enc, used_cfg, _, extras, report = _train_method(
        args.method, dataset, econfig, tconfig, None, None, None
    )
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_checkpoint(out / "checkpoint.npz", used_cfg, enc, extras)
    write_report(out, report)
    print(f"{args.method}: stopped after {report.stopped_epoch} epochs, "
          f"best validation loss {min(report.val_loss):.6f}")
    return 0


def _representations_for(checkpoint, dataset, mask=None):
    econfig, params, _ = load_checkpoint(checkpoint)
    signals, graph_lists, labels, sample_idx, _ = tiled_windows(dataset)
    if mask is not None:
        keep = np.isin(sample_idx, mask)
        signals = signals[keep]
        graph_lists = [g for g, k in zip(graph_lists, keep) if k]
        labels = labels[keep]
    reps = window_representations(params, econfig, signals, graph_lists)
    return reps, labels


def _cmd_probe(args) -> int:
    dataset = load_dataset(args.data)
    tr, _, _ = partition_samples(dataset.n_samples, args.seed)
    reps, labels = _representations_for(args.checkpoint, dataset, tr)
    probe = train_probe(
        reps, labels,
        ProbeConfig(n_classes=dataset.metadata.n_states, epochs=args.epochs,
                    seed=args.seed),
    )
    np.savez(args.out, weights=probe.weights, bias=probe.bias, seed=args.seed)
    print(f"probe trained on {len(labels)} windows, saved to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    dataset = load_dataset(args.data)
    _, _, te = partition_samples(dataset.n_samples, args.seed)
    reps, labels = _representations_for(args.checkpoint, dataset, te)
    with np.load(args.probe) as z:
        probe = ProbeParams(z["weights"], z["bias"])
    result = evaluate(probe, reps, labels)
    payload = canonical_json({
        "accuracy": result.accuracy,
        "auprc": result.auprc,
        "per_class_auprc": result.per_class_auprc,
        "confusion": result.confusion,
        "seed": args.seed,
    })
    Path(args.out).write_text(payload + "\n")
    print(f"accuracy {result.accuracy:.4f}, macro AUPRC {result.auprc:.4f}")
    return 0


def _cmd_compare(args) -> int:
    spec = spec_from_json(_load_json(args.config), out_dir=args.out)
    rows = run_experiment(spec)
    for row in rows:
        p = row["wilcoxon_p_vs_graphtnc"]
        suffix = "" if p is None else f", p={p:.4f} vs graphtnc"
        print(f"{row['method']:>10} {row['metric']:<8} "
              f"{row['mean']:.4f} +- {row['std']:.4f}{suffix}")
    print(f"comparison written to {spec.out_dir}")
    return 0


def _gradcheck_batch(econfig: EncoderConfig, rng: np.random.Generator, w: int) -> ContrastBatch:
    n = econfig.n_nodes
    shapes = {"anchor": 1, "pos": 2, "neg": 2}
    sig = {k: rng.standard_normal((b, n, w)) for k, b in shapes.items()}
    if not econfig.use_graph:
        return ContrastBatch(sig["anchor"], sig["pos"], sig["neg"])
    ahat = {}
    for k, b in shapes.items():
        stacks = np.empty((b, w, n, n))
        for i in range(b):
            for t in range(w):
                mask = rng.random((n, n)) < 0.3
                edges = frozenset(
                    (a, c) for a in range(n) for c in range(a + 1, n) if mask[a, c]
                )
                stacks[i, t] = normalized_adjacency(edges, n)
        ahat[k] = stacks
    return ContrastBatch(sig["anchor"], sig["pos"], sig["neg"],
                         ahat["anchor"], ahat["pos"], ahat["neg"])


# A finite-difference probe is only valid where the loss is differentiable
# throughout the probed interval: a rectifier pre-activation within
# step * |d pre / d theta| of zero flips sides under the perturbation and
# invalidates the comparison for that coordinate. Candidate batches/inits are
# redrawn until every pre-activation clears a per-layer margin of roughly
# 10x that radius (graph embeddings see inputs <= 1, the interaction and
# discriminator layers see inputs up to a few units). The screen reads only
# forward values, never the probe outcome.
_KINK_MARGINS = {"graph": 6e-5, "interact": 4e-4, "disc": 4e-4}


def gradcheck_loss(econfig: EncoderConfig, seed: int):
    """Random batch and parameter draw where the finite-difference audit is
    numerically valid, plus taped/tape-free loss closures over the merged
    parameter dict."""
    w = 10
    for candidate in itertools.count():
        rng = derive_rng(seed, "gradcheck", "data", candidate)
        batch = _gradcheck_batch(econfig, rng, w)
        enc = init_encoder(econfig, derive_rng(seed, "gradcheck", "init", candidate))
        disc = init_discriminator(econfig.out_dim, derive_rng(seed, "gradcheck", "disc", candidate))

        preacts: list[tuple[str, np.ndarray]] = []
        contrastive_loss_value(enc, econfig, disc, batch, m=0.05, preact_log=preacts)
        if any(np.abs(p).min() < _KINK_MARGINS[layer] for layer, p in preacts):
            continue

        merged = {**enc, **disc}

        def loss_fn(params):
            e = {k: v for k, v in params.items() if not k.startswith("disc_")}
            d = {k: v for k, v in params.items() if k.startswith("disc_")}
            return contrastive_loss(e, econfig, d, batch, m=0.05)

        def value_fn(params):
            e = {k: v for k, v in params.items() if not k.startswith("disc_")}
            d = {k: v for k, v in params.items() if k.startswith("disc_")}
            return contrastive_loss_value(e, econfig, d, batch, m=0.05)

        return loss_fn, value_fn, merged


def _cmd_gradcheck(args) -> int:
    if args.config:
        econfig = EncoderConfig(**_load_json(args.config))
    else:
        econfig = EncoderConfig(n_nodes=10)
    loss_fn, value_fn, merged = gradcheck_loss(econfig, args.seed)
    err = finite_diff_check(loss_fn, merged, rng=derive_rng(args.seed, "gradcheck", "coords"),
                            value_fn=value_fn)
    ok = err < GRADCHECK_THRESHOLD
    print(f"max relative error {err:.3e} (threshold {GRADCHECK_THRESHOLD:.0e}): "
          f"{'ok' if ok else 'FAIL'}")
    return 0 if ok else 1


def _cmd_export(args) -> int:
    dataset = load_dataset(args.data)
    reps, labels = _representations_for(args.checkpoint, dataset)
    export_embeddings(reps, labels, args.out)
    print(f"wrote {len(labels)} embeddings to {args.out}")
    return 0


def _cmd_ingest(args) -> int:
    from .eeg import ingest_eeg

    root = Path(args.data_dir)
    signal_csvs = sorted(root.glob("*_data.csv"))
    event_csvs = [Path(str(p).replace("_data.csv", "_events.csv")) for p in signal_csvs]
    missing = [p for p in event_csvs if not p.exists()]
    if not signal_csvs:
        raise FileNotFoundError(f"no *_data.csv files under {root}")
    if missing:
        raise FileNotFoundError(f"missing event files: {[str(p) for p in missing]}")
    dataset = ingest_eeg(
        signal_csvs, event_csvs, montage=args.montage,
        n_signals=args.n_signals, length=args.length, window_width=args.window,
    )
    save_dataset(dataset, args.out)
    print(f"ingested {dataset.n_samples} segments into {args.out}")
    return 0


_DISPATCH = {
    "synth": _cmd_synth,
    "train": _cmd_train,
    "probe": _cmd_probe,
    "eval": _cmd_eval,
    "compare": _cmd_compare,
    "gradcheck": _cmd_gradcheck,
    "export-embeddings": _cmd_export,
    "ingest-eeg": _cmd_ingest,
}


def main(argv=None) -> int:
    try:
        args = parse_cli(argv)
    except SystemExit as exc:  # argparse signals usage errors with code 2
        return int(exc.code or 0)
    try:
        return _DISPATCH[args.command](args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
