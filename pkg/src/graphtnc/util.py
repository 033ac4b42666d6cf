"""Seed derivation and config digests shared across the package."""
from __future__ import annotations

import dataclasses
import hashlib
import json
from pathlib import PurePath
from typing import Any

import numpy as np

_MASK64 = (1 << 64) - 1


def derive_rng(seed: int, *labels: object) -> np.random.Generator:
    """Return a generator for the named sub-stream of ``seed``.

    Streams for distinct label tuples are statistically independent, and the
    mapping is stable across platforms and processes, so parallel and serial
    execution of labelled work agree bit-exactly.
    """
    tag = "/".join(str(lab) for lab in labels).encode("utf-8")
    words = np.frombuffer(hashlib.sha256(tag).digest(), dtype="<u4")
    entropy = [int(seed) & _MASK64] + [int(w) for w in words]
    return np.random.default_rng(np.random.SeedSequence(entropy))


def _jsonable(obj: Any) -> Any:
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, PurePath):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def canonical_json(obj: Any) -> str:
    """Serialize ``obj`` (dataclasses, arrays, plain containers) to sorted-key JSON."""
    return json.dumps(_jsonable(obj), sort_keys=True, separators=(",", ":"))


def config_digest(obj: Any) -> str:
    """Hex digest identifying a configuration, embedded in artifacts for provenance."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]
