"""Window encoder: graph embedding, graph-signal interaction, and a
bi-directional GRU over the augmented signal.

Per timestep t of a window the encoder computes

    H_t = act(Ahat_t @ W)                         graph embedding (n x k)
    e_t = act(W1 @ [vec(H_t) ; x_t] + b1)         interaction (d,)
    u_t = [x_t ; e_t]                             GRU input

where Ahat is the degree-normalized adjacency with self-loops and vec stacks
columns. A single-layer GRU runs over u in both directions; the window
representation is a linear map of the two final hidden states.

With ``use_graph`` off the graph branch disappears and the GRU consumes the
raw signal, which is the signal-only ablation used as a baseline.
"""
from __future__ import annotations

import dataclasses
import io
import json
import zipfile
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import DynamicGraphSequence
from .util import derive_rng

GRU_HIDDEN = 64


@dataclass(frozen=True)
class EncoderConfig:
    n_nodes: int
    graph_dim: int = 4
    interact_dim: int = 8
    out_dim: int = 8
    gru_hidden: int = GRU_HIDDEN
    use_graph: bool = True

    def __post_init__(self):
        for name in ("n_nodes", "graph_dim", "interact_dim", "out_dim", "gru_hidden"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    @property
    def gru_input(self) -> int:
        return self.n_nodes + (self.interact_dim if self.use_graph else 0)


def _uniform(rng: np.random.Generator, fan_in: int, shape: tuple) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


def init_encoder(config: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """Weights uniform in +-1/sqrt(fan_in), biases zero. Insertion order is
    the canonical parameter order used by checkpoints and the optimizer.

    Two deviations from plain fan-in scaling keep the graph branch alive at
    the start of training: degree-normalized adjacency rows have small norm,
    so graph_w gets a compensating gain, and the interaction weights are
    drawn per input block so the graph embedding and the raw signal start
    with contributions of the same order instead of the signal drowning the
    graph out.
    """
    n, k, d = config.n_nodes, config.graph_dim, config.interact_dim
    s, h = config.gru_hidden, config.out_dim
    params: dict[str, Tensor] = {}

    def add(name, arr):
        params[name] = ad.parameter(arr)

    if config.use_graph:
        add("graph_w", _uniform(rng, n, (n, k)) * 10.0)
        inter = np.concatenate(
            [_uniform(rng, n * k, (n * k, d)), _uniform(rng, n, (n, d))]
        )
        add("inter_w", inter)
        add("inter_b", np.zeros(d))
    gi = config.gru_input
    for direction in ("fwd", "bwd"):
        add(f"gru_{direction}_wi", _uniform(rng, gi, (gi, 3 * s)))
        add(f"gru_{direction}_wh_zr", _uniform(rng, s, (s, 2 * s)))
        add(f"gru_{direction}_wh_n", _uniform(rng, s, (s, s)))
        add(f"gru_{direction}_b", np.zeros(3 * s))
    add("head_w", _uniform(rng, 2 * s, (2 * s, h)))
    add("head_b", np.zeros(h))
    return params


def init_encoder_seeded(config: EncoderConfig, seed: int, method: str) -> dict[str, Tensor]:
    return init_encoder(config, derive_rng(seed, "init", method))


def param_count(params: dict[str, Tensor]) -> int:
    return sum(int(p.value.size) for p in params.values())


def component_sizes(config: EncoderConfig) -> dict[str, int]:
    """Closed-form parameter tally per component."""
    n, k, d = config.n_nodes, config.graph_dim, config.interact_dim
    s, h = config.gru_hidden, config.out_dim
    gi = config.gru_input
    sizes = {
        "graph": n * k if config.use_graph else 0,
        "interaction": (n * k + n) * d + d if config.use_graph else 0,
        "gru": 2 * 3 * (gi * s + s * s + s),
        "head": 2 * s * h + h,
    }
    sizes["total"] = sum(sizes.values())
    return sizes


def normalized_adjacency(edges: frozenset, n_nodes: int) -> np.ndarray:
    """D^{-1/2} (A + I) D^{-1/2} with D the degree of A + I."""
    a = np.eye(n_nodes)
    for i, j in edges:
        a[i, j] = 1.0
        a[j, i] = 1.0
    dinv = 1.0 / np.sqrt(a.sum(axis=1))
    return a * dinv[:, None] * dinv[None, :]


def adjacency_stack(graphs: DynamicGraphSequence) -> np.ndarray:
    """(T, n, n) stack of normalized adjacencies for one graph sequence."""
    return np.stack([normalized_adjacency(e, graphs.n_nodes) for e in graphs.edges])


def _gru_sequence(u_seq: Tensor, params, prefix: str, hidden: int, reverse: bool) -> Tensor:
    """One GRU direction over (B, w, in) inputs as a single taped op with a
    hand-written sequence backward; returns the final hidden state (B, s)."""
    wi = params[f"{prefix}_wi"]
    wh_zr = params[f"{prefix}_wh_zr"]
    wh_n = params[f"{prefix}_wh_n"]
    b = params[f"{prefix}_b"]
    u = u_seq.value
    wiv, wzv, wnv, bv = wi.value, wh_zr.value, wh_n.value, b.value
    batch, width, _ = u.shape
    s = hidden
    order = range(width - 1, -1, -1) if reverse else range(width)
    h = np.zeros((batch, s))
    steps = []
    for t in order:
        gates = u[:, t] @ wiv + bv
        rec = h @ wzv
        z = ad.sigmoid_value(gates[:, :s] + rec[:, :s])
        r = ad.sigmoid_value(gates[:, s : 2 * s] + rec[:, s:])
        q = h @ wnv
        n = np.tanh(gates[:, 2 * s :] + r * q)
        steps.append((t, h, z, r, n, q))
        h = (1.0 - z) * n + z * h
    out = h

    def bwd(g):
        dwi = np.zeros_like(wiv)
        dwz = np.zeros_like(wzv)
        dwn = np.zeros_like(wnv)
        db = np.zeros_like(bv)
        du = np.zeros_like(u) if u_seq.requires_grad else None
        dh = g
        for t, h_prev, z, r, n, q in reversed(steps):
            dz = dh * (h_prev - n)
            dn = dh * (1.0 - z)
            dh_prev = dh * z
            da_n = dn * (1.0 - n * n)
            dq = da_n * r
            dh_prev = dh_prev + dq @ wnv.T
            dwn += h_prev.T @ dq
            da_z = dz * z * (1.0 - z)
            da_r = (da_n * q) * r * (1.0 - r)
            drec = np.concatenate([da_z, da_r], axis=1)
            dh_prev = dh_prev + drec @ wzv.T
            dwz += h_prev.T @ drec
            dgates = np.concatenate([da_z, da_r, da_n], axis=1)
            dwi += u[:, t].T @ dgates
            db += dgates.sum(axis=0)
            if du is not None:
                du[:, t] = dgates @ wiv.T
            dh = dh_prev
        for p, grad in ((wi, dwi), (wh_zr, dwz), (wh_n, dwn), (b, db)):
            if p.requires_grad:
                p._accumulate(grad)
        if du is not None:
            u_seq._accumulate(du)

    return ad._op(out, (u_seq, wi, wh_zr, wh_n, b), bwd)


def _check_shapes(config: EncoderConfig, signals: np.ndarray, ahat) -> tuple:
    signals = np.asarray(signals, dtype=np.float64)
    if signals.ndim != 3 or signals.shape[1] != config.n_nodes:
        raise ValueError(f"signals must be (B, {config.n_nodes}, w), got {signals.shape}")
    batch, n, width = signals.shape
    if config.use_graph:
        if ahat is None:
            raise ValueError("graph-aware encoder needs adjacency input")
        ahat = np.asarray(ahat, dtype=np.float64)
        if ahat.shape != (batch, width, n, n):
            raise ValueError(f"ahat must be {(batch, width, n, n)}, got {ahat.shape}")
    elif ahat is not None:
        raise ValueError("signal-only encoder takes no adjacency input")
    return signals, ahat, batch, n, width


def encode(
    params: dict[str, Tensor],
    config: EncoderConfig,
    signals: np.ndarray,
    ahat: np.ndarray | None = None,
) -> Tensor:
    """Encode a batch of windows.

    signals: (B, n, w). ahat: (B, w, n, n) normalized adjacencies, required
    exactly when the config uses the graph branch. Returns (B, out_dim).
    """
    signals, ahat, batch, n, width = _check_shapes(config, signals, ahat)
    x_all = ad.constant(np.swapaxes(signals, 1, 2))
    if config.use_graph:
        h_all = ad.relu(ad.constant(ahat) @ params["graph_w"])
        vec = ad.reshape(ad.swap_last_axes(h_all), (batch, width, n * config.graph_dim))
        e_all = ad.relu(
            ad.affine(ad.concat([vec, x_all], axis=2), params["inter_w"], params["inter_b"])
        )
        u_all = ad.concat([x_all, e_all], axis=2)
    else:
        u_all = x_all

    s_fwd = _gru_sequence(u_all, params, "gru_fwd", config.gru_hidden, reverse=False)
    s_bwd = _gru_sequence(u_all, params, "gru_bwd", config.gru_hidden, reverse=True)
    return ad.affine(ad.concat([s_fwd, s_bwd], axis=1), params["head_w"], params["head_b"])


def encode_window(
    params: dict[str, Tensor],
    config: EncoderConfig,
    signal: np.ndarray,
    ahat: np.ndarray | None = None,
) -> np.ndarray:
    """Representation of a single (n, w) window as a plain array."""
    stack = None if ahat is None else np.asarray(ahat)[None]
    return encode(params, config, np.asarray(signal)[None], stack).value[0]


def _values(params: dict) -> dict[str, np.ndarray]:
    return {k: (p.value if isinstance(p, Tensor) else np.asarray(p)) for k, p in params.items()}


def _gru_sequence_values(vals, prefix: str, u: np.ndarray, hidden: int, reverse: bool) -> np.ndarray:
    wi = vals[f"{prefix}_wi"]
    wh_zr = vals[f"{prefix}_wh_zr"]
    wh_n = vals[f"{prefix}_wh_n"]
    b = vals[f"{prefix}_b"]
    batch, width, _ = u.shape
    s = hidden
    order = range(width - 1, -1, -1) if reverse else range(width)
    h = np.zeros((batch, s))
    for t in order:
        gates = u[:, t] @ wi + b
        rec = h @ wh_zr
        z = ad.sigmoid_value(gates[:, :s] + rec[:, :s])
        r = ad.sigmoid_value(gates[:, s : 2 * s] + rec[:, s:])
        n = np.tanh(gates[:, 2 * s :] + r * (h @ wh_n))
        h = (1.0 - z) * n + z * h
    return h


def encode_values(
    params: dict,
    config: EncoderConfig,
    signals: np.ndarray,
    ahat: np.ndarray | None = None,
    preact_log: list | None = None,
) -> np.ndarray:
    """Tape-free mirror of :func:`encode` for inference and finite-difference
    probes; identical arithmetic, returns a plain (B, out_dim) array.

    ``preact_log``, when given, collects every rectifier pre-activation as a
    (layer name, array) pair, which callers use to certify differentiability
    margins.
    """
    signals, ahat, batch, n, width = _check_shapes(config, signals, ahat)
    vals = _values(params)
    x_all = np.swapaxes(signals, 1, 2)
    if config.use_graph:
        pre_h = ahat @ vals["graph_w"]
        h_all = np.where(pre_h > 0.0, pre_h, 0.0)
        vec = np.swapaxes(h_all, -1, -2).reshape(batch, width, n * config.graph_dim)
        pre_e = np.concatenate([vec, x_all], axis=2) @ vals["inter_w"] + vals["inter_b"]
        e_all = np.where(pre_e > 0.0, pre_e, 0.0)
        if preact_log is not None:
            preact_log.append(("graph", pre_h))
            preact_log.append(("interact", pre_e))
        u_all = np.concatenate([x_all, e_all], axis=2)
    else:
        u_all = x_all

    s_fwd = _gru_sequence_values(vals, "gru_fwd", u_all, config.gru_hidden, reverse=False)
    s_bwd = _gru_sequence_values(vals, "gru_bwd", u_all, config.gru_hidden, reverse=True)
    return np.concatenate([s_fwd, s_bwd], axis=1) @ vals["head_w"] + vals["head_b"]


def _config_to_json(config) -> str:
    return json.dumps(dataclasses.asdict(config), sort_keys=True)


def save_checkpoint(
    path,
    config: EncoderConfig,
    params: dict[str, Tensor],
    extras: dict[str, np.ndarray] | None = None,
) -> None:
    """Single-file snapshot: config as JSON, tensors by name, optional extra
    arrays (optimizer moments, epoch counters) under ``extra/``.

    Written as an uncompressed npy zip with a pinned timestamp, so identical
    contents produce identical bytes; rerunning a training command must
    reproduce its checkpoint file exactly.
    """
    payload = {f"param/{k}": v.value for k, v in params.items()}
    payload["param_order"] = np.array(list(params.keys()))
    payload["config_json"] = np.array(_config_to_json(config))
    for k, v in (extras or {}).items():
        payload[f"extra/{k}"] = np.asarray(v)
    with zipfile.ZipFile(path, "w", zipfile.ZIP_STORED) as zf:
        for key, arr in payload.items():
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.asarray(arr), allow_pickle=False)
            info = zipfile.ZipInfo(key + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path):
    """Returns (config, params, extras); exact inverse of save_checkpoint."""
    with np.load(path, allow_pickle=False) as z:
        cfg = EncoderConfig(**json.loads(str(z["config_json"])))
        order = [str(k) for k in z["param_order"]]
        params = {k: ad.parameter(z[f"param/{k}"]) for k in order}
        extras = {
            k[len("extra/") :]: z[k] for k in z.files if k.startswith("extra/")
        }
    return cfg, params, extras
