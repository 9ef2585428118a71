"""Graph encoder parameters and the query-gated message-passing math.

A layer sends, from every node j into each node i it points at (plus i into
itself), the message

    m = act(W (g * h_j) + b),   g = qgate_j * egate_ij   (egate_ii = 1)

where qgate is the query-to-chunk lexical relevance and egate is a learned
chunk-to-chunk relevance from a small MLP over embedding differences. The
mean-linear variant averages messages; the attention variant aggregates them
with multi-head attention using the receiving node's current state as the
attender (gating multiplies values before attention, and attention
coefficients are computed from the gated messages). The final layer projects
back to the embedding dimension so scores can be taken against the query
embedding.

Forward passes optionally record caches consumed by the mirrored backward
passes; gradients flow into every W/b and the relevance MLP, while the
gates' lexical part and the input embeddings are treated as constants.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from pathlib import Path

from .errors import CheckpointError
from . import kernels

CHECKPOINT_VERSION = 1
CHECKPOINT_MAGIC = b"CQPC\x00"

VARIANT_MEAN = "mean-linear"
VARIANT_ATTENTION = "attention"
VARIANTS = (VARIANT_MEAN, VARIANT_ATTENTION)
ACTIVATIONS = ("tanh", "none")
POS_MAPS = ("floor", "softplus")

_MEAN_SLOTS = ("W", "b")
_ATTN_SLOTS = ("Wm", "bm", "Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo")


@dataclass
class EncoderParams:
    variant: str
    embed_dim: int
    hidden_dim: int
    n_layers: int
    heads: int
    activation: str
    pos_map: str
    seed: int
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            variant=self.variant,
            embed_dim=self.embed_dim,
            hidden_dim=self.hidden_dim,
            n_layers=self.n_layers,
            heads=self.heads,
            activation=self.activation,
            pos_map=self.pos_map,
            seed=self.seed,
            arrays={k: v.copy() for k, v in self.arrays.items()},
        )

    def layer(self, k: int) -> dict[str, np.ndarray]:
        slots = _MEAN_SLOTS if self.variant == VARIANT_MEAN else _ATTN_SLOTS
        return {s: self.arrays[f"layer{k}.{s}"] for s in slots}


def layer_dims(n_layers: int, embed_dim: int, hidden_dim: int) -> list[tuple[int, int]]:
    """(in, out) per layer; the last layer returns to the embedding dimension."""
    if n_layers == 1:
        return [(embed_dim, embed_dim)]
    dims = [(embed_dim, hidden_dim)]
    dims += [(hidden_dim, hidden_dim)] * (n_layers - 2)
    dims.append((hidden_dim, embed_dim))
    return dims


def _glorot(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    scale = np.sqrt(2.0 / (fan_in + fan_out))
    return rng.standard_normal((fan_out, fan_in)) * scale


def _message_map(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    # Square message maps start near the identity (residual-flavored), which
    # keeps early-training rankings close to the ungated hybrid score.
    w = _glorot(rng, fan_out, fan_in)
    if fan_out == fan_in:
        w = np.eye(fan_out) + 0.1 * w
    return w


def init_params(
    variant: str = VARIANT_MEAN,
    embed_dim: int = 64,
    hidden_dim: int = 128,
    n_layers: int = 2,
    heads: int = 4,
    activation: str = "tanh",
    pos_map: str = "floor",
    seed: int = 0,
) -> EncoderParams:
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    if pos_map not in POS_MAPS:
        raise ValueError(f"unknown pos_map {pos_map!r}")
    if n_layers < 1:
        raise ValueError("need at least one layer")
    if variant == VARIANT_ATTENTION:
        for _, out_dim in layer_dims(n_layers, embed_dim, hidden_dim):
            if out_dim % heads != 0:
                raise ValueError(f"layer width {out_dim} not divisible by {heads} heads")
    rng = np.random.default_rng(seed)
    arrays: dict[str, np.ndarray] = {}
    for k, (d_in, d_out) in enumerate(layer_dims(n_layers, embed_dim, hidden_dim)):
        if variant == VARIANT_MEAN:
            arrays[f"layer{k}.W"] = _message_map(rng, d_out, d_in)
            arrays[f"layer{k}.b"] = np.zeros(d_out)
        else:
            arrays[f"layer{k}.Wm"] = _message_map(rng, d_out, d_in)
            arrays[f"layer{k}.bm"] = np.zeros(d_out)
            arrays[f"layer{k}.Wq"] = _glorot(rng, d_out, d_in)
            arrays[f"layer{k}.bq"] = np.zeros(d_out)
            arrays[f"layer{k}.Wk"] = _glorot(rng, d_out, d_out)
            arrays[f"layer{k}.bk"] = np.zeros(d_out)
            arrays[f"layer{k}.Wv"] = _message_map(rng, d_out, d_out)
            arrays[f"layer{k}.bv"] = np.zeros(d_out)
            arrays[f"layer{k}.Wo"] = _message_map(rng, d_out, d_out)
            arrays[f"layer{k}.bo"] = np.zeros(d_out)
    arrays["mlp.W1"] = _glorot(rng, embed_dim, embed_dim)
    arrays["mlp.b1"] = np.zeros(embed_dim)
    arrays["mlp.w2"] = _glorot(rng, 1, embed_dim)[0]
    arrays["mlp.b2"] = np.zeros(1)
    return EncoderParams(
        variant=variant,
        embed_dim=embed_dim,
        hidden_dim=hidden_dim,
        n_layers=n_layers,
        heads=heads,
        activation=activation,
        pos_map=pos_map,
        seed=seed,
        arrays=arrays,
    )


def pos_map_apply(name: str, values: np.ndarray) -> np.ndarray:
    """Map raw lexical scores into the non-negative gate domain."""
    if name == "floor":
        return np.maximum(values, 0.0)
    if name == "softplus":
        return np.logaddexp(0.0, values)
    raise ValueError(f"unknown pos_map {name!r}")


# ---------------------------------------------------------------------------
# relevance MLP (edge gates)


def edge_gates_forward(params: EncoderParams, diffs: np.ndarray, want_cache: bool = False):
    """Gate for each edge: sigmoid-headed MLP over (h_dst - h_src).

    The self gate is 1 by definition and never goes through the MLP.
    """
    w1, b1 = params.arrays["mlp.W1"], params.arrays["mlp.b1"]
    w2, b2 = params.arrays["mlp.w2"], params.arrays["mlp.b2"]
    hidden = np.tanh(diffs @ w1.T + b1)
    pre = hidden @ w2 + b2[0]
    gate = 1.0 / (1.0 + np.exp(-pre))
    cache = (diffs, hidden, gate) if want_cache else None
    return gate, cache


def edge_gates_backward(params: EncoderParams, cache, dgate: np.ndarray) -> dict[str, np.ndarray]:
    diffs, hidden, gate = cache
    w2 = params.arrays["mlp.w2"]
    dpre = dgate * gate * (1.0 - gate)
    dhidden = np.outer(dpre, w2)
    dz1 = dhidden * (1.0 - hidden * hidden)
    return {
        "mlp.W1": dz1.T @ diffs,
        "mlp.b1": dz1.sum(axis=0),
        "mlp.w2": hidden.T @ dpre,
        "mlp.b2": np.array([dpre.sum()]),
    }


# ---------------------------------------------------------------------------
# message construction shared by both variants


def _messages_forward(x, proj, bias, gate_self, gate_edge, src, activation):
    p = x @ proj.T
    u_self = gate_self[:, None] * p + bias
    u_edge = gate_edge[:, None] * p[src] + bias
    if activation == "tanh":
        m_self, m_edge = np.tanh(u_self), np.tanh(u_edge)
    else:
        m_self, m_edge = u_self, u_edge
    return p, m_self, m_edge


def _messages_backward(cache, dm_self, dm_edge):
    x, p, m_self, m_edge, gate_self, gate_edge, src, proj, activation = cache
    if activation == "tanh":
        du_self = dm_self * (1.0 - m_self * m_self)
        du_edge = dm_edge * (1.0 - m_edge * m_edge)
    else:
        du_self, du_edge = dm_self, dm_edge
    db = du_self.sum(axis=0) + du_edge.sum(axis=0)
    dgate_edge = np.einsum("er,er->e", du_edge, p[src])
    dp = gate_self[:, None] * du_self
    np.add.at(dp, src, gate_edge[:, None] * du_edge)
    dproj = dp.T @ x
    dx = dp @ proj
    return dx, dproj, db, dgate_edge


def _segment_sum(values: np.ndarray, indptr: np.ndarray) -> np.ndarray:
    out = np.zeros((indptr.size - 1,) + values.shape[1:], dtype=np.float64)
    counts = np.diff(indptr)
    nz = counts > 0
    if values.shape[0] and nz.any():
        out[nz] = np.add.reduceat(values, indptr[:-1][nz], axis=0)
    return out


def _dst_index(indptr: np.ndarray) -> np.ndarray:
    return np.repeat(np.arange(indptr.size - 1), np.diff(indptr))


# ---------------------------------------------------------------------------
# mean-linear layer


def mean_layer_forward(x, layer, gate_self, gate_edge, indptr, src, activation, want_cache=False):
    proj, bias = layer["W"], layer["b"]
    p, m_self, m_edge = _messages_forward(x, proj, bias, gate_self, gate_edge, src, activation)
    denom = 1.0 + np.diff(indptr)
    y = (m_self + _segment_sum(m_edge, indptr)) / denom[:, None]
    cache = None
    if want_cache:
        cache = ((x, p, m_self, m_edge, gate_self, gate_edge, src, proj, activation), indptr, denom)
    return y, cache


def mean_layer_backward(cache, dy):
    msg_cache, indptr, denom = cache
    dm_self = dy / denom[:, None]
    dm_edge = dm_self[_dst_index(indptr)]
    dx, dproj, db, dgate_edge = _messages_backward(msg_cache, dm_self, dm_edge)
    return dx, {"W": dproj, "b": db}, dgate_edge


# ---------------------------------------------------------------------------
# attention layer


def attention_layer_forward(x, layer, gate_self, gate_edge, indptr, src, activation, heads, want_cache=False):
    p, m_self, m_edge = _messages_forward(x, layer["Wm"], layer["bm"], gate_self, gate_edge, src, activation)
    n, r = m_self.shape
    dh = r // heads
    scale = 1.0 / np.sqrt(dh)
    dst = _dst_index(indptr)

    q = x @ layer["Wq"].T + layer["bq"]
    k_self = m_self @ layer["Wk"].T + layer["bk"]
    k_edge = m_edge @ layer["Wk"].T + layer["bk"]
    v_self = m_self @ layer["Wv"].T + layer["bv"]
    v_edge = m_edge @ layer["Wv"].T + layer["bv"]

    def heads_view(a):
        return a.reshape(a.shape[0], heads, dh)

    qh = heads_view(q)
    logit_self = np.einsum("nhd,nhd->nh", qh, heads_view(k_self)) * scale
    logit_edge = np.einsum("ehd,ehd->eh", qh[dst], heads_view(k_edge)) * scale

    # segment softmax over {self} ∪ in-edges per node, per head
    seg_max = logit_self.copy()
    if logit_edge.shape[0]:
        edge_max = np.full((n, heads), -np.inf)
        np.maximum.at(edge_max, dst, logit_edge)
        seg_max = np.maximum(seg_max, edge_max)
    exp_self = np.exp(logit_self - seg_max)
    exp_edge = np.exp(logit_edge - seg_max[dst])
    z = exp_self + _segment_sum(exp_edge, indptr)
    w_self = exp_self / z
    w_edge = exp_edge / z[dst]

    o = w_self[:, :, None] * heads_view(v_self)
    if w_edge.shape[0]:
        contrib = w_edge[:, :, None] * heads_view(v_edge)
        o = o + _segment_sum(contrib.reshape(-1, r), indptr).reshape(n, heads, dh)
    o = o.reshape(n, r)
    y = o @ layer["Wo"].T + layer["bo"]
    cache = None
    if want_cache:
        cache = {
            "msg": (x, p, m_self, m_edge, gate_self, gate_edge, src, layer["Wm"], activation),
            "indptr": indptr,
            "dst": dst,
            "x": x,
            "m_self": m_self,
            "m_edge": m_edge,
            "q": q,
            "k_self": k_self,
            "k_edge": k_edge,
            "v_self": v_self,
            "v_edge": v_edge,
            "w_self": w_self,
            "w_edge": w_edge,
            "o": o,
            "heads": heads,
            "scale": scale,
            "layer": layer,
        }
    return y, cache


def attention_layer_backward(cache, dy):
    layer = cache["layer"]
    heads = cache["heads"]
    scale = cache["scale"]
    indptr, dst = cache["indptr"], cache["dst"]
    x = cache["x"]
    n, r = cache["m_self"].shape
    dh = r // heads

    def hv(a):
        return a.reshape(a.shape[0], heads, dh)

    dbo = dy.sum(axis=0)
    dWo = dy.T @ cache["o"]
    do = hv(dy @ layer["Wo"])

    w_self, w_edge = cache["w_self"], cache["w_edge"]
    v_self_h, v_edge_h = hv(cache["v_self"]), hv(cache["v_edge"])

    dw_self = np.einsum("nhd,nhd->nh", do, v_self_h)
    dv_self = w_self[:, :, None] * do
    dw_edge = np.einsum("ehd,ehd->eh", do[dst], v_edge_h)
    dv_edge = w_edge[:, :, None] * do[dst]

    # softmax backward: dlogit = w * (dw - sum_j w_j dw_j) per segment
    weighted = w_self * dw_self + _segment_sum(w_edge * dw_edge, indptr)
    dlogit_self = w_self * (dw_self - weighted)
    dlogit_edge = w_edge * (dw_edge - weighted[dst])

    qh = hv(cache["q"])
    k_self_h, k_edge_h = hv(cache["k_self"]), hv(cache["k_edge"])
    dq = dlogit_self[:, :, None] * k_self_h * scale
    if dlogit_edge.shape[0]:
        add = (dlogit_edge[:, :, None] * k_edge_h * scale).reshape(-1, r)
        dq = dq + hv(_segment_sum(add, indptr))
    dk_self = dlogit_self[:, :, None] * qh * scale
    dk_edge = dlogit_edge[:, :, None] * qh[dst] * scale

    dq = dq.reshape(n, r)
    dk_self = dk_self.reshape(n, r)
    dk_edge = dk_edge.reshape(-1, r)
    dv_self = dv_self.reshape(n, r)
    dv_edge = dv_edge.reshape(-1, r)

    m_self, m_edge = cache["m_self"], cache["m_edge"]
    dWq = dq.T @ x
    dbq = dq.sum(axis=0)
    dWk = dk_self.T @ m_self + dk_edge.T @ m_edge
    dbk = dk_self.sum(axis=0) + dk_edge.sum(axis=0)
    dWv = dv_self.T @ m_self + dv_edge.T @ m_edge
    dbv = dv_self.sum(axis=0) + dv_edge.sum(axis=0)

    dm_self = dk_self @ layer["Wk"] + dv_self @ layer["Wv"]
    dm_edge = dk_edge @ layer["Wk"] + dv_edge @ layer["Wv"]
    dx, dWm, dbm, dgate_edge = _messages_backward(cache["msg"], dm_self, dm_edge)
    dx = dx + dq @ layer["Wq"]
    grads = {
        "Wm": dWm,
        "bm": dbm,
        "Wq": dWq,
        "bq": dbq,
        "Wk": dWk,
        "bk": dbk,
        "Wv": dWv,
        "bv": dbv,
        "Wo": dWo,
        "bo": dbo,
    }
    return dx, grads, dgate_edge


# ---------------------------------------------------------------------------
# full K-layer forward / backward


def forward_layers(
    params: EncoderParams,
    indptr: np.ndarray,
    src: np.ndarray,
    qgate: np.ndarray,
    egate: np.ndarray,
    x0: np.ndarray,
    want_cache: bool = False,
):
    """Run K rounds of gated message passing.

    qgate is the per-node lexical gate; egate the per-edge learned gate.
    The self gate is qgate alone (egate_ii = 1); edge gates are
    qgate[src] * egate. Without a cache the mean-linear variant runs on the
    selected kernel backend.
    """
    gate_self = np.ascontiguousarray(qgate, dtype=np.float64)
    gate_edge = np.ascontiguousarray(qgate[src] * egate, dtype=np.float64)
    x = np.ascontiguousarray(x0, dtype=np.float64)
    caches = []
    act_code = kernels.ACT_TANH if params.activation == "tanh" else kernels.ACT_NONE
    for k in range(params.n_layers):
        layer = params.layer(k)
        if params.variant == VARIANT_MEAN:
            if want_cache:
                x, cache = mean_layer_forward(x, layer, gate_self, gate_edge, indptr, src, params.activation, True)
                caches.append(cache)
            else:
                x = kernels.gated_mean_layer(indptr, src, gate_self, gate_edge, x, layer["W"], layer["b"], act_code)
        else:
            x, cache = attention_layer_forward(
                x, layer, gate_self, gate_edge, indptr, src, params.activation, params.heads, want_cache
            )
            if want_cache:
                caches.append(cache)
        if not np.all(np.isfinite(x)):
            bad = int(np.argwhere(~np.isfinite(x))[0][0])
            raise FloatingPointError(f"non-finite state at layer {k}, node {bad}")
    return x, caches


def backward_layers(params: EncoderParams, caches, qgate: np.ndarray, src: np.ndarray, dh_final: np.ndarray):
    """Reverse the K-layer forward; returns grads keyed like params.arrays.

    The returned dict covers every layer parameter plus the relevance-MLP
    contribution routed through the edge gates (caller combines it with the
    MLP cache via edge_gates_backward).
    """
    grads = {name: np.zeros_like(arr) for name, arr in params.arrays.items()}
    degate_total = None
    dx = dh_final
    for k in reversed(range(params.n_layers)):
        if params.variant == VARIANT_MEAN:
            dx, layer_grads, dgate_edge = mean_layer_backward(caches[k], dx)
        else:
            dx, layer_grads, dgate_edge = attention_layer_backward(caches[k], dx)
        for slot, g in layer_grads.items():
            grads[f"layer{k}.{slot}"] += g
        degate_total = dgate_edge if degate_total is None else degate_total + dgate_edge
    # gate_edge = qgate[src] * egate, so d egate = d gate_edge * qgate[src]
    degate = degate_total * qgate[src] if degate_total is not None else np.zeros(0)
    return grads, degate


# ---------------------------------------------------------------------------
# checkpoint persistence


def save_checkpoint(params: EncoderParams, path: str | Path) -> None:
    header = {
        "format_version": CHECKPOINT_VERSION,
        "variant": params.variant,
        "embed_dim": params.embed_dim,
        "hidden_dim": params.hidden_dim,
        "n_layers": params.n_layers,
        "heads": params.heads,
        "activation": params.activation,
        "pos_map": params.pos_map,
        "seed": params.seed,
        "arrays": [{"name": name, "shape": list(arr.shape)} for name, arr in params.arrays.items()],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for arr in params.arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path: str | Path) -> EncoderParams:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path} is not a parameter checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    (header_len,) = struct.unpack_from("<I", raw, offset)
    offset += 4
    header = json.loads(raw[offset : offset + header_len].decode("utf-8"))
    offset += header_len
    if header.get("format_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {header.get('format_version')!r}")
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        size = int(np.prod(shape)) if shape else 1
        arr = np.frombuffer(raw, dtype="<f8", count=size, offset=offset).reshape(shape).copy()
        offset += size * 8
        arrays[entry["name"]] = arr
    if offset != len(raw):
        raise CheckpointError(f"checkpoint {path} has trailing bytes; file is corrupt")
    return EncoderParams(
        variant=header["variant"],
        embed_dim=header["embed_dim"],
        hidden_dim=header["hidden_dim"],
        n_layers=header["n_layers"],
        heads=header["heads"],
        activation=header["activation"],
        pos_map=header["pos_map"],
        seed=header["seed"],
        arrays=arrays,
    )
