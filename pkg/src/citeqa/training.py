"""Cross-entropy training of the graph encoder and relevance MLP.

Each labeled query contributes a softmax over {gold chunk} ∪ {M uniformly
sampled negatives}. Candidate scores are computed on the candidate's induced
1-hop subgraph (its generation-time context), not the whole graph, which
bounds the cost of a step and keeps train-time scoring aligned with the
context actually handed to the generator.

Gradients are analytic reverse-mode through the full stack: score -> K
gated layers -> relevance MLP. The sparse gates and the input embeddings
are frozen signals. A finite-difference oracle in the test suite checks
every parameter.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import encoder as enc
from .dense import EmbeddingProvider
from .encoder import EncoderParams
from .errors import TrainingError
from .graph import ContextualGraph
from .indexes import CorpusIndexes
from .retrieval import Retriever, build_query_context

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LabeledQuery:
    query_text: str
    gold_chunk_id: str


@dataclass(frozen=True)
class TrainExample:
    query_text: str
    gold_chunk_id: str
    negative_chunk_ids: tuple[str, ...]

    def candidates(self) -> list[str]:
        return [self.gold_chunk_id, *self.negative_chunk_ids]


@dataclass
class TrainConfig:
    epochs: int = 30
    lr: float = 1e-3
    negatives: int = 15
    seed: int = 0
    val_fraction: float = 0.2
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8


@dataclass
class LocalSubgraph:
    """A candidate's induced 1-hop context in local array form."""

    center_local: int
    global_pos: np.ndarray  # local node -> global node position
    indptr: np.ndarray
    src: np.ndarray  # local source positions
    edge_global: np.ndarray  # local edge -> global edge index


def local_subgraph(graph: ContextualGraph, center: str) -> LocalSubgraph:
    pos = graph.node_pos(center)
    lo, hi = graph.in_indptr[pos], graph.in_indptr[pos + 1]
    members = sorted({pos, *graph.in_src[lo:hi].tolist()})
    local_of = {g: l for l, g in enumerate(members)}
    indptr = [0]
    src: list[int] = []
    edge_global: list[int] = []
    for g in members:
        for e in range(graph.in_indptr[g], graph.in_indptr[g + 1]):
            s = int(graph.in_src[e])
            if s in local_of:
                src.append(local_of[s])
                edge_global.append(e)
        indptr.append(len(src))
    return LocalSubgraph(
        center_local=local_of[pos],
        global_pos=np.array(members, dtype=np.int64),
        indptr=np.array(indptr, dtype=np.int64),
        src=np.array(src, dtype=np.int64),
        edge_global=np.array(edge_global, dtype=np.int64),
    )


def _validate_example(graph: ContextualGraph, example: TrainExample) -> None:
    if example.gold_chunk_id in example.negative_chunk_ids:
        raise TrainingError(f"gold chunk {example.gold_chunk_id!r} appears among the negatives")
    if len(example.negative_chunk_ids) < 1:
        raise TrainingError("need at least one negative candidate")
    for cid in example.candidates():
        graph.node_pos(cid)  # raises on unknown ids


def _candidate_forward(params, graph, indexes, qgate, q_dense, cid, want_cache):
    sub = local_subgraph(graph, cid)
    h0 = indexes.dense[sub.global_pos]
    local_qgate = qgate[sub.global_pos]
    if sub.src.size:
        dst_pos = sub.global_pos[np.repeat(np.arange(sub.indptr.size - 1), np.diff(sub.indptr))]
        src_pos = sub.global_pos[sub.src]
        diffs = indexes.dense[dst_pos] - indexes.dense[src_pos]
    else:
        diffs = np.zeros((0, indexes.dense.shape[1]))
    egate, mlp_cache = enc.edge_gates_forward(params, diffs, want_cache=want_cache)
    h, layer_caches = enc.forward_layers(
        params, sub.indptr, sub.src, local_qgate, egate, h0, want_cache=want_cache
    )
    score = float(h[sub.center_local] @ q_dense)
    return score, (sub, local_qgate, mlp_cache, layer_caches, h.shape)


def softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max()
    e = np.exp(z)
    return e / e.sum()


def softmax_cross_entropy(scores: np.ndarray, gold_index: int = 0) -> tuple[float, np.ndarray]:
    """Loss and its gradient w.r.t. the scores (softmax minus one-hot)."""
    probs = softmax(scores)
    dscores = probs.copy()
    dscores[gold_index] -= 1.0
    return -float(np.log(probs[gold_index])), dscores


def loss_and_grad(
    params: EncoderParams,
    graph: ContextualGraph,
    indexes: CorpusIndexes,
    provider: EmbeddingProvider,
    example: TrainExample,
    want_grad: bool = True,
):
    """Cross-entropy of the gold candidate, and gradients for every parameter."""
    _validate_example(graph, example)
    ctx = build_query_context(example.query_text, indexes, provider, params.pos_map)
    candidates = example.candidates()
    scores = np.zeros(len(candidates))
    states = []
    for i, cid in enumerate(candidates):
        scores[i], state = _candidate_forward(
            params, graph, indexes, ctx.qgate, ctx.q_dense, cid, want_cache=want_grad
        )
        states.append(state)
    loss, dscores = softmax_cross_entropy(scores, gold_index=0)
    if not want_grad:
        return loss, None

    grads = {name: np.zeros_like(arr) for name, arr in params.arrays.items()}
    for ds, (sub, local_qgate, mlp_cache, layer_caches, h_shape) in zip(dscores, states):
        dh = np.zeros(h_shape)
        dh[sub.center_local] = ds * ctx.q_dense
        layer_grads, degate = enc.backward_layers(params, layer_caches, local_qgate, sub.src, dh)
        for name, g in layer_grads.items():
            grads[name] += g
        if sub.src.size:
            for name, g in enc.edge_gates_backward(params, mlp_cache, degate).items():
                grads[name] += g
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
    return loss, grads


def loss(params, graph, indexes, provider, example) -> float:
    value, _ = loss_and_grad(params, graph, indexes, provider, example, want_grad=False)
    return value


# ---------------------------------------------------------------------------
# AdamW


@dataclass
class OptimizerState:
    lr: float
    beta1: float
    beta2: float
    eps: float
    weight_decay: float
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_init(params: EncoderParams, config: TrainConfig) -> OptimizerState:
    return OptimizerState(
        lr=config.lr,
        beta1=config.betas[0],
        beta2=config.betas[1],
        eps=config.eps,
        weight_decay=config.weight_decay,
        m={name: np.zeros_like(arr) for name, arr in params.arrays.items()},
        v={name: np.zeros_like(arr) for name, arr in params.arrays.items()},
    )


def step(params: EncoderParams, state: OptimizerState, grads: dict[str, np.ndarray]):
    """One bias-corrected adaptive-moment update with decoupled weight decay."""
    new_params = params.copy()
    t = state.step_count + 1
    for name, arr in new_params.arrays.items():
        g = grads[name]
        state.m[name] = state.beta1 * state.m[name] + (1.0 - state.beta1) * g
        state.v[name] = state.beta2 * state.v[name] + (1.0 - state.beta2) * g * g
        m_hat = state.m[name] / (1.0 - state.beta1**t)
        v_hat = state.v[name] / (1.0 - state.beta2**t)
        arr -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        arr -= state.lr * state.weight_decay * params.arrays[name]
    state.step_count = t
    return new_params, state


# ---------------------------------------------------------------------------
# training loop


@dataclass
class TrainResult:
    params: EncoderParams  # best by validation Hit@1
    final_params: EncoderParams
    history: list[dict]  # rows: {"epoch", "mean_loss", "val_hit1"}


def sample_negatives(
    rng: np.random.Generator, node_ids: list[str], gold: str, count: int
) -> tuple[str, ...]:
    pool = [cid for cid in node_ids if cid != gold]
    if not pool:
        raise TrainingError("graph has no negative candidates to sample")
    take = min(count, len(pool))
    picks = rng.choice(len(pool), size=take, replace=False)
    return tuple(pool[i] for i in picks)


def train(
    params: EncoderParams,
    graph: ContextualGraph,
    indexes: CorpusIndexes,
    provider: EmbeddingProvider,
    dataset: list[LabeledQuery],
    config: TrainConfig,
) -> TrainResult:
    """Epochs of sampled-softmax cross-entropy; deterministic under the seed.

    Negatives are resampled per epoch. Validation Hit@1 uses full-graph
    retrieval; the best checkpoint by validation is kept.
    """
    if not dataset:
        raise TrainingError("no labeled examples to train on")
    split_rng = np.random.default_rng([config.seed, 0xD5])
    order = split_rng.permutation(len(dataset))
    n_val = int(round(config.val_fraction * len(dataset)))
    val_set = [dataset[i] for i in order[:n_val]]
    train_set = [dataset[i] for i in order[n_val:]]
    if not train_set:
        train_set = list(dataset)
    if not val_set:
        val_set = list(train_set)

    current = params.copy()
    opt = adamw_init(current, config)
    best = current.copy()
    best_hit = -1.0
    history: list[dict] = []
    for epoch in range(config.epochs):
        rng = np.random.default_rng([config.seed, 1, epoch])
        losses = []
        for idx in rng.permutation(len(train_set)):
            item = train_set[idx]
            example = TrainExample(
                query_text=item.query_text,
                gold_chunk_id=item.gold_chunk_id,
                negative_chunk_ids=sample_negatives(rng, graph.node_ids, item.gold_chunk_id, config.negatives),
            )
            value, grads = loss_and_grad(current, graph, indexes, provider, example)
            losses.append(value)
            current, opt = step(current, opt, grads)
        retriever = Retriever(graph, indexes, current, provider)
        hits = [
            1.0 if retriever.ranked_ids(item.query_text)[0] == item.gold_chunk_id else 0.0
            for item in val_set
        ]
        row = {
            "epoch": epoch,
            "mean_loss": float(np.mean(losses)),
            "val_hit1": float(np.mean(hits)),
        }
        history.append(row)
        logger.info("epoch %d: mean_loss=%.6f val_hit1=%.3f", epoch, row["mean_loss"], row["val_hit1"])
        if row["val_hit1"] > best_hit:
            best_hit = row["val_hit1"]
            best = current.copy()
    return TrainResult(params=best, final_params=current, history=history)


def save_history_csv(history: list[dict], path: str | Path) -> None:
    lines = ["epoch,mean_loss,val_hit1"]
    lines += [f"{row['epoch']},{row['mean_loss']!r},{row['val_hit1']!r}" for row in history]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
