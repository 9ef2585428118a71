"""Query-time retrieval: gated message passing over the chunk graph.

Per query, every chunk gets a lexical gate (pos-mapped BM25 relevance to
the query); every edge carries a learned gate from the relevance MLP. K
rounds of gated message passing mix each chunk's embedding with its
in-neighbors', and chunks are ranked by the dot product of the query
embedding with the mixed state. The top-ranked chunks are returned together
with their induced context subgraphs.

`fusion_scores` is the graph-free multiplicative combination of the two
signals; on a graph with no edges and an identity single-layer encoder it
produces exactly the same ranking as `retrieve` (tested), which is the
bridge to classical post-retrieval hybrid scoring.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import encoder as enc
from . import sparse as sparse_mod
from .dense import EmbeddingProvider
from .encoder import EncoderParams, pos_map_apply
from .errors import DimensionMismatchError, EmptyGraphError
from .graph import ContextualGraph, Edge, induced_subgraph
from .indexes import CorpusIndexes


@dataclass
class QueryContext:
    """Per-query signals: sparse/dense encodings and the per-node gate."""

    query_text: str
    q_sparse: sparse_mod.SparseVector
    q_dense: np.ndarray
    qgate: np.ndarray  # aligned with graph/index node order, all >= 0

    def gate_by_id(self, node_ids: list[str]) -> dict[str, float]:
        return {cid: float(g) for cid, g in zip(node_ids, self.qgate)}


@dataclass
class ContextSubgraph:
    """A retrieved chunk with its direct context and relevance score."""

    center: str
    node_ids: list[str]
    edges: list[Edge]
    score: float


def compute_query_gates(query_text: str, indexes: CorpusIndexes, pos_map: str) -> np.ndarray:
    """Lexical relevance of the query to every chunk, mapped non-negative."""
    q_sparse = sparse_mod.encode_query_sparse(indexes.sparse_index, query_text)
    raw = indexes.chunk_matrix.scores(q_sparse)
    return pos_map_apply(pos_map, raw)


def build_query_context(
    query_text: str,
    indexes: CorpusIndexes,
    provider: EmbeddingProvider,
    pos_map: str,
) -> QueryContext:
    return QueryContext(
        query_text=query_text,
        q_sparse=sparse_mod.encode_query_sparse(indexes.sparse_index, query_text),
        q_dense=provider.embed(query_text),
        qgate=compute_query_gates(query_text, indexes, pos_map),
    )


def edge_diffs(graph: ContextualGraph, indexes: CorpusIndexes) -> np.ndarray:
    """(m, d) embedding differences h_dst - h_src, one row per edge."""
    if not graph.edges:
        return np.zeros((0, indexes.dense.shape[1]))
    dst = np.array([indexes.node_pos(e.dst) for e in graph.edges])
    src = np.array([indexes.node_pos(e.src) for e in graph.edges])
    return indexes.dense[dst] - indexes.dense[src]


def compute_edge_gates(params: EncoderParams, graph: ContextualGraph, indexes: CorpusIndexes) -> np.ndarray:
    """Learned edge gates, aligned with graph.edges. Query-independent."""
    gate, _ = enc.edge_gates_forward(params, edge_diffs(graph, indexes))
    return gate


def propagate(
    params: EncoderParams,
    graph: ContextualGraph,
    qgate: np.ndarray,
    egate: np.ndarray,
    h0: np.ndarray,
) -> np.ndarray:
    """Final per-node states after K rounds of gated message passing."""
    if params.n_layers < 1:
        raise ValueError("need at least one message-passing round")
    h, _ = enc.forward_layers(params, graph.in_indptr, graph.in_src, qgate, egate, h0)
    return h


def score_chunks(q_dense: np.ndarray, h_final: np.ndarray) -> np.ndarray:
    """Dot product of the query embedding with every mixed chunk state."""
    if h_final.shape[1] != q_dense.shape[0]:
        raise DimensionMismatchError(
            f"encoder output dimension {h_final.shape[1]} does not match query embedding "
            f"dimension {q_dense.shape[0]}; the final layer must project back to the embedding size"
        )
    # einsum, not GEMV: BLAS reassociates by row position, so byte-identical
    # chunks could land on different last-ulp scores and break tie stability
    return np.einsum("nd,d->n", h_final, q_dense)


def rank_nodes(node_ids: list[str], scores: np.ndarray) -> list[int]:
    """Positions sorted by score descending, ties broken by chunk id."""
    return sorted(range(len(node_ids)), key=lambda i: (-scores[i], node_ids[i]))


def fusion_scores(qgate: np.ndarray, q_dense: np.ndarray, dense: np.ndarray) -> np.ndarray:
    """Graph-free multiplicative combination: gate * dot(query, chunk)."""
    return qgate * np.einsum("nd,d->n", dense, q_dense)


def retrieve(
    query_text: str,
    graph: ContextualGraph,
    indexes: CorpusIndexes,
    params: EncoderParams,
    top_k: int,
    provider: EmbeddingProvider,
    egate: np.ndarray | None = None,
) -> list[ContextSubgraph]:
    """Top-k chunks by graph-mixed relevance, each with its context subgraph.

    egate may be passed in when the caller already computed it for these
    params (it does not depend on the query).
    """
    if graph.n_nodes == 0:
        raise EmptyGraphError("cannot retrieve from an empty graph")
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    ctx = build_query_context(query_text, indexes, provider, params.pos_map)
    if egate is None:
        egate = compute_edge_gates(params, graph, indexes)
    h = propagate(params, graph, ctx.qgate, egate, indexes.dense)
    scores = score_chunks(ctx.q_dense, h)
    order = rank_nodes(graph.node_ids, scores)[:top_k]
    results = []
    for pos in order:
        sub = induced_subgraph(graph, graph.node_ids[pos])
        results.append(
            ContextSubgraph(
                center=sub.center,
                node_ids=sub.node_ids,
                edges=sub.edges,
                score=float(scores[pos]),
            )
        )
    return results


class Retriever:
    """Bundles graph, representations, and parameters; caches the edge gates."""

    def __init__(
        self,
        graph: ContextualGraph,
        indexes: CorpusIndexes,
        params: EncoderParams,
        provider: EmbeddingProvider,
    ):
        self.graph = graph
        self.indexes = indexes
        self.params = params
        self.provider = provider
        self._egate = compute_edge_gates(params, graph, indexes)

    def all_scores(self, query_text: str) -> np.ndarray:
        ctx = build_query_context(query_text, self.indexes, self.provider, self.params.pos_map)
        h = propagate(self.params, self.graph, ctx.qgate, self._egate, self.indexes.dense)
        return score_chunks(ctx.q_dense, h)

    def ranked_ids(self, query_text: str) -> list[str]:
        scores = self.all_scores(query_text)
        return [self.graph.node_ids[i] for i in rank_nodes(self.graph.node_ids, scores)]

    def retrieve(self, query_text: str, top_k: int) -> list[ContextSubgraph]:
        return retrieve(
            query_text, self.graph, self.indexes, self.params, top_k, self.provider, egate=self._egate
        )


def export_results_jsonl(path: str | Path, query_results: list[tuple[str, list[ContextSubgraph]]]) -> None:
    """One line per query: ranked centers with scores and neighbor ids."""
    lines = []
    for query_text, results in query_results:
        lines.append(
            json.dumps(
                {
                    "query": query_text,
                    "results": [
                        {
                            "chunk_id": r.center,
                            "score": r.score,
                            "neighbor_ids": [cid for cid in r.node_ids if cid != r.center],
                        }
                        for r in results
                    ],
                },
                ensure_ascii=False,
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
