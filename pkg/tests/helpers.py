"""Shared fixtures: tiny corpora, random graphs, and assembled pipelines."""

import json

import numpy as np

from citeqa.corpus import Corpus, Document, chunk_corpus
from citeqa.dense import HashingEmbedder
from citeqa.graph import ContextualGraph, Edge, GraphProvenance, build_contextual_graph
from citeqa.indexes import build_indexes
from citeqa.sparse import fit
from citeqa.tokenization import normalize

WORDS = [
    "alpha", "beta", "gamma", "delta", "lattice", "protein", "graph", "neuron",
    "kernel", "plasma", "orbit", "genome", "tensor", "fusion", "lens", "quark",
    "spline", "vector", "matrix", "signal", "cortex", "enzyme", "proton", "glia",
]


def make_corpus(records) -> Corpus:
    """records: [{"id", "text", "references"?, "crossrefs"?, "title"?}, ...]"""
    docs = [
        Document(
            doc_id=r["id"],
            title=normalize(r.get("title", "")),
            text=normalize(r["text"]),
            references=tuple(r.get("references", ())),
            crossrefs=tuple(tuple(p) for p in r.get("crossrefs", ())),
        )
        for r in records
    ]
    return Corpus(documents=docs)


def write_corpus_jsonl(path, records) -> None:
    lines = [json.dumps(r, ensure_ascii=False) for r in records]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def random_text(rng, n_tokens, vocab=WORDS) -> str:
    return " ".join(vocab[rng.integers(len(vocab))] for _ in range(n_tokens))


def random_corpus_records(rng, n_docs, max_tokens=30, cite_prob=0.5, crossref_prob=0.2):
    records = []
    ids = [f"doc{v:03d}" for v in range(n_docs)]
    for i, doc_id in enumerate(ids):
        n_tokens = int(rng.integers(3, max_tokens + 1))
        references = [ids[j] for j in range(n_docs) if j != i and rng.random() < cite_prob]
        records.append({"id": doc_id, "text": random_text(rng, n_tokens), "references": references})
    return records


def build_assets(records, chunk_len=4, top_n=2, dim=16, seed=0, normalize_dense=False):
    """corpus -> chunks -> sparse index -> embeddings -> contextual graph."""
    corpus = make_corpus(records)
    chunks, _ = chunk_corpus(corpus, chunk_len)
    index = fit(chunks)
    provider = HashingEmbedder(dimension=dim, seed=seed, normalize=normalize_dense)
    indexes = build_indexes(chunks, index, provider)
    graph = build_contextual_graph(corpus, chunks, indexes, top_n, chunk_len=chunk_len)
    return corpus, chunks, index, provider, indexes, graph


def synthetic_graph(rng, n_nodes, edge_prob=0.3) -> ContextualGraph:
    """Random directed graph over synthetic node ids (for propagate tests)."""
    node_ids = [f"n{v:04d}#0000" for v in range(n_nodes)]
    edges = []
    for i in range(n_nodes):
        for j in range(n_nodes):
            if i != j and rng.random() < edge_prob:
                edges.append(Edge(src=node_ids[i], dst=node_ids[j], kind="inter-doc", weight=1.0))
    provenance = GraphProvenance(
        corpus_hash="synthetic", chunk_len=1, top_n=1, k1=1.2, b=0.75, dense_provider_id="synthetic"
    )
    return ContextualGraph(node_ids=node_ids, edges=edges, provenance=provenance)


def graph_edge_pairs(graph: ContextualGraph):
    """(src_pos, dst_pos) per edge, aligned with graph.edges order."""
    return [(graph.node_pos(e.src), graph.node_pos(e.dst)) for e in graph.edges]


def randomize_params(params, rng, scale=0.3):
    """Replace every parameter with small random values (generic-position weights)."""
    for name, arr in params.arrays.items():
        params.arrays[name] = scale * rng.standard_normal(arr.shape)
    return params


def identity_mean_params(embed_dim, pos_map="floor", seed=0):
    """Single identity mean-linear layer: the configuration whose ranking
    coincides with the graph-free fusion score on edgeless graphs."""
    from citeqa.encoder import init_params

    params = init_params(
        variant="mean-linear",
        embed_dim=embed_dim,
        hidden_dim=embed_dim,
        n_layers=1,
        heads=1,
        activation="none",
        pos_map=pos_map,
        seed=seed,
    )
    params.arrays["layer0.W"] = np.eye(embed_dim)
    params.arrays["layer0.b"] = np.zeros(embed_dim)
    return params
