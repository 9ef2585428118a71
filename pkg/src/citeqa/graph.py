"""Chunk-level citation context graph: build, cache, and query.

Nodes are chunk ids. Edges are directed and typed:

    intra-adjacency  earlier chunk -> next chunk of the same document
    intra-crossref   referenced chunk -> referring chunk, same document
    inter-doc        cited document's chunk -> citing document's chunk

Inter-document edges carry the chunk-chunk relevance (sparse + dense dot
products) as weight and are capped at top_n per (citing chunk, cited
document) pair. Messages later flow along edge direction, so a chunk's
in-neighbors are its context sources.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Chunk, Corpus, make_chunk_id
from .dense import f_dense
from .errors import CacheFormatError, GraphError, ProvenanceMismatchError
from .indexes import CorpusIndexes
from .sparse import f_sparse

logger = logging.getLogger(__name__)

GRAPH_CACHE_VERSION = 1

KIND_ADJACENCY = "intra-adjacency"
KIND_CROSSREF = "intra-crossref"
KIND_INTER = "inter-doc"
EDGE_KINDS = (KIND_ADJACENCY, KIND_CROSSREF, KIND_INTER)


@dataclass(frozen=True, order=True)
class Edge:
    src: str
    dst: str
    kind: str
    weight: float


@dataclass(frozen=True)
class GraphProvenance:
    corpus_hash: str
    chunk_len: int
    top_n: int
    k1: float
    b: float
    dense_provider_id: str

    def to_dict(self) -> dict:
        return {
            "corpus_hash": self.corpus_hash,
            "chunk_len": self.chunk_len,
            "top_n": self.top_n,
            "sparse_params": {"k1": self.k1, "b": self.b},
            "dense_provider_id": self.dense_provider_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GraphProvenance":
        return cls(
            corpus_hash=d["corpus_hash"],
            chunk_len=d["chunk_len"],
            top_n=d["top_n"],
            k1=d["sparse_params"]["k1"],
            b=d["sparse_params"]["b"],
            dense_provider_id=d["dense_provider_id"],
        )


@dataclass
class Subgraph:
    """A center chunk with its in-neighbors and all edges among them."""

    center: str
    node_ids: list[str]
    edges: list[Edge]


@dataclass
class ContextualGraph:
    node_ids: list[str]  # sorted chunk ids
    edges: list[Edge]  # sorted by (dst, src, kind); no duplicates, no self-edges
    provenance: GraphProvenance
    # CSR over in-edges, grouped by destination in node order (derived)
    in_indptr: np.ndarray = field(init=False, repr=False)
    in_src: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self._pos = {cid: i for i, cid in enumerate(self.node_ids)}
        seen: set[tuple[str, str, str]] = set()
        for e in self.edges:
            if e.src == e.dst:
                raise GraphError(f"self-edge on {e.src}")
            if e.src not in self._pos or e.dst not in self._pos:
                raise GraphError(f"edge {e.src}->{e.dst} references unknown node")
            key = (e.src, e.dst, e.kind)
            if key in seen:
                raise GraphError(f"duplicate edge {key}")
            seen.add(key)
        order = sorted(range(len(self.edges)), key=lambda i: (self.edges[i].dst, self.edges[i].src, self.edges[i].kind))
        self.edges = [self.edges[i] for i in order]
        n = len(self.node_ids)
        self.in_indptr = np.zeros(n + 1, dtype=np.int64)
        self.in_src = np.zeros(len(self.edges), dtype=np.int64)
        for i, e in enumerate(self.edges):
            self.in_indptr[self._pos[e.dst] + 1] += 1
            self.in_src[i] = self._pos[e.src]
        np.cumsum(self.in_indptr, out=self.in_indptr)

    def __eq__(self, other) -> bool:
        if not isinstance(other, ContextualGraph):
            return NotImplemented
        return (
            self.node_ids == other.node_ids
            and self.edges == other.edges
            and self.provenance == other.provenance
        )

    @property
    def n_nodes(self) -> int:
        return len(self.node_ids)

    def node_pos(self, chunk_id: str) -> int:
        try:
            return self._pos[chunk_id]
        except KeyError:
            raise GraphError(f"unknown chunk id {chunk_id!r}") from None

    def in_neighbors(self, chunk_id: str) -> list[str]:
        i = self.node_pos(chunk_id)
        return [self.node_ids[s] for s in self.in_src[self.in_indptr[i] : self.in_indptr[i + 1]]]


def build_intra_edges(doc_chunks: list[Chunk], crossrefs: list[tuple[str, str]] | None = None) -> list[Edge]:
    """Adjacency edges between consecutive chunks plus explicit cross-references.

    crossrefs pairs are (referring_chunk_id, referenced_chunk_id); each yields
    an edge referenced -> referring. Pairs that leave the document are
    rejected: those belong to inter-document linking.
    """
    ordered = sorted(doc_chunks, key=lambda c: c.ordinal)
    ids = {c.chunk_id for c in ordered}
    edges = []
    for prev, nxt in zip(ordered, ordered[1:]):
        edges.append(Edge(src=prev.chunk_id, dst=nxt.chunk_id, kind=KIND_ADJACENCY, weight=1.0))
    if crossrefs:
        seen: set[tuple[str, str]] = set()
        for referring, referenced in crossrefs:
            if referring not in ids or referenced not in ids:
                raise GraphError(
                    f"cross-reference ({referring}, {referenced}) leaves the document; "
                    "cross-document links are built from citations"
                )
            if referring == referenced:
                raise GraphError(f"cross-reference of {referring} to itself")
            if (referring, referenced) in seen:
                continue
            seen.add((referring, referenced))
            edges.append(Edge(src=referenced, dst=referring, kind=KIND_CROSSREF, weight=1.0))
    return edges


def chunk_relevance(indexes: CorpusIndexes, chunk_a: str, chunk_b: str) -> float:
    """Sparse plus dense dot product between two chunks' representations."""
    return f_sparse(indexes.sparse_row(chunk_a), indexes.sparse_row(chunk_b)) + f_dense(
        indexes.dense_row(chunk_a), indexes.dense_row(chunk_b)
    )


def build_inter_edges(
    citing_chunks: list[Chunk],
    cited_chunks: list[Chunk],
    indexes: CorpusIndexes,
    top_n: int,
) -> list[Edge]:
    """Link each citing chunk to the top_n most relevant chunks of the cited doc."""
    if top_n < 1:
        raise GraphError(f"top_n must be >= 1, got {top_n}")
    edges = []
    for citing in citing_chunks:
        scored = [
            (chunk_relevance(indexes, citing.chunk_id, cited.chunk_id), cited.chunk_id)
            for cited in cited_chunks
        ]
        scored.sort(key=lambda rc: (-rc[0], rc[1]))
        for relevance, cited_id in scored[:top_n]:
            edges.append(Edge(src=cited_id, dst=citing.chunk_id, kind=KIND_INTER, weight=relevance))
    return edges


def build_contextual_graph(
    corpus: Corpus,
    chunks: list[Chunk],
    indexes: CorpusIndexes,
    top_n: int,
    chunk_len: int = 0,
) -> ContextualGraph:
    """Union of all intra- and inter-document edges over the chunk nodes.

    Deterministic for fixed inputs: nodes are sorted ids and edges are sorted
    by (dst, src, kind). chunk_len is recorded in provenance for stale-cache
    detection.
    """
    by_doc: dict[str, list[Chunk]] = {}
    for chunk in chunks:
        by_doc.setdefault(chunk.doc_id, []).append(chunk)
    for doc_chunks in by_doc.values():
        doc_chunks.sort(key=lambda c: c.ordinal)

    docs = corpus.by_id()
    edges: list[Edge] = []
    for doc_id in sorted(by_doc):
        doc = docs.get(doc_id)
        crossrefs = None
        if doc is not None and doc.crossrefs:
            count = len(by_doc[doc_id])
            for a, b in doc.crossrefs:
                if not (0 <= a < count and 0 <= b < count):
                    raise GraphError(f"document {doc_id!r}: crossref ordinal pair ({a}, {b}) out of range")
            crossrefs = [
                (make_chunk_id(doc_id, a), make_chunk_id(doc_id, b)) for a, b in doc.crossrefs
            ]
        edges.extend(build_intra_edges(by_doc[doc_id], crossrefs))

    for doc_id in sorted(by_doc):
        doc = docs.get(doc_id)
        if doc is None:
            continue
        for cited_id in sorted(set(doc.references)):
            if cited_id == doc_id or cited_id not in by_doc:
                continue  # dangling or self references were warned at load time
            edges.extend(build_inter_edges(by_doc[doc_id], by_doc[cited_id], indexes, top_n))

    provenance = GraphProvenance(
        corpus_hash=corpus.content_hash(),
        chunk_len=chunk_len,
        top_n=top_n,
        k1=indexes.sparse_index.k1,
        b=indexes.sparse_index.b,
        dense_provider_id=indexes.dense_provider_id,
    )
    node_ids = sorted(c.chunk_id for c in chunks)
    return ContextualGraph(node_ids=node_ids, edges=edges, provenance=provenance)


def induced_subgraph(graph: ContextualGraph, center: str) -> Subgraph:
    """The center, its in-neighbors, and every edge among those nodes."""
    graph.node_pos(center)  # validates the id
    nodes = sorted({center, *graph.in_neighbors(center)})
    member = set(nodes)
    edges = [e for e in graph.edges if e.src in member and e.dst in member]
    return Subgraph(center=center, node_ids=nodes, edges=edges)


def cache_save(graph: ContextualGraph, path: str | Path) -> None:
    payload = {
        "format_version": GRAPH_CACHE_VERSION,
        "provenance": graph.provenance.to_dict(),
        "nodes": graph.node_ids,
        "edges": [[e.src, e.dst, e.kind, e.weight] for e in graph.edges],
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def cache_load(path: str | Path, expected_provenance: GraphProvenance | None = None) -> ContextualGraph:
    """Load a cached graph, refusing stale caches when expectations are given."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    version = payload.get("format_version")
    if version != GRAPH_CACHE_VERSION:
        raise CacheFormatError(f"graph cache {path} has unsupported version {version!r}")
    provenance = GraphProvenance.from_dict(payload["provenance"])
    if expected_provenance is not None and provenance != expected_provenance:
        raise ProvenanceMismatchError(
            f"graph cache {path} was built from different inputs or parameters; rebuild it "
            f"(cached {provenance}, expected {expected_provenance})"
        )
    edges = [Edge(src=s, dst=d, kind=k, weight=w) for s, d, k, w in payload["edges"]]
    return ContextualGraph(node_ids=list(payload["nodes"]), edges=edges, provenance=provenance)


def export_edges_text(graph: ContextualGraph, path: str | Path) -> None:
    """Plain-text edge dump for debugging: one `src dst kind weight` per line."""
    lines = [f"{e.src} {e.dst} {e.kind} {e.weight!r}" for e in graph.edges]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
