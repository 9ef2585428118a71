"""Sparse lexical representations whose dot product is an Okapi BM25 score.

Chunks are encoded as term-impact vectors (saturated, length-normalized term
frequency) and queries as IDF vectors, so

    dot(encode_query(q), encode_chunk(c)) == BM25(q, c)

term for term. The ln(1 + .) IDF form keeps every weight non-negative,
which the retrieval gating downstream relies on.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Chunk
from .errors import CacheFormatError, CorpusError
from .tokenization import tokenize

INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class SparseVector:
    """Term ids (sorted, unique) with strictly positive weights."""

    term_ids: np.ndarray  # int64, sorted ascending
    weights: np.ndarray  # float64, > 0

    @classmethod
    def from_pairs(cls, pairs: dict[int, float]) -> "SparseVector":
        items = sorted((t, w) for t, w in pairs.items() if w != 0.0)
        ids = np.array([t for t, _ in items], dtype=np.int64)
        ws = np.array([w for _, w in items], dtype=np.float64)
        return cls(ids, ws)

    @property
    def nnz(self) -> int:
        return int(self.term_ids.size)

    def to_dict(self) -> dict[int, float]:
        return {int(t): float(w) for t, w in zip(self.term_ids, self.weights)}


def f_sparse(a: SparseVector, b: SparseVector) -> float:
    """Sparse dot product over the shared vocabulary."""
    if a.term_ids.size == 0 or b.term_ids.size == 0:
        return 0.0
    pos = np.searchsorted(a.term_ids, b.term_ids)
    inside = pos < a.term_ids.size
    match = inside.copy()
    match[inside] = a.term_ids[pos[inside]] == b.term_ids[inside]
    if not match.any():
        return 0.0
    return float(np.dot(a.weights[pos[match]], b.weights[match]))


@dataclass
class SparseIndex:
    """Vocabulary and collection statistics for BM25-style encoding."""

    vocabulary: dict[str, int]  # term -> term_id, ids dense in [0, len)
    doc_freq: np.ndarray  # per term_id, number of chunks containing the term
    chunk_count: int
    avg_chunk_len: float
    k1: float = 1.2
    b: float = 0.75
    _terms: list[str] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if not self._terms:
            self._terms = [""] * len(self.vocabulary)
            for term, tid in self.vocabulary.items():
                self._terms[tid] = term

    @property
    def vocab_size(self) -> int:
        return len(self.vocabulary)

    def idf(self, term_id: int) -> float:
        df = float(self.doc_freq[term_id])
        return math.log(1.0 + (self.chunk_count - df + 0.5) / (df + 0.5))


def fit(chunks: list[Chunk], *, k1: float = 1.2, b: float = 0.75) -> SparseIndex:
    """Build vocabulary and exact collection statistics from chunks."""
    if not chunks:
        raise CorpusError("cannot fit a sparse index on an empty chunk list")
    df: Counter[str] = Counter()
    total_len = 0
    for chunk in chunks:
        tokens = chunk.tokens
        total_len += len(tokens)
        df.update(set(tokens))
    terms = sorted(df)
    vocabulary = {t: i for i, t in enumerate(terms)}
    doc_freq = np.array([df[t] for t in terms], dtype=np.int64)
    return SparseIndex(
        vocabulary=vocabulary,
        doc_freq=doc_freq,
        chunk_count=len(chunks),
        avg_chunk_len=total_len / len(chunks),
        k1=k1,
        b=b,
    )


def encode_chunk_sparse(index: SparseIndex, chunk: Chunk) -> SparseVector:
    """Impact weights: tf*(k1+1) / (tf + k1*(1 - b + b*len/avg_len)) per term."""
    tokens = chunk.tokens
    tf = Counter(tokens)
    length = len(tokens)
    norm = index.k1 * (1.0 - index.b + index.b * length / index.avg_chunk_len)
    pairs = {}
    for term, count in tf.items():
        tid = index.vocabulary.get(term)
        if tid is None:
            continue
        pairs[tid] = count * (index.k1 + 1.0) / (count + norm)
    return SparseVector.from_pairs(pairs)


def encode_query_sparse(index: SparseIndex, query_text: str) -> SparseVector:
    """IDF weights over the distinct in-vocabulary query terms."""
    pairs = {}
    for term in set(tokenize(query_text)):
        tid = index.vocabulary.get(term)
        if tid is None:
            continue
        pairs[tid] = index.idf(tid)
    return SparseVector.from_pairs(pairs)


def encode_chunks_csr(index: SparseIndex, chunks: list[Chunk]) -> "ChunkSparseMatrix":
    """Encode all chunks into one CSR matrix aligned with the chunk order."""
    indptr = np.zeros(len(chunks) + 1, dtype=np.int64)
    ids_parts = []
    weight_parts = []
    for i, chunk in enumerate(chunks):
        vec = encode_chunk_sparse(index, chunk)
        ids_parts.append(vec.term_ids)
        weight_parts.append(vec.weights)
        indptr[i + 1] = indptr[i] + vec.nnz
    term_ids = np.concatenate(ids_parts) if ids_parts else np.zeros(0, dtype=np.int64)
    weights = np.concatenate(weight_parts) if weight_parts else np.zeros(0, dtype=np.float64)
    return ChunkSparseMatrix(indptr=indptr, term_ids=term_ids, weights=weights, vocab_size=index.vocab_size)


@dataclass
class ChunkSparseMatrix:
    """CSR layout of chunk impact vectors, for query-vs-all scoring."""

    indptr: np.ndarray
    term_ids: np.ndarray
    weights: np.ndarray
    vocab_size: int

    @property
    def n_rows(self) -> int:
        return int(self.indptr.size - 1)

    def row(self, i: int) -> SparseVector:
        lo, hi = self.indptr[i], self.indptr[i + 1]
        return SparseVector(self.term_ids[lo:hi], self.weights[lo:hi])

    def scores(self, query: SparseVector) -> np.ndarray:
        """Dot product of the query against every row (BM25 per chunk)."""
        from . import kernels

        qdense = np.zeros(self.vocab_size, dtype=np.float64)
        if query.term_ids.size:
            qdense[query.term_ids] = query.weights
        return kernels.sparse_matvec(self.indptr, self.term_ids, self.weights, qdense)


def save_index(index: SparseIndex, path: str | Path) -> None:
    """Lossless JSON persistence; float statistics survive via repr round-trip."""
    terms = index._terms
    payload = {
        "format_version": INDEX_FORMAT_VERSION,
        "k1": index.k1,
        "b": index.b,
        "chunk_count": index.chunk_count,
        "avg_chunk_len": index.avg_chunk_len,
        "vocabulary": terms,
        "doc_freq": [int(x) for x in index.doc_freq],
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def load_index(path: str | Path) -> SparseIndex:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format_version") != INDEX_FORMAT_VERSION:
        raise CacheFormatError(f"unsupported sparse index version {payload.get('format_version')!r}")
    terms = payload["vocabulary"]
    return SparseIndex(
        vocabulary={t: i for i, t in enumerate(terms)},
        doc_freq=np.array(payload["doc_freq"], dtype=np.int64),
        chunk_count=payload["chunk_count"],
        avg_chunk_len=payload["avg_chunk_len"],
        k1=payload["k1"],
        b=payload["b"],
        _terms=list(terms),
    )
