"""Per-chunk representation bundle shared by graph building, retrieval, and training.

All arrays are aligned with the canonical node order: chunk ids sorted
lexicographically (ordinals are zero-padded, so intra-document order is
positional).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import sparse as sparse_mod
from .corpus import Chunk
from .dense import EmbeddingProvider, embed_matrix
from .sparse import ChunkSparseMatrix, SparseIndex


@dataclass
class CorpusIndexes:
    """Sparse and dense chunk representations in canonical node order."""

    sparse_index: SparseIndex
    chunk_matrix: ChunkSparseMatrix  # row i = sparse vector of node_ids[i]
    dense: np.ndarray  # (n, d) dense embeddings
    node_ids: list[str]
    chunk_texts: dict[str, str]
    dense_provider_id: str

    def node_pos(self, chunk_id: str) -> int:
        return self._pos[chunk_id]

    def __post_init__(self):
        self._pos = {cid: i for i, cid in enumerate(self.node_ids)}

    def sparse_row(self, chunk_id: str) -> sparse_mod.SparseVector:
        return self.chunk_matrix.row(self._pos[chunk_id])

    def dense_row(self, chunk_id: str) -> np.ndarray:
        return self.dense[self._pos[chunk_id]]


def build_indexes(
    chunks: list[Chunk],
    sparse_index: SparseIndex,
    provider: EmbeddingProvider,
) -> CorpusIndexes:
    ordered = sorted(chunks, key=lambda c: c.chunk_id)
    node_ids = [c.chunk_id for c in ordered]
    chunk_matrix = sparse_mod.encode_chunks_csr(sparse_index, ordered)
    dense = embed_matrix(provider, [c.text for c in ordered])
    return CorpusIndexes(
        sparse_index=sparse_index,
        chunk_matrix=chunk_matrix,
        dense=dense,
        node_ids=node_ids,
        chunk_texts={c.chunk_id: c.text for c in ordered},
        dense_provider_id=provider.provider_id,
    )
