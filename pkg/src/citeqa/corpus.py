"""Corpus loading and fixed-length document chunking.

Corpus files are UTF-8 JSON Lines, one document per line:

    {"id": str, "title": str, "text": str, "references": [str]}

An optional "crossrefs" field ([[from_ordinal, to_ordinal], ...]) declares
explicit in-document chunk cross-references used at graph-build time.
Unknown fields are ignored.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorpusError, EmptyDocumentError
from .tokenization import normalize, tokenize, tokenize_with_spans

logger = logging.getLogger(__name__)

CHUNK_STORE_VERSION = 1


@dataclass(frozen=True)
class Document:
    doc_id: str
    title: str
    text: str  # NFC-normalized full text, casing preserved
    references: tuple[str, ...] = ()
    crossrefs: tuple[tuple[int, int], ...] = ()  # (from_ordinal, to_ordinal) chunk pairs

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)


@dataclass(frozen=True)
class Chunk:
    """A fixed-length token span of a document; the node unit of the graph."""

    doc_id: str
    ordinal: int
    text: str  # raw slice of the normalized document text
    char_span: tuple[int, int]
    token_count: int

    @property
    def chunk_id(self) -> str:
        return make_chunk_id(self.doc_id, self.ordinal)

    @property
    def tokens(self) -> list[str]:
        return tokenize(self.text)


@dataclass
class Corpus:
    documents: list[Document]
    warnings: list[str] = field(default_factory=list)

    def by_id(self) -> dict[str, Document]:
        return {d.doc_id: d for d in self.documents}

    def content_hash(self) -> str:
        """sha256 over the canonical serialization, independent of file formatting."""
        h = hashlib.sha256()
        for doc in sorted(self.documents, key=lambda d: d.doc_id):
            record = {
                "id": doc.doc_id,
                "title": doc.title,
                "text": doc.text,
                "references": list(doc.references),
                "crossrefs": [list(p) for p in doc.crossrefs],
            }
            h.update(json.dumps(record, sort_keys=True, ensure_ascii=False).encode("utf-8"))
            h.update(b"\n")
        return h.hexdigest()


def make_chunk_id(doc_id: str, ordinal: int) -> str:
    return f"{doc_id}#{ordinal:04d}"


def split_chunk_id(chunk_id: str) -> tuple[str, int]:
    doc_id, _, ordinal = chunk_id.rpartition("#")
    return doc_id, int(ordinal)


def load_corpus(path: str | Path) -> Corpus:
    """Load a JSON-Lines corpus.

    Dangling references are recorded as warnings, never dropped. Duplicate
    document ids and malformed records (reported with their line number)
    raise CorpusError.
    """
    path = Path(path)
    try:
        raw = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read corpus file {path}: {exc}") from exc

    documents: list[Document] = []
    warnings: list[str] = []
    seen: set[str] = set()
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: malformed JSON record: {exc}") from exc
        if not isinstance(record, dict):
            raise CorpusError(f"{path}:{lineno}: record is not a JSON object")
        try:
            doc_id = record["id"]
            text = record["text"]
        except KeyError as exc:
            raise CorpusError(f"{path}:{lineno}: missing required field {exc}") from exc
        if not isinstance(doc_id, str) or not doc_id:
            raise CorpusError(f"{path}:{lineno}: document id must be a non-empty string")
        if doc_id in seen:
            raise CorpusError(f"{path}:{lineno}: duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        references = record.get("references", [])
        if not isinstance(references, list) or not all(isinstance(r, str) for r in references):
            raise CorpusError(f"{path}:{lineno}: references must be a list of doc ids")
        crossrefs = record.get("crossrefs", [])
        try:
            crossref_pairs = tuple((int(a), int(b)) for a, b in crossrefs)
        except (TypeError, ValueError) as exc:
            raise CorpusError(f"{path}:{lineno}: crossrefs must be [from, to] ordinal pairs") from exc
        documents.append(
            Document(
                doc_id=doc_id,
                title=normalize(str(record.get("title", ""))),
                text=normalize(text),
                references=tuple(references),
                crossrefs=crossref_pairs,
            )
        )

    known = {d.doc_id for d in documents}
    for doc in documents:
        for ref in doc.references:
            if ref not in known:
                msg = f"document {doc.doc_id!r} references missing document {ref!r}"
                warnings.append(msg)
                logger.warning(msg)
    return Corpus(documents=documents, warnings=warnings)


def chunk_document(doc: Document, max_tokens: int) -> list[Chunk]:
    """Split a document into ceil(L / max_tokens) ordered chunks.

    Every chunk except possibly the last holds exactly max_tokens tokens;
    concatenating the chunks' token sequences reproduces the document's.
    """
    if max_tokens < 1:
        raise ValueError(f"max_tokens must be >= 1, got {max_tokens}")
    norm = normalize(doc.text)
    tokens, spans = tokenize_with_spans(norm)
    if not tokens:
        raise EmptyDocumentError(f"document {doc.doc_id!r} has no tokens")
    count = math.ceil(len(tokens) / max_tokens)
    chunks: list[Chunk] = []
    for ordinal in range(count):
        lo = ordinal * max_tokens
        hi = min(lo + max_tokens, len(tokens))
        start = spans[lo][0]
        end = spans[hi - 1][1]
        chunks.append(
            Chunk(
                doc_id=doc.doc_id,
                ordinal=ordinal,
                text=norm[start:end],
                char_span=(start, end),
                token_count=hi - lo,
            )
        )
    return chunks


def chunk_corpus(corpus: Corpus, max_tokens: int) -> tuple[list[Chunk], list[str]]:
    """Chunk every document; empty documents are skipped with a warning."""
    chunks: list[Chunk] = []
    warnings: list[str] = []
    for doc in corpus.documents:
        try:
            chunks.extend(chunk_document(doc, max_tokens))
        except EmptyDocumentError:
            msg = f"skipping document {doc.doc_id!r}: no tokens to chunk"
            warnings.append(msg)
            logger.warning(msg)
    return chunks, warnings


def save_chunk_store(
    path: str | Path,
    chunks: list[Chunk],
    *,
    corpus_hash: str,
    max_tokens: int,
    config_echo: dict | None = None,
) -> None:
    payload = {
        "format_version": CHUNK_STORE_VERSION,
        "corpus_hash": corpus_hash,
        "chunk_len": max_tokens,
        "config": config_echo or {},
        "chunks": [
            {
                "chunk_id": c.chunk_id,
                "doc_id": c.doc_id,
                "ordinal": c.ordinal,
                "text": c.text,
                "char_span": list(c.char_span),
                "token_count": c.token_count,
            }
            for c in chunks
        ],
    }
    Path(path).write_text(json.dumps(payload, ensure_ascii=False), encoding="utf-8")


def load_chunk_store(path: str | Path) -> tuple[list[Chunk], dict]:
    """Returns (chunks, meta) where meta holds corpus_hash / chunk_len / config."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise CorpusError(f"cannot read chunk store {path}: {exc}") from exc
    if payload.get("format_version") != CHUNK_STORE_VERSION:
        raise CorpusError(f"unsupported chunk store version {payload.get('format_version')!r}")
    chunks = [
        Chunk(
            doc_id=rec["doc_id"],
            ordinal=rec["ordinal"],
            text=rec["text"],
            char_span=tuple(rec["char_span"]),
            token_count=rec["token_count"],
        )
        for rec in payload["chunks"]
    ]
    meta = {k: payload[k] for k in ("corpus_hash", "chunk_len", "config")}
    return chunks, meta
