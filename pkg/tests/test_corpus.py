"""Corpus loading and chunking."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citeqa.corpus import (
    Document,
    chunk_corpus,
    chunk_document,
    load_chunk_store,
    load_corpus,
    save_chunk_store,
)
from citeqa.errors import CorpusError, EmptyDocumentError

from helpers import random_text
import numpy as np


def write_lines(path, lines):
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


class TestLoadCorpus:
    def test_two_docs_with_resolved_reference(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_lines(path, [
            '{"id": "A", "title": "first", "text": "alpha beta", "references": []}',
            '{"id": "B", "title": "second", "text": "gamma", "references": ["A"]}',
        ])
        corpus = load_corpus(path)
        assert [d.doc_id for d in corpus.documents] == ["A", "B"]
        assert corpus.documents[1].references == ("A",)
        assert corpus.warnings == []

    def test_dangling_reference_warns_but_loads(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_lines(path, [
            '{"id": "B", "text": "beta", "references": ["Z"]}',
        ])
        corpus = load_corpus(path)
        assert len(corpus.documents) == 1
        assert len(corpus.warnings) == 1
        assert "Z" in corpus.warnings[0]

    def test_duplicate_doc_id_is_an_error_naming_it(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_lines(path, [
            '{"id": "A", "text": "one"}',
            '{"id": "A", "text": "two"}',
        ])
        with pytest.raises(CorpusError, match="'A'"):
            load_corpus(path)

    def test_malformed_record_reports_line_number(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_lines(path, ['{"id": "A", "text": "ok"}', "{not json"])
        with pytest.raises(CorpusError, match=":2:"):
            load_corpus(path)

    def test_unreadable_file(self, tmp_path):
        with pytest.raises(CorpusError, match="cannot read"):
            load_corpus(tmp_path / "missing.jsonl")

    def test_unknown_fields_ignored(self, tmp_path):
        path = tmp_path / "corpus.jsonl"
        write_lines(path, ['{"id": "A", "text": "ok", "venue": "x", "year": 2020}'])
        assert load_corpus(path).documents[0].text == "ok"


class TestChunkDocument:
    def test_paper_scale_example(self):
        # 20000 tokens at length 8192 -> 3 chunks sized 8192/8192/3616
        doc = Document(doc_id="D", title="", text=" ".join(["tok"] * 20000))
        chunks = chunk_document(doc, 8192)
        assert [c.token_count for c in chunks] == [8192, 8192, 3616]

    def test_short_document_single_chunk(self):
        doc = Document(doc_id="D", title="", text=" ".join(f"w{v}" for v in range(100)))
        chunks = chunk_document(doc, 8192)
        assert len(chunks) == 1
        assert chunks[0].tokens == doc.tokens

    def test_exact_boundary_is_one_chunk(self):
        doc = Document(doc_id="D", title="", text=" ".join(["tok"] * 8192))
        assert len(chunk_document(doc, 8192)) == 1

    def test_empty_body_raises(self):
        with pytest.raises(EmptyDocumentError):
            chunk_document(Document(doc_id="D", title="", text="   "), 4)

    def test_empty_docs_skipped_with_warning_in_corpus(self):
        from helpers import make_corpus

        corpus = make_corpus([{"id": "A", "text": "alpha beta"}, {"id": "B", "text": " "}])
        chunks, warnings = chunk_corpus(corpus, 1)
        assert {c.doc_id for c in chunks} == {"A"}
        assert len(warnings) == 1 and "'B'" in warnings[0]

    def test_char_spans_recover_raw_casing(self):
        doc = Document(doc_id="D", title="", text="The QUICK Brown fox JUMPED over")
        chunks = chunk_document(doc, 2)
        assert chunks[0].text == "The QUICK"
        assert chunks[1].text == "Brown fox"
        assert chunks[0].tokens == ["the", "quick"]

    @given(length=st.integers(1, 400), max_tokens=st.integers(1, 50))
    @settings(max_examples=60, deadline=None)
    def test_partition_properties(self, length, max_tokens):
        text = " ".join(f"w{v}" for v in range(length))
        doc = Document(doc_id="D", title="", text=text)
        chunks = chunk_document(doc, max_tokens)
        assert len(chunks) == math.ceil(length / max_tokens)
        rebuilt = [t for c in chunks for t in c.tokens]
        assert rebuilt == doc.tokens
        assert all(c.token_count == max_tokens for c in chunks[:-1])

    def test_deterministic(self):
        rng = np.random.default_rng(7)
        doc = Document(doc_id="D", title="", text=random_text(rng, 57))
        once = chunk_document(doc, 5)
        again = chunk_document(doc, 5)
        assert once == again


class TestChunkStore:
    def test_round_trip(self, tmp_path):
        doc = Document(doc_id="D", title="", text="alpha beta gamma delta")
        chunks = chunk_document(doc, 3)
        path = tmp_path / "chunks.json"
        save_chunk_store(path, chunks, corpus_hash="h", max_tokens=3)
        loaded, meta = load_chunk_store(path)
        assert loaded == chunks
        assert meta["corpus_hash"] == "h"
        assert meta["chunk_len"] == 3
