"""Deterministic word tokenization shared by chunking, indexing, and embedding.

Text is NFC-normalized and lowercased; tokens are maximal runs of
non-whitespace characters. Offsets index into the NFC-normalized text so
the original casing can be recovered by slicing.
"""

import unicodedata

__all__ = ["normalize", "tokenize", "tokenize_with_spans"]


def normalize(text: str) -> str:
    """NFC-normalize text (casing preserved)."""
    return unicodedata.normalize("NFC", text)


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace tokens of the NFC-normalized text."""
    return tokenize_with_spans(text)[0]


def tokenize_with_spans(text: str) -> tuple[list[str], list[tuple[int, int]]]:
    """Tokens plus their (start, end) character spans in the normalized text.

    normalize(text)[start:end] is the raw (case-preserving) surface form of
    each token; the token itself is that slice lowercased.
    """
    norm = normalize(text)
    tokens: list[str] = []
    spans: list[tuple[int, int]] = []
    pos = 0
    n = len(norm)
    while pos < n:
        if norm[pos].isspace():
            pos += 1
            continue
        start = pos
        while pos < n and not norm[pos].isspace():
            pos += 1
        tokens.append(norm[start:pos].lower())
        spans.append((start, pos))
    return tokens, spans
