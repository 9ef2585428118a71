"""Dense embeddings via pluggable providers.

Two providers ship with the package: a deterministic offline embedder
(feature hashing + seeded random projection, CI-stable, no downloads) and a
client for any HTTP service speaking the minimal embed contract

    POST {"model": str, "input": [str]}
    ->   {"data": [{"index": int, "embedding": [float]}]}

Relevance between dense vectors is the plain dot product.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import DimensionMismatchError, EmbeddingError, RemoteServiceError
from .tokenization import tokenize

logger = logging.getLogger(__name__)

EMBED_API_KEY_VAR = "CITEQA_EMBED_API_KEY"


def f_dense(a: np.ndarray, b: np.ndarray) -> float:
    """Dot product of two equal-dimension dense vectors."""
    if a.shape != b.shape:
        raise DimensionMismatchError(f"dense vectors disagree: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


class EmbeddingProvider(Protocol):
    provider_id: str
    dimension: int

    def embed(self, text: str) -> np.ndarray: ...

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]: ...


def _token_bucket(token: str, dimension: int) -> tuple[int, float]:
    """Stable hash of a token to (bucket, sign); independent of PYTHONHASHSEED."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    value = int.from_bytes(digest, "little")
    sign = 1.0 if value & 1 else -1.0
    return (value >> 1) % dimension, sign


@dataclass
class HashingEmbedder:
    """Deterministic offline embedder.

    Word unigrams are signed-hashed into `dimension` buckets and passed
    through a fixed seeded random projection, so lexical overlap between two
    texts correlates with the dot product of their embeddings. Intended for
    tests and desk experiments, not as a stand-in for a trained encoder.
    """

    dimension: int = 64
    seed: int = 0
    normalize: bool = False
    _projection: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be >= 1")
        rng = np.random.default_rng(self.seed)
        self._projection = rng.standard_normal((self.dimension, self.dimension)) / np.sqrt(self.dimension)

    @property
    def provider_id(self) -> str:
        return f"hash:d={self.dimension}:seed={self.seed}:norm={int(self.normalize)}"

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmbeddingError("cannot embed empty text")
        counts = np.zeros(self.dimension, dtype=np.float64)
        for token in tokenize(text):
            bucket, sign = _token_bucket(token, self.dimension)
            counts[bucket] += sign
        vec = self._projection @ counts
        if self.normalize:
            norm = np.linalg.norm(vec)
            if norm == 0.0:
                raise EmbeddingError("normalization requested but embedding has zero norm")
            vec = vec / norm
        return vec

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


@dataclass
class RemoteEmbedder:
    """Client for a remote embedding service.

    post_fn is injectable for tests; it must mimic requests.post. Failures
    surface as RemoteServiceError with retry_after populated from the
    Retry-After header when the service rate-limits.
    """

    endpoint: str
    model: str
    dimension: int
    normalize: bool = False
    timeout: float = 30.0
    max_batch: int = 64  # bounds request size, hence in-flight work
    api_key_var: str = EMBED_API_KEY_VAR
    post_fn: Callable | None = None

    @property
    def provider_id(self) -> str:
        return f"remote:{self.model}:d={self.dimension}:norm={int(self.normalize)}"

    def _post(self, texts: list[str]) -> list[np.ndarray]:
        post = self.post_fn
        if post is None:
            import requests

            post = requests.post
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_var, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = post(
                self.endpoint,
                json={"model": self.model, "input": texts},
                headers=headers,
                timeout=self.timeout,
            )
        except Exception as exc:
            raise RemoteServiceError(f"embedding request failed: {exc}") from exc
        if resp.status_code != 200:
            retry_after = None
            raw = resp.headers.get("Retry-After") if hasattr(resp, "headers") else None
            if raw is not None:
                try:
                    retry_after = float(raw)
                except ValueError:
                    retry_after = None
            raise RemoteServiceError(
                f"embedding service returned HTTP {resp.status_code}",
                status=resp.status_code,
                retry_after=retry_after,
            )
        data = resp.json().get("data")
        if not isinstance(data, list):
            raise RemoteServiceError("embedding response is missing the data list")
        out: list[np.ndarray | None] = [None] * len(texts)
        for row in data:
            idx = row.get("index", -1)
            if not 0 <= idx < len(texts):
                raise RemoteServiceError(f"embedding response row has invalid index {idx!r}")
            vec = np.asarray(row["embedding"], dtype=np.float64)
            if vec.shape != (self.dimension,):
                raise DimensionMismatchError(
                    f"embedding for input {idx} has dimension {vec.shape[0]}, expected {self.dimension}"
                )
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"embedding for input {idx} contains non-finite values")
            if self.normalize:
                norm = np.linalg.norm(vec)
                if norm == 0.0:
                    raise EmbeddingError(f"embedding for input {idx} has zero norm")
                vec = vec / norm
            out[idx] = vec
        missing = [i for i, v in enumerate(out) if v is None]
        if missing:
            raise RemoteServiceError(f"embedding response missing index {missing[0]}")
        return out  # type: ignore[return-value]

    def embed(self, text: str) -> np.ndarray:
        if not text or not text.strip():
            raise EmbeddingError("cannot embed empty text")
        return self._post([text])[0]

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        """Order-preserving batch embedding; fails atomically on any error."""
        for i, t in enumerate(texts):
            if not t or not t.strip():
                raise EmbeddingError(f"cannot embed empty text at index {i}")
        out: list[np.ndarray] = []
        for lo in range(0, len(texts), self.max_batch):
            out.extend(self._post(texts[lo : lo + self.max_batch]))
        return out


class CachedEmbedder:
    """File-backed cache keyed by (provider id, content hash)."""

    def __init__(self, provider: EmbeddingProvider, path: str | Path):
        self.provider = provider
        self.path = Path(path)
        self._cache: dict[str, list[float]] = {}
        if self.path.exists():
            payload = json.loads(self.path.read_text(encoding="utf-8"))
            if payload.get("provider_id") == provider.provider_id:
                self._cache = payload.get("vectors", {})
            else:
                logger.info("embedding cache %s belongs to another provider; starting fresh", path)

    @property
    def provider_id(self) -> str:
        return self.provider.provider_id

    @property
    def dimension(self) -> int:
        return self.provider.dimension

    @staticmethod
    def _key(text: str) -> str:
        return hashlib.sha256(text.encode("utf-8")).hexdigest()

    def embed(self, text: str) -> np.ndarray:
        key = self._key(text)
        hit = self._cache.get(key)
        if hit is not None:
            return np.asarray(hit, dtype=np.float64)
        vec = self.provider.embed(text)
        self._cache[key] = [float(v) for v in vec]
        return vec

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        missing = [t for t in texts if self._key(t) not in self._cache]
        if missing:
            for t, v in zip(missing, self.provider.embed_batch(missing)):
                self._cache[self._key(t)] = [float(x) for x in v]
        return [np.asarray(self._cache[self._key(t)], dtype=np.float64) for t in texts]

    def save(self) -> None:
        payload = {"provider_id": self.provider.provider_id, "vectors": self._cache}
        self.path.write_text(json.dumps(payload), encoding="utf-8")


def embed_matrix(provider: EmbeddingProvider, texts: list[str]) -> np.ndarray:
    """Stack embeddings into an (n, d) float64 matrix."""
    if not texts:
        return np.zeros((0, provider.dimension), dtype=np.float64)
    return np.vstack(provider.embed_batch(texts))
