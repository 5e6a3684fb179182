"""
Deterministic text embedder.

Feature-hashed bag of tokens: tokens are hashed with a fixed seed into
``EMBEDDING_DIM`` buckets, counted and L2-normalized. The embedder is
replaceable; anything exposing ``embed(text) -> list[float]`` with unit-norm
output can stand in.
"""

import hashlib
import re
from typing import Protocol

import numpy as np

from routegraph.protocol import EMBEDDING_DIM, EMBEDDING_SEED

_TOKEN_SPLIT = re.compile(r"[^0-9a-z]+")

STOPWORDS = frozenset(
    {
        "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "get", "in", "is",
        "it", "me", "my", "of", "on", "or", "show", "that", "the", "this", "to", "what",
        "with", "returns", "return", "field", "fields", "object", "array", "string",
        "number", "boolean", "null", "optional", "required",
    }
)  # fmt: skip


class Embedder(Protocol):
    dimension: int

    def embed(self, text: str) -> list[float]: ...


def tokenize(text: str) -> list[str]:
    """Lowercase, split on non-alphanumerics, drop stopwords, strip plural -s"""
    tokens: list[str] = []
    for token in _TOKEN_SPLIT.split(text.lower()):
        if not token or token in STOPWORDS:
            continue
        if len(token) > 3 and token.endswith("s") and not token.endswith("ss"):
            token = token[:-1]
        tokens.append(token)
    return tokens


class HashingEmbedder:
    """Feature-hashing embedder over a fixed number of buckets."""

    def __init__(self, dimension: int = EMBEDDING_DIM, seed: str = EMBEDDING_SEED) -> None:
        if dimension <= 0:
            raise ValueError("dimension must be > 0")
        self.dimension = dimension
        self._seed = seed.encode("utf-8")

    def _bucket(self, token: str) -> int:
        digest = hashlib.sha256(self._seed + b"\x00" + token.encode("utf-8")).digest()
        return int.from_bytes(digest[:8], "big") % self.dimension

    def vector(self, text: str) -> np.ndarray:
        counts = np.zeros(self.dimension, dtype=np.float64)
        for token in tokenize(text):
            counts[self._bucket(token)] += 1.0
        norm = float(np.linalg.norm(counts))
        if norm == 0.0:
            counts[0] = 1.0
            return counts
        return counts / norm

    def embed(self, text: str) -> list[float]:
        return [float(v) for v in self.vector(text)]


_default = HashingEmbedder()


def embed_text(text: str) -> list[float]:
    """Embed with the default hashing embedder"""
    return _default.embed(text)


def cosine(a: list[float] | np.ndarray, b: list[float] | np.ndarray) -> float:
    """Cosine similarity; zero when either vector is zero"""
    va = np.asarray(a, dtype=np.float64)
    vb = np.asarray(b, dtype=np.float64)
    denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
    if denom == 0.0:
        return 0.0
    return float(np.dot(va, vb) / denom)
