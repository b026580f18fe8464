"""Deterministic text embeddings.

The default embedder is a hashed bag of tokens. Its constants are frozen so
persisted stores stay portable:

* dimension ``DEFAULT_DIM`` = 256
* tokens: lowercase text split on non-alphanumerics, minus ``STOPWORDS``
* bucket: 64-bit FNV-1a of the token's UTF-8 bytes, modulo the dimension
* vector: bucket counts, L2-normalised (empty input stays the zero vector)
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Protocol

import numpy as np

from . import kernels

DEFAULT_DIM = 256
HASHED_EMBEDDER_ID = "fnv1a64-bow-v1"

STOPWORDS = frozenset(
    """a an the and or of to in on at by for with from is are was were be been
    it its this that these those me my i you your we our please there here
    do does did could would should will shall""".split()
)

_TOKEN = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    return [t for t in _TOKEN.findall(text.lower()) if t not in STOPWORDS]


@dataclass(frozen=True, eq=False)
class Embedding:
    values: np.ndarray
    norm: float

    @classmethod
    def from_vector(cls, vector: np.ndarray | list[float]) -> Embedding:
        """L2-normalise ``vector``; an all-zero vector is kept as is."""
        v = np.asarray(vector, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("embedding must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding contains non-finite values")
        length = math.sqrt(math.fsum(float(x) * float(x) for x in v))
        if length > 0.0:
            v = v / length
        return cls._frozen(v)

    @classmethod
    def _frozen(cls, values: np.ndarray) -> Embedding:
        values = np.ascontiguousarray(values, dtype=np.float64)
        values.setflags(write=False)
        norm = math.sqrt(math.fsum(float(x) * float(x) for x in values))
        return cls(values, norm)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])

    @property
    def normalizable(self) -> bool:
        return self.norm > 0.0

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Embedding):
            return NotImplemented
        return self.values.tobytes() == other.values.tobytes()

    def __hash__(self) -> int:
        return hash(self.values.tobytes())


def cosine(a: Embedding, b: Embedding) -> float:
    """Cosine similarity of two normalised embeddings, clipped to [-1, 1]."""
    nz = np.flatnonzero(a.values)
    score = float(kernels.scan_scores(b.values.reshape(1, -1), a.values, nz)[0])
    return min(1.0, max(-1.0, score))


class Embedder(Protocol):
    embedder_id: str
    dim: int

    def __call__(self, text: str) -> Embedding: ...


class HashedTokenEmbedder:
    def __init__(self, dim: int = DEFAULT_DIM) -> None:
        if dim < 1:
            raise ValueError("dimension must be positive")
        self.dim = dim
        self.embedder_id = HASHED_EMBEDDER_ID

    def counts(self, text: str) -> np.ndarray:
        return kernels.bucket_counts(tokenize(text), self.dim)

    def __call__(self, text: str) -> Embedding:
        counts = self.counts(text)
        total = int(np.dot(counts, counts))
        if total == 0:
            return Embedding._frozen(np.zeros(self.dim))
        return Embedding._frozen(counts / math.sqrt(total))

    def __repr__(self) -> str:
        return f"HashedTokenEmbedder(dim={self.dim})"


class RemoteEmbedder:
    """Embeddings from an HTTP endpoint speaking the common ``/embeddings`` shape.

    Request ``{"model", "input"}``; response ``{"data": [{"embedding": [...]}]}``.
    """

    def __init__(self, url: str, model: str, dim: int, api_key: str | None = None,
                 client=None, timeout: float = 30.0) -> None:
        import httpx

        self.url = url
        self.model = model
        self.dim = dim
        self.embedder_id = f"remote:{model}:{dim}"
        self._headers = {"Authorization": f"Bearer {api_key}"} if api_key else {}
        self._client = client or httpx.Client(timeout=timeout)

    def __call__(self, text: str) -> Embedding:
        resp = self._client.post(self.url, json={"model": self.model, "input": text},
                                 headers=self._headers)
        resp.raise_for_status()
        vector = resp.json()["data"][0]["embedding"]
        if len(vector) != self.dim:
            raise ValueError(f"endpoint returned {len(vector)} dims, expected {self.dim}")
        return Embedding.from_vector(vector)
