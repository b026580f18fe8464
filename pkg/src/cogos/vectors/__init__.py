"""Embedding and exact similarity retrieval for the RAG databases."""

from .embed import (
    DEFAULT_DIM,
    HASHED_EMBEDDER_ID,
    STOPWORDS,
    Embedding,
    HashedTokenEmbedder,
    RemoteEmbedder,
    cosine,
    tokenize,
)
from .kernels import BACKEND as KERNEL_BACKEND
from .store import (
    CorruptFile,
    StoreClosed,
    StoreError,
    VectorRecord,
    VectorStore,
    VersionMismatch,
    load,
    persist,
)


def embed(text: str, dim: int = DEFAULT_DIM) -> Embedding:
    """Embed ``text`` with the default hashed-token embedder."""
    return HashedTokenEmbedder(dim)(text)


__all__ = [
    "DEFAULT_DIM", "HASHED_EMBEDDER_ID", "STOPWORDS", "KERNEL_BACKEND",
    "Embedding", "HashedTokenEmbedder", "RemoteEmbedder", "cosine", "embed", "tokenize",
    "VectorRecord", "VectorStore", "StoreError", "StoreClosed", "CorruptFile",
    "VersionMismatch", "load", "persist",
]
