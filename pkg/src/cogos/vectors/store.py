"""Exact-scan vector store with a portable binary file format.

File layout (little-endian)::

    magic     4s   b"COGV"
    version   u16  FORMAT_VERSION
    dim       u32
    id_len    u16  + embedder id (utf-8)
    count     u64  number of records
    next_id   u64
    digest    32s  sha256 of everything after the header
    records   count x (u32 length, payload)

    payload = u64 id | u32 meta_len | json {"text", "metadata"} | dim x f64
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import threading
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType

import numpy as np

from . import kernels
from .embed import (
    DEFAULT_DIM,
    HASHED_EMBEDDER_ID,
    Embedder,
    Embedding,
    HashedTokenEmbedder,
)

MAGIC = b"COGV"
FORMAT_VERSION = 1

_HEAD = struct.Struct("<4sHI")
_TAIL = struct.Struct("<QQ32s")


class StoreError(Exception):
    pass


class StoreClosed(StoreError):
    pass


class CorruptFile(StoreError):
    pass


class VersionMismatch(StoreError):
    pass


@dataclass(frozen=True)
class VectorRecord:
    id: int
    text: str
    embedding: Embedding = field(repr=False)
    metadata: Mapping[str, str] = field(default_factory=dict)


class VectorStore:
    """Records plus a dense embedding matrix, scanned exactly on every query.

    Writers are serialised by a lock; readers take a consistent snapshot under
    the lock and score outside it, so concurrent queries do not block each other.
    """

    def __init__(self, dim: int = DEFAULT_DIM, embedder: Embedder | None = None,
                 name: str = "") -> None:
        self.embedder = embedder if embedder is not None else HashedTokenEmbedder(dim)
        if self.embedder.dim != dim:
            raise ValueError(f"embedder dimension {self.embedder.dim} != store dimension {dim}")
        self.dim = dim
        self.name = name
        self._records: list[VectorRecord] = []
        self._matrix = np.zeros((0, dim))
        self._next_id = 0
        self._closed = False
        self._lock = threading.Lock()

    # -- state

    def __len__(self) -> int:
        return len(self._records)

    @property
    def next_id(self) -> int:
        return self._next_id

    @property
    def closed(self) -> bool:
        return self._closed

    def close(self) -> None:
        self._closed = True

    def records(self) -> list[VectorRecord]:
        with self._lock:
            return list(self._records)

    def get(self, record_id: int) -> VectorRecord:
        for rec in self.records():
            if rec.id == record_id:
                return rec
        raise KeyError(record_id)

    # -- writes

    def insert(self, text: str, metadata: Mapping[str, str] | None = None) -> int:
        embedding = self.embedder(text)
        return self._append(text, embedding, metadata)

    def insert_many(self, items: Iterable[tuple[str, Mapping[str, str] | None]]) -> list[int]:
        return [self.insert(text, meta) for text, meta in items]

    def _append(self, text: str, embedding: Embedding, metadata: Mapping[str, str] | None,
                record_id: int | None = None) -> int:
        meta = dict(metadata or {})
        for key, value in meta.items():
            if not isinstance(key, str) or not isinstance(value, str):
                raise TypeError("metadata must map text keys to text values")
        if embedding.dim != self.dim:
            raise ValueError(f"embedding has {embedding.dim} dims, store has {self.dim}")
        with self._lock:
            if self._closed:
                raise StoreClosed(f"store {self.name or '<unnamed>'} is closed")
            rid = self._next_id if record_id is None else record_id
            n = len(self._records)
            if n == self._matrix.shape[0]:
                grown = np.zeros((max(8, 2 * n), self.dim))
                grown[:n] = self._matrix[:n]
                self._matrix = grown
            self._matrix[n] = embedding.values
            self._records.append(VectorRecord(rid, text, embedding, MappingProxyType(meta)))
            self._next_id = max(self._next_id, rid + 1)
            return rid

    # -- reads

    def query_top_k(self, query_text: str, k: int) -> list[tuple[VectorRecord, float]]:
        return self.query_embedding(self.embedder(query_text), k)

    def query_embedding(self, query: Embedding, k: int) -> list[tuple[VectorRecord, float]]:
        """Top ``k`` records by cosine similarity; ties go to the lower id."""
        if k < 1:
            raise ValueError("k must be at least 1")
        if not query.normalizable:
            return []
        with self._lock:
            n = len(self._records)
            records = self._records[:n]
            matrix = self._matrix[:n]
        if n == 0:
            return []
        nz = np.flatnonzero(query.values).astype(np.intp)
        scores = kernels.scan_scores(np.ascontiguousarray(matrix), query.values, nz)
        np.clip(scores, -1.0, 1.0, out=scores)
        # records are held in ascending id order, so a stable sort breaks ties by id
        order = np.argsort(-scores, kind="stable")[:k]
        return [(records[i], float(scores[i])) for i in order]

    # -- import

    def import_jsonl(self, path: str | os.PathLike, text_key: str) -> list[int]:
        """Insert one record per JSON line; other keys become metadata.

        Non-text metadata values are stored as their JSON encoding.
        """
        ids = []
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    obj = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{lineno}: {exc.msg}") from None
                if not isinstance(obj, dict) or not isinstance(obj.get(text_key), str):
                    raise ValueError(f"{path}:{lineno}: expected an object with text field {text_key!r}")
                meta = {
                    k: v if isinstance(v, str) else json.dumps(v, sort_keys=True)
                    for k, v in obj.items() if k != text_key
                }
                ids.append(self.insert(obj[text_key], meta))
        return ids

    # -- persistence

    def persist(self, path: str | os.PathLike) -> None:
        with self._lock:
            records = list(self._records)
            next_id = self._next_id
        body = bytearray()
        for rec in records:
            meta = json.dumps({"text": rec.text, "metadata": dict(rec.metadata)},
                              sort_keys=True, ensure_ascii=False).encode("utf-8")
            payload = (struct.pack("<QI", rec.id, len(meta)) + meta
                       + rec.embedding.values.astype("<f8").tobytes())
            body += struct.pack("<I", len(payload)) + payload
        ident = self.embedder.embedder_id.encode("utf-8")
        header = (_HEAD.pack(MAGIC, FORMAT_VERSION, self.dim)
                  + struct.pack("<H", len(ident)) + ident
                  + _TAIL.pack(len(records), next_id, hashlib.sha256(body).digest()))
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(header + bytes(body))
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike, embedder: Embedder | None = None,
             name: str = "") -> VectorStore:
        data = Path(path).read_bytes()
        try:
            magic, version, dim = _HEAD.unpack_from(data, 0)
        except struct.error:
            raise CorruptFile(f"{path}: truncated header") from None
        if magic != MAGIC:
            raise CorruptFile(f"{path}: not a vector store file")
        if version != FORMAT_VERSION:
            raise VersionMismatch(f"{path}: format version {version}, expected {FORMAT_VERSION}")
        try:
            off = _HEAD.size
            (id_len,) = struct.unpack_from("<H", data, off)
            off += 2
            ident = data[off:off + id_len].decode("utf-8")
            off += id_len
            count, next_id, digest = _TAIL.unpack_from(data, off)
            off += _TAIL.size
        except (struct.error, UnicodeDecodeError):
            raise CorruptFile(f"{path}: truncated header") from None
        body = data[off:]
        if hashlib.sha256(body).digest() != digest:
            raise CorruptFile(f"{path}: content digest mismatch")

        if embedder is None:
            if ident != HASHED_EMBEDDER_ID:
                raise VersionMismatch(f"{path}: embedder {ident!r} must be supplied by the caller")
            embedder = HashedTokenEmbedder(dim)
        elif embedder.embedder_id != ident or embedder.dim != dim:
            raise VersionMismatch(
                f"{path}: written by {ident!r} (dim {dim}), loading with "
                f"{embedder.embedder_id!r} (dim {embedder.dim})"
            )
        store = cls(dim, embedder, name=name)
        try:
            pos = 0
            for _ in range(count):
                (length,) = struct.unpack_from("<I", body, pos)
                pos += 4
                payload = body[pos:pos + length]
                if len(payload) != length:
                    raise CorruptFile(f"{path}: truncated record")
                pos += length
                rid, meta_len = struct.unpack_from("<QI", payload, 0)
                meta = json.loads(payload[12:12 + meta_len].decode("utf-8"))
                values = np.frombuffer(payload[12 + meta_len:], dtype="<f8")
                if values.shape[0] != dim:
                    raise CorruptFile(f"{path}: record {rid} has {values.shape[0]} dims")
                store._append(meta["text"], Embedding._frozen(values.astype(np.float64)),
                              meta["metadata"], record_id=rid)
        except (struct.error, ValueError, KeyError, TypeError) as exc:
            raise CorruptFile(f"{path}: {exc}") from None
        if pos != len(body):
            raise CorruptFile(f"{path}: trailing bytes after {count} records")
        store._next_id = next_id
        return store


def persist(store: VectorStore, path: str | os.PathLike) -> None:
    store.persist(path)


def load(path: str | os.PathLike, embedder: Embedder | None = None) -> VectorStore:
    return VectorStore.load(path, embedder)
