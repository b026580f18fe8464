"""Pure-Python/numpy kernels; bit-for-bit twins of ``_ckernels.pyx``."""

from __future__ import annotations

import numpy as np

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
_MASK = (1 << 64) - 1


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h = ((h ^ b) * FNV_PRIME) & _MASK
    return h


def bucket_counts(tokens: list[str], dim: int) -> np.ndarray:
    counts = np.zeros(dim, dtype=np.int64)
    for tok in tokens:
        counts[fnv1a_64(tok.encode("utf-8")) % dim] += 1
    return counts


def scan_scores(matrix: np.ndarray, query: np.ndarray, nz: np.ndarray) -> np.ndarray:
    # Accumulate one query coordinate at a time, ascending, so each row's sum
    # is formed in exactly the order the compiled loop uses.
    scores = np.zeros(matrix.shape[0], dtype=np.float64)
    for i in nz:
        scores += query[i] * matrix[:, i]
    return scores
