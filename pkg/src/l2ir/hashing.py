"""Deterministic tokenization and feature-hashed term-frequency vectors.

The same machinery backs the retrieval text vectors and the built-in
text encoder; only the dimensionality differs. Token-to-bucket mapping
uses blake2b so it is stable across processes and platforms (unlike
``hash()``).
"""

from __future__ import annotations

import re
from hashlib import blake2b

import numpy as np

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercased alphanumeric tokens, punctuation/whitespace delimited."""
    return _TOKEN_RE.findall(text.lower())


def bucket_of(token: str, dim: int) -> int:
    digest = blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % dim


def hashed_counts(text: str, dim: int) -> np.ndarray:
    """Raw term-frequency counts hashed into ``dim`` buckets."""
    vec = np.zeros(dim, dtype=np.float64)
    for tok in tokenize(text):
        vec[bucket_of(tok, dim)] += 1.0
    return vec


def hashed_tf(text: str, dim: int) -> np.ndarray:
    """L2-normalized hashed term frequencies; empty text gives the zero vector."""
    vec = hashed_counts(text, dim)
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, defined as 0 when either vector is zero."""
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))
