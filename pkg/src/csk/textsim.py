"""String and vector similarity: Levenshtein, token Jaccard, bag-of-words cosine."""

from __future__ import annotations

import math
import re
import string
from typing import Protocol, Sequence

import numpy as np

from ._rand import fnv1a64

DEFAULT_DIM = 512

_WS = re.compile(r"\s+")
_PUNCT = string.punctuation + "“”‘’"


def levenshtein(a: str, b: str) -> int:
    """Unit-cost edit distance over code points."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        current = [i]
        for j, cb in enumerate(b, 1):
            current.append(min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (ca != cb),
            ))
        previous = current
    return previous[-1]


def normalize_text(s: str) -> str:
    return _WS.sub(" ", s).strip().lower()


def levenshtein_norm(a: str, b: str) -> float:
    """Levenshtein distance divided by the longer length, after lowercasing
    and collapsing whitespace. Two empty strings are at distance 0."""
    a, b = normalize_text(a), normalize_text(b)
    longest = max(len(a), len(b))
    if longest == 0:
        return 0.0
    return levenshtein(a, b) / longest


def word_tokens(s: str) -> list[str]:
    """Lowercased whitespace tokens with surrounding punctuation removed."""
    out = []
    for tok in s.lower().split():
        tok = tok.strip(_PUNCT)
        if tok:
            out.append(tok)
    return out


def jaccard_sim(a: str, b: str) -> float:
    sa, sb = set(word_tokens(a)), set(word_tokens(b))
    if not sa and not sb:
        return 1.0
    return len(sa & sb) / len(sa | sb)


def jaccard_dist(a: str, b: str) -> float:
    return 1.0 - jaccard_sim(a, b)


def bow_embed(text: str, dim: int = DEFAULT_DIM) -> np.ndarray:
    """Hashed bag-of-words vector.

    Each token from :func:`word_tokens` is hashed with 64-bit FNV-1a over its
    UTF-8 bytes, the bucket is ``hash % dim``, counts are accumulated, and the
    result is L2-normalised. Empty text gives the zero vector.
    """
    if dim < 8:
        raise ValueError("dim must be at least 8")
    vec = np.zeros(dim, dtype=np.float64)
    for tok in word_tokens(text):
        vec[fnv1a64(tok.encode("utf-8")) % dim] += 1.0
    norm = np.linalg.norm(vec)
    if norm > 0:
        vec /= norm
    return vec


def cosine(u: Sequence[float] | np.ndarray, v: Sequence[float] | np.ndarray) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0 or nv == 0:
        return 0.0
    c = float(np.dot(u, v) / (nu * nv))
    return max(-1.0, min(1.0, c))


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> list[np.ndarray]: ...


class BowEmbedder:
    """Deterministic default embedder."""

    name = "bow"

    def __init__(self, dim: int = DEFAULT_DIM):
        self.dim = dim

    def embed(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [bow_embed(t, self.dim) for t in texts]


def unit(vec: Sequence[float]) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("embedding has non-finite entries")
    norm = math.sqrt(float(np.dot(arr, arr)))
    return arr / norm if norm > 0 else arr
