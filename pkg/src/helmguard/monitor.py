"""Fast embedding-space anomaly monitor.

A cache of nominal scene embeddings (unit-normalized at ingest) supports a
max-cosine anomaly score in [0, 2]; the decision threshold is the empirical
quantile of leave-one-out scores over the cache. Scoring is read-only over an
immutable snapshot; calibration builds a new snapshot before serving.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backends import EmbeddingBackend, TextBackend

CACHE_MAGIC = b"HGEC"
CACHE_VERSION = 1
DEFAULT_ALPHA = 0.95

# Threshold reported for the original 1000-image nominal cache at alpha=0.95;
# kept as a reference constant only, it is not reproducible without that data.
REFERENCE_TAU = 0.2375


def _normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / n


@dataclass(frozen=True)
class EmbeddingCache:
    """Immutable snapshot of nominal embeddings (rows unit-normalized)."""

    vectors: np.ndarray
    source_ids: tuple

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[0] == 0:
            raise ValueError("cache needs at least one embedding vector")
        if len(self.source_ids) != vectors.shape[0]:
            raise ValueError("source_ids must match vector count")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(norms == 0.0):
            raise ValueError("cache contains a zero vector")
        vectors = vectors / norms[:, None]
        vectors.flags.writeable = False
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "source_ids", tuple(self.source_ids))

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def with_vector(self, vector: np.ndarray, source_id: str) -> "EmbeddingCache":
        v = _normalize(vector)
        return EmbeddingCache(
            vectors=np.vstack([self.vectors, v[None, :]]),
            source_ids=self.source_ids + (source_id,),
        )

    def save(self, path) -> None:
        """Flat binary file (magic, version, d, N; little-endian float32 rows)
        plus a JSON sidecar with the source ids."""
        with open(path, "wb") as f:
            f.write(CACHE_MAGIC)
            f.write(struct.pack("<III", CACHE_VERSION, self.dim, self.n))
            f.write(self.vectors.astype("<f4").tobytes())
        with open(str(path) + ".json", "w", encoding="utf-8") as f:
            json.dump({"source_ids": list(self.source_ids), "d": self.dim, "n": self.n},
                      f, indent=1, sort_keys=True)

    @classmethod
    def load(cls, path) -> "EmbeddingCache":
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != CACHE_MAGIC:
                raise ValueError(f"not an embedding cache file: bad magic {magic!r}")
            version, d, n = struct.unpack("<III", f.read(12))
            if version != CACHE_VERSION:
                raise ValueError(f"unsupported cache version {version}")
            payload = f.read(4 * d * n)
        vectors = np.frombuffer(payload, dtype="<f4").reshape(n, d).astype(np.float64)
        try:
            with open(str(path) + ".json", "r", encoding="utf-8") as f:
                source_ids = tuple(json.load(f)["source_ids"])
        except FileNotFoundError:
            source_ids = tuple(f"vector-{i}" for i in range(n))
        return cls(vectors=vectors, source_ids=source_ids)


@dataclass(frozen=True)
class MonitorConfig:
    alpha: float = DEFAULT_ALPHA
    tau: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must be in (0, 1)")
        if not 0.0 <= self.tau <= 2.0:
            raise ValueError("tau must lie in [0, 2]")


def anomaly_score(e_t: np.ndarray, cache: EmbeddingCache) -> float:
    """1 minus the max cosine similarity between the query and the cache."""
    q = _normalize(e_t)
    if q.shape[0] != cache.dim:
        raise ValueError(f"query dimension {q.shape[0]} != cache dimension {cache.dim}")
    score = 1.0 - float(np.max(cache.vectors @ q))
    return min(2.0, max(0.0, score))


def empirical_quantile(values: np.ndarray, alpha: float) -> float:
    """Smallest value q with (fraction of values <= q) >= alpha (no interpolation)."""
    s = np.sort(np.asarray(values, dtype=float))
    n = s.shape[0]
    fractions = np.arange(1, n + 1) / n
    idx = int(np.argmax(fractions >= alpha))
    return float(s[idx])


def loo_scores(cache: EmbeddingCache) -> np.ndarray:
    """Leave-one-out anomaly score of each cache member against the rest."""
    if cache.n < 2:
        raise ValueError("leave-one-out needs at least 2 cache vectors")
    sims = cache.vectors @ cache.vectors.T
    np.fill_diagonal(sims, -np.inf)
    return 1.0 - sims.max(axis=1)


def calibrate_threshold(cache: EmbeddingCache, alpha: float = DEFAULT_ALPHA) -> float:
    """Empirical alpha-quantile of the leave-one-out scores."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    tau = empirical_quantile(loo_scores(cache), alpha)
    return min(2.0, max(0.0, tau))


def classify(e_t: np.ndarray, cache: EmbeddingCache, tau: float) -> str:
    """"anomalous" iff the score strictly exceeds tau, else "nominal"."""
    return "anomalous" if anomaly_score(e_t, cache) > tau else "nominal"


def embed_scene(
    describer: TextBackend,
    embedder: EmbeddingBackend,
    image_png: bytes,
    seed: Optional[int] = None,
    timeout: float = 60.0,
) -> np.ndarray:
    """Two-stage pipeline: image -> one navigation-centric sentence -> unit vector.

    Backend failures propagate; nothing is cached on error.
    """
    sentence = describe_scene(describer, image_png, seed=seed, timeout=timeout)
    return _normalize(embedder.embed(sentence))


DESCRIBE_PROMPT = (
    "Summarize this maritime camera frame in ONE concise sentence focused on "
    "navigationally relevant objects and hazards. Exclude own-ship and people on board. "
    "Reply with the sentence only."
)


def describe_scene(describer: TextBackend, image_png: bytes, seed: Optional[int] = None,
                   timeout: float = 60.0) -> str:
    response = describer.submit(DESCRIBE_PROMPT, image_png, seed, timeout)
    sentence = response.text.strip()
    if not sentence:
        raise ValueError("describer returned an empty sentence")
    return sentence
