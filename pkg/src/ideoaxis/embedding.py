"""Embedding providers, a content-addressed on-disk cache, and vector averaging."""

from __future__ import annotations

import hashlib
import math
import os
import re
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np
from filelock import FileLock

DEFAULT_DIMENSION = 768


class EmbeddingError(Exception):
    pass


class ProviderError(EmbeddingError):
    def __init__(self, message: str, index: int | None = None):
        self.index = index
        super().__init__(message if index is None else f"text #{index}: {message}")


class ContractViolation(EmbeddingError):
    pass


class Pooling(str, Enum):
    MEAN_TOKENS = "MEAN_TOKENS"
    NATIVE = "NATIVE"


@dataclass(frozen=True)
class ProviderDescriptor:
    provider_id: str
    dimension: int
    pooling: Pooling = Pooling.NATIVE

    def __post_init__(self):
        if not self.provider_id:
            raise ValueError("provider_id must be non-empty")
        if self.dimension < 2:
            raise ValueError("dimension must be >= 2")


@dataclass(frozen=True, eq=False)
class EmbeddingVector:
    values: np.ndarray
    provider_id: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("embedding must be one-dimensional")
        if not np.all(np.isfinite(v)):
            raise ValueError("embedding has non-finite entries")
        if not self.provider_id:
            raise ValueError("provider_id must be non-empty")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dimension(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other):
        if not isinstance(other, EmbeddingVector):
            return NotImplemented
        return self.provider_id == other.provider_id and np.array_equal(self.values, other.values)

    __hash__ = None


class EmbeddingProvider(Protocol):
    descriptor: ProviderDescriptor
    max_batch_size: int

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        """Return an array of shape (len(texts), dimension)."""
        ...


def mock_vector(text: str, seed: int, dimension: int) -> np.ndarray:
    """Unit vector from D standard normals drawn with a generator seeded by sha256(seed, text)."""
    digest = hashlib.sha256(f"{seed}\x00{text}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    v = rng.standard_normal(dimension)
    return v / np.linalg.norm(v)


class MockProvider:
    """Deterministic pseudorandom unit vectors; no semantics, for tests."""

    def __init__(self, dimension: int = DEFAULT_DIMENSION, seed: int = 0, max_batch_size: int = 256):
        self.seed = seed
        self.max_batch_size = max_batch_size
        self.descriptor = ProviderDescriptor(f"mock-s{seed}-d{dimension}", dimension, Pooling.NATIVE)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        d = self.descriptor.dimension
        return np.stack([mock_vector(t, self.seed, d) for t in texts]) if texts else np.zeros((0, d))


class HashingProvider:
    """Signed feature hashing of character n-grams, L2-normalized.

    A model-free stand-in with lexical (not semantic) similarity: texts sharing
    character n-grams land near each other, which is enough for the offline
    fixtures and the classifier baseline.
    """

    def __init__(self, dimension: int = DEFAULT_DIMENSION, ngram_range: tuple[int, int] = (1, 3),
                 max_batch_size: int = 256):
        self.ngram_range = ngram_range
        self.max_batch_size = max_batch_size
        lo, hi = ngram_range
        self.descriptor = ProviderDescriptor(f"hashing-n{lo}{hi}-d{dimension}", dimension, Pooling.MEAN_TOKENS)

    def _one(self, text: str) -> np.ndarray:
        d = self.descriptor.dimension
        v = np.zeros(d)
        s = re.sub(r"\s+", " ", text.strip())
        lo, hi = self.ngram_range
        for n in range(lo, hi + 1):
            for i in range(len(s) - n + 1):
                h = int.from_bytes(hashlib.blake2b(s[i:i + n].encode("utf-8"), digest_size=8).digest(), "little")
                v[h % d] += 1.0 if (h >> 63) & 1 else -1.0
        norm = np.linalg.norm(v)
        if norm == 0:
            # a text whose n-grams all cancel: fall back to a fixed direction
            v[0] = 1.0
            return v
        return v / norm

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        d = self.descriptor.dimension
        return np.stack([self._one(t) for t in texts]) if texts else np.zeros((0, d))


class TableProvider:
    """Looks texts up in a fixed mapping; unknown texts are a provider failure."""

    def __init__(self, table: dict[str, Sequence[float]], provider_id: str = "table", max_batch_size: int = 256):
        dims = {len(v) for v in table.values()}
        if len(dims) != 1:
            raise ValueError("table vectors must share one dimension")
        self.table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
        self.max_batch_size = max_batch_size
        self.descriptor = ProviderDescriptor(provider_id, dims.pop())

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        out = []
        for i, t in enumerate(texts):
            if t not in self.table:
                raise ProviderError(f"unknown text {t[:30]!r}", i)
            out.append(self.table[t])
        return np.stack(out) if out else np.zeros((0, self.descriptor.dimension))


class HTTPEmbeddingProvider:
    """OpenAI-compatible ``POST {endpoint}/embeddings`` service."""

    def __init__(self, endpoint: str, model: str, dimension: int, *, token_env: str = "OPENAI_API_KEY",
                 max_batch_size: int = 64, transport=None, timeout: float = 60.0):
        import httpx

        headers = {}
        token = os.environ.get(token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        self.model = model
        self.max_batch_size = max_batch_size
        self.descriptor = ProviderDescriptor(f"http:{model}-d{dimension}", dimension, Pooling.NATIVE)
        self._http = httpx.Client(base_url=endpoint.rstrip("/") + "/", headers=headers,
                                  transport=transport, timeout=timeout)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        resp = self._http.post("embeddings", json={"model": self.model, "input": list(texts)})
        if resp.status_code >= 400:
            raise ProviderError(f"embedding service HTTP {resp.status_code}: {resp.text[:200]}")
        data = sorted(resp.json()["data"], key=lambda item: item["index"])
        return np.asarray([item["embedding"] for item in data], dtype=np.float64)


class SentenceTransformerProvider:
    """Local transformer with mean pooling over tokens (SBERT style)."""

    def __init__(self, model: str = "cl-tohoku/bert-base-japanese-v3", max_batch_size: int = 32,
                 device: str | None = None):
        from sentence_transformers import SentenceTransformer, models

        word = models.Transformer(model)
        pool = models.Pooling(word.get_word_embedding_dimension(), pooling_mode="mean")
        self._model = SentenceTransformer(modules=[word, pool], device=device)
        self.max_batch_size = max_batch_size
        dim = pool.get_sentence_embedding_dimension()
        self.descriptor = ProviderDescriptor(f"st:{model}-d{dim}", dim, Pooling.MEAN_TOKENS)

    def embed(self, texts: Sequence[str]) -> np.ndarray:
        return np.asarray(self._model.encode(list(texts), batch_size=self.max_batch_size,
                                             convert_to_numpy=True), dtype=np.float64)


def text_key(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Content-addressed store: per provider, a ``.f32`` file of little-endian float32 rows and a
    ``.idx`` text sidecar of ``<sha256>\\t<row>`` lines. Append-only, no eviction.

    Readers are lock-free against a consistent snapshot; writers serialize on a file lock.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._mem: dict[str, tuple[dict[str, int], int]] = {}
        self._lock = threading.Lock()

    def _paths(self, provider_id: str) -> tuple[Path, Path, Path]:
        safe = re.sub(r"[^A-Za-z0-9._-]", "_", provider_id)
        base = self.directory / safe
        return base.with_suffix(".f32"), base.with_suffix(".idx"), base.with_suffix(".lock")

    def _index(self, provider_id: str) -> dict[str, int]:
        _, idx_path, _ = self._paths(provider_id)
        mtime = idx_path.stat().st_mtime_ns if idx_path.exists() else 0
        with self._lock:
            cached = self._mem.get(provider_id)
            if cached and cached[1] == mtime:
                return cached[0]
        index: dict[str, int] = {}
        if idx_path.exists():
            for line in idx_path.read_text(encoding="utf-8").splitlines():
                if line:
                    key, row = line.split("\t")
                    index[key] = int(row)
        with self._lock:
            self._mem[provider_id] = (index, mtime)
        return index

    def get(self, provider_id: str, dimension: int, keys: Sequence[str]) -> dict[str, np.ndarray]:
        index = self._index(provider_id)
        wanted = {k: index[k] for k in keys if k in index}
        if not wanted:
            return {}
        data_path, _, _ = self._paths(provider_id)
        arr = np.memmap(data_path, dtype="<f4", mode="r")
        arr = arr.reshape(-1, dimension)
        return {k: np.array(arr[row], dtype=np.float32) for k, row in wanted.items()}

    def put(self, provider_id: str, dimension: int, items: dict[str, np.ndarray]) -> None:
        if not items:
            return
        data_path, idx_path, lock_path = self._paths(provider_id)
        with FileLock(str(lock_path)):
            index = self._index(provider_id)
            fresh = [(k, v) for k, v in items.items() if k not in index]
            if not fresh:
                return
            n_rows = data_path.stat().st_size // (4 * dimension) if data_path.exists() else 0
            with open(data_path, "ab") as f:
                for k, v in fresh:
                    f.write(np.asarray(v, dtype="<f4").tobytes())
            with open(idx_path, "a", encoding="utf-8") as f:
                for i, (k, _) in enumerate(fresh):
                    f.write(f"{k}\t{n_rows + i}\n")
            with self._lock:
                self._mem.pop(provider_id, None)


def embed_batch(texts: Sequence[str], provider: EmbeddingProvider | None,
                cache: EmbeddingCache | None = None, *, descriptor: ProviderDescriptor | None = None,
                ) -> list[EmbeddingVector]:
    """Embed texts in order, serving hits from ``cache`` and storing misses.

    Every returned vector is rounded to float32 precision, fresh or cached, so a
    warm cache returns bit-identical values. With ``provider=None`` the cache must
    be complete (``descriptor`` names the provider).
    """
    desc = provider.descriptor if provider is not None else descriptor
    if desc is None:
        raise ValueError("need a provider or a descriptor")
    for i, t in enumerate(texts):
        if not t:
            raise ValueError(f"text #{i} is empty")
    keys = [text_key(t) for t in texts]
    found = cache.get(desc.provider_id, desc.dimension, keys) if cache else {}
    missing = [i for i, k in enumerate(keys) if k not in found]
    fresh: dict[str, np.ndarray] = {}
    if missing:
        if provider is None:
            raise ProviderError("not in cache and no provider available", missing[0])
        # dedupe within the batch before calling the provider
        todo: dict[str, int] = {}
        for i in missing:
            todo.setdefault(keys[i], i)
        order = list(todo.items())
        step = max(1, provider.max_batch_size)
        for start in range(0, len(order), step):
            chunk = order[start:start + step]
            try:
                out = np.asarray(provider.embed([texts[i] for _, i in chunk]), dtype=np.float64)
            except ProviderError as e:
                idx = chunk[e.index][1] if e.index is not None and e.index < len(chunk) else chunk[0][1]
                raise ProviderError(str(e).split(": ", 1)[-1], idx) from e
            except Exception as e:
                raise ProviderError(f"provider failed: {e}", chunk[0][1]) from e
            if out.shape != (len(chunk), desc.dimension):
                raise ContractViolation(
                    f"provider {desc.provider_id} returned shape {out.shape}, expected ({len(chunk)}, {desc.dimension})")
            for (k, _), row in zip(chunk, out):
                fresh[k] = row.astype(np.float32)
        if cache:
            cache.put(desc.provider_id, desc.dimension, fresh)
    vecs = []
    for k in keys:
        v = found[k] if k in found else fresh[k]
        vecs.append(EmbeddingVector(v.astype(np.float64), desc.provider_id))
    return vecs


def mean_vector(vectors: Sequence[EmbeddingVector]) -> EmbeddingVector:
    """Componentwise mean, summed in input order (callers sort by a stable key first)."""
    if not vectors:
        raise ValueError("mean of an empty list")
    pid = vectors[0].provider_id
    dim = vectors[0].dimension
    for v in vectors:
        if v.provider_id != pid:
            raise ValueError(f"mixed providers: {pid!r} and {v.provider_id!r}")
        if v.dimension != dim:
            raise ValueError("mixed dimensions")
    acc = np.zeros(dim)
    for v in vectors:
        acc += v.values
    return EmbeddingVector(acc / len(vectors), pid)


def l2_normalize(v: EmbeddingVector) -> EmbeddingVector:
    n = math.sqrt(float(v.values @ v.values))
    if n == 0:
        raise ValueError("cannot normalize a zero vector")
    return EmbeddingVector(v.values / n, v.provider_id)


def make_provider(kind: str, *, dimension: int = DEFAULT_DIMENSION, seed: int = 0, model: str | None = None,
                  endpoint: str | None = None, batch_size: int = 64, offline: bool = False) -> EmbeddingProvider:
    if kind == "mock":
        return MockProvider(dimension, seed, batch_size)
    if kind == "hashing":
        return HashingProvider(dimension, max_batch_size=batch_size)
    if kind == "http":
        if offline:
            raise EmbeddingError("http provider is not allowed offline")
        if not endpoint or not model:
            raise EmbeddingError("http provider needs endpoint and model")
        return HTTPEmbeddingProvider(endpoint, model, dimension, max_batch_size=batch_size)
    if kind == "sentence-transformers":
        return SentenceTransformerProvider(model or "cl-tohoku/bert-base-japanese-v3", batch_size)
    raise EmbeddingError(f"unknown provider kind {kind!r}")
