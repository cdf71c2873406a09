"""Embeddings client, flat cosine-similarity index, and MMR search.

The index is exact (no ANN structures): one float32 matrix plus the chunk
texts, persisted as three files so a build survives restarts. Search embeds
the query, takes the ``fetch_k`` nearest chunks by cosine, then re-ranks
that pool with Maximal Marginal Relevance so the returned passages are
relevant but not redundant.

Ties are always broken toward the lexicographically smallest chunk_id;
combined with the deterministic stub embedder this makes every retrieval
reproducible.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests

from .corpus import Chunk, read_chunks_jsonl, write_chunks_jsonl
from .errors import (
    ConfigError,
    CorruptIndexError,
    DimensionError,
    EmptyIndexError,
    TransportError,
    ZeroVectorError,
)

DEFAULT_BATCH_SIZE = 64
INDEX_VERSION = 1
META_FILE = "index.meta.json"
VECTORS_FILE = "vectors.f32"
CHUNKS_FILE = "chunks.jsonl"


# --- embedding backends -----------------------------------------------------

@dataclass
class EmbeddingEndpointConfig:
    base_url: str
    model: str = "mxbai-embed-large-v1"
    batch_size: int = DEFAULT_BATCH_SIZE
    api_key: str | None = None
    timeout_s: float = 60.0
    max_retries: int = 3
    retry_base_s: float = 0.5


class HttpEmbeddingBackend:
    """POST {base_url}/embeddings with {"model","input":[...]}; responses
    carry {"data":[{"index","embedding":[...]}]} and are re-ordered by index."""

    def __init__(self, config: EmbeddingEndpointConfig):
        self.config = config
        self.model = config.model

    def embed_batch(self, texts: list[str]) -> list[list[float]]:
        cfg = self.config
        url = cfg.base_url.rstrip("/") + "/embeddings"
        headers = {"Content-Type": "application/json"}
        if cfg.api_key:
            headers["Authorization"] = f"Bearer {cfg.api_key}"
        payload = {"model": cfg.model, "input": texts}
        last_err: Exception | None = None
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                time.sleep(cfg.retry_base_s * 2 ** (attempt - 1))
            try:
                resp = requests.post(url, json=payload, headers=headers, timeout=cfg.timeout_s)
                resp.raise_for_status()
                data = resp.json()["data"]
                ordered = sorted(data, key=lambda item: item["index"])
                return [item["embedding"] for item in ordered]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_err = exc
        raise TransportError(f"embeddings endpoint failed after {cfg.max_retries + 1} attempts: {last_err}")


class StubEmbeddingBackend:
    """Deterministic offline embedder: vectors are seeded from a hash of
    (model, text), so equal texts always embed identically. Every batch
    request is recorded for test assertions."""

    def __init__(self, dim: int = 32, model: str = "stub-embed"):
        if dim < 1:
            raise ConfigError(f"embedding dim must be >= 1, got {dim}")
        self.dim = dim
        self.model = model
        self.requests: list[list[str]] = []

    def embed_batch(self, texts: list[str]) -> list[list[float]]:
        self.requests.append(list(texts))
        return [self._vector(t) for t in texts]

    def _vector(self, text: str) -> list[float]:
        seed = hashlib.sha256(f"{self.model}::{text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(seed[:8], "little"))
        return rng.standard_normal(self.dim).tolist()


def embed_texts(texts: list[str], backend, batch_size: int = DEFAULT_BATCH_SIZE) -> list[np.ndarray]:
    """One L2-normalized float32 vector per input text, in input order."""
    if not texts:
        raise ValueError("texts must be non-empty")
    if any(not t for t in texts):
        raise ValueError("every text must be non-empty")
    if batch_size < 1:
        raise ConfigError(f"batch_size must be >= 1, got {batch_size}")

    raw: list[list[float]] = []
    for i in range(0, len(texts), batch_size):
        raw.extend(backend.embed_batch(texts[i : i + batch_size]))

    out = []
    for values in raw:
        vec = np.asarray(values, dtype=np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise ZeroVectorError("backend returned a zero vector")
        out.append((vec / norm).astype(np.float32))
    return out


# --- similarity and MMR ------------------------------------------------------

def cosine(a, b) -> float:
    """dot(a,b) / (|a||b|); raises on zero vectors or mismatched dims."""
    av = np.asarray(a, dtype=np.float64)
    bv = np.asarray(b, dtype=np.float64)
    if av.shape != bv.shape:
        raise DimensionError(f"dimension mismatch: {av.shape} vs {bv.shape}")
    na = np.linalg.norm(av)
    nb = np.linalg.norm(bv)
    if na == 0.0 or nb == 0.0:
        raise ZeroVectorError("cosine undefined for zero vectors")
    return float(np.dot(av, bv) / (na * nb))


def mmr_select(
    query,
    pool: list[tuple[str, np.ndarray]],
    k: int = 10,
    lambda_mult: float = 0.5,
) -> list[str]:
    """Greedy MMR: each step picks the unselected candidate maximizing
    lambda*sim(query, d) - (1-lambda)*max_selected sim(d, s).

    Ties go to the smallest chunk_id. Returns min(k, len(pool)) ids in
    selection order.
    """
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if not 0.0 <= lambda_mult <= 1.0:
        raise ConfigError(f"lambda must be in [0, 1], got {lambda_mult}")
    if not pool:
        raise ValueError("pool must be non-empty")

    candidates = sorted(pool, key=lambda item: item[0])
    by_id = dict(candidates)
    query_sim = {cid: cosine(query, vec) for cid, vec in candidates}

    selected: list[str] = []
    while len(selected) < min(k, len(candidates)):
        best_id = None
        best_score = None
        for cid, vec in candidates:
            if cid in selected:
                continue
            penalty = max((cosine(vec, by_id[s]) for s in selected), default=0.0)
            score = lambda_mult * query_sim[cid] - (1.0 - lambda_mult) * penalty
            if best_score is None or score > best_score:
                best_id, best_score = cid, score
        selected.append(best_id)
    return selected


# --- index -------------------------------------------------------------------

@dataclass
class VectorIndex:
    dim: int
    embedding_model: str
    chunk_ids: list[str]
    vectors: np.ndarray  # (count, dim) float32, rows L2-normalized
    chunk_store: dict[str, Chunk] = field(repr=False)

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError(f"index dim must be >= 1, got {self.dim}")
        if set(self.chunk_ids) != set(self.chunk_store):
            raise CorruptIndexError("entry ids and chunk store disagree")

    def __len__(self) -> int:
        return len(self.chunk_ids)


@dataclass(frozen=True)
class RetrievalResult:
    chunk_id: str
    text: str
    query_similarity: float
    rank: int


def build_index(chunks: list[Chunk], backend, batch_size: int = DEFAULT_BATCH_SIZE) -> VectorIndex:
    if not chunks:
        raise EmptyIndexError("cannot build an index from zero chunks")
    vectors = embed_texts([c.text for c in chunks], backend, batch_size=batch_size)
    matrix = np.stack(vectors).astype(np.float32)
    return VectorIndex(
        dim=matrix.shape[1],
        embedding_model=getattr(backend, "model", "unknown"),
        chunk_ids=[c.chunk_id for c in chunks],
        vectors=matrix,
        chunk_store={c.chunk_id: c for c in chunks},
    )


def search(
    index: VectorIndex,
    query_text: str,
    backend,
    k: int = 10,
    fetch_k: int | None = None,
    lambda_mult: float = 0.5,
) -> list[RetrievalResult]:
    """Embed the query, take fetch_k nearest by cosine, diversify with MMR."""
    if len(index) == 0:
        raise EmptyIndexError("search against an empty index")
    if fetch_k is None:
        fetch_k = max(20, 2 * k)
    query_vec = embed_texts([query_text], backend)[0]
    if query_vec.shape[0] != index.dim:
        raise DimensionError(f"query dim {query_vec.shape[0]} != index dim {index.dim}")

    row_of = {cid: i for i, cid in enumerate(index.chunk_ids)}
    sims = {cid: cosine(query_vec, index.vectors[row_of[cid]]) for cid in index.chunk_ids}
    nearest = sorted(index.chunk_ids, key=lambda cid: (-sims[cid], cid))[:fetch_k]
    pool = [(cid, index.vectors[row_of[cid]]) for cid in nearest]

    chosen = mmr_select(query_vec, pool, k=min(k, len(pool)), lambda_mult=lambda_mult)
    return [
        RetrievalResult(chunk_id=cid, text=index.chunk_store[cid].text, query_similarity=sims[cid], rank=rank)
        for rank, cid in enumerate(chosen)
    ]


# --- persistence --------------------------------------------------------------

def index_save(index: VectorIndex, directory: str | Path) -> None:
    """Write meta, raw little-endian float32 vectors, and chunk texts.

    load(save(index)) reproduces entry order and bit-identical vectors.
    """
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    meta = {
        "dim": index.dim,
        "count": len(index),
        "embedding_model": index.embedding_model,
        "normalized": True,
        "version": INDEX_VERSION,
    }
    (out / META_FILE).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    (out / VECTORS_FILE).write_bytes(index.vectors.astype("<f4").tobytes(order="C"))
    write_chunks_jsonl([index.chunk_store[cid] for cid in index.chunk_ids], out / CHUNKS_FILE)


def index_load(directory: str | Path) -> VectorIndex:
    root = Path(directory)
    meta_path = root / META_FILE
    if not meta_path.is_file():
        raise CorruptIndexError(f"missing {META_FILE} in {directory}")
    try:
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise CorruptIndexError(f"unreadable {META_FILE}: {exc}") from exc

    if meta.get("version") != INDEX_VERSION:
        raise CorruptIndexError(f"unsupported index version {meta.get('version')!r}")
    dim = int(meta.get("dim", 0))
    count = int(meta.get("count", -1))
    if dim < 1 or count < 0:
        raise CorruptIndexError(f"bad meta values dim={dim} count={count}")

    vec_path = root / VECTORS_FILE
    if not vec_path.is_file():
        raise CorruptIndexError(f"missing {VECTORS_FILE} in {directory}")
    blob = vec_path.read_bytes()
    expected = count * dim * 4
    if len(blob) != expected:
        raise CorruptIndexError(
            f"{VECTORS_FILE} holds {len(blob)} bytes but meta implies {expected} ({count} x {dim} float32)"
        )
    vectors = np.frombuffer(blob, dtype="<f4").reshape(count, dim).astype(np.float32)
    if count and meta.get("normalized", True):
        norms = np.linalg.norm(vectors.astype(np.float64), axis=1)
        if not np.all(np.abs(norms - 1.0) < 1e-3):
            raise CorruptIndexError(f"{VECTORS_FILE} rows are not L2-normalized")

    chunks_path = root / CHUNKS_FILE
    if not chunks_path.is_file():
        raise CorruptIndexError(f"missing {CHUNKS_FILE} in {directory}")
    chunks = read_chunks_jsonl(chunks_path)
    if len(chunks) != count:
        raise CorruptIndexError(f"{CHUNKS_FILE} holds {len(chunks)} chunks but meta implies {count}")

    return VectorIndex(
        dim=dim,
        embedding_model=str(meta.get("embedding_model", "unknown")),
        chunk_ids=[c.chunk_id for c in chunks],
        vectors=vectors,
        chunk_store={c.chunk_id: c for c in chunks},
    )
