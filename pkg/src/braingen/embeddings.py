"""Condition-embedding sources: precomputed file pair, deterministic
synthetic generator, or a remote embedding service.

File pair: `embeddings.f32` (little-endian float32, row-major n x dim)
and `embeddings.index.json` ({dim, ids: [...]}, row order).
"""
from __future__ import annotations

import base64
import difflib
import hashlib
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .conditioning import ConditionEmbedding
from .errors import DataError, FormatError, LookupDataError


def index_path_for(data_path: Path) -> Path:
    name = data_path.name
    if not name.endswith(".f32"):
        raise FormatError(f"embedding file must end in .f32, got {name}")
    return data_path.with_name(name[: -len(".f32")] + ".index.json")


@dataclass
class EmbeddingIndex:
    dim: int
    image_ids: list[str]
    vectors: np.ndarray
    source: str = "file"
    _rows: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        if len(set(self.image_ids)) != len(self.image_ids):
            raise FormatError("embedding index: duplicate image ids")
        if self.vectors.shape != (len(self.image_ids), self.dim):
            raise FormatError(
                f"embedding index: {self.vectors.shape} rows for "
                f"{len(self.image_ids)} ids of width {self.dim}"
            )
        if not np.all(np.isfinite(self.vectors)):
            raise FormatError("embedding index: non-finite vector entries")
        self._rows = {image_id: i for i, image_id in enumerate(self.image_ids)}

    def get(self, image_id: str) -> ConditionEmbedding:
        return get_embedding(self, image_id)


def load_embedding_file(path, expected_dim: int | None = None) -> EmbeddingIndex:
    path = Path(path)
    idx_path = index_path_for(path)
    for p in (path, idx_path):
        if not p.exists():
            raise FormatError(f"missing embedding file {p}")
    with open(idx_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    if "dim" not in meta or "ids" not in meta:
        raise FormatError(f"{idx_path}: needs fields 'dim' and 'ids'")
    dim, ids = int(meta["dim"]), list(meta["ids"])
    if expected_dim is not None and dim != expected_dim:
        raise FormatError(
            f"{path}: embedding width {dim} does not match the configured "
            f"cross-attention dimension {expected_dim}"
        )
    raw = np.fromfile(path, dtype="<f4")
    if raw.size != len(ids) * dim:
        raise FormatError(
            f"{path}: {raw.size} floats for {len(ids)} ids of width {dim}"
        )
    vectors = raw.reshape(len(ids), dim).astype(np.float64)
    return EmbeddingIndex(dim=dim, image_ids=ids, vectors=vectors, source="file")


def write_embedding_file(path, index: EmbeddingIndex) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    index.vectors.astype("<f4").tofile(path)
    with open(index_path_for(path), "w", encoding="utf-8") as fh:
        json.dump({"dim": index.dim, "ids": index.image_ids}, fh, indent=0)
    return path


def get_embedding(index: EmbeddingIndex, image_id: str) -> ConditionEmbedding:
    row = index._rows.get(image_id)
    if row is None:
        near = difflib.get_close_matches(image_id, index.image_ids, n=3)
        raise LookupDataError(f"unknown image id {image_id!r}; nearest: {near}")
    return ConditionEmbedding(tokens=index.vectors[row][None, :], image_id=image_id)


def synthetic_embedding(seed: int, image_id: str, dim: int) -> np.ndarray:
    """Unit-norm vector deterministically derived from (seed, image_id)."""
    if dim < 1:
        raise DataError(f"embedding dim must be >= 1, got {dim}")
    digest = hashlib.sha256(image_id.encode("utf-8")).digest()
    entropy = [seed & 0xFFFFFFFF] + [int.from_bytes(digest[i:i + 4], "little")
                                     for i in range(0, 16, 4)]
    rng = np.random.default_rng(np.random.SeedSequence(entropy))
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)


def synthetic_index(seed: int, image_ids: list[str], dim: int) -> EmbeddingIndex:
    vectors = np.stack([synthetic_embedding(seed, i, dim) for i in image_ids])
    return EmbeddingIndex(dim=dim, image_ids=list(image_ids), vectors=vectors,
                          source="synthetic")


class RemoteEmbeddingProvider:
    """Fetches embeddings from a service; caches by image_id.

    Protocol: POST {base_url}/embed with JSON {image_id, image_b64};
    response JSON {image_id, dim, vector}. Transport errors surface as
    DataError, never as silent fallbacks.
    """

    def __init__(self, base_url: str, dim: int, image_bytes_for=None, session=None):
        import requests

        self.base_url = base_url.rstrip("/")
        self.dim = dim
        self.image_bytes_for = image_bytes_for or (lambda image_id: b"")
        self.session = session or requests.Session()
        self._cache: dict[str, ConditionEmbedding] = {}
        self._lock = threading.Lock()

    def get(self, image_id: str) -> ConditionEmbedding:
        with self._lock:
            cached = self._cache.get(image_id)
        if cached is not None:
            return cached
        payload = {
            "image_id": image_id,
            "image_b64": base64.b64encode(self.image_bytes_for(image_id)).decode("ascii"),
        }
        try:
            resp = self.session.post(f"{self.base_url}/embed", json=payload, timeout=30)
            resp.raise_for_status()
            doc = resp.json()
        except Exception as exc:
            raise DataError(f"embedding service failed for {image_id!r}: {exc}") from exc
        if doc.get("dim") != self.dim or len(doc.get("vector", [])) != self.dim:
            raise DataError(
                f"embedding service returned width {doc.get('dim')} for {image_id!r}, "
                f"expected {self.dim}"
            )
        emb = ConditionEmbedding(tokens=np.asarray(doc["vector"], dtype=np.float64)[None, :],
                                 image_id=image_id)
        with self._lock:
            self._cache[image_id] = emb
        return emb
