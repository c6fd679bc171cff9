"""Embedding providers, the on-disk vector store, and all-pairs cosine scoring.

Vectors are always normalized on the client, so cosine is a plain dot
product. The store keeps float32 rows; every dot product promotes to
float64, and a pair is a hit iff that 64-bit dot is >= the threshold
exactly. Chunking never splits the reduction axis, so hit membership is
identical across block sizes and worker counts.

Store file layout (little-endian): magic "MMV1", u32 dim, u64 count,
u16 model_id length + bytes, id table of count (u16 length + bytes)
entries, then count*dim float32 row-major components. A newline-delimited
text form exists for fixtures.
"""

from __future__ import annotations

import csv
import hashlib
import io
import struct
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Protocol, Sequence

import numpy as np
from PIL import Image

from .corpus import ImageRecord
from .phrasemine import Phrase

MAGIC = b"MMV1"
NORM_TOLERANCE = 1e-6
DEFAULT_THRESHOLD = 0.3


class ProviderError(RuntimeError):
    pass


@dataclass
class EmbeddingVector:
    item_id: str
    modality: str
    dim: int
    components: np.ndarray
    model_id: str


@dataclass
class SimilarityHit:
    image_id: str
    phrase_id: str
    cosine: float


@dataclass
class EncodeReport:
    encoded: int = 0
    reused: int = 0
    skipped: list[tuple[str, str]] = field(default_factory=list)

    def skip(self, item_id: str, reason: str) -> None:
        self.skipped.append((item_id, reason))


class EmbeddingProvider(Protocol):
    model_id: str
    dim: int

    def embed_texts(self, items: Sequence[tuple[str, str]]) -> list[np.ndarray]: ...

    def embed_images(self, items: Sequence[tuple[str, bytes]]) -> list[np.ndarray | None]: ...


def normalize(vector: np.ndarray) -> np.ndarray:
    v = np.asarray(vector, dtype=np.float64)
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        raise ValueError("cannot normalize a zero vector")
    return (v / norm).astype(np.float32)


class VectorStore:
    def __init__(self, ids: list[str], matrix: np.ndarray, model_id: str):
        if matrix.ndim != 2 or len(ids) != matrix.shape[0]:
            raise ValueError("id table and row count disagree")
        self.ids = ids
        self.matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        self.model_id = model_id

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def __len__(self) -> int:
        return self.matrix.shape[0]

    def validate(self) -> None:
        if len(self.ids) != len(set(self.ids)):
            raise ValueError("duplicate ids in store")
        if len(self) == 0:
            return
        norms = np.linalg.norm(self.matrix.astype(np.float64), axis=1)
        worst = float(np.max(np.abs(norms - 1.0)))
        if worst > NORM_TOLERANCE:
            raise ValueError(f"store rows not unit-norm (max deviation {worst:.3e})")

    def save(self, path: str | Path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQ", self.dim, len(self)))
            model = self.model_id.encode("utf-8")
            fh.write(struct.pack("<H", len(model)))
            fh.write(model)
            for item_id in self.ids:
                encoded = item_id.encode("utf-8")
                fh.write(struct.pack("<H", len(encoded)))
                fh.write(encoded)
            fh.write(self.matrix.astype("<f4").tobytes(order="C"))

    @classmethod
    def load(cls, path: str | Path) -> "VectorStore":
        with open(path, "rb") as fh:
            magic = fh.read(4)
            if magic != MAGIC:
                raise ValueError(f"bad magic {magic!r}; not a vector store")
            dim, count = struct.unpack("<IQ", fh.read(12))
            (mlen,) = struct.unpack("<H", fh.read(2))
            model_id = fh.read(mlen).decode("utf-8")
            ids = []
            for _ in range(count):
                (ilen,) = struct.unpack("<H", fh.read(2))
                ids.append(fh.read(ilen).decode("utf-8"))
            raw = fh.read(count * dim * 4)
            if len(raw) != count * dim * 4:
                raise ValueError("truncated vector block")
            matrix = np.frombuffer(raw, dtype="<f4").reshape(count, dim)
        store = cls(ids, matrix.copy(), model_id)
        store.validate()
        return store

    def save_text(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# mmv1-text model_id={self.model_id} dim={self.dim}\n")
            for item_id, row in zip(self.ids, self.matrix):
                comps = " ".join(repr(float(c)) for c in row)
                fh.write(f"{item_id}\t{comps}\n")

    @classmethod
    def load_text(cls, path: str | Path) -> "VectorStore":
        ids: list[str] = []
        rows: list[list[float]] = []
        model_id = ""
        dim = 0
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("# mmv1-text"):
                raise ValueError("missing mmv1-text header")
            for part in header.split()[2:]:
                key, _, value = part.partition("=")
                if key == "model_id":
                    model_id = value
                elif key == "dim":
                    dim = int(value)
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                item_id, _, comps = line.partition("\t")
                row = [float(c) for c in comps.split()]
                if dim and len(row) != dim:
                    raise ValueError(f"row for {item_id} has dim {len(row)}, expected {dim}")
                ids.append(item_id)
                rows.append(row)
        matrix = np.array(rows, dtype=np.float32) if rows else np.zeros((0, dim), np.float32)
        store = cls(ids, matrix, model_id)
        store.validate()
        return store


class ProceduralProvider:
    """Unit vectors derived from a seeded digest of the item content.

    Fully deterministic with no model or fixture file: sha256 counter-mode
    expansion of (seed, modality, content) mapped to [-1, 1) components.
    """

    def __init__(self, dim: int = 64, seed: int = 0, model_id: str | None = None):
        self.dim = dim
        self.seed = seed
        self.model_id = model_id or f"procedural-{dim}d-seed{seed}"

    def _vector(self, modality: str, content: bytes) -> np.ndarray:
        root = hashlib.sha256(f"{self.seed}|{modality}|".encode() + content).digest()
        words: list[int] = []
        counter = 0
        while len(words) < self.dim:
            block = hashlib.sha256(root + counter.to_bytes(4, "big")).digest()
            words.extend(int.from_bytes(block[k:k + 4], "big") for k in range(0, 32, 4))
            counter += 1
        raw = np.array(words[: self.dim], dtype=np.float64)
        return raw / 2 ** 31 - 1.0

    def embed_texts(self, items: Sequence[tuple[str, str]]) -> list[np.ndarray]:
        return [self._vector("text", text.encode("utf-8")) for _, text in items]

    def embed_images(self, items: Sequence[tuple[str, bytes]]) -> list[np.ndarray | None]:
        return [self._vector("image", data) for _, data in items]


class FixtureProvider:
    """Vectors read from an mmv1-text fixture file, keyed by item id."""

    def __init__(self, path: str | Path):
        ids: list[str] = []
        rows: list[list[float]] = []
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if not header.startswith("# mmv1-text"):
                raise ValueError("fixture must be an mmv1-text file")
            self.model_id = "fixture"
            self.dim = 0
            for part in header.split()[2:]:
                key, _, value = part.partition("=")
                if key == "model_id":
                    self.model_id = value
                elif key == "dim":
                    self.dim = int(value)
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                item_id, _, comps = line.partition("\t")
                ids.append(item_id)
                rows.append([float(c) for c in comps.split()])
        self._vectors = {i: np.array(r, dtype=np.float64) for i, r in zip(ids, rows)}

    def embed_texts(self, items: Sequence[tuple[str, str]]) -> list[np.ndarray]:
        out = []
        for item_id, _ in items:
            if item_id not in self._vectors:
                raise ProviderError(f"fixture has no vector for text item {item_id}")
            out.append(self._vectors[item_id])
        return out

    def embed_images(self, items: Sequence[tuple[str, bytes]]) -> list[np.ndarray | None]:
        return [self._vectors.get(item_id) for item_id, _ in items]


class RemoteProvider:
    """Client for the embedding sidecar protocol (POST /v1/embed/{text,image})."""

    def __init__(self, base_url: str, batch_size: int = 32, max_retries: int = 2,
                 timeout: float = 60.0):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.batch_size = batch_size
        self.max_retries = max_retries
        self._client = httpx.Client(base_url=self.base_url, timeout=timeout)
        health = self._request("GET", "/v1/health")
        if not health.get("ready"):
            raise ProviderError("sidecar is not ready")
        self.model_id = health["model_id"]
        self.dim = int(health["dim"])

    def _request(self, method: str, path: str, payload: dict | None = None) -> dict:
        import httpx

        last: Exception | None = None
        for attempt in range(self.max_retries + 1):
            try:
                response = self._client.request(method, path, json=payload)
                response.raise_for_status()
                return response.json()
            except (httpx.HTTPError, ValueError) as exc:
                last = exc
                if attempt < self.max_retries:
                    time.sleep(min(2.0, 0.2 * 2 ** attempt))
        raise ProviderError(f"sidecar request {path} failed: {last}") from last

    def embed_texts(self, items: Sequence[tuple[str, str]]) -> list[np.ndarray]:
        vectors: list[np.ndarray] = []
        texts = [text for _, text in items]
        for start in range(0, len(texts), self.batch_size):
            body = self._request("POST", "/v1/embed/text",
                                 {"texts": texts[start:start + self.batch_size]})
            for vec in body["vectors"]:
                if vec is None:
                    raise ProviderError("sidecar returned a null text vector")
                vectors.append(np.asarray(vec, dtype=np.float64))
        return vectors

    def embed_images(self, items: Sequence[tuple[str, bytes]]) -> list[np.ndarray | None]:
        import base64

        vectors: list[np.ndarray | None] = []
        payloads = [base64.b64encode(data).decode("ascii") for _, data in items]
        for start in range(0, len(payloads), self.batch_size):
            body = self._request("POST", "/v1/embed/image",
                                 {"images": payloads[start:start + self.batch_size]})
            for vec in body["vectors"]:
                vectors.append(None if vec is None else np.asarray(vec, dtype=np.float64))
        return vectors


def encode_texts(provider: EmbeddingProvider, phrases: Sequence[Phrase],
                 batch_size: int = 64) -> list[EmbeddingVector]:
    """One normalized vector per phrase; phrase vectors are few and mandatory."""
    if not phrases:
        raise ValueError("no phrases to encode")
    out: list[EmbeddingVector] = []
    items = [(p.phrase_id, " ".join(p.lemma_tokens)) for p in phrases]
    for start in range(0, len(items), batch_size):
        chunk = items[start:start + batch_size]
        raw = provider.embed_texts(chunk)
        if len(raw) != len(chunk):
            raise ProviderError("provider returned wrong number of text vectors")
        for (item_id, _), vector in zip(chunk, raw):
            unit = normalize(vector)
            out.append(EmbeddingVector(item_id=item_id, modality="text",
                                       dim=unit.shape[0], components=unit,
                                       model_id=provider.model_id))
    return out


def vectors_to_store(vectors: Sequence[EmbeddingVector]) -> VectorStore:
    if not vectors:
        raise ValueError("no vectors")
    matrix = np.stack([v.components for v in vectors]).astype(np.float32)
    return VectorStore([v.item_id for v in vectors], matrix, vectors[0].model_id)


def _decodable(data: bytes) -> bool:
    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
        return True
    except Exception:
        return False


def encode_images(provider: EmbeddingProvider, records: Iterable[ImageRecord],
                  image_root: str | Path, store_path: str | Path | None = None,
                  resume: bool = False, batch_size: int = 32) -> tuple[VectorStore, EncodeReport]:
    """One normalized vector per decodable image; resumable against an existing store."""
    report = EncodeReport()
    root = Path(image_root)
    existing_ids: list[str] = []
    existing_matrix: np.ndarray | None = None
    model_id = provider.model_id
    if resume and store_path is not None and Path(store_path).exists():
        prior = VectorStore.load(store_path)
        if prior.model_id != model_id:
            raise ValueError(f"resume store model {prior.model_id!r} != provider {model_id!r}")
        existing_ids = prior.ids
        existing_matrix = prior.matrix
    have = set(existing_ids)

    pending: list[tuple[str, bytes]] = []
    new_ids: list[str] = []
    new_rows: list[np.ndarray] = []

    def flush() -> None:
        if not pending:
            return
        raw = provider.embed_images(pending)
        if len(raw) != len(pending):
            raise ProviderError("provider returned wrong number of image vectors")
        for (item_id, _), vector in zip(pending, raw):
            if vector is None:
                report.skip(item_id, "provider returned no vector")
                continue
            new_ids.append(item_id)
            new_rows.append(normalize(vector))
            report.encoded += 1
        pending.clear()

    for rec in records:
        if rec.image_id in have:
            report.reused += 1
            continue
        path = root / rec.storage_path
        try:
            data = path.read_bytes()
        except OSError as exc:
            report.skip(rec.image_id, f"unreadable: {exc}")
            continue
        if not _decodable(data):
            report.skip(rec.image_id, "undecodable image")
            continue
        pending.append((rec.image_id, data))
        if len(pending) >= batch_size:
            flush()
    flush()

    ids = existing_ids + new_ids
    if existing_matrix is not None and new_rows:
        matrix = np.vstack([existing_matrix, np.stack(new_rows)])
    elif existing_matrix is not None:
        matrix = existing_matrix
    elif new_rows:
        matrix = np.stack(new_rows)
    else:
        matrix = np.zeros((0, provider.dim), dtype=np.float32)
    store = VectorStore(ids, matrix, model_id)
    store.validate()
    if store_path is not None:
        store.save(store_path)
    return store, report


def cosine(u: Sequence[float] | np.ndarray, v: Sequence[float] | np.ndarray) -> float:
    """Dot product of unit vectors, accumulated in float64."""
    a = np.asarray(u, dtype=np.float64)
    b = np.asarray(v, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.dot(a, b))


def score_all(images: VectorStore, phrases: VectorStore,
              threshold: float = DEFAULT_THRESHOLD, block_rows: int = 2048,
              workers: int = 1) -> list[SimilarityHit]:
    """Every (image, phrase) pair with 64-bit dot >= threshold, computed in
    row blocks and returned sorted by (image_id, phrase_id)."""
    if images.model_id != phrases.model_id:
        raise ValueError(f"model mismatch: images {images.model_id!r} vs "
                         f"phrases {phrases.model_id!r}")
    if images.dim != phrases.dim:
        raise ValueError(f"dim mismatch: {images.dim} vs {phrases.dim}")
    images.validate()
    phrases.validate()
    if len(images) == 0 or len(phrases) == 0:
        return []

    phrase_matrix = phrases.matrix.astype(np.float64).T
    blocks = [(start, min(start + block_rows, len(images)))
              for start in range(0, len(images), block_rows)]

    def score_block(bounds: tuple[int, int]) -> list[SimilarityHit]:
        start, end = bounds
        block = images.matrix[start:end].astype(np.float64)
        sims = block @ phrase_matrix
        rows, cols = np.nonzero(sims >= threshold)
        return [SimilarityHit(image_id=images.ids[start + r],
                              phrase_id=phrases.ids[c],
                              cosine=float(sims[r, c]))
                for r, c in zip(rows.tolist(), cols.tolist())]

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(score_block, blocks))
    else:
        chunks = [score_block(b) for b in blocks]
    hits = [hit for chunk in chunks for hit in chunk]
    hits.sort(key=lambda h: (h.image_id, h.phrase_id))
    return hits


def top_k(images: VectorStore, phrase_vector: Sequence[float] | np.ndarray,
          k: int) -> list[tuple[str, float]]:
    """k highest-cosine image ids; descending cosine, ties by image_id."""
    if k < 1:
        raise ValueError("k must be >= 1")
    query = np.asarray(phrase_vector, dtype=np.float64)
    if query.shape != (images.dim,):
        raise ValueError(f"query dim {query.shape} does not match store dim {images.dim}")
    sims = images.matrix.astype(np.float64) @ query
    ranked = sorted(zip(images.ids, sims.tolist()), key=lambda t: (-t[1], t[0]))
    return [(item_id, float(sim)) for item_id, sim in ranked[:k]]


def write_hits(hits: Iterable[SimilarityHit], dest: str | Path) -> int:
    n = 0
    with open(dest, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["image_id", "phrase_id", "cosine"])
        for hit in hits:
            writer.writerow([hit.image_id, hit.phrase_id, f"{hit.cosine:.6f}"])
            n += 1
    return n


def read_hits(path: str | Path) -> list[SimilarityHit]:
    hits = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            hits.append(SimilarityHit(image_id=row["image_id"],
                                      phrase_id=row["phrase_id"],
                                      cosine=float(row["cosine"])))
    return hits
