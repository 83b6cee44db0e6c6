"""CLIPScore from precomputed embeddings, the CLIPScore+CIDEr hybrid metric,
and the embedding store (EMB1 binary / JSON file formats, remote service client).

Embeddings are stored unit-normalized; scores therefore reduce to clamped dot
products. Running the underlying vision-language model is out of scope here --
vectors come from files or from the companion embedding service.
"""

from __future__ import annotations

import base64
import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .errors import InvalidInputError, RemoteEmbeddingError, StoreLoadError
from .ngram_metrics import IdfTable, TokenSeq, cider_d

CLIP_WEIGHT = 2.5
EMB1_MAGIC = b"EMB1"
NORM_TOLERANCE = 1e-6


@dataclass(frozen=True)
class Embedding:
    id: str
    vector: np.ndarray

    @property
    def dim(self) -> int:
        return int(self.vector.shape[0])


def _normalize(vec: np.ndarray, owner: str) -> np.ndarray:
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1:
        raise StoreLoadError(f"embedding {owner!r} is not a flat vector")
    if not np.all(np.isfinite(arr)):
        raise StoreLoadError(f"embedding {owner!r} contains NaN or infinite entries")
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise StoreLoadError(f"embedding {owner!r} has zero norm")
    return arr / norm


class EmbeddingStore:
    """Immutable id -> unit vector map; shareable across parallel scorers."""

    def __init__(self, dim: int, entries: dict[str, Embedding]):
        self.dim = dim
        self._entries = entries

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    def get(self, key: str) -> Embedding | None:
        return self._entries.get(key)

    def ids(self) -> list[str]:
        return list(self._entries)

    @classmethod
    def from_vectors(cls, vectors: dict[str, np.ndarray]) -> "EmbeddingStore":
        entries: dict[str, Embedding] = {}
        dim = None
        for key, vec in vectors.items():
            unit = _normalize(vec, key)
            if dim is None:
                dim = unit.shape[0]
            elif unit.shape[0] != dim:
                raise StoreLoadError(
                    f"embedding {key!r} has dim {unit.shape[0]}, expected {dim}"
                )
            entries[key] = Embedding(id=key, vector=unit)
        if dim is None:
            raise StoreLoadError("embedding store is empty")
        return cls(dim=int(dim), entries=entries)


def clipscore(text_emb: Embedding, image_emb: Embedding) -> float:
    """2.5 * max(cos(text, image), 0) for unit-normalized embeddings."""
    if text_emb.dim != image_emb.dim:
        raise InvalidInputError(
            f"dimension mismatch: text {text_emb.dim} vs image {image_emb.dim}"
        )
    cos = float(np.dot(text_emb.vector, image_emb.vector))
    cos = max(-1.0, min(1.0, cos))
    return CLIP_WEIGHT * max(cos, 0.0)


@dataclass(frozen=True)
class HybridScore:
    """Weighted CLIPScore and CIDEr contributions; total is their exact sum."""

    clip: float
    cider: float

    @property
    def total(self) -> float:
        return self.clip + self.cider


def hybrid(
    candidate: TokenSeq,
    references: list[TokenSeq],
    text_emb: Embedding,
    image_emb: Embedding,
    idf: IdfTable,
    clip_weight: float = 1.0,
    cider_weight: float = 1.0,
) -> HybridScore:
    """Unnormalized sum of CLIPScore and CIDEr-D (equal weights by default)."""
    return HybridScore(
        clip=clip_weight * clipscore(text_emb, image_emb),
        cider=cider_weight * cider_d(candidate, references, idf),
    )


# --------------------------------------------------------------------------
# Store file formats
#
# EMB1 binary (little-endian):
#   magic "EMB1" | u32 dim | u32 count | count * (u16 id_len, id utf-8, dim * f32)
# JSON alternative: {"dim": D, "entries": {id: [floats...]}}
# --------------------------------------------------------------------------

def save_store_emb1(store: EmbeddingStore, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(EMB1_MAGIC)
        fh.write(struct.pack("<II", store.dim, len(store)))
        for key in store.ids():
            emb = store.get(key)
            raw = key.encode("utf-8")
            if len(raw) > 0xFFFF:
                raise StoreLoadError(f"id too long for EMB1 format: {key[:40]!r}...")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(np.asarray(emb.vector, dtype="<f4").tobytes())


def save_store_json(store: EmbeddingStore, path: str | Path) -> None:
    payload = {
        "dim": store.dim,
        "entries": {key: store.get(key).vector.tolist() for key in store.ids()},
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")


def _load_emb1(path: Path) -> dict[str, np.ndarray]:
    data = path.read_bytes()
    if data[:4] != EMB1_MAGIC:
        raise StoreLoadError(f"{path}: bad magic {data[:4]!r}, expected {EMB1_MAGIC!r}")
    try:
        dim, count = struct.unpack_from("<II", data, 4)
        offset = 12
        vectors: dict[str, np.ndarray] = {}
        for _ in range(count):
            (id_len,) = struct.unpack_from("<H", data, offset)
            offset += 2
            key = data[offset : offset + id_len].decode("utf-8")
            offset += id_len
            vec = np.frombuffer(data, dtype="<f4", count=dim, offset=offset).astype(np.float64)
            offset += 4 * dim
            if key in vectors:
                raise StoreLoadError(f"{path}: duplicate id {key!r}")
            vectors[key] = vec
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise StoreLoadError(f"{path}: truncated or corrupt EMB1 file: {exc}") from exc
    if offset != len(data):
        raise StoreLoadError(f"{path}: {len(data) - offset} trailing bytes")
    return vectors


def _load_json_store(path: Path) -> dict[str, np.ndarray]:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (UnicodeDecodeError, ValueError) as exc:
        raise StoreLoadError(
            f"{path}: neither EMB1 magic nor a valid JSON store ({exc})"
        ) from exc
    dim = raw.get("dim")
    entries = raw.get("entries")
    if not isinstance(dim, int) or not isinstance(entries, dict):
        raise StoreLoadError(f"{path}: expected {{'dim': int, 'entries': {{...}}}}")
    vectors: dict[str, np.ndarray] = {}
    for key, vals in entries.items():
        vec = np.asarray(vals, dtype=np.float64)
        if vec.shape != (dim,):
            raise StoreLoadError(f"{path}: entry {key!r} has shape {vec.shape}, expected ({dim},)")
        vectors[key] = vec
    return vectors


def load_store(path: str | Path) -> EmbeddingStore:
    """Load an EMB1 or JSON embedding store; vectors are renormalized to unit L2."""
    path = Path(path)
    if not path.exists():
        raise StoreLoadError(f"embedding store not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(4)
    vectors = _load_emb1(path) if head == EMB1_MAGIC else _load_json_store(path)
    if not vectors:
        raise StoreLoadError(f"{path}: store is empty")
    return EmbeddingStore.from_vectors(vectors)


# --------------------------------------------------------------------------
# Remote embedding service client
# --------------------------------------------------------------------------

@dataclass
class RemoteConfig:
    endpoint: str
    token: str | None = None
    expected_dim: int | None = None
    batch_size: int = 64
    concurrency: int = 4
    retries: int = 3
    timeout: float = 30.0


def _post_batch(cfg: RemoteConfig, route: str, payload: dict) -> list[np.ndarray]:
    url = cfg.endpoint.rstrip("/") + route
    headers = {"Content-Type": "application/json"}
    if cfg.token:
        headers["Authorization"] = f"Bearer {cfg.token}"
    last_err: Exception | None = None
    for attempt in range(1, cfg.retries + 1):
        try:
            resp = requests.post(url, json=payload, headers=headers, timeout=cfg.timeout)
        except requests.RequestException as exc:
            last_err = exc
            continue
        if resp.status_code != 200:
            last_err = RemoteEmbeddingError(
                f"{url} returned {resp.status_code}: {resp.text[:200]}", retries=attempt
            )
            # client errors will not improve on retry
            if 400 <= resp.status_code < 500:
                raise last_err
            continue
        body = resp.json()
        return [np.asarray(v, dtype=np.float64) for v in body["vectors"]]
    raise RemoteEmbeddingError(
        f"{url} failed after {cfg.retries} attempts: {last_err}", retries=cfg.retries
    )


def _fetch(cfg: RemoteConfig, route: str, key: str, inputs: list, ids: list[str]) -> list[Embedding]:
    if not inputs:
        return []
    batches = [
        inputs[i : i + cfg.batch_size] for i in range(0, len(inputs), cfg.batch_size)
    ]

    def run(batch: list) -> list[np.ndarray]:
        vecs = _post_batch(cfg, route, {key: batch})
        if len(vecs) != len(batch):
            raise RemoteEmbeddingError(
                f"service returned {len(vecs)} vectors for {len(batch)} inputs"
            )
        return vecs

    with ThreadPoolExecutor(max_workers=max(1, cfg.concurrency)) as pool:
        results = list(pool.map(run, batches))

    flat = [v for vecs in results for v in vecs]
    out: list[Embedding] = []
    for ident, vec in zip(ids, flat):
        if cfg.expected_dim is not None and vec.shape[0] != cfg.expected_dim:
            raise RemoteEmbeddingError(
                f"service returned dim {vec.shape[0]}, expected {cfg.expected_dim}"
            )
        try:
            out.append(Embedding(id=ident, vector=_normalize(vec, ident)))
        except StoreLoadError as exc:
            raise RemoteEmbeddingError(str(exc)) from exc
    return out


def fetch_remote_texts(texts: list[str], cfg: RemoteConfig) -> list[Embedding]:
    """One unit-normalized embedding per text, order-preserving."""
    return _fetch(cfg, "/v1/embed/text", "texts", list(texts), list(texts))


def fetch_remote_images(paths: list[str | Path], cfg: RemoteConfig) -> list[Embedding]:
    """Embed image files by uploading their base64-encoded bytes."""
    encoded = []
    for p in paths:
        try:
            encoded.append(base64.b64encode(Path(p).read_bytes()).decode("ascii"))
        except OSError as exc:
            raise RemoteEmbeddingError(f"cannot read image {p}: {exc}") from exc
    return _fetch(cfg, "/v1/embed/image", "images", encoded, [str(p) for p in paths])


def norm_error(emb: Embedding) -> float:
    """|  ||v|| - 1  | ; loaders keep this below NORM_TOLERANCE."""
    return abs(float(np.linalg.norm(emb.vector)) - 1.0)


def is_unit(emb: Embedding, tol: float = NORM_TOLERANCE) -> bool:
    return norm_error(emb) <= tol


def cosine(a: Embedding, b: Embedding) -> float:
    if a.dim != b.dim:
        raise InvalidInputError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(np.dot(a.vector, b.vector))
