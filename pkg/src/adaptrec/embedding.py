"""Dense semantic vectors: sources, file format and cosine similarity."""

from __future__ import annotations

import hashlib
import logging
import string
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
import requests

logger = logging.getLogger(__name__)

DEFAULT_DIM = 384


class EmbeddingError(ValueError):
    """Invalid vectors, malformed embedding files or unusable input text."""


class RetryableEmbeddingError(RuntimeError):
    """The embedding service could not be reached or answered with an error."""


def as_vector(values, dim: int | None = None) -> np.ndarray:
    """Convert ``values`` to a read-only float64 vector and validate it."""
    vec = np.array(values, dtype=np.float64).reshape(-1)
    if vec.size == 0:
        raise EmbeddingError("embedding vector is empty")
    if not np.all(np.isfinite(vec)):
        raise EmbeddingError("embedding vector contains NaN or Inf")
    if dim is not None and vec.size != dim:
        raise EmbeddingError(f"expected dimension {dim}, got {vec.size}")
    vec.setflags(write=False)
    return vec


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors of equal dimension.

    Raises:
        EmbeddingError: on a dimension mismatch or an all-zero vector.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise EmbeddingError(f"dimension mismatch: {a.shape[0]} vs {b.shape[0]}")
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na == 0.0 or nb == 0.0:
        raise EmbeddingError("cosine similarity undefined for a zero-norm vector")
    # na * nb is commutative, so the result is exactly symmetric
    sim = float(np.dot(a, b) / (na * nb))
    return min(1.0, max(-1.0, sim))


def normalize_rows(matrix: np.ndarray) -> np.ndarray:
    """Scale each row to unit L2 norm; zero rows raise."""
    matrix = np.asarray(matrix, dtype=np.float64)
    norms = np.linalg.norm(matrix, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise EmbeddingError("cannot normalize a zero-norm vector")
    return matrix / norms


def tokenize(text: str) -> list[str]:
    """Lowercased whitespace tokens with surrounding punctuation stripped."""
    tokens = []
    for raw in text.lower().split():
        tok = raw.strip(string.punctuation)
        if tok:
            tokens.append(tok)
    return tokens


class EmbeddingSource:
    """Base class for anything that turns text into vectors.

    Results are cached per text, so repeated queries return the very same
    (read-only) array.
    """

    kind = "abstract"

    def __init__(self, dim: int | None = None):
        self.dim = dim
        self.cache: dict[str, np.ndarray] = {}

    def _compute(self, texts: list[str]) -> list[np.ndarray]:
        raise NotImplementedError

    def embed_texts(self, texts: Iterable[str]) -> list[np.ndarray]:
        texts = list(texts)
        for text in texts:
            if not text or not text.strip():
                raise EmbeddingError("cannot embed empty text")
        missing = list(dict.fromkeys(t for t in texts if t not in self.cache))
        if missing:
            for text, vec in zip(missing, self._compute(missing)):
                vec = as_vector(vec, self.dim)
                if self.dim is None:
                    self.dim = vec.size
                self.cache[text] = vec
        return [self.cache[t] for t in texts]

    def embed_text(self, text: str) -> np.ndarray:
        return self.embed_texts([text])[0]

    def embed_item(self, item_id, text: str) -> np.ndarray:
        """Vector for a catalog item; text-driven sources ignore the id."""
        return self.embed_text(text)


class HashingEmbedder(EmbeddingSource):
    """Offline deterministic embedder.

    Every token seeds its own pseudo-random unit vector (via a stable hash),
    and a text is the renormalized mean of its token vectors. Texts sharing
    tokens therefore land close together, which is enough cluster structure
    to exercise the whole pipeline without a model server.
    """

    kind = "deterministic-test"

    def __init__(self, dim: int = DEFAULT_DIM):
        if dim <= 0:
            raise EmbeddingError("dim must be positive")
        super().__init__(dim)
        self._token_cache: dict[str, np.ndarray] = {}

    def token_vector(self, token: str) -> np.ndarray:
        vec = self._token_cache.get(token)
        if vec is None:
            digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
            rng = np.random.default_rng(int.from_bytes(digest, "little"))
            vec = rng.standard_normal(self.dim)
            vec /= np.linalg.norm(vec)
            self._token_cache[token] = vec
        return vec

    def _compute(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            # sorted so the sum is a function of the token multiset only
            tokens = sorted(tokenize(text))
            if not tokens:
                raise EmbeddingError(f"no tokens in text {text!r}")
            total = np.zeros(self.dim)
            for tok in tokens:
                total += self.token_vector(tok)
            norm = np.linalg.norm(total)
            if norm == 0.0:
                raise EmbeddingError(f"token vectors cancel out for {text!r}")
            out.append(total / norm)
        return out


class FileEmbeddingSource(EmbeddingSource):
    """Precomputed vectors keyed by item id or by literal text.

    Keyword vectors for cold-start queries live in the same file under the
    keyword string as key.
    """

    kind = "file"

    def __init__(self, path: str | Path):
        self.location = str(path)
        self.table = load_embeddings(path)
        dim = next(iter(self.table.values())).size if self.table else None
        super().__init__(dim)

    def _compute(self, texts: list[str]) -> list[np.ndarray]:
        out = []
        for text in texts:
            if text not in self.table:
                raise EmbeddingError(f"no precomputed vector for {text!r} in {self.location}")
            out.append(self.table[text])
        return out

    def embed_item(self, item_id, text: str) -> np.ndarray:
        if item_id in self.table:
            return self.table[item_id]
        raise EmbeddingError(f"no precomputed vector for item {item_id!r} in {self.location}")


class HttpEmbeddingSource(EmbeddingSource):
    """Client for a service answering ``{"texts": [...]}`` with ``{"embeddings": [...]}``."""

    kind = "http-service"

    def __init__(self, url: str, timeout: float = 30.0, batch_size: int = 256, session=None):
        super().__init__(None)
        self.location = url
        self.timeout = timeout
        self.batch_size = batch_size
        self._session = session or requests.Session()

    def _compute(self, texts: list[str]) -> list[np.ndarray]:
        out: list[np.ndarray] = []
        for start in range(0, len(texts), self.batch_size):
            batch = texts[start:start + self.batch_size]
            try:
                resp = self._session.post(self.location, json={"texts": batch}, timeout=self.timeout)
            except requests.RequestException as exc:
                raise RetryableEmbeddingError(f"embedding service unreachable: {exc}") from exc
            if resp.status_code != 200:
                raise RetryableEmbeddingError(
                    f"embedding service returned HTTP {resp.status_code}: {resp.text[:200]}"
                )
            try:
                vectors = resp.json()["embeddings"]
            except (ValueError, KeyError, TypeError) as exc:
                raise EmbeddingError(f"malformed embedding service reply: {exc}") from exc
            if len(vectors) != len(batch):
                raise EmbeddingError(
                    f"embedding service returned {len(vectors)} vectors for {len(batch)} texts"
                )
            out.extend(vectors)
        return out


def make_source(spec: str, dim: int = DEFAULT_DIM, timeout: float = 30.0) -> EmbeddingSource:
    """Build a source from a short spec string.

    ``test`` or ``test:<dim>`` gives the hashing embedder, ``file:<path>`` a
    precomputed file, and any ``http(s)://`` URL the embedding service.
    """
    if spec == "test":
        return HashingEmbedder(dim)
    if spec.startswith("test:"):
        return HashingEmbedder(int(spec.split(":", 1)[1]))
    if spec.startswith("file:"):
        return FileEmbeddingSource(spec.split(":", 1)[1])
    if spec.startswith(("http://", "https://")):
        return HttpEmbeddingSource(spec, timeout=timeout)
    raise EmbeddingError(f"unknown embedding source {spec!r}")


def _parse_id(token: str):
    try:
        return int(token)
    except ValueError:
        return token


def load_embeddings(path: str | Path) -> dict:
    """Read ``id<TAB>f1,f2,...`` records into a dict of read-only vectors.

    Numeric ids become ints; anything else (keywords) stays a string. Blank
    lines and lines starting with ``#`` are skipped.
    """
    table: dict = {}
    dim = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            key, sep, payload = line.partition("\t")
            if not sep:
                raise EmbeddingError(f"{path}:{lineno}: expected '<id>\\t<floats>'")
            try:
                vec = as_vector([float(x) for x in payload.split(",")])
            except ValueError as exc:
                raise EmbeddingError(f"{path}:{lineno}: cannot parse vector: {exc}") from exc
            except EmbeddingError as exc:
                raise EmbeddingError(f"{path}:{lineno}: {exc}") from exc
            item_id = _parse_id(key)
            if item_id in table:
                raise EmbeddingError(f"{path}:{lineno}: duplicate id {item_id!r}")
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: id {item_id!r} has dimension {vec.size}, expected {dim}"
                )
            table[item_id] = vec
    return table


def save_embeddings(path: str | Path, table: Mapping) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for key, vec in table.items():
            fh.write(f"{key}\t{','.join(repr(float(x)) for x in vec)}\n")
