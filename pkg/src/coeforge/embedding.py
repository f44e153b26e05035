"""Encoder contract: L2-normalized vectors for crops and step texts.

Ships three things:

* pure vector math (:func:`cosine`, :func:`normalize_vector`),
* a deterministic hashed bag-of-words test encoder (:class:`MockEncoder`)
  that understands the synthetic-crop payload produced for region-annotated
  pages, and
* :class:`RemoteEncoder`, an HTTP client for a real multimodal encoder
  service (POST /v1/embed).

Vectors are plain float tuples so results are bit-reproducible across
platforms.
"""

from __future__ import annotations

import base64
import hashlib
import json
import math
import threading
import time
from dataclasses import dataclass
from typing import Iterable, Protocol, Sequence, runtime_checkable

import httpx

from .errors import DimensionMismatch, ProviderUnavailable, ZeroVector
from .textmatch import normalize

SYNTHETIC_CROP_KIND = "synthetic-crop"

_MIN_DIMENSION = 8


@dataclass(frozen=True)
class EmbeddingVector:
    """Fixed-length real vector; providers return these L2-normalized."""

    values: tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))

    @property
    def dim(self) -> int:
        return len(self.values)


def normalize_vector(v: Sequence[float]) -> EmbeddingVector:
    """Scale a raw vector to unit Euclidean norm.

    Raises:
        ZeroVector: every component is zero.
    """
    norm = math.sqrt(math.fsum(x * x for x in v))
    if norm == 0.0:
        raise ZeroVector("cannot normalize an all-zero vector")
    return EmbeddingVector(tuple(x / norm for x in v))


def cosine(u: EmbeddingVector, v: EmbeddingVector) -> float:
    """Dot product of two normalized vectors, clamped into [-1, 1].

    Raises:
        DimensionMismatch: vectors have different lengths.
    """
    if u.dim != v.dim:
        raise DimensionMismatch(f"dimensions differ: {u.dim} vs {v.dim}")
    value = math.fsum(a * b for a, b in zip(u.values, v.values))
    return max(-1.0, min(1.0, value))


def _token_slot(token: str, d: int) -> tuple[int, float]:
    """Deterministic (bucket, sign) for a token, stable across platforms."""
    digest = hashlib.sha256(token.encode("utf-8")).digest()
    bucket = int.from_bytes(digest[:8], "big") % d
    sign = 1.0 if digest[8] & 1 else -1.0
    return bucket, sign


def _check_dimension(d: int) -> None:
    if d < _MIN_DIMENSION:
        raise ValueError(f"encoder dimension must be >= {_MIN_DIMENSION}, got {d}")


def mock_encode_text(text: str, d: int = 256) -> EmbeddingVector:
    """Hashed bag-of-words embedding of normalized tokens.

    Raises:
        ZeroVector: the text normalizes to zero tokens.
    """
    return mock_encode_weighted([(text, 1.0)], d)


def mock_encode_weighted(
    parts: Iterable[tuple[str, float]], d: int = 256
) -> EmbeddingVector:
    """Hashed bag-of-words over several texts with multiplicative weights.

    This is the mock image-side encoder: a crop over region-annotated page
    content embeds the covered region texts, each weighted by its fractional
    area overlap with the crop (weights multiply token counts before
    hashing).  Non-positive weights are skipped.

    Raises:
        ZeroVector: no tokens survive (empty crop content).
    """
    _check_dimension(d)
    accum = [0.0] * d
    for text, weight in parts:
        if weight <= 0:
            continue
        for token in normalize(text).tokens:
            bucket, sign = _token_slot(token, d)
            accum[bucket] += sign * weight
    return normalize_vector(accum)


def encode_synthetic_crop(parts: Sequence[tuple[str, float]]) -> bytes:
    """Pack weighted region texts into the synthetic-crop byte payload."""
    payload = {
        "kind": SYNTHETIC_CROP_KIND,
        "parts": [[text, weight] for text, weight in parts],
    }
    return json.dumps(payload, sort_keys=True).encode("utf-8")


def decode_synthetic_crop(data: bytes) -> list[tuple[str, float]] | None:
    """Unpack a synthetic-crop payload; None when the bytes are not one."""
    try:
        payload = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError):
        return None
    if not isinstance(payload, dict) or payload.get("kind") != SYNTHETIC_CROP_KIND:
        return None
    return [(str(text), float(weight)) for text, weight in payload["parts"]]


@runtime_checkable
class EncoderProvider(Protocol):
    """Capability contract every encoder backend satisfies."""

    @property
    def dimension(self) -> int: ...

    def embed_text(self, text: str) -> EmbeddingVector: ...

    def embed_image(self, data: bytes) -> EmbeddingVector: ...


class MockEncoder:
    """Deterministic test encoder; no model weights, no network.

    ``embed_image`` understands the synthetic-crop payload; any other byte
    blob is embedded via a single pseudo-token derived from its digest, so
    the result is still deterministic but semantically inert.
    """

    def __init__(self, dimension: int = 256):
        _check_dimension(dimension)
        self._dimension = dimension

    @property
    def dimension(self) -> int:
        return self._dimension

    def embed_text(self, text: str) -> EmbeddingVector:
        return mock_encode_text(text, self._dimension)

    def embed_image(self, data: bytes) -> EmbeddingVector:
        parts = decode_synthetic_crop(data)
        if parts is None:
            digest = hashlib.sha256(data).hexdigest()
            parts = [(f"blob{digest}", 1.0)]
        return mock_encode_weighted(parts, self._dimension)


class RemoteEncoder:
    """Client for a remote embedding service speaking POST /v1/embed.

    Request body: ``{"kind": "text", "text": ...}`` or
    ``{"kind": "image", "image_b64": <base64 PNG>}``; response:
    ``{"vector": [...], "dim": int}``.  Transport failures and non-200
    responses are retried once with exponential backoff, then surface as
    :class:`ProviderUnavailable`.  A bounded semaphore caps in-flight
    requests, so instances are safe to share across scoring threads.
    """

    def __init__(
        self,
        endpoint: str,
        dimension: int | None = None,
        timeout: float = 30.0,
        max_in_flight: int = 8,
        retry_backoff: float = 0.5,
    ):
        self._endpoint = endpoint.rstrip("/")
        self._declared_dim = dimension
        self._timeout = timeout
        self._backoff = retry_backoff
        self._semaphore = threading.Semaphore(max_in_flight)
        self._lock = threading.Lock()
        self._client = httpx.Client(timeout=timeout)

    @property
    def dimension(self) -> int:
        if self._declared_dim is None:
            raise ProviderUnavailable(
                "dimension unknown until the first embedding is fetched"
            )
        return self._declared_dim

    def close(self) -> None:
        self._client.close()

    def _post(self, body: dict) -> dict:
        url = f"{self._endpoint}/v1/embed"
        last_error: str | None = None
        for attempt in range(2):
            if attempt:
                time.sleep(self._backoff * (2 ** (attempt - 1)))
            try:
                with self._semaphore:
                    response = self._client.post(url, json=body)
            except httpx.HTTPError as exc:
                last_error = f"transport error: {exc}"
                continue
            if response.status_code != 200:
                last_error = f"HTTP {response.status_code}"
                continue
            try:
                return response.json()
            except json.JSONDecodeError:
                last_error = "response body is not JSON"
        raise ProviderUnavailable(f"{url}: {last_error}")

    def _to_vector(self, payload: dict) -> EmbeddingVector:
        vector = payload.get("vector")
        dim = payload.get("dim")
        if not isinstance(vector, list) or dim != len(vector):
            raise ProviderUnavailable(
                f"malformed embed response (dim={dim!r}, |vector|="
                f"{len(vector) if isinstance(vector, list) else 'n/a'})"
            )
        with self._lock:
            if self._declared_dim is None:
                self._declared_dim = len(vector)
        if len(vector) != self._declared_dim:
            raise ProviderUnavailable(
                f"dimension changed: expected {self._declared_dim}, "
                f"got {len(vector)}"
            )
        return normalize_vector([float(v) for v in vector])

    def embed_text(self, text: str) -> EmbeddingVector:
        return self._to_vector(self._post({"kind": "text", "text": text}))

    def embed_image(self, data: bytes) -> EmbeddingVector:
        image_b64 = base64.b64encode(data).decode("ascii")
        return self._to_vector(self._post({"kind": "image", "image_b64": image_b64}))
