"""Text-embedding backends used at materialization.

Two kinds are provided: ``hash_stub``, a fully deterministic offline embedder
(FNV-1a seed, splitmix64 stream, L2-normalized), and ``http``, a client for an
OpenAI-compatible ``/embeddings`` endpoint.  Both map a batch of texts to a
``[B, dim]`` float64 matrix in input order; missing texts (``None``) become
all-zero rows so missingness stays representable downstream.
"""

from __future__ import annotations

import os
import time
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import (
    DimensionMismatchError,
    EmbedTimeoutError,
    HttpError,
    MissingEmbedderError,
)
from .hashutil import fnv1a_64, splitmix64_stream, to_symmetric_interval

_KINDS = ("hash_stub", "http")


@dataclass(frozen=True)
class EmbedderSpec:
    """Configuration of one embedding backend.

    ``api_key_env`` names the environment variable holding the bearer token;
    credentials are never passed inline.
    """

    kind: str
    dim: int
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str | None = None
    batch_size: int = 64
    timeout: float = 30.0
    max_retries: int = 3
    retry_delay: float = 0.5

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown embedder kind {self.kind!r} (known: {_KINDS})")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http embedder needs an endpoint")

    @property
    def identifier(self) -> str:
        """Stable string identifying the backend for cache keys."""
        if self.kind == "hash_stub":
            return f"hash_stub:{self.dim}"
        return f"http:{self.model or 'default'}@{self.endpoint}:{self.dim}"


def hash_embed(text: str, dim: int) -> np.ndarray:
    """Deterministic unit vector for ``text``.

    The seed is the FNV-1a-64 hash of the UTF-8 bytes; ``dim`` raw values are
    drawn from the splitmix64 stream, mapped to ``[-1, 1)`` via
    ``(x >> 11) * 2**-53 * 2 - 1``, then L2-normalized.  Identical in every
    implementation language by construction.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    seed = fnv1a_64(text.encode("utf-8"))
    raw = to_symmetric_interval(splitmix64_stream(seed, dim))
    norm = float(np.linalg.norm(raw))
    if norm == 0.0:  # astronomically unlikely; keep the unit-norm contract
        raw[0] = 1.0
        norm = 1.0
    return raw / norm


class HashStubEmbedder:
    """Offline deterministic embedder for tests and air-gapped runs."""

    def __init__(self, spec: EmbedderSpec):
        if spec.kind != "hash_stub":
            raise ValueError("spec.kind must be 'hash_stub'")
        self.spec = spec

    def embed_batch(self, texts: Sequence[str | None]) -> np.ndarray:
        if len(texts) < 1:
            raise ValueError("embed_batch needs at least one text")
        out = np.zeros((len(texts), self.spec.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            if text is not None:
                out[i] = hash_embed(text, self.spec.dim)
        return out


class HttpEmbedder:
    """Client for an OpenAI-compatible embeddings endpoint.

    Sends ``{"model": ..., "input": [texts]}`` to ``{endpoint}/embeddings`` in
    chunks of ``batch_size`` and reassembles rows by each item's ``index``
    field, never by array position.  Retries idempotently on 429/5xx with
    exponential backoff, at most ``max_retries`` times.
    """

    RETRYABLE = frozenset({429} | set(range(500, 600)))

    def __init__(self, spec: EmbedderSpec):
        if spec.kind != "http":
            raise ValueError("spec.kind must be 'http'")
        self.spec = spec

    def embed_batch(self, texts: Sequence[str | None]) -> np.ndarray:
        if len(texts) < 1:
            raise ValueError("embed_batch needs at least one text")
        out = np.zeros((len(texts), self.spec.dim), dtype=np.float64)
        present = [(i, t) for i, t in enumerate(texts) if t is not None]
        bs = self.spec.batch_size
        for start in range(0, len(present), bs):
            chunk = present[start: start + bs]
            vectors = self._request([t for _, t in chunk])
            for (row, _), vec in zip(chunk, vectors):
                out[row] = vec
        return out

    def _request(self, texts: list[str]) -> list[np.ndarray]:
        import requests

        url = self.spec.endpoint.rstrip("/") + "/embeddings"
        body = {"model": self.spec.model or "default", "input": list(texts)}
        headers = {"Content-Type": "application/json"}
        if self.spec.api_key_env:
            token = os.environ.get(self.spec.api_key_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        attempt = 0
        while True:
            try:
                resp = requests.post(url, json=body, headers=headers, timeout=self.spec.timeout)
            except requests.Timeout as exc:
                raise EmbedTimeoutError(f"embedding request timed out after {self.spec.timeout}s") from exc
            except requests.ConnectionError as exc:
                raise HttpError(0, f"connection failed: {exc}") from exc
            if resp.status_code == 200:
                return self._parse(resp, len(texts))
            if resp.status_code in self.RETRYABLE and attempt < self.spec.max_retries:
                time.sleep(self.spec.retry_delay * (2 ** attempt))
                attempt += 1
                continue
            raise HttpError(resp.status_code, resp.text)

    def _parse(self, resp, expected: int) -> list[np.ndarray]:
        try:
            data = resp.json()["data"]
        except (ValueError, KeyError) as exc:
            raise HttpError(resp.status_code, f"malformed response body: {resp.text[:200]}") from exc
        if len(data) != expected:
            raise HttpError(resp.status_code, f"expected {expected} embeddings, got {len(data)}")
        rows: list[np.ndarray | None] = [None] * expected
        for item in data:
            vec = np.asarray(item["embedding"], dtype=np.float64)
            if vec.shape != (self.spec.dim,):
                raise DimensionMismatchError(
                    f"endpoint returned dim {vec.shape}, spec says shape ({self.spec.dim},)"
                )
            rows[int(item["index"])] = vec
        if any(r is None for r in rows):
            raise HttpError(resp.status_code, "response is missing row indices")
        return rows  # type: ignore[return-value]


def make_embedder(spec: EmbedderSpec):
    if spec.kind == "hash_stub":
        return HashStubEmbedder(spec)
    return HttpEmbedder(spec)


def embed_batch(spec: EmbedderSpec, texts: Sequence[str | None]) -> np.ndarray:
    """One-shot convenience: build the backend for ``spec`` and embed."""
    return make_embedder(spec).embed_batch(texts)


class EmbedderRegistry:
    """Per-column embedder lookup with a global default."""

    def __init__(self, default=None, per_column: dict[str, object] | None = None):
        self.default = default
        self.per_column = dict(per_column or {})

    def for_column(self, name: str):
        emb = self.per_column.get(name, self.default)
        if emb is None:
            raise MissingEmbedderError(f"no embedder registered for column {name!r}")
        return emb
