"""Uniform client layer over the chat / vision / embed / imagegen backends.

The gateway owns everything the pipeline relies on regardless of which
backend is plugged in: content-addressed response caching, bounded retries,
a counting semaphore per role, and unit normalization of embeddings (cosine
similarity downstream is then a plain dot product). Backends only transport
a canonicalized request to a model and hand back response bytes.
"""

from __future__ import annotations

import base64
import hashlib
import json
import logging
import threading
from dataclasses import dataclass, field

import numpy as np

from ..errors import (
    BackendError,
    ConfigurationError,
    IntegrityError,
    TransientBackendError,
)
from ..records import dumps_canonical
from .cache import ResponseCache
from .config import BackendConfig

log = logging.getLogger(__name__)


@dataclass
class Embedding:
    vector: np.ndarray
    space_id: str

    def dot(self, other: "Embedding") -> float:
        if self.space_id != other.space_id:
            raise IntegrityError(
                f"embedding space mismatch: {self.space_id!r} vs {other.space_id!r}"
            )
        return float(np.dot(self.vector, other.vector))


@dataclass
class RoleStats:
    calls: int = 0
    cache_hits: int = 0
    in_flight: int = 0
    max_in_flight: int = 0
    rejections: int = 0
    ops: dict = field(default_factory=dict)


def request_key(role: str, model_id: str, request: dict) -> str:
    payload = dumps_canonical({"model": model_id, "request": request, "role": role})
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _canonical_messages(messages) -> list[dict]:
    out = []
    for msg in messages:
        out.append({"role": msg["role"], "content": msg["content"]})
    return out


class ModelGateway:
    """Facade the pipeline talks to; one backend object per configured role."""

    def __init__(
        self,
        backends: dict[str, object],
        configs: dict[str, BackendConfig],
        cache: ResponseCache | None = None,
    ):
        self._backends = backends
        self._configs = configs
        self._cache = cache
        self._semaphores = {
            role: threading.BoundedSemaphore(cfg.max_concurrent)
            for role, cfg in configs.items()
        }
        self._lock = threading.Lock()
        self.stats: dict[str, RoleStats] = {role: RoleStats() for role in backends}
        self._space_dims: dict[str, int] = {}

    # ---- operations ----

    def chat(self, messages, decode: dict | None = None) -> str:
        request = {"op": "chat", "messages": _canonical_messages(messages)}
        if decode:
            request["decode"] = dict(sorted(decode.items()))
        return self._call("chat", request, []).decode("utf-8")

    def vision_chat(self, image: bytes, messages, decode: dict | None = None) -> str:
        self._check_image_size("vision", image)
        request = {
            "op": "vision_chat",
            "messages": _canonical_messages(messages),
            "image_sha256": hashlib.sha256(image).hexdigest(),
        }
        if decode:
            request["decode"] = dict(sorted(decode.items()))
        return self._call("vision", request, [image]).decode("utf-8")

    def embed_text(self, text: str) -> Embedding:
        request = {"op": "embed_text", "text": text}
        return self._decode_embedding(self._call("embed", request, []))

    def embed_image(self, image: bytes) -> Embedding:
        self._check_image_size("embed", image)
        request = {"op": "embed_image", "image_sha256": hashlib.sha256(image).hexdigest()}
        return self._decode_embedding(self._call("embed", request, [image]))

    def generate_image(self, prompt: str, n: int, seed: int) -> list[bytes]:
        if n < 1:
            raise ValueError("generate_image requires n >= 1")
        request = {"op": "generate_image", "prompt": prompt, "n": n, "seed": seed}
        payload = json.loads(self._call("imagegen", request, []))
        images = [base64.b64decode(item) for item in payload.get("images", [])]
        rejected = int(payload.get("rejected", 0))
        if rejected:
            with self._lock:
                self.stats["imagegen"].rejections += rejected
            log.warning("image backend rejected %d of %d generations", rejected, n)
        if not images:
            raise BackendError(f"image backend produced zero images for prompt {prompt!r}")
        return images

    # ---- plumbing ----

    def _config(self, role: str) -> BackendConfig:
        try:
            return self._configs[role]
        except KeyError:
            raise ConfigurationError(f"no backend configured for role {role!r}") from None

    def _check_image_size(self, role: str, image: bytes) -> None:
        limit = self._config(role).max_image_bytes
        if len(image) > limit:
            raise ConfigurationError(
                f"image of {len(image)} bytes exceeds the {role} backend limit of {limit}"
            )

    def _decode_embedding(self, data: bytes) -> Embedding:
        payload = json.loads(data)
        vector = np.asarray(payload["vector"], dtype=np.float64)
        space_id = self._config("embed").model_id
        known = self._space_dims.setdefault(space_id, vector.shape[0])
        if vector.shape[0] != known:
            raise IntegrityError(
                f"embedding dimension {vector.shape[0]} != {known} for space {space_id!r}"
            )
        norm = float(np.linalg.norm(vector))
        if norm == 0.0:
            raise IntegrityError("backend returned a zero embedding vector")
        return Embedding(vector=vector / norm, space_id=space_id)

    def _call(self, role: str, request: dict, images: list[bytes]) -> bytes:
        if role not in self._backends:
            raise ConfigurationError(f"no backend configured for role {role!r}")
        cfg = self._config(role)
        key = request_key(role, cfg.model_id, request)
        stats = self.stats[role]
        if self._cache is not None:
            entry = self._cache.get(role, key)
            if entry is not None:
                with self._lock:
                    stats.cache_hits += 1
                    stats.ops[request["op"]] = stats.ops.get(request["op"], 0)
                return entry.value

        backend = self._backends[role]
        attempts = cfg.retries + 1
        last_error: Exception | None = None
        data: bytes | None = None
        for _ in range(attempts):
            try:
                with self._semaphores[role]:
                    with self._lock:
                        stats.in_flight += 1
                        stats.max_in_flight = max(stats.max_in_flight, stats.in_flight)
                    try:
                        data = backend.invoke(request, images)
                    finally:
                        with self._lock:
                            stats.in_flight -= 1
                break
            except TransientBackendError as exc:
                last_error = exc
                continue
        if data is None:
            raise BackendError(
                f"{role} backend failed after {attempts} attempt(s): {last_error}",
                request_key=key,
            )
        with self._lock:
            stats.calls += 1
            stats.ops[request["op"]] = stats.ops.get(request["op"], 0) + 1
        if self._cache is not None:
            self._cache.put(role, key, data, {"model_id": cfg.model_id, "op": request["op"], "role": role})
        return data
