"""Model backend gateway: HTTP transport, deterministic mock, cache, limits."""

from .cache import CacheEntry, ResponseCache
from .client import Embedding, ModelGateway, request_key
from .config import ROLES, BackendConfig
from .http import HttpBackend
from .mock import MockBackend, MockHub, build_mock_corpus, mock_backends

__all__ = [
    "BackendConfig",
    "CacheEntry",
    "Embedding",
    "HttpBackend",
    "MockBackend",
    "MockHub",
    "ModelGateway",
    "ResponseCache",
    "ROLES",
    "build_mock_corpus",
    "mock_backends",
    "request_key",
]
