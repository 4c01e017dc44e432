"""Shared fixtures: mock corpora, gateways, and scripted fake backends."""

from __future__ import annotations

import pytest

from contrastaug.config import MockParams, RunConfig, StageParams
from contrastaug.corpus import ingest, split
from contrastaug.gateway.cache import ResponseCache
from contrastaug.gateway.client import ModelGateway
from contrastaug.gateway.mock import build_mock_corpus, mock_backends


def make_mock_gateway(seed=7, cache_dir=None, **hub_kwargs):
    backends, configs = mock_backends(seed=seed, **hub_kwargs)
    cache = ResponseCache(cache_dir) if cache_dir else None
    return ModelGateway(backends, configs, cache=cache)


def make_corpus(root, n_concepts=6, images=35, seed=7, splits=(5, 15, 15)):
    build_mock_corpus(root, n_concepts, images, seed)
    manifest = ingest(root, seed=seed)
    if splits is not None:
        manifest = split(manifest, *splits)
    return manifest


@pytest.fixture
def mock_gateway(tmp_path):
    return make_mock_gateway(seed=7, cache_dir=tmp_path / "cache")


@pytest.fixture
def small_corpus(tmp_path):
    """6 concepts x 35 stub images with the 5/15/15 split, plus its root."""
    root = tmp_path / "corpus"
    manifest = make_corpus(root, n_concepts=6, images=35, seed=7)
    return manifest, root


@pytest.fixture
def run_config(tmp_path):
    cfg = RunConfig(seed=7, mock=True, cache_dir=str(tmp_path / "cache"))
    cfg.mock_params = MockParams()
    cfg.stages = StageParams()
    return cfg


class ScriptedBackend:
    """Backend returning canned replies per op; counts invocations."""

    def __init__(self, replies=None, embed_vectors=None, fail_times=0, exception=None):
        from contrastaug.errors import TransientBackendError

        self.replies = list(replies or [])
        self.embed_vectors = embed_vectors or {}
        self.calls = 0
        self.fail_times = fail_times
        self.exception = exception or TransientBackendError("scripted failure")

    def invoke(self, request, images):
        from contrastaug.records import dumps_canonical

        self.calls += 1
        if self.calls <= self.fail_times:
            raise self.exception
        op = request["op"]
        if op in ("chat", "vision_chat"):
            if not self.replies:
                raise AssertionError("scripted backend ran out of replies")
            return self.replies.pop(0).encode("utf-8")
        if op == "embed_text":
            vector = self.embed_vectors[request["text"]]
            return dumps_canonical({"vector": list(vector)}).encode("utf-8")
        if op == "embed_image":
            vector = self.embed_vectors[request["image_sha256"]]
            return dumps_canonical({"vector": list(vector)}).encode("utf-8")
        raise AssertionError(f"unexpected op {op}")
