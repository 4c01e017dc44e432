"""Gateway contracts: caching, retries, normalization, limits, mock geometry."""

import threading
import time

import httpx
import numpy as np
import pytest

from conftest import ScriptedBackend, make_mock_gateway

from contrastaug.errors import BackendError, ConfigurationError, IntegrityError
from contrastaug.gateway.cache import ResponseCache
from contrastaug.gateway.client import ModelGateway, request_key
from contrastaug.gateway.config import BackendConfig
from contrastaug.gateway.http import HttpBackend
from contrastaug.gateway.mock import MockHub, encode_stub, mock_backends


def test_chat_cache_hit_skips_network(tmp_path):
    gateway = make_mock_gateway(seed=1, cache_dir=tmp_path / "cache")
    messages = [{"role": "user", "content": "hello there"}]
    first = gateway.chat(messages)
    calls_after_first = gateway.stats["chat"].calls
    second = gateway.chat(messages)
    assert first == second
    assert gateway.stats["chat"].calls == calls_after_first
    assert gateway.stats["chat"].cache_hits == 1


def test_cold_and_warm_results_identical_bytes(tmp_path):
    messages = [{"role": "user", "content": "determinism check"}]
    cold = make_mock_gateway(seed=5, cache_dir=tmp_path / "c1").chat(messages)
    warm_gateway = make_mock_gateway(seed=5, cache_dir=tmp_path / "c1")
    warm = warm_gateway.chat(messages)
    assert cold == warm
    assert warm_gateway.stats["chat"].cache_hits == 1


def test_retry_exhaustion_counts_attempts():
    backend = ScriptedBackend(replies=["never reached"], fail_times=99)
    configs = {"chat": BackendConfig(role="chat", model_id="flaky", retries=2)}
    gateway = ModelGateway({"chat": backend}, configs)
    with pytest.raises(BackendError, match="3 attempt"):
        gateway.chat([{"role": "user", "content": "x"}])
    assert backend.calls == 3  # retries + 1


def test_retry_then_success():
    backend = ScriptedBackend(replies=["recovered"], fail_times=2)
    configs = {"chat": BackendConfig(role="chat", model_id="flaky", retries=2)}
    gateway = ModelGateway({"chat": backend}, configs)
    assert gateway.chat([{"role": "user", "content": "x"}]) == "recovered"


def test_backend_error_carries_request_key():
    backend = ScriptedBackend(fail_times=99)
    configs = {"chat": BackendConfig(role="chat", model_id="flaky", retries=0)}
    gateway = ModelGateway({"chat": backend}, configs)
    request = {"op": "chat", "messages": [{"role": "user", "content": "x"}]}
    with pytest.raises(BackendError) as exc_info:
        gateway.chat([{"role": "user", "content": "x"}])
    assert exc_info.value.request_key == request_key("chat", "flaky", request)


def test_embeddings_unit_normalized():
    gateway = make_mock_gateway(seed=2)
    for text in ("a", "banded crown (tag:species-000/1)", "zzz"):
        vec = gateway.embed_text(text).vector
        assert abs(np.linalg.norm(vec) - 1.0) < 1e-6


def test_embedding_dimension_mismatch_rejected():
    backend = ScriptedBackend(embed_vectors={"a": [1.0, 0.0], "b": [1.0, 0.0, 0.0]})
    configs = {"embed": BackendConfig(role="embed", model_id="fake-embed")}
    gateway = ModelGateway({"embed": backend}, configs)
    gateway.embed_text("a")
    with pytest.raises(IntegrityError, match="dimension"):
        gateway.embed_text("b")


def test_embedding_space_mismatch_on_dot():
    from contrastaug.gateway.client import Embedding

    a = Embedding(vector=np.array([1.0, 0.0]), space_id="s1")
    b = Embedding(vector=np.array([1.0, 0.0]), space_id="s2")
    with pytest.raises(IntegrityError, match="space mismatch"):
        a.dot(b)


def test_mock_geometry_separates_concepts():
    gateway = make_mock_gateway(seed=3)
    hub = MockHub(3)
    image_a = encode_stub("real", "species-000", [], seed=3, index=0, salt="aa")
    image_b = encode_stub("real", "species-001", [], seed=3, index=0, salt="bb")
    feature = gateway.embed_text("banded crown (tag:species-000/1)")
    sim_own = feature.dot(gateway.embed_image(image_a))
    sim_other = feature.dot(gateway.embed_image(image_b))
    assert sim_own > sim_other
    assert sim_own > 0.5
    # hub geometry matches what the gateway serves (modulo normalization)
    assert np.allclose(hub.embed_image(image_a), gateway.embed_image(image_a).vector)


def test_vision_chat_identifies_stub_concept():
    gateway = make_mock_gateway(seed=4)
    image = encode_stub("real", "species-042", [], seed=4, index=0, salt="cc")
    reply = gateway.vision_chat(image, [{"role": "user", "content": "what is this"}])
    assert "species-042" in reply


def test_generate_image_distinct_and_deterministic():
    gateway = make_mock_gateway(seed=6)
    prompt = "A photograph of species-000. Distinctive features: banded crown (tag:species-000/0)."
    first = gateway.generate_image(prompt, n=3, seed=11)
    second = make_mock_gateway(seed=6).generate_image(prompt, n=3, seed=11)
    assert len(first) == 3
    assert len({bytes(i) for i in first}) == 3
    assert first == second


def test_generate_image_rejections_recorded():
    gateway = make_mock_gateway(seed=6, rejection_rate=0.5)
    prompt = "A photograph of species-000. Distinctive features: banded crown (tag:species-000/0)."
    images = gateway.generate_image(prompt, n=12, seed=1)
    assert 0 < len(images) < 12
    assert gateway.stats["imagegen"].rejections == 12 - len(images)


def test_generate_image_zero_results_is_hard_error():
    gateway = make_mock_gateway(seed=6, rejection_rate=1.0)
    prompt = "A photograph of species-000. Distinctive features: banded crown (tag:species-000/0)."
    with pytest.raises(BackendError, match="zero images"):
        gateway.generate_image(prompt, n=4, seed=1)


def test_oversized_image_is_configuration_error():
    backends, configs = mock_backends(seed=1)
    configs = {**configs, "vision": BackendConfig(role="vision", model_id="m", max_image_bytes=10)}
    gateway = ModelGateway(backends, configs)
    with pytest.raises(ConfigurationError, match="exceeds"):
        gateway.vision_chat(b"x" * 11, [{"role": "user", "content": "hi"}])


def test_semaphore_bounds_in_flight_requests():
    class SlowBackend:
        def __init__(self):
            self.lock = threading.Lock()
            self.active = 0
            self.max_active = 0

        def invoke(self, request, images):
            with self.lock:
                self.active += 1
                self.max_active = max(self.max_active, self.active)
            time.sleep(0.01)
            with self.lock:
                self.active -= 1
            return b"ok"

    backend = SlowBackend()
    configs = {"chat": BackendConfig(role="chat", model_id="slow", max_concurrent=3)}
    gateway = ModelGateway({"chat": backend}, configs)
    threads = [
        threading.Thread(target=gateway.chat, args=([{"role": "user", "content": str(i)}],))
        for i in range(12)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert backend.max_active <= 3
    assert gateway.stats["chat"].max_in_flight <= 3
    assert gateway.stats["chat"].calls == 12


def test_cache_layout_and_sidecar(tmp_path):
    cache = ResponseCache(tmp_path)
    cache.put("chat", "abcdef", b"payload", {"model_id": "m"})
    entry_path = tmp_path / "chat" / "ab" / "abcdef"
    assert entry_path.read_bytes() == b"payload"
    sidecar = entry_path.with_name("abcdef.meta.json")
    assert sidecar.is_file()
    assert cache.get("chat", "abcdef").value == b"payload"
    assert cache.get("chat", "missing") is None


# ---- HTTP backend over a fake transport ----


def _http_gateway(handler, role="chat", retries=1):
    config = BackendConfig(role=role, base_url="http://models.test", model_id="m1", retries=retries)
    backend = HttpBackend(config, transport=httpx.MockTransport(handler))
    return ModelGateway({role: backend}, {role: config})


def test_http_chat_round_trip():
    def handler(request: httpx.Request) -> httpx.Response:
        assert request.url.path == "/v1/chat/completions"
        return httpx.Response(200, json={"choices": [{"message": {"content": "hi from http"}}]})

    gateway = _http_gateway(handler)
    assert gateway.chat([{"role": "user", "content": "hello"}]) == "hi from http"


def test_http_500_retried_then_fails():
    seen = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["n"] += 1
        return httpx.Response(503, text="overloaded")

    gateway = _http_gateway(handler, retries=2)
    with pytest.raises(BackendError):
        gateway.chat([{"role": "user", "content": "x"}])
    assert seen["n"] == 3


def test_http_4xx_not_retried():
    seen = {"n": 0}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["n"] += 1
        return httpx.Response(400, text="bad request")

    gateway = _http_gateway(handler, retries=3)
    with pytest.raises(ConfigurationError):
        gateway.chat([{"role": "user", "content": "x"}])
    assert seen["n"] == 1


def test_http_embed_payload():
    def handler(request: httpx.Request) -> httpx.Response:
        assert request.url.path == "/v1/embeddings"
        return httpx.Response(200, json={"data": [{"embedding": [3.0, 4.0]}]})

    gateway = _http_gateway(handler, role="embed")
    embedding = gateway.embed_text("anything")
    assert np.allclose(embedding.vector, [0.6, 0.8])  # normalized from [3, 4]


def test_http_imagegen_rejections():
    def handler(request: httpx.Request) -> httpx.Response:
        return httpx.Response(200, json={"data": [{"b64_json": "aGVsbG8="}, {"b64_json": None}]})

    gateway = _http_gateway(handler, role="imagegen")
    images = gateway.generate_image("p", n=2, seed=0)
    assert images == [b"hello"]
    assert gateway.stats["imagegen"].rejections == 1


def test_http_missing_api_key_env(monkeypatch):
    monkeypatch.delenv("NO_SUCH_KEY_VAR", raising=False)
    config = BackendConfig(role="chat", base_url="http://x", model_id="m", api_key_env="NO_SUCH_KEY_VAR")
    with pytest.raises(ConfigurationError, match="NO_SUCH_KEY_VAR"):
        HttpBackend(config)


def test_backend_config_validation():
    with pytest.raises(ValueError):
        BackendConfig(role="nope")
    with pytest.raises(ValueError):
        BackendConfig(role="chat", max_concurrent=0)
    with pytest.raises(ValueError):
        BackendConfig(role="chat", retries=11)
