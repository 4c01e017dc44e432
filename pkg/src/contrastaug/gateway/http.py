"""HTTP transport speaking the prevailing chat-completion style protocol.

Endpoints, relative to the configured base URL (exact wire fields documented
in the README):

    POST /v1/chat/completions   chat and vision_chat (image as a data URL part)
    POST /v1/embeddings         embed_text / embed_image (input_type=image)
    POST /v1/images/generations imagegen (b64_json items; null item = rejected)

Timeouts, connection failures, 429 and 5xx raise TransientBackendError so the
gateway retries; other 4xx are configuration problems and are not retried.
"""

from __future__ import annotations

import base64
import os

import httpx

from ..errors import ConfigurationError, TransientBackendError
from ..records import dumps_canonical
from .config import BackendConfig


class HttpBackend:
    def __init__(self, config: BackendConfig, transport: httpx.BaseTransport | None = None):
        self.config = config
        headers = {}
        if config.api_key_env:
            token = os.environ.get(config.api_key_env)
            if not token:
                raise ConfigurationError(
                    f"api key env var {config.api_key_env!r} is not set for role {config.role!r}"
                )
            headers["Authorization"] = f"Bearer {token}"
        self._client = httpx.Client(
            base_url=config.base_url,
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )

    def invoke(self, request: dict, images: list[bytes]) -> bytes:
        op = request["op"]
        if op == "chat":
            return self._chat(request, None)
        if op == "vision_chat":
            return self._chat(request, images[0])
        if op == "embed_text":
            return self._embed({"input": [request["text"]]})
        if op == "embed_image":
            b64 = base64.b64encode(images[0]).decode("ascii")
            return self._embed({"input": [b64], "input_type": "image"})
        if op == "generate_image":
            return self._generate(request)
        raise ConfigurationError(f"unsupported op {op!r} for HTTP backend")

    def _post(self, path: str, payload: dict) -> dict:
        try:
            response = self._client.post(path, json=payload)
        except httpx.TransportError as exc:
            raise TransientBackendError(f"{type(exc).__name__}: {exc}") from exc
        if response.status_code == 429 or response.status_code >= 500:
            raise TransientBackendError(f"HTTP {response.status_code}: {response.text[:200]}")
        if response.status_code >= 400:
            raise ConfigurationError(f"HTTP {response.status_code}: {response.text[:200]}")
        return response.json()

    def _chat(self, request: dict, image: bytes | None) -> bytes:
        messages = []
        for msg in request["messages"]:
            messages.append({"role": msg["role"], "content": msg["content"]})
        if image is not None and messages:
            # attach the image to the last user message as a data-URL part
            last = messages[-1]
            b64 = base64.b64encode(image).decode("ascii")
            last["content"] = [
                {"type": "text", "text": last["content"]},
                {"type": "image_url", "image_url": {"url": f"data:image/jpeg;base64,{b64}"}},
            ]
        payload = {"model": self.config.model_id, "messages": messages}
        payload.update(request.get("decode", {}))
        reply = self._post("/v1/chat/completions", payload)
        text = reply["choices"][0]["message"]["content"]
        return text.encode("utf-8")

    def _embed(self, fields: dict) -> bytes:
        payload = {"model": self.config.model_id, **fields}
        reply = self._post("/v1/embeddings", payload)
        vector = reply["data"][0]["embedding"]
        return dumps_canonical({"vector": vector}).encode("utf-8")

    def _generate(self, request: dict) -> bytes:
        payload = {
            "model": self.config.model_id,
            "prompt": request["prompt"],
            "n": request["n"],
            "seed": request["seed"],
            "response_format": "b64_json",
        }
        reply = self._post("/v1/images/generations", payload)
        images = []
        rejected = 0
        for item in reply.get("data", []):
            b64 = item.get("b64_json")
            if b64 is None:
                rejected += 1
            else:
                images.append(b64)
        return dumps_canonical({"images": images, "rejected": rejected}).encode("utf-8")
