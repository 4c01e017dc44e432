"""Backend configuration for the four model roles."""

from __future__ import annotations

from dataclasses import dataclass

ROLES = ("chat", "vision", "embed", "imagegen")

# Soft guard for vision payloads; public endpoints reject far smaller bodies.
DEFAULT_MAX_IMAGE_BYTES = 20 * 1024 * 1024


@dataclass(frozen=True)
class BackendConfig:
    role: str
    base_url: str = ""
    model_id: str = "mock"
    api_key_env: str = ""
    max_concurrent: int = 4
    timeout: float = 60.0
    retries: int = 2
    max_image_bytes: int = DEFAULT_MAX_IMAGE_BYTES

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown backend role {self.role!r}; expected one of {ROLES}")
        if self.max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        if not 0 <= self.retries <= 10:
            raise ValueError("retries must be between 0 and 10")
