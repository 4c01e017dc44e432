"""Run configuration: one YAML file, env-var interpolation for secrets.

``${VAR}`` anywhere in the file is replaced from the environment before
parsing; a missing variable is a configuration error rather than a silent
empty string. Every stage parameter has a default here so run metadata can
always record the effective value.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .errors import ConfigurationError
from .gateway.cache import ResponseCache
from .gateway.client import ModelGateway
from .gateway.config import ROLES, BackendConfig
from .gateway.http import HttpBackend
from .gateway.mock import MockHub, mock_backends

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass
class MockParams:
    confusion_rate: float = 0.6
    feature_dropout: float = 0.0
    rejection_rate: float = 0.0
    dim: int = 64


@dataclass
class StageParams:
    subset_size: int = 15
    threshold: float = 0.2
    images_per_concept: int = 5
    rounds: int = 0  # 0 = one pass over a seeded partition of all concepts
    modes: tuple[str, ...] = ("textual", "visual")
    contrastive: bool = True
    visual_images: int = 5
    d_threshold: float = 0.6
    top_k: int = 5
    pair_count: int = 5
    g_images: int = 5
    augment_n: int = 8
    ranking: str = "mean_similarity"
    option_pool: str = "subset"  # subset | all
    export_ratios: tuple[str, ...] = ("5:0", "5:1", "5:3", "5:5")
    train_n: int = 5
    val_n: int = 15
    test_n: int = 15
    workers: int = 8


@dataclass
class RunConfig:
    seed: int = 0
    cache_dir: str | None = None
    corpus_root: str | None = None
    mock: bool = False
    backends: dict[str, BackendConfig] = field(default_factory=dict)
    mock_params: MockParams = field(default_factory=MockParams)
    stages: StageParams = field(default_factory=StageParams)

    def effective_params(self) -> dict:
        """Everything a run-metadata record needs to replay a stage."""
        out = {"seed": self.seed, "mock": self.mock}
        for f in fields(self.stages):
            value = getattr(self.stages, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        for f in fields(self.mock_params):
            out[f"mock_{f.name}"] = getattr(self.mock_params, f.name)
        return out


def _interpolate(text: str) -> str:
    def sub(match: re.Match) -> str:
        name = match.group(1)
        value = os.environ.get(name)
        if value is None:
            raise ConfigurationError(f"config references unset env var ${{{name}}}")
        return value

    return _ENV_RE.sub(sub, text)


def load_config(path: Path | None) -> RunConfig:
    config = RunConfig()
    if path is None:
        return config
    raw = yaml.safe_load(_interpolate(Path(path).read_text("utf-8"))) or {}
    config.seed = int(raw.get("seed", config.seed))
    config.cache_dir = raw.get("cache_dir", config.cache_dir)
    config.corpus_root = raw.get("corpus_root", config.corpus_root)
    config.mock = bool(raw.get("mock", config.mock))
    for role, spec in (raw.get("backends") or {}).items():
        if role not in ROLES:
            raise ConfigurationError(f"unknown backend role {role!r} in config")
        config.backends[role] = BackendConfig(role=role, **spec)
    for name, value in (raw.get("mock_params") or {}).items():
        if not hasattr(config.mock_params, name):
            raise ConfigurationError(f"unknown mock parameter {name!r}")
        setattr(config.mock_params, name, value)
    for name, value in (raw.get("stages") or {}).items():
        if not hasattr(config.stages, name):
            raise ConfigurationError(f"unknown stage parameter {name!r}")
        current = getattr(config.stages, name)
        setattr(config.stages, name, tuple(value) if isinstance(current, tuple) else value)
    return config


def build_gateway(config: RunConfig) -> ModelGateway:
    """Gateway from config: HTTP backends, or the deterministic mock family."""
    cache = ResponseCache(Path(config.cache_dir)) if config.cache_dir else None
    if config.mock:
        mp = config.mock_params
        backends, configs = mock_backends(
            seed=config.seed,
            confusion_rate=mp.confusion_rate,
            feature_dropout=mp.feature_dropout,
            rejection_rate=mp.rejection_rate,
            dim=mp.dim,
        )
        return ModelGateway(backends, configs, cache=cache)
    if not config.backends:
        raise ConfigurationError("no backends configured; pass --mock or a config file")
    backends = {role: HttpBackend(cfg) for role, cfg in config.backends.items()}
    return ModelGateway(backends, dict(config.backends), cache=cache)


def mock_hub(config: RunConfig) -> MockHub:
    mp = config.mock_params
    return MockHub(
        config.seed,
        dim=mp.dim,
        confusion_rate=mp.confusion_rate,
        feature_dropout=mp.feature_dropout,
        rejection_rate=mp.rejection_rate,
    )
