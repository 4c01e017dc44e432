"""Content-addressed response cache.

Entries live at ``<cache>/<role>/<first 2 hex of key>/<key>`` holding the raw
response bytes, with a ``<key>.meta.json`` sidecar describing the request.
Keys are pure functions of the canonicalized request, so a warm call replays
the exact bytes of the cold call. Sidecars carry no wall-clock fields; entry
age, when needed, comes from file mtime, which keeps cached trees byte-stable
across reruns.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass
from pathlib import Path

from ..records import dumps_canonical


@dataclass
class CacheEntry:
    key: str
    value: bytes
    created_at: float  # file mtime, seconds since epoch


class ResponseCache:
    def __init__(self, root: Path):
        self.root = Path(root)

    def _entry_path(self, role: str, key: str) -> Path:
        return self.root / role / key[:2] / key

    def get(self, role: str, key: str) -> CacheEntry | None:
        path = self._entry_path(role, key)
        try:
            data = path.read_bytes()
        except FileNotFoundError:
            return None
        return CacheEntry(key=key, value=data, created_at=path.stat().st_mtime)

    def put(self, role: str, key: str, value: bytes, meta: dict) -> None:
        """Atomic write; concurrent writers of the same key are harmless."""
        path = self._entry_path(role, key)
        path.parent.mkdir(parents=True, exist_ok=True)
        self._write_atomic(path, value)
        sidecar = dict(meta)
        sidecar["key"] = key
        self._write_atomic(
            path.with_name(path.name + ".meta.json"),
            (dumps_canonical(sidecar) + "\n").encode("utf-8"),
        )

    @staticmethod
    def _write_atomic(path: Path, data: bytes) -> None:
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
