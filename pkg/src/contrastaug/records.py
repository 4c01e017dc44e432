"""Line-oriented JSON record streams.

Every artifact the stages exchange (manifests, pair lists, feature lists,
batches, probe logs, annotation records) is UTF-8 text with one JSON object
per line. Serialization is canonical -- sorted keys, no insignificant
whitespace -- so identical content means identical bytes. Unknown fields on a
record survive a load/store round-trip.
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Iterable, Iterator


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, ensure_ascii=False, separators=(",", ":"))


def write_records(path: Path, records: Iterable[dict]) -> None:
    """Write records atomically: temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            for record in records:
                fh.write(dumps_canonical(record))
                fh.write("\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_records(path: Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: not a JSON record: {exc}") from exc


def append_record(path: Path, record: dict) -> None:
    """Append one record; newline-terminated writes keep the file crash-safe."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_canonical(record))
        fh.write("\n")
        fh.flush()
        os.fsync(fh.fileno())


def split_known(record: dict, known: tuple[str, ...]) -> tuple[dict, dict]:
    """Partition a raw record into (known fields, everything else)."""
    mine = {k: v for k, v in record.items() if k in known}
    extra = {k: v for k, v in record.items() if k not in known}
    return mine, extra
