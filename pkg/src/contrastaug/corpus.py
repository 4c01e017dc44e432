"""Corpus layout, manifest, ingestion, and deterministic splits.

On disk a corpus is ``<root>/<concept-id>/<image-file>`` with synthetic images
under ``<root>/_synthetic/<concept-id>/``. The manifest is a record stream:
one header line carrying the version and the run seed, then concept records,
then asset records, each group sorted by id so re-serialization is
byte-stable. Image identity is the sha256 of the raw file bytes -- no decoder
in the loop, so ids are bit-stable across platforms.
"""

from __future__ import annotations

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IngestError, SplitError
from .records import read_records, split_known, write_records
from .seeded import stream

log = logging.getLogger(__name__)

MANIFEST_VERSION = 1
SPLIT_NAMES = ("train", "val", "test")
SYNTHETIC_DIR = "_synthetic"

_IMAGE_SUFFIXES = {".jpg", ".jpeg", ".png", ".gif", ".bmp", ".webp", ".img"}


def hash_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


@dataclass
class ImageAsset:
    id: str  # sha256 hex of file bytes
    path: str  # corpus-relative, forward slashes
    provenance: str = "real"  # real | synthetic
    source_features: list[str] = field(default_factory=list)
    satisfaction: float | None = None
    extra: dict = field(default_factory=dict)

    _FIELDS = ("id", "path", "provenance", "source_features", "satisfaction")

    def to_record(self) -> dict:
        rec = {
            "record": "asset",
            "id": self.id,
            "path": self.path,
            "provenance": self.provenance,
            "source_features": self.source_features,
        }
        if self.satisfaction is not None:
            rec["satisfaction"] = self.satisfaction
        rec.update(self.extra)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "ImageAsset":
        known, extra = split_known(rec, cls._FIELDS)
        extra.pop("record", None)
        return cls(
            id=known["id"],
            path=known["path"],
            provenance=known.get("provenance", "real"),
            source_features=list(known.get("source_features", [])),
            satisfaction=known.get("satisfaction"),
            extra=extra,
        )


@dataclass
class Concept:
    id: str
    canonical_name: str
    aliases: list[str] = field(default_factory=list)
    supercategory: str | None = None
    images: list[str] = field(default_factory=list)
    splits: dict[str, list[str]] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    _FIELDS = ("id", "canonical_name", "aliases", "supercategory", "images", "splits")

    def split_ids(self, name: str) -> list[str]:
        return list(self.splits.get(name, []))

    def to_record(self) -> dict:
        rec = {
            "record": "concept",
            "id": self.id,
            "canonical_name": self.canonical_name,
            "aliases": self.aliases,
            "images": self.images,
            "splits": self.splits,
        }
        if self.supercategory is not None:
            rec["supercategory"] = self.supercategory
        rec.update(self.extra)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Concept":
        known, extra = split_known(rec, cls._FIELDS)
        extra.pop("record", None)
        return cls(
            id=known["id"],
            canonical_name=known["canonical_name"],
            aliases=list(known.get("aliases", [])),
            supercategory=known.get("supercategory"),
            images=list(known.get("images", [])),
            splits={k: list(v) for k, v in known.get("splits", {}).items()},
            extra=extra,
        )


@dataclass
class CorpusManifest:
    version: int
    seed: int
    concepts: dict[str, Concept] = field(default_factory=dict)
    assets: dict[str, ImageAsset] = field(default_factory=dict)
    header_extra: dict = field(default_factory=dict)

    def concept_list(self) -> list[Concept]:
        return [self.concepts[cid] for cid in sorted(self.concepts)]

    def asset(self, asset_id: str) -> ImageAsset:
        return self.assets[asset_id]

    def asset_path(self, root: Path, asset_id: str) -> Path:
        return Path(root) / self.assets[asset_id].path

    def save(self, path: Path) -> None:
        header = {"record": "header", "version": self.version, "seed": self.seed}
        header.update(self.header_extra)
        records = [header]
        records.extend(c.to_record() for c in self.concept_list())
        records.extend(self.assets[aid].to_record() for aid in sorted(self.assets))
        write_records(path, records)

    @classmethod
    def load(cls, path: Path) -> "CorpusManifest":
        rows = read_records(path)
        try:
            header = next(rows)
        except StopIteration:
            raise ValueError(f"{path}: empty manifest") from None
        if header.get("record") != "header":
            raise ValueError(f"{path}: first record must be the header")
        known, extra = split_known(header, ("version", "seed"))
        extra.pop("record", None)
        manifest = cls(version=known["version"], seed=known["seed"], header_extra=extra)
        for rec in rows:
            kind = rec.get("record")
            if kind == "concept":
                concept = Concept.from_record(rec)
                manifest.concepts[concept.id] = concept
            elif kind == "asset":
                asset = ImageAsset.from_record(rec)
                manifest.assets[asset.id] = asset
            else:
                raise ValueError(f"{path}: unknown record kind {kind!r}")
        return manifest


def _looks_like_image(path: Path) -> bool:
    return path.is_file() and (path.suffix.lower() in _IMAGE_SUFFIXES or not path.suffix)


def _hash_file(path: Path) -> str:
    try:
        return hash_bytes(path.read_bytes())
    except OSError as exc:
        raise IngestError(f"unreadable file: {path}") from exc


def ingest(root_dir: Path, seed: int = 0, hash_workers: int = 8) -> CorpusManifest:
    """Build a manifest from ``<root>/<concept-id>/<image files>``.

    Duplicate bytes within one concept are registered once (with a warning);
    subdirectories with no image files are skipped. Splits start empty.
    """
    root = Path(root_dir)
    if not root.is_dir():
        raise IngestError(f"corpus root is not a directory: {root}")
    manifest = CorpusManifest(version=MANIFEST_VERSION, seed=seed)
    concept_dirs = sorted(
        p for p in root.iterdir() if p.is_dir() and not p.name.startswith(("_", "."))
    )
    with ThreadPoolExecutor(max_workers=hash_workers) as pool:
        for cdir in concept_dirs:
            files = sorted(p for p in cdir.iterdir() if _looks_like_image(p))
            if not files:
                log.warning("concept directory %s has no images; skipped", cdir.name)
                continue
            hashes = list(pool.map(_hash_file, files))
            concept = Concept(id=cdir.name, canonical_name=cdir.name)
            for path, digest in zip(files, hashes):
                rel = path.relative_to(root).as_posix()
                if digest in manifest.assets:
                    if digest in concept.images:
                        log.warning("duplicate image bytes in %s: %s", cdir.name, rel)
                        continue
                    # same bytes under two concepts: keep first registration
                    log.warning("image bytes shared across concepts: %s", rel)
                else:
                    manifest.assets[digest] = ImageAsset(id=digest, path=rel)
                if digest not in concept.images:
                    concept.images.append(digest)
            concept.images.sort()
            manifest.concepts[concept.id] = concept
    return manifest


def split(manifest: CorpusManifest, train_n: int, val_n: int, test_n: int) -> CorpusManifest:
    """Assign per-concept train/val/test splits from one seeded shuffle.

    The shuffle runs over the sorted asset ids of each concept; the first
    train_n ids become train, the next val_n val, the next test_n test. Using
    a single shuffle keeps smaller splits prefixes of larger ones.
    """
    need = train_n + val_n + test_n
    short = [c.id for c in manifest.concept_list() if len(c.images) < need]
    if short:
        raise SplitError(
            f"{len(short)} concept(s) have fewer than {need} images: {', '.join(short)}"
        )
    out = CorpusManifest(
        version=manifest.version,
        seed=manifest.seed,
        assets=dict(manifest.assets),
        header_extra=dict(manifest.header_extra),
    )
    for concept in manifest.concept_list():
        order = sorted(concept.images)
        stream(manifest.seed, "split", concept.id).shuffle(order)
        splits = {
            "train": sorted(order[:train_n]),
            "val": sorted(order[train_n : train_n + val_n]),
            "test": sorted(order[train_n + val_n : need]),
        }
        out.concepts[concept.id] = Concept(
            id=concept.id,
            canonical_name=concept.canonical_name,
            aliases=list(concept.aliases),
            supercategory=concept.supercategory,
            images=list(concept.images),
            splits=splits,
            extra=dict(concept.extra),
        )
    return out


def verify(manifest: CorpusManifest, root: Path) -> list[dict]:
    """Integrity sweep: missing files, hash drift, and structural invariants.

    Violations are returned as data, one dict per finding; an empty list means
    the corpus matches the manifest exactly.
    """
    root = Path(root)
    violations: list[dict] = []
    for aid in sorted(manifest.assets):
        asset = manifest.assets[aid]
        path = root / asset.path
        if not path.is_file():
            violations.append({"kind": "missing_file", "asset": aid, "path": asset.path})
            continue
        digest = hash_bytes(path.read_bytes())
        if digest != aid:
            violations.append(
                {"kind": "hash_mismatch", "asset": aid, "path": asset.path, "actual": digest}
            )
    for concept in manifest.concept_list():
        seen: dict[str, str] = {}
        image_set = set(concept.images)
        for name, members in concept.splits.items():
            for aid in members:
                if aid not in image_set:
                    violations.append(
                        {"kind": "split_member_unknown", "concept": concept.id, "asset": aid}
                    )
                if aid in seen and seen[aid] != name:
                    violations.append(
                        {"kind": "split_overlap", "concept": concept.id, "asset": aid}
                    )
                seen[aid] = name
        for aid in concept.images:
            if aid not in manifest.assets:
                violations.append(
                    {"kind": "unregistered_asset", "concept": concept.id, "asset": aid}
                )
    for aid in sorted(manifest.assets):
        asset = manifest.assets[aid]
        if asset.provenance == "real" and (asset.source_features or asset.satisfaction is not None):
            violations.append({"kind": "real_with_sources", "asset": aid})
    return violations


def synthetic_rel_path(concept_id: str, asset_id: str) -> str:
    return f"{SYNTHETIC_DIR}/{concept_id}/{asset_id}.img"
