"""Human-evaluation sessions: sampled items, judgments, agreement stats.

A session is a seeded sample of (image, feature) items under one of three
conditions: target features on real target images, target features on real
images of the misidentified concept (the feature should be absent there), or
target features on kept synthetic images. Annotators answer yes/no per item;
agreement is Fleiss' kappa over the two categories.

Storage is append-only record files per session, so concurrent annotators
and crashes cannot corrupt earlier judgments.
"""

from __future__ import annotations

import hashlib
import math
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentationBatch
from .corpus import CorpusManifest, ImageAsset
from .errors import AnnotationConflictError, IncompleteSessionError
from .features import Feature
from .records import append_record, dumps_canonical, read_records, write_records
from .seeded import stream

CONDITIONS = ("real_target", "real_misidentified", "synthetic_target")

DEFAULT_N_ITEMS = 100


@dataclass
class AnnotationSession:
    id: str
    condition: str
    items: list[dict]  # {"image": asset id, "feature": feature id, "feature_text": str}
    annotators: list[str]
    seed: int
    extra: dict = field(default_factory=dict)

    def to_records(self) -> list[dict]:
        head = {
            "record": "session",
            "id": self.id,
            "condition": self.condition,
            "annotators": self.annotators,
            "seed": self.seed,
            "n_items": len(self.items),
        }
        head.update(self.extra)
        rows = [head]
        for index, item in enumerate(self.items):
            rows.append({"record": "item", "item_index": index, **item})
        return rows

    @classmethod
    def from_records(cls, rows: list[dict]) -> "AnnotationSession":
        head = rows[0]
        items = [
            {k: v for k, v in row.items() if k not in ("record", "item_index")}
            for row in rows[1:]
            if row.get("record") == "item"
        ]
        return cls(
            id=head["id"],
            condition=head["condition"],
            items=items,
            annotators=list(head.get("annotators", [])),
            seed=head["seed"],
        )


@dataclass
class AnnotationRecord:
    session: str
    annotator: str
    item_index: int
    judgment: str  # "yes" | "no"
    timestamp: float

    def to_record(self) -> dict:
        return {
            "record": "annotation",
            "session": self.session,
            "annotator": self.annotator,
            "item_index": self.item_index,
            "judgment": self.judgment,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "AnnotationRecord":
        return cls(
            session=rec["session"],
            annotator=rec["annotator"],
            item_index=rec["item_index"],
            judgment=rec["judgment"],
            timestamp=rec.get("timestamp", 0.0),
        )


def eligible_items(
    manifest: CorpusManifest,
    features: list[Feature],
    condition: str,
    batches: list[AugmentationBatch] | None = None,
    synthetic_assets: dict[str, ImageAsset] | None = None,
) -> list[dict]:
    """All (image, feature) pairs the condition allows, canonically ordered."""
    if condition not in CONDITIONS:
        raise ValueError(f"unknown condition {condition!r}")
    selected = [f for f in features if f.status == "selected"]
    items: list[dict] = []
    if condition == "synthetic_target":
        synthetic_assets = synthetic_assets or {}
        kept_by_target: dict[str, list[str]] = {}
        for batch in batches or []:
            kept_by_target.setdefault(batch.target, []).extend(batch.kept)
        for feature in selected:
            for aid in kept_by_target.get(feature.target, []):
                asset = synthetic_assets.get(aid)
                if asset is not None and feature.id in asset.source_features:
                    items.append(
                        {"image": aid, "feature": feature.id, "feature_text": feature.text}
                    )
    else:
        for feature in selected:
            if condition == "real_target":
                concept_id = feature.target
            else:
                if feature.against is None:
                    continue
                concept_id = feature.against
            concept = manifest.concepts.get(concept_id)
            if concept is None:
                continue
            for aid in concept.images:
                if manifest.assets[aid].provenance == "real":
                    items.append(
                        {"image": aid, "feature": feature.id, "feature_text": feature.text}
                    )
    items.sort(key=lambda it: (it["feature"], it["image"]))
    return items


def create_session(
    manifest: CorpusManifest,
    features: list[Feature],
    condition: str,
    n_items: int = DEFAULT_N_ITEMS,
    seed: int = 0,
    annotators: list[str] | None = None,
    batches: list[AugmentationBatch] | None = None,
    synthetic_assets: dict[str, ImageAsset] | None = None,
) -> AnnotationSession:
    """Seeded sample of n_items distinct items for one condition."""
    pool = eligible_items(manifest, features, condition, batches, synthetic_assets)
    if len(pool) < n_items:
        raise ValueError(
            f"condition {condition!r} has only {len(pool)} eligible items, need {n_items}"
        )
    items = stream(seed, "annotation-session", condition).sample(pool, n_items)
    digest = hashlib.sha256(
        dumps_canonical({"condition": condition, "items": items, "seed": seed}).encode()
    ).hexdigest()[:12]
    return AnnotationSession(
        id=f"{condition}-{digest}",
        condition=condition,
        items=items,
        annotators=sorted(annotators or []),
        seed=seed,
    )


class SessionStore:
    """One session definition file plus one append-only judgment file each.

    Writes within a session are serialized by a lock, so concurrent
    annotators cannot interleave the duplicate check and the append.
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def _lock_for(self, session_id: str) -> threading.Lock:
        with self._locks_guard:
            return self._locks.setdefault(session_id, threading.Lock())

    def _session_path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.session.jsonl"

    def _records_path(self, session_id: str) -> Path:
        return self.root / f"{session_id}.records.jsonl"

    def save_session(self, session: AnnotationSession) -> None:
        write_records(self._session_path(session.id), session.to_records())

    def load_session(self, session_id: str) -> AnnotationSession:
        path = self._session_path(session_id)
        if not path.is_file():
            raise FileNotFoundError(f"no session {session_id!r} under {self.root}")
        return AnnotationSession.from_records(list(read_records(path)))

    def list_sessions(self) -> list[str]:
        return sorted(p.name[: -len(".session.jsonl")] for p in self.root.glob("*.session.jsonl"))

    def load_records(self, session_id: str) -> list[AnnotationRecord]:
        path = self._records_path(session_id)
        if not path.is_file():
            return []
        return [AnnotationRecord.from_record(r) for r in read_records(path)]

    def record(
        self, session: AnnotationSession, annotator: str, item_index: int, judgment: str
    ) -> AnnotationRecord:
        """Persist one judgment; identical replays are accepted, conflicts refused."""
        if judgment not in ("yes", "no"):
            raise ValueError(f"judgment must be yes or no, got {judgment!r}")
        if not 0 <= item_index < len(session.items):
            raise ValueError(f"item_index {item_index} outside 0..{len(session.items) - 1}")
        with self._lock_for(session.id):
            for existing in self.load_records(session.id):
                if existing.annotator == annotator and existing.item_index == item_index:
                    if existing.judgment == judgment:
                        return existing
                    raise AnnotationConflictError(
                        f"item {item_index} already judged {existing.judgment!r} "
                        f"by {annotator!r}; refusing {judgment!r}"
                    )
            record = AnnotationRecord(
                session=session.id,
                annotator=annotator,
                item_index=item_index,
                judgment=judgment,
                timestamp=time.time(),
            )
            append_record(self._records_path(session.id), record.to_record())
        return record


def fleiss_kappa(table: list[list[int]]) -> float:
    """Fleiss' kappa over an N-items x C-categories count table.

    Every row must sum to the same rater count n >= 2. The all-one-category
    table (chance agreement 1) is returned as 1.0: every item is unanimous,
    which is the signal the statistic exists to detect.
    """
    if not table:
        raise ValueError("empty table")
    n = sum(table[0])
    if n < 2:
        raise ValueError("fleiss kappa needs at least 2 raters")
    if any(sum(row) != n for row in table):
        raise ValueError("all items must have the same number of ratings")
    n_items = len(table)
    n_categories = len(table[0])
    p_item = [
        (math.fsum(c * c for c in row) - n) / (n * (n - 1)) for row in table
    ]
    p_mean = math.fsum(p_item) / n_items
    totals = [
        math.fsum(row[j] for row in table) / (n_items * n) for j in range(n_categories)
    ]
    p_expected = math.fsum(p * p for p in totals)
    if p_expected >= 1.0:
        if p_mean == 1.0:
            return 1.0
        raise ValueError("kappa undefined: chance agreement is 1 without unanimity")
    return (p_mean - p_expected) / (1.0 - p_expected)


@dataclass
class AgreementStats:
    positive_rate: float
    fleiss_kappa: float
    n_items: int
    n_annotators: int
    unanimous: bool


def agreement_stats(
    session: AnnotationSession, records: list[AnnotationRecord]
) -> AgreementStats:
    """Positive rate and Fleiss' kappa once every item is fully judged.

    The rater set is the session's declared annotators, or the distinct
    annotators observed when none were declared.
    """
    annotators = session.annotators or sorted({r.annotator for r in records})
    if len(annotators) < 2:
        raise ValueError("agreement needs at least 2 annotators")
    judged: dict[tuple[int, str], str] = {}
    for record in records:
        if record.annotator in annotators:
            judged[(record.item_index, record.annotator)] = record.judgment
    incomplete = [
        index
        for index in range(len(session.items))
        if any((index, a) not in judged for a in annotators)
    ]
    if incomplete:
        raise IncompleteSessionError(
            f"{len(incomplete)} item(s) lack judgments from all annotators", incomplete
        )
    table = []
    yes_total = 0
    for index in range(len(session.items)):
        yes = sum(1 for a in annotators if judged[(index, a)] == "yes")
        yes_total += yes
        table.append([yes, len(annotators) - yes])
    kappa = fleiss_kappa(table)
    return AgreementStats(
        positive_rate=yes_total / (len(session.items) * len(annotators)),
        fleiss_kappa=kappa,
        n_items=len(session.items),
        n_annotators=len(annotators),
        unanimous=all(row[0] == 0 or row[1] == 0 for row in table),
    )
