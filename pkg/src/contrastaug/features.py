"""Candidate feature extraction: textual (chat model) and visual (vision model).

Feature identity is the hash of the normalized text (NFC, lowercase, single
spaces), so identical attributes from different extraction routes collapse to
one record. Extraction never judges quality; everything it emits is a
candidate for the score-based filter downstream.
"""

from __future__ import annotations

import hashlib
import logging
import re
import unicodedata
from dataclasses import dataclass, field

from .corpus import Concept, ImageAsset
from .errors import BackendError, NoConfusableError, PipelineError
from .records import split_known
from .templating import load_template

log = logging.getLogger(__name__)

MAX_FEATURE_CHARS = 200

STATUS_ORDER = ("candidate", "passed_d", "selected")
STATUS_REJECTED = "rejected"

_LIST_LINE_RE = re.compile(r"^\s*(?:\d+[.)]\s+|[-*•]\s+)(.*\S)\s*$")


def normalize_feature_text(text: str) -> str:
    text = unicodedata.normalize("NFC", text)
    return re.sub(r"\s+", " ", text).strip().lower()


def feature_id(normalized_text: str) -> str:
    return hashlib.sha256(normalized_text.encode("utf-8")).hexdigest()[:16]


@dataclass
class Feature:
    id: str
    text: str  # normalized
    kind: str  # textual | visual
    contrastive: bool
    target: str
    against: str | None = None
    d_score: float | None = None
    g_score: float | None = None
    status: str = "candidate"
    extra: dict = field(default_factory=dict)

    _FIELDS = (
        "id", "text", "kind", "contrastive", "target", "against",
        "d_score", "g_score", "status",
    )

    def advance(self, new_status: str) -> None:
        """Status moves forward only; rejected is terminal from anywhere."""
        if new_status == self.status:
            return
        if self.status == STATUS_REJECTED:
            raise PipelineError(f"feature {self.id} is rejected; cannot move to {new_status}")
        if new_status == STATUS_REJECTED:
            self.status = new_status
            return
        if STATUS_ORDER.index(new_status) < STATUS_ORDER.index(self.status):
            raise PipelineError(
                f"feature {self.id}: illegal transition {self.status} -> {new_status}"
            )
        self.status = new_status

    def to_record(self) -> dict:
        rec = {
            "record": "feature",
            "id": self.id,
            "text": self.text,
            "kind": self.kind,
            "contrastive": self.contrastive,
            "target": self.target,
            "status": self.status,
        }
        if self.against is not None:
            rec["against"] = self.against
        if self.d_score is not None:
            rec["d_score"] = self.d_score
        if self.g_score is not None:
            rec["g_score"] = self.g_score
        rec.update(self.extra)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "Feature":
        known, extra = split_known(rec, cls._FIELDS)
        extra.pop("record", None)
        return cls(
            id=known["id"],
            text=known["text"],
            kind=known["kind"],
            contrastive=bool(known.get("contrastive", False)),
            target=known["target"],
            against=known.get("against"),
            d_score=known.get("d_score"),
            g_score=known.get("g_score"),
            status=known.get("status", "candidate"),
            extra=extra,
        )


def parse_feature_list(reply: str) -> list[str]:
    """Pull normalized feature texts out of a numbered/dashed/bulleted reply.

    Prose lines around a list are ignored; a reply with no list lines at all
    yields nothing (with a warning) rather than a misparsed feature.
    """
    texts: list[str] = []
    for line in reply.splitlines():
        match = _LIST_LINE_RE.match(line)
        if match is None:
            continue
        normalized = normalize_feature_text(match.group(1))
        if not normalized:
            continue
        if len(normalized) > MAX_FEATURE_CHARS:
            log.warning("dropping over-long feature line (%d chars)", len(normalized))
            continue
        texts.append(normalized)
    if not texts:
        log.warning("model reply contained no parseable feature list")
    return texts


def _build_features(
    texts: list[str], kind: str, target: Concept, against: Concept | None
) -> list[Feature]:
    features: dict[str, Feature] = {}
    for text in texts:
        fid = feature_id(text)
        if fid in features:
            continue
        features[fid] = Feature(
            id=fid,
            text=text,
            kind=kind,
            contrastive=against is not None,
            target=target.id,
            against=against.id if against is not None else None,
        )
    return list(features.values())


def _contrast_block(target: Concept, against: Concept | None) -> str:
    if against is None:
        return ""
    return load_template("contrast_block").format(
        target=target.canonical_name, against=against.canonical_name
    )


def extract_textual(gateway, target: Concept, against: Concept | None = None) -> list[Feature]:
    """Ask the chat model for visual attributes of the target concept."""
    prompt = load_template("textual_features").format(
        target=target.canonical_name, contrast_block=_contrast_block(target, against)
    )
    reply = gateway.chat([{"role": "user", "content": prompt}])
    return _build_features(parse_feature_list(reply), "textual", target, against)


def extract_visual(
    gateway,
    target: Concept,
    images: list[tuple[ImageAsset, bytes]],
    against: Concept | None = None,
) -> list[Feature]:
    """Per-image vision extraction, merged by a follow-up chat call.

    Issues exactly one vision call per image plus one merge call when more
    than one image is given. Per-image failures are tolerated as long as at
    least one image yields a reply.
    """
    if not images:
        raise ValueError("extract_visual requires at least one image")
    for asset, _ in images:
        if asset.provenance != "real":
            raise ValueError(f"extract_visual expects real images; {asset.id} is synthetic")
    prompt = load_template("visual_features").format(
        target=target.canonical_name, contrast_block=_contrast_block(target, against)
    )
    replies: list[str] = []
    failures: list[str] = []
    for asset, data in images:
        try:
            replies.append(gateway.vision_chat(data, [{"role": "user", "content": prompt}]))
        except BackendError as exc:
            failures.append(asset.id)
            log.warning("visual extraction failed for image %s: %s", asset.id, exc)
    if not replies:
        raise BackendError(
            f"visual extraction failed for all {len(images)} images of {target.id}"
        )
    if len(images) == 1:
        texts = parse_feature_list(replies[0])
    else:
        lines = []
        for reply in replies:
            lines.extend(f"- {text}" for text in parse_feature_list(reply))
        merge_prompt = load_template("merge_features").format(feature_lines="\n".join(lines))
        merged = gateway.chat([{"role": "user", "content": merge_prompt}])
        texts = parse_feature_list(merged)
    features = _build_features(texts, "visual", target, against)
    if failures:
        for feature in features:
            feature.extra.setdefault("extraction_failures", failures)
    return features


def acquire_misidentified(target: Concept, candidates: list[Concept], probe_results) -> str:
    """Most frequent wrong prediction for the target's probe images.

    Ties break to the lexicographically smaller id; no misclassification at
    all means there is nothing to contrast against.
    """
    candidate_ids = {c.id for c in candidates}
    if not candidate_ids:
        raise ValueError("acquire_misidentified needs a nonempty candidate list")
    if target.id in candidate_ids:
        raise ValueError("candidates must exclude the target concept")
    counts: dict[str, int] = {}
    for result in probe_results:
        if result.gold != target.id:
            continue
        if result.predicted in candidate_ids:
            counts[result.predicted] = counts.get(result.predicted, 0) + 1
    if not counts:
        raise NoConfusableError(f"no confusable concept observed for {target.id}")
    top = max(counts.values())
    return min(cid for cid, n in counts.items() if n == top)
