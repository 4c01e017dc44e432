"""Feature-conditioned image generation and satisfaction-based filtering.

A batch takes one confusable pair's selected features, renders candidates
through the imagegen backend, and asks the vision backend (standing in for
the model that will be updated) one yes/no question per feature per image.
The satisfaction rate S of an image is the answered-yes fraction; only
images with S = 1.0 -- every selected feature visibly present -- are kept.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import ImageAsset, hash_bytes, synthetic_rel_path
from .errors import BackendError
from .features import Feature
from .filtering import gateway_similarity
from .records import split_known
from .seeded import stream
from .templating import load_template, template_hash

log = logging.getLogger(__name__)

MAX_PROMPT_FEATURES = 5  # diffusion text encoders lose features beyond a handful

RANK_MEAN_SIMILARITY = "mean_similarity"
RANK_SEEDED = "seeded"


@dataclass
class AugmentationBatch:
    target: str
    misidentified: str
    features: list[str]  # selected feature ids, generation order
    candidates: list[str]  # all generated asset ids
    kept: list[str]  # S = 1.0 asset ids, ranked for downstream selection
    prompt_template_hash: str
    seed: int
    ranking: str = RANK_MEAN_SIMILARITY
    extra: dict = field(default_factory=dict)

    _FIELDS = (
        "target", "misidentified", "features", "candidates", "kept",
        "prompt_template_hash", "seed", "ranking",
    )

    def to_record(self) -> dict:
        rec = {"record": "batch"}
        for name in self._FIELDS:
            rec[name] = getattr(self, name)
        rec.update(self.extra)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "AugmentationBatch":
        known, extra = split_known(rec, cls._FIELDS)
        extra.pop("record", None)
        return cls(**known, extra=extra)


def build_prompt(target_name: str, features: list[Feature]) -> str:
    """Deterministic generation prompt naming the concept and its features."""
    if not 1 <= len(features) <= MAX_PROMPT_FEATURES:
        raise ValueError(f"prompt takes 1..{MAX_PROMPT_FEATURES} features, got {len(features)}")
    joined = "; ".join(f.text for f in features)
    return load_template("generation").format(concept=target_name, features=joined).strip()


def generate_candidates(
    gateway,
    root: Path,
    concept_id: str,
    prompt: str,
    feature_ids: list[str],
    n: int,
    seed: int,
) -> list[ImageAsset]:
    """Render n candidates and register them under the corpus _synthetic tree.

    Byte-identical outputs are collapsed to one asset (with a shortfall
    warning); backend-rejected generations already shrank the returned list.
    """
    if n < 1:
        raise ValueError("generate_candidates requires n >= 1")
    root = Path(root)
    images = gateway.generate_image(prompt, n, seed)
    assets: dict[str, ImageAsset] = {}
    for data in images:
        digest = hash_bytes(data)
        if digest in assets:
            continue
        rel = synthetic_rel_path(concept_id, digest)
        path = root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        assets[digest] = ImageAsset(
            id=digest,
            path=rel,
            provenance="synthetic",
            source_features=list(feature_ids),
        )
    if len(assets) < len(images):
        log.warning(
            "imagegen returned duplicate bytes: %d of %d kept for %s",
            len(assets), len(images), concept_id,
        )
    return [assets[a] for a in sorted(assets)]


def parse_yes_no(reply: str) -> bool:
    """Leading yes/no, case-insensitive; anything else counts as no."""
    word = reply.strip().lower().lstrip("\"'").split(".")[0].split(",")[0].split()
    return bool(word) and word[0] == "yes"


def satisfaction(gateway, image: bytes, features: list[Feature]) -> float:
    """Fraction of features the verifier model confirms in the image."""
    if not features:
        raise ValueError("satisfaction requires at least one feature")
    template = load_template("satisfaction")
    yes = 0
    for feature in features:
        prompt = template.format(feature=feature.text)
        reply = gateway.vision_chat(image, [{"role": "user", "content": prompt}])
        if parse_yes_no(reply):
            yes += 1
    return yes / len(features)


def filter_images(
    gateway, root: Path, candidates: list[ImageAsset], features: list[Feature]
) -> list[ImageAsset]:
    """Keep exactly the candidates with S = 1.0, ordered by asset id.

    Every candidate gets its satisfaction recorded; an image whose
    verification errors out is marked unverified and excluded.
    """
    root = Path(root)
    kept: list[ImageAsset] = []
    for asset in sorted(candidates, key=lambda a: a.id):
        data = (root / asset.path).read_bytes()
        try:
            score = satisfaction(gateway, data, features)
        except BackendError as exc:
            log.warning("verification failed for %s: %s", asset.id, exc)
            asset.extra["unverified"] = True
            continue
        asset.satisfaction = score
        if score == 1.0:
            kept.append(asset)
    if not kept:
        log.warning("no candidate reached satisfaction 1.0 (%d candidates)", len(candidates))
    return kept


def rank_kept(
    gateway,
    root: Path,
    kept: list[ImageAsset],
    features: list[Feature],
    seed: int,
    mode: str = RANK_MEAN_SIMILARITY,
) -> list[str]:
    """Order kept images for downstream selection.

    Default ranks by mean feature similarity (descending, ties by asset id);
    the seeded mode is a plain reproducible shuffle for backends without a
    useful embedding space.
    """
    if mode == RANK_SEEDED:
        ids = sorted(a.id for a in kept)
        stream(seed, "kept-ranking").shuffle(ids)
        return ids
    if mode != RANK_MEAN_SIMILARITY:
        raise ValueError(f"unknown ranking mode {mode!r}")
    scored = []
    for asset in kept:
        data = (root / asset.path).read_bytes()
        mean = sum(gateway_similarity(gateway, f.text, data) for f in features) / len(features)
        scored.append((-mean, asset.id))
    return [asset_id for _, asset_id in sorted(scored)]


def run_batch(
    gateway,
    root: Path,
    target_id: str,
    target_name: str,
    misident_id: str,
    features: list[Feature],
    n: int,
    seed: int,
    ranking: str = RANK_MEAN_SIMILARITY,
) -> tuple[AugmentationBatch, list[ImageAsset]]:
    """Full generate-verify-rank cycle for one confusable pair."""
    prompt = build_prompt(target_name, features)
    feature_ids = [f.id for f in features]
    candidates = generate_candidates(gateway, root, target_id, prompt, feature_ids, n, seed)
    kept = filter_images(gateway, root, candidates, features)
    ranked = rank_kept(gateway, root, kept, features, seed, mode=ranking)
    batch = AugmentationBatch(
        target=target_id,
        misidentified=misident_id,
        features=feature_ids,
        candidates=[a.id for a in candidates],
        kept=ranked,
        prompt_template_hash=template_hash("generation"),
        seed=seed,
        ranking=ranking,
    )
    return batch, candidates
