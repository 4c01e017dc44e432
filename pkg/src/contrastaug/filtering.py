"""Feature filtering by discriminability and generability.

Both scores are means of pairwise likelihood ratios. For a feature f over
index-paired images (t_i, m_i):

    discriminability = mean_i  s(f, t_i) / (s(f, t_i) + s(f, m_i))
    generability     = mean_i  s(f, syn_i) / (s(f, syn_i) + s(f, m_i))

where s is the shifted cosine (1 + cos) / 2 between the feature-text
embedding and the image embedding, so s is nonnegative and a feature equally
close to both classes scores exactly 0.5. Features below the
discriminability threshold never reach generability scoring (which is the
expensive step: it needs per-feature synthetic images); survivors are ranked
by generability and the top k go on to image generation.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

from .corpus import CorpusManifest, ImageAsset
from .features import Feature
from .seeded import stream

log = logging.getLogger(__name__)

DEFAULT_D_THRESHOLD = 0.6
DEFAULT_TOP_K = 5
DEFAULT_PAIR_COUNT = 5


@dataclass
class ScoringContext:
    """Image pairing and similarity function for one (target, misidentified) pair."""

    target_real: list[ImageAsset]
    misident_real: list[ImageAsset]
    pair_count: int
    sim: Callable[[str, ImageAsset], float]

    def __post_init__(self):
        if self.pair_count < 1:
            raise ValueError("pair_count must be >= 1")
        if len(self.target_real) < self.pair_count or len(self.misident_real) < self.pair_count:
            raise ValueError(
                f"need at least {self.pair_count} real images per side "
                f"(have {len(self.target_real)} target, {len(self.misident_real)} misidentified)"
            )

    def pairs(self) -> list[tuple[ImageAsset, ImageAsset]]:
        return list(zip(self.target_real[: self.pair_count], self.misident_real[: self.pair_count]))


def gateway_similarity(gateway, feature_text: str, image: bytes) -> float:
    """Shifted cosine in [0, 1]; 0.5 means orthogonal embeddings."""
    value = (1.0 + gateway.embed_text(feature_text).dot(gateway.embed_image(image))) / 2.0
    return min(1.0, max(0.0, value))


def make_context(
    gateway,
    manifest: CorpusManifest,
    root: Path,
    target_id: str,
    misident_id: str,
    pair_count: int = DEFAULT_PAIR_COUNT,
    seed: int = 0,
) -> ScoringContext:
    """Seeded-shuffled, equal-length image pairing for one confusable pair.

    Real images come from the train split when one exists (validation images
    stay with probing, test stays untouched); otherwise all the concept's
    images are eligible. Both sides are truncated to the smaller count.
    """
    root = Path(root)

    def reals(concept_id: str) -> list[ImageAsset]:
        concept = manifest.concepts[concept_id]
        ids = concept.split_ids("train") or list(concept.images)
        return [manifest.assets[aid] for aid in sorted(ids)]

    target_imgs = reals(target_id)
    misident_imgs = reals(misident_id)
    rng = stream(seed, "score-pairing", target_id, misident_id)
    rng.shuffle(target_imgs)
    rng.shuffle(misident_imgs)
    count = min(len(target_imgs), len(misident_imgs), pair_count)

    cache: dict[tuple[str, str], float] = {}

    def sim(text: str, image: ImageAsset) -> float:
        key = (text, image.id)
        if key not in cache:
            cache[key] = gateway_similarity(gateway, text, (root / image.path).read_bytes())
        return cache[key]

    return ScoringContext(
        target_real=target_imgs,
        misident_real=misident_imgs,
        pair_count=count,
        sim=sim,
    )


def ratio_mean(pairs: list[tuple[float, float]]) -> float:
    """Mean of a/(a+b) with the 0/0 term valued 0.5 (no evidence either way)."""
    if not pairs:
        raise ValueError("ratio_mean needs at least one pair")
    terms = []
    for a, b in pairs:
        denom = a + b
        terms.append(0.5 if denom == 0.0 else a / denom)
    return math.fsum(terms) / len(terms)


def discriminability(feature: Feature, ctx: ScoringContext) -> float:
    values = [
        (ctx.sim(feature.text, t), ctx.sim(feature.text, m)) for t, m in ctx.pairs()
    ]
    return ratio_mean(values)


def generability(feature: Feature, synthetic: list[ImageAsset], ctx: ScoringContext) -> float:
    """Same ratio with the i-th synthetic against the i-th misidentified real."""
    if not synthetic:
        raise ValueError("generability needs at least one synthetic image")
    misident = ctx.misident_real[: ctx.pair_count]
    count = min(len(synthetic), len(misident))
    values = [
        (ctx.sim(feature.text, synthetic[i]), ctx.sim(feature.text, misident[i]))
        for i in range(count)
    ]
    return ratio_mean(values)


def filter_and_select(
    features: list[Feature],
    ctx: ScoringContext,
    gen: Callable[[Feature], list[ImageAsset]],
    d_threshold: float = DEFAULT_D_THRESHOLD,
    k: int = DEFAULT_TOP_K,
) -> list[Feature]:
    """Score, threshold, and pick the top-k features for one pair.

    Mutates the given features in place: every feature gets a d_score;
    features strictly below the threshold are rejected and never see the
    generability supplier. Survivors get a g_score and either ``selected``
    (top k by G desc, ties D desc then id asc) or stay ``passed_d``.
    """
    survivors: list[Feature] = []
    for feature in features:
        feature.d_score = discriminability(feature, ctx)
        if feature.d_score < d_threshold:
            feature.advance("rejected")
        else:
            feature.advance("passed_d")
            survivors.append(feature)
    if not survivors:
        log.warning("no features passed the discriminability threshold %.2f", d_threshold)
        return []
    for feature in survivors:
        feature.g_score = generability(feature, gen(feature), ctx)
    ranked = sorted(survivors, key=lambda f: (-f.g_score, -f.d_score, f.id))
    selected = ranked[:k]
    for feature in selected:
        feature.advance("selected")
    return selected
