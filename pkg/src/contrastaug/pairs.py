"""Confusable-pair discovery via multiple-choice probes over concept subsets.

Each probe shows the vision model one validation image and a lettered list of
every concept in the subset (seeded-random order per probe). Directional
misclassification rates come from a plain confusion recount; an unordered
pair is flagged when either direction is strictly above the threshold, with
the noisier side as the designated target.
"""

from __future__ import annotations

import logging
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import Concept, CorpusManifest
from .records import split_known
from .seeded import stream
from .templating import load_template

log = logging.getLogger(__name__)

UNPARSED = "unparsed"

DEFAULT_SUBSET_SIZE = 15
DEFAULT_THRESHOLD = 0.2
DEFAULT_IMAGES_PER_CONCEPT = 5


@dataclass
class ProbeResult:
    image: str
    options: list[str]  # concept ids in presented order
    predicted: str  # concept id or "unparsed"
    gold: str

    def to_record(self) -> dict:
        return {
            "record": "probe",
            "image": self.image,
            "options": self.options,
            "predicted": self.predicted,
            "gold": self.gold,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ProbeResult":
        return cls(
            image=rec["image"],
            options=list(rec["options"]),
            predicted=rec["predicted"],
            gold=rec["gold"],
        )


@dataclass
class ConfusablePair:
    target: str
    misidentified: str
    rate_t_to_m: float
    rate_m_to_t: float
    probe_count: int  # all probes of either concept, unparsed included
    extra: dict = field(default_factory=dict)

    _FIELDS = ("target", "misidentified", "rate_t_to_m", "rate_m_to_t", "probe_count")

    def to_record(self) -> dict:
        rec = {
            "record": "pair",
            "target": self.target,
            "misidentified": self.misidentified,
            "rate_t_to_m": self.rate_t_to_m,
            "rate_m_to_t": self.rate_m_to_t,
            "probe_count": self.probe_count,
        }
        rec.update(self.extra)
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "ConfusablePair":
        known, extra = split_known(rec, cls._FIELDS)
        extra.pop("record", None)
        return cls(
            target=known["target"],
            misidentified=known["misidentified"],
            rate_t_to_m=known["rate_t_to_m"],
            rate_m_to_t=known["rate_m_to_t"],
            probe_count=known["probe_count"],
            extra=extra,
        )


def build_probe_prompt(option_names: list[str]) -> str:
    letters = string.ascii_uppercase
    block = "\n".join(f"{letters[i]}. {name}" for i, name in enumerate(option_names))
    return load_template("probe_question").format(options_block=block)


def parse_choice(reply: str, option_ids: list[str], option_names: list[str]) -> str:
    """Map a model reply to an option id: leading letter, exact name, or a
    uniquely-matching name substring; anything else is unparsed."""
    text = reply.strip()
    if not text:
        return UNPARSED
    head = text[0].upper()
    if head in string.ascii_uppercase and (len(text) == 1 or text[1] in ".):, \t"):
        index = string.ascii_uppercase.index(head)
        if index < len(option_ids):
            return option_ids[index]
    lowered = text.lower()
    for oid, name in zip(option_ids, option_names):
        if lowered == name.lower():
            return oid
    contained = [oid for oid, name in zip(option_ids, option_names) if name.lower() in lowered]
    if len(contained) == 1:
        return contained[0]
    return UNPARSED


def probe_subset(
    gateway,
    manifest: CorpusManifest,
    root: Path,
    concepts: list[Concept],
    images_per_concept: int = DEFAULT_IMAGES_PER_CONCEPT,
    seed: int = 0,
    max_subset: int = DEFAULT_SUBSET_SIZE,
    workers: int = 8,
) -> list[ProbeResult]:
    """One multiple-choice probe per (concept, validation image).

    Probes fan out through the gateway concurrently; results come back in
    task order, so the output is deterministic regardless of completion
    order.
    """
    if not 2 <= len(concepts) <= max_subset:
        raise ValueError(f"subset size {len(concepts)} outside [2, {max_subset}]")
    for concept in concepts:
        if len(concept.split_ids("val")) < images_per_concept:
            raise ValueError(
                f"concept {concept.id} has fewer than {images_per_concept} validation images"
            )
    by_id = {c.id: c for c in concepts}
    tasks = []
    for concept in sorted(concepts, key=lambda c: c.id):
        for image_id in concept.split_ids("val")[:images_per_concept]:
            order = sorted(by_id)
            stream(seed, "probe-options", concept.id, image_id).shuffle(order)
            names = [by_id[cid].canonical_name for cid in order]
            tasks.append((concept.id, image_id, order, names))

    def run(task):
        gold, image_id, order, names = task
        prompt = build_probe_prompt(names)
        data = manifest.asset_path(root, image_id).read_bytes()
        reply = gateway.vision_chat(data, [{"role": "user", "content": prompt}])
        predicted = parse_choice(reply, order, names)
        if predicted == UNPARSED:
            log.warning("unparseable probe reply for image %s: %r", image_id, reply[:80])
        return ProbeResult(image=image_id, options=order, predicted=predicted, gold=gold)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, tasks))


def flag_pairs(results: list[ProbeResult], threshold: float = DEFAULT_THRESHOLD) -> list[ConfusablePair]:
    """Confusion recount over probe results; strict ">" at the threshold.

    Unparsed replies stay out of the rate denominators but count toward the
    pair's probe_count. Each flagged unordered pair is emitted once, with the
    higher-confusion side as target (ties to the smaller id).
    """
    if not results:
        raise ValueError("flag_pairs requires at least one probe result")
    confusions: dict[tuple[str, str], int] = {}
    parsed: dict[str, int] = {}
    probed: dict[str, int] = {}
    for result in results:
        probed[result.gold] = probed.get(result.gold, 0) + 1
        if result.predicted == UNPARSED:
            continue
        parsed[result.gold] = parsed.get(result.gold, 0) + 1
        if result.predicted != result.gold:
            key = (result.gold, result.predicted)
            confusions[key] = confusions.get(key, 0) + 1

    def rate(a: str, b: str) -> float:
        n = parsed.get(a, 0)
        return confusions.get((a, b), 0) / n if n else 0.0

    flagged: list[ConfusablePair] = []
    seen: set[tuple[str, str]] = set()
    for a, b in sorted(confusions):
        unordered = (min(a, b), max(a, b))
        if unordered in seen:
            continue
        seen.add(unordered)
        lo, hi = unordered
        r_lo_hi, r_hi_lo = rate(lo, hi), rate(hi, lo)
        if max(r_lo_hi, r_hi_lo) <= threshold:
            continue
        if r_lo_hi >= r_hi_lo:
            target, misident, r_tm, r_mt = lo, hi, r_lo_hi, r_hi_lo
        else:
            target, misident, r_tm, r_mt = hi, lo, r_hi_lo, r_lo_hi
        flagged.append(
            ConfusablePair(
                target=target,
                misidentified=misident,
                rate_t_to_m=r_tm,
                rate_m_to_t=r_mt,
                probe_count=probed.get(target, 0) + probed.get(misident, 0),
            )
        )
    flagged.sort(key=lambda p: (p.target, p.misidentified))
    return flagged


def partition_subsets(concepts: list[Concept], subset_size: int, seed: int) -> list[list[Concept]]:
    """Seeded balanced partition into subsets of 2..subset_size concepts."""
    n = len(concepts)
    if n < 2:
        raise ValueError("need at least 2 concepts to probe")
    pool = sorted(concepts, key=lambda c: c.id)
    stream(seed, "subset-partition").shuffle(pool)
    k = max(1, -(-n // subset_size))
    while k > 1 and n // k < 2:
        k -= 1
    sizes = [n // k + (1 if i < n % k else 0) for i in range(k)]
    if sizes[0] > subset_size:
        raise ValueError(f"cannot partition {n} concepts into subsets of <= {subset_size}")
    chunks, at = [], 0
    for size in sizes:
        chunks.append(pool[at : at + size])
        at += size
    return chunks


def sample_subsets(
    concepts: list[Concept], subset_size: int, rounds: int, seed: int
) -> list[list[Concept]]:
    """Independent seeded samples, one subset per round."""
    pool = sorted(concepts, key=lambda c: c.id)
    k = min(subset_size, len(pool))
    return [stream(seed, "subset-round", str(r)).sample(pool, k) for r in range(rounds)]
