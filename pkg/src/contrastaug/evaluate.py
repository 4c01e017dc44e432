"""Multiple-choice recognition over the test split and fine-tune export.

Evaluation prompts come in two flavors: plain multiple choice, and an
in-context variant that appends each option's selected features so the model
knows what to look for and what not to mistake the concept for. Accuracy is
micro-averaged over probes; unparsed replies count as wrong. The export
emits a conversational instruction-tuning record per training image, honoring
an exact real:synthetic ratio per concept.
"""

from __future__ import annotations

import logging
import string
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .augment import AugmentationBatch
from .corpus import CorpusManifest, ImageAsset
from .errors import BackendError, ShortfallError
from .features import Feature
from .pairs import parse_choice
from .seeded import stream
from .templating import load_template

log = logging.getLogger(__name__)

FIXED_REAL = "fixed_real"
FIXED_COMPUTE = "fixed_compute"

FIXED_REAL_SYNTHETIC_CHOICES = (0, 1, 3, 5)
FIXED_COMPUTE_RATIOS = ((20, 0), (10, 10), (0, 20))


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    real_per_concept: int
    synthetic_per_concept: int
    mode: str
    in_context_features: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.mode == FIXED_REAL:
            if self.real_per_concept != 5:
                raise ValueError("fixed_real experiments use exactly 5 real images")
            if self.synthetic_per_concept not in FIXED_REAL_SYNTHETIC_CHOICES:
                raise ValueError(
                    f"fixed_real synthetic count must be one of {FIXED_REAL_SYNTHETIC_CHOICES}"
                )
        elif self.mode == FIXED_COMPUTE:
            ratio = (self.real_per_concept, self.synthetic_per_concept)
            if ratio not in FIXED_COMPUTE_RATIOS:
                raise ValueError(f"fixed_compute ratio must be one of {FIXED_COMPUTE_RATIOS}")
        else:
            raise ValueError(f"unknown experiment mode {self.mode!r}")

    @property
    def ratio(self) -> str:
        return f"{self.real_per_concept}:{self.synthetic_per_concept}"


@dataclass
class EvalResult:
    config_name: str
    per_concept: dict[str, tuple[int, int]] = field(default_factory=dict)
    accuracy: float | None = None
    incomplete: bool = False

    def to_record(self) -> dict:
        return {
            "record": "eval_result",
            "config_name": self.config_name,
            "per_concept": {k: list(v) for k, v in sorted(self.per_concept.items())},
            "accuracy": self.accuracy,
            "incomplete": self.incomplete,
        }


def feature_guide_lines(
    option_ids: list[str],
    names: dict[str, str],
    features: dict[str, list[Feature]],
) -> list[str]:
    """One line per option that has selected features, generability-first."""
    lines = []
    for cid in option_ids:
        if cid not in features or not features[cid]:
            continue
        ordered = sorted(
            features[cid], key=lambda f: (-(f.g_score or 0.0), f.id)
        )
        lines.append(f"{names[cid]}: " + "; ".join(f.text for f in ordered))
    return lines


def build_eval_prompt(
    image_id: str,
    options: list[tuple[str, str]],  # (concept id, display name)
    features: dict[str, list[Feature]] | None,
    seed: int,
) -> tuple[str, list[str], list[str]]:
    """Prompt text plus the presented option ids and names.

    Option order is a seeded shuffle keyed by the image, so a model that
    always answers the same letter scores at chance over many probes.
    """
    order = sorted(options)
    stream(seed, "eval-options", image_id).shuffle(order)
    option_ids = [cid for cid, _ in order]
    option_names = [name for _, name in order]
    letters = string.ascii_uppercase
    block = "\n".join(f"{letters[i]}. {name}" for i, name in enumerate(option_names))
    guide = ""
    if features:
        lines = feature_guide_lines(option_ids, dict(order), features)
        if lines:
            guide = load_template("feature_guide").format(option_features="\n".join(lines))
    prompt = load_template("eval_question").format(options_block=block, feature_guide=guide)
    return prompt, option_ids, option_names


def evaluate(
    gateway,
    manifest: CorpusManifest,
    root: Path,
    config: ExperimentConfig,
    option_pool: dict[str, list[str]],
    features: dict[str, list[Feature]] | None = None,
    workers: int = 8,
) -> tuple[EvalResult, list[dict]]:
    """One probe per test image of every concept in the option pool.

    Probes fan out concurrently; the log is flushed in canonical
    (concept, image) order so outputs are deterministic. A backend failure
    mid-run flags the result incomplete instead of reporting accuracy over
    partial data.
    """
    root = Path(root)
    scope = [cid for cid in sorted(option_pool) if cid in manifest.concepts]
    if not scope:
        raise ValueError("option pool names no concept in the manifest")
    use_features = features if (features and config.in_context_features) else None
    names = {cid: manifest.concepts[cid].canonical_name for cid in manifest.concepts}
    tasks = []
    for cid in scope:
        pool_ids = option_pool[cid]
        if cid not in pool_ids:
            raise ValueError(f"option pool for {cid} does not contain the gold concept")
        options = [(oid, names[oid]) for oid in pool_ids]
        for image_id in manifest.concepts[cid].split_ids("test"):
            prompt, option_ids, option_names = build_eval_prompt(
                image_id, options, use_features, config.seed
            )
            tasks.append((cid, image_id, prompt, option_ids, option_names))
    if not tasks:
        raise ValueError("no test images: populate the test split before evaluating")

    def run(task) -> dict:
        cid, image_id, prompt, option_ids, option_names = task
        data = manifest.asset_path(root, image_id).read_bytes()
        try:
            reply = gateway.vision_chat(data, [{"role": "user", "content": prompt}])
        except BackendError as exc:
            log.warning("probe failed for %s: %s", image_id, exc)
            return {"record": "eval_probe", "concept": cid, "image": image_id, "error": str(exc)}
        predicted = parse_choice(reply, option_ids, option_names)
        return {
            "record": "eval_probe",
            "concept": cid,
            "image": image_id,
            "options": option_ids,
            "predicted": predicted,
            "correct": predicted == cid,
        }

    with ThreadPoolExecutor(max_workers=workers) as pool:
        probe_log = list(pool.map(run, tasks))
    incomplete = any("error" in row for row in probe_log)
    per_concept = {cid: (0, 0) for cid in scope}
    for row in probe_log:
        if "error" in row:
            continue
        correct, total = per_concept[row["concept"]]
        per_concept[row["concept"]] = (correct + (1 if row["correct"] else 0), total + 1)
    probe_log.sort(key=lambda r: (r["concept"], r["image"]))
    result = EvalResult(config_name=config.name, per_concept=per_concept, incomplete=incomplete)
    if not incomplete:
        answered = sum(t for _, t in per_concept.values())
        result.accuracy = sum(c for c, _ in per_concept.values()) / answered
    return result, probe_log


def recount_accuracy(probe_log: list[dict]) -> float:
    """Brute-force accuracy from the persisted probe log."""
    rows = [r for r in probe_log if "error" not in r]
    if not rows:
        raise ValueError("probe log holds no completed probes")
    return sum(1 for r in rows if r["predicted"] == r["concept"]) / len(rows)


def export_finetune(
    manifest: CorpusManifest,
    batches: list[AugmentationBatch],
    config: ExperimentConfig,
    concepts: list[str] | None = None,
    synthetic_assets: dict[str, ImageAsset] | None = None,
) -> list[dict]:
    """Instruction-tuning records honoring the exact real:synthetic ratio.

    Real images are the first ``real_per_concept`` of a seeded shuffle of the
    train split (never val or test); synthetic images follow each batch's
    kept ranking (their asset records travel with the batch file, not the
    manifest). Any concept that cannot honor the ratio aborts the export.
    """
    by_target = {b.target: b for b in batches}
    synthetic_assets = synthetic_assets or {}
    scope = sorted(concepts) if concepts is not None else sorted(manifest.concepts)
    shortfalls: list[str] = []
    plan: list[tuple[str, list[str], list[str]]] = []
    for cid in scope:
        concept = manifest.concepts[cid]
        train = sorted(concept.split_ids("train"))
        if len(train) < config.real_per_concept:
            shortfalls.append(f"{cid}: {len(train)} train images < {config.real_per_concept}")
            continue
        stream(config.seed, "export-real", cid).shuffle(train)
        real_ids = train[: config.real_per_concept]
        syn_ids: list[str] = []
        if config.synthetic_per_concept > 0:
            batch = by_target.get(cid)
            kept = batch.kept if batch else []
            if len(kept) < config.synthetic_per_concept:
                shortfalls.append(
                    f"{cid}: {len(kept)} kept synthetic images < {config.synthetic_per_concept}"
                )
                continue
            syn_ids = list(kept[: config.synthetic_per_concept])
        plan.append((cid, real_ids, syn_ids))
    if shortfalls:
        raise ShortfallError(
            f"cannot honor ratio {config.ratio}: " + "; ".join(shortfalls)
        )
    instruction = load_template("finetune_instruction").strip()

    def path_of(aid: str) -> str:
        asset = manifest.assets.get(aid) or synthetic_assets.get(aid)
        if asset is None:
            raise ShortfallError(f"asset {aid} is in a batch but has no asset record")
        return asset.path

    records: list[dict] = []
    for cid, real_ids, syn_ids in plan:
        name = manifest.concepts[cid].canonical_name
        for aid in real_ids + syn_ids:
            records.append(
                {
                    "record": "finetune_example",
                    "image": path_of(aid),
                    "conversations": [
                        {"role": "user", "text": instruction},
                        {"role": "assistant", "text": name},
                    ],
                    "gold": cid,
                }
            )
    return records
