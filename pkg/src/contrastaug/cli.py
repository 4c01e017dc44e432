"""Command-line entry point wiring every pipeline stage.

Stages communicate only through record-stream files, never in-memory
handoff, so a long API-costly run can stop and resume at any boundary and
every artifact can be audited. Each stage writes a ``<out>.meta.json``
sidecar recording input hashes, effective parameters, backend model ids, and
prompt-template hashes -- enough to re-execute the stage identically. Outputs
are written atomically (temp file + rename), so an interrupted stage never
leaves a truncated artifact behind.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

import click

from . import __version__
from .augment import AugmentationBatch, run_batch
from .config import RunConfig, build_gateway, load_config
from .corpus import CorpusManifest, ImageAsset, ingest, split, verify
from .errors import MissingInputError, PipelineError
from .evaluate import ExperimentConfig, evaluate, export_finetune
from .features import Feature, extract_textual, extract_visual
from .filtering import filter_and_select, make_context
from .gateway.mock import build_mock_corpus
from .human_eval import SessionStore, agreement_stats, create_session
from .pairs import ConfusablePair, flag_pairs, partition_subsets, probe_subset, sample_subsets
from .records import dumps_canonical, read_records, write_records
from .seeded import stream
from .templating import template_hash

log = logging.getLogger(__name__)

_TEMPLATE_NAMES = (
    "textual_features", "contrast_block", "visual_features", "merge_features",
    "probe_question", "eval_question", "feature_guide", "satisfaction",
    "generation", "finetune_instruction",
)


# ---- shared plumbing ----


def _require(path: Path, what: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingInputError(f"{what} not found: {path} (run the upstream stage first)")
    return path


def _file_sha(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_meta(out: Path, stage: str, cfg: RunConfig, inputs: dict[str, Path], **extra) -> None:
    meta = {
        "stage": stage,
        "version": __version__,
        "params": {**cfg.effective_params(), **extra},
        "inputs": {name: _file_sha(p) for name, p in sorted(inputs.items())},
        "backends": {
            role: bc.model_id for role, bc in sorted(cfg.backends.items())
        } if cfg.backends else {role: f"mock-{role}" for role in ("chat", "vision", "embed", "imagegen")},
        "templates": {name: template_hash(name) for name in _TEMPLATE_NAMES},
    }
    _write_json(Path(str(out) + ".meta.json"), meta)


def _write_json(path: Path, payload: dict) -> None:
    """Single JSON document, written atomically."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(payload, sort_keys=True, ensure_ascii=False, indent=2))
            fh.write("\n")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _load_features(path: Path) -> list[Feature]:
    return [Feature.from_record(r) for r in read_records(path) if r.get("record") == "feature"]


def _load_pairs(path: Path) -> list[ConfusablePair]:
    return [ConfusablePair.from_record(r) for r in read_records(path) if r.get("record") == "pair"]


def _load_batches(path: Path) -> tuple[list[AugmentationBatch], dict[str, ImageAsset]]:
    batches, assets = [], {}
    for rec in read_records(path):
        if rec.get("record") == "batch":
            batches.append(AugmentationBatch.from_record(rec))
        elif rec.get("record") == "asset":
            asset = ImageAsset.from_record(rec)
            assets[asset.id] = asset
    return batches, assets


def _pair_key_features(features: list[Feature], pairs: list[ConfusablePair]) -> dict[tuple[str, str], list[Feature]]:
    """Group features by (target, misidentified), resolving missing `against`
    from the pair list (non-contrastive extraction does not record one)."""
    against_of = {p.target: p.misidentified for p in pairs}
    grouped: dict[tuple[str, str], list[Feature]] = {}
    for feature in features:
        against = feature.against or against_of.get(feature.target)
        if against is None:
            log.warning(
                "feature %s of %s has no contrast concept and no pair; skipped",
                feature.id, feature.target,
            )
            continue
        grouped.setdefault((feature.target, against), []).append(feature)
    return grouped


def _derived_seed(seed: int, *labels: str) -> int:
    return stream(seed, *labels).next_u64() % (2**31)


def _option_pools(manifest: CorpusManifest, cfg: RunConfig) -> dict[str, list[str]]:
    concepts = manifest.concept_list()
    if cfg.stages.option_pool == "all":
        all_ids = sorted(c.id for c in concepts)
        return {cid: all_ids for cid in all_ids}
    pools: dict[str, list[str]] = {}
    for chunk in partition_subsets(concepts, cfg.stages.subset_size, cfg.seed):
        ids = sorted(c.id for c in chunk)
        for cid in ids:
            pools[cid] = ids
    return pools


def _apply_overrides(cfg: RunConfig, seed, cache_dir, mock) -> RunConfig:
    if seed is not None:
        cfg.seed = seed
    if cache_dir is not None:
        cfg.cache_dir = cache_dir
    if mock:
        cfg.mock = True
    return cfg


# ---- CLI ----


@click.group()
@click.option("--config", "config_path", type=click.Path(path_type=Path), default=None,
              help="YAML run config; ${ENV} interpolation for secrets.")
@click.option("--seed", type=int, default=None, help="Override the run seed.")
@click.option("--cache-dir", type=click.Path(path_type=Path), default=None,
              help="Response cache directory.")
@click.option("--mock", is_flag=True, default=False,
              help="Use the deterministic in-process mock backends.")
@click.option("-v", "--verbose", is_flag=True, default=False)
@click.pass_context
def main(ctx, config_path, seed, cache_dir, mock, verbose):
    """Contrastive visual data-augmentation pipeline."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        cfg = load_config(config_path)
    except PipelineError as exc:
        raise click.ClickException(str(exc)) from exc
    ctx.obj = _apply_overrides(cfg, seed, str(cache_dir) if cache_dir else None, mock)


def _cfg(ctx) -> RunConfig:
    return ctx.obj


@main.command("make-mock-corpus")
@click.option("--root", type=click.Path(path_type=Path), required=True)
@click.option("--concepts", type=int, default=8, show_default=True)
@click.option("--images", type=int, default=35, show_default=True)
@click.pass_context
def cmd_make_mock_corpus(ctx, root, concepts, images):
    """Fabricate a stub-image corpus for mock runs."""
    cfg = _cfg(ctx)
    build_mock_corpus(root, concepts, images, cfg.seed)
    click.echo(f"wrote {concepts} concepts x {images} images under {root}")


@main.command("ingest")
@click.option("--root", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.pass_context
def cmd_ingest(ctx, root, out):
    """Scan a corpus directory into a manifest."""
    cfg = _cfg(ctx)
    _require(root, "corpus root")
    manifest = ingest(root, seed=cfg.seed)
    manifest.save(out)
    # record the root relative to the manifest so identical runs in different
    # directories produce identical metadata bytes
    rel_root = os.path.relpath(Path(root), Path(out).parent)
    _write_meta(out, "ingest", cfg, {}, root=rel_root)
    click.echo(f"{len(manifest.concepts)} concepts, {len(manifest.assets)} assets -> {out}")


@main.command("split")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--train", "train_n", type=int, default=None)
@click.option("--val", "val_n", type=int, default=None)
@click.option("--test", "test_n", type=int, default=None)
@click.pass_context
def cmd_split(ctx, manifest_path, out, train_n, val_n, test_n):
    """Deterministic per-concept train/val/test assignment."""
    cfg = _cfg(ctx)
    _require(manifest_path, "manifest")
    manifest = CorpusManifest.load(manifest_path)
    sizes = (
        train_n if train_n is not None else cfg.stages.train_n,
        val_n if val_n is not None else cfg.stages.val_n,
        test_n if test_n is not None else cfg.stages.test_n,
    )
    result = split(manifest, *sizes)
    result.save(out)
    _write_meta(out, "split", cfg, {"manifest": manifest_path},
                train_n=sizes[0], val_n=sizes[1], test_n=sizes[2])
    click.echo(f"split {sizes} over {len(result.concepts)} concepts -> {out}")


@main.command("verify")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--root", type=click.Path(path_type=Path), required=True)
@click.pass_context
def cmd_verify(ctx, manifest_path, root):
    """Report integrity violations (exit 1 if any)."""
    _require(manifest_path, "manifest")
    manifest = CorpusManifest.load(manifest_path)
    violations = verify(manifest, root)
    for v in violations:
        click.echo(dumps_canonical(v))
    if violations:
        raise click.ClickException(f"{len(violations)} integrity violation(s)")
    click.echo("corpus verified: no violations")


@main.command("discover-pairs")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--root", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--subset-size", type=int, default=None)
@click.option("--threshold", type=float, default=None)
@click.option("--images-per-concept", type=int, default=None)
@click.option("--rounds", type=int, default=None,
              help="Random subsets per round; 0 probes one seeded partition of all concepts.")
@click.option("--probe-log", type=click.Path(path_type=Path), default=None)
@click.pass_context
def cmd_discover_pairs(ctx, manifest_path, root, out, subset_size, threshold,
                       images_per_concept, rounds, probe_log):
    """Probe concept subsets and flag confusable pairs."""
    cfg = _cfg(ctx)
    _require(manifest_path, "manifest")
    manifest = CorpusManifest.load(manifest_path)
    gateway = build_gateway(cfg)
    st = cfg.stages
    subset_size = subset_size if subset_size is not None else st.subset_size
    threshold = threshold if threshold is not None else st.threshold
    per_concept = images_per_concept if images_per_concept is not None else st.images_per_concept
    rounds = rounds if rounds is not None else st.rounds
    concepts = manifest.concept_list()
    if rounds and rounds > 0:
        subsets = sample_subsets(concepts, subset_size, rounds, cfg.seed)
    else:
        subsets = partition_subsets(concepts, subset_size, cfg.seed)
    results = []
    for index, subset_concepts in enumerate(subsets):
        results.extend(
            probe_subset(
                gateway, manifest, root, subset_concepts,
                images_per_concept=per_concept,
                seed=cfg.seed,
                max_subset=subset_size,
                workers=st.workers,
            )
        )
        log.info("probed subset %d/%d (%d concepts)", index + 1, len(subsets), len(subset_concepts))
    pairs = flag_pairs(results, threshold=threshold)
    write_records(out, [p.to_record() for p in pairs])
    if probe_log:
        write_records(probe_log, [r.to_record() for r in results])
    _write_meta(out, "discover-pairs", cfg, {"manifest": manifest_path},
                subset_size=subset_size, threshold=threshold,
                images_per_concept=per_concept, rounds=rounds)
    click.echo(f"{len(results)} probes -> {len(pairs)} confusable pairs -> {out}")


@main.command("extract-features")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--root", type=click.Path(path_type=Path), required=True)
@click.option("--pairs", "pairs_path", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--modes", type=str, default=None, help="Comma list: textual,visual")
@click.option("--contrastive/--no-contrastive", "contrastive", default=None)
@click.option("--visual-images", type=int, default=None)
@click.pass_context
def cmd_extract_features(ctx, manifest_path, root, pairs_path, out, modes, contrastive, visual_images):
    """Textual and visual candidate features per confusable pair."""
    cfg = _cfg(ctx)
    _require(manifest_path, "manifest")
    _require(pairs_path, "pairs file")
    manifest = CorpusManifest.load(manifest_path)
    pairs = _load_pairs(pairs_path)
    gateway = build_gateway(cfg)
    st = cfg.stages
    mode_list = tuple(m.strip() for m in modes.split(",")) if modes else st.modes
    use_contrastive = contrastive if contrastive is not None else st.contrastive
    n_visual = visual_images if visual_images is not None else st.visual_images
    root = Path(root)
    all_features: dict[str, Feature] = {}
    for pair in sorted(pairs, key=lambda p: (p.target, p.misidentified)):
        target = manifest.concepts[pair.target]
        against = manifest.concepts[pair.misidentified] if use_contrastive else None
        extracted: list[Feature] = []
        if "textual" in mode_list:
            extracted.extend(extract_textual(gateway, target, against))
        if "visual" in mode_list:
            train_ids = target.split_ids("train") or sorted(target.images)
            chosen = train_ids[:n_visual]
            images = [
                (manifest.assets[aid], manifest.asset_path(root, aid).read_bytes())
                for aid in chosen
            ]
            extracted.extend(extract_visual(gateway, target, images, against))
        for feature in extracted:
            all_features.setdefault(f"{feature.target}:{feature.against}:{feature.id}", feature)
    ordered = sorted(all_features.values(), key=lambda f: (f.target, f.against or "", f.id))
    write_records(out, [f.to_record() for f in ordered])
    _write_meta(out, "extract-features", cfg,
                {"manifest": manifest_path, "pairs": pairs_path},
                modes=list(mode_list), contrastive=use_contrastive, visual_images=n_visual)
    click.echo(f"{len(ordered)} candidate features over {len(pairs)} pairs -> {out}")


@main.command("filter-features")
@click.option("--features", "features_path", type=click.Path(path_type=Path), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--root", type=click.Path(path_type=Path), required=True)
@click.option("--pairs", "pairs_path", type=click.Path(path_type=Path), default=None,
              help="Needed when features lack a contrast concept.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--d-threshold", type=float, default=None)
@click.option("--top-k", type=int, default=None)
@click.option("--pair-count", type=int, default=None)
@click.option("--g-images", type=int, default=None)
@click.pass_context
def cmd_filter_features(ctx, features_path, manifest_path, root, pairs_path, out,
                        d_threshold, top_k, pair_count, g_images):
    """Score features (discriminability then generability) and select top k."""
    cfg = _cfg(ctx)
    _require(features_path, "features file")
    _require(manifest_path, "manifest")
    manifest = CorpusManifest.load(manifest_path)
    features = _load_features(features_path)
    pairs = _load_pairs(_require(pairs_path, "pairs file")) if pairs_path else []
    gateway = build_gateway(cfg)
    st = cfg.stages
    d_thr = d_threshold if d_threshold is not None else st.d_threshold
    k = top_k if top_k is not None else st.top_k
    pair_n = pair_count if pair_count is not None else st.pair_count
    g_n = g_images if g_images is not None else st.g_images
    root = Path(root)
    grouped = _pair_key_features(features, pairs)
    out_features: list[Feature] = []
    for (target_id, against_id), group in sorted(grouped.items()):
        ctx_scoring = make_context(
            gateway, manifest, root, target_id, against_id, pair_count=pair_n, seed=cfg.seed
        )
        target_name = manifest.concepts[target_id].canonical_name

        def gen(feature: Feature):
            from .augment import build_prompt, generate_candidates

            prompt = build_prompt(target_name, [feature])
            gen_seed = _derived_seed(cfg.seed, "g-images", feature.id)
            return generate_candidates(
                gateway, root, target_id, prompt, [feature.id], n=g_n, seed=gen_seed
            )

        group_sorted = sorted(group, key=lambda f: f.id)
        filter_and_select(group_sorted, ctx_scoring, gen, d_threshold=d_thr, k=k)
        out_features.extend(group_sorted)
    ordered = sorted(out_features, key=lambda f: (f.target, f.against or "", f.id))
    write_records(out, [f.to_record() for f in ordered])
    inputs = {"features": features_path, "manifest": manifest_path}
    if pairs_path:
        inputs["pairs"] = pairs_path
    _write_meta(out, "filter-features", cfg, inputs,
                d_threshold=d_thr, top_k=k, pair_count=pair_n, g_images=g_n)
    selected = sum(1 for f in ordered if f.status == "selected")
    click.echo(f"{selected} selected of {len(ordered)} candidates -> {out}")


@main.command("augment")
@click.option("--selected", "selected_path", type=click.Path(path_type=Path), required=True)
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--root", type=click.Path(path_type=Path), required=True)
@click.option("--pairs", "pairs_path", type=click.Path(path_type=Path), default=None)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--n", "n_images", type=int, default=None)
@click.option("--ranking", type=click.Choice(["mean_similarity", "seeded"]), default=None)
@click.pass_context
def cmd_augment(ctx, selected_path, manifest_path, root, pairs_path, out, n_images, ranking):
    """Generate, verify, and rank synthetic images per confusable pair."""
    cfg = _cfg(ctx)
    _require(selected_path, "selected features file")
    _require(manifest_path, "manifest")
    manifest = CorpusManifest.load(manifest_path)
    features = [f for f in _load_features(selected_path) if f.status == "selected"]
    pairs = _load_pairs(_require(pairs_path, "pairs file")) if pairs_path else []
    gateway = build_gateway(cfg)
    st = cfg.stages
    n = n_images if n_images is not None else st.augment_n
    rank_mode = ranking if ranking is not None else st.ranking
    root = Path(root)
    grouped = _pair_key_features(features, pairs)
    records: list[dict] = []
    n_batches = 0
    n_kept = 0
    for (target_id, against_id), group in sorted(grouped.items()):
        group = sorted(group, key=lambda f: (-(f.g_score or 0.0), f.id))
        target_name = manifest.concepts[target_id].canonical_name
        batch_seed = _derived_seed(cfg.seed, "augment", target_id)
        batch, candidates = run_batch(
            gateway, root, target_id, target_name, against_id, group,
            n=n, seed=batch_seed, ranking=rank_mode,
        )
        records.append(batch.to_record())
        records.extend(a.to_record() for a in candidates)
        n_batches += 1
        n_kept += len(batch.kept)
    write_records(out, records)
    inputs = {"selected": selected_path, "manifest": manifest_path}
    if pairs_path:
        inputs["pairs"] = pairs_path
    _write_meta(out, "augment", cfg, inputs, n=n, ranking=rank_mode)
    click.echo(f"{n_batches} batches, {n_kept} images kept at S=1.0 -> {out}")


@main.command("evaluate")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--root", type=click.Path(path_type=Path), required=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--name", default="eval")
@click.option("--mode", type=click.Choice(["fixed_real", "fixed_compute"]), default="fixed_real")
@click.option("--real", "real_n", type=int, default=5)
@click.option("--syn", "syn_n", type=int, default=0)
@click.option("--in-context/--no-in-context", "in_context", default=False)
@click.option("--features", "features_path", type=click.Path(path_type=Path), default=None)
@click.option("--option-pool", type=click.Choice(["subset", "all"]), default=None)
@click.option("--probe-log", type=click.Path(path_type=Path), default=None)
@click.pass_context
def cmd_evaluate(ctx, manifest_path, root, out, name, mode, real_n, syn_n,
                 in_context, features_path, option_pool, probe_log):
    """Multiple-choice recognition accuracy over the test split."""
    cfg = _cfg(ctx)
    _require(manifest_path, "manifest")
    manifest = CorpusManifest.load(manifest_path)
    if option_pool is not None:
        cfg.stages.option_pool = option_pool
    features_map = None
    inputs = {"manifest": manifest_path}
    if in_context:
        _require(features_path, "selected features file (required for --in-context)")
        inputs["features"] = features_path
        features_map = {}
        for feature in _load_features(features_path):
            if feature.status == "selected":
                features_map.setdefault(feature.target, []).append(feature)
    gateway = build_gateway(cfg)
    config = ExperimentConfig(
        name=name, real_per_concept=real_n, synthetic_per_concept=syn_n,
        mode=mode, in_context_features=in_context, seed=cfg.seed,
    )
    result, probes = evaluate(
        gateway, manifest, root, config, _option_pools(manifest, cfg),
        features=features_map, workers=cfg.stages.workers,
    )
    _write_json(out, result.to_record())
    if probe_log:
        write_records(probe_log, probes)
    _write_meta(out, "evaluate", cfg, inputs, name=name, mode=mode,
                real=real_n, syn=syn_n, in_context=in_context)
    acc = "incomplete" if result.incomplete else f"{result.accuracy:.4f}"
    click.echo(f"accuracy {acc} over {sum(t for _, t in result.per_concept.values())} probes -> {out}")


def _parse_ratio(ratio: str) -> tuple[int, int, str]:
    try:
        real_s, syn_s = ratio.split(":")
        real_n, syn_n = int(real_s), int(syn_s)
    except ValueError:
        raise click.ClickException(f"ratio must look like 5:1, got {ratio!r}") from None
    mode = "fixed_compute" if real_n + syn_n == 20 and (real_n, syn_n) != (15, 5) else "fixed_real"
    return real_n, syn_n, mode


@main.command("export-finetune")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--batches", "batches_path", type=click.Path(path_type=Path), required=True)
@click.option("--ratio", required=True, help="real:synthetic per concept, e.g. 5:1")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.pass_context
def cmd_export_finetune(ctx, manifest_path, batches_path, ratio, out):
    """Conversational instruction-tuning records at an exact real:syn ratio."""
    cfg = _cfg(ctx)
    _require(manifest_path, "manifest")
    _require(batches_path, "batches file")
    manifest = CorpusManifest.load(manifest_path)
    batches, synthetic_assets = _load_batches(batches_path)
    real_n, syn_n, mode = _parse_ratio(ratio)
    config = ExperimentConfig(
        name=f"export-{ratio}", real_per_concept=real_n, synthetic_per_concept=syn_n,
        mode=mode, seed=cfg.seed,
    )
    records = export_finetune(
        manifest, batches, config,
        concepts=sorted({b.target for b in batches}),
        synthetic_assets=synthetic_assets,
    )
    write_records(out, records)
    _write_meta(out, "export-finetune", cfg,
                {"manifest": manifest_path, "batches": batches_path}, ratio=ratio, mode=mode)
    click.echo(f"{len(records)} training records at {ratio} -> {out}")


@main.group("human-eval")
def human_eval_group():
    """Annotation sessions and agreement statistics."""


@human_eval_group.command("create")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--features", "features_path", type=click.Path(path_type=Path), required=True)
@click.option("--batches", "batches_path", type=click.Path(path_type=Path), default=None)
@click.option("--condition", type=click.Choice(["real_target", "real_misidentified", "synthetic_target"]),
              required=True)
@click.option("--n-items", type=int, default=100, show_default=True)
@click.option("--annotators", default="", help="Comma list of annotator ids.")
@click.option("--sessions-dir", type=click.Path(path_type=Path), required=True)
@click.pass_context
def cmd_human_eval_create(ctx, manifest_path, features_path, batches_path,
                          condition, n_items, annotators, sessions_dir):
    """Sample image-feature items into a new annotation session."""
    cfg = _cfg(ctx)
    _require(manifest_path, "manifest")
    _require(features_path, "selected features file")
    manifest = CorpusManifest.load(manifest_path)
    features = _load_features(features_path)
    batches, synthetic_assets = ([], {})
    if batches_path:
        batches, synthetic_assets = _load_batches(_require(batches_path, "batches file"))
    try:
        session = create_session(
            manifest, features, condition, n_items=n_items, seed=cfg.seed,
            annotators=[a.strip() for a in annotators.split(",") if a.strip()],
            batches=batches, synthetic_assets=synthetic_assets,
        )
    except ValueError as exc:
        raise click.ClickException(str(exc)) from exc
    SessionStore(sessions_dir).save_session(session)
    click.echo(session.id)


@human_eval_group.command("stats")
@click.option("--session", "session_id", required=True)
@click.option("--sessions-dir", type=click.Path(path_type=Path), required=True)
def cmd_human_eval_stats(session_id, sessions_dir):
    """Positive rate and Fleiss' kappa for a completed session."""
    store = SessionStore(sessions_dir)
    try:
        session = store.load_session(session_id)
        stats = agreement_stats(session, store.load_records(session_id))
    except (FileNotFoundError, ValueError, PipelineError) as exc:
        raise click.ClickException(str(exc)) from exc
    click.echo(dumps_canonical({
        "fleiss_kappa": stats.fleiss_kappa,
        "n_annotators": stats.n_annotators,
        "n_items": stats.n_items,
        "positive_rate": stats.positive_rate,
        "unanimous": stats.unanimous,
    }))


@main.command("serve-annotation")
@click.option("--manifest", "manifest_path", type=click.Path(path_type=Path), required=True)
@click.option("--root", type=click.Path(path_type=Path), required=True)
@click.option("--sessions-dir", type=click.Path(path_type=Path), required=True)
@click.option("--batches", "batches_path", type=click.Path(path_type=Path), default=None)
@click.option("--static", "static_dir", type=click.Path(path_type=Path), default=None,
              help="Built annotation UI directory (frontend/dist).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8808, show_default=True)
@click.option("--show-concepts", is_flag=True, default=False)
@click.pass_context
def cmd_serve_annotation(ctx, manifest_path, root, sessions_dir, batches_path,
                         static_dir, host, port, show_concepts):
    """Serve the annotation HTTP API (and the UI when built)."""
    import uvicorn

    from .server import create_app

    _require(manifest_path, "manifest")
    manifest = CorpusManifest.load(manifest_path)
    synthetic_assets = {}
    if batches_path:
        _, synthetic_assets = _load_batches(_require(batches_path, "batches file"))
    app = create_app(
        manifest, Path(root), SessionStore(sessions_dir),
        synthetic_assets=synthetic_assets,
        static_dir=Path(static_dir) if static_dir else None,
        show_concepts=show_concepts,
    )
    uvicorn.run(app, host=host, port=port)


@main.command("e2e")
@click.option("--out", "out_dir", type=click.Path(path_type=Path), required=True)
@click.option("--root", type=click.Path(path_type=Path), default=None,
              help="Existing corpus root; omit to fabricate a mock corpus under --out.")
@click.option("--concepts", type=int, default=16, show_default=True)
@click.option("--images", type=int, default=35, show_default=True)
@click.pass_context
def cmd_e2e(ctx, out_dir, root, concepts, images):
    """Full pipeline run; with --mock it is reproducible bit-for-bit."""
    cfg = _cfg(ctx)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.cache_dir is None:
        cfg.cache_dir = str(out_dir / "cache")
    runner = click.get_current_context()

    def invoke(cmd, **kwargs):
        runner.invoke(cmd, **kwargs)

    if root is None:
        if not cfg.mock:
            raise click.ClickException("--root is required unless running --mock")
        root = out_dir / "corpus"
        invoke(cmd_make_mock_corpus, root=root, concepts=concepts, images=images)
    root = Path(root)
    st = cfg.stages
    manifest_raw = out_dir / "manifest.jsonl"
    manifest_split = out_dir / "manifest.split.jsonl"
    pairs_path = out_dir / "pairs.jsonl"
    features_path = out_dir / "features.jsonl"
    selected_path = out_dir / "selected.jsonl"
    batches_path = out_dir / "batches.jsonl"

    invoke(cmd_ingest, root=root, out=manifest_raw)
    invoke(cmd_split, manifest_path=manifest_raw, out=manifest_split,
           train_n=None, val_n=None, test_n=None)
    invoke(cmd_discover_pairs, manifest_path=manifest_split, root=root, out=pairs_path,
           subset_size=None, threshold=None, images_per_concept=None, rounds=None,
           probe_log=out_dir / "pairs.probes.jsonl")
    invoke(cmd_extract_features, manifest_path=manifest_split, root=root,
           pairs_path=pairs_path, out=features_path,
           modes=None, contrastive=None, visual_images=None)
    invoke(cmd_filter_features, features_path=features_path, manifest_path=manifest_split,
           root=root, pairs_path=pairs_path, out=selected_path,
           d_threshold=None, top_k=None, pair_count=None, g_images=None)
    invoke(cmd_augment, selected_path=selected_path, manifest_path=manifest_split, root=root,
           pairs_path=pairs_path, out=batches_path, n_images=None, ranking=None)
    invoke(cmd_evaluate, manifest_path=manifest_split, root=root,
           out=out_dir / "eval.baseline.json", name="baseline", mode="fixed_real",
           real_n=5, syn_n=0, in_context=False, features_path=None, option_pool=None,
           probe_log=out_dir / "eval.baseline.probes.jsonl")
    invoke(cmd_evaluate, manifest_path=manifest_split, root=root,
           out=out_dir / "eval.incontext.json", name="incontext", mode="fixed_real",
           real_n=5, syn_n=0, in_context=True, features_path=selected_path, option_pool=None,
           probe_log=out_dir / "eval.incontext.probes.jsonl")
    for ratio in st.export_ratios:
        slug = ratio.replace(":", "-")
        invoke(cmd_export_finetune, manifest_path=manifest_split, batches_path=batches_path,
               ratio=ratio, out=out_dir / f"export.{slug}.jsonl")
    click.echo(f"e2e complete under {out_dir}")


if __name__ == "__main__":
    main()
