"""Score math against hand values and a from-raw-embeddings oracle."""

import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_corpus, make_mock_gateway

from contrastaug.corpus import ImageAsset
from contrastaug.features import Feature, feature_id
from contrastaug.filtering import (
    ScoringContext,
    discriminability,
    filter_and_select,
    gateway_similarity,
    generability,
    make_context,
    ratio_mean,
)
from contrastaug.gateway.client import ModelGateway
from contrastaug.gateway.config import BackendConfig

from conftest import ScriptedBackend


def _feature(text, target="t", against="m"):
    return Feature(id=feature_id(text), text=text, kind="textual",
                   contrastive=True, target=target, against=against)


def _assets(prefix, n):
    return [ImageAsset(id=f"{prefix}{i}", path=f"{prefix}{i}.img") for i in range(n)]


def _table_context(sim_table, n_pairs):
    """ScoringContext whose sim() reads from {(text, asset_id): value}."""
    return ScoringContext(
        target_real=_assets("t", n_pairs),
        misident_real=_assets("m", n_pairs),
        pair_count=n_pairs,
        sim=lambda text, asset: sim_table[(text, asset.id)],
    )


# ---- similarity ----


def _embed_gateway(vectors):
    backend = ScriptedBackend(embed_vectors=vectors)
    return ModelGateway({"embed": backend}, {"embed": BackendConfig(role="embed", model_id="e")})


def test_similarity_identical_orthogonal_antipodal():
    import hashlib

    img = b"image-bytes"
    sha = hashlib.sha256(img).hexdigest()
    for vec, expected in ([1.0, 0.0], 1.0), ([0.0, 1.0], 0.5), ([-1.0, 0.0], 0.0):
        gateway = _embed_gateway({"f": [1.0, 0.0], sha: vec})
        assert gateway_similarity(gateway, "f", img) == pytest.approx(expected, abs=1e-12)


# ---- discriminability / generability hand values ----


def test_d_symmetric_similarities_give_half():
    table = {("f", f"t{i}"): 0.8 for i in range(3)} | {("f", f"m{i}"): 0.8 for i in range(3)}
    ctx = _table_context(table, 3)
    assert discriminability(_feature("f"), ctx) == pytest.approx(0.5, abs=1e-15)


def test_d_single_pair_hand_value():
    # s(f, t) = 1.0, s(f, m) = 0.5 -> 1.0 / 1.5
    ctx = _table_context({("f", "t0"): 1.0, ("f", "m0"): 0.5}, 1)
    assert discriminability(_feature("f"), ctx) == pytest.approx(1.0 / 1.5, abs=1e-15)


def test_d_swap_identity():
    """Swapping target and misidentified image sets complements D."""
    table = {("f", "t0"): 0.9, ("f", "t1"): 0.4, ("f", "m0"): 0.2, ("f", "m1"): 0.7}
    ctx = _table_context(table, 2)
    swapped = ScoringContext(
        target_real=_assets("m", 2),
        misident_real=_assets("t", 2),
        pair_count=2,
        sim=lambda text, asset: table[(text, asset.id)],
    )
    d = discriminability(_feature("f"), ctx)
    d_swapped = discriminability(_feature("f"), swapped)
    assert d + d_swapped == pytest.approx(1.0, abs=1e-12)


def test_d_degenerate_zero_pair_counts_half():
    table = {("f", "t0"): 0.0, ("f", "m0"): 0.0, ("f", "t1"): 1.0, ("f", "m1"): 0.0}
    ctx = _table_context(table, 2)
    assert discriminability(_feature("f"), ctx) == pytest.approx(0.75, abs=1e-15)


def test_g_hand_values():
    table = {("f", "m0"): 0.3, ("f", "s0"): 0.9}
    ctx = _table_context(table, 1)
    syn = [ImageAsset(id="s0", path="s0.img")]
    assert generability(_feature("f"), syn, ctx) == pytest.approx(0.75, abs=1e-15)


def test_g_two_pairs_mean():
    # ratios 0.8 and 0.6 -> mean 0.7
    table = {("f", "s0"): 0.8, ("f", "m0"): 0.2, ("f", "s1"): 0.6, ("f", "m1"): 0.4}
    ctx = _table_context(table, 2)
    syn = _assets("s", 2)
    assert generability(_feature("f"), syn, ctx) == pytest.approx(0.7, abs=1e-12)


def test_g_pairs_to_min_length():
    table = {("f", "s0"): 0.5, ("f", "m0"): 0.5, ("f", "m1"): 0.0}
    ctx = _table_context(table, 2)
    assert generability(_feature("f"), _assets("s", 1), ctx) == pytest.approx(0.5)


@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=20))
def test_ratio_mean_bounds(pairs):
    value = ratio_mean(pairs)
    assert 0.0 <= value <= 1.0


@settings(max_examples=100)
@given(
    pairs=st.lists(st.tuples(st.floats(0.01, 1), st.floats(0.01, 1)), min_size=1, max_size=8),
    index=st.integers(min_value=0, max_value=7),
    bump=st.floats(0.001, 0.5),
)
def test_ratio_mean_monotone_in_target_side(pairs, index, bump):
    index = index % len(pairs)
    bumped = list(pairs)
    a, b = bumped[index]
    bumped[index] = (min(1.0, a + bump), b)
    assert ratio_mean(bumped) >= ratio_mean(pairs) - 1e-12


# ---- oracle equality from raw embeddings, through the real gateway ----


def _cos(u, v):
    num = sum(x * y for x, y in zip(u, v))
    return num / (math.sqrt(sum(x * x for x in u)) * math.sqrt(sum(x * x for x in v)))


def oracle_scores(text_vec, target_vecs, misident_vecs, synthetic_vecs):
    """Straight-from-definition D and G using raw (unnormalized) vectors."""
    def s(v):
        return (1.0 + _cos(text_vec, v)) / 2.0

    def ratio(a, b):
        return 0.5 if (a + b) == 0 else a / (a + b)

    d_terms = [ratio(s(t), s(m)) for t, m in zip(target_vecs, misident_vecs)]
    g_terms = [ratio(s(y), s(m)) for y, m in zip(synthetic_vecs, misident_vecs)]
    return sum(d_terms) / len(d_terms), sum(g_terms) / len(g_terms)


def test_scores_match_raw_embedding_oracle(tmp_path):
    root = tmp_path / "c"
    manifest = make_corpus(root, n_concepts=4, images=12, seed=13, splits=(5, 4, 3))
    gateway = make_mock_gateway(seed=13)
    hub_gateway = make_mock_gateway(seed=13)  # same geometry, separate stats

    target, misident = "species-000", "species-001"
    ctx = make_context(gateway, manifest, root, target, misident, pair_count=5, seed=13)
    feature = _feature(f"banded crown (tag:{target}/0)", target, misident)

    # build per-feature synthetic stand-ins from the other concept's files so
    # bytes exist on disk without running generation
    syn_assets = [
        manifest.assets[aid] for aid in sorted(manifest.concepts["species-002"].images)[:5]
    ]
    d = discriminability(feature, ctx)
    g = generability(feature, syn_assets, ctx)

    def raw_vec_of_image(asset):
        data = (root / asset.path).read_bytes()
        return list(hub_gateway.embed_image(data).vector)

    text_vec = list(hub_gateway.embed_text(feature.text).vector)
    d_oracle, g_oracle = oracle_scores(
        text_vec,
        [raw_vec_of_image(a) for a in ctx.target_real[:5]],
        [raw_vec_of_image(a) for a in ctx.misident_real[:5]],
        [raw_vec_of_image(a) for a in syn_assets],
    )
    assert d == pytest.approx(d_oracle, abs=1e-12)
    assert g == pytest.approx(g_oracle, abs=1e-12)


# ---- filter_and_select ----


def _select_with_d_values(d_values, k=5, threshold=0.6, g_value=0.7):
    """Features whose D equals the given values exactly (single pair each)."""
    features = []
    table = {}
    for i, d in enumerate(d_values):
        text = f"f{i}"
        features.append(_feature(text))
        # a/(a+b) = d with a = d, b = 1-d
        table[(text, "t0")] = d
        table[(text, "m0")] = 1.0 - d
        table[(text, "s0")] = g_value
    ctx = _table_context(table, 1)
    gen_calls = []

    def gen(feature):
        gen_calls.append(feature.text)
        return _assets("s", 1)

    selected = filter_and_select(features, ctx, gen, d_threshold=threshold, k=k)
    return features, selected, gen_calls


def test_threshold_is_strictly_below():
    features, selected, _ = _select_with_d_values([0.59, 0.60, 0.61])
    by_text = {f.text: f for f in features}
    assert by_text["f0"].status == "rejected"
    assert {f.text for f in selected} == {"f1", "f2"}
    assert by_text["f1"].d_score == pytest.approx(0.60)


def test_g_never_computed_for_rejected():
    features, _, gen_calls = _select_with_d_values([0.2, 0.7, 0.9, 0.55])
    assert sorted(gen_calls) == ["f1", "f2"]
    for f in features:
        if f.status == "rejected":
            assert f.g_score is None
            assert f.d_score is not None


def test_all_survivors_selected_when_under_k():
    _, selected, _ = _select_with_d_values([0.7, 0.8, 0.9], k=5)
    assert len(selected) == 3
    for f in selected:
        assert f.status == "selected"
        assert f.d_score >= 0.6


def test_top_k_by_g_then_d_then_id():
    texts = [f"f{i}" for i in range(4)]
    features = [_feature(t) for t in texts]
    table = {}
    for i, t in enumerate(texts):
        table[(t, "t0")] = 0.9
        table[(t, "m0")] = 0.1
    # distinct G for f0/f1; equal G and D for f2/f3 -> id ascending breaks tie
    g_values = {"f0": 0.9, "f1": 0.8, "f2": 0.5, "f3": 0.5}
    for t in texts:
        table[(t, "s0")] = g_values[t]
    ctx = _table_context(table, 1)
    selected = filter_and_select(features, ctx, lambda f: _assets("s", 1), k=3)
    assert [f.text for f in selected[:2]] == ["f0", "f1"]
    tied = min((f for f in features if f.text in ("f2", "f3")), key=lambda f: f.id)
    assert selected[2].id == tied.id


def test_zero_survivors_returns_empty(caplog):
    features, selected, gen_calls = _select_with_d_values([0.1, 0.2])
    assert selected == []
    assert gen_calls == []
    assert all(f.status == "rejected" for f in features)


def test_context_validates_pair_count():
    with pytest.raises(ValueError, match="at least 2"):
        ScoringContext(target_real=_assets("t", 1), misident_real=_assets("m", 3),
                       pair_count=2, sim=lambda t, a: 0.5)
    with pytest.raises(ValueError, match=">= 1"):
        ScoringContext(target_real=[], misident_real=[], pair_count=0, sim=lambda t, a: 0.5)


def test_make_context_equalizes_and_is_seeded(tmp_path):
    root = tmp_path / "c"
    manifest = make_corpus(root, n_concepts=2, images=12, seed=3, splits=(5, 4, 3))
    gateway = make_mock_gateway(seed=3)
    ctx1 = make_context(gateway, manifest, root, "species-000", "species-001", seed=3)
    ctx2 = make_context(gateway, manifest, root, "species-000", "species-001", seed=3)
    assert [a.id for a in ctx1.target_real] == [a.id for a in ctx2.target_real]
    assert ctx1.pair_count == 5  # min(train=5, cap=5)
    ctx3 = make_context(gateway, manifest, root, "species-000", "species-001", seed=4)
    assert [a.id for a in ctx1.target_real] != [a.id for a in ctx3.target_real]
