"""Probe mechanics and flag_pairs against a brute-force confusion recount."""

import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_corpus, make_mock_gateway

from contrastaug.pairs import (
    ConfusablePair,
    ProbeResult,
    UNPARSED,
    flag_pairs,
    parse_choice,
    partition_subsets,
    probe_subset,
    sample_subsets,
)


def brute_force_pairs(results, threshold):
    """Independent recount: nested loops over every ordered concept pair.

    The class universe covers predicted concepts too: a pair can be flagged
    even when the misidentified side was never probed itself.
    """
    universe = sorted(
        {r.gold for r in results} | {r.predicted for r in results if r.predicted != UNPARSED}
    )
    parsed = {g: sum(1 for r in results if r.gold == g and r.predicted != UNPARSED)
              for g in universe}
    probed = {g: sum(1 for r in results if r.gold == g) for g in universe}

    def rate(a, b):
        if parsed[a] == 0:
            return 0.0
        hits = sum(1 for r in results if r.gold == a and r.predicted == b)
        return hits / parsed[a]

    out = []
    for i, a in enumerate(universe):
        for b in universe[i + 1:]:
            r_ab, r_ba = rate(a, b), rate(b, a)
            if max(r_ab, r_ba) <= threshold:
                continue
            if r_ab >= r_ba:
                t, m, r_tm, r_mt = a, b, r_ab, r_ba
            else:
                t, m, r_tm, r_mt = b, a, r_ba, r_ab
            out.append(ConfusablePair(t, m, r_tm, r_mt, probed[t] + probed[m]))
    out.sort(key=lambda p: (p.target, p.misidentified))
    return out


def _same_pairs(got, expected):
    assert len(got) == len(expected)
    for g, e in zip(got, expected):
        assert (g.target, g.misidentified, g.probe_count) == (e.target, e.misidentified, e.probe_count)
        assert g.rate_t_to_m == pytest.approx(e.rate_t_to_m, abs=1e-12)
        assert g.rate_m_to_t == pytest.approx(e.rate_m_to_t, abs=1e-12)


def _results(rows):
    return [ProbeResult(image=f"img{i}", options=[], predicted=p, gold=g)
            for i, (g, p) in enumerate(rows)]


def test_flag_direct_ratio():
    rows = [("a", "b"), ("a", "b"), ("a", "a"), ("a", "a"), ("a", "a")]
    rows += [("b", "b")] * 5
    pairs = flag_pairs(_results(rows), threshold=0.2)
    assert len(pairs) == 1
    pair = pairs[0]
    assert (pair.target, pair.misidentified) == ("a", "b")
    assert pair.rate_t_to_m == pytest.approx(0.4)
    assert pair.rate_m_to_t == 0.0
    assert pair.probe_count == 10


def test_all_correct_yields_nothing():
    rows = [("a", "a")] * 5 + [("b", "b")] * 5
    assert flag_pairs(_results(rows), threshold=0.2) == []


def test_exactly_at_threshold_not_flagged():
    # 1 of 5 misclassified each way: both rates exactly 0.2
    rows = [("a", "b")] + [("a", "a")] * 4 + [("b", "a")] + [("b", "b")] * 4
    assert flag_pairs(_results(rows), threshold=0.2) == []
    # one more miss tips one direction strictly above
    rows.append(("a", "b"))
    assert len(flag_pairs(_results(rows), threshold=0.2)) == 1


def test_unparsed_excluded_from_rates_counted_in_probes():
    rows = [("a", "b"), ("a", UNPARSED), ("a", "a"), ("a", "a")] + [("b", "b")] * 3
    pairs = flag_pairs(_results(rows), threshold=0.2)
    assert len(pairs) == 1
    assert pairs[0].rate_t_to_m == pytest.approx(1 / 3)  # 1 of 3 parsed
    assert pairs[0].probe_count == 7  # all probes, unparsed included


def test_tie_goes_to_smaller_id():
    rows = [("b", "a")] * 2 + [("b", "b")] * 3 + [("a", "b")] * 2 + [("a", "a")] * 3
    pairs = flag_pairs(_results(rows), threshold=0.2)
    assert len(pairs) == 1
    assert pairs[0].target == "a"


def test_order_independence():
    rng = random.Random(5)
    golds = ["a", "b", "c", "d"]
    rows = [(g, rng.choice(golds + [UNPARSED])) for g in golds * 8]
    results = _results(rows)
    base = flag_pairs(results, threshold=0.2)
    shuffled = list(results)
    rng.shuffle(shuffled)
    _same_pairs(flag_pairs(shuffled, threshold=0.2), base)


@settings(max_examples=200, deadline=None)
@given(data=st.data())
def test_flag_pairs_matches_brute_force(data):
    n_concepts = data.draw(st.integers(min_value=2, max_value=6))
    golds = [f"c{i}" for i in range(n_concepts)]
    n_rows = data.draw(st.integers(min_value=1, max_value=60))
    rows = [
        (data.draw(st.sampled_from(golds)), data.draw(st.sampled_from(golds + [UNPARSED])))
        for _ in range(n_rows)
    ]
    threshold = data.draw(st.sampled_from([0.0, 0.2, 0.5, 0.9]))
    results = _results(rows)
    _same_pairs(flag_pairs(results, threshold), brute_force_pairs(results, threshold))


def test_parse_choice_variants():
    ids = ["c1", "c2", "c3"]
    names = ["Lear's Macaw", "Spix's Macaw", "Blue Jay"]
    assert parse_choice("B", ids, names) == "c2"
    assert parse_choice("b)", ids, names) == "c2"
    assert parse_choice("C. Blue Jay", ids, names) == "c3"
    assert parse_choice("blue jay", ids, names) == "c3"
    assert parse_choice("I think this is Spix's Macaw.", ids, names) == "c2"
    assert parse_choice("some macaw", ids, names) == UNPARSED  # ambiguous substring
    assert parse_choice("Z", ids, names) == UNPARSED  # letter out of range
    assert parse_choice("", ids, names) == UNPARSED


def test_probe_counts_and_reproducibility(tmp_path):
    manifest = make_corpus(tmp_path / "c", n_concepts=15, images=12, seed=7, splits=(2, 5, 5))
    concepts = manifest.concept_list()
    gw = make_mock_gateway(seed=7)
    results = probe_subset(gw, manifest, tmp_path / "c", concepts, images_per_concept=5, seed=7)
    assert len(results) == 75  # 15 concepts x 5 images

    again = probe_subset(make_mock_gateway(seed=7), manifest, tmp_path / "c", concepts,
                         images_per_concept=5, seed=7)
    assert [r.to_record() for r in results] == [r.to_record() for r in again]

    # option order varies across probes but each probe's options cover the subset
    orders = {tuple(r.options) for r in results}
    assert len(orders) > 1
    for r in results:
        assert sorted(r.options) == sorted(c.id for c in concepts)


def test_probe_subset_size_bounds(tmp_path):
    manifest = make_corpus(tmp_path / "c", n_concepts=3, images=12, seed=7, splits=(2, 5, 5))
    concepts = manifest.concept_list()
    gw = make_mock_gateway(seed=7)
    with pytest.raises(ValueError, match="outside"):
        probe_subset(gw, manifest, tmp_path / "c", concepts[:1], seed=7)
    with pytest.raises(ValueError, match="outside"):
        probe_subset(gw, manifest, tmp_path / "c", concepts, max_subset=2, seed=7)


def test_probe_requires_enough_val_images(tmp_path):
    manifest = make_corpus(tmp_path / "c", n_concepts=3, images=12, seed=7, splits=(2, 3, 5))
    gw = make_mock_gateway(seed=7)
    with pytest.raises(ValueError, match="validation images"):
        probe_subset(gw, manifest, tmp_path / "c", manifest.concept_list(),
                     images_per_concept=5, seed=7)


def test_partition_subsets_cover_all():
    from contrastaug.corpus import Concept

    concepts = [Concept(id=f"c{i:02d}", canonical_name=f"c{i:02d}") for i in range(64)]
    chunks = partition_subsets(concepts, 15, seed=3)
    sizes = [len(ch) for ch in chunks]
    assert sum(sizes) == 64
    assert all(2 <= s <= 15 for s in sizes)
    seen = [c.id for ch in chunks for c in ch]
    assert sorted(seen) == sorted(c.id for c in concepts)
    assert chunks == partition_subsets(concepts, 15, seed=3)


def test_sample_subsets_rounds():
    from contrastaug.corpus import Concept

    concepts = [Concept(id=f"c{i:02d}", canonical_name=f"c{i:02d}") for i in range(30)]
    rounds = sample_subsets(concepts, 15, rounds=3, seed=9)
    assert len(rounds) == 3
    for subset in rounds:
        assert len(subset) == 15
        assert len({c.id for c in subset}) == 15
    assert rounds != sample_subsets(concepts, 15, rounds=3, seed=10)
