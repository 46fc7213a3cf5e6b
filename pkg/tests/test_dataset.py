import json
import logging
import random

import pytest
from hypothesis import given, settings, strategies as st

from ogsgg.dataset import (
    DatasetError,
    PredicateMap,
    SceneGraph,
    SceneObject,
    apply_predicate_map,
    augment_with_inference,
    build_seen_triplet_registry,
    compute_stats,
    dump_dataset,
    filter_by_tag,
    load_dataset,
    parse_dataset,
    predicate_image_frequencies,
    stratified_split,
)
from ogsgg.reasoner import Triplet, TripletSet

from oracles import TERESA_SOURCE_MAP, multilabel_split_fixture, naive_closure, synthetic_dataset


def record(image_id, objects, triplets, tags=()):
    return json.dumps({
        "image_id": image_id, "width": 640, "height": 480, "tags": list(tags),
        "objects": [{"id": i, "class": c, "bbox": [0, 0, 10, 10]} for i, c in enumerate(objects)],
        "triplets": [{"s": s, "p": p, "o": o} for s, p, o in triplets],
    })


def make_graph(image_id, objects, triplets, tags=()):
    objs = tuple(SceneObject(i, c, (0, 0, 10, 10)) for i, c in enumerate(objects))
    return SceneGraph(image_id, (640, 480), objs, TripletSet(Triplet(*t) for t in triplets), frozenset(tags))


class TestLoad:
    def test_two_images(self, tmp_path):
        path = tmp_path / "d.jsonl"
        path.write_text(
            record("a", ["person", "chair"], [(0, "sitting on", 1)]) + "\n"
            + record("b", ["cup", "table", "person"], [(0, "on", 1), (2, "holding", 0)]) + "\n"
        )
        graphs = load_dataset(path)
        assert [g.image_id for g in graphs] == ["a", "b"]
        assert [len(g.objects) for g in graphs] == [2, 3]
        assert [len(g.triplets) for g in graphs] == [1, 2]
        assert graphs[1].image_size == (640, 480)

    def test_unknown_object_names_image(self):
        with pytest.raises(DatasetError, match="'broken'"):
            parse_dataset([record("broken", ["person"], [(0, "near", 5)])])

    def test_malformed_record(self):
        with pytest.raises(DatasetError, match="'x'"):
            parse_dataset([json.dumps({"image_id": "x", "objects": [{"id": 0}]})])

    def test_non_positive_bbox(self):
        bad = json.dumps({"image_id": "z", "objects": [{"id": 0, "class": "a", "bbox": [0, 0, 0, 5]}]})
        with pytest.raises(DatasetError, match="'z'"):
            parse_dataset([bad])

    def test_duplicates_dropped_with_warning(self, caplog):
        with caplog.at_level(logging.WARNING):
            graphs = parse_dataset([record("a", ["p", "c"], [(0, "on", 1), (0, "on", 1)])])
        assert len(graphs[0].triplets) == 1
        assert "1 duplicate" in caplog.text

    def test_round_trip(self, tmp_path):
        graphs = synthetic_dataset(random.Random(0), 20)
        dump_dataset(graphs, tmp_path / "x.jsonl")
        assert load_dataset(tmp_path / "x.jsonl") == graphs


class TestTagFilter:
    def test_single_indoor(self):
        gs = [make_graph("a", [], [], ["indoor"]), make_graph("b", [], [], ["outdoor"]), make_graph("c", [], [])]
        assert [g.image_id for g in filter_by_tag(gs, "indoor")] == ["a"]

    def test_empty(self):
        assert filter_by_tag([], "indoor") == []

    def test_vg_indoor_ratio_fixture(self):
        # VG 62723 -> VG-indoor 3036 at 1/20 scale: 3136 images, 152 indoor
        gs = [make_graph(f"i{i}", [], [], ["indoor"] if i % 20 == 0 and i < 152 * 20 else ["outdoor"])
              for i in range(3136)]
        hand_count = sum(1 for i in range(3136) if i % 20 == 0 and i < 152 * 20)
        assert hand_count == 152
        assert len(filter_by_tag(gs, "indoor")) == hand_count


class TestPredicateMap:
    def test_rewrite(self):
        pmap = PredicateMap({"sitting on": ["sitting on", "sits on"]})
        out = apply_predicate_map(make_graph("a", ["p", "c"], [(0, "sits on", 1)]), pmap)
        assert list(out.triplets) == [(0, "sitting on", 1)]

    def test_unmatched_dropped_objects_kept(self):
        pmap = PredicateMap({"sitting on": ["sits on"]})
        g = make_graph("a", ["p", "c", "hat"], [(0, "sits on", 1), (0, "wearing", 2)])
        out = apply_predicate_map(g, pmap)
        assert list(out.triplets) == [(0, "sitting on", 1)]
        assert out.objects == g.objects

    def test_conflicting_sources_rejected(self):
        with pytest.raises(DatasetError):
            PredicateMap({"a": ["x"], "b": ["x"]})
        with pytest.raises(DatasetError):
            PredicateMap({"a": ["b"], "b": ["y"]})

    def test_merging_duplicates(self):
        pmap = PredicateMap({"on top of": ["on", "on top of"]})
        out = apply_predicate_map(make_graph("a", ["x", "y"], [(0, "on", 1), (0, "on top of", 1)]), pmap)
        assert list(out.triplets) == [(0, "on top of", 1)]

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6))
    def test_idempotent_and_never_grows(self, seed):
        pmap = PredicateMap(TERESA_SOURCE_MAP)
        for g in synthetic_dataset(random.Random(seed), 5):
            once = apply_predicate_map(g, pmap)
            assert apply_predicate_map(once, pmap) == once
            assert len(once.triplets) <= len(g.triplets)


class TestAugment:
    def test_symmetric(self, teresa):
        g = augment_with_inference(make_graph("a", ["Chair", "Table"], [(0, "next to", 1)]), teresa)
        assert (1, "next to", 0) in g.triplets
        assert g.triplets.provenance((1, "next to", 0)).inferred

    def test_empty(self, teresa):
        g = make_graph("a", ["Chair"], [])
        assert augment_with_inference(g, teresa) == g

    def test_unknown_predicate(self, teresa):
        from ogsgg.ontology import UnknownNameError

        with pytest.raises(UnknownNameError):
            augment_with_inference(make_graph("a", ["x", "y"], [(0, "wearing", 1)]), teresa)

    def test_vg_like_growth_matches_naive_closure(self, teresa):
        pmap = PredicateMap(TERESA_SOURCE_MAP)
        mapped = [apply_predicate_map(g, pmap) for g in synthetic_dataset(random.Random(3), 300)]
        augmented = [augment_with_inference(g, teresa) for g in mapped]
        for before, after in zip(mapped, augmented):
            assert after.triplets.as_set() == naive_closure(teresa, before.triplets)
            assert len(after.triplets) >= len(before.triplets)
        assert compute_stats(augmented).triplets_per_image > compute_stats(mapped).triplets_per_image


class TestStats:
    def test_worked_example(self):
        s = compute_stats([make_graph("a", ["a", "b", "c"], [(0, "p", 1), (1, "p", 2)])])
        assert (s.num_images, s.connected_objects_per_image, s.triplets_per_image) == (1, 3, 2)
        assert s.annotated_pairs_per_image == 2
        assert s.pct_pairs_annotated == pytest.approx(100 / 3)
        assert round(s.pct_pairs_annotated, 2) == 33.33

    def test_multi_predicate_pair_counted_once(self):
        s = compute_stats([make_graph("a", ["a", "b"], [(0, "p", 1), (0, "q", 1)])])
        assert s.annotated_pairs_per_image == 1 and s.pct_pairs_annotated == 50.0

    def test_empty(self):
        s = compute_stats([])
        assert s.num_images == 0 and s.triplets_per_image == 0.0

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.integers(1, 30), st.integers(1, 30))
    def test_concatenation_is_weighted_mean(self, seed, n1, n2):
        rng = random.Random(seed)
        a, b = synthetic_dataset(rng, n1), synthetic_dataset(rng, n2)
        sa, sb, sab = compute_stats(a), compute_stats(b), compute_stats(a + b)
        for attr in ("connected_objects_per_image", "triplets_per_image", "annotated_pairs_per_image"):
            want = (getattr(sa, attr) * n1 + getattr(sb, attr) * n2) / (n1 + n2)
            assert getattr(sab, attr) == pytest.approx(want)
        if sab.pair_images:
            want = (sa.pct_pairs_annotated * sa.pair_images + sb.pct_pairs_annotated * sb.pair_images) / sab.pair_images
            assert sab.pct_pairs_annotated == pytest.approx(want)

    def test_density_increases_after_filter(self):
        pmap = PredicateMap(TERESA_SOURCE_MAP)
        base = synthetic_dataset(random.Random(11), 400)
        filtered = [g for g in (apply_predicate_map(g, pmap) for g in base) if g.triplets]
        assert compute_stats(filtered).pct_pairs_annotated >= compute_stats(base).pct_pairs_annotated


def ids(graphs):
    return [g.image_id for g in graphs]


class TestSplit:
    def test_single_bucket(self):
        gs = [make_graph(f"g{i}", ["a", "b"], [(0, "p", 1)]) for i in range(10)]
        train, val = stratified_split(gs, 0.2, seed=1)
        assert (len(train), len(val)) == (8, 2)

    def test_rare_predicate_in_both_splits(self):
        gs = [make_graph(f"r{i}", ["a", "b"], [(0, "rare", 1), (1, "common", 0)]) for i in range(2)]
        gs += [make_graph(f"c{i}", ["a", "b"], [(0, "common", 1)]) for i in range(18)]
        train, val = stratified_split(gs, 0.5, seed=0)
        assert any(g.image_id.startswith("r") for g in train)
        assert any(g.image_id.startswith("r") for g in val)
        # rare bucket {r0, r1} -> 1/1; common bucket of 18 -> 9/9
        assert (len(train), len(val)) == (10, 10)

    def test_bad_fraction(self):
        for f in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                stratified_split([], f)

    def test_vg_indoor_scale(self):
        gs = multilabel_split_fixture(random.Random(5), 2505, n_predicates=12)
        train, val = stratified_split(gs, 0.1, seed=0)
        assert len(train) + len(val) == 2505
        assert 225 <= len(val) <= 275

    def test_deterministic(self):
        gs = multilabel_split_fixture(random.Random(2), 200)
        assert ids(stratified_split(gs, 0.2, 7)[1]) == ids(stratified_split(gs, 0.2, 7)[1])
        assert ids(stratified_split(gs, 0.2, 7)[1]) != ids(stratified_split(gs, 0.2, 8)[1])

    def test_images_without_triplets(self):
        gs = [make_graph(f"e{i}", ["a"], []) for i in range(10)]
        train, val = stratified_split(gs, 0.3, seed=0)
        assert (len(train), len(val)) == (7, 3)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10**6), st.sampled_from([0.1, 0.2, 0.3, 0.5]))
    def test_partition_and_coverage(self, seed, fraction):
        rng = random.Random(seed)
        gs = multilabel_split_fixture(rng, rng.randint(20, 120), n_predicates=rng.randint(3, 10))
        train, val = stratified_split(gs, fraction, seed)
        assert sorted(ids(train) + ids(val)) == sorted(ids(gs))
        assert not set(ids(train)) & set(ids(val))
        freq = predicate_image_frequencies(gs)
        tf, vf = predicate_image_frequencies(train), predicate_image_frequencies(val)
        for p, n in freq.items():
            if n >= 2:
                assert p in tf and p in vf, (p, n)


class TestRegistry:
    def test_laying_in(self):
        reg = build_seen_triplet_registry([make_graph("a", ["person", "bed"], [(0, "laying in", 1)])])
        assert ("person", "laying in", "bed") in reg
        assert ("cat", "laying in", "bed") not in reg

    def test_empty(self):
        assert build_seen_triplet_registry([]) == set()

    def test_distinct_count(self):
        gs = synthetic_dataset(random.Random(4), 60)
        combos = []
        for g in gs:
            cls = {o.id: o.class_name for o in g.objects}
            combos += [(cls[t.subject], t.predicate, cls[t.object]) for t in g.triplets]
        assert len(build_seen_triplet_registry(gs)) == len(set(combos))
