import random

import pytest
from hypothesis import given, settings, strategies as st

from ogsgg.dataset import PredicateMap, SceneGraph, SceneObject
from ogsgg.metrics import (
    DATASET_MICRO,
    PER_IMAGE_MEAN,
    MetricsConfig,
    average_mapped_scores,
    effective_gt_size,
    evaluate,
    mean_recall_at_k,
    recall_at_k,
    recall_counts,
    select,
    zero_shot_recall_at_k,
)
from ogsgg.postproc import ScoredTriplet as S
from ogsgg.reasoner import Triplet, TripletSet

from oracles import oracle_counts, oracle_mean_recall, oracle_recall, random_instance

T = Triplet
MODES = (PER_IMAGE_MEAN, DATASET_MICRO)


def scene(image_id, classes, triplets):
    objs = tuple(SceneObject(i, c, (0, 0, 1, 1)) for i, c in enumerate(classes))
    return SceneGraph(image_id, (10, 10), objs, TripletSet(T(*t) for t in triplets))


def dataset(seed, n):
    rng = random.Random(seed)
    out = []
    for i in range(n):
        g, props, pidx = random_instance(rng, max_predicates=3)
        g = SceneGraph(f"im{i}", g.image_size, g.objects, g.triplets)
        out.append((g, props))
    # align predicate universe across images
    pidx = {f"p{i}": i for i in range(3)}
    return out, pidx


class TestRecallExamples:
    def test_perfect(self):
        gt = [T(0, "p", 1), T(1, "q", 2)]
        props = [S(0, "p", 1, 0.9), S(1, "q", 2, 0.8), S(2, "p", 0, 0.1)]
        assert recall_at_k(gt, props, 2, 1) == 1.0

    def test_divisor_is_min_of_K_and_gt(self):
        gt = [T(0, "p", 1), T(1, "p", 2), T(2, "p", 0)]
        props = [S(0, "p", 1, 0.9), S(1, "p", 2, 0.1), S(2, "p", 0, 0.1)]
        assert recall_counts(gt, props, 1, 1) == (1, 1)
        assert recall_at_k(gt, props, 1, 1) == 1.0

    def test_graph_constraint_caps_gt(self):
        gt = [T(0, "p", 1), T(0, "q", 1)]
        assert effective_gt_size(gt, 1) == 1 and effective_gt_size(gt, 2) == 2
        props = [S(0, "p", 1, 0.9), S(0, "q", 1, 0.8)]
        assert recall_at_k(gt, props, 10, 1) == 1.0
        assert recall_at_k(gt, props, 10, 2) == 1.0

    def test_empty_gt(self):
        assert recall_at_k([], [S(0, "p", 1, 1.0)], 5, 1) is None

    def test_no_proposals(self):
        assert recall_at_k([T(0, "p", 1)], [], 5, 1) == 0.0

    def test_select_tie_break(self):
        props = [S(1, "b", 0, 0.5), S(0, "b", 1, 0.5), S(0, "a", 1, 0.5)]
        assert select(props, 3, 2, {"a": 0, "b": 1}) == [T(0, "a", 1), T(0, "b", 1), T(1, "b", 0)]

    def test_select_expand_uses_no_budget(self, teresa):
        props = [S(0, "next to", 1, 0.9), S(1, "next to", 0, 0.8), S(0, "behind", 1, 0.7)]
        chosen = select(props, 2, 2, teresa.predicate_index, expand_with=teresa)
        assert chosen[:2] == [T(0, "next to", 1), T(0, "behind", 1)]
        assert set(chosen[2:]) == {T(1, "next to", 0), T(1, "in front of", 0)}


class TestAgainstOracle:
    @pytest.mark.parametrize("seed", range(25))
    def test_single_image(self, seed):
        rng = random.Random(seed)
        g, props, pidx = random_instance(rng)
        for K in range(1, 11):
            for k in range(1, 5):
                want = oracle_counts(g.triplets, props, K, k, pidx)
                assert recall_counts(g.triplets, props, K, k, pidx) == want

    @pytest.mark.parametrize("mode", MODES)
    @pytest.mark.parametrize("seed", range(5))
    def test_dataset(self, seed, mode):
        images, pidx = dataset(seed, 6)
        gt = [g for g, _ in images]
        props = {g.image_id: p for g, p in images}
        cfg = MetricsConfig(k_values=(1, 3, 10), graph_constraints=(1, 2, 4), aggregation=mode)
        rep = evaluate(gt, props, cfg, pidx)
        for K in cfg.k_values:
            for k in cfg.graph_constraints:
                want = oracle_recall(images, K, k, pidx, mode)
                got = rep.cells["R@K", K, k]
                assert (got is None) == (want is None)
                if want is not None:
                    assert got == pytest.approx(100 * want, abs=1e-10)
                _, mr = oracle_mean_recall(images, K, k, pidx, mode)
                assert rep.cells["mR@K", K, k] == pytest.approx(100 * mr, abs=1e-10)


class TestMeanRecall:
    def test_two_predicates(self):
        g = scene("a", "XYZ", [(0, "p", 1), (1, "q", 2)])
        table, mean = mean_recall_at_k([g], {"a": [S(0, "p", 1, 1.0)]}, 5, 1)
        assert table == {"p": 1.0, "q": 0.0} and mean == 0.5

    @pytest.mark.parametrize("seed", range(10))
    def test_single_predicate_equals_recall(self, seed):
        rng = random.Random(seed)
        g, props, _ = random_instance(rng, max_predicates=1)
        if not g.triplets:
            return
        _, mean = mean_recall_at_k([g], {g.image_id: props}, 4, 1)
        assert mean == recall_at_k(g.triplets, props, 4, 1)


class TestZeroShot:
    def setup_method(self):
        self.g = scene("a", ["cat", "person", "dog"], [(0, "on", 1), (2, "on", 1)])
        self.props = {"a": [S(0, "on", 1, 0.9), S(2, "on", 1, 0.1)]}

    def test_full_registry_skips(self):
        reg = {("cat", "on", "person"), ("dog", "on", "person")}
        assert zero_shot_recall_at_k([self.g], self.props, reg, 5, 1) == (None, 0, 1)

    def test_empty_registry_equals_recall(self):
        value, ev, sk = zero_shot_recall_at_k([self.g], self.props, set(), 1, 1)
        assert (ev, sk) == (1, 0)
        assert value == recall_at_k(self.g.triplets, self.props["a"], 1, 1) == 1.0

    def test_only_unseen_counted(self):
        # cat-on-person was seen in training; only dog-on-person is zero-shot
        value, _, _ = zero_shot_recall_at_k([self.g], self.props, {("cat", "on", "person")}, 1, 1)
        assert value == 0.0
        value, _, _ = zero_shot_recall_at_k([self.g], self.props, {("cat", "on", "person")}, 2, 1)
        assert value == 1.0


class TestEvaluate:
    def test_cells(self):
        g = scene("a", "XY", [(0, "p", 1)])
        rep = evaluate([g], {"a": [S(0, "p", 1, 1.0)]}, MetricsConfig(zero_shot_registry=frozenset()))
        assert len([c for c in rep.cells if c[0] == "R@K"]) == 6
        assert set(rep.cells.values()) == {100.0}
        doc = rep.to_json()
        assert set(doc["metrics"]) == {"R@K", "zR@K", "mR@K"}
        assert "R@K" in rep.format_text()

    def test_no_zero_shot_without_registry(self):
        g = scene("a", "XY", [(0, "p", 1)])
        rep = evaluate([g], {"a": []})
        assert not any(m == "zR@K" for m, _, _ in rep.cells)

    def test_mismatched_ids(self):
        g = scene("a", "XY", [(0, "p", 1)])
        with pytest.raises(ValueError, match="differ"):
            evaluate([g], {"b": []})

    @pytest.mark.parametrize("seed", range(10))
    def test_single_image_modes_agree(self, seed):
        g, props, pidx = random_instance(random.Random(seed))
        a = evaluate([g], {g.image_id: props}, MetricsConfig(aggregation=PER_IMAGE_MEAN), pidx)
        b = evaluate([g], {g.image_id: props}, MetricsConfig(aggregation=DATASET_MICRO), pidx)
        for key, v in a.cells.items():
            assert v == pytest.approx(b.cells[key]) if v is not None else b.cells[key] is None

    def test_skipped_counted(self):
        gs = [scene("a", "XY", [(0, "p", 1)]), scene("b", "XY", [])]
        rep = evaluate(gs, {"a": [], "b": []})
        assert rep.images_evaluated["R@K"] == 1 and rep.images_skipped["R@K"] == 1

    def test_restrict_to_labeled_pairs(self):
        g = scene("a", "XYZ", [(0, "p", 1)])
        props = {"a": [S(1, "p", 2, 0.9), S(0, "p", 1, 0.1)]}
        cfg = MetricsConfig(k_values=(1,), graph_constraints=(1,))
        assert evaluate([g], props, cfg).cells["R@K", 1, 1] == 0.0
        cfg = MetricsConfig(k_values=(1,), graph_constraints=(1,), restrict_to_labeled_pairs=True)
        assert evaluate([g], props, cfg).cells["R@K", 1, 1] == 100.0

    def test_bad_config(self):
        with pytest.raises(ValueError):
            MetricsConfig(k_values=(0,))
        with pytest.raises(ValueError):
            MetricsConfig(aggregation="macro")


@settings(max_examples=80, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 9), st.integers(1, 4))
def test_hits_monotone_in_K(seed, K, k):
    g, props, pidx = random_instance(random.Random(seed))
    if not g.triplets:
        return
    a = recall_counts(g.triplets, props, K, k, pidx)
    b = recall_counts(g.triplets, props, K + 1, k, pidx)
    assert b.hits >= a.hits and b.divisor >= a.divisor


def test_recall_value_can_drop_with_K():
    # the min(K, |GT|) divisor grows with K
    gt = [T(0, "p", 1), T(1, "p", 2), T(2, "p", 0)]
    props = [S(0, "p", 1, 0.9), S(0, "q", 2, 0.8)]
    assert recall_at_k(gt, props, 1, 1) == 1.0
    assert recall_at_k(gt, props, 2, 1) == 0.5


def test_recall_value_can_drop_with_k():
    # a second predicate on pair (0, 1) displaces the hit on (1, 0)
    gt = [T(1, "p", 0)]
    props = [S(0, "p", 1, 0.9), S(0, "q", 1, 0.8), S(1, "p", 0, 0.7)]
    assert recall_at_k(gt, props, 2, 1) == 1.0
    assert recall_at_k(gt, props, 2, 2) == 0.0


def test_average_mapped_scores():
    pmap = PredicateMap({"on top of": ("on", "sitting on top of"), "holding": ("holds",), "below": ("under",)})
    got = average_mapped_scores(pmap, {"on": 0.2, "sitting on top of": 0.4, "holds": 1.0})
    assert got == pytest.approx({"on top of": 0.3, "holding": 1.0})
