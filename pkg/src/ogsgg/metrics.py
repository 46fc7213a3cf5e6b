"""Predicate Detection metrics: R@K, zR@K and mR@K under graph constraint k.

Edge cases:

* an image whose (restricted) ground truth is empty is skipped and counted;
* the recall divisor is ``min(K, |GT|)``, so full recall is always reachable;
* ``|GT|`` counts at most ``k`` predicates per labelled object pair;
* ``per_image_mean`` averages image recalls, ``dataset_micro`` divides
  summed hits by summed divisors.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, NamedTuple, Sequence

from .dataset import PredicateMap, SceneGraph
from .ontology import Ontology
from .postproc import ScoredTriplet, graph_constraint, rank
from .reasoner import Triplet, inference_closure

__all__ = [
    "MetricsConfig",
    "MetricsReport",
    "RecallCount",
    "average_mapped_scores",
    "evaluate",
    "mean_recall_at_k",
    "recall_at_k",
    "recall_counts",
    "zero_shot_recall_at_k",
]

PER_IMAGE_MEAN = "per_image_mean"
DATASET_MICRO = "dataset_micro"
METRICS = ("R@K", "zR@K", "mR@K")


class RecallCount(NamedTuple):
    hits: int
    divisor: int

    @property
    def value(self) -> float:
        return self.hits / self.divisor


def effective_gt_size(gt: Iterable[Triplet], k: int) -> int:
    per_pair: dict[tuple, int] = defaultdict(int)
    for t in set(gt):
        per_pair[t.subject, t.object] += 1
    return sum(min(k, n) for n in per_pair.values())


def select(
    proposals: Sequence[ScoredTriplet], K: int, k: int, predicate_index=None, expand_with: Ontology | None = None
) -> list[Triplet]:
    """Top-K triplets after the per-pair graph constraint.

    With ``expand_with``, implicit triplets entailed by the selection are
    added; they and proposals they already cover consume no K budget.
    """
    kept, _ = graph_constraint(rank(proposals, predicate_index), k)
    if expand_with is None:
        return [p.triplet for p in kept[:K]]
    chosen: list[Triplet] = []
    implied: set[Triplet] = set()
    for p in kept:
        if len(chosen) == K:
            break
        if p.triplet in implied:
            continue
        chosen.append(p.triplet)
        implied = set(inference_closure(expand_with, chosen).inferred())
    return chosen + sorted(implied - set(chosen), key=repr)


def recall_counts(
    gt: Iterable[Triplet],
    proposals: Sequence[ScoredTriplet],
    K: int,
    k: int,
    predicate_index: Mapping[str, int] | None = None,
    expand_with: Ontology | None = None,
) -> RecallCount | None:
    """Hits and divisor for one image, or ``None`` when the ground truth is empty."""
    gt = {Triplet(*t) for t in gt}
    if not gt:
        return None
    chosen = select(proposals, K, k, predicate_index, expand_with)
    divisor = min(K, effective_gt_size(gt, k))
    # implicit triplets can push hits past the divisor
    return RecallCount(min(divisor, len(gt.intersection(chosen))), divisor)


def recall_at_k(gt, proposals, K: int, k: int, predicate_index=None) -> float | None:
    rc = recall_counts(gt, proposals, K, k, predicate_index)
    return None if rc is None else rc.value


def _aggregate(counts: Sequence[RecallCount], aggregation: str) -> float | None:
    if not counts:
        return None
    if aggregation == PER_IMAGE_MEAN:
        return sum(c.value for c in counts) / len(counts)
    if aggregation == DATASET_MICRO:
        return sum(c.hits for c in counts) / sum(c.divisor for c in counts)
    raise ValueError(f"unknown aggregation {aggregation!r}")


def _pairs(
    dataset_gt: Sequence[SceneGraph], dataset_proposals: Mapping[str, Sequence[ScoredTriplet]]
) -> list[tuple[SceneGraph, Sequence[ScoredTriplet]]]:
    gt_ids = [g.image_id for g in dataset_gt]
    missing = sorted(set(gt_ids) - set(dataset_proposals))
    extra = sorted(set(dataset_proposals) - set(gt_ids))
    if missing or extra:
        raise ValueError(
            f"ground truth / proposal image ids differ: missing proposals for {missing[:5]}, "
            f"unknown images {extra[:5]}"
        )
    return [(g, dataset_proposals[g.image_id]) for g in dataset_gt]


def _restrict_to_labeled(graph: SceneGraph, proposals: Sequence[ScoredTriplet]) -> list[ScoredTriplet]:
    labeled = {(t.subject, t.object) for t in graph.triplets}
    return [p for p in proposals if (p.subject, p.object) in labeled]


def _image_counts(
    dataset_gt, dataset_proposals, K, k, gt_filter: Callable[[SceneGraph, Triplet], bool],
    restrict_to_labeled_pairs=False, predicate_index=None, expand_with=None,
) -> tuple[list[RecallCount], int]:
    counts, skipped = [], 0
    for graph, props in _pairs(dataset_gt, dataset_proposals):
        if restrict_to_labeled_pairs:
            props = _restrict_to_labeled(graph, props)
        gt = [t for t in graph.triplets if gt_filter(graph, t)]
        rc = recall_counts(gt, props, K, k, predicate_index, expand_with)
        if rc is None:
            skipped += 1
        else:
            counts.append(rc)
    return counts, skipped


def mean_recall_at_k(
    dataset_gt: Sequence[SceneGraph],
    dataset_proposals: Mapping[str, Sequence[ScoredTriplet]],
    K: int,
    k: int,
    aggregation: str = PER_IMAGE_MEAN,
    restrict_to_labeled_pairs: bool = False,
    predicate_index=None,
    expand_with: Ontology | None = None,
) -> tuple[dict[str, float], float | None]:
    """Per-predicate recall table (fractions) and its arithmetic mean."""
    predicates = sorted({t.predicate for g in dataset_gt for t in g.triplets})
    table = {}
    for p in predicates:
        counts, _ = _image_counts(
            dataset_gt, dataset_proposals, K, k, lambda g, t, p=p: t.predicate == p,
            restrict_to_labeled_pairs, predicate_index, expand_with,
        )
        value = _aggregate(counts, aggregation)
        if value is not None:
            table[p] = value
    mean = sum(table.values()) / len(table) if table else None
    return table, mean


def _unseen(registry):
    def keep(graph: SceneGraph, t: Triplet) -> bool:
        classes = graph.classes
        return (classes[t.subject], t.predicate, classes[t.object]) not in registry
    return keep


def zero_shot_recall_at_k(
    dataset_gt, dataset_proposals, registry, K: int, k: int,
    aggregation: str = PER_IMAGE_MEAN, restrict_to_labeled_pairs: bool = False, predicate_index=None,
    expand_with: Ontology | None = None,
) -> tuple[float | None, int, int]:
    """zR@K as a fraction plus (images evaluated, images skipped)."""
    counts, skipped = _image_counts(
        dataset_gt, dataset_proposals, K, k, _unseen(registry), restrict_to_labeled_pairs, predicate_index,
        expand_with,
    )
    return _aggregate(counts, aggregation), len(counts), skipped


# --------------------------------------------------------------------------
# Full evaluation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class MetricsConfig:
    k_values: tuple[int, ...] = (20, 50, 100)
    graph_constraints: tuple[int, ...] = (1, 8)
    aggregation: str = PER_IMAGE_MEAN
    restrict_to_labeled_pairs: bool = False
    zero_shot_registry: frozenset | None = None

    def __post_init__(self):
        if any(K < 1 for K in self.k_values):
            raise ValueError("K values must be positive")
        if any(k < 1 for k in self.graph_constraints):
            raise ValueError("graph constraints must be >= 1")
        if self.aggregation not in (PER_IMAGE_MEAN, DATASET_MICRO):
            raise ValueError(f"unknown aggregation {self.aggregation!r}")


@dataclass
class MetricsReport:
    """Recall percentages keyed by (metric, K, k); ``None`` when no image qualified."""

    cells: dict[tuple[str, int, int], float | None] = field(default_factory=dict)
    per_predicate: dict[tuple[int, int], dict[str, float]] = field(default_factory=dict)
    images_evaluated: dict[str, int] = field(default_factory=dict)
    images_skipped: dict[str, int] = field(default_factory=dict)
    config: MetricsConfig = field(default_factory=MetricsConfig)

    def to_json(self) -> dict:
        cfg = self.config
        rows = {}
        for metric in sorted({m for m, _, _ in self.cells}, key=METRICS.index):
            rows[metric] = {
                f"k={k}": {str(K): self.cells[metric, K, k] for K in cfg.k_values}
                for k in cfg.graph_constraints
            }
        return {
            "aggregation": cfg.aggregation,
            "restrict_to_labeled_pairs": cfg.restrict_to_labeled_pairs,
            "metrics": rows,
            "per_predicate": {
                f"K={K},k={k}": table for (K, k), table in self.per_predicate.items()
            },
            "images_evaluated": self.images_evaluated,
            "images_skipped": self.images_skipped,
        }

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=False) + "\n"

    def format_text(self) -> str:
        cfg = self.config
        lines = [f"aggregation: {cfg.aggregation}"]
        for metric in sorted({m for m, _, _ in self.cells}, key=METRICS.index):
            ev, sk = self.images_evaluated.get(metric, 0), self.images_skipped.get(metric, 0)
            lines.append(f"{metric}  (images evaluated {ev}, skipped {sk})")
            for k in cfg.graph_constraints:
                for K in cfg.k_values:
                    v = self.cells[metric, K, k]
                    lines.append(f"  {metric:<5} K={K:<4} k={k:<3} {'-' if v is None else f'{v:6.2f}'}")
        preds = sorted({p for t in self.per_predicate.values() for p in t})
        if preds:
            lines.append("per-predicate recall (mR@K columns)")
            header = "  " + " " * 24 + "".join(f"{f'K={K},k={k}':>14}" for K, k in self.per_predicate)
            lines.append(header)
            for p in preds:
                row = "".join(
                    f"{table[p]:>14.2f}" if p in table else f"{'-':>14}" for table in self.per_predicate.values()
                )
                lines.append(f"  {p:<24}{row}")
        return "\n".join(lines) + "\n"


def _pct(v: float | None) -> float | None:
    return None if v is None else 100.0 * v


def evaluate(
    dataset_gt: Sequence[SceneGraph],
    dataset_proposals: Mapping[str, Sequence[ScoredTriplet]],
    config: MetricsConfig = MetricsConfig(),
    predicate_index: Mapping[str, int] | None = None,
    expand_with: Ontology | None = None,
) -> MetricsReport:
    """Compute every (metric, K, k) cell.

    ``expand_with`` counts implicit triplets entailed by each selection as
    retrieved; by default only explicit proposals count.
    """
    _pairs(dataset_gt, dataset_proposals)
    report = MetricsReport(config=config)
    agg, labeled = config.aggregation, config.restrict_to_labeled_pairs
    for k in config.graph_constraints:
        for K in config.k_values:
            counts, skipped = _image_counts(
                dataset_gt, dataset_proposals, K, k, lambda g, t: True, labeled, predicate_index, expand_with
            )
            report.cells["R@K", K, k] = _pct(_aggregate(counts, agg))
            report.images_evaluated["R@K"], report.images_skipped["R@K"] = len(counts), skipped

            if config.zero_shot_registry is not None:
                value, ev, sk = zero_shot_recall_at_k(
                    dataset_gt, dataset_proposals, config.zero_shot_registry, K, k, agg, labeled,
                    predicate_index, expand_with,
                )
                report.cells["zR@K", K, k] = _pct(value)
                report.images_evaluated["zR@K"], report.images_skipped["zR@K"] = ev, sk

            table, mean = mean_recall_at_k(
                dataset_gt, dataset_proposals, K, k, agg, labeled, predicate_index, expand_with
            )
            report.cells["mR@K", K, k] = _pct(mean)
            report.per_predicate[K, k] = {p: 100.0 * v for p, v in table.items()}
            report.images_evaluated["mR@K"] = report.images_evaluated["R@K"]
            report.images_skipped["mR@K"] = report.images_skipped["R@K"]
    return report


def average_mapped_scores(pmap: PredicateMap, source_scores: Mapping[str, float]) -> dict[str, float]:
    """Score each ontology predicate as the mean of its mapped source-predicate scores.

    Ontology predicates with no scored source predicate are left out.
    """
    out = {}
    for target, sources in pmap.entries.items():
        vals = [source_scores[s] for s in sources if s in source_scores]
        if vals:
            out[target] = sum(vals) / len(vals)
    return out
