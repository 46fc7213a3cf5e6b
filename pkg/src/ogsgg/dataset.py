"""Scene-graph datasets: ingestion, predicate mapping, augmentation, stats, splits.

Dataset files hold one JSON record per line::

    {"image_id": "...", "width": W, "height": H, "tags": ["indoor"],
     "objects": [{"id": 0, "class": "person", "bbox": [x, y, w, h]}, ...],
     "triplets": [{"s": 0, "p": "sitting on", "o": 1}, ...]}
"""

from __future__ import annotations

import json
import logging
import math
import random
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

from .ontology import Ontology
from .reasoner import Triplet, TripletSet, inference_closure

logger = logging.getLogger(__name__)

__all__ = [
    "DatasetError",
    "DatasetStats",
    "PredicateMap",
    "SceneGraph",
    "SceneObject",
    "apply_predicate_map",
    "augment_with_inference",
    "build_seen_triplet_registry",
    "compute_stats",
    "dump_dataset",
    "filter_by_tag",
    "load_dataset",
    "load_predicate_map",
    "parse_dataset",
    "stratified_split",
]


class DatasetError(ValueError):
    """Malformed dataset or predicate-map content."""


@dataclass(frozen=True)
class SceneObject:
    id: int
    class_name: str
    bbox: tuple[float, float, float, float]

    def __post_init__(self):
        if self.bbox[2] <= 0 or self.bbox[3] <= 0:
            raise DatasetError(f"object {self.id}: bounding box must have positive size")


@dataclass(frozen=True, eq=False)
class SceneGraph:
    image_id: str
    image_size: tuple[int, int]
    objects: tuple[SceneObject, ...]
    triplets: TripletSet = field(default_factory=TripletSet)
    tags: frozenset[str] = frozenset()

    def __post_init__(self):
        ids = [o.id for o in self.objects]
        if len(set(ids)) != len(ids):
            raise DatasetError(f"image {self.image_id}: duplicate object ids")
        known = set(ids)
        for t in self.triplets:
            for end in (t.subject, t.object):
                if end not in known:
                    raise DatasetError(f"image {self.image_id}: triplet {tuple(t)} references unknown object {end!r}")

    @property
    def classes(self) -> dict[int, str]:
        return {o.id: o.class_name for o in self.objects}

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneGraph):
            return NotImplemented
        return (self.image_id, self.image_size, self.objects, self.triplets, self.tags) == (
            other.image_id, other.image_size, other.objects, other.triplets, other.tags
        )

    __hash__ = None  # type: ignore[assignment]


# --------------------------------------------------------------------------
# I/O
# --------------------------------------------------------------------------


def _graph_from_record(rec: Mapping, lineno: int) -> tuple[SceneGraph, int]:
    image_id = rec.get("image_id") if isinstance(rec, Mapping) else None
    label = f"image {image_id!r} (line {lineno})"
    if not isinstance(image_id, str):
        raise DatasetError(f"line {lineno}: record needs a string 'image_id'")
    try:
        objects = tuple(
            SceneObject(int(o["id"]), str(o["class"]), tuple(float(v) for v in o["bbox"]))
            for o in rec.get("objects", [])
        )
        raw = [Triplet(int(t["s"]), str(t["p"]), int(t["o"])) for t in rec.get("triplets", [])]
        size = (int(rec.get("width", 0)), int(rec.get("height", 0)))
        tags = frozenset(str(t) for t in rec.get("tags", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise DatasetError(f"{label}: malformed record ({exc})") from None
    if any(len(o.bbox) != 4 for o in objects):
        raise DatasetError(f"{label}: bbox must be [x, y, w, h]")
    known = {o.id for o in objects}
    triplets = TripletSet()
    dupes = 0
    for t in raw:
        if t.subject not in known or t.object not in known:
            raise DatasetError(f"{label}: triplet {tuple(t)} references an unknown object id")
        if t.subject == t.object:
            raise DatasetError(f"{label}: triplet {tuple(t)} relates an object to itself")
        if not triplets.add(t):
            dupes += 1
    try:
        graph = SceneGraph(image_id, size, objects, triplets, tags)
    except DatasetError as exc:
        raise DatasetError(f"{label}: {exc}") from None
    return graph, dupes


def parse_dataset(lines: Iterable[str]) -> list[SceneGraph]:
    graphs = []
    dupes = 0
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"line {lineno}: {exc.msg} (column {exc.colno})") from None
        graph, n = _graph_from_record(rec, lineno)
        graphs.append(graph)
        dupes += n
    if dupes:
        logger.warning("dropped %d duplicate triplets", dupes)
    return graphs


def load_dataset(path) -> list[SceneGraph]:
    with open(path, encoding="utf-8") as fh:
        return parse_dataset(fh)


def graph_to_record(graph: SceneGraph, provenance: bool = False) -> dict:
    rec = {
        "image_id": graph.image_id,
        "width": graph.image_size[0],
        "height": graph.image_size[1],
        "tags": sorted(graph.tags),
        "objects": [
            {"id": o.id, "class": o.class_name, "bbox": [_num(v) for v in o.bbox]}
            for o in graph.objects
        ],
        "triplets": [],
    }
    for t, prov in graph.triplets.items():
        item = {"s": t.subject, "p": t.predicate, "o": t.object}
        if provenance and prov.inferred:
            item["inferred"] = prov.axiom
        rec["triplets"].append(item)
    return rec


def _num(v: float):
    return int(v) if float(v).is_integer() else v


def dump_dataset(graphs: Iterable[SceneGraph], path, provenance: bool = False) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for g in graphs:
            fh.write(json.dumps(graph_to_record(g, provenance)) + "\n")


# --------------------------------------------------------------------------
# Predicate map
# --------------------------------------------------------------------------


class PredicateMap:
    """Ontology predicate -> list of equivalent source-dataset predicates."""

    def __init__(self, entries: Mapping[str, Sequence[str]]):
        self.entries = {k: list(v) for k, v in entries.items()}
        self._lookup: dict[str, str] = {}
        for target, sources in self.entries.items():
            for src in sources:
                prev = self._lookup.get(src)
                if prev is not None and prev != target:
                    raise DatasetError(f"source predicate {src!r} maps to both {prev!r} and {target!r}")
                self._lookup[src] = target
        for target in self.entries:
            other = self._lookup.get(target)
            if other is not None and other != target:
                raise DatasetError(f"ontology predicate {target!r} is listed as a source of {other!r}")

    def translate(self, source: str) -> str | None:
        return self._lookup.get(source)

    def check_against(self, onto: Ontology) -> None:
        missing = [k for k in self.entries if k not in onto.predicates]
        if missing:
            raise DatasetError(f"predicate map targets undeclared predicates: {missing}")


def load_predicate_map(path) -> PredicateMap:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}: {exc.msg} (line {exc.lineno}, column {exc.colno})") from None
    if not isinstance(doc, dict) or not all(
        isinstance(v, list) and all(isinstance(s, str) for s in v) for v in doc.values()
    ):
        raise DatasetError(f"{path}: predicate map must be an object of string lists")
    return PredicateMap(doc)


# --------------------------------------------------------------------------
# Transformations
# --------------------------------------------------------------------------


def filter_by_tag(graphs: Iterable[SceneGraph], required_tag: str) -> list[SceneGraph]:
    return [g for g in graphs if required_tag in g.tags]


def apply_predicate_map(graph: SceneGraph, pmap: PredicateMap) -> SceneGraph:
    """Rewrite source predicates to ontology predicates, dropping unmatched triplets.

    Objects are kept even when they lose all their triplets. A source
    string that already equals an ontology predicate name only survives if
    the map lists it.
    """
    out = TripletSet()
    for t, prov in graph.triplets.items():
        target = pmap.translate(t.predicate)
        if target is None:
            # already-mapped predicates stay put so the map is idempotent
            if t.predicate in pmap.entries:
                out.add(t, prov)
            continue
        out.add(t._replace(predicate=target), prov)
    return replace(graph, triplets=out)


def augment_with_inference(graph: SceneGraph, onto: Ontology) -> SceneGraph:
    return replace(graph, triplets=inference_closure(onto, graph.triplets))


# --------------------------------------------------------------------------
# Statistics
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class DatasetStats:
    num_images: int
    connected_objects_per_image: float
    triplets_per_image: float
    annotated_pairs_per_image: float
    pct_pairs_annotated: float
    # images with at least two connected objects (denominator of the pct row)
    pair_images: int = 0

    ROWS = (
        ("Number of images", "num_images"),
        ("Connected objects/image", "connected_objects_per_image"),
        ("Triplets/image", "triplets_per_image"),
        ("Annotated pairs/image", "annotated_pairs_per_image"),
        ("% pairs with annotations", "pct_pairs_annotated"),
    )

    def as_dict(self) -> dict:
        return {attr: getattr(self, attr) for _, attr in self.ROWS} | {"pair_images": self.pair_images}


def compute_stats(graphs: Sequence[SceneGraph]) -> DatasetStats:
    n = len(graphs)
    connected = triplets = pairs = 0
    pct_sum = 0.0
    pct_n = 0
    for g in graphs:
        ends = {t.subject for t in g.triplets} | {t.object for t in g.triplets}
        n_pairs = len({(t.subject, t.object) for t in g.triplets})
        m = len(ends)
        connected += m
        triplets += len(g.triplets)
        pairs += n_pairs
        if m >= 2:
            pct_sum += 100.0 * n_pairs / (m * (m - 1))
            pct_n += 1
    mean = (lambda x: x / n) if n else (lambda x: 0.0)
    return DatasetStats(
        num_images=n,
        connected_objects_per_image=mean(connected),
        triplets_per_image=mean(triplets),
        annotated_pairs_per_image=mean(pairs),
        pct_pairs_annotated=pct_sum / pct_n if pct_n else 0.0,
        pair_images=pct_n,
    )


def format_stats_table(columns: Mapping[str, DatasetStats]) -> str:
    names = list(columns)
    width = max(len(label) for label, _ in DatasetStats.ROWS)
    lines = [" " * width + " | " + " | ".join(f"{n:>10}" for n in names)]
    for label, attr in DatasetStats.ROWS:
        cells = []
        for n in names:
            v = getattr(columns[n], attr)
            cells.append(f"{v:>10d}" if isinstance(v, int) else f"{v:>10.2f}")
        lines.append(f"{label:>{width}} | " + " | ".join(cells))
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Splitting
# --------------------------------------------------------------------------


def _validation_count(n: int, fraction: float) -> int:
    if n < 2:
        return 0
    return min(n - 1, max(1, math.floor(fraction * n + 0.5)))


def stratified_split(
    graphs: Sequence[SceneGraph], validation_fraction: float, seed: int = 0
) -> tuple[list[SceneGraph], list[SceneGraph]]:
    """Least-frequent-predicate bucket split.

    Repeatedly tally how many remaining images each predicate appears in,
    take every remaining image containing the rarest predicate, and split
    that bucket by ``validation_fraction``. The seed shuffles images
    within a bucket. Within a bucket, images that bring a predicate still
    missing from one side are steered to that side first. A singleton
    bucket goes to train unless train already covers its predicate and
    validation does not. Images without triplets form a final bucket.
    """
    if not 0.0 < validation_fraction < 1.0:
        raise ValueError(f"validation_fraction must be in (0, 1), got {validation_fraction}")
    rng = random.Random(seed)
    preds = {g.image_id: frozenset(t.predicate for t in g.triplets) for g in graphs}
    remaining = sorted(range(len(graphs)), key=lambda i: (graphs[i].image_id, i))
    is_val: dict[int, bool] = {}
    seen_train: Counter[str] = Counter()
    seen_val: Counter[str] = Counter()

    def assign(i: int, val: bool):
        is_val[i] = val
        for p in preds[graphs[i].image_id]:
            (seen_val if val else seen_train)[p] += 1

    while remaining:
        freq = Counter(p for i in remaining for p in preds[graphs[i].image_id])
        if not freq:
            bucket, rest = remaining, []
        else:
            rarest = min(freq, key=lambda p: (freq[p], p))
            bucket = [i for i in remaining if rarest in preds[graphs[i].image_id]]
            rest = [i for i in remaining if rarest not in preds[graphs[i].image_id]]
        rng.shuffle(bucket)
        n_val = _validation_count(len(bucket), validation_fraction)
        if len(bucket) == 1 and freq:
            p = rarest
            assign(bucket[0], seen_train[p] > 0 and seen_val[p] == 0)
        else:
            _fill_bucket(bucket, n_val, lambda i: preds[graphs[i].image_id], seen_train, seen_val, assign)
        remaining = rest

    train = [g for i, g in enumerate(graphs) if not is_val[i]]
    val = [g for i, g in enumerate(graphs) if is_val[i]]
    return train, val


def _fill_bucket(bucket, n_val, preds_of, seen_train, seen_val, assign):
    """Pick ``n_val`` validation images from a shuffled bucket, coverage first."""
    pending = list(bucket)
    bucket_count: Counter[str] = Counter(p for i in bucket for p in preds_of(i))
    for _ in range(n_val):
        # gain: predicates val lacks; cost: predicates whose last train candidate this is
        def score(i):
            gain = sum(1 for p in preds_of(i) if seen_val[p] == 0)
            cost = sum(1 for p in preds_of(i) if seen_train[p] == 0 and bucket_count[p] <= 1)
            return cost - gain
        best = min(pending, key=score)  # stable: ties keep shuffled order
        pending.remove(best)
        for p in preds_of(best):
            bucket_count[p] -= 1
        assign(best, True)
    for i in pending:
        assign(i, False)


def build_seen_triplet_registry(graphs: Iterable[SceneGraph]) -> set[tuple[str, str, str]]:
    out = set()
    for g in graphs:
        classes = g.classes
        for t in g.triplets:
            out.add((classes[t.subject], t.predicate, classes[t.object]))
    return out


def predicate_image_frequencies(graphs: Iterable[SceneGraph]) -> dict[str, int]:
    freq: defaultdict[str, int] = defaultdict(int)
    for g in graphs:
        for p in {t.predicate for t in g.triplets}:
            freq[p] += 1
    return dict(sorted(freq.items()))
