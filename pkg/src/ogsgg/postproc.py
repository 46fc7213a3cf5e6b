"""Ontology-guided post-processing of scored triplet proposals.

Pipeline (fixed order): per-pair graph constraint k, domain/range tensor
filter, greedy functional/inverse-functional pruning, Top-K cut, then
optional implicit-triplet expansion.
"""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, NamedTuple, Sequence

from .ontology import Ontology, UnknownNameError
from .reasoner import ConstraintTensor, Triplet, inference_closure

__all__ = [
    "Conflict",
    "ImplicitTriplet",
    "PrunedTriplet",
    "ScoredTriplet",
    "SelectionConfig",
    "SelectionResult",
    "axiom_prune",
    "emit_graph",
    "dump_scores",
    "graph_constraint",
    "load_scores",
    "parse_scores",
    "postprocess_proposals",
    "rank",
    "select_top",
    "tensor_filter",
]


class ScoredTriplet(NamedTuple):
    subject: Hashable
    predicate: str
    object: Hashable
    score: float

    @property
    def triplet(self) -> Triplet:
        return Triplet(self.subject, self.predicate, self.object)


class PrunedTriplet(NamedTuple):
    proposal: ScoredTriplet
    reason: str  # domain_range | functional | inverse_functional | graph_constraint | top_k | already_implied


class ImplicitTriplet(NamedTuple):
    triplet: Triplet
    sources: tuple[Triplet, ...]
    score: float  # the best generating explicit triplet's score, for display only


class Conflict(NamedTuple):
    triplet: Triplet
    reason: str
    against: Triplet


@dataclass(frozen=True)
class SelectionConfig:
    top_k: int = 100
    graph_constraint: int = 1
    apply_tensor_filter: bool = True
    apply_axiom_pruning: bool = True
    expand_implicit: bool = False

    def __post_init__(self):
        if self.top_k < 1:
            raise ValueError("top_k must be positive")
        if self.graph_constraint < 1:
            raise ValueError("graph_constraint must be positive")


@dataclass
class SelectionResult:
    accepted: list[ScoredTriplet] = field(default_factory=list)
    implicit: list[ImplicitTriplet] = field(default_factory=list)
    pruned: list[PrunedTriplet] = field(default_factory=list)
    conflicts: list[Conflict] = field(default_factory=list)

    def triplets(self, include_implicit: bool = True) -> list[Triplet]:
        out = [p.triplet for p in self.accepted]
        if include_implicit:
            out.extend(i.triplet for i in self.implicit)
        return out


def _sort_key(predicate_index: Mapping[str, int] | None):
    # ties: subject id, object id, predicate index ascending
    if predicate_index is None:
        return lambda p: (-p.score, p.subject, p.object, p.predicate)
    return lambda p: (-p.score, p.subject, p.object, predicate_index[p.predicate])


def rank(
    proposals: Iterable[ScoredTriplet], predicate_index: Mapping[str, int] | None = None
) -> list[ScoredTriplet]:
    """Sort by descending score with deterministic tie-breaking."""
    return sorted(proposals, key=_sort_key(predicate_index))


def graph_constraint(
    ranked: Sequence[ScoredTriplet], k: int
) -> tuple[list[ScoredTriplet], list[ScoredTriplet]]:
    """Keep the ``k`` best predicates of every ordered object pair of a ranked list."""
    seen: dict[tuple, int] = defaultdict(int)
    kept, dropped = [], []
    for p in ranked:
        pair = (p.subject, p.object)
        if seen[pair] < k:
            seen[pair] += 1
            kept.append(p)
        else:
            dropped.append(p)
    return kept, dropped


def tensor_filter(
    proposals: Sequence[ScoredTriplet],
    tensor: ConstraintTensor,
    classes: Mapping[Hashable, str],
) -> tuple[list[ScoredTriplet], list[PrunedTriplet]]:
    kept, pruned = [], []
    for p in proposals:
        try:
            sc, oc = classes[p.subject], classes[p.object]
        except KeyError as exc:
            raise UnknownNameError(f"no class for object {exc.args[0]!r}") from None
        if tensor.allowed(sc, oc, p.predicate):
            kept.append(p)
        else:
            pruned.append(PrunedTriplet(p, "domain_range"))
    return kept, pruned


class _CardinalityIndex:
    """Accepted assertions under functional / inverse-functional axioms.

    Each triplet is indexed through every equivalent form: itself, its
    inverse-predicate mirror and, for symmetric predicates, its reversal.
    """

    def __init__(self, onto: Ontology):
        self.onto = onto
        self.objects: dict[tuple, tuple[Hashable, Triplet]] = {}
        self.subjects: dict[tuple, tuple[Hashable, Triplet]] = {}

    def forms(self, t: Triplet) -> list[Triplet]:
        p = self.onto.predicate(t.predicate)
        out = [t]
        if p.inverse_of is not None:
            out.append(Triplet(t.object, p.inverse_of, t.subject))
        if p.symmetric:
            out.append(Triplet(t.object, t.predicate, t.subject))
        return out

    def conflict(self, t: Triplet) -> tuple[str, Triplet] | None:
        for f in self.forms(t):
            p = self.onto.predicates[f.predicate]
            if p.functional:
                hit = self.objects.get((f.subject, f.predicate))
                if hit is not None and hit[0] != f.object:
                    return "functional", hit[1]
            if p.inverse_functional:
                hit = self.subjects.get((f.predicate, f.object))
                if hit is not None and hit[0] != f.subject:
                    return "inverse_functional", hit[1]
        return None

    def add(self, t: Triplet) -> None:
        for f in self.forms(t):
            self.objects.setdefault((f.subject, f.predicate), (f.object, t))
            self.subjects.setdefault((f.predicate, f.object), (f.subject, t))


def axiom_prune(
    proposals: Sequence[ScoredTriplet], onto: Ontology
) -> tuple[list[ScoredTriplet], list[PrunedTriplet]]:
    """Greedy scan in score order; accept unless a cardinality axiom is violated."""
    index = _CardinalityIndex(onto)
    accepted, pruned = [], []
    for p in rank(proposals, onto.predicate_index):
        hit = index.conflict(p.triplet)
        if hit is None:
            index.add(p.triplet)
            accepted.append(p)
        else:
            pruned.append(PrunedTriplet(p, hit[0]))
    return accepted, pruned


def postprocess_proposals(
    proposals: Sequence[ScoredTriplet],
    onto: Ontology,
    tensor: ConstraintTensor | None,
    classes: Mapping[Hashable, str],
    apply_tensor_filter: bool = True,
    apply_axiom_pruning: bool = True,
) -> list[ScoredTriplet]:
    """Filtering stages only (no k or K cut), as used before metric evaluation."""
    kept = rank(proposals, onto.predicate_index)
    if apply_tensor_filter:
        kept, _ = tensor_filter(kept, tensor, classes)
    if apply_axiom_pruning:
        kept, _ = axiom_prune(kept, onto)
    return kept


def select_top(
    proposals: Sequence[ScoredTriplet],
    config: SelectionConfig,
    onto: Ontology,
    tensor: ConstraintTensor | None,
    classes: Mapping[Hashable, str],
) -> SelectionResult:
    if config.graph_constraint > max(1, len(onto.predicates)):
        raise ValueError(
            f"graph constraint {config.graph_constraint} exceeds the {len(onto.predicates)} predicates"
        )
    for p in proposals:
        if p.subject == p.object:
            raise ValueError(f"proposal relates an object to itself: {p}")
        onto.predicate(p.predicate)
    result = SelectionResult()
    survivors, dropped = graph_constraint(rank(proposals, onto.predicate_index), config.graph_constraint)
    result.pruned.extend(PrunedTriplet(p, "graph_constraint") for p in dropped)
    if config.apply_tensor_filter:
        survivors, pruned = tensor_filter(survivors, tensor, classes)
        result.pruned.extend(pruned)
    if config.apply_axiom_pruning:
        survivors, pruned = axiom_prune(survivors, onto)
        result.pruned.extend(pruned)

    if not config.expand_implicit:
        result.accepted = survivors[: config.top_k]
        result.pruned.extend(PrunedTriplet(p, "top_k") for p in survivors[config.top_k:])
        return result

    implied: dict[Triplet, ImplicitTriplet] = {}
    index = _CardinalityIndex(onto)
    for i, p in enumerate(survivors):
        if len(result.accepted) == config.top_k:
            result.pruned.extend(PrunedTriplet(q, "top_k") for q in survivors[i:])
            break
        if p.triplet in implied:
            # already in the graph implicitly; costs no budget
            result.pruned.append(PrunedTriplet(p, "already_implied"))
            continue
        result.accepted.append(p)
        index.add(p.triplet)
        implied = _expand(onto, result.accepted)
    result.implicit = list(implied.values())
    for imp in result.implicit:
        hit = index.conflict(imp.triplet)
        if hit is not None:
            result.conflicts.append(Conflict(imp.triplet, hit[0], hit[1]))
    return result


def _expand(onto: Ontology, accepted: Sequence[ScoredTriplet]) -> dict[Triplet, ImplicitTriplet]:
    scores = {p.triplet: p.score for p in accepted}
    closure = inference_closure(onto, list(scores))
    out = {}
    for t, prov in closure.items():
        if not prov.inferred:
            continue
        roots = _roots(closure, t)
        out[t] = ImplicitTriplet(t, roots, max(scores[r] for r in roots))
    return out


def _roots(closure, t: Triplet) -> tuple[Triplet, ...]:
    """Explicit triplets an inferred triplet was ultimately derived from."""
    out, stack, seen = [], [t], set()
    while stack:
        cur = stack.pop()
        if cur in seen:
            continue
        seen.add(cur)
        prov = closure.provenance(cur)
        if prov.inferred:
            stack.extend(prov.sources)
        else:
            out.append(cur)
    return tuple(sorted(out, key=repr))


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------


def _dot_quote(s: str) -> str:
    return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def emit_graph(result: SelectionResult, graph, fmt: str = "dot") -> str:
    """Render accepted (solid) and implicit (dashed) triplets as DOT or text."""
    classes = graph.classes

    def label(obj_id) -> str:
        return f"{classes[obj_id]}_{obj_id}"

    if fmt == "text":
        lines = [f"{label(p.subject)} --{p.predicate}--> {label(p.object)}" for p in result.accepted]
        lines += [
            f"{label(i.triplet.subject)} --{i.triplet.predicate}--> {label(i.triplet.object)}"
            for i in result.implicit
        ]
        return "".join(line + "\n" for line in lines)
    if fmt != "dot":
        raise ValueError(f"unknown graph format {fmt!r}")

    edges = [(p.triplet, False) for p in result.accepted] + [(i.triplet, True) for i in result.implicit]
    nodes: list = []
    for t, _ in edges:
        for end in (t.subject, t.object):
            if end not in nodes:
                nodes.append(end)
    lines = [f"digraph {_dot_quote(str(graph.image_id))} {{"]
    for n in nodes:
        lines.append(f"  {_dot_quote(f'n{n}')} [label={_dot_quote(label(n))}];")
    for t, dashed in edges:
        style = ", style=dashed" if dashed else ""
        lines.append(
            f"  {_dot_quote(f'n{t.subject}')} -> {_dot_quote(f'n{t.object}')} "
            f"[label={_dot_quote(t.predicate)}{style}];"
        )
    lines.append("}")
    return "\n".join(lines) + "\n"


# --------------------------------------------------------------------------
# Scores files
# --------------------------------------------------------------------------


def parse_scores(lines: Iterable[str]) -> dict[str, list[ScoredTriplet]]:
    """Read ``{"image_id": ..., "scores": [{"s", "o", "p", "score"}, ...]}`` records."""
    out: dict[str, list[ScoredTriplet]] = {}
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            image_id = rec["image_id"]
            props = [
                ScoredTriplet(int(r["s"]), str(r["p"]), int(r["o"]), float(r["score"]))
                for r in rec["scores"]
            ]
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"scores line {lineno}: malformed record ({exc})") from None
        if image_id in out:
            raise ValueError(f"scores line {lineno}: duplicate image {image_id!r}")
        bad = [p for p in props if not math.isfinite(p.score) or p.subject == p.object]
        if bad:
            raise ValueError(f"scores line {lineno}: invalid proposal {bad[0]}")
        out[image_id] = props
    return out


def load_scores(path) -> dict[str, list[ScoredTriplet]]:
    with open(path, encoding="utf-8") as fh:
        return parse_scores(fh)


def dump_scores(scores: Mapping[str, Sequence[ScoredTriplet]], path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, props in scores.items():
            rec = {
                "image_id": image_id,
                "scores": [{"s": p.subject, "o": p.object, "p": p.predicate, "score": p.score} for p in props],
            }
            fh.write(json.dumps(rec) + "\n")
