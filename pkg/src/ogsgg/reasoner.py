"""Inference closure, domain/range constraint tensor and consistency checks."""

from __future__ import annotations

from collections import defaultdict, deque
from dataclasses import dataclass
from typing import TYPE_CHECKING, Hashable, Iterable, Iterator, Mapping, NamedTuple

import numpy as np

from .ontology import Ontology, UnknownNameError, eval_class_expr

if TYPE_CHECKING:
    from .dataset import SceneGraph

__all__ = [
    "ConstraintTensor",
    "Provenance",
    "Triplet",
    "TripletSet",
    "Violation",
    "build_constraint_tensor",
    "check_consistency",
    "inference_closure",
    "triplet_allowed",
]


class Triplet(NamedTuple):
    subject: Hashable
    predicate: str
    object: Hashable


@dataclass(frozen=True)
class Provenance:
    kind: str  # "asserted" | "inferred"
    axiom: str | None = None  # "inverse" | "symmetric" | "transitive"
    sources: tuple[Triplet, ...] = ()

    @property
    def inferred(self) -> bool:
        return self.kind == "inferred"


ASSERTED = Provenance("asserted")


class TripletSet:
    """Insertion-ordered, duplicate-free triplets with provenance.

    Adding a triplet that is already present keeps its first provenance.
    """

    def __init__(self, triplets: Iterable[Triplet] = ()):
        self._items: dict[Triplet, Provenance] = {}
        for t in triplets:
            self.add(t)

    def add(self, triplet: Triplet, provenance: Provenance = ASSERTED) -> bool:
        triplet = Triplet(*triplet)
        if triplet.subject == triplet.object:
            raise ValueError(f"triplet relates an object to itself: {triplet}")
        if triplet in self._items:
            return False
        self._items[triplet] = provenance
        return True

    def provenance(self, triplet: Triplet) -> Provenance:
        return self._items[Triplet(*triplet)]

    def items(self):
        return self._items.items()

    def asserted(self) -> list[Triplet]:
        return [t for t, p in self._items.items() if not p.inferred]

    def inferred(self) -> list[Triplet]:
        return [t for t, p in self._items.items() if p.inferred]

    def as_set(self) -> frozenset[Triplet]:
        return frozenset(self._items)

    def copy(self) -> TripletSet:
        out = TripletSet()
        out._items = dict(self._items)
        return out

    def __contains__(self, triplet) -> bool:
        return Triplet(*triplet) in self._items

    def __iter__(self) -> Iterator[Triplet]:
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __eq__(self, other) -> bool:
        if not isinstance(other, TripletSet):
            return NotImplemented
        return self._items == other._items

    def __repr__(self) -> str:
        return f"TripletSet({list(self._items)!r})"


def inference_closure(onto: Ontology, asserted: TripletSet | Iterable[Triplet]) -> TripletSet:
    """Least fixed point under inverseOf, symmetry and transitivity.

    Transitive chains never produce self-loops, so cycles terminate.
    The input's own provenance is kept; new triplets are ``inferred``.
    """
    out = asserted.copy() if isinstance(asserted, TripletSet) else TripletSet(asserted)
    for t in out:
        onto.predicate(t.predicate)

    # transitive-predicate adjacency: (p, s) -> objects, (p, o) -> subjects
    succ: dict[tuple[str, Hashable], set] = defaultdict(set)
    pred: dict[tuple[str, Hashable], set] = defaultdict(set)
    queue = deque(out)

    def derive(t: Triplet, axiom: str, sources: tuple[Triplet, ...]):
        if t.subject != t.object and out.add(t, Provenance("inferred", axiom, sources)):
            queue.append(t)

    while queue:
        t = queue.popleft()
        p = onto.predicates[t.predicate]
        if p.inverse_of is not None:
            derive(Triplet(t.object, p.inverse_of, t.subject), "inverse", (t,))
        if p.symmetric:
            derive(Triplet(t.object, t.predicate, t.subject), "symmetric", (t,))
        if p.transitive:
            s, o = t.subject, t.object
            succ[p.name, s].add(o)
            pred[p.name, o].add(s)
            for nxt in sorted(succ[p.name, o], key=repr):
                derive(Triplet(s, p.name, nxt), "transitive", (t, Triplet(o, p.name, nxt)))
            for prev in sorted(pred[p.name, s], key=repr):
                derive(Triplet(prev, p.name, o), "transitive", (Triplet(prev, p.name, s), t))
    return out


# --------------------------------------------------------------------------
# Constraint tensor
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConstraintTensor:
    """Boolean (subject class, object class, predicate) legality lookup."""

    class_index: Mapping[str, int]
    predicate_index: Mapping[str, int]
    bits: np.ndarray

    def allowed(self, subj_class: str, obj_class: str, pred: str) -> bool:
        return bool(self.bits[self._cls(subj_class), self._cls(obj_class), self._pred(pred)])

    def allowed_predicates(self, subj_class: str, obj_class: str) -> list[str]:
        row = self.bits[self._cls(subj_class), self._cls(obj_class)]
        names = list(self.predicate_index)
        return [names[i] for i in np.flatnonzero(row)]

    def rows(self) -> Iterator[tuple[str, str, str, bool]]:
        for a, ai in self.class_index.items():
            for b, bi in self.class_index.items():
                for p, pi in self.predicate_index.items():
                    yield a, b, p, bool(self.bits[ai, bi, pi])

    def _cls(self, name: str) -> int:
        try:
            return self.class_index[name]
        except KeyError:
            raise UnknownNameError(f"unknown class {name!r}") from None

    def _pred(self, name: str) -> int:
        try:
            return self.predicate_index[name]
        except KeyError:
            raise UnknownNameError(f"unknown predicate {name!r}") from None


def build_constraint_tensor(onto: Ontology) -> ConstraintTensor:
    classes = list(onto.classes)
    preds = list(onto.predicates.values())
    bits = np.zeros((len(classes), len(classes), len(preds)), dtype=bool)
    for k, p in enumerate(preds):
        dom = np.array([eval_class_expr(onto, p.domain, c) for c in classes], dtype=bool)
        rng = np.array([eval_class_expr(onto, p.range, c) for c in classes], dtype=bool)
        bits[:, :, k] = np.outer(dom, rng)
    bits.setflags(write=False)
    return ConstraintTensor(
        class_index={c: i for i, c in enumerate(classes)},
        predicate_index={p.name: i for i, p in enumerate(preds)},
        bits=bits,
    )


def triplet_allowed(tensor: ConstraintTensor, subj_class: str, obj_class: str, pred: str) -> bool:
    return tensor.allowed(subj_class, obj_class, pred)


# --------------------------------------------------------------------------
# Consistency
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    kind: str  # "domain_range" | "functional" | "inverse_functional"
    triplets: tuple[Triplet, ...]
    message: str


def find_cardinality_violations(onto: Ontology, triplets: Iterable[Triplet]) -> list[Violation]:
    """Functional and inverse-functional violations among ``triplets``."""
    objects: dict[tuple[Hashable, str], list[Triplet]] = defaultdict(list)
    subjects: dict[tuple[str, Hashable], list[Triplet]] = defaultdict(list)
    for t in triplets:
        p = onto.predicate(t.predicate)
        if p.functional:
            objects[t.subject, t.predicate].append(t)
        if p.inverse_functional:
            subjects[t.predicate, t.object].append(t)
    out = []
    for (s, p), group in objects.items():
        if len({t.object for t in group}) > 1:
            out.append(Violation("functional", tuple(group),
                                 f"{s!r} has {len(group)} objects through functional {p!r}"))
    for (p, o), group in subjects.items():
        if len({t.subject for t in group}) > 1:
            out.append(Violation("inverse_functional", tuple(group),
                                 f"{o!r} has {len(group)} subjects through inverse-functional {p!r}"))
    return out


def check_consistency(onto: Ontology, tensor: ConstraintTensor, graph: SceneGraph) -> list[Violation]:
    """Lint a scene graph against domain/range and cardinality axioms."""
    classes = {obj.id: onto.resolve_class(obj.class_name) for obj in graph.objects}
    out = []
    for t in graph.triplets:
        try:
            sc, oc = classes[t.subject], classes[t.object]
        except KeyError as exc:
            raise UnknownNameError(f"triplet {t} references unknown object {exc.args[0]!r}") from None
        if not tensor.allowed(sc, oc, t.predicate):
            out.append(Violation("domain_range", (t,),
                                 f"({sc}, {t.predicate}, {oc}) violates the domain/range of {t.predicate!r}"))
    out.extend(find_cardinality_violations(onto, graph.triplets))
    return out
