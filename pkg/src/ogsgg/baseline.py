"""Reference scorer (class-pair predicate frequency prior) and the multi-label hinge loss."""

from __future__ import annotations

import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .dataset import SceneGraph
from .postproc import ScoredTriplet

__all__ = [
    "FrequencyPrior",
    "LossInput",
    "fit_prior",
    "hinge_loss",
    "hinge_loss_grad",
    "load_prior",
    "score_image",
]


@dataclass
class FrequencyPrior:
    """Predicate counts per (subject class, object class).

    Scores are ``log((count + a) / (total + a * |P|))``. With ``a == 0`` a
    zero-count combination has no finite score and is not proposed.
    """

    predicates: tuple[str, ...]
    smoothing: float = 1.0
    counts: dict[tuple[str, str], dict[str, int]] = field(default_factory=dict)

    def __post_init__(self):
        if self.smoothing < 0:
            raise ValueError("smoothing must be >= 0")

    def log_prob(self, subj_class: str, obj_class: str, predicate: str) -> float:
        row = self.counts.get((subj_class, obj_class), {})
        total = sum(row.values())
        num = row.get(predicate, 0) + self.smoothing
        den = total + self.smoothing * len(self.predicates)
        if num == 0 or den == 0:
            return -math.inf
        return math.log(num / den)

    def to_json(self) -> dict:
        return {
            "predicates": list(self.predicates),
            "smoothing": self.smoothing,
            "counts": [
                {"subject": s, "object": o, "counts": dict(sorted(row.items()))}
                for (s, o), row in sorted(self.counts.items())
            ],
        }

    def dump(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=1)
            fh.write("\n")


def load_prior(path) -> FrequencyPrior:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    counts = {(c["subject"], c["object"]): dict(c["counts"]) for c in doc["counts"]}
    return FrequencyPrior(tuple(doc["predicates"]), float(doc["smoothing"]), counts)


def fit_prior(
    train: Iterable[SceneGraph], smoothing: float = 1.0, predicates: Sequence[str] | None = None
) -> FrequencyPrior:
    """Tally training triplets by (subject class, object class, predicate).

    ``predicates`` fixes the predicate universe (e.g. the ontology's);
    by default it is every predicate seen in ``train``.
    """
    counts: dict[tuple[str, str], dict[str, int]] = defaultdict(lambda: defaultdict(int))
    seen = set()
    for g in train:
        classes = g.classes
        for t in g.triplets:
            counts[classes[t.subject], classes[t.object]][t.predicate] += 1
            seen.add(t.predicate)
    universe = tuple(predicates) if predicates is not None else tuple(sorted(seen))
    unknown = seen - set(universe)
    if unknown:
        raise ValueError(f"training predicates outside the predicate universe: {sorted(unknown)}")
    return FrequencyPrior(universe, smoothing, {k: dict(v) for k, v in counts.items()})


def score_image(prior: FrequencyPrior, graph: SceneGraph) -> list[ScoredTriplet]:
    """One proposal per ordered object pair and predicate."""
    out = []
    for s in graph.objects:
        for o in graph.objects:
            if s.id == o.id:
                continue
            for p in prior.predicates:
                score = prior.log_prob(s.class_name, o.class_name, p)
                if math.isfinite(score):
                    out.append(ScoredTriplet(s.id, p, o.id, score))
    return out


# --------------------------------------------------------------------------
# Loss
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LossInput:
    labels: np.ndarray  # bool, N*n
    scores: np.ndarray  # float, N*n
    num_pairs: int
    num_predicates: int

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=bool).ravel()
        scores = np.asarray(self.scores, dtype=float).ravel()
        size = self.num_pairs * self.num_predicates
        if labels.shape != (size,) or scores.shape != (size,):
            raise ValueError(
                f"labels ({labels.size}) and scores ({scores.size}) must both have N*n = {size} entries"
            )
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "scores", scores)


def _margins(inp: LossInput) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    neg = np.flatnonzero(~inp.labels)
    pos = np.flatnonzero(inp.labels)
    # rows: negatives i, columns: positives j
    margins = 1.0 - (inp.scores[pos][None, :] - inp.scores[neg][:, None])
    return neg, pos, margins


def hinge_loss(inp: LossInput) -> float:
    """Multi-label hinge loss: mean over N*n of max(0, 1 - (s_pos - s_neg)) summed over all pairs."""
    _, _, margins = _margins(inp)
    if margins.size == 0:
        return 0.0
    return float(np.maximum(margins, 0.0).sum() / (inp.num_pairs * inp.num_predicates))


def hinge_loss_grad(inp: LossInput) -> np.ndarray:
    """Subgradient of :func:`hinge_loss` w.r.t. the scores (0 taken at kinks)."""
    neg, pos, margins = _margins(inp)
    grad = np.zeros_like(inp.scores)
    if margins.size == 0:
        return grad
    active = (margins > 0).astype(float) / (inp.num_pairs * inp.num_predicates)
    np.add.at(grad, neg, active.sum(axis=1))
    np.add.at(grad, pos, -active.sum(axis=0))
    return grad
