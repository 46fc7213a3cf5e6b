"""Ontology-guided scene graph generation tooling.

Ontology parsing and validation, inference closure, dataset conversion,
domain/range constraint tensors, post-processing of scored triplet
proposals and Predicate Detection metrics.
"""

from importlib import resources

from .ontology import Ontology, parse_ontology

__version__ = "0.1.0"


def teresa_ontology() -> Ontology:
    """The bundled telepresence-robot fixture ontology."""
    return parse_ontology(resources.files(__package__).joinpath("data/teresa.json").read_text("utf-8"))
