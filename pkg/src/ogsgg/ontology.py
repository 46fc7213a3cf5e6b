"""Ontology data model, the JSON ontology format, and class-expression evaluation.

An ontology document looks like::

    {"classes":    [{"name": "Chair", "parents": ["Furniture"]}, ...],
     "predicates": [{"name": "sitting on",
                     "domain": {"class": "Person"},
                     "range":  {"class": "Chair"},
                     "functional": true, "inverse_functional": true,
                     "symmetric": false, "transitive": false,
                     "inverse_of": null}, ...]}

Class expressions are ``{"class": NAME}``, ``{"and": [...]}``,
``{"or": [...]}`` or ``{"not": expr}``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Iterator, Mapping, Union

__all__ = [
    "And",
    "ClassDef",
    "ClassExpr",
    "Diagnostic",
    "Named",
    "Not",
    "Ontology",
    "OntologyError",
    "OntologySyntaxError",
    "Or",
    "PredicateDef",
    "UnknownNameError",
    "dump_ontology",
    "eval_class_expr",
    "expr_from_json",
    "expr_to_json",
    "is_subclass_of",
    "load_ontology",
    "parse_ontology",
    "validate_ontology",
]


class OntologyError(ValueError):
    """Raised when an ontology document is structurally invalid."""


class OntologySyntaxError(OntologyError):
    """Malformed document text. ``line``/``column`` are 1-based."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownNameError(ValueError):
    """A class, predicate or object name that is not declared."""


# --------------------------------------------------------------------------
# Class expressions
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Named:
    name: str

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class And:
    items: tuple[ClassExpr, ...]

    def __post_init__(self):
        if not self.items:
            raise OntologyError("'and' expression needs at least one operand")

    def __str__(self) -> str:
        return "(" + " and ".join(str(e) for e in self.items) + ")"


@dataclass(frozen=True)
class Or:
    items: tuple[ClassExpr, ...]

    def __post_init__(self):
        if not self.items:
            raise OntologyError("'or' expression needs at least one operand")

    def __str__(self) -> str:
        return "(" + " or ".join(str(e) for e in self.items) + ")"


@dataclass(frozen=True)
class Not:
    item: ClassExpr

    def __str__(self) -> str:
        return f"not {self.item}"


ClassExpr = Union[Named, And, Or, Not]


def expr_names(expr: ClassExpr) -> Iterator[str]:
    """Yield every class name referenced by ``expr``."""
    if isinstance(expr, Named):
        yield expr.name
    elif isinstance(expr, Not):
        yield from expr_names(expr.item)
    else:
        for item in expr.items:
            yield from expr_names(item)


def expr_from_json(node: Any, where: str = "expr") -> ClassExpr:
    if not isinstance(node, dict) or len(node) != 1:
        raise OntologyError(f"{where}: class expression must be an object with exactly one key")
    (key, value), = node.items()
    if key == "class":
        if not isinstance(value, str) or not value:
            raise OntologyError(f"{where}: 'class' must be a non-empty string")
        return Named(value)
    if key in ("and", "or"):
        if not isinstance(value, list) or not value:
            raise OntologyError(f"{where}: '{key}' must be a non-empty list")
        items = tuple(expr_from_json(v, f"{where}.{key}[{i}]") for i, v in enumerate(value))
        return And(items) if key == "and" else Or(items)
    if key == "not":
        return Not(expr_from_json(value, f"{where}.not"))
    raise OntologyError(f"{where}: unknown class expression operator {key!r}")


def expr_to_json(expr: ClassExpr) -> dict:
    if isinstance(expr, Named):
        return {"class": expr.name}
    if isinstance(expr, Not):
        return {"not": expr_to_json(expr.item)}
    key = "and" if isinstance(expr, And) else "or"
    return {key: [expr_to_json(e) for e in expr.items]}


# --------------------------------------------------------------------------
# Ontology model
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassDef:
    name: str
    parents: frozenset[str] = frozenset()


@dataclass(frozen=True)
class PredicateDef:
    name: str
    domain: ClassExpr
    range: ClassExpr
    functional: bool = False
    inverse_functional: bool = False
    symmetric: bool = False
    transitive: bool = False
    inverse_of: str | None = None


@dataclass(frozen=True, eq=False)
class Ontology:
    """Immutable class hierarchy plus predicate definitions.

    Both maps keep declaration order, which fixes class and predicate
    indices everywhere else (constraint tensor axes, tie-breaking).
    """

    classes: Mapping[str, ClassDef] = field(default_factory=dict)
    predicates: Mapping[str, PredicateDef] = field(default_factory=dict)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Ontology):
            return NotImplemented
        return dict(self.classes) == dict(other.classes) and dict(self.predicates) == dict(
            other.predicates
        )

    __hash__ = None  # type: ignore[assignment]

    @cached_property
    def ancestors(self) -> dict[str, frozenset[str]]:
        """Reflexive-transitive ancestor sets, keyed by class name."""
        out: dict[str, frozenset[str]] = {}

        def visit(name: str, stack: tuple[str, ...]) -> frozenset[str]:
            if name in out:
                return out[name]
            if name in stack:
                raise OntologyError(f"cyclic class hierarchy through {name!r}")
            acc = {name}
            for parent in self.classes[name].parents:
                if parent not in self.classes:
                    raise UnknownNameError(f"class {name!r} has undeclared parent {parent!r}")
                acc |= visit(parent, stack + (name,))
            out[name] = frozenset(acc)
            return out[name]

        for name in self.classes:
            visit(name, ())
        return out

    @cached_property
    def predicate_index(self) -> dict[str, int]:
        return {name: i for i, name in enumerate(self.predicates)}

    def predicate(self, name: str) -> PredicateDef:
        try:
            return self.predicates[name]
        except KeyError:
            raise UnknownNameError(f"unknown predicate {name!r}") from None

    def resolve_class(self, name: str) -> str:
        """Map a dataset label onto a declared class name (exact, then case-insensitive)."""
        if name in self.classes:
            return name
        folded = self._folded_classes.get(name.casefold())
        if folded is None:
            raise UnknownNameError(f"unknown class {name!r}")
        return folded

    @cached_property
    def _folded_classes(self) -> dict[str, str]:
        return {c.casefold(): c for c in self.classes}


def is_subclass_of(onto: Ontology, child: str, ancestor: str) -> bool:
    """Reflexive subclass test by walking parent links."""
    for name in (child, ancestor):
        if name not in onto.classes:
            raise UnknownNameError(f"unknown class {name!r}")
    return ancestor in onto.ancestors[child]


def eval_class_expr(onto: Ontology, expr: ClassExpr, cls: str) -> bool:
    if isinstance(expr, Named):
        return is_subclass_of(onto, cls, expr.name)
    if isinstance(expr, Not):
        return not eval_class_expr(onto, expr.item, cls)
    if isinstance(expr, And):
        # evaluate every branch so unknown names always raise
        return all([eval_class_expr(onto, e, cls) for e in expr.items])
    return any([eval_class_expr(onto, e, cls) for e in expr.items])


# --------------------------------------------------------------------------
# Parsing / serialization
# --------------------------------------------------------------------------

_FLAGS = ("functional", "inverse_functional", "symmetric", "transitive")


def parse_ontology(text: str) -> Ontology:
    """Parse an ontology document and check every structural invariant.

    One-sided ``inverse_of`` declarations are completed on the other
    predicate.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise OntologySyntaxError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise OntologyError("ontology document must be an object")
    unknown = set(doc) - {"classes", "predicates"}
    if unknown:
        raise OntologyError(f"unknown top-level keys: {sorted(unknown)}")

    classes: dict[str, ClassDef] = {}
    for i, node in enumerate(doc.get("classes", [])):
        where = f"classes[{i}]"
        if not isinstance(node, dict) or not isinstance(node.get("name"), str) or not node["name"]:
            raise OntologyError(f"{where}: class needs a non-empty 'name'")
        parents = node.get("parents", [])
        if not isinstance(parents, list) or not all(isinstance(p, str) for p in parents):
            raise OntologyError(f"{where}: 'parents' must be a list of class names")
        name = node["name"]
        if name in classes:
            raise OntologyError(f"{where}: duplicate class {name!r}")
        classes[name] = ClassDef(name, frozenset(parents))

    raw_preds: dict[str, dict[str, Any]] = {}
    for i, node in enumerate(doc.get("predicates", [])):
        where = f"predicates[{i}]"
        if not isinstance(node, dict) or not isinstance(node.get("name"), str) or not node["name"]:
            raise OntologyError(f"{where}: predicate needs a non-empty 'name'")
        name = node["name"]
        if name in raw_preds:
            raise OntologyError(f"{where}: duplicate predicate {name!r}")
        for key in ("domain", "range"):
            if key not in node:
                raise OntologyError(f"{where}: missing '{key}'")
        fields = {
            "domain": expr_from_json(node["domain"], f"{where}.domain"),
            "range": expr_from_json(node["range"], f"{where}.range"),
        }
        for flag in _FLAGS:
            value = node.get(flag, False)
            if not isinstance(value, bool):
                raise OntologyError(f"{where}: '{flag}' must be a boolean")
            fields[flag] = value
        inv = node.get("inverse_of")
        if inv is not None and not isinstance(inv, str):
            raise OntologyError(f"{where}: 'inverse_of' must be a predicate name or null")
        fields["inverse_of"] = inv
        raw_preds[name] = fields

    inverses = _complete_inverses({n: f["inverse_of"] for n, f in raw_preds.items()})
    predicates = {
        name: PredicateDef(name=name, **{**f, "inverse_of": inverses[name]})
        for name, f in raw_preds.items()
    }
    onto = Ontology(classes, predicates)
    errors = [d for d in _structural_diagnostics(onto) if d.level == "error"]
    if errors:
        first = errors[0]
        exc_type = UnknownNameError if first.code == "unresolved" else OntologyError
        raise exc_type(first.message)
    return onto


def _complete_inverses(declared: dict[str, str | None]) -> dict[str, str | None]:
    out = dict(declared)
    for name, inv in declared.items():
        if inv is None:
            continue
        if inv not in declared:
            raise UnknownNameError(f"predicate {name!r}: inverse_of names undeclared predicate {inv!r}")
        other = out[inv]
        if other is None:
            out[inv] = name
        elif other != name:
            raise OntologyError(
                f"non-mutual inverse: {name!r} inverse_of {inv!r}, but {inv!r} inverse_of {other!r}"
            )
    return out


def load_ontology(path) -> Ontology:
    with open(path, encoding="utf-8") as fh:
        return parse_ontology(fh.read())


def ontology_to_json(onto: Ontology) -> dict:
    preds = []
    for p in onto.predicates.values():
        node: dict[str, Any] = {
            "name": p.name,
            "domain": expr_to_json(p.domain),
            "range": expr_to_json(p.range),
        }
        for flag in _FLAGS:
            node[flag] = getattr(p, flag)
        node["inverse_of"] = p.inverse_of
        preds.append(node)
    return {
        "classes": [{"name": c.name, "parents": sorted(c.parents)} for c in onto.classes.values()],
        "predicates": preds,
    }


def dump_ontology(onto: Ontology) -> str:
    return json.dumps(ontology_to_json(onto), indent=2) + "\n"


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    level: str  # "error" | "warning"
    code: str
    subject: str
    message: str

    def __str__(self) -> str:
        return f"{self.level}: [{self.code}] {self.message}"


def _structural_diagnostics(onto: Ontology) -> list[Diagnostic]:
    out: list[Diagnostic] = []
    for c in onto.classes.values():
        for parent in sorted(c.parents):
            if parent not in onto.classes:
                out.append(Diagnostic("error", "unresolved", c.name,
                                      f"class {c.name!r} has undeclared parent {parent!r}"))
    if not any(d.code == "unresolved" for d in out):
        try:
            onto.ancestors
        except OntologyError as exc:
            out.append(Diagnostic("error", "cycle", "", str(exc)))
    for p in onto.predicates.values():
        for role in ("domain", "range"):
            for name in expr_names(getattr(p, role)):
                if name not in onto.classes:
                    out.append(Diagnostic("error", "unresolved", p.name,
                                          f"predicate {p.name!r} {role} names undeclared class {name!r}"))
        if p.inverse_of is None:
            continue
        q = onto.predicates.get(p.inverse_of)
        if q is None:
            out.append(Diagnostic("error", "unresolved", p.name,
                                  f"predicate {p.name!r} inverse_of undeclared {p.inverse_of!r}"))
        elif q.inverse_of != p.name:
            out.append(Diagnostic("error", "inverse", p.name,
                                  f"inverse of {p.name!r} is {q.name!r}, whose inverse is {q.inverse_of!r}"))
        if p.inverse_of == p.name and not p.symmetric:
            out.append(Diagnostic("error", "self_inverse", p.name,
                                  f"predicate {p.name!r} is its own inverse but not symmetric"))
    return out


def validate_ontology(onto: Ontology) -> list[Diagnostic]:
    """Return structural errors plus syntactic axiom warnings.

    Only syntactic checks are done; an unsatisfiable domain such as
    ``A and not A`` is not detected.
    """
    out = _structural_diagnostics(onto)
    for p in onto.predicates.values():
        if p.symmetric and str(p.domain) != str(p.range):
            out.append(Diagnostic("warning", "symmetric_domain_range", p.name,
                                  f"symmetric predicate {p.name!r} has domain {p.domain} "
                                  f"but range {p.range}"))
        if p.functional and p.transitive:
            out.append(Diagnostic("warning", "functional_transitive", p.name,
                                  f"predicate {p.name!r} is functional and transitive; "
                                  f"its closure can violate functionality"))
        if p.inverse_functional and p.transitive:
            out.append(Diagnostic("warning", "functional_transitive", p.name,
                                  f"predicate {p.name!r} is inverse-functional and transitive; "
                                  f"its closure can violate inverse-functionality"))
    return out
