"""``ogsgg`` command line.

Exit codes: 0 success, 1 validation failure, 2 input-format error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import baseline, dataset as ds, metrics, postproc
from .ontology import OntologyError, OntologySyntaxError, UnknownNameError, load_ontology, validate_ontology
from .reasoner import build_constraint_tensor, check_consistency

log = logging.getLogger("ogsgg")

EXIT_OK, EXIT_INVALID, EXIT_FORMAT = 0, 1, 2
DEFAULT_SEED = 0


class InputError(Exception):
    """Bad or missing input; exits with status 2."""


def _require(*paths) -> None:
    missing = [str(p) for p in paths if p is not None and not Path(p).exists()]
    if missing:
        raise InputError(f"missing input file(s): {', '.join(missing)}")


def _ontology(path):
    _require(path)
    try:
        return load_ontology(path)
    except (OntologyError, UnknownNameError) as exc:
        raise InputError(f"{path}: {exc}") from None


def _dataset(path):
    _require(path)
    try:
        return ds.load_dataset(path)
    except ds.DatasetError as exc:
        raise InputError(f"{path}: {exc}") from None


def _scores(path):
    _require(path)
    try:
        return postproc.load_scores(path)
    except ValueError as exc:
        raise InputError(f"{path}: {exc}") from None


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2) + "\n", encoding="utf-8")


def _resolved_classes(onto, graph) -> dict:
    try:
        return {o.id: onto.resolve_class(o.class_name) for o in graph.objects}
    except UnknownNameError as exc:
        raise InputError(f"image {graph.image_id}: {exc}") from None


# --------------------------------------------------------------------------
# validate / tensor dump / stats
# --------------------------------------------------------------------------


def cmd_validate(args) -> int:
    _require(args.ontology)
    try:
        onto = load_ontology(args.ontology)
    except OntologySyntaxError as exc:
        print(f"{args.ontology}: syntax error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except (OntologyError, UnknownNameError) as exc:
        print(f"{args.ontology}: error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    diags = validate_ontology(onto)
    for d in diags:
        print(d)
    errors = sum(d.level == "error" for d in diags)
    print(f"{len(onto.classes)} classes, {len(onto.predicates)} predicates, "
          f"{errors} errors, {len(diags) - errors} warnings")
    return EXIT_INVALID if errors else EXIT_OK


def cmd_tensor_dump(args) -> int:
    tensor = build_constraint_tensor(_ontology(args.ontology))
    lines = ["subject_class, object_class, predicate, allowed"]
    lines += [f"{a}, {b}, {p}, {str(v).lower()}" for a, b, p, v in tensor.rows()]
    text = "\n".join(lines) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_stats(args) -> int:
    columns = {Path(p).stem: ds.compute_stats(_dataset(p)) for p in args.datasets}
    if args.json:
        print(json.dumps({k: v.as_dict() for k, v in columns.items()}, indent=2))
    else:
        sys.stdout.write(ds.format_stats_table(columns))
    return EXIT_OK


# --------------------------------------------------------------------------
# convert
# --------------------------------------------------------------------------


def cmd_convert(args) -> int:
    _require(args.dataset, args.map, args.ontology)
    onto = _ontology(args.ontology)
    try:
        pmap = ds.load_predicate_map(args.map)
        pmap.check_against(onto)
    except ds.DatasetError as exc:
        raise InputError(str(exc)) from None
    graphs = _dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    print(f"seed: {args.seed}")

    stages = {}
    if args.filter_tag and not args.map_first:
        graphs = ds.filter_by_tag(graphs, args.filter_tag)
    stages["base"] = ds.compute_stats(graphs)
    graphs = [ds.apply_predicate_map(g, pmap) for g in graphs]
    if args.filter_tag and args.map_first:
        graphs = ds.filter_by_tag(graphs, args.filter_tag)
    empty = [g.image_id for g in graphs if not g.triplets]
    if args.drop_empty:
        graphs = [g for g in graphs if g.triplets]
    stages["filter"] = ds.compute_stats(graphs)
    if args.augment:
        graphs = [ds.augment_with_inference(g, onto) for g in graphs]
        stages["filter+aug"] = ds.compute_stats(graphs)

    manifest = {
        "seed": args.seed,
        "filter_tag": args.filter_tag,
        "order": "map,tag" if args.map_first else "tag,map",
        "augment": bool(args.augment),
        "empty_images": empty,
        "empty_images_dropped": bool(args.drop_empty),
    }
    if args.split is not None:
        train, val = ds.stratified_split(graphs, args.split, args.seed)
        ds.dump_dataset(train, out / "train.jsonl", provenance=True)
        ds.dump_dataset(val, out / "validation.jsonl", provenance=True)
        registry = sorted(ds.build_seen_triplet_registry(train))
        _write_json(out / "registry.json", [list(r) for r in registry])
        manifest |= {
            "validation_fraction": args.split,
            "splits": {
                "train": [g.image_id for g in train],
                "validation": [g.image_id for g in val],
            },
            "predicate_frequencies": {
                "train": ds.predicate_image_frequencies(train),
                "validation": ds.predicate_image_frequencies(val),
            },
        }
    else:
        ds.dump_dataset(graphs, out / "converted.jsonl", provenance=True)
        manifest["predicate_frequencies"] = {"all": ds.predicate_image_frequencies(graphs)}
    _write_json(out / "manifest.json", manifest)
    _write_json(out / "stats.json", {k: v.as_dict() for k, v in stages.items()})
    table = ds.format_stats_table(stages)
    (out / "stats.txt").write_text(table, encoding="utf-8")
    sys.stdout.write(table)
    if empty:
        log.warning("%d images have no triplets after predicate mapping", len(empty))
    return EXIT_OK


# --------------------------------------------------------------------------
# baseline
# --------------------------------------------------------------------------


def cmd_baseline(args) -> int:
    test = _dataset(args.test)
    if args.prior:
        _require(args.prior)
        prior = baseline.load_prior(args.prior)
    else:
        if not args.train:
            raise InputError("either --train or --prior is required")
        train = _dataset(args.train)
        universe = list(_ontology(args.ontology).predicates) if args.ontology else None
        try:
            prior = baseline.fit_prior(train, args.smoothing, universe)
        except ValueError as exc:
            raise InputError(str(exc)) from None
    if args.prior_out:
        prior.dump(args.prior_out)
    scores = {g.image_id: baseline.score_image(prior, g) for g in sorted(test, key=lambda g: g.image_id)}
    postproc.dump_scores(scores, args.out)
    print(f"scored {len(scores)} images, {sum(map(len, scores.values()))} proposals -> {args.out}")
    return EXIT_OK


# --------------------------------------------------------------------------
# postprocess
# --------------------------------------------------------------------------


def cmd_postprocess(args) -> int:
    onto = _ontology(args.ontology)
    graphs = {g.image_id: g for g in _dataset(args.dataset)}
    scores = _scores(args.scores)
    unknown = sorted(set(scores) - set(graphs))
    if unknown:
        raise InputError(f"scores reference images missing from the dataset: {unknown[:5]}")
    tensor = build_constraint_tensor(onto)
    config = postproc.SelectionConfig(
        top_k=args.top_k,
        graph_constraint=args.graph_constraint,
        apply_tensor_filter=not args.no_tensor,
        apply_axiom_pruning=not args.no_axioms,
        expand_implicit=args.expand_implicit,
    )
    out = Path(args.out)
    (out / "graphs").mkdir(parents=True, exist_ok=True)
    suffix = "dot" if args.emit == "dot" else "txt"
    with open(out / "selection.jsonl", "w", encoding="utf-8") as fh:
        for image_id in sorted(scores):
            graph = graphs[image_id]
            try:
                result = postproc.select_top(
                    scores[image_id], config, onto, tensor, _resolved_classes(onto, graph)
                )
            except (UnknownNameError, ValueError) as exc:
                raise InputError(f"image {image_id}: {exc}") from None
            fh.write(json.dumps(_result_record(image_id, result)) + "\n")
            (out / "graphs" / f"{image_id}.{suffix}").write_text(
                postproc.emit_graph(result, graph, args.emit), encoding="utf-8"
            )
            for c in result.conflicts:
                log.warning("image %s: implicit %s conflicts (%s) with %s", image_id, tuple(c.triplet),
                            c.reason, tuple(c.against))
    print(f"post-processed {len(scores)} images -> {out}")
    return EXIT_OK


def _result_record(image_id, result: postproc.SelectionResult) -> dict:
    def trip(t):
        return {"s": t.subject, "p": t.predicate, "o": t.object}

    return {
        "image_id": image_id,
        "accepted": [trip(p) | {"score": p.score} for p in result.accepted],
        "implicit": [trip(i.triplet) | {"from": [trip(s) for s in i.sources]} for i in result.implicit],
        "pruned": [trip(p.proposal) | {"score": p.proposal.score, "reason": p.reason} for p in result.pruned],
        "conflicts": [trip(c.triplet) | {"reason": c.reason, "against": trip(c.against)} for c in result.conflicts],
    }


# --------------------------------------------------------------------------
# evaluate
# --------------------------------------------------------------------------


def cmd_evaluate(args) -> int:
    gt = _dataset(args.gt)
    scores = _scores(args.scores)
    onto = _ontology(args.ontology) if args.ontology else None
    if args.post and onto is None:
        raise InputError("--post requires --ontology")
    registry = None
    if args.registry:
        _require(args.registry)
        registry = frozenset(tuple(r) for r in json.loads(Path(args.registry).read_text()))
    elif args.train:
        registry = frozenset(ds.build_seen_triplet_registry(_dataset(args.train)))
    config = metrics.MetricsConfig(
        k_values=tuple(args.K),
        graph_constraints=tuple(args.k),
        aggregation=args.aggregation,
        restrict_to_labeled_pairs=args.restrict_labeled,
        zero_shot_registry=registry,
    )
    index = onto.predicate_index if onto is not None else None
    try:
        reports = {"raw": metrics.evaluate(gt, scores, config, index)}
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    if args.post:
        tensor = build_constraint_tensor(onto)
        filtered = {}
        for g in gt:
            filtered[g.image_id] = postproc.postprocess_proposals(
                scores[g.image_id], onto, tensor, _resolved_classes(onto, g),
                apply_tensor_filter=not args.no_tensor, apply_axiom_pruning=not args.no_axioms,
            )
        expand = onto if args.include_implicit else None
        reports["post"] = metrics.evaluate(gt, filtered, config, index, expand)
    for name, rep in reports.items():
        print(f"== {name} ==")
        sys.stdout.write(rep.format_text())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        for name, rep in reports.items():
            (out / f"report_{name}.json").write_text(rep.dumps(), encoding="utf-8")
            (out / f"report_{name}.txt").write_text(rep.format_text(), encoding="utf-8")
    return EXIT_OK


def cmd_check(args) -> int:
    onto = _ontology(args.ontology)
    tensor = build_constraint_tensor(onto)
    bad = 0
    for g in _dataset(args.dataset):
        for v in check_consistency(onto, tensor, g):
            bad += 1
            print(f"{g.image_id}: {v.kind}: {v.message}")
    print(f"{bad} violations")
    return EXIT_INVALID if bad else EXIT_OK


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ogsgg", description="Ontology-guided scene graph tooling.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="parse and lint an ontology")
    p.add_argument("ontology")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("tensor", help="constraint tensor tools")
    tsub = p.add_subparsers(dest="tensor_command", required=True)
    d = tsub.add_parser("dump", help="print every (subject, object, predicate) legality bit")
    d.add_argument("ontology")
    d.add_argument("--out")
    d.set_defaults(func=cmd_tensor_dump)

    p = sub.add_parser("stats", help="dataset statistics")
    p.add_argument("datasets", nargs="+")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("check", help="lint ground-truth graphs against the ontology")
    p.add_argument("dataset")
    p.add_argument("--ontology", required=True)
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("convert", help="tag filter, predicate map, augment and split a dataset")
    p.add_argument("dataset")
    p.add_argument("--map", required=True)
    p.add_argument("--ontology", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--filter-tag")
    p.add_argument("--map-first", action="store_true", help="apply the predicate map before the tag filter")
    p.add_argument("--augment", action="store_true")
    p.add_argument("--drop-empty", action="store_true", help="drop images left without triplets")
    p.add_argument("--split", type=float, metavar="FRACTION")
    p.add_argument("--seed", type=int, default=DEFAULT_SEED)
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("baseline", help="score images with a class-pair frequency prior")
    p.add_argument("--train")
    p.add_argument("--test", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ontology", help="use the ontology's predicates as the universe")
    p.add_argument("--smoothing", type=float, default=1.0)
    p.add_argument("--prior", help="load a saved prior instead of fitting")
    p.add_argument("--prior-out", help="save the fitted prior")
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("postprocess", help="ontology-guided selection of scored triplets")
    p.add_argument("--scores", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--ontology", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--top-k", type=int, default=16)
    p.add_argument("--graph-constraint", type=int, default=1)
    p.add_argument("--no-tensor", action="store_true")
    p.add_argument("--no-axioms", action="store_true")
    p.add_argument("--expand-implicit", action="store_true")
    p.add_argument("--emit", choices=("dot", "text"), default="dot")
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("evaluate", help="R@K / zR@K / mR@K grid")
    p.add_argument("--gt", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--ontology")
    p.add_argument("--K", type=int, nargs="+", default=[20, 50, 100])
    p.add_argument("--k", type=int, nargs="+", default=[1, 8])
    p.add_argument("--aggregation", choices=(metrics.PER_IMAGE_MEAN, metrics.DATASET_MICRO),
                   default=metrics.PER_IMAGE_MEAN)
    p.add_argument("--registry", help="seen-triplet registry JSON for zR@K")
    p.add_argument("--train", help="training dataset to build the zR@K registry from")
    p.add_argument("--restrict-labeled", action="store_true")
    p.add_argument("--post", action="store_true", help="also evaluate after ontology post-processing")
    p.add_argument("--no-tensor", action="store_true")
    p.add_argument("--no-axioms", action="store_true")
    p.add_argument("--include-implicit", action="store_true",
                   help="with --post, count implicit triplets entailed by the selection")
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FORMAT


if __name__ == "__main__":
    sys.exit(main())
