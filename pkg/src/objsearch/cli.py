"""Operator entry points: ingest, search, eval, serve.

Machine-readable output goes to stdout, diagnostics to stderr. Exit codes:
0 success, 1 for I/O, configuration, or usage problems, 2 for query errors
(unknown class, malformed query). Output is plain text throughout, so
NO_COLOR needs no special handling.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path
from typing import Optional

from .core import Query
from .encoder import EmbeddingFileReader, encoder_from_spec
from .errors import (
    CapabilityError,
    ConfigurationError,
    FormatError,
    InputError,
    ObjSearchError,
    QueryError,
    TransportError,
)
from .evaluation import (
    JudgmentJournal,
    PromptTemplate,
    cumulative_tp_curve,
    export_curve_csv,
    zero_shot_classify,
)
from .index import Index
from .pipeline import ingest_dataset
from .retrieval import MODE_FULL_IMAGE, MODE_OBJECT, query_fingerprint, run_query

_CLI_MODES = {"object": MODE_OBJECT, "full": MODE_FULL_IMAGE}


class _Parser(argparse.ArgumentParser):
    # Usage mistakes are configuration problems, not query errors; exit 1
    # instead of argparse's default 2 to keep the code space consistent.
    def error(self, message: str):
        self.exit(1, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="objsearch", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="preprocess, encode, and index a dataset")
    p.add_argument("--images", type=Path, default=None, help="directory of image files")
    p.add_argument("--annotations", type=Path, required=True, help="directory of annotation JSON")
    p.add_argument("--encoder", default="toy", help="toy | toy:<dim> | remote:<url> | file:<path>")
    p.add_argument("--index", type=Path, required=True, help="index directory (created if absent)")
    p.add_argument("--with-full-image", action="store_true", help="also store full-image embeddings")
    p.add_argument("--workers", type=int, default=4, help="parallel per-image workers")
    p.add_argument("--dim", type=int, default=None, help="dimension when creating a new index")
    p.add_argument(
        "--classes",
        default=None,
        help="comma-separated class set for a new index (default: classes found in annotations)",
    )
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("search", help="run one query against an index")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--class", dest="class_label", default=None, help="object class gate")
    p.add_argument("--query", required=True, help="natural-language query text")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--mode", choices=sorted(_CLI_MODES), default="object")
    p.add_argument("--format", choices=("json", "table", "csv"), default="table")
    p.add_argument("--encoder", default="toy", help="text encoder: toy | toy:<dim> | remote:<url>")
    p.add_argument("--min-confidence", type=float, default=0.0)
    p.set_defaults(func=_cmd_search)

    p = sub.add_parser("eval", help="evaluation utilities")
    eval_sub = p.add_subparsers(dest="eval_command", required=True)

    c = eval_sub.add_parser("curve", help="cumulative true-positive curve as CSV")
    c.add_argument("--index", type=Path, required=True)
    c.add_argument("--judgments", type=Path, required=True, help="judgment journal (JSONL)")
    c.add_argument("--query-id", required=True)
    c.add_argument("--n", type=int, default=100)
    c.add_argument("--class", dest="class_label", default=None, help="re-run this class/query pair")
    c.add_argument("--query", default=None, help="query text to re-run for the ranking")
    c.add_argument("--mode", choices=sorted(_CLI_MODES), default="object")
    c.add_argument("--encoder", default="toy")
    c.add_argument("--ranking", type=Path, default=None, help="precomputed ranking (JSON list or search output)")
    c.add_argument("--out", type=Path, default=None, help="write CSV here instead of stdout")
    c.set_defaults(func=_cmd_eval_curve)

    c = eval_sub.add_parser("classify", help="zero-shot classification accuracy")
    c.add_argument("--embeddings", type=Path, required=True, help="precomputed-embedding file")
    c.add_argument("--labels", type=Path, required=True, help="JSON with labels and truth")
    c.add_argument("--template", default="{label}", help="prompt template with one {label}")
    c.add_argument("--encoder", default="toy")
    c.set_defaults(func=_cmd_eval_classify)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--index", type=Path, required=True)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--encoder", default="toy")
    p.add_argument("--journal", type=Path, default=None, help="judgment journal path")
    p.add_argument("--annotations", type=Path, default=None, help="annotation dir for crop serving")
    p.add_argument("--static", type=Path, default=None, help="static UI directory to mount at /")
    p.add_argument("--token", default=None, help="require this bearer token on /v1 endpoints")
    p.set_defaults(func=_cmd_serve)

    return parser


def _collect_class_set(annotations_dir: Path) -> list[str]:
    """Union of class labels declared across all annotation documents."""
    classes: set[str] = set()
    for ann_path in sorted(annotations_dir.glob("*.json")):
        try:
            doc = json.loads(ann_path.read_text())
            for inst in doc.get("instances", []):
                label = inst.get("class")
                if isinstance(label, str) and label.strip():
                    classes.add(label)
        except (OSError, json.JSONDecodeError):
            continue  # the pipeline reports malformed files properly
    return sorted(classes)


def _cmd_ingest(args) -> int:
    manifest = args.index / "manifest.json"
    if manifest.exists():
        index = Index.load(args.index)
        encoder = encoder_from_spec(args.encoder, dim=index.dim)
    else:
        if args.classes:
            class_set = [c.strip() for c in args.classes.split(",") if c.strip()]
        else:
            class_set = _collect_class_set(args.annotations)
        if not class_set:
            print("no classes found; nothing to index", file=sys.stderr)
            return 1
        encoder = encoder_from_spec(args.encoder, dim=args.dim)
        index = Index(encoder.descriptor, class_set)

    report = ingest_dataset(
        index,
        args.annotations,
        args.images,
        encoder,
        with_full_image=args.with_full_image,
        workers=args.workers,
    )
    index.persist(args.index)
    print(f"processed images:   {report.processed_images}")
    print(f"skipped (existing): {report.skipped_existing}")
    print(f"added images:       {report.ingest.added_images}")
    print(f"added objects:      {report.ingest.added_objects}")
    print(f"skipped duplicates: {report.ingest.skipped_duplicates}")
    for line in report.warnings + report.ingest.warnings:
        print(f"warning: {line}", file=sys.stderr)
    for line in report.failed_images:
        print(f"failed: {line}", file=sys.stderr)
    return 0 if not report.failed_images else 1


def _result_rows(index: Index, outcome) -> list[dict]:
    rows = []
    for r in outcome.results:
        bbox = None
        if r.best_object_index is not None:
            info = index.object_info(r.image_id, r.best_object_index)
            if info is not None:
                bbox = list(info[1])
        rows.append(
            {
                "image_id": r.image_id,
                "score": r.score,
                "best_object_index": r.best_object_index,
                "bbox": bbox,
            }
        )
    return rows


def _cmd_search(args) -> int:
    index = Index.load(args.index)
    encoder = encoder_from_spec(args.encoder, dim=index.dim)
    if isinstance(encoder, EmbeddingFileReader):
        raise ConfigurationError("an embedding file cannot encode query text")
    query = Query(class_label=args.class_label, text=args.query)
    outcome = run_query(
        index,
        encoder,
        query,
        args.k,
        mode=_CLI_MODES[args.mode],
        min_confidence=args.min_confidence,
    )
    rows = _result_rows(index, outcome)
    if args.format == "json":
        print(
            json.dumps(
                {
                    "results": rows,
                    "exhausted": outcome.exhausted,
                    "query_id": outcome.query_id,
                },
                indent=2,
            )
        )
    elif args.format == "csv":
        writer = csv.writer(sys.stdout)
        writer.writerow(["rank", "image_id", "score", "best_object_index", "x", "y", "w", "h"])
        for rank, row in enumerate(rows, start=1):
            bbox = row["bbox"] or ["", "", "", ""]
            writer.writerow(
                [rank, row["image_id"], f"{row['score']:.6f}", row["best_object_index"], *bbox]
            )
    else:
        if not rows:
            print("no results")
        for rank, row in enumerate(rows, start=1):
            obj = "" if row["best_object_index"] is None else f"  obj {row['best_object_index']}"
            bbox = "" if row["bbox"] is None else f"  bbox {tuple(row['bbox'])}"
            print(f"{rank:>4}  {row['score']:+.6f}  {row['image_id']}{obj}{bbox}")
        if outcome.exhausted:
            print(f"(exhausted: only {len(rows)} matching images)", file=sys.stderr)
    return 0


def _load_ranking_file(path: Path) -> list[str]:
    doc = json.loads(path.read_text())
    if isinstance(doc, dict) and "results" in doc:
        return [row["image_id"] for row in doc["results"]]
    if isinstance(doc, list):
        return [str(v) for v in doc]
    raise InputError(f"{path}: expected a JSON list of image ids or a search output document")


def _cmd_eval_curve(args) -> int:
    index = Index.load(args.index)
    if args.query is not None:
        encoder = encoder_from_spec(args.encoder, dim=index.dim)
        mode = _CLI_MODES[args.mode]
        query = Query(class_label=args.class_label, text=args.query)
        fingerprint = query_fingerprint(query, mode)
        if fingerprint != args.query_id:
            raise QueryError(
                f"--query-id {args.query_id} does not match this query "
                f"(fingerprint {fingerprint}); judgments would not line up"
            )
        outcome = run_query(index, encoder, query, args.n, mode=mode)
        ranked = [r.image_id for r in outcome.results]
    elif args.ranking is not None:
        ranked = _load_ranking_file(args.ranking)
    else:
        print(
            "error: need either --class/--query to recompute the ranking "
            "or --ranking FILE (the query id alone cannot be inverted)",
            file=sys.stderr,
        )
        return 1
    journal = JudgmentJournal(args.judgments)
    curve = cumulative_tp_curve(ranked, journal.verdicts_for(args.query_id), args.n)
    if args.out is not None:
        export_curve_csv(args.out, curve)
    else:
        export_curve_csv(sys.stdout, curve)
    return 0


def _cmd_eval_classify(args) -> int:
    reader = EmbeddingFileReader(args.embeddings)
    doc = json.loads(args.labels.read_text())
    labels = doc.get("labels")
    truth_map = doc.get("truth")
    if not isinstance(labels, list) or not isinstance(truth_map, dict):
        raise InputError(
            f'{args.labels}: expected {{"labels": [...], "truth": {{key: label}}}}'
        )
    encoder = encoder_from_spec(args.encoder, dim=reader.dim)
    items = []
    truth = []
    for key in sorted(truth_map):
        emb = reader.get_key(key)
        if emb is None:
            raise InputError(f"truth key {key!r} is absent from {args.embeddings}")
        label = truth_map[key]
        if label not in labels:
            raise InputError(f"truth label {label!r} is not in the label list")
        items.append(emb)
        truth.append(labels.index(label))
    outcome = zero_shot_classify(
        items, labels, PromptTemplate(args.template), encoder, truth=truth
    )
    print(f"items:    {len(items)}")
    print(f"template: {args.template}")
    print(f"accuracy: {outcome.accuracy:.4f}")
    return 0


def _cmd_serve(args) -> int:
    from .service import ServiceConfig, serve

    serve(
        ServiceConfig(
            index_path=args.index,
            encoder_spec=args.encoder,
            host=args.host,
            port=args.port,
            journal_path=args.journal,
            annotations_dir=args.annotations,
            api_token=args.token,
            static_dir=args.static,
        )
    )
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except QueryError as exc:
        print(f"query error: {exc}", file=sys.stderr)
        if exc.valid_classes:
            print(f"valid classes: {', '.join(exc.valid_classes)}", file=sys.stderr)
        return 2
    except (InputError, CapabilityError) as exc:
        print(f"query error: {exc}", file=sys.stderr)
        return 2
    except (ConfigurationError, FormatError, TransportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ObjSearchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
