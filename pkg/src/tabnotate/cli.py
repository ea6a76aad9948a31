"""Command-line interface.

Machine-parsable results go to stdout as tab-separated fields;
diagnostics go to stderr.  Exit codes: 0 success, 1 usage or input
error, 2 task failure (including backend trouble).

Credentials are read from the environment only: TABNOTATE_API_KEY for
the bearer token, TABNOTATE_MODEL for the model name, and
TABNOTATE_PRICE_IN / TABNOTATE_PRICE_OUT for dollars per 1000 tokens.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .backend import (
    BackendError,
    GenerationParams,
    HttpBackend,
    HttpEndpoint,
    PriceTable,
    load_transcript,
)
from .core import (
    Ontology,
    SamplingMode,
    SamplingStrategy,
    Table,
    detect_ontology_format,
    load_ontology,
    read_csv,
)
from .evaluate import (
    System,
    jaccard_join,
    levenshtein_join,
    load_manifest,
    run_benchmark,
    write_report,
)
from .harness import (
    PipelineConfig,
    TaskFailed,
    UnknownType,
    run_column_type_task,
    run_join_task_detailed,
    run_table_class_task,
)
from .prompt import (
    PromptConfig,
    assemble,
    column_type_prompt,
    join_prompt,
    table_class_prompt,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_TASK = 2

DEFAULT_MODEL = "gpt-3.5-turbo"


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on usage errors; this tool reserves 2 for
    # task failures.
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _common_options(parser: argparse.ArgumentParser, *, needs_backend: bool) -> None:
    parser.add_argument(
        "--backend",
        metavar="SPEC",
        required=False,
        help="scripted:<transcript.jsonl> or http:<endpoint-url>",
    )
    parser.add_argument("--ontology", metavar="PATH", help="ontology term file")
    parser.add_argument(
        "--headers",
        action="store_true",
        help="treat the first CSV line as the header row",
    )
    parser.add_argument("--sample-rows", type=int, default=5, metavar="N")
    parser.add_argument("--temperature", type=float, default=0.0, metavar="T")
    parser.add_argument("--max-tokens", type=int, default=256, metavar="N")
    parser.add_argument(
        "--seed",
        type=int,
        default=None,
        metavar="N",
        help="sample rows with a seeded draw instead of taking the head",
    )
    parser.add_argument("--no-demonstration", action="store_true")
    parser.add_argument("--no-metadata", action="store_true")
    parser.add_argument("--no-prefix", action="store_true")
    parser.add_argument("--no-anchoring", action="store_true")
    parser.add_argument("--report", metavar="PATH", help="write a JSON report here")
    parser.add_argument(
        "--dump-prompt",
        action="store_true",
        help="print the assembled prompt and exit without calling any backend",
    )
    parser.set_defaults(needs_backend=needs_backend)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tabnotate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    classify = sub.add_parser(
        "classify-table", help="assign an ontology class to a table"
    )
    classify.add_argument("csv_path", metavar="TABLE.csv")
    classify.add_argument(
        "--classes", metavar="PATH", help="restrict answers to these class names"
    )
    _common_options(classify, needs_backend=True)
    classify.set_defaults(run=cmd_classify_table)

    annotate = sub.add_parser(
        "annotate-columns", help="assign a property to each column"
    )
    annotate.add_argument("csv_path", metavar="TABLE.csv")
    _common_options(annotate, needs_backend=True)
    annotate.set_defaults(run=cmd_annotate_columns)

    join = sub.add_parser(
        "predict-join", help="predict the join column pair"
    )
    join.add_argument("left_csv", metavar="LEFT.csv")
    join.add_argument("right_csv", metavar="RIGHT.csv")
    join.add_argument(
        "--baseline",
        choices=["none", "jaccard", "levenshtein"],
        default="none",
        help="use a similarity baseline instead of the model",
    )
    _common_options(join, needs_backend=True)
    join.set_defaults(run=cmd_predict_join)

    evaluate = sub.add_parser(
        "eval", help="run a benchmark manifest and report metrics"
    )
    evaluate.add_argument("manifest", metavar="MANIFEST.jsonl")
    evaluate.add_argument(
        "--system",
        choices=[s.value for s in System],
        default=System.MODEL.value,
    )
    evaluate.add_argument("--jobs", type=int, default=4, metavar="N")
    _common_options(evaluate, needs_backend=False)
    evaluate.set_defaults(run=cmd_eval)

    return parser


def _prices_from_env() -> PriceTable:
    return PriceTable(
        prompt_per_1k=float(os.environ.get("TABNOTATE_PRICE_IN", "0.0015")),
        completion_per_1k=float(os.environ.get("TABNOTATE_PRICE_OUT", "0.002")),
    )


def _build_backend(spec: str | None):
    if spec is None:
        raise ValueError("--backend is required (scripted:<path> or http:<url>)")
    kind, _, rest = spec.partition(":")
    if kind == "scripted" and rest:
        return load_transcript(
            Path(rest).read_text(encoding="utf-8"), prices=_prices_from_env()
        )
    if kind == "http" and rest:
        endpoint = HttpEndpoint(
            url=rest,
            model=os.environ.get("TABNOTATE_MODEL", DEFAULT_MODEL),
            api_key=os.environ.get("TABNOTATE_API_KEY"),
        )
        return HttpBackend(endpoint, prices=_prices_from_env())
    raise ValueError(f"unrecognized backend spec {spec!r}")


def _load_ontology_file(path: str | None) -> Ontology:
    if path is None:
        raise ValueError("--ontology is required for this command")
    text = Path(path).read_text(encoding="utf-8")
    return load_ontology(text, detect_ontology_format(text))


def _load_table(path: str, headers: bool) -> Table:
    text = Path(path).read_text(encoding="utf-8")
    return read_csv(text, name=Path(path).stem, headers=headers)


def _load_class_list(path: str | None) -> tuple[str, ...] | None:
    if path is None:
        return None
    names = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            names.append(line)
    if not names:
        raise ValueError(f"class list {path!r} is empty")
    return tuple(names)


def _pipeline_config(args: argparse.Namespace) -> PipelineConfig:
    strategy = (
        SamplingStrategy(SamplingMode.SEEDED_RANDOM, args.seed)
        if args.seed is not None
        else SamplingStrategy(SamplingMode.HEAD)
    )
    prompt_config = PromptConfig(
        sample_k=args.sample_rows,
        include_demonstration=not args.no_demonstration,
        include_metadata=not args.no_metadata,
        include_prefix=not args.no_prefix,
        strategy=strategy,
    )
    return PipelineConfig(
        anchoring_enabled=not args.no_anchoring,
        prompt_config=prompt_config,
        params=GenerationParams(
            temperature=args.temperature, max_tokens=args.max_tokens
        ),
        allowed_classes=_load_class_list(getattr(args, "classes", None)),
    )


def cmd_classify_table(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    table = _load_table(args.csv_path, args.headers)
    if args.dump_prompt:
        components = table_class_prompt(table, config.allowed_classes, config.prompt_config)
        print(assemble(components))
        return EXIT_OK
    ontology = _load_ontology_file(args.ontology)
    backend = _build_backend(args.backend)
    result, _, _ = run_table_class_task(table, ontology, backend, config)
    print(f"{result.term.iri}\t{str(result.anchored).lower()}\t{result.attempts}")
    return EXIT_OK


def cmd_annotate_columns(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    table = _load_table(args.csv_path, args.headers)
    if args.dump_prompt:
        print(assemble(column_type_prompt(table, config.prompt_config)))
        return EXIT_OK
    ontology = _load_ontology_file(args.ontology)
    backend = _build_backend(args.backend)
    result, _, _ = run_column_type_task(table, ontology, backend, config)
    for index, assignment in enumerate(result.assignments):
        label = (
            "Unknown"
            if isinstance(assignment, UnknownType)
            else f"dbo:{assignment.local_name}"
        )
        print(f"{index}\t{label}")
    return EXIT_OK


def cmd_predict_join(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    left = _load_table(args.left_csv, args.headers)
    right = _load_table(args.right_csv, args.headers)
    if args.dump_prompt:
        print(assemble(join_prompt(left, right, config.prompt_config)))
        return EXIT_OK
    if args.baseline == "jaccard":
        prediction = jaccard_join(left, right)
    elif args.baseline == "levenshtein":
        prediction = levenshtein_join(left, right)
    else:
        backend = _build_backend(args.backend)
        prediction = run_join_task_detailed(left, right, backend, config).prediction
    print(f"{','.join(prediction.left_cols)}\t{','.join(prediction.right_cols)}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    config = _pipeline_config(args)
    system = System(args.system)
    examples = load_manifest(args.manifest)
    ontology = None
    backend = None
    if system is System.MODEL:
        backend = _build_backend(args.backend)
        if any(ex.task.value != "join" for ex in examples):
            ontology = _load_ontology_file(args.ontology)
    report = run_benchmark(
        examples, system, ontology=ontology, backend=backend, config=config, jobs=args.jobs
    )
    if args.report:
        write_report(report, args.report)
    m = report.metrics
    print(
        f"P={m.precision:.3f} R={m.recall:.3f} F1={m.f1:.3f} "
        f"items={report.items} cost={report.total_cost:.6f}"
    )
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return args.run(args)
    except TaskFailed as exc:
        print(f"task failed: {exc}", file=sys.stderr)
        return EXIT_TASK
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_TASK
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
