"""Support-weighted metrics, join baselines, and the benchmark runner.

Classification tasks score per-class precision/recall/F1 aggregated by
gold support.  Join predictions score per column pair: precision over
predicted pairs, recall over gold pairs.  The runner emits a JSON report
with throughput and cost alongside the metrics.
"""

from __future__ import annotations

import json
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .backend import Backend, ScriptedBackend, UsageMeter, Usage
from .core import EmptyTable, MissingHeaders, Ontology, Table, edit_distance, read_csv
from .harness import (
    DEFAULT_PIPELINE_CONFIG,
    JoinPrediction,
    PipelineConfig,
    TaskFailed,
    UnknownType,
    run_column_type_task,
    run_join_task_detailed,
    run_table_class_task,
)

__all__ = [
    "ClassStats",
    "EmptyStats",
    "LabeledExample",
    "LengthMismatch",
    "ManifestError",
    "Report",
    "System",
    "Task",
    "WeightedMetrics",
    "edit_distance",
    "jaccard",
    "jaccard_join",
    "join_match",
    "levenshtein_join",
    "load_manifest",
    "per_class_stats",
    "run_benchmark",
    "weighted_metrics",
    "write_report",
]


class LengthMismatch(ValueError):
    """Prediction and gold vectors differ in length."""


class EmptyStats(ValueError):
    """No gold labels to aggregate over."""


class ManifestError(ValueError):
    """A benchmark manifest line is unusable."""


@dataclass
class ClassStats:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    support: int = 0


def per_class_stats(
    predictions: Sequence[str], golds: Sequence[str]
) -> dict[str, ClassStats]:
    """Confusion counts per class: tp, fp, fn, and gold support."""
    if len(predictions) != len(golds):
        raise LengthMismatch(
            f"{len(predictions)} predictions vs {len(golds)} gold labels"
        )
    stats: dict[str, ClassStats] = {}
    for predicted, gold in zip(predictions, golds):
        stats.setdefault(gold, ClassStats()).support += 1
        if predicted == gold:
            stats[gold].tp += 1
        else:
            stats.setdefault(predicted, ClassStats()).fp += 1
            stats[gold].fn += 1
    return stats


@dataclass(frozen=True)
class WeightedMetrics:
    precision: float
    recall: float
    f1: float


def weighted_metrics(stats: dict[str, ClassStats]) -> WeightedMetrics:
    """Support-weighted mean of per-class precision, recall, and F1."""
    total_support = sum(s.support for s in stats.values())
    if total_support == 0:
        raise EmptyStats("no gold labels in the confusion stats")
    precision_sum = recall_sum = f1_sum = 0.0
    for s in stats.values():
        if s.support == 0:
            continue
        precision = s.tp / (s.tp + s.fp) if s.tp + s.fp else 0.0
        recall = s.tp / (s.tp + s.fn)
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        precision_sum += s.support * precision
        recall_sum += s.support * recall
        f1_sum += s.support * f1
    return WeightedMetrics(
        precision=precision_sum / total_support,
        recall=recall_sum / total_support,
        f1=f1_sum / total_support,
    )


def jaccard(x: set[str], y: set[str]) -> float:
    """|X ∩ Y| / |X ∪ Y|, defined as 0 when both sets are empty."""
    union = x | y
    if not union:
        return 0.0
    return len(x & y) / len(union)


def _column_names(table: Table) -> list[str]:
    if table.headers is not None:
        return list(table.headers)
    return [str(i) for i in range(table.arity)]


def levenshtein_join(left: Table, right: Table) -> JoinPrediction:
    """Header pair with the smallest edit distance between lowercased names."""
    if left.headers is None or right.headers is None:
        raise MissingHeaders("the edit-distance baseline requires headers")
    best: tuple[int, str, str] | None = None
    for l in left.headers:
        for r in right.headers:
            key = (edit_distance(l.lower(), r.lower()), l, r)
            if best is None or key < best:
                best = key
    assert best is not None
    return JoinPrediction((best[1],), (best[2],))


def jaccard_join(left: Table, right: Table) -> JoinPrediction:
    """Column pair whose distinct value sets overlap most.

    Empty cells are ignored.  Ties break lexicographically by column name
    (positional index when headers are absent).
    """
    if not left.rows or not right.rows:
        raise EmptyTable("the value-overlap baseline requires rows on both sides")
    left_names, right_names = _column_names(left), _column_names(right)
    left_sets = [
        {row[i] for row in left.rows if row[i]} for i in range(left.arity)
    ]
    right_sets = [
        {row[j] for row in right.rows if row[j]} for j in range(right.arity)
    ]
    best: tuple[float, str, str] | None = None
    for i, lname in enumerate(left_names):
        for j, rname in enumerate(right_names):
            score = jaccard(left_sets[i], right_sets[j])
            key = (-score, lname, rname)
            if best is None or key < best:
                best = key
    assert best is not None
    return JoinPrediction((best[1],), (best[2],))


def join_match(
    prediction: JoinPrediction, gold: Iterable[tuple[str, str]]
) -> list[bool]:
    """Case-sensitive membership of each predicted pair in the gold set."""
    gold_set = {tuple(pair) for pair in gold}
    return [pair in gold_set for pair in prediction.pairs]


class Task(Enum):
    TABLE_CLASS = "table-class"
    COLUMN_TYPE = "column-type"
    JOIN = "join"


class System(Enum):
    MODEL = "model"
    JACCARD = "jaccard"
    LEVENSHTEIN = "levenshtein"


@dataclass(frozen=True)
class LabeledExample:
    """One benchmark item: table path(s), headers flag, and the gold label."""

    id: str
    task: Task
    headers: bool
    gold: object
    table: Path | None = None
    left: Path | None = None
    right: Path | None = None


def _manifest_error(lineno: int, message: str) -> ManifestError:
    return ManifestError(f"line {lineno}: {message}")


def _parse_gold(task: Task, gold: object, lineno: int) -> object:
    if task is Task.TABLE_CLASS:
        if not isinstance(gold, str):
            raise _manifest_error(lineno, "table-class gold must be a string")
        return gold
    if task is Task.COLUMN_TYPE:
        if not isinstance(gold, list) or not all(isinstance(g, str) for g in gold):
            raise _manifest_error(lineno, "column-type gold must be a list of strings")
        return tuple(gold)
    if (
        not isinstance(gold, list)
        or not gold
        or not all(
            isinstance(p, list) and len(p) == 2 and all(isinstance(n, str) for n in p)
            for p in gold
        )
    ):
        raise _manifest_error(lineno, "join gold must be a list of [left, right] pairs")
    return tuple((p[0], p[1]) for p in gold)


def load_manifest(path: Path | str) -> list[LabeledExample]:
    """Parse a JSON-lines manifest; table paths resolve against its directory."""
    path = Path(path)
    base = path.parent
    examples: list[LabeledExample] = []
    for lineno, raw_line in enumerate(
        path.read_text(encoding="utf-8").splitlines(), start=1
    ):
        line = raw_line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise _manifest_error(lineno, f"invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise _manifest_error(lineno, "expected a JSON object")
        item_id = obj.get("id")
        if not isinstance(item_id, str) or not item_id:
            raise _manifest_error(lineno, "missing 'id' string")
        try:
            task = Task(obj.get("task"))
        except ValueError:
            raise _manifest_error(
                lineno, f"unknown task {obj.get('task')!r}"
            ) from None
        headers = obj.get("headers", True)
        if not isinstance(headers, bool):
            raise _manifest_error(lineno, "'headers' must be a boolean")
        gold = _parse_gold(task, obj.get("gold"), lineno)
        if task is Task.JOIN:
            left, right = obj.get("left"), obj.get("right")
            if not isinstance(left, str) or not isinstance(right, str):
                raise _manifest_error(lineno, "join items need 'left' and 'right' paths")
            examples.append(
                LabeledExample(
                    id=item_id,
                    task=task,
                    headers=headers,
                    gold=gold,
                    left=base / left,
                    right=base / right,
                )
            )
        else:
            table = obj.get("table")
            if not isinstance(table, str):
                raise _manifest_error(lineno, "missing 'table' path")
            examples.append(
                LabeledExample(
                    id=item_id, task=task, headers=headers, gold=gold, table=base / table
                )
            )
    return examples


@dataclass
class ItemOutcome:
    id: str
    task: Task
    prediction: object
    gold: object
    correct: bool
    anchored: bool
    attempts: int
    error: str | None = None


@dataclass
class Report:
    task: str
    system: str
    metrics: WeightedMetrics
    items: int
    throughput: float
    total_cost: float
    per_item: list[ItemOutcome]
    by_task: dict[str, dict] = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    usage: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "system": self.system,
            "metrics": {
                "precision": self.metrics.precision,
                "recall": self.metrics.recall,
                "f1": self.metrics.f1,
            },
            "items": self.items,
            "throughput": self.throughput,
            "total_cost": self.total_cost,
            "config": self.config,
            "usage": self.usage,
            "by_task": self.by_task,
            "per_item": [
                {
                    "id": o.id,
                    "task": o.task.value,
                    "prediction": o.prediction,
                    "gold": o.gold,
                    "correct": o.correct,
                    "anchored": o.anchored,
                    "attempts": o.attempts,
                    "error": o.error,
                }
                for o in self.per_item
            ],
        }


def write_report(report: Report, path: Path | str) -> None:
    Path(path).write_text(
        json.dumps(report.to_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8",
    )


def _read_table(path: Path, name: str, headers: bool) -> Table:
    return read_csv(path.read_text(encoding="utf-8"), name=name, headers=headers)


def _label_of(assignment: object) -> str:
    if isinstance(assignment, UnknownType):
        return "Unknown"
    return assignment.local_name  # type: ignore[union-attr]


@dataclass
class _JoinCounts:
    correct: int = 0
    predicted: int = 0
    gold: int = 0

    def metrics(self) -> WeightedMetrics:
        precision = self.correct / self.predicted if self.predicted else 0.0
        recall = self.correct / self.gold if self.gold else 0.0
        f1 = (
            2 * precision * recall / (precision + recall)
            if precision + recall
            else 0.0
        )
        return WeightedMetrics(precision, recall, f1)


def _aggregate(
    outcomes: Sequence[ItemOutcome],
) -> tuple[WeightedMetrics, dict[str, dict]]:
    """Combine per-item records into overall and per-task metrics.

    Classification groups use support-weighted multiclass metrics; joins
    use pair-level micro precision/recall.  With several task groups the
    overall numbers are the groups' metrics weighted by their gold
    instance counts (items, columns, or gold pairs).
    """
    class_pairs: list[tuple[str, str]] = []
    column_pairs: list[tuple[str, str]] = []
    join_counts = _JoinCounts()
    for outcome in outcomes:
        if outcome.task is Task.TABLE_CLASS:
            predicted = outcome.prediction if isinstance(outcome.prediction, str) else ""
            class_pairs.append((predicted, outcome.gold))  # type: ignore[arg-type]
        elif outcome.task is Task.COLUMN_TYPE:
            golds = list(outcome.gold)  # type: ignore[arg-type]
            preds = list(outcome.prediction) if outcome.prediction else [""] * len(golds)
            column_pairs.extend(zip(preds, golds))
        else:
            gold_pairs = {tuple(p) for p in outcome.gold}  # type: ignore[union-attr]
            predicted_pairs = (
                [tuple(p) for p in outcome.prediction] if outcome.prediction else []
            )
            join_counts.gold += len(gold_pairs)
            join_counts.predicted += len(predicted_pairs)
            join_counts.correct += sum(1 for p in predicted_pairs if p in gold_pairs)

    groups: list[tuple[str, WeightedMetrics, int]] = []
    if class_pairs:
        metrics = weighted_metrics(
            per_class_stats([p for p, _ in class_pairs], [g for _, g in class_pairs])
        )
        groups.append((Task.TABLE_CLASS.value, metrics, len(class_pairs)))
    if column_pairs:
        metrics = weighted_metrics(
            per_class_stats([p for p, _ in column_pairs], [g for _, g in column_pairs])
        )
        groups.append((Task.COLUMN_TYPE.value, metrics, len(column_pairs)))
    if join_counts.gold or join_counts.predicted:
        groups.append((Task.JOIN.value, join_counts.metrics(), join_counts.gold))

    by_task = {
        name: {
            "precision": m.precision,
            "recall": m.recall,
            "f1": m.f1,
            "instances": weight,
        }
        for name, m, weight in groups
    }
    if not groups:
        raise EmptyStats("benchmark produced no scorable instances")
    if len(groups) == 1:
        return groups[0][1], by_task
    total = sum(weight for _, _, weight in groups)
    overall = WeightedMetrics(
        precision=sum(w * m.precision for _, m, w in groups) / total,
        recall=sum(w * m.recall for _, m, w in groups) / total,
        f1=sum(w * m.f1 for _, m, w in groups) / total,
    )
    return overall, by_task


def _run_item(
    example: LabeledExample,
    system: System,
    ontology: Ontology | None,
    backend: Backend | None,
    config: PipelineConfig,
    meter: UsageMeter,
) -> ItemOutcome:
    try:
        if example.task is Task.TABLE_CLASS:
            table = _read_table(example.table, example.id, example.headers)
            result, _, usage = run_table_class_task(table, ontology, backend, config)
            meter.add(usage)
            prediction = result.term.local_name
            return ItemOutcome(
                id=example.id,
                task=example.task,
                prediction=prediction,
                gold=example.gold,
                correct=prediction == example.gold,
                anchored=result.anchored,
                attempts=result.attempts,
            )
        if example.task is Task.COLUMN_TYPE:
            table = _read_table(example.table, example.id, example.headers)
            if len(example.gold) != table.arity:  # type: ignore[arg-type]
                raise ManifestError(
                    f"item {example.id!r}: gold lists {len(example.gold)} columns, "
                    f"table has {table.arity}"
                )
            result, _, usage = run_column_type_task(table, ontology, backend, config)
            meter.add(usage)
            labels = [_label_of(a) for a in result.assignments]
            return ItemOutcome(
                id=example.id,
                task=example.task,
                prediction=labels,
                gold=list(example.gold),  # type: ignore[arg-type]
                correct=labels == list(example.gold),  # type: ignore[arg-type]
                anchored=result.anchored,
                attempts=result.attempts,
            )
        left = _read_table(example.left, f"{example.id}-left", example.headers)
        right = _read_table(example.right, f"{example.id}-right", example.headers)
        if system is System.JACCARD:
            prediction = jaccard_join(left, right)
            anchored, attempts = False, 0
            meter.add(Usage())
        elif system is System.LEVENSHTEIN:
            prediction = levenshtein_join(left, right)
            anchored, attempts = False, 0
            meter.add(Usage())
        else:
            run = run_join_task_detailed(left, right, backend, config)
            meter.add(run.usage)
            prediction, anchored, attempts = run.prediction, False, run.attempts
        gold_pairs = [list(p) for p in example.gold]  # type: ignore[union-attr]
        predicted_pairs = [list(p) for p in prediction.pairs]
        correct = {tuple(p) for p in predicted_pairs} == {tuple(p) for p in gold_pairs}
        return ItemOutcome(
            id=example.id,
            task=example.task,
            prediction=predicted_pairs,
            gold=gold_pairs,
            correct=correct,
            anchored=anchored,
            attempts=attempts,
        )
    except TaskFailed as exc:
        meter.add(Usage())
        if example.task is Task.JOIN:
            gold = [list(p) for p in example.gold]  # type: ignore[union-attr]
        elif example.task is Task.COLUMN_TYPE:
            gold = list(example.gold)  # type: ignore[arg-type]
        else:
            gold = example.gold
        return ItemOutcome(
            id=example.id,
            task=example.task,
            prediction=None,
            gold=gold,
            correct=False,
            anchored=False,
            attempts=0,
            error=str(exc),
        )


def run_benchmark(
    examples: Sequence[LabeledExample],
    system: System,
    ontology: Ontology | None = None,
    backend: Backend | None = None,
    config: PipelineConfig = DEFAULT_PIPELINE_CONFIG,
    jobs: int = 4,
) -> Report:
    """Run every example and aggregate task-appropriate metrics.

    The similarity baselines need no backend and support only join items.
    Scripted backends run items sequentially so transcript replay stays
    aligned with the manifest order; a failed item is recorded as
    incorrect rather than aborting the run.
    """
    if system is System.MODEL:
        if backend is None:
            raise ValueError("the model system needs a backend")
        needs_ontology = any(ex.task is not Task.JOIN for ex in examples)
        if needs_ontology and ontology is None:
            raise ValueError("classification tasks need an ontology")
    else:
        bad = next((ex for ex in examples if ex.task is not Task.JOIN), None)
        if bad is not None:
            raise ManifestError(
                f"item {bad.id!r}: system {system.value!r} only supports join items"
            )

    meter = UsageMeter()
    outcomes: list[ItemOutcome | None] = [None] * len(examples)
    parallel = (
        system is System.MODEL
        and not isinstance(backend, ScriptedBackend)
        and jobs > 1
        and len(examples) > 1
    )
    if parallel:
        lock = threading.Lock()

        def worker(index_example: tuple[int, LabeledExample]) -> None:
            index, example = index_example
            outcome = _run_item(example, system, ontology, backend, config, meter)
            with lock:
                outcomes[index] = outcome

        with ThreadPoolExecutor(max_workers=jobs) as pool:
            list(pool.map(worker, enumerate(examples)))
    else:
        for index, example in enumerate(examples):
            outcomes[index] = _run_item(example, system, ontology, backend, config, meter)

    finished = [o for o in outcomes if o is not None]
    overall, by_task = _aggregate(finished)
    tasks_present = {o.task.value for o in finished}
    task_name = tasks_present.pop() if len(tasks_present) == 1 else "mixed"
    meter_report = meter.report()
    return Report(
        task=task_name,
        system=system.value,
        metrics=overall,
        items=len(finished),
        throughput=meter_report.items_per_second,
        total_cost=meter_report.total_cost,
        per_item=finished,
        by_task=by_task,
        config={
            "temperature": config.params.temperature,
            "max_tokens": config.params.max_tokens,
            "sample_rows": config.prompt_config.sample_k,
            "anchoring": config.anchoring_enabled,
            "context_flow": config.context_flow,
            "jobs": jobs if parallel else 1,
        },
        usage={
            "prompt_tokens": meter_report.prompt_tokens,
            "completion_tokens": meter_report.completion_tokens,
            "wall_time": meter_report.total_wall_time,
            "token_counts_approximate": isinstance(backend, ScriptedBackend),
        },
    )
