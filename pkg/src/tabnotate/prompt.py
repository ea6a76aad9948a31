"""Prompt assembly for the three annotation tasks.

Each task prompt is built from up to six parts: instruction, task
knowledge, demonstration, metadata, data sample, and a completion prefix.
Templates are fixed; only the data sample and metadata vary per input.
The golden files under the test fixtures pin the exact rendering.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .core import (
    EmptyTable,
    HEAD_SAMPLING,
    SamplingStrategy,
    Table,
    sample_rows,
    to_csv,
)

TABLE_CLASS_INSTRUCTION_WITH_LIST = (
    "For the following CSV sample, select one DBpedia.org ontology that "
    "represents the dataset from the following list:"
)
TABLE_CLASS_INSTRUCTION = (
    "For the following CSV sample, select one DBpedia.org ontology that "
    "represents the dataset."
)
TABLE_CLASS_DEMONSTRATION = (
    "For example, for a dataset about hospitals, return "
    "`https://dbpedia.org/ontology/Hospital`."
)
TABLE_CLASS_PREFIX = "Begin your answer with 'https://dbpedia.org/ontology'"

COLUMN_TYPE_INSTRUCTION = (
    "For the following CSV sample, suggest a DBPedia.org Property for each "
    "column from the `dbo:` namespace."
)
COLUMN_TYPE_DEMONSTRATION = (
    "Consider this example. Input:\n"
    "\n"
    "```\n"
    "Name, Famous Book, Rk, Year\n"
    "Fyodor Dostoevsky, Crime and Punishment, 22.5, 1866\n"
    "Mark Twain, Adventures of Huckleberry Finn, 53, 1884\n"
    "Albert Camus, The Stranger, -23, 1942\n"
    "```\n"
    "\n"
    "Output: `dbo:author, dbo:title, Unknown, dbo:releaseDate`."
)

JOIN_INSTRUCTION = (
    "Given two Pandas Dataframes, suggest what `pd.merge` parameters to use "
    "to join the dataframes."
)
JOIN_PREFIX = (
    "Complete the correct Pandas merge command. `pd.merge(df1, df2, left_on="
)

TRUNCATION_MARKER = "…"

_FIELD_ORDER = (
    "instruction",
    "task_knowledge",
    "demonstration",
    "metadata",
    "data_sample",
    "prefix",
)


@dataclass(frozen=True)
class PromptComponents:
    """The six optional prompt parts; at least one must be present."""

    instruction: str | None = None
    demonstration: str | None = None
    data_sample: str | None = None
    metadata: str | None = None
    task_knowledge: str | None = None
    prefix: str | None = None

    def __post_init__(self) -> None:
        present = [name for name in _FIELD_ORDER if getattr(self, name) is not None]
        if not present:
            raise ValueError("at least one prompt component must be present")
        for name in present:
            text = getattr(self, name)
            if not text or text != text.strip("\n"):
                raise ValueError(
                    f"component {name} must be nonempty with no leading or "
                    f"trailing blank lines"
                )


@dataclass(frozen=True)
class PromptConfig:
    """Sampling and ablation switches shared by all prompt builders."""

    sample_k: int = 5
    include_demonstration: bool = True
    include_metadata: bool = True
    include_prefix: bool = True
    strategy: SamplingStrategy = HEAD_SAMPLING
    max_cell_chars: int = 256
    char_budget: int = 16384

    def __post_init__(self) -> None:
        if self.sample_k < 1:
            raise ValueError("sample_k must be >= 1")


DEFAULT_PROMPT_CONFIG = PromptConfig()


def _contains_fence(text: str) -> bool:
    return any(line.startswith("```") for line in text.splitlines())


def assemble(components: PromptComponents) -> str:
    """Concatenate the present parts into the final prompt text.

    Order is fixed: instruction, task knowledge, demonstration, the fenced
    metadata+sample block, prefix, separated by single blank lines.  The
    data sample is wrapped in a triple-backtick fence with the metadata
    header line directly above the data rows; samples that already carry
    fences (the two-frame join layout) are emitted as-is with metadata as
    a plain paragraph above them.  Output is byte-deterministic.
    """
    parts: list[str] = []
    for name in ("instruction", "task_knowledge", "demonstration"):
        value = getattr(components, name)
        if value is not None:
            parts.append(value)
    metadata, data_sample = components.metadata, components.data_sample
    if data_sample is not None:
        if _contains_fence(data_sample):
            if metadata is not None:
                parts.append(metadata)
            parts.append(data_sample)
        else:
            inner = data_sample if metadata is None else f"{metadata}\n{data_sample}"
            parts.append(f"```\n{inner}\n```")
    elif metadata is not None:
        parts.append(f"```\n{metadata}\n```")
    if components.prefix is not None:
        parts.append(components.prefix)
    return "\n\n".join(parts)


def _truncate_cell(cell: str, limit: int) -> str:
    if len(cell) <= limit:
        return cell
    return cell[: limit - 1] + TRUNCATION_MARKER


def _truncated(table: Table, limit: int) -> Table:
    headers = (
        tuple(_truncate_cell(h, limit) for h in table.headers)
        if table.headers is not None
        else None
    )
    rows = tuple(tuple(_truncate_cell(c, limit) for c in row) for row in table.rows)
    return Table(name=table.name, headers=headers, rows=rows)


def _sample_parts(table: Table, config: PromptConfig) -> tuple[str | None, str]:
    """(metadata header line, row-only CSV) for the serialized sample."""
    sample = _truncated(sample_rows(table, config.sample_k, config.strategy), config.max_cell_chars)
    metadata = None
    if sample.headers is not None and config.include_metadata:
        metadata = to_csv(Table(name=sample.name, headers=sample.headers, rows=()))
    body = to_csv(Table(name=sample.name, headers=None, rows=sample.rows)) if sample.rows else ""
    return metadata, body


def _shrink_data_lines(components: PromptComponents, budget: int) -> PromptComponents:
    """Trim sample lines until the assembled prompt fits the budget.

    Rows are dropped from the end first; remaining lines are then capped,
    halving the cap until the prompt fits.  Fence lines and frame markers
    are never touched.  Best effort: a budget smaller than the fixed
    template parts cannot be honored.
    """
    if len(assemble(components)) <= budget or components.data_sample is None:
        return components

    def protected(line: str) -> bool:
        return line.startswith("```") or line in ("df1 =", "df2 =")

    lines = components.data_sample.splitlines()
    # Drop data lines from the end while more than one remains per frame.
    while len(assemble(components)) > budget:
        droppable = [i for i, line in enumerate(lines) if not protected(line)]
        if len(droppable) <= 1:
            break
        lines.pop(droppable[-1])
        components = replace(components, data_sample="\n".join(lines))

    cap = max(len(line) for line in lines) if lines else 0
    while len(assemble(components)) > budget and cap > 8:
        cap = max(8, cap // 2)
        trimmed = [
            line if protected(line) or len(line) <= cap else line[: cap - 1] + TRUNCATION_MARKER
            for line in lines
        ]
        components = replace(components, data_sample="\n".join(trimmed))
    return components


def table_class_prompt(
    table: Table,
    allowed_classes: list[str] | tuple[str, ...] | None = None,
    config: PromptConfig = DEFAULT_PROMPT_CONFIG,
) -> PromptComponents:
    """Prompt asking for the one ontology class that describes the table.

    Passing ``allowed_classes`` restricts the answer domain (the supervised
    variant); omitting it lets the model pick any class.
    """
    if table.is_empty:
        raise EmptyTable(f"table {table.name!r} has no rows and no headers")
    metadata, body = _sample_parts(table, config)
    components = PromptComponents(
        instruction=(
            TABLE_CLASS_INSTRUCTION_WITH_LIST if allowed_classes else TABLE_CLASS_INSTRUCTION
        ),
        task_knowledge=", ".join(allowed_classes) + "." if allowed_classes else None,
        demonstration=TABLE_CLASS_DEMONSTRATION if config.include_demonstration else None,
        metadata=metadata,
        data_sample=body or None,
        prefix=TABLE_CLASS_PREFIX if config.include_prefix else None,
    )
    return _shrink_data_lines(components, config.char_budget)


def column_type_prompt(
    table: Table,
    config: PromptConfig = DEFAULT_PROMPT_CONFIG,
) -> PromptComponents:
    """Prompt asking for one ontology property per column."""
    if table.is_empty:
        raise EmptyTable(f"table {table.name!r} has no rows and no headers")
    metadata, body = _sample_parts(table, config)
    components = PromptComponents(
        instruction=COLUMN_TYPE_INSTRUCTION,
        demonstration=COLUMN_TYPE_DEMONSTRATION if config.include_demonstration else None,
        metadata=metadata,
        data_sample=body or None,
    )
    return _shrink_data_lines(components, config.char_budget)


def _frame(marker: str, table: Table, config: PromptConfig) -> str:
    metadata, body = _sample_parts(table, config)
    inner = body if metadata is None else (f"{metadata}\n{body}" if body else metadata)
    return f"{marker} =\n```\n{inner}\n```"


def join_prompt(
    left: Table,
    right: Table,
    config: PromptConfig = DEFAULT_PROMPT_CONFIG,
    context_notes: str | None = None,
) -> PromptComponents:
    """Code-completion prompt for predicting merge key columns.

    Both samples are rendered as named dataframes; ``context_notes`` (for
    example classes detected earlier in the pipeline) become a paragraph
    above the frames.
    """
    for table in (left, right):
        if table.is_empty:
            raise EmptyTable(f"table {table.name!r} has no rows and no headers")
    components = PromptComponents(
        instruction=JOIN_INSTRUCTION,
        metadata=context_notes,
        data_sample=f"{_frame('df1', left, config)}\n\n{_frame('df2', right, config)}",
        prefix=JOIN_PREFIX if config.include_prefix else None,
    )
    return _shrink_data_lines(components, config.char_budget)
