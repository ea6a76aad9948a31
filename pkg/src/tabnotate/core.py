"""Tabular data model, ontology vocabulary, row sampling, and label matching.

Everything in this module is immutable after construction and side-effect
free, so values can be shared freely across worker threads.
"""

from __future__ import annotations

import csv
import io
import random
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Iterable, Mapping

DBPEDIA_ONTOLOGY_IRI = "https://dbpedia.org/ontology/"
DEFAULT_NAMESPACE_PREFIXES: Mapping[str, str] = {"dbo:": DBPEDIA_ONTOLOGY_IRI}


class MalformedIri(ValueError):
    """An ontology line does not contain a usable IRI."""


class DuplicateTerm(ValueError):
    """Two terms of the same kind collide on case-insensitive local name."""


class EmptyLabel(ValueError):
    """Nothing remains of a label after stripping decoration."""


class EmptyOntologyKind(ValueError):
    """The requested term kind has no entries to match against."""


class EmptyTable(ValueError):
    """The table has neither rows nor headers to work with."""


class MissingHeaders(ValueError):
    """The operation needs named columns but the table has no header row."""


class TermKind(Enum):
    CLASS = "class"
    PROPERTY = "property"


@dataclass(frozen=True)
class OntologyTerm:
    """One vocabulary entry: a table class or a column property.

    ``local_name`` is always the IRI segment after the last ``/``.
    """

    iri: str
    local_name: str
    kind: TermKind

    def __post_init__(self) -> None:
        if not self.iri.startswith(("http://", "https://")):
            raise MalformedIri(f"IRI lacks an http(s) scheme: {self.iri!r}")
        expected = self.iri.rsplit("/", 1)[-1]
        if not expected:
            raise MalformedIri(f"IRI has an empty local name: {self.iri!r}")
        if self.local_name != expected:
            raise MalformedIri(
                f"local name {self.local_name!r} does not match IRI {self.iri!r}"
            )

    @classmethod
    def from_iri(cls, iri: str, kind: TermKind) -> OntologyTerm:
        return cls(iri=iri, local_name=iri.rsplit("/", 1)[-1], kind=kind)


@dataclass(frozen=True)
class Ontology:
    """Reference vocabulary of table classes and column properties.

    ``classes`` and ``properties`` map case-folded local names to terms;
    collisions within a kind are rejected at construction.
    """

    classes: Mapping[str, OntologyTerm] = field(default_factory=dict)
    properties: Mapping[str, OntologyTerm] = field(default_factory=dict)
    namespace_prefixes: Mapping[str, str] = field(
        default_factory=lambda: dict(DEFAULT_NAMESPACE_PREFIXES)
    )

    def __post_init__(self) -> None:
        for key, term in self.classes.items():
            if term.kind is not TermKind.CLASS or key != term.local_name.lower():
                raise ValueError(f"misfiled class entry: {key!r} -> {term}")
        for key, term in self.properties.items():
            if term.kind is not TermKind.PROPERTY or key != term.local_name.lower():
                raise ValueError(f"misfiled property entry: {key!r} -> {term}")

    @classmethod
    def from_terms(
        cls,
        terms: Iterable[OntologyTerm],
        namespace_prefixes: Mapping[str, str] | None = None,
    ) -> Ontology:
        classes: dict[str, OntologyTerm] = {}
        properties: dict[str, OntologyTerm] = {}
        for term in terms:
            bucket = classes if term.kind is TermKind.CLASS else properties
            key = term.local_name.lower()
            if key in bucket:
                raise DuplicateTerm(
                    f"duplicate {term.kind.value} local name (case-insensitive): "
                    f"{term.local_name!r}"
                )
            bucket[key] = term
        prefixes = dict(
            DEFAULT_NAMESPACE_PREFIXES if namespace_prefixes is None else namespace_prefixes
        )
        return cls(classes=classes, properties=properties, namespace_prefixes=prefixes)

    def terms(self, kind: TermKind) -> tuple[OntologyTerm, ...]:
        bucket = self.classes if kind is TermKind.CLASS else self.properties
        return tuple(bucket.values())


class OntologyFormat(Enum):
    LINE_DELIMITED_IRI = "line-delimited-iri"
    TAB_SEPARATED_KIND_IRI = "tab-separated-kind-iri"


_KIND_TAGS = {"C": TermKind.CLASS, "P": TermKind.PROPERTY}


def detect_ontology_format(source: str) -> OntologyFormat:
    """Tab-separated when any content line carries a kind tag, else plain."""
    for raw_line in source.splitlines():
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if "\t" in line:
            return OntologyFormat.TAB_SEPARATED_KIND_IRI
    return OntologyFormat.LINE_DELIMITED_IRI


def load_ontology(
    source: str,
    format: OntologyFormat = OntologyFormat.LINE_DELIMITED_IRI,
    namespace_prefixes: Mapping[str, str] | None = None,
) -> Ontology:
    """Parse newline-delimited ontology text into an :class:`Ontology`.

    Blank lines and ``#`` comments are skipped.  In the line-delimited
    format every line is a class IRI; the tab-separated format prefixes
    each IRI with ``C\\t`` or ``P\\t`` to pick the term kind.
    """
    terms: list[OntologyTerm] = []
    for lineno, raw_line in enumerate(source.splitlines(), start=1):
        line = raw_line.strip()
        if not line or line.startswith("#"):
            continue
        if format is OntologyFormat.TAB_SEPARATED_KIND_IRI:
            tag, _, rest = line.partition("\t")
            kind = _KIND_TAGS.get(tag.strip())
            if kind is None or not rest.strip():
                raise MalformedIri(
                    f"line {lineno}: expected 'C<TAB>iri' or 'P<TAB>iri', got {raw_line!r}"
                )
            iri = rest.strip()
        else:
            kind = TermKind.CLASS
            iri = line
        try:
            terms.append(OntologyTerm.from_iri(iri, kind))
        except MalformedIri as exc:
            raise MalformedIri(f"line {lineno}: {exc}") from None
    try:
        return Ontology.from_terms(terms, namespace_prefixes)
    except DuplicateTerm as exc:
        raise DuplicateTerm(str(exc)) from None


_WRAPPER_CHARS = "`'\""
_TRAILING_PUNCT = ".,"


def _strip_decoration(text: str) -> str:
    previous = None
    while text != previous:
        previous = text
        text = text.strip().strip(_WRAPPER_CHARS).strip()
        while text and text[-1] in _TRAILING_PUNCT:
            text = text[:-1].rstrip()
    return text


def normalize_label(raw: str, ontology: Ontology) -> str:
    """Reduce a model-emitted fragment to a bare ontology label.

    Strips surrounding whitespace, quotes, backticks, and trailing
    punctuation, then removes any registered namespace prefix (short form
    like ``dbo:`` or the full IRI stem).  Raises :class:`EmptyLabel` when
    nothing survives.
    """
    text = raw
    previous = None
    while text != previous:
        previous = text
        text = _strip_decoration(text)
        lowered = text.lower()
        for short, iri_prefix in ontology.namespace_prefixes.items():
            if lowered.startswith(short.lower()):
                text = text[len(short):]
                break
            if lowered.startswith(iri_prefix.lower()):
                text = text[len(iri_prefix):]
                break
        else:
            if lowered.startswith(("http://", "https://")) and "/" in text:
                text = text.rsplit("/", 1)[-1]
    if not text:
        raise EmptyLabel(f"nothing left after normalizing {raw!r}")
    return text


def lookup(ontology: Ontology, kind: TermKind, canonical: str) -> OntologyTerm | None:
    """Case-insensitive exact match on local name; absence is ``None``."""
    bucket = ontology.classes if kind is TermKind.CLASS else ontology.properties
    return bucket.get(canonical.lower())


_CAMEL_RE = re.compile(r"[A-Z]+(?=[A-Z][a-z0-9])|[A-Z]?[a-z0-9]+|[A-Z]+")


def tokenize_label(label: str) -> str:
    """Lowercased, space-joined form of a label split on case and underscores."""
    parts: list[str] = []
    for chunk in re.split(r"[\s_]+", label):
        parts.extend(_CAMEL_RE.findall(chunk))
    return " ".join(part.lower() for part in parts)


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit-cost insert, delete, and substitute."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            cost = 0 if ca == cb else 1
            current.append(
                min(previous[j] + 1, current[j - 1] + 1, previous[j - 1] + cost)
            )
        previous = current
    return previous[-1]


def label_similarity(a: str, b: str) -> float:
    """Default label similarity in [0, 1]: 1 - normalized edit distance.

    Labels are compared in their tokenized forms, so ``iucnStatus`` and
    ``IUCN_status`` are treated as equal.
    """
    ta, tb = tokenize_label(a), tokenize_label(b)
    if ta == tb:
        return 1.0
    denom = max(len(ta), len(tb))
    if denom == 0:
        return 1.0
    return 1.0 - edit_distance(ta, tb) / denom


SimilarityFn = Callable[[str, str], float]


def nearest_term(
    ontology: Ontology,
    kind: TermKind,
    canonical: str,
    similarity: SimilarityFn | None = None,
) -> tuple[OntologyTerm, float]:
    """Best-scoring term of the requested kind under the similarity metric.

    Ties break toward the lexicographically smallest local name.  The
    metric defaults to :func:`label_similarity`; pass ``similarity`` to
    substitute an embedding-backed scorer.
    """
    candidates = ontology.terms(kind)
    if not candidates:
        raise EmptyOntologyKind(f"ontology has no {kind.value} terms")
    score = similarity or label_similarity
    best: OntologyTerm | None = None
    best_score = -1.0
    for term in sorted(candidates, key=lambda t: t.local_name):
        s = score(canonical, term.local_name)
        if s > best_score:
            best, best_score = term, s
    assert best is not None
    return best, best_score


@dataclass(frozen=True)
class Table:
    """A named relation of text cells with an optional header row.

    All rows share one arity; when headers are present they share it too.
    A table may be header-only (no rows).
    """

    name: str
    headers: tuple[str, ...] | None
    rows: tuple[tuple[str, ...], ...]

    def __post_init__(self) -> None:
        if self.headers is not None:
            object.__setattr__(self, "headers", tuple(self.headers))
        object.__setattr__(self, "rows", tuple(tuple(row) for row in self.rows))
        arity = len(self.headers) if self.headers is not None else None
        if arity == 0:
            raise ValueError("header row must have at least one column")
        for i, row in enumerate(self.rows):
            if arity is None:
                arity = len(row)
                if arity == 0:
                    raise ValueError("rows must have at least one cell")
            if len(row) != arity:
                raise ValueError(
                    f"row {i} has {len(row)} cells, expected {arity}"
                )

    @property
    def arity(self) -> int:
        if self.headers is not None:
            return len(self.headers)
        return len(self.rows[0]) if self.rows else 0

    @property
    def is_empty(self) -> bool:
        return self.headers is None and not self.rows


class SamplingMode(Enum):
    HEAD = "head"
    SEEDED_RANDOM = "seeded-random"


@dataclass(frozen=True)
class SamplingStrategy:
    """How to pick rows for serialization: a prefix or a seeded draw."""

    mode: SamplingMode = SamplingMode.HEAD
    seed: int | None = None

    def __post_init__(self) -> None:
        if (self.mode is SamplingMode.SEEDED_RANDOM) != (self.seed is not None):
            raise ValueError("seed is required exactly when mode is seeded-random")


HEAD_SAMPLING = SamplingStrategy(SamplingMode.HEAD)


def sample_rows(table: Table, k: int, strategy: SamplingStrategy = HEAD_SAMPLING) -> Table:
    """Table with the same name/headers and min(k, len(rows)) rows.

    Head sampling takes the leading rows; seeded-random sampling draws
    distinct indices with a dedicated generator and keeps original order,
    so equal seeds give equal samples.
    """
    if k < 1:
        raise ValueError("sample size must be >= 1")
    if strategy.mode is SamplingMode.HEAD or len(table.rows) <= k:
        picked = table.rows[:k]
    else:
        rng = random.Random(strategy.seed)
        indices = sorted(rng.sample(range(len(table.rows)), k))
        picked = tuple(table.rows[i] for i in indices)
    return Table(name=table.name, headers=table.headers, rows=picked)


def to_csv(table: Table) -> str:
    """RFC 4180 serialization: header line first, no trailing newline."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if table.headers is not None:
        writer.writerow(table.headers)
    for row in table.rows:
        writer.writerow(row)
    text = buf.getvalue()
    return text[:-1] if text.endswith("\n") else text


def read_csv(text: str, name: str, headers: bool) -> Table:
    """Parse RFC 4180 text into a :class:`Table`.

    When ``headers`` is true the first record becomes the header row.
    Ragged records are rejected by the Table invariants.
    """
    records = [tuple(row) for row in csv.reader(io.StringIO(text))]
    if headers:
        if not records:
            raise ValueError(f"{name}: expected a header row, got empty input")
        return Table(name=name, headers=records[0], rows=tuple(records[1:]))
    return Table(name=name, headers=None, rows=tuple(records))
