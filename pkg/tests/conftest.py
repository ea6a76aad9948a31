from __future__ import annotations

import pytest

from tabnotate.core import Ontology, OntologyFormat, load_ontology

from fixture_data import (
    ANIMALS_TABLE,
    CAR_REGISTRATION_TABLE,
    EV_TABLE,
    ONTOLOGY_TEXT,
    TABLE_CLASS_LIST,
)


@pytest.fixture(scope="session")
def ontology() -> Ontology:
    return load_ontology(ONTOLOGY_TEXT, OntologyFormat.TAB_SEPARATED_KIND_IRI)


@pytest.fixture(scope="session")
def ev_table():
    return EV_TABLE


@pytest.fixture(scope="session")
def registration_table():
    return CAR_REGISTRATION_TABLE


@pytest.fixture(scope="session")
def animals_table():
    return ANIMALS_TABLE


@pytest.fixture(scope="session")
def class_list() -> tuple[str, ...]:
    return TABLE_CLASS_LIST


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion."""
    lines: list[str] = []
    for outcome in ("passed", "failed", "error"):
        for report in terminalreporter.stats.get(outcome, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance.py::test_criterion" in nodeid:
                name = nodeid.split("::", 1)[1]
                lines.append((name, outcome.upper()))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, outcome in sorted(lines):
            terminalreporter.write_line(f"{outcome:6s} {name}")
