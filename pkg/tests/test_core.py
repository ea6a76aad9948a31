from __future__ import annotations

import csv
import io
import random
import string

import pytest

from tabnotate.core import (
    DuplicateTerm,
    EmptyLabel,
    EmptyOntologyKind,
    MalformedIri,
    Ontology,
    OntologyFormat,
    OntologyTerm,
    SamplingMode,
    SamplingStrategy,
    Table,
    TermKind,
    detect_ontology_format,
    edit_distance,
    label_similarity,
    load_ontology,
    lookup,
    nearest_term,
    normalize_label,
    read_csv,
    sample_rows,
    to_csv,
    tokenize_label,
)

from reference import levenshtein_ref, nearest_label_ref, similarity_ref, tokenize_ref


def make_ontology(classes=(), properties=()):
    terms = [
        OntologyTerm.from_iri(f"https://dbpedia.org/ontology/{name}", TermKind.CLASS)
        for name in classes
    ]
    terms += [
        OntologyTerm.from_iri(f"https://dbpedia.org/ontology/{name}", TermKind.PROPERTY)
        for name in properties
    ]
    return Ontology.from_terms(terms)


# ---------------------------------------------------------------- ontology


def test_load_single_class_line():
    onto = load_ontology("https://dbpedia.org/ontology/Hospital\n")
    assert len(onto.classes) == 1
    assert len(onto.properties) == 0
    term = next(iter(onto.classes.values()))
    assert term.local_name == "Hospital"
    assert term.kind is TermKind.CLASS


def test_load_empty_text():
    onto = load_ontology("")
    assert len(onto.classes) == 0 and len(onto.properties) == 0


def test_load_case_insensitive_duplicate_rejected():
    text = "https://dbpedia.org/ontology/Airport\nhttps://dbpedia.org/ontology/airport\n"
    with pytest.raises(DuplicateTerm):
        load_ontology(text)


def test_load_skips_blanks_and_comments():
    text = "# vocabulary\n\nhttps://dbpedia.org/ontology/City\n   \n"
    onto = load_ontology(text)
    assert list(onto.classes) == ["city"]


def test_load_tab_separated_kinds():
    text = (
        "C\thttps://dbpedia.org/ontology/Animal\n"
        "P\thttps://dbpedia.org/ontology/binomial\n"
    )
    onto = load_ontology(text, OntologyFormat.TAB_SEPARATED_KIND_IRI)
    assert list(onto.classes) == ["animal"]
    assert list(onto.properties) == ["binomial"]


def test_load_reports_line_numbers():
    with pytest.raises(MalformedIri, match="line 2"):
        load_ontology("https://dbpedia.org/ontology/Ok\nnot-an-iri\n")
    with pytest.raises(MalformedIri, match="line 1"):
        load_ontology("https://dbpedia.org/ontology/\n")
    with pytest.raises(MalformedIri, match="line 1"):
        load_ontology(
            "X\thttps://dbpedia.org/ontology/Ok\n",
            OntologyFormat.TAB_SEPARATED_KIND_IRI,
        )


def test_detect_format():
    assert detect_ontology_format("https://x.org/A\n") is OntologyFormat.LINE_DELIMITED_IRI
    assert (
        detect_ontology_format("# c\nC\thttps://x.org/A\n")
        is OntologyFormat.TAB_SEPARATED_KIND_IRI
    )


def test_same_local_name_allowed_across_kinds():
    onto = make_ontology(classes=["Work"], properties=["work"])
    assert lookup(onto, TermKind.CLASS, "work").local_name == "Work"
    assert lookup(onto, TermKind.PROPERTY, "Work").local_name == "work"


# ------------------------------------------------------------- normalize


def test_normalize_backticked_iri():
    onto = make_ontology(classes=["Hospital"])
    assert normalize_label("`https://dbpedia.org/ontology/Hospital`", onto) == "Hospital"


def test_normalize_short_prefix():
    onto = make_ontology(properties=["author"])
    assert normalize_label("dbo:author", onto) == "author"


def test_normalize_whitespace_and_punctuation():
    onto = make_ontology()
    assert normalize_label("   Airport.  ", onto) == "Airport"
    assert normalize_label("'City',", onto) == "City"


def test_normalize_unregistered_iri_falls_back_to_tail():
    onto = Ontology.from_terms([], namespace_prefixes={})
    assert normalize_label("http://example.org/vocab/Thing", onto) == "Thing"


def test_normalize_repeated_prefix_reaches_fixpoint():
    onto = make_ontology()
    assert normalize_label("dbo:dbo:author", onto) == "author"


def test_normalize_empty_label():
    onto = make_ontology()
    with pytest.raises(EmptyLabel):
        normalize_label(" `` ", onto)


def test_normalize_idempotent_on_random_decorations(ontology):
    rng = random.Random(41)
    cores = ["Hospital", "iucnStatus", "VIN_prefix", "release Date", "x"]
    wrappers = ["`{}`", "'{}'", '"{}"', "  {}  ", "{}.", "{},", "dbo:{}",
                "https://dbpedia.org/ontology/{}"]
    for _ in range(300):
        text = rng.choice(cores)
        for _ in range(rng.randint(0, 3)):
            text = rng.choice(wrappers).format(text)
        once = normalize_label(text, ontology)
        assert normalize_label(once, ontology) == once


# ---------------------------------------------------------------- lookup


def test_lookup_case_insensitive():
    onto = make_ontology(classes=["Hospital"])
    assert lookup(onto, TermKind.CLASS, "hospital").local_name == "Hospital"


def test_lookup_absent_is_none():
    onto = make_ontology(classes=["Animal"])
    assert lookup(onto, TermKind.CLASS, "iucnStatus") is None


def test_lookup_empty_ontology():
    assert lookup(make_ontology(), TermKind.PROPERTY, "x") is None


# ---------------------------------------------------------- nearest term


def test_nearest_term_animal_name():
    onto = make_ontology(classes=["Animal", "Airport"])
    expected, _ = nearest_label_ref(["Animal", "Airport"], "animalName")
    term, score = nearest_term(onto, TermKind.CLASS, "animalName")
    assert term.local_name == expected == "Animal"
    assert 0.0 < score < 1.0


def test_nearest_term_exact_match_scores_one():
    onto = make_ontology(classes=["Hospital"])
    term, score = nearest_term(onto, TermKind.CLASS, "Hospital")
    assert term.local_name == "Hospital"
    assert score == 1.0


def test_nearest_term_iucn_status():
    onto = make_ontology(properties=["conservationStatus", "binomial"])
    expected, _ = nearest_label_ref(["conservationStatus", "binomial"], "iucnStatus")
    term, _ = nearest_term(onto, TermKind.PROPERTY, "iucnStatus")
    assert term.local_name == expected == "conservationStatus"


def test_nearest_term_matches_reference_on_random_labels(ontology):
    rng = random.Random(17)
    class_names = [t.local_name for t in ontology.terms(TermKind.CLASS)]
    for _ in range(100):
        label = "".join(
            rng.choice(string.ascii_letters + "_") for _ in range(rng.randint(1, 12))
        )
        expected, expected_score = nearest_label_ref(class_names, label)
        term, score = nearest_term(ontology, TermKind.CLASS, label)
        assert term.local_name == expected
        assert score == pytest.approx(expected_score, abs=1e-12)
        assert lookup(ontology, TermKind.CLASS, term.local_name) is term


def test_nearest_term_empty_kind():
    with pytest.raises(EmptyOntologyKind):
        nearest_term(make_ontology(classes=["A"]), TermKind.PROPERTY, "x")


def test_nearest_term_custom_similarity():
    onto = make_ontology(classes=["Alpha", "Beta"])
    term, score = nearest_term(
        onto, TermKind.CLASS, "x", similarity=lambda a, b: float(b == "Beta")
    )
    assert term.local_name == "Beta" and score == 1.0


def test_similarity_symmetric_and_exact_iff_token_equal():
    rng = random.Random(99)
    pool = ["iucnStatus", "IUCN_status", "conservation status", "VIN", "vin_prefix",
            "ZIP", "zip", "Model3", "releaseDate", "release_date"]
    for _ in range(200):
        a, b = rng.choice(pool), rng.choice(pool)
        s_ab, s_ba = label_similarity(a, b), label_similarity(b, a)
        assert s_ab == s_ba
        assert 0.0 <= s_ab <= 1.0
        assert (s_ab == 1.0) == (tokenize_label(a) == tokenize_label(b))
        assert s_ab == pytest.approx(similarity_ref(a, b), abs=1e-12)


def test_tokenizer_matches_reference():
    cases = ["iucnStatus", "IUCNStatus", "VIN_prefix", "release Date", "Model3",
             "ABCDef", "snake_case_name", "", "  spaced  out  "]
    for case in cases:
        assert tokenize_label(case) == tokenize_ref(case)


def test_edit_distance_against_full_matrix():
    rng = random.Random(3)
    for _ in range(200):
        a = "".join(rng.choice("abcdef ") for _ in range(rng.randint(0, 12)))
        b = "".join(rng.choice("abcdef ") for _ in range(rng.randint(0, 12)))
        assert edit_distance(a, b) == levenshtein_ref(a, b)


# -------------------------------------------------------------- sampling


def test_sample_head_prefix():
    table = Table("t", None, tuple((str(i),) for i in range(10)))
    sampled = sample_rows(table, 5)
    assert sampled.rows == tuple((str(i),) for i in range(5))
    assert sampled.name == "t" and sampled.headers is None


def test_sample_k_exceeds_size():
    table = Table("t", None, (("a",), ("b",), ("c",)))
    for mode in (SamplingStrategy(SamplingMode.HEAD), SamplingStrategy(SamplingMode.SEEDED_RANDOM, 1)):
        assert sample_rows(table, 5, mode).rows == table.rows


def test_sample_seeded_deterministic():
    table = Table("t", None, tuple((str(i),) for i in range(10)))
    strategy = SamplingStrategy(SamplingMode.SEEDED_RANDOM, 7)
    first = sample_rows(table, 5, strategy)
    second = sample_rows(table, 5, strategy)
    assert first.rows == second.rows
    assert len(first.rows) == 5
    indices = [int(r[0]) for r in first.rows]
    assert indices == sorted(indices)


def test_sample_head_idempotent():
    rng = random.Random(5)
    rows = tuple((str(rng.random()),) for _ in range(20))
    table = Table("t", None, rows)
    for k in (1, 3, 20, 50):
        once = sample_rows(table, k)
        assert sample_rows(once, k).rows == once.rows


def test_sampling_strategy_invariant():
    with pytest.raises(ValueError):
        SamplingStrategy(SamplingMode.SEEDED_RANDOM)
    with pytest.raises(ValueError):
        SamplingStrategy(SamplingMode.HEAD, seed=3)


# ------------------------------------------------------------------- csv


def test_to_csv_with_headers():
    table = Table("cars", ("Brand", "Model"), (("Nissan", "Leaf"),))
    assert to_csv(table) == "Brand,Model\nNissan,Leaf"


def test_to_csv_single_cell():
    assert to_csv(Table("t", None, (("a",),))) == "a"


def test_to_csv_quotes_commas():
    assert to_csv(Table("t", None, (("a,b",),))) == '"a,b"'


def test_csv_round_trip_on_nasty_cells():
    rng = random.Random(11)
    alphabet = string.ascii_letters + string.digits + ' ,"\n☃é'
    for _ in range(100):
        arity = rng.randint(1, 5)
        headers = (
            tuple("".join(rng.choice(alphabet) for _ in range(rng.randint(1, 6))) for _ in range(arity))
            if rng.random() < 0.7
            else None
        )
        rows = tuple(
            tuple("".join(rng.choice(alphabet) for _ in range(rng.randint(0, 8))) for _ in range(arity))
            for _ in range(rng.randint(0, 6))
        )
        if headers is None and not rows:
            continue
        table = Table("t", headers, rows)
        parsed = [tuple(r) for r in csv.reader(io.StringIO(to_csv(table)))]
        expected = ([headers] if headers else []) + list(rows)
        assert parsed == expected


def test_read_csv_headers_flag():
    text = "a,b\n1,2\n3,4"
    with_headers = read_csv(text, "t", headers=True)
    assert with_headers.headers == ("a", "b")
    assert with_headers.rows == (("1", "2"), ("3", "4"))
    without = read_csv(text, "t", headers=False)
    assert without.headers is None
    assert len(without.rows) == 3


def test_read_csv_ragged_rejected():
    with pytest.raises(ValueError):
        read_csv("a,b\n1\n", "t", headers=True)


def test_table_invariants():
    with pytest.raises(ValueError):
        Table("t", ("h",), (("a", "b"),))
    with pytest.raises(ValueError):
        Table("t", (), ())
    header_only = Table("t", ("h1", "h2"), ())
    assert header_only.arity == 2 and not header_only.is_empty
