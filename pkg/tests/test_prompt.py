from __future__ import annotations

from itertools import product

import pytest

from tabnotate.core import EmptyTable, Table
from tabnotate.prompt import (
    COLUMN_TYPE_DEMONSTRATION,
    JOIN_PREFIX,
    PromptComponents,
    PromptConfig,
    TABLE_CLASS_DEMONSTRATION,
    assemble,
    column_type_prompt,
    join_prompt,
    table_class_prompt,
)

from make_goldens import GOLDEN_DIR, golden_name

# ------------------------------------------------------------- assemble


def test_assemble_two_fields():
    assert assemble(PromptComponents(instruction="A", prefix="B")) == "A\n\nB"


def test_assemble_deterministic(ev_table, class_list):
    components = table_class_prompt(ev_table, class_list)
    assert assemble(components) == assemble(components)


def test_assemble_fenced_block_layout(ev_table, class_list):
    text = assemble(table_class_prompt(ev_table, class_list))
    fence_start = text.index("```")
    assert text[fence_start:].startswith("```\nBrand,")
    assert text.count("```") == 2


def test_assemble_metadata_only_block():
    text = assemble(PromptComponents(instruction="I", metadata="a,b"))
    assert text == "I\n\n```\na,b\n```"


def test_components_require_one_field():
    with pytest.raises(ValueError):
        PromptComponents()


def test_components_reject_blank_line_edges():
    with pytest.raises(ValueError):
        PromptComponents(instruction="\nA")
    with pytest.raises(ValueError):
        PromptComponents(instruction="A\n")


def test_assemble_distinguishes_component_contents():
    base = PromptComponents(
        instruction="inst",
        task_knowledge="know",
        demonstration="demo",
        metadata="h1,h2",
        data_sample="v1,v2",
        prefix="pre",
    )
    prompts = {assemble(base)}
    for field in ("instruction", "task_knowledge", "demonstration", "metadata",
                  "data_sample", "prefix"):
        changed = PromptComponents(**{**base.__dict__, field: "other"})
        prompts.add(assemble(changed))
        dropped = PromptComponents(**{**base.__dict__, field: None})
        prompts.add(assemble(dropped))
    assert len(prompts) == 13


# ---------------------------------------------------------------- golden


@pytest.mark.parametrize(
    "demonstration,metadata,prefix,knowledge", list(product((False, True), repeat=4))
)
def test_golden_table_class_prompts(
    ev_table, class_list, demonstration, metadata, prefix, knowledge
):
    config = PromptConfig(
        include_demonstration=demonstration,
        include_metadata=metadata,
        include_prefix=prefix,
    )
    components = table_class_prompt(
        ev_table, class_list if knowledge else None, config
    )
    golden = (GOLDEN_DIR / golden_name(demonstration, metadata, prefix, knowledge)).read_text(
        encoding="utf-8"
    )
    assert assemble(components) == golden


def test_golden_column_type_prompt(ev_table):
    golden = (GOLDEN_DIR / "column_type_default.txt").read_text(encoding="utf-8")
    assert assemble(column_type_prompt(ev_table)) == golden


def test_golden_join_prompt(ev_table, registration_table):
    golden = (GOLDEN_DIR / "join_default.txt").read_text(encoding="utf-8")
    assert assemble(join_prompt(ev_table, registration_table)) == golden


# ------------------------------------------------------------ table class


def test_table_class_includes_class_list(ev_table, class_list):
    text = assemble(table_class_prompt(ev_table, class_list))
    assert "AcademicJournal, AdministrativeRegion" in text
    assert "from the following list:" in text


def test_table_class_without_list(ev_table):
    text = assemble(table_class_prompt(ev_table, None))
    assert "from the following list" not in text
    assert "AcademicJournal" not in text


def test_table_class_prefix_ablation(ev_table, class_list):
    config = PromptConfig(include_prefix=False)
    text = assemble(table_class_prompt(ev_table, class_list, config))
    assert "Begin your answer with" not in text


def test_table_class_demonstration_ablation(ev_table):
    config = PromptConfig(include_demonstration=False)
    text = assemble(table_class_prompt(ev_table, None, config))
    assert TABLE_CLASS_DEMONSTRATION not in text


def test_all_flags_off_leaves_instruction_and_sample(ev_table):
    config = PromptConfig(
        include_demonstration=False, include_metadata=False, include_prefix=False
    )
    components = table_class_prompt(ev_table, None, config)
    assert components.instruction is not None
    assert components.data_sample is not None
    for name in ("task_knowledge", "demonstration", "metadata", "prefix"):
        assert getattr(components, name) is None


def test_table_class_empty_table_rejected():
    with pytest.raises(EmptyTable):
        table_class_prompt(Table("empty", None, ()), None)


# ------------------------------------------------------------ column type


def test_column_type_demonstration_rows(ev_table):
    text = assemble(column_type_prompt(ev_table))
    assert "Fyodor Dostoevsky, Crime and Punishment" in text
    assert "Output: `dbo:author, dbo:title, Unknown, dbo:releaseDate`." in text


def test_column_type_demonstration_ablation(ev_table):
    config = PromptConfig(include_demonstration=False)
    text = assemble(column_type_prompt(ev_table, config))
    assert "Fyodor Dostoevsky" not in text
    assert COLUMN_TYPE_DEMONSTRATION not in text


def test_column_type_sample_line_count():
    table = Table(
        "pairs",
        ("x", "y"),
        tuple((str(i), str(i * i)) for i in range(8)),
    )
    config = PromptConfig(include_demonstration=False)
    text = assemble(column_type_prompt(table, config))
    fence_inner = text.split("```")[1]
    lines = [ln for ln in fence_inner.splitlines() if ln]
    assert len(lines) == min(5, 8) + 1  # header + sampled rows


# ------------------------------------------------------------------ join


def test_join_prompt_ends_with_prefix(ev_table, registration_table):
    text = assemble(join_prompt(ev_table, registration_table))
    assert text.endswith("left_on=")
    assert JOIN_PREFIX in text


def test_join_prompt_prefix_ablation(ev_table, registration_table):
    config = PromptConfig(include_prefix=False)
    text = assemble(join_prompt(ev_table, registration_table, config))
    assert text.endswith("```")
    assert "pd.merge" not in text.split("suggest what", 1)[1].split(".", 1)[0]


def test_join_prompt_swap_swaps_frames(ev_table, registration_table):
    forward = assemble(join_prompt(ev_table, registration_table))
    backward = assemble(join_prompt(registration_table, ev_table))
    f_df1 = forward.split("df1 =")[1].split("df2 =")[0]
    b_df2 = backward.split("df2 =")[1]
    assert f_df1.strip().strip("`").strip() in b_df2
    assert forward != backward
    assert forward.split("df1 =")[0] == backward.split("df1 =")[0]


def test_join_prompt_context_notes(ev_table, registration_table):
    text = assemble(
        join_prompt(ev_table, registration_table, context_notes="df1 is an ElectricVehicle table.")
    )
    notes_index = text.index("df1 is an ElectricVehicle table.")
    assert notes_index < text.index("df1 =")


def test_join_prompt_needs_rows(ev_table):
    with pytest.raises(EmptyTable):
        join_prompt(ev_table, Table("empty", None, ()))


# ---------------------------------------------------------------- budget


def test_long_cells_truncated_with_marker():
    table = Table("wide", ("col",), (("x" * 1000,),))
    text = assemble(column_type_prompt(table, PromptConfig(include_demonstration=False)))
    assert "x" * 256 not in text
    assert "…" in text


def test_prompt_budget_holds_for_wide_tables(class_list):
    config = PromptConfig()
    for arity in (1, 40, 120):
        table = Table(
            "wide",
            tuple(f"column_{i}" for i in range(arity)),
            tuple(
                tuple(f"value-{r}-{c}" + "x" * 250 for c in range(arity))
                for r in range(6)
            ),
        )
        for builder in (
            lambda t: table_class_prompt(t, class_list, config),
            lambda t: column_type_prompt(t, config),
            lambda t: join_prompt(t, t, config),
        ):
            assert len(assemble(builder(table))) <= config.char_budget
