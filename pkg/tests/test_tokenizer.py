import pytest
from hypothesis import given
from hypothesis import strategies as st

from relgraph.errors import MaskTargetNotInRow
from relgraph.store import ColumnDef, TableDef, make_database
from relgraph.tokenizer import (
    CELL,
    COL,
    COLUMN_NAME,
    MASK,
    RESERVED,
    TAB,
    TABLE_NAME,
    VAL,
    MaskSpec,
    build_vocabulary,
    detokenize,
    join_fragments,
    sample_mask_targets,
    serialize_row,
    target_tokens,
    vertical_split,
)

from .conftest import small_databases


@pytest.fixture
def moons_db():
    t = TableDef("Moons", (ColumnDef("name"), ColumnDef("planet")))
    return make_database("m", [t], rows={"Moons": [("Io", "Jupiter"), ("Titan", "Saturn"), ("Rhea", "Saturn")]})


def test_row_layout(moons_db):
    v = build_vocabulary([moons_db])
    seq = serialize_row(moons_db, "Moons", 0, v)
    assert seq.ids == (TAB, v.id("Moons"), COL, v.id("name"), VAL, v.id("Io"), COL, v.id("planet"), VAL, v.id("Jupiter"))
    assert not seq.mask_positions


def test_cell_mask_position(moons_db):
    v = build_vocabulary([moons_db])
    seq = serialize_row(moons_db, "Moons", 0, v, mask=MaskSpec(CELL, "Moons", 0, "planet"))
    assert seq.ids[-1] == MASK
    assert seq.mask_positions == frozenset({9})


def test_name_masks(moons_db):
    v = build_vocabulary([moons_db])
    seq = serialize_row(moons_db, "Moons", 1, v, mask=MaskSpec(COLUMN_NAME, "Moons", 1, "planet"))
    assert seq.ids[7] == MASK and seq.mask_positions == frozenset({7})
    seq = serialize_row(moons_db, "Moons", 1, v, mask=MaskSpec(TABLE_NAME, "Moons", 1))
    assert seq.ids[1] == MASK and seq.mask_positions == frozenset({1})


def test_cell_mask_wrong_row(moons_db):
    v = build_vocabulary([moons_db])
    with pytest.raises(MaskTargetNotInRow):
        serialize_row(moons_db, "Moons", 1, v, mask=MaskSpec(CELL, "Moons", 0, "planet"))


def test_multi_token_value_is_one_mask():
    t = TableDef("t", (ColumnDef("a"), ColumnDef("b")))
    db = make_database("d", [t], rows={"t": [("x", "new york city")]})
    v = build_vocabulary([db])
    seq = serialize_row(db, "t", 0, v, mask=MaskSpec(CELL, "t", 0, "b"))
    assert list(seq.ids).count(MASK) == 1
    assert target_tokens(db, MaskSpec(CELL, "t", 0, "b")) == ["new", "york", "city"]


def test_truncation_exact_length():
    cols = tuple(ColumnDef(f"c{i}") for i in range(40))
    db = make_database("w", [TableDef("t", cols)], rows={"t": [tuple(f"v{i}" for i in range(40))]})
    v = build_vocabulary([db])
    seq = serialize_row(db, "t", 0, v, 32)
    assert len(seq) == 32 and seq.origin.truncated
    # the masked target survives truncation even when it is the last column
    seq = serialize_row(db, "t", 0, v, 32, mask=MaskSpec(CELL, "t", 0, "c39"))
    assert len(seq) == 32 and MASK in seq.ids


def test_vocabulary_threshold():
    t = TableDef("t", (ColumnDef("p"),))
    db = make_database("d", [t], rows={"t": [("Jupiter",), ("Jupiter",), ("Jupiter",), ("Mars",)]})
    assert "Jupiter" in build_vocabulary([db], min_freq=2)
    assert "Mars" not in build_vocabulary([db], min_freq=2)
    assert build_vocabulary([db], min_freq=100).itos == list(RESERVED)


def test_vocabulary_depends_on_multiset_only():
    t = TableDef("t", (ColumnDef("p"),))
    a = make_database("a", [t], rows={"t": [("x",), ("y",), ("x",)]})
    b = make_database("b", [t], rows={"t": [("y",), ("x",), ("x",)]})
    assert build_vocabulary([a]) == build_vocabulary([b])


def test_vertical_split_counts():
    t = TableDef("w", tuple(ColumnDef(f"c{i}") for i in range(5)))
    rows = [tuple(f"{r}{i}" for i in range(5)) for r in "ab"]
    split = vertical_split(t, rows, 2)
    assert [len(f.columns) - 1 for f, _ in split.fragments] == [2, 2, 1]
    assert join_fragments(split) == rows


def test_vertical_split_narrow_identity():
    t = TableDef("n", (ColumnDef("a"), ColumnDef("b")))
    split = vertical_split(t, [("1", "2")], 2)
    assert split.fragments == [(t, [("1", "2")])]
    assert split.foreign_keys == []


def test_mask_sampling_boundaries(solar):
    assert sample_mask_targets(solar, {"cell_rate": 0, "col_rate": 0, "tab_rate": 0}, 0) == []


def test_mask_sampling_exhaustive():
    a = TableDef("a", (ColumnDef("x"), ColumnDef("y")))
    b = TableDef("b", (ColumnDef("u"), ColumnDef("w")))
    db = make_database("d", [a, b], rows={"a": [("1", "2"), ("3", None)], "b": [("4", "5")]})
    specs = sample_mask_targets(db, {"cell_rate": 1, "col_rate": 1, "tab_rate": 1}, 0)
    assert len(specs) == 5 + 4 + 2


def test_mask_sampling_binomial_band():
    cols = tuple(ColumnDef(f"c{i}") for i in range(10))
    db = make_database("d", [TableDef("t", cols)], rows={"t": [tuple("v" for _ in range(10))] * 100})
    n = sum(s.target == CELL for s in sample_mask_targets(db, {"cell_rate": 0.15, "col_rate": 0, "tab_rate": 0}, 5))
    # mean 150, sd = sqrt(1000 * 0.15 * 0.85) ~ 11.3
    assert 100 <= n <= 200


@given(small_databases())
def test_detokenize_round_trip(db):
    v = build_vocabulary([db])
    for t in db.tables:
        for i, row in enumerate(db.rows[t.name]):
            seq = serialize_row(db, t.name, i, v, 256)
            back = detokenize(seq, v)
            assert back["table"] == t.name
            assert back["columns"] == t.column_names
            assert back["values"] == list(row)
            assert serialize_row(db, t.name, i, v, 256) == seq


@given(small_databases(), st.integers(0, 2**16))
def test_one_mask_per_target(db, seed):
    v = build_vocabulary([db])
    for spec in sample_mask_targets(db, {"cell_rate": 0.5, "col_rate": 0.5, "tab_rate": 0.5}, seed):
        rows = db.rows[spec.table]
        if not rows:
            continue
        row = spec.row if spec.row is not None else 0
        seq = serialize_row(db, spec.table, row, v, 256, mask=spec)
        masked = [i for i, t in enumerate(seq.ids) if t == MASK]
        assert len(masked) == 1
        assert seq.mask_positions == frozenset(masked)


@given(st.integers(1, 8), st.integers(0, 6), st.integers(1, 5))
def test_vertical_split_join_identity(n_cols, n_rows, max_columns):
    t = TableDef("w", tuple(ColumnDef(f"c{i}") for i in range(n_cols)))
    rows = [tuple(f"r{r}c{i}" for i in range(n_cols)) for r in range(n_rows)]
    split = vertical_split(t, rows, max_columns)
    assert join_fragments(split) == rows
    assert len(split.fragments) == -(-n_cols // max_columns)
