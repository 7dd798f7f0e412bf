import json

import pytest
from hypothesis import given

from relgraph.errors import IoError, ManifestParseError, SchemaViolation
from relgraph.store import (
    ColumnDef,
    TableDef,
    column_statistics,
    load_corpus,
    load_database,
    make_database,
    save_corpus,
    save_database,
)
from relgraph.synthetic import SynthSpec, generate_synthetic_corpus

from .conftest import small_databases


def _write_manifest(tmp_path, moons_rows):
    (tmp_path / "planets.csv").write_text("id,name\np1,Jupiter\np2,Saturn\n")
    (tmp_path / "moons.csv").write_text("name,planet\n" + "".join(f"{a},{b}\n" for a, b in moons_rows))
    manifest = {
        "name": "solar",
        "tables": [
            {"name": "planets", "file": "planets.csv", "primary_key": "id",
             "columns": [{"name": "id", "nullable": False}, {"name": "name"}]},
            {"name": "moons", "file": "moons.csv", "columns": [{"name": "name"}, {"name": "planet"}]},
        ],
        "foreign_keys": [{"from_table": "moons", "from_column": "planet", "to_table": "planets", "to_column": "id"}],
    }
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    return path


def test_load_counts(tmp_path):
    db = load_database(_write_manifest(tmp_path, [("Io", "p1"), ("Europa", "p1"), ("Titan", "p2")]))
    assert len(db.tables) == 2
    assert db.n_rows == 5
    assert len(db.foreign_keys) == 1


def test_dangling_reference_names_row(tmp_path):
    path = _write_manifest(tmp_path, [("Io", "p1"), ("Ghost", "p9")])
    with pytest.raises(SchemaViolation) as exc:
        load_database(path)
    assert exc.value.table == "moons"
    assert exc.value.row == 1


def test_empty_tables_list(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps({"name": "x", "tables": []}))
    with pytest.raises(ManifestParseError):
        load_database(path)


def test_missing_manifest(tmp_path):
    with pytest.raises(IoError):
        load_database(tmp_path / "nope.json")


def test_synthetic_deterministic():
    a = generate_synthetic_corpus(SynthSpec(n_databases=5, seed=7))
    b = generate_synthetic_corpus(SynthSpec(n_databases=5, seed=7))
    assert [d.fingerprint() for d in a] == [d.fingerprint() for d in b]


def test_synthetic_corpus_loads(tmp_path):
    corpus = generate_synthetic_corpus(SynthSpec(n_databases=50, tables_per_db=(2, 4), rows=(5, 20), seed=3))
    assert len(corpus) == 50
    save_corpus(corpus, tmp_path)
    loaded = load_corpus(tmp_path)
    assert [d.fingerprint() for d in loaded] == [d.fingerprint() for d in corpus]
    for db in corpus:
        assert 2 <= len(db.tables) <= 4
        assert all(5 <= len(db.rows[t.name]) <= 20 for t in db.tables)


def test_synthetic_without_foreign_keys():
    corpus = generate_synthetic_corpus(SynthSpec(n_databases=8, fk_density=0.0, seed=1))
    assert all(not db.foreign_keys for db in corpus)


def test_synthetic_referential_integrity_by_scan():
    for db in generate_synthetic_corpus(SynthSpec(n_databases=20, seed=11)):
        for fk in db.foreign_keys:
            j = db.table(fk.from_table).column_index(fk.from_column)
            k = db.table(fk.to_table).column_index(fk.to_column)
            keys = [r[k] for r in db.rows[fk.to_table]]
            assert all(r[j] in keys for r in db.rows[fk.from_table] if r[j] is not None)


def _stats_db(values, dtype):
    t = TableDef("t", (ColumnDef("v", dtype),))
    return make_database("s", [t], rows={"t": [(v,) for v in values]})


def test_column_statistics_numeric():
    s = column_statistics(_stats_db(["3", "1", "4", "1"], "integer"), "t", "v")
    assert (s.min, s.max, s.distinct_count, s.null_count) == (1, 4, 3, 0)


def test_column_statistics_all_null():
    s = column_statistics(_stats_db([None, None], "integer"), "t", "v")
    assert (s.min, s.max, s.distinct_count, s.null_count) == (None, None, 0, 2)


def test_column_statistics_text():
    s = column_statistics(_stats_db(["a", "b", "a"], "text"), "t", "v")
    assert (s.min, s.max, s.distinct_count) == (None, None, 2)


@given(small_databases())
def test_save_load_round_trip(tmp_path_factory, db):
    d = tmp_path_factory.mktemp("rt")
    again = load_database(save_database(db, d))
    assert again == db
    assert load_database(save_database(again, d)).fingerprint() == db.fingerprint()


@given(small_databases())
def test_column_statistics_matches_scan(db):
    for t in db.tables:
        for j, c in enumerate(t.columns):
            col = [r[j] for r in db.rows[t.name]]
            s = column_statistics(db, t.name, c.name)
            assert s.null_count == sum(v is None for v in col)
            assert s.distinct_count == len({v for v in col if v is not None})
