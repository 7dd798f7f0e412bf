"""In-memory relational databases: schema types, CSV/JSON I/O and validation.

A database on disk is one JSON manifest plus one CSV file per table. Cell
values are kept as strings; ``None`` is the in-memory NULL cell.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from .errors import IoError, ManifestParseError, SchemaViolation, UnknownColumn

DTYPES = ("text", "integer", "real")
DEFAULT_NULL_TOKEN = "__NULL__"

Cell = Optional[str]
Row = tuple  # tuple[Cell, ...]


@dataclass(frozen=True)
class ColumnDef:
    name: str
    dtype: str = "text"
    nullable: bool = True


@dataclass(frozen=True)
class TableDef:
    name: str
    columns: tuple
    primary_key: Optional[str] = None

    @property
    def column_names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column_index(self, name: str) -> int:
        for i, col in enumerate(self.columns):
            if col.name == name:
                return i
        raise UnknownColumn(f"table {self.name!r} has no column {name!r}")


@dataclass(frozen=True)
class ForeignKey:
    from_table: str
    from_column: str
    to_table: str
    to_column: str


@dataclass(frozen=True)
class ColumnStats:
    min: Optional[float]
    max: Optional[float]
    distinct_count: int
    null_count: int


@dataclass(frozen=True)
class RelationalDatabase:
    name: str
    tables: tuple
    foreign_keys: tuple = ()
    rows: dict = field(default_factory=dict)  # table name -> tuple of Row

    def table(self, name: str) -> TableDef:
        for t in self.tables:
            if t.name == name:
                return t
        raise UnknownColumn(f"database {self.name!r} has no table {name!r}")

    def table_rows(self, name: str) -> tuple:
        self.table(name)
        return self.rows.get(name, ())

    @property
    def table_names(self) -> list[str]:
        return [t.name for t in self.tables]

    @property
    def n_rows(self) -> int:
        return sum(len(self.rows.get(t.name, ())) for t in self.tables)

    def validate(self) -> "RelationalDatabase":
        """Check every schema and data invariant, raising SchemaViolation."""
        validate_database(self)
        return self

    def fingerprint(self) -> str:
        """sha256 of the canonical serialization (manifest + CSV bytes)."""
        h = hashlib.sha256()
        manifest, csvs = _serialize(self, DEFAULT_NULL_TOKEN)
        h.update(manifest.encode())
        for fname in sorted(csvs):
            h.update(fname.encode())
            h.update(csvs[fname].encode())
        return h.hexdigest()


def make_database(name, tables, foreign_keys=(), rows=None) -> RelationalDatabase:
    """Build and validate a database from plain Python containers."""
    rows = rows or {}
    db = RelationalDatabase(
        name=name,
        tables=tuple(tables),
        foreign_keys=tuple(foreign_keys),
        rows={t.name: tuple(tuple(r) for r in rows.get(t.name, ())) for t in tables},
    )
    return db.validate()


def validate_database(db: RelationalDatabase) -> None:
    if not db.tables:
        raise SchemaViolation(f"database {db.name!r} has no tables")
    seen_tables = set()
    for t in db.tables:
        if not t.name:
            raise SchemaViolation("empty table name", table=t.name)
        if t.name in seen_tables:
            raise SchemaViolation(f"duplicate table {t.name!r}", table=t.name)
        seen_tables.add(t.name)
        if not t.columns:
            raise SchemaViolation(f"table {t.name!r} has no columns", table=t.name)
        names = set()
        for c in t.columns:
            if not c.name:
                raise SchemaViolation(f"empty column name in {t.name!r}", table=t.name)
            if c.name in names:
                raise SchemaViolation(f"duplicate column {c.name!r} in {t.name!r}", table=t.name)
            if c.dtype not in DTYPES:
                raise SchemaViolation(f"bad dtype {c.dtype!r} for {t.name}.{c.name}", table=t.name)
            names.add(c.name)
        if t.primary_key is not None and t.primary_key not in names:
            raise SchemaViolation(f"primary key {t.primary_key!r} not a column of {t.name!r}", table=t.name)

    by_name = {t.name: t for t in db.tables}
    for t in db.tables:
        for i, row in enumerate(db.rows.get(t.name, ())):
            if len(row) != len(t.columns):
                raise SchemaViolation(
                    f"{t.name} row {i}: arity {len(row)} != {len(t.columns)} columns", table=t.name, row=i
                )
            for cell, col in zip(row, t.columns):
                if cell is None and not col.nullable:
                    raise SchemaViolation(f"{t.name} row {i}: NULL in non-nullable {col.name!r}", table=t.name, row=i)
        if t.primary_key is not None:
            k = t.column_index(t.primary_key)
            seen = set()
            for i, row in enumerate(db.rows.get(t.name, ())):
                v = row[k]
                if v is None:
                    raise SchemaViolation(f"{t.name} row {i}: NULL primary key", table=t.name, row=i)
                if v in seen:
                    raise SchemaViolation(f"{t.name} row {i}: duplicate primary key {v!r}", table=t.name, row=i)
                seen.add(v)

    for fk in db.foreign_keys:
        if fk.from_table not in by_name or fk.to_table not in by_name:
            raise SchemaViolation(f"foreign key {fk} references unknown table")
        src, dst = by_name[fk.from_table], by_name[fk.to_table]
        if fk.from_column not in src.column_names or fk.to_column not in dst.column_names:
            raise SchemaViolation(f"foreign key {fk} references unknown column", table=fk.from_table)
        if dst.primary_key != fk.to_column:
            raise SchemaViolation(
                f"foreign key target {fk.to_table}.{fk.to_column} is not the primary key", table=fk.to_table
            )
        keys = {r[dst.column_index(fk.to_column)] for r in db.rows.get(dst.name, ())}
        j = src.column_index(fk.from_column)
        for i, row in enumerate(db.rows.get(src.name, ())):
            if row[j] is not None and row[j] not in keys:
                raise SchemaViolation(
                    f"{src.name} row {i}: {fk.from_column}={row[j]!r} has no match in {dst.name}.{fk.to_column}",
                    table=src.name,
                    row=i,
                )


# --------------------------------------------------------------------------- I/O


def _require(obj, key, where):
    if not isinstance(obj, dict) or key not in obj:
        raise ManifestParseError(f"{where}: missing field {key!r}")
    return obj[key]


def load_database(manifest_path, null_token: str = DEFAULT_NULL_TOKEN) -> RelationalDatabase:
    """Load a database from a JSON manifest and its per-table CSV files."""
    manifest_path = Path(manifest_path)
    try:
        text = manifest_path.read_text(encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot read manifest {manifest_path}: {exc}") from exc
    try:
        spec = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"{manifest_path}: invalid JSON ({exc})") from exc

    name = _require(spec, "name", "manifest")
    table_specs = _require(spec, "tables", "manifest")
    if not isinstance(table_specs, list) or not table_specs:
        raise ManifestParseError(f"{manifest_path}: 'tables' must be a non-empty list")

    tables, rows = [], {}
    for ts in table_specs:
        tname = _require(ts, "name", "table")
        cols = _require(ts, "columns", f"table {tname}")
        fname = _require(ts, "file", f"table {tname}")
        if not isinstance(cols, list) or not cols:
            raise ManifestParseError(f"table {tname}: 'columns' must be a non-empty list")
        columns = []
        for c in cols:
            columns.append(
                ColumnDef(
                    name=_require(c, "name", f"column of {tname}"),
                    dtype=c.get("dtype", "text"),
                    nullable=bool(c.get("nullable", True)),
                )
            )
        table = TableDef(tname, tuple(columns), ts.get("primary_key"))
        tables.append(table)
        rows[tname] = _read_csv(manifest_path.parent / fname, table, null_token)

    fks = []
    for f in spec.get("foreign_keys", []):
        fks.append(ForeignKey(*(_require(f, k, "foreign key") for k in ("from_table", "from_column", "to_table", "to_column"))))

    db = RelationalDatabase(name=name, tables=tuple(tables), foreign_keys=tuple(fks), rows=rows)
    return db.validate()


def _read_csv(path: Path, table: TableDef, null_token: str) -> tuple:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise SchemaViolation(f"{path}: missing header row", table=table.name) from None
            if header != table.column_names:
                raise SchemaViolation(
                    f"{path}: header {header} does not match manifest columns {table.column_names}", table=table.name
                )
            out = []
            for i, rec in enumerate(reader):
                if len(rec) != len(table.columns):
                    raise SchemaViolation(
                        f"{table.name} row {i}: arity {len(rec)} != {len(table.columns)} columns", table=table.name, row=i
                    )
                out.append(tuple(None if v == null_token else v for v in rec))
    except OSError as exc:
        raise IoError(f"cannot read {path}: {exc}") from exc
    return tuple(out)


def _serialize(db: RelationalDatabase, null_token: str):
    manifest = {
        "name": db.name,
        "tables": [
            {
                "name": t.name,
                "file": f"{t.name}.csv",
                "columns": [{"name": c.name, "dtype": c.dtype, "nullable": c.nullable} for c in t.columns],
                **({"primary_key": t.primary_key} if t.primary_key is not None else {}),
            }
            for t in db.tables
        ],
        "foreign_keys": [
            {"from_table": f.from_table, "from_column": f.from_column, "to_table": f.to_table, "to_column": f.to_column}
            for f in db.foreign_keys
        ],
    }
    csvs = {}
    for t in db.tables:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(t.column_names)
        for row in db.rows.get(t.name, ()):
            w.writerow([null_token if v is None else v for v in row])
        csvs[f"{t.name}.csv"] = buf.getvalue()
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n", csvs


def save_database(db: RelationalDatabase, directory, null_token: str = DEFAULT_NULL_TOKEN) -> Path:
    """Write ``manifest.json`` plus one CSV per table; returns the manifest path."""
    directory = Path(directory)
    manifest, csvs = _serialize(db, null_token)
    try:
        directory.mkdir(parents=True, exist_ok=True)
        for fname, content in csvs.items():
            with open(directory / fname, "w", newline="", encoding="utf-8") as fh:
                fh.write(content)
        path = directory / "manifest.json"
        path.write_text(manifest, encoding="utf-8")
    except OSError as exc:
        raise IoError(f"cannot write database to {directory}: {exc}") from exc
    return path


def load_corpus(directory, null_token: str = DEFAULT_NULL_TOKEN) -> list[RelationalDatabase]:
    """Load every ``*/manifest.json`` below ``directory`` in sorted order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise IoError(f"corpus directory {directory} does not exist")
    paths = sorted(directory.glob("*/manifest.json"))
    if directory.joinpath("manifest.json").exists():
        paths.insert(0, directory / "manifest.json")
    return [load_database(p, null_token) for p in paths]


def save_corpus(corpus: Sequence[RelationalDatabase], directory) -> list[Path]:
    directory = Path(directory)
    width = max(3, len(str(len(corpus))))
    return [save_database(db, directory / f"{i:0{width}d}_{db.name}") for i, db in enumerate(corpus)]


def corpus_fingerprint(corpus: Sequence[RelationalDatabase]) -> str:
    h = hashlib.sha256()
    for db in corpus:
        h.update(db.fingerprint().encode())
    return h.hexdigest()


# --------------------------------------------------------------------- statistics


def column_statistics(db: RelationalDatabase, table: str, column: str) -> ColumnStats:
    """min/max (numeric columns only), distinct and NULL counts of one column."""
    tdef = db.table(table)
    j = tdef.column_index(column)
    col = tdef.columns[j]
    values = [r[j] for r in db.rows.get(table, ())]
    present = [v for v in values if v is not None]
    lo = hi = None
    if col.dtype in ("integer", "real") and present:
        try:
            nums = [float(v) for v in present]
        except ValueError as exc:
            raise SchemaViolation(f"{table}.{column}: non-numeric value ({exc})", table=table) from exc
        lo, hi = min(nums), max(nums)
    return ColumnStats(min=lo, max=hi, distinct_count=len(set(present)), null_count=len(values) - len(present))


def ensure_dir_writable(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise IoError(f"{path} is not writable")
    return path
