"""Word-level vocabulary, row linearization, masking and wide-table splitting.

A row is linearized as ``[TAB] <table> ([COL] <column> [VAL] <cell>)*`` over
the columns in schema order. Masking a cell, a column name or the table name
replaces the whole token span with one ``[MASK]``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, replace
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import EmptyCorpus, IoError, MaskTargetNotInRow, RowOutOfRange
from .store import ColumnDef, ForeignKey, RelationalDatabase, TableDef

PAD, MASK, UNK, NULL, TAB, COL, VAL = range(7)
RESERVED = ("[PAD]", "[MASK]", "[UNK]", "[NULL]", "[TAB]", "[COL]", "[VAL]")

CELL, COLUMN_NAME, TABLE_NAME = "cell", "column_name", "table_name"
TARGET_KINDS = (CELL, COLUMN_NAME, TABLE_NAME)

DEFAULT_RATES = {"cell_rate": 0.15, "col_rate": 0.10, "tab_rate": 0.10}


def tokenize(text: str) -> list[str]:
    return text.split()


class Vocabulary:
    """Bijective token <-> id map with the reserved ids fixed at 0..6."""

    def __init__(self, tokens: Sequence[str]):
        tokens = list(tokens)
        if tuple(tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError("vocabulary must start with the reserved tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.itos = tokens
        self.stoi = {t: i for i, t in enumerate(tokens)}

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def ids(self, tokens: Sequence[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def token(self, idx: int) -> str:
        return self.itos[idx]

    def save(self, path) -> None:
        try:
            Path(path).write_text("\n".join(self.itos) + "\n", encoding="utf-8")
        except OSError as exc:
            raise IoError(f"cannot write vocabulary to {path}: {exc}") from exc

    @classmethod
    def load(cls, path) -> "Vocabulary":
        try:
            lines = Path(path).read_text(encoding="utf-8").split("\n")
        except OSError as exc:
            raise IoError(f"cannot read vocabulary {path}: {exc}") from exc
        if lines and lines[-1] == "":
            lines.pop()
        return cls(lines)


def build_vocabulary(corpus: Sequence[RelationalDatabase], min_freq: int = 1) -> Vocabulary:
    """Reserved tokens, then corpus tokens with count >= min_freq by (-count, token)."""
    if not corpus:
        raise EmptyCorpus("cannot build a vocabulary from an empty corpus")
    counts = Counter()
    for db in corpus:
        for t in db.tables:
            counts.update(tokenize(t.name))
            for c in t.columns:
                counts.update(tokenize(c.name))
            for row in db.rows.get(t.name, ()):
                for v in row:
                    if v is not None:
                        counts.update(tokenize(v))
    for tok in RESERVED:
        counts.pop(tok, None)
    kept = sorted((t for t, n in counts.items() if n >= min_freq), key=lambda t: (-counts[t], t))
    return Vocabulary(list(RESERVED) + kept)


@dataclass(frozen=True)
class MaskSpec:
    """One masked-reconstruction target: a cell, a column name or a table name.

    ``row`` is required for cells; for name targets it selects the row whose
    serialization carries the mask in row-level training, and is None for
    table-level (graph) targets.
    """

    target: str
    table: str
    row: Optional[int] = None
    column: Optional[str] = None
    seed: int = 0


@dataclass(frozen=True)
class Origin:
    database: str
    table: str
    row: Optional[int] = None
    name_target: Optional[str] = None  # "column" / "table" for name-only sequences
    truncated: bool = False


@dataclass(frozen=True)
class TokenSequence:
    ids: tuple
    mask_positions: frozenset
    origin: Origin

    def __len__(self):
        return len(self.ids)


def _cell_tokens(value) -> list[int] | list[str]:
    return ["[NULL]"] if value is None else tokenize(value)


def target_tokens(db: RelationalDatabase, spec: MaskSpec) -> list[str]:
    """Ground-truth token strings behind a mask target."""
    tdef = db.table(spec.table)
    if spec.target == TABLE_NAME:
        return tokenize(tdef.name)
    if spec.target == COLUMN_NAME:
        return tokenize(tdef.columns[tdef.column_index(spec.column)].name)
    rows = db.rows.get(spec.table, ())
    if spec.row is None or not 0 <= spec.row < len(rows):
        raise RowOutOfRange(f"{spec.table} has no row {spec.row}")
    return _cell_tokens(rows[spec.row][tdef.column_index(spec.column)])


def serialize_row(
    db: RelationalDatabase,
    table: str,
    row_index: int,
    vocab: Vocabulary,
    max_seq_len: int = 64,
    mask: Optional[MaskSpec] = None,
    mask_column_names: Sequence[str] = (),
    mask_table_name: bool = False,
) -> TokenSequence:
    """Linearize one row with its schema.

    ``mask`` is a single MaskSpec addressed at this row (or at its table's
    schema). ``mask_column_names``/``mask_table_name`` additionally hide name
    tokens without counting as the sample's target; graph samples use them to
    keep a masked name hidden in every row of its table.
    """
    if max_seq_len < 8:
        raise ValueError("max_seq_len must be at least 8")
    tdef = db.table(table)
    rows = db.rows.get(table, ())
    if not 0 <= row_index < len(rows):
        raise RowOutOfRange(f"{table} has no row {row_index} (it has {len(rows)})")
    row = rows[row_index]

    mask_col = None
    mask_tab = bool(mask_table_name)
    hide_cols = set(mask_column_names)
    target_group = None
    if mask is not None:
        if mask.table != table:
            raise MaskTargetNotInRow(f"mask addresses table {mask.table!r}, row is in {table!r}")
        if mask.target == TABLE_NAME:
            mask_tab = True
        elif mask.target == COLUMN_NAME:
            target_group = tdef.column_index(mask.column)
            hide_cols.add(mask.column)
        elif mask.target == CELL:
            if mask.row != row_index:
                raise MaskTargetNotInRow(f"cell mask is for row {mask.row}, not {row_index}")
            target_group = tdef.column_index(mask.column)
            mask_col = target_group
        else:
            raise MaskTargetNotInRow(f"unknown mask target {mask.target!r}")

    head = [TAB] + ([MASK] if mask_tab else vocab.ids(tokenize(tdef.name)))
    groups = []
    for j, (col, value) in enumerate(zip(tdef.columns, row)):
        g = [COL] + ([MASK] if col.name in hide_cols else vocab.ids(tokenize(col.name)))
        g.append(VAL)
        g.extend([MASK] if j == mask_col else vocab.ids(_cell_tokens(value)))
        groups.append(g)

    total = len(head) + sum(len(g) for g in groups)
    truncated = total > max_seq_len
    if not truncated:
        ids = head + [t for g in groups for t in g]
    else:
        # keep groups in schema order until the budget runs out, the last one
        # cut short; the target group is always kept whole
        budget = max_seq_len - len(head) - (len(groups[target_group]) if target_group is not None else 0)
        ids = list(head)
        for j, g in enumerate(groups):
            if j == target_group:
                ids.extend(g)
            elif budget > 0:
                ids.extend(g[:budget])
                budget -= min(len(g), budget)
        # only reachable with a huge table name or target group
        ids = ids[:max_seq_len]

    masks = frozenset(i for i, t in enumerate(ids) if t == MASK)
    origin = Origin(db.name, table, row_index, None, truncated)
    return TokenSequence(tuple(ids), masks, origin)


def serialize_table(db: RelationalDatabase, table: str, vocab: Vocabulary, masked: bool = False) -> TokenSequence:
    """``[TAB] <table>`` sequence of a table node."""
    tdef = db.table(table)
    ids = [TAB] + ([MASK] if masked else vocab.ids(tokenize(tdef.name)))
    masks = frozenset([1]) if masked else frozenset()
    return TokenSequence(tuple(ids), masks, Origin(db.name, table, None, "table", False))


def serialize_column(
    db: RelationalDatabase, table: str, column: str, vocab: Vocabulary, mask_column: bool = False, mask_table: bool = False
) -> TokenSequence:
    """``[TAB] <table> [COL] <column>`` sequence of a column node."""
    tdef = db.table(table)
    name = tdef.columns[tdef.column_index(column)].name
    ids = [TAB] + ([MASK] if mask_table else vocab.ids(tokenize(tdef.name)))
    ids.append(COL)
    ids.extend([MASK] if mask_column else vocab.ids(tokenize(name)))
    masks = frozenset(i for i, t in enumerate(ids) if t == MASK)
    return TokenSequence(tuple(ids), masks, Origin(db.name, table, None, "column", False))


def detokenize(seq: TokenSequence, vocab: Vocabulary) -> dict:
    """Recover table name, column names and cell values from an unmasked row."""
    out = {"table": None, "columns": [], "values": []}
    cur, words = None, []

    def flush():
        if cur is None:
            return
        text = " ".join(words)
        if cur == TAB:
            out["table"] = text
        elif cur == COL:
            out["columns"].append(text)
        else:
            out["values"].append(None if words == ["[NULL]"] else text)

    for t in seq.ids:
        if t in (TAB, COL, VAL):
            flush()
            cur, words = t, []
        elif t != PAD:
            words.append(vocab.token(t))
    flush()
    return out


def sample_mask_targets(db: RelationalDatabase, rates=None, seed: int = 0) -> list[MaskSpec]:
    """Draw table-level mask targets independently per table name, column name and cell.

    Rates default to cell 0.15, column 0.10, table 0.10. NULL cells are never
    selected. Output order follows the schema: per table its name, then its
    columns, then its cells row by row.
    """
    r = dict(DEFAULT_RATES)
    r.update(rates or {})
    for k, v in r.items():
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{k} must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    out = []
    for t in db.tables:
        if rng.random() < r["tab_rate"]:
            out.append(MaskSpec(TABLE_NAME, t.name, seed=seed))
        for c in t.columns:
            if rng.random() < r["col_rate"]:
                out.append(MaskSpec(COLUMN_NAME, t.name, column=c.name, seed=seed))
        for i, row in enumerate(db.rows.get(t.name, ())):
            for c, v in zip(t.columns, row):
                if v is not None and rng.random() < r["cell_rate"]:
                    out.append(MaskSpec(CELL, t.name, row=i, column=c.name, seed=seed))
    return out


def sample_row_mask_targets(db: RelationalDatabase, rates=None, seed: int = 0) -> list[MaskSpec]:
    """Row-level variant: per row, its cells, its column names and its table name.

    Name targets carry the row they are masked in. Used for single-row training.
    """
    r = dict(DEFAULT_RATES)
    r.update(rates or {})
    rng = np.random.default_rng(seed)
    out = []
    for t in db.tables:
        for i, row in enumerate(db.rows.get(t.name, ())):
            if rng.random() < r["tab_rate"]:
                out.append(MaskSpec(TABLE_NAME, t.name, row=i, seed=seed))
            for c, v in zip(t.columns, row):
                if rng.random() < r["col_rate"]:
                    out.append(MaskSpec(COLUMN_NAME, t.name, row=i, column=c.name, seed=seed))
                if v is not None and rng.random() < r["cell_rate"]:
                    out.append(MaskSpec(CELL, t.name, row=i, column=c.name, seed=seed))
    return out


# ----------------------------------------------------------------- wide tables


class VerticalSplit(NamedTuple):
    fragments: list  # list of (TableDef, rows)
    foreign_keys: list


def vertical_split(table: TableDef, rows: Sequence[tuple], max_columns: int, key_name: str = "__rowkey__") -> VerticalSplit:
    """Split a wide table into column fragments joined by a synthetic row key.

    Fragment ``i + 1`` references fragment ``i`` on the key, so the fragments
    form a foreign-key chain. Narrow tables come back unchanged.
    """
    if max_columns < 1:
        raise ValueError("max_columns must be at least 1")
    rows = [tuple(r) for r in rows]
    if len(table.columns) <= max_columns:
        return VerticalSplit([(table, rows)], [])
    if key_name in table.column_names:
        raise ValueError(f"key column {key_name!r} already exists in {table.name!r}")
    key_col = ColumnDef(key_name, "integer", False)
    keys = [str(i) for i in range(len(rows))]
    fragments, fks = [], []
    for f, start in enumerate(range(0, len(table.columns), max_columns)):
        cols = table.columns[start : start + max_columns]
        name = f"{table.name}__part{f}"
        fragments.append(
            (TableDef(name, (key_col,) + tuple(cols), key_name), [(k,) + r[start : start + max_columns] for k, r in zip(keys, rows)])
        )
        if f:
            fks.append(ForeignKey(name, key_name, fragments[f - 1][0].name, key_name))
    return VerticalSplit(fragments, fks)


def join_fragments(split: VerticalSplit) -> list[tuple]:
    """Inverse of vertical_split: key-join the fragments back into rows."""
    if len(split.fragments) == 1 and not split.foreign_keys:
        return [tuple(r) for r in split.fragments[0][1]]
    by_key = [dict((r[0], r[1:]) for r in rows) for _, rows in split.fragments]
    order = [r[0] for r in split.fragments[0][1]]
    return [tuple(v for part in by_key for v in part[k]) for k in order]


def mask_with_row(spec: MaskSpec, row: int) -> MaskSpec:
    return replace(spec, row=row)
