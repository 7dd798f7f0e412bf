"""
Row serialization and masking
=============================

Rows are written as a flat token sequence that carries the table name and
every column name next to its value. A mask replaces one target, a cell
value, a column name or the table name, with a single MASK token.
"""

from relgraph.store import ColumnDef, TableDef, make_database
from relgraph.tokenizer import (
    CELL,
    COLUMN_NAME,
    MaskSpec,
    build_vocabulary,
    detokenize,
    join_fragments,
    sample_mask_targets,
    serialize_row,
    target_tokens,
    vertical_split,
)

moons = TableDef("Moons", (ColumnDef("name"), ColumnDef("planet"), ColumnDef("discovered")))
db = make_database("m", [moons], rows={"Moons": [("Io", "Jupiter", "1610"), ("Titan", "Saturn", None)]})
vocab = build_vocabulary([db])


def show(seq):
    return " ".join(vocab.itos[i] for i in seq.ids)


print(show(serialize_row(db, "Moons", 0, vocab)))
print(detokenize(serialize_row(db, "Moons", 1, vocab), vocab))

spec = MaskSpec(CELL, "Moons", 0, "planet")
seq = serialize_row(db, "Moons", 0, vocab, mask=spec)
print(show(seq), "->", target_tokens(db, spec), "at", sorted(seq.mask_positions))

spec = MaskSpec(COLUMN_NAME, "Moons", 1, "planet")
print(show(serialize_row(db, "Moons", 1, vocab, mask=spec)))

# NULL cells are never drawn as targets
print(sample_mask_targets(db, {"cell_rate": 1.0, "col_rate": 0.0, "tab_rate": 0.0}, seed=0))

# wide tables can be cut into fragments joined on a synthetic key
split = vertical_split(moons, db.rows["Moons"], max_columns=2)
for table, rows in split.fragments:
    print(table.column_names, rows)
print(join_fragments(split) == list(db.rows["Moons"]))
