"""Seeded generator of small relational databases with cross-table structure.

Every table is an "entity" (its name) with a primary key ``id`` and attribute
columns. Attribute kinds fall into two families and each row carries one
hidden latent per family. An attribute value is two words: a stem naming the
kind's pair and the family latent (``"tone a3"``). A table without a parent
holds at least two attributes per family, so the latent of a masked attribute
can be read off the rest of its row.

A child table references an earlier table through a foreign-key column named
after the parent. Its rows inherit both latents from the referenced parent row
and carry exactly one attribute per family, so those latents are recoverable
through the foreign-key link but not from the row alone. Key values reappear
on the other side of each link as well.

The two kinds of a pair share a stem, except that the second kind writes an
alternative stem in some of its cells. One value therefore rarely tells the
two kinds apart, while a whole column almost always does.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpec
from .store import ColumnDef, ForeignKey, RelationalDatabase, TableDef

# stem -> (first kind, second kind, alternative stem of the second kind)
KIND_PAIRS = {
    "tone": ("color", "shade", "tint"),
    "dim": ("size", "extent", "span"),
    "form": ("shape", "outline", "contour"),
    "state": ("status", "phase", "mode"),
    "place": ("region", "zone", "sector"),
    "stuff": ("material", "texture", "grain"),
    "time": ("era", "epoch", "age"),
    "rank": ("grade", "tier", "level"),
}
FAMILIES = (("tone", "dim", "form", "state"), ("place", "stuff", "time", "rank"))
LATENT_PREFIX = ("a", "b")
KINDS = {kind: (stem, side) for stem, pair in KIND_PAIRS.items() for side, kind in enumerate(pair[:2])}
FAMILY_OF = {kind: f for f, stems in enumerate(FAMILIES) for kind in KINDS if KINDS[kind][0] in stems}

ENTITIES = {
    "planets": ("color", "size", "material", "era"),
    "moons": ("shape", "extent", "texture", "region"),
    "stars": ("color", "phase", "epoch", "grade"),
    "comets": ("outline", "status", "material", "era"),
    "missions": ("status", "size", "tier", "region"),
    "probes": ("phase", "shade", "grade", "texture"),
    "craters": ("shape", "size", "epoch", "zone"),
    "stations": ("color", "phase", "region", "grade"),
    "nebulae": ("shade", "outline", "texture", "era"),
    "asteroids": ("shape", "extent", "material", "tier"),
    "galaxies": ("shade", "shape", "zone", "epoch"),
    "observers": ("status", "color", "tier", "region"),
}


@dataclass(frozen=True)
class SynthSpec:
    n_databases: int = 10
    tables_per_db: tuple = (2, 4)
    rows: tuple = (5, 20)
    cols: tuple = (5, 7)  # width of tables without a parent; child tables have 4 columns
    vocab_size: int = 6  # distinct latent values per family
    fk_density: float = 1.0
    alt_rate: float = 0.3  # share of second-kind cells written with the alternative stem
    seed: int = 0

    def validate(self) -> "SynthSpec":
        if self.n_databases < 1:
            raise InvalidSpec("n_databases must be positive")
        for label, (lo, hi) in (("tables_per_db", self.tables_per_db), ("rows", self.rows), ("cols", self.cols)):
            if lo < 1 or hi < lo:
                raise InvalidSpec(f"{label} range must satisfy 1 <= lo <= hi, got ({lo}, {hi})")
        if self.tables_per_db[1] > len(ENTITIES):
            raise InvalidSpec(f"at most {len(ENTITIES)} tables per database are supported")
        widest = 1 + sum(len(f) for f in FAMILIES)
        if self.cols[0] < 5 or self.cols[1] > widest:
            raise InvalidSpec(f"cols must lie within [5, {widest}]")
        if self.vocab_size < 1:
            raise InvalidSpec("vocab_size must be positive")
        for label, p in (("fk_density", self.fk_density), ("alt_rate", self.alt_rate)):
            if not 0.0 <= p <= 1.0:
                raise InvalidSpec(f"{label} must lie in [0, 1]")
        return self


def cell_value(kind: str, latent: int, alternative: bool = False) -> str:
    stem, side = KINDS[kind]
    word = KIND_PAIRS[stem][2] if side == 1 and alternative else stem
    return f"{word} {LATENT_PREFIX[FAMILY_OF[kind]]}{latent}"


def _pick_kinds(rng: np.random.Generator, entity: str, family: int, count: int) -> list[str]:
    """``count`` kinds of one family with distinct stems.

    Each of the entity's characteristic kinds is kept with probability 1/2 and
    tried first, so table names correlate with their columns without fixing
    them.
    """
    preferred = [k for k in ENTITIES[entity] if FAMILY_OF[k] == family and rng.random() < 0.5]
    spare = [k for k in sorted(KINDS) if FAMILY_OF[k] == family and k not in preferred]
    spare = [spare[i] for i in rng.permutation(len(spare))]
    out, stems = [], set()
    for kind in preferred + spare:
        if len(out) == count:
            break
        if KINDS[kind][0] not in stems:
            out.append(kind)
            stems.add(KINDS[kind][0])
    return [out[i] for i in rng.permutation(len(out))]


def _make_database(rng: np.random.Generator, spec: SynthSpec, name: str) -> RelationalDatabase:
    entity_names = sorted(ENTITIES)
    n_tables = int(rng.integers(spec.tables_per_db[0], spec.tables_per_db[1] + 1))
    chosen = [entity_names[i] for i in rng.choice(len(entity_names), size=n_tables, replace=False)]
    id_pool = [f"k{i}" for i in range(max(spec.rows[1], 20))]

    tables, rows, fks = [], {}, []
    latents = {}  # table -> (n_rows, 2) latent indices
    for t, tname in enumerate(chosen):
        n_cols = int(rng.integers(spec.cols[0], spec.cols[1] + 1))
        n_rows = int(rng.integers(spec.rows[0], spec.rows[1] + 1))
        columns = [ColumnDef("id", "text", False)]
        data = [list(rng.choice(id_pool, size=n_rows, replace=False))]

        if t > 0 and rng.random() < spec.fk_density:
            parent = chosen[int(rng.integers(0, t))]
            link = rng.integers(0, len(rows[parent]), size=n_rows)
            columns.append(ColumnDef(parent, "text", False))
            data.append([rows[parent][i][0] for i in link])
            fks.append(ForeignKey(tname, parent, parent, "id"))
            z = latents[parent][link]
            kinds = _pick_kinds(rng, tname, 0, 1) + _pick_kinds(rng, tname, 1, 1)
        else:
            z = rng.integers(0, spec.vocab_size, size=(n_rows, 2))
            n_attr = n_cols - 1
            kinds = _pick_kinds(rng, tname, 0, n_attr // 2) + _pick_kinds(rng, tname, 1, n_attr - n_attr // 2)
        latents[tname] = z

        for kind in kinds:
            alt = rng.random(n_rows) < spec.alt_rate
            columns.append(ColumnDef(kind, "text", False))
            data.append([cell_value(kind, int(v), bool(a)) for v, a in zip(z[:, FAMILY_OF[kind]], alt)])

        tables.append(TableDef(tname, tuple(columns), "id"))
        rows[tname] = tuple(tuple(str(col[r]) for col in data) for r in range(n_rows))

    return RelationalDatabase(name=name, tables=tuple(tables), foreign_keys=tuple(fks), rows=rows).validate()


def generate_synthetic_corpus(spec: SynthSpec) -> list[RelationalDatabase]:
    """Deterministically generate ``spec.n_databases`` valid databases."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    width = max(3, len(str(spec.n_databases)))
    return [_make_database(rng, spec, f"synth{spec.seed}_{i:0{width}d}") for i in range(spec.n_databases)]
