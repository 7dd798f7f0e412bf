import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from hypothesis import strategies as st

from relgraph.store import ColumnDef, ForeignKey, TableDef, make_database

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def planets_moons(moon_links=("p1", "p1", "p2")):
    planets = TableDef("planets", (ColumnDef("id", "text", False), ColumnDef("name")), "id")
    moons = TableDef("moons", (ColumnDef("name"), ColumnDef("planet")), None)
    return make_database(
        "solar",
        [planets, moons],
        [ForeignKey("moons", "planet", "planets", "id")],
        {
            "planets": [("p1", "Jupiter"), ("p2", "Saturn")],
            "moons": [(f"m{i}", p) for i, p in enumerate(moon_links)],
        },
    )


@pytest.fixture
def solar():
    return planets_moons()


@st.composite
def small_databases(draw, max_tables=3, max_rows=5, max_cols=3):
    """Random valid databases; every table after the first may reference an earlier one."""
    n_tables = draw(st.integers(1, max_tables))
    tables, rows, fks = [], {}, []
    for t in range(n_tables):
        name = f"t{t}"
        n_rows = draw(st.integers(0, max_rows))
        n_extra = draw(st.integers(0, max_cols - 1))
        cols = [ColumnDef("id", "text", False)] + [ColumnDef(f"c{j}") for j in range(n_extra)]
        data = [[f"k{i}"] + [draw(st.one_of(st.none(), st.sampled_from(["a", "b", "c d"]))) for _ in range(n_extra)]
                for i in range(n_rows)]
        if t > 0 and draw(st.booleans()):
            parent = draw(st.integers(0, t - 1))
            pkeys = [r[0] for r in rows[f"t{parent}"]]
            cols.append(ColumnDef("ref"))
            for r in data:
                r.append(draw(st.sampled_from(pkeys)) if pkeys and draw(st.booleans()) else None)
            fks.append(ForeignKey(name, "ref", f"t{parent}", "id"))
        tables.append(TableDef(name, tuple(cols), "id"))
        rows[name] = [tuple(r) for r in data]
    return make_database("rand", tables, fks, rows)


def random_graph(rng, n, p):
    edges = set()
    for a in range(n):
        for b in range(a + 1, n):
            if rng.random() < p:
                edges.add((a, b))
    if not edges:
        return np.zeros((2, 0), dtype=np.int64)
    src = [a for a, b in edges] + [b for a, b in edges]
    dst = [b for a, b in edges] + [a for a, b in edges]
    return np.array([src, dst], dtype=np.int64)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
