import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from relgraph.errors import DimensionMismatch, InvalidSeedNode
from relgraph.graph import (
    CELL_LINK,
    COL_IN_TABLE,
    FK_LINK,
    ROW_IN_TABLE,
    UNBOUNDED,
    attach_features,
    build_graph,
    column_stats_vector,
    export_graph,
    sample_subgraph,
)
from relgraph.store import ColumnDef, TableDef, make_database

from .conftest import planets_moons, random_graph, small_databases
from .oracles import bfs_hops, brute_force_graph, describe, fk_scan, graph_from_edges


def test_solar_counts(solar):
    g = build_graph(solar)
    assert g.num_nodes == 2 + 4 + 5
    kinds = [e.etype for e in g.undirected_edges()]
    assert len(kinds) == 22
    assert kinds.count(ROW_IN_TABLE) == 5
    assert kinds.count(COL_IN_TABLE) == 4
    assert kinds.count(CELL_LINK) == 10
    assert kinds.count(FK_LINK) == 3


def test_canonical_node_order(solar):
    g = build_graph(solar)
    assert [n.kind for n in g.nodes] == ["table"] * 2 + ["column"] * 4 + ["row"] * 5


def test_no_fk_one_component_per_table():
    a = TableDef("a", (ColumnDef("x"),))
    b = TableDef("b", (ColumnDef("y"),))
    db = make_database("d", [a, b], rows={"a": [("1",), ("2",)], "b": [("3",)]})
    g = build_graph(db)
    assert not [e for e in g.edges if e.etype == FK_LINK]
    tables = {n.id: n.table for n in g.nodes}
    assert all(tables[e.src] == tables[e.dst] for e in g.edges)
    # every table's nodes are reachable from its table node
    for t, tid in g.table_node.items():
        reach = bfs_hops(g.num_nodes, g.edge_index, tid, g.num_nodes)
        assert {tables[i] for i in reach} == {t}
        assert len(reach) == sum(1 for n in g.nodes if n.table == t)


def test_null_fk_values_link_nothing():
    db = planets_moons(("p1", None, None))
    fk = [e for e in build_graph(db).undirected_edges() if e.etype == FK_LINK]
    assert len(fk) == 1


@given(small_databases())
def test_construction_matches_brute_force(db):
    assert describe(build_graph(db)) == brute_force_graph(db)


@given(small_databases())
def test_fk_edges_match_value_scan(db):
    nodes, edges = describe(build_graph(db))
    assert {pair for (pair, etype) in edges if etype == FK_LINK} == fk_scan(db)


@given(small_databases(max_tables=2))
def test_renaming_a_table_keeps_topology(db):
    old = db.tables[0].name
    renamed_tables = [TableDef("zz_" + t.name if t.name == old else t.name, t.columns, t.primary_key) for t in db.tables]
    fks = [type(fk)(*("zz_" + f if f == old else f for f in (fk.from_table,)), fk.from_column,
                    "zz_" + fk.to_table if fk.to_table == old else fk.to_table, fk.to_column) for fk in db.foreign_keys]
    rows = {("zz_" + k if k == old else k): v for k, v in db.rows.items()}
    g1 = build_graph(db)
    g2 = build_graph(make_database(db.name, renamed_tables, fks, rows))
    assert g1.num_nodes == g2.num_nodes
    assert sorted((e.src, e.dst, e.etype) for e in g1.edges) == sorted((e.src, e.dst, e.etype) for e in g2.edges)


def test_sampling_exhaustive_is_two_hop_neighborhood(solar):
    g = build_graph(solar)
    for seed in range(g.num_nodes):
        sub = sample_subgraph(g, seed, [UNBOUNDED, UNBOUNDED])
        assert set(sub.nodes.tolist()) == bfs_hops(g.num_nodes, g.edge_index, seed, 2)
        assert sub.nodes[0] == seed


def test_bounded_fanout_picks_true_neighbors():
    # star: node 0 with 5 neighbors
    ei = np.array([[0] * 5 + list(range(1, 6)), list(range(1, 6)) + [0] * 5])
    g = graph_from_edges(6, ei)
    for s in range(20):
        sub = sample_subgraph(g, 0, [2], rng_seed=s)
        assert len(sub.hops[1]) == 2
        assert set(sub.hops[1]) <= set(range(1, 6))


def test_sampling_deterministic(solar):
    g = build_graph(solar)
    a = sample_subgraph(g, 6, [1, 1], rng_seed=3)
    b = sample_subgraph(g, 6, [1, 1], rng_seed=3)
    assert np.array_equal(a.nodes, b.nodes) and np.array_equal(a.edge_index, b.edge_index)


def test_invalid_seed(solar):
    with pytest.raises(InvalidSeedNode):
        sample_subgraph(build_graph(solar), 99, [1])


@given(st.integers(2, 25), st.floats(0.05, 0.5), st.integers(0, 2**16), st.integers(1, 3))
def test_unbounded_sampling_matches_bfs(n, p, seed, hops):
    rng = np.random.default_rng(seed)
    ei = random_graph(rng, n, p)
    g = graph_from_edges(n, ei)
    s = int(rng.integers(n))
    sub = sample_subgraph(g, s, [UNBOUNDED] * hops)
    assert set(sub.nodes.tolist()) == bfs_hops(n, ei, s, hops)
    parent = {(int(a), int(b)) for a, b in ei.T}
    assert sub.global_edges() <= parent
    # induced: every parent edge between sampled nodes is kept
    chosen = set(sub.nodes.tolist())
    assert sub.global_edges() == {(a, b) for a, b in parent if a in chosen and b in chosen}


@given(st.integers(2, 25), st.floats(0.05, 0.6), st.integers(0, 2**16), st.integers(1, 4))
def test_bounded_sampling_counts(n, p, seed, k):
    rng = np.random.default_rng(seed)
    ei = random_graph(rng, n, p)
    g = graph_from_edges(n, ei)
    s = int(rng.integers(n))
    sub = sample_subgraph(g, s, [k], rng_seed=seed)
    nb = set(g.neighbors(s).tolist())
    assert set(sub.hops[1]) <= nb
    assert len(sub.hops[1]) == min(k, len(nb))


class _ConstEncoder:
    def __init__(self, vocab, d=3):
        self.vocab, self.d_model, self.max_seq_len = vocab, d, 64

    def encode_batch(self, seqs):
        return np.array([[len(s.ids), 1.0, 0.0] for s in seqs])


class _BadEncoder(_ConstEncoder):
    def encode_batch(self, seqs):
        return np.zeros((len(seqs), self.d_model + 1))


def test_features_and_stats(solar):
    from relgraph.tokenizer import build_vocabulary

    g = build_graph(solar)
    v = build_vocabulary([solar])
    f = attach_features(g, solar, _ConstEncoder(v))
    assert f.x.shape == (11, 3) and f.stats is None and np.isfinite(f.x).all()
    f = attach_features(g, solar, _ConstEncoder(v), stats_enabled=True)
    assert f.stats.shape == (11, 4)
    cols = set(g.column_node.values())
    assert not f.stats[[i for i in range(11) if i not in cols]].any()
    with pytest.raises(DimensionMismatch):
        attach_features(g, solar, _BadEncoder(v))


def test_stats_vector_numeric_column():
    t = TableDef("n", (ColumnDef("v", "integer"),))
    db = make_database("d", [t], rows={"n": [(i,) for i in range(1, 11)]})
    assert column_stats_vector(db, "n", "v", normalize=False).tolist() == [1.0, 10.0, 1.0, 0.0]
    assert column_stats_vector(db, "n", "v").tolist() == pytest.approx([np.log(2), np.log(11), 1.0, 0.0])


def test_export_format(solar):
    edges, nodes = export_graph(build_graph(solar))
    assert len(edges.splitlines()) == 44
    first = nodes.splitlines()
    assert first[0] == "0 table planets"
    assert first[2] == "2 column planets id"
    assert first[-1] == "10 row moons 2"
