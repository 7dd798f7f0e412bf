"""Heterogeneous schema graph over table, column and row nodes.

Node order is canonical: all tables, then every table's columns, then every
table's rows, each in schema/file order. Edges are undirected and stored as
both directed halves.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DimensionMismatch, InvalidSeedNode
from .store import RelationalDatabase, column_statistics

TABLE, COLUMN, ROW = "table", "column", "row"
ROW_IN_TABLE, COL_IN_TABLE, CELL_LINK, FK_LINK = "row_in_table", "col_in_table", "cell_link", "fk_link"
EDGE_TYPES = (ROW_IN_TABLE, COL_IN_TABLE, CELL_LINK, FK_LINK)
UNBOUNDED = -1  # fanout sentinel: take every neighbor


@dataclass(frozen=True)
class Node:
    id: int
    kind: str
    table: str
    column: Optional[str] = None
    row: Optional[int] = None


@dataclass(frozen=True)
class Edge:
    src: int
    dst: int
    etype: str


@dataclass
class SchemaGraph:
    nodes: list
    edges: list  # both directions of every undirected edge
    table_node: dict = field(default_factory=dict)
    column_node: dict = field(default_factory=dict)  # (table, column) -> id
    row_node: dict = field(default_factory=dict)  # (table, row) -> id

    def __post_init__(self):
        n = len(self.nodes)
        src = np.fromiter((e.src for e in self.edges), dtype=np.int64, count=len(self.edges))
        dst = np.fromiter((e.dst for e in self.edges), dtype=np.int64, count=len(self.edges))
        order = np.lexsort((dst, src))
        self.edge_index = np.stack([src[order], dst[order]]) if len(self.edges) else np.zeros((2, 0), np.int64)
        self.indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(self.indptr, self.edge_index[0] + 1, 1)
        self.indptr = np.cumsum(self.indptr)

    @property
    def num_nodes(self) -> int:
        return len(self.nodes)

    def neighbors(self, node: int) -> np.ndarray:
        return self.edge_index[1, self.indptr[node] : self.indptr[node + 1]]

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def undirected_edges(self) -> list:
        return [e for e in self.edges if e.src < e.dst]


def build_graph(db: RelationalDatabase) -> SchemaGraph:
    """Build the schema graph of a validated database."""
    nodes, edges = [], []
    table_node, column_node, row_node = {}, {}, {}

    def add(kind, table, column=None, row=None):
        nodes.append(Node(len(nodes), kind, table, column, row))
        return len(nodes) - 1

    def link(a, b, etype):
        edges.append(Edge(a, b, etype))
        edges.append(Edge(b, a, etype))

    for t in db.tables:
        table_node[t.name] = add(TABLE, t.name)
    for t in db.tables:
        for c in t.columns:
            column_node[(t.name, c.name)] = add(COLUMN, t.name, column=c.name)
    for t in db.tables:
        for i in range(len(db.rows.get(t.name, ()))):
            row_node[(t.name, i)] = add(ROW, t.name, row=i)

    for t in db.tables:
        tn = table_node[t.name]
        cols = [column_node[(t.name, c.name)] for c in t.columns]
        for c in cols:
            link(c, tn, COL_IN_TABLE)
        for i in range(len(db.rows.get(t.name, ()))):
            r = row_node[(t.name, i)]
            link(r, tn, ROW_IN_TABLE)
            for c in cols:
                link(r, c, CELL_LINK)

    seen = set()
    for fk in db.foreign_keys:
        src_t, dst_t = db.table(fk.from_table), db.table(fk.to_table)
        j = src_t.column_index(fk.from_column)
        k = dst_t.column_index(fk.to_column)
        target = {row[k]: i for i, row in enumerate(db.rows.get(dst_t.name, ()))}
        for i, row in enumerate(db.rows.get(src_t.name, ())):
            if row[j] is None or row[j] not in target:
                continue
            a, b = row_node[(src_t.name, i)], row_node[(dst_t.name, target[row[j]])]
            pair = (min(a, b), max(a, b))
            if a == b or pair in seen:
                continue
            seen.add(pair)
            link(a, b, FK_LINK)

    return SchemaGraph(nodes, edges, table_node, column_node, row_node)


# ------------------------------------------------------------------ features


@dataclass
class NodeFeatures:
    x: np.ndarray  # (num_nodes, d_model)
    stats: Optional[np.ndarray] = None  # (num_nodes, 4) or None

    def copy(self) -> "NodeFeatures":
        return NodeFeatures(self.x.copy(), None if self.stats is None else self.stats.copy())


def _signed_log(v: float) -> float:
    return float(np.sign(v) * np.log1p(abs(v)))


def column_stats_vector(db: RelationalDatabase, table: str, column: str, normalize: bool = True) -> np.ndarray:
    """(min, max, distinct/rows, nulls/rows); min/max are zero for text columns."""
    st = column_statistics(db, table, column)
    n = len(db.rows.get(table, ()))
    lo = st.min if st.min is not None else 0.0
    hi = st.max if st.max is not None else 0.0
    if normalize:
        lo, hi = _signed_log(lo), _signed_log(hi)
    return np.array([lo, hi, st.distinct_count / n if n else 0.0, st.null_count / n if n else 0.0])


def node_sequences(graph: SchemaGraph, db: RelationalDatabase, vocab, max_seq_len: int) -> list:
    """The unmasked token sequence behind every node, in node order."""
    from .tokenizer import serialize_column, serialize_row, serialize_table

    seqs = []
    for node in graph.nodes:
        if node.kind == ROW:
            seqs.append(serialize_row(db, node.table, node.row, vocab, max_seq_len))
        elif node.kind == COLUMN:
            seqs.append(serialize_column(db, node.table, node.column, vocab))
        else:
            seqs.append(serialize_table(db, node.table, vocab))
    return seqs


def attach_features(graph: SchemaGraph, db: RelationalDatabase, encoder, stats_enabled: bool = False) -> NodeFeatures:
    """Initial node features: encoder embeddings, plus the optional stats channel.

    ``encoder`` is any object with ``d_model``, ``vocab``, ``max_seq_len`` and
    ``encode_batch(list[TokenSequence]) -> (n, d_model) array``.
    """
    seqs = node_sequences(graph, db, encoder.vocab, encoder.max_seq_len)
    x = np.asarray(encoder.encode_batch(seqs), dtype=np.float64)
    if x.shape != (graph.num_nodes, encoder.d_model):
        raise DimensionMismatch(f"encoder returned {x.shape}, expected {(graph.num_nodes, encoder.d_model)}")
    stats = None
    if stats_enabled:
        stats = np.zeros((graph.num_nodes, 4))
        for (t, c), nid in graph.column_node.items():
            stats[nid] = column_stats_vector(db, t, c)
    return NodeFeatures(x, stats)


# ------------------------------------------------------------------ sampling


@dataclass
class Subgraph:
    seed: int  # global id of the seed node
    hops: list  # hops[h] = global ids first sampled at hop h (hops[0] == [seed])
    nodes: np.ndarray  # global ids; local id = position
    edge_index: np.ndarray  # (2, E) local ids, induced, both directions
    degree: np.ndarray  # parent-graph degree of each node (for normalization)

    @property
    def local_seed(self) -> int:
        return 0

    def global_edges(self) -> set:
        return {(int(self.nodes[a]), int(self.nodes[b])) for a, b in self.edge_index.T}


def sample_subgraph(graph: SchemaGraph, seed_node: int, fanout: Sequence[int], rng_seed: int = 0) -> Subgraph:
    """GraphSAGE-style uniform neighbor sampling around ``seed_node``.

    Each frontier node keeps ``min(fanout[h], degree)`` neighbors drawn without
    replacement; ``UNBOUNDED`` (or None) keeps all of them. The returned edges
    are those of the parent graph induced on the sampled nodes.
    """
    if not 0 <= seed_node < graph.num_nodes:
        raise InvalidSeedNode(f"node {seed_node} not in graph of {graph.num_nodes} nodes")
    if len(fanout) < 1:
        raise ValueError("fanout must name at least one hop")
    rng = np.random.default_rng(rng_seed)
    order = [seed_node]
    seen = {seed_node}
    hops = [[seed_node]]
    frontier = [seed_node]
    for f in fanout:
        nxt = []
        for u in frontier:
            nb = graph.neighbors(u)
            if f is not None and f != UNBOUNDED and f < len(nb):
                nb = np.sort(rng.choice(nb, size=int(f), replace=False))
            for v in nb:
                v = int(v)
                if v not in seen:
                    seen.add(v)
                    order.append(v)
                    nxt.append(v)
        hops.append(nxt)
        frontier = nxt
    nodes = np.array(order, dtype=np.int64)
    local = -np.ones(graph.num_nodes, dtype=np.int64)
    local[nodes] = np.arange(len(nodes))
    src, dst = graph.edge_index
    keep = (local[src] >= 0) & (local[dst] >= 0)
    edge_index = np.stack([local[src[keep]], local[dst[keep]]])
    return Subgraph(seed_node, hops, nodes, edge_index, graph.degree()[nodes])


# -------------------------------------------------------------------- export


def export_graph(graph: SchemaGraph) -> tuple[str, str]:
    """Debug export: (edge list ``src dst etype``, node table ``id kind table [column|row]``)."""
    edge_lines = [f"{e.src} {e.dst} {e.etype}" for e in graph.edges]
    node_lines = []
    for n in graph.nodes:
        extra = n.column if n.kind == COLUMN else (str(n.row) if n.kind == ROW else "")
        node_lines.append(f"{n.id} {n.kind} {n.table} {extra}".rstrip())
    return "\n".join(edge_lines) + "\n", "\n".join(node_lines) + "\n"
