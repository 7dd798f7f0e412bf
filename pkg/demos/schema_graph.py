"""
Relational databases as schema graphs
=====================================

A small planets/moons database becomes a graph with one node per table,
column and row. Rows link to their table and to every column they fill;
foreign-key values link child rows to the rows they reference.
"""

from relgraph.graph import UNBOUNDED, build_graph, export_graph, sample_subgraph
from relgraph.store import ColumnDef, ForeignKey, TableDef, make_database

planets = TableDef("planets", (ColumnDef("id", "text", False), ColumnDef("name")), "id")
moons = TableDef("moons", (ColumnDef("name"), ColumnDef("planet")))
db = make_database(
    "solar",
    [planets, moons],
    [ForeignKey("moons", "planet", "planets", "id")],
    {"planets": [("p1", "Jupiter"), ("p2", "Saturn")], "moons": [("Io", "p1"), ("Europa", "p1"), ("Titan", "p2")]},
)

graph = build_graph(db)
print(graph.num_nodes, "nodes,", len(graph.undirected_edges()), "edges")

# the debug export lists every directed half-edge and every node
edges, nodes = export_graph(graph)
print(nodes)

# neighbors of the Io row: its table, both moon columns and the Jupiter row
io = graph.row_node[("moons", 0)]
print([graph.nodes[i] for i in graph.neighbors(io)])

# two hops with no cap reach every node within distance two
sub = sample_subgraph(graph, io, [UNBOUNDED, UNBOUNDED])
print("2-hop neighborhood:", sorted(sub.nodes.tolist()))

# capped fanout keeps a uniform sample of each frontier's neighbors
sub = sample_subgraph(graph, io, [2, 2], rng_seed=1)
print("sampled hops:", sub.hops)
