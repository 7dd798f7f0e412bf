"""
Graph convolution and gradient checks
=====================================

The GCN layer multiplies node features by the symmetrically normalized
adjacency with self-loops. Every op in the small autodiff engine is checked
here against central finite differences.
"""

import numpy as np

from relgraph.nn import tensor as T
from relgraph.nn.model import ModelConfig, graph_loss, init_params, normalized_adjacency

# two nodes joined by one edge: each ends up with the average of both
adj = normalized_adjacency(np.array([[0, 1], [1, 0]]), 2)
print(adj.toarray())
print(adj @ np.eye(2))

# full path: encode three token sequences, propagate, decode two targets
cfg = ModelConfig(vocab_size=20, d_model=6, d_ff=8, max_seq_len=6, max_decode_len=3)
rng = np.random.default_rng(0)
params = init_params(cfg, 0)
ids = rng.integers(1, 20, size=(3, 5))
adj = normalized_adjacency(np.array([[0, 1, 1, 2], [1, 0, 2, 1]]), 3)
targets = rng.integers(0, 20, size=(2, 3))


def loss(arrays):
    p = {k: T.Tensor(a, requires_grad=True) for k, a in arrays.items()}
    out = graph_loss(p, cfg, ids, adj, [0, 1], targets)
    out.backward()
    return float(out.data), {k: t.grad for k, t in p.items()}


value, grads = loss(params)
print("loss", value, "(uniform would be", np.log(20), ")")

worst = 0.0
for name in ("enc.tok", "enc.0.wq", "gcn.0.w", "dec.w"):
    arr = params[name]
    for i in list(np.ndindex(arr.shape))[:25]:
        old = arr[i]
        arr[i] = old + 1e-5
        up, _ = loss(params)
        arr[i] = old - 1e-5
        down, _ = loss(params)
        arr[i] = old
        num = (up - down) / 2e-5
        worst = max(worst, abs(num - grads[name][i]) / max(abs(num), abs(grads[name][i]), 1e-6))
print("max relative error", worst)
