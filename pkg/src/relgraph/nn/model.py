"""Model layers: sequence encoder, GCN stack and step-wise token decoder.

Parameters live in a flat ordered dict of float64 arrays; names carry their
group as a prefix (``enc.``, ``gcn.``, ``dec.``). Every forward function takes
a dict of Tensors so the same code serves training (leaf tensors with
gradients) and inference (plain constants).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp

from ..errors import DimensionMismatch, LengthMismatch, SequenceTooLong, TargetTooLong, TokenOutOfRange
from ..tokenizer import PAD
from . import tensor as T
from .tensor import Tensor

GROUPS = ("encoder", "gcn", "decoder")
_PREFIX = {"enc": "encoder", "gcn": "gcn", "dec": "decoder"}
_NEG = -1e30


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_enc: int = 1
    d_ff: int = 128
    max_seq_len: int = 64
    max_decode_len: int = 4
    gcn_layers: int = 2
    stats_dim: int = 0
    init_scale: float = 1.0  # embedding half-width; weight matrices use Glorot bounds
    name_scale: float = 1.0  # GCN input weight of table/column node features; row nodes use 1


def group_of(name: str) -> str:
    return _PREFIX[name.split(".", 1)[0]]


def param_shapes(cfg: ModelConfig) -> dict:
    d, V = cfg.d_model, cfg.vocab_size
    shapes = {"enc.tok": (V, d), "enc.pos": (cfg.max_seq_len, d)}
    for i in range(cfg.n_enc):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"enc.{i}.{w}"] = (d, d)
        shapes[f"enc.{i}.w1"] = (d, cfg.d_ff)
        shapes[f"enc.{i}.b1"] = (cfg.d_ff,)
        shapes[f"enc.{i}.w2"] = (cfg.d_ff, d)
        shapes[f"enc.{i}.b2"] = (d,)
    for i in range(cfg.gcn_layers):
        shapes[f"gcn.{i}.w"] = (d, d)
        shapes[f"gcn.{i}.b"] = (d,)
    if cfg.stats_dim:
        shapes["gcn.stats"] = (cfg.stats_dim, d)
    shapes["dec.step"] = (cfg.max_decode_len, d)
    shapes["dec.w"] = (d, V)
    shapes["dec.b"] = (V,)
    return shapes


_EMBEDDINGS = ("enc.tok", "enc.pos", "dec.step")


def init_params(cfg: ModelConfig, seed: int) -> dict:
    """Embeddings ~ U(+-init_scale), matrices ~ Glorot uniform, biases zero.

    Without layer normalization the residual stream keeps the scale of the
    embeddings, so unit-scale embeddings are what give attention non-flat
    logits at the start of training.
    """
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name in _EMBEDDINGS:
            bound = cfg.init_scale
        elif len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
        else:
            bound = 1.0
        values = rng.uniform(-bound, bound, size=shape)
        if len(shape) == 1:
            values = np.zeros(shape)
        params[name] = values
    return params


@dataclass
class ModelState:
    config: ModelConfig
    params: dict
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0
    seed: int = 0
    frozen: frozenset = frozenset()

    @classmethod
    def initialize(cls, config: ModelConfig, seed: int) -> "ModelState":
        params = init_params(config, seed)
        return cls(config, params, {k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0, seed, frozenset())

    def copy(self) -> "ModelState":
        dup = lambda d: {k: a.copy() for k, a in d.items()}  # noqa: E731
        return ModelState(self.config, dup(self.params), dup(self.m), dup(self.v), self.step, self.seed, self.frozen)

    def trainable(self, name: str) -> bool:
        return group_of(name) not in self.frozen

    def tensors(self, grad: bool = True) -> dict:
        """Wrap parameters as leaf Tensors; frozen groups never require grad."""
        return {k: Tensor(a, requires_grad=grad and self.trainable(k)) for k, a in self.params.items()}

    def reset_optimizer(self) -> None:
        self.m = {k: np.zeros_like(p) for k, p in self.params.items()}
        self.v = {k: np.zeros_like(p) for k, p in self.params.items()}
        self.step = 0

    def group_params(self, group: str) -> dict:
        return {k: a for k, a in self.params.items() if group_of(k) == group}


# -------------------------------------------------------------------- encoder


def pad_batch(seqs: Sequence, max_seq_len: Optional[int] = None) -> np.ndarray:
    """Stack token-id sequences into an (n, L) int array, right-padded with PAD."""
    ids = [s.ids if hasattr(s, "ids") else tuple(s) for s in seqs]
    L = max((len(s) for s in ids), default=1) or 1
    if max_seq_len is not None and L > max_seq_len:
        raise SequenceTooLong(f"sequence of length {L} exceeds max_seq_len {max_seq_len}")
    out = np.full((len(ids), L), PAD, dtype=np.int64)
    for i, s in enumerate(ids):
        out[i, : len(s)] = s
    return out


def encoder_forward(p: dict, ids: np.ndarray, cfg: ModelConfig) -> Tensor:
    """Token + position embeddings, ``n_enc`` attention blocks, mean pool over non-PAD."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 2:
        raise ValueError("ids must have shape (batch, length)")
    B, L = ids.shape
    if L > cfg.max_seq_len:
        raise SequenceTooLong(f"length {L} > max_seq_len {cfg.max_seq_len}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.vocab_size):
        raise TokenOutOfRange(f"token ids must lie in [0, {cfg.vocab_size})")
    keep = ids != PAD
    x = T.take(p["enc.tok"], ids) + T.take(p["enc.pos"], np.arange(L))
    key_bias = np.where(keep, 0.0, _NEG)[:, None, :]
    scale = 1.0 / math.sqrt(cfg.d_model)
    for i in range(cfg.n_enc):
        q = x @ p[f"enc.{i}.wq"]
        k = x @ p[f"enc.{i}.wk"]
        v = x @ p[f"enc.{i}.wv"]
        att = T.softmax(T.mul(q @ T.transpose(k), scale) + key_bias)
        x = x + (att @ v) @ p[f"enc.{i}.wo"]
        h = T.relu(x @ p[f"enc.{i}.w1"] + p[f"enc.{i}.b1"])
        x = x + (h @ p[f"enc.{i}.w2"] + p[f"enc.{i}.b2"])
    counts = np.maximum(keep.sum(axis=1, keepdims=True), 1)
    pool = (keep / counts)[:, None, :]  # (B, 1, L)
    return T.reshape(Tensor(pool) @ x, (B, cfg.d_model))


def encode_sequence(state: ModelState, seq) -> np.ndarray:
    """Embed one token sequence into a ``d_model`` vector."""
    ids = pad_batch([seq], state.config.max_seq_len)
    return encoder_forward(state.tensors(grad=False), ids, state.config).data[0]


class EncoderHandle:
    """Batched, gradient-free access to a state's encoder."""

    def __init__(self, state: ModelState, vocab, chunk: int = 512):
        if len(vocab) != state.config.vocab_size:
            raise DimensionMismatch(f"vocabulary has {len(vocab)} tokens, model expects {state.config.vocab_size}")
        self.state = state
        self.vocab = vocab
        self.d_model = state.config.d_model
        self.max_seq_len = state.config.max_seq_len
        self.chunk = chunk
        self._params = {k: Tensor(a) for k, a in state.params.items() if k.startswith("enc.")}

    def encode_batch(self, seqs: Sequence) -> np.ndarray:
        out = np.zeros((len(seqs), self.d_model))
        # bucket by length so short rows are not padded to the longest one
        order = sorted(range(len(seqs)), key=lambda i: len(seqs[i].ids))
        for s in range(0, len(order), self.chunk):
            idx = order[s : s + self.chunk]
            ids = pad_batch([seqs[i] for i in idx], self.max_seq_len)
            out[idx] = encoder_forward(self._params, ids, self.state.config).data
        return out


# ------------------------------------------------------------------------ GCN


def normalized_adjacency(edge_index: np.ndarray, num_nodes: int, degree: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Sparse D^-1/2 (A + I) D^-1/2 built edge by edge.

    ``degree`` overrides the degree (without self-loop) of each node; sampled
    subgraphs pass their parent-graph degrees so that an exhaustive sample
    reproduces full-graph outputs.
    """
    src, dst = np.asarray(edge_index[0]), np.asarray(edge_index[1])
    if degree is None:
        degree = np.bincount(src, minlength=num_nodes)
    dhat = np.asarray(degree, dtype=np.float64) + 1.0
    inv = 1.0 / np.sqrt(dhat)
    loops = np.arange(num_nodes)
    rows = np.concatenate([dst, loops])
    cols = np.concatenate([src, loops])
    vals = inv[rows] * inv[cols]
    return sp.csr_matrix((vals, (rows, cols)), shape=(num_nodes, num_nodes))


def gcn_forward(p: dict, adj, x, n_layers: int, activation: str = "relu", residual: bool = True) -> Tensor:
    """``n_layers`` of H <- act(Â H W + b) + H; no activation after the last layer."""
    x = T.as_tensor(x)
    d = p["gcn.0.w"].shape[0] if n_layers else x.shape[-1]
    if x.shape[-1] != d:
        raise DimensionMismatch(f"feature dim {x.shape[-1]} != GCN dim {d}")
    for i in range(n_layers):
        z = T.spmm(adj, x @ p[f"gcn.{i}.w"]) + p[f"gcn.{i}.b"]
        if activation == "relu" and i < n_layers - 1:
            z = T.relu(z)
        x = z + x if residual else z
    return x


def node_scale(kinds: Sequence[str], name_scale: float) -> np.ndarray:
    """Per-node input weight: 1 for row nodes, ``name_scale`` for table and column nodes.

    Name embeddings come from 4-token sequences and vary far more than pooled
    row embeddings; down-weighting them keeps them from swamping the row
    signal that reaches a node through its neighbors.
    """
    return np.array([1.0 if k == "row" else name_scale for k in kinds])


def gcn_apply(state: ModelState, graph, features, activation: str = "relu", residual: bool = True) -> np.ndarray:
    """Inference-only GCN over a SchemaGraph and its NodeFeatures."""
    x = features.x if hasattr(features, "x") else np.asarray(features)
    if x.shape != (graph.num_nodes, state.config.d_model):
        raise DimensionMismatch(f"features {x.shape} do not match graph/model")
    x = x * node_scale([n.kind for n in graph.nodes], state.config.name_scale)[:, None]
    p = state.tensors(grad=False)
    x = input_features(p, x, getattr(features, "stats", None))
    adj = normalized_adjacency(graph.edge_index, graph.num_nodes)
    return gcn_forward(p, adj, x, state.config.gcn_layers, activation, residual).data


def input_features(p: dict, x, stats=None) -> Tensor:
    x = T.as_tensor(x)
    if "gcn.stats" in p and stats is not None:
        x = x + Tensor(stats) @ p["gcn.stats"]
    return x


# -------------------------------------------------------------------- decoder


def decoder_logits(p: dict, h, steps: int) -> Tensor:
    """(B, d) node representations -> (B, steps, V) logits of (h + step_s) W + b."""
    h = T.as_tensor(h)
    B, d = h.shape
    step = T.take(p["dec.step"], np.arange(steps))
    z = T.reshape(h, (B, 1, d)) + step
    return z @ p["dec.w"] + p["dec.b"]


def decode_tokens(state: ModelState, node_repr, target_len: Optional[int] = None) -> np.ndarray:
    """Per-step probability distributions (target_len, V) for one representation."""
    cfg = state.config
    target_len = cfg.max_decode_len if target_len is None else target_len
    if target_len > cfg.max_decode_len:
        raise TargetTooLong(f"target_len {target_len} > max_decode_len {cfg.max_decode_len}")
    logits = decoder_logits(state.tensors(grad=False), np.asarray(node_repr)[None, :], target_len).data[0]
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def greedy(logits_or_probs: np.ndarray) -> list:
    """Argmax per step (lowest id wins ties), cut at the first PAD."""
    out = []
    for step in np.asarray(logits_or_probs):
        t = int(np.argmax(step))
        if t == PAD:
            break
        out.append(t)
    return out


def greedy_batch(logits: np.ndarray) -> list:
    return [greedy(row) for row in logits]


def target_ids(tokens: Sequence[int], steps: int) -> list:
    """Token ids truncated/padded with PAD to ``steps`` decoding positions."""
    ids = list(tokens)[:steps]
    return ids + [PAD] * (steps - len(ids))


def cross_entropy_loss(pred: np.ndarray, target: Sequence[int]) -> float:
    """Mean over steps of -ln p(target) for given per-step distributions."""
    pred = np.asarray(pred, dtype=np.float64)
    target = list(target)
    if pred.shape[0] != len(target):
        raise LengthMismatch(f"{pred.shape[0]} steps vs {len(target)} targets")
    with np.errstate(divide="ignore"):
        return float(-np.mean(np.log(pred[np.arange(len(target)), target])))


def config_dict(cfg: ModelConfig) -> dict:
    return asdict(cfg)


def graph_loss(p: dict, cfg: ModelConfig, node_ids: np.ndarray, adj, target_nodes, targets, stats=None, scale=None) -> Tensor:
    """Full path: encode every node sequence, propagate, decode targets, cross-entropy.

    ``targets`` is (len(target_nodes), steps) token ids, already PAD-filled;
    ``scale`` is an optional per-node input weight (see ``node_scale``).
    """
    x = encoder_forward(p, node_ids, cfg)
    if scale is not None:
        x = T.mul(x, Tensor(np.asarray(scale, dtype=np.float64)[:, None]))
    x = input_features(p, x, stats)
    h = gcn_forward(p, adj, x, cfg.gcn_layers)
    targets = np.asarray(targets)
    logits = decoder_logits(p, T.take(h, np.asarray(target_nodes)), targets.shape[1])
    return T.cross_entropy_logits(logits, targets)
