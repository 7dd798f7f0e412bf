"""Two-phase masked-reconstruction pre-training and split evaluation.

Phase 1 fine-tunes the sequence encoder and decoder on single rows with a
masked cell, column name or table name. Phase 2 freezes the encoder and trains
the GCN (and, unless frozen, the decoder) to reconstruct a masked target from
the representation of its graph node. The phase-2 checkpoint kept is the one
with the best mean validation accuracy.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .errors import (
    ConfigError,
    EmptySplit,
    EmptyTrainSplit,
    InvalidMaskSpec,
    MissingPhase1State,
)
from .graph import NodeFeatures, SchemaGraph, attach_features, build_graph, sample_subgraph
from .nn import tensor as T
from .nn.model import (
    EncoderHandle,
    ModelConfig,
    ModelState,
    decoder_logits,
    encoder_forward,
    gcn_forward,
    greedy_batch,
    input_features,
    node_scale,
    normalized_adjacency,
    pad_batch,
    target_ids,
)
from .nn.optim import adam_step, collect_grads
from .store import ForeignKey, RelationalDatabase
from .tokenizer import (
    CELL,
    COLUMN_NAME,
    TABLE_NAME,
    TARGET_KINDS,
    MaskSpec,
    Vocabulary,
    build_vocabulary,
    sample_mask_targets,
    sample_row_mask_targets,
    serialize_column,
    serialize_row,
    serialize_table,
    target_tokens,
)

log = logging.getLogger(__name__)

TASKS = {"missing_values": CELL, "column_names": COLUMN_NAME, "table_names": TABLE_NAME}


def derive_seed(*parts: int) -> int:
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


@dataclass
class TrainConfig:
    phase1_epochs: int = 10
    phase2_epochs: int = 40
    batch_size: int = 32
    lr_phase1: float = 1e-3
    lr_phase2: float = 3e-3
    phase1_rates: dict = field(default_factory=lambda: {"cell_rate": 0.5, "col_rate": 0.2, "tab_rate": 0.2})
    phase2_rates: dict = field(default_factory=lambda: {"cell_rate": 0.3, "col_rate": 1.0, "tab_rate": 1.0})
    eval_rates: dict = field(default_factory=lambda: {"cell_rate": 1.0, "col_rate": 1.0, "tab_rate": 1.0})
    d_model: int = 64
    n_enc: int = 2
    d_ff: int = 128
    max_seq_len: int = 64
    max_decode_len: int = 4
    gcn_layers: int = 2
    name_scale: float = 0.1
    fanout: Optional[list] = None  # None: full graph per sample
    stats_enabled: bool = False
    freeze_decoder: bool = False
    model_seed: int = 0
    mask_seed: int = 1
    sample_seed: int = 2
    split_seed: int = 0
    split_ratios: tuple = (0.7, 0.2, 0.1)
    split_by: str = "database"
    n_runs: int = 3
    min_freq: int = 1

    def validate(self) -> "TrainConfig":
        if abs(sum(self.split_ratios) - 1.0) > 1e-9 or len(self.split_ratios) != 3 or min(self.split_ratios) < 0:
            raise ConfigError("split_ratios must be three non-negative numbers summing to 1")
        for name in ("batch_size", "d_model", "max_seq_len", "max_decode_len", "n_runs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        for name in ("phase1_epochs", "phase2_epochs", "n_enc", "gcn_layers"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.split_by not in ("database", "table"):
            raise ConfigError("split_by must be 'database' or 'table'")
        return self

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(
            vocab_size=vocab_size,
            d_model=self.d_model,
            n_enc=self.n_enc,
            d_ff=self.d_ff,
            max_seq_len=self.max_seq_len,
            max_decode_len=self.max_decode_len,
            gcn_layers=self.gcn_layers,
            name_scale=self.name_scale,
            stats_dim=4 if self.stats_enabled else 0,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split_ratios"] = list(self.split_ratios)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        data = dict(data)
        if "split_ratios" in data:
            data["split_ratios"] = tuple(data["split_ratios"])
        return cls(**data).validate()


# --------------------------------------------------------------------- splits


class Splits(NamedTuple):
    train: list
    val: list
    test: list


def split_counts(n: int, ratios: Sequence[float]) -> list[int]:
    """Largest-remainder rounding of ``n * ratios``; counts sum to ``n``."""
    raw = [n * r for r in ratios]
    counts = [int(np.floor(x)) for x in raw]
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[: n - sum(counts)]:
        counts[i] += 1
    return counts


def _restrict(db: RelationalDatabase, names: set) -> RelationalDatabase:
    tables = tuple(t for t in db.tables if t.name in names)
    fks = tuple(f for f in db.foreign_keys if f.from_table in names and f.to_table in names)
    return RelationalDatabase(db.name, tables, fks, {t.name: db.rows.get(t.name, ()) for t in tables})


def split_corpus(corpus: Sequence[RelationalDatabase], ratios=(0.7, 0.2, 0.1), seed: int = 0, by: str = "database") -> Splits:
    """Assign whole databases (or whole tables) to train/val/test.

    With ``by="table"`` each split holds per-database restrictions to its
    tables, and foreign keys crossing split boundaries are dropped.
    """
    rng = np.random.default_rng(seed)
    if by == "database":
        units = list(range(len(corpus)))
    elif by == "table":
        units = [(i, t.name) for i, db in enumerate(corpus) for t in db.tables]
    else:
        raise ValueError("by must be 'database' or 'table'")
    perm = [units[i] for i in rng.permutation(len(units))]
    n_train, n_val, _ = split_counts(len(units), ratios)
    parts = [perm[:n_train], perm[n_train : n_train + n_val], perm[n_train + n_val :]]
    if by == "database":
        return Splits(*[[corpus[i] for i in sorted(p)] for p in parts])
    out = []
    for p in parts:
        chosen = {}
        for i, name in p:
            chosen.setdefault(i, set()).add(name)
        out.append([_restrict(corpus[i], chosen[i]) for i in sorted(chosen)])
    return Splits(*out)


def split_table_sets(splits: Splits) -> list[set]:
    return [{(db.name, t.name) for db in part for t in db.tables} for part in splits]


# -------------------------------------------------------------------- samples


def target_id_list(db: RelationalDatabase, spec: MaskSpec, vocab: Vocabulary, steps: int) -> list[int]:
    return target_ids(vocab.ids(target_tokens(db, spec)), steps)


def row_sample(db: RelationalDatabase, spec: MaskSpec, vocab: Vocabulary, max_seq_len: int):
    """Row-only masked serialization for ``spec``; name targets without a row use row 0."""
    rows = db.rows.get(spec.table, ())
    if not rows:
        if spec.target == TABLE_NAME:
            return serialize_table(db, spec.table, vocab, masked=True)
        if spec.target == COLUMN_NAME:
            return serialize_column(db, spec.table, spec.column, vocab, mask_column=True)
        raise InvalidMaskSpec(f"table {spec.table!r} has no rows")
    row = spec.row if spec.row is not None else 0
    return serialize_row(db, spec.table, row, vocab, max_seq_len, mask=spec)


@dataclass
class GraphContext:
    """Per-database graph, normalized adjacency and unmasked node features."""

    db: RelationalDatabase
    graph: SchemaGraph
    adj: sp.csr_matrix
    features: NodeFeatures
    scale: np.ndarray  # per-node GCN input weight
    cache: dict = field(default_factory=dict)


def graph_context(db: RelationalDatabase, encoder: EncoderHandle, stats_enabled: bool = False) -> GraphContext:
    graph = build_graph(db)
    feats = attach_features(graph, db, encoder, stats_enabled)
    scale = node_scale([n.kind for n in graph.nodes], encoder.state.config.name_scale)
    return GraphContext(db, graph, normalized_adjacency(graph.edge_index, graph.num_nodes), feats, scale)


def affected_sequences(db: RelationalDatabase, graph: SchemaGraph, spec: MaskSpec, vocab: Vocabulary, max_seq_len: int):
    """(target node, [(node id, masked TokenSequence), ...]) for one mask target."""
    t = spec.table
    try:
        tdef = db.table(t)
        if spec.column is not None:
            tdef.column_index(spec.column)
    except KeyError as exc:
        raise InvalidMaskSpec(str(exc)) from exc
    nrows = len(db.rows.get(t, ()))
    if spec.target == CELL:
        if spec.row is None or not 0 <= spec.row < nrows or spec.column is None:
            raise InvalidMaskSpec(f"cell mask needs a valid row and column: {spec}")
        node = graph.row_node[(t, spec.row)]
        return node, [(node, serialize_row(db, t, spec.row, vocab, max_seq_len, mask=spec))]
    if spec.target == COLUMN_NAME:
        if spec.column is None:
            raise InvalidMaskSpec("column-name mask needs a column")
        node = graph.column_node[(t, spec.column)]
        out = [(node, serialize_column(db, t, spec.column, vocab, mask_column=True))]
        for r in range(nrows):
            out.append((graph.row_node[(t, r)], serialize_row(db, t, r, vocab, max_seq_len, mask_column_names=[spec.column])))
        return node, out
    if spec.target == TABLE_NAME:
        node = graph.table_node[t]
        out = [(node, serialize_table(db, t, vocab, masked=True))]
        for c in tdef.columns:
            out.append((graph.column_node[(t, c.name)], serialize_column(db, t, c.name, vocab, mask_table=True)))
        for r in range(nrows):
            out.append((graph.row_node[(t, r)], serialize_row(db, t, r, vocab, max_seq_len, mask_table_name=True)))
        return node, out
    raise InvalidMaskSpec(f"unknown target kind {spec.target!r}")


def _masked_rows(ctx: GraphContext, spec: MaskSpec, encoder: EncoderHandle):
    key = spec.target, spec.table, spec.row, spec.column
    hit = ctx.cache.get(key)
    if hit is None:
        node, seqs = affected_sequences(ctx.db, ctx.graph, spec, encoder.vocab, encoder.max_seq_len)
        ids = np.array([n for n, _ in seqs], dtype=np.int64)
        hit = ctx.cache[key] = (node, ids, encoder.encode_batch([s for _, s in seqs]))
    return hit


def materialize_graph_sample(db, graph, spec: MaskSpec, encoder: EncoderHandle, base: Optional[NodeFeatures] = None, stats_enabled: bool = False):
    """Masked node features, target node id and target token ids for one spec."""
    if base is None:
        base = attach_features(graph, db, encoder, stats_enabled)
    node, seqs = affected_sequences(db, graph, spec, encoder.vocab, encoder.max_seq_len)
    feats = base.copy()
    vecs = encoder.encode_batch([s for _, s in seqs])
    feats.x[[n for n, _ in seqs]] = vecs
    return feats, node, encoder.vocab.ids(target_tokens(db, spec))


class _Batch(NamedTuple):
    adj: sp.csr_matrix
    x: np.ndarray
    stats: Optional[np.ndarray]
    targets: np.ndarray  # node index of each sample's target in the union graph
    labels: np.ndarray  # (B, steps)


def _assemble(items, encoder: EncoderHandle, steps: int, fanout=None, sample_seed: int = 0) -> _Batch:
    """Block-diagonal union of the masked graphs of ``items`` = [(ctx, spec), ...]."""
    blocks, xs, stats, targets, labels = [], [], [], [], []
    offset = 0
    for k, (ctx, spec) in enumerate(items):
        node, ids, vecs = _masked_rows(ctx, spec, encoder)
        x = ctx.features.x.copy()
        x[ids] = vecs
        x *= ctx.scale[:, None]
        st = ctx.features.stats
        if fanout is None:
            adj, local_target = ctx.adj, node
        else:
            sub = sample_subgraph(ctx.graph, node, fanout, derive_seed(sample_seed, k, node))
            adj = normalized_adjacency(sub.edge_index, len(sub.nodes), sub.degree)
            x = x[sub.nodes]
            st = None if st is None else st[sub.nodes]
            local_target = 0
        blocks.append(adj)
        xs.append(x)
        if st is not None:
            stats.append(st)
        targets.append(offset + local_target)
        offset += x.shape[0]
        labels.append(target_id_list(ctx.db, spec, encoder.vocab, steps))
    return _Batch(
        sp.block_diag(blocks, format="csr"),
        np.concatenate(xs),
        np.concatenate(stats) if stats else None,
        np.array(targets),
        np.array(labels, dtype=np.int64),
    )


def _gnn_logits(p: dict, state: ModelState, batch: _Batch) -> T.Tensor:
    x = input_features(p, batch.x, batch.stats)
    h = gcn_forward(p, batch.adj, x, state.config.gcn_layers)
    return decoder_logits(p, T.take(h, batch.targets), batch.labels.shape[1])


def _row_logits(p: dict, state: ModelState, seqs) -> T.Tensor:
    ids = pad_batch(seqs, state.config.max_seq_len)
    return decoder_logits(p, encoder_forward(p, ids, state.config), state.config.max_decode_len)


# -------------------------------------------------------------------- phase 1


def _log_epoch(sink, record):
    if sink is not None:
        sink(record)
    log.debug(json.dumps(record, sort_keys=True))


def phase1_finetune(
    config: TrainConfig,
    corpus: Sequence[RelationalDatabase],
    vocab: Vocabulary,
    state: Optional[ModelState] = None,
    log_sink: Optional[Callable] = None,
) -> ModelState:
    """Fine-tune encoder + decoder on row-level masked reconstruction."""
    if not corpus or not any(db.n_rows for db in corpus):
        raise EmptyTrainSplit("phase 1 needs at least one training row")
    if state is None:
        state = ModelState.initialize(config.model_config(len(vocab)), config.model_seed)
    else:
        state = state.copy()
    state.frozen = frozenset({"gcn"})
    steps = state.config.max_decode_len
    for epoch in range(config.phase1_epochs):
        t0 = time.perf_counter()
        samples = []
        for i, db in enumerate(corpus):
            for spec in sample_row_mask_targets(db, config.phase1_rates, derive_seed(config.mask_seed, 1, epoch, i)):
                samples.append((row_sample(db, spec, vocab, config.max_seq_len), target_id_list(db, spec, vocab, steps)))
        order = np.random.default_rng(derive_seed(config.mask_seed, 11, epoch)).permutation(len(samples))
        losses = []
        for s in range(0, len(order), config.batch_size):
            chunk = [samples[j] for j in order[s : s + config.batch_size]]
            p = state.tensors()
            logits = _row_logits(p, state, [c[0] for c in chunk])
            loss = T.cross_entropy_logits(logits, np.array([c[1] for c in chunk]))
            loss.backward()
            adam_step(state, collect_grads(p), lr=config.lr_phase1)
            losses.append((float(loss.data), len(chunk)))
        mean = sum(l * n for l, n in losses) / max(1, sum(n for _, n in losses))
        _log_epoch(log_sink, {"phase": 1, "epoch": epoch, "train_loss": mean, "val_accuracy": None,
                              "wall_time": time.perf_counter() - t0})
    state.frozen = frozenset()
    return state


# -------------------------------------------------------------------- phase 2


def encoder_hash(state: ModelState) -> str:
    import hashlib

    h = hashlib.sha256()
    for k, a in state.params.items():
        if k.startswith("enc."):
            h.update(k.encode())
            h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def phase2_train_gnn(
    config: TrainConfig,
    corpus: Sequence[RelationalDatabase],
    state: Optional[ModelState],
    vocab: Vocabulary,
    val_corpus: Sequence[RelationalDatabase] = (),
    freeze: Sequence[str] = ("encoder",),
    log_sink: Optional[Callable] = None,
) -> ModelState:
    """Train the GCN (+ decoder) on graph-level masked-node reconstruction.

    Returns the state of the epoch with the best mean validation accuracy
    (the final state when there is no validation data).
    """
    if state is None:
        raise MissingPhase1State("phase 2 starts from a phase-1 state")
    if not corpus:
        raise EmptyTrainSplit("phase 2 needs training databases")
    state = state.copy()
    frozen = set(freeze) | {"encoder"}
    if config.freeze_decoder:
        frozen.add("decoder")
    state.frozen = frozenset(frozen)
    state.reset_optimizer()
    encoder = EncoderHandle(state, vocab)
    steps = state.config.max_decode_len
    contexts = [graph_context(db, encoder, config.stats_enabled) for db in corpus]
    val_contexts = [graph_context(db, encoder, config.stats_enabled) for db in val_corpus]

    best, best_acc = state.copy(), -1.0
    for epoch in range(config.phase2_epochs):
        t0 = time.perf_counter()
        items = []
        for i, ctx in enumerate(contexts):
            for spec in sample_mask_targets(ctx.db, config.phase2_rates, derive_seed(config.mask_seed, 2, epoch, i)):
                items.append((ctx, spec))
        order = np.random.default_rng(derive_seed(config.mask_seed, 22, epoch)).permutation(len(items))
        losses = []
        for s in range(0, len(order), config.batch_size):
            chunk = [items[j] for j in order[s : s + config.batch_size]]
            batch = _assemble(chunk, encoder, steps, config.fanout, derive_seed(config.sample_seed, epoch, s))
            p = state.tensors()
            loss = T.cross_entropy_logits(_gnn_logits(p, state, batch), batch.labels)
            loss.backward()
            adam_step(state, collect_grads(p), lr=config.lr_phase2)
            losses.append((float(loss.data), len(chunk)))
        mean = sum(l * n for l, n in losses) / max(1, sum(n for _, n in losses))
        val = {}
        if val_contexts:
            val = {task: _accuracy_gnn(state, val_contexts, kind, encoder, config) for task, kind in TASKS.items()}
            score = float(np.mean(list(val.values())))
            if score > best_acc:
                best, best_acc = state.copy(), score
        else:
            best = state.copy()
        _log_epoch(log_sink, {"phase": 2, "epoch": epoch, "train_loss": mean, "val_accuracy": val or None,
                              "wall_time": time.perf_counter() - t0})
    best.frozen = frozenset()
    return best


# ----------------------------------------------------------------- evaluation


def eval_targets(dbs: Sequence[RelationalDatabase], kind: str, rates: dict, seed: int) -> list:
    """(db index, spec) pairs of one target kind, drawn with ``rates``."""
    key = {CELL: "cell_rate", COLUMN_NAME: "col_rate", TABLE_NAME: "tab_rate"}[kind]
    only = {"cell_rate": 0.0, "col_rate": 0.0, "tab_rate": 0.0, key: rates.get(key, 1.0)}
    out = []
    for i, db in enumerate(dbs):
        out.extend((i, s) for s in sample_mask_targets(db, only, derive_seed(seed, 3, i)))
    return out


def _exact(pred: list, label: Sequence[int]) -> bool:
    return pred == [t for t in label if t != 0]


def _accuracy_gnn(state, contexts, kind, encoder, config, chunk: int = 128) -> float:
    targets = eval_targets([c.db for c in contexts], kind, config.eval_rates, config.mask_seed)
    if not targets:
        return float("nan")
    p = state.tensors(grad=False)
    hits = 0
    for s in range(0, len(targets), chunk):
        items = [(contexts[i], spec) for i, spec in targets[s : s + chunk]]
        batch = _assemble(items, encoder, state.config.max_decode_len, config.fanout, derive_seed(config.sample_seed, 99, s))
        preds = greedy_batch(_gnn_logits(p, state, batch).data)
        hits += sum(_exact(pr, lab) for pr, lab in zip(preds, batch.labels.tolist()))
    return hits / len(targets)


def _accuracy_rows(state, dbs, kind, vocab, config, chunk: int = 256) -> float:
    targets = eval_targets(dbs, kind, config.eval_rates, config.mask_seed)
    if not targets:
        return float("nan")
    p = state.tensors(grad=False)
    steps = state.config.max_decode_len
    hits = 0
    for s in range(0, len(targets), chunk):
        part = targets[s : s + chunk]
        seqs = [row_sample(dbs[i], spec, vocab, config.max_seq_len) for i, spec in part]
        labels = [target_id_list(dbs[i], spec, vocab, steps) for i, spec in part]
        preds = greedy_batch(_row_logits(p, state, seqs).data)
        hits += sum(_exact(pr, lab) for pr, lab in zip(preds, labels))
    return hits / len(targets)


def evaluate_split(
    state: ModelState,
    split: Sequence[RelationalDatabase],
    task: str,
    vocab: Vocabulary,
    config: Optional[TrainConfig] = None,
    use_gnn: bool = True,
) -> float:
    """Exact-match reconstruction accuracy of one task on a split.

    ``task`` is one of ``missing_values``, ``column_names``, ``table_names``
    (or the raw target kinds). With ``use_gnn=False`` the row-only path is
    used: encoder, then decoder, without graph propagation.
    """
    if not split:
        raise EmptySplit("cannot evaluate an empty split")
    config = config or TrainConfig()
    kind = TASKS.get(task, task)
    if kind not in TARGET_KINDS:
        raise ValueError(f"unknown task {task!r}")
    if use_gnn:
        encoder = EncoderHandle(state, vocab)
        contexts = [graph_context(db, encoder, config.stats_enabled) for db in split]
        acc = _accuracy_gnn(state, contexts, kind, encoder, config)
    else:
        acc = _accuracy_rows(state, split, kind, vocab, config)
    if np.isnan(acc):
        raise EmptySplit(f"split has no {kind} targets")
    return acc


def prepare(corpus: Sequence[RelationalDatabase], config: TrainConfig):
    """Split the corpus and build the vocabulary over the training split."""
    splits = split_corpus(corpus, config.split_ratios, config.split_seed, config.split_by)
    if not splits.train:
        raise EmptyTrainSplit("training split is empty")
    return splits, build_vocabulary(splits.train, config.min_freq)
