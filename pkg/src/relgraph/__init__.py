"""Relational-database representation learning: schema graphs, a small
sequence encoder, GCN propagation and masked-reconstruction benchmarks."""

from .errors import RelgraphError
from .graph import SchemaGraph, attach_features, build_graph, sample_subgraph
from .pretrain import TrainConfig, evaluate_split, phase1_finetune, phase2_train_gnn, split_corpus
from .store import RelationalDatabase, load_corpus, load_database, save_corpus, save_database
from .synthetic import SynthSpec, generate_synthetic_corpus
from .tasks import TaskReport, VariantSpec, compare_to_paper, run_benchmark
from .tokenizer import MaskSpec, Vocabulary, build_vocabulary, serialize_row

__version__ = "0.1.0"
