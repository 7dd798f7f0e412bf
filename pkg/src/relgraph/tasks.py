"""Three-task comparison of the row-only baseline, the GNN model and two ablations.

Runs share one split and vocabulary but draw their own seeds. A run fine-tunes
one phase-1 state and then trains each requested variant from it. Every variant is scored
on the test split for missing values, column names and table names.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import MissingCheckpoint, MissingVariant
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.model import ModelState
from .pretrain import TASKS, TrainConfig, derive_seed, evaluate_split, phase1_finetune, phase2_train_gnn, prepare
from .store import RelationalDatabase, corpus_fingerprint
from .tokenizer import Vocabulary

log = logging.getLogger(__name__)

TEXT_INIT, TABLE_TUNED = "text_init", "table_tuned"
TASK_LABELS = {"missing_values": "Missing Values", "column_names": "Column Names", "table_names": "Table Names"}


@dataclass(frozen=True)
class VariantSpec:
    name: str
    encoder_source: str
    decoder_source: str
    use_gnn: bool

    def __post_init__(self):
        for src in (self.encoder_source, self.decoder_source):
            if src not in (TEXT_INIT, TABLE_TUNED):
                raise ValueError(f"unknown parameter source {src!r}")

    @property
    def needs_phase1(self) -> bool:
        return TABLE_TUNED in (self.encoder_source, self.decoder_source)


VARIANTS = {
    "baseline": VariantSpec("baseline", TABLE_TUNED, TABLE_TUNED, False),
    "ours": VariantSpec("ours", TABLE_TUNED, TABLE_TUNED, True),
    "ablation_text_encoder": VariantSpec("ablation_text_encoder", TEXT_INIT, TABLE_TUNED, True),
    "ablation_text_encoder_decoder": VariantSpec("ablation_text_encoder_decoder", TEXT_INIT, TEXT_INIT, True),
}

# Reference accuracies (%) per corpus, variant and task.
REFERENCE = {
    "wikiTables": {
        "baseline": {"missing_values": 20.75, "column_names": 66.88, "table_names": 36.99},
        "ours": {"missing_values": 46.15, "column_names": 83.91, "table_names": 37.85},
        "ablation_text_encoder": {"missing_values": 37.24, "column_names": 63.77, "table_names": 37.24},
        "ablation_text_encoder_decoder": {"missing_values": 24.25, "column_names": 20.18, "table_names": 3.13},
    },
    "gitTables": {
        "baseline": {"missing_values": 21.65, "column_names": 46.63, "table_names": 59.71},
        "ours": {"missing_values": 52.63, "column_names": 90.04, "table_names": 52.63},
        "ablation_text_encoder": {"missing_values": 49.00, "column_names": 73.15, "table_names": 39.54},
        "ablation_text_encoder_decoder": {"missing_values": 35.32, "column_names": 24.45, "table_names": 11.78},
    },
}


def resolve_variants(names: Sequence[str] | str | None) -> list[VariantSpec]:
    if names is None:
        return list(VARIANTS.values())
    if isinstance(names, str):
        names = [n for n in names.split(",") if n.strip()]
    out = []
    for n in names:
        n = n.strip()
        if n not in VARIANTS:
            raise MissingVariant(n)
        out.append(VARIANTS[n])
    return out


# ----------------------------------------------------------------- one run


def run_config(config: TrainConfig, run: int) -> TrainConfig:
    """Seeds of run ``run``: model, mask and sample seeds vary with the run, the split does not."""
    return replace(
        config,
        model_seed=derive_seed(config.model_seed, 101, run),
        mask_seed=derive_seed(config.mask_seed, 102, run),
        sample_seed=derive_seed(config.sample_seed, 103, run),
    )


def compose_state(variant: VariantSpec, init: ModelState, tuned: Optional[ModelState]) -> ModelState:
    """Initial state of a variant: encoder and decoder blocks from their sources, GCN from init."""
    if variant.needs_phase1 and tuned is None:
        raise MissingCheckpoint(f"variant {variant.name} needs a phase-1 state")
    state = init.copy()
    source = {"enc.": variant.encoder_source, "dec.": variant.decoder_source}
    for k in state.params:
        for prefix, src in source.items():
            if k.startswith(prefix) and src == TABLE_TUNED:
                state.params[k] = tuned.params[k].copy()
    state.reset_optimizer()
    return state


@dataclass
class RunArtifacts:
    run: int
    config: TrainConfig
    vocab: Vocabulary
    phase1: Optional[ModelState]
    states: dict  # variant name -> state used for evaluation
    logs: list = field(default_factory=list)


def train_run(
    corpus: Sequence[RelationalDatabase],
    config: TrainConfig,
    variants: Sequence[VariantSpec],
    run: int,
    log_sink: Optional[Callable] = None,
) -> RunArtifacts:
    cfg = run_config(config, run)
    splits, vocab = prepare(corpus, cfg)
    logs = []

    def sink(record, variant):
        record = {"run": run, "variant": variant, **record}
        logs.append(record)
        if log_sink is not None:
            log_sink(record)

    init = ModelState.initialize(cfg.model_config(len(vocab)), cfg.model_seed)
    tuned = None
    if any(v.needs_phase1 for v in variants):
        tuned = phase1_finetune(cfg, splits.train, vocab, init, log_sink=lambda r: sink(r, "phase1"))
    states = {}
    for v in variants:
        state = compose_state(v, init, tuned)
        if v.use_gnn:
            state = phase2_train_gnn(cfg, splits.train, state, vocab, splits.val, log_sink=lambda r, n=v.name: sink(r, n))
        states[v.name] = state
    return RunArtifacts(run, cfg, vocab, tuned, states, logs)


def evaluate_run(corpus, config: TrainConfig, variants: Sequence[VariantSpec], run: int, states: dict, vocab=None) -> dict:
    """{variant: {task: accuracy}} on the test split of run ``run``."""
    cfg = run_config(config, run)
    splits, built = prepare(corpus, cfg)
    vocab = vocab or built
    out = {}
    for v in variants:
        if v.name not in states:
            raise MissingCheckpoint(f"no state for variant {v.name} in run {run}")
        out[v.name] = {t: evaluate_split(states[v.name], splits.test, t, vocab, cfg, use_gnn=v.use_gnn) for t in TASKS}
    return out


# ------------------------------------------------------------------ report


def config_hash(config: TrainConfig) -> str:
    return hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class TaskReport:
    variants: list
    tasks: list
    runs: dict  # variant -> task -> [accuracy per run]
    seeds: list  # per-run seed dicts
    corpus_fingerprint: str
    config_hash: str

    def mean(self, variant: str, task: str) -> float:
        if variant not in self.runs:
            raise MissingVariant(variant)
        vals = self.runs[variant][task]
        return float(sum(vals) / len(vals))

    def means(self) -> dict:
        return {v: {t: self.mean(v, t) for t in self.tasks} for v in self.variants}

    def to_dict(self) -> dict:
        return {
            "variants": list(self.variants),
            "tasks": list(self.tasks),
            "runs": self.runs,
            "mean": self.means(),
            "seeds": self.seeds,
            "corpus_fingerprint": self.corpus_fingerprint,
            "config_hash": self.config_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "TaskReport":
        return cls(d["variants"], d["tasks"], d["runs"], d["seeds"], d["corpus_fingerprint"], d["config_hash"])

    def to_text(self) -> str:
        """Aligned table: one row per variant, one column per task (mean accuracy in %)."""
        head = ["Approach"] + [TASK_LABELS.get(t, t) for t in self.tasks]
        rows = [[v] + [f"{100 * self.mean(v, t):.2f}" for t in self.tasks] for v in self.variants]
        widths = [max(len(r[i]) for r in [head] + rows) for i in range(len(head))]
        fmt = lambda r: "  ".join(c.ljust(w) if i == 0 else c.rjust(w) for i, (c, w) in enumerate(zip(r, widths)))  # noqa: E731
        lines = [fmt(head), "  ".join("-" * w for w in widths)] + [fmt(r) for r in rows]
        n = len(self.seeds)
        lines.append(f"mean exact-match accuracy over {n} run{'s' if n != 1 else ''}; corpus {self.corpus_fingerprint[:12]}")
        return "\n".join(lines) + "\n"


def assemble_report(results: Sequence[dict], variants, configs: Sequence[TrainConfig], corpus, base: TrainConfig) -> TaskReport:
    names = [v.name for v in variants]
    runs = {v: {t: [r[v][t] for r in results] for t in TASKS} for v in names}
    seeds = [{k: getattr(c, k) for k in ("model_seed", "mask_seed", "sample_seed", "split_seed")} for c in configs]
    return TaskReport(names, list(TASKS), runs, seeds, corpus_fingerprint(corpus), config_hash(base))


def _one_run(args):
    corpus, config, variants, run = args
    art = train_run(corpus, config, variants, run)
    return evaluate_run(corpus, config, variants, run, art.states, art.vocab), art.config


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get("RELGRAPH_THREADS", "1")))
    except ValueError:
        return 1


def run_benchmark(
    corpus: Sequence[RelationalDatabase],
    config: TrainConfig,
    variants: Optional[Sequence[VariantSpec]] = None,
    n_runs: Optional[int] = None,
) -> TaskReport:
    """Train and score every variant for ``n_runs`` runs (default ``config.n_runs``).

    Runs are independent; with ``RELGRAPH_THREADS`` > 1 they execute in
    worker processes. Results are assembled in run order either way, so the
    report does not depend on the worker count.
    """
    variants = list(variants) if variants is not None else list(VARIANTS.values())
    n_runs = config.n_runs if n_runs is None else n_runs
    if n_runs < 1:
        raise ValueError("n_runs must be positive")
    jobs = [(list(corpus), config, variants, r) for r in range(n_runs)]
    workers = min(worker_count(), n_runs)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            out = list(pool.map(_one_run, jobs))
    else:
        out = [_one_run(j) for j in jobs]
    return assemble_report([o[0] for o in out], variants, [o[1] for o in out], corpus, config)


# ------------------------------------------------------------ checkpoints


def run_dir(out_dir, run: int) -> Path:
    """Run 0 writes to ``out_dir`` itself, later runs to ``out_dir/run<k>``."""
    out_dir = Path(out_dir)
    return out_dir if run == 0 else out_dir / f"run{run}"


def checkpoint_name(variant: str) -> str:
    if variant == "baseline":
        return "phase1.ckpt"
    if variant == "ours":
        return "phase2-best.ckpt"
    return f"phase2-best-{variant}.ckpt"


def save_run(art: RunArtifacts, out_dir) -> Path:
    d = run_dir(out_dir, art.run)
    d.mkdir(parents=True, exist_ok=True)
    if art.phase1 is not None:
        save_checkpoint(art.phase1, d / "phase1.ckpt")
    for name, state in art.states.items():
        if name != "baseline":
            save_checkpoint(state, d / checkpoint_name(name))
    art.vocab.save(d / "vocab.txt")
    return d


def load_run_states(out_dir, run: int, variants: Sequence[VariantSpec]) -> tuple[dict, Vocabulary]:
    d = run_dir(out_dir, run)
    vocab_path = d / "vocab.txt"
    if not vocab_path.exists():
        raise MissingCheckpoint(str(vocab_path))
    states = {}
    for v in variants:
        path = d / checkpoint_name(v.name)
        if not path.exists():
            raise MissingCheckpoint(str(path))
        states[v.name] = load_checkpoint(path)
    return states, Vocabulary.load(vocab_path)


# ---------------------------------------------------------------- findings


@dataclass(frozen=True)
class DirectionalFinding:
    task: str
    baseline: float
    ours: float
    margin: float
    gnn_better: bool
    reference: dict  # corpus -> (baseline %, ours %)
    reference_reversed: tuple  # corpora where the reference baseline beats the GNN model
    agrees: bool
    note: str


def compare_to_paper(report: TaskReport) -> list[DirectionalFinding]:
    """Direction of GNN vs baseline per task, next to the reference direction.

    Reference numbers are context only. Where a reference corpus itself shows
    the baseline ahead, a reversal on that task is recorded without being
    counted as disagreement.
    """
    for v in ("baseline", "ours"):
        if v not in report.runs:
            raise MissingVariant(v)
    out = []
    for task in report.tasks:
        b, o = report.mean("baseline", task), report.mean("ours", task)
        ref = {c: (r["baseline"][task], r["ours"][task]) for c, r in REFERENCE.items()}
        reversed_in = tuple(c for c, (rb, ro) in ref.items() if rb > ro)
        better = o > b
        arrows = ", ".join(f"{c} {rb:.2f} -> {ro:.2f}" for c, (rb, ro) in ref.items())
        if better:
            agrees, note = True, f"agrees with reference direction ({arrows})"
        elif reversed_in:
            agrees, note = True, f"baseline ahead; the reference also shows a reversal on {', '.join(reversed_in)} ({arrows})"
        else:
            agrees, note = False, f"disagrees with reference direction ({arrows})"
        out.append(DirectionalFinding(task, b, o, o - b, better, ref, reversed_in, agrees, note))
    return out


def ablation_warnings(report: TaskReport, variant: str = "ablation_text_encoder") -> list[str]:
    """Tasks on which an untuned-encoder variant does not score below ``ours``."""
    if variant not in report.runs or "ours" not in report.runs:
        return []
    msgs = []
    for t in report.tasks:
        a, o = report.mean(variant, t), report.mean("ours", t)
        if a >= o:
            msgs.append(f"{variant} scores {a:.3f} >= ours {o:.3f} on {t}")
    for m in msgs:
        log.warning(m)
    return msgs


# ------------------------------------------------------- directory workflow


def pretrain_to_dir(
    corpus: Sequence[RelationalDatabase],
    config: TrainConfig,
    variants: Sequence[VariantSpec],
    out_dir,
    n_runs: Optional[int] = None,
    phases: Sequence[int] = (1, 2),
    log_sink: Optional[Callable] = None,
) -> list[Path]:
    """Train every run and write its checkpoints; returns the run directories.

    Phase 2 without phase 1 resumes from each run's stored ``phase1.ckpt``.
    """
    n_runs = config.n_runs if n_runs is None else n_runs
    dirs = []
    for run in range(n_runs):
        cfg = run_config(config, run)
        splits, vocab = prepare(corpus, cfg)
        d = run_dir(out_dir, run)
        d.mkdir(parents=True, exist_ok=True)
        vocab.save(d / "vocab.txt")

        def sink(record, variant, run=run):
            if log_sink is not None:
                log_sink({"run": run, "variant": variant, **record})

        init = ModelState.initialize(cfg.model_config(len(vocab)), cfg.model_seed)
        tuned = None
        if 1 in phases:
            tuned = phase1_finetune(cfg, splits.train, vocab, init, log_sink=lambda r: sink(r, "phase1"))
            save_checkpoint(tuned, d / "phase1.ckpt")
        if 2 in phases:
            if tuned is None and any(v.needs_phase1 and v.use_gnn for v in variants):
                path = d / "phase1.ckpt"
                if not path.exists():
                    raise MissingCheckpoint(str(path))
                tuned = load_checkpoint(path)
            for v in variants:
                if v.use_gnn:
                    state = phase2_train_gnn(cfg, splits.train, compose_state(v, init, tuned), vocab, splits.val,
                                             log_sink=lambda r, n=v.name: sink(r, n))
                    save_checkpoint(state, d / checkpoint_name(v.name))
        dirs.append(d)
    return dirs


def evaluate_from_dir(
    corpus: Sequence[RelationalDatabase],
    config: TrainConfig,
    variants: Sequence[VariantSpec],
    out_dir,
    n_runs: Optional[int] = None,
) -> TaskReport:
    n_runs = config.n_runs if n_runs is None else n_runs
    results, configs = [], []
    for run in range(n_runs):
        states, vocab = load_run_states(out_dir, run, variants)
        results.append(evaluate_run(corpus, config, variants, run, states, vocab))
        configs.append(run_config(config, run))
    return assemble_report(results, variants, configs, corpus, config)
