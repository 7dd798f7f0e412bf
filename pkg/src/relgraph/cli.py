"""``relgraph`` command-line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from .errors import ConfigError, IoError, MissingVariant, RelgraphError
from .graph import build_graph, export_graph
from .pretrain import TrainConfig
from .store import corpus_fingerprint, ensure_dir_writable, load_corpus, load_database, save_corpus
from .synthetic import SynthSpec, generate_synthetic_corpus
from .tasks import ablation_warnings, compare_to_paper, evaluate_from_dir, pretrain_to_dir, resolve_variants

log = logging.getLogger("relgraph")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2
LOCK_NAME = ".relgraph.lock"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ config


@dataclass
class RunConfig:
    corpus: Optional[str] = None
    out: Optional[str] = None
    variants: list = field(default_factory=lambda: ["baseline", "ours", "ablation_text_encoder", "ablation_text_encoder_decoder"])
    train: TrainConfig = field(default_factory=TrainConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("run config must be a JSON object")
        own = {"corpus", "out", "variants"}
        train_keys = {f.name for f in fields(TrainConfig)}
        unknown = set(data) - own - train_keys
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        variants = data.get("variants", cls().variants)
        if isinstance(variants, str):
            variants = [v.strip() for v in variants.split(",") if v.strip()]
        _check_variants(variants)
        train = TrainConfig.from_dict({k: v for k, v in data.items() if k in train_keys})
        return cls(data.get("corpus"), data.get("out"), list(variants), train)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc

    def to_dict(self) -> dict:
        return {"corpus": self.corpus, "out": self.out, "variants": self.variants, **self.train.to_dict()}


def _check_variants(names) -> None:
    try:
        resolve_variants(names)
    except MissingVariant as exc:
        raise ConfigError(f"unknown variant {exc.args[0]!r}") from exc


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"expected comma-separated integers, got {text!r}") from exc


def resolve_run_config(args) -> RunConfig:
    """Config file (if any) with command-line flags applied on top."""
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    if getattr(args, "corpus", None):
        cfg.corpus = args.corpus
    if getattr(args, "out", None):
        cfg.out = args.out
    if getattr(args, "variants", None):
        cfg.variants = [v.strip() for v in args.variants.split(",") if v.strip()]
        _check_variants(cfg.variants)
    over = {}
    for flag, key in (("runs", "n_runs"), ("phase1_epochs", "phase1_epochs"), ("phase2_epochs", "phase2_epochs"),
                      ("seed", "model_seed"), ("split_seed", "split_seed")):
        val = getattr(args, flag, None)
        if val is not None:
            over[key] = val
    if getattr(args, "stats", False):
        over["stats_enabled"] = True
    if getattr(args, "freeze_decoder", False):
        over["freeze_decoder"] = True
    if getattr(args, "fanout", None):
        over["fanout"] = _int_list(args.fanout)
    if over:
        cfg.train = TrainConfig.from_dict({**cfg.train.to_dict(), **over})
    if cfg.corpus is None:
        raise ConfigError("no corpus directory given (config key 'corpus' or --corpus)")
    if cfg.out is None:
        raise ConfigError("no output directory given (config key 'out' or --out)")
    return cfg


@contextmanager
def output_lock(directory):
    """Exclusive lock file so two processes never write one output directory."""
    directory = ensure_dir_writable(directory)
    path = directory / LOCK_NAME
    try:
        fd = os.open(path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError as exc:
        raise IoError(f"{directory} is locked by another run (remove {path} if stale)") from exc
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield directory
    finally:
        path.unlink(missing_ok=True)


# ---------------------------------------------------------------- commands


def cmd_gen_synthetic(args) -> int:
    spec = SynthSpec(
        n_databases=args.databases,
        tables_per_db=tuple(_int_list(args.tables)),
        rows=tuple(_int_list(args.rows)),
        cols=tuple(_int_list(args.cols)),
        vocab_size=args.vocab_size,
        fk_density=args.fk_density,
        alt_rate=args.alt_rate,
        seed=args.seed,
    )
    corpus = generate_synthetic_corpus(spec)
    out = ensure_dir_writable(args.out)
    save_corpus(corpus, out)
    print(f"wrote {len(corpus)} databases to {out} (fingerprint {corpus_fingerprint(corpus)[:12]})")
    return EXIT_OK


def _load_any(path) -> list:
    path = Path(path)
    if path.is_file():
        return [load_database(path)]
    return load_corpus(path)


def cmd_ingest_validate(args) -> int:
    corpus = _load_any(args.path)
    for db in corpus:
        print(f"{db.name}: {len(db.tables)} tables, {db.n_rows} rows, {len(db.foreign_keys)} foreign keys")
    print(f"ok: {len(corpus)} database(s) valid")
    return EXIT_OK


def _pick(corpus, name):
    if name is None:
        return corpus
    hit = [db for db in corpus if db.name == name]
    if not hit:
        raise ConfigError(f"no database named {name!r}")
    return hit


def cmd_build_graph(args) -> int:
    summary = []
    for db in _pick(_load_any(args.path), args.db):
        g = build_graph(db)
        counts = {}
        for e in g.edges:
            counts[e.etype] = counts.get(e.etype, 0) + 1
        kinds = {}
        for n in g.nodes:
            kinds[n.kind] = kinds.get(n.kind, 0) + 1
        # stored edges are symmetric pairs; report undirected counts
        summary.append({"database": db.name, "nodes": g.num_nodes, "node_kinds": kinds,
                        "edges": {k: v // 2 for k, v in sorted(counts.items())}})
    text = json.dumps(summary, indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_export_graph(args) -> int:
    out = ensure_dir_writable(args.out)
    for db in _pick(_load_any(args.path), args.db):
        edges, nodes = export_graph(build_graph(db))
        (out / f"{db.name}.edges.txt").write_text(edges, encoding="utf-8")
        (out / f"{db.name}.nodes.txt").write_text(nodes, encoding="utf-8")
        print(f"exported {db.name}")
    return EXIT_OK


def cmd_pretrain(args) -> int:
    cfg = resolve_run_config(args)
    variants = resolve_variants(cfg.variants)
    phases = (1, 2) if args.phase == "all" else (int(args.phase),)
    corpus = load_corpus(cfg.corpus)
    with output_lock(cfg.out) as out:
        (out / "run_config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
        with open(out / "train_log.jsonl", "a" if phases == (2,) else "w", encoding="utf-8") as logf:
            def sink(record):
                logf.write(json.dumps(record, sort_keys=True) + "\n")
                logf.flush()
                if args.verbose:
                    print(json.dumps(record, sort_keys=True))

            dirs = pretrain_to_dir(corpus, cfg.train, variants, out, cfg.train.n_runs, phases, sink)
    print(f"trained {len(dirs)} run(s); checkpoints in {cfg.out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = resolve_run_config(args)
    variants = resolve_variants(cfg.variants)
    corpus = load_corpus(cfg.corpus)
    with output_lock(cfg.out) as out:
        report = evaluate_from_dir(corpus, cfg.train, variants, out, cfg.train.n_runs)
        (out / "report.json").write_text(report.to_json(), encoding="utf-8")
        (out / "report.txt").write_text(report.to_text(), encoding="utf-8")
    sys.stdout.write(report.to_text())
    if "baseline" in report.runs and "ours" in report.runs:
        for f in compare_to_paper(report):
            print(f"{f.task}: ours - baseline = {100 * f.margin:+.2f} points; {f.note}")
    for msg in ablation_warnings(report):
        print(f"warning: {msg}")
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _run_flags(p):
    p.add_argument("--config", help="JSON run config; flags override its values")
    p.add_argument("--corpus", help="corpus directory")
    p.add_argument("--out", help="output directory")
    p.add_argument("--variants", help="comma-separated variant names")
    p.add_argument("--runs", type=int, help="number of runs (seeds)")
    p.add_argument("--seed", type=int, help="base model seed")
    p.add_argument("--split-seed", dest="split_seed", type=int, help="base split seed")
    p.add_argument("--fanout", help="per-hop neighbor caps, e.g. 10,5")
    p.add_argument("--stats", action="store_true", help="enable the column statistics channel")
    p.add_argument("--freeze-decoder", dest="freeze_decoder", action="store_true", help="keep the decoder frozen in phase 2")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="relgraph", description=__doc__.splitlines()[0])
    parser.add_argument("--log-level", default="WARNING", help="logging level (default WARNING)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-synthetic", help="write a seeded synthetic corpus")
    g.add_argument("--databases", type=int, default=50)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--tables", default="2,4", help="min,max tables per database")
    g.add_argument("--rows", default="5,20", help="min,max rows per table")
    g.add_argument("--cols", default="5,7", help="min,max columns of tables without a parent")
    g.add_argument("--vocab-size", dest="vocab_size", type=int, default=6)
    g.add_argument("--fk-density", dest="fk_density", type=float, default=1.0)
    g.add_argument("--alt-rate", dest="alt_rate", type=float, default=0.3)
    g.set_defaults(func=cmd_gen_synthetic)

    v = sub.add_parser("ingest-validate", help="load and validate a manifest or corpus directory")
    v.add_argument("path")
    v.set_defaults(func=cmd_ingest_validate)

    b = sub.add_parser("build-graph", help="print node and edge counts of schema graphs")
    b.add_argument("path")
    b.add_argument("--db", help="only this database")
    b.add_argument("--out", help="write the JSON summary here instead of stdout")
    b.set_defaults(func=cmd_build_graph)

    x = sub.add_parser("export-graph", help="write edge lists and node tables for debugging")
    x.add_argument("path")
    x.add_argument("--db", help="only this database")
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_graph)

    p = sub.add_parser("pretrain", help="phase-1 and phase-2 training")
    _run_flags(p)
    p.add_argument("--phase", choices=("1", "2", "all"), default="all")
    p.add_argument("--phase1-epochs", dest="phase1_epochs", type=int)
    p.add_argument("--phase2-epochs", dest="phase2_epochs", type=int)
    p.add_argument("-v", "--verbose", action="store_true", help="echo epoch logs")
    p.set_defaults(func=cmd_pretrain)

    e = sub.add_parser("evaluate", help="score stored checkpoints on the three tasks")
    _run_flags(e)
    e.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except RelgraphError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
