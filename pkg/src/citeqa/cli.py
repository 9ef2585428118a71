"""Command-line interface: ingest, build-graph, train, retrieve, answer, eval.

Each command reads the shared config file, acquires an advisory lock on the
cache directory, writes its artifact(s) there, and prints a short summary.
Exit codes: 0 success, 1 domain error (missing stage, stale cache, pipeline
failure), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import fcntl
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

from . import corpus as corpus_mod
from . import encoder as enc
from . import evaluation as eval_mod
from . import graph as graph_mod
from . import retrieval as retrieval_mod
from . import sparse as sparse_mod
from . import training as training_mod
from .config import RunConfig, parse_config
from .dense import CachedEmbedder, HashingEmbedder, RemoteEmbedder
from .errors import CiteqaError, ConfigError, StageError
from .indexes import build_indexes
from .llm import RemoteChatClient, load_mock_script
from .pipeline import answer_pipeline, save_answer_record

logger = logging.getLogger(__name__)


class Paths:
    def __init__(self, config: RunConfig):
        root = Path(config.cache_dir)
        self.root = root
        self.chunks = root / "chunks.json"
        self.sparse_index = root / "sparse_index.json"
        self.embeddings = root / "embeddings.json"
        self.graph = root / "graph.json"
        self.checkpoint = root / "checkpoint.bin"
        self.history = root / "history.csv"
        self.retrieval = root / "retrieval.jsonl"
        self.retrieval_meta = root / "retrieval.meta.json"
        self.answer = root / "answer.json"
        self.report_json = root / "eval_report.json"
        self.report_csv = root / "eval_report.csv"


@contextmanager
def cache_lock(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    fd = os.open(root / ".lock", os.O_CREAT | os.O_RDWR)
    try:
        fcntl.flock(fd, fcntl.LOCK_EX)
        yield
    finally:
        fcntl.flock(fd, fcntl.LOCK_UN)
        os.close(fd)


def make_provider(config: RunConfig):
    if config.dense_provider == "hash":
        return HashingEmbedder(dimension=config.dense_dim, seed=config.seed, normalize=config.dense_normalize)
    return RemoteEmbedder(
        endpoint=config.dense_endpoint,
        model=config.dense_model,
        dimension=config.dense_dim,
        normalize=config.dense_normalize,
    )


def make_lm_client(config: RunConfig):
    if config.lm_kind == "none":
        return None
    if config.lm_kind == "mock":
        if not config.lm_script:
            raise ConfigError("lm.script: a script file is required for the mock client")
        return load_mock_script(config.lm_script)
    return RemoteChatClient(endpoint=config.lm_endpoint, model=config.lm_model)


def expected_provenance(config: RunConfig, corpus: corpus_mod.Corpus, provider) -> graph_mod.GraphProvenance:
    return graph_mod.GraphProvenance(
        corpus_hash=corpus.content_hash(),
        chunk_len=config.chunk_len,
        top_n=config.context_top_n,
        k1=config.k1,
        b=config.b,
        dense_provider_id=provider.provider_id,
    )


def init_params_from(config: RunConfig) -> enc.EncoderParams:
    return enc.init_params(
        variant=config.encoder_variant,
        embed_dim=config.dense_dim,
        hidden_dim=config.encoder_hidden,
        n_layers=config.encoder_layers,
        heads=config.encoder_heads,
        activation=config.encoder_activation,
        pos_map=config.pos_map,
        seed=config.seed,
    )


def load_assets(config: RunConfig, paths: Paths):
    """Load every artifact retrieval depends on, or name the missing stage."""
    corpus = corpus_mod.load_corpus(config.corpus)
    if not paths.chunks.exists():
        raise StageError("chunk store not found; run `citeqa ingest` first")
    chunks, meta = corpus_mod.load_chunk_store(paths.chunks)
    if meta["corpus_hash"] != corpus.content_hash() or meta["chunk_len"] != config.chunk_len:
        raise StageError("chunk store is stale for this corpus/config; rerun `citeqa ingest`")
    if not paths.sparse_index.exists() or not paths.graph.exists():
        raise StageError("contextual graph cache not found; run `citeqa build-graph` first")
    index = sparse_mod.load_index(paths.sparse_index)
    provider = CachedEmbedder(make_provider(config), paths.embeddings)
    graph = graph_mod.cache_load(paths.graph, expected_provenance(config, corpus, provider))
    indexes = build_indexes(chunks, index, provider)
    return corpus, chunks, index, provider, indexes, graph


def load_params(config: RunConfig, paths: Paths) -> tuple[enc.EncoderParams, str]:
    if paths.checkpoint.exists():
        return enc.load_checkpoint(paths.checkpoint), "checkpoint"
    return init_params_from(config), "fresh (untrained; run `citeqa train` for a checkpoint)"


# ---------------------------------------------------------------------------
# commands


def cmd_ingest(config: RunConfig, paths: Paths, args) -> int:
    corpus = corpus_mod.load_corpus(config.corpus)
    corpus_hash = corpus.content_hash()
    if paths.chunks.exists():
        try:
            _, meta = corpus_mod.load_chunk_store(paths.chunks)
            if meta["corpus_hash"] == corpus_hash and meta["chunk_len"] == config.chunk_len:
                print(f"ingest: up to date ({paths.chunks})")
                return 0
        except CiteqaError:
            pass  # unreadable store: rebuild it
    chunks, warnings = corpus_mod.chunk_corpus(corpus, config.chunk_len)
    corpus_mod.save_chunk_store(
        paths.chunks, chunks, corpus_hash=corpus_hash, max_tokens=config.chunk_len, config_echo=config.to_dict()
    )
    for warning in corpus.warnings + warnings:
        print(f"warning: {warning}", file=sys.stderr)
    print(f"ingest: {len(corpus.documents)} documents -> {len(chunks)} chunks ({paths.chunks})")
    return 0


def cmd_build_graph(config: RunConfig, paths: Paths, args) -> int:
    corpus = corpus_mod.load_corpus(config.corpus)
    if not paths.chunks.exists():
        raise StageError("chunk store not found; run `citeqa ingest` first")
    chunks, meta = corpus_mod.load_chunk_store(paths.chunks)
    if meta["corpus_hash"] != corpus.content_hash() or meta["chunk_len"] != config.chunk_len:
        raise StageError("chunk store is stale for this corpus/config; rerun `citeqa ingest`")
    index = sparse_mod.fit(chunks, k1=config.k1, b=config.b)
    sparse_mod.save_index(index, paths.sparse_index)
    provider = CachedEmbedder(make_provider(config), paths.embeddings)
    indexes = build_indexes(chunks, index, provider)
    provider.save()
    graph = graph_mod.build_contextual_graph(
        corpus, chunks, indexes, config.context_top_n, chunk_len=config.chunk_len
    )
    graph_mod.cache_save(graph, paths.graph)
    if args.export_edges:
        graph_mod.export_edges_text(graph, args.export_edges)
    print(
        f"build-graph: {graph.n_nodes} nodes, {len(graph.edges)} edges "
        f"(vocab {index.vocab_size}) -> {paths.graph}"
    )
    return 0


def cmd_train(config: RunConfig, paths: Paths, args) -> int:
    corpus, chunks, index, provider, indexes, graph = load_assets(config, paths)
    items = eval_mod.load_qa_dataset(args.dataset)
    dataset = []
    skipped = 0
    for item in items:
        if item.gold_chunks:
            dataset.append(training_mod.LabeledQuery(item.question, item.gold_chunks[0]))
        else:
            skipped += 1
    if skipped:
        print(f"warning: skipped {skipped} items without chunk-level gold labels", file=sys.stderr)
    train_config = training_mod.TrainConfig(
        epochs=config.train_epochs,
        lr=config.train_lr,
        negatives=config.train_negatives,
        seed=config.seed,
        val_fraction=config.train_val_fraction,
        weight_decay=config.train_weight_decay,
    )
    result = training_mod.train(init_params_from(config), graph, indexes, provider, dataset, train_config)
    enc.save_checkpoint(result.params, paths.checkpoint)
    training_mod.save_history_csv(result.history, paths.history)
    provider.save()
    last = result.history[-1]
    best = max(row["val_hit1"] for row in result.history)
    print(
        f"train: {len(dataset)} labeled queries, {config.train_epochs} epochs; "
        f"final loss {last['mean_loss']:.4f}, best val Hit@1 {best:.3f} -> {paths.checkpoint}"
    )
    return 0


def cmd_retrieve(config: RunConfig, paths: Paths, args) -> int:
    corpus, chunks, index, provider, indexes, graph = load_assets(config, paths)
    params, origin = load_params(config, paths)
    top_k = args.n_results if args.n_results is not None else config.retrieve_top_n
    if top_k < 1:
        raise ConfigError(f"--n-results must be >= 1, got {top_k}")
    retriever = retrieval_mod.Retriever(graph, indexes, params, provider)
    results = retriever.retrieve(args.query, top_k)
    provider.save()
    retrieval_mod.export_results_jsonl(paths.retrieval, [(args.query, results)])
    paths.retrieval_meta.write_text(
        json.dumps({"config": config.to_dict(), "params_origin": origin}), encoding="utf-8"
    )
    for rank, sub in enumerate(results, start=1):
        print(f"{rank}\t{sub.center}\t{sub.score:.6f}")
    return 0


def cmd_answer(config: RunConfig, paths: Paths, args) -> int:
    corpus, chunks, index, provider, indexes, graph = load_assets(config, paths)
    params, _ = load_params(config, paths)
    client = make_lm_client(config)
    if client is None:
        raise ConfigError("lm.kind: configure a mock or remote client to answer questions")
    if args.kind == "multiple_choice" and not args.option:
        raise ConfigError("multiple_choice answers need at least two --option values")
    retriever = retrieval_mod.Retriever(graph, indexes, params, provider)
    record = answer_pipeline(
        args.query,
        retriever,
        config.retrieve_top_n,
        client,
        args.kind,
        options=args.option or None,
        word_cap=config.answer_word_cap,
        config_echo=config.to_dict(),
    )
    provider.save()
    save_answer_record(record, paths.answer)
    label = record.answer_label or ("<abstained>" if record.abstained else "")
    print(f"answer: {label or record.answer_text[:80]} ({len(record.summaries)} summaries) -> {paths.answer}")
    return 0


def cmd_eval(config: RunConfig, paths: Paths, args) -> int:
    corpus, chunks, index, provider, indexes, graph = load_assets(config, paths)
    params, origin = load_params(config, paths)
    client = make_lm_client(config)
    dataset = eval_mod.load_qa_dataset(args.dataset)
    retriever = retrieval_mod.Retriever(graph, indexes, params, provider)
    fingerprint = {
        "graph": graph.provenance.to_dict(),
        "params": eval_mod.params_fingerprint(params.arrays),
        "params_origin": origin,
        "retrieve_top_n": config.retrieve_top_n,
        "config": config.to_dict(),
    }
    report = eval_mod.run_eval(
        dataset, retriever, client=client, answer_top_k=config.retrieve_top_n, fingerprint=fingerprint
    )
    provider.save()
    report.save(paths.report_json, paths.report_csv)
    retrieval = report.aggregates["retrieval"]
    parts = [
        f"hit@1 {retrieval['hit1']:.3f}" if retrieval["hit1"] is not None else "hit@1 n/a",
        f"hit@3 {retrieval['hit3']:.3f}" if retrieval["hit3"] is not None else "hit@3 n/a",
        f"mrr {retrieval['mrr']:.3f}" if retrieval["mrr"] is not None else "mrr n/a",
        f"items {retrieval['items']}",
    ]
    if "answers" not in report.aggregates:
        parts.append("answers absent (no LM configured)")
    print(f"eval: {', '.join(parts)} -> {paths.report_json}")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="citeqa", description=__doc__)
    parser.add_argument("--config", required=True, help="path to the run config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--dry-run", action="store_true", help="print the resolved plan, change nothing")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="load the corpus and persist the chunk store")
    p = sub.add_parser("build-graph", help="build the contextual chunk graph and indexes")
    p.add_argument("--export-edges", default=None, help="also dump edges as plain text")
    p = sub.add_parser("train", help="train the encoder on chunk-labeled questions")
    p.add_argument("--dataset", required=True, help="QA JSONL with gold_chunks labels")
    p = sub.add_parser("retrieve", help="rank chunks for a query")
    p.add_argument("--query", required=True)
    p.add_argument("--n-results", type=int, default=None)
    p = sub.add_parser("answer", help="retrieve, summarize, and answer a question")
    p.add_argument("--query", required=True)
    p.add_argument("--kind", choices=["true_false", "multiple_choice", "generative"], default="generative")
    p.add_argument("--option", action="append", help="multiple-choice option (repeatable)")
    p = sub.add_parser("eval", help="run retrieval (and answer) metrics over a QA dataset")
    p.add_argument("--dataset", required=True, help="QA JSONL dataset")
    return parser


_COMMANDS = {
    "ingest": cmd_ingest,
    "build-graph": cmd_build_graph,
    "train": cmd_train,
    "retrieve": cmd_retrieve,
    "answer": cmd_answer,
    "eval": cmd_eval,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        config = parse_config(args.config, overrides)
        paths = Paths(config)
        if args.dry_run:
            plan = {
                "command": args.command,
                "config": config.to_dict(),
                "cache_dir": str(paths.root),
                "kernel_backend": _backend_name(),
            }
            print(json.dumps(plan, indent=2))
            return 0
        with cache_lock(paths.root):
            return _COMMANDS[args.command](config, paths, args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CiteqaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _backend_name() -> str:
    from . import kernels

    return kernels.BACKEND


if __name__ == "__main__":
    sys.exit(main())
