"""Command-line front end for every pipeline stage.

Configuration precedence: command-line flag, then `--config` key=value file,
then the built-in default. All randomness flows from named seeds; rerunning
any subcommand with identical inputs and seeds reproduces its outputs
byte for byte.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from .classify import (
    NoisyOracleBackend,
    OracleBackend,
    RemoteBackend,
    build_prompt,
    classify_pairs,
    response_digest,
)
from .corpus import GenConfig, SyntheticCorpus, generate_corpus, save_config
from .crosscheck import (
    corpus_sweep,
    detect_inconsistencies,
    evaluate,
    run_pipeline,
    read_jsonl,
    write_jsonl,
    write_sweep_csv,
)
from .documents import canonical_json
from .encoding import EmbedderConfig, EmbeddingMatrix, FeatureEmbedder
from .filtering import FilterParams, build_index, query_pairs
from .hnsw import active_backend
from .table_paths import build_graph, greedy_max_path, truncate_path
from .training import LossParams, TrainConfig, train_embedder


def _parse_config_file(path: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ValueError(f"config line without '=': {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


class Settings:
    """Flag > config-file > default resolution."""

    def __init__(self, args: argparse.Namespace):
        self.args = args
        self.file: dict[str, str] = {}
        if getattr(args, "config", None):
            self.file = _parse_config_file(args.config)

    def get(self, name: str, default, cast=None):
        cli = getattr(self.args, name.replace("-", "_"), None)
        if cli is not None:
            return cli
        if name in self.file:
            raw = self.file[name]
            cast = cast or type(default)
            if cast is bool:
                return raw.lower() in ("1", "true", "yes")
            return cast(raw)
        return default


def _load_corpus(settings: Settings) -> SyntheticCorpus:
    corpus_dir = settings.get("corpus", None, str)
    if not corpus_dir or not Path(corpus_dir).is_dir():
        raise FileNotFoundError(f"corpus directory not found: {corpus_dir}")
    return SyntheticCorpus.load(corpus_dir)


def _embedder(settings: Settings) -> FeatureEmbedder:
    weights = settings.get("weights", None, str)
    seed = settings.get("seed", 0, int)
    if weights:
        return FeatureEmbedder.load(weights, seed=seed)
    cfg = EmbedderConfig(
        feature_dim=settings.get("feature_dim", 256, int),
        dim=settings.get("dim", 64, int),
        seed=seed,
    )
    return FeatureEmbedder(cfg)


def _filter_params(settings: Settings) -> FilterParams:
    return FilterParams(
        threshold=settings.get("threshold", 0.5, float),
        m_neighbors=settings.get("m_neighbors", 16, int),
        ef_construction=settings.get("ef_construction", 200, int),
        ef_search=settings.get("ef_search", 128, int),
        exact_mode=settings.get("exact", False, bool),
        seed=settings.get("seed", 0, int),
    )


def _loss_params(settings: Settings) -> LossParams:
    return LossParams(
        tau=settings.get("tau", 0.15, float),
        alpha1=settings.get("alpha1", 0.75, float),
        alpha2=settings.get("alpha2", 0.25, float),
        epsilon=settings.get("epsilon", 1e-4, float),
    )


def _backend(settings: Settings, corpus: SyntheticCorpus):
    spec = settings.get("backend", "oracle", str)
    gold = list(corpus.gold)
    if spec == "oracle":
        return OracleBackend(gold)
    if spec.startswith("noisy"):
        rate = float(spec.split(":", 1)[1]) if ":" in spec else settings.get(
            "noise_rate", 0.1, float
        )
        return NoisyOracleBackend(gold, flip_rate=rate, seed=settings.get("seed", 0, int))
    if spec.startswith("remote:"):
        return RemoteBackend(
            url=spec.split(":", 1)[1],
            model=settings.get("remote_model", None, str),
            timeout=settings.get("timeout", 30.0, float),
            max_retries=settings.get("max_retries", 3, int),
        )
    raise ValueError(f"unknown backend {spec!r} (use oracle | noisy[:rate] | remote:URL)")


def _workers(settings: Settings) -> int:
    return settings.get("workers", os.cpu_count() or 1, int)


def _dispatch_width(settings: Settings) -> int:
    # stub backends are in-process; threads only help remote dispatch
    spec = settings.get("backend", "oracle", str)
    return _workers(settings) if spec.startswith("remote:") else 1


# --- subcommands -----------------------------------------------------------------


def cmd_gen(settings: Settings) -> int:
    out = Path(settings.get("out", "corpus", str))
    base = GenConfig()
    cfg = GenConfig(
        n_docs=settings.get("docs", base.n_docs, int),
        tables_per_doc=settings.get("tables_per_doc", base.tables_per_doc, int),
        mentions_per_doc_target=settings.get(
            "mentions_per_doc_target", base.mentions_per_doc_target, int
        ),
        isolated_fraction=settings.get("isolated_fraction", base.isolated_fraction, float),
        inconsistency_rate=settings.get("inconsistency_rate", base.inconsistency_rate, float),
        rng_seed=settings.get("seed", base.rng_seed, int),
    )
    corpus = generate_corpus(cfg)
    out.mkdir(parents=True, exist_ok=True)
    corpus.save(out)
    save_config(cfg, out / "gen_config.cfg")
    n_mentions = sum(len(d.mentions) for d in corpus.documents)
    print(
        f"wrote {len(corpus.documents)} docs, {n_mentions} mentions, "
        f"{sum(len(g.groups) for g in corpus.gold)} groups, "
        f"{len(corpus.planted_inconsistencies)} planted inconsistencies -> {out}"
    )
    return 0


def cmd_extract(settings: Settings) -> int:
    corpus = _load_corpus(settings)
    out = Path(settings.get("out", "mentions.jsonl", str))
    rows = []
    for d in corpus.documents:
        for m in d.mentions:
            rows.append(
                {
                    "doc_id": d.doc_id,
                    "mention_id": m.mention_id,
                    "table_id": m.table_id,
                    "row": m.row,
                    "col": m.col,
                    "raw_text": m.raw_text,
                    "value": m.value.canonical(),
                }
            )
    write_jsonl(out, rows)
    print(f"wrote {len(rows)} mentions -> {out}")
    return 0


def cmd_embed(settings: Settings) -> int:
    corpus = _load_corpus(settings)
    embedder = _embedder(settings)
    out = Path(settings.get("out", "embeddings", str))
    out.mkdir(parents=True, exist_ok=True)
    docs = list(corpus.documents)
    with ThreadPoolExecutor(max_workers=_workers(settings)) as pool:
        matrices = list(pool.map(embedder.embed_document, docs))
    for d, emb in zip(docs, matrices):
        emb.save(out / f"{d.doc_id}.emb")
    print(f"wrote {len(docs)} embedding files -> {out}")
    return 0


def cmd_train_embedder(settings: Settings) -> int:
    corpus = _load_corpus(settings)
    embedder = _embedder(settings)
    cfg = TrainConfig(
        epochs=settings.get("epochs", 3, int),
        learning_rate=settings.get("learning_rate", 0.5, float),
        tables_per_step=settings.get("tables_per_step", 12, int),
        seed=settings.get("seed", 0, int),
        objective=settings.get("objective", "decoupled", str),
        params=_loss_params(settings),
    )
    trained, log = train_embedder(corpus, embedder, cfg)
    out = Path(settings.get("out", "projection.emb", str))
    trained.save(out)
    log_path = out.with_suffix(".log.jsonl")
    write_jsonl(
        log_path,
        [
            {
                "epoch": r.epoch,
                "step": r.step,
                "loss_n": r.loss_n,
                "loss_i": r.loss_i,
                "loss": r.loss,
            }
            for r in log
        ],
    )
    first = np.mean([r.loss for r in log if r.epoch == 0])
    last = np.mean([r.loss for r in log if r.epoch == cfg.epochs - 1])
    print(f"trained {cfg.epochs} epochs: mean loss {first:.4f} -> {last:.4f}; wrote {out}")
    return 0


def cmd_filter(settings: Settings) -> int:
    corpus = _load_corpus(settings)
    params = _filter_params(settings)
    emb_dir = settings.get("embeddings", None, str)
    embedder = None if emb_dir else _embedder(settings)
    out = Path(settings.get("out", "candidate_pairs.jsonl", str))
    rows = []
    for d in corpus.documents:
        if emb_dir:
            emb = EmbeddingMatrix.load(Path(emb_dir) / f"{d.doc_id}.emb")
        else:
            emb = embedder.embed_document(d)
        if len(emb) < 1:
            continue
        pairs = query_pairs(build_index(emb, params), params)
        for (i, j), sim in sorted(pairs.pairs.items()):
            rows.append(
                {"doc_id": d.doc_id, "mention_i": i, "mention_j": j, "similarity": sim}
            )
    write_jsonl(out, rows)
    print(f"wrote {len(rows)} candidate pairs at t={params.threshold} -> {out}")
    return 0


def _parse_threshold_spec(spec: str) -> list[float]:
    if ":" in spec:
        lo, hi, step = (float(x) for x in spec.split(":"))
        ts = []
        t = lo
        while t <= hi + 1e-9:
            ts.append(round(t, 10))
            t += step
        return ts
    return [float(x) for x in spec.split(",")]


def cmd_sweep(settings: Settings) -> int:
    corpus = _load_corpus(settings)
    embedder = _embedder(settings)
    ts = _parse_threshold_spec(settings.get("t", "0.1:0.9:0.1", str))
    rows = corpus_sweep(corpus, embedder, ts, _filter_params(settings))
    out = Path(settings.get("out", "sweep.csv", str))
    write_sweep_csv(out, rows)
    for row in rows:
        print(
            f"t={row['threshold']:.2f} recall={row['recall']:.4f} "
            f"pairs/doc={row['pairs_per_doc']:.1f}"
        )
    print(f"wrote {len(rows)} rows -> {out}")
    return 0


def cmd_cnap(settings: Settings) -> int:
    corpus = _load_corpus(settings)
    chunk_size = settings.get("chunk_size", 2048, int)
    seed = settings.get("seed", 0, int)
    out = Path(settings.get("out", "chunks.jsonl", str))
    rows = []
    for d in corpus.documents:
        g = build_graph(d)
        path = greedy_max_path(g, seed=seed)
        chunks = truncate_path(path, d, chunk_size)
        for k, chunk in enumerate(chunks):
            rows.append(
                {
                    "doc_id": d.doc_id,
                    "chunk_index": k,
                    "text": chunk.text,
                    "table_ids": list(chunk.table_ids),
                    "bridge_count": len(path.bridges),
                    "path_weight": path.total_weight,
                }
            )
    write_jsonl(out, rows)
    print(f"wrote {len(rows)} pretraining chunks -> {out}")
    return 0


def cmd_classify(settings: Settings) -> int:
    corpus = _load_corpus(settings)
    backend = _backend(settings, corpus)
    pairs_file = settings.get("pairs", "candidate_pairs.jsonl", str)
    out = Path(settings.get("out", "verdicts.jsonl", str))
    by_doc: dict[str, list[tuple[int, int]]] = {}
    for rec in read_jsonl(pairs_file):
        by_doc.setdefault(rec["doc_id"], []).append((rec["mention_i"], rec["mention_j"]))
    rows = []
    for d in corpus.documents:
        pairs = by_doc.get(d.doc_id, [])
        prompts = [build_prompt(d, d.mention(i), d.mention(j)) for i, j in pairs]
        verdicts = classify_pairs(backend, prompts, max_in_flight=_dispatch_width(settings))
        for v in verdicts:
            rows.append(
                {
                    "doc_id": d.doc_id,
                    "mention_i": v.pair[0],
                    "mention_j": v.pair[1],
                    "decision": v.decision,
                    "raw_response_digest": response_digest(v.raw_response),
                }
            )
    write_jsonl(out, rows)
    print(f"wrote {len(rows)} verdicts -> {out}")
    return 0


def _verdicts_by_doc(path: str):
    from .classify import ClassifierVerdict

    by_doc: dict[str, list[ClassifierVerdict]] = {}
    for rec in read_jsonl(path):
        by_doc.setdefault(rec["doc_id"], []).append(
            ClassifierVerdict(
                pair=(rec["mention_i"], rec["mention_j"]),
                decision=rec["decision"],
                raw_response="",
                digest=rec.get("raw_response_digest"),
            )
        )
    return by_doc


def cmd_check(settings: Settings) -> int:
    corpus = _load_corpus(settings)
    verdicts = _verdicts_by_doc(settings.get("verdicts", "verdicts.jsonl", str))
    out = Path(settings.get("out", "reports", str))
    out.mkdir(parents=True, exist_ok=True)
    total = 0
    for d in corpus.documents:
        report = detect_inconsistencies(d, verdicts.get(d.doc_id, []))
        (out / f"{d.doc_id}.json").write_bytes(report.to_json())
        total += len(report.inconsistencies)
    print(f"wrote {len(corpus.documents)} reports ({total} inconsistencies) -> {out}")
    return 0


def cmd_eval(settings: Settings) -> int:
    corpus = _load_corpus(settings)
    verdicts = _verdicts_by_doc(settings.get("verdicts", "verdicts.jsonl", str))
    predicted = {
        d.doc_id: {
            (min(v.pair), max(v.pair))
            for v in verdicts.get(d.doc_id, [])
            if v.decision == "equivalent"
        }
        for d in corpus.documents
    }
    metrics = evaluate(list(corpus.gold), predicted)
    out = Path(settings.get("out", "metrics.json", str))
    out.write_bytes(metrics.to_json())
    print(
        f"P={metrics.precision:.4f} R={metrics.recall:.4f} F1={metrics.f1:.4f} "
        f"(gold={metrics.gold_count}, predicted={metrics.predicted_count}) -> {out}"
    )
    return 0


def cmd_run_all(settings: Settings) -> int:
    corpus = _load_corpus(settings)
    out = Path(settings.get("out", "run", str))
    out.mkdir(parents=True, exist_ok=True)
    embedder = _embedder(settings)
    if settings.get("train", True, bool):
        cfg = TrainConfig(
            epochs=settings.get("epochs", 3, int),
            learning_rate=settings.get("learning_rate", 0.5, float),
            tables_per_step=settings.get("tables_per_step", 12, int),
            seed=settings.get("seed", 0, int),
            params=_loss_params(settings),
        )
        embedder, _ = train_embedder(corpus, embedder, cfg)
        embedder.save(out / "projection.emb")
        # reload so downstream stages see the same float32-rounded projection
        # as a staged `train-embedder` + `embed` invocation would
        embedder = FeatureEmbedder.load(out / "projection.emb", seed=settings.get("seed", 0, int))
    backend = _backend(settings, corpus)
    result = run_pipeline(
        corpus,
        embedder,
        backend,
        filter_params=_filter_params(settings),
        max_in_flight=_dispatch_width(settings),
        out_dir=out,
    )
    detected = result.all_inconsistent_pairs()
    planted = {(p.doc_id, p.pair[0], p.pair[1]) for p in corpus.planted_inconsistencies}
    summary = {
        "metrics": json.loads(result.metrics.to_json()),
        "detected_inconsistencies": len(detected),
        "planted_inconsistencies": len(planted),
        "planted_recall": (len(detected & planted) / len(planted)) if planted else 1.0,
        "planted_precision": (len(detected & planted) / len(detected)) if detected else 1.0,
        "hnsw_backend": active_backend(),
    }
    (out / "summary.json").write_bytes(canonical_json(summary))
    print(
        f"matching P={result.metrics.precision:.4f} R={result.metrics.recall:.4f} "
        f"F1={result.metrics.f1:.4f}; planted inconsistency recall="
        f"{summary['planted_recall']:.4f} precision={summary['planted_precision']:.4f}"
    )
    print(f"artifacts -> {out}")
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "extract": cmd_extract,
    "embed": cmd_embed,
    "train-embedder": cmd_train_embedder,
    "filter": cmd_filter,
    "sweep": cmd_sweep,
    "cnap": cmd_cnap,
    "classify": cmd_classify,
    "check": cmd_check,
    "eval": cmd_eval,
    "run-all": cmd_run_all,
}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--seed", type=int, help="seed for all randomness")
    common.add_argument("--workers", type=int, help="document-level parallelism")
    parser = argparse.ArgumentParser(
        prog="tabxcheck",
        description="Coarse-to-fine numerical cross-checking over table-heavy documents",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, *flags):
        p = sub.add_parser(name, parents=[common])
        for flag, kwargs in flags:
            p.add_argument(flag, **kwargs)
        return p

    add(
        "gen",
        ("--out", {}),
        ("--docs", {"type": int}),
        ("--tables-per-doc", {"type": int}),
        ("--mentions-per-doc-target", {"type": int}),
        ("--isolated-fraction", {"type": float}),
        ("--inconsistency-rate", {"type": float}),
    )
    add("extract", ("--corpus", {}), ("--out", {}))
    add(
        "embed",
        ("--corpus", {}),
        ("--out", {}),
        ("--weights", {}),
        ("--dim", {"type": int}),
        ("--feature-dim", {"type": int}),
    )
    add(
        "train-embedder",
        ("--corpus", {}),
        ("--out", {}),
        ("--epochs", {"type": int}),
        ("--learning-rate", {"type": float}),
        ("--tables-per-step", {"type": int}),
        ("--objective", {"choices": ["decoupled", "standard"]}),
        ("--dim", {"type": int}),
        ("--feature-dim", {"type": int}),
        ("--tau", {"type": float}),
        ("--alpha1", {"type": float}),
        ("--alpha2", {"type": float}),
        ("--epsilon", {"type": float}),
    )
    add(
        "filter",
        ("--corpus", {}),
        ("--embeddings", {}),
        ("--weights", {}),
        ("--out", {}),
        ("--threshold", {"type": float}),
        ("--exact", {"action": "store_true", "default": None}),
    )
    add(
        "sweep",
        ("--corpus", {}),
        ("--weights", {}),
        ("--out", {}),
        ("--t", {}),
        ("--dim", {"type": int}),
        ("--feature-dim", {"type": int}),
    )
    add("cnap", ("--corpus", {}), ("--out", {}), ("--chunk-size", {"type": int}))
    add(
        "classify",
        ("--corpus", {}),
        ("--pairs", {}),
        ("--out", {}),
        ("--backend", {}),
    )
    add("check", ("--corpus", {}), ("--verdicts", {}), ("--out", {}))
    add("eval", ("--corpus", {}), ("--verdicts", {}), ("--out", {}))
    add(
        "run-all",
        ("--corpus", {}),
        ("--out", {}),
        ("--backend", {}),
        ("--threshold", {"type": float}),
        ("--train", {"action": "store_true", "default": None}),
        ("--no-train", {"dest": "train", "action": "store_false"}),
        ("--weights", {}),
        ("--epochs", {"type": int}),
        ("--learning-rate", {"type": float}),
        ("--dim", {"type": int}),
        ("--feature-dim", {"type": int}),
    )
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    settings = Settings(args)
    try:
        return COMMANDS[args.command](settings)
    except BrokenPipeError:
        return 1
    except Exception as exc:  # noqa: BLE001 - stage failures exit nonzero
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
