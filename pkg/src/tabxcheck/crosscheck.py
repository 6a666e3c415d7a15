"""Final cross-checking, inconsistency reporting, and set-level metrics.

A pair judged semantically equivalent whose normalized values differ is an
inconsistency. Metrics are set-level precision/recall/F1 over per-document
pair sets, micro-aggregated: counts are summed across documents before
dividing.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

from .classify import (
    DECISION_EQUIVALENT,
    build_prompt,
    classify_pairs,
    response_digest,
)
from .corpus import SyntheticCorpus
from .documents import Document, GoldAnnotation, NumericValue, canonical_json
from .encoding import FeatureEmbedder
from .filtering import FilterParams, build_index, query_pairs, sweep_thresholds


class DocMismatch(ValueError):
    """Gold and predictions cover different documents."""


def numeric_equal(a: NumericValue, b: NumericValue) -> bool:
    """Exact decimal equality; percent and plain values never match."""
    return a.is_percent == b.is_percent and a.mantissa == b.mantissa


@dataclass
class MatchReport:
    doc_id: str
    matches: list[dict] = field(default_factory=list)
    inconsistencies: list[dict] = field(default_factory=list)

    def predicted_pairs(self) -> set[tuple[int, int]]:
        return {tuple(m["pair"]) for m in self.matches}

    def inconsistent_pairs(self) -> set[tuple[int, int]]:
        return {tuple(m["pair"]) for m in self.inconsistencies}

    def to_json(self) -> bytes:
        return canonical_json(asdict(self))


def detect_inconsistencies(d: Document, verdicts) -> MatchReport:
    """Every equivalent-verdict pair goes into matches; the numerically
    unequal ones additionally land in inconsistencies."""
    report = MatchReport(doc_id=d.doc_id)
    rows = []
    for v in verdicts:
        if v.decision != DECISION_EQUIVALENT or v.pair is None:
            continue
        i, j = min(v.pair), max(v.pair)
        rows.append((i, j, v))
    rows.sort()
    for i, j, v in rows:
        m_i, m_j = d.mention(i), d.mention(j)
        entry = {
            "pair": [i, j],
            "value_i": m_i.value.canonical(),
            "value_j": m_j.value.canonical(),
            "decision": v.decision,
            "response_digest": v.digest or response_digest(v.raw_response),
        }
        report.matches.append(entry)
        if not numeric_equal(m_i.value, m_j.value):
            report.inconsistencies.append(entry)
    return report


@dataclass
class MetricsResult:
    precision: float
    recall: float
    f1: float
    gold_count: int
    predicted_count: int
    intersection_count: int
    per_doc: list[dict]
    zero_gold_docs: list[str]

    def to_json(self) -> bytes:
        return canonical_json(asdict(self))


def _prf(inter: int, pred: int, gold: int) -> tuple[float, float, float]:
    p = inter / pred if pred else 1.0
    r = inter / gold if gold else 1.0
    f1 = 2 * p * r / (p + r) if (p + r) > 0 else 0.0
    return p, r, f1


def evaluate(
    gold: list[GoldAnnotation], predicted: dict[str, set[tuple[int, int]]]
) -> MetricsResult:
    """Micro-aggregated set-level precision/recall/F1 over documents."""
    gold_ids = {g.doc_id for g in gold}
    if gold_ids != set(predicted):
        missing = gold_ids ^ set(predicted)
        raise DocMismatch(f"gold/predicted doc ids differ: {sorted(missing)[:5]}")
    per_doc = []
    zero_gold = []
    tot_inter = tot_pred = tot_gold = 0
    for g in sorted(gold, key=lambda g: g.doc_id):
        gp = g.pairs()
        pp = {(min(i, j), max(i, j)) for i, j in predicted[g.doc_id]}
        inter = len(gp & pp)
        p, r, f1 = _prf(inter, len(pp), len(gp))
        per_doc.append(
            {
                "doc_id": g.doc_id,
                "precision": p,
                "recall": r,
                "f1": f1,
                "gold": len(gp),
                "predicted": len(pp),
                "intersection": inter,
            }
        )
        if not gp:
            zero_gold.append(g.doc_id)
        tot_inter += inter
        tot_pred += len(pp)
        tot_gold += len(gp)
    p, r, f1 = _prf(tot_inter, tot_pred, tot_gold)
    return MetricsResult(
        precision=p,
        recall=r,
        f1=f1,
        gold_count=tot_gold,
        predicted_count=tot_pred,
        intersection_count=tot_inter,
        per_doc=per_doc,
        zero_gold_docs=zero_gold,
    )


# --- pipeline ------------------------------------------------------------------


@dataclass
class PipelineResult:
    reports: list[MatchReport]
    metrics: MetricsResult
    candidate_counts: dict[str, int]
    inconsistency_pairs: dict[str, set[tuple[int, int]]]

    def all_inconsistent_pairs(self) -> set[tuple[str, int, int]]:
        return {
            (doc_id, i, j)
            for doc_id, pairs in self.inconsistency_pairs.items()
            for (i, j) in pairs
        }


def run_pipeline(
    corpus: SyntheticCorpus,
    embedder: FeatureEmbedder,
    backend,
    filter_params: FilterParams | None = None,
    max_in_flight: int = 1,
    out_dir: str | Path | None = None,
) -> PipelineResult:
    """Extract -> embed -> filter -> classify -> cross-check -> evaluate.

    Deterministic with stub backends and fixed seeds. When `out_dir` is
    given, every intermediate artifact is persisted in its declared format.
    """
    fp = filter_params or FilterParams()
    out = Path(out_dir) if out_dir else None
    if out:
        (out / "reports").mkdir(parents=True, exist_ok=True)

    reports = []
    predicted: dict[str, set[tuple[int, int]]] = {}
    inconsistency_pairs: dict[str, set[tuple[int, int]]] = {}
    candidate_counts: dict[str, int] = {}
    pair_rows = []
    verdict_rows = []
    for doc in corpus.documents:
        try:
            emb = embedder.embed_document(doc)
        except Exception as exc:
            raise RuntimeError(f"[embed] {doc.doc_id}: {exc}") from exc
        try:
            if len(emb) >= 1:
                index = build_index(emb, fp)
                cands = query_pairs(index, fp)
            else:
                cands = None
        except Exception as exc:
            raise RuntimeError(f"[filter] {doc.doc_id}: {exc}") from exc
        pairs = sorted(cands.pairs.items()) if cands else []
        candidate_counts[doc.doc_id] = len(pairs)
        if out:
            for (i, j), sim in pairs:
                pair_rows.append(
                    {"doc_id": doc.doc_id, "mention_i": i, "mention_j": j, "similarity": sim}
                )
        try:
            prompts = [
                build_prompt(doc, doc.mention(i), doc.mention(j)) for (i, j), _ in pairs
            ]
            verdicts = classify_pairs(backend, prompts, max_in_flight=max_in_flight)
        except Exception as exc:
            raise RuntimeError(f"[classify] {doc.doc_id}: {exc}") from exc
        if out:
            for v in verdicts:
                verdict_rows.append(
                    {
                        "doc_id": doc.doc_id,
                        "mention_i": v.pair[0],
                        "mention_j": v.pair[1],
                        "decision": v.decision,
                        "raw_response_digest": response_digest(v.raw_response),
                    }
                )
        report = detect_inconsistencies(doc, verdicts)
        reports.append(report)
        predicted[doc.doc_id] = report.predicted_pairs()
        inconsistency_pairs[doc.doc_id] = report.inconsistent_pairs()
        if out:
            (out / "reports" / f"{doc.doc_id}.json").write_bytes(report.to_json())

    metrics = evaluate(list(corpus.gold), predicted)
    if out:
        write_jsonl(out / "candidate_pairs.jsonl", pair_rows)
        write_jsonl(out / "verdicts.jsonl", verdict_rows)
        (out / "metrics.json").write_bytes(metrics.to_json())
    return PipelineResult(
        reports=reports,
        metrics=metrics,
        candidate_counts=candidate_counts,
        inconsistency_pairs=inconsistency_pairs,
    )


def corpus_sweep(
    corpus: SyntheticCorpus,
    embedder: FeatureEmbedder,
    thresholds: list[float] | None = None,
    params: FilterParams | None = None,
) -> list[dict]:
    """Aggregate threshold sweep: global gold recall and mean surviving
    pairs per document at each threshold."""
    ts = sorted(thresholds if thresholds is not None else [x / 10 for x in range(1, 10)])
    acc = {t: {"inter": 0, "pairs": 0} for t in ts}
    total_gold = 0
    for doc, gold in zip(corpus.documents, corpus.gold):
        emb = embedder.embed_document(doc)
        gp = gold.pairs()
        total_gold += len(gp)
        for row in sweep_thresholds(emb, gp, ts, params):
            t = row["threshold"]
            acc[t]["pairs"] += row["pairs"]
            acc[t]["inter"] += row["gold_hits"]
    n_docs = max(len(corpus.documents), 1)
    return [
        {
            "threshold": t,
            "recall": acc[t]["inter"] / total_gold if total_gold else 1.0,
            "pairs_per_doc": acc[t]["pairs"] / n_docs,
        }
        for t in ts
    ]


# --- small file helpers ---------------------------------------------------------


def write_jsonl(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(json.loads(line))
    return out


def write_sweep_csv(path: str | Path, rows: list[dict]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=["threshold", "recall", "pairs_per_doc"])
        writer.writeheader()
        for row in rows:
            writer.writerow(
                {
                    "threshold": row["threshold"],
                    "recall": row["recall"],
                    "pairs_per_doc": row["pairs_per_doc"],
                }
            )
