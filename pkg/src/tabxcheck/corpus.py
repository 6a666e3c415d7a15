"""Synthetic labeled corpus generator.

Produces documents with planted equivalence groups, isolated mentions, and
optionally injected numerical inconsistencies, as a desk-scale stand-in for
proprietary disclosure corpora. Semantic identity of a cell is the latent
(entity, period, metric) triple rendered into the chapter title and the
row/column headers, which makes equivalence both learnable by an embedder
and verifiable by construction.

Placement guarantees exactness of the gold annotation: within an entity
cluster every group gets fresh metric/period names and no table pair hosts
more than one group, and filler rows/columns get names that occur in a
single table, so a triple recurs across tables if and only if it was planted.

Header and prose text is strictly alphabetic; digits occur only inside
numeric cells. Downstream value-masking checks rely on this.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, fields
from decimal import Decimal
from pathlib import Path

import numpy as np

from .documents import (
    Document,
    GoldAnnotation,
    NumericValue,
    canonical_json,
    document_to_dict,
    parse_document,
    parse_gold,
    serialize_document,
    serialize_gold,
)


class InfeasibleConfig(ValueError):
    """Config demands more structure than the tables can hold."""


@dataclass(frozen=True)
class GenConfig:
    n_docs: int = 50
    tables_per_doc: int = 16
    rows_range: tuple[int, int] = (4, 5)  # total rows, incl. the header row
    cols_range: tuple[int, int] = (4, 5)  # total cols, incl. the header col
    mentions_per_doc_target: int = 200
    isolated_fraction: float = 0.8
    group_size_choices: tuple[int, ...] = (2, 3, 4)
    group_size_weights: tuple[float, ...] = (0.6, 0.3, 0.1)
    group_count: int | None = None  # overrides the budget-driven draw
    n_entities: int = 40
    n_periods: int = 60
    n_metrics: int = 120
    inconsistency_rate: float = 0.0
    percent_fraction: float = 0.1
    negative_fraction: float = 0.1
    rng_seed: int = 0
    doc_type: str = "synthetic"

    def __post_init__(self) -> None:
        if self.n_docs < 1 or self.tables_per_doc < 1:
            raise InfeasibleConfig("need at least one document and one table")
        for lo, hi in (self.rows_range, self.cols_range):
            if lo < 2 or hi < lo:
                raise InfeasibleConfig("rows/cols ranges must be >= 2 and ordered")
        for name, x in (
            ("isolated_fraction", self.isolated_fraction),
            ("inconsistency_rate", self.inconsistency_rate),
            ("percent_fraction", self.percent_fraction),
            ("negative_fraction", self.negative_fraction),
        ):
            if not 0.0 <= x <= 1.0:
                raise InfeasibleConfig(f"{name} must be in [0,1]")
        if len(self.group_size_choices) != len(self.group_size_weights):
            raise InfeasibleConfig("group size choices/weights length mismatch")
        if any(s < 2 for s in self.group_size_choices):
            raise InfeasibleConfig("group sizes must be >= 2")
        if any(w < 0 for w in self.group_size_weights) or sum(self.group_size_weights) <= 0:
            raise InfeasibleConfig("group size weights must be nonnegative, not all zero")
        if min(self.n_entities, self.n_periods, self.n_metrics) < 1:
            raise InfeasibleConfig("attribute vocabularies must be nonempty")
        if self.needs_groups() and self.tables_per_doc < max(self.group_size_choices):
            raise InfeasibleConfig(
                "largest group size exceeds tables_per_doc; groups span distinct tables"
            )
        er = (self.rows_range[0] + self.rows_range[1]) / 2 - 1
        ec = (self.cols_range[0] + self.cols_range[1]) / 2 - 1
        expected = self.tables_per_doc * er * ec
        if not 0.5 * self.mentions_per_doc_target <= expected <= 2.0 * self.mentions_per_doc_target:
            raise InfeasibleConfig(
                f"grid ranges produce ~{expected:.0f} mentions/doc, far from the "
                f"target {self.mentions_per_doc_target}"
            )

    def needs_groups(self) -> bool:
        if self.group_count is not None:
            return self.group_count > 0
        return self.isolated_fraction < 1.0

    def expected_pos_neg_ratio(self) -> float:
        """Planned positive:negative pair ratio implied by the config."""
        er = (self.rows_range[0] + self.rows_range[1]) / 2 - 1
        ec = (self.cols_range[0] + self.cols_range[1]) / 2 - 1
        total = self.tables_per_doc * er * ec
        w = np.asarray(self.group_size_weights, dtype=float)
        w = w / w.sum()
        sizes = np.asarray(self.group_size_choices, dtype=float)
        mean_size = float(sizes @ w)
        mean_pairs = float((sizes * (sizes - 1) / 2) @ w)
        if self.group_count is not None:
            n_groups = float(self.group_count)
        else:
            n_groups = total * (1.0 - self.isolated_fraction) / mean_size
        pos = n_groups * mean_pairs
        neg = total * (total - 1) / 2 - pos
        return pos / neg if neg > 0 else float("inf")


@dataclass(frozen=True)
class PlantedInconsistency:
    doc_id: str
    pair: tuple[int, int]  # mention ids, i < j; the first one was perturbed
    original_value: str
    perturbed_value: str


@dataclass(frozen=True)
class SyntheticCorpus:
    documents: tuple[Document, ...]
    gold: tuple[GoldAnnotation, ...]
    planted_inconsistencies: tuple[PlantedInconsistency, ...] = ()

    def gold_for(self, doc_id: str) -> GoldAnnotation:
        for g in self.gold:
            if g.doc_id == doc_id:
                return g
        raise KeyError(doc_id)

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        (out / "docs").mkdir(parents=True, exist_ok=True)
        (out / "gold").mkdir(parents=True, exist_ok=True)
        for d in self.documents:
            (out / "docs" / f"{d.doc_id}.json").write_bytes(serialize_document(d))
        for g in self.gold:
            (out / "gold" / f"{g.doc_id}.json").write_bytes(serialize_gold(g))
        planted = [
            {
                "doc_id": p.doc_id,
                "pair": list(p.pair),
                "original_value": p.original_value,
                "perturbed_value": p.perturbed_value,
            }
            for p in self.planted_inconsistencies
        ]
        (out / "planted.json").write_bytes(canonical_json(planted))

    @classmethod
    def load(cls, in_dir: str | Path) -> "SyntheticCorpus":
        src = Path(in_dir)
        docs = tuple(
            parse_document(p.read_bytes()) for p in sorted((src / "docs").glob("*.json"))
        )
        gold = tuple(
            parse_gold(p.read_bytes()) for p in sorted((src / "gold").glob("*.json"))
        )
        planted: tuple[PlantedInconsistency, ...] = ()
        pfile = src / "planted.json"
        if pfile.exists():
            planted = tuple(
                PlantedInconsistency(
                    doc_id=rec["doc_id"],
                    pair=(rec["pair"][0], rec["pair"][1]),
                    original_value=rec["original_value"],
                    perturbed_value=rec["perturbed_value"],
                )
                for rec in json.loads(pfile.read_bytes())
            )
        return cls(documents=docs, gold=gold, planted_inconsistencies=planted)


def _alpha(n: int) -> str:
    """0 -> 'a', 25 -> 'z', 26 -> 'aa', ... (digit-free identifiers)."""
    out = []
    n += 1
    while n > 0:
        n, rem = divmod(n - 1, 26)
        out.append(chr(ord("a") + rem))
    return "".join(reversed(out))


_FILLER_WORDS = (
    "overall operating performance remained broadly stable across the period under "
    "review while management continued to reinforce internal controls and disclosure "
    "practices the directors consider the assumptions applied to be prudent and "
    "consistent with prior presentations further detail is provided in the notes to "
    "the consolidated statements where applicable"
).split()


def _prose(rng: np.random.Generator, entity: str, n_chars: int) -> str:
    words = [f"Commentary on {entity}:"]
    length = len(words[0])
    while length < n_chars:
        w = _FILLER_WORDS[int(rng.integers(0, len(_FILLER_WORDS)))]
        words.append(w)
        length += len(w) + 1
    return " ".join(words)[:n_chars]


def _draw_value(rng: np.random.Generator, cfg: GenConfig) -> NumericValue:
    if rng.random() < cfg.percent_fraction:
        # one-decimal percentage in (0, 100)
        tenths = int(rng.integers(1, 1000))
        return NumericValue(mantissa=Decimal(tenths) / Decimal(10), is_percent=True)
    magnitude = int(rng.integers(100, 10_000_000))
    value = Decimal(magnitude)
    if rng.random() < 0.5:
        cents = int(rng.integers(0, 100))
        value = value + Decimal(cents) / Decimal(100)
    if rng.random() < cfg.negative_fraction:
        value = -value
    return NumericValue(mantissa=value, is_percent=False)


def _render_cell(rng: np.random.Generator, v: NumericValue) -> str:
    """Rendered cell text; style varies per cell, value does not."""
    mag = abs(v.mantissa)
    digits = format(mag, "f")
    if "." in digits:
        intpart, frac = digits.split(".")
    else:
        intpart, frac = digits, ""
    if not v.is_percent and rng.random() < 0.5 and len(intpart) > 3:
        groups = []
        while len(intpart) > 3:
            groups.append(intpart[-3:])
            intpart = intpart[:-3]
        groups.append(intpart)
        intpart = ",".join(reversed(groups))
    body = intpart + ("." + frac if frac else "")
    if v.mantissa < 0:
        body = f"({body})" if rng.random() < 0.5 else f"-{body}"
    if v.is_percent:
        body += "%"
    return body


@dataclass
class _GroupPlan:
    tables: tuple[int, ...]
    metric: str
    period: str


def _plan_groups(
    rng: np.random.Generator,
    cfg: GenConfig,
    clusters: list[list[int]],
    table_caps: list[int],
    total_cells: int,
) -> list[_GroupPlan]:
    sizes: list[int] = []
    if cfg.group_count is not None:
        probs = np.asarray(cfg.group_size_weights, dtype=float)
        probs = probs / probs.sum()
        for _ in range(cfg.group_count):
            sizes.append(int(rng.choice(cfg.group_size_choices, p=probs)))
    else:
        budget = round(total_cells * (1.0 - cfg.isolated_fraction))
        probs = np.asarray(cfg.group_size_weights, dtype=float)
        probs = probs / probs.sum()
        used = 0
        while budget - used >= 2:
            s = int(rng.choice(cfg.group_size_choices, p=probs))
            s = min(s, budget - used)
            if s < 2:
                break
            sizes.append(s)
            used += s

    hosted = [0] * len(table_caps)
    used_pairs: list[set[frozenset[int]]] = [set() for _ in clusters]
    metric_pool: list[list[str]] = []
    period_pool: list[list[str]] = []
    for _ in clusters:
        m_idx = rng.permutation(cfg.n_metrics)
        p_idx = rng.permutation(cfg.n_periods)
        metric_pool.append([f"Metric {_alpha(int(i))}" for i in m_idx])
        period_pool.append([f"Period {_alpha(int(i)).upper()}" for i in p_idx])

    plans: list[_GroupPlan] = []
    shortfall = 0
    # big groups first: they need cliques of unused table pairs, which are
    # abundant early and fragment as placement proceeds
    for size in sorted(sizes, reverse=True):
        placed = False
        for ci in rng.permutation(len(clusters)):
            ci = int(ci)
            cluster = clusters[ci]
            if len(cluster) < size or not metric_pool[ci] or not period_pool[ci]:
                continue
            # least-loaded table combinations first so host slots drain evenly
            scored = sorted(
                (sum(hosted[t] for t in combo), float(rng.random()), combo)
                for combo in itertools.combinations(cluster, size)
            )
            for _, _, combo in scored:
                pairs = {frozenset(p) for p in itertools.combinations(combo, 2)}
                if pairs & used_pairs[ci]:
                    continue
                if any(hosted[t] >= table_caps[t] for t in combo):
                    continue
                used_pairs[ci] |= pairs
                for t in combo:
                    hosted[t] += 1
                plans.append(
                    _GroupPlan(
                        tables=combo,
                        metric=metric_pool[ci].pop(),
                        period=period_pool[ci].pop(),
                    )
                )
                placed = True
                break
            if placed:
                break
        if not placed:
            shortfall += size
    if shortfall > 0.1 * max(sum(sizes), 1):
        raise InfeasibleConfig(
            f"placed only {sum(sizes) - shortfall} of {sum(sizes)} grouped mentions: "
            f"table pair budget, host capacity, or attribute vocabulary exhausted"
        )
    return plans


def _generate_document(
    rng: np.random.Generator, cfg: GenConfig, doc_index: int
) -> tuple[Document, GoldAnnotation]:
    doc_id = f"doc-{_alpha(doc_index)}"
    n_tables = cfg.tables_per_doc
    # one entity cluster per document: maximizes the table-pair budget
    # available for pair-disjoint group placement
    cluster_size = n_tables
    clusters = [
        list(range(i, min(i + cluster_size, n_tables)))
        for i in range(0, n_tables, cluster_size)
    ]
    # a trailing singleton cannot host groups; merge it into its neighbor
    if len(clusters) > 1 and len(clusters[-1]) < 2:
        clusters[-2].extend(clusters.pop())

    if len(clusters) > cfg.n_entities:
        raise InfeasibleConfig("entity vocabulary smaller than entity clusters per doc")
    entity_ids = rng.choice(cfg.n_entities, size=len(clusters), replace=False)
    entities = [f"Entity {_alpha(int(e)).upper()}" for e in entity_ids]
    cluster_of_table = {}
    for ci, cluster in enumerate(clusters):
        for t in cluster:
            cluster_of_table[t] = ci

    n_data_rows = [int(rng.integers(cfg.rows_range[0], cfg.rows_range[1] + 1)) - 1 for _ in range(n_tables)]
    n_data_cols = [int(rng.integers(cfg.cols_range[0], cfg.cols_range[1] + 1)) - 1 for _ in range(n_tables)]
    table_caps = [min(r, c) for r, c in zip(n_data_rows, n_data_cols)]
    total_cells = sum(r * c for r, c in zip(n_data_rows, n_data_cols))

    plans = _plan_groups(rng, cfg, clusters, table_caps, total_cells)

    table_metrics: list[list[str]] = [[] for _ in range(n_tables)]
    table_periods: list[list[str]] = [[] for _ in range(n_tables)]
    for plan in plans:
        for t in plan.tables:
            table_metrics[t].append(plan.metric)
            table_periods[t].append(plan.period)

    filler_counter = itertools.count()
    for t in range(n_tables):
        while len(table_metrics[t]) < n_data_rows[t]:
            table_metrics[t].append(f"Item {_alpha(next(filler_counter))}")
        while len(table_periods[t]) < n_data_cols[t]:
            table_periods[t].append(f"Span {_alpha(next(filler_counter))}")
        table_metrics[t] = [table_metrics[t][int(i)] for i in rng.permutation(n_data_rows[t])]
        table_periods[t] = [table_periods[t][int(i)] for i in rng.permutation(n_data_cols[t])]

    registry: dict[tuple[str, str, str], NumericValue] = {}
    members: dict[tuple[str, str, str], list[tuple[int, int, int]]] = {}
    tables_json = []
    sections_json = []
    for ci, entity in enumerate(entities):
        sections_json.append(
            {
                "section_id": f"sec-{_alpha(ci)}",
                "title": f"Chapter {_alpha(ci).upper()}: {entity} overview",
            }
        )
    for t in range(n_tables):
        ci = cluster_of_table[t]
        entity = entities[ci]
        grid = [[""] + list(table_periods[t])]
        for metric in table_metrics[t]:
            row = [metric]
            for period in table_periods[t]:
                triple = (entity, period, metric)
                if triple not in registry:
                    registry[triple] = _draw_value(rng, cfg)
                    members[triple] = []
                members[triple].append((t, len(grid), len(row)))
                row.append(_render_cell(rng, registry[triple]))
            grid.append(row)
        tables_json.append(
            {
                "table_id": f"tab-{_alpha(t)}",
                "section_id": f"sec-{_alpha(ci)}",
                "chapter_title": sections_json[ci]["title"],
                "text_before": _prose(rng, entity, int(rng.integers(120, 1300))),
                "text_after": _prose(rng, entity, int(rng.integers(80, 900))),
                "cells": grid,
            }
        )

    doc = parse_document(
        {
            "doc_id": doc_id,
            "doc_type": cfg.doc_type,
            "sections": sections_json,
            "tables": tables_json,
        }
    )

    # map planted triples back onto extracted mention ids
    by_pos = {(m.table_id, m.row, m.col): m.mention_id for m in doc.mentions}
    groups = []
    for triple, cells in members.items():
        if len(cells) < 2:
            continue
        ids = frozenset(by_pos[(f"tab-{_alpha(t)}", r, c)] for t, r, c in cells)
        groups.append(ids)
    groups.sort(key=lambda g: min(g))
    gold = GoldAnnotation(doc_id=doc_id, groups=tuple(groups))
    return doc, gold


def generate_corpus(cfg: GenConfig) -> SyntheticCorpus:
    """Deterministic corpus from (cfg, cfg.rng_seed); one rng stream per corpus."""
    rng = np.random.default_rng(cfg.rng_seed)
    docs: list[Document] = []
    gold: list[GoldAnnotation] = []
    for i in range(cfg.n_docs):
        d, g = _generate_document(rng, cfg, i)
        docs.append(d)
        gold.append(g)
    corpus = SyntheticCorpus(documents=tuple(docs), gold=tuple(gold))
    if cfg.inconsistency_rate > 0:
        corpus = inject_inconsistencies(corpus, cfg.inconsistency_rate, cfg.rng_seed + 1)
    return corpus


def inject_inconsistencies(
    corpus: SyntheticCorpus, rate: float, seed: int
) -> SyntheticCorpus:
    """Perturb one member of a sampled fraction of gold groups.

    The perturbed cell is re-rendered with the new value; the gold annotation
    is untouched (the pair is still semantically equivalent, just no longer
    numerically equal). Records one entry per broken pair.
    """
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must be in [0,1]")
    if rate == 0.0:
        return corpus
    rng = np.random.default_rng(seed)
    new_docs: list[Document] = []
    planted: list[PlantedInconsistency] = list(corpus.planted_inconsistencies)
    for doc, gold in zip(corpus.documents, corpus.gold):
        edits: dict[int, NumericValue] = {}
        for group in gold.groups:
            if rng.random() >= rate:
                continue
            ids = sorted(group)
            victim = ids[int(rng.integers(0, len(ids)))]
            m = doc.mention(victim)
            old = m.value
            exponent = old.mantissa.as_tuple().exponent
            step = Decimal(1).scaleb(exponent)
            delta = step * int(rng.integers(1, 10))
            if rng.random() < 0.5:
                delta = -delta
            new = NumericValue(mantissa=old.mantissa + delta, is_percent=old.is_percent)
            edits[victim] = new
            for other in ids:
                if other == victim:
                    continue
                planted.append(
                    PlantedInconsistency(
                        doc_id=doc.doc_id,
                        pair=(min(victim, other), max(victim, other)),
                        original_value=old.canonical(),
                        perturbed_value=new.canonical(),
                    )
                )
        if not edits:
            new_docs.append(doc)
            continue
        raw = document_to_dict(doc)
        for mention_id, new_value in edits.items():
            m = doc.mention(mention_id)
            t_index = next(i for i, t in enumerate(doc.tables) if t.table_id == m.table_id)
            raw["tables"][t_index]["cells"][m.row][m.col] = new_value.canonical()
        new_docs.append(parse_document(raw))
    planted.sort(key=lambda p: (p.doc_id, p.pair))
    return SyntheticCorpus(
        documents=tuple(new_docs), gold=corpus.gold, planted_inconsistencies=tuple(planted)
    )


def save_config(cfg: GenConfig, path: str | Path) -> None:
    """Flat key = value snapshot; tuples are comma-joined."""
    lines = []
    for key, value in asdict(cfg).items():
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_config(path: str | Path) -> GenConfig:
    raw: dict[str, str] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        raw[key.strip()] = value.strip()
    kwargs: dict = {}
    for f in fields(GenConfig):
        if f.name not in raw:
            continue
        text = raw[f.name]
        if f.name in ("rows_range", "cols_range", "group_size_choices"):
            kwargs[f.name] = tuple(int(x) for x in text.split(","))
        elif f.name == "group_size_weights":
            kwargs[f.name] = tuple(float(x) for x in text.split(","))
        elif f.name == "group_count":
            kwargs[f.name] = None if text == "None" else int(text)
        elif f.type == "int":
            kwargs[f.name] = int(text)
        elif f.type == "float":
            kwargs[f.name] = float(text)
        else:
            kwargs[f.name] = text
    return GenConfig(**kwargs)
