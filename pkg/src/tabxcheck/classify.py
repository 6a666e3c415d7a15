"""Pair classification: masked prompts, verdict parsing, backends.

Every numeric cell in the prompt's tables is replaced by a uniform
placeholder before anything reaches a classifier, so equality of the raw
values can never leak into the equivalence decision; targets are identified
purely by (row, column) position. Backends are pluggable: a deterministic
oracle stub (answers from gold), a seeded noisy stub, and a remote
chat-completion endpoint.
"""

from __future__ import annotations

import hashlib
import logging
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache

from .documents import (
    CELL_NUMERIC,
    Document,
    GoldAnnotation,
    NumericalMention,
    Table,
    linearize_table,
)

logger = logging.getLogger(__name__)

PLACEHOLDER = "[NUM]"

DECISION_EQUIVALENT = "equivalent"
DECISION_NOT_EQUIVALENT = "not_equivalent"
DECISION_ABSTAIN = "abstain"

DEFAULT_TASK_DESCRIPTION = (
    "You are checking numerical consistency in a disclosure document. Two table "
    "cells are semantically equivalent when they state the same underlying fact "
    "(same entity, same period, same metric). Cell values are hidden behind "
    f"{PLACEHOLDER} placeholders; judge only from the surrounding table context."
)
DEFAULT_OUTPUT_TEMPLATE = (
    "The first target value is at row {row_i}, column {col_i} of the first table. "
    "The second target value is at row {row_j}, column {col_j} of the second table. "
    "Are these two values semantically equivalent? Answer yes or no."
)
DEFAULT_OUTPUT_TEMPLATE_SAME_TABLE = (
    "Both target values are in the table above. The first is at row {row_i}, "
    "column {col_i}; the second is at row {row_j}, column {col_j}. "
    "Are these two values semantically equivalent? Answer yes or no."
)

NEGATIVE_MARKERS = ("not equivalent", "not semantically equivalent", r"\bno\b")
AFFIRMATIVE_MARKERS = ("equivalent", r"\byes\b")


class PositionOutOfRange(ValueError):
    """Target (row, col) outside its table grid."""


class BackendUnavailable(RuntimeError):
    """Remote backend kept failing after bounded retries."""


@dataclass(frozen=True)
class ClassificationPrompt:
    pair: tuple[int, int]
    doc_id: str
    task_description: str
    context_block: str
    output_instruction: str

    @property
    def text(self) -> str:
        return "\n\n".join(
            [self.task_description, self.context_block, self.output_instruction]
        )


@dataclass(frozen=True)
class ClassifierVerdict:
    pair: tuple[int, int] | None
    decision: str
    raw_response: str
    digest: str | None = None  # set when loaded from disk, where only the
    # response digest was persisted


@lru_cache(maxsize=4096)
def mask_table(t: Table) -> str:
    """Linearized table with every numeric cell replaced by the placeholder."""
    masked_grid = [
        [PLACEHOLDER if cell.kind == CELL_NUMERIC else cell.raw_text for cell in row]
        for row in t.cells
    ]
    masked = Table.from_grid(
        table_id=t.table_id,
        section_id=t.section_id,
        chapter_title=t.chapter_title,
        grid=masked_grid,
        text_before=t.surrounding_text_before,
        text_after=t.surrounding_text_after,
    )
    return linearize_table(masked)


def masked_context_text(d: Document, t: Table, char_budget: int = 500) -> str:
    before = t.surrounding_text_before[-char_budget:] if char_budget else ""
    after = t.surrounding_text_after[:char_budget] if char_budget else ""
    parts = [t.chapter_title]
    if before:
        parts.append(before)
    parts.append(mask_table(t))
    if after:
        parts.append(after)
    return "\n".join(parts)


def build_prompt(
    d: Document,
    m_i: NumericalMention,
    m_j: NumericalMention,
    task_description: str = DEFAULT_TASK_DESCRIPTION,
    output_template: str | None = None,
) -> ClassificationPrompt:
    t_i = d.table(m_i.table_id)
    t_j = d.table(m_j.table_id)
    for m, t in ((m_i, t_i), (m_j, t_j)):
        if not (0 <= m.row < t.n_rows and 0 <= m.col < t.n_cols):
            raise PositionOutOfRange(f"mention {m.mention_id} at ({m.row},{m.col})")
    same_table = t_i.table_id == t_j.table_id
    if same_table:
        context = masked_context_text(d, t_i)
        template = output_template or DEFAULT_OUTPUT_TEMPLATE_SAME_TABLE
    else:
        context = (
            "First table context:\n"
            + masked_context_text(d, t_i)
            + "\n\nSecond table context:\n"
            + masked_context_text(d, t_j)
        )
        template = output_template or DEFAULT_OUTPUT_TEMPLATE
    instruction = template.format(
        row_i=m_i.row, col_i=m_i.col, row_j=m_j.row, col_j=m_j.col
    )
    return ClassificationPrompt(
        pair=(m_i.mention_id, m_j.mention_id),
        doc_id=d.doc_id,
        task_description=task_description,
        context_block=context,
        output_instruction=instruction,
    )


_MARKER_RE = re.compile(
    "|".join(
        f"(?P<n{k}>{m})" for k, m in enumerate(NEGATIVE_MARKERS)
    )
    + "|"
    + "|".join(f"(?P<a{k}>{m})" for k, m in enumerate(AFFIRMATIVE_MARKERS)),
    re.IGNORECASE,
)


def parse_response(raw: str, pair: tuple[int, int] | None = None) -> ClassifierVerdict:
    """Scan for the first decision marker; negative markers outrank the
    affirmative substrings they contain; no marker at all means abstain."""
    match = _MARKER_RE.search(raw)
    if match is None:
        decision = DECISION_ABSTAIN
    elif any(
        match.group(f"n{k}") is not None for k in range(len(NEGATIVE_MARKERS))
    ):
        decision = DECISION_NOT_EQUIVALENT
    else:
        decision = DECISION_EQUIVALENT
    return ClassifierVerdict(pair=pair, decision=decision, raw_response=raw)


# --- backends -----------------------------------------------------------------


class OracleBackend:
    """Answers from the gold annotation; never inspects the masked context."""

    def __init__(self, gold: list[GoldAnnotation] | GoldAnnotation):
        items = gold if isinstance(gold, list) else [gold]
        self._pairs: dict[str, set[tuple[int, int]]] = {
            g.doc_id: g.pairs() for g in items
        }

    def classify(self, prompt: ClassificationPrompt) -> str:
        gold = self._pairs.get(prompt.doc_id, set())
        i, j = prompt.pair
        key = (i, j) if i < j else (j, i)
        return "yes" if key in gold else "no"


class NoisyOracleBackend:
    """Oracle with a seeded per-pair label flip; deterministic regardless of
    dispatch order."""

    def __init__(self, gold, flip_rate: float, seed: int = 0):
        if not 0.0 <= flip_rate <= 1.0:
            raise ValueError("flip_rate must be in [0,1]")
        self._oracle = OracleBackend(gold)
        self.flip_rate = flip_rate
        self.seed = seed

    def classify(self, prompt: ClassificationPrompt) -> str:
        answer = self._oracle.classify(prompt)
        i, j = prompt.pair
        digest = hashlib.blake2b(
            f"{self.seed}:{prompt.doc_id}:{min(i, j)}:{max(i, j)}".encode(),
            digest_size=8,
        ).digest()
        u = int.from_bytes(digest, "little") / 2**64
        if u < self.flip_rate:
            return "no" if answer == "yes" else "yes"
        return answer


class RemoteBackend:
    """Single-turn chat-completion endpoint, greedy decoding.

    The auth token is read from an environment variable, never stored in
    config files. Retries with exponential backoff; raises
    BackendUnavailable once the retry budget is exhausted.
    """

    def __init__(
        self,
        url: str,
        model: str | None = None,
        token_env: str = "TABXCHECK_API_TOKEN",
        timeout: float = 30.0,
        max_retries: int = 3,
        backoff: float = 0.5,
    ):
        self.url = url
        self.model = model
        self.token_env = token_env
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff

    def classify(self, prompt: ClassificationPrompt) -> str:
        import requests

        body = {
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": 0,
        }
        if self.model:
            body["model"] = self.model
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.token_env)
        if token:
            headers["Authorization"] = f"Bearer {token}"
        last_error: Exception | None = None
        for attempt in range(self.max_retries):
            try:
                resp = requests.post(
                    self.url, json=body, headers=headers, timeout=self.timeout
                )
                resp.raise_for_status()
                payload = resp.json()
                return payload["choices"][0]["message"]["content"]
            except Exception as exc:  # noqa: BLE001 - any transport failure retries
                last_error = exc
                if attempt + 1 < self.max_retries:
                    time.sleep(self.backoff * 2**attempt)
        raise BackendUnavailable(f"remote backend failed: {last_error}")


def classify_pairs(
    backend,
    prompts: list[ClassificationPrompt],
    max_in_flight: int = 4,
) -> list[ClassifierVerdict]:
    """One verdict per prompt, order preserved; abstains are counted and
    logged, not raised."""
    if not prompts:
        return []
    verdicts: list[ClassifierVerdict]
    if max_in_flight <= 1:
        raws = [backend.classify(p) for p in prompts]
    else:
        with ThreadPoolExecutor(max_workers=max_in_flight) as pool:
            raws = list(pool.map(backend.classify, prompts))
    verdicts = [parse_response(raw, pair=p.pair) for p, raw in zip(prompts, raws)]
    abstains = sum(1 for v in verdicts if v.decision == DECISION_ABSTAIN)
    if abstains:
        logger.warning("%d/%d classifier responses were unparseable", abstains, len(verdicts))
    return verdicts


def response_digest(raw: str) -> str:
    return hashlib.sha256(raw.encode("utf-8")).hexdigest()[:16]
