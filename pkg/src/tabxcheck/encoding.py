"""Parallel mention encoding: layouts, attention mask, and embedders.

All numerical mentions of a table share one context string, so they can be
encoded in a single pass: the input is the context, an instruction prompt,
then every mention appended as its own segment. A modified attention mask
keeps mention segments from seeing each other, and mention token positions
restart right after the prompt, so each mention is encoded exactly as if it
were the only one appended.

Two embedders are provided. `reference_encode` is a tiny deterministic
attention layer used to validate the mask/position semantics bit-for-bit.
`FeatureEmbedder` is the trainable hashed-feature projection used by the
actual pipeline.
"""

from __future__ import annotations

import hashlib
import re
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Protocol

import numpy as np

from .documents import Document, NumericalMention, position_statement

DEFAULT_MAX_LEN = 4096
DEFAULT_PROMPT = (
    "Encode the semantics of each following numerical mention given the table context:"
)


class ContextTooLong(ValueError):
    """Context plus prompt alone exceed the maximum input length."""


class MentionNotLocated(ValueError):
    """Mention token sequence not found inside the context tokens."""


class SimpleTokenizer:
    """Deterministic splitter: word characters group, everything else is a
    single-character token. Tokenizing segments independently and
    concatenating gives the same stream as tokenizing the concatenation,
    provided segments are joined at whitespace."""

    _pattern = re.compile(r"\w+|[^\w\s]", re.UNICODE)

    def tokenize(self, text: str) -> list[str]:
        return self._pattern.findall(text)


def token_id(token: str) -> int:
    """Stable 64-bit id for a token."""
    digest = hashlib.blake2b(token.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class MentionSegment:
    mention_id: int
    tokens: tuple[str, ...]


@dataclass
class EncodingLayout:
    """Token slots for one parallel-encoding pass.

    Slots are contiguous: context, prompt, then one segment per mention.
    `position[slot]` restarts at base_len for the first token of every
    mention segment. `segment_of_slot` is -1 for context/prompt slots.
    """

    context_tokens: tuple[str, ...]
    prompt_tokens: tuple[str, ...]
    segments: tuple[MentionSegment, ...]
    dropped: tuple[int, ...] = ()
    position: np.ndarray = field(init=False)
    segment_of_slot: np.ndarray = field(init=False)
    mention_end_index: dict[int, int] = field(init=False)

    def __post_init__(self) -> None:
        base = len(self.context_tokens) + len(self.prompt_tokens)
        pos = list(range(base))
        seg = [-1] * base
        ends: dict[int, int] = {}
        slot = base
        for s_idx, segment in enumerate(self.segments):
            for m in range(1, len(segment.tokens) + 1):
                pos.append(base + m - 1)
                seg.append(s_idx)
                slot += 1
            ends[segment.mention_id] = slot - 1
        self.position = np.asarray(pos, dtype=np.int32)
        self.segment_of_slot = np.asarray(seg, dtype=np.int32)
        self.mention_end_index = ends

    @property
    def base_len(self) -> int:
        return len(self.context_tokens) + len(self.prompt_tokens)

    @property
    def total_len(self) -> int:
        return int(self.position.shape[0])

    @property
    def slot_tokens(self) -> list[str]:
        toks = list(self.context_tokens) + list(self.prompt_tokens)
        for segment in self.segments:
            toks.extend(segment.tokens)
        return toks

    @property
    def mention_ids(self) -> list[int]:
        return [s.mention_id for s in self.segments]


def build_layout(
    context_text: str,
    prompt_text: str,
    mentions: list[tuple[int, str]],
    tokenizer: SimpleTokenizer | None = None,
    max_len: int = DEFAULT_MAX_LEN,
) -> EncodingLayout:
    """Concatenate context, prompt, and mention segments into a layout.

    Truncation drops whole trailing mentions, never splits one; dropped
    mention ids are reported on the layout.
    """
    if not mentions:
        raise ValueError("need at least one mention")
    tok = tokenizer or SimpleTokenizer()
    ctx = tuple(tok.tokenize(context_text))
    prompt = tuple(tok.tokenize(prompt_text))
    if len(ctx) + len(prompt) > max_len:
        raise ContextTooLong(
            f"context+prompt is {len(ctx) + len(prompt)} tokens, max_len={max_len}"
        )
    segments = []
    dropped = []
    used = len(ctx) + len(prompt)
    for mention_id, raw in mentions:
        toks = tuple(tok.tokenize(raw))
        if not toks:
            toks = ("",)
        if used + len(toks) > max_len:
            dropped.append(mention_id)
            continue
        segments.append(MentionSegment(mention_id=mention_id, tokens=toks))
        used += len(toks)
    return EncodingLayout(
        context_tokens=ctx,
        prompt_tokens=prompt,
        segments=tuple(segments),
        dropped=tuple(dropped),
    )


def build_epe_layout(
    context_text: str,
    mentions: list[tuple[int, str]],
    tokenizer: SimpleTokenizer | None = None,
    max_len: int = DEFAULT_MAX_LEN,
) -> EncodingLayout:
    """Extractive baseline layout: context only, no prompt, no appended
    segments. Extraction indices point at the last token of each mention's
    occurrence inside the context; repeated texts resolve in mention order."""
    if not mentions:
        raise MentionNotLocated("empty mention list")
    tok = tokenizer or SimpleTokenizer()
    ctx = list(tok.tokenize(context_text))[:max_len]
    layout = EncodingLayout(
        context_tokens=tuple(ctx), prompt_tokens=(), segments=(), dropped=()
    )
    ends: dict[int, int] = {}
    cursor = 0
    for mention_id, raw in mentions:
        needle = tok.tokenize(raw)
        if not needle:
            raise MentionNotLocated(f"mention {mention_id} tokenizes to nothing")
        idx = _find_subsequence(ctx, needle, cursor)
        if idx < 0:
            # wrap: mention order and text order can disagree near duplicates
            idx = _find_subsequence(ctx, needle, 0)
        if idx < 0:
            raise MentionNotLocated(f"mention {mention_id} ({raw!r}) not in context")
        ends[mention_id] = idx + len(needle) - 1
        cursor = idx + len(needle)
    layout.mention_end_index = ends
    return layout


def _find_subsequence(haystack: list[str], needle: list[str], start: int) -> int:
    n, k = len(haystack), len(needle)
    for i in range(start, n - k + 1):
        if haystack[i : i + k] == needle:
            return i
    return -1


def attention_allowed(layout: EncodingLayout, query_slot: int, key_slot: int) -> bool:
    """Mask predicate: mention tokens see the context, the prompt, and their
    own segment up to themselves; context/prompt slots are causal."""
    total = layout.total_len
    if not (0 <= query_slot < total and 0 <= key_slot < total):
        raise IndexError("slot out of range")
    q_seg = int(layout.segment_of_slot[query_slot])
    k_seg = int(layout.segment_of_slot[key_slot])
    if q_seg == -1:
        return k_seg == -1 and key_slot <= query_slot
    if k_seg == -1:
        return True
    return k_seg == q_seg and key_slot <= query_slot


def allowed_key_slots(layout: EncodingLayout, query_slot: int) -> np.ndarray:
    """Allowed key slots for a query, in slot order."""
    seg = layout.segment_of_slot
    q_seg = int(seg[query_slot])
    slots = np.arange(layout.total_len, dtype=np.int64)
    if q_seg == -1:
        mask = (seg == -1) & (slots <= query_slot)
    else:
        mask = (seg == -1) | ((seg == q_seg) & (slots <= query_slot))
    return slots[mask]


# --- embedding container and on-disk format ---------------------------------

_EMB_MAGIC = b"TXEM"


@dataclass
class EmbeddingMatrix:
    """Unit-norm embedding rows keyed by mention id."""

    mention_ids: np.ndarray  # int64 (n,)
    rows: np.ndarray  # float32 (n, dim)

    def __post_init__(self) -> None:
        self.mention_ids = np.ascontiguousarray(self.mention_ids, dtype=np.int64)
        self.rows = np.ascontiguousarray(self.rows, dtype=np.float32)
        if self.rows.ndim != 2 or self.mention_ids.shape[0] != self.rows.shape[0]:
            raise ValueError("mention_ids and rows disagree")

    @property
    def dim(self) -> int:
        return int(self.rows.shape[1])

    def __len__(self) -> int:
        return int(self.rows.shape[0])

    def row_for(self, mention_id: int) -> np.ndarray:
        idx = int(np.searchsorted(self.mention_ids, mention_id))
        if idx >= len(self) or self.mention_ids[idx] != mention_id:
            raise KeyError(mention_id)
        return self.rows[idx]

    def save(self, path: str | Path) -> None:
        """Binary layout: magic, u32 dim, u32 count, i64 mention ids, then
        little-endian float32 rows."""
        with open(path, "wb") as fh:
            fh.write(_EMB_MAGIC)
            fh.write(struct.pack("<II", self.dim, len(self)))
            fh.write(self.mention_ids.astype("<i8").tobytes())
            fh.write(self.rows.astype("<f4").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingMatrix":
        blob = Path(path).read_bytes()
        if blob[:4] != _EMB_MAGIC:
            raise ValueError(f"{path}: not an embedding matrix file")
        dim, count = struct.unpack_from("<II", blob, 4)
        off = 12
        ids = np.frombuffer(blob, dtype="<i8", count=count, offset=off).astype(np.int64)
        off += 8 * count
        rows = np.frombuffer(blob, dtype="<f4", count=count * dim, offset=off)
        return cls(mention_ids=ids, rows=rows.reshape(count, dim).copy())


def normalize_rows(rows: np.ndarray) -> np.ndarray:
    r = np.asarray(rows, dtype=np.float64)
    norms = np.linalg.norm(r, axis=1, keepdims=True)
    norms[norms == 0] = 1.0
    return r / norms


# --- reference micro-attention encoder ---------------------------------------


class LayoutEmbedder(Protocol):
    """Contract for layout-consuming embedders: one unit-norm row per
    mention, keyed by mention id."""

    dim: int

    def embed_layout(self, layout: "EncodingLayout") -> "EmbeddingMatrix": ...


class ReferenceWeights:
    """Fixed random weights for the reference encoder. Token and position
    embeddings are derived from seeded hashes, so no vocabulary is needed."""

    def __init__(self, dim: int = 24, seed: int = 0):
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng([seed, 0xA11CE])
        scale = 1.0 / np.sqrt(dim)
        self.w_query = rng.standard_normal((dim, dim)) * scale
        self.w_key = rng.standard_normal((dim, dim)) * scale
        self.w_value = rng.standard_normal((dim, dim)) * scale
        self.w_out = rng.standard_normal((dim, dim)) * scale
        self._token_cache: dict[str, np.ndarray] = {}
        self._pos_cache: dict[int, np.ndarray] = {}

    def token_vec(self, token: str) -> np.ndarray:
        v = self._token_cache.get(token)
        if v is None:
            rng = np.random.default_rng([self.seed, 1, token_id(token)])
            v = rng.standard_normal(self.dim)
            self._token_cache[token] = v
        return v

    def pos_vec(self, position: int) -> np.ndarray:
        v = self._pos_cache.get(position)
        if v is None:
            rng = np.random.default_rng([self.seed, 2, position])
            v = rng.standard_normal(self.dim)
            self._pos_cache[position] = v
        return v


class ReferenceEncoder:
    """LayoutEmbedder over fixed random weights; used to validate the mask
    and position semantics, not to produce useful representations."""

    def __init__(self, dim: int = 24, seed: int = 0):
        self.weights = ReferenceWeights(dim=dim, seed=seed)
        self.dim = dim

    def embed_layout(self, layout: EncodingLayout) -> EmbeddingMatrix:
        return reference_encode(layout, self.weights)


def reference_encode(layout: EncodingLayout, weights: ReferenceWeights) -> EmbeddingMatrix:
    """Single attention layer over the layout; row k is the hidden state at
    mention k's extraction slot, L2-normalized.

    Keys are gathered per query in slot order, so a mention's row depends
    only on the context/prompt slots and its own segment: embeddings are
    bitwise invariant to the content, count, and order of other segments.
    """
    tokens = layout.slot_tokens
    x = np.stack(
        [
            weights.token_vec(tokens[s]) + weights.pos_vec(int(layout.position[s]))
            for s in range(layout.total_len)
        ]
    )
    ids = sorted(layout.mention_end_index)
    rows = np.empty((len(ids), weights.dim), dtype=np.float32)
    for i, mention_id in enumerate(ids):
        q_slot = layout.mention_end_index[mention_id]
        keys = allowed_key_slots(layout, q_slot)
        xk = x[keys]
        q = weights.w_query @ x[q_slot]
        scores = (xk @ weights.w_key.T) @ q / np.sqrt(weights.dim)
        scores -= scores.max()
        probs = np.exp(scores)
        probs /= probs.sum()
        ctx = probs @ (xk @ weights.w_value.T)
        h = np.tanh(weights.w_out @ (x[q_slot] + ctx))
        rows[i] = h.astype(np.float32)
    return EmbeddingMatrix(
        mention_ids=np.asarray(ids, dtype=np.int64), rows=normalize_rows(rows)
    )


# --- hashed-feature projection embedder --------------------------------------


def hashed_features(
    parts: list[tuple[str, str]],
    feature_dim: int,
    tokenizer: SimpleTokenizer | None = None,
) -> np.ndarray:
    """Signed hashing of field-prefixed tokens into a fixed-size vector."""
    tok = tokenizer or SimpleTokenizer()
    vec = np.zeros(feature_dim, dtype=np.float32)
    for fieldname, text in parts:
        for t in tok.tokenize(text):
            h = hashlib.blake2b(
                f"{fieldname}:{t}".encode("utf-8"), digest_size=8
            ).digest()
            raw = int.from_bytes(h, "little")
            bucket = raw % feature_dim
            sign = 1.0 if (raw >> 63) & 1 else -1.0
            vec[bucket] += sign
    return vec


def mention_feature_parts(d: Document, m: NumericalMention) -> list[tuple[str, str]]:
    t = d.table(m.table_id)
    row_header = t.cells[m.row][0].raw_text if m.col != 0 else t.cells[m.row][m.col].raw_text
    col_header = t.cells[0][m.col].raw_text if m.row != 0 else t.cells[m.row][m.col].raw_text
    return [
        ("chapter", t.chapter_title),
        ("row", row_header),
        ("col", col_header),
        ("pos", position_statement(m)),
    ]


def mention_features(
    d: Document,
    m: NumericalMention,
    feature_dim: int,
    tokenizer: SimpleTokenizer | None = None,
) -> np.ndarray:
    return hashed_features(mention_feature_parts(d, m), feature_dim, tokenizer)


def baseline_embed(
    d: Document,
    m: NumericalMention,
    feature_dim: int = 256,
    tokenizer: SimpleTokenizer | None = None,
) -> np.ndarray:
    """Untrained embedding: the unit-normalized hashed feature vector."""
    f = mention_features(d, m, feature_dim, tokenizer)
    return normalize_rows(f[None, :])[0]


def projection_embed(features: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Apply the trained linear map and L2-normalize rows."""
    f = np.atleast_2d(features)
    return normalize_rows(f @ w.T).astype(np.float32)


@dataclass
class EmbedderConfig:
    feature_dim: int = 256
    dim: int = 64
    seed: int = 0


class FeatureEmbedder:
    """Trainable projection over hashed mention features.

    The projection starts as a seeded random map; `training.train_embedder`
    updates it in place. Embedding documents is read-only and thread-safe.
    """

    def __init__(self, config: EmbedderConfig | None = None, w: np.ndarray | None = None):
        self.config = config or EmbedderConfig()
        if w is not None:
            w = np.asarray(w, dtype=np.float64)
            if w.shape != (self.config.dim, self.config.feature_dim):
                raise ValueError("projection matrix shape mismatch")
            self.w = w.copy()
        else:
            rng = np.random.default_rng([self.config.seed, 0xFEA7])
            self.w = rng.standard_normal(
                (self.config.dim, self.config.feature_dim)
            ) / np.sqrt(self.config.feature_dim)

    def features_for(self, d: Document, mentions=None) -> np.ndarray:
        mentions = d.mentions if mentions is None else mentions
        if not mentions:
            return np.zeros((0, self.config.feature_dim), dtype=np.float32)
        feats = np.stack(
            [mention_features(d, m, self.config.feature_dim) for m in mentions]
        )
        # unit-norm features keep gradient scales independent of token counts
        return normalize_rows(feats).astype(np.float32)

    def embed_document(self, d: Document) -> EmbeddingMatrix:
        feats = self.features_for(d)
        rows = projection_embed(feats, self.w) if len(feats) else feats
        ids = np.asarray([m.mention_id for m in d.mentions], dtype=np.int64)
        return EmbeddingMatrix(mention_ids=ids, rows=rows.reshape(len(ids), self.config.dim))

    def save(self, path: str | Path) -> None:
        EmbeddingMatrix(
            mention_ids=np.arange(self.config.dim, dtype=np.int64),
            rows=self.w.astype(np.float32),
        ).save(path)

    @classmethod
    def load(cls, path: str | Path, seed: int = 0) -> "FeatureEmbedder":
        m = EmbeddingMatrix.load(path)
        cfg = EmbedderConfig(feature_dim=m.dim, dim=len(m), seed=seed)
        return cls(config=cfg, w=m.rows.astype(np.float64))
