"""Decoupled contrastive objective for mention embeddings.

The objective splits a batch into non-isolated mentions (those with at
least one semantically equivalent partner in the batch) and isolated ones.
Non-isolated mentions get an InfoNCE term whose denominator runs over the
non-isolated set only; isolated mentions get a repulsion term that pushes
their pairwise similarities down. The combined loss is a weighted sum of
the two. A standard InfoNCE (every mention its own positive, denominator
over the whole batch) is kept as a baseline.

Similarities are full cosines, so losses and gradients are well defined for
arbitrary nonzero rows; on unit-norm inputs cosine equals the dot product.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import SyntheticCorpus
from .encoding import EmbedderConfig, FeatureEmbedder


class EmptyNonIsolated(ValueError):
    """Loss over non-isolated mentions needs at least two of them."""


@dataclass(frozen=True)
class LossParams:
    tau: float = 0.15
    alpha1: float = 0.75
    alpha2: float = 0.25
    epsilon: float = 1e-4

    def __post_init__(self) -> None:
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be > 0")
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("loss weights must be >= 0")


@dataclass
class Batch:
    """Embeddings plus in-batch equivalence structure.

    `positives[i]` is the set of batch indices semantically equivalent to i,
    self excluded; it must be symmetric. Isolated / non-isolated sets are
    derived: i is non-isolated iff positives[i] is nonempty.
    """

    embeddings: np.ndarray  # (n, dim)
    positives: dict[int, frozenset[int]]
    isolated: np.ndarray = field(init=False)
    nonisolated: np.ndarray = field(init=False)

    def __post_init__(self) -> None:
        self.embeddings = np.asarray(self.embeddings, dtype=np.float64)
        n = self.embeddings.shape[0]
        for i, p in self.positives.items():
            if not 0 <= i < n:
                raise ValueError(f"index {i} out of range")
            if i in p:
                raise ValueError(f"positives of {i} include itself")
            for j in p:
                if i not in self.positives.get(j, frozenset()):
                    raise ValueError(f"positives not symmetric for ({i},{j})")
        non = sorted(i for i in range(n) if self.positives.get(i))
        iso = sorted(i for i in range(n) if i not in set(non))
        self.nonisolated = np.asarray(non, dtype=np.int64)
        self.isolated = np.asarray(iso, dtype=np.int64)

    @property
    def n(self) -> int:
        return int(self.embeddings.shape[0])

    @classmethod
    def from_groups(cls, embeddings: np.ndarray, groups: list[list[int]]) -> "Batch":
        """Build the positives map from index groups (batch-local indices)."""
        positives: dict[int, frozenset[int]] = {}
        for g in groups:
            for i in g:
                positives[i] = frozenset(j for j in g if j != i)
        return cls(embeddings=embeddings, positives=positives)


def cosine_matrix(embeddings: np.ndarray) -> np.ndarray:
    e = np.asarray(embeddings, dtype=np.float64)
    norms = np.linalg.norm(e, axis=1)
    s = (e @ e.T) / np.outer(norms, norms)
    np.fill_diagonal(s, 1.0)
    return s


def _logsumexp(x: np.ndarray) -> float:
    m = float(np.max(x))
    return m + float(np.log(np.sum(np.exp(x - m))))


def loss_nonisolated(b: Batch, p: LossParams) -> float:
    """Mean InfoNCE over non-isolated mentions; denominator over the
    non-isolated set including the anchor itself."""
    non = b.nonisolated
    if len(non) < 2:
        raise EmptyNonIsolated("need >= 2 non-isolated mentions")
    s = cosine_matrix(b.embeddings) / p.tau
    total = 0.0
    for i in non:
        pos = sorted(b.positives[int(i)])
        total += _logsumexp(s[i, pos]) - _logsumexp(s[i, non])
    return -total / len(non)


def loss_isolated(b: Batch, p: LossParams) -> float:
    """Repulsion over ordered pairs of isolated mentions; 0 when there are
    fewer than two of them."""
    iso = b.isolated
    if len(iso) <= 1:
        return 0.0
    s = cosine_matrix(b.embeddings) / p.tau
    block = s[np.ix_(iso, iso)]
    off = block[~np.eye(len(iso), dtype=bool)]
    # -log(eps / (eps + sum exp)) via stabilized log-sum-exp
    lse = _logsumexp(off)
    return float(np.logaddexp(np.log(p.epsilon), lse) - np.log(p.epsilon))


def combined_loss(b: Batch, p: LossParams) -> float:
    return p.alpha1 * loss_nonisolated(b, p) + p.alpha2 * loss_isolated(b, p)


def standard_infonce(b: Batch, p: LossParams) -> float:
    """Baseline: every mention is a positive of itself, denominator over the
    whole batch."""
    n = b.n
    if n == 0:
        raise ValueError("empty batch")
    s = cosine_matrix(b.embeddings) / p.tau
    everyone = np.arange(n)
    total = 0.0
    for i in range(n):
        pos = sorted(set(b.positives.get(i, frozenset())) | {i})
        total += _logsumexp(s[i, pos]) - _logsumexp(s[i, everyone])
    return -total / n


def _cosine_grad_accumulate(
    e: np.ndarray, s: np.ndarray, coeff: np.ndarray
) -> np.ndarray:
    """Map d(loss)/d(sim) coefficients to d(loss)/d(embedding rows).

    `coeff[i, j]` is the derivative of the loss w.r.t. the cosine s_ij of the
    ordered pair (i, j), diagonal ignored (s_ii is the constant 1).
    """
    n, _ = e.shape
    norms = np.linalg.norm(e, axis=1)
    unit = e / norms[:, None]
    c = coeff.copy()
    np.fill_diagonal(c, 0.0)
    # d s_ij / d e_i = (u_j - s_ij u_i) / |e_i|,  so
    # grad_i = sum_j (c_ij + c_ji) (u_j - s_ij u_i) / |e_i|
    w = c + c.T
    grad = w @ unit
    grad -= (w * s).sum(axis=1)[:, None] * unit
    grad /= norms[:, None]
    return grad


def loss_gradient(b: Batch, p: LossParams) -> np.ndarray:
    """Analytic gradient of alpha1*L_n + alpha2*L_i w.r.t. embedding rows."""
    e = b.embeddings
    n = b.n
    s = cosine_matrix(e)
    x = s / p.tau
    coeff = np.zeros((n, n))

    non = b.nonisolated
    if len(non) >= 2 and p.alpha1 != 0.0:
        scale = -p.alpha1 / (len(non) * p.tau)
        for i in non:
            i = int(i)
            pos = sorted(b.positives[i])
            a = np.exp(x[i, pos] - _logsumexp(x[i, pos]))
            for j, aj in zip(pos, a):
                coeff[i, j] += scale * aj
            d = np.exp(x[i, non] - _logsumexp(x[i, non]))
            for j, dj in zip(non, d):
                if j != i:  # s_ii is constant
                    coeff[i, int(j)] -= scale * dj
    iso = b.isolated
    if len(iso) > 1 and p.alpha2 != 0.0:
        block = x[np.ix_(iso, iso)]
        off_mask = ~np.eye(len(iso), dtype=bool)
        lse = _logsumexp(block[off_mask])
        # d L_i / d s_tq = exp(s_tq/tau) / (tau * (eps + D)) per ordered pair,
        # computed as exp(s_tq/tau - lse) / (eps * exp(-lse) + 1) for stability
        probs = np.exp(block - lse) / (p.epsilon * np.exp(-lse) + 1.0)
        scale = p.alpha2 / p.tau
        for a_idx, t in enumerate(iso):
            for b_idx, q in enumerate(iso):
                if a_idx != b_idx:
                    coeff[int(t), int(q)] += scale * probs[a_idx, b_idx]
    return _cosine_grad_accumulate(e, s, coeff)


# --- trainer ------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 3
    learning_rate: float = 0.05  # plain SGD step for the projection map
    tables_per_step: int = 12
    seed: int = 0
    objective: str = "decoupled"  # or "standard"
    params: LossParams = LossParams()


@dataclass(frozen=True)
class TrainRecord:
    epoch: int
    step: int
    loss_n: float
    loss_i: float
    loss: float


def _standard_gradient(b: Batch, p: LossParams) -> np.ndarray:
    """Analytic gradient of the standard InfoNCE baseline."""
    e = b.embeddings
    n = b.n
    s = cosine_matrix(e)
    x = s / p.tau
    coeff = np.zeros((n, n))
    everyone = np.arange(n)
    scale = -1.0 / (n * p.tau)
    for i in range(n):
        pos = sorted(set(b.positives.get(i, frozenset())) | {i})
        a = np.exp(x[i, pos] - _logsumexp(x[i, pos]))
        for j, aj in zip(pos, a):
            if j != i:
                coeff[i, j] += scale * aj
        d = np.exp(x[i] - _logsumexp(x[i, everyone]))
        for j in range(n):
            if j != i:
                coeff[i, j] -= scale * d[j]
    return _cosine_grad_accumulate(e, s, coeff)


def train_embedder(
    corpus: SyntheticCorpus,
    embedder: FeatureEmbedder | None = None,
    config: TrainConfig | None = None,
) -> tuple[FeatureEmbedder, list[TrainRecord]]:
    """SGD over table-grouped batches; returns the trained embedder and a
    per-step loss log. Deterministic under (corpus, config.seed)."""
    cfg = config or TrainConfig()
    emb = embedder or FeatureEmbedder(EmbedderConfig(seed=cfg.seed))
    params = cfg.params

    # precompute features and in-document group labels per (doc, table)
    units = []  # (features (k, fdim), group labels (k,))
    for doc, gold in zip(corpus.documents, corpus.gold):
        group_of = {}
        for g_idx, group in enumerate(gold.groups):
            for mid in group:
                group_of[mid] = (doc.doc_id, g_idx)
        feats = emb.features_for(doc)
        for t in doc.tables:
            idx = [m.mention_id for m in doc.mentions if m.table_id == t.table_id]
            if not idx:
                continue
            labels = [group_of.get(mid) for mid in idx]
            units.append((feats[idx], labels))

    rng = np.random.default_rng([cfg.seed, 0x7121])
    log: list[TrainRecord] = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(units))
        for step, chunk_start in enumerate(range(0, len(order), cfg.tables_per_step)):
            chunk = order[chunk_start : chunk_start + cfg.tables_per_step]
            feats = np.concatenate([units[int(u)][0] for u in chunk], axis=0)
            labels: list = []
            for u in chunk:
                labels.extend(units[int(u)][1])
            by_label: dict = {}
            for i, lab in enumerate(labels):
                if lab is not None:
                    by_label.setdefault(lab, []).append(i)
            groups = [v for v in by_label.values() if len(v) >= 2]
            raw = feats.astype(np.float64) @ emb.w.T
            batch = Batch.from_groups(raw, groups)
            if cfg.objective == "standard":
                loss = standard_infonce(batch, params)
                grad_rows = _standard_gradient(batch, params)
                ln, li = loss, 0.0
            else:
                ln = (
                    loss_nonisolated(batch, params)
                    if len(batch.nonisolated) >= 2
                    else 0.0
                )
                li = loss_isolated(batch, params)
                loss = params.alpha1 * ln + params.alpha2 * li
                grad_rows = loss_gradient(batch, params)
            grad_w = grad_rows.T @ feats.astype(np.float64)
            emb.w -= cfg.learning_rate * grad_w
            log.append(
                TrainRecord(epoch=epoch, step=step, loss_n=float(ln), loss_i=float(li), loss=float(loss))
            )
    return emb, log
