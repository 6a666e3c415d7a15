"""Acceptance criteria, one test per criterion.

Run with `pytest tests/test_acceptance.py -v -s` to see one line per
criterion. Expensive shared artifacts (the default 50-document corpus and
the two trained embedders) are session/module fixtures.
"""

import itertools
import math
import time

import numpy as np
import pytest

from tabxcheck.classify import OracleBackend, build_prompt
from tabxcheck.corpus import GenConfig, generate_corpus
from tabxcheck.crosscheck import corpus_sweep, evaluate, run_pipeline
from tabxcheck.documents import GoldAnnotation
from tabxcheck.encoding import (
    EmbeddingMatrix,
    ReferenceWeights,
    build_layout,
    reference_encode,
)
from tabxcheck.filtering import FilterParams, build_index, exact_pairs, query_pairs
from tabxcheck.hnsw import active_backend
from tabxcheck.table_paths import (
    RelevanceGraph,
    build_graph,
    exact_max_path,
    greedy_max_path,
    reading_order_path,
)
from tabxcheck.training import (
    Batch,
    LossParams,
    TrainConfig,
    combined_loss,
    loss_gradient,
    loss_isolated,
    loss_nonisolated,
    standard_infonce,
    train_embedder,
)


def report(num, desc, t0):
    print(f"\ncriterion {num:02d} PASS  {desc}  ({time.time() - t0:.1f}s)")


def random_layout(rng):
    vocab = [f"tok{i}" for i in range(60)]
    words = lambda k: " ".join(vocab[int(i)] for i in rng.integers(0, 60, k))
    ctx = words(int(rng.integers(5, 40)))
    prompt = words(int(rng.integers(2, 8)))
    mentions = [
        (mid, words(int(rng.integers(1, 5))))
        for mid in range(int(rng.integers(2, 7)))
    ]
    return ctx, prompt, mentions


def test_criterion_01_mask_isolation():
    t0 = time.time()
    rng = np.random.default_rng(1001)
    weights = ReferenceWeights(dim=16, seed=9)
    for _ in range(100):
        ctx, prompt, mentions = random_layout(rng)
        base = reference_encode(build_layout(ctx, prompt, mentions), weights)
        victim = int(rng.integers(0, len(mentions)))
        mutated = list(mentions)
        mutated[victim] = (mentions[victim][0], "zz qq " * int(rng.integers(1, 4)))
        enc_mut = reference_encode(build_layout(ctx, prompt, mutated), weights)
        for mid, _ in mentions:
            if mid != victim:
                assert np.array_equal(base.row_for(mid), enc_mut.row_for(mid))
        perm = [mentions[int(i)] for i in rng.permutation(len(mentions))]
        enc_perm = reference_encode(build_layout(ctx, prompt, perm), weights)
        for mid, _ in mentions:
            assert np.array_equal(base.row_for(mid), enc_perm.row_for(mid))
    elapsed = time.time() - t0
    assert elapsed < 10.0
    report(1, "mask isolation: bitwise invariance over 100 random layouts", t0)


def test_criterion_02_position_law():
    t0 = time.time()
    rng = np.random.default_rng(1002)
    for _ in range(100):
        ctx, prompt, mentions = random_layout(rng)
        lay = build_layout(ctx, prompt, mentions)
        slot = lay.base_len
        for seg in lay.segments:
            for m in range(1, len(seg.tokens) + 1):
                assert int(lay.position[slot]) == lay.base_len + m - 1
                slot += 1
        assert slot == lay.total_len
        for s in range(lay.base_len):
            assert int(lay.position[s]) == s
    report(2, "position law: exhaustive per-layout check", t0)


def _random_batch(rng, n_max=16, dim_max=32):
    n = int(rng.integers(4, n_max + 1))
    dim = int(rng.integers(4, dim_max + 1))
    e = rng.standard_normal((n, dim))
    e /= np.linalg.norm(e, axis=1, keepdims=True)
    ids = list(rng.permutation(n))
    groups = []
    while len(ids) > n // 2 and len(ids) >= 2:
        size = min(int(rng.integers(2, 4)), len(ids))
        groups.append([int(ids.pop()) for _ in range(size)])
    return Batch.from_groups(e, groups)


def test_criterion_03_loss_oracles():
    t0 = time.time()
    e = np.eye(4)[:2]
    assert abs(loss_nonisolated(Batch.from_groups(e, [[0, 1]]), LossParams(tau=1.0)) - 1.313262) < 1e-6
    assert abs(loss_isolated(Batch(embeddings=e, positives={}), LossParams(tau=1.0, epsilon=1.0)) - 1.098612) < 1e-6

    def cosine(a, b):
        return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))

    rng = np.random.default_rng(1003)
    for _ in range(50):
        b = _random_batch(rng)
        p = LossParams()
        non = [int(i) for i in b.nonisolated]
        iso = [int(i) for i in b.isolated]
        e = b.embeddings
        if len(non) >= 2:
            total = 0.0
            for i in non:
                num = sum(math.exp(cosine(e[i], e[j]) / p.tau) for j in b.positives[i])
                den = sum(math.exp((1.0 if k == i else cosine(e[i], e[k])) / p.tau) for k in non)
                total += -math.log(num / den)
            assert abs(loss_nonisolated(b, p) - total / len(non)) < 1e-9
        d = sum(
            math.exp(cosine(e[t], e[q]) / p.tau) for t in iso for q in iso if t != q
        )
        naive_iso = -math.log(p.epsilon / (p.epsilon + d)) if len(iso) > 1 else 0.0
        assert abs(loss_isolated(b, p) - naive_iso) < 1e-9
        n = len(e)
        total = 0.0
        for i in range(n):
            pos = set(b.positives.get(i, frozenset())) | {i}
            num = sum(math.exp((1.0 if j == i else cosine(e[i], e[j])) / p.tau) for j in pos)
            den = sum(math.exp((1.0 if k == i else cosine(e[i], e[k])) / p.tau) for k in range(n))
            total += -math.log(num / den)
        assert abs(standard_infonce(b, p) - total / n) < 1e-9

    for n_iso in (0, 1):
        rows = np.eye(6)[: 4 + n_iso]
        b = Batch.from_groups(rows, [[0, 1], [2, 3]])
        assert len(b.isolated) == n_iso
        assert loss_isolated(b, LossParams()) == 0.0
    report(3, "loss oracles: hand values to 1e-6, naive summation to 1e-9", t0)


def test_criterion_04_gradient_correctness():
    t0 = time.time()
    rng = np.random.default_rng(1004)
    h = 1e-5
    for _ in range(50):
        b = _random_batch(rng)
        p = LossParams()
        g = loss_gradient(b, p)
        g_fd = np.zeros_like(b.embeddings)
        e = b.embeddings
        for r in range(e.shape[0]):
            for c in range(e.shape[1]):
                ep, em = e.copy(), e.copy()
                ep[r, c] += h
                em[r, c] -= h
                g_fd[r, c] = (
                    combined_loss(Batch(ep, b.positives), p)
                    - combined_loss(Batch(em, b.positives), p)
                ) / (2 * h)
        err = np.abs(g - g_fd).max() / max(np.abs(g_fd).max(), 1e-12)
        assert err <= 1e-4
    elapsed = time.time() - t0
    assert elapsed < 30.0
    report(4, "analytic gradient matches central differences (50 batches)", t0)


def test_criterion_05_filter_fidelity():
    t0 = time.time()
    rng = np.random.default_rng(1005)
    n, dim = 10_000, 32
    rows = rng.standard_normal((n, dim)).astype(np.float32)
    rows /= np.linalg.norm(rows, axis=1, keepdims=True)
    emb = EmbeddingMatrix(mention_ids=np.arange(n), rows=rows)
    params = FilterParams(threshold=0.5)
    approx = query_pairs(build_index(emb, params), params)
    exact = exact_pairs(emb, 0.5)
    assert len(exact) > 1000
    jaccard = approx.jaccard(exact)
    assert jaccard >= 0.99

    small = EmbeddingMatrix(mention_ids=np.arange(300), rows=rows[:300])
    mine = exact_pairs(small, 0.5)
    r64 = small.rows.astype(np.float64)
    independent = set()
    for i in range(300):
        for j in range(i + 1, 300):
            if float(np.dot(r64[i], r64[j])) > 0.5:
                independent.add((i, j))
    assert mine.ids() == independent
    elapsed = time.time() - t0
    assert elapsed < 60.0
    report(
        5,
        f"filter fidelity: jaccard {jaccard:.5f} on 10k vectors ({active_backend()} kernel)",
        t0,
    )


@pytest.fixture(scope="module")
def trained_embedders(default_corpus):
    dec, _ = train_embedder(default_corpus, None, TrainConfig(seed=0))
    std, _ = train_embedder(
        default_corpus, None, TrainConfig(seed=0, objective="standard")
    )
    return dec, std


def test_criterion_06_sweep_analog(default_corpus, trained_embedders):
    t0 = time.time()
    decoupled, standard = trained_embedders
    thresholds = [x / 20 for x in range(1, 20)]
    mean_total = np.mean(
        [len(d.mentions) * (len(d.mentions) - 1) / 2 for d in default_corpus.documents]
    )
    rows_dec = corpus_sweep(default_corpus, decoupled, thresholds)
    rows_std = corpus_sweep(default_corpus, standard, thresholds)
    ok = [
        r
        for r in rows_dec
        if r["recall"] >= 0.95 and r["pairs_per_doc"] <= 0.10 * mean_total
    ]
    assert ok, f"no threshold reaches recall 0.95 within 10% pairs: {rows_dec}"
    dec_best = min(r["pairs_per_doc"] for r in rows_dec if r["recall"] >= 0.95)
    std_reachable = [r["pairs_per_doc"] for r in rows_std if r["recall"] >= 0.95]
    std_best = min(std_reachable) if std_reachable else float("inf")
    assert dec_best <= std_best
    elapsed = time.time() - t0
    assert elapsed < 600.0
    report(
        6,
        f"sweep analog: decoupled {dec_best:.0f} vs standard {std_best:.0f} pairs/doc at recall 0.95 "
        f"(budget {0.10 * mean_total:.0f})",
        t0,
    )


def test_criterion_07_cnap_correctness():
    t0 = time.time()
    rng = np.random.default_rng(1007)
    for trial in range(1000):
        n = int(rng.integers(1, 14))
        edges = {}
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.4:
                    edges[(i, j)] = float(rng.uniform(0.01, 0.5))
        g = RelevanceGraph(table_ids=tuple(f"t{k}" for k in range(n)), edges=edges)
        p = greedy_max_path(g, seed=trial)
        assert sorted(p.table_ids) == sorted(g.table_ids)

    for trial in range(200):
        n = int(rng.integers(2, 9))
        edges = {}
        for i in range(n):
            for j in range(i + 1, n):
                if rng.random() < 0.5:
                    edges[(i, j)] = float(rng.uniform(0.01, 0.5))
        g = RelevanceGraph(table_ids=tuple(f"t{k}" for k in range(n)), edges=edges)
        assert (
            greedy_max_path(g, seed=trial).total_weight
            <= exact_max_path(g).total_weight + 1e-9
        )

    wins = 0
    for seed in range(100):
        c = generate_corpus(GenConfig(n_docs=1, rng_seed=2000 + seed))
        d = c.documents[0]
        g = build_graph(d)
        if greedy_max_path(g, seed=seed).total_weight >= reading_order_path(d, g).total_weight - 1e-12:
            wins += 1
    assert wins >= 95

    g3 = RelevanceGraph(
        table_ids=("A", "B", "C"), edges={(0, 1): 0.5, (1, 2): 0.3, (0, 2): 0.1}
    )
    p3 = greedy_max_path(g3, seed=0)
    assert p3.table_ids == ("A", "B", "C") and abs(p3.total_weight - 0.8) < 1e-12
    report(7, f"path construction: permutation/oracle/reading-order ({wins}/100 wins)", t0)


def test_criterion_08_metrics_oracle():
    t0 = time.time()
    rng = np.random.default_rng(1008)
    for _ in range(1000):
        n_docs = int(rng.integers(1, 5))
        gold, predicted = [], {}
        inter = npred = ngold = 0
        for k in range(n_docs):
            doc_id = f"doc{k}"
            n_groups = int(rng.integers(0, 7))
            groups = tuple(
                frozenset({100 * g, 100 * g + 1}) for g in range(n_groups)
            )
            gold.append(GoldAnnotation(doc_id=doc_id, groups=groups))
            gold_pairs = {(100 * g, 100 * g + 1) for g in range(n_groups)}
            noise = {
                (int(a) + 5000, int(a) + 5001 + int(b))
                for a, b in rng.integers(0, 50, (int(rng.integers(0, 6)), 2))
            }
            kept = {p for p in gold_pairs if rng.random() < 0.6} | noise
            predicted[doc_id] = kept
            inter += len(gold_pairs & kept)
            npred += len(kept)
            ngold += len(gold_pairs)
        m = evaluate(gold, predicted)
        p = inter / npred if npred else 1.0
        r = inter / ngold if ngold else 1.0
        f1 = 2 * p * r / (p + r) if p + r else 0.0
        assert m.precision == p and m.recall == r and abs(m.f1 - f1) < 1e-12

    gold = [
        GoldAnnotation(doc_id="a", groups=(frozenset({1, 2}),)),
        GoldAnnotation(doc_id="b", groups=(frozenset({1, 2}), frozenset({3, 4}), frozenset({5, 6}))),
    ]
    predicted = {"a": {(1, 2), (7, 8)}, "b": {(1, 2)}}
    m = evaluate(gold, predicted)
    assert abs(m.precision - 2 / 3) < 1e-6
    assert abs(m.recall - 0.5) < 1e-6
    assert abs(m.f1 - 0.571429) < 1e-6
    report(8, "set-level metrics equal brute-force recomputation (1000 sets)", t0)


def test_criterion_09_end_to_end_planted():
    t0 = time.time()
    corpus = generate_corpus(GenConfig(inconsistency_rate=0.3, rng_seed=1))
    assert corpus.planted_inconsistencies
    trained, _ = train_embedder(corpus, None, TrainConfig(seed=0))
    result = run_pipeline(
        corpus,
        trained,
        OracleBackend(list(corpus.gold)),
        filter_params=FilterParams(threshold=0.3),
    )
    detected = result.all_inconsistent_pairs()
    planted = {(p.doc_id, p.pair[0], p.pair[1]) for p in corpus.planted_inconsistencies}
    assert detected == planted
    inter = len(detected & planted)
    precision = inter / len(detected)
    recall = inter / len(planted)
    assert precision == 1.0 and recall == 1.0
    elapsed = time.time() - t0
    assert elapsed < 300.0
    report(
        9,
        f"end-to-end: {len(planted)} planted inconsistencies recovered exactly",
        t0,
    )


def test_criterion_10_masking_completeness(default_corpus):
    t0 = time.time()
    rng = np.random.default_rng(1010)
    checked = 0
    for d, gold in zip(default_corpus.documents, default_corpus.gold):
        pairs = sorted(gold.pairs())
        n = len(d.mentions)
        extra = {
            (int(min(a, b)), int(max(a, b)))
            for a, b in rng.integers(0, n, (15, 2))
            if a != b
        }
        for i, j in itertools.chain(pairs[:10], sorted(extra)):
            prompt = build_prompt(d, d.mention(i), d.mention(j))
            for m in d.mentions:
                assert m.value.canonical() not in prompt.context_block
            checked += 1
            if checked >= 1000:
                break
        if checked >= 1000:
            break
    assert checked >= 1000
    report(10, f"masking completeness: zero value leaks in {checked} prompts", t0)
