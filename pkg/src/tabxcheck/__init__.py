"""Coarse-to-fine numerical cross-checking for table-heavy documents.

Two-stage matching over the numerical mentions of a document: an embedding
similarity filter prunes the quadratic pair space, then a pluggable pair
classifier decides semantic equivalence; equivalent-but-unequal pairs are
reported as inconsistencies.
"""

from .documents import (
    Document,
    GoldAnnotation,
    MentionContext,
    NumericValue,
    NumericalMention,
    Table,
    build_context,
    extract_mentions,
    linearize_table,
    normalize_value,
    parse_document,
    serialize_document,
)
from .corpus import GenConfig, SyntheticCorpus, generate_corpus, inject_inconsistencies
from .encoding import (
    EmbedderConfig,
    EmbeddingMatrix,
    FeatureEmbedder,
    build_epe_layout,
    build_layout,
    attention_allowed,
    reference_encode,
)
from .filtering import CandidatePairSet, FilterParams, build_index, exact_pairs, query_pairs
from .training import Batch, LossParams, combined_loss, loss_gradient, train_embedder
from .table_paths import build_graph, exact_max_path, greedy_max_path, relevance_score
from .crosscheck import evaluate, detect_inconsistencies, numeric_equal, run_pipeline
from .hnsw import HnswGraph, active_backend

__version__ = "0.1.0"

__all__ = [
    "Document",
    "GoldAnnotation",
    "MentionContext",
    "NumericValue",
    "NumericalMention",
    "Table",
    "build_context",
    "extract_mentions",
    "linearize_table",
    "normalize_value",
    "parse_document",
    "serialize_document",
    "GenConfig",
    "SyntheticCorpus",
    "generate_corpus",
    "inject_inconsistencies",
    "EmbedderConfig",
    "EmbeddingMatrix",
    "FeatureEmbedder",
    "build_epe_layout",
    "build_layout",
    "attention_allowed",
    "reference_encode",
    "CandidatePairSet",
    "FilterParams",
    "build_index",
    "exact_pairs",
    "query_pairs",
    "Batch",
    "LossParams",
    "combined_loss",
    "loss_gradient",
    "train_embedder",
    "build_graph",
    "exact_max_path",
    "greedy_max_path",
    "relevance_score",
    "evaluate",
    "detect_inconsistencies",
    "numeric_equal",
    "run_pipeline",
    "HnswGraph",
    "active_backend",
]
