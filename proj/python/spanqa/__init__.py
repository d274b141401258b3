"""Extractive question answering over SQuAD-format data."""

from ._core import (
    Error,
    Predictor,
    best_span,
    categorize_question,
    dataset_stats,
    default_param_count,
    em_score,
    evaluate,
    f1_score,
    gradcheck,
    normalize_answer,
    oracle_best_span,
    raw_product_span,
    smart_span_score,
    tokenize,
)

__all__ = [
    "Error",
    "Predictor",
    "best_span",
    "categorize_question",
    "dataset_stats",
    "default_param_count",
    "em_score",
    "evaluate",
    "f1_score",
    "gradcheck",
    "normalize_answer",
    "oracle_best_span",
    "raw_product_span",
    "smart_span_score",
    "tokenize",
]
