"""Cross-attention answer-selection workbench for community QA.

The model scores each (question subject, question body, answer) triple
with a three-way distribution over Good / Potential / Bad, trained by a
small built-in reverse-mode engine.  A companion pipeline evaluates
LLM-based selection with knowledge hints and a prompt cascade.
"""

from .data import (LABELS, Answer, CorpusStats, QAThread, Vocabulary,
                   corpus_stats, parse_corpus, preprocess,
                   truncate_and_index, write_jsonl)
from .encoder import (EncodedSequence, EncoderConfig, VectorStore,
                      load_vector_store, save_vector_store)
from .estimator import HyperParams, QANClassifier, TrainHistory, run_ablation
from .metrics import (MetricsReport, PredictionRecord, average_precision,
                      classification_metrics, compute_report, emit_report,
                      map_score)
from .network import (VARIANTS, ClassDistribution, Instance, QANetwork,
                      apply_variant, cross_attend, enrich, loss,
                      similarity_matrix)

__version__ = "0.1.0"

__all__ = [
    "LABELS", "VARIANTS", "Answer", "ClassDistribution", "CorpusStats",
    "EncodedSequence", "EncoderConfig", "HyperParams", "Instance",
    "MetricsReport", "PredictionRecord", "QANClassifier", "QANetwork",
    "QAThread", "TrainHistory", "VectorStore", "Vocabulary",
    "apply_variant", "average_precision", "classification_metrics",
    "compute_report", "corpus_stats", "cross_attend", "emit_report",
    "enrich", "load_vector_store", "loss", "map_score", "parse_corpus",
    "preprocess", "run_ablation", "save_vector_store", "similarity_matrix",
    "truncate_and_index", "write_jsonl",
]
