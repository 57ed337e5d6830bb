"""Training loop and the scikit-learn-compatible classifier facade.

``QANClassifier`` follows the estimator protocol: all hyperparameters
are constructor arguments, ``fit``/``predict``/``predict_proba`` operate
on (subject, body, answer) text triples, and ``get_params``/``set_params``
come from ``BaseEstimator`` so the model clones and grid-searches like
any other scikit-learn classifier.  Thread-aware entry points
(``fit_threads``, ``predict_threads``) preserve question grouping for
ranking metrics.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from . import autodiff as ad
from . import network as net
from .autodiff import AdamState, adam_step, backward, zero_gradients
from .data import (LABELS, Answer, IndexedSequence, QAThread, Vocabulary,
                   index_tokens, truncate_and_index)
from .encoder import EncoderConfig, VectorStore, load_vector_store
from .errors import ConfigError, EmptyInputError, LabelError
from .metrics import PredictionRecord, classification_metrics, map_score
from .network import VARIANTS, Instance, QANetwork, apply_variant
from .preprocessing import preprocess

TextTriple = tuple[str, str, str]


@dataclass(frozen=True)
class HyperParams:
    """Training constants; defaults are the reference configuration."""

    learning_rate: float = 1e-3
    l2: float = 1e-5
    batch_size: int = 100
    dropout: float = 0.3
    max_subject_len: int = 20
    max_body_len: int = 110
    max_answer_len: int = 100
    attention_dim: int = 300
    embedding_dim: int = 64
    hidden_dim: int = 64
    epochs: int = 50
    patience: int = 5
    seed: int = 0

    def validate(self) -> None:
        positive = ("learning_rate", "batch_size", "max_subject_len",
                    "max_body_len", "max_answer_len", "attention_dim",
                    "embedding_dim", "hidden_dim", "epochs", "patience")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.l2 < 0:
            raise ConfigError(f"l2 must be non-negative, got {self.l2}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "HyperParams":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in payload.items() if k in names})


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_accuracy: float
    dev_map: float | None
    wall_time: float = field(compare=False, default=0.0)


@dataclass
class TrainHistory:
    records: list[EpochRecord]
    best_epoch: int

    def __len__(self) -> int:
        return len(self.records)

    def as_dict(self) -> dict:
        # Wall times are deliberately left out of artifacts so identically
        # seeded runs serialize byte-identically.
        return {
            "best_epoch": self.best_epoch,
            "epochs": [{
                "epoch": r.epoch,
                "train_loss": r.train_loss,
                "dev_accuracy": r.dev_accuracy,
                "dev_map": r.dev_map,
            } for r in self.records],
        }


class QANClassifier(BaseEstimator, ClassifierMixin):
    """Cross-attention answer-selection classifier.

    Parameters mirror :class:`HyperParams` plus the structural ``variant``
    (one of the seven ablation configurations) and an optional path to a
    precomputed-vector store.  ``classes_`` is always the fixed label
    order (Good, Potential, Bad), which is also the probability column
    order of :meth:`predict_proba`.
    """

    def __init__(self, *, variant: str = "full", learning_rate: float = 1e-3,
                 l2: float = 1e-5, batch_size: int = 100, dropout: float = 0.3,
                 max_subject_len: int = 20, max_body_len: int = 110,
                 max_answer_len: int = 100, attention_dim: int = 300,
                 embedding_dim: int = 64, hidden_dim: int = 64,
                 epochs: int = 50, patience: int = 5, seed: int = 0,
                 min_token_count: int = 1, vectors_path: str | None = None):
        self.variant = variant
        self.learning_rate = learning_rate
        self.l2 = l2
        self.batch_size = batch_size
        self.dropout = dropout
        self.max_subject_len = max_subject_len
        self.max_body_len = max_body_len
        self.max_answer_len = max_answer_len
        self.attention_dim = attention_dim
        self.embedding_dim = embedding_dim
        self.hidden_dim = hidden_dim
        self.epochs = epochs
        self.patience = patience
        self.seed = seed
        self.min_token_count = min_token_count
        self.vectors_path = vectors_path

    # -- configuration ----------------------------------------------------

    def _hyperparams(self) -> HyperParams:
        hp = HyperParams(
            learning_rate=self.learning_rate, l2=self.l2,
            batch_size=self.batch_size, dropout=self.dropout,
            max_subject_len=self.max_subject_len,
            max_body_len=self.max_body_len,
            max_answer_len=self.max_answer_len,
            attention_dim=self.attention_dim,
            embedding_dim=self.embedding_dim, hidden_dim=self.hidden_dim,
            epochs=self.epochs, patience=self.patience, seed=self.seed)
        hp.validate()
        return hp

    def _model_config(self, hp: HyperParams) -> net.ModelConfig:
        kind = "precomputed-file" if self.vectors_path else "trainable-lookup"
        encoder = EncoderConfig(kind=kind, embedding_dim=hp.embedding_dim,
                                projection_dim=hp.attention_dim)
        return apply_variant(self.variant, encoder=encoder,
                             hidden_dim=hp.hidden_dim, dropout=hp.dropout)

    # -- data plumbing ----------------------------------------------------

    @staticmethod
    def _triples_to_threads(X: Sequence[TextTriple],
                            y: Sequence[str] | None,
                            prefix: str) -> list[QAThread]:
        threads = []
        for i, triple in enumerate(X):
            if len(triple) != 3:
                raise ConfigError(
                    "X must contain (subject, body, answer) text triples")
            subject, body, answer = triple
            gold = "Good" if y is None else y[i]
            if gold not in LABELS:
                raise LabelError(f"unknown gold label {gold!r}")
            threads.append(QAThread(
                qid=f"{prefix}{i:06d}", subject=subject, body=body,
                answers=[Answer(aid="a0", text=answer, gold=gold)]))
        return threads

    def _thread_instances(self, threads: Sequence[QAThread],
                          vocab: Vocabulary, hp: HyperParams) -> list[Instance]:
        out: list[Instance] = []
        for thread in threads:
            indexed = truncate_and_index(
                thread, vocab, max_subject_len=hp.max_subject_len,
                max_body_len=hp.max_body_len, max_answer_len=hp.max_answer_len)
            out.extend(net.instances_from_thread(indexed))
        return out

    def _triple_instance(self, triple: TextTriple, index: int) -> Instance:
        subject, body, answer = triple
        hp = self.hp_

        def seq(text: str, cap: int) -> IndexedSequence:
            return index_tokens(preprocess(text), self.vocab_, cap)

        return Instance(qid=f"x{index:06d}", aid="a0",
                        subject=seq(subject, hp.max_subject_len),
                        body=seq(body, hp.max_body_len),
                        answer=seq(answer, hp.max_answer_len))

    # -- fitting ----------------------------------------------------------

    def fit(self, X: Sequence[TextTriple], y: Sequence[str],
            dev: tuple[Sequence[TextTriple], Sequence[str]] | None = None
            ) -> "QANClassifier":
        """Fit on text triples; ``dev`` optionally supplies a held-out
        (X, y) pair for early stopping and checkpoint selection."""
        if len(X) != len(y):
            raise ConfigError(f"X and y lengths differ: {len(X)} vs {len(y)}")
        train_threads = self._triples_to_threads(X, list(y), "q")
        dev_threads = None
        if dev is not None:
            dev_threads = self._triples_to_threads(dev[0], list(dev[1]), "d")
        return self.fit_threads(train_threads, dev_threads)

    def fit_threads(self, train_threads: Sequence[QAThread],
                    dev_threads: Sequence[QAThread] | None = None
                    ) -> "QANClassifier":
        """Fit on question threads, evaluating on ``dev_threads`` each
        epoch (the training set doubles as dev when none is given)."""
        if not train_threads:
            raise EmptyInputError("fit: empty training split")
        if dev_threads is not None and not dev_threads:
            raise EmptyInputError("fit: empty dev split")
        hp = self._hyperparams()
        config = self._model_config(hp)
        store = self._load_store(config)

        rng = np.random.default_rng(hp.seed)
        vocab = Vocabulary.build(train_threads, self.min_token_count)
        model = QANetwork(config, len(vocab), rng, store=store)

        train_instances = self._thread_instances(train_threads, vocab, hp)
        dev_instances = self._thread_instances(
            dev_threads if dev_threads is not None else train_threads, vocab, hp)

        history = self._train_loop(model, train_instances, dev_instances, hp, rng)

        self.hp_ = hp
        self.config_ = config
        self.vocab_ = vocab
        self.model_ = model
        self.history_ = history
        self.layout_ = model.layout
        self.classes_ = np.asarray(LABELS, dtype=object)
        return self

    def _load_store(self, config: net.ModelConfig) -> VectorStore | None:
        if config.encoder.kind != "precomputed-file":
            return None
        if not self.vectors_path:
            raise ConfigError("precomputed encoder requires vectors_path")
        return load_vector_store(self.vectors_path)

    def _train_loop(self, model: QANetwork, train: list[Instance],
                    dev: list[Instance], hp: HyperParams,
                    rng: np.random.Generator) -> TrainHistory:
        params = model.parameters()
        state = AdamState(learning_rate=hp.learning_rate, weight_decay=hp.l2)
        records: list[EpochRecord] = []
        best_acc = -np.inf
        best_epoch = -1
        best_params: dict[str, np.ndarray] = {}
        stale = 0

        for epoch in range(1, hp.epochs + 1):
            started = time.perf_counter()
            order = rng.permutation(len(train))
            total_loss = 0.0
            for lo in range(0, len(order), hp.batch_size):
                batch = [train[i] for i in order[lo:lo + hp.batch_size]]
                zero_gradients(params.values())
                losses = [net.loss(model.forward(inst, "train", rng), inst.gold)
                          for inst in batch]
                batch_loss = losses[0]
                for extra in losses[1:]:
                    batch_loss = ad.add(batch_loss, extra)
                batch_loss = ad.scale(batch_loss, 1.0 / len(batch))
                backward(batch_loss)
                adam_step(params, None, state)
                total_loss += batch_loss.data[0, 0] * len(batch)

            dev_records = self._evaluate(model, dev)
            _, dev_acc = classification_metrics(dev_records)
            dev_map = map_score(dev_records)
            records.append(EpochRecord(
                epoch=epoch,
                train_loss=float(total_loss / len(train)),
                dev_accuracy=float(dev_acc),
                dev_map=None if dev_map is None else float(dev_map),
                wall_time=time.perf_counter() - started))

            if dev_acc > best_acc:
                best_acc = dev_acc
                best_epoch = epoch
                best_params = {n: p.data.copy() for n, p in params.items()}
                stale = 0
            else:
                stale += 1
                if stale >= hp.patience:
                    break

        for name, param in params.items():
            param.data[...] = best_params[name]
        return TrainHistory(records=records, best_epoch=best_epoch)

    @staticmethod
    def _evaluate(model: QANetwork, instances: list[Instance]
                  ) -> list[PredictionRecord]:
        return [PredictionRecord(
                    qid=inst.qid, aid=inst.aid,
                    probabilities=tuple(float(p) for p in model.forward(inst).probs),
                    gold=inst.gold)
                for inst in instances]

    # -- prediction -------------------------------------------------------

    def predict_proba(self, X: Sequence[TextTriple]) -> np.ndarray:
        """(n, 3) probabilities in (Good, Potential, Bad) column order."""
        check_is_fitted(self, "model_")
        out = np.empty((len(X), len(LABELS)))
        for i, triple in enumerate(X):
            inst = self._triple_instance(triple, i)
            out[i] = self.model_.forward(inst).probs
        return out

    def predict(self, X: Sequence[TextTriple]) -> np.ndarray:
        probs = self.predict_proba(X)
        # argmax keeps the first maximum: Good < Potential < Bad on ties.
        return np.asarray([LABELS[i] for i in probs.argmax(axis=1)], dtype=object)

    def predict_threads(self, threads: Sequence[QAThread]
                        ) -> list[PredictionRecord]:
        """Score every answer of every thread, keeping question grouping."""
        check_is_fitted(self, "model_")
        instances = self._thread_instances(threads, self.vocab_, self.hp_)
        return self._evaluate(self.model_, instances)

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        from .checkpoint import save_checkpoint
        save_checkpoint(self, path)

    @classmethod
    def load(cls, path, variant: str | None = None,
             vectors_path: str | None = None) -> "QANClassifier":
        from .checkpoint import load_checkpoint
        return load_checkpoint(path, variant=variant, vectors_path=vectors_path)


def run_ablation(train_threads: Sequence[QAThread],
                 dev_threads: Sequence[QAThread] | None,
                 test_threads: Sequence[QAThread],
                 seed: int = 0, **shared_params):
    """Train and score every structural variant; returns one report per
    variant in the fixed enumeration order (full last)."""
    from .metrics import compute_report

    reports = []
    for variant in VARIANTS:
        clf = QANClassifier(variant=variant, seed=seed, **shared_params)
        clf.fit_threads(train_threads, dev_threads)
        records = clf.predict_threads(test_threads)
        reports.append(compute_report(records, model=variant))
    return reports
