"""The cross-attention answer-selection network.

For one (subject, body, answer) instance the model runs two branches,
subject-vs-answer and body-vs-answer.  Each branch computes a scaled
dot-product similarity grid between the two encoded sequences,
normalizes it per row and per column to attend in both directions,
enriches each side with its attended counterpart, contextualizes with a
bidirectional GRU, and pools.  The concatenation of all pooled pieces is
the global representation fed to an MLP that outputs probabilities over
Good / Potential / Bad.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from . import autodiff as ad
from .autodiff import MASK_FILL, Matrix
from .data import LABEL_TO_INDEX, LABELS, UNK, IndexedSequence, IndexedThread
from .encoder import EncodedSequence, EncoderConfig, FieldEncoder, VectorStore
from .errors import ConfigError, EmptyInputError, ShapeError
from .layers import GRUWeights, bigru, gru_cell, pool_max_mean  # noqa: F401

VARIANTS = (
    "no-pretrain-word-emb",
    "no-pretrain-char-emb",
    "no-cross-attention",
    "simple-combination",
    "no-attn-and-simple-combination",
    "merged-subject-body",
    "full",
)


def similarity_matrix(q: EncodedSequence, a: EncodedSequence) -> Matrix:
    """Scaled dot-product relevance grid, (m x n) = q @ aT / sqrt(p).

    Cells touching a masked position are filled with a large negative
    constant so both softmax normalizations exclude them.
    """
    if q.dim != a.dim:
        raise ShapeError(
            f"similarity_matrix: dims differ, {q.values.shape} vs {a.values.shape}")
    e = ad.scale(ad.matmul(q.values, ad.transpose(a.values)),
                 1.0 / np.sqrt(q.dim))
    if not (q.mask.all() and a.mask.all()):
        fill = np.where(np.outer(q.mask, a.mask), 0.0, MASK_FILL)
        e = ad.add_constant(e, fill)
    return e


@dataclass
class AttentionPair:
    """Similarity grid, both normalizations, and both attended sequences."""

    similarity: Matrix
    row_normalized: Matrix      # question -> answer weights; rows sum to 1
    col_normalized: Matrix      # answer -> question weights; columns sum to 1
    attended_question: Matrix   # (m x p)
    attended_answer: Matrix     # (n x p)


def cross_attend(q: EncodedSequence, a: EncodedSequence) -> AttentionPair:
    """Bidirectional attention between two encoded sequences.

    Every attended question row is a convex combination of unmasked
    answer rows, and vice versa.
    """
    if a.length == 0 or not a.mask.any():
        raise EmptyInputError("cross_attend: every answer position is masked")
    if q.length == 0 or not q.mask.any():
        raise EmptyInputError("cross_attend: every question position is masked")
    e = similarity_matrix(q, a)
    row_norm = ad.softmax_rows(e)
    col_norm = ad.transpose(ad.softmax_rows(ad.transpose(e)))
    return AttentionPair(
        similarity=e,
        row_normalized=row_norm,
        col_normalized=col_norm,
        attended_question=ad.matmul(row_norm, a.values),
        attended_answer=ad.matmul(ad.transpose(col_norm), q.values),
    )


def enrich(x: Matrix, x_att: Matrix) -> Matrix:
    """Interaction features [x; x_att; x - x_att; x * x_att] -> (L x 4p)."""
    if x.shape != x_att.shape:
        raise ShapeError(f"enrich: shapes differ, {x.shape} vs {x_att.shape}")
    return ad.concat_cols([x, x_att, ad.sub(x, x_att), ad.mul(x, x_att)])


@dataclass(frozen=True)
class ModelConfig:
    """Structural configuration, i.e. an ablation variant made concrete."""

    variant: str = "full"
    cross_attention: bool = True
    interaction_layer: bool = True
    merge_subject_body: bool = False
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    hidden_dim: int = 64
    dropout: float = 0.3

    @property
    def branches(self) -> tuple[str, ...]:
        return ("question",) if self.merge_subject_body else ("subject", "body")


def apply_variant(variant: str, *, encoder: EncoderConfig | None = None,
                  hidden_dim: int = 64, dropout: float = 0.3) -> ModelConfig:
    """Translate an ablation variant name into a model configuration."""
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    enc = encoder or EncoderConfig()
    cross_attention = variant not in ("no-cross-attention",
                                      "no-attn-and-simple-combination")
    interaction = variant not in ("simple-combination",
                                  "no-attn-and-simple-combination")
    if variant == "no-pretrain-word-emb":
        enc = EncoderConfig(kind="trainable-lookup", embedding_dim=300,
                            projection_dim=enc.projection_dim)
    elif variant == "no-pretrain-char-emb":
        enc = EncoderConfig(kind="trainable-lookup", embedding_dim=600,
                            projection_dim=enc.projection_dim)
    return ModelConfig(
        variant=variant,
        cross_attention=cross_attention,
        interaction_layer=interaction,
        merge_subject_body=(variant == "merged-subject-body"),
        encoder=enc,
        hidden_dim=hidden_dim,
        dropout=dropout,
    )


class Layout:
    """Which pooled piece occupies which slice of the global representation."""

    def __init__(self, components: list[tuple[str, int]]):
        self.components = list(components)

    @property
    def width(self) -> int:
        return sum(w for _, w in self.components)

    def slices(self) -> dict[str, tuple[int, int]]:
        out, offset = {}, 0
        for name, w in self.components:
            out[name] = (offset, offset + w)
            offset += w
        return out

    def as_manifest(self) -> list[list]:
        return [[name, w] for name, w in self.components]


@dataclass
class GlobalRepresentation:
    vector: Matrix
    layout: Layout


@dataclass
class ClassDistribution:
    """Probabilities over (Good, Potential, Bad); sums to 1."""

    probs: np.ndarray
    node: Matrix | None = None

    def predicted_label(self) -> str:
        # np.argmax keeps the first maximum, which is the fixed
        # Good < Potential < Bad tie-break order.
        return LABELS[int(np.argmax(self.probs))]


@dataclass
class Instance:
    """One (question, answer) scoring unit; threads matter only to metrics."""

    qid: str
    aid: str
    subject: IndexedSequence
    body: IndexedSequence
    answer: IndexedSequence
    gold: str | None = None


def instances_from_thread(indexed: IndexedThread) -> list[Instance]:
    return [Instance(qid=indexed.qid, aid=aid, subject=indexed.subject,
                     body=indexed.body, answer=seq, gold=gold)
            for aid, seq, gold in indexed.answers]


def _nonempty(seq: IndexedSequence) -> IndexedSequence:
    # A field with no usable tokens is stood in by a single UNK token so
    # attention and pooling stay well-defined.
    if len(seq.ids) == 0 or not seq.mask.any():
        return IndexedSequence([UNK], np.ones(1, dtype=bool))
    return seq


def _merge(a: IndexedSequence, b: IndexedSequence) -> IndexedSequence:
    return IndexedSequence(list(a.ids) + list(b.ids),
                           np.concatenate([a.mask, b.mask]))


class QANetwork:
    """Parameters plus the differentiable forward pass."""

    def __init__(self, config: ModelConfig, vocab_size: int,
                 rng: np.random.Generator, store: VectorStore | None = None):
        self.config = config
        self.vocab_size = vocab_size
        p = config.encoder.projection_dim
        d_h = config.hidden_dim

        self.encoders: dict[str, FieldEncoder] = {}
        for fieldname in (*config.branches, "answer"):
            self.encoders[fieldname] = FieldEncoder(
                config.encoder, vocab_size, rng, fieldname, store=store)

        self.grus: dict[str, tuple[GRUWeights, GRUWeights]] = {}
        if config.interaction_layer:
            for branch in config.branches:
                self.grus[branch] = (GRUWeights.create(4 * p, d_h, rng),
                                     GRUWeights.create(4 * p, d_h, rng))

        self.layout = self._build_layout()
        r_width = self.layout.width
        mlp_hidden = 2 * d_h
        self.w_hidden = Matrix(rng.normal(0.0, 1.0 / np.sqrt(r_width),
                                          (r_width, mlp_hidden)))
        self.b_hidden = Matrix.zeros(1, mlp_hidden)
        self.w_out = Matrix(rng.normal(0.0, 1.0 / np.sqrt(mlp_hidden),
                                       (mlp_hidden, len(LABELS))))
        self.b_out = Matrix.zeros(1, len(LABELS))

    def _build_layout(self) -> Layout:
        cfg = self.config
        components: list[tuple[str, int]] = []
        for branch in cfg.branches:
            if cfg.interaction_layer:
                w = 2 * cfg.hidden_dim  # BiGRU state width
                for side in ("question", "answer"):
                    components.append((f"{branch}.{side}.max", w))
                    components.append((f"{branch}.{side}.mean", w))
            else:
                w = 4 * cfg.encoder.projection_dim  # enriched row width
                for side in ("question", "answer"):
                    components.append((f"{branch}.{side}.mean", w))
        return Layout(components)

    def parameters(self) -> dict[str, Matrix]:
        params: dict[str, Matrix] = {}
        for name in (*self.config.branches, "answer"):
            params.update(self.encoders[name].parameters())
        for branch, (fwd, bwd) in self.grus.items():
            params.update(fwd.named(f"gru.{branch}.fwd"))
            params.update(bwd.named(f"gru.{branch}.bwd"))
        params["mlp.w_hidden"] = self.w_hidden
        params["mlp.b_hidden"] = self.b_hidden
        params["mlp.w_out"] = self.w_out
        params["mlp.b_out"] = self.b_out
        return params

    def _branch_inputs(self, instance: Instance) -> dict[str, IndexedSequence]:
        if self.config.merge_subject_body:
            return {"question": _nonempty(_merge(instance.subject, instance.body))}
        return {"subject": _nonempty(instance.subject),
                "body": _nonempty(instance.body)}

    def _forward(self, instance: Instance, mode: ad.Mode,
                 rng: np.random.Generator | None) -> tuple[Matrix, Matrix]:
        if mode == "train" and rng is None:
            raise ConfigError("train-mode forward requires an rng for dropout")
        cfg = self.config
        answer_seq = _nonempty(instance.answer)
        a_enc = self.encoders["answer"].encode(answer_seq)

        pieces: list[Matrix] = []
        for branch, q_seq in self._branch_inputs(instance).items():
            q_enc = self.encoders[branch].encode(q_seq)
            if cfg.cross_attention:
                pair = cross_attend(q_enc, a_enc)
                q_att = pair.attended_question
                a_att = pair.attended_answer
            else:
                # Attention ablated: broadcast the unmasked mean of the
                # opposing sequence to every position.
                q_att = ad.tile_rows(
                    ad.mean_over_rows(a_enc.values, a_enc.mask), q_enc.length)
                a_att = ad.tile_rows(
                    ad.mean_over_rows(q_enc.values, q_enc.mask), a_enc.length)
            enriched_q = enrich(q_enc.values, q_att)
            enriched_a = enrich(a_enc.values, a_att)
            if cfg.interaction_layer:
                fwd, bwd = self.grus[branch]
                gq = bigru(enriched_q, q_enc.mask, fwd, bwd)
                ga = bigru(enriched_a, a_enc.mask, fwd, bwd)
                pieces.append(ad.max_over_rows(gq, q_enc.mask))
                pieces.append(ad.mean_over_rows(gq, q_enc.mask))
                pieces.append(ad.max_over_rows(ga, a_enc.mask))
                pieces.append(ad.mean_over_rows(ga, a_enc.mask))
            else:
                pieces.append(ad.mean_over_rows(enriched_q, q_enc.mask))
                pieces.append(ad.mean_over_rows(enriched_a, a_enc.mask))

        r = ad.concat_cols(pieces)
        if r.cols != self.layout.width:
            raise ShapeError(
                f"representation width {r.cols} != layout {self.layout.width}")
        dropped = ad.dropout(r, cfg.dropout, mode, rng) if mode == "train" else r
        hidden = ad.tanh(ad.add(ad.matmul(dropped, self.w_hidden), self.b_hidden))
        if mode == "train":
            hidden = ad.dropout(hidden, cfg.dropout, mode, rng)
        logits = ad.add(ad.matmul(hidden, self.w_out), self.b_out)
        return ad.softmax_rows(logits), r

    def forward(self, instance: Instance, mode: ad.Mode = "eval",
                rng: np.random.Generator | None = None) -> ClassDistribution:
        probs, _ = self._forward(instance, mode, rng)
        return ClassDistribution(probs=probs.data[0].copy(), node=probs)

    def represent(self, instance: Instance, mode: ad.Mode = "eval",
                  rng: np.random.Generator | None = None) -> GlobalRepresentation:
        _, r = self._forward(instance, mode, rng)
        return GlobalRepresentation(vector=r, layout=self.layout)


def loss(dist: ClassDistribution, gold: str | int) -> Matrix:
    """Cross-entropy -log p(gold), with p clamped to at least 1e-12."""
    if dist.node is None:
        raise ConfigError("loss needs a distribution produced by forward()")
    index = LABEL_TO_INDEX[gold] if isinstance(gold, str) else int(gold)
    picked = ad.cell(dist.node, 0, index)
    return ad.neg(ad.log(ad.clamp_min(picked, 1e-12)))
