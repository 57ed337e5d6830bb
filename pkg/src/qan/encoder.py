"""Per-field token encoders producing masked, projected sequences.

Two kinds are supported: a trainable lookup table (the default), and a
read-only store of precomputed vectors so contextual embeddings exported
offline can be replayed.  Both are followed by a trainable linear
projection to the attention width, and each field (subject, body,
answer) owns a disjoint parameter set.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal

import numpy as np

from . import autodiff as ad
from .autodiff import Matrix
from .data import IndexedSequence
from .errors import FormatError, MissingVectorError

EncoderKind = Literal["trainable-lookup", "precomputed-file"]

VECTOR_STORE_MAGIC = b"QANV1"


@dataclass
class EncodedSequence:
    """An (L x p) value node plus a validity mask (True = real token).

    Masked rows are exactly zero.
    """

    values: Matrix
    mask: np.ndarray

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (self.values.rows,):
            raise ValueError("mask length must equal sequence length")

    @property
    def length(self) -> int:
        return self.values.rows

    @property
    def dim(self) -> int:
        return self.values.cols


@dataclass(frozen=True)
class EncoderConfig:
    kind: EncoderKind = "trainable-lookup"
    embedding_dim: int = 64
    projection_dim: int = 300

    def __post_init__(self) -> None:
        if self.embedding_dim <= 0 or self.projection_dim <= 0:
            raise ValueError("encoder dimensions must be positive")


class VectorStore:
    """In-memory id -> float32 vector map backing precomputed encoders."""

    def __init__(self, dim: int, vectors: dict[int, np.ndarray]):
        self.dim = dim
        self._vectors = vectors

    def __len__(self) -> int:
        return len(self._vectors)

    def __contains__(self, token_id: int) -> bool:
        return token_id in self._vectors

    def get(self, token_id: int) -> np.ndarray:
        try:
            return self._vectors[token_id]
        except KeyError:
            raise MissingVectorError(
                f"no precomputed vector for token id {token_id}") from None

    def items(self):
        return self._vectors.items()


def save_vector_store(path: str | Path, dim: int,
                      items: Iterable[tuple[int, np.ndarray]]) -> None:
    """Write the little-endian binary store: magic, u32 dim, u64 count,
    then (u64 id, dim x f32) records."""
    entries = [(int(i), np.asarray(v, dtype="<f4")) for i, v in items]
    for token_id, vec in entries:
        if vec.shape != (dim,):
            raise FormatError(
                f"vector for id {token_id} has shape {vec.shape}, expected ({dim},)")
    with open(path, "wb") as fh:
        fh.write(VECTOR_STORE_MAGIC)
        fh.write(struct.pack("<I", dim))
        fh.write(struct.pack("<Q", len(entries)))
        for token_id, vec in entries:
            fh.write(struct.pack("<Q", token_id))
            fh.write(vec.tobytes())


def load_vector_store(path: str | Path) -> VectorStore:
    raw = Path(path).read_bytes()
    header = len(VECTOR_STORE_MAGIC) + 4 + 8
    if len(raw) < header or raw[: len(VECTOR_STORE_MAGIC)] != VECTOR_STORE_MAGIC:
        raise FormatError(f"{path}: not a vector store (bad magic or header)")
    dim, = struct.unpack_from("<I", raw, len(VECTOR_STORE_MAGIC))
    count, = struct.unpack_from("<Q", raw, len(VECTOR_STORE_MAGIC) + 4)
    record = 8 + 4 * dim
    expected = header + count * record
    if len(raw) != expected:
        raise FormatError(
            f"{path}: length {len(raw)} != expected {expected} "
            f"(dim={dim}, count={count})")
    vectors: dict[int, np.ndarray] = {}
    offset = header
    for _ in range(count):
        token_id, = struct.unpack_from("<Q", raw, offset)
        vec = np.frombuffer(raw, dtype="<f4", count=dim, offset=offset + 8)
        vectors[token_id] = vec.astype(np.float64)
        offset += record
    return VectorStore(dim, vectors)


class FieldEncoder:
    """Encoder for one field; owns its lookup (if trainable) and projection."""

    def __init__(self, config: EncoderConfig, vocab_size: int,
                 rng: np.random.Generator, name: str,
                 store: VectorStore | None = None):
        self.config = config
        self.name = name
        self.store = store
        d, p = config.embedding_dim, config.projection_dim
        if config.kind == "precomputed-file":
            if store is None:
                raise FormatError(f"encoder {name}: precomputed kind needs a store")
            if store.dim != d:
                raise FormatError(
                    f"encoder {name}: store dim {store.dim} != configured "
                    f"embedding dim {d}")
            self.table = None
        else:
            self.table = Matrix(rng.normal(0.0, 1.0 / np.sqrt(d), (vocab_size, d)))
        self.projection = Matrix(rng.normal(0.0, 1.0 / np.sqrt(d), (d, p)))

    def parameters(self) -> dict[str, Matrix]:
        params = {f"encoder.{self.name}.projection": self.projection}
        if self.table is not None:
            params[f"encoder.{self.name}.table"] = self.table
        return params

    def encode(self, seq: IndexedSequence) -> EncodedSequence:
        """Map token indices to an (L x p) node; masked rows come out zero."""
        if self.table is not None:
            emb = ad.embedding_rows(self.table, seq.ids)
        else:
            rows = np.stack([self.store.get(i) for i in seq.ids]) \
                if seq.ids else np.zeros((0, self.config.embedding_dim))
            emb = Matrix(rows, op="precomputed")
        if len(seq.ids):
            emb = ad.mask_rows(emb, seq.mask)
        projected = ad.matmul(emb, self.projection)
        return EncodedSequence(values=projected, mask=seq.mask)
