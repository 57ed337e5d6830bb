"""Checkpoint file format: trained parameters plus everything needed to
rebuild the classifier (hyperparameters, variant, vocabulary, layout).

Layout: the 5-byte magic ``QANC1``, a little-endian u64 byte length, a
UTF-8 JSON manifest, then one little-endian float64 blob per parameter
in manifest order.  Loading validates the magic, the manifest version,
and the exact byte count, and rebuilds the network before copying blobs
so any structural mismatch fails loudly.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .data import LABELS, Vocabulary
from .errors import CheckpointError

CHECKPOINT_MAGIC = b"QANC1"
CHECKPOINT_VERSION = 1


def save_checkpoint(clf, path) -> None:
    """Serialize a fitted :class:`~qan.estimator.QANClassifier`."""
    from sklearn.utils.validation import check_is_fitted

    check_is_fitted(clf, "model_")
    params = clf.model_.parameters()
    manifest = {
        "version": CHECKPOINT_VERSION,
        "variant": clf.variant,
        "hp": clf.hp_.as_dict(),
        "encoder": {
            "kind": clf.config_.encoder.kind,
            "embedding_dim": clf.config_.encoder.embedding_dim,
            "projection_dim": clf.config_.encoder.projection_dim,
        },
        "layout": clf.model_.layout.as_manifest(),
        "classes": list(LABELS),
        "vocab": clf.vocab_.tokens,
        "params": [{"name": name, "rows": p.rows, "cols": p.cols}
                   for name, p in params.items()],
    }
    blob = json.dumps(manifest, ensure_ascii=False).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        for p in params.values():
            fh.write(p.data.astype("<f8").tobytes())


def load_checkpoint(path, variant: str | None = None,
                    vectors_path: str | None = None):
    """Rebuild a fitted classifier from a checkpoint file.

    ``variant``, when given, must match the checkpoint's variant; a
    precomputed-encoder checkpoint needs ``vectors_path`` re-supplied.
    """
    from .estimator import HyperParams, QANClassifier
    from .network import QANetwork

    raw = Path(path).read_bytes()
    header = len(CHECKPOINT_MAGIC) + 8
    if len(raw) < header or raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (bad magic)")
    manifest_len, = struct.unpack_from("<Q", raw, len(CHECKPOINT_MAGIC))
    if len(raw) < header + manifest_len:
        raise CheckpointError(f"{path}: truncated manifest")
    try:
        manifest = json.loads(raw[header:header + manifest_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt manifest: {exc}") from exc
    if manifest.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {manifest.get('version')!r}")
    if variant is not None and manifest["variant"] != variant:
        raise CheckpointError(
            f"{path}: checkpoint holds variant {manifest['variant']!r}, "
            f"which is incompatible with requested variant {variant!r}")

    expected_blob = sum(p["rows"] * p["cols"] for p in manifest["params"]) * 8
    body = raw[header + manifest_len:]
    if len(body) != expected_blob:
        raise CheckpointError(
            f"{path}: parameter blob is {len(body)} bytes, expected {expected_blob}")

    hp = HyperParams.from_dict(manifest["hp"])
    clf = QANClassifier(variant=manifest["variant"],
                        vectors_path=vectors_path, **hp.as_dict())
    config = clf._model_config(hp)
    if (config.encoder.kind != manifest["encoder"]["kind"]
            or config.encoder.embedding_dim != manifest["encoder"]["embedding_dim"]
            or config.encoder.projection_dim != manifest["encoder"]["projection_dim"]):
        if manifest["encoder"]["kind"] == "precomputed-file":
            raise CheckpointError(
                f"{path}: checkpoint used precomputed vectors; pass vectors_path")
        raise CheckpointError(f"{path}: encoder configuration mismatch")

    vocab = Vocabulary(manifest["vocab"])
    store = clf._load_store(config)
    model = QANetwork(config, len(vocab), np.random.default_rng(hp.seed),
                      store=store)
    params = model.parameters()
    stored = manifest["params"]
    if [p["name"] for p in stored] != list(params.keys()):
        raise CheckpointError(f"{path}: parameter set does not match the "
                              f"variant's architecture")
    offset = 0
    for meta in stored:
        p = params[meta["name"]]
        if (meta["rows"], meta["cols"]) != p.shape:
            raise CheckpointError(
                f"{path}: parameter {meta['name']!r} has shape "
                f"({meta['rows']}, {meta['cols']}), model expects {p.shape}")
        count = meta["rows"] * meta["cols"]
        values = np.frombuffer(body, dtype="<f8", count=count, offset=offset)
        p.data[...] = values.reshape(p.shape)
        offset += count * 8

    clf.hp_ = hp
    clf.config_ = config
    clf.vocab_ = vocab
    clf.model_ = model
    clf.history_ = None
    clf.layout_ = model.layout
    clf.classes_ = np.asarray(LABELS, dtype=object)
    return clf
