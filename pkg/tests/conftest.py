import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from qan.data import Answer, QAThread, IndexedSequence  # noqa: E402
from qan.encoder import EncoderConfig  # noqa: E402
from qan.network import Instance, QANetwork, apply_variant  # noqa: E402

FIXTURES = Path(__file__).parent / "fixtures"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def golden_dir() -> Path:
    return GOLDEN


@pytest.fixture
def two_threads() -> list[QAThread]:
    return [
        QAThread(
            qid="t1", subject="Any good place to shop?",
            body="Looking for designer brands. Thanks!",
            answers=[
                Answer("t1a1", "Go to Villaggio, the VIP area has designer brands.", "Good"),
                Answer("t1a2", "One life to live.", "Bad"),
            ]),
        QAThread(
            qid="t2", subject="Engine computer programming",
            body="Where can I get the engine computer programmed?",
            answers=[
                Answer("t2a1", "Nice ride, is this fuel injection?", "Potential"),
                Answer("t2a2", "Try the workshop on street 24.", "Good"),
                Answer("t2a3", "No idea at all, sorry.", "Bad"),
            ]),
    ]


def seq(ids, mask=None) -> IndexedSequence:
    if mask is None:
        mask = np.ones(len(ids), dtype=bool)
    return IndexedSequence(list(ids), np.asarray(mask, dtype=bool))


@pytest.fixture
def toy_network():
    """Small full-variant network plus a 3/5/4-token instance."""
    rng = np.random.default_rng(7)
    config = apply_variant(
        "full", encoder=EncoderConfig(embedding_dim=8, projection_dim=8),
        hidden_dim=4, dropout=0.3)
    model = QANetwork(config, vocab_size=12, rng=rng)
    instance = Instance(
        qid="q", aid="a",
        subject=seq([2, 3, 4]), body=seq([5, 6, 7, 8, 9]),
        answer=seq([3, 10, 11, 2]), gold="Good")
    return model, instance
