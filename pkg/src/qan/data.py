"""Corpus records, parsers, vocabulary, and sequence indexing.

The internal interchange format is canonical JSONL: one thread per line
with keys ``id``, ``subject``, ``body``, ``answers`` (array of
``{id, text, gold}``).  The per-year SemEval XML adapters are thin
translators onto that record; everything downstream consumes threads.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import CorpusParseError, EmptyInputError, LabelError
from .preprocessing import preprocess

LABELS = ("Good", "Potential", "Bad")
LABEL_TO_INDEX = {label: i for i, label in enumerate(LABELS)}

PAD = 0
UNK = 1

# Field caps applied at indexing time: subject, body, answer.
MAX_SUBJECT_LEN = 20
MAX_BODY_LEN = 110
MAX_ANSWER_LEN = 100

CorpusFormat = Literal["semeval2015-xml", "semeval2017-xml", "canonical-jsonl"]

# Per-answer gold attributes seen in the source corpora, folded onto the
# three-way label set.  Anything else is an error, never silently dropped.
_GOLD_ALIASES = {
    "good": "Good",
    "potential": "Potential",
    "potentiallyuseful": "Potential",
    "bad": "Bad",
    "dialogue": "Bad",
    "not english": "Bad",
    "other": "Bad",
}


def normalize_gold(value: str) -> str:
    try:
        return _GOLD_ALIASES[value.strip().lower()]
    except KeyError:
        raise LabelError(f"unknown gold label {value!r}") from None


@dataclass
class Answer:
    aid: str
    text: str
    gold: str
    tokens: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if self.gold not in LABELS:
            raise LabelError(f"unknown gold label {self.gold!r}")
        if not self.tokens:
            self.tokens = preprocess(self.text)


@dataclass
class QAThread:
    """One question with its candidate answers and gold labels.

    Raw text is kept (the prompt pipeline needs it verbatim); token
    lists are derived deterministically via :func:`preprocess`.
    """

    qid: str
    subject: str
    body: str
    answers: list[Answer]
    subject_tokens: list[str] = field(default_factory=list)
    body_tokens: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.answers:
            raise CorpusParseError(f"thread {self.qid!r} has no answers")
        aids = [a.aid for a in self.answers]
        if len(set(aids)) != len(aids):
            raise CorpusParseError(f"thread {self.qid!r} has duplicate answer ids")
        if not self.subject_tokens:
            self.subject_tokens = preprocess(self.subject)
        if not self.body_tokens:
            self.body_tokens = preprocess(self.body)


@dataclass
class CorpusStats:
    question_count: int
    answer_count: int
    mean_subject_len: float
    mean_body_len: float
    mean_answer_len: float

    def as_dict(self) -> dict:
        return {
            "question_count": self.question_count,
            "answer_count": self.answer_count,
            "mean_subject_len": self.mean_subject_len,
            "mean_body_len": self.mean_body_len,
            "mean_answer_len": self.mean_answer_len,
        }


class Vocabulary:
    """Token -> index map with reserved PAD=0 and UNK=1 slots.

    Construction is deterministic: tokens ordered by descending count,
    ties broken alphabetically.
    """

    def __init__(self, tokens: Sequence[str]):
        self._tokens = list(tokens)
        self._index = {tok: i + 2 for i, tok in enumerate(self._tokens)}
        if len(self._index) != len(self._tokens):
            raise ValueError("duplicate tokens in vocabulary")

    @classmethod
    def build_from_tokens(cls, token_lists: Iterable[Sequence[str]],
                          min_count: int = 1) -> "Vocabulary":
        counts: Counter[str] = Counter()
        for tokens in token_lists:
            counts.update(tokens)
        kept = [t for t, c in counts.items() if c >= min_count]
        kept.sort(key=lambda t: (-counts[t], t))
        return cls(kept)

    @classmethod
    def build(cls, threads: Iterable[QAThread], min_count: int = 1) -> "Vocabulary":
        def token_lists():
            for thread in threads:
                yield thread.subject_tokens
                yield thread.body_tokens
                for answer in thread.answers:
                    yield answer.tokens

        return cls.build_from_tokens(token_lists(), min_count)

    def __len__(self) -> int:
        return len(self._tokens) + 2

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        return self._index.get(token, UNK)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index(t) for t in tokens]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self._tokens), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass
class IndexedSequence:
    """Token indices plus a validity mask (True = real token)."""

    ids: list[int]
    mask: np.ndarray

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != (len(self.ids),):
            raise ValueError("mask length must equal id count")

    def __len__(self) -> int:
        return len(self.ids)

    def padded(self, length: int) -> "IndexedSequence":
        """Right-pad with PAD (masked) up to ``length``."""
        extra = length - len(self.ids)
        if extra <= 0:
            return self
        return IndexedSequence(self.ids + [PAD] * extra,
                               np.concatenate([self.mask, np.zeros(extra, bool)]))


@dataclass
class IndexedThread:
    qid: str
    subject: IndexedSequence
    body: IndexedSequence
    answers: list[tuple[str, IndexedSequence, str]]  # (aid, sequence, gold)


def index_tokens(tokens: Sequence[str], vocab: Vocabulary,
                 cap: int) -> IndexedSequence:
    kept = list(tokens)[:cap]
    return IndexedSequence(vocab.encode(kept), np.ones(len(kept), dtype=bool))


def truncate_and_index(thread: QAThread, vocab: Vocabulary,
                       max_subject_len: int = MAX_SUBJECT_LEN,
                       max_body_len: int = MAX_BODY_LEN,
                       max_answer_len: int = MAX_ANSWER_LEN) -> IndexedThread:
    """Cap each field (keeping the prefix), map tokens to indices.

    Out-of-vocabulary tokens map to UNK; empty fields become length-0
    sequences, which callers must treat as fully masked.
    """
    return IndexedThread(
        qid=thread.qid,
        subject=index_tokens(thread.subject_tokens, vocab, max_subject_len),
        body=index_tokens(thread.body_tokens, vocab, max_body_len),
        answers=[(a.aid, index_tokens(a.tokens, vocab, max_answer_len), a.gold)
                 for a in thread.answers],
    )


def corpus_stats(threads: Sequence[QAThread]) -> CorpusStats:
    """Counts and raw whitespace-token length means, before any truncation."""
    n_questions = len(threads)
    n_answers = sum(len(t.answers) for t in threads)

    def mean(values: list[int]) -> float:
        return float(np.mean(values)) if values else 0.0

    return CorpusStats(
        question_count=n_questions,
        answer_count=n_answers,
        mean_subject_len=mean([len(t.subject.split()) for t in threads]),
        mean_body_len=mean([len(t.body.split()) for t in threads]),
        mean_answer_len=mean([len(a.text.split())
                              for t in threads for a in t.answers]),
    )


# ---------------------------------------------------------------------------
# Parsing


def parse_corpus(path: str | Path, format: CorpusFormat) -> list[QAThread]:
    """Parse a corpus file in the declared format into threads.

    Answer order is preserved from the file.  Malformed markup raises
    :class:`CorpusParseError` with line context where available.
    """
    path = Path(path)
    if format == "canonical-jsonl":
        return parse_jsonl(path)
    if format == "semeval2015-xml":
        return _parse_semeval2015(path)
    if format == "semeval2017-xml":
        return _parse_semeval2017(path)
    raise CorpusParseError(f"unknown corpus format {format!r}")


def thread_from_json(line: str) -> QAThread:
    record = json.loads(line)
    answers = [Answer(aid=a["id"], text=a["text"], gold=normalize_gold(a["gold"]))
               for a in record["answers"]]
    return QAThread(qid=record["id"], subject=record["subject"],
                    body=record["body"], answers=answers)


def parse_jsonl(path: str | Path) -> list[QAThread]:
    threads: list[QAThread] = []
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        raise CorpusParseError(f"{path}: empty corpus file")
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            threads.append(thread_from_json(line))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise CorpusParseError(f"{path}:{lineno}: bad thread record: {exc}") from exc
    return threads


def thread_to_json(thread: QAThread) -> str:
    record = {
        "id": thread.qid,
        "subject": thread.subject,
        "body": thread.body,
        "answers": [{"id": a.aid, "text": a.text, "gold": a.gold}
                    for a in thread.answers],
    }
    return json.dumps(record, ensure_ascii=False)


def write_jsonl(threads: Iterable[QAThread], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for thread in threads:
            fh.write(thread_to_json(thread))
            fh.write("\n")


def _xml_root(path: Path) -> ET.Element:
    try:
        return ET.parse(path).getroot()
    except ET.ParseError as exc:
        line, col = exc.position
        raise CorpusParseError(f"{path}:{line}:{col}: {exc.msg}") from exc
    except FileNotFoundError:
        raise CorpusParseError(f"{path}: no such file") from None


def _text(elem: ET.Element | None) -> str:
    return (elem.text or "").strip() if elem is not None else ""


def _parse_semeval2015(path: Path) -> list[QAThread]:
    root = _xml_root(path)
    threads: list[QAThread] = []
    for question in root.iter("Question"):
        qid = question.get("QID", "")
        if not qid:
            raise CorpusParseError(f"{path}: Question element without QID")
        answers = []
        for comment in question.findall("Comment"):
            gold_raw = comment.get("CGOLD")
            if gold_raw is None:
                raise CorpusParseError(
                    f"{path}: Comment in {qid} without CGOLD attribute")
            answers.append(Answer(aid=comment.get("CID", ""),
                                  text=_text(comment.find("CBody")),
                                  gold=normalize_gold(gold_raw)))
        if not answers:
            continue
        threads.append(QAThread(qid=qid,
                                subject=_text(question.find("QSubject")),
                                body=_text(question.find("QBody")),
                                answers=answers))
    if not threads:
        raise CorpusParseError(f"{path}: no Question threads found")
    return threads


def _parse_semeval2017(path: Path) -> list[QAThread]:
    root = _xml_root(path)
    threads: list[QAThread] = []
    for element in root.iter("Thread"):
        question = element.find("RelQuestion")
        if question is None:
            raise CorpusParseError(f"{path}: Thread without RelQuestion")
        qid = question.get("RELQ_ID", "")
        answers = []
        for comment in element.findall("RelComment"):
            gold_raw = comment.get("RELC_RELEVANCE2RELQ")
            if gold_raw is None:
                raise CorpusParseError(
                    f"{path}: RelComment in {qid} without RELC_RELEVANCE2RELQ")
            answers.append(Answer(aid=comment.get("RELC_ID", ""),
                                  text=_text(comment.find("RelCText")),
                                  gold=normalize_gold(gold_raw)))
        if not answers:
            continue
        threads.append(QAThread(qid=qid,
                                subject=_text(question.find("RelQSubject")),
                                body=_text(question.find("RelQBody")),
                                answers=answers))
    if not threads:
        raise CorpusParseError(f"{path}: no Thread elements found")
    return threads


def require_nonempty(threads: Sequence[QAThread], what: str) -> None:
    if not threads:
        raise EmptyInputError(f"{what}: no threads")
