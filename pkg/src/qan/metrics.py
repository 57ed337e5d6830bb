"""Ranking and classification metrics plus report files.

MAP treats an answer as relevant iff its gold label is Good; questions
with no Good answer are excluded from the mean.  Rankings sort by
descending p(Good) with ties broken by ascending answer id so equal
scores cannot make results run-dependent.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .data import LABEL_TO_INDEX, LABELS
from .errors import DataError, LabelError


@dataclass
class PredictionRecord:
    """Per-answer class probabilities with the thread bookkeeping."""

    qid: str
    aid: str
    probabilities: tuple[float, float, float]  # (Good, Potential, Bad)
    gold: str

    @property
    def score(self) -> float:
        return self.probabilities[0]

    @property
    def predicted(self) -> str:
        return LABELS[int(np.argmax(self.probabilities))]


def rank_question(records: Sequence[PredictionRecord]) -> list[PredictionRecord]:
    return sorted(records, key=lambda r: (-r.score, r.aid))


def average_precision(ranked_golds: Sequence[str]) -> float | None:
    """AP of one ranked label list; None when nothing is relevant."""
    precisions = []
    relevant = 0
    for k, gold in enumerate(ranked_golds, start=1):
        if gold == "Good":
            relevant += 1
            precisions.append(relevant / k)
    if not precisions:
        return None
    return sum(precisions) / len(precisions)


def group_by_question(records: Iterable[PredictionRecord]
                      ) -> dict[str, list[PredictionRecord]]:
    grouped: dict[str, list[PredictionRecord]] = {}
    for record in records:
        grouped.setdefault(record.qid, []).append(record)
    return grouped


def per_question_ap(records: Sequence[PredictionRecord]
                    ) -> dict[str, float | None]:
    return {
        qid: average_precision([r.gold for r in rank_question(group)])
        for qid, group in group_by_question(records).items()
    }


def map_score(records: Sequence[PredictionRecord]) -> float | None:
    """Mean of the defined per-question APs; None if every AP is undefined."""
    defined = [ap for ap in per_question_ap(records).values() if ap is not None]
    if not defined:
        return None
    return sum(defined) / len(defined)


def confusion_matrix(records: Sequence[PredictionRecord]) -> np.ndarray:
    """3x3 counts: rows are gold labels, columns predicted labels."""
    matrix = np.zeros((len(LABELS), len(LABELS)), dtype=int)
    for record in records:
        matrix[LABEL_TO_INDEX[record.gold], LABEL_TO_INDEX[record.predicted]] += 1
    return matrix


def _f1_for_class(matrix: np.ndarray, index: int) -> float:
    tp = matrix[index, index]
    predicted = matrix[:, index].sum()
    actual = matrix[index, :].sum()
    precision = tp / predicted if predicted else 0.0
    recall = tp / actual if actual else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def classification_metrics(records: Sequence[PredictionRecord],
                           average: Literal["good", "macro"] = "good"
                           ) -> tuple[float, float]:
    """(F1, accuracy).  F1 is the Good-class F1 by default; ``macro``
    averages the per-class F1 over all three labels."""
    if not records:
        raise DataError("classification_metrics: no records")
    matrix = confusion_matrix(records)
    acc = float(np.trace(matrix)) / float(matrix.sum())
    if average == "good":
        f1 = _f1_for_class(matrix, LABEL_TO_INDEX["Good"])
    elif average == "macro":
        f1 = float(np.mean([_f1_for_class(matrix, i) for i in range(len(LABELS))]))
    else:
        raise ValueError(f"unknown F1 average {average!r}")
    return f1, acc


@dataclass
class MetricsReport:
    model: str
    map: float | None
    f1: float
    acc: float
    per_question_ap: dict[str, float | None]
    confusion: list[list[int]]


def compute_report(records: Sequence[PredictionRecord],
                   model: str = "qan") -> MetricsReport:
    f1, acc = classification_metrics(records)
    return MetricsReport(
        model=model,
        map=map_score(records),
        f1=f1,
        acc=acc,
        per_question_ap=per_question_ap(records),
        confusion=confusion_matrix(records).tolist(),
    )


def report_to_dict(report: MetricsReport) -> dict:
    return {
        "model": report.model,
        "map": report.map,
        "f1": report.f1,
        "acc": report.acc,
        "per_question_ap": report.per_question_ap,
        "confusion": report.confusion,
    }


def report_from_dict(payload: dict) -> MetricsReport:
    return MetricsReport(
        model=payload["model"],
        map=payload["map"],
        f1=payload["f1"],
        acc=payload["acc"],
        per_question_ap=dict(payload["per_question_ap"]),
        confusion=[list(row) for row in payload["confusion"]],
    )


def _csv_value(value: float | None) -> str:
    return "NA" if value is None else f"{value:.6f}"


def emit_report(reports: MetricsReport | Sequence[MetricsReport],
                path: str | Path, format: Literal["json", "csv"]) -> None:
    """Write reports with a stable field order.

    JSON files hold a list of report objects; CSV files use the fixed
    ``model,map,f1,acc`` column layout with undefined values as ``NA``.
    """
    if isinstance(reports, MetricsReport):
        reports = [reports]
    path = Path(path)
    if format == "json":
        payload = [report_to_dict(r) for r in reports]
        path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n",
                        encoding="utf-8")
    elif format == "csv":
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["model", "map", "f1", "acc"])
            for r in reports:
                writer.writerow([r.model, _csv_value(r.map),
                                 _csv_value(r.f1), _csv_value(r.acc)])
    else:
        raise ValueError(f"unknown report format {format!r}")


def records_to_jsonl(records: Iterable[PredictionRecord],
                     path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps({
                "qid": r.qid, "aid": r.aid,
                "p_good": r.probabilities[0],
                "p_potential": r.probabilities[1],
                "p_bad": r.probabilities[2],
                "gold": r.gold,
            }, ensure_ascii=False))
            fh.write("\n")


def records_from_jsonl(path: str | Path) -> list[PredictionRecord]:
    records = []
    for lineno, line in enumerate(
            Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            gold = obj["gold"]
            if gold not in LABELS:
                raise LabelError(f"unknown gold label {gold!r}")
            records.append(PredictionRecord(
                qid=obj["qid"], aid=obj["aid"],
                probabilities=(obj["p_good"], obj["p_potential"], obj["p_bad"]),
                gold=gold))
        except (KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}:{lineno}: bad prediction record: {exc}") from exc
    if not records:
        raise DataError(f"{path}: no prediction records")
    return records
