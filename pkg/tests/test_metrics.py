"""Metric oracles: AP/MAP against brute force, classification, reports."""

import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qan.errors import DataError
from qan.metrics import (MetricsReport, PredictionRecord, average_precision,
                         classification_metrics, compute_report,
                         confusion_matrix, emit_report, map_score,
                         rank_question, records_from_jsonl, records_to_jsonl,
                         report_from_dict, report_to_dict)


def rec(qid, aid, p_good, gold, p_potential=None, p_bad=None):
    if p_potential is None:
        p_potential = (1.0 - p_good) / 2
        p_bad = 1.0 - p_good - p_potential
    return PredictionRecord(qid=qid, aid=aid,
                            probabilities=(p_good, p_potential, p_bad),
                            gold=gold)


def brute_force_map(records):
    """Independent MAP implementation: explicit sort, explicit precision
    at every relevant rank, plain loops."""
    by_question = {}
    for r in records:
        by_question.setdefault(r.qid, []).append(r)
    ap_values = []
    for group in by_question.values():
        ordered = sorted(group, key=lambda r: (-r.probabilities[0], r.aid))
        hits = 0
        precisions = []
        for position, r in enumerate(ordered, start=1):
            if r.gold == "Good":
                hits += 1
                precisions.append(hits / position)
        if precisions:
            ap_values.append(sum(precisions) / len(precisions))
    if not ap_values:
        return None
    return sum(ap_values) / len(ap_values)


class TestAveragePrecision:
    def test_perfect_ranking(self):
        assert average_precision(["Good", "Bad"]) == 1.0

    def test_single_relevant_at_rank_two(self):
        assert average_precision(["Bad", "Good"]) == 0.5

    def test_no_relevant_is_undefined(self):
        assert average_precision(["Bad", "Bad"]) is None

    def test_bounds_and_perfection_condition(self):
        rng = np.random.default_rng(0)
        labels = ("Good", "Potential", "Bad")
        for _ in range(200):
            golds = [labels[i] for i in rng.integers(0, 3, rng.integers(1, 8))]
            ap = average_precision(golds)
            if ap is None:
                assert "Good" not in golds
                continue
            assert 0.0 <= ap <= 1.0
            n_good = golds.count("Good")
            perfect = golds[:n_good] == ["Good"] * n_good
            assert (ap == 1.0) == perfect


class TestMapScore:
    def test_one_perfect_question(self):
        records = [rec("q1", "a1", 0.9, "Good"), rec("q1", "a2", 0.1, "Bad")]
        assert map_score(records) == 1.0

    def test_mean_of_two_questions(self):
        records = [
            rec("q1", "a1", 0.9, "Good"), rec("q1", "a2", 0.1, "Bad"),
            rec("q2", "a1", 0.9, "Bad"), rec("q2", "a2", 0.1, "Good"),
        ]
        assert map_score(records) == pytest.approx(0.75)

    def test_question_without_good_excluded(self):
        records = [
            rec("q1", "a1", 0.9, "Good"),
            rec("q2", "a1", 0.9, "Bad"), rec("q2", "a2", 0.1, "Bad"),
        ]
        assert map_score(records) == 1.0

    def test_all_undefined(self):
        assert map_score([rec("q1", "a1", 0.9, "Bad")]) is None

    def test_matches_brute_force_on_random_instances(self):
        rng = np.random.default_rng(42)
        labels = ("Good", "Potential", "Bad")
        for _ in range(500):
            records = []
            for q in range(rng.integers(1, 5)):
                for a in range(rng.integers(1, 6)):
                    records.append(rec(
                        f"q{q}", f"a{a}",
                        float(np.round(rng.random(), 2)),  # force ties
                        labels[rng.integers(0, 3)]))
            assert map_score(records) == brute_force_map(records)

    def test_rank_invariance_under_monotone_transforms(self):
        rng = np.random.default_rng(7)
        records = []
        for q in range(6):
            for a in range(5):
                records.append(rec(f"q{q}", f"a{a}", float(rng.random()),
                                   ("Good", "Potential", "Bad")[rng.integers(0, 3)]))
        base = map_score(records)
        for transform in (lambda s: s / 2 + 0.25, lambda s: s ** 3):
            mapped = [PredictionRecord(r.qid, r.aid,
                                       (transform(r.probabilities[0]), 0.0, 0.0),
                                       r.gold)
                      for r in records]
            assert map_score(mapped) == pytest.approx(base)

    def test_tie_break_by_answer_id(self):
        records = [rec("q", "b", 0.5, "Good"), rec("q", "a", 0.5, "Bad")]
        ordered = rank_question(records)
        assert [r.aid for r in ordered] == ["a", "b"]
        assert map_score(records) == 0.5


class TestClassificationMetrics:
    def test_all_correct(self):
        records = [rec("q", "a1", 0.8, "Good"),
                   rec("q", "a2", 0.1, "Bad", p_potential=0.2, p_bad=0.7)]
        f1, acc = classification_metrics(records)
        assert f1 == 1.0 and acc == 1.0

    def test_zero_recall_convention(self):
        records = [rec("q", "a1", 0.1, "Good", p_potential=0.2, p_bad=0.7)]
        f1, acc = classification_metrics(records)
        assert f1 == 0.0 and acc == 0.0

    def test_hand_confusion_case(self):
        # One TP, one FP, one FN for Good: precision = recall = 0.5.
        records = [
            rec("q", "a1", 0.9, "Good"),                                # TP
            rec("q", "a2", 0.9, "Bad"),                                 # FP
            rec("q", "a3", 0.1, "Good", p_potential=0.2, p_bad=0.7),    # FN
        ]
        f1, acc = classification_metrics(records)
        assert f1 == pytest.approx(0.5)
        assert acc == pytest.approx(1 / 3)

    def test_argmax_tie_prefers_good_then_potential(self):
        tie_all = PredictionRecord("q", "a", (1 / 3, 1 / 3, 1 / 3), "Bad")
        assert tie_all.predicted == "Good"
        tie_pb = PredictionRecord("q", "a", (0.0, 0.5, 0.5), "Bad")
        assert tie_pb.predicted == "Potential"

    def test_confusion_consistency(self):
        rng = np.random.default_rng(9)
        labels = ("Good", "Potential", "Bad")
        records = [rec(f"q{i}", "a", float(rng.random()),
                       labels[rng.integers(0, 3)]) for i in range(60)]
        matrix = confusion_matrix(records)
        _, acc = classification_metrics(records)
        assert acc == pytest.approx(np.trace(matrix) / matrix.sum())
        for gold_index, label in enumerate(labels):
            assert matrix[gold_index].sum() == sum(r.gold == label for r in records)

    def test_macro_average_available(self):
        records = [rec("q", "a1", 0.9, "Good"), rec("q", "a2", 0.1, "Bad")]
        macro, _ = classification_metrics(records, average="macro")
        assert 0.0 <= macro <= 1.0

    def test_empty_records(self):
        with pytest.raises(DataError):
            classification_metrics([])


class TestReports:
    def make_report(self):
        records = [
            rec("q1", "a1", 0.9, "Good"), rec("q1", "a2", 0.2, "Bad"),
            rec("q2", "a1", 0.7, "Potential", p_potential=0.2, p_bad=0.1),
        ]
        return compute_report(records, model="toy")

    def test_json_round_trip(self, tmp_path):
        report = self.make_report()
        path = tmp_path / "report.json"
        emit_report(report, path, "json")
        parsed = json.loads(path.read_text(encoding="utf-8"))
        assert isinstance(parsed, list) and len(parsed) == 1
        assert report_from_dict(parsed[0]) == report

    def test_csv_layout(self, tmp_path):
        path = tmp_path / "report.csv"
        emit_report([self.make_report()], path, "csv")
        lines = path.read_text(encoding="utf-8").splitlines()
        assert lines[0] == "model,map,f1,acc"
        assert lines[1].startswith("toy,")

    def test_undefined_map_rendered_as_na(self, tmp_path):
        report = MetricsReport(model="none", map=None, f1=0.0, acc=0.0,
                               per_question_ap={"q": None}, confusion=[[0] * 3] * 3)
        path = tmp_path / "na.csv"
        emit_report(report, path, "csv")
        assert path.read_text(encoding="utf-8").splitlines()[1] == \
            "none,NA,0.000000,0.000000"
        json_path = tmp_path / "na.json"
        emit_report(report, json_path, "json")
        assert json.loads(json_path.read_text(encoding="utf-8"))[0]["map"] is None

    def test_report_dict_field_order(self):
        keys = list(report_to_dict(self.make_report()).keys())
        assert keys == ["model", "map", "f1", "acc", "per_question_ap",
                        "confusion"]

    def test_prediction_jsonl_round_trip(self, tmp_path):
        records = [rec("q1", "a1", 0.9, "Good"),
                   rec("q1", "a2", 0.25, "Potential", p_potential=0.5, p_bad=0.25)]
        path = tmp_path / "predictions.jsonl"
        records_to_jsonl(records, path)
        loaded = records_from_jsonl(path)
        assert loaded == records

    def test_empty_prediction_file(self, tmp_path):
        path = tmp_path / "empty.jsonl"
        path.write_text("", encoding="utf-8")
        with pytest.raises(DataError):
            records_from_jsonl(path)
