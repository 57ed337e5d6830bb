"""Prompt templates, clients, caching, and cascade pipeline tests."""

import json

import pytest

from qan.data import Answer, QAThread
from qan.errors import (ConfigError, NoGoldAnswerError, TemplateError,
                        TransportError)
from qan.llm import (CachingClient, DecodingParams, FunctionClient,
                     ResponseCache, ScriptedClient, build_prompt,
                     cascade_select, evaluate_llm, format_options,
                     generate_knowledge, knowledge_prompt,
                     load_knowledge_jsonl, load_knowledge_template,
                     load_templates, parse_selection, prompt_sha256,
                     question_text, request_key, write_knowledge_jsonl,
                     write_script_jsonl)

PARAMS = DecodingParams()


def thread(qid="q1", subject="Any good place to shop?",
           body="Looking for Gucci in town.", golds=("Bad", "Good")):
    answers = [Answer(f"{qid}_a{i}", f"answer text {i} for {qid}", gold)
               for i, gold in enumerate(golds, start=1)]
    return QAThread(qid=qid, subject=subject, body=body, answers=answers)


class CountingClient(FunctionClient):
    def __init__(self, fn):
        super().__init__(fn)


class TestTemplates:
    def test_packaged_templates_match_golden_files(self, golden_dir):
        templates = load_templates()
        for tid, template in templates.items():
            golden = (golden_dir / f"prompt{tid}.txt").read_bytes()
            assert template.text.encode("utf-8") == golden, tid

    def test_required_placeholders(self):
        templates = load_templates()
        for tid in (1, 2, 3):
            assert templates[tid].placeholders == {"QUESTION", "ANSWER",
                                                   "KNOWLEDGE"}
        for tid in (4, 5):
            assert "SUBJECT" in templates[tid].placeholders

    def test_missing_placeholder_rejected(self, tmp_path):
        for tid in range(1, 6):
            (tmp_path / f"prompt{tid}.txt").write_text(
                "no placeholders here", encoding="utf-8")
        with pytest.raises(TemplateError):
            load_templates(tmp_path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(TemplateError, match="prompt1"):
            load_templates(tmp_path)

    def test_prompt3_question_block_before_instructions(self):
        text = load_templates()[3].text
        assert text.index("Question:") < text.index("Instructions:")

    def test_subject_slot_only_in_late_templates(self):
        templates = load_templates()
        for tid in (1, 2, 3):
            assert "[SUBJECT]" not in templates[tid].text
        for tid in (4, 5):
            assert "[SUBJECT]" in templates[tid].text


class TestBuildPrompt:
    def test_prompt1_substitution_is_exact(self):
        t = thread()
        out = build_prompt(load_templates()[1], t, knowledge="K-text")
        expected = (
            "Utilizing the information in hint-K-text, choose the serial "
            "number of the optimal response to the question-Looking for "
            "Gucci in town. that is distinct from the options-"
            "C1: answer text 1 for q1\nC2: answer text 2 for q1.\n")
        assert out == expected

    def test_options_render_in_file_order(self):
        t = thread(golds=("Good", "Potential", "Bad"))
        assert format_options(t) == (
            "C1: answer text 1 for q1\n"
            "C2: answer text 2 for q1\n"
            "C3: answer text 3 for q1")

    def test_prompt4_contains_subject_prompt3_does_not(self):
        t = thread(subject="UNIQUE-SUBJECT-MARKER")
        templates = load_templates()
        with_subject = build_prompt(templates[4], t, "K")
        without_subject = build_prompt(templates[3], t, "K")
        assert "UNIQUE-SUBJECT-MARKER" in with_subject
        assert "UNIQUE-SUBJECT-MARKER" not in without_subject

    def test_no_knowledge_mode_substitutes_empty_hint(self):
        t = thread()
        out = build_prompt(load_templates()[3], t, knowledge=None)
        assert "Background Knowledge: \n" in out
        assert "[KNOWLEDGE]" not in out


class TestKnowledgeGeneration:
    def test_prompt_assembly_matches_documented_example(self):
        t = QAThread(
            qid="shop", subject="Any good place to shop? Gucci?",
            body="Thanks for your help guys!",
            answers=[Answer("a1", "go to Villaggio VIP area Gucci is there "
                                  "with some other designer brands Talk to "
                                  "my crown", "Good")])
        prompt, good_aid = knowledge_prompt(t)
        expected = (
            "From the provided question Any good place to shop? Gucci? "
            "Thanks for your help guys! and answer go to Villaggio VIP area "
            "Gucci is there with some other designer brands Talk to my "
            "crown, please generate a short piece of related knowledge. "
            "Your response should be concise and provide relevant "
            "information that pertains to the question. Feel free to draw "
            "from various sources and provide interesting and educational "
            "insights related to the question.\n")
        assert prompt == expected
        assert good_aid == "a1"

    def test_question_text_joins_subject_and_body(self):
        assert question_text(thread(subject="A?", body="B.")) == "A? B."

    def test_scripted_completion_becomes_knowledge(self):
        t = thread()
        prompt, _ = knowledge_prompt(t)
        client = ScriptedClient({prompt_sha256(prompt): "X"})
        record = generate_knowledge(t, client, PARAMS)
        assert record.text == "X"
        assert record.qid == "q1"
        assert record.source_answer_id == "q1_a2"
        assert record.prompt_sha256 == prompt_sha256(prompt)

    def test_first_good_answer_used(self):
        t = thread(golds=("Bad", "Good", "Good"))
        _, good_aid = knowledge_prompt(t)
        assert good_aid == "q1_a2"

    def test_no_good_answer(self):
        with pytest.raises(NoGoldAnswerError):
            knowledge_prompt(thread(golds=("Bad", "Potential")))

    def test_cache_prevents_second_remote_call(self, tmp_path):
        t = thread()
        prompt, _ = knowledge_prompt(t)
        inner = ScriptedClient({prompt_sha256(prompt): "K"})
        client = CachingClient(inner, ResponseCache(tmp_path / "cache"))
        generate_knowledge(t, client, PARAMS)
        generate_knowledge(t, client, PARAMS)
        assert inner.calls == 1

    def test_knowledge_jsonl_round_trip(self, tmp_path):
        t = thread()
        prompt, _ = knowledge_prompt(t)
        client = ScriptedClient({prompt_sha256(prompt): "useful hint"})
        record = generate_knowledge(t, client, PARAMS)
        path = tmp_path / "knowledge.jsonl"
        write_knowledge_jsonl([record], path)
        loaded = load_knowledge_jsonl(path)
        assert loaded["q1"] == record


class TestParseSelection:
    def test_plain_selection(self):
        assert parse_selection("C1", 3) == 1

    def test_first_match_inside_sentence(self):
        assert parse_selection("The best answer is C2.", 3) == 2

    def test_case_insensitive(self):
        assert parse_selection("i pick c3 over c1", 3) == 3

    def test_unparseable(self):
        assert parse_selection("I cannot decide", 3) is None

    def test_out_of_range_skipped(self):
        assert parse_selection("C0 then C9 then C2", 2) == 2
        assert parse_selection("C7", 2) is None

    def test_never_exceeds_option_count(self):
        for text in ("C1 C2 C3 C99", "cc c10c2", "C123456"):
            for n in (1, 2, 3):
                got = parse_selection(text, n)
                assert got is None or 1 <= got <= n

    def test_invalid_option_count(self):
        with pytest.raises(ConfigError):
            parse_selection("C1", 0)


def scripted_for(t, responses, knowledge=None):
    """Build a ScriptedClient answering template i with responses[i-1]."""
    templates = load_templates()
    table = {}
    for tid, text in zip(sorted(templates), responses):
        prompt = build_prompt(templates[tid], t, knowledge)
        table[prompt_sha256(prompt)] = text
    return ScriptedClient(table)


class TestCascade:
    def test_correct_on_first_attempt(self):
        t = thread()  # Good answer is C2
        client = scripted_for(t, ["C2"] * 5)
        trace = cascade_select(t, load_templates(), None, client, PARAMS)
        assert trace.outcome == "correct"
        assert len(trace.attempts) == 1
        assert trace.attempts[0].selection == 2
        assert not trace.knowledge_used

    def test_correct_only_on_third_attempt(self):
        t = thread()
        client = scripted_for(t, ["C1", "nope", "C2", "C2", "C2"])
        trace = cascade_select(t, load_templates(), None, client, PARAMS)
        assert trace.outcome == "correct"
        assert len(trace.attempts) == 3
        assert [a.correct for a in trace.attempts] == [False, False, True]
        assert trace.attempts[1].selection is None

    def test_exhaustion_is_failure(self):
        t = thread()
        client = scripted_for(t, ["C1"] * 5)
        trace = cascade_select(t, load_templates(), None, client, PARAMS)
        assert trace.outcome == "failed"
        assert len(trace.attempts) == 5

    def test_transport_error_aborts_with_marker(self):
        t = thread()
        client = ScriptedClient({})  # knows nothing -> transport error
        trace = cascade_select(t, load_templates(), None, client, PARAMS)
        assert trace.outcome == "aborted"
        assert trace.error is not None
        assert trace.attempts == []

    def test_knowledge_flag_recorded(self):
        t = thread()
        client = scripted_for(t, ["C2"] * 5, knowledge="hint")
        trace = cascade_select(t, load_templates(), "hint", client, PARAMS)
        assert trace.knowledge_used


class TestEvaluate:
    def make_corpus(self, n=6):
        return [thread(qid=f"q{i}", body=f"unique question marker q{i}")
                for i in range(n)]

    def test_always_correct_client(self):
        corpus = self.make_corpus()
        client = FunctionClient(lambda prompt, params: "C2")
        result = evaluate_llm(corpus, "without-knowledge", client, workers=1)
        assert result.accuracy == 1.0
        assert result.per_prompt_counts == [len(corpus), 0, 0, 0, 0]
        assert result.cumulative_counts == [len(corpus)] * 5

    def test_histogram_matches_first_correct_map(self):
        corpus = self.make_corpus(6)
        first_correct = {"q0": 1, "q1": 3, "q2": 3, "q3": 5, "q4": 2, "q5": 1}

        def respond(prompt, params):
            qid = next(q for q in first_correct if f"marker {q}" in prompt)
            tid = template_of(prompt)
            return "C2" if tid == first_correct[qid] else "C1"

        result = evaluate_llm(corpus, "without-knowledge",
                              FunctionClient(respond), workers=1)
        assert result.per_prompt_counts == [2, 1, 2, 0, 1]
        assert result.cumulative_counts == [2, 3, 5, 5, 6]
        assert all(b >= a for a, b in zip(result.cumulative_counts,
                                          result.cumulative_counts[1:]))
        assert result.accuracy == 1.0

    def test_conservation(self):
        corpus = self.make_corpus(5) + [thread(qid="nogold",
                                               golds=("Bad", "Potential"))]

        def respond(prompt, params):
            if "marker q0" in prompt or "marker q1" in prompt:
                return "C2"
            return "no answer"

        result = evaluate_llm(corpus, "without-knowledge",
                              FunctionClient(respond), workers=1)
        assert result.total_questions == 6
        assert (sum(result.per_prompt_counts) + result.failed
                + len(result.skipped) + len(result.aborted)) == 6
        assert result.skipped == [{"qid": "nogold", "reason": "no Good answer"}]

    def test_with_knowledge_requires_mapping(self):
        with pytest.raises(ConfigError):
            evaluate_llm(self.make_corpus(1), "with-knowledge",
                         FunctionClient(lambda p, d: "C2"))

    def test_missing_knowledge_entry_skipped(self):
        corpus = self.make_corpus(2)
        result = evaluate_llm(corpus, "with-knowledge",
                              FunctionClient(lambda p, d: "C2"),
                              knowledge={"q0": "hint"}, workers=1)
        assert result.evaluated == 1
        assert result.skipped == [{"qid": "q1", "reason": "no knowledge entry"}]
        assert result.caveats  # gold leakage is flagged

    def test_workers_do_not_change_results(self):
        corpus = self.make_corpus(8)
        client = FunctionClient(lambda p, d: "C2")
        sequential = evaluate_llm(corpus, "without-knowledge", client, workers=1)
        parallel = evaluate_llm(corpus, "without-knowledge", client, workers=4)
        assert sequential.per_prompt_counts == parallel.per_prompt_counts
        assert [t.qid for t in sequential.traces] == \
            [t.qid for t in parallel.traces]

    def test_cache_makes_rerun_remote_free(self, tmp_path):
        corpus = self.make_corpus(3)
        inner = FunctionClient(lambda p, d: "C2")
        client = CachingClient(inner, ResponseCache(tmp_path / "cache"))
        first = evaluate_llm(corpus, "without-knowledge", client, workers=1)
        calls_after_first = inner.calls
        second = evaluate_llm(corpus, "without-knowledge", client, workers=1)
        assert inner.calls == calls_after_first
        assert [t.as_dict() for t in first.traces] == \
            [t.as_dict() for t in second.traces]

    def test_knowledge_arm_plumbing(self):
        corpus = self.make_corpus(4)
        knowledge = {t.qid: f"secret hint {t.qid}" for t in corpus}

        def respond(prompt, params):
            for qid, hint in knowledge.items():
                if hint in prompt:
                    return "C2"
            return "C1"

        client = FunctionClient(respond)
        with_k = evaluate_llm(corpus, "with-knowledge", client,
                              knowledge=knowledge, workers=1)
        without_k = evaluate_llm(corpus, "without-knowledge", client, workers=1)
        assert with_k.accuracy == 1.0
        assert without_k.accuracy == 0.0


def template_of(prompt: str) -> int:
    if prompt.startswith("Utilizing the information"):
        return 1
    if prompt.startswith("Given the discoveries"):
        return 2
    if prompt.startswith("Question: "):
        return 3
    if prompt.startswith("Question Subject:") and "above mentioned" in prompt:
        return 4
    if prompt.startswith("Question Subject:") and "Please select" in prompt:
        return 5
    raise AssertionError(f"unrecognized template: {prompt[:60]}")


class TestClients:
    def test_scripted_round_trip_via_file(self, tmp_path):
        entries = {prompt_sha256("hello"): "world"}
        path = tmp_path / "script.jsonl"
        write_script_jsonl(entries, path)
        client = ScriptedClient.from_jsonl(path)
        assert client.complete("hello", PARAMS) == "world"

    def test_scripted_unknown_prompt_is_transport_error(self):
        with pytest.raises(TransportError):
            ScriptedClient({}).complete("anything", PARAMS)

    def test_request_key_depends_on_decoding_params(self):
        a = request_key("p", DecodingParams(temperature=0.0))
        b = request_key("p", DecodingParams(temperature=0.5))
        assert a != b
        assert request_key("p", PARAMS) == request_key("p", DecodingParams())

    def test_http_client_retries_then_succeeds(self, monkeypatch):
        from qan.llm import client as client_module

        attempts = []

        class FakeResponse:
            def raise_for_status(self):
                pass

            def json(self):
                return {"text": "done"}

        def fake_post(url, json=None, headers=None, timeout=None):
            attempts.append(url)
            if len(attempts) < 3:
                raise client_module.requests.ConnectionError("boom")
            return FakeResponse()

        monkeypatch.setattr(client_module.requests, "post", fake_post)
        http = client_module.HTTPCompletionClient("http://service/complete",
                                                  backoff=0.0)
        assert http.complete("p", PARAMS) == "done"
        assert len(attempts) == 3

    def test_http_client_exhausts_retries(self, monkeypatch):
        from qan.llm import client as client_module

        def fake_post(url, json=None, headers=None, timeout=None):
            raise client_module.requests.ConnectionError("down")

        monkeypatch.setattr(client_module.requests, "post", fake_post)
        http = client_module.HTTPCompletionClient("http://service/complete",
                                                  backoff=0.0)
        with pytest.raises(TransportError, match="3 attempts"):
            http.complete("p", PARAMS)
