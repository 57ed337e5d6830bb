"""Knowledge generation, prompt assembly, and the selection cascade.

The cascade tries the five templates in order and stops at the first
attempt whose parsed selection points at a Good answer; unparseable
completions count as incorrect and advance the cascade.  Knowledge is
generated from the question plus its first Good answer, which leaks the
gold label into the hint by construction; reports carry a caveat saying
so rather than hiding it.
"""

from __future__ import annotations

import csv
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal, Mapping, Sequence

from ..data import QAThread
from ..errors import ConfigError, NoGoldAnswerError, TemplateError, TransportError
from .client import CompletionClient, DecodingParams, prompt_sha256
from .templates import (PromptTemplate, load_knowledge_template,
                        load_templates)

Mode = Literal["with-knowledge", "without-knowledge"]

LEAKAGE_CAVEAT = ("knowledge is generated from the question and its gold Good "
                  "answer, so the with-knowledge arm sees label information")

_SELECTION_RE = re.compile(r"[Cc](\d+)")


def format_options(thread: QAThread) -> str:
    """Render candidate answers as ``C1: ...`` lines, in file order."""
    return "\n".join(f"C{i}: {a.text}"
                     for i, a in enumerate(thread.answers, start=1))


def question_text(thread: QAThread) -> str:
    """Subject and body joined for knowledge generation."""
    return f"{thread.subject} {thread.body}".strip()


@dataclass
class KnowledgeRecord:
    qid: str
    text: str
    prompt_sha256: str
    source_answer_id: str


def knowledge_prompt(thread: QAThread,
                     template: str | None = None) -> tuple[str, str]:
    """Assemble the generation prompt; returns (prompt, good answer id)."""
    template = template if template is not None else load_knowledge_template()
    good = next((a for a in thread.answers if a.gold == "Good"), None)
    if good is None:
        raise NoGoldAnswerError(f"thread {thread.qid!r} has no Good answer")
    prompt = (template
              .replace("[QUESTION]", question_text(thread))
              .replace("[GOOD ANSWER]", good.text))
    return prompt, good.aid


def generate_knowledge(thread: QAThread, client: CompletionClient,
                       params: DecodingParams = DecodingParams(),
                       template: str | None = None) -> KnowledgeRecord:
    """Produce the knowledge hint for one thread via the client."""
    prompt, good_aid = knowledge_prompt(thread, template)
    completion = client.complete(prompt, params)
    return KnowledgeRecord(qid=thread.qid, text=completion,
                           prompt_sha256=prompt_sha256(prompt),
                           source_answer_id=good_aid)


def build_prompt(template: PromptTemplate, thread: QAThread,
                 knowledge: str | None = None) -> str:
    """Pure textual substitution of the template placeholders.

    ``knowledge=None`` fills an empty hint section (the without-knowledge
    arm); the body is the [QUESTION] slot and the subject fills [SUBJECT]
    where the template asks for it.
    """
    values = {
        "QUESTION": thread.body,
        "ANSWER": format_options(thread),
        "KNOWLEDGE": knowledge or "",
        "SUBJECT": thread.subject,
    }
    text = template.text
    for name in template.placeholders:
        if name not in values:
            raise TemplateError(
                f"template {template.template_id}: no value for [{name}]")
        if f"[{name}]" not in text:
            raise TemplateError(
                f"template {template.template_id}: placeholder [{name}] "
                f"missing from the template text")
        text = text.replace(f"[{name}]", values[name])
    return text


def parse_selection(completion: str, n_options: int) -> int | None:
    """First in-range ``C<digits>`` match (case-insensitive), else None."""
    if n_options < 1:
        raise ConfigError(f"n_options must be >= 1, got {n_options}")
    for match in _SELECTION_RE.finditer(completion):
        value = int(match.group(1))
        if 1 <= value <= n_options:
            return value
    return None


@dataclass
class Attempt:
    template_id: int
    completion: str
    selection: int | None
    correct: bool


@dataclass
class CascadeTrace:
    qid: str
    attempts: list[Attempt]
    outcome: Literal["correct", "failed", "aborted"]
    knowledge_used: bool
    error: str | None = None

    @property
    def first_correct_attempt(self) -> int | None:
        return len(self.attempts) if self.outcome == "correct" else None

    def as_dict(self) -> dict:
        return {
            "qid": self.qid,
            "attempts": [{
                "template_id": a.template_id,
                "completion": a.completion,
                "selection": a.selection,
                "correct": a.correct,
            } for a in self.attempts],
            "outcome": self.outcome,
            "knowledge_used": self.knowledge_used,
            "error": self.error,
        }


def cascade_select(thread: QAThread,
                   templates: Mapping[int, PromptTemplate],
                   knowledge: str | None,
                   client: CompletionClient,
                   params: DecodingParams = DecodingParams()) -> CascadeTrace:
    """Try templates in ascending id order until a Good answer is picked.

    A transport failure aborts the trace (marked resumable via the error
    field); parse failures just advance to the next template.
    """
    good_indices = {i for i, a in enumerate(thread.answers, start=1)
                    if a.gold == "Good"}
    attempts: list[Attempt] = []
    used_knowledge = knowledge is not None
    for template_id in sorted(templates):
        prompt = build_prompt(templates[template_id], thread, knowledge)
        try:
            completion = client.complete(prompt, params)
        except TransportError as exc:
            return CascadeTrace(qid=thread.qid, attempts=attempts,
                                outcome="aborted", knowledge_used=used_knowledge,
                                error=str(exc))
        selection = parse_selection(completion, len(thread.answers))
        correct = selection in good_indices
        attempts.append(Attempt(template_id=template_id, completion=completion,
                                selection=selection, correct=correct))
        if correct:
            return CascadeTrace(qid=thread.qid, attempts=attempts,
                                outcome="correct", knowledge_used=used_knowledge)
    return CascadeTrace(qid=thread.qid, attempts=attempts, outcome="failed",
                        knowledge_used=used_knowledge)


@dataclass
class LlmEvaluation:
    mode: Mode
    corpus_label: str
    total_questions: int
    evaluated: int
    correct: int
    failed: int
    accuracy: float | None
    per_prompt_counts: list[int]
    cumulative_counts: list[int]
    skipped: list[dict]
    aborted: list[str]
    traces: list[CascadeTrace]
    caveats: list[str] = field(default_factory=list)

    def report_dict(self) -> dict:
        return {
            "corpus": self.corpus_label,
            "mode": self.mode,
            "total_questions": self.total_questions,
            "evaluated": self.evaluated,
            "correct": self.correct,
            "failed": self.failed,
            "skipped": self.skipped,
            "aborted": self.aborted,
            "accuracy": self.accuracy,
            "per_prompt_counts": self.per_prompt_counts,
            "cumulative_counts": self.cumulative_counts,
            "caveats": self.caveats,
        }


def evaluate_llm(threads: Sequence[QAThread], mode: Mode,
                 client: CompletionClient,
                 knowledge: Mapping[str, str] | None = None,
                 templates: Mapping[int, PromptTemplate] | None = None,
                 params: DecodingParams = DecodingParams(),
                 workers: int = 4,
                 corpus_label: str = "corpus") -> LlmEvaluation:
    """Run the cascade over a corpus and aggregate per-prompt counts.

    Questions without a Good answer (or, in with-knowledge mode, without
    a knowledge entry) are skipped with a recorded reason.  Per-prompt
    count i is the number of questions first answered correctly at
    attempt i; cumulative counts are its prefix sums.
    """
    if mode not in ("with-knowledge", "without-knowledge"):
        raise ConfigError(f"unknown mode {mode!r}")
    if mode == "with-knowledge" and knowledge is None:
        raise ConfigError("with-knowledge mode needs a knowledge mapping")
    templates = templates if templates is not None else load_templates()

    skipped: list[dict] = []
    runnable: list[tuple[QAThread, str | None]] = []
    for thread in threads:
        if not any(a.gold == "Good" for a in thread.answers):
            skipped.append({"qid": thread.qid, "reason": "no Good answer"})
            continue
        hint: str | None = None
        if mode == "with-knowledge":
            hint = knowledge.get(thread.qid)
            if hint is None:
                skipped.append({"qid": thread.qid, "reason": "no knowledge entry"})
                continue
        runnable.append((thread, hint))

    def run(job: tuple[QAThread, str | None]) -> CascadeTrace:
        thread, hint = job
        return cascade_select(thread, templates, hint, client, params)

    if workers > 1 and len(runnable) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(run, runnable))
    else:
        traces = [run(job) for job in runnable]

    n_templates = len(templates)
    per_prompt = [0] * n_templates
    aborted: list[str] = []
    correct = failed = 0
    for trace in traces:
        if trace.outcome == "aborted":
            aborted.append(trace.qid)
        elif trace.outcome == "correct":
            correct += 1
            per_prompt[len(trace.attempts) - 1] += 1
        else:
            failed += 1
    cumulative = []
    running = 0
    for count in per_prompt:
        running += count
        cumulative.append(running)
    evaluated = correct + failed

    caveats = [LEAKAGE_CAVEAT] if mode == "with-knowledge" else []
    return LlmEvaluation(
        mode=mode, corpus_label=corpus_label,
        total_questions=len(threads), evaluated=evaluated,
        correct=correct, failed=failed,
        accuracy=(correct / evaluated) if evaluated else None,
        per_prompt_counts=per_prompt, cumulative_counts=cumulative,
        skipped=skipped, aborted=aborted, traces=traces, caveats=caveats)


# ---------------------------------------------------------------------------
# File formats


def write_knowledge_jsonl(records: Sequence[KnowledgeRecord],
                          path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for r in records:
            fh.write(json.dumps({
                "qid": r.qid, "knowledge": r.text,
                "prompt_sha256": r.prompt_sha256,
                "source_answer_id": r.source_answer_id,
            }, ensure_ascii=False))
            fh.write("\n")


def load_knowledge_jsonl(path: str | Path) -> dict[str, KnowledgeRecord]:
    records: dict[str, KnowledgeRecord] = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        records[obj["qid"]] = KnowledgeRecord(
            qid=obj["qid"], text=obj["knowledge"],
            prompt_sha256=obj["prompt_sha256"],
            source_answer_id=obj["source_answer_id"])
    return records


def write_traces_jsonl(traces: Sequence[CascadeTrace], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for trace in traces:
            fh.write(json.dumps(trace.as_dict(), ensure_ascii=False))
            fh.write("\n")


def write_prompt_counts_csv(evaluation: LlmEvaluation, path: str | Path) -> None:
    """Per-prompt correct counts and their prefix sums."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["prompt_id", "count", "cumulative"])
        for i, (count, cum) in enumerate(zip(evaluation.per_prompt_counts,
                                             evaluation.cumulative_counts),
                                         start=1):
            writer.writerow([i, count, cum])


def write_llm_report(evaluation: LlmEvaluation, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(evaluation.report_dict(), indent=2, ensure_ascii=False) + "\n",
        encoding="utf-8")
