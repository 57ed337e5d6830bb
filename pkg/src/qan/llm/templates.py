"""Prompt templates for the selection cascade.

The five selection templates ship as data files (``templates/prompt1.txt``
through ``prompt5.txt``) and are substituted verbatim; placeholders use
the square-bracket form [QUESTION], [ANSWER], [KNOWLEDGE], [SUBJECT].
Templates 1-3 describe the question by body text only; 4 and 5 add the
question subject as a separate slot.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..errors import TemplateError

TEMPLATE_IDS = (1, 2, 3, 4, 5)

_BASE = frozenset({"QUESTION", "ANSWER", "KNOWLEDGE"})
REQUIRED_PLACEHOLDERS: dict[int, frozenset[str]] = {
    1: _BASE, 2: _BASE, 3: _BASE,
    4: _BASE | {"SUBJECT"},
    5: _BASE | {"SUBJECT"},
}

KNOWLEDGE_PLACEHOLDERS = frozenset({"QUESTION", "GOOD ANSWER"})


@dataclass(frozen=True)
class PromptTemplate:
    template_id: int
    text: str
    placeholders: frozenset[str]

    def __post_init__(self) -> None:
        for name in self.placeholders:
            if f"[{name}]" not in self.text:
                raise TemplateError(
                    f"template {self.template_id}: placeholder [{name}] "
                    f"missing from the template text")


def default_template_dir() -> Path:
    return Path(resources.files("qan.llm") / "templates")


def load_template_text(template_id: int, directory: str | Path | None = None) -> str:
    directory = Path(directory) if directory else default_template_dir()
    path = directory / f"prompt{template_id}.txt"
    if not path.is_file():
        raise TemplateError(f"missing template file {path}")
    return path.read_text(encoding="utf-8")


def load_templates(directory: str | Path | None = None) -> dict[int, PromptTemplate]:
    """Load the five selection templates, validating their placeholders."""
    return {
        tid: PromptTemplate(template_id=tid,
                            text=load_template_text(tid, directory),
                            placeholders=REQUIRED_PLACEHOLDERS[tid])
        for tid in TEMPLATE_IDS
    }


def load_knowledge_template(directory: str | Path | None = None) -> str:
    directory = Path(directory) if directory else default_template_dir()
    path = directory / "knowledge.txt"
    if not path.is_file():
        raise TemplateError(f"missing knowledge template {path}")
    text = path.read_text(encoding="utf-8")
    for name in KNOWLEDGE_PLACEHOLDERS:
        if f"[{name}]" not in text:
            raise TemplateError(
                f"knowledge template: placeholder [{name}] missing")
    return text
