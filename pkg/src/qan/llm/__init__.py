"""LLM-based answer selection: templates, clients, and the cascade."""

from .client import (CachingClient, CompletionClient, DecodingParams,
                     FunctionClient, HTTPCompletionClient, ResponseCache,
                     ScriptedClient, prompt_sha256, request_key,
                     write_script_jsonl)
from .pipeline import (Attempt, CascadeTrace, KnowledgeRecord, LlmEvaluation,
                       build_prompt, cascade_select, evaluate_llm,
                       format_options, generate_knowledge, knowledge_prompt,
                       load_knowledge_jsonl, parse_selection, question_text,
                       write_knowledge_jsonl, write_llm_report,
                       write_prompt_counts_csv, write_traces_jsonl)
from .templates import (PromptTemplate, load_knowledge_template,
                        load_templates)

__all__ = [
    "Attempt", "CachingClient", "CascadeTrace", "CompletionClient",
    "DecodingParams", "FunctionClient", "HTTPCompletionClient",
    "KnowledgeRecord", "LlmEvaluation", "PromptTemplate", "ResponseCache",
    "ScriptedClient", "build_prompt", "cascade_select", "evaluate_llm",
    "format_options", "generate_knowledge", "knowledge_prompt",
    "load_knowledge_jsonl", "load_knowledge_template", "load_templates",
    "parse_selection", "prompt_sha256", "question_text", "request_key",
    "write_knowledge_jsonl", "write_llm_report", "write_prompt_counts_csv",
    "write_script_jsonl", "write_traces_jsonl",
]
