"""Completion clients: HTTP endpoint, scripted mock, and a response cache.

Decoding defaults favour reproducibility (temperature 0, fixed seed).
The cache is content-addressed by sha256 over the prompt plus the
canonical decoding parameters, so an identical request never leaves the
machine twice.
"""

from __future__ import annotations

import hashlib
import json
import os
import threading
import time
from abc import ABC, abstractmethod
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import requests

from ..errors import TransportError


@dataclass(frozen=True)
class DecodingParams:
    temperature: float = 0.0
    max_tokens: int = 256
    seed: int = 0

    def canonical(self) -> str:
        return json.dumps({"max_tokens": self.max_tokens, "seed": self.seed,
                           "temperature": self.temperature}, sort_keys=True)


def prompt_sha256(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


def request_key(prompt: str, params: DecodingParams) -> str:
    payload = prompt.encode("utf-8") + b"\x00" + params.canonical().encode("utf-8")
    return hashlib.sha256(payload).hexdigest()


class CompletionClient(ABC):
    """Anything that turns a prompt into a completion string."""

    @abstractmethod
    def complete(self, prompt: str, params: DecodingParams) -> str:
        ...


class HTTPCompletionClient(CompletionClient):
    """POSTs ``{prompt, max_tokens, temperature, seed}`` and expects
    ``{"text": ...}`` back.  Retries with exponential backoff, then
    raises :class:`TransportError` so the run can be resumed."""

    def __init__(self, endpoint: str, token: str | None = None,
                 retries: int = 3, backoff: float = 0.5, timeout: float = 60.0):
        self.endpoint = endpoint
        self.token = token if token is not None else os.environ.get("QAN_LLM_TOKEN")
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.calls = 0

    def complete(self, prompt: str, params: DecodingParams) -> str:
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        body = {"prompt": prompt, "max_tokens": params.max_tokens,
                "temperature": params.temperature, "seed": params.seed}
        last_error: Exception | None = None
        for attempt in range(self.retries):
            self.calls += 1
            try:
                response = requests.post(self.endpoint, json=body,
                                         headers=headers, timeout=self.timeout)
                response.raise_for_status()
                return response.json()["text"]
            except (requests.RequestException, KeyError, ValueError) as exc:
                last_error = exc
                if attempt + 1 < self.retries:
                    time.sleep(self.backoff * 2 ** attempt)
        raise TransportError(
            f"completion request failed after {self.retries} attempts: "
            f"{last_error}") from last_error


class ScriptedClient(CompletionClient):
    """Replays completions from a ``{prompt_sha256, text}`` JSONL table.

    An unknown prompt raises :class:`TransportError`, which makes the
    mock useful for exercising abort-and-resume paths.
    """

    def __init__(self, table: dict[str, str]):
        self.table = dict(table)
        self.calls = 0

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "ScriptedClient":
        table = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record = json.loads(line)
            table[record["prompt_sha256"]] = record["text"]
        return cls(table)

    def complete(self, prompt: str, params: DecodingParams) -> str:
        self.calls += 1
        digest = prompt_sha256(prompt)
        try:
            return self.table[digest]
        except KeyError:
            raise TransportError(
                f"scripted client has no completion for prompt {digest}") from None


def write_script_jsonl(entries: dict[str, str], path: str | Path) -> None:
    """Write a scripted-client table; keys are prompt sha256 digests."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for digest, text in entries.items():
            fh.write(json.dumps({"prompt_sha256": digest, "text": text},
                                ensure_ascii=False))
            fh.write("\n")


class FunctionClient(CompletionClient):
    """Adapts a plain ``(prompt, params) -> str`` callable."""

    def __init__(self, fn: Callable[[str, DecodingParams], str]):
        self.fn = fn
        self.calls = 0

    def complete(self, prompt: str, params: DecodingParams) -> str:
        self.calls += 1
        return self.fn(prompt, params)


class ResponseCache:
    """Directory of content-addressed completions; safe for concurrent
    readers with serialized writes."""

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()

    def _path(self, key: str) -> Path:
        return self.directory / f"{key}.json"

    def get(self, key: str) -> str | None:
        path = self._path(key)
        if not path.is_file():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["text"]

    def put(self, key: str, text: str) -> None:
        with self._lock:
            tmp = self._path(key).with_suffix(".tmp")
            tmp.write_text(json.dumps({"text": text}, ensure_ascii=False),
                           encoding="utf-8")
            tmp.replace(self._path(key))


class CachingClient(CompletionClient):
    """Serves repeated (prompt, params) requests from the cache without
    touching the wrapped client again."""

    def __init__(self, inner: CompletionClient, cache: ResponseCache):
        self.inner = inner
        self.cache = cache

    def complete(self, prompt: str, params: DecodingParams) -> str:
        key = request_key(prompt, params)
        cached = self.cache.get(key)
        if cached is not None:
            return cached
        text = self.inner.complete(prompt, params)
        self.cache.put(key, text)
        return text
