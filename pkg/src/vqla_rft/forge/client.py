"""Chat-completions client for sub-answer generation, with retries and an audit log."""

from __future__ import annotations

import enum
import json
import os
import threading
import time
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Mapping

import httpx

from ..errors import EndpointError, HttpError, IoFailure, MalformedResponse, Timeout
from .prompts import PromptPack, SubQuestion

CHAT_PATH = "/v1/chat/completions"


class Provenance(str, enum.Enum):
    GENERATED = "Generated"
    MANUALLY_EDITED = "ManuallyEdited"


@dataclass(frozen=True)
class SubAnswerSet:
    answers: Mapping[str, str]
    provenance: Provenance = Provenance.GENERATED

    def edited(self, slot: str, text: str) -> "SubAnswerSet":
        """Return a copy with one answer replaced by a reviewer."""
        if slot not in self.answers:
            raise KeyError(slot)
        return replace(self, answers={**self.answers, slot: text}, provenance=Provenance.MANUALLY_EDITED)


@dataclass(frozen=True)
class GenerationEndpointConfig:
    url: str
    model: str
    api_key_env: str = "VQLA_FORGE_API_KEY"
    temperature: float = 0.0
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_base: float = 1.0

    @property
    def chat_url(self) -> str:
        base = self.url.rstrip("/")
        return base if base.endswith(CHAT_PATH) else base + CHAT_PATH


class AuditLog:
    """Append-only JSONL of request/response pairs; appends are serialized."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()

    def append(self, entry: dict[str, Any]) -> None:
        if self.path is None:
            return
        line = json.dumps(entry, ensure_ascii=False, sort_keys=True)
        with self._lock:
            try:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
            except OSError as exc:
                raise IoFailure(f"cannot append to audit log {self.path}: {exc.strerror or exc}",
                                path=str(self.path)) from exc


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="milliseconds")


def request_body(pack: PromptPack, sub: SubQuestion, endpoint: GenerationEndpointConfig) -> dict[str, Any]:
    user = f"Frame: {pack.image or pack.image_id}\nGround truth: {pack.context_text()}\n\n{sub.prompt}"
    return {
        "model": endpoint.model,
        "messages": [
            {"role": "system", "content": pack.system_prompt},
            {"role": "user", "content": user},
        ],
        "temperature": endpoint.temperature,
    }


def _read_content(response: httpx.Response) -> str:
    try:
        content = response.json()["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError):
        raise MalformedResponse("response has no choices[0].message.content") from None
    if not isinstance(content, str) or not content.strip():
        raise MalformedResponse("response content is empty or not a string")
    return content.strip()


def _post_once(client: httpx.Client, endpoint: GenerationEndpointConfig, body: dict[str, Any],
               headers: dict[str, str]) -> tuple[str, dict[str, Any]]:
    try:
        response = client.post(endpoint.chat_url, json=body, headers=headers, timeout=endpoint.timeout)
    except httpx.TimeoutException as exc:
        raise Timeout(f"no response within {endpoint.timeout}s: {exc}") from exc
    except httpx.TransportError as exc:
        raise EndpointError(f"cannot reach {endpoint.chat_url}: {exc}") from exc
    record = {"status": response.status_code, "body": response.text}
    if response.status_code != 200:
        raise HttpError(response.status_code, response.text)
    return _read_content(response), record


def complete(client: httpx.Client, endpoint: GenerationEndpointConfig, body: dict[str, Any],
             audit: AuditLog, tag: Mapping[str, Any], sleep: Callable[[float], None] = time.sleep) -> str:
    """POST one chat completion, retrying transport failures with exponential backoff."""
    headers = {}
    key = os.environ.get(endpoint.api_key_env)
    if key:
        headers["Authorization"] = f"Bearer {key}"
    for attempt in range(1, endpoint.max_attempts + 1):
        entry: dict[str, Any] = {**tag, "attempt": attempt, "timestamp": _now(), "request": body}
        try:
            content, entry["response"] = _post_once(client, endpoint, body, headers)
        except EndpointError as exc:
            entry["error"] = exc.to_dict()
            if isinstance(exc, HttpError):
                entry["response"] = {"status": exc.status, "body": exc.context.get("body")}
            audit.append(entry)
            if attempt == endpoint.max_attempts:
                raise
            sleep(endpoint.backoff_base * 2 ** (attempt - 1))
            continue
        audit.append(entry)
        return content
    raise AssertionError("unreachable")


def fetch_sub_answers(pack: PromptPack, endpoint: GenerationEndpointConfig,
                      audit: AuditLog | str | Path | None = None,
                      client: httpx.Client | None = None,
                      sleep: Callable[[float], None] = time.sleep) -> SubAnswerSet:
    """Ask the endpoint every sub-question of ``pack``, one request per slot, in slot order."""
    audit = audit if isinstance(audit, AuditLog) else AuditLog(audit)
    own = client is None
    client = client or httpx.Client()
    try:
        answers = {}
        for sub in pack.sub_questions:
            tag = {"image_id": pack.image_id, "question": pack.question, "slot": sub.slot}
            answers[sub.slot] = complete(client, endpoint, request_body(pack, sub, endpoint), audit, tag, sleep)
    finally:
        if own:
            client.close()
    return SubAnswerSet(answers)
