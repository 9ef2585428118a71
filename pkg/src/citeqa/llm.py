"""Language-model clients: a remote chat client and a scripted offline mock.

Both expose complete(messages) -> completion text and append every exchange
to .transcript. The remote client speaks the minimal chat contract

    POST {"model": str, "messages": [{"role": str, "content": str}]}
    ->   {"choices": [{"message": {"content": str}}]}

The mock resolves a prompt against an ordered list of (pattern, response)
rules — first regex match wins, otherwise the scripted default — so whole
pipelines run deterministically offline. Responses may reference the prompt
with the literal placeholder {prompt}, which turns the mock into an echo
client for transcript audits.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from .errors import LMClientError

LM_API_KEY_VAR = "CITEQA_LM_API_KEY"


def _prompt_text(messages: list[dict]) -> str:
    return "\n".join(m.get("content", "") for m in messages)


class TranscriptMixin:
    def _record(self, messages: list[dict], response: str) -> None:
        self.transcript.append({"messages": [dict(m) for m in messages], "response": response})


@dataclass
class ScriptedMockClient(TranscriptMixin):
    """Deterministic mock: responses are a pure function of the prompt."""

    rules: list[tuple[str, str]] = field(default_factory=list)
    default: str = ""
    transcript: list[dict] = field(default_factory=list)

    def complete(self, messages: list[dict]) -> str:
        prompt = _prompt_text(messages)
        response = self.default
        for pattern, reply in self.rules:
            if re.search(pattern, prompt, flags=re.DOTALL):
                response = reply
                break
        response = response.replace("{prompt}", prompt)
        self._record(messages, response)
        return response


def echo_client() -> ScriptedMockClient:
    """Mock whose every completion is the full prompt text."""
    return ScriptedMockClient(rules=[], default="{prompt}")


def load_mock_script(path: str | Path) -> ScriptedMockClient:
    """Script file: {"default": str, "rules": [{"pattern": str, "response": str}]}."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise LMClientError(f"cannot load mock script {path}: {exc}") from exc
    rules = [(r["pattern"], r["response"]) for r in payload.get("rules", [])]
    return ScriptedMockClient(rules=rules, default=payload.get("default", ""))


@dataclass
class RemoteChatClient(TranscriptMixin):
    """Client for a chat-completion HTTP service; post_fn injectable for tests."""

    endpoint: str
    model: str
    timeout: float = 60.0
    api_key_var: str = LM_API_KEY_VAR
    post_fn: Callable | None = None
    transcript: list[dict] = field(default_factory=list)

    def complete(self, messages: list[dict]) -> str:
        post = self.post_fn
        if post is None:
            import requests

            post = requests.post
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.api_key_var, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        try:
            resp = post(
                self.endpoint,
                json={"model": self.model, "messages": messages},
                headers=headers,
                timeout=self.timeout,
            )
        except Exception as exc:
            raise LMClientError(f"chat request failed: {exc}") from exc
        if resp.status_code != 200:
            raise LMClientError(f"chat service returned HTTP {resp.status_code}")
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise LMClientError(f"chat response malformed: {exc}") from exc
        self._record(messages, content)
        return content
