"""Text-completion client adapters.

No vendor client is baked in. Pipelines take any object with a
``complete(prompt) -> str`` method; tests and desk-scale runs use the
deterministic clients here. Callers that issue requests concurrently must
bound in-flight calls themselves; the shipped clients are synchronous.
"""

from __future__ import annotations

from typing import Iterable, Protocol, runtime_checkable


class LLMTransportError(RuntimeError):
    """A retryable transport-level client failure."""


@runtime_checkable
class TextCompletionClient(Protocol):
    def complete(self, prompt: str) -> str: ...


class ScriptedClient:
    """Replays canned completions in order; raises when the script runs dry."""

    def __init__(self, completions: Iterable[str]):
        self._completions = list(completions)
        self._cursor = 0

    @property
    def calls(self) -> int:
        return self._cursor

    def complete(self, prompt: str) -> str:
        if self._cursor >= len(self._completions):
            raise LLMTransportError("scripted client has no completions left")
        completion = self._completions[self._cursor]
        self._cursor += 1
        return completion


class CallableClient:
    """Wraps a ``prompt -> completion`` function as a client."""

    def __init__(self, fn):
        self._fn = fn

    def complete(self, prompt: str) -> str:
        return self._fn(prompt)
