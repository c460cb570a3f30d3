"""Knowledge-base loading, validation, and candidate-side serialization.

A KB file is UTF-8 JSON-lines: one object per line with string fields
``id``, ``title``, ``description``. The id ``"NIL"`` is reserved for the
out-of-KB label and may never appear as an entry id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Iterator

NIL = "NIL"

# Atomic marker separating title tokens from description tokens in
# candidate-side serializations.
TITLE_SEP = "[TITLE_SEP]"


class KBError(ValueError):
    """A knowledge-base file or entry violates its schema or invariants."""


def tokenize(text: str) -> list[str]:
    """Whitespace tokenization, the package-wide token convention."""
    return text.split()


@dataclass(frozen=True)
class KBEntry:
    """One knowledge-base node."""

    id: str
    title: str
    description: str

    def __post_init__(self) -> None:
        if not self.id:
            raise KBError("entry id must be non-empty")
        if self.id == NIL:
            raise KBError(f"entry id {NIL!r} is reserved for the out-of-KB label")
        if not self.title:
            raise KBError(f"entry {self.id!r}: title must be non-empty")


class KnowledgeBase:
    """Ordered, immutable collection of entries with unique-id lookup.

    Safe for concurrent readers once constructed.
    """

    def __init__(self, entries: Iterable[KBEntry]):
        self._entries: tuple[KBEntry, ...] = tuple(entries)
        self._by_id: dict[str, KBEntry] = {}
        for entry in self._entries:
            if entry.id in self._by_id:
                raise KBError(f"duplicate entry id {entry.id!r}")
            self._by_id[entry.id] = entry

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[KBEntry]:
        return iter(self._entries)

    def __getitem__(self, position: int) -> KBEntry:
        return self._entries[position]

    @property
    def n(self) -> int:
        return len(self._entries)

    def get(self, entry_id: str) -> KBEntry | None:
        """Return the entry with this id, or None. Never stores ``NIL``."""
        return self._by_id.get(entry_id)

    def __contains__(self, entry_id: str) -> bool:
        return entry_id in self._by_id

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self._entries)


def get_entry(kb: KnowledgeBase, entry_id: str) -> KBEntry | None:
    """Lookup by id; not-found is the value None, never an exception."""
    return kb.get(entry_id)


def entry_from_record(record: dict, lineno: int | None = None) -> KBEntry:
    where = f" (line {lineno})" if lineno is not None else ""
    if not isinstance(record, dict):
        raise KBError(f"record is not an object{where}")
    for field in ("id", "title", "description"):
        if field not in record:
            raise KBError(f"missing field {field!r}{where}")
        if not isinstance(record[field], str):
            raise KBError(f"field {field!r} must be a string{where}")
    return KBEntry(id=record["id"], title=record["title"], description=record["description"])


def entry_to_record(entry: KBEntry) -> dict:
    return {"id": entry.id, "title": entry.title, "description": entry.description}


def load_kb(path) -> KnowledgeBase:
    """Load a JSON-lines KB file, preserving record order.

    Rejects duplicate ids (naming the id), the reserved id ``NIL``, and
    malformed lines (naming the line number). Lines holding a single
    ``_manifest`` object are artifact headers and are skipped.
    """
    entries: list[KBEntry] = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                raise KBError(f"blank line at line {lineno}")
            try:
                record = json.loads(stripped)
            except json.JSONDecodeError as exc:
                raise KBError(f"malformed JSON at line {lineno}: {exc.msg}") from exc
            if isinstance(record, dict) and set(record) == {"_manifest"}:
                continue
            try:
                entry = entry_from_record(record, lineno)
            except KBError:
                raise
            if entry.id in seen:
                raise KBError(f"duplicate entry id {entry.id!r} at line {lineno}")
            seen.add(entry.id)
            entries.append(entry)
    return KnowledgeBase(entries)


def candidate_text(entry: KBEntry, max_len: int) -> list[str]:
    """Serialize an entry as ``title [TITLE_SEP] description`` tokens.

    Truncated from the right to ``max_len`` tokens; callers should pass
    max_len >= 4 so at least the separator and some title survive.
    """
    tokens = tokenize(entry.title) + [TITLE_SEP] + tokenize(entry.description)
    return tokens[:max_len]


def full_candidate_tokens(entry: KBEntry) -> list[str]:
    """Untruncated candidate-side token sequence (BM25 indexes this)."""
    return tokenize(entry.title) + [TITLE_SEP] + tokenize(entry.description)
