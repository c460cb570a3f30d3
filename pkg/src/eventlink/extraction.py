"""Event queries and pluggable argument extraction.

Extractor adapters produce an event type and argument spans for a query.
The module enforces the tagged-query invariants after every adapter call:
arguments never overlap each other or the mention, whatever the adapter
returned. A deterministic lexicon-based extractor serves tests and
desk-scale runs in place of learned extraction models.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Iterable, Mapping, Protocol, Sequence, runtime_checkable

from .kb import NIL

POS_CLASSES = ("verb", "noun", "other")


class ExtractionError(RuntimeError):
    """Adapter failure, annotated with the query id that triggered it."""

    def __init__(self, query_id: str, message: str):
        super().__init__(f"extraction failed for query {query_id!r}: {message}")
        self.query_id = query_id


@dataclass(frozen=True, order=True)
class Span:
    """Inclusive token span ``[start, end]``."""

    start: int
    end: int

    def __post_init__(self) -> None:
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"invalid span ({self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start + 1

    def overlaps(self, other: "Span") -> bool:
        return self.start <= other.end and other.start <= self.end

    def within(self, length: int) -> bool:
        return self.end < length


@dataclass(frozen=True)
class NamedEntityAnnotation:
    """A named-entity span with its type, consumed as given (no built-in NER)."""

    span: Span
    entity_type: str


@dataclass(frozen=True)
class EventQuery:
    """A token sequence with one marked event mention and a gold label."""

    query_id: str
    tokens: tuple[str, ...]
    mention: Span
    pos: str = "other"
    gold: str = NIL
    entities: tuple[NamedEntityAnnotation, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "tokens", tuple(self.tokens))
        object.__setattr__(self, "entities", tuple(self.entities))
        if not self.tokens:
            raise ValueError(f"query {self.query_id!r}: empty token sequence")
        if not self.mention.within(len(self.tokens)):
            raise ValueError(
                f"query {self.query_id!r}: mention span ({self.mention.start}, "
                f"{self.mention.end}) outside {len(self.tokens)} tokens"
            )
        if self.pos not in POS_CLASSES:
            raise ValueError(f"query {self.query_id!r}: pos must be one of {POS_CLASSES}")
        for entity in self.entities:
            if not entity.span.within(len(self.tokens)):
                raise ValueError(f"query {self.query_id!r}: entity span out of bounds")

    @property
    def mention_tokens(self) -> tuple[str, ...]:
        return self.tokens[self.mention.start : self.mention.end + 1]

    @property
    def mention_text(self) -> str:
        return " ".join(self.mention_tokens)


@dataclass(frozen=True)
class Argument:
    """One event participant: a token span and its role name."""

    span: Span
    role: str

    def __post_init__(self) -> None:
        if not self.role:
            raise ValueError("argument role must be non-empty")


@dataclass(frozen=True)
class TaggedQuery:
    """EventQuery enriched with a predicted event type and arguments.

    Invariants: argument spans are pairwise non-overlapping and none
    overlaps the mention span.
    """

    base: EventQuery
    event_type: str = "UNKNOWN"
    arguments: tuple[Argument, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "arguments", tuple(self.arguments))
        length = len(self.base.tokens)
        ordered = sorted(self.arguments, key=lambda a: a.span)
        for i, arg in enumerate(ordered):
            if not arg.span.within(length):
                raise ValueError(f"argument span {arg.span} outside query tokens")
            if arg.span.overlaps(self.base.mention):
                raise ValueError(f"argument span {arg.span} overlaps the mention")
            if i and ordered[i - 1].span.overlaps(arg.span):
                raise ValueError(f"argument spans {ordered[i-1].span} and {arg.span} overlap")


@runtime_checkable
class ExtractorAdapter(Protocol):
    """Adapter contract for event-type and argument extraction.

    ``serial`` adapters are called from a single thread; others must be
    safe for concurrent calls.
    """

    name: str
    serial: bool

    def tag(self, query: EventQuery) -> tuple[str, Sequence[Argument]]: ...


def resolve_overlaps(
    arguments: Iterable[Argument], mention: Span, length: int
) -> tuple[Argument, ...]:
    """Enforce tagged-query invariants on raw adapter output.

    Arguments overlapping the mention (or out of bounds) are dropped;
    among mutually overlapping arguments the longest is kept, ties going
    to the earlier start.
    """
    usable = [
        a
        for a in arguments
        if a.span.within(length) and not a.span.overlaps(mention)
    ]
    kept: list[Argument] = []
    for arg in sorted(usable, key=lambda a: (-len(a.span), a.span.start)):
        if not any(arg.span.overlaps(k.span) for k in kept):
            kept.append(arg)
    return tuple(sorted(kept, key=lambda a: a.span))


def extract(extractor: ExtractorAdapter, query: EventQuery) -> TaggedQuery:
    """Run an adapter and return an invariant-clean TaggedQuery.

    The base query is passed through untouched. Empty adapter output is
    legal and yields zero arguments with event type ``UNKNOWN``.
    """
    try:
        event_type, raw_arguments = extractor.tag(query)
    except Exception as exc:
        raise ExtractionError(query.query_id, str(exc)) from exc
    arguments = resolve_overlaps(raw_arguments, query.mention, len(query.tokens))
    return TaggedQuery(base=query, event_type=event_type or "UNKNOWN", arguments=arguments)


@dataclass(frozen=True)
class RoleLexicon:
    """Surface-string lexicon: role phrases and event-type trigger words."""

    roles: Mapping[str, str]
    triggers: Mapping[str, str]

    @classmethod
    def from_file(cls, path) -> "RoleLexicon":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        return cls(roles=dict(data.get("roles", {})), triggers=dict(data.get("triggers", {})))

    def to_dict(self) -> dict:
        return {"roles": dict(self.roles), "triggers": dict(self.triggers)}


class RuleExtractor:
    """Deterministic extractor tagging exact, case-insensitive lexicon matches.

    Scans left to right, preferring the longest phrase at each position,
    so adjacent matches come out disjoint. A pure function of
    (lexicon, query).
    """

    name = "rule"
    serial = False

    def __init__(self, lexicon: RoleLexicon):
        self._roles = {
            tuple(phrase.lower().split()): role for phrase, role in lexicon.roles.items()
        }
        self._triggers = {
            phrase.lower(): event_type for phrase, event_type in lexicon.triggers.items()
        }
        self._max_phrase = max((len(p) for p in self._roles), default=1)

    def tag(self, query: EventQuery) -> tuple[str, list[Argument]]:
        lowered = [t.lower() for t in query.tokens]
        event_type = self._triggers.get(query.mention_text.lower(), "UNKNOWN")
        arguments: list[Argument] = []
        i = 0
        while i < len(lowered):
            match_len = 0
            role = ""
            for width in range(min(self._max_phrase, len(lowered) - i), 0, -1):
                candidate = tuple(lowered[i : i + width])
                if candidate in self._roles:
                    match_len, role = width, self._roles[candidate]
                    break
            if match_len:
                arguments.append(Argument(Span(i, i + match_len - 1), role))
                i += match_len
            else:
                i += 1
        return event_type, arguments


def rule_extractor(lexicon: RoleLexicon) -> RuleExtractor:
    """Build the deterministic lexicon-matching adapter."""
    return RuleExtractor(lexicon)


# --- record (de)serialization for query files -------------------------------

def _span_fields(record: dict, prefix: str, where: str) -> Span:
    try:
        return Span(int(record[f"{prefix}_start"]), int(record[f"{prefix}_end"]))
    except KeyError as exc:
        raise ValueError(f"missing field {exc.args[0]!r}{where}") from exc


def query_from_record(record: dict, lineno: int | None = None) -> EventQuery:
    where = f" (line {lineno})" if lineno is not None else ""
    if not isinstance(record, dict):
        raise ValueError(f"record is not an object{where}")
    for field in ("query_id", "tokens"):
        if field not in record:
            raise ValueError(f"missing field {field!r}{where}")
    entities = tuple(
        NamedEntityAnnotation(Span(int(e["start"]), int(e["end"])), str(e["entity_type"]))
        for e in record.get("entities", [])
    )
    return EventQuery(
        query_id=str(record["query_id"]),
        tokens=tuple(str(t) for t in record["tokens"]),
        mention=_span_fields(record, "mention", where),
        pos=str(record.get("pos", "other")),
        gold=str(record.get("gold", NIL)),
        entities=entities,
    )


def query_to_record(query: EventQuery) -> dict:
    record = {
        "query_id": query.query_id,
        "tokens": list(query.tokens),
        "mention_start": query.mention.start,
        "mention_end": query.mention.end,
        "pos": query.pos,
        "gold": query.gold,
    }
    if query.entities:
        record["entities"] = [
            {"start": e.span.start, "end": e.span.end, "entity_type": e.entity_type}
            for e in query.entities
        ]
    return record


def tagged_from_record(record: dict, lineno: int | None = None) -> TaggedQuery:
    base = query_from_record(record, lineno)
    arguments = tuple(
        Argument(Span(int(a["start"]), int(a["end"])), str(a["role"]))
        for a in record.get("arguments", [])
    )
    return TaggedQuery(
        base=base,
        event_type=str(record.get("event_type", "UNKNOWN")),
        arguments=arguments,
    )


def tagged_to_record(tagged: TaggedQuery) -> dict:
    record = query_to_record(tagged.base)
    record["event_type"] = tagged.event_type
    record["arguments"] = [
        {"start": a.span.start, "end": a.span.end, "role": a.role} for a in tagged.arguments
    ]
    return record
