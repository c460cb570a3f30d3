"""Serialization of queries into marker-tagged token sequences.

Three query-side input formats share one truncation discipline:

* ``format_blink``: mention wrapped in ``[M_s]``/``[M_e]``.
* ``format_evelink``: the mention-marked sequence, then ``[SEP]``, then one
  ``[type_s] entity [type_e]`` group per named-entity annotation.
* ``format_arguments``: mention markers plus inline ``[role_s] ... [role_e]``
  groups around every tagged argument span.

Truncation always keeps the marked mention. The window is centered on the
mention with ties biased so the mention sits right of center (the extra
token goes to the left context). Argument groups are atomic: a window
boundary never splits a ``[role_s] .. [role_e]`` group, so a group is
either fully kept or fully dropped, and centered shrinking drops the
groups farthest from the mention first. Entity groups on the evelink
suffix are dropped last-first; the query text is never sacrificed to keep
an entity group.

Marker tokens are single atomic tokens of the form ``[name]``. Corpora are
assumed not to contain tokens of that shape.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Sequence

from .extraction import Argument, EventQuery, NamedEntityAnnotation, Span, TaggedQuery

_MARKER_RE = re.compile(r"^\[[A-Za-z0-9_]+\]$")


def _slug(name: str) -> str:
    cleaned = re.sub(r"[^A-Za-z0-9]+", "_", name).strip("_")
    return cleaned or "X"


@dataclass(frozen=True)
class MarkerVocabulary:
    """The atomic marker tokens used by all query-side formats.

    Role and entity-type markers are derived deterministically from the
    role or type string, so equal strings always yield equal markers.
    """

    mention_start: str = "[M_s]"
    mention_end: str = "[M_e]"
    sep: str = "[SEP]"

    def role_markers(self, role: str) -> tuple[str, str]:
        slug = _slug(role)
        return f"[{slug}_s]", f"[{slug}_e]"

    def type_markers(self, entity_type: str) -> tuple[str, str]:
        slug = _slug(entity_type)
        return f"[{slug}_s]", f"[{slug}_e]"

    def is_marker(self, token: str) -> bool:
        return bool(_MARKER_RE.match(token))


DEFAULT_MARKERS = MarkerVocabulary()


def _marked_sequence(
    query: EventQuery,
    arguments: Sequence[Argument] = (),
    markers: MarkerVocabulary = DEFAULT_MARKERS,
) -> tuple[list[str], tuple[int, int], list[tuple[int, int]]]:
    """Insert mention and argument markers around the raw tokens.

    Returns the marked tokens, the extent of the marked mention block, and
    the extents of each argument group, all as inclusive index pairs into
    the marked sequence.
    """
    starts: dict[int, Argument] = {a.span.start: a for a in arguments}
    ends: dict[int, Argument] = {a.span.end: a for a in arguments}
    out: list[str] = []
    mention_block = [-1, -1]
    groups: dict[int, list[int]] = {}
    for i, token in enumerate(query.tokens):
        if i == query.mention.start:
            mention_block[0] = len(out)
            out.append(markers.mention_start)
        if i in starts:
            groups[starts[i].span.start] = [len(out), -1]
            out.append(markers.role_markers(starts[i].role)[0])
        out.append(token)
        if i in ends:
            groups[ends[i].span.start][1] = len(out)
            out.append(markers.role_markers(ends[i].role)[1])
        if i == query.mention.end:
            mention_block[1] = len(out)
            out.append(markers.mention_end)
    extents = [tuple(v) for _, v in sorted(groups.items())]
    return out, (mention_block[0], mention_block[1]), extents


def _centered_window(length: int, block: tuple[int, int], max_len: int) -> tuple[int, int]:
    """Window of width <= max_len containing ``block``, mention-centered.

    The spare budget is split with the ceiling on the left, then clamped
    into the sequence.
    """
    block_size = block[1] - block[0] + 1
    if max_len < block_size:
        raise ValueError(f"budget {max_len} smaller than the marked mention ({block_size})")
    extra = max_len - block_size
    start = block[0] - (extra + 1) // 2
    end = block[1] + extra // 2
    if start < 0:
        end = min(length - 1, end - start)
        start = 0
    if end > length - 1:
        start = max(0, start - (end - (length - 1)))
        end = length - 1
    return start, end


def _align_to_groups(
    length: int,
    start: int,
    end: int,
    groups: Sequence[tuple[int, int]],
    max_len: int,
) -> tuple[int, int]:
    """Shrink the window off straddled groups, then re-extend whole tokens."""
    changed = True
    while changed:
        changed = False
        for gs, ge in groups:
            if gs < start <= ge:
                start = ge + 1
                changed = True
            if gs <= end < ge:
                end = gs - 1
                changed = True

    def group_at(idx: int) -> tuple[int, int] | None:
        for gs, ge in groups:
            if gs <= idx <= ge:
                return gs, ge
        return None

    while end - start + 1 < max_len and start > 0:
        grp = group_at(start - 1)
        if grp is None:
            start -= 1
        elif end - grp[0] + 1 <= max_len:
            start = grp[0]
        else:
            break
    while end - start + 1 < max_len and end < length - 1:
        grp = group_at(end + 1)
        if grp is None:
            end += 1
        elif grp[1] - start + 1 <= max_len:
            end = grp[1]
        else:
            break
    return start, end


def format_blink(
    query: EventQuery, max_len: int, markers: MarkerVocabulary = DEFAULT_MARKERS
) -> list[str]:
    """Mention-marked token sequence, windowed to ``max_len``."""
    mention_size = len(query.mention) + 2
    if max_len < mention_size:
        raise ValueError(
            f"max_len {max_len} cannot hold the marked mention ({mention_size} tokens)"
        )
    marked, block, _ = _marked_sequence(query, (), markers)
    if len(marked) <= max_len:
        return marked
    start, end = _centered_window(len(marked), block, max_len)
    return marked[start : end + 1]


def format_evelink(
    query: EventQuery,
    entities: Sequence[NamedEntityAnnotation],
    max_len: int,
    markers: MarkerVocabulary = DEFAULT_MARKERS,
) -> list[str]:
    """Mention-marked sequence, ``[SEP]``, then typed entity groups.

    Entity groups are kept in document order and dropped last-first when
    over budget; the query text and its mention window always win over
    entity groups.
    """
    for entity in entities:
        if not entity.span.within(len(query.tokens)):
            raise ValueError(f"entity span {entity.span} outside query tokens")
    marked, block, _ = _marked_sequence(query, (), markers)
    group_tokens: list[list[str]] = []
    for entity in entities:
        ts, te = markers.type_markers(entity.entity_type)
        surface = list(query.tokens[entity.span.start : entity.span.end + 1])
        group_tokens.append([ts, *surface, te])
    kept = list(group_tokens)
    while kept and len(marked) + 1 + sum(len(g) for g in kept) > max_len:
        kept.pop()
    suffix_len = 1 + sum(len(g) for g in kept)
    if len(marked) + suffix_len <= max_len:
        base = marked
    else:
        start, end = _centered_window(len(marked), block, max_len - 1)
        base = marked[start : end + 1]
    out = list(base)
    out.append(markers.sep)
    for group in kept:
        out.extend(group)
    return out


def format_arguments(
    tagged: TaggedQuery, max_len: int, markers: MarkerVocabulary = DEFAULT_MARKERS
) -> list[str]:
    """Inline role-tagged serialization, windowed without splitting groups.

    With zero arguments this is exactly ``format_blink`` on the base query.
    """
    mention_size = len(tagged.base.mention) + 2
    if max_len < mention_size:
        raise ValueError(
            f"max_len {max_len} cannot hold the marked mention ({mention_size} tokens)"
        )
    marked, block, groups = _marked_sequence(tagged.base, tagged.arguments, markers)
    if len(marked) <= max_len:
        return marked
    start, end = _centered_window(len(marked), block, max_len)
    start, end = _align_to_groups(len(marked), start, end, groups, max_len)
    return marked[start : end + 1]


def strip_markers(
    tokens: Sequence[str], markers: MarkerVocabulary = DEFAULT_MARKERS
) -> list[str]:
    """Remove every marker token, leaving the surface tokens."""
    return [t for t in tokens if not markers.is_marker(t)]


FORMAT_STYLES = ("blink", "evelink", "args")


def format_query(
    tagged: TaggedQuery,
    style: str,
    max_len: int,
    markers: MarkerVocabulary = DEFAULT_MARKERS,
) -> list[str]:
    """Dispatch on the format style name used by files and the CLI."""
    if style == "blink":
        return format_blink(tagged.base, max_len, markers)
    if style == "evelink":
        return format_evelink(tagged.base, tagged.base.entities, max_len, markers)
    if style == "args":
        return format_arguments(tagged, max_len, markers)
    raise ValueError(f"unknown format style {style!r}; expected one of {FORMAT_STYLES}")


def context_window(tokens: Sequence[str], span: Span, width: int) -> list[str]:
    """Plain (marker-free) token window of ``width`` centered on ``span``.

    Shares the mention-centering tie rule with the marked formats; used by
    the BM25 query side.
    """
    if width < len(span):
        raise ValueError(f"window width {width} smaller than span {span}")
    if len(tokens) <= width:
        return list(tokens)
    start, end = _centered_window(len(tokens), (span.start, span.end), width)
    return list(tokens[start : end + 1])
