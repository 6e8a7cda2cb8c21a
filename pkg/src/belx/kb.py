"""Core domain types: documents, mention spans, entities, knowledge bases.

Mention spans are byte offsets into the document's UTF-8 encoding, validated
to fall on character boundaries, so slicing is deterministic regardless of
how the text is stored. String normalization here is deliberately minimal
(compose + collapse whitespace, case preserved): the exact-match overlap
filter downstream depends on it staying strict.
"""

from __future__ import annotations

import json
import unicodedata
from dataclasses import dataclass
from typing import Iterator, NamedTuple, Optional

from .errors import FormatError


def normalize_alias(raw: str) -> str:
    """Canonical form of an alias: NFC-composed, trimmed, inner whitespace
    runs collapsed to single spaces. Case is preserved. Idempotent. May
    return "" (callers reject empty aliases)."""
    composed = unicodedata.normalize("NFC", raw)
    return " ".join(composed.split())


# Project suffixes recognized in sitelink keys, longest first so that e.g.
# "wikisource" is not mis-stripped as "wiki".
_PROJECT_SUFFIXES = (
    "wikivoyage",
    "wikisource",
    "wikibooks",
    "wikiquote",
    "wikinews",
    "wiki",
)


class SiteLanguage(NamedTuple):
    tag: str
    recognized: bool


def parse_site_language(site_key: str) -> SiteLanguage:
    """Strip a recognized project suffix from a sitelink key and return the
    language prefix with underscores mapped to hyphens ("zh_yuewiki" ->
    "zh-yue"). Unrecognized keys pass through unchanged, flagged. Never
    returns an empty tag for non-empty input."""
    if not site_key:
        raise ValueError("site_key must be non-empty")
    for suffix in _PROJECT_SUFFIXES:
        if site_key.endswith(suffix):
            prefix = site_key[: -len(suffix)]
            if prefix:
                return SiteLanguage(prefix.replace("_", "-"), True)
            break  # suffix alone ("wiki") has no language prefix
    return SiteLanguage(site_key, False)


def _is_char_boundary(data: bytes, offset: int) -> bool:
    if offset == 0 or offset == len(data):
        return True
    return not (0x80 <= data[offset] < 0xC0)  # not a UTF-8 continuation byte


@dataclass(frozen=True)
class DocumentText:
    """A raw text with an opaque id. Immutable."""

    text: str
    id: str = ""

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError("document text must be non-empty")
        try:
            encoded = self.text.encode("utf-8")
        except UnicodeEncodeError as exc:
            raise ValueError(f"document text is not valid unicode: {exc}") from exc
        object.__setattr__(self, "_utf8", encoded)

    @property
    def utf8(self) -> bytes:
        return self._utf8  # type: ignore[attr-defined]


@dataclass(frozen=True)
class MentionSpan:
    """Byte span [start, end) into a document's UTF-8 encoding. Both ends
    must fall on character boundaries; the slice is the mention surface."""

    doc: DocumentText
    start: int
    end: int

    def __post_init__(self) -> None:
        data = self.doc.utf8
        if not (0 <= self.start < self.end <= len(data)):
            raise ValueError(
                f"span [{self.start}, {self.end}) out of range for a "
                f"{len(data)}-byte document"
            )
        if not _is_char_boundary(data, self.start) or not _is_char_boundary(data, self.end):
            raise ValueError(
                f"span [{self.start}, {self.end}) does not fall on character boundaries"
            )

    @property
    def surface(self) -> str:
        return self.doc.utf8[self.start : self.end].decode("utf-8")

    def char_span(self) -> tuple[int, int]:
        """The span translated to character (code point) offsets."""
        data = self.doc.utf8
        char_start = len(data[: self.start].decode("utf-8"))
        char_end = char_start + len(self.surface)
        return char_start, char_end


@dataclass(frozen=True)
class EntityRecord:
    """One knowledge-base entity: unique id, canonical name, optional
    multilingual aliases and metadata."""

    cui: str
    canonical_name: str
    aliases: tuple[tuple[str, str], ...] = ()  # (text, language-tag)
    semantic_type: Optional[str] = None
    description: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.cui:
            raise ValueError("cui must be non-empty")
        if not self.canonical_name:
            raise ValueError("canonical_name must be present")


class KnowledgeBase:
    """Entities keyed by unique cui. Immutable after construction."""

    def __init__(self, entities: Iterator[EntityRecord] | list[EntityRecord]):
        by_cui: dict[str, EntityRecord] = {}
        for entity in entities:
            if entity.cui in by_cui:
                raise ValueError(f"duplicate cui {entity.cui!r}")
            by_cui[entity.cui] = entity
        if not by_cui:
            raise ValueError("knowledge base must contain at least one entity")
        self._by_cui = by_cui

    def __len__(self) -> int:
        return len(self._by_cui)

    def __contains__(self, cui: str) -> bool:
        return cui in self._by_cui

    def __iter__(self) -> Iterator[EntityRecord]:
        return iter(self._by_cui.values())

    def get(self, cui: str) -> Optional[EntityRecord]:
        return self._by_cui.get(cui)

    @classmethod
    def load_jsonl(cls, path: str) -> "KnowledgeBase":
        """Load from JSONL: one entity per line,
        {"cui": str, "name": str, "aliases": [[text, lang], ...],
         "type": str|null, "description": str|null}."""
        entities = []
        with open(path, "r", encoding="utf-8") as handle:
            for lineno, line in enumerate(handle, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    row = json.loads(line)
                    entities.append(
                        EntityRecord(
                            cui=row["cui"],
                            canonical_name=row["name"],
                            aliases=tuple((a[0], a[1]) for a in row.get("aliases", [])),
                            semantic_type=row.get("type"),
                            description=row.get("description"),
                        )
                    )
                except (json.JSONDecodeError, KeyError, IndexError, TypeError, ValueError) as exc:
                    raise FormatError(f"{path}:{lineno}: bad entity record: {exc}") from exc
        return cls(entities)

    def dump_jsonl(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for entity in self:
                handle.write(
                    json.dumps(
                        {
                            "cui": entity.cui,
                            "name": entity.canonical_name,
                            "aliases": [[t, l] for t, l in entity.aliases],
                            "type": entity.semantic_type,
                            "description": entity.description,
                        },
                        ensure_ascii=False,
                        sort_keys=True,
                    )
                    + "\n"
                )
