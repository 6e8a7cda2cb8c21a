"""Training-corpus construction from sitelink dumps.

Pipeline: parse a sitelink dump to (qid, alias, site) triples, join with a
qid -> cui mapping into four-tuples, drop tuples whose alias exactly matches
an evaluation mention, then group by qid into cross-lingual positives.

Parsing is streaming and constant-memory. Grouping has two paths: in-memory
for desk-scale inputs and an external sort-merge for files larger than
memory; both emit groups in ascending-qid order so the outputs are
byte-identical.
"""

from __future__ import annotations

import heapq
import json
import os
import re
import tempfile
from collections import Counter
from dataclasses import dataclass
from typing import IO, Iterable, Iterator, NamedTuple, Optional

from .errors import FormatError, StageError
from .kb import normalize_alias, parse_site_language


class SiteTriple(NamedTuple):
    qid: int
    alias: str
    site: str


class AliasTuple(NamedTuple):
    qid: int
    alias: str
    language: str
    cui: str


# Advisory only: UMLS-style identifiers look like C followed by digits, but
# nonconforming cuis are reported, never rejected.
CUI_PATTERN = re.compile(r"^C\d+$")


@dataclass(frozen=True)
class PositiveGroup:
    """All distinct alias strings sharing one qid."""

    qid: int
    members: tuple[AliasTuple, ...]

    def __post_init__(self) -> None:
        if not self.members:
            raise ValueError("a positive group needs at least one member")
        if any(m.qid != self.qid for m in self.members):
            raise ValueError("all members must share the group qid")

    @property
    def single_alias(self) -> bool:
        """True when the group has one distinct alias and therefore
        contributes no positive pair."""
        return len(self.members) == 1


@dataclass
class IngestStats:
    rows: int = 0
    malformed: int = 0
    triples: int = 0


# ---------------------------------------------------------------------------
# Sitelink dump parsing
# ---------------------------------------------------------------------------

_SQL_MARKERS = (b"insert into", b"--", b"/*", b"create table", b"drop table",
                b"lock tables", b"unlock tables", b"use ", b"set ")


def _detect_format(first_line: bytes) -> str:
    stripped = first_line.strip()
    lowered = stripped.lower()
    if any(lowered.startswith(marker) for marker in _SQL_MARKERS):
        return "sql"
    if stripped.count(b"\t") >= 2:
        return "tsv"
    raise FormatError(
        "cannot auto-detect dump format from first line "
        f"{stripped[:80]!r}; pass format explicitly"
    )


def _unescape_sql(value: str) -> str:
    out = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch == "\\" and i + 1 < len(value):
            nxt = value[i + 1]
            out.append({"n": "\n", "t": "\t", "r": "\r", "0": "\0"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _iter_sql_value_tuples(statement: str) -> Iterator[list]:
    """Yield the value tuples of one INSERT statement as lists of parsed
    fields (int for bare numbers, str for quoted strings, None for NULL)."""
    idx = statement.upper().find("VALUES")
    if idx < 0:
        return
    payload = statement[idx + len("VALUES"):]
    i, n = 0, len(payload)
    while i < n:
        while i < n and payload[i] not in "(":
            if payload[i] == ";":
                return
            i += 1
        if i >= n:
            return
        i += 1  # past '('
        fields: list = []
        buf: list[str] = []
        in_string = False
        while i < n:
            ch = payload[i]
            if in_string:
                if ch == "\\" and i + 1 < n:
                    buf.append(ch)
                    buf.append(payload[i + 1])
                    i += 2
                    continue
                if ch == "'":
                    if i + 1 < n and payload[i + 1] == "'":  # doubled quote
                        buf.append("\\'")
                        i += 2
                        continue
                    in_string = False
                    fields.append(_unescape_sql("".join(buf)))
                    buf = []
                    i += 1
                    continue
                buf.append(ch)
                i += 1
                continue
            if ch == "'":
                in_string = True
                i += 1
                continue
            if ch in ",)":
                raw = "".join(buf).strip()
                buf = []
                if raw:
                    if raw.upper() == "NULL":
                        fields.append(None)
                    else:
                        try:
                            fields.append(int(raw))
                        except ValueError:
                            fields.append(raw)
                if ch == ")":
                    yield fields
                    i += 1
                    break
                i += 1
                continue
            buf.append(ch)
            i += 1


def _triple_from_sql_fields(fields: list) -> Optional[SiteTriple]:
    # Native sitelink rows are (row_id, item_id, site_key, page_title).
    if len(fields) != 4:
        return None
    _, item_id, site, title = fields
    if not isinstance(item_id, int) or item_id <= 0:
        return None
    if not isinstance(site, str) or not isinstance(title, str):
        return None
    alias = normalize_alias(title)
    if not alias or not site:
        return None
    return SiteTriple(item_id, alias, site)


def _triple_from_tsv_line(line: str) -> Optional[SiteTriple]:
    parts = line.split("\t")
    if len(parts) != 3:
        return None
    qid_raw, alias_raw, site = parts
    try:
        qid = int(qid_raw)
    except ValueError:
        return None
    if qid <= 0 or not site:
        return None
    alias = normalize_alias(alias_raw)
    if not alias:
        return None
    return SiteTriple(qid, alias, site)


def parse_sitelink_dump(
    stream: IO[bytes],
    dump_format: str = "auto",
    stats: Optional[IngestStats] = None,
) -> Iterator[SiteTriple]:
    """Stream (qid, alias, site) triples out of a sitelink dump.

    Accepts the native SQL-INSERT dump or the simplified three-column TSV
    mirror ("qid\\talias\\tsite_key"); with dump_format="auto" the format is
    detected from the first non-empty line. Aliases are normalized. Malformed
    rows are counted and skipped; if more than half of all rows are malformed
    the stream is rejected as a format mismatch.
    """
    if stats is None:
        stats = IngestStats()
    fmt = dump_format
    pending_sql: list[str] = []
    try:
        for raw_line in stream:
            if not raw_line.strip():
                continue
            if fmt == "auto":
                fmt = _detect_format(raw_line)
            try:
                line = raw_line.decode("utf-8").rstrip("\r\n")
            except UnicodeDecodeError:
                stats.rows += 1
                stats.malformed += 1
                continue
            if fmt == "tsv":
                stats.rows += 1
                triple = _triple_from_tsv_line(line)
                if triple is None:
                    stats.malformed += 1
                else:
                    stats.triples += 1
                    yield triple
                continue
            # SQL path: only INSERT statements carry rows. Statements may
            # span lines; buffer until the terminating semicolon.
            if pending_sql:
                pending_sql.append(line)
                if not line.rstrip().endswith(";"):
                    continue
                statement = "\n".join(pending_sql)
                pending_sql = []
            elif line.lstrip().upper().startswith("INSERT INTO"):
                if not line.rstrip().endswith(";"):
                    pending_sql = [line]
                    continue
                statement = line
            else:
                continue
            for fields in _iter_sql_value_tuples(statement):
                stats.rows += 1
                triple = _triple_from_sql_fields(fields)
                if triple is None:
                    stats.malformed += 1
                else:
                    stats.triples += 1
                    yield triple
    except OSError as exc:
        raise StageError(
            f"dump stream failed after {stats.rows} rows: {exc}"
        ) from exc
    if stats.rows and stats.malformed * 2 > stats.rows:
        raise FormatError(
            f"format mismatch: {stats.malformed} of {stats.rows} rows malformed"
        )


# ---------------------------------------------------------------------------
# QID -> CUI mapping
# ---------------------------------------------------------------------------

def _qid_from_value(value: str) -> Optional[int]:
    """Extract a qid from a bare integer, a Q-prefixed id, or an entity URI
    whose last segment is Q-prefixed."""
    tail = value.rstrip("/").rsplit("/", 1)[-1].strip()
    if tail.startswith(("Q", "q")):
        tail = tail[1:]
    if tail.isdigit():
        qid = int(tail)
        return qid if qid > 0 else None
    return None


def load_cui_mapping(path: str) -> tuple[dict[int, set[str]], int]:
    """Load a qid -> {cui} multimap from SPARQL-results JSON (variables
    "item" and "cui") or two-column TSV ("qid\\tcui"). Returns the mapping
    and the count of rows skipped for missing/invalid fields."""
    with open(path, "rb") as handle:
        head = handle.read(512).lstrip()
    mapping: dict[int, set[str]] = {}
    skipped = 0
    if head.startswith(b"{"):
        with open(path, "r", encoding="utf-8") as handle:
            try:
                data = json.load(handle)
                bindings = data["results"]["bindings"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise FormatError(f"{path}: not SPARQL-results JSON: {exc}") from exc
        for row in bindings:
            try:
                qid = _qid_from_value(row["item"]["value"])
                cui = row["cui"]["value"].strip()
            except (KeyError, TypeError, AttributeError):
                skipped += 1
                continue
            if qid is None or not cui:
                skipped += 1
                continue
            mapping.setdefault(qid, set()).add(cui)
        return mapping, skipped
    try:
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                line = line.rstrip("\r\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    skipped += 1
                    continue
                qid = _qid_from_value(parts[0].strip())
                cui = parts[1].strip()
                if qid is None or not cui:
                    skipped += 1
                    continue
                mapping.setdefault(qid, set()).add(cui)
    except UnicodeDecodeError as exc:
        raise FormatError(f"{path}: neither SPARQL JSON nor TSV: {exc}") from exc
    return mapping, skipped


def join_aliases_with_cuis(
    triples: Iterable[SiteTriple], mapping: dict[int, set[str]]
) -> Iterator[AliasTuple]:
    """Attach cuis to triples, one output tuple per (triple, cui) pair.
    Triples with no mapped qid are dropped; multi-cui qids fan out in sorted
    cui order so the output is deterministic."""
    for triple in triples:
        cuis = mapping.get(triple.qid)
        if not cuis:
            continue
        language = parse_site_language(triple.site).tag
        for cui in sorted(cuis):
            yield AliasTuple(triple.qid, triple.alias, language, cui)


# ---------------------------------------------------------------------------
# Overlap filtering and grouping
# ---------------------------------------------------------------------------

def normalized_mention_set(mentions: Iterable[str]) -> set[str]:
    return {normalize_alias(m) for m in mentions if normalize_alias(m)}


def filter_eval_overlap(
    tuples: Iterable[AliasTuple], eval_mentions: Iterable[str]
) -> tuple[list[AliasTuple], int]:
    """Drop every tuple whose normalized alias exactly matches a normalized
    evaluation mention. Order preserved. Returns (kept, removed_count).
    Safe to apply chunk-wise for inputs larger than memory."""
    mention_set = (
        eval_mentions
        if isinstance(eval_mentions, set)
        else normalized_mention_set(eval_mentions)
    )
    kept: list[AliasTuple] = []
    removed = 0
    for t in tuples:
        if normalize_alias(t.alias) in mention_set:
            removed += 1
        else:
            kept.append(t)
    return kept, removed


@dataclass
class GroupStats:
    input_tuples: int = 0
    groups: int = 0
    single_alias_groups: int = 0
    duplicates_collapsed: int = 0


def group_positives(
    tuples: Iterable[AliasTuple],
) -> tuple[list[PositiveGroup], GroupStats]:
    """Group tuples by qid into positive groups. Within a group, duplicate
    alias strings collapse to their first occurrence. Groups are emitted in
    ascending-qid order; single-alias groups are retained (flagged via
    PositiveGroup.single_alias)."""
    stats = GroupStats()
    members: dict[int, list[AliasTuple]] = {}
    seen: dict[int, set[str]] = {}
    for t in tuples:
        stats.input_tuples += 1
        bucket = seen.setdefault(t.qid, set())
        if t.alias in bucket:
            stats.duplicates_collapsed += 1
            continue
        bucket.add(t.alias)
        members.setdefault(t.qid, []).append(t)
    groups = [PositiveGroup(qid, tuple(members[qid])) for qid in sorted(members)]
    stats.groups = len(groups)
    stats.single_alias_groups = sum(1 for g in groups if g.single_alias)
    return groups, stats


def group_positives_external(
    tuples_path: str,
    out_path: str,
    chunk_rows: int = 500_000,
    tmp_dir: Optional[str] = None,
) -> GroupStats:
    """Group a tuples TSV larger than memory: sort fixed-size runs by
    (qid, input order), spill them to disk, merge-stream, and write groups
    JSONL. Output is byte-identical to the in-memory path."""
    stats = GroupStats()
    run_paths: list[str] = []
    scratch = tempfile.mkdtemp(prefix="belx-sort-", dir=tmp_dir)

    def write_run(rows: list[tuple[int, int, AliasTuple]]) -> None:
        rows.sort(key=lambda r: (r[0], r[1]))
        path = os.path.join(scratch, f"run-{len(run_paths):06d}.tsv")
        with open(path, "w", encoding="utf-8", newline="\n") as handle:
            for qid, seq, t in rows:
                handle.write(f"{qid}\t{seq}\t{t.alias}\t{t.language}\t{t.cui}\n")
        run_paths.append(path)

    buffer: list[tuple[int, int, AliasTuple]] = []
    for seq, t in enumerate(read_alias_tuples(tuples_path)):
        stats.input_tuples += 1
        buffer.append((t.qid, seq, t))
        if len(buffer) >= chunk_rows:
            write_run(buffer)
            buffer = []
    if buffer:
        write_run(buffer)

    def read_run(path: str) -> Iterator[tuple[int, int, AliasTuple]]:
        with open(path, "r", encoding="utf-8") as handle:
            for line in handle:
                qid_s, seq_s, alias, lang, cui = line.rstrip("\n").split("\t")
                yield int(qid_s), int(seq_s), AliasTuple(int(qid_s), alias, lang, cui)

    try:
        with open(out_path, "w", encoding="utf-8", newline="\n") as out:
            current_qid: Optional[int] = None
            current: list[AliasTuple] = []
            current_seen: set[str] = set()

            def flush() -> None:
                if current_qid is None:
                    return
                group = PositiveGroup(current_qid, tuple(current))
                out.write(group_to_json_line(group) + "\n")
                stats.groups += 1
                if group.single_alias:
                    stats.single_alias_groups += 1

            for qid, _, t in heapq.merge(
                *(read_run(p) for p in run_paths), key=lambda r: (r[0], r[1])
            ):
                if qid != current_qid:
                    flush()
                    current_qid, current, current_seen = qid, [], set()
                if t.alias in current_seen:
                    stats.duplicates_collapsed += 1
                    continue
                current_seen.add(t.alias)
                current.append(t)
            flush()
    finally:
        for path in run_paths:
            os.unlink(path)
        os.rmdir(scratch)
    return stats


# ---------------------------------------------------------------------------
# Corpus statistics
# ---------------------------------------------------------------------------

@dataclass
class CorpusStats:
    total: int
    per_language: dict[str, int]
    per_language_pct: dict[str, float]
    distinct_qids: int
    distinct_cuis: int
    multi_cui_qids: int
    nonconforming_cuis: int

    def to_dict(self) -> dict:
        return {
            "total_aliases": self.total,
            "languages": len(self.per_language),
            "per_language": dict(sorted(self.per_language.items())),
            "per_language_pct": dict(sorted(self.per_language_pct.items())),
            "distinct_qids": self.distinct_qids,
            "distinct_cuis": self.distinct_cuis,
            "multi_cui_qids": self.multi_cui_qids,
            "nonconforming_cuis": self.nonconforming_cuis,
        }


def corpus_stats(tuples: Iterable[AliasTuple]) -> CorpusStats:
    """Totals, per-language counts/percentages (one decimal), distinct qids
    and cuis, plus qids mapped to more than one cui (surfaced because
    qid-keyed groups and cui-keyed supervision diverge for them)."""
    counts: Counter[str] = Counter()
    qids: set[int] = set()
    cuis: set[str] = set()
    qid_cuis: dict[int, set[str]] = {}
    nonconforming = 0
    total = 0
    for t in tuples:
        total += 1
        counts[t.language] += 1
        qids.add(t.qid)
        cuis.add(t.cui)
        qid_cuis.setdefault(t.qid, set()).add(t.cui)
        if not CUI_PATTERN.match(t.cui):
            nonconforming += 1
    pct = {
        lang: round(100.0 * n / total, 1) if total else 0.0
        for lang, n in counts.items()
    }
    return CorpusStats(
        total=total,
        per_language=dict(counts),
        per_language_pct=pct,
        distinct_qids=len(qids),
        distinct_cuis=len(cuis),
        multi_cui_qids=sum(1 for s in qid_cuis.values() if len(s) > 1),
        nonconforming_cuis=nonconforming,
    )


# ---------------------------------------------------------------------------
# Interchange files
# ---------------------------------------------------------------------------

def write_alias_tuples(tuples: Iterable[AliasTuple], path: str) -> int:
    """TSV "qid\\talias\\tlanguage\\tcui". Normalized aliases cannot contain
    tabs or newlines, so the format is unambiguous."""
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for t in tuples:
            handle.write(f"{t.qid}\t{t.alias}\t{t.language}\t{t.cui}\n")
            count += 1
    return count


def read_alias_tuples(path: str) -> Iterator[AliasTuple]:
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise FormatError(f"{path}:{lineno}: expected 4 columns")
            yield AliasTuple(int(parts[0]), parts[1], parts[2], parts[3])


def group_to_json_line(group: PositiveGroup) -> str:
    return json.dumps(
        {
            "qid": group.qid,
            "aliases": [
                {"text": m.alias, "lang": m.language, "cui": m.cui}
                for m in group.members
            ],
        },
        ensure_ascii=False,
        sort_keys=True,
    )


def write_groups(groups: Iterable[PositiveGroup], path: str) -> int:
    count = 0
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for group in groups:
            handle.write(group_to_json_line(group) + "\n")
            count += 1
    return count


def read_groups(path: str) -> list[PositiveGroup]:
    groups = []
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = json.loads(line)
                members = tuple(
                    AliasTuple(row["qid"], a["text"], a["lang"], a["cui"])
                    for a in row["aliases"]
                )
                groups.append(PositiveGroup(row["qid"], members))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise FormatError(f"{path}:{lineno}: bad group record: {exc}") from exc
    return groups


def read_mention_file(path: str) -> list[str]:
    """Evaluation mentions, one raw surface per line."""
    with open(path, "r", encoding="utf-8") as handle:
        return [line.rstrip("\n") for line in handle if line.strip()]
