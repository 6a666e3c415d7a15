"""Document data model: tables, numerical mentions, and mention contexts.

Documents arrive as structured JSON (no PDF/HTML parsing here). Every type is
immutable after construction, so the whole model is safe to share across
threads without locking.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from functools import lru_cache

DOC_TYPES = ("ipo_prospectus", "auditor_report", "annual_report", "synthetic")

CELL_HEADER = "header"
CELL_NUMERIC = "numeric"
CELL_TEXT = "text"
CELL_EMPTY = "empty"

#: Per-side character budget for the text surrounding a table.
SURROUNDING_CHAR_BUDGET = 500


class SchemaError(ValueError):
    """Document JSON is missing a field or has a wrong type."""


class GridError(ValueError):
    """Table grid is empty or ragged."""


class NotNumeric(ValueError):
    """String does not normalize to a numeric value."""


class UnknownMention(KeyError):
    """Mention does not belong to the document."""


_NUMBER_RE = re.compile(r"[+-]?(?:\d+(?:\.\d+)?|\.\d+)")
_CURRENCY_PREFIX_RE = re.compile(r"^[A-Za-z]{0,3}[$€£¥₹]")
_CURRENCY_SUFFIX_RE = re.compile(r"[$€£¥₹]$")


@dataclass(frozen=True)
class NumericValue:
    """Exact decimal value of a mention. Never stored as a binary float."""

    mantissa: Decimal
    is_percent: bool = False

    def canonical(self) -> str:
        """Canonical string: no exponent, no trailing zeros, '%' suffix kept."""
        d = self.mantissa
        if d == 0:
            s = "0"
        else:
            d = d.normalize()
            if d.as_tuple().exponent > 0:
                d = d.quantize(Decimal(1))
            s = format(d, "f")
        return s + "%" if self.is_percent else s

    def __str__(self) -> str:
        return self.canonical()


def normalize_value(raw: str) -> NumericValue:
    """Parse a cell string into a NumericValue.

    Strips thousands separators ("," and spaces), currency symbols, and a
    trailing "%"; an accounting-style "(x)" reads as negative x. Raises
    NotNumeric when a non-numeric residue remains.
    """
    s = raw.strip().replace("\u2212", "-")
    if not s:
        raise NotNumeric(raw)
    is_percent = False
    negative = False
    # Peel decorations outside-in; "(12.5%)" and "(12.5)%" both resolve.
    while True:
        if s.endswith("%"):
            is_percent = True
            s = s[:-1].strip()
            continue
        if len(s) >= 2 and s.startswith("(") and s.endswith(")"):
            negative = not negative
            s = s[1:-1].strip()
            continue
        break
    s = _CURRENCY_PREFIX_RE.sub("", s).strip()
    s = _CURRENCY_SUFFIX_RE.sub("", s).strip()
    s = s.replace(",", "").replace(" ", "").replace("\u00a0", "")
    if not _NUMBER_RE.fullmatch(s):
        raise NotNumeric(raw)
    try:
        value = Decimal(s)
    except InvalidOperation as exc:  # pragma: no cover - regex precludes this
        raise NotNumeric(raw) from exc
    if negative:
        value = -value
    return NumericValue(mantissa=value, is_percent=is_percent)


def cell_kind(raw_text: str, row: int, col: int) -> str:
    try:
        normalize_value(raw_text)
        return CELL_NUMERIC
    except NotNumeric:
        pass
    if not raw_text.strip():
        return CELL_EMPTY
    if row == 0 or col == 0:
        return CELL_HEADER
    return CELL_TEXT


@dataclass(frozen=True)
class Cell:
    raw_text: str
    kind: str


@dataclass(frozen=True)
class Section:
    section_id: str
    title: str


@dataclass(frozen=True)
class Table:
    table_id: str
    section_id: str
    chapter_title: str
    cells: tuple[tuple[Cell, ...], ...]
    surrounding_text_before: str = ""
    surrounding_text_after: str = ""

    def __post_init__(self) -> None:
        if not self.cells or not self.cells[0]:
            raise GridError(f"table {self.table_id}: empty grid")
        width = len(self.cells[0])
        for r, row in enumerate(self.cells):
            if len(row) != width:
                raise GridError(
                    f"table {self.table_id}: row {r} has {len(row)} cells, expected {width}"
                )

    @property
    def n_rows(self) -> int:
        return len(self.cells)

    @property
    def n_cols(self) -> int:
        return len(self.cells[0])

    @classmethod
    def from_grid(
        cls,
        table_id: str,
        section_id: str,
        chapter_title: str,
        grid: list[list[str]],
        text_before: str = "",
        text_after: str = "",
    ) -> "Table":
        cells = tuple(
            tuple(Cell(raw_text=txt, kind=cell_kind(txt, r, c)) for c, txt in enumerate(row))
            for r, row in enumerate(grid)
        )
        return cls(
            table_id=table_id,
            section_id=section_id,
            chapter_title=chapter_title,
            cells=cells,
            surrounding_text_before=text_before,
            surrounding_text_after=text_after,
        )


@dataclass(frozen=True)
class NumericalMention:
    """A numeric cell occurrence, identified by (table, row, col)."""

    mention_id: int
    table_id: str
    row: int
    col: int
    raw_text: str
    value: NumericValue


@dataclass(frozen=True)
class MentionContext:
    mention_id: int
    text: str
    char_budget_surrounding: int = SURROUNDING_CHAR_BUDGET


@dataclass(frozen=True)
class GoldAnnotation:
    """Equivalence groups of mention ids; gold pairs are all in-group pairs."""

    doc_id: str
    groups: tuple[frozenset[int], ...]

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for g in self.groups:
            if len(g) < 2:
                raise SchemaError(f"gold group smaller than 2 in {self.doc_id}")
            if seen & g:
                raise SchemaError(f"overlapping gold groups in {self.doc_id}")
            seen |= g

    def pairs(self) -> set[tuple[int, int]]:
        out: set[tuple[int, int]] = set()
        for g in self.groups:
            members = sorted(g)
            for i, a in enumerate(members):
                for b in members[i + 1 :]:
                    out.add((a, b))
        return out

    def grouped_mentions(self) -> set[int]:
        out: set[int] = set()
        for g in self.groups:
            out |= g
        return out


@dataclass(frozen=True)
class Document:
    doc_id: str
    doc_type: str
    sections: tuple[Section, ...]
    tables: tuple[Table, ...]
    mentions: tuple[NumericalMention, ...] = field(init=False)

    def __post_init__(self) -> None:
        if self.doc_type not in DOC_TYPES:
            raise SchemaError(f"unknown doc_type {self.doc_type!r}")
        section_ids = [s.section_id for s in self.sections]
        if len(set(section_ids)) != len(section_ids):
            raise SchemaError(f"duplicate section ids in {self.doc_id}")
        known_sections = set(section_ids)
        table_ids = [t.table_id for t in self.tables]
        if len(set(table_ids)) != len(table_ids):
            raise SchemaError(f"duplicate table ids in {self.doc_id}")
        for t in self.tables:
            if t.section_id not in known_sections:
                raise SchemaError(
                    f"table {t.table_id} references unknown section {t.section_id}"
                )
        mentions: list[NumericalMention] = []
        for t in self.tables:
            mentions.extend(extract_mentions(t, id_start=len(mentions)))
        object.__setattr__(self, "mentions", tuple(mentions))

    def table(self, table_id: str) -> Table:
        for t in self.tables:
            if t.table_id == table_id:
                return t
        raise KeyError(table_id)

    def mention(self, mention_id: int) -> NumericalMention:
        # Ids are assigned densely in reading order, so this is O(1).
        if 0 <= mention_id < len(self.mentions):
            m = self.mentions[mention_id]
            if m.mention_id == mention_id:
                return m
        raise UnknownMention(mention_id)

    def mentions_of_table(self, table_id: str) -> tuple[NumericalMention, ...]:
        return tuple(m for m in self.mentions if m.table_id == table_id)


def extract_mentions(t: Table, id_start: int = 0) -> list[NumericalMention]:
    """One mention per numeric cell, scanned row-major."""
    out: list[NumericalMention] = []
    for r, row in enumerate(t.cells):
        for c, cell in enumerate(row):
            if cell.kind == CELL_NUMERIC:
                out.append(
                    NumericalMention(
                        mention_id=id_start + len(out),
                        table_id=t.table_id,
                        row=r,
                        col=c,
                        raw_text=cell.raw_text,
                        value=normalize_value(cell.raw_text),
                    )
                )
    return out


def _escape_cell(text: str) -> str:
    return text.replace("|", "\\|").replace("\n", "\\n")


@lru_cache(maxsize=4096)
def linearize_table(t: Table) -> str:
    """Render the grid as a pipe-delimited markdown table.

    One line per row, a `---` separator line after row 0, `|` and newlines
    escaped inside cells, and empty cells rendered as a single space.
    """
    lines = []
    for r, row in enumerate(t.cells):
        parts = []
        for cell in row:
            esc = _escape_cell(cell.raw_text)
            parts.append(f" {esc} " if esc else " ")
        lines.append("|" + "|".join(parts) + "|")
        if r == 0:
            lines.append("|" + "|".join([" --- "] * t.n_cols) + "|")
    return "\n".join(lines)


def position_statement(m: NumericalMention) -> str:
    return f"value at row {m.row}, column {m.col}"


def shared_context_text(d: Document, t: Table, char_budget: int = SURROUNDING_CHAR_BUDGET) -> str:
    """Table context shared by all of the table's mentions.

    Chapter title, then the trailing `char_budget` characters of the text
    before the table, the linearized table, and the leading `char_budget`
    characters of the text after it.
    """
    before = t.surrounding_text_before[-char_budget:] if char_budget else ""
    after = t.surrounding_text_after[:char_budget] if char_budget else ""
    parts = [t.chapter_title]
    if before:
        parts.append(before)
    parts.append(linearize_table(t))
    if after:
        parts.append(after)
    return "\n".join(parts)


def build_context(
    d: Document, m: NumericalMention, char_budget: int = SURROUNDING_CHAR_BUDGET
) -> MentionContext:
    """Full per-mention context: shared table context plus the position suffix."""
    if not (0 <= m.mention_id < len(d.mentions)) or d.mentions[m.mention_id] != m:
        raise UnknownMention(m.mention_id)
    t = d.table(m.table_id)
    text = shared_context_text(d, t, char_budget) + "\n" + position_statement(m)
    return MentionContext(
        mention_id=m.mention_id, text=text, char_budget_surrounding=char_budget
    )


# --- JSON (de)serialization -------------------------------------------------
#
# Document file: UTF-8 JSON with top-level keys doc_id, doc_type, sections,
# tables; each table carries chapter_title, text_before, text_after and a
# dense row-major cells grid of strings.
# Gold file: {"doc_id": ..., "groups": [[mention_id, ...], ...]}.


def _expect(obj: dict, key: str, typ, where: str):
    if not isinstance(obj, dict):
        raise SchemaError(f"{where}: expected object")
    if key not in obj:
        raise SchemaError(f"{where}: missing field {key!r}")
    val = obj[key]
    if not isinstance(val, typ):
        raise SchemaError(f"{where}.{key}: expected {typ.__name__}")
    return val


def parse_document(data: bytes | str | dict) -> Document:
    """Validate and build a Document from its JSON file contents."""
    if isinstance(data, (bytes, str)):
        try:
            obj = json.loads(data)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc}") from exc
    else:
        obj = data
    doc_id = _expect(obj, "doc_id", str, "document")
    doc_type = _expect(obj, "doc_type", str, "document")
    if doc_type not in DOC_TYPES:
        raise SchemaError(f"document.doc_type: unknown value {doc_type!r}")
    sections = []
    for i, s in enumerate(_expect(obj, "sections", list, "document")):
        sections.append(
            Section(
                section_id=_expect(s, "section_id", str, f"sections[{i}]"),
                title=_expect(s, "title", str, f"sections[{i}]"),
            )
        )
    tables = []
    for i, t in enumerate(_expect(obj, "tables", list, "document")):
        where = f"tables[{i}]"
        grid = _expect(t, "cells", list, where)
        if not grid:
            raise GridError(f"{where}: empty grid")
        for r, row in enumerate(grid):
            if not isinstance(row, list) or not all(isinstance(x, str) for x in row):
                raise SchemaError(f"{where}.cells[{r}]: expected list of strings")
        widths = {len(row) for row in grid}
        if len(widths) != 1 or 0 in widths:
            raise GridError(f"{where}: ragged or empty rows (widths {sorted(widths)})")
        tables.append(
            Table.from_grid(
                table_id=_expect(t, "table_id", str, where),
                section_id=_expect(t, "section_id", str, where),
                chapter_title=_expect(t, "chapter_title", str, where),
                grid=grid,
                text_before=_expect(t, "text_before", str, where),
                text_after=_expect(t, "text_after", str, where),
            )
        )
    return Document(
        doc_id=doc_id, doc_type=doc_type, sections=tuple(sections), tables=tuple(tables)
    )


def document_to_dict(d: Document) -> dict:
    return {
        "doc_id": d.doc_id,
        "doc_type": d.doc_type,
        "sections": [{"section_id": s.section_id, "title": s.title} for s in d.sections],
        "tables": [
            {
                "table_id": t.table_id,
                "section_id": t.section_id,
                "chapter_title": t.chapter_title,
                "text_before": t.surrounding_text_before,
                "text_after": t.surrounding_text_after,
                "cells": [[c.raw_text for c in row] for row in t.cells],
            }
            for t in d.tables
        ],
    }


def serialize_document(d: Document) -> bytes:
    """Canonical byte form: sorted keys, compact separators, UTF-8."""
    return canonical_json(document_to_dict(d))


def canonical_json(obj) -> bytes:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True, separators=(",", ":")).encode(
        "utf-8"
    )


def parse_gold(data: bytes | str | dict) -> GoldAnnotation:
    obj = json.loads(data) if isinstance(data, (bytes, str)) else data
    doc_id = _expect(obj, "doc_id", str, "gold")
    groups = []
    for i, g in enumerate(_expect(obj, "groups", list, "gold")):
        if not isinstance(g, list) or not all(isinstance(x, int) for x in g):
            raise SchemaError(f"gold.groups[{i}]: expected list of ints")
        groups.append(frozenset(g))
    return GoldAnnotation(doc_id=doc_id, groups=tuple(groups))


def serialize_gold(g: GoldAnnotation) -> bytes:
    return canonical_json(
        {"doc_id": g.doc_id, "groups": [sorted(grp) for grp in g.groups]}
    )
