"""Rule-based recovery of header field symbols from RFC formatting."""
from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path

from rfcfuzz.corpus import RawDocument, Section
from rfcfuzz.errors import UndefinedMetricError

UNIT_BITS = {"bit": 1, "bits": 1, "byte": 8, "bytes": 8, "octet": 8, "octets": 8}

_FIELD_TITLE = re.compile(
    r"^(?P<name>[A-Z][\w ()/-]*?)\s*:\s+"
    r"(?:(?P<size>\d+)(?:\s+or\s+\d+)?\s*(?P<unit>bits?|bytes?|octets?)\b(?P<rest>.*)"
    r"|variable\b.*)$")
_PAREN_SIZE = re.compile(
    r"^(?P<name>.+?)\s*\((?:(?P<n>\d+)\s*(?P<unit>bits?|bytes?|octets?)"
    r"|bits?\s+(?P<lo>\d+)(?:\s*-\s*(?P<hi>\d+))?)\)\s*$")
_FIELD_WORD = re.compile(r"^(?P<name>.+?)\s+[Ff]ield$")
_DEFLIST_SIZE = re.compile(r"^\s*(?P<size>\d+)(?:-bit\b| bits\b)")
_PAREN_ALIAS = re.compile(r"\s*\(([^)]*)\)")
_SPLIT_EACH = re.compile(r"^(?P<a>\w+) and (?P<b>\w+) (?P<noun>\w+?)s$")
# Section titles that introduce a fixed header layout.
_HEADER_SECTION = re.compile(r"header|format|field", re.I)


@dataclass(frozen=True)
class FieldType:
    name: str
    size_bits: int | None = None
    order: int | None = None
    aliases: tuple[str, ...] = ()
    source_section: int | None = None
    evidence_sections: tuple[int, ...] = ()

    def __post_init__(self):
        if not self.name:
            raise ValueError("field name must be non-empty")
        if self.size_bits is not None and self.size_bits < 1:
            raise ValueError(f"{self.name}: size_bits must be >= 1")

    @property
    def key(self) -> str:
        return self.name.casefold()

    @property
    def tokens(self) -> tuple[str, ...]:
        return tuple(self.name.split())


def canonical_name(raw: str) -> str:
    name = " ".join(raw.split())
    return name.rstrip(".,;:")


def acronym(name: str) -> str | None:
    words = [w for w in re.split(r"[\s-]+", name) if w]
    if len(words) < 2:
        return None
    return "".join(w[0].upper() for w in words)


def _make(raw_name: str, size, section: int) -> FieldType:
    aliases = [m.group(1).strip() for m in _PAREN_ALIAS.finditer(raw_name)]
    name = canonical_name(_PAREN_ALIAS.sub("", raw_name))
    surface = " ".join(raw_name.split())
    if surface != name:
        aliases.insert(0, surface)
    acr = acronym(name)
    if acr and acr not in aliases:
        aliases.append(acr)
    return FieldType(name=name, size_bits=size, aliases=tuple(a for a in aliases if a),
                     source_section=section, evidence_sections=(section,))


def _in_header_section(sections: list[Section], index: int) -> bool:
    parent = sections[index].parent
    while parent is not None:
        if _HEADER_SECTION.search(sections[parent].title):
            return True
        parent = sections[parent].parent
    return False


def _candidates(doc: RawDocument, sections: list[Section], index: int) -> list[FieldType]:
    sec = sections[index]
    title = sec.title
    if sec.kind == "field":
        m = _FIELD_TITLE.match(title)
        if not m:
            return []
        size = None
        if m.group("size"):
            size = int(m.group("size")) * UNIT_BITS[m.group("unit").lower()]
        raw_name = m.group("name")
        split = _SPLIT_EACH.match(raw_name)
        if split and m.group("rest").strip().startswith("each"):
            noun = split.group("noun")
            return [_make(f"{split.group('a')} {noun}", size, index),
                    _make(f"{split.group('b')} {noun}", size, index)]
        return [_make(raw_name, size, index)]
    if sec.kind == "numbered":
        m = _PAREN_SIZE.match(title)
        if m:
            if m.group("n"):
                size = int(m.group("n")) * UNIT_BITS[m.group("unit").lower()]
            else:
                lo = int(m.group("lo"))
                hi = int(m.group("hi")) if m.group("hi") else lo
                size = hi - lo + 1
            return [_make(m.group("name"), size, index)]
        m = _FIELD_WORD.match(title)
        if m:
            return [_make(m.group("name"), None, index)]
        return []
    if sec.kind == "deflist" and _in_header_section(sections, index):
        if not sec.body_sentences:
            return []
        start = sec.body_sentences[0].tokens[0].start
        m = _DEFLIST_SIZE.match(doc.text[start:start + 16])
        if not m:
            return []
        return [_make(title, int(m.group("size")), index)]
    return []


def extract_entity_types(doc: RawDocument, sections: list[Section]) -> list[FieldType]:
    """One FieldType per field-definition heading, in document order."""
    found: dict[str, FieldType] = {}
    for index in range(len(sections)):
        for ft in _candidates(doc, sections, index):
            prior = found.get(ft.key)
            if prior is None:
                found[ft.key] = ft
            else:
                found[ft.key] = replace(
                    prior, evidence_sections=prior.evidence_sections + (index,))
    return [replace(ft, order=i) for i, ft in enumerate(found.values())]


def type_extraction_accuracy(predicted: list[FieldType], gold: list[FieldType]) -> float:
    if not gold:
        raise UndefinedMetricError("type accuracy undefined for empty gold list")
    names = {ft.key for ft in predicted}
    return sum(ft.key in names for ft in gold) / len(gold)


def format_types(types: list[FieldType]) -> str:
    """Tab-separated ``name, size_bits, order`` records."""
    rows = []
    for ft in types:
        size = "" if ft.size_bits is None else str(ft.size_bits)
        order = "" if ft.order is None else str(ft.order)
        rows.append(f"{ft.name}\t{size}\t{order}")
    return "\n".join(rows) + "\n"


def parse_types(text: str) -> list[FieldType]:
    types = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 3:
            raise ValueError(f"line {lineno}: expected name<TAB>size_bits<TAB>order")
        name, size, order = parts
        ft = FieldType(name=name.strip(),
                       size_bits=int(size) if size.strip() else None,
                       order=int(order) if order.strip() else None)
        acr = acronym(ft.name)
        types.append(replace(ft, aliases=(acr,) if acr else ()))
    return types


def load_types(path) -> list[FieldType]:
    return parse_types(Path(path).read_text())
