"""Loading and structural normalization of plain-text RFC documents.

The output of this module is a :class:`Document`: the normalized text, its
sections (numbered headings plus field-definition headings), sentences with
character offsets, and the bounded n-gram candidate chunks that the linkers
classify.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

from rfcfuzz.errors import PipelineError


class LoadError(PipelineError):
    stage = "ingest"


class EmptyDocumentError(LoadError):
    pass


MONTHS = ("January|February|March|April|May|June|July|August|September"
          "|October|November|December")
PAGE_FOOTER = re.compile(r"^.*\[Page \d+\]\s*$")
PAGE_HEADER = re.compile(rf"^RFC \d+\s.*\b(?:{MONTHS}) \d{{4}}\s*$")

NUMBERED_HEADING = re.compile(r"^(\d+(?:\.\d+)*)\.?\s+([A-Za-z].*?)\s*$")
SIZE_SPEC = r"\d+(?:\s+or\s+\d+)?\s*(?:bits?|bytes?|octets?)\b"
FIELD_HEADING = re.compile(
    rf"^( {{0,3}})([A-Z][\w ()/-]*?)\s*:\s+(?:{SIZE_SPEC}|variable\b).*$")
DEFLIST_HEADING = re.compile(
    r"^( {1,3})([A-Z][\w]*(?: [A-Za-z][\w]*)*) {2,}(?=\d+(?:-bit\b| bits\b))")

ABBREVIATIONS = ("e.g.", "i.e.", "etc.", "Fig.", "Sec.")
TOKEN_RE = re.compile(
    r"(?<![\w.])(?:" + "|".join(re.escape(a) for a in ABBREVIATIONS) + r")"
    r"|\d+(?:\.\d+)+"
    r"|\w+(?:-\w+)*"
    r"|[^\w\s]")
SENTENCE_END = {".", "?", "!"}

STOPWORDS = frozenset("""
a an the and or but if then of to in on at by for with from as is are was
were be been being this that these those it its which who whom whose what
when where not no can may must should will shall has have had do
""".split())

ANAPHORS = (("it",), ("It",), ("this", "field"), ("that", "field"),
            ("This", "field"), ("That", "field"))

MAX_CHUNK_TOKENS = 6


@dataclass(frozen=True)
class RawDocument:
    protocol_id: str
    lines: tuple[str, ...]

    @property
    def text(self) -> str:
        return "\n".join(self.lines)


@dataclass(frozen=True)
class Token:
    text: str
    start: int
    end: int

    @property
    def is_punct(self) -> bool:
        return len(self.text) == 1 and not self.text.isalnum() and self.text != "_"


@dataclass(frozen=True)
class Sentence:
    index: int
    section_index: int
    tokens: tuple[Token, ...]

    @property
    def char_span(self) -> tuple[int, int]:
        return (self.tokens[0].start, self.tokens[-1].end)

    def words(self) -> list[str]:
        return [t.text for t in self.tokens]


@dataclass(frozen=True)
class Section:
    title: str
    title_tokens: tuple[str, ...]
    body_sentences: tuple[Sentence, ...]
    level: int
    char_span: tuple[int, int]
    parent: int | None = None
    kind: str = "root"  # root | numbered | field | deflist


@dataclass(frozen=True)
class Chunk:
    tokens: tuple[str, ...]
    sentence_index: int
    section_index: int
    char_span: tuple[int, int]
    is_anaphor: bool = False
    # token offsets inside the containing sentence, end exclusive
    token_span: tuple[int, int] = (0, 0)

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass
class Document:
    """A normalized, segmented and chunked RFC."""

    raw: RawDocument
    sections: list[Section]
    chunks: list[Chunk]
    sentences: list[Sentence] = field(default_factory=list)

    @property
    def protocol_id(self) -> str:
        return self.raw.protocol_id

    @property
    def text(self) -> str:
        return self.raw.text

    def sentence(self, index: int) -> Sentence:
        return self.sentences[index]

    def context(self, chunk: Chunk, width: int = 5) -> list[str]:
        """Tokens within ``width`` positions of the chunk in its sentence."""
        words = self.sentences[chunk.sentence_index].words()
        lo, hi = chunk.token_span
        return words[max(0, lo - width):lo] + words[hi:hi + width]


def normalize_lines(lines: list[str]) -> list[str]:
    out: list[str] = []
    for line in lines:
        line = line.replace("\f", "").rstrip()
        if PAGE_FOOTER.match(line) or PAGE_HEADER.match(line):
            continue
        if not line and (not out or not out[-1]):
            continue
        out.append(line)
    while out and not out[-1]:
        out.pop()
    return out


def load_rfc(path, protocol_id: str) -> RawDocument:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8", errors="replace")
    except OSError as exc:
        raise LoadError(f"cannot read {path}: {exc}") from exc
    lines = normalize_lines(text.splitlines())
    if not lines:
        raise EmptyDocumentError(f"{path}: no content after stripping page breaks")
    return RawDocument(protocol_id=protocol_id, lines=tuple(lines))


def tokenize(text: str, offset: int = 0) -> list[Token]:
    return [Token(m.group(), m.start() + offset, m.end() + offset)
            for m in TOKEN_RE.finditer(text)]


def _indent(line: str) -> int:
    return len(line) - len(line.lstrip(" "))


def _next_nonblank(lines, i):
    for j in range(i + 1, len(lines)):
        if lines[j].strip():
            return lines[j]
    return None


@dataclass
class _Heading:
    line: int
    title: str
    kind: str
    depth: int  # numeric depth for numbered headings, 0 otherwise
    body_col: int  # column where the body starts on the heading line, -1 = next line


def _find_headings(lines: list[str]) -> list[_Heading]:
    found = []
    for i, line in enumerate(lines):
        if not line.strip():
            continue
        m = NUMBERED_HEADING.match(line)
        if m:
            found.append(_Heading(i, m.group(2).strip(), "numbered",
                                  m.group(1).count(".") + 1, -1))
            continue
        m = FIELD_HEADING.match(line)
        if m:
            nxt = _next_nonblank(lines, i)
            if nxt is not None and _indent(nxt) > _indent(line):
                found.append(_Heading(i, line.strip(), "field", 0, -1))
            continue
        m = DEFLIST_HEADING.match(line)
        if m:
            found.append(_Heading(i, m.group(2), "deflist", 0, m.end()))
    return found


def _split_sentences(tokens: list[Token], text: str) -> list[list[Token]]:
    groups: list[list[Token]] = []
    cur: list[Token] = []
    for tok in tokens:
        if cur and "\n" in text[cur[-1].end:tok.start] and \
                text[cur[-1].end:tok.start].count("\n") >= 2:
            groups.append(cur)
            cur = []
        cur.append(tok)
        if tok.text in SENTENCE_END:
            after = text[tok.end:tok.end + 1]
            if after == "" or after.isspace():
                groups.append(cur)
                cur = []
    if cur:
        groups.append(cur)
    return groups


def segment_sections(doc: RawDocument) -> list[Section]:
    """Split a document into a root preamble section plus one section per heading."""
    lines = list(doc.lines)
    text = doc.text
    starts = []
    pos = 0
    for line in lines:
        starts.append(pos)
        pos += len(line) + 1
    end_of_text = len(text)

    headings = _find_headings(lines)
    # (title, kind, level, span_start, title_end, body_start)
    regions = []
    if not headings or headings[0].line > 0:
        regions.append(("", "root", 0, 0, 0, 0))
    numeric_level = 0
    for h in headings:
        line_start = starts[h.line]
        line = lines[h.line]
        if h.kind == "numbered":
            numeric_level = h.depth
            level = h.depth
        else:
            level = numeric_level + 1
        if h.body_col >= 0:
            title_start = line_start + _indent(line)
            regions.append((h.title, h.kind, level, line_start,
                            title_start + len(h.title), line_start + h.body_col))
        else:
            regions.append((h.title, h.kind, level, line_start,
                            line_start + len(line), line_start + len(line)))

    sections: list[Section] = []
    sentence_index = 0
    for k, (title, kind, level, span_start, _title_end, body_start) in enumerate(regions):
        span_end = regions[k + 1][3] if k + 1 < len(regions) else end_of_text
        if span_end <= span_start:
            span_end = span_start + 1 if span_start < end_of_text else span_start
        body_text = text[body_start:span_end]
        toks = tokenize(body_text, body_start)
        sents = []
        for group in _split_sentences(toks, text):
            sents.append(Sentence(sentence_index, k, tuple(group)))
            sentence_index += 1
        parent = None
        for j in range(k - 1, -1, -1):
            if sections[j].level < level:
                parent = j
                break
        sections.append(Section(
            title=title,
            title_tokens=tuple(t.text for t in tokenize(title)),
            body_sentences=tuple(sents),
            level=level,
            char_span=(span_start, max(span_end, span_start + 1)),
            parent=parent,
            kind=kind,
        ))
    return sections


def _anaphor_at(words: list[str], i: int) -> int:
    for form in ANAPHORS:
        if tuple(words[i:i + len(form)]) == form:
            return len(form)
    return 0


def chunk_document(doc: RawDocument, sections: list[Section]) -> list[Chunk]:
    """Enumerate candidate chunks: bounded n-grams plus anaphor surface forms."""
    by_span: dict[tuple[int, int], Chunk] = {}
    for sec_index, section in enumerate(sections):
        for sent in section.body_sentences:
            toks = sent.tokens
            words = [t.text for t in toks]
            n = len(toks)
            for i in range(n):
                alen = _anaphor_at(words, i)
                if alen:
                    span = (toks[i].start, toks[i + alen - 1].end)
                    by_span[span] = Chunk(tuple(words[i:i + alen]), sent.index,
                                          sec_index, span, True, (i, i + alen))
                if toks[i].is_punct or words[i].lower() in STOPWORDS:
                    continue
                for j in range(i, min(n, i + MAX_CHUNK_TOKENS)):
                    if toks[j].is_punct:
                        break
                    if words[j].lower() in STOPWORDS:
                        continue
                    span = (toks[i].start, toks[j].end)
                    if span not in by_span:
                        by_span[span] = Chunk(tuple(words[i:j + 1]), sent.index,
                                              sec_index, span, False, (i, j + 1))
    return [by_span[s] for s in sorted(by_span)]


def process(raw: RawDocument) -> Document:
    sections = segment_sections(raw)
    chunks = chunk_document(raw, sections)
    sentences = [s for sec in sections for s in sec.body_sentences]
    return Document(raw=raw, sections=sections, chunks=chunks, sentences=sentences)


def load_document(path, protocol_id: str) -> Document:
    return process(load_rfc(path, protocol_id))


def section_of_offset(sections: list[Section], offset: int) -> int:
    for i, sec in enumerate(sections):
        if sec.char_span[0] <= offset < sec.char_span[1]:
            return i
    return len(sections) - 1


def dump_document(doc: Document) -> str:
    """Line-delimited JSON dump of sections, sentences and chunks."""
    out = [json.dumps({"record": "document", "protocol": doc.protocol_id,
                       "lines": len(doc.raw.lines), "sections": len(doc.sections),
                       "sentences": len(doc.sentences), "chunks": len(doc.chunks)})]
    for i, sec in enumerate(doc.sections):
        out.append(json.dumps({"record": "section", "index": i, "title": sec.title,
                               "level": sec.level, "kind": sec.kind,
                               "parent": sec.parent, "span": list(sec.char_span)}))
    for sent in doc.sentences:
        out.append(json.dumps({"record": "sentence", "index": sent.index,
                               "section": sent.section_index,
                               "text": " ".join(sent.words())}))
    for c in doc.chunks:
        out.append(json.dumps({"record": "chunk", "tokens": list(c.tokens),
                               "sentence": c.sentence_index, "section": c.section_index,
                               "span": list(c.char_span), "anaphor": c.is_anaphor}))
    return "\n".join(out) + "\n"
