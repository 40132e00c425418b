"""Protocol grammar model, tuple post-processing and the grammar file format.

A grammar file is canonical JSON::

    {"protocol": "tcp", "header_bits": 160,
     "fields": [{"name": ..., "size_bits": ..., "offset_bits": ..., "order": ...}],
     "properties": [{"kind": ..., "field": ..., "provenance": ..., "score": ...}],
     "packet_types": {"SYN": 2, ...}}          # optional

Fields without a size are kept as named symbols with null size and offset.
"""
from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field

from rfcfuzz.errors import PipelineError
from rfcfuzz.type_extraction import FieldType

FORMAT_VERSION = 1


class GrammarError(PipelineError):
    stage = "grammar"


class GrammarSyntaxError(GrammarError):
    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class LayoutError(GrammarError):
    def __init__(self, message, fields=()):
        self.fields = tuple(fields)
        super().__init__(f"{message}: {', '.join(self.fields)}" if self.fields else message)


class SingletonViolation(GrammarError):
    pass


class ExclusionViolation(GrammarError):
    pass


class PropertyKind(enum.Enum):
    Checksum = "Checksum"
    Port = "Port"
    Multiple = "Multiple"
    PacketType = "PacketType"
    HeaderLength = "HeaderLength"
    SequenceNumber = "SequenceNumber"
    AcknowledgementNumber = "AcknowledgementNumber"
    PayloadLength = "PayloadLength"
    WindowFlowControl = "WindowFlowControl"

    @property
    def singleton(self) -> bool:
        return self in SINGLETON_KINDS

    @property
    def exclusions(self) -> frozenset:
        return EXCLUSIONS.get(self, frozenset())

    @property
    def priority(self) -> int:
        return KIND_PRIORITY.index(self)


K = PropertyKind
SINGLETON_KINDS = frozenset({K.PacketType, K.HeaderLength, K.Checksum})
KIND_PRIORITY = (K.PacketType, K.HeaderLength, K.Checksum, K.Port, K.SequenceNumber,
                 K.AcknowledgementNumber, K.PayloadLength, K.WindowFlowControl, K.Multiple)

_EXCLUSION_TABLE = {
    K.PacketType: {K.SequenceNumber, K.AcknowledgementNumber, K.Checksum, K.Port},
    K.Checksum: {K.Port, K.SequenceNumber},
    K.HeaderLength: {K.Checksum, K.Port},
}


def _symmetric(table):
    out: dict = {}
    for a, bs in table.items():
        for b in bs:
            out.setdefault(a, set()).add(b)
            out.setdefault(b, set()).add(a)
    return {k: frozenset(v) for k, v in out.items()}


EXCLUSIONS = _symmetric(_EXCLUSION_TABLE)


@dataclass(frozen=True)
class PropertyTuple:
    kind: PropertyKind
    field: str
    score: float = 0.0
    provenance: str = "extracted"  # extracted | guessed
    evidence: tuple[int, int] | None = None
    sentence: str | None = None


@dataclass(frozen=True)
class GrammarField:
    name: str
    size_bits: int | None
    offset_bits: int | None
    order: int


@dataclass
class ProtocolGrammar:
    protocol_id: str
    fields: list[GrammarField]
    properties: list[PropertyTuple] = field(default_factory=list)
    header_bits: int = 0
    packet_types: dict[str, int] | None = None

    def field(self, name: str) -> GrammarField:
        for f in self.fields:
            if f.name == name:
                return f
        raise KeyError(name)

    def fields_with(self, kind: PropertyKind) -> list[GrammarField]:
        names = {p.field for p in self.properties if p.kind is kind}
        return [f for f in self.fields if f.name in names]

    def kinds_of(self, name: str) -> set[PropertyKind]:
        return {p.kind for p in self.properties if p.field == name}

    @property
    def layout(self) -> list[GrammarField]:
        return [f for f in self.fields if f.size_bits is not None]

    def validate(self) -> None:
        offset = 0
        prev = None
        for f in self.layout:
            if f.offset_bits is None:
                raise LayoutError("sized field without offset", [f.name])
            if f.offset_bits != offset:
                names = [prev.name, f.name] if prev else [f.name]
                kind = "overlapping offsets" if f.offset_bits < offset else "gap in layout"
                raise LayoutError(kind, names)
            offset += f.size_bits
            prev = f
        if offset != self.header_bits:
            raise LayoutError(f"header_bits {self.header_bits} != sum of sizes {offset}")
        names = [f.name for f in self.fields]
        dup = sorted({n for n in names if names.count(n) > 1})
        if dup:
            raise LayoutError("duplicate field names", dup)
        known = set(names)
        for p in self.properties:
            if p.field not in known:
                raise GrammarError(f"property {p.kind.value} references unknown field {p.field!r}")
        seen: dict = {}
        for p in self.properties:
            if p.kind.singleton:
                if p.kind in seen:
                    raise SingletonViolation(
                        f"{p.kind.value} on both {seen[p.kind]!r} and {p.field!r}")
                seen[p.kind] = p.field
        for name in known:
            kinds = self.kinds_of(name)
            for k in kinds:
                bad = kinds & k.exclusions
                if bad:
                    other = sorted(b.value for b in bad)[0]
                    raise ExclusionViolation(
                        f"field {name!r} carries mutually exclusive {k.value} and {other}")


def _field_rank(types: list[FieldType]) -> dict[str, int]:
    return {t.name: i for i, t in enumerate(types)}


def _sort_key(t: PropertyTuple, rank):
    return (-t.score, t.kind.priority, rank.get(t.field, len(rank)))


def _guess(kind: PropertyKind, layout: list[GrammarField]) -> GrammarField | None:
    def named(*words, max_bits=None):
        hits = [f for f in layout if any(w in f.name.lower() for w in words)
                and (max_bits is None or f.size_bits <= max_bits)]
        # exact names first, then suffix matches, then anything containing the word
        hits.sort(key=lambda f: (0 if f.name.lower() in words else
                                 1 if any(f.name.lower().endswith(w) for w in words) else 2,
                                 f.order))
        return hits[0] if hits else None

    if kind is K.Checksum:
        return named("checksum") or next(
            (f for f in reversed(layout) if f.size_bits == 16), None)
    if kind is K.PacketType:
        hit = named("type")
        if hit:
            return hit
        small = [f for f in layout if f.size_bits in (4, 8) and f.offset_bits + f.size_bits <= 32]
        small.sort(key=lambda f: (f.size_bits, f.offset_bits))
        return small[0] if small else None
    if kind is K.HeaderLength:
        return named("offset", "length", max_bits=8)
    return None


def build_layout(types: list[FieldType]) -> list[GrammarField]:
    """Assign bit offsets from order and size; unsized fields get no offset."""
    indexed = list(enumerate(types))
    orders: dict[int, list[str]] = {}
    for _, t in indexed:
        if t.order is not None:
            orders.setdefault(t.order, []).append(t.name)
    clash = [names for names in orders.values() if len(names) > 1]
    if clash:
        raise LayoutError("fields share a header position", clash[0])
    ranked = sorted(indexed, key=lambda it: (it[1].order is None,
                                             it[1].order if it[1].order is not None else it[0]))
    out = []
    offset = 0
    for pos, (_, t) in enumerate(ranked):
        if t.size_bits is None:
            out.append(GrammarField(t.name, None, None, pos))
        else:
            out.append(GrammarField(t.name, t.size_bits, offset, pos))
            offset += t.size_bits
    return out


def postprocess(tuples: list[PropertyTuple], types: list[FieldType], protocol_id: str = "",
                guess: bool = True, packet_types: dict[str, int] | None = None) -> ProtocolGrammar:
    """Clean extracted (kind, field) tuples and attach them to a packet layout."""
    fields = build_layout(types)
    rank = {f.name: i for i, f in enumerate(fields)}
    known = set(rank)

    best: dict[tuple, PropertyTuple] = {}
    for t in tuples:
        if t.field not in known:
            continue
        key = (t.kind, t.field)
        if key not in best or t.score > best[key].score:
            best[key] = t

    kept: list[PropertyTuple] = []
    singletons_used: set = set()
    for t in sorted(best.values(), key=lambda t: _sort_key(t, rank)):
        if t.kind.singleton and t.kind in singletons_used:
            continue
        on_field = {k.kind for k in kept if k.field == t.field}
        if on_field & t.kind.exclusions:
            continue
        kept.append(t)
        if t.kind.singleton:
            singletons_used.add(t.kind)

    if guess:
        layout = [f for f in fields if f.size_bits is not None]
        for kind in (K.PacketType, K.HeaderLength, K.Checksum):
            if kind in singletons_used:
                continue
            target = _guess(kind, layout)
            if target is None:
                continue
            on_field = {k.kind for k in kept if k.field == target.name}
            if on_field & kind.exclusions:
                continue
            kept.append(PropertyTuple(kind, target.name, 0.0, "guessed"))
            singletons_used.add(kind)

    kept.sort(key=lambda t: (rank[t.field], t.kind.priority))
    header_bits = sum(f.size_bits for f in fields if f.size_bits is not None)
    g = ProtocolGrammar(protocol_id, fields, kept, header_bits, packet_types)
    g.validate()
    return g


def grammar_to_dict(g: ProtocolGrammar) -> dict:
    out = {
        "format": FORMAT_VERSION,
        "protocol": g.protocol_id,
        "header_bits": g.header_bits,
        "fields": [{"name": f.name, "size_bits": f.size_bits,
                    "offset_bits": f.offset_bits, "order": f.order} for f in g.fields],
        "properties": [],
    }
    for p in g.properties:
        rec = {"kind": p.kind.value, "field": p.field, "provenance": p.provenance,
               "score": p.score}
        if p.evidence is not None:
            rec["evidence"] = list(p.evidence)
        if p.sentence is not None:
            rec["sentence"] = p.sentence
        out["properties"].append(rec)
    if g.packet_types is not None:
        out["packet_types"] = dict(g.packet_types)
    return out


def serialize_grammar(g: ProtocolGrammar) -> str:
    return json.dumps(grammar_to_dict(g), indent=2) + "\n"


def parse_grammar(text: str) -> ProtocolGrammar:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GrammarSyntaxError(exc.msg, exc.lineno) from exc
    if not isinstance(data, dict):
        raise GrammarSyntaxError("top level must be an object", 1)
    try:
        fields = [GrammarField(f["name"], f.get("size_bits"), f.get("offset_bits"),
                               f.get("order", i))
                  for i, f in enumerate(data["fields"])]
        props = []
        for p in data.get("properties", []):
            ev = p.get("evidence")
            props.append(PropertyTuple(PropertyKind(p["kind"]), p["field"],
                                       float(p.get("score", 0.0)),
                                       p.get("provenance", "extracted"),
                                       tuple(ev) if ev is not None else None,
                                       p.get("sentence")))
        header_bits = data.get("header_bits")
        if header_bits is None:
            header_bits = sum(f.size_bits for f in fields if f.size_bits is not None)
        pt = data.get("packet_types")
        g = ProtocolGrammar(data["protocol"], fields, props, int(header_bits),
                            {str(k): int(v) for k, v in pt.items()} if pt is not None else None)
    except KeyError as exc:
        raise GrammarSyntaxError(f"missing key {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise GrammarSyntaxError(str(exc)) from exc
    g.validate()
    return g


def load_grammar(path) -> ProtocolGrammar:
    with open(path) as fh:
        return parse_grammar(fh.read())


def field_types(g: ProtocolGrammar) -> list[FieldType]:
    return [FieldType(f.name, f.size_bits, f.order) for f in g.fields]
