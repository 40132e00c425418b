import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rfcfuzz.grammar import (EXCLUSIONS, SINGLETON_KINDS, GrammarSyntaxError, LayoutError,
                             PropertyKind, PropertyTuple, SingletonViolation, build_layout,
                             field_types, load_grammar, parse_grammar, postprocess,
                             serialize_grammar)
from rfcfuzz.type_extraction import FieldType

from conftest import GRAMMARS

K = PropertyKind
TCP_TYPES = [FieldType(n, s, i) for i, (n, s) in enumerate([
    ("Source Port", 16), ("Destination Port", 16), ("Sequence Number", 32),
    ("Acknowledgment Number", 32), ("Data Offset", 4), ("Reserved", 6), ("Control Bits", 6),
    ("Window", 16), ("Checksum", 16), ("Urgent Pointer", 16)])]
TCP_TYPES.append(FieldType("Options", None, 10))


def kinds_by_field(g):
    out = {}
    for p in g.properties:
        out.setdefault(p.field, set()).add(p.kind)
    return out


def test_dedup_keeps_max_score():
    g = postprocess([PropertyTuple(K.Checksum, "Checksum", 0.4),
                     PropertyTuple(K.Checksum, "Checksum", 0.9)], TCP_TYPES, guess=False)
    assert [(p.kind, p.field, p.score) for p in g.properties] == [(K.Checksum, "Checksum", 0.9)]


def test_singleton_keeps_best():
    g = postprocess([PropertyTuple(K.PacketType, "Control Bits", 0.8),
                     PropertyTuple(K.PacketType, "Reserved", 0.6)], TCP_TYPES, guess=False)
    assert [p.field for p in g.properties if p.kind is K.PacketType] == ["Control Bits"]


def test_exclusion_drops_weaker():
    g = postprocess([PropertyTuple(K.Port, "Checksum", 0.9),
                     PropertyTuple(K.Checksum, "Checksum", 0.5)], TCP_TYPES, guess=False)
    assert kinds_by_field(g)["Checksum"] == {K.Port}


def test_fallback_checksum_on_tcp():
    g = postprocess([PropertyTuple(K.Port, "Source Port", 1.0)], TCP_TYPES)
    ck = [p for p in g.properties if p.kind is K.Checksum]
    assert [(p.field, p.provenance, p.score) for p in ck] == [("Checksum", "guessed", 0.0)]
    assert g.field("Checksum").size_bits == 16
    hl = [p.field for p in g.properties if p.kind is K.HeaderLength]
    assert hl == ["Data Offset"]


def test_fallback_packet_type_by_size():
    types = [FieldType("Version", 4, 0), FieldType("Flags", 8, 1), FieldType("Length", 16, 2),
             FieldType("Sum", 16, 3)]
    g = postprocess([], types)
    got = {p.kind: p.field for p in g.properties}
    assert got[K.PacketType] == "Version"
    assert got[K.Checksum] == "Sum"


def test_no_guess_leaves_gaps():
    assert postprocess([], TCP_TYPES, guess=False).properties == []


def test_layout_offsets_and_unsized():
    fields = build_layout(TCP_TYPES)
    assert [f.offset_bits for f in fields[:5]] == [0, 16, 32, 64, 96]
    assert fields[-1].size_bits is None and fields[-1].offset_bits is None


def test_layout_order_clash():
    with pytest.raises(LayoutError) as exc:
        build_layout([FieldType("A", 8, 0), FieldType("B", 8, 0)])
    assert set(exc.value.fields) == {"A", "B"}


def test_roundtrip_and_empty_properties():
    g = postprocess([], TCP_TYPES, "tcp", guess=False)
    text = serialize_grammar(g)
    assert json.loads(text)["properties"] == []
    assert parse_grammar(text) == g


def test_manual_tcp_fixture():
    g = load_grammar(GRAMMARS / "tcp_manual.json")
    assert len(g.layout) == 10
    assert g.header_bits == 160 == sum(f.size_bits for f in g.layout)
    assert {p.provenance for p in g.properties} == {"manual"}


@pytest.mark.parametrize("name", ["tcp_manual.json", "dccp_manual.json", "tcp_nlp.json",
                                  "dccp_nlp.json"])
def test_fixtures_roundtrip(name):
    g = load_grammar(GRAMMARS / name)
    assert parse_grammar(serialize_grammar(g)) == g
    assert serialize_grammar(g) == (GRAMMARS / name).read_text()


def _tcp_dict():
    return json.loads((GRAMMARS / "tcp_manual.json").read_text())


def test_overlapping_offsets_named():
    d = _tcp_dict()
    d["fields"][1]["offset_bits"] = 8
    with pytest.raises(LayoutError) as exc:
        parse_grammar(json.dumps(d))
    assert exc.value.fields == ("Source Port", "Destination Port")


def test_two_packet_types_rejected():
    d = _tcp_dict()
    d["properties"].append({"kind": "PacketType", "field": "Reserved", "provenance": "manual",
                            "score": 0.0})
    with pytest.raises(SingletonViolation):
        parse_grammar(json.dumps(d))


def test_syntax_error_reports_line():
    with pytest.raises(GrammarSyntaxError) as exc:
        parse_grammar('{\n  "protocol": "x",\n  oops\n}')
    assert exc.value.line == 3
    with pytest.raises(GrammarSyntaxError):
        parse_grammar('{"protocol": "x"}')


def test_field_types_recovers_layout():
    g = load_grammar(GRAMMARS / "dccp_manual.json")
    assert build_layout(field_types(g)) == g.fields


# -- property laws --------------------------------------------------------------

NAMES = [t.name for t in TCP_TYPES]
tuple_st = st.builds(PropertyTuple, st.sampled_from(list(PropertyKind)), st.sampled_from(NAMES),
                     st.floats(0, 5, allow_nan=False))


@settings(max_examples=1000, deadline=None, derandomize=True)
@given(st.lists(tuple_st, max_size=25), st.booleans())
def test_postprocess_laws(tuples, guess):
    g = postprocess(tuples, TCP_TYPES, "tcp", guess=guess)
    # singleton
    for kind in SINGLETON_KINDS:
        assert sum(p.kind is kind for p in g.properties) <= 1
    # exclusion
    for kinds in kinds_by_field(g).values():
        for k in kinds:
            assert not kinds & EXCLUSIONS.get(k, frozenset())
    # no duplicates; every extracted tuple carries the best input score for its key
    keys = [(p.kind, p.field) for p in g.properties]
    assert len(keys) == len(set(keys))
    for p in g.properties:
        if p.provenance == "extracted":
            assert p.score == max(t.score for t in tuples if (t.kind, t.field) == (p.kind,
                                                                                     p.field))
    # idempotence
    again = postprocess(g.properties, TCP_TYPES, "tcp", guess=guess)
    assert again.properties == g.properties
    assert again == g
