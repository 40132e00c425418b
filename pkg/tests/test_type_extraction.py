import time

import pytest

from rfcfuzz.corpus import load_document
from rfcfuzz.errors import UndefinedMetricError
from rfcfuzz.type_extraction import (FieldType, acronym, canonical_name, extract_entity_types,
                                     format_types, parse_types, type_extraction_accuracy)

from conftest import CORPUS, write_rfc

# hand-read fixed-header field list of the TCP document, written down before the extractor
TCP_ORACLE = [("Source Port", 16), ("Destination Port", 16), ("Sequence Number", 32),
              ("Acknowledgment Number", 32), ("Data Offset", 4), ("Reserved", 6),
              ("Control Bits", 6), ("Window", 16), ("Checksum", 16), ("Urgent Pointer", 16)]


def extract(path, pid):
    doc = load_document(path, pid)
    return extract_entity_types(doc.raw, doc.sections)


def test_field_heading_sizes(tmp_path):
    text = ("1.  Header\n\n   Data Offset: 8 bits\n      Where data begins.\n\n"
            "   Checksum: 2 bytes\n      A sum.\n")
    types = extract(write_rfc(tmp_path, text), "toy")
    assert [(t.name, t.size_bits) for t in types] == [("Data Offset", 8), ("Checksum", 16)]
    assert types[0].aliases == ("DO",)
    assert [t.order for t in types] == [0, 1]


def test_tcp_oracle_fields():
    types = extract(CORPUS / "rfc" / "tcp.txt", "tcp")
    got = {(t.name, t.size_bits) for t in types}
    for item in TCP_ORACLE:
        assert item in got


def test_canonical_and_acronym():
    assert canonical_name("  Data   Offset. ") == "Data Offset"
    assert acronym("Data Offset") == "DO"
    assert acronym("Checksum") is None


def test_accuracy_ratio():
    gold = [FieldType(f"F{i}") for i in range(10)]
    assert type_extraction_accuracy(gold, gold) == 1.0
    assert type_extraction_accuracy(gold[:8], gold) == 0.8
    with pytest.raises(UndefinedMetricError):
        type_extraction_accuracy(gold, [])


def test_types_roundtrip():
    types = [FieldType("Data Offset", 4, 0), FieldType("Options", None, 1)]
    back = parse_types(format_types(types))
    assert [(t.name, t.size_bits, t.order) for t in back] == \
        [("Data Offset", 4, 0), ("Options", None, 1)]


def test_rejects_bad_size():
    with pytest.raises(ValueError):
        FieldType("X", 0)


def test_corpus_runtime_under_a_second(entries):
    for e in entries:
        t0 = time.perf_counter()
        extract_entity_types(e.doc.raw, e.doc.sections)
        assert time.perf_counter() - t0 < 1.0
