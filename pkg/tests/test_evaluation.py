import json
from fractions import Fraction

import pytest

from rfcfuzz import evaluation as ev
from rfcfuzz import zsl
from rfcfuzz.corpus import Chunk
from rfcfuzz.errors import PipelineError, UndefinedMetricError
from rfcfuzz.type_extraction import FieldType


def spans(n, start=0, label="X"):
    return [((start + 10 * i, start + 10 * i + 5), label) for i in range(n)]


def test_aggregate_row_oracle():
    # 576 true positives, 159 false positives, 297 misses
    gold = spans(576 + 297)
    pred = gold[:576] + spans(159, start=100_000)
    m = ev.eval_mentions(pred, gold)
    assert (m.tp, m.fp, m.fn) == (576, 159, 297)
    assert m.precision == Fraction(576, 735)
    assert m.recall == Fraction(576, 873)
    assert m.f1 == Fraction(1152, 1608)
    assert (round(float(m.precision), 2), round(float(m.recall), 2),
            round(float(m.f1), 2)) == (0.78, 0.66, 0.72)


def test_mention_conventions():
    gold = spans(4)
    empty = ev.eval_mentions([], gold)
    assert (empty.precision, empty.recall, empty.f1) == (0, 0, 0)
    same = ev.eval_mentions(gold, gold)
    assert (same.precision, same.recall, same.f1) == (1, 1, 1)


def test_mention_match_is_exact_span_and_casefolded_type():
    gold = [((0, 5), "Data Offset")]
    assert ev.eval_mentions([((0, 5), "data offset")], gold).tp == 1
    assert ev.eval_mentions([((0, 6), "Data Offset")], gold).tp == 0
    assert ev.eval_mentions([((0, 5), "Checksum")], gold).tp == 0


def test_metrics_add():
    assert ev.MentionMetrics(1, 2, 3) + ev.MentionMetrics(4, 5, 6) == ev.MentionMetrics(5, 7, 9)


def test_property_metrics_fixture():
    gold = [([(0, 20)], "Checksum", "Checksum"), ([(30, 40), (50, 60)], "Port", "Source Port"),
            ([(70, 80)], "Window", "Window")]
    pred = [(2, 8), (52, 55), (90, 95), (10, 25)]
    m = ev.eval_properties(pred, gold, 10)
    assert (m.s_tpr, m.c_fpr) == (Fraction(2, 3), Fraction(2, 10))
    perfect = ev.eval_properties([(0, 20), (30, 40), (70, 80)], gold, 10)
    assert (perfect.s_tpr, perfect.c_fpr) == (1, 0)
    with pytest.raises(UndefinedMetricError):
        ev.eval_properties(pred, [], 10)
    with pytest.raises(UndefinedMetricError):
        ev.PropertyMetrics(0, 0, 0, 5).s_tpr


def chunk(*words, start=0):
    return Chunk(tuple(words), 0, 0, (start, start + len(" ".join(words))))


def test_overlap_baseline():
    types = [FieldType("Data Offset"), FieldType("Checksum")]
    assert [m.entity.name for m in ev.overlap_baseline(types, [chunk("Data", "Offset")], 100)] \
        == ["Data Offset"]
    assert ev.overlap_baseline(types, [chunk("data", "area")], 70) == []
    assert len(ev.overlap_baseline(types, [chunk("data", "area")], 50)) == 1
    assert ev.overlap_ratio(["data"], ["Data", "Offset"]) == 0.5


def test_rule_based_weights():
    pad = (0,) * 15
    pairs = [((1, 1, 0) + pad, 1)] * 3 + [((0, 1, 0) + pad, 1)] * 2 + \
        [((1, 1, 1) + pad, -1)] + [((0, 1, 0) + pad, -1)] * 4
    # feature 0: pr 0.6, nr 0.2; feature 1: equal; feature 2: only in negatives
    rb1 = ev.rb_weights(pairs, "RB1")
    assert rb1.weights[:3] == pytest.approx((0.6, 0.0, -0.2))
    rb2 = ev.rb_weights(pairs, "RB2")
    assert rb2.weights[:3] == (1.0, 0.0, -1.0)
    assert rb2.bias == -1.0
    with pytest.raises(ValueError):
        ev.rb_weights(pairs, "RB3")


def test_annotation_parsing():
    text = "\n".join(json.dumps(r) for r in [
        {"label_type": "type", "label": "Data Offset", "start": 0, "end": 11, "size_bits": 8,
         "order": 0},
        {"label_type": "mention", "label": "Data Offset", "start": 0, "end": 11},
        {"label_type": "property", "label": "HeaderLength", "argument": "Data Offset",
         "group": 1, "start": 30, "end": 40},
        {"label_type": "property", "label": "HeaderLength", "argument": "Data Offset",
         "group": 1, "start": 12, "end": 20},
    ])
    a = ev.parse_annotations(text, "toy")
    assert a.gold_types[0].aliases == ("DO",)
    assert a.gold_mentions == [((0, 11), "Data Offset")]
    assert a.gold_property_spans == [([(12, 20), (30, 40)], "HeaderLength", "Data Offset")]
    with pytest.raises(ev.AnnotationError):
        ev.parse_annotations('{"label_type": "bogus", "start": 0, "end": 1}', "toy")


def test_corpus_annotations_validate(entries):
    for e in entries:
        e.gold.validate(e.doc)
        assert e.gold.gold_mentions and e.gold.gold_property_spans


def test_training_pairs_use_only_given_entries(entries):
    ts = ev.build_training_set(entries[:2], seed=0)
    assert ts.protocols == ["tcp", "dccp"]
    labels = {y for _, y in ts.mention_pairs}
    assert labels == {1, -1}


def test_loocv_needs_two_documents(entries):
    with pytest.raises(PipelineError):
        ev.loocv(entries[:1])


def test_loocv_small_corpus_is_deterministic(entries):
    small = [e for e in entries if e.protocol_id in ("tcp", "gre", "ipv6")]
    cfg = ev.LoocvConfig(seed=1, epochs=5)
    a = ev.report_to_dict(ev.loocv(small, cfg))
    b = ev.report_to_dict(ev.loocv(small, cfg))
    assert a == b
    assert [p["protocol"] for p in a["protocols"]] == ["tcp", "ipv6", "gre"]
    assert "Total (K)" in ev.render_tables(a) and "Total (E)" in ev.render_tables(a)
    assert set(a["total"]["mentions"]["K"]) == set(ev.METHODS)


def test_known_types_keep_gold_names(entry_by_id):
    e = entry_by_id["tcp"]
    assert [t.name for t in e.known_types()] == [t.name for t in e.gold.gold_types]
    assert any(t.source_section is not None for t in e.known_types())


def test_mentions_from_scores_threshold(entry_by_id):
    doc = entry_by_id["gre"].doc
    types = entry_by_id["gre"].known_types()
    X = zsl.mention_matrix(doc, types)
    never = zsl.LinearModel((0.0,) * 18 + (-1.0,))
    assert zsl.mentions_from_scores(doc, types, zsl.score_matrix(never, X), 0.0) == []
