"""Annotations, metrics, baselines and the leave-one-protocol-out driver."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from fractions import Fraction
from pathlib import Path

import numpy as np

from rfcfuzz import zsl
from rfcfuzz.corpus import STOPWORDS, Chunk, Document, load_document
from rfcfuzz.errors import PipelineError, UndefinedMetricError
from rfcfuzz.type_extraction import FieldType, acronym, extract_entity_types

log = logging.getLogger(__name__)

PROTOCOLS = ("tcp", "dccp", "ip", "ipv6", "gre", "sctp")
OVERLAP_THRESHOLDS = (50, 70, 85, 100)
NEGATIVE_RATIO = 5


class AnnotationError(PipelineError):
    stage = "eval"


@dataclass
class AnnotationSet:
    protocol_id: str
    gold_types: list[FieldType]
    gold_mentions: list[tuple[tuple[int, int], str]]
    gold_property_spans: list[tuple[list[tuple[int, int]], str, str]]

    def validate(self, doc: Document) -> None:
        n = len(doc.text)
        names = {t.key for t in self.gold_types}
        for (s, e), name in self.gold_mentions:
            if not 0 <= s < e <= n:
                raise AnnotationError(f"{self.protocol_id}: mention span {s}-{e} outside text")
            if name.casefold() not in names:
                raise AnnotationError(f"{self.protocol_id}: mention label {name!r} not a type")
        for spans, _, _ in self.gold_property_spans:
            for s, e in spans:
                if not 0 <= s < e <= n:
                    raise AnnotationError(f"{self.protocol_id}: property span {s}-{e} outside")


def parse_annotations(text: str, protocol_id: str) -> AnnotationSet:
    types, mentions, groups = [], [], {}
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise AnnotationError(f"line {lineno}: {exc.msg}") from exc
        kind = rec.get("label_type")
        span = (int(rec["start"]), int(rec["end"]))
        if kind == "type":
            name = rec["label"]
            acr = acronym(name)
            types.append(FieldType(name, rec.get("size_bits"), rec.get("order"),
                                   (acr,) if acr else ()))
        elif kind == "mention":
            mentions.append((span, rec["label"]))
        elif kind == "property":
            key = rec.get("group", len(groups))
            spans, _, _ = groups.setdefault(key, ([], rec["label"], rec.get("argument", "")))
            spans.append(span)
        else:
            raise AnnotationError(f"line {lineno}: unknown label_type {kind!r}")
    props = [(sorted(v[0]), v[1], v[2]) for _, v in sorted(groups.items())]
    return AnnotationSet(protocol_id, types, sorted(mentions), props)


def load_annotations(path, protocol_id: str) -> AnnotationSet:
    return parse_annotations(Path(path).read_text(), protocol_id)


@dataclass
class CorpusEntry:
    doc: Document
    gold: AnnotationSet
    extracted: list[FieldType]

    @property
    def protocol_id(self) -> str:
        return self.doc.protocol_id

    def known_types(self) -> list[FieldType]:
        """Gold type names enriched with the aliases the extractor saw in the text."""
        return anchor_types(self.gold.gold_types, self.extracted)


def anchor_types(types, extracted: list[FieldType]) -> list[FieldType]:
    """Keep names and sizes of ``types``; borrow aliases and section anchors from extraction."""
    found = {t.key: t for t in extracted}
    out = []
    for t in types:
        ext = found.get(t.key)
        if ext is not None:
            aliases = tuple(dict.fromkeys(t.aliases + ext.aliases))
            out.append(replace(t, aliases=aliases, source_section=ext.source_section,
                               evidence_sections=ext.evidence_sections))
        else:
            out.append(t)
    return out


def load_corpus(root, protocols=PROTOCOLS) -> list[CorpusEntry]:
    root = Path(root)
    out = []
    for p in protocols:
        doc = load_document(root / "rfc" / f"{p}.txt", p)
        gold = load_annotations(root / "annotations" / f"{p}.jsonl", p)
        gold.validate(doc)
        out.append(CorpusEntry(doc, gold, extract_entity_types(doc.raw, doc.sections)))
    return out


# -- metrics ------------------------------------------------------------------

@dataclass(frozen=True)
class MentionMetrics:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> Fraction:
        return Fraction(self.tp, self.tp + self.fp) if self.tp + self.fp else Fraction(0)

    @property
    def recall(self) -> Fraction:
        return Fraction(self.tp, self.tp + self.fn) if self.tp + self.fn else Fraction(0)

    @property
    def f1(self) -> Fraction:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else Fraction(0)

    def __add__(self, other: "MentionMetrics") -> "MentionMetrics":
        return MentionMetrics(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    def as_dict(self) -> dict:
        return {"precision": round(float(self.precision), 6),
                "recall": round(float(self.recall), 6), "f1": round(float(self.f1), 6),
                "tp": self.tp, "fp": self.fp, "fn": self.fn}


@dataclass(frozen=True)
class PropertyMetrics:
    hit_spans: int
    gold_spans: int
    false_chunks: int
    negative_chunks: int

    @property
    def s_tpr(self) -> Fraction:
        if not self.gold_spans:
            raise UndefinedMetricError("S-TPR undefined without gold property spans")
        return Fraction(self.hit_spans, self.gold_spans)

    @property
    def c_fpr(self) -> Fraction:
        return Fraction(self.false_chunks, self.negative_chunks) if self.negative_chunks \
            else Fraction(0)

    def __add__(self, other: "PropertyMetrics") -> "PropertyMetrics":
        return PropertyMetrics(self.hit_spans + other.hit_spans,
                               self.gold_spans + other.gold_spans,
                               self.false_chunks + other.false_chunks,
                               self.negative_chunks + other.negative_chunks)

    def as_dict(self) -> dict:
        return {"s_tpr": round(float(self.s_tpr), 6), "c_fpr": round(float(self.c_fpr), 6),
                "hit_spans": self.hit_spans, "gold_spans": self.gold_spans,
                "false_chunks": self.false_chunks, "negative_chunks": self.negative_chunks}


def _as_pair(m) -> tuple[tuple[int, int], str]:
    if isinstance(m, zsl.Mention):
        return (m.chunk.char_span, m.entity.name)
    return (tuple(m[0]), m[1])


def eval_mentions(predicted, gold) -> MentionMetrics:
    """Exact span and case-insensitive type match."""
    gold_set = {(tuple(s), n.casefold()) for s, n in (_as_pair(g) for g in gold)}
    pred_set = {(s, n.casefold()) for s, n in (_as_pair(p) for p in predicted)}
    tp = len(pred_set & gold_set)
    return MentionMetrics(tp, len(pred_set) - tp, len(gold_set) - tp)


def _inside(span, region) -> bool:
    return region[0] <= span[0] and span[1] <= region[1]


def _overlaps(span, region) -> bool:
    return span[0] < region[1] and region[0] < span[1]


def eval_properties(predicted, gold_spans, total_negative_chunks: int) -> PropertyMetrics:
    if not gold_spans:
        raise UndefinedMetricError("S-TPR undefined without gold property spans")
    spans = [p.chunk.char_span if isinstance(p, zsl.PropertySpan) else tuple(p)
             for p in predicted]
    regions = [[tuple(r) for r in (g[0] if isinstance(g[0], list) else [g[0]])]
               for g in gold_spans]
    hit = sum(any(_inside(s, r) for s in spans for r in rs) for rs in regions)
    flat = [r for rs in regions for r in rs]
    false = sum(not any(_inside(s, r) for r in flat) for s in spans)
    return PropertyMetrics(hit, len(regions), false, total_negative_chunks)


def negative_chunk_count(doc: Document, gold_spans) -> int:
    flat = [tuple(r) for g in gold_spans for r in g[0]]
    return sum(not any(_inside(c.char_span, r) for r in flat) for c in doc.chunks)


# -- baselines ----------------------------------------------------------------

def overlap_ratio(chunk_tokens, type_tokens) -> float:
    c = {w.casefold() for w in chunk_tokens}
    t = [w.casefold() for w in type_tokens]
    if not t:
        return 0.0
    return sum(w in c for w in dict.fromkeys(t)) / len(dict.fromkeys(t))


def overlap_baseline(types: list[FieldType], chunks: list[Chunk],
                     threshold: float) -> list[zsl.Mention]:
    cands = []
    for c in chunks:
        best, best_t = 0.0, None
        for t in types:
            r = overlap_ratio(c.tokens, t.tokens)
            if r > best:
                best, best_t = r, t
        if best_t is not None and best * 100 >= threshold - 1e-9:
            cands.append(zsl.Mention(c, best_t, best))
    return zsl.resolve_overlaps(cands, lambda m: m.chunk.char_span, lambda m: m.score)


def rb_weights(pairs, variant: str, catalog: str = "mention") -> zsl.LinearModel:
    """Hand-set weights from per-feature positive and negative occurrence rates."""
    if not pairs:
        raise PipelineError("rb_weights needs training pairs")
    X = np.array([p[0].bits if isinstance(p[0], zsl.FeatureVector) else p[0] for p in pairs],
                 dtype=float)
    y = np.array([p[1] for p in pairs])
    pos, neg = X[y > 0], X[y <= 0]
    pr = pos.mean(axis=0) if len(pos) else np.zeros(X.shape[1])
    nr = neg.mean(axis=0) if len(neg) else np.zeros(X.shape[1])
    weights = []
    for a, b in zip(pr, nr):
        if variant == "RB1":
            weights.append(float(a) if a > b else -float(b) if b > a else 0.0)
        elif variant == "RB2":
            weights.append(1.0 if a > b else -1.0 if b > a else 0.0)
        else:
            raise ValueError(f"unknown variant {variant!r}")
    # the bias feature is always on, so its negative rate is 1 whenever negatives exist
    bias = -1.0 if variant == "RB2" else -(1.0 if len(neg) else 0.0)
    return zsl.LinearModel(tuple(weights) + (bias,), 0.0, catalog,
                           training_meta={"variant": variant})


# -- training pairs -----------------------------------------------------------

@dataclass
class TrainingSet:
    mention_pairs: list = field(default_factory=list)
    property_pairs: list = field(default_factory=list)
    observed_tokens: set = field(default_factory=set)
    protocols: list = field(default_factory=list)


def _observe(ts: TrainingSet, words) -> None:
    ts.observed_tokens.update(w.casefold() for w in words)


def build_training_set(entries: list[CorpusEntry], seed: int = 0) -> TrainingSet:
    """Pairs for both scorers drawn only from ``entries``."""
    ts = TrainingSet()
    rng = np.random.default_rng(seed)
    for entry in entries:
        doc = entry.doc
        ts.protocols.append(entry.protocol_id)
        types = entry.known_types()
        by_key = {t.key: j for j, t in enumerate(types)}
        by_span = {c.char_span: i for i, c in enumerate(doc.chunks)}
        pos_idx: list[tuple[int, int]] = []
        for span, name in entry.gold.gold_mentions:
            i = by_span.get(tuple(span))
            if i is not None:
                pos_idx.append((i, by_key[name.casefold()]))
        pos_set = {i for i, _ in pos_idx}
        non_mention = [i for i in range(len(doc.chunks)) if i not in pos_set]
        # hard negatives: non-mention chunks sharing a word with the type name
        sharing = []
        for t in types:
            words = {w.casefold() for w in t.tokens} - STOPWORDS
            sharing.append([i for i in non_mention
                            if words & {w.casefold() for w in doc.chunks[i].tokens}])

        needed_chunks: dict[int, None] = {}
        triples: list[tuple[int, int, int]] = []
        for i, j in pos_idx:
            needed_chunks[i] = None
            triples.append((i, j, +1))
            for k in range(len(types)):
                if k != j:
                    triples.append((i, k, -1))
            n_hard = min(len(sharing[j]), (NEGATIVE_RATIO + 1) // 2)
            picks = list(rng.choice(sharing[j], n_hard, replace=False)) if n_hard else []
            picks += list(rng.choice(non_mention, NEGATIVE_RATIO - n_hard, replace=False))
            for c in picks:
                needed_chunks[int(c)] = None
                triples.append((int(c), j, -1))
        chunk_list = sorted(needed_chunks)
        X = zsl.mention_matrix(doc, types, [doc.chunks[i] for i in chunk_list])
        row = {c: r for r, c in enumerate(chunk_list)}
        for i, j, label in triples:
            ts.mention_pairs.append((X[row[i], j], label))
        for i in chunk_list:
            _observe(ts, doc.chunks[i].tokens)
        for t in types:
            _observe(ts, t.tokens)

        regions = [tuple(r) for g in entry.gold.gold_property_spans for r in g[0]]
        inside = [i for i, c in enumerate(doc.chunks)
                  if any(_inside(c.char_span, r) for r in regions)]
        outside = [i for i, c in enumerate(doc.chunks)
                   if not any(_overlaps(c.char_span, r) for r in regions)]
        n_neg = min(len(outside), NEGATIVE_RATIO * len(inside))
        neg = sorted(int(i) for i in rng.choice(outside, n_neg, replace=False))
        chosen = inside + neg
        P = zsl.property_matrix(doc, [doc.chunks[i] for i in chosen])
        for r, i in enumerate(chosen):
            ts.property_pairs.append((P[r], +1 if r < len(inside) else -1))
            _observe(ts, doc.chunks[i].tokens)
    return ts


@dataclass
class TrainedModels:
    mention: zsl.LinearModel
    property: zsl.LinearModel
    training: TrainingSet


def train_models(entries: list[CorpusEntry], seed: int = 0, epochs: int = 50,
                 lam: float = 1e-3) -> TrainedModels:
    ts = build_training_set(entries, seed)
    meta = {"protocols": list(ts.protocols)}
    m = zsl.train(ts.mention_pairs, seed, epochs, "mention", lam, meta=meta)
    p = zsl.train(ts.property_pairs, seed, epochs, "property", lam, meta=meta)
    return TrainedModels(m, p, ts)


# -- leave-one-protocol-out -----------------------------------------------------

METHODS = tuple(f"O>={t}" for t in OVERLAP_THRESHOLDS) + ("RB1", "RB2", "ZSL")
PROPERTY_METHODS = ("RB1", "RB2", "ZSL")


@dataclass
class LoocvConfig:
    seed: int = 0
    epochs: int = 50
    lam: float = 1e-3


def _mention_predictions(method: str, entry: CorpusEntry, types, X, models, rb):
    if method.startswith("O>="):
        return overlap_baseline(types, entry.doc.chunks, float(method[3:]))
    model = models.mention if method == "ZSL" else rb[method]
    return zsl.mentions_from_scores(entry.doc, types, zsl.score_matrix(model, X),
                                    model.margin_threshold)


def evaluate_fold(entry: CorpusEntry, models: TrainedModels) -> dict:
    doc = entry.doc
    rb = {v: rb_weights(models.training.mention_pairs, v) for v in ("RB1", "RB2")}
    rbp = {v: rb_weights(models.training.property_pairs, v, "property")
           for v in ("RB1", "RB2")}
    out: dict = {"mentions": {}, "properties": {}}
    for cond, types in (("K", entry.known_types()), ("E", entry.extracted)):
        X = zsl.mention_matrix(doc, types) if types else None
        res = {}
        for method in METHODS:
            preds = _mention_predictions(method, entry, types, X, models, rb) if types else []
            res[method] = eval_mentions(preds, entry.gold.gold_mentions)
        out["mentions"][cond] = res
    P = zsl.property_matrix(doc)
    negatives = negative_chunk_count(doc, entry.gold.gold_property_spans)
    for method in PROPERTY_METHODS:
        model = models.property if method == "ZSL" else rbp[method]
        spans = zsl.identify_property_spans(model, doc, P)
        out["properties"][method] = eval_properties(spans, entry.gold.gold_property_spans,
                                                    negatives)
    return out


def loocv(entries: list[CorpusEntry], config: LoocvConfig | None = None) -> dict:
    """One fold per document: train on the others, test on it."""
    config = config or LoocvConfig()
    if len(entries) < 2:
        raise PipelineError("leave-one-out needs at least two annotated documents")
    folds = []
    for k, held in enumerate(entries):
        rest = [e for i, e in enumerate(entries) if i != k]
        t0 = time.perf_counter()
        try:
            models = train_models(rest, config.seed, config.epochs, config.lam)
        except PipelineError as exc:
            log.error("fold %s failed: %s", held.protocol_id, exc)
            folds.append({"protocol": held.protocol_id, "error": str(exc)})
            continue
        train_seconds = time.perf_counter() - t0
        res = evaluate_fold(held, models)
        folds.append({"protocol": held.protocol_id, "result": res,
                      "train_seconds": train_seconds,
                      "observed_tokens": models.training.observed_tokens,
                      "trained_on": list(models.training.protocols),
                      "weights": models.mention.weights})
        log.info("fold %s trained in %.2fs", held.protocol_id, train_seconds)
    return {"config": config, "folds": folds}


def aggregate(report: dict) -> dict:
    """Micro-averaged totals over successful folds."""
    ok = [f["result"] for f in report["folds"] if "result" in f]
    totals: dict = {"mentions": {}, "properties": {}}
    for cond in ("K", "E"):
        totals["mentions"][cond] = {
            m: sum((r["mentions"][cond][m] for r in ok), MentionMetrics(0, 0, 0))
            for m in METHODS}
    totals["properties"] = {m: sum((r["properties"][m] for r in ok),
                                   PropertyMetrics(0, 0, 0, 0)) for m in PROPERTY_METHODS}
    return totals


def report_to_dict(report: dict) -> dict:
    """JSON-ready metrics; timings and token logs are left out so reruns compare equal."""
    totals = aggregate(report)
    out = {"seed": report["config"].seed, "epochs": report["config"].epochs,
           "protocols": [], "total": {}}
    for f in report["folds"]:
        if "error" in f:
            out["protocols"].append({"protocol": f["protocol"], "error": f["error"]})
            continue
        r = f["result"]
        out["protocols"].append({
            "protocol": f["protocol"],
            "mentions": {c: {m: v.as_dict() for m, v in r["mentions"][c].items()}
                         for c in ("K", "E")},
            "properties": {m: v.as_dict() for m, v in r["properties"].items()},
        })
    out["total"] = {
        "mentions": {c: {m: v.as_dict() for m, v in totals["mentions"][c].items()}
                     for c in ("K", "E")},
        "properties": {m: v.as_dict() for m, v in totals["properties"].items()},
    }
    return out


def render_tables(data: dict) -> str:
    lines = ["Entity mention identification (ZSL classifier, per protocol)",
             f"{'Protocol':<12}{'Prec':>7}{'Recall':>8}{'F1':>7}{'TP':>6}{'FP':>6}"]

    def row(label, d):
        return (f"{label:<12}{d['precision']:>7.2f}{d['recall']:>8.2f}{d['f1']:>7.2f}"
                f"{d['tp']:>6}{d['fp']:>6}")

    for cond in ("K", "E"):
        for p in data["protocols"]:
            if "error" in p:
                lines.append(f"{p['protocol'] + f' ({cond})':<12}  fold failed: {p['error']}")
                continue
            lines.append(row(f"{p['protocol'].upper()} ({cond})", p["mentions"][cond]["ZSL"]))
        lines.append(row(f"Total ({cond})", data["total"]["mentions"][cond]["ZSL"]))
    lines += ["", "Entity mention identification (methods, micro-averaged)",
              f"{'Method':<12}{'Prec':>7}{'Recall':>8}{'F1':>7}{'TP':>6}{'FP':>6}"]
    for cond in ("K", "E"):
        for m, d in data["total"]["mentions"][cond].items():
            lines.append(row(f"{m} ({cond})", d))
    lines += ["", "Property extraction", f"{'Method':<12}{'S-TPR':>7}{'C-FPR':>8}"]
    for m, d in data["total"]["properties"].items():
        lines.append(f"{m:<12}{d['s_tpr']:>7.2f}{d['c_fpr']:>8.2f}")
    return "\n".join(lines) + "\n"
