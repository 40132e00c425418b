"""Zero-shot linkers over binary features.

Two pairwise scorers share one linear model class:

* the mention scorer rates a (field type, chunk) pair;
* the property scorer rates a chunk for expressing any header property.

Neither feature catalog mentions a concrete protocol, so a model trained on
some RFCs can be applied to an RFC whose field names it has never seen.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace

import numpy as np

from rfcfuzz.corpus import STOPWORDS, Chunk, Document, Section
from rfcfuzz.errors import PipelineError
from rfcfuzz.grammar import KIND_PRIORITY, PropertyKind
from rfcfuzz.type_extraction import FieldType, acronym

CATALOG_VERSION = 1
MODEL_FORMAT = "rfcfuzz-linear-model"


class ZSLError(PipelineError):
    stage = "zsl"


class DegenerateTrainingError(ZSLError):
    pass


class CatalogMismatchError(ZSLError):
    pass


class UnassignableKindError(ZSLError):
    pass


class UnresolvedArgumentError(ZSLError):
    pass


class EmptyTypesError(ZSLError):
    pass


MENTION_FEATURES = (
    "exact_match",
    "chunk_in_type",
    "type_in_chunk",
    "jaccard_ge_050",
    "jaccard_ge_075",
    "jaccard_eq_100",
    "edit_sim_ge_080",
    "acronym_match",
    "alias_match",
    "both_title_case",
    "followed_by_field",
    "context_cue",
    "same_token_length",
    "chunk_has_digit",
    "anaphor_in_own_section",
    "type_in_section_title",
    "is_anaphor",
    "lowercase_fragment",
)

CONTEXT_CUES = frozenset({"field", "bits", "header", "value", "set", "contains"})

KEY_PHRASES: dict[PropertyKind, tuple[str, ...]] = {
    PropertyKind.Checksum: ("checksum", "ones complement", "one s complement",
                            "complement sum"),
    PropertyKind.Port: ("port", "port number", "multiplex", "de-multiplex",
                        "identify the connection", "next level protocol"),
    PropertyKind.Multiple: ("multiple of", "in units of", "32-bit words", "32 bit words",
                            "8-octet units", "integral number"),
    PropertyKind.PacketType: ("packet type", "type of the packet", "type of the segment",
                              "type of information", "identifies the type", "synchronize",
                              "reset the connection"),
    PropertyKind.HeaderLength: ("header", "offset from the start", "length of the header",
                                "header length", "where the data begins"),
    PropertyKind.SequenceNumber: ("sequence number", "sequence numbers",
                                  "identifies the packet uniquely", "first data octet"),
    PropertyKind.AcknowledgementNumber: ("acknowledgment number", "acknowledgement number",
                                         "expecting to receive",
                                         "greatest sequence number received", "acknowledges"),
    PropertyKind.PayloadLength: ("payload length", "total length", "length of the datagram",
                                 "payload", "size of the chunk", "length of the data"),
    PropertyKind.WindowFlowControl: ("window", "willing to accept", "flow control",
                                     "buffer space"),
}

PROPERTY_FEATURES = (
    "has_key_token",
    "all_key_tokens",
    "contains_key_phrase",
    "equals_key_phrase",
    "key_ratio_ge_050",
    "sentence_has_key_phrase",
    "sentence_key_tokens_ge_3",
    "in_field_section",
    "first_sentence_of_section",
    "chunk_has_digit",
    "single_token",
    "long_chunk",
    "title_case",
    "is_anaphor",
    "context_has_key_token",
    "multiword_key_phrase",
)

CATALOGS = {"mention": MENTION_FEATURES, "property": PROPERTY_FEATURES}


def _norm_words(words) -> list[str]:
    """Lower-cased words with punctuation and apostrophes dropped, hyphens split."""
    out = []
    for w in words:
        for part in re.split(r"[^0-9a-z]+", w.lower()):
            if part:
                out.append(part)
    return out


_PHRASES = {k: [tuple(_norm_words(p.split())) for p in v] for k, v in KEY_PHRASES.items()}
KEY_TOKENS = frozenset(t for ps in _PHRASES.values() for p in ps for t in p
                       if t not in STOPWORDS)
ALL_PHRASES = sorted({p for ps in _PHRASES.values() for p in ps})


def _contains(seq, sub) -> bool:
    n, m = len(seq), len(sub)
    if m == 0 or m > n:
        return False
    return any(tuple(seq[i:i + m]) == tuple(sub) for i in range(n - m + 1))


def _count_phrase_tokens(words: list[str], phrases) -> int:
    """Tokens covered by occurrences of any phrase in ``words``."""
    covered = set()
    for p in phrases:
        m = len(p)
        for i in range(len(words) - m + 1):
            if tuple(words[i:i + m]) == p:
                covered.update(range(i, i + m))
    return len(covered)


def edit_similarity(a: str, b: str) -> float:
    """1 - Levenshtein(a, b) / max(len)."""
    if a == b:
        return 1.0
    la, lb = len(a), len(b)
    if not la or not lb:
        return 0.0
    prev = list(range(lb + 1))
    for i in range(1, la + 1):
        cur = [i] + [0] * lb
        ca = a[i - 1]
        for j in range(1, lb + 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (ca != b[j - 1]))
        prev = cur
    return 1.0 - prev[lb] / max(la, lb)


@dataclass(frozen=True)
class FeatureVector:
    bits: tuple[int, ...]
    catalog: str = "mention"
    catalog_version: int = CATALOG_VERSION

    def __post_init__(self):
        if len(self.bits) != len(CATALOGS[self.catalog]):
            raise CatalogMismatchError(
                f"{len(self.bits)} bits for {self.catalog} catalog of "
                f"{len(CATALOGS[self.catalog])}")

    def active(self) -> list[str]:
        names = CATALOGS[self.catalog]
        return [names[i] for i, b in enumerate(self.bits) if b]


@dataclass(frozen=True)
class LinearModel:
    weights: tuple[float, ...]  # one per feature, bias last
    margin_threshold: float = 0.0
    catalog: str = "mention"
    catalog_version: int = CATALOG_VERSION
    training_meta: dict = field(default_factory=dict, compare=True, hash=False)

    def __post_init__(self):
        if len(self.weights) != len(CATALOGS[self.catalog]) + 1:
            raise CatalogMismatchError("weight vector does not match catalog size + 1")
        if not all(math.isfinite(w) for w in self.weights):
            raise ZSLError("model weights must be finite")

    @property
    def bias(self) -> float:
        return self.weights[-1]

    @property
    def feature_names(self) -> tuple[str, ...]:
        return CATALOGS[self.catalog]


@dataclass(frozen=True)
class Mention:
    chunk: Chunk
    entity: FieldType
    score: float


@dataclass(frozen=True)
class PropertySpan:
    chunk: Chunk
    score: float
    kind: PropertyKind | None = None
    argument: FieldType | None = None


# -- mention features ---------------------------------------------------------

@dataclass(frozen=True)
class _TypeView:
    name_l: str
    toks: tuple[str, ...]
    tokset: frozenset
    initials: str | None
    aliases: frozenset
    title_case: bool


def _title_case(words) -> bool:
    alpha = [w for w in words if w[:1].isalpha()]
    return bool(alpha) and all(w[0].isupper() for w in alpha)


def _type_view(t: FieldType) -> _TypeView:
    toks = tuple(w.lower() for w in t.tokens)
    acr = acronym(t.name)
    return _TypeView(t.name.lower(), toks, frozenset(toks), acr,
                     frozenset(a for a in t.aliases if a != t.name), _title_case(t.tokens))


def _section_title(doc: Document, chunk: Chunk) -> str:
    return doc.sections[chunk.section_index].title.lower()


def _chunk_view(doc: Document, chunk: Chunk) -> dict:
    words = doc.sentences[chunk.sentence_index].words()
    lo, hi = chunk.token_span
    ctx = doc.context(chunk)
    toks = tuple(w.lower() for w in chunk.tokens)
    return {
        "text": chunk.text.lower(),
        "surface": chunk.text,
        "toks": toks,
        "tokset": frozenset(toks),
        "title_case": _title_case(chunk.tokens),
        "lower": chunk.text == chunk.text.lower(),
        "followed_by_field": hi < len(words) and words[hi].lower() in ("field", "fields"),
        "context_cue": any(w.lower() in CONTEXT_CUES for w in ctx),
        "digit": any(ch.isdigit() for ch in chunk.text),
        "anaphor": chunk.is_anaphor,
        "section_title": _section_title(doc, chunk),
    }


def _mention_bits(tv: _TypeView, cv: dict) -> tuple[int, ...]:
    ctoks, ttoks = cv["toks"], tv.toks
    exact = cv["text"] == tv.name_l
    union = len(cv["tokset"] | tv.tokset)
    jac = len(cv["tokset"] & tv.tokset) / union if union else 0.0
    if abs(len(cv["text"]) - len(tv.name_l)) <= 0.2 * max(len(cv["text"]), len(tv.name_l)):
        edit = edit_similarity(cv["text"], tv.name_l) >= 0.8
    else:
        edit = False
    in_title = bool(re.search(r"(?<!\w)" + re.escape(tv.name_l) + r"(?!\w)",
                              cv["section_title"]))
    return (
        int(exact),
        int(_contains(ttoks, ctoks)),
        int(_contains(ctoks, ttoks)),
        int(jac >= 0.5),
        int(jac >= 0.75),
        int(jac == 1.0),
        int(edit),
        int(tv.initials is not None and cv["surface"] == tv.initials),
        int(cv["surface"] in tv.aliases),
        int(cv["title_case"] and tv.title_case),
        int(cv["followed_by_field"]),
        int(cv["context_cue"]),
        int(len(ctoks) == len(ttoks)),
        int(cv["digit"]),
        int(cv["anaphor"] and in_title),
        int(in_title),
        int(cv["anaphor"]),
        int(not exact and cv["lower"] and _contains(ttoks, ctoks) and tv.title_case),
    )


def featurize_mention(entity: FieldType, chunk: Chunk, doc: Document) -> FeatureVector:
    return FeatureVector(_mention_bits(_type_view(entity), _chunk_view(doc, chunk)))


def mention_matrix(doc: Document, types: list[FieldType],
                   chunks: list[Chunk] | None = None) -> np.ndarray:
    """Array of shape (n_chunks, n_types, n_features)."""
    chunks = doc.chunks if chunks is None else chunks
    tvs = [_type_view(t) for t in types]
    out = np.zeros((len(chunks), len(types), len(MENTION_FEATURES)), dtype=np.int8)
    for i, c in enumerate(chunks):
        cv = _chunk_view(doc, c)
        for j, tv in enumerate(tvs):
            out[i, j] = _mention_bits(tv, cv)
    return out


# -- property features --------------------------------------------------------

_FIELD_SIZE_TITLE = re.compile(r"\d+\s*(?:bits?|bytes?|octets?)\b|\(\d+|\bfield\b", re.I)


def _in_field_section(sec: Section) -> bool:
    return sec.kind in ("field", "deflist") or bool(_FIELD_SIZE_TITLE.search(sec.title))


def _sentence_view(doc: Document, sent_index: int) -> dict:
    sent = doc.sentences[sent_index]
    words = _norm_words(sent.words())
    sec = doc.sections[sent.section_index]
    return {
        "words": words,
        "has_phrase": any(_contains(words, p) for p in ALL_PHRASES),
        "key_count": _count_phrase_tokens(words, ALL_PHRASES),
        "field_section": _in_field_section(sec),
        "first": bool(sec.body_sentences) and sec.body_sentences[0].index == sent_index,
    }


def _property_bits(doc: Document, chunk: Chunk, sv: dict) -> tuple[int, ...]:
    words = _norm_words(chunk.tokens)
    content = [w for w in words if w not in STOPWORDS]
    keyed = [w for w in content if w in KEY_TOKENS]
    phrases = [p for p in ALL_PHRASES if _contains(words, p)]
    ctx = _norm_words(doc.context(chunk))
    return (
        int(bool(keyed)),
        int(bool(content) and len(keyed) == len(content)),
        int(bool(phrases)),
        int(tuple(words) in ALL_PHRASES),
        int(bool(content) and len(keyed) / len(content) >= 0.5),
        int(sv["has_phrase"]),
        int(sv["key_count"] >= 3),
        int(sv["field_section"]),
        int(sv["first"]),
        int(any(ch.isdigit() for ch in chunk.text)),
        int(len(chunk.tokens) == 1),
        int(len(chunk.tokens) >= 4),
        int(_title_case(chunk.tokens)),
        int(chunk.is_anaphor),
        int(any(w in KEY_TOKENS for w in ctx)),
        int(any(len(p) > 1 for p in phrases)),
    )


def featurize_property(chunk: Chunk, doc: Document) -> FeatureVector:
    return FeatureVector(_property_bits(doc, chunk, _sentence_view(doc, chunk.sentence_index)),
                         catalog="property")


def property_matrix(doc: Document, chunks: list[Chunk] | None = None) -> np.ndarray:
    chunks = doc.chunks if chunks is None else chunks
    cache: dict[int, dict] = {}
    out = np.zeros((len(chunks), len(PROPERTY_FEATURES)), dtype=np.int8)
    for i, c in enumerate(chunks):
        sv = cache.get(c.sentence_index)
        if sv is None:
            sv = cache[c.sentence_index] = _sentence_view(doc, c.sentence_index)
        out[i] = _property_bits(doc, c, sv)
    return out


# -- training and scoring -----------------------------------------------------

def train(pairs, seed: int = 0, epochs: int = 50, catalog: str = "mention",
          lam: float = 1e-3, balanced: bool = True, meta: dict | None = None) -> LinearModel:
    """Fit a linear max-margin classifier by seeded subgradient descent on hinge loss.

    ``pairs`` is a sequence of (FeatureVector or bit array, label in {+1, -1}).
    The bias is not regularized. With ``balanced`` each class contributes equal
    total weight, which matters for the heavily skewed negative pools.
    """
    if not pairs:
        raise DegenerateTrainingError("no training pairs")
    X = np.array([p[0].bits if isinstance(p[0], FeatureVector) else p[0] for p in pairs],
                 dtype=float)
    y = np.array([p[1] for p in pairs], dtype=float)
    if X.shape[1] != len(CATALOGS[catalog]):
        raise CatalogMismatchError(f"pairs have {X.shape[1]} features, catalog "
                                   f"{catalog} has {len(CATALOGS[catalog])}")
    n_pos = int((y > 0).sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateTrainingError("training pairs contain a single class")
    if balanced:
        cw = np.where(y > 0, len(y) / (2 * n_pos), len(y) / (2 * n_neg))
    else:
        cw = np.ones_like(y)
    Xb = np.hstack([X, np.ones((len(y), 1))])
    w = np.zeros(Xb.shape[1])
    reg = np.ones_like(w)
    reg[-1] = 0.0
    rng = np.random.default_rng(seed)
    t = 0
    t0 = 1.0 / lam
    for _ in range(epochs):
        for i in rng.permutation(len(y)):
            t += 1
            eta = 1.0 / (lam * (t + t0))
            grad = lam * reg * w
            if y[i] * (Xb[i] @ w) < 1.0:
                grad = grad - cw[i] * y[i] * Xb[i]
            w = w - eta * grad
    info = {"seed": seed, "epochs": epochs, "lambda": lam, "n_pos": n_pos, "n_neg": n_neg}
    info.update(meta or {})
    return LinearModel(tuple(float(v) for v in w), 0.0, catalog, CATALOG_VERSION, info)


def score(model: LinearModel, fv) -> float:
    if isinstance(fv, FeatureVector):
        if fv.catalog != model.catalog or fv.catalog_version != model.catalog_version:
            raise CatalogMismatchError(
                f"feature vector ({fv.catalog} v{fv.catalog_version}) does not match model "
                f"({model.catalog} v{model.catalog_version})")
        bits = fv.bits
    else:
        bits = fv
    if len(bits) != len(model.weights) - 1:
        raise CatalogMismatchError("feature vector length does not match model")
    return float(np.dot(np.asarray(bits, dtype=float), model.weights[:-1]) + model.bias)


def score_matrix(model: LinearModel, X: np.ndarray) -> np.ndarray:
    w = np.asarray(model.weights)
    if X.shape[-1] != len(w) - 1:
        raise CatalogMismatchError("feature matrix does not match model")
    return X.astype(float) @ w[:-1] + w[-1]


def resolve_overlaps(items, key_span, key_score):
    """Greedy non-overlapping selection: best score, then longer span, then earlier."""
    def order(it):
        s, e = key_span(it)
        return (-key_score(it), -(e - s), s)

    kept = []
    taken: list[tuple[int, int]] = []
    for it in sorted(items, key=order):
        s, e = key_span(it)
        if any(s < te and ts < e for ts, te in taken):
            continue
        kept.append(it)
        taken.append((s, e))
    kept.sort(key=lambda it: key_span(it))
    return kept


def mentions_from_scores(doc: Document, types: list[FieldType], scores: np.ndarray,
                         threshold: float) -> list[Mention]:
    best = scores.argmax(axis=1)  # first index wins ties
    cands = []
    for i, c in enumerate(doc.chunks):
        j = int(best[i])
        s = float(scores[i, j])
        if s >= threshold:
            cands.append(Mention(c, types[j], s))
    return resolve_overlaps(cands, lambda m: m.chunk.char_span, lambda m: m.score)


def identify_mentions(model: LinearModel, doc: Document, types: list[FieldType],
                      features: np.ndarray | None = None) -> list[Mention]:
    if not types:
        raise EmptyTypesError("identify_mentions needs at least one field type")
    X = mention_matrix(doc, types) if features is None else features
    return mentions_from_scores(doc, types, score_matrix(model, X), model.margin_threshold)


def identify_property_spans(model: LinearModel, doc: Document,
                            features: np.ndarray | None = None) -> list[PropertySpan]:
    X = property_matrix(doc) if features is None else features
    s = score_matrix(model, X)
    return [PropertySpan(c, float(s[i])) for i, c in enumerate(doc.chunks)
            if s[i] >= model.margin_threshold]


def kind_overlaps(sentence_words) -> dict[PropertyKind, int]:
    words = _norm_words(sentence_words)
    return {k: _count_phrase_tokens(words, _PHRASES[k]) for k in KIND_PRIORITY}


def assign_property_kind(span: PropertySpan, doc: Document) -> PropertyKind:
    counts = kind_overlaps(doc.sentences[span.chunk.sentence_index].words())
    best = max(counts.values())
    if best == 0:
        raise UnassignableKindError(f"no key phrase near {span.chunk.text!r}")
    return next(k for k in KIND_PRIORITY if counts[k] == best)


def resolve_property_argument(span: PropertySpan, sections: list[Section],
                              types: list[FieldType]) -> FieldType:
    index: int | None = span.chunk.section_index
    while index is not None:
        sec = sections[index]
        title = sec.title.lower()
        named = [t for t in types
                 if re.search(r"(?<!\w)" + re.escape(t.name.lower()) + r"(?!\w)", title)]
        if named:
            return max(named, key=lambda t: len(t.name))
        owned = [t for t in types if t.source_section == index]
        if owned:
            return owned[0]
        index = sec.parent
    raise UnresolvedArgumentError(f"no field type owns the section of {span.chunk.text!r}")


def extract_properties(model: LinearModel, doc: Document, types: list[FieldType]):
    """Flag, label and anchor property spans; returns (resolved spans, dropped count)."""
    out = []
    dropped = 0
    for span in identify_property_spans(model, doc):
        try:
            kind = assign_property_kind(span, doc)
            arg = resolve_property_argument(span, doc.sections, types)
        except (UnassignableKindError, UnresolvedArgumentError):
            dropped += 1
            continue
        out.append(replace(span, kind=kind, argument=arg))
    return out, dropped


def property_tuples(spans: list[PropertySpan], doc: Document):
    """(kind, field) tuples scored by key-phrase overlap plus bounded span confidence.

    The overlap count dominates; the classifier score, squashed into [0, 1),
    only orders tuples with equal overlap.
    """
    from rfcfuzz.grammar import PropertyTuple

    out = []
    for span in spans:
        sent = doc.sentences[span.chunk.sentence_index]
        weight = kind_overlaps(sent.words())[span.kind]
        conf = max(span.score, 0.0)
        out.append(PropertyTuple(span.kind, span.argument.name, weight + conf / (1.0 + conf),
                                 "extracted", span.chunk.char_span, " ".join(sent.words())))
    return out


# -- model files --------------------------------------------------------------

def model_to_json(model: LinearModel) -> str:
    data = {
        "format": MODEL_FORMAT,
        "catalog": model.catalog,
        "catalog_version": model.catalog_version,
        "feature_names": list(model.feature_names) + ["bias"],
        "weights": list(model.weights),
        "margin_threshold": model.margin_threshold,
        "training_meta": model.training_meta,
    }
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def model_from_json(text: str) -> LinearModel:
    data = json.loads(text)
    if data.get("format") != MODEL_FORMAT:
        raise ZSLError("not a model file")
    catalog = data["catalog"]
    if data["catalog_version"] != CATALOG_VERSION or \
            data["feature_names"] != list(CATALOGS[catalog]) + ["bias"]:
        raise CatalogMismatchError("model file was written for a different feature catalog")
    return LinearModel(tuple(float(w) for w in data["weights"]),
                       float(data["margin_threshold"]), catalog, data["catalog_version"],
                       data.get("training_meta", {}))


def save_model(model: LinearModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(model_to_json(model))


def load_model(path) -> LinearModel:
    with open(path) as fh:
        return model_from_json(fh.read())
