"""Data model for segmented support questions.

Questions are whitespace-tokenized, and non-natural-language regions are
stored as half-open token spans with one of six labels (CC, CO, ES, FC,
SS, PU).  Everything outside a span is implicitly "O".  This module owns
the BIO codec, JSONL corpus I/O, corpus statistics, deterministic
splitting, and word-level inter-annotator agreement.
"""

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction

import numpy as np


class CorpusError(Exception):
    pass


class OverlappingSpans(CorpusError):
    pass


class IndexOutOfRange(CorpusError):
    pass


class ParseError(CorpusError):
    def __init__(self, line_no, msg):
        super().__init__(f"line {line_no}: {msg}")
        self.line_no = line_no


class SchemaError(CorpusError):
    def __init__(self, missing_field, line_no=None):
        where = f" (line {line_no})" if line_no is not None else ""
        super().__init__(f"missing field {missing_field!r}{where}")
        self.missing_field = missing_field
        self.line_no = line_no


class BadRatios(CorpusError):
    pass


class EmptyCorpus(CorpusError):
    pass


class MismatchedDocuments(CorpusError):
    pass


class Break(str, Enum):
    """Kind of whitespace preceding a token."""

    NONE = "n"
    SPACE = "s"
    NEWLINE = "nl"


class SegmentLabel(str, Enum):
    CC = "CC"  # command / code
    CO = "CO"  # command output
    ES = "ES"  # error message / stack trace
    FC = "FC"  # file content
    SS = "SS"  # semi-structured information
    PU = "PU"  # path / URL


LABELS = list(SegmentLabel)

# Fixed tag order; index 0 is O so that zero-score ties decode to O.
BIO_TAGS = ["O"] + [f"{p}-{l.value}" for l in LABELS for p in ("B", "I")]
TAG_INDEX = {t: i for i, t in enumerate(BIO_TAGS)}
N_TAGS = len(BIO_TAGS)  # 13


@dataclass(frozen=True)
class Token:
    text: str
    start: int  # offset into the document text (inclusive)
    end: int  # offset (exclusive)
    preceding_break: Break = Break.NONE


@dataclass(frozen=True)
class SegmentSpan:
    start_token: int  # inclusive
    end_token: int  # exclusive
    label: SegmentLabel

    def __post_init__(self):
        if not self.start_token < self.end_token:
            raise IndexOutOfRange(
                f"empty or inverted span ({self.start_token}, {self.end_token})"
            )


@dataclass
class AnnotatedDocument:
    id: str
    text: str
    tokens: list = field(default_factory=list)
    spans: list = field(default_factory=list)

    def validate(self):
        n = len(self.tokens)
        for sp in self.spans:
            if sp.end_token > n or sp.start_token < 0:
                raise IndexOutOfRange(f"span {sp} outside 0..{n}")
        _check_no_overlap(self.spans)

    def token_texts(self):
        return [t.text for t in self.tokens]


@dataclass
class CorpusStats:
    question_count: int
    avg_words: Fraction
    avg_spans_total: Fraction
    avg_spans_per_label: dict


@dataclass
class AgreementReport:
    kappa: float
    confusion: np.ndarray  # 7x7, rows = annotator a, cols = annotator b
    class_names: list = field(default_factory=lambda: ["O"] + [l.value for l in LABELS])


def _check_no_overlap(spans):
    ordered = sorted(spans, key=lambda s: s.start_token)
    for a, b in zip(ordered, ordered[1:]):
        if b.start_token < a.end_token:
            raise OverlappingSpans(f"{a} overlaps {b}")


def tokenize(text):
    """Whitespace tokenization with offsets and preceding-break kinds.

    Any maximal run of non-whitespace characters becomes one token.  The
    break kind records whether the whitespace gap before the token
    contained a newline (used by the sentence baseline).
    """
    tokens = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace():
            j += 1
        gap_start = tokens[-1].end if tokens else 0
        gap = text[gap_start:i]
        if not gap and not tokens:
            brk = Break.NONE
        elif "\n" in gap or "\r" in gap:
            brk = Break.NEWLINE
        elif gap:
            brk = Break.SPACE
        else:
            brk = Break.NONE
        tokens.append(Token(text[i:j], i, j, brk))
        i = j
    return tokens


def spans_to_bio(doc):
    """Project a document's spans to a per-token BIO tag sequence."""
    n = len(doc.tokens)
    for sp in doc.spans:
        if sp.start_token < 0 or sp.end_token > n:
            raise IndexOutOfRange(f"span {sp} outside 0..{n}")
    _check_no_overlap(doc.spans)
    tags = ["O"] * n
    for sp in doc.spans:
        tags[sp.start_token] = f"B-{sp.label.value}"
        for k in range(sp.start_token + 1, sp.end_token):
            tags[k] = f"I-{sp.label.value}"
    return tags


def bio_to_spans(tags):
    """Decode BIO tags to spans.

    Accepts ill-formed sequences: a stray I-X (not continuing a B-X/I-X
    run) is repaired to B-X.
    """
    spans = []
    cur_start, cur_label = None, None

    def close():
        nonlocal cur_start, cur_label
        if cur_label is not None:
            spans.append(SegmentSpan(cur_start, i, SegmentLabel(cur_label)))
            cur_start, cur_label = None, None

    for i, tag in enumerate(tags):
        if tag == "O":
            close()
        else:
            prefix, label = tag.split("-", 1)
            if prefix == "B" or label != cur_label:
                close()
                cur_start, cur_label = i, label
    i = len(tags)
    close()
    return spans


def doc_to_json(doc):
    return {
        "id": doc.id,
        "text": doc.text,
        "tokens": [
            {"t": t.text, "s": t.start, "e": t.end, "brk": t.preceding_break.value}
            for t in doc.tokens
        ],
        "spans": [
            {"st": s.start_token, "et": s.end_token, "label": s.label.value}
            for s in doc.spans
        ],
    }


_DOC_FIELDS = ("id", "text", "tokens", "spans")


def doc_from_json(obj, line_no=None):
    for f in _DOC_FIELDS:
        if f not in obj:
            raise SchemaError(f, line_no)
    tokens = []
    for t in obj["tokens"]:
        for f in ("t", "s", "e", "brk"):
            if f not in t:
                raise SchemaError(f"tokens.{f}", line_no)
        tokens.append(Token(t["t"], t["s"], t["e"], Break(t["brk"])))
    spans = []
    for s in obj["spans"]:
        for f in ("st", "et", "label"):
            if f not in s:
                raise SchemaError(f"spans.{f}", line_no)
        spans.append(SegmentSpan(s["st"], s["et"], SegmentLabel(s["label"])))
    doc = AnnotatedDocument(obj["id"], obj["text"], tokens, spans)
    doc.validate()
    return doc


def load_corpus(path):
    docs = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(line_no, str(exc)) from exc
            docs.append(doc_from_json(obj, line_no))
    return docs


def save_corpus(docs, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(json.dumps(doc_to_json(doc), ensure_ascii=False))
            fh.write("\n")


def split_corpus(docs, ratios=(0.8, 0.1, 0.1), seed=0):
    """Deterministic random partition into train/val/test.

    Train and val sizes are floors of their ratios; test takes the
    remainder (matching a 1317-document corpus splitting 1053/131/133).
    """
    r_train, r_val, r_test = ratios
    if min(ratios) <= 0 or abs(sum(ratios) - 1.0) > 1e-9:
        raise BadRatios(f"ratios must be positive and sum to 1, got {ratios}")
    order = list(range(len(docs)))
    random.Random(seed).shuffle(order)
    n = len(docs)
    n_train = int(n * r_train)
    n_val = int(n * r_val)
    train = [docs[i] for i in order[:n_train]]
    val = [docs[i] for i in order[n_train : n_train + n_val]]
    test = [docs[i] for i in order[n_train + n_val :]]
    return train, val, test


def corpus_stats(docs):
    """Exact (rational) per-question averages of word and span counts."""
    if not docs:
        raise EmptyCorpus("no documents")
    n = len(docs)
    words = sum(len(d.tokens) for d in docs)
    per_label = {}
    for lab in LABELS:
        per_label[lab] = Fraction(
            sum(sum(1 for s in d.spans if s.label == lab) for d in docs), n
        )
    total = sum(per_label.values(), Fraction(0))
    return CorpusStats(n, Fraction(words, n), total, per_label)


def token_labels(doc):
    """Per-token class names ("O" or a segment label) for agreement counting."""
    out = ["O"] * len(doc.tokens)
    for sp in doc.spans:
        for k in range(sp.start_token, sp.end_token):
            out[k] = sp.label.value
    return out


def kappa_from_confusion(confusion):
    total = confusion.sum()
    if total == 0:
        raise EmptyCorpus("empty confusion matrix")
    p_o = np.trace(confusion) / total
    p_e = float(np.dot(confusion.sum(axis=1), confusion.sum(axis=0))) / total**2
    if p_e >= 1.0:
        return 1.0 if p_o >= 1.0 else 0.0
    return float((p_o - p_e) / (1.0 - p_e))


def agreement(docs_a, docs_b):
    """Word-level agreement between two annotations of the same questions."""
    by_id = {d.id: d for d in docs_b}
    classes = ["O"] + [l.value for l in LABELS]
    idx = {c: i for i, c in enumerate(classes)}
    confusion = np.zeros((7, 7), dtype=np.int64)
    for da in docs_a:
        db = by_id.get(da.id)
        if db is None:
            raise MismatchedDocuments(f"document {da.id!r} missing from second annotation")
        if da.token_texts() != db.token_texts():
            raise MismatchedDocuments(f"document {da.id!r} tokenized differently")
        for x, y in zip(token_labels(da), token_labels(db)):
            confusion[idx[x], idx[y]] += 1
    if len(docs_a) != len(docs_b):
        raise MismatchedDocuments("annotation lists differ in length")
    return AgreementReport(kappa_from_confusion(confusion), confusion, classes)
