"""Proportional-overlap (soft) precision/recall/F1 over labelled spans.

A predicted span gets partial credit for the fraction of a gold span's
tokens it covers, provided the labels match.  Scores can be pooled over
documents (micro) or averaged per document (macro), and broken down per
label.
"""

import json
from dataclasses import dataclass, field

from .corpus import LABELS


class MetricsError(Exception):
    pass


class OverlapWithinSet(MetricsError):
    pass


@dataclass
class PRF:
    precision: float
    recall: float

    @property
    def f1(self):
        p, r = self.precision, self.recall
        return 0.0 if p + r == 0 else 2 * p * r / (p + r)


@dataclass
class EvalReport:
    micro: PRF
    per_label: dict
    n_gold: int
    n_pred: int

    def to_json_obj(self):
        return {
            "micro": {
                "P": self.micro.precision,
                "R": self.micro.recall,
                "F1": self.micro.f1,
            },
            "per_label": {
                lab.value: {"P": prf.precision, "R": prf.recall, "F1": prf.f1}
                for lab, prf in self.per_label.items()
            },
            "n_gold": self.n_gold,
            "n_pred": self.n_pred,
        }

    def to_json(self):
        return json.dumps(self.to_json_obj(), indent=2)

    def to_table(self):
        lines = [f"{'label':<8}{'P':>9}{'R':>9}{'F1':>9}"]
        for lab, prf in self.per_label.items():
            lines.append(
                f"{lab.value:<8}{prf.precision:>9.4f}{prf.recall:>9.4f}{prf.f1:>9.4f}"
            )
        m = self.micro
        lines.append(f"{'micro':<8}{m.precision:>9.4f}{m.recall:>9.4f}{m.f1:>9.4f}")
        return "\n".join(lines)


def _normalize(gold_sets, pred_sets):
    """Accept a single (gold, pred) span-list pair or parallel lists of
    per-document span lists."""
    flat = any(
        seq and not isinstance(seq[0], list) for seq in (gold_sets, pred_sets)
    )
    if flat or (not gold_sets and not pred_sets):
        return [list(gold_sets)], [list(pred_sets)]
    return gold_sets, pred_sets


def span_coverage(s, s_prime):
    """How well s' is covered by s: shared-token fraction of s', or 0 on
    label mismatch."""
    if s.label != s_prime.label:
        return 0.0
    inter = min(s.end_token, s_prime.end_token) - max(s.start_token, s_prime.start_token)
    if inter <= 0:
        return 0.0
    return inter / (s_prime.end_token - s_prime.start_token)


def _check_disjoint(spans):
    ordered = sorted(spans, key=lambda s: s.start_token)
    for a, b in zip(ordered, ordered[1:]):
        if b.start_token < a.end_token:
            raise OverlapWithinSet(f"{a} overlaps {b}")


def span_set_coverage(spans, spans_prime):
    _check_disjoint(spans)
    _check_disjoint(spans_prime)
    return sum(span_coverage(s, sp) for s in spans for sp in spans_prime)


def _pr(gold, pred):
    # Empty-set conventions: precision is vacuously 1 with no predictions,
    # recall vacuously 1 with no gold.
    if not pred:
        p = 1.0
    else:
        p = span_set_coverage(gold, pred) / len(pred)
    if not gold:
        r = 1.0
    else:
        r = span_set_coverage(pred, gold) / len(gold)
    return PRF(p, r)


def soft_pr(gold_sets, pred_sets, macro=False):
    """Evaluate predicted span sets against gold, one pair per document.

    Accepts either a single pair of span lists or parallel lists of
    per-document span lists.  Micro pools spans across documents before
    scoring; macro averages per-document P/R.
    """
    gold_sets, pred_sets = _normalize(gold_sets, pred_sets)
    if len(gold_sets) != len(pred_sets):
        raise MetricsError("gold and predicted lists must be parallel")
    for g, p in zip(gold_sets, pred_sets):
        _check_disjoint(g)
        _check_disjoint(p)

    # Pool with per-document offsets so spans from different documents
    # never intersect.
    pooled_g, pooled_p = [], []
    offset = 0
    for g, p in zip(gold_sets, pred_sets):
        hi = max([s.end_token for s in g + p], default=0)
        pooled_g += [_shift(s, offset) for s in g]
        pooled_p += [_shift(s, offset) for s in p]
        offset += hi

    if macro:
        prs = [_pr(g, p) for g, p in zip(gold_sets, pred_sets)]
        micro = PRF(
            sum(x.precision for x in prs) / len(prs),
            sum(x.recall for x in prs) / len(prs),
        )
    else:
        micro = _pr(pooled_g, pooled_p)

    per_label = {}
    for lab in LABELS:
        if macro:
            prs = [
                _pr([s for s in g if s.label == lab], [s for s in p if s.label == lab])
                for g, p in zip(gold_sets, pred_sets)
            ]
            per_label[lab] = PRF(
                sum(x.precision for x in prs) / len(prs),
                sum(x.recall for x in prs) / len(prs),
            )
        else:
            per_label[lab] = _pr(
                [s for s in pooled_g if s.label == lab],
                [s for s in pooled_p if s.label == lab],
            )

    n_gold = sum(len(g) for g in gold_sets)
    n_pred = sum(len(p) for p in pred_sets)
    return EvalReport(micro, per_label, n_gold, n_pred)


def _shift(span, offset):
    return type(span)(span.start_token + offset, span.end_token + offset, span.label)


def exact_match_pr(gold_sets, pred_sets):
    """Exact span match P/R (a lower bound on the soft scores)."""
    gold_sets, pred_sets = _normalize(gold_sets, pred_sets)
    tp = sum(
        len(set(map(_key, g)) & set(map(_key, p)))
        for g, p in zip(gold_sets, pred_sets)
    )
    n_pred = sum(len(p) for p in pred_sets)
    n_gold = sum(len(g) for g in gold_sets)
    p = 1.0 if n_pred == 0 else tp / n_pred
    r = 1.0 if n_gold == 0 else tp / n_gold
    return PRF(p, r)


def _key(s):
    return (s.start_token, s.end_token, s.label)
