"""Set-based exact-match scoring with stratified and component breakdowns.

Predictions and gold are compared as sets of (entity1, entity2, relation)
surface triples: a tuple counts only if both full entity strings and the
relation match exactly.  Empty prediction sets score precision 0 by
convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from jere.data import EPO, NEO, SEO, RelationTuple, SurfaceTriple, overlap_classes_from_pairs


def as_triple(obj) -> SurfaceTriple:
    if isinstance(obj, RelationTuple):
        return obj.surface
    e1, e2, rel = obj
    return (str(e1), str(e2), str(rel))


def as_triple_set(objs: Iterable) -> frozenset[SurfaceTriple]:
    return frozenset(as_triple(o) for o in objs)


@dataclass
class ScoreReport:
    precision: float
    recall: float
    f1: float
    tp: int
    fp: int
    fn: int
    per_overlap: dict[str, "ScoreReport"] = field(default_factory=dict)
    per_bucket: dict[str, "ScoreReport"] = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"precision": self.precision, "recall": self.recall, "f1": self.f1,
               "tp": self.tp, "fp": self.fp, "fn": self.fn}
        if self.per_overlap:
            out["per_overlap"] = {k: v.to_json() for k, v in self.per_overlap.items()}
        if self.per_bucket:
            out["per_bucket"] = {k: v.to_json() for k, v in self.per_bucket.items()}
        return out


def _prf(tp: int, fp: int, fn: int) -> ScoreReport:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return ScoreReport(precision, recall, f1, tp, fp, fn)


def _micro(pairs: Sequence[tuple[frozenset, frozenset]]) -> ScoreReport:
    tp = sum(len(p & g) for p, g in pairs)
    fp = sum(len(p - g) for p, g in pairs)
    fn = sum(len(g - p) for p, g in pairs)
    return _prf(tp, fp, fn)


def _bucket(k: int) -> str:
    return "5+" if k >= 5 else str(k)


def score(preds: Sequence[Iterable], golds: Sequence[Iterable]) -> ScoreReport:
    """Micro-averaged exact-match P/R/F1, stratified by overlap class and
    gold tuple count."""
    if len(preds) != len(golds):
        raise ValueError(f"mismatched sentence counts: {len(preds)} predictions "
                         f"vs {len(golds)} golds")
    pairs = [(as_triple_set(p), as_triple_set(g)) for p, g in zip(preds, golds)]
    report = _micro(pairs)
    strata: dict[str, list] = {NEO: [], EPO: [], SEO: []}
    buckets: dict[str, list] = {}
    for pair in pairs:
        gold = pair[1]
        if not gold:
            continue
        for cls in overlap_classes_from_pairs([(e1, e2) for e1, e2, _ in gold]):
            strata[cls].append(pair)
        buckets.setdefault(_bucket(len(gold)), []).append(pair)
    report.per_overlap = {cls: _micro(ps) for cls, ps in strata.items() if ps}
    report.per_bucket = {b: _micro(ps) for b, ps in sorted(buckets.items())}
    return report


def component_scores(preds: Sequence[Iterable],
                     golds: Sequence[Iterable]) -> tuple[ScoreReport, ScoreReport]:
    """Entity-only and relation-only sub-scores.

    Per sentence, the entity side compares the deduplicated set of entity
    strings appearing in any tuple; the relation side compares the set of
    relations appearing in any tuple.
    """
    if len(preds) != len(golds):
        raise ValueError("mismatched sentence counts")
    ent_pairs, rel_pairs = [], []
    for p, g in zip(preds, golds):
        pt, gt = as_triple_set(p), as_triple_set(g)
        ent_pairs.append((frozenset(e for t in pt for e in t[:2]),
                          frozenset(e for t in gt for e in t[:2])))
        rel_pairs.append((frozenset(t[2] for t in pt), frozenset(t[2] for t in gt)))
    return _micro(ent_pairs), _micro(rel_pairs)


@dataclass
class ErrorBreakdown:
    """Error categories as percentages of all predictions.

    For a wrong prediction (e1, e2, r): `order` when the gold set holds the
    swapped (e2, e1, r); `ent1` when some gold (g1, e2, r) differs only in
    the first entity; `ent2` symmetrically.  Categories can co-occur.
    """

    order: float
    ent1: float
    ent2: float
    total_predictions: int

    def to_json(self) -> dict:
        return {"order": self.order, "ent1": self.ent1, "ent2": self.ent2,
                "total_predictions": self.total_predictions}


def error_breakdown(preds: Sequence[Iterable], golds: Sequence[Iterable]) -> ErrorBreakdown:
    if len(preds) != len(golds):
        raise ValueError("mismatched sentence counts")
    order = ent1 = ent2 = total = 0
    for p, g in zip(preds, golds):
        pt, gt = as_triple_set(p), as_triple_set(g)
        total += len(pt)
        for e1, e2, rel in pt - gt:
            if (e2, e1, rel) in gt:
                order += 1
            if any(g1 != e1 for g1, g2, r in gt if g2 == e2 and r == rel):
                ent1 += 1
            if any(g2 != e2 for g1, g2, r in gt if g1 == e1 and r == rel):
                ent2 += 1
    pct = (lambda c: 100.0 * c / total) if total else (lambda c: 0.0)
    return ErrorBreakdown(order=pct(order), ent1=pct(ent1), ent2=pct(ent2),
                          total_predictions=total)


def format_report(report: ScoreReport, entity: ScoreReport | None = None,
                  relation: ScoreReport | None = None,
                  errors: ErrorBreakdown | None = None) -> str:
    """Aligned plain-text table of one evaluation."""
    rows = [("tuples", report)]
    if entity is not None:
        rows.append(("entities", entity))
    if relation is not None:
        rows.append(("relations", relation))
    for name, sub in sorted(report.per_overlap.items()):
        rows.append((f"overlap {name}", sub))
    for name, sub in sorted(report.per_bucket.items()):
        rows.append((f"{name} tuple(s)", sub))
    width = max(len(name) for name, _ in rows)
    lines = [f"{'':{width}}  prec   rec    f1     tp    fp    fn"]
    for name, r in rows:
        lines.append(f"{name:{width}}  {r.precision:.3f}  {r.recall:.3f}  "
                     f"{r.f1:.3f}  {r.tp:>4}  {r.fp:>4}  {r.fn:>4}")
    if errors is not None:
        lines.append(f"errors: order {errors.order:.1f}%  ent1 {errors.ent1:.1f}%  "
                     f"ent2 {errors.ent2:.1f}%  of {errors.total_predictions} predictions")
    return "\n".join(lines)
