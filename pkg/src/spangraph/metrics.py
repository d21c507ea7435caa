"""Micro-averaged precision/recall/F1 for entities and relations.

An entity counts as correct when boundaries and type all match.  A relation
counts as correct when both argument boundaries, the direction and the
relation type match; the strict variant additionally requires the argument
entity types to match.  All scores pool true positives and totals over the
whole corpus before computing ratios (micro averaging), and predictions are
compared as sets, so duplicates never score twice.
"""

from __future__ import annotations

from dataclasses import dataclass

from .graph import IEGraph


@dataclass(frozen=True)
class Counts:
    tp: int = 0
    n_pred: int = 0
    n_gold: int = 0

    def __add__(self, other: "Counts") -> "Counts":
        return Counts(self.tp + other.tp, self.n_pred + other.n_pred, self.n_gold + other.n_gold)


def prf(c: Counts) -> tuple[float, float, float]:
    """(precision, recall, f1); any ratio with a zero denominator scores 0."""
    p = c.tp / c.n_pred if c.n_pred else 0.0
    r = c.tp / c.n_gold if c.n_gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def entity_keys(graph: IEGraph) -> set[tuple[int, int, int]]:
    return {(e.start, e.end, e.type_id) for e in graph.entities}


def relation_keys(graph: IEGraph, strict: bool) -> set[tuple]:
    keys = set()
    for rel in graph.relations:
        head = graph.entities[rel.head]
        tail = graph.entities[rel.tail]
        key = (head.start, head.end, tail.start, tail.end, rel.rel_type_id)
        if strict:
            key += (head.type_id, tail.type_id)
        keys.add(key)
    return keys


def score_entities(pred: IEGraph, gold: IEGraph) -> Counts:
    p, g = entity_keys(pred), entity_keys(gold)
    return Counts(len(p & g), len(p), len(g))


def score_relations(pred: IEGraph, gold: IEGraph, strict: bool = False) -> Counts:
    p, g = relation_keys(pred, strict), relation_keys(gold, strict)
    return Counts(len(p & g), len(p), len(g))


@dataclass(frozen=True)
class ScoreReport:
    ent: Counts
    rel: Counts
    rel_strict: Counts

    @property
    def ent_prf(self) -> tuple[float, float, float]:
        return prf(self.ent)

    @property
    def rel_prf(self) -> tuple[float, float, float]:
        return prf(self.rel)

    @property
    def rel_strict_prf(self) -> tuple[float, float, float]:
        return prf(self.rel_strict)


def evaluate_pairs(pairs) -> ScoreReport:
    """Pool (predicted, gold) graph pairs into one corpus-level report."""
    ent = rel = rel_s = Counts()
    for pred, gold in pairs:
        ent = ent + score_entities(pred, gold)
        rel = rel + score_relations(pred, gold, strict=False)
        rel_s = rel_s + score_relations(pred, gold, strict=True)
    return ScoreReport(ent, rel, rel_s)


def format_report(report: ScoreReport) -> str:
    rows = [
        ("ENT", report.ent, report.ent_prf),
        ("REL", report.rel, report.rel_prf),
        ("REL+", report.rel_strict, report.rel_strict_prf),
    ]
    lines = [f"{'':6} {'P':>8} {'R':>8} {'F1':>8} {'tp':>6} {'pred':>6} {'gold':>6}"]
    for name, counts, (p, r, f1) in rows:
        lines.append(
            f"{name:6} {100 * p:8.2f} {100 * r:8.2f} {100 * f1:8.2f}"
            f" {counts.tp:6d} {counts.n_pred:6d} {counts.n_gold:6d}"
        )
    return "\n".join(lines)
