import numpy as np
import pytest

from spangraph.graph import EntitySpan, IEGraph, Relation
from spangraph.metrics import (
    Counts,
    ScoreReport,
    entity_keys,
    evaluate_pairs,
    format_report,
    prf,
    relation_keys,
    score_entities,
    score_relations,
)
from _helpers import random_graph


def g(ents, rels=()):
    return IEGraph(entities=tuple(EntitySpan(*e) for e in ents),
                   relations=tuple(Relation(*r) for r in rels))


class TestCounts:
    def test_addition_pools(self):
        c = Counts(tp=1, n_pred=2, n_gold=1) + Counts(tp=1, n_pred=1, n_gold=2)
        assert (c.tp, c.n_pred, c.n_gold) == (2, 3, 3)

    def test_prf_zero_conventions(self):
        assert prf(Counts(0, 0, 0)) == (0.0, 0.0, 0.0)
        assert prf(Counts(0, 5, 0)) == (0.0, 0.0, 0.0)
        assert prf(Counts(0, 0, 5)) == (0.0, 0.0, 0.0)

    def test_prf_values(self):
        p, r, f = prf(Counts(tp=2, n_pred=3, n_gold=3))
        assert p == pytest.approx(2 / 3)
        assert r == pytest.approx(2 / 3)
        assert f == pytest.approx(2 / 3)


class TestKeys:
    def test_entity_key_is_boundary_plus_type(self):
        keys = entity_keys(g([(0, 1, 0), (0, 1, 1)]))
        assert len(keys) == 2

    def test_same_boundary_same_type_collapse(self):
        # set semantics: two relations over type-distinct entities with the
        # same boundaries collapse under the boundary-only relation key
        gr = g([(0, 0, 0), (0, 0, 1), (2, 2, 0)],
               [(0, 2, 0), (1, 2, 0)])
        assert len(relation_keys(gr, strict=False)) == 1
        assert len(relation_keys(gr, strict=True)) == 2

    def test_relation_key_is_directed(self):
        a = g([(0, 0, 0), (1, 1, 0)], [(0, 1, 0)])
        b = g([(0, 0, 0), (1, 1, 0)], [(1, 0, 0)])
        assert relation_keys(a, False) != relation_keys(b, False)


class TestScoring:
    def test_exact_match(self):
        gr = g([(0, 1, 0), (3, 4, 1)], [(0, 1, 0)])
        assert score_entities(gr, gr) == Counts(2, 2, 2)
        assert score_relations(gr, gr, strict=True) == Counts(1, 1, 1)

    def test_boundary_match_wrong_type_is_miss_for_entities(self):
        pred = g([(0, 1, 1)])
        gold = g([(0, 1, 0)])
        assert score_entities(pred, gold) == Counts(0, 1, 1)

    def test_rel_credits_boundaries_but_strict_needs_types(self):
        pred = g([(0, 0, 1), (2, 2, 0)], [(0, 1, 0)])
        gold = g([(0, 0, 0), (2, 2, 0)], [(0, 1, 0)])
        assert score_relations(pred, gold, strict=False) == Counts(1, 1, 1)
        assert score_relations(pred, gold, strict=True) == Counts(0, 1, 1)

    def test_wrong_direction_is_miss(self):
        pred = g([(0, 0, 0), (2, 2, 0)], [(1, 0, 0)])
        gold = g([(0, 0, 0), (2, 2, 0)], [(0, 1, 0)])
        assert score_relations(pred, gold, strict=False) == Counts(0, 1, 1)

    def test_wrong_relation_type_is_miss_in_both(self):
        pred = g([(0, 0, 0), (2, 2, 0)], [(0, 1, 1)])
        gold = g([(0, 0, 0), (2, 2, 0)], [(0, 1, 0)])
        assert score_relations(pred, gold, strict=False) == Counts(0, 1, 1)
        assert score_relations(pred, gold, strict=True) == Counts(0, 1, 1)


class TestMicroAveraging:
    def test_two_document_pooled_example(self):
        # doc A: one of two predictions correct; doc B: one of two golds found
        pred_a = g([(0, 0, 0), (1, 1, 0)])
        gold_a = g([(0, 0, 0)])
        pred_b = g([(0, 0, 0)])
        gold_b = g([(0, 0, 0), (1, 1, 0)])
        report = evaluate_pairs([(pred_a, gold_a), (pred_b, gold_b)])
        assert report.ent == Counts(tp=2, n_pred=3, n_gold=3)
        p, r, f = report.ent_prf
        assert p == pytest.approx(2 / 3)
        assert r == pytest.approx(2 / 3)
        assert f == pytest.approx(2 / 3)

    def test_pooling_differs_from_macro(self):
        # micro pooling weighs documents by item count, not equally
        pred_a, gold_a = g([(0, 0, 0)]), g([(0, 0, 0)])
        pred_b = g([(i, i, 0) for i in range(8)])
        gold_b = g([(9, 9, 0)])
        report = evaluate_pairs([(pred_a, gold_a), (pred_b, gold_b)])
        p, _, _ = report.ent_prf
        assert p == pytest.approx(1 / 9)

    def test_permutation_invariance(self, rng):
        pairs = [(random_graph(rng, 8, 3, 2, 2), random_graph(rng, 8, 3, 2, 2))
                 for _ in range(20)]
        a = evaluate_pairs(pairs)
        b = evaluate_pairs(list(reversed(pairs)))
        assert a.ent == b.ent and a.rel == b.rel and a.rel_strict == b.rel_strict

    def test_perfect_prediction_reads_100(self, rng):
        pairs = []
        for _ in range(10):
            gr = random_graph(rng, 8, 3, 2, 2)
            pairs.append((gr, gr))
        report = evaluate_pairs(pairs)
        out = format_report(report)
        assert out.count("100.00") >= 9  # P R F1 for each populated row


class TestBruteForceOracle:
    def test_counts_match_quadratic_recount(self, rng):
        for _ in range(100):
            pred = random_graph(rng, 9, 3, 3, 2)
            gold = random_graph(rng, 9, 3, 3, 2)

            ent_tp = sum(
                1 for e in set((e.start, e.end, e.type_id) for e in pred.entities)
                if e in set((e2.start, e2.end, e2.type_id) for e2 in gold.entities))
            got = score_entities(pred, gold)
            assert got.tp == ent_tp
            assert got.n_pred == len(set(pred.entities))
            assert got.n_gold == len(set(gold.entities))

            def rel_set(graph, strict):
                out = set()
                for r in graph.relations:
                    h, t = graph.entities[r.head], graph.entities[r.tail]
                    key = (h.start, h.end, t.start, t.end, r.rel_type_id)
                    if strict:
                        key += (h.type_id, t.type_id)
                    out.add(key)
                return out

            for strict in (False, True):
                want_pred = rel_set(pred, strict)
                want_gold = rel_set(gold, strict)
                got = score_relations(pred, gold, strict)
                assert got.tp == len(want_pred & want_gold)
                assert got.n_pred == len(want_pred)
                assert got.n_gold == len(want_gold)

    def test_strict_tp_never_exceeds_boundary_tp(self, rng):
        for _ in range(50):
            pred = random_graph(rng, 7, 2, 3, 2)
            gold = random_graph(rng, 7, 2, 3, 2)
            assert score_relations(pred, gold, True).tp <= score_relations(pred, gold, False).tp


class TestFormatReport:
    def test_rows_and_header(self):
        gr = g([(0, 1, 0), (3, 4, 1)], [(0, 1, 0)])
        out = format_report(evaluate_pairs([(gr, gr)]))
        lines = out.strip().splitlines()
        assert "P" in lines[0] and "R" in lines[0] and "F1" in lines[0]
        body = "\n".join(lines[1:])
        assert "ENT" in body and "REL+" in body and "REL" in body
        assert "100.00" in body
