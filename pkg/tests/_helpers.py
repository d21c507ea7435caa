"""Shared builders for tests: random graphs, documents, and small models."""

from __future__ import annotations

import numpy as np

from spangraph.graph import Document, EntitySpan, IEGraph, Relation, Schema
from spangraph.model import Model, ModelConfig, WordVocab

_WORDS = ("alpha", "beta", "gamma", "delta", "epsilon", "zeta", "eta", "theta",
          "iota", "kappa", "lam", "mu", "nu", "xi", "omicron", "pi")


def make_doc(n_tokens: int, doc_id: str = "d0") -> Document:
    toks = tuple(_WORDS[i % len(_WORDS)] for i in range(n_tokens))
    return Document(tokens=toks, id=doc_id)


def make_schema(n_ent: int, n_rel: int, allowed_pairs=None) -> Schema:
    return Schema(
        entity_types=tuple(f"ent{i}" for i in range(n_ent)),
        relation_types=tuple(f"rel{i}" for i in range(n_rel)),
        allowed_pairs=allowed_pairs,
    )


def random_graph(rng: np.random.Generator, L: int, K: int, C: int, R: int,
                 max_entities: int = 5, max_relations: int = 4) -> IEGraph:
    """Draw a structurally valid graph: distinct spans, in-range widths, no self loops."""
    all_spans = [(s, e) for s in range(L) for e in range(s, min(s + K, L))]
    n_ent = int(rng.integers(0, max_entities + 1))
    n_ent = min(n_ent, len(all_spans))
    picks = rng.choice(len(all_spans), size=n_ent, replace=False)
    entities = tuple(
        EntitySpan(all_spans[int(i)][0], all_spans[int(i)][1], int(rng.integers(0, C)))
        for i in picks
    )
    relations: list[Relation] = []
    if R > 0 and n_ent >= 2:
        n_rel = int(rng.integers(0, max_relations + 1))
        seen = set()
        for _ in range(n_rel):
            h = int(rng.integers(0, n_ent))
            t = int(rng.integers(0, n_ent))
            if h == t:
                continue
            r = int(rng.integers(0, R))
            if (h, t, r) in seen:
                continue
            seen.add((h, t, r))
            relations.append(Relation(h, t, r))
    return IEGraph(entities=entities, relations=tuple(relations))


def tiny_model(schema: Schema, words=("a", "b", "c"), d_model: int = 16,
               enc_layers: int = 1, dec_layers: int = 1, heads: int = 2,
               max_span_width: int = 3, seed: int = 0, dtype: str = "float64",
               **kw) -> Model:
    vocab = WordVocab(("<unk>",) + tuple(words))
    config = ModelConfig(
        d_model=d_model, enc_layers=enc_layers, dec_layers=dec_layers,
        heads=heads, max_span_width=max_span_width, dtype=dtype,
        max_positions=kw.pop("max_positions", 128), **kw,
    )
    return Model(config, schema, vocab, rng=np.random.default_rng(seed))
