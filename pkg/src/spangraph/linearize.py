"""Flattening IE graphs to symbol sequences and parsing them back."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .graph import EntitySpan, IEGraph, Relation, Schema


class MalformedSequence(ValueError):
    """Sequence does not match the entity/relation template."""


class UnknownArgumentSpan(ValueError):
    """Strict parsing only: a relation argument was never declared as an entity."""


class SpecialToken(enum.Enum):
    START = "START"
    END = "END"
    SEP = "SEP"


START = SpecialToken.START
END = SpecialToken.END
SEP = SpecialToken.SEP


@dataclass(frozen=True, order=True)
class SpanSym:
    start: int
    end: int
    type_id: int


@dataclass(frozen=True, order=True)
class RelSym:
    rel_type_id: int


Symbol = SpanSym | RelSym | SpecialToken


class Ordering(enum.Enum):
    SORTED = "sorted"
    RANDOM = "random"


@dataclass(frozen=True)
class GraphSequence:
    symbols: tuple[Symbol, ...]
    ordering: Ordering = Ordering.SORTED

    def __post_init__(self):
        object.__setattr__(self, "symbols", tuple(self.symbols))

    def __len__(self) -> int:
        return len(self.symbols)


def span_symbol(ent: EntitySpan) -> SpanSym:
    return SpanSym(ent.start, ent.end, ent.type_id)


def linearize(
    graph: IEGraph,
    ordering: Ordering = Ordering.SORTED,
    rng: np.random.Generator | None = None,
) -> GraphSequence:
    """Flatten a validated graph: entities, SEP, then (head, tail, relation) triplets.

    SORTED emits entities by (start, end, type_id) and relations by argument
    positions; RANDOM shuffles both lists independently with ``rng``.
    """
    entities = list(graph.entities)
    relations = list(graph.relations)
    if ordering is Ordering.SORTED:
        entities.sort()
        # position-major; type ids break remaining ties so the order is total
        relations.sort(
            key=lambda r: (
                graph.entities[r.head].start,
                graph.entities[r.head].end,
                graph.entities[r.tail].start,
                graph.entities[r.tail].end,
                r.rel_type_id,
                graph.entities[r.head].type_id,
                graph.entities[r.tail].type_id,
            )
        )
    elif ordering is Ordering.RANDOM:
        if rng is None:
            raise ValueError("RANDOM ordering requires an rng")
        entities = [entities[i] for i in rng.permutation(len(entities))]
        relations = [relations[i] for i in rng.permutation(len(relations))]
    else:
        raise ValueError(f"unknown ordering {ordering!r}")

    symbols: list[Symbol] = [START]
    symbols.extend(span_symbol(e) for e in entities)
    symbols.append(SEP)
    for rel in relations:
        symbols.append(span_symbol(graph.entities[rel.head]))
        symbols.append(span_symbol(graph.entities[rel.tail]))
        symbols.append(RelSym(rel.rel_type_id))
    symbols.append(END)
    return GraphSequence(tuple(symbols), ordering)


def delinearize(seq: GraphSequence | tuple[Symbol, ...], strict: bool = False) -> IEGraph:
    """Parse a sequence back into a graph.

    Entities are the de-duplicated spans before SEP; each (head, tail, relation)
    triple after SEP becomes a relation, with arguments resolved to entity-list
    indices.  An argument span missing from the entity section is appended to
    the entity list in lenient mode (the default) and raises in strict mode.
    """
    symbols = seq.symbols if isinstance(seq, GraphSequence) else tuple(seq)
    if len(symbols) < 3 or symbols[0] is not START or symbols[-1] is not END:
        raise MalformedSequence("sequence must start with START and end with END")
    body = symbols[1:-1]
    try:
        sep_at = body.index(SEP)
    except ValueError:
        raise MalformedSequence("sequence is missing SEP") from None

    entities: list[EntitySpan] = []
    index_of: dict[SpanSym, int] = {}

    def entity_index(sym: SpanSym, declared: bool) -> int:
        if sym in index_of:
            return index_of[sym]
        if not declared and strict:
            raise UnknownArgumentSpan(f"relation argument {sym} not in entity section")
        entities.append(EntitySpan(sym.start, sym.end, sym.type_id))
        index_of[sym] = len(entities) - 1
        return index_of[sym]

    for sym in body[:sep_at]:
        if not isinstance(sym, SpanSym):
            raise MalformedSequence(f"non-span symbol {sym} before SEP")
        entity_index(sym, declared=True)

    tail_syms = body[sep_at + 1 :]
    if len(tail_syms) % 3 != 0:
        raise MalformedSequence("relation section is not a whole number of triples")
    relations: list[Relation] = []
    seen: set[Relation] = set()
    for i in range(0, len(tail_syms), 3):
        head_sym, tail_sym, rel_sym = tail_syms[i : i + 3]
        if not isinstance(head_sym, SpanSym) or not isinstance(tail_sym, SpanSym):
            raise MalformedSequence(f"triple {i // 3} has a non-span argument")
        if not isinstance(rel_sym, RelSym):
            raise MalformedSequence(f"triple {i // 3} does not end with a relation type")
        if head_sym == tail_sym:
            raise MalformedSequence(f"triple {i // 3} relates a span to itself")
        rel = Relation(
            entity_index(head_sym, declared=False),
            entity_index(tail_sym, declared=False),
            rel_sym.rel_type_id,
        )
        if rel not in seen:
            seen.add(rel)
            relations.append(rel)
    return IEGraph(tuple(entities), tuple(relations))


def render_symbol(sym: Symbol, schema: Schema | None = None) -> str:
    """Human-readable form: ``(0,1,Peop)``, a relation name, or ``<START>``."""
    if isinstance(sym, SpecialToken):
        return f"<{sym.value}>"
    if isinstance(sym, SpanSym):
        if schema is not None and 0 <= sym.type_id < schema.n_entity_types:
            type_name = schema.entity_types[sym.type_id]
        else:
            type_name = str(sym.type_id)
        return f"({sym.start},{sym.end},{type_name})"
    if schema is not None and 0 <= sym.rel_type_id < schema.n_relation_types:
        return schema.relation_types[sym.rel_type_id]
    return f"rel:{sym.rel_type_id}"


def render_sequence(seq: GraphSequence | tuple[Symbol, ...], schema: Schema | None = None) -> str:
    symbols = seq.symbols if isinstance(seq, GraphSequence) else tuple(seq)
    return " ".join(render_symbol(s, schema) for s in symbols)
