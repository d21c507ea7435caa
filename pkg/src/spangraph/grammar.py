"""Finite-state control of decoding: legal-symbol masks and state transitions.

The decode alternates through four phases.  NODE emits entity spans until SEP;
after that, each relation triple is built by a HEAD span, a TAIL span, and a
relation type, returning to HEAD.  END is only legal in HEAD.  Spans never
repeat inside the entity section, relation arguments must be previously
declared entities, and the tail must differ from the head.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, replace

import numpy as np

from .graph import Schema
from .linearize import (
    END,
    SEP,
    START,
    GraphSequence,
    Ordering,
    RelSym,
    SpanSym,
    SpecialToken,
    Symbol,
)
from .vocab import VocabLayout, id_to_symbol, symbol_to_id


class FinishedState(RuntimeError):
    pass


class IllegalTransition(ValueError):
    pass


class EnumerationBudgetExceeded(RuntimeError):
    pass


class Phase(enum.IntEnum):
    NODE = 0
    HEAD = 1
    TAIL = 2
    REL = 3


@dataclass(frozen=True)
class DecodeState:
    phase: Phase = Phase.NODE
    generated: tuple[SpanSym, ...] = ()
    pending_head: SpanSym | None = None
    pending_tail: SpanSym | None = None
    finished: bool = False


def initial_state() -> DecodeState:
    return DecodeState()


def _head_candidates(state: DecodeState, schema: Schema) -> list[SpanSym]:
    # a head is viable only if some other declared entity can serve as its tail
    out = []
    for head in state.generated:
        for tail in state.generated:
            if tail != head and schema.allowed_relations(head.type_id, tail.type_id):
                out.append(head)
                break
    return out


def _tail_candidates(state: DecodeState, schema: Schema) -> list[SpanSym]:
    head = state.pending_head
    return [
        tail
        for tail in state.generated
        if tail != head and schema.allowed_relations(head.type_id, tail.type_id)
    ]


def legal_mask(state: DecodeState, layout: VocabLayout, schema: Schema) -> np.ndarray:
    """Boolean legality vector over the vocabulary for the next symbol.

    Non-realizable span ids and START are never legal.  When the schema carries
    an allowed-pairs table, head and tail candidates are filtered so a triple
    can always be completed: the mask is never all-false in a reachable state.
    """
    if state.finished:
        raise FinishedState("decoding already emitted END")
    mask = np.zeros(layout.V, dtype=bool)
    if state.phase is Phase.NODE:
        mask[: layout.n_span_ids] = layout.realizable[: layout.n_span_ids]
        for sym in state.generated:
            mask[symbol_to_id(layout, sym)] = False
        mask[layout.sep_id] = True
    elif state.phase is Phase.HEAD:
        for sym in _head_candidates(state, schema):
            mask[symbol_to_id(layout, sym)] = True
        mask[layout.end_id] = True
    elif state.phase is Phase.TAIL:
        for sym in _tail_candidates(state, schema):
            mask[symbol_to_id(layout, sym)] = True
    else:  # REL
        allowed = schema.allowed_relations(
            state.pending_head.type_id, state.pending_tail.type_id
        )
        for r in allowed:
            mask[layout.rel_id(r)] = True
    return mask


def advance(state: DecodeState, sym: Symbol) -> DecodeState:
    """Consume one symbol and return the successor state.

    Enforces the structural constraints expressible from the state alone (the
    phase/symbol pairing, span repetition, argument membership, tail != head);
    realizability and allowed-pairs filtering live in ``legal_mask``.
    """
    if state.finished:
        raise FinishedState("decoding already emitted END")
    if sym is START:
        raise IllegalTransition("START is input-only")
    if state.phase is Phase.NODE:
        if sym is SEP:
            return replace(state, phase=Phase.HEAD)
        if isinstance(sym, SpanSym):
            if sym in state.generated:
                raise IllegalTransition(f"span {sym} already generated")
            return replace(state, generated=state.generated + (sym,))
        raise IllegalTransition(f"{sym} not legal in NODE")
    if state.phase is Phase.HEAD:
        if sym is END:
            return replace(state, finished=True)
        if isinstance(sym, SpanSym):
            if sym not in state.generated:
                raise IllegalTransition(f"head {sym} was not declared as an entity")
            if len(state.generated) < 2:
                raise IllegalTransition("a relation needs at least two entities")
            return replace(state, phase=Phase.TAIL, pending_head=sym)
        raise IllegalTransition(f"{sym} not legal in HEAD")
    if state.phase is Phase.TAIL:
        if isinstance(sym, SpanSym):
            if sym not in state.generated:
                raise IllegalTransition(f"tail {sym} was not declared as an entity")
            if sym == state.pending_head:
                raise IllegalTransition("tail must differ from head")
            return replace(state, phase=Phase.REL, pending_tail=sym)
        raise IllegalTransition(f"{sym} not legal in TAIL")
    # REL
    if isinstance(sym, RelSym):
        return replace(state, phase=Phase.HEAD, pending_head=None, pending_tail=None)
    raise IllegalTransition(f"{sym} not legal in REL")


def replay(symbols: tuple[Symbol, ...] | GraphSequence) -> tuple[list[DecodeState], DecodeState]:
    """Run the FSM over a full sequence starting with START.

    Returns the state *before* each symbol (aligned with the sequence; START is
    paired with the initial state) plus the final state.  Raises
    IllegalTransition if the sequence is not FSM-replayable.
    """
    syms = symbols.symbols if isinstance(symbols, GraphSequence) else tuple(symbols)
    if not syms or syms[0] is not START:
        raise IllegalTransition("replay expects a sequence starting with START")
    states = [initial_state()]
    state = states[0]
    for sym in syms[1:]:
        states.append(state)
        state = advance(state, sym)
    return states, state


def structural_labels(symbols: tuple[Symbol, ...] | GraphSequence) -> list[Phase]:
    """Phase each symbol was selected in; START carries the initial NODE phase."""
    states, _ = replay(symbols)
    return [s.phase for s in states]


def enumerate_valid_sequences(
    layout: VocabLayout,
    schema: Schema,
    max_len: int,
    budget: int = 1_000_000,
) -> list[GraphSequence]:
    """Exhaustive DFS over legal transitions; every result is grammar-valid.

    ``max_len`` bounds the total sequence length including START and END.
    Intended as a test oracle on small layouts; raises once ``budget`` states
    have been expanded.
    """
    results: list[GraphSequence] = []
    expanded = 0

    def dfs(state: DecodeState, prefix: list[Symbol]) -> None:
        nonlocal expanded
        if len(prefix) >= max_len:
            return
        expanded += 1
        if expanded > budget:
            raise EnumerationBudgetExceeded(f"expanded more than {budget} states")
        mask = legal_mask(state, layout, schema)
        for idx in np.flatnonzero(mask):
            sym = id_to_symbol(layout, int(idx))
            nxt = advance(state, sym)
            prefix.append(sym)
            if nxt.finished:
                results.append(GraphSequence(tuple(prefix), Ordering.SORTED))
            else:
                dfs(nxt, prefix)
            prefix.pop()

    dfs(initial_state(), [START])
    return results
