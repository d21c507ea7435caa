"""Encoder-decoder that generates linearized IE graphs by pointing.

The encoder contextualizes the sentence; every candidate span gets an
embedding built from its boundary token states under a per-entity-type
projection.  Those span rows, three special symbols, and the relation types
form the dynamic output vocabulary E, and the decoder scores the next symbol
as a dot product between its hidden state and every row of E (the output
embedding is the pointing table, there is no separate softmax weight).

Two forward implementations exist on purpose:

* the ``Tensor`` graph (``encode`` / ``span_embeddings`` / ``decode_hidden``)
  used for training and gradient checks, vectorized over the whole prefix;
* ``DecodeRuntime``, a plain-numpy row-at-a-time decoder used for generation,
  with an optional key/value cache.  Its cached and cache-free modes execute
  the identical row routine, so their outputs are bit-equal by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as T
from .graph import Schema
from .tensor import Tensor
from .vocab import N_SPECIALS


class TooLong(ValueError):
    """Sentence exceeds the encoder position table."""


class PrefixTooLong(ValueError):
    """Decoder prefix exceeds the decoder position table."""


# structural label channels, one embedding row each; values match grammar.Phase
N_STRUCT_LABELS = 4

# tables that take no weight decay along with norms and biases
_EMBED_TABLES = frozenset(
    {"enc.word_emb", "enc.pos", "dec.pos", "dec.struct", "dec.special", "dec.rel"}
)
_BIAS_SUFFIXES = (".g", ".b", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")


@dataclass(frozen=True)
class ModelConfig:
    d_model: int = 64
    enc_layers: int = 2
    dec_layers: int = 2
    heads: int = 4
    max_span_width: int = 8
    dropout: float = 0.0
    max_positions: int = 512
    dtype: str = "float32"
    use_positions: bool = True
    use_structure: bool = True

    def __post_init__(self):
        if self.d_model <= 0 or self.d_model % self.heads:
            raise ValueError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.enc_layers < 0 or self.dec_layers < 1:
            raise ValueError("need enc_layers >= 0 and dec_layers >= 1")
        if self.max_span_width < 1:
            raise ValueError("max_span_width must be at least 1")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def np_dtype(self):
        return np.float32 if self.dtype == "float32" else np.float64


class WordVocab:
    """Token-to-id map with a reserved unknown word at id 0."""

    UNK = "<unk>"

    def __init__(self, words):
        words = list(words)
        if not words or words[0] != self.UNK:
            raise ValueError("word list must start with the unknown token")
        if len(set(words)) != len(words):
            raise ValueError("duplicate words in vocabulary")
        self._words = tuple(words)
        self._ids = {w: i for i, w in enumerate(words)}

    @classmethod
    def build(cls, documents) -> "WordVocab":
        seen = {tok for doc in documents for tok in doc.tokens}
        seen.discard(cls.UNK)
        return cls([cls.UNK, *sorted(seen)])

    @property
    def words(self) -> tuple[str, ...]:
        return self._words

    def __len__(self) -> int:
        return len(self._words)

    def id(self, word: str) -> int:
        return self._ids.get(word, 0)

    def encode(self, tokens) -> np.ndarray:
        return np.array([self.id(t) for t in tokens], dtype=np.int64)


@dataclass
class AttnTrace:
    """Post-softmax attention weights captured during a decoder forward."""

    self_attn: list[np.ndarray] = field(default_factory=list)
    cross_attn: list[np.ndarray] = field(default_factory=list)


def param_group(name: str) -> str:
    if name.startswith("enc."):
        return "encoder"
    if name.startswith("dec."):
        return "decoder"
    return "other"


def decay_excluded(name: str) -> bool:
    return name in _EMBED_TABLES or name.endswith(_BIAS_SUFFIXES)


def _init_params(config: ModelConfig, schema: Schema, n_words: int, rng) -> dict[str, Tensor]:
    dt = config.np_dtype
    d = config.d_model
    params: dict[str, Tensor] = {}

    def normal(name, *shape):
        params[name] = Tensor(rng.normal(0.0, 0.02, size=shape).astype(dt), requires_grad=True)

    def ones(name, *shape):
        params[name] = Tensor(np.ones(shape, dtype=dt), requires_grad=True)

    def zeros(name, *shape):
        params[name] = Tensor(np.zeros(shape, dtype=dt), requires_grad=True)

    def attn_block(prefix):
        for part in ("wq", "wk", "wv", "wo"):
            normal(f"{prefix}.{part}", d, d)
        for part in ("bq", "bk", "bv", "bo"):
            zeros(f"{prefix}.{part}", d)

    def ffn_block(prefix):
        normal(f"{prefix}.w1", d, 4 * d)
        zeros(f"{prefix}.b1", 4 * d)
        normal(f"{prefix}.w2", 4 * d, d)
        zeros(f"{prefix}.b2", d)

    def ln_block(prefix):
        ones(f"{prefix}.g", d)
        zeros(f"{prefix}.b", d)

    normal("enc.word_emb", n_words, d)
    normal("enc.pos", config.max_positions, d)
    for i in range(config.enc_layers):
        ln_block(f"enc.{i}.ln1")
        attn_block(f"enc.{i}.attn")
        ln_block(f"enc.{i}.ln2")
        ffn_block(f"enc.{i}.ffn")

    normal("dec.pos", config.max_positions, d)
    normal("dec.struct", N_STRUCT_LABELS, d)
    # row order matches the id layout: START, END, SEP
    normal("dec.special", N_SPECIALS, d)
    normal("dec.rel", schema.n_relation_types, d)
    for i in range(config.dec_layers):
        ln_block(f"dec.{i}.ln1")
        attn_block(f"dec.{i}.self")
        ln_block(f"dec.{i}.ln2")
        attn_block(f"dec.{i}.cross")
        ln_block(f"dec.{i}.ln3")
        ffn_block(f"dec.{i}.ffn")

    for c in range(schema.n_entity_types):
        normal(f"span.w{c}", 2 * d, d)
    return params


def _schema_to_meta(schema: Schema) -> dict:
    pairs = None
    if schema.allowed_pairs is not None:
        pairs = [[h, t, sorted(rs)] for (h, t), rs in sorted(schema.allowed_pairs.items())]
    return {
        "entity_types": list(schema.entity_types),
        "relation_types": list(schema.relation_types),
        "allowed_pairs": pairs,
    }


def _schema_from_meta(meta: dict) -> Schema:
    pairs = meta.get("allowed_pairs")
    table = None
    if pairs is not None:
        table = {(h, t): frozenset(rs) for h, t, rs in pairs}
    return Schema(
        entity_types=tuple(meta["entity_types"]),
        relation_types=tuple(meta["relation_types"]),
        allowed_pairs=table,
    )


class Model:
    def __init__(self, config: ModelConfig, schema: Schema, word_vocab: WordVocab,
                 rng: np.random.Generator | None = None,
                 params: dict[str, Tensor] | None = None):
        self.config = config
        self.schema = schema
        self.word_vocab = word_vocab
        if params is None:
            if rng is None:
                rng = np.random.default_rng(0)
            params = _init_params(config, schema, len(word_vocab), rng)
        self.params = params

    # ------------------------------------------------------------------
    # differentiable forward

    def _mha(self, prefix: str, x_q: Tensor, x_kv: Tensor, mask: np.ndarray | None,
             train: bool, rng, sink: list | None) -> Tensor:
        p = self.params
        heads = self.config.heads
        dk = self.config.d_model // heads
        q = T.add(T.matmul(x_q, p[f"{prefix}.wq"]), p[f"{prefix}.bq"])
        k = T.add(T.matmul(x_kv, p[f"{prefix}.wk"]), p[f"{prefix}.bk"])
        v = T.add(T.matmul(x_kv, p[f"{prefix}.wv"]), p[f"{prefix}.bv"])
        scale = 1.0 / math.sqrt(dk)
        ctx = None
        captured = []
        for h in range(heads):
            lo, hi = h * dk, (h + 1) * dk
            qh = T.slice_last_dim(q, lo, hi)
            kh = T.slice_last_dim(k, lo, hi)
            vh = T.slice_last_dim(v, lo, hi)
            scores = T.mul(T.matmul(qh, T.transpose(kh)), scale)
            w = T.softmax_last_dim(scores, mask)
            if sink is not None:
                captured.append(w.data)
            w = T.dropout(w, self.config.dropout, rng, train)
            c = T.matmul(w, vh)
            ctx = c if ctx is None else T.concat_last_dim(ctx, c)
        if sink is not None:
            sink.append(np.stack(captured))
        out = T.add(T.matmul(ctx, p[f"{prefix}.wo"]), p[f"{prefix}.bo"])
        return T.dropout(out, self.config.dropout, rng, train)

    def _ffn(self, prefix: str, x: Tensor, train: bool, rng) -> Tensor:
        p = self.params
        h = T.gelu(T.add(T.matmul(x, p[f"{prefix}.w1"]), p[f"{prefix}.b1"]))
        out = T.add(T.matmul(h, p[f"{prefix}.w2"]), p[f"{prefix}.b2"])
        return T.dropout(out, self.config.dropout, rng, train)

    def encode(self, token_ids: np.ndarray, train: bool = False, rng=None) -> Tensor:
        """Contextual token states (L, D); with zero layers, embeddings + positions."""
        n = len(token_ids)
        if n > self.config.max_positions:
            raise TooLong(f"sentence length {n} exceeds max_positions {self.config.max_positions}")
        p = self.params
        x = T.add(
            T.embedding_lookup(p["enc.word_emb"], token_ids),
            T.embedding_lookup(p["enc.pos"], np.arange(n)),
        )
        x = T.dropout(x, self.config.dropout, rng, train)
        for i in range(self.config.enc_layers):
            h = T.layer_norm(x, p[f"enc.{i}.ln1.g"], p[f"enc.{i}.ln1.b"])
            x = T.add(x, self._mha(f"enc.{i}.attn", h, h, None, train, rng, None))
            h = T.layer_norm(x, p[f"enc.{i}.ln2.g"], p[f"enc.{i}.ln2.b"])
            x = T.add(x, self._ffn(f"enc.{i}.ffn", h, train, rng))
        return x

    def span_embeddings(self, H: Tensor) -> Tensor:
        """One row per span id (L*K*C, D): boundary-state concat under per-type maps.

        Spans that would overhang the sentence keep their id slot but are
        computed against a zero end-vector; the grammar mask keeps them from
        ever being selected.
        """
        L = H.shape[0]
        K = self.config.max_span_width
        starts = np.repeat(np.arange(L), K)
        ends = starts + np.tile(np.arange(K), L)
        valid = ends < L
        h_start = T.embedding_lookup(H, starts)
        h_end = T.embedding_lookup(H, np.minimum(ends, L - 1))
        h_end = T.mul(h_end, Tensor(valid[:, None].astype(self.config.np_dtype)))
        cat = T.concat_last_dim(h_start, h_end)
        per_type = [
            T.matmul(cat, self.params[f"span.w{c}"])
            for c in range(self.schema.n_entity_types)
        ]
        return T.interleave_rows(per_type)

    def build_E(self, S: Tensor) -> Tensor:
        """Dynamic vocabulary matrix (V, D): spans, then specials, then relations."""
        return T.concat_rows([S, self.params["dec.special"], self.params["dec.rel"]])

    def decoder_inputs(self, E: Tensor, ids: np.ndarray, labels: np.ndarray,
                       train: bool = False, rng=None) -> Tensor:
        m = len(ids)
        if m > self.config.max_positions:
            raise PrefixTooLong(f"prefix length {m} exceeds max_positions")
        x = T.embedding_lookup(E, ids)
        if self.config.use_positions:
            x = T.add(x, T.embedding_lookup(self.params["dec.pos"], np.arange(m)))
        if self.config.use_structure:
            x = T.add(x, T.embedding_lookup(self.params["dec.struct"], labels))
        return T.dropout(x, self.config.dropout, rng, train)

    def decode_hidden(self, x: Tensor, H: Tensor, train: bool = False, rng=None,
                      trace: AttnTrace | None = None) -> Tensor:
        m = x.shape[0]
        causal = np.tril(np.ones((m, m), dtype=bool))
        p = self.params
        for i in range(self.config.dec_layers):
            h = T.layer_norm(x, p[f"dec.{i}.ln1.g"], p[f"dec.{i}.ln1.b"])
            x = T.add(x, self._mha(f"dec.{i}.self", h, h, causal, train, rng,
                                   trace.self_attn if trace is not None else None))
            h = T.layer_norm(x, p[f"dec.{i}.ln2.g"], p[f"dec.{i}.ln2.b"])
            x = T.add(x, self._mha(f"dec.{i}.cross", h, H, None, train, rng,
                                   trace.cross_attn if trace is not None else None))
            h = T.layer_norm(x, p[f"dec.{i}.ln3.g"], p[f"dec.{i}.ln3.b"])
            x = T.add(x, self._ffn(f"dec.{i}.ffn", h, train, rng))
        return x

    def next_token_logits(self, Z: Tensor, E: Tensor) -> Tensor:
        """Pointing scores (M, V): hidden states against the vocabulary rows."""
        return T.matmul(Z, T.transpose(E))

    def sequence_logits(self, token_ids: np.ndarray, input_ids: np.ndarray,
                        input_labels: np.ndarray, train: bool = False, rng=None,
                        trace: AttnTrace | None = None) -> Tensor:
        """Teacher-forced logits for every next-symbol position."""
        H = self.encode(token_ids, train, rng)
        E = self.build_E(self.span_embeddings(H))
        x = self.decoder_inputs(E, input_ids, input_labels, train, rng)
        z = self.decode_hidden(x, H, train, rng, trace)
        return self.next_token_logits(z, E)

    # ------------------------------------------------------------------
    # persistence

    def save(self, path: str, extra_arrays: dict[str, np.ndarray] | None = None,
             extra_meta: dict | None = None) -> None:
        arrays = {name: t.data for name, t in self.params.items()}
        if extra_arrays:
            overlap = set(arrays) & set(extra_arrays)
            if overlap:
                raise ValueError(f"extra arrays collide with parameters: {sorted(overlap)}")
            arrays.update(extra_arrays)
        meta = {
            "format": "spangraph-checkpoint-v1",
            "config": asdict(self.config),
            "schema": _schema_to_meta(self.schema),
            "words": list(self.word_vocab.words),
            "param_names": sorted(self.params),
        }
        if extra_meta:
            meta["extra"] = extra_meta
        T.save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path: str) -> tuple["Model", dict[str, np.ndarray], dict]:
        """Rebuild a model from a checkpoint.

        Returns the model, any non-parameter arrays stored alongside it
        (optimizer state), and the ``extra`` metadata dict.
        """
        arrays, meta = T.load_arrays(path)
        if not meta or meta.get("format") != "spangraph-checkpoint-v1":
            raise ValueError(f"{path} is not a model checkpoint")
        config = ModelConfig(**meta["config"])
        schema = _schema_from_meta(meta["schema"])
        vocab = WordVocab(meta["words"])
        names = meta["param_names"]
        missing = [n for n in names if n not in arrays]
        if missing:
            raise ValueError(f"checkpoint missing arrays: {missing[:5]}")
        params = {n: Tensor(arrays[n], requires_grad=True) for n in names}
        rest = {k: v for k, v in arrays.items() if k not in set(names)}
        model = cls(config, schema, vocab, params=params)
        return model, rest, (meta.get("extra") or {})


class DecodeRuntime:
    """Row-at-a-time decoder over plain numpy for generation.

    ``prefix_logits`` rebuilds every row of the prefix from scratch;
    ``step_logits`` extends a live key/value cache by one row.  Both run the
    same row routine under shape-stable matmul kernels, so a cached decode
    reproduces the cache-free one bit for bit.
    """

    def __init__(self, model: Model, token_ids: np.ndarray):
        self.config = model.config
        with T.no_grad(), T.rowwise_kernels():
            H = model.encode(token_ids)
            E = model.build_E(model.span_embeddings(H))
        self.H = H.data
        self.E = E.data
        self.ET = np.ascontiguousarray(self.E.T)
        self.p = {name: t.data for name, t in model.params.items()}
        self.dk = self.config.d_model // self.config.heads
        self.scale = np.asarray(1.0 / math.sqrt(self.dk), dtype=self.H.dtype)
        with T.rowwise_kernels():
            self.cross_kv = []
            for i in range(self.config.dec_layers):
                k = T.matmul_np(self.H, self.p[f"dec.{i}.cross.wk"]) + self.p[f"dec.{i}.cross.bk"]
                v = T.matmul_np(self.H, self.p[f"dec.{i}.cross.wv"]) + self.p[f"dec.{i}.cross.bv"]
                self.cross_kv.append((k, v))

    def fresh_caches(self) -> list[dict[str, list[np.ndarray]]]:
        return [{"k": [], "v": []} for _ in range(self.config.dec_layers)]

    def input_row(self, sym_id: int, position: int, label: int) -> np.ndarray:
        x = self.E[sym_id].copy()
        if self.config.use_positions:
            x = x + self.p["dec.pos"][position]
        if self.config.use_structure:
            x = x + self.p["dec.struct"][label]
        return x[None, :]

    def _heads_attend(self, q: np.ndarray, K: np.ndarray, V: np.ndarray) -> np.ndarray:
        parts = []
        for h in range(self.config.heads):
            lo, hi = h * self.dk, (h + 1) * self.dk
            scores = T.matmul_np(q[:, lo:hi], np.ascontiguousarray(K[:, lo:hi].T)) * self.scale
            w = T.masked_softmax_np(scores, None)
            parts.append(T.matmul_np(w, np.ascontiguousarray(V[:, lo:hi])))
        return np.concatenate(parts, axis=-1)

    def _advance_row(self, x: np.ndarray, caches) -> np.ndarray:
        p = self.p
        eps = 1e-5
        for i in range(self.config.dec_layers):
            h = T.layer_norm_np(x, p[f"dec.{i}.ln1.g"], p[f"dec.{i}.ln1.b"], eps)[0]
            q = T.matmul_np(h, p[f"dec.{i}.self.wq"]) + p[f"dec.{i}.self.bq"]
            caches[i]["k"].append(T.matmul_np(h, p[f"dec.{i}.self.wk"]) + p[f"dec.{i}.self.bk"])
            caches[i]["v"].append(T.matmul_np(h, p[f"dec.{i}.self.wv"]) + p[f"dec.{i}.self.bv"])
            K = np.concatenate(caches[i]["k"], axis=0)
            V = np.concatenate(caches[i]["v"], axis=0)
            ctx = self._heads_attend(q, K, V)
            x = x + T.matmul_np(ctx, p[f"dec.{i}.self.wo"]) + p[f"dec.{i}.self.bo"]

            h = T.layer_norm_np(x, p[f"dec.{i}.ln2.g"], p[f"dec.{i}.ln2.b"], eps)[0]
            q = T.matmul_np(h, p[f"dec.{i}.cross.wq"]) + p[f"dec.{i}.cross.bq"]
            ctx = self._heads_attend(q, *self.cross_kv[i])
            x = x + T.matmul_np(ctx, p[f"dec.{i}.cross.wo"]) + p[f"dec.{i}.cross.bo"]

            h = T.layer_norm_np(x, p[f"dec.{i}.ln3.g"], p[f"dec.{i}.ln3.b"], eps)[0]
            inner = T.gelu_np(T.matmul_np(h, p[f"dec.{i}.ffn.w1"]) + p[f"dec.{i}.ffn.b1"])
            x = x + T.matmul_np(inner, p[f"dec.{i}.ffn.w2"]) + p[f"dec.{i}.ffn.b2"]
        return x

    def step_logits(self, sym_id: int, position: int, label: int, caches) -> np.ndarray:
        """Extend the cache by one input symbol; logits for the next symbol (V,)."""
        with T.rowwise_kernels():
            x = self.input_row(sym_id, position, label)
            z = self._advance_row(x, caches)
            return T.matmul_np(z, self.ET)[0]

    def prefix_logits(self, ids, labels) -> np.ndarray:
        """Cache-free recompute of the whole prefix; logits after its last symbol."""
        with T.rowwise_kernels():
            caches = self.fresh_caches()
            z = None
            for pos, (sym_id, label) in enumerate(zip(ids, labels)):
                z = self._advance_row(self.input_row(sym_id, pos, label), caches)
            if z is None:
                raise ValueError("empty prefix")
            return T.matmul_np(z, self.ET)[0]
