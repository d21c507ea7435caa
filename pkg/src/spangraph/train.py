"""Teacher-forced training with grammar-masked cross-entropy.

Every batch is rebuilt from scratch out of per-step seeded generators
(``default_rng([seed, step, k])``), so a run is a pure function of the seed
and the data: rerunning or resuming from a checkpoint reproduces the exact
loss sequence bit for bit (with single-threaded BLAS).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .graph import Document, EntitySpan, IEGraph, Relation
from .grammar import legal_mask, replay
from .linearize import Ordering, linearize
from .model import Model, decay_excluded, param_group
from .vocab import build_layout, symbol_to_id


class GoldIllegalUnderMask(ValueError):
    """A gold target symbol is forbidden by the grammar mask at its position.

    Signals a schema/data mismatch (e.g. a gold relation whose argument pair
    the schema does not allow); training on such an example would put
    probability mass on a symbol the decoder can never produce.
    """


@dataclass(frozen=True)
class TrainConfig:
    max_steps: int = 1000
    batch_size: int = 8
    max_sentences: int = 5
    ordering: Ordering = Ordering.SORTED
    seed: int = 0
    lr_encoder: float = 3e-5
    lr_decoder: float = 7e-5
    lr_other: float = 1e-4
    warmup_frac: float = 0.1
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    clip_norm: float | None = None
    eval_every: int = 0

    def __post_init__(self):
        if self.max_steps < 1 or self.batch_size < 1 or self.max_sentences < 1:
            raise ValueError("max_steps, batch_size and max_sentences must be positive")
        if not 0.0 < self.warmup_frac < 1.0:
            raise ValueError("warmup_frac must lie strictly between 0 and 1")

    def to_meta(self) -> dict:
        return {
            "max_steps": self.max_steps,
            "batch_size": self.batch_size,
            "max_sentences": self.max_sentences,
            "ordering": self.ordering.name,
            "seed": self.seed,
            "lr_encoder": self.lr_encoder,
            "lr_decoder": self.lr_decoder,
            "lr_other": self.lr_other,
            "warmup_frac": self.warmup_frac,
            "weight_decay": self.weight_decay,
            "betas": list(self.betas),
            "eps": self.eps,
            "clip_norm": self.clip_norm,
            "eval_every": self.eval_every,
        }

    @classmethod
    def from_meta(cls, meta: dict) -> "TrainConfig":
        kw = dict(meta)
        kw["ordering"] = Ordering[kw["ordering"]]
        kw["betas"] = tuple(kw["betas"])
        return cls(**kw)


def lr_at(step: int, cfg: TrainConfig) -> dict[str, float]:
    """Per-group learning rates at ``step`` (updates run 1..max_steps).

    Linear warmup from zero to the group base rate over the first
    warmup_frac of training, then linear decay that reaches exactly zero at
    the final step.
    """
    if not 0 <= step <= cfg.max_steps:
        raise ValueError(f"step {step} outside 0..{cfg.max_steps}")
    warmup = max(1, round(cfg.warmup_frac * cfg.max_steps))

    def shape(base: float) -> float:
        if step <= warmup:
            return base * step / warmup
        return base * (cfg.max_steps - step) / (cfg.max_steps - warmup)

    return {
        "encoder": shape(cfg.lr_encoder),
        "decoder": shape(cfg.lr_decoder),
        "other": shape(cfg.lr_other),
    }


def augment(examples, rng: np.random.Generator, max_sentences: int):
    """Concatenate 1..max_sentences uniformly sampled examples (with replacement).

    Entity spans shift by the token offset of their source sentence and
    relation argument indices by the entity offset, so the merged graph is
    the disjoint union of the originals.
    """
    n = int(rng.integers(1, max_sentences + 1))
    picks = rng.integers(0, len(examples), size=n)
    tokens: list[str] = []
    ids: list[str] = []
    ents: list[EntitySpan] = []
    rels: list[Relation] = []
    for i in picks:
        doc, graph = examples[int(i)]
        tok_off, ent_off = len(tokens), len(ents)
        tokens.extend(doc.tokens)
        ids.append(doc.id)
        ents.extend(
            EntitySpan(e.start + tok_off, e.end + tok_off, e.type_id) for e in graph.entities
        )
        rels.extend(
            Relation(r.head + ent_off, r.tail + ent_off, r.rel_type_id) for r in graph.relations
        )
    return Document(tuple(tokens), id="+".join(ids)), IEGraph(tuple(ents), tuple(rels))


def encode_example(model: Model, doc: Document, graph: IEGraph,
                   ordering: Ordering = Ordering.SORTED, rng=None):
    """Linearize one example into (token_ids, symbol_ids, labels, target_masks)."""
    layout = build_layout(len(doc), model.schema, model.config.max_span_width)
    seq = linearize(graph, ordering, rng)
    ids = np.array([symbol_to_id(layout, s) for s in seq.symbols], dtype=np.int64)
    states, _ = replay(seq.symbols)
    labels = np.array([int(s.phase) for s in states], dtype=np.int64)
    masks = np.stack([legal_mask(states[i], layout, model.schema) for i in range(1, len(ids))])
    for pos, (row, target) in enumerate(zip(masks, ids[1:]), start=1):
        if not row[target]:
            raise GoldIllegalUnderMask(
                f"gold symbol {seq.symbols[pos]} at position {pos} is masked out"
            )
    token_ids = model.word_vocab.encode(doc.tokens)
    return token_ids, ids, labels, masks


def example_loss(model: Model, token_ids, ids, labels, masks,
                 train: bool = False, rng=None) -> T.Tensor:
    logits = model.sequence_logits(token_ids, ids[:-1], labels[:-1], train=train, rng=rng)
    return T.cross_entropy(logits, ids[1:], masks)


class AdamW:
    """Adam with decoupled weight decay and per-group learning rates.

    Norm gains/biases, plain biases and embedding tables take no decay.
    """

    def __init__(self, params: dict[str, T.Tensor], betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = params
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in params.items()}
        self.v = {n: np.zeros_like(p.data) for n, p in params.items()}

    def step(self, lrs: dict[str, float]) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if not decay_excluded(name):
                update = update + self.weight_decay * p.data
            p.data -= lrs[param_group(name)] * update

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {f"opt.m.{n}": a for n, a in self.m.items()}
        out.update({f"opt.v.{n}": a for n, a in self.v.items()})
        return out

    def load_state(self, arrays: dict[str, np.ndarray], t: int) -> None:
        for n in self.params:
            self.m[n] = arrays[f"opt.m.{n}"].copy()
            self.v[n] = arrays[f"opt.v.{n}"].copy()
        self.t = t


def clip_gradients(params: dict[str, T.Tensor], max_norm: float) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad.astype(np.float64) ** 2).sum())
    norm = float(np.sqrt(total))
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad *= scale
    return norm


@dataclass
class TrainResult:
    losses: list[float] = field(default_factory=list)
    best_dev_f1: float | None = None
    best_path: str | None = None
    last_path: str | None = None
    metrics_path: str | None = None


def train_loop(model: Model, cfg: TrainConfig, train_examples,
               dev_examples=None, out_dir: str | None = None,
               optimizer: AdamW | None = None, start_step: int = 1,
               quiet: bool = True) -> TrainResult:
    """Run updates start_step..max_steps; returns per-step losses.

    With an out_dir, appends one JSON line per step to metrics.jsonl and
    keeps best.npz (highest strict relation F1 on dev, ties to the latest)
    plus last.npz.  Passing the optimizer back in together with start_step
    resumes a run exactly where a checkpoint left off.
    """
    if not train_examples:
        raise ValueError("no training examples")
    from .decode import DecodeConfig, generate
    from .metrics import evaluate_pairs

    opt = optimizer or AdamW(model.params, cfg.betas, cfg.eps, cfg.weight_decay)
    result = TrainResult()
    best_f1 = -1.0
    log_fh = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        result.metrics_path = os.path.join(out_dir, "metrics.jsonl")
        result.best_path = os.path.join(out_dir, "best.npz")
        result.last_path = os.path.join(out_dir, "last.npz")
        log_fh = open(result.metrics_path, "a", encoding="utf-8")

    def log(record: dict) -> None:
        if log_fh is not None:
            log_fh.write(json.dumps(record, sort_keys=True, separators=(",", ":")) + "\n")
            log_fh.flush()
        if not quiet:
            print(json.dumps(record, sort_keys=True))

    def save(path: str, step: int) -> None:
        model.save(
            path,
            extra_arrays=opt.state_arrays(),
            extra_meta={"step": step, "opt_t": opt.t, "train_config": cfg.to_meta()},
        )

    try:
        for step in range(start_step, cfg.max_steps + 1):
            data_rng = np.random.default_rng([cfg.seed, step, 0])
            drop_rng = np.random.default_rng([cfg.seed, step, 1])
            opt.zero_grad()
            losses = []
            for _ in range(cfg.batch_size):
                doc, graph = augment(train_examples, data_rng, cfg.max_sentences)
                tok, ids, labels, masks = encode_example(model, doc, graph, cfg.ordering, data_rng)
                losses.append(example_loss(model, tok, ids, labels, masks, True, drop_rng))
            total = losses[0]
            for extra in losses[1:]:
                total = T.add(total, extra)
            mean = T.mul(total, 1.0 / len(losses))
            T.backward(mean)
            if cfg.clip_norm is not None:
                clip_gradients(model.params, cfg.clip_norm)
            lrs = lr_at(step, cfg)
            opt.step(lrs)

            loss_val = float(mean.data)
            result.losses.append(loss_val)
            record = {
                "step": step,
                "loss": loss_val,
                "lr_encoder": lrs["encoder"],
                "lr_decoder": lrs["decoder"],
                "lr_other": lrs["other"],
            }
            is_eval = bool(dev_examples) and cfg.eval_every > 0 and (
                step % cfg.eval_every == 0 or step == cfg.max_steps
            )
            if is_eval:
                dcfg = DecodeConfig(seed=cfg.seed)
                pairs = [
                    (generate(model, doc, dcfg).graph, gold) for doc, gold in dev_examples
                ]
                report = evaluate_pairs(pairs)
                record["dev_ent_f1"] = report.ent_prf[2]
                record["dev_rel_f1"] = report.rel_prf[2]
                record["dev_rel_strict_f1"] = report.rel_strict_prf[2]
                if report.rel_strict_prf[2] >= best_f1:
                    best_f1 = report.rel_strict_prf[2]
                    result.best_dev_f1 = best_f1
                    if result.best_path is not None:
                        save(result.best_path, step)
            log(record)
        if result.last_path is not None:
            save(result.last_path, cfg.max_steps)
        if result.best_path is not None and best_f1 < 0.0:
            save(result.best_path, cfg.max_steps)
    finally:
        if log_fh is not None:
            log_fh.close()
    return result
