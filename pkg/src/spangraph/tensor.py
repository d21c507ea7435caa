"""Dense float tensors with reverse-mode automatic differentiation.

A small tape-based engine over numpy arrays: each op records its parents and a
backward rule; ``backward`` walks the graph in reverse topological order and
accumulates gradients.  Layout is row-major with no views or strides beyond a
2-D transpose.  All randomness (dropout) flows through explicit generators.

``rowwise_kernels`` switches matrix multiplication to non-optimized einsum,
whose accumulation order per output element does not depend on the number of
rows.  Incremental decoding relies on this: a row computed alone is bit-equal
to the same row inside a larger product, which BLAS does not guarantee.
"""

from __future__ import annotations

import contextlib
import json
import math
import os
import tempfile

import numpy as np
from scipy.special import erf


class ShapeMismatch(ValueError):
    pass


class NonFiniteDetected(FloatingPointError):
    pass


class NotScalar(ValueError):
    pass


_grad_enabled = True
_rowwise = False
_check_finite = False


@contextlib.contextmanager
def no_grad():
    """Skip tape recording inside the block (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def rowwise_kernels():
    """Use shape-stable matmul kernels inside the block (see module docstring)."""
    global _rowwise
    prev, _rowwise = _rowwise, True
    try:
        yield
    finally:
        _rowwise = prev


@contextlib.contextmanager
def debug_check_finite():
    """Raise NonFiniteDetected as soon as any op produces a NaN or infinity."""
    global _check_finite
    prev, _check_finite = _check_finite, True
    try:
        yield
    finally:
        _check_finite = prev


def matmul_np(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if _rowwise:
        return np.einsum("ij,jk->ik", a, b, optimize=False)
    return a @ b


def neg_fill(dtype) -> float:
    # -inf survives exp() as an exact zero at 64-bit; at 32-bit a large finite
    # constant underflows to zero the same way without tripping inf arithmetic
    return -np.inf if np.dtype(dtype) == np.float64 else -1e9


def masked_softmax_np(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    if mask is not None:
        if mask.shape != x.shape:
            mask = np.broadcast_to(mask, x.shape)
        if not mask.any(axis=-1).all():
            raise ShapeMismatch("softmax row with every entry masked")
        x = np.where(mask, x, np.asarray(neg_fill(x.dtype), dtype=x.dtype))
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def layer_norm_np(x: np.ndarray, gain: np.ndarray, bias: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + np.asarray(eps, dtype=x.dtype))
    xhat = (x - mu) * inv
    return gain * xhat + bias, xhat, inv


def gelu_np(x: np.ndarray) -> np.ndarray:
    return (0.5 * x * (1.0 + erf(x * np.asarray(math.sqrt(0.5), dtype=x.dtype)))).astype(
        x.dtype, copy=False
    )


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={'set' if self.grad is not None else 'none'})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def _lift(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    if _check_finite and not np.all(np.isfinite(data)):
        raise NonFiniteDetected("op produced a non-finite value")
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad or p._parents for p in parents):
        out._parents = parents
        out._backward = backward
        out.requires_grad = True
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    out_data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(g, b.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    out_data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.shape))
        _accum(b, _unbroadcast(-g, b.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = a if isinstance(a, Tensor) else _lift(a, b)
    b = _lift(b, a)
    out_data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.shape))
        _accum(b, _unbroadcast(g * a.data, b.shape))

    return _make(out_data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeMismatch(f"matmul expects 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul inner dims differ: {a.shape} @ {b.shape}")
    out_data = matmul_np(a.data, b.data)

    def backward(g):
        _accum(a, matmul_np(g, b.data.T))
        _accum(b, matmul_np(a.data.T, g))

    return _make(out_data, (a, b), backward)


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeMismatch(f"transpose expects a 2-D tensor, got shape {x.shape}")
    out_data = np.ascontiguousarray(x.data.T)

    def backward(g):
        _accum(x, g.T)

    return _make(out_data, (x,), backward)


def concat_last_dim(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[:-1] != b.shape[:-1]:
        raise ShapeMismatch(f"concat_last_dim leading dims differ: {a.shape} vs {b.shape}")
    out_data = np.concatenate([a.data, b.data], axis=-1)
    split = a.shape[-1]

    def backward(g):
        _accum(a, g[..., :split])
        _accum(b, g[..., split:])

    return _make(out_data, (a, b), backward)


def slice_last_dim(x: Tensor, start: int, stop: int) -> Tensor:
    if not (0 <= start < stop <= x.shape[-1]):
        raise ShapeMismatch(f"slice [{start}:{stop}] outside last dim of {x.shape}")
    out_data = np.ascontiguousarray(x.data[..., start:stop])

    def backward(g):
        full = np.zeros_like(x.data)
        full[..., start:stop] = g
        _accum(x, full)

    return _make(out_data, (x,), backward)


def concat_rows(parts: list[Tensor]) -> Tensor:
    if not parts or any(p.data.ndim != 2 for p in parts):
        raise ShapeMismatch("concat_rows expects a non-empty list of 2-D tensors")
    out_data = np.concatenate([p.data for p in parts], axis=0)
    sizes = [p.shape[0] for p in parts]

    def backward(g):
        at = 0
        for p, n in zip(parts, sizes):
            _accum(p, g[at : at + n])
            at += n

    return _make(out_data, tuple(parts), backward)


def interleave_rows(parts: list[Tensor]) -> Tensor:
    """Stack C equally-shaped (N, D) tensors into (N*C, D) with row i*C + c = parts[c][i]."""
    if not parts or any(p.data.ndim != 2 for p in parts):
        raise ShapeMismatch("interleave_rows expects a non-empty list of 2-D tensors")
    n, d = parts[0].shape
    if any(p.shape != (n, d) for p in parts):
        raise ShapeMismatch("interleave_rows parts must share one shape")
    c = len(parts)
    out_data = np.empty((n * c, d), dtype=parts[0].dtype)
    for i, p in enumerate(parts):
        out_data[i::c] = p.data

    def backward(g):
        for i, p in enumerate(parts):
            _accum(p, g[i::c])

    return _make(out_data, tuple(parts), backward)


def softmax_last_dim(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; masked entries get probability exactly 0."""
    out_data = masked_softmax_np(x.data, mask)

    def backward(g):
        y = out_data
        inner = (g * y).sum(axis=-1, keepdims=True)
        _accum(x, y * (g - inner))

    return _make(out_data, (x,), backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    out_data, xhat, inv = layer_norm_np(x.data, gain.data, bias.data, eps)
    d = x.shape[-1]

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        _accum(gain, (g * xhat).sum(axis=lead))
        _accum(bias, g.sum(axis=lead))
        gx = g * gain.data
        term = gx - gx.mean(axis=-1, keepdims=True) - xhat * (gx * xhat).sum(
            axis=-1, keepdims=True
        ) / d
        _accum(x, term * inv)

    return _make(out_data, (x, gain, bias), backward)


def gelu(x: Tensor) -> Tensor:
    out_data = gelu_np(x.data)

    def backward(g):
        z = x.data
        cdf = 0.5 * (1.0 + erf(z * math.sqrt(0.5)))
        pdf = np.exp(-0.5 * z * z) / math.sqrt(2.0 * math.pi)
        _accum(x, (g * (cdf + z * pdf)).astype(x.dtype, copy=False))

    return _make(out_data, (x,), backward)


def dropout(x: Tensor, p: float, rng: np.random.Generator | None, train: bool) -> Tensor:
    if not train or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = (rng.random(x.shape) >= p).astype(x.dtype)
    scale = np.asarray(1.0 / (1.0 - p), dtype=x.dtype)
    out_data = x.data * keep * scale

    def backward(g):
        _accum(x, g * keep * scale)

    return _make(out_data, (x,), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or table.data.ndim != 2:
        raise ShapeMismatch("embedding_lookup expects a 2-D table and 1-D ids")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ShapeMismatch("embedding id outside table")
    out_data = table.data[ids]

    def backward(g):
        if table.grad is None:
            table.grad = np.zeros_like(table.data)
        np.add.at(table.grad, ids, g)

    return _make(out_data, (table,), backward)


def cross_entropy(logits: Tensor, targets, mask: np.ndarray | None = None) -> Tensor:
    """Mean negative log-likelihood of ``targets`` rows under masked softmax."""
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    x = logits.data if logits.data.ndim == 2 else logits.data[None, :]
    if targets.shape[0] != x.shape[0]:
        raise ShapeMismatch("one target per logits row required")
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        if not mask[np.arange(len(targets)), targets].all():
            raise ValueError("a target id is masked out")
    probs = masked_softmax_np(x, mask)
    picked = probs[np.arange(len(targets)), targets]
    out_data = np.asarray(-np.log(picked).mean(), dtype=x.dtype)

    def backward(g):
        grad = probs.copy()
        grad[np.arange(len(targets)), targets] -= 1.0
        grad *= np.asarray(g / len(targets), dtype=x.dtype)
        _accum(logits, grad.reshape(logits.shape))

    return _make(out_data, (logits,), backward)


def sum_all(x: Tensor) -> Tensor:
    out_data = np.asarray(x.data.sum(), dtype=x.dtype)

    def backward(g):
        _accum(x, np.full_like(x.data, g))

    return _make(out_data, (x,), backward)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every tensor reachable from a scalar loss."""
    if loss.data.ndim != 0:
        raise NotScalar(f"backward needs a scalar, got shape {loss.shape}")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def save_arrays(path: str, arrays: dict[str, np.ndarray], meta: dict | None = None) -> None:
    """Write named arrays (plus a JSON metadata blob) to one .npz file, atomically."""
    payload = dict(arrays)
    if meta is not None:
        payload["__meta__"] = np.asarray(json.dumps(meta, sort_keys=True))
    directory = os.path.dirname(os.path.abspath(path)) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".npz.tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_arrays(path: str) -> tuple[dict[str, np.ndarray], dict | None]:
    with np.load(path, allow_pickle=False) as zf:
        arrays = {k: zf[k] for k in zf.files if k != "__meta__"}
        meta = json.loads(str(zf["__meta__"])) if "__meta__" in zf.files else None
    return arrays, meta
