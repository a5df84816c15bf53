"""Reverse-mode autodiff over numpy arrays.

A Tensor wraps one numpy array (float32 for training, float64 for gradient
checking; ops inherit the dtype of their inputs).  Primitive ops record a
backward closure on the innermost active Graph, a thread-local tape.  When
no graph is active the ops run forward-only, which is how inference
executes and why frozen models are safe to share across threads.
"""

from __future__ import annotations

import threading
from typing import Iterable, Sequence

import numpy as np

_tls = threading.local()


def _graph_stack() -> list["Graph"]:
    stack = getattr(_tls, "stack", None)
    if stack is None:
        stack = []
        _tls.stack = stack
    return stack


class Tensor:
    """Numpy array plus gradient slot."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = np.asarray(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Graph:
    """Ordered tape of primitive ops; backward() replays it in reverse."""

    def __init__(self):
        self._entries: list[tuple[tuple[Tensor, ...], callable]] = []

    def __enter__(self) -> "Graph":
        _graph_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        popped = _graph_stack().pop()
        assert popped is self, "graph stack corrupted"
        return False

    def __len__(self) -> int:
        return len(self._entries)


def _record(outputs: tuple[Tensor, ...], fn) -> None:
    stack = _graph_stack()
    if stack and any(o.requires_grad for o in outputs):
        stack[-1]._entries.append((outputs, fn))


def _acc(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def zero_grads(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def backward(graph: Graph, loss: Tensor, params: Iterable[Tensor] = ()) -> None:
    """Populate .grad for everything reachable from loss on the tape.

    Parameters passed in `params` that the loss never touched receive an
    explicit zero gradient so optimizers can iterate uniformly.
    """
    if loss.data.shape != ():
        raise ValueError("backward requires a scalar loss")
    if loss.grad is None:
        loss.grad = np.ones_like(loss.data)
    else:
        loss.grad += 1.0
    for outputs, fn in reversed(graph._entries):
        if any(o.grad is not None for o in outputs):
            fn()
    for p in params:
        if p.requires_grad and p.grad is None:
            p.grad = np.zeros_like(p.data)


def zeros(shape, dtype=np.float32, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=requires_grad)


# ---------------------------------------------------------------------------
# arithmetic


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data, requires_grad=a.requires_grad or b.requires_grad)

    def fn():
        _acc(a, out.grad)
        _acc(b, out.grad)

    _record((out,), fn)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"sub shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data - b.data, requires_grad=a.requires_grad or b.requires_grad)

    def fn():
        _acc(a, out.grad)
        _acc(b, -out.grad)

    _record((out,), fn)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"mul shape mismatch {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data, requires_grad=a.requires_grad or b.requires_grad)

    def fn():
        _acc(a, out.grad * b.data)
        _acc(b, out.grad * a.data)

    _record((out,), fn)
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * a.dtype.type(c), requires_grad=a.requires_grad)

    def fn():
        _acc(a, out.grad * a.dtype.type(c))

    _record((out,), fn)
    return out


def add_n(tensors: Sequence[Tensor]) -> Tensor:
    """Sum of same-shape tensors."""
    if not tensors:
        raise ValueError("add_n of empty sequence")
    acc = tensors[0].data.copy()
    for t in tensors[1:]:
        acc += t.data
    out = Tensor(acc, requires_grad=any(t.requires_grad for t in tensors))

    def fn():
        for t in tensors:
            _acc(t, out.grad)

    _record((out,), fn)
    return out


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """(n, d) + (d,), broadcast over rows."""
    out = Tensor(m.data + v.data[None, :], requires_grad=m.requires_grad or v.requires_grad)

    def fn():
        _acc(m, out.grad)
        _acc(v, out.grad.sum(axis=0))

    _record((out,), fn)
    return out


def add_scalar(v: Tensor, s: Tensor) -> Tensor:
    """Vector plus scalar tensor, broadcast."""
    if s.data.shape != ():
        raise ValueError("add_scalar expects a scalar tensor")
    out = Tensor(v.data + s.data, requires_grad=v.requires_grad or s.requires_grad)

    def fn():
        _acc(v, out.grad)
        _acc(s, out.grad.sum())

    _record((out,), fn)
    return out


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-D @ 2-D or 2-D @ 1-D."""
    if a.data.ndim != 2 or b.data.ndim not in (1, 2):
        raise ValueError("matmul expects (2-D, 1-D or 2-D) operands")
    if a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul inner dim mismatch {a.data.shape} @ {b.data.shape}")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)
    b_is_vec = b.data.ndim == 1

    def fn():
        g = out.grad
        if b_is_vec:
            _acc(a, np.outer(g, b.data))
            _acc(b, a.data.T @ g)
        else:
            _acc(a, g @ b.data.T)
            _acc(b, a.data.T @ g)

    _record((out,), fn)
    return out


def dot(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 1 or b.data.ndim != 1 or a.data.shape != b.data.shape:
        raise ValueError("dot expects equal-length vectors")
    out = Tensor(a.data @ b.data, requires_grad=a.requires_grad or b.requires_grad)

    def fn():
        _acc(a, out.grad * b.data)
        _acc(b, out.grad * a.data)

    _record((out,), fn)
    return out


def transpose(m: Tensor) -> Tensor:
    out = Tensor(m.data.T, requires_grad=m.requires_grad)

    def fn():
        _acc(m, out.grad.T)

    _record((out,), fn)
    return out


# ---------------------------------------------------------------------------
# shaping


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ValueError("concat of empty sequence")
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        requires_grad=any(t.requires_grad for t in tensors),
    )
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def fn():
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = tuple(slice(None) if d != axis else slice(lo, hi) for d in range(out.grad.ndim))
            _acc(t, out.grad[idx])

    _record((out,), fn)
    return out


def stack(tensors: Sequence[Tensor]) -> Tensor:
    """Stack equal-shape vectors into rows of a matrix."""
    if not tensors:
        raise ValueError("stack of empty sequence")
    out = Tensor(np.stack([t.data for t in tensors], axis=0),
                 requires_grad=any(t.requires_grad for t in tensors))

    def fn():
        for i, t in enumerate(tensors):
            _acc(t, out.grad[i])

    _record((out,), fn)
    return out


def tile_row(v: Tensor, n: int) -> Tensor:
    """Repeat a vector as n rows."""
    out = Tensor(np.broadcast_to(v.data, (n, v.data.shape[0])).copy(),
                 requires_grad=v.requires_grad)

    def fn():
        _acc(v, out.grad.sum(axis=0))

    _record((out,), fn)
    return out


def rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: (|V|, d)[ids] -> (len(ids), d)."""
    idx = np.asarray(ids, dtype=np.intp)
    out = Tensor(table.data[idx], requires_grad=table.requires_grad)

    def fn():
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            np.add.at(table.grad, idx, out.grad)

    _record((out,), fn)
    return out


def row(table: Tensor, i: int) -> Tensor:
    """Single-row lookup: (n, d)[i] -> (d,)."""
    out = Tensor(table.data[i], requires_grad=table.requires_grad)

    def fn():
        if table.requires_grad:
            if table.grad is None:
                table.grad = np.zeros_like(table.data)
            table.grad[i] += out.grad

    _record((out,), fn)
    return out


def gather(v: Tensor, i: int) -> Tensor:
    """Scalar element of a vector."""
    if v.data.ndim != 1:
        raise ValueError("gather expects a vector")
    out = Tensor(v.data[i], requires_grad=v.requires_grad)

    def fn():
        if v.requires_grad:
            if v.grad is None:
                v.grad = np.zeros_like(v.data)
            v.grad[i] += out.grad

    _record((out,), fn)
    return out


# ---------------------------------------------------------------------------
# nonlinearities and reductions


def sigmoid(t: Tensor) -> Tensor:
    d = t.data
    out_data = np.empty_like(d)
    pos = d >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out_data[~pos] = ez / (1.0 + ez)
    out = Tensor(out_data, requires_grad=t.requires_grad)

    def fn():
        _acc(t, out.grad * out_data * (1.0 - out_data))

    _record((out,), fn)
    return out


def tanh(t: Tensor) -> Tensor:
    out_data = np.tanh(t.data)
    out = Tensor(out_data, requires_grad=t.requires_grad)

    def fn():
        _acc(t, out.grad * (1.0 - out_data * out_data))

    _record((out,), fn)
    return out


def log(t: Tensor) -> Tensor:
    out = Tensor(np.log(t.data), requires_grad=t.requires_grad)

    def fn():
        _acc(t, out.grad / t.data)

    _record((out,), fn)
    return out


def tensor_sum(t: Tensor) -> Tensor:
    out = Tensor(t.data.sum(), requires_grad=t.requires_grad)

    def fn():
        _acc(t, np.full_like(t.data, out.grad))

    _record((out,), fn)
    return out


def mean_rows(m: Tensor) -> Tensor:
    """(n, d) -> (d,): column means."""
    if m.data.ndim != 2:
        raise ValueError("mean_rows expects a matrix")
    n = m.data.shape[0]
    out = Tensor(m.data.mean(axis=0), requires_grad=m.requires_grad)

    def fn():
        _acc(m, np.broadcast_to(out.grad / n, m.data.shape))

    _record((out,), fn)
    return out


def max_rows(m: Tensor) -> Tensor:
    """(n, d) -> (d,): column max; gradient to the first argmax per column."""
    if m.data.ndim != 2:
        raise ValueError("max_rows expects a matrix")
    arg = m.data.argmax(axis=0)
    out = Tensor(m.data.max(axis=0), requires_grad=m.requires_grad)
    cols = np.arange(m.data.shape[1])

    def fn():
        if m.requires_grad:
            if m.grad is None:
                m.grad = np.zeros_like(m.data)
            np.add.at(m.grad, (arg, cols), out.grad)

    _record((out,), fn)
    return out


def avg_pool_rows(m: Tensor, width: int) -> Tensor:
    """Average each run of `width` consecutive rows: (n, d) -> (n-width+1, d)."""
    n = m.data.shape[0]
    if width < 1 or width > n:
        raise ValueError(f"avg_pool_rows width {width} out of range for {n} rows")
    acc = m.data[: n - width + 1].copy()
    for k in range(1, width):
        acc += m.data[k : n - width + 1 + k]
    out = Tensor(acc / m.dtype.type(width), requires_grad=m.requires_grad)

    def fn():
        if m.requires_grad:
            if m.grad is None:
                m.grad = np.zeros_like(m.data)
            g = out.grad / m.dtype.type(width)
            for k in range(width):
                m.grad[k : n - width + 1 + k] += g

    _record((out,), fn)
    return out


# ---------------------------------------------------------------------------
# softmax and dropout


def _neg_inf_for(dtype) -> float:
    # large negative stand-in for -inf; avoids inf-inf NaNs in the shift
    return -1e9 if dtype == np.float32 else -1e30


def softmax_masked(logits: Tensor, keep=None) -> Tensor:
    """Softmax over kept positions only; masked positions come out exactly 0.

    `keep` is a boolean array over positions (None keeps everything).
    Gradient flows only to kept positions.
    """
    if logits.data.ndim != 1:
        raise ValueError("softmax_masked expects a vector of logits")
    x = logits.data
    if keep is None:
        keep_arr = None
        z = x - x.max()
        p = np.exp(z)
    else:
        keep_arr = np.asarray(keep, dtype=bool)
        if keep_arr.shape != x.shape:
            raise ValueError("mask shape does not match logits")
        if not keep_arr.any():
            raise ValueError("empty support")
        z = np.where(keep_arr, x, x.dtype.type(_neg_inf_for(x.dtype)))
        z = z - z.max()
        p = np.exp(z)
        p[~keep_arr] = 0.0
    p = p / p.sum()
    out = Tensor(p, requires_grad=logits.requires_grad)

    def fn():
        g = out.grad
        gz = p * (g - np.dot(g, p))
        if keep_arr is not None:
            gz[~keep_arr] = 0.0
        _acc(logits, gz)

    _record((out,), fn)
    return out


def softmax(logits: Tensor) -> Tensor:
    return softmax_masked(logits, None)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: scales kept activations by 1/(1-rate); identity at inference."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("training-mode dropout requires an rng")
    keep = (rng.random(x.data.shape) >= rate).astype(x.dtype)
    mask = keep / x.dtype.type(1.0 - rate)
    out = Tensor(x.data * mask, requires_grad=x.requires_grad)

    def fn():
        _acc(x, out.grad * mask)

    _record((out,), fn)
    return out
