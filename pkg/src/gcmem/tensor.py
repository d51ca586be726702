"""Dense float32 tensors with tape-based reverse-mode differentiation.

Every primitive op computes eagerly with numpy and, when a ``Tape`` is
active and an input requires gradients, appends a backward rule to the
tape. ``backward(loss)`` replays the active tape in reverse, accumulating
gradients into ``.grad`` buffers. Gradients on leaves accumulate across
backward calls until explicitly cleared.

Inference code simply runs outside any ``Tape`` context and pays no
recording overhead.
"""

from __future__ import annotations

import os
from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

from . import kernels

# When set, every op output is checked for NaN/Inf. Off by default: only ops
# that can actually overflow on sane training data (exp, log) always check.
STRICT_FINITE = os.environ.get("GCMEM_STRICT_FINITE", "") in ("1", "true")

_f32 = np.float32


class Tensor:
    """A dense float32 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_f32)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed primitives; replayed in reverse by backward."""

    __slots__ = ("_records",)

    def __init__(self):
        # each record: (out, inputs, fn) with fn(g_out) -> per-input grads
        self._records: list[tuple] = []

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self._records)

    def clear(self) -> None:
        self._records.clear()

    def backward(self, loss: Tensor) -> None:
        """Populate ``.grad`` of every tensor reachable from ``loss``."""
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.data.shape}")
        if loss.grad is None:
            loss.grad = np.ones_like(loss.data)
        else:
            loss.grad = loss.grad + _f32(1.0)
        for out, inputs, fn in reversed(self._records):
            g = out.grad
            if g is None:
                continue
            for inp, gi in zip(inputs, fn(g)):
                if gi is None:
                    continue
                if inp.grad is None:
                    inp.grad = gi.astype(_f32, copy=True)
                else:
                    inp.grad += gi


_TAPES: list[Tape] = []


def active_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def backward(loss: Tensor) -> None:
    """Run reverse-mode accumulation on the innermost active tape."""
    if not _TAPES:
        raise RuntimeError("backward() called with no active Tape")
    _TAPES[-1].backward(loss)


def _record(out: Tensor, inputs: tuple, fn: Callable) -> None:
    out.requires_grad = True
    _TAPES[-1]._records.append((out, inputs, fn))


def _finite_or_raise(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise OverflowError(f"{op} produced a non-finite value")


def _out(data: np.ndarray, op: str) -> Tensor:
    if STRICT_FINITE:
        _finite_or_raise(data, op)
    return Tensor(data)


# ---------------------------------------------------------------------------
# binary elementwise


def _check_same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.data.shape != b.data.shape:
        raise ValueError(f"{op}: shape mismatch {a.data.shape} vs {b.data.shape}")


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "add")
    out = _out(a.data + b.data, "add")
    if _TAPES and (a.requires_grad or b.requires_grad):
        ra, rb = a.requires_grad, b.requires_grad
        _record(out, (a, b), lambda g: (g if ra else None, g if rb else None))
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "sub")
    out = _out(a.data - b.data, "sub")
    if _TAPES and (a.requires_grad or b.requires_grad):
        ra, rb = a.requires_grad, b.requires_grad
        _record(out, (a, b), lambda g: (g if ra else None, -g if rb else None))
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape(a, b, "mul")
    out = _out(a.data * b.data, "mul")
    if _TAPES and (a.requires_grad or b.requires_grad):
        ra, rb = a.requires_grad, b.requires_grad
        ad, bd = a.data, b.data
        _record(out, (a, b), lambda g: (g * bd if ra else None, g * ad if rb else None))
    return out


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to the first argument."""
    _check_same_shape(a, b, "minimum")
    out = _out(np.minimum(a.data, b.data), "minimum")
    if _TAPES and (a.requires_grad or b.requires_grad):
        ra, rb = a.requires_grad, b.requires_grad
        mask = a.data <= b.data
        _record(out, (a, b), lambda g: (
            g * mask if ra else None, g * ~mask if rb else None))
    return out


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to the first argument."""
    _check_same_shape(a, b, "maximum")
    out = _out(np.maximum(a.data, b.data), "maximum")
    if _TAPES and (a.requires_grad or b.requires_grad):
        ra, rb = a.requires_grad, b.requires_grad
        mask = a.data >= b.data
        _record(out, (a, b), lambda g: (
            g * mask if ra else None, g * ~mask if rb else None))
    return out


# ---------------------------------------------------------------------------
# unary elementwise


def neg(x: Tensor) -> Tensor:
    out = _out(-x.data, "neg")
    if _TAPES and x.requires_grad:
        _record(out, (x,), lambda g: (-g,))
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = _f32(c)
    out = _out(x.data * c, "scale")
    if _TAPES and x.requires_grad:
        _record(out, (x,), lambda g: (g * c,))
    return out


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    out = Tensor(y)
    if _TAPES and x.requires_grad:
        _record(out, (x,), lambda g: (g * (1.0 - y * y),))
    return out


def relu(x: Tensor) -> Tensor:
    out = Tensor(np.maximum(x.data, _f32(0.0)))
    if _TAPES and x.requires_grad:
        mask = x.data > 0
        _record(out, (x,), lambda g: (g * mask,))
    return out


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    y = np.empty_like(xd)
    pos = xd >= 0
    y[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    y[~pos] = ex / (1.0 + ex)
    out = Tensor(y)
    if _TAPES and x.requires_grad:
        _record(out, (x,), lambda g: (g * y * (1.0 - y),))
    return out


def exp(x: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(x.data)
    _finite_or_raise(y, "exp")
    out = Tensor(y)
    if _TAPES and x.requires_grad:
        _record(out, (x,), lambda g: (g * y,))
    return out


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise ValueError("log: input must be strictly positive")
    out = Tensor(np.log(x.data))
    if _TAPES and x.requires_grad:
        xd = x.data
        _record(out, (x,), lambda g: (g / xd,))
    return out


def square(x: Tensor) -> Tensor:
    out = _out(x.data * x.data, "square")
    if _TAPES and x.requires_grad:
        xd = x.data
        _record(out, (x,), lambda g: (g * (2.0 * xd),))
    return out


def clip(x: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient is blocked outside the open interval."""
    out = Tensor(np.clip(x.data, _f32(lo), _f32(hi)))
    if _TAPES and x.requires_grad:
        mask = (x.data > lo) & (x.data < hi)
        _record(out, (x,), lambda g: (g * mask,))
    return out


# ---------------------------------------------------------------------------
# linear algebra and shape ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    ad, bd = a.data, b.data
    if ad.ndim != 2 or bd.ndim != 2 or ad.shape[1] != bd.shape[0]:
        raise ValueError(f"matmul: incompatible shapes {ad.shape} and {bd.shape}")
    out = _out(ad @ bd, "matmul")
    if _TAPES and (a.requires_grad or b.requires_grad):
        ra, rb = a.requires_grad, b.requires_grad
        _record(out, (a, b), lambda g: (
            g @ bd.T if ra else None, ad.T @ g if rb else None))
    return out


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add a length-d bias vector to every row of an (n, d) matrix."""
    xd, bd = x.data, b.data
    if xd.ndim != 2 or bd.ndim != 1 or xd.shape[1] != bd.shape[0]:
        raise ValueError(f"add_bias: shapes {xd.shape} and {bd.shape}")
    out = _out(xd + bd, "add_bias")
    if _TAPES and (x.requires_grad or b.requires_grad):
        rx, rb = x.requires_grad, b.requires_grad
        _record(out, (x, b), lambda g: (
            g if rx else None, g.sum(axis=0) if rb else None))
    return out


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    orig = x.data.shape
    out = Tensor(x.data.reshape(shape))
    if _TAPES and x.requires_grad:
        _record(out, (x,), lambda g: (g.reshape(orig),))
    return out


def reduce_sum(x: Tensor, axis: int | None = None) -> Tensor:
    xd = x.data
    if axis is not None and axis >= xd.ndim:
        raise ValueError(f"reduce_sum: axis {axis} out of range for rank {xd.ndim}")
    out = Tensor(xd.sum(axis=axis, dtype=_f32))
    if _TAPES and x.requires_grad:
        shape = xd.shape
        if axis is None:
            _record(out, (x,), lambda g: (np.broadcast_to(g, shape),))
        else:
            _record(out, (x,), lambda g: (
                np.broadcast_to(np.expand_dims(g, axis), shape),))
    return out


def reduce_mean(x: Tensor, axis: int | None = None) -> Tensor:
    """Mean along an axis; an empty extent reduces to zeros, not NaN."""
    xd = x.data
    if axis is not None and axis >= xd.ndim:
        raise ValueError(f"reduce_mean: axis {axis} out of range for rank {xd.ndim}")
    n = xd.size if axis is None else xd.shape[axis]
    if n == 0:
        out_shape = () if axis is None else tuple(
            s for i, s in enumerate(xd.shape) if i != axis)
        out = Tensor(np.zeros(out_shape, dtype=_f32))
        if _TAPES and x.requires_grad:
            shape = xd.shape
            _record(out, (x,), lambda g: (np.zeros(shape, dtype=_f32),))
        return out
    out = Tensor(xd.mean(axis=axis, dtype=_f32))
    if _TAPES and x.requires_grad:
        shape = xd.shape
        inv = _f32(1.0 / n)
        if axis is None:
            _record(out, (x,), lambda g: (np.broadcast_to(g * inv, shape),))
        else:
            _record(out, (x,), lambda g: (
                np.broadcast_to(np.expand_dims(g * inv, axis), shape),))
    return out


def gather_rows(x: Tensor, indices: Sequence[int] | np.ndarray) -> Tensor:
    """Stack selected rows; backward scatter-adds, accumulating duplicates."""
    xd = x.data
    if xd.ndim != 2:
        raise ValueError("gather_rows: expects a rank-2 tensor")
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= xd.shape[0]):
        raise IndexError(f"gather_rows: index out of range for {xd.shape[0]} rows")
    out = Tensor(xd[idx])
    if _TAPES and x.requires_grad:
        n = xd.shape[0]
        def bw(g):
            gx = np.zeros((n, xd.shape[1]), dtype=_f32)
            kernels.scatter_add_rows(gx, idx, np.ascontiguousarray(g))
            return (gx,)
        _record(out, (x,), bw)
    return out


def take_per_row(x: Tensor, indices: Sequence[int] | np.ndarray) -> Tensor:
    """out[i] = x[i, indices[i]]."""
    xd = x.data
    idx = np.asarray(indices, dtype=np.int64)
    if xd.ndim != 2 or idx.shape != (xd.shape[0],):
        raise ValueError("take_per_row: need (n, m) tensor and n indices")
    if idx.size and (idx.min() < 0 or idx.max() >= xd.shape[1]):
        raise IndexError("take_per_row: column index out of range")
    rows = np.arange(xd.shape[0])
    out = Tensor(xd[rows, idx])
    if _TAPES and x.requires_grad:
        shape = xd.shape
        def bw(g):
            gx = np.zeros(shape, dtype=_f32)
            gx[rows, idx] = g
            return (gx,)
        _record(out, (x,), bw)
    return out


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    xd = x.data
    if xd.ndim != 2 or not (0 <= start <= stop <= xd.shape[1]):
        raise ValueError(f"slice_cols: bad range [{start}:{stop}] for shape {xd.shape}")
    out = Tensor(xd[:, start:stop].copy())
    if _TAPES and x.requires_grad:
        shape = xd.shape
        def bw(g):
            gx = np.zeros(shape, dtype=_f32)
            gx[:, start:stop] = g
            return (gx,)
        _record(out, (x,), bw)
    return out


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    if not parts:
        raise ValueError("concat_rows: need at least one tensor")
    datas = [p.data for p in parts]
    if any(d.ndim != 2 or d.shape[1] != datas[0].shape[1] for d in datas):
        raise ValueError("concat_rows: all parts must be rank-2 with equal columns")
    out = Tensor(np.concatenate(datas, axis=0))
    if _TAPES and any(p.requires_grad for p in parts):
        offsets = np.cumsum([0] + [d.shape[0] for d in datas])
        req = [p.requires_grad for p in parts]
        def bw(g):
            return tuple(
                g[offsets[i]:offsets[i + 1]] if req[i] else None
                for i in range(len(datas)))
        _record(out, tuple(parts), bw)
    return out


def scale_rows(x: Tensor, factors: np.ndarray) -> Tensor:
    """Multiply each row by a constant factor (no gradient to factors)."""
    xd = x.data
    f = np.asarray(factors, dtype=_f32)
    if xd.ndim != 2 or f.shape != (xd.shape[0],):
        raise ValueError("scale_rows: need (n, d) tensor and n factors")
    col = f[:, None]
    out = _out(xd * col, "scale_rows")
    if _TAPES and x.requires_grad:
        _record(out, (x,), lambda g: (g * col,))
    return out


def segment_sum_rows(x: Tensor, src: np.ndarray, dst: np.ndarray, num_out: int) -> Tensor:
    """out[dst[e]] += x[src[e]]: directed-edge neighborhood aggregation."""
    xd = x.data
    if xd.ndim != 2:
        raise ValueError("segment_sum_rows: expects a rank-2 tensor")
    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    data = np.zeros((num_out, xd.shape[1]), dtype=_f32)
    kernels.edge_gather_add(data, np.ascontiguousarray(xd), src, dst)
    out = Tensor(data)
    if _TAPES and x.requires_grad:
        n = xd.shape[0]
        def bw(g):
            gx = np.zeros((n, xd.shape[1]), dtype=_f32)
            kernels.edge_gather_add(gx, np.ascontiguousarray(g), dst, src)
            return (gx,)
        _record(out, (x,), bw)
    return out


# ---------------------------------------------------------------------------
# softmax family


def log_softmax_rows(x: Tensor) -> Tensor:
    """Row-wise log-softmax, computed with a max shift for stability."""
    xd = x.data
    if xd.ndim != 2:
        raise ValueError("log_softmax_rows: expects a rank-2 tensor")
    shifted = xd - xd.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    out = Tensor(y)
    if _TAPES and x.requires_grad:
        p = np.exp(y)
        _record(out, (x,), lambda g: (g - p * g.sum(axis=1, keepdims=True),))
    return out


class SoftmaxOps(NamedTuple):
    probs: Tensor
    log_probs: Tensor
    entropy: Tensor


def softmax_logits_ops(logits: Tensor) -> SoftmaxOps:
    """Probs, log-probs and entropy of a categorical head, differentiably.

    Probabilities sum to 1 within float32 round-off; entropy is
    -sum(p log p) >= 0 and equals log(k) for uniform logits.
    """
    if logits.data.ndim != 1:
        raise ValueError("softmax_logits_ops: expects a rank-1 logits tensor")
    rows = reshape(logits, (1, logits.data.shape[0]))
    log_probs_rows = log_softmax_rows(rows)
    probs_rows = exp(log_probs_rows)
    entropy = neg(reduce_sum(mul(probs_rows, log_probs_rows)))
    k = logits.data.shape[0]
    return SoftmaxOps(
        probs=reshape(probs_rows, (k,)),
        log_probs=reshape(log_probs_rows, (k,)),
        entropy=entropy,
    )
