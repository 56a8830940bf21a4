"""Minimal dense-tensor reverse-mode automatic differentiation.

Design: define-by-run.  Operations execute eagerly on float64 numpy arrays
and, when a :class:`Tape` is active and any input requires gradients, append
a record holding a vector-Jacobian closure.  ``backward`` walks the records
in reverse exactly once, accumulating into leaf ``grad`` slots, then clears
the tape.

The op set is deliberately small: matmul, add, mul, relu, softmax_lastdim,
layer_norm_lastdim, mean_axis, concat_axis, gather_rows, reshape, slice,
transpose, sin, cos, and segment_mean (ragged-cell pooling).  Broadcasting in
add/mul is restricted to leading batch dimensions: operand shapes must be
equal or one must be a suffix of the other.

Forward matmul contracts via ``np.einsum`` rather than BLAS: einsum computes
every output element with a fixed summation order independent of the batch
size, which keeps single-row and full-batch forwards bit-identical.  Backward
matmuls use BLAS, where that guarantee is not needed.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .errors import (
    DetachedTensorError,
    IndexOutOfBoundsError,
    NotScalarLossError,
    ShapeMismatchError,
)


class DiffTensor:
    """Dense float64 tensor with an optional gradient slot."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"DiffTensor(shape={self.shape}, requires_grad={self.requires_grad})"


def constant(data) -> DiffTensor:
    return DiffTensor(data, requires_grad=False)


def parameter(data) -> DiffTensor:
    return DiffTensor(data, requires_grad=True)


class _Record:
    __slots__ = ("kind", "inputs", "output", "vjp")

    def __init__(self, kind, inputs, output, vjp):
        self.kind = kind
        self.inputs = inputs
        self.output = output
        self.vjp = vjp


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered op records for one forward pass; single-owner, non-reentrant."""

    def __init__(self):
        self._records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _TAPE_STACK.pop()

    def __len__(self) -> int:
        return len(self._records)

    def backward(self, loss: DiffTensor) -> None:
        backward(self, loss)


def _active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def apply_custom(
    kind: str,
    inputs: tuple,
    out_data: np.ndarray,
    vjp: Callable[[np.ndarray], tuple],
) -> DiffTensor:
    """Create an op result and record it; extension point for fused ops.

    ``vjp(grad_out)`` must return per-input gradient arrays aligned with
    ``inputs`` (None for non-differentiable inputs).
    """
    requires = any(isinstance(t, DiffTensor) and t.requires_grad for t in inputs)
    out = DiffTensor(out_data, requires_grad=requires)
    tape = _active_tape()
    if requires and tape is not None:
        tape._records.append(_Record(kind, inputs, out, vjp))
    return out


def backward(tape: Tape, loss: DiffTensor) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    Gradients accumulate (+=) when a leaf feeds multiple ops.  The tape is
    cleared afterwards.
    """
    if loss.data.size != 1:
        raise NotScalarLossError(f"loss must be scalar, got shape {loss.shape}")
    produced = any(rec.output is loss for rec in tape._records)
    if not loss.requires_grad or not produced:
        raise DetachedTensorError("loss was not produced by ops recorded on this tape")
    loss.grad = np.ones_like(loss.data)
    for rec in reversed(tape._records):
        gout = rec.output.grad
        if gout is None:
            continue
        grads = rec.vjp(gout)
        for inp, g in zip(rec.inputs, grads):
            if isinstance(inp, DiffTensor) and inp.requires_grad and g is not None:
                if inp.grad is None:
                    inp.grad = np.zeros_like(inp.data)
                inp.grad += g
    tape._records.clear()


# --- shape utilities ------------------------------------------------------------

def _suffix_broadcast_check(a_shape, b_shape) -> None:
    small, big = (a_shape, b_shape) if len(a_shape) <= len(b_shape) else (b_shape, a_shape)
    if len(small) and big[len(big) - len(small):] != small:
        raise ShapeMismatchError(
            f"shapes {a_shape} and {b_shape} do not broadcast "
            "(one must be a trailing suffix of the other)"
        )


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` over leading axes until it matches ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    return g


# --- primitive operations ----------------------------------------------------------

def add(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _suffix_broadcast_check(a.shape, b.shape)
    out = a.data + b.data

    def vjp(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return apply_custom("add", (a, b), out, vjp)


def mul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    _suffix_broadcast_check(a.shape, b.shape)
    out = a.data * b.data

    def vjp(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return apply_custom("mul", (a, b), out, vjp)


def matmul(a: DiffTensor, b: DiffTensor) -> DiffTensor:
    """Contract the last axis of ``a`` with the first of ``b``'s two final axes.

    Supported: ``[..., n, k] @ [k, m]`` (parameter matrices) and
    ``[..., n, k] @ [..., k, m]`` with identical leading dims.
    """
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatchError(f"matmul needs >=2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeMismatchError(f"inner dims differ: {a.shape} @ {b.shape}")
    if b.ndim == 2:
        out = np.einsum("...ij,jk->...ik", a.data, b.data)

        def vjp(g):
            da = g @ b.data.T
            db = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            return da, db

    elif a.ndim == b.ndim and a.shape[:-2] == b.shape[:-2]:
        out = np.einsum("...ij,...jk->...ik", a.data, b.data)

        def vjp(g):
            da = g @ np.swapaxes(b.data, -1, -2)
            db = np.swapaxes(a.data, -1, -2) @ g
            return da, db

    else:
        raise ShapeMismatchError(f"leading dims differ: {a.shape} @ {b.shape}")
    return apply_custom("matmul", (a, b), out, vjp)


def relu(x: DiffTensor) -> DiffTensor:
    out = np.maximum(x.data, 0.0)

    def vjp(g):
        return (g * (x.data > 0.0),)

    return apply_custom("relu", (x,), out, vjp)


def softmax_lastdim(x: DiffTensor) -> DiffTensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return (s * (g - (g * s).sum(axis=-1, keepdims=True)),)

    return apply_custom("softmax_lastdim", (x,), s, vjp)


def layer_norm_lastdim(x: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    y = centered * inv

    def vjp(g):
        gm = g.mean(axis=-1, keepdims=True)
        gym = (g * y).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - y * gym),)

    return apply_custom("layer_norm_lastdim", (x,), y, vjp)


def mean_axis(x: DiffTensor, axis: int) -> DiffTensor:
    axis = axis if axis >= 0 else axis + x.ndim
    if not (0 <= axis < x.ndim):
        raise ShapeMismatchError(f"axis {axis} invalid for shape {x.shape}")
    n = x.shape[axis]
    out = x.data.mean(axis=axis)

    def vjp(g):
        return (np.broadcast_to(np.expand_dims(g, axis) / n, x.shape),)

    return apply_custom("mean_axis", (x,), out, vjp)


def concat_axis(tensors: Sequence[DiffTensor], axis: int) -> DiffTensor:
    if not tensors:
        raise ShapeMismatchError("concat_axis needs at least one tensor")
    nd = tensors[0].ndim
    axis = axis if axis >= 0 else axis + nd
    for t in tensors[1:]:
        if t.ndim != nd or any(
            i != axis and t.shape[i] != tensors[0].shape[i] for i in range(nd)
        ):
            raise ShapeMismatchError(
                f"concat shapes differ off-axis: {[t.shape for t in tensors]}"
            )
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g):
        return tuple(np.split(g, splits, axis=axis))

    return apply_custom("concat_axis", tuple(tensors), out, vjp)


def gather_rows(table: DiffTensor, ids: np.ndarray) -> DiffTensor:
    """Embedding lookup: ``out[m] = table[ids[m]]`` for a 1-D id array."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexOutOfBoundsError(
            f"gather ids must lie in [0, {table.shape[0]})"
        )
    out = table.data[ids]

    def vjp(g):
        dt = np.zeros_like(table.data)
        np.add.at(dt, ids, g)
        return dt, None

    return apply_custom("gather_rows", (table, ids), out, vjp)


def reshape(x: DiffTensor, shape: Sequence[int]) -> DiffTensor:
    shape = tuple(shape)
    out = x.data.reshape(shape)

    def vjp(g):
        return (g.reshape(x.shape),)

    return apply_custom("reshape", (x,), out, vjp)


def slice_axis(x: DiffTensor, axis: int, start: int, stop: int) -> DiffTensor:
    axis = axis if axis >= 0 else axis + x.ndim
    if not (0 <= axis < x.ndim) or not (0 <= start <= stop <= x.shape[axis]):
        raise ShapeMismatchError(
            f"slice [{start}:{stop}] on axis {axis} invalid for shape {x.shape}"
        )
    key = (slice(None),) * axis + (slice(start, stop),)
    out = x.data[key].copy()

    def vjp(g):
        dx = np.zeros_like(x.data)
        dx[key] = g
        return (dx,)

    return apply_custom("slice", (x,), out, vjp)


def transpose(x: DiffTensor, axes: Sequence[int]) -> DiffTensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeMismatchError(f"axes {axes} is not a permutation for shape {x.shape}")
    inverse = tuple(np.argsort(axes))
    out = np.transpose(x.data, axes)

    def vjp(g):
        return (np.transpose(g, inverse),)

    return apply_custom("transpose", (x,), out, vjp)


def sin(x: DiffTensor) -> DiffTensor:
    out = np.sin(x.data)

    def vjp(g):
        return (g * np.cos(x.data),)

    return apply_custom("sin", (x,), out, vjp)


def cos(x: DiffTensor) -> DiffTensor:
    out = np.cos(x.data)

    def vjp(g):
        return (g * -np.sin(x.data),)

    return apply_custom("cos", (x,), out, vjp)


def segment_mean(table: DiffTensor, ids: np.ndarray, offsets: np.ndarray) -> DiffTensor:
    """Mean of ``table[ids[offsets[k]:offsets[k+1]]]`` per segment ``k``.

    Empty segments produce zero vectors.  This is the pooling primitive for
    ragged cells: gather category/token embeddings, average within each cell.
    """
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    offsets = np.asarray(offsets, dtype=np.int64).reshape(-1)
    if offsets[0] != 0 or offsets[-1] != ids.size or np.any(np.diff(offsets) < 0):
        raise ShapeMismatchError("offsets must be monotone from 0 to len(ids)")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexOutOfBoundsError(f"segment ids must lie in [0, {table.shape[0]})")
    k = offsets.size - 1
    lengths = np.diff(offsets)
    seg_of = np.repeat(np.arange(k, dtype=np.int64), lengths)
    feat = table.shape[1:]
    sums = np.zeros((k,) + feat, dtype=np.float64)
    np.add.at(sums, seg_of, table.data[ids])
    denom = np.maximum(lengths, 1).astype(np.float64).reshape((k,) + (1,) * len(feat))
    out = sums / denom

    def vjp(g):
        dt = np.zeros_like(table.data)
        weights = (g / denom)[seg_of]
        np.add.at(dt, ids, weights)
        return dt, None, None

    return apply_custom("segment_mean", (table, ids, offsets), out, vjp)


#: Dispatch table over the op set; keys are the op kinds.
OPS: dict[str, Callable] = {
    "matmul": matmul,
    "add": add,
    "mul": mul,
    "relu": relu,
    "softmax_lastdim": softmax_lastdim,
    "layer_norm_lastdim": layer_norm_lastdim,
    "mean_axis": mean_axis,
    "concat_axis": concat_axis,
    "gather_rows": gather_rows,
    "reshape": reshape,
    "slice": slice_axis,
    "transpose": transpose,
    "sin": sin,
    "cos": cos,
    "segment_mean": segment_mean,
}


def apply_op(kind: str, *args, **kwargs) -> DiffTensor:
    """Dispatch an op by kind name."""
    try:
        fn = OPS[kind]
    except KeyError:
        raise ShapeMismatchError(f"unknown op kind {kind!r}") from None
    return fn(*args, **kwargs)


# --- gradient checking -----------------------------------------------------------

def grad_check_tensors(
    f: Callable[[], DiffTensor],
    tensors: Sequence[DiffTensor],
    eps: float = 1e-4,
) -> float:
    """Compare backward gradients of ``f()`` against central differences.

    ``f`` must be deterministic and scalar-valued; ``tensors`` are the leaves
    to perturb.  Returns the max over coordinates of
    ``|a - n| / max(1, |a|, |n|)``.
    """
    for t in tensors:
        t.grad = None
    with Tape() as tape:
        out = f()
    if out.data.size != 1:
        raise NotScalarLossError(f"grad_check needs scalar output, got {out.shape}")
    if out.requires_grad:
        backward(tape, out)
    worst = 0.0
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        aflat = analytic.reshape(-1)
        for i in range(t.data.size):
            idx = np.unravel_index(i, t.data.shape)
            orig = t.data[idx]
            t.data[idx] = orig + eps
            fp = f().item()
            t.data[idx] = orig - eps
            fm = f().item()
            t.data[idx] = orig
            numeric = (fp - fm) / (2.0 * eps)
            denom = max(1.0, abs(aflat[i]), abs(numeric))
            worst = max(worst, abs(aflat[i] - numeric) / denom)
    return worst


def grad_check(f: Callable[[DiffTensor], DiffTensor], x: DiffTensor, eps: float = 1e-4) -> float:
    """Single-tensor convenience wrapper around :func:`grad_check_tensors`."""
    return grad_check_tensors(lambda: f(x), [x], eps=eps)


def zero_grads(tensors) -> None:
    values = tensors.values() if isinstance(tensors, dict) else tensors
    for t in values:
        t.grad = None
