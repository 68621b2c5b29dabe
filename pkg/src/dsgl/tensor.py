"""Dense tensors with taped reverse-mode differentiation.

Every model computation goes through the ops in this module. Forward values
are plain numpy arrays; when a :class:`Tape` is active, each op also records
a backward rule so that ``Tape.backward(loss)`` can accumulate gradients into
every tensor created with ``requires_grad=True``.

Precision: float64 is the default (tests and gradient checks rely on it);
float32 is intended for training runs. At float64 matrix products go through
``np.einsum``, whose per-row accumulation order does not depend on the batch
size, so results are bit-reproducible across batch shapes; float32 uses BLAS
for speed.
"""

from __future__ import annotations

import math
from typing import Callable, Iterable, Sequence

import numpy as np

_DEFAULT_DTYPE = np.float64

_PRECISION_NAMES = {"f32": np.float32, "f64": np.float64}


def set_default_dtype(dtype) -> None:
    """Set the dtype used for newly created tensors ('f32'/'f64' or numpy dtype)."""
    global _DEFAULT_DTYPE
    if isinstance(dtype, str):
        if dtype not in _PRECISION_NAMES:
            raise ValueError(f"unknown precision {dtype!r}, expected 'f32' or 'f64'")
        dtype = _PRECISION_NAMES[dtype]
    dtype = np.dtype(dtype)
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype}")
    _DEFAULT_DTYPE = dtype.type


def default_dtype():
    return _DEFAULT_DTYPE


class using_dtype:
    """Context manager that temporarily switches the default dtype."""

    def __init__(self, dtype):
        self.dtype = dtype
        self._saved = None

    def __enter__(self):
        global _DEFAULT_DTYPE
        self._saved = _DEFAULT_DTYPE
        set_default_dtype(self.dtype)
        return self

    def __exit__(self, *exc):
        global _DEFAULT_DTYPE
        _DEFAULT_DTYPE = self._saved
        return False


class Tensor:
    """Dense n-dimensional real array that can participate in a tape.

    ``data`` is always a float32 or float64 numpy array. ``grad`` is filled
    in by ``Tape.backward`` and has the same shape as ``data``.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if isinstance(data, np.ndarray) and dtype is None and data.dtype in (
            np.float32,
            np.float64,
        ):
            arr = data
        else:
            arr = np.asarray(data, dtype=dtype or _DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
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

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.size == 1 else self._item_err()

    def _item_err(self):
        raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # Operator sugar. Non-tensor operands are treated as constants.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, shape):
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_axis(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean_axis(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class _Op:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output, inputs, backward):
        self.output = output
        self.inputs = inputs
        self.backward = backward


_TAPE_STACK: list["Tape"] = []


class Tape:
    """Ordered record of operations for one reverse-mode pass.

    Operations are appended in execution order, so inputs always precede the
    ops that consume them; ``backward`` walks the record once, in reverse.
    A tape can be consumed only once.
    """

    def __init__(self):
        self.ops: list[_Op] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> bool:
        popped = _TAPE_STACK.pop()
        assert popped is self
        return False

    def __len__(self) -> int:
        return len(self.ops)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(t) into ``t.grad`` for each recorded tensor."""
        if not isinstance(loss, Tensor):
            raise TypeError("backward expects a Tensor loss")
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise RuntimeError("tape already consumed; build a new tape per backward pass")
        self._consumed = True
        if loss.grad is None:
            loss.grad = np.ones_like(loss.data)
        for op in reversed(self.ops):
            out_grad = op.output.grad
            if out_grad is None:
                continue
            grads = op.backward(out_grad)
            for t, g in zip(op.inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                t.grad = g if t.grad is None else t.grad + g


def active_tape() -> Tape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _record(out: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
    tape = active_tape()
    if tape is None:
        return
    tracked = tuple(t for t in inputs if isinstance(t, Tensor) and t.requires_grad)
    if not tracked:
        return
    out.requires_grad = True
    # Keep the full input tuple so backward grads stay positionally aligned.
    tape.ops.append(_Op(out, tuple(t for t in inputs if isinstance(t, Tensor)), backward))


def backward(loss: Tensor) -> None:
    """Run the active tape's backward pass from a scalar loss."""
    tape = active_tape()
    if tape is None:
        raise RuntimeError("backward() requires an active Tape")
    tape.backward(loss)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _mm(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    # float64: fixed-order einsum so row results are independent of batch size.
    if x.dtype == np.float64 or y.dtype == np.float64:
        return np.einsum("ij,jk->ik", x, y)
    return x @ y


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul inner dimensions differ: {a.shape} vs {b.shape}")
    out = Tensor(_mm(a.data, b.data))
    ad, bd = a.data, b.data

    def bwd(g):
        return _mm(g, bd.T), _mm(ad.T, g)

    _record(out, (a, b), bwd)
    return out


def _binary(a, b, fwd, bwd_a, bwd_b) -> Tensor:
    # Python scalars stay scalars so they promote weakly and do not drag
    # float32 computations up to float64.
    ta, tb = isinstance(a, Tensor), isinstance(b, Tensor)
    ad = a.data if ta else (a if isinstance(a, (int, float)) else np.asarray(a))
    bd = b.data if tb else (b if isinstance(b, (int, float)) else np.asarray(b))
    try:
        out = Tensor(fwd(ad, bd))
    except ValueError as exc:
        raise ValueError(
            f"shape mismatch: {getattr(ad, 'shape', ())} vs {getattr(bd, 'shape', ())}"
        ) from exc
    inputs = tuple(t for t, is_t in ((a, ta), (b, tb)) if is_t)

    def bwd(g):
        grads = []
        if ta:
            grads.append(_unbroadcast(bwd_a(g, ad, bd), ad.shape))
        if tb:
            grads.append(_unbroadcast(bwd_b(g, ad, bd), bd.shape))
        return tuple(grads)

    _record(out, inputs, bwd)
    return out


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x / y, lambda g, x, y: g / y,
                   lambda g, x, y: -g * x / (y * y))


def neg(a) -> Tensor:
    a = as_tensor(a)
    out = Tensor(-a.data)
    _record(out, (a,), lambda g: (-g,))
    return out


def _sigmoid_stable(x: np.ndarray) -> np.ndarray:
    # exp argument is always <= 0, so no overflow for any finite input
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = _sigmoid_stable(a.data)
    out = Tensor(y)
    _record(out, (a,), lambda g: (g * y * (1.0 - y),))
    return out


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    out = Tensor(y)
    _record(out, (a,), lambda g: (g * (1.0 - y * y),))
    return out


def relu(a) -> Tensor:
    a = as_tensor(a)
    # np.maximum propagates NaN instead of silently zeroing it
    out = Tensor(np.maximum(a.data, 0.0))
    mask = a.data > 0
    _record(out, (a,), lambda g: (g * mask,))
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log requires strictly positive inputs; clip first")
    ad = a.data
    out = Tensor(np.log(ad))
    _record(out, (a,), lambda g: (g / ad,))
    return out


def clip(a, lo: float, hi: float) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    out = Tensor(np.clip(ad, lo, hi))
    inside = (ad >= lo) & (ad <= hi)
    _record(out, (a,), lambda g: (g * inside,))
    return out


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat needs at least one tensor")
    datas = [t.data for t in ts]
    try:
        out = Tensor(np.concatenate(datas, axis=axis))
    except ValueError as exc:
        raise ValueError(
            f"concat off-axis extents differ: {[d.shape for d in datas]}"
        ) from exc
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, offsets, axis=axis))

    _record(out, ts, bwd)
    return out


def sum_axis(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = Tensor(np.sum(a.data, axis=axis, keepdims=keepdims))
    shape = a.shape

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, shape).astype(g.dtype, copy=False),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    _record(out, (a,), bwd)
    return out


def mean_axis(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[axis]
    if count == 0:
        raise ValueError("mean over an empty axis")
    return mul(sum_axis(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    orig = a.shape
    out = Tensor(a.data.reshape(shape))
    _record(out, (a,), lambda g: (g.reshape(orig),))
    return out


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    out = Tensor(np.transpose(a.data, axes))
    _record(out, (a,), lambda g: (np.transpose(g, inverse),))
    return out


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    shape = a.shape
    out = Tensor(a.data[index])

    def bwd(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[index] = g
        return (full,)

    _record(out, (a,), bwd)
    return out


def repeat_rows(a, repeats: int) -> Tensor:
    """Repeat each leading-axis row ``repeats`` times (grad sums per group)."""
    a = as_tensor(a)
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    n = a.shape[0]
    rest = a.shape[1:]
    out = Tensor(np.repeat(a.data, repeats, axis=0))

    def bwd(g):
        return (g.reshape((n, repeats) + rest).sum(axis=1),)

    _record(out, (a,), bwd)
    return out


def gather_rows(table, indices) -> Tensor:
    """Row lookup ``table[indices]``; backward scatter-adds into the table."""
    table = as_tensor(table)
    if table.ndim != 2:
        raise ValueError(f"gather_rows expects a 2-D table, got shape {table.shape}")
    idx = np.asarray(indices)
    if idx.ndim != 1:
        raise ValueError("indices must be 1-D")
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("indices must be integers")
    rows = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= rows):
        raise IndexError(f"index out of range for table with {rows} rows")
    out = Tensor(table.data[idx])
    shape = table.shape
    dtype = table.dtype

    def bwd(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    _record(out, (table,), bwd)
    return out


def masked_softmax(logits, mask, axis: int = -1) -> Tensor:
    """Softmax over positions where ``mask`` is nonzero.

    Masked positions come out exactly zero. Rows whose mask is all zero come
    out all zero instead of NaN. The mask is treated as a constant; it may be
    any array broadcastable to ``logits``.
    """
    logits = as_tensor(logits)
    md = mask.data if isinstance(mask, Tensor) else np.asarray(mask)
    try:
        valid = np.broadcast_to(md > 0, logits.shape)
    except ValueError as exc:
        raise ValueError(
            f"mask shape {md.shape} not broadcastable to logits shape {logits.shape}"
        ) from exc
    shifted = np.where(valid, logits.data, -np.inf)
    peak = np.max(shifted, axis=axis, keepdims=True)
    # only the all-masked (empty) rows get their -inf peak neutralized;
    # a NaN peak must keep propagating
    peak = np.where(peak == -np.inf, 0.0, peak)
    expd = np.exp(shifted - peak)
    denom = np.sum(expd, axis=axis, keepdims=True)
    safe = np.where(denom > 0, denom, 1.0)
    y = expd / safe
    out = Tensor(y)

    def bwd(g):
        dot = np.sum(g * y, axis=axis, keepdims=True)
        return (y * (g - dot),)

    _record(out, (logits,), bwd)
    return out


def xavier_uniform_init(shape, seed=None, rng=None, dtype=None, requires_grad=True) -> Tensor:
    """Uniform init on [-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out))]."""
    shape = tuple(int(s) for s in shape)
    if len(shape) < 1:
        raise ValueError("shape needs at least one dimension")
    if len(shape) == 1:
        fan_in = fan_out = shape[0]
    else:
        fan_in = int(np.prod(shape[:-1]))
        fan_out = shape[-1]
    bound = math.sqrt(6.0 / (fan_in + fan_out)) if fan_in + fan_out > 0 else 0.0
    if rng is None:
        rng = np.random.default_rng(seed)
    data = rng.uniform(-bound, bound, size=shape).astype(dtype or _DEFAULT_DTYPE)
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, dtype=None, requires_grad=False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or _DEFAULT_DTYPE), requires_grad=requires_grad)


def zero_grads(params: Iterable[Tensor]) -> None:
    for p in params:
        p.grad = None


class Adam:
    """Adam with bias correction over a named set of parameters.

    Defaults follow the usual convention (beta1=0.9, beta2=0.999, eps=1e-8);
    only the learning rate is pinned externally. The step counter increases
    by one per ``step`` call; parameters with no gradient are left unchanged.
    """

    def __init__(self, params: dict[str, Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name, p in self.params.items():
            g = p.grad
            if g is None:
                continue
            if g.shape != p.data.shape:
                raise ValueError(
                    f"gradient shape {g.shape} does not match parameter "
                    f"{name!r} shape {p.data.shape}"
                )
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p.data -= update.astype(p.data.dtype, copy=False)

    def zero_grad(self) -> None:
        zero_grads(self.params.values())
