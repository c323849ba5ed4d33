"""A small dense-tensor core with tape-based reverse-mode differentiation.

Operations record onto the innermost active :class:`Tape` whenever one of
their inputs requires a gradient; outside a tape they are plain numpy calls.

    with Tape() as tape:
        loss = bce_loss(sigmoid(dense(x, w, b)), y)
    grads = backward(tape, loss, [w, b])
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DimensionError, ValidationError

BCE_EPS = 1e-7

_TAPES: list["Tape"] = []


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind in "iub":
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        tag = f" {self.name!r}" if self.name else ""
        return f"Tensor{tag}(shape={self.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

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

    def __getitem__(self, key):
        return slice_(self, key)


@dataclass
class Node:
    output: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def __len__(self):
        return len(self.nodes)

    def backward(self, loss: Tensor, wrt: Sequence[Tensor] | None = None):
        return backward(self, loss, wrt)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype))


def _record(out: np.ndarray, inputs: tuple[Tensor, ...], backward_fn) -> Tensor:
    result = Tensor(out)
    if _TAPES and any(t.requires_grad for t in inputs):
        result.requires_grad = True
        _TAPES[-1].nodes.append(Node(result, inputs, backward_fn))
    return result


def backward(tape: Tape, loss: Tensor, wrt: Sequence[Tensor] | None = None):
    """Propagate d(loss) back through ``tape``.

    Leaf tensors that require grad get ``.grad`` set (zeros when the loss does
    not depend on them). With ``wrt`` the gradients are also returned, in order.
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ValidationError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    owned: set[int] = set()  # buffers allocated here, safe to update in place
    produced = set()
    for node in reversed(tape.nodes):
        produced.add(id(node.output))
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if isinstance(gi, _Scatter):
                if key not in grads:
                    grads[key] = np.zeros_like(inp.data)
                elif key not in owned:
                    grads[key] = grads[key].copy()
                owned.add(key)
                grads[key][gi.key] += gi.value
            elif key not in grads:
                grads[key] = gi
            elif key in owned:
                grads[key] += gi
            else:
                grads[key] = grads[key] + gi
                owned.add(key)
    leaves = {id(i): i for n in tape.nodes for i in n.inputs if i.requires_grad and id(i) not in produced}
    for key, leaf in leaves.items():
        g = grads.get(key)
        leaf.grad = np.zeros_like(leaf.data) if g is None else g.astype(leaf.dtype, copy=False)
    if wrt is None:
        return None
    out = []
    for t in wrt:
        g = grads.get(id(t))
        if g is None and t is loss:
            g = np.ones_like(loss.data)
        out.append(np.zeros_like(t.data) if g is None else g)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(op: str, a: Tensor, b: Tensor):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(op, a.shape, b.shape) from None


# elementwise ----------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("add", a, b)
    return _record(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("sub", a, b)
    return _record(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a, b if isinstance(b, Tensor) else None), as_tensor(b, a if isinstance(a, Tensor) else None)
    _broadcast_shape("mul", a, b)
    return _record(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def sigmoid(x: Tensor) -> Tensor:
    # tanh form: no overflow for large |x| and sigmoid(0) == 0.5 exactly
    y = 0.5 * (np.tanh(0.5 * x.data) + 1.0)
    return _record(y, (x,), lambda g: (g * y * (1.0 - y),))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _record(y, (x,), lambda g: (g * (1.0 - y * y),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _record(np.where(pos, x.data, 0.0).astype(x.dtype, copy=False), (x,), lambda g: (g * pos,))


def where(mask, a: Tensor, b: Tensor) -> Tensor:
    """``mask ? a : b`` with a constant boolean (or 0/1) mask."""
    m = np.asarray(mask.data if isinstance(mask, Tensor) else mask).astype(bool)
    a, b = as_tensor(a), as_tensor(b)
    try:
        shape = np.broadcast_shapes(m.shape, a.shape, b.shape)
    except ValueError:
        raise DimensionError("where", m.shape, a.shape, b.shape) from None
    zero = np.zeros((), dtype=np.result_type(a.dtype, b.dtype))

    def back(g):
        g = np.broadcast_to(g, shape)
        return _unbroadcast(np.where(m, g, zero), a.shape), _unbroadcast(np.where(m, zero, g), b.shape)

    return _record(np.where(m, a.data, b.data), (a, b), back)


# structural -----------------------------------------------------------------


@dataclass
class _Scatter:
    """Gradient that is nonzero only on ``key``; accumulated in place by :func:`backward`."""

    key: object
    value: np.ndarray


def slice_(x: Tensor, key) -> Tensor:
    """Basic (non-fancy) indexing."""

    def back(g):
        return (_Scatter(key, g),)

    try:
        y = x.data[key]
    except IndexError:
        raise DimensionError(f"slice {key!r}", x.shape) from None
    return _record(y, (x,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(tensors)
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("concat", *(t.shape for t in tensors)) from None
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _record(y, tensors, lambda g: tuple(np.split(g, bounds, axis=axis)))


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    try:
        y = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise DimensionError("stack", *(t.shape for t in tensors)) from None
    return _record(y, tensors, lambda g: tuple(np.moveaxis(g, axis, 0)))


def embedding(table: Tensor, indices, padding_idx: int | None = None) -> Tensor:
    """Row lookup; the padding row never receives gradient."""
    idx = np.asarray(indices)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise DimensionError("embedding", table.shape, idx.shape)

    def back(g):
        out = np.zeros_like(table.data)
        np.add.at(out, idx.reshape(-1), g.reshape(-1, table.shape[1]))
        if padding_idx is not None:
            out[padding_idx] = 0.0
        return (out,)

    return _record(table.data[idx], (table,), back)


# reductions -----------------------------------------------------------------


def sum_(x: Tensor) -> Tensor:
    return _record(np.asarray(x.data.sum()), (x,), lambda g: (np.broadcast_to(g, x.shape).copy(),))


def mean(x: Tensor) -> Tensor:
    n = x.data.size
    return _record(np.asarray(x.data.mean()), (x,), lambda g: (np.full_like(x.data, g / n),))


def max_pool_over_time(x: Tensor) -> Tensor:
    """[B, L, F] -> [B, F], the maximum over positions L."""
    if x.data.ndim != 3:
        raise DimensionError("max_pool_over_time", x.shape)
    arg = x.data.argmax(axis=1)[:, None, :]
    y = np.take_along_axis(x.data, arg, axis=1)[:, 0, :]

    def back(g):
        out = np.zeros_like(x.data)
        np.put_along_axis(out, arg, g[:, None, :], axis=1)
        return (out,)

    return _record(y, (x,), back)


# linear algebra -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for a of rank >= 1 and b of rank 2 (leading dims of a are batch)."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2 or a.data.ndim < 1 or a.shape[-1] != b.shape[0]:
        raise DimensionError("matmul", a.shape, b.shape)

    def back(g):
        ga = g @ b.data.T
        a2 = a.data.reshape(-1, a.shape[-1])
        g2 = g.reshape(-1, b.shape[1])
        return ga, a2.T @ g2

    return _record(a.data @ b.data, (a, b), back)


def dense(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Affine map ``x @ w + b``."""
    if b.data.ndim != 1 or w.data.ndim != 2 or b.shape[0] != w.shape[1] or x.shape[-1] != w.shape[0]:
        raise DimensionError("dense", x.shape, w.shape, b.shape)

    def back(g):
        x2 = x.data.reshape(-1, x.shape[-1])
        g2 = g.reshape(-1, w.shape[1])
        return g @ w.data.T, x2.T @ g2, g2.sum(axis=0)

    return _record(x.data @ w.data + b.data, (x, w, b), back)


def conv1d(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Valid, stride-1 convolution. x [B, T, C], w [K, C, F], b [F] -> [B, T-K+1, F]."""
    if x.data.ndim != 3 or w.data.ndim != 3 or x.shape[2] != w.shape[1] or b.shape != (w.shape[2],):
        raise DimensionError("conv1d", x.shape, w.shape, b.shape)
    k = w.shape[0]
    steps = x.shape[1] - k + 1
    if steps < 1:
        raise DimensionError("conv1d (sequence shorter than kernel)", x.shape, w.shape)
    windows = np.lib.stride_tricks.sliding_window_view(x.data, k, axis=1)  # [B, L, C, K]
    y = np.tensordot(windows, w.data, axes=([3, 2], [0, 1])) + b.data

    def back(g):
        gx = np.zeros_like(x.data)
        for j in range(k):
            gx[:, j : j + steps, :] += g @ w.data[j].T
        gw = np.tensordot(windows, g, axes=([0, 1], [0, 1]))  # [C, K, F]
        return gx, gw.transpose(1, 0, 2), g.sum(axis=(0, 1))

    return _record(y, (x, w, b), back)


# loss and optimizer ---------------------------------------------------------


def bce_loss(probs: Tensor, targets, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy with probabilities clamped to [eps, 1 - eps]."""
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=probs.dtype)
    if y.shape != probs.shape:
        raise DimensionError("bce_loss", probs.shape, y.shape)
    p = np.clip(probs.data, eps, 1.0 - eps)
    n = p.size
    loss = -np.mean(y * np.log(p) + (1.0 - y) * np.log1p(-p))
    inside = (probs.data >= eps) & (probs.data <= 1.0 - eps)

    def back(g):
        return (g * inside * (p - y) / (p * (1.0 - p)) / n,)

    return _record(np.asarray(loss, dtype=probs.dtype), (probs,), back)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray], **hyper) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], **hyper)


def adam_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None], state: AdamState) -> None:
    """One bias-corrected Adam update, applied in place to ``params`` and ``state``.

    A ``None`` gradient skips that parameter (frozen) but the step counter still advances.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if not (len(params) == len(grads) == len(state.m)):
        raise ValidationError("params, grads and optimizer state differ in length")
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        if g.shape != p.shape:
            raise DimensionError("adam_step", p.shape, g.shape)
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.epsilon)).astype(p.dtype, copy=False)
