"""Reverse-mode differentiation over a small, fixed set of numpy primitives.

Operations are recorded on the active :class:`Tape` (entered with ``with``).
Outside a tape every primitive is a plain numpy evaluation, which is what the
inference and evaluation paths use.

    with Tape() as tape:
        loss = cross_entropy(matmul(x, w), labels)
    tape.backward(loss)
    w.grad  # dloss/dw
"""

from __future__ import annotations

import contextvars
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "DimensionError",
    "Tensor",
    "Parameter",
    "Tape",
    "as_tensor",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "softmax",
    "relu",
    "sigmoid",
    "add",
    "subtract",
    "multiply",
    "scale",
    "elementwise",
    "linear_map",
    "reduce_mean",
    "reduce_sum",
    "l2_normalize",
    "cross_entropy",
    "grad_check",
]

_ACTIVE_TAPE: contextvars.ContextVar["Tape | None"] = contextvars.ContextVar(
    "itanet_active_tape", default=None
)


class DimensionError(ValueError):
    """Operand shapes are incompatible for a primitive."""


class Tensor:
    """An array node. ``data`` is always a numpy array."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"{type(self).__name__}(shape={self.shape}{label})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return subtract(self, other)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return multiply(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return matmul(self, other)


class Parameter(Tensor):
    """A trainable leaf with an accumulated gradient of identical shape."""

    __slots__ = ("grad", "trainable")

    def __init__(self, data, name: str | None = None, trainable: bool = True):
        super().__init__(np.array(data), requires_grad=trainable, name=name)
        self.trainable = trainable
        self.grad = np.zeros_like(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def astype(self, dtype) -> None:
        self.data = self.data.astype(dtype)
        self.grad = self.grad.astype(dtype)


class _Node:
    __slots__ = ("output", "inputs", "backward")

    def __init__(self, output: Tensor, inputs: Sequence[Tensor], backward: Callable):
        self.output = output
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered record of primitive applications.

    Recording order is a valid topological order, so the backward sweep just
    walks the record in reverse.
    """

    def __init__(self):
        self.nodes: list[_Node] = []
        self._token = None

    def __enter__(self) -> "Tape":
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: Callable) -> None:
        self.nodes.append(_Node(output, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(value) into every trainable Parameter reached."""
        if loss.data.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for inp, ig in zip(node.inputs, in_grads):
                if ig is None or not inp.requires_grad:
                    continue
                if isinstance(inp, Parameter):
                    inp.grad += ig
                else:
                    key = id(inp)
                    if key in grads:
                        grads[key] = grads[key] + ig
                    else:
                        grads[key] = ig


def _record(out_data: np.ndarray, inputs: Sequence[Tensor], backward: Callable) -> Tensor:
    tape = _ACTIVE_TAPE.get()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs)
    if needs:
        tape.record(out, inputs, backward)
    return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of one-sided numpy broadcasting)."""
    if g.shape == shape:
        return g
    lead = g.ndim - len(shape)
    if lead:
        g = g.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    # b may be broadcast into a (bias, channel gate, positional table); the
    # result always has a's shape.
    if a.shape == b.shape:
        return
    if b.ndim <= a.ndim:
        tail = a.shape[a.ndim - b.ndim:]
        if all(nb in (1, na) for na, nb in zip(tail, b.shape)):
            return
    raise DimensionError(f"{op}: cannot broadcast shape {b.shape} into {a.shape}")


# ----------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    """``a @ b`` over the last two axes.

    ``b`` may be 2-D while ``a`` carries leading batch axes (shared weights).
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: batch dimensions differ for {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g @ np.swapaxes(bd, -1, -2) if a.requires_grad else None
        gb = None
        if b.requires_grad:
            if bd.ndim == 2 and ad.ndim > 2:
                gb = ad.reshape(-1, ad.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(ad, -1, -2) @ g
        return ga, gb

    return _record(ad @ bd, (a, b), backward)


def transpose(x) -> Tensor:
    """Swap the last two axes."""
    x = as_tensor(x)
    return _record(np.swapaxes(x.data, -1, -2), (x,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(x, shape: Sequence[int]) -> Tensor:
    x = as_tensor(x)
    old = x.shape
    return _record(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return _record(np.concatenate([x.data for x in xs], axis=axis), xs, backward)


def linear_map(x, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w (+ b)`` with the bias broadcast over rows."""
    out = matmul(x, w)
    return out if b is None else add(out, b)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "add")
    sb = b.shape
    return _record(a.data + b.data, (a, b), lambda g: (g, _unbroadcast(g, sb)))


def subtract(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "subtract")
    sb = b.shape
    return _record(a.data - b.data, (a, b), lambda g: (g, -_unbroadcast(g, sb)))


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast(a, b, "multiply")
    ad, bd = a.data, b.data

    def backward(g):
        ga = g * bd if a.requires_grad else None
        gb = _unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return _record(ad * bd, (a, b), backward)


def scale(x, c: float) -> Tensor:
    x = as_tensor(x)
    c = x.data.dtype.type(c) if x.data.dtype.kind == "f" else c
    return _record(x.data * c, (x,), lambda g: (g * c,))


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0  # derivative at exactly 0 is 0
    return _record(np.where(mask, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * mask,))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    d = x.data
    with np.errstate(over="ignore"):
        y = np.where(d >= 0, 1.0 / (1.0 + np.exp(-d)), np.exp(d) / (1.0 + np.exp(d)))
    y = y.astype(d.dtype)
    return _record(y, (x,), lambda g: (g * y * (1 - y),))


_ELEMENTWISE = {
    "relu": relu,
    "sigmoid": sigmoid,
    "add": add,
    "multiply": multiply,
    "scale": scale,
}


def elementwise(kind: str, *args) -> Tensor:
    """Dispatch by name: relu, sigmoid, add, multiply, scale."""
    try:
        fn = _ELEMENTWISE[kind]
    except KeyError:
        raise ValueError(f"unknown elementwise kind {kind!r}") from None
    return fn(*args)


# ----------------------------------------------------------------- reductions

def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if isinstance(axes, int):
        axes = (axes,)
    out = []
    for ax in axes:
        if not -ndim <= ax < ndim:
            raise IndexError(f"axis {ax} out of range for rank {ndim}")
        out.append(ax % ndim)
    if len(set(out)) != len(out):
        raise IndexError(f"repeated axes in {tuple(axes)}")
    return tuple(sorted(out))


def reduce_sum(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axes, x.ndim)
    shape = x.shape
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
    return _record(
        x.data.sum(axis=axes),
        (x,),
        lambda g: (np.broadcast_to(g.reshape(kept), shape).copy(),),
    )


def reduce_mean(x, axes) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axes(axes, x.ndim)
    shape = x.shape
    count = int(np.prod([shape[a] for a in axes])) if axes else 1
    kept = tuple(1 if i in axes else n for i, n in enumerate(shape))
    return _record(
        x.data.mean(axis=axes),
        (x,),
        lambda g: (np.broadcast_to(g.reshape(kept) / count, shape).copy(),),
    )


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise IndexError(f"axis {axis} out of range for rank {x.ndim}")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _record(y, (x,), backward)


def l2_normalize(x, axis: int = -1, eps: float = 1e-8) -> Tensor:
    """``x / max(||x||, eps)`` along ``axis``; a zero vector maps to zero."""
    x = as_tensor(x)
    d = x.data
    norm = np.sqrt((d * d).sum(axis=axis, keepdims=True))
    floored = norm < eps
    denom = np.where(floored, eps, norm)
    y = d / denom

    def backward(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        gx = np.where(floored, g / denom, (g - y * proj) / denom)
        return (gx,)

    return _record(y, (x,), backward)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise DimensionError(
            f"cross_entropy: logits {logits.shape} incompatible with labels {labels.shape}"
        )
    n, c = logits.shape
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise IndexError(f"cross_entropy: label outside [0, {c})")
    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - logsum
    rows = np.arange(n)
    loss = -logp[rows, labels].mean()

    def backward(g):
        p = np.exp(logp)
        p[rows, labels] -= 1
        return (p * (g / n),)

    return _record(np.asarray(loss, dtype=z.dtype), (logits,), backward)


# ---------------------------------------------------------------- verification

def grad_check(
    f: Callable[[], Tensor],
    params: Iterable[Parameter],
    eps: float = 1e-6,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` rebuilds the scalar loss from the current parameter values. All
    parameters must already hold float64 data.
    """
    params = list(params)
    for p in params:
        if p.data.dtype != np.float64:
            raise TypeError(f"grad_check requires float64 parameters, {p.name} is {p.data.dtype}")
        p.zero_grad()
    with Tape() as tape:
        loss = f()
    tape.backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = float(f().data)
            flat[i] = orig - eps
            down = float(f().data)
            flat[i] = orig
            numeric = (up - down) / (2 * eps)
            err = abs(analytic.reshape(-1)[i] - numeric) / max(abs(numeric), 1e-6)
            worst = max(worst, err)
    return worst
