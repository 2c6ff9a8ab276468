"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad`` is appended to the
thread's active :class:`Tape`. :func:`backward` walks that tape in reverse,
accumulating gradients into ``.grad`` of each tensor that contributed to the loss.

Storage is a contiguous row-major ``numpy`` array. Broadcasting follows numpy
rules for the elementwise ops; ``matmul`` accepts leading batch dimensions.
"""
from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Tape",
    "TensorError",
    "ShapeError",
    "Adam",
    "StepSchedule",
    "active_tape",
    "reset_tape",
    "no_grad",
    "backward",
    "op_forward",
    "OP_KINDS",
]


class TensorError(ValueError):
    """Invalid tensor operation."""


class ShapeError(TensorError):
    """Operand shapes do not conform to an operation's rules."""


_ids = itertools.count(1)


class Tensor:
    """An n-dimensional float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64, copy=True)
        self.data = np.ascontiguousarray(arr)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.node_id: int | None = None
        self.name = name

    @classmethod
    def _wrap(cls, arr: np.ndarray, requires_grad: bool = False) -> "Tensor":
        t = cls.__new__(cls)
        t.data = np.ascontiguousarray(arr, dtype=np.float64)
        t.grad = None
        t.requires_grad = requires_grad
        t.node_id = None
        t.name = None
        return t

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
    def values(self) -> np.ndarray:
        """Flat row-major view of the data."""
        return self.data.reshape(-1)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data.copy())

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, float(other))
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scalar_mul(self, 1.0 / float(other))
        return div(self, _as_tensor(other))

    def __neg__(self):
        return scalar_mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self) -> "Tensor":
        return transpose(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------


@dataclass
class _Op:
    kind: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of differentiable operations.

    Operations are appended as they execute, so every op's inputs were produced
    earlier in the list.
    """

    ops: list[_Op] = field(default_factory=list)
    enabled: bool = True

    def record(self, op: _Op) -> None:
        op.output.node_id = next(_ids)
        self.ops.append(op)

    def clear(self) -> None:
        self.ops.clear()

    def __len__(self) -> int:
        return len(self.ops)


_local = threading.local()


def active_tape() -> Tape:
    tape = getattr(_local, "tape", None)
    if tape is None:
        tape = _local.tape = Tape()
    return tape


def reset_tape() -> Tape:
    """Discard every recorded operation and start a fresh tape."""
    tape = active_tape()
    tape.clear()
    tape.enabled = True
    return tape


@contextlib.contextmanager
def no_grad() -> Iterator[None]:
    """Run operations without recording them, even on ``requires_grad`` inputs."""
    tape = active_tape()
    prev = tape.enabled
    tape.enabled = False
    try:
        yield
    finally:
        tape.enabled = prev


def _result(kind: str, out: np.ndarray, inputs: tuple[Tensor, ...], bw) -> Tensor:
    tape = active_tape()
    if tape.enabled and any(t.requires_grad for t in inputs):
        res = Tensor._wrap(out, requires_grad=True)
        tape.record(_Op(kind, inputs, res, bw))
        return res
    return Tensor._wrap(out)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _broadcast(kind: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kind}: shapes {a.shape} and {b.shape} do not broadcast") from None


# --------------------------------------------------------------------------
# operations
# --------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are not aligned")
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} differ") from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (
            None if ga is None else _unbroadcast(ga, a.shape),
            None if gb is None else _unbroadcast(gb, b.shape),
        )

    return _result("matmul", out, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    """Swap the last two axes."""
    if a.ndim < 2:
        raise ShapeError(f"transpose: needs at least 2 dims, got shape {a.shape}")
    return _result("transpose", np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast("add", a, b)
    return _result(
        "add", a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast("sub", a, b)
    return _result(
        "sub", a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast("mul", a, b)
    return _result(
        "mul",
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast("div", a, b)
    out = a.data / b.data
    return _result(
        "div",
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
    )


def scalar_mul(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _result("scalar_mul", a.data * c, (a,), lambda g: (g * c,))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return _result("relu", a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    scale = np.where(a.data > 0, 1.0, slope)
    return _result("leaky_relu", a.data * scale, (a,), lambda g: (g * scale,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _result("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    return _result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def power(a: Tensor, p: float) -> Tensor:
    p = float(p)
    out = a.data**p
    return _result("pow", out, (a,), lambda g: (g * p * a.data ** (p - 1.0),))


def absolute(a: Tensor) -> Tensor:
    # subgradient 0 at the kink
    sign = np.sign(a.data)
    return _result("abs", np.abs(a.data), (a,), lambda g: (g * sign,))


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result("softmax", out, (a,), bw)


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    probs = np.exp(out)
    return _result(
        "log_softmax", out, (a,), lambda g: (g - probs * g.sum(axis=axis, keepdims=True),)
    )


def _expand_reduced(g: np.ndarray, shape: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(shape) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, shape)


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims))
    return _result(
        "sum", out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims).copy(),)
    )


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims))
    count = a.size // max(out.size, 1)
    return _result(
        "mean", out, (a,), lambda g: (_expand_reduced(g, a.shape, axis, keepdims) / count,)
    )


def masked_mean_rows(x: Tensor, mask: Tensor) -> Tensor:
    """Mean over the rows of ``x`` (axis -2) whose ``mask`` entry is 1.

    ``x`` is (..., N, H) and ``mask`` is (..., N) with 0/1 entries; the mask is
    treated as a constant.
    """
    if x.ndim < 2 or mask.shape != x.shape[:-1]:
        raise ShapeError(f"masked_mean_rows: x {x.shape} and mask {mask.shape} disagree")
    m = mask.data[..., None]
    counts = m.sum(axis=-2)
    if np.any(counts == 0):
        raise TensorError("masked_mean_rows: mask selects no rows")
    out = (x.data * m).sum(axis=-2) / counts
    return _result("masked_mean_rows", out, (x, mask), lambda g: (g[..., None, :] * m / counts[..., None, :], None))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(tensors)
    if not tensors:
        raise ShapeError("concat: no inputs")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} do not align on axis {axis}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _result("concat", out, tensors, lambda g: tuple(np.split(g, splits, axis=axis)))


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    return concat(tensors, axis=0)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _result("reshape", out, (a,), lambda g: (g.reshape(a.shape),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError(f"permute: {axes} is not a permutation of the axes of {a.shape}")
    inverse = tuple(np.argsort(axes))
    return _result("permute", np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def straight_through(hard: Tensor, soft: Tensor) -> Tensor:
    """Forward value of ``hard``; gradient passed unchanged to ``soft``."""
    if hard.shape != soft.shape:
        raise ShapeError(f"straight_through: shapes {hard.shape} and {soft.shape} differ")
    return _result("straight_through", hard.data.copy(), (hard, soft), lambda g: (None, g))


OP_KINDS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "transpose": transpose,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "scalar_mul": scalar_mul,
    "relu": relu,
    "leaky_relu": leaky_relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "exp": exp,
    "log": log,
    "pow": power,
    "abs": absolute,
    "sum": sum,
    "mean": mean,
    "masked_mean_rows": masked_mean_rows,
    "concat_rows": lambda *ts: concat_rows(ts),
    "reshape": reshape,
    "permute": permute,
    "straight_through": straight_through,
}


def op_forward(kind: str, inputs: Sequence[Tensor], **attrs) -> Tensor:
    """Apply the operation named ``kind`` to ``inputs``.

    Extra keyword attributes (``axis``, ``slope``, ``shape``, ...) are passed to the op.
    Scalar constants for ``scalar_mul``/``pow`` go in ``attrs`` as ``c``/``p``.
    """
    try:
        fn = OP_KINDS[kind]
    except KeyError:
        raise TensorError(f"unknown operation kind {kind!r}") from None
    return fn(*inputs, **attrs)


# --------------------------------------------------------------------------
# backward
# --------------------------------------------------------------------------


def backward(loss: Tensor, retain_tape: bool = False) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every contributing tensor.

    The tape is cleared afterwards unless ``retain_tape`` is set.
    """
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise TensorError("backward: loss does not depend on any tensor requiring grad")
    tape = active_tape()
    seed = np.ones_like(loss.data)
    if loss.node_id is None:
        # loss is itself a leaf
        loss.grad = seed if loss.grad is None else loss.grad + seed
        return
    ops = tape.ops
    end = next((i for i in range(len(ops) - 1, -1, -1) if ops[i].output is loss), None)
    if end is None:
        raise TensorError("backward: loss is not on the active tape")

    grads: dict[int, np.ndarray] = {id(loss): seed}
    touched: dict[int, Tensor] = {id(loss): loss}
    for op in reversed(ops[: end + 1]):
        g = grads.get(id(op.output))
        if g is None:
            continue
        for inp, gi in zip(op.inputs, op.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = np.asarray(gi, dtype=np.float64)
                touched[key] = inp
    for key, t in touched.items():
        g = np.ascontiguousarray(np.broadcast_to(grads[key], t.shape))
        t.grad = g.copy() if t.grad is None else t.grad + g
    if not retain_tape:
        tape.clear()


# --------------------------------------------------------------------------
# optimisation
# --------------------------------------------------------------------------


class Adam:
    """Adam with bias correction and optional decoupled weight decay.

    ``step`` consumes the gradients of ``params`` and zeroes them.
    """

    def __init__(
        self,
        params: Iterable[Tensor],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = list(params)
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if weight_decay < 0:
            raise ValueError(f"weight decay must be >= 0, got {weight_decay}")
        self.lr = float(lr)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = float(weight_decay)
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.step_count = 0

    def step(self) -> None:
        for i, p in enumerate(self.params):
            if p.grad is None:
                raise TensorError(f"adam_step: parameter {p.name or i!r} has no gradient")
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, m, v in zip(self.params, self.m, self.v):
            g = p.grad
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.lr * self.weight_decay * p.data
            p.data -= update
            p.grad = None

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


@dataclass
class StepSchedule:
    """Multiply the learning rate by ``factor`` at fractions of the total epochs."""

    base_lr: float
    total_epochs: int
    milestones: tuple[float, ...] = (0.1, 0.3, 0.5)
    factor: float = 0.3

    def milestone_epochs(self) -> list[int]:
        return [int(round(f * self.total_epochs)) for f in self.milestones]

    def lr_at(self, epoch: int) -> float:
        passed = len([m for m in self.milestone_epochs() if epoch >= m])
        return self.base_lr * self.factor**passed

    def apply(self, optimizer: Adam, epoch: int) -> float:
        optimizer.lr = self.lr_at(epoch)
        return optimizer.lr

