"""Reverse-mode automatic differentiation over float64 numpy arrays.

Operations are recorded on the :class:`Tape` that is active in the current
thread.  With no active tape nothing is recorded, which is how inference
runs.  Typical use::

    with Tape() as tape:
        loss = model.loss(batch)
    tape.backward(loss)
    optimizer.step()
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .errors import ContractError, DimensionError, NumericError

_state = threading.local()


def _active_tape() -> "Tape | None":
    stack = getattr(_state, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("value", "grad", "requires_grad", "name", "__weakref__")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.array(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    @property
    def size(self) -> int:
        return self.value.size

    def item(self) -> float:
        return float(self.value.reshape(-1)[0]) if self.value.size == 1 else float(self.value)

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.value)

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self):
        return transpose(self)


@dataclass
class _Op:
    out: Tensor
    inputs: tuple[Tensor, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]
    name: str


class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    def __init__(self):
        self.ops: list[_Op] = []
        self._produced: set[int] = set()

    def __enter__(self) -> "Tape":
        stack = getattr(_state, "stack", None)
        if stack is None:
            stack = _state.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _state.stack.pop()
        return False

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward, name: str) -> None:
        self.ops.append(_Op(out, inputs, backward, name))
        self._produced.add(id(out))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar root, got shape {loss.shape}")
        if id(loss) not in self._produced:
            raise ContractError("loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.value)}
        leaves: dict[int, Tensor] = {}
        for op in reversed(self.ops):
            g = grads.pop(id(op.out), None)
            if g is None:
                continue
            for inp, gi in zip(op.inputs, op.backward(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
                if key not in self._produced:
                    leaves[key] = inp
        for key, leaf in leaves.items():
            g = grads[key]
            if leaf.grad is None:
                leaf.grad = np.array(g, dtype=np.float64)
            else:
                leaf.grad += g


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    tape = tape or _active_tape()
    if tape is None:
        raise ContractError("no tape: run the forward pass inside `with Tape()`")
    tape.backward(loss)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, inputs: tuple[Tensor, ...], backward, name: str) -> Tensor:
    tape = _active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.value = value
    out.grad = None
    out.requires_grad = needs
    out.name = None
    if needs:
        tape.record(out, inputs, backward, name)
    return out


def _check_same(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


def _reduce_to(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.full(shape, g.sum()) if shape else np.array(g.sum())


# -- elementwise --------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("add", a, b)
    return _make(
        a.value + b.value,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("sub", a, b)
    return _make(
        a.value - b.value,
        (a, b),
        lambda g: (_reduce_to(g, a.shape), _reduce_to(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_same("mul", a, b)
    av, bv = a.value, b.value
    return _make(
        av * bv,
        (a, b),
        lambda g: (_reduce_to(g * bv, a.shape), _reduce_to(g * av, b.shape)),
        "mul",
    )


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.value)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def relu(x: Tensor) -> Tensor:
    on = x.value > 0
    return _make(np.where(on, x.value, 0.0), (x,), lambda g: (g * on,), "relu")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.value)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    if np.any(x.value <= 0):
        raise NumericError("log of non-positive value")
    xv = x.value
    return _make(np.log(xv), (x,), lambda g: (g / xv,), "log")


def elementwise(op: str, *args) -> Tensor:
    """Dispatch by name: add, sub, mul, tanh, sigmoid, relu."""
    table = {"add": add, "sub": sub, "mul": mul, "tanh": tanh, "sigmoid": sigmoid, "relu": relu}
    try:
        fn = table[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# -- reductions and shape ------------------------------------------------------


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape
    if axis is None:
        return _make(np.array(x.value.sum()), (x,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")
    ax = axis % x.ndim
    return _make(
        x.value.sum(axis=ax),
        (x,),
        lambda g: (np.broadcast_to(np.expand_dims(g, ax), shape).copy(),),
        "sum",
    )


def mean(x: Tensor) -> Tensor:
    return mul(sum(x), 1.0 / x.size)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return _make(x.value.reshape(shape), (x,), lambda g: (g.reshape(old),), "reshape")


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got shape {x.shape}")
    return _make(x.value.T.copy(), (x,), lambda g: (g.T,), "transpose")


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, index, g)
        return (out,)

    return _make(np.array(x.value[index]), (x,), back, "getitem")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Join along ``axis`` (the feature axis by default)."""
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of nothing")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors:
        if t.ndim != nd or t.shape[:ax] + t.shape[ax + 1 :] != tensors[0].shape[:ax] + tensors[0].shape[ax + 1 :]:
            raise DimensionError(
                "concat: mismatched non-concat axes " + ", ".join(str(t.shape) for t in tensors)
            )
    bounds = np.cumsum([0] + [t.shape[ax] for t in tensors])

    def back(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) for i in range(len(tensors))
        )

    return _make(np.concatenate([t.value for t in tensors], axis=ax), tuple(tensors), back, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise DimensionError(f"stack: shapes {shape} and {t.shape} differ")
    return _make(
        np.stack([t.value for t in tensors], axis=axis),
        tuple(tensors),
        lambda g: tuple(np.take(g, i, axis=axis) for i in range(len(tensors))),
        "stack",
    )


# -- linear algebra -------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    av, bv = a.value, b.value
    return _make(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g), "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Row-batched affine map ``x @ w.T + b`` (``w`` is ``out x in``)."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[1]:
        raise DimensionError(f"linear: input {x.shape} does not fit weight {w.shape}")
    xv, wv = x.value, w.value
    y = xv @ wv.T
    if b is None:
        return _make(y, (x, w), lambda g: (g @ wv, g.T @ xv), "linear")
    if b.shape != (w.shape[0],):
        raise DimensionError(f"linear: bias {b.shape} does not fit weight {w.shape}")
    return _make(y + b.value, (x, w, b), lambda g: (g @ wv, g.T @ xv, g.sum(axis=0)), "linear")


def embedding_lookup(table: Tensor, index) -> Tensor:
    """Select row(s) of ``table``; an int gives a vector, an int array a matrix."""
    idx = np.asarray(index)
    if idx.dtype.kind not in "iu":
        raise IndexError(f"embedding index must be integral, got {idx.dtype}")
    n = table.shape[0]
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise IndexError(f"embedding index out of range for table with {n} rows")
    shape = table.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)

    return _make(table.value[idx].copy(), (table,), back, "embedding")


def pick(x: Tensor, index) -> Tensor:
    """Row-wise gather ``x[i, index[i]]`` for a matrix ``x``."""
    idx = np.asarray(index, dtype=np.int64)
    rows = np.arange(x.shape[0])
    shape = x.shape

    def back(g):
        out = np.zeros(shape)
        out[rows, idx] = g
        return (out,)

    return _make(x.value[rows, idx].copy(), (x,), back, "pick")


# -- normalisation -------------------------------------------------------------


def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis, max-shifted."""
    if not np.all(np.isfinite(x.value)):
        raise NumericError("softmax input has non-finite entries")
    if x.shape[-1] < 1:
        raise DimensionError("softmax over an empty axis")
    e = np.exp(x.value - x.value.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)
    return _make(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),), "softmax")


def log_softmax(x: Tensor) -> Tensor:
    if not np.all(np.isfinite(x.value)):
        raise NumericError("log_softmax input has non-finite entries")
    shifted = x.value - x.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)
    return _make(y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),), "log_softmax")


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout; identity when not training or ``rate == 0``."""
    if not 0.0 <= rate < 1.0:
        raise ContractError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    rng = rng if rng is not None else np.random.default_rng()
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _make(x.value * keep, (x,), lambda g: (g * keep,), "dropout")


# -- fused recurrent cell -------------------------------------------------------


def gru_cell(x: Tensor, h: Tensor, w_x: Tensor, w_h: Tensor, b: Tensor, mask=None) -> Tensor:
    """One GRU step on a batch of rows.

    ``w_x``/``w_h``/``b`` stack the reset, update and candidate gates.  Rows
    whose ``mask`` entry is 0 keep their previous state unchanged.
    """
    n, d = h.shape
    if w_h.shape != (3 * d, d) or w_x.shape != (3 * d, x.shape[1]) or b.shape != (3 * d,) or x.shape[0] != n:
        raise DimensionError(
            f"gru_cell: x {x.shape}, h {h.shape}, w_x {w_x.shape}, w_h {w_h.shape}, b {b.shape}"
        )
    m = np.ones(n) if mask is None else np.ascontiguousarray(mask, dtype=np.float64)
    xv = np.ascontiguousarray(x.value)
    hv = np.ascontiguousarray(h.value)
    wxv = np.ascontiguousarray(w_x.value)
    whv = np.ascontiguousarray(w_h.value)
    h_new, r, z, g = kernels.gru_forward(xv, hv, wxv, whv, np.ascontiguousarray(b.value), m)

    def back(dh):
        dx, dhp, dwx, dwh, db = kernels.gru_backward(
            np.ascontiguousarray(dh), xv, hv, wxv, whv, r, z, g, m
        )
        return dx, dhp, dwx, dwh, db

    return _make(h_new, (x, h, w_x, w_h, b), back, "gru_cell")


# -- initialisation ---------------------------------------------------------------


def init(shape, scheme: str = "normal", rng: np.random.Generator | None = None, std: float = 0.05,
         name: str | None = None) -> Tensor:
    """Trainable tensor drawn from ``normal(0, std)``, ``orthogonal`` or ``zeros``."""
    rng = rng if rng is not None else np.random.default_rng()
    shape = tuple(int(s) for s in np.atleast_1d(shape))
    if scheme == "normal":
        value = rng.normal(0.0, std, size=shape)
    elif scheme == "orthogonal":
        if len(shape) != 2:
            raise ContractError(f"orthogonal init needs a 2-D shape, got {shape}")
        value = _orthogonal(shape, rng)
    elif scheme == "zeros":
        value = np.zeros(shape)
    else:
        raise ContractError(f"unknown init scheme {scheme!r}")
    return Tensor(value, requires_grad=True, name=name)


def _orthogonal(shape: tuple[int, int], rng: np.random.Generator) -> np.ndarray:
    rows, cols = shape
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    return q if rows >= cols else q.T


# -- optimisation -------------------------------------------------------------------


def global_norm(tensors: Iterable[Tensor]) -> float:
    return math.sqrt(float(np.sum([np.sum(t.grad * t.grad) for t in tensors if t.grad is not None])))


def clip_grad_norm(tensors: Sequence[Tensor], max_norm: float) -> float:
    """Scale the group's gradients so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    norm = global_norm(tensors)
    if norm > max_norm:
        scale = max_norm / norm
        for t in tensors:
            if t.grad is not None:
                t.grad *= scale
    return norm


class SGD:
    """SGD with momentum, L2 weight decay folded into the gradient, and
    optional global-norm clipping of selected parameter groups."""

    def __init__(self, params: dict[str, Tensor], lr: float, momentum: float = 0.0,
                 weight_decay: float = 0.0, clip_norm: float | None = None,
                 clip_groups: Sequence[Sequence[str]] = (), no_decay: Iterable[str] = ()):
        if lr <= 0:
            raise ContractError("learning rate must be positive")
        if not 0.0 <= momentum < 1.0:
            raise ContractError("momentum must lie in [0, 1)")
        if weight_decay < 0:
            raise ContractError("weight decay must be non-negative")
        if clip_norm is not None and clip_norm <= 0:
            raise ContractError("clip_norm must be positive")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.clip_norm = clip_norm
        self.clip_groups = [list(g) for g in clip_groups]
        self.no_decay = set(no_decay)
        self.velocity = {k: np.zeros_like(p.value) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter {name!r} has no gradient")
        if self.clip_norm is not None:
            for group in self.clip_groups:
                clip_grad_norm([self.params[k] for k in group], self.clip_norm)
        for name, p in self.params.items():
            g = p.grad
            if self.weight_decay and name not in self.no_decay:
                g = g + 2.0 * self.weight_decay * p.value
            v = self.velocity[name]
            v *= self.momentum
            v += g
            p.value -= self.lr * v
            p.grad = np.zeros_like(p.value)


def sgd_step(params: dict[str, Tensor], opt: SGD) -> None:
    if opt.params is not params:
        raise ContractError("optimizer was built for a different parameter set")
    opt.step()
