"""Dense float64 tensors with taped reverse-mode differentiation and Adam.

Everything here is deliberately small: tensors wrap numpy arrays, every
differentiable operation records itself on the active :class:`Tape`, and
:func:`backward` replays the tape in reverse. 64-bit floats throughout so
finite-difference checks are meaningful.
"""

from __future__ import annotations

import contextvars
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import DimensionError, TrainingError, UsageError, ValidationError

Array = np.ndarray


class Tensor:
    """A dense float64 array with an optional gradient buffer.

    Tensors are treated as immutable once created; the optimizer installs a
    fresh ``data`` array instead of mutating in place. ``grad`` is allocated
    eagerly for ``requires_grad`` tensors so untouched parameters report an
    exact zero gradient.
    """

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, values, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: Array | None = np.zeros_like(self.data) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag})"

    # Operator sugar used by the network code.
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __neg__(self) -> "Tensor":
        return scale(self, -1.0)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


@dataclass
class _Recorded:
    """One taped operation: inputs, output, and its vector-Jacobian product."""

    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: Callable[[Array], tuple[Array, ...]]


class Tape:
    """Ordered record of operations, replayed in reverse by :func:`backward`.

    Single-writer: at most one tape is active per execution context. Use as a
    context manager; operations executed outside any tape run forward-only.
    """

    def __init__(self):
        self.ops: list[_Recorded] = []
        self._token: contextvars.Token | None = None

    def __enter__(self) -> "Tape":
        if _ACTIVE_TAPE.get() is not None:
            raise UsageError("a tape is already active in this context")
        self._token = _ACTIVE_TAPE.set(self)
        return self

    def __exit__(self, *exc) -> None:
        assert self._token is not None
        _ACTIVE_TAPE.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.ops)


_ACTIVE_TAPE: contextvars.ContextVar[Tape | None] = contextvars.ContextVar(
    "rxncond_active_tape", default=None
)


def _emit(inputs: Sequence[Tensor], out_data: Array, vjp) -> Tensor:
    out = Tensor(out_data)
    tape = _ACTIVE_TAPE.get()
    if tape is not None:
        tape.ops.append(_Recorded(tuple(inputs), out, vjp))
    return out


def backward(tape: Tape, root: Tensor) -> None:
    """Accumulate d(root)/d(leaf) into ``grad`` of every requires_grad leaf.

    Gradients over fan-out are summed; leaves that did not participate keep
    their (zero-initialized) buffers untouched.
    """
    if root.data.size != 1:
        raise UsageError(f"backward root must be scalar, got shape {root.shape}")
    if not any(op.output is root for op in tape.ops):
        raise UsageError("backward root was not produced on this tape")

    # Reverse replay: every consumer of a tensor appears after its producer on
    # the tape, so by the time an op is popped its output grad is complete.
    pending: dict[int, Array] = {id(root): np.ones_like(root.data)}
    for op in reversed(tape.ops):
        grad_out = pending.pop(id(op.output), None)
        if grad_out is None:
            continue  # not on any path from the root
        for tensor, grad_in in zip(op.inputs, op.vjp(grad_out)):
            if grad_in is None:
                continue
            key = id(tensor)
            if key in pending:
                pending[key] = pending[key] + grad_in
            else:
                pending[key] = grad_in

    for op in tape.ops:
        for tensor in op.inputs:
            if tensor.requires_grad and id(tensor) in pending:
                assert tensor.grad is not None
                tensor.grad += pending.pop(id(tensor))


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def constant(values, name: str | None = None) -> Tensor:
    return Tensor(values, requires_grad=False, name=name)


def add(a: Tensor, b: Tensor) -> Tensor:
    out = a.data + b.data
    return _emit(
        (a, b),
        out,
        lambda g, sa=a.data.shape, sb=b.data.shape: (
            _unbroadcast(g, sa),
            _unbroadcast(g, sb),
        ),
    )


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = a.data - b.data
    return _emit(
        (a, b),
        out,
        lambda g, sa=a.data.shape, sb=b.data.shape: (
            _unbroadcast(g, sa),
            -_unbroadcast(g, sb),
        ),
    )


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = a.data * b.data
    return _emit(
        (a, b),
        out,
        lambda g, da=a.data, db=b.data: (
            _unbroadcast(g * db, da.shape),
            _unbroadcast(g * da, db.shape),
        ),
    )


def scale(a: Tensor, factor: float) -> Tensor:
    return _emit((a,), a.data * factor, lambda g, f=factor: (g * f,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(
            f"matmul expects 2-D operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = a.data @ b.data
    return _emit(
        (a, b),
        out,
        lambda g, da=a.data, db=b.data: (g @ db.T, da.T @ g),
    )


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0.0
    return _emit((x,), x.data * mask, lambda g, m=mask: (g * m,))


def _sigmoid_values(z: Array) -> Array:
    # Evaluate both branches only where safe to avoid exp overflow.
    out = np.empty_like(z)
    pos = z >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def sigmoid(x: Tensor) -> Tensor:
    s = _sigmoid_values(x.data)
    return _emit((x,), s, lambda g, s=s: (g * s * (1.0 - s),))


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)
    return _emit((x,), t, lambda g, t=t: (g * (1.0 - t * t),))


def tsum(x: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g: Array, shape=x.data.shape, axis=axis, keepdims=keepdims):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit((x,), out, vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    out = np.concatenate([p.data for p in parts], axis=axis)
    extents = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(extents)[:-1]

    def vjp(g: Array, splits=splits, axis=axis):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=axis))

    return _emit(tuple(parts), out, vjp)


def gather_rows(matrix: Tensor, indices: Array) -> Tensor:
    """Row lookup ``matrix[indices]`` (dense one-hot product, minus the zeros)."""
    idx = np.asarray(indices, dtype=np.intp)
    if matrix.ndim != 2:
        raise DimensionError(f"gather_rows expects a matrix, got shape {matrix.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= matrix.shape[0]):
        raise DimensionError(
            f"row index out of range for matrix with {matrix.shape[0]} rows"
        )
    out = matrix.data[idx]

    def vjp(g: Array, idx=idx, shape=matrix.data.shape):
        acc = np.zeros(shape)
        np.add.at(acc, idx, g)
        return (acc,)

    return _emit((matrix,), out, vjp)


def row_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=-1, keepdims=True)

    def vjp(g: Array, s=s):
        dot = (g * s).sum(axis=-1, keepdims=True)
        return (s * (g - dot),)

    return _emit((x,), s, vjp)


def sigmoid_cross_entropy(logits: Tensor, targets: Tensor) -> Tensor:
    """Mean binary cross-entropy on logits, in the overflow-safe form.

    Per element: max(z, 0) - z*t + log(1 + exp(-|z|)); gradient (sigmoid(z) - t)/n.
    """
    t = targets.data
    z = logits.data
    if z.shape != t.shape:
        raise DimensionError(f"logits shape {z.shape} != targets shape {t.shape}")
    if not np.all((t == 0.0) | (t == 1.0)):
        raise ValidationError("targets must be binary (0/1)")
    per_element = np.maximum(z, 0.0) - z * t + np.log1p(np.exp(-np.abs(z)))
    out = np.asarray(per_element.mean())
    n = z.size

    def vjp(g: Array, z=z, t=t, n=n):
        return (g * (_sigmoid_values(z) - t) / n, None)

    return _emit((logits, targets), out, vjp)


def gru_cell(x: Tensor, h: Tensor, params: Mapping[str, Tensor]) -> Tensor:
    """Gated recurrent update, applied row-wise to ``[n, d]`` states.

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    n = tanh(x W_h + (r*h) U_h + b_h)
    out = (1 - z)*h + z*n
    """
    if x.ndim != 2 or h.ndim != 2 or x.shape != h.shape:
        raise DimensionError(
            f"gru_cell expects matching [n, d] input/hidden, got {x.shape} and {h.shape}"
        )
    d = x.shape[1]
    for key in ("w_z", "u_z", "w_r", "u_r", "w_h", "u_h"):
        if params[key].shape != (d, d):
            raise DimensionError(
                f"gru_cell parameter {key!r} has shape {params[key].shape}, expected {(d, d)}"
            )
    z = sigmoid(add(add(matmul(x, params["w_z"]), matmul(h, params["u_z"])), params["b_z"]))
    r = sigmoid(add(add(matmul(x, params["w_r"]), matmul(h, params["u_r"])), params["b_r"]))
    cand = tanh(
        add(add(matmul(x, params["w_h"]), matmul(mul(r, h), params["u_h"])), params["b_h"])
    )
    one = constant(np.ones_like(z.data))
    return add(mul(sub(one, z), h), mul(z, cand))


def gru_param_shapes(width: int) -> dict[str, tuple[int, ...]]:
    shapes: dict[str, tuple[int, ...]] = {}
    for gate in ("z", "r", "h"):
        shapes[f"w_{gate}"] = (width, width)
        shapes[f"u_{gate}"] = (width, width)
        shapes[f"b_{gate}"] = (1, width)
    return shapes


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...]) -> Array:
    """Uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)]; fan_in = first extent."""
    bound = 1.0 / np.sqrt(shape[0])
    return rng.uniform(-bound, bound, size=shape)


@dataclass
class AdamState:
    """Optimizer state: step count plus per-parameter moment buffers."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: dict[str, Array] = field(default_factory=dict)
    second_moment: dict[str, Array] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor], grads: Mapping[str, Array], state: AdamState
) -> AdamState:
    """One bias-corrected Adam update; installs fresh ``data`` arrays."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, param in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != param.data.shape:
            raise DimensionError(
                f"gradient shape {g.shape} != parameter {name!r} shape {param.data.shape}"
            )
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient for parameter {name!r}")
        m = state.first_moment.setdefault(name, np.zeros_like(param.data))
        v = state.second_moment.setdefault(name, np.zeros_like(param.data))
        m[...] = b1 * m + (1.0 - b1) * g
        v[...] = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1**t)
        v_hat = v / (1.0 - b2**t)
        param.data = param.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
    return state


def zero_grads(params: Mapping[str, Tensor]) -> None:
    for param in params.values():
        param.zero_grad()
