"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations executed while a :class:`Tape` is active are recorded on it;
:func:`backward` then walks the tape in reverse and accumulates gradients
into every ``requires_grad`` tensor.  Outside a tape the same operations
just compute values, which is what inference uses.

Broadcasting is limited to identical shapes and scalar-vs-tensor.
"""
from __future__ import annotations

import threading
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


class TapeError(RuntimeError):
    pass


_local = threading.local()


def _active_tape() -> Tape | None:
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if not np.all(np.isfinite(arr)):
            raise NonFiniteError(f"tensor {name or ''} built from non-finite values".replace("  ", " "))
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return take(self, index)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; nested tapes are allowed and only the innermost
    one records.  A tape can be consumed by :func:`backward` exactly once.
    """

    def __init__(self):
        self.entries: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []
        self.consumed = False

    def __enter__(self) -> Tape:
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.stack.pop()

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], grad_fn: Callable) -> None:
        if self.consumed:
            raise TapeError("cannot record on a tape that was already consumed by backward")
        self.entries.append((out, inputs, grad_fn))


def _result(op: str, value: np.ndarray, inputs: tuple[Tensor, ...], grad_fn: Callable) -> Tensor:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = value
    out.name = None
    needs = any(t.requires_grad for t in inputs)
    out.requires_grad = needs
    out.grad = None
    tape = _active_tape()
    if needs and tape is not None:
        tape.record(out, inputs, grad_fn)
    return out


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape and a.data.ndim != 0 and b.data.ndim != 0:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not identical and neither is a scalar")


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    return np.asarray(g.sum())


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _result("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def matmul(a, b) -> Tensor:
    """Matrix product for ``[m, n] @ [n, p]`` or matrix-vector ``[m, n] @ [n]``."""
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")

    def grad_fn(g):
        if b.data.ndim == 1:
            return np.outer(g, b.data), a.data.T @ g
        return g @ b.data.T, a.data.T @ g

    return _result("matmul", a.data @ b.data, (a, b), grad_fn)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _result("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        y = np.exp(a.data)
    return _result("exp", y, (a,), lambda g: (g * y,))


def clamp(a, lo: float, hi: float) -> Tensor:
    """Clip to ``[lo, hi]``; the gradient is passed only where the input was inside."""
    a = as_tensor(a)
    inside = (a.data >= lo) & (a.data <= hi)
    return _result("clamp", np.clip(a.data, lo, hi), (a,), lambda g: (g * inside,))


def sum(a) -> Tensor:  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    return _result("sum", np.asarray(a.data.sum()), (a,),
                   lambda g: (np.full(a.shape, float(g)),))


def mean(a) -> Tensor:
    a = as_tensor(a)
    n = a.size
    return _result("mean", np.asarray(a.data.mean()), (a,),
                   lambda g: (np.full(a.shape, float(g) / n),))


def mse(a, b) -> Tensor:
    """Mean of squared differences over all entries."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        raise ShapeError(f"mse: shapes {a.shape} and {b.shape} differ")
    diff = a.data - b.data
    n = diff.size
    return _result("mse", np.asarray(np.mean(diff * diff)), (a, b),
                   lambda g: (2.0 * float(g) / n * diff, -2.0 * float(g) / n * diff))


def concat(parts: Sequence) -> Tensor:
    """Join 1-D tensors end to end."""
    parts = tuple(as_tensor(p) for p in parts)
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError(f"concat: expected 1-D parts, got shape {p.shape}")
    bounds = np.cumsum([0] + [p.size for p in parts])

    def grad_fn(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _result("concat", np.concatenate([p.data for p in parts]), parts, grad_fn)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    if int(np.prod(shape)) != a.size:
        raise ShapeError(f"reshape: cannot view {a.shape} as {shape}")
    return _result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def take(a, index) -> Tensor:
    """Basic (slice/integer) indexing."""
    a = as_tensor(a)
    value = np.array(a.data[index])

    def grad_fn(g):
        full = np.zeros_like(a.data)
        full[index] = g
        return (full,)

    return _result("take", value, (a,), grad_fn)


def backward(loss: Tensor, tape: Tape) -> dict[Tensor, np.ndarray]:
    """Propagate d(loss)/d(.) back through ``tape``.

    Gradients are added into ``.grad`` of every ``requires_grad`` leaf found on
    the tape (callers zero them first).  Returns the gradient of each such leaf,
    zeros for leaves that do not reach ``loss``.
    """
    if loss.data.ndim != 0 and loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if tape.consumed:
        raise TapeError("tape was already consumed by a previous backward pass")
    tape.consumed = True

    produced = {id(out) for out, _, _ in tape.entries}
    leaves: dict[int, Tensor] = {}
    for _, inputs, _ in tape.entries:
        for t in inputs:
            if t.requires_grad and id(t) not in produced:
                leaves.setdefault(id(t), t)

    upstream: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for out, inputs, grad_fn in reversed(tape.entries):
        g = upstream.pop(id(out), None)
        if g is None:
            continue
        for t, gi in zip(inputs, grad_fn(g)):
            if not t.requires_grad:
                continue
            key = id(t)
            if key in upstream:
                upstream[key] = upstream[key] + gi
            else:
                upstream[key] = np.asarray(gi, dtype=np.float64)

    grads = {}
    for key, leaf in leaves.items():
        g = upstream.get(key)
        if g is None:
            g = np.zeros_like(leaf.data)
        if leaf.grad is None:
            leaf.grad = np.zeros_like(leaf.data)
        leaf.grad = leaf.grad + g
        grads[leaf] = g
    return grads


def zero_grad(params: Iterable[Tensor]) -> None:
    for p in params:
        p.zero_grad()


def numerical_gradient(f: Callable[[], float], params: Sequence[Tensor], step: float = 1e-6) -> list[np.ndarray]:
    """Central differences of ``f`` with respect to every scalar entry of ``params``.

    ``f`` reads the parameters' current values; entries are perturbed in place
    and restored.
    """
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            fp = f()
            flat[i] = orig - step
            fm = f()
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * step)
        out.append(g)
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return 0.0
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)
    return float(np.max(np.abs(a - b) / denom))


def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor] | Mapping[str, Tensor],
               step: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` builds a scalar loss from the current parameter values.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    if isinstance(params, Mapping):
        params = list(params.values())
    params = list(params)
    zero_grad(params)
    with Tape() as tape:
        loss = f()
    grads = backward(loss, tape)
    analytic = [grads.get(p, np.zeros_like(p.data)) for p in params]

    def value() -> float:
        return float(f().data)

    numeric = numerical_gradient(value, params, step)
    return max((relative_error(a, n) for a, n in zip(analytic, numeric)), default=0.0)
