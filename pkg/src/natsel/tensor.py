"""Dense float64 tensors with tape-based reverse-mode differentiation.

Tensors are immutable values (the optimizer's in-place parameter update is
the single documented exception, see :func:`natsel.trainer.sgd_momentum_step`).
Every public operation validates that its output is finite and raises
:class:`NumericError` otherwise.

Gradients are recorded on an explicit :class:`GradTape`: operations called
with ``tape=...`` append one entry each, and :func:`backward` replays the
entries in exact reverse order, accumulating adjoints additively.  Passing
``tape=None`` gives the plain (detached) numeric result.

Broadcasting is restricted to scalar-with-tensor: an operand must either
match the other's shape exactly or be a scalar (shape ``()``); Python
numbers are lifted to constant scalar tensors.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, TapeError

__all__ = [
    "Tensor",
    "GradTape",
    "backward",
    "matmul",
    "elementwise",
    "add",
    "sub",
    "mul",
    "scale",
    "relu",
    "exp",
    "log",
    "powc",
    "clamp_min",
    "tsum",
    "pick",
    "take_row",
    "take_flat",
    "reshape",
]


class Tensor:
    """A dense multi-dimensional array of float64, row-major."""

    __slots__ = ("values",)

    def __init__(self, values):
        self.values = np.array(values, dtype=np.float64, order="C")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    @property
    def data(self) -> np.ndarray:
        """Flat row-major view of the elements."""
        return self.values.reshape(-1)

    @property
    def size(self) -> int:
        return self.values.size

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"


# A tape entry: (output, pull) where pull maps the output adjoint to an
# iterable of (input tensor, adjoint contribution) pairs.
_Pull = Callable[[np.ndarray], Iterable[tuple[Tensor, np.ndarray]]]


class GradTape:
    """Ordered record of primitive operations plus a parameter registry."""

    def __init__(self):
        self._entries: list[tuple[Tensor, _Pull]] = []
        self._outputs: set[int] = set()
        self._parameters: list[Tensor] = []

    def register(self, *parameters: Tensor) -> None:
        """Register tensors whose gradients :func:`backward` must report."""
        for p in parameters:
            if not isinstance(p, Tensor):
                raise TypeError("parameters must be Tensors")
            self._parameters.append(p)

    @property
    def parameters(self) -> tuple[Tensor, ...]:
        return tuple(self._parameters)

    def _record(self, output: Tensor, pull: _Pull) -> None:
        self._entries.append((output, pull))
        self._outputs.add(id(output))


def backward(tape: GradTape, root: Tensor) -> dict[Tensor, Tensor]:
    """Return gradients of the scalar ``root`` for every registered parameter.

    Parameters not reachable from ``root`` get zero gradients.  Adjoints are
    accumulated additively, so a value used twice sums both contributions.
    """
    if root.shape != ():
        raise ShapeError(f"backward root must be scalar, got shape {root.shape}")
    if id(root) not in tape._outputs:
        raise TapeError("root was not produced on this tape")

    adjoints: dict[int, np.ndarray] = {id(root): np.ones((), dtype=np.float64)}
    for output, pull in reversed(tape._entries):
        out_adj = adjoints.pop(id(output), None)
        if out_adj is None:
            continue
        for tensor, contribution in pull(out_adj):
            key = id(tensor)
            if key in adjoints:
                adjoints[key] = adjoints[key] + contribution
            else:
                adjoints[key] = contribution

    grads: dict[Tensor, Tensor] = {}
    for p in tape._parameters:
        acc = adjoints.get(id(p))
        if acc is None:
            grads[p] = Tensor(np.zeros(p.shape))
        else:
            grads[p] = Tensor(np.broadcast_to(acc, p.shape))
    return grads


def _finite(compute, op: str) -> np.ndarray:
    """Evaluate an array expression and reject non-finite results.

    IEEE overflow/invalid warnings are silenced; the NumericError carries
    the diagnosis instead.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        values = compute()
    if not np.all(np.isfinite(values)):
        raise NumericError(f"{op} produced non-finite values")
    return values


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return Tensor(float(x))
    raise TypeError(f"cannot use {type(x).__name__} as a tensor operand")


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.shape == () or b.shape == ():
        return
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not "
                     "equal and neither is scalar")


def _reduce_to(adj: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    # Scalar operands collect the sum of the broadcast adjoint.
    if shape == () and adj.shape != ():
        return np.sum(adj)
    return adj


def matmul(a: Tensor, b: Tensor, tape: GradTape | None = None) -> Tensor:
    """Matrix product of a [M,K] by a [K,N] tensor."""
    if len(a.shape) != 2 or len(b.shape) != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions disagree: {a.shape} x {b.shape}")
    out = Tensor(_finite(lambda: a.values @ b.values, "matmul"))
    if tape is not None:
        av, bv = a.values, b.values

        def pull(g: np.ndarray):
            return ((a, g @ bv.T), (b, av.T @ g))

        tape._record(out, pull)
    return out


def add(a, b, tape: GradTape | None = None) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "add")
    out = Tensor(_finite(lambda: a.values + b.values, "add"))
    if tape is not None:
        def pull(g: np.ndarray):
            return ((a, _reduce_to(g, a.shape)), (b, _reduce_to(g, b.shape)))

        tape._record(out, pull)
    return out


def sub(a, b, tape: GradTape | None = None) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "sub")
    out = Tensor(_finite(lambda: a.values - b.values, "sub"))
    if tape is not None:
        def pull(g: np.ndarray):
            return ((a, _reduce_to(g, a.shape)), (b, _reduce_to(-g, b.shape)))

        tape._record(out, pull)
    return out


def mul(a, b, tape: GradTape | None = None) -> Tensor:
    a, b = _lift(a), _lift(b)
    _binary_shapes(a, b, "mul")
    out = Tensor(_finite(lambda: a.values * b.values, "mul"))
    if tape is not None:
        av, bv = a.values, b.values

        def pull(g: np.ndarray):
            return ((a, _reduce_to(g * bv, a.shape)),
                    (b, _reduce_to(g * av, b.shape)))

        tape._record(out, pull)
    return out


def scale(a: Tensor, factor: float, tape: GradTape | None = None) -> Tensor:
    """Multiply by a constant; the factor is not differentiated through."""
    factor = float(factor)
    out = Tensor(_finite(lambda: a.values * factor, "scale"))
    if tape is not None:
        tape._record(out, lambda g: ((a, g * factor),))
    return out


def relu(a: Tensor, tape: GradTape | None = None) -> Tensor:
    out = Tensor(np.maximum(a.values, 0.0))
    if tape is not None:
        mask = a.values > 0.0  # derivative at exactly 0 taken as 0

        def pull(g: np.ndarray):
            return ((a, g * mask),)

        tape._record(out, pull)
    return out


def exp(a: Tensor, tape: GradTape | None = None) -> Tensor:
    out = Tensor(_finite(lambda: np.exp(a.values), "exp"))
    if tape is not None:
        ov = out.values
        tape._record(out, lambda g: ((a, g * ov),))
    return out


def log(a: Tensor, tape: GradTape | None = None) -> Tensor:
    if np.any(a.values <= 0.0):
        raise NumericError("log of non-positive value")
    out = Tensor(np.log(a.values))
    if tape is not None:
        av = a.values
        tape._record(out, lambda g: ((a, g / av),))
    return out


def powc(a: Tensor, exponent: float, tape: GradTape | None = None) -> Tensor:
    """Elementwise power to a constant exponent; base must be non-negative."""
    exponent = float(exponent)
    if np.any(a.values < 0.0):
        raise NumericError("powc of negative base")
    out = Tensor(_finite(lambda: np.power(a.values, exponent), "powc"))
    if tape is not None:
        av = a.values
        # At a zero base the one-sided derivative may be infinite; report 0
        # there so gradients stay finite.
        local = np.where(av > 0.0, exponent * np.power(av, exponent - 1.0), 0.0)

        def pull(g: np.ndarray):
            return ((a, g * local),)

        tape._record(out, pull)
    return out


def clamp_min(a: Tensor, floor: float, tape: GradTape | None = None) -> Tensor:
    """max(a, floor) elementwise; gradient passes only where a > floor."""
    floor = float(floor)
    out = Tensor(np.maximum(a.values, floor))
    if tape is not None:
        mask = a.values > floor

        def pull(g: np.ndarray):
            return ((a, g * mask),)

        tape._record(out, pull)
    return out


def tsum(a: Tensor, tape: GradTape | None = None) -> Tensor:
    """Sum of all elements, as a scalar tensor."""
    out = Tensor(_finite(lambda: np.sum(a.values), "sum"))
    if tape is not None:
        shape = a.shape

        def pull(g: np.ndarray):
            return ((a, np.full(shape, float(g))),)

        tape._record(out, pull)
    return out


def pick(a: Tensor, index: int, tape: GradTape | None = None) -> Tensor:
    """Extract one element by flat row-major index, as a scalar tensor."""
    flat = a.values.reshape(-1)
    if not 0 <= index < flat.size:
        raise ShapeError(f"pick index {index} out of range for size {flat.size}")
    out = Tensor(flat[index])
    if tape is not None:
        shape = a.shape

        def pull(g: np.ndarray):
            z = np.zeros(shape)
            z.reshape(-1)[index] = g
            return ((a, z),)

        tape._record(out, pull)
    return out


def take_row(a: Tensor, row: int, tape: GradTape | None = None) -> Tensor:
    """Extract row ``row`` of a 2-D tensor as a 1-D tensor."""
    if len(a.shape) != 2:
        raise ShapeError(f"take_row needs a 2-D tensor, got {a.shape}")
    if not 0 <= row < a.shape[0]:
        raise ShapeError(f"row {row} out of range for shape {a.shape}")
    out = Tensor(a.values[row])
    if tape is not None:
        shape = a.shape

        def pull(g: np.ndarray):
            z = np.zeros(shape)
            z[row] = g
            return ((a, z),)

        tape._record(out, pull)
    return out


def take_flat(a: Tensor, indices: np.ndarray, out_shape: Sequence[int],
              tape: GradTape | None = None) -> Tensor:
    """Gather elements by flat row-major indices into a new shape.

    Indices may repeat; the adjoint scatter-adds back, which is what makes
    this the building block for im2col-style convolution.
    """
    indices = np.asarray(indices, dtype=np.int64).reshape(-1)
    flat = a.values.reshape(-1)
    if indices.size and (indices.min() < 0 or indices.max() >= flat.size):
        raise ShapeError("take_flat index out of range")
    out_shape = tuple(int(d) for d in out_shape)
    if int(np.prod(out_shape, dtype=np.int64)) != indices.size:
        raise ShapeError("take_flat output shape does not match index count")
    out = Tensor(flat[indices].reshape(out_shape))
    if tape is not None:
        shape = a.shape

        def pull(g: np.ndarray):
            z = np.zeros(shape)
            np.add.at(z.reshape(-1), indices, g.reshape(-1))
            return ((a, z),)

        tape._record(out, pull)
    return out


def reshape(a: Tensor, shape: Sequence[int], tape: GradTape | None = None) -> Tensor:
    shape = tuple(int(d) for d in shape)
    out = Tensor(a.values.reshape(shape))
    if tape is not None:
        old = a.shape

        def pull(g: np.ndarray):
            return ((a, g.reshape(old)),)

        tape._record(out, pull)
    return out


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "relu": relu,
    "exp": exp,
    "log": log,
    "scale": scale,
}


def elementwise(op: str, *operands, tape: GradTape | None = None) -> Tensor:
    """Dispatch an elementwise operation by name.

    Supported: add, sub, mul (two operands, scalar broadcasting only),
    relu, exp, log (one operand), scale (tensor plus constant factor).
    """
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    return fn(*operands, tape=tape)
