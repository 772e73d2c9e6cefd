"""
Differentiable tensor operations

Each op accepts `Var` handles or plain arrays. When any input lives on a
tape (or a tape is active) the result is recorded there together with its
backward rule; otherwise the op just computes the array.
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from layerwise.core.errors import ContractError, DimensionError, TargetIndexError
from layerwise.engine.tape import BackwardFn, Tape, Var, current_tape
from layerwise.engine.tensor import DTYPE

Operand = Union[Var, np.ndarray, float]


def _value(x: Operand) -> np.ndarray:
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=DTYPE)


def _tape_of(*xs: Operand) -> Optional[Tape]:
    tape = None
    for x in xs:
        if isinstance(x, Var):
            if tape is not None and x.tape is not tape:
                raise ContractError("operands were recorded on different tapes")
            tape = x.tape
    return tape if tape is not None else current_tape()


def _result(kind: str, value: np.ndarray, inputs: Tuple[Operand, ...], backward: BackwardFn):
    tape = _tape_of(*inputs)
    if tape is None:
        return value
    handles = tuple(x if isinstance(x, Var) else tape.constant(_value(x)) for x in inputs)
    if all(tape.entries[h.id].kind == "constant" for h in handles):
        # nothing upstream can receive a gradient
        return tape.constant(value)
    return tape.record(kind, value, handles, backward)


def _require_same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimensionError(op, a.shape, b.shape)


# -- linear algebra -------------------------------------------------------

def matmul(a: Operand, b: Operand):
    """Matrix product of [m×k] by [k×n]"""
    A, B = _value(a), _value(b)
    if A.ndim != 2 or B.ndim != 2 or A.shape[1] != B.shape[0]:
        raise DimensionError("matmul", A.shape, B.shape)
    out = A @ B
    return _result("matmul", out, (a, b), lambda g: (g @ B.T, A.T @ g))


def add(a: Operand, b: Operand):
    A, B = _value(a), _value(b)
    _require_same_shape("add", A, B)
    return _result("add", A + B, (a, b), lambda g: (g, g))


def sub(a: Operand, b: Operand):
    A, B = _value(a), _value(b)
    _require_same_shape("sub", A, B)
    return _result("sub", A - B, (a, b), lambda g: (g, -g))


def mul(a: Operand, b: Operand):
    """Elementwise product"""
    A, B = _value(a), _value(b)
    _require_same_shape("mul", A, B)
    return _result("mul", A * B, (a, b), lambda g: (g * B, g * A))


def add_bias(x: Operand, bias: Operand):
    """Add a [n] bias along the last axis; the only broadcast the engine allows"""
    X, b = _value(x), _value(bias)
    if b.ndim != 1 or X.shape[-1] != b.shape[0]:
        raise DimensionError("add_bias", X.shape, b.shape)
    n = b.shape[0]
    return _result("add_bias", X + b, (x, bias), lambda g: (g, g.reshape(-1, n).sum(axis=0)))


def reduce_sum(x: Operand):
    X = _value(x)
    shape = X.shape
    return _result("sum", np.asarray(X.sum(), dtype=DTYPE), (x,), lambda g: (np.full(shape, float(g), dtype=DTYPE),))


def reshape(x: Operand, shape: Sequence[int]):
    X = _value(x)
    original = X.shape
    try:
        out = X.reshape(tuple(shape))
    except ValueError:
        raise DimensionError("reshape", original, tuple(shape)) from None
    return _result("reshape", out, (x,), lambda g: (g.reshape(original),))


# -- nonlinearities -------------------------------------------------------

def tanh(x: Operand):
    y = np.tanh(_value(x))
    return _result("tanh", y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Operand):
    # tanh form avoids overflow in exp for large |x|
    y = 0.5 * (1.0 + np.tanh(0.5 * _value(x)))
    return _result("sigmoid", y, (x,), lambda g: (g * y * (1.0 - y),))


def relu(x: Operand):
    X = _value(x)
    active = X > 0
    return _result("relu", np.where(active, X, 0.0), (x,), lambda g: (g * active,))


# -- indexing -------------------------------------------------------------

def embedding_lookup(ids: np.ndarray, weight: Operand):
    """Rows of weight [vocab×dim] selected by integer ids of any shape"""
    W = _value(weight)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise DimensionError("embedding", ids.shape, W.shape, message=f"embedding: ids must be integers, got {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= W.shape[0]):
        raise TargetIndexError(
            f"embedding: id range [{int(ids.min())}, {int(ids.max())}] outside vocabulary of {W.shape[0]}",
            details={"vocabulary": W.shape[0]},
        )
    out = W[ids]

    def backward(g: np.ndarray):
        grad = np.zeros_like(W)
        np.add.at(grad, ids.reshape(-1), g.reshape(-1, W.shape[1]))
        return (grad,)

    return _result("embedding", out, (weight,), backward)


def time_step(x: Operand, t: int):
    """Slice [batch×time×dim] at one time index"""
    X = _value(x)
    if X.ndim != 3:
        raise DimensionError("time_step", X.shape, message=f"time_step: expected [batch×time×dim], got {X.shape}")
    shape = X.shape

    def backward(g: np.ndarray):
        grad = np.zeros(shape, dtype=DTYPE)
        grad[:, t, :] = g
        return (grad,)

    return _result("time_step", X[:, t, :], (x,), backward)


def stack_steps(steps: Sequence[Operand]):
    """Stack T tensors of [batch×dim] into [batch×T×dim]"""
    values = [_value(s) for s in steps]
    for v in values[1:]:
        _require_same_shape("stack_steps", values[0], v)
    out = np.stack(values, axis=1)
    return _result(
        "stack_steps",
        out,
        tuple(steps),
        lambda g: tuple(g[:, t, :] for t in range(g.shape[1])),
    )


def slice_cols(x: Operand, start: int, stop: int):
    X = _value(x)
    if X.ndim != 2 or not 0 <= start < stop <= X.shape[1]:
        raise DimensionError("slice_cols", X.shape, message=f"slice_cols: [{start}:{stop}] outside {X.shape}")
    shape = X.shape

    def backward(g: np.ndarray):
        grad = np.zeros(shape, dtype=DTYPE)
        grad[:, start:stop] = g
        return (grad,)

    return _result("slice_cols", X[:, start:stop], (x,), backward)


# -- heads ----------------------------------------------------------------

def softmax(x: Operand) -> np.ndarray:
    """Row-wise softmax of [batch×classes] (not recorded)"""
    X = _value(x)
    shifted = X - X.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(X: np.ndarray) -> np.ndarray:
    shifted = X - X.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _check_targets(op: str, X: np.ndarray, targets: np.ndarray) -> np.ndarray:
    if X.ndim != 2:
        raise DimensionError(op, X.shape, message=f"{op}: logits must be [batch×classes], got {X.shape}")
    targets = np.asarray(targets)
    if targets.shape != (X.shape[0],):
        raise DimensionError(op, X.shape, targets.shape)
    if not np.issubdtype(targets.dtype, np.integer):
        raise TargetIndexError(f"{op}: targets must be integer class indices, got {targets.dtype}")
    if targets.size and (targets.min() < 0 or targets.max() >= X.shape[1]):
        bad = targets[(targets < 0) | (targets >= X.shape[1])]
        raise TargetIndexError(
            f"{op}: target {int(bad[0])} outside [0, {X.shape[1]})",
            details={"classes": X.shape[1]},
        )
    return targets


def token_cross_entropy(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row −log softmax(logits)[target] (not recorded)"""
    X = _value(logits)
    targets = _check_targets("softmax_cross_entropy", X, targets)
    return -log_softmax(X)[np.arange(X.shape[0]), targets]


def softmax_cross_entropy(logits: Operand, targets: np.ndarray):
    """Mean over the batch of −log softmax(logits)[target]"""
    X = _value(logits)
    targets = _check_targets("softmax_cross_entropy", X, targets)
    batch = X.shape[0]
    rows = np.arange(batch)
    logp = log_softmax(X)
    loss = np.asarray(-logp[rows, targets].mean(), dtype=DTYPE)

    def backward(g: np.ndarray):
        grad = np.exp(logp)
        grad[rows, targets] -= 1.0
        return (grad * (float(g) / batch),)

    return _result("softmax_cross_entropy", loss, (logits,), backward)


def dropout_mask(shape: Tuple[int, ...], rate: float, generator: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability rate, 1/(1−rate) otherwise"""
    keep = generator.random(shape) >= rate
    return keep.astype(DTYPE) / (1.0 - rate)

