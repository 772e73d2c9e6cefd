"""
Define-by-run tape for reverse-mode automatic differentiation

Every differentiable op appends one entry holding its kind, the ids of its
inputs and a backward closure over the values it saved. Entries are appended
in execution order, so input ids are always smaller than the entry id and a
single reverse sweep visits the graph in topological order.
"""

from contextvars import ContextVar
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from layerwise.core.errors import ContractError
from layerwise.engine.tensor import DTYPE

GradientMap = Dict[str, np.ndarray]
BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_active_tape: ContextVar[Optional["Tape"]] = ContextVar("active_tape", default=None)


def current_tape() -> Optional["Tape"]:
    return _active_tape.get()


@dataclass(frozen=True)
class TapeEntry:
    kind: str
    inputs: Tuple[int, ...]
    backward: Optional[BackwardFn] = None


class Var:
    """Handle to a value recorded on a tape"""

    __slots__ = ("tape", "id")

    def __init__(self, tape: "Tape", node_id: int):
        self.tape = tape
        self.id = node_id

    @property
    def value(self) -> np.ndarray:
        return self.tape.values[self.id]

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def item(self) -> float:
        return float(self.value.reshape(-1)[0])

    def __add__(self, other):
        from layerwise.engine import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from layerwise.engine import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from layerwise.engine import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from layerwise.engine import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __matmul__(self, other):
        from layerwise.engine import ops
        return ops.matmul(self, other)

    def __rmatmul__(self, other):
        from layerwise.engine import ops
        return ops.matmul(other, self)

    def __repr__(self) -> str:
        kind = self.tape.entries[self.id].kind
        return f"Var(id={self.id}, kind={kind}, shape={self.shape})"


class Tape:
    """Append-only record of one forward pass"""

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self.values: List[np.ndarray] = []
        self.params: Dict[str, int] = {}
        self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def __enter__(self) -> "Tape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc_info) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def param(self, name: str, value: np.ndarray) -> Var:
        """Register a named leaf that receives a gradient"""
        if name in self.params:
            raise ContractError(f"parameter {name!r} registered twice on one tape")
        var = self._append(TapeEntry("param", ()), np.asarray(value, dtype=DTYPE))
        self.params[name] = var.id
        return var

    def constant(self, value: np.ndarray) -> Var:
        return self._append(TapeEntry("constant", ()), np.asarray(value, dtype=DTYPE))

    def record(self, kind: str, value: np.ndarray, inputs: Tuple[Var, ...], backward: BackwardFn) -> Var:
        ids = tuple(v.id for v in inputs)
        if any(i >= len(self.entries) for i in ids):
            raise ContractError(f"{kind}: input id out of topological order")
        return self._append(TapeEntry(kind, ids, backward), value)

    def _append(self, entry: TapeEntry, value: np.ndarray) -> Var:
        self.entries.append(entry)
        self.values.append(value)
        return Var(self, len(self.entries) - 1)


def backward(tape: Tape, loss: Var) -> GradientMap:
    """Gradients of a scalar loss with respect to every registered parameter"""
    if loss.tape is not tape:
        raise ContractError("loss was recorded on a different tape")
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")

    grads: List[Optional[np.ndarray]] = [None] * (loss.id + 1)
    grads[loss.id] = np.ones_like(loss.value)

    for node in range(loss.id, -1, -1):
        upstream = grads[node]
        entry = tape.entries[node]
        if upstream is None or entry.backward is None:
            continue
        for input_id, grad in zip(entry.inputs, entry.backward(upstream)):
            if grad is None:
                continue
            grads[input_id] = grad if grads[input_id] is None else grads[input_id] + grad

    result: GradientMap = {}
    for name, node in tape.params.items():
        grad = grads[node] if node <= loss.id else None
        result[name] = np.zeros_like(tape.values[node]) if grad is None else np.asarray(grad, dtype=DTYPE)
    return result
