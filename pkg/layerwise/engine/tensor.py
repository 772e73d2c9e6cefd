"""
Tensor construction and validation

Tensors are float64 numpy arrays in row-major order. Values coming from
outside the engine pass through `tensor()` so shapes and finiteness are
checked once at the boundary.
"""

from typing import Any, Optional, Sequence

import numpy as np

from layerwise.core.errors import DimensionError, NonFiniteValueError

DTYPE = np.float64


def tensor(data: Any, shape: Optional[Sequence[int]] = None) -> np.ndarray:
    """Build a validated float64 tensor from external data"""
    array = np.array(data, dtype=DTYPE, order="C")
    if shape is not None:
        shape = tuple(int(s) for s in shape)
        if any(s <= 0 for s in shape):
            raise DimensionError("tensor", shape, message=f"tensor: shape {shape} has non-positive dimensions")
        if int(np.prod(shape)) != array.size:
            raise DimensionError(
                "tensor",
                array.shape,
                shape,
                message=f"tensor: {array.size} values cannot fill shape {shape}",
            )
        array = array.reshape(shape)
    if any(s <= 0 for s in array.shape):
        raise DimensionError("tensor", array.shape, message=f"tensor: shape {array.shape} has empty dimensions")
    if not np.all(np.isfinite(array)):
        bad = int(np.size(array) - np.count_nonzero(np.isfinite(array)))
        raise NonFiniteValueError(
            f"tensor: {bad} non-finite value(s) in input",
            details={"shape": list(array.shape), "non_finite": bad},
        )
    return array


def same_bits(a: np.ndarray, b: np.ndarray) -> bool:
    """Bitwise equality, NaN-safe and sign-of-zero aware"""
    a = np.ascontiguousarray(a, dtype=DTYPE)
    b = np.ascontiguousarray(b, dtype=DTYPE)
    return a.shape == b.shape and a.tobytes() == b.tobytes()
