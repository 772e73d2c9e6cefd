"""
Finite-difference verification of tape gradients
"""

from typing import Callable, Dict, Mapping, Optional

import numpy as np

from layerwise.core.config import settings
from layerwise.core.errors import ContractError
from layerwise.engine.tape import Tape, Var, backward
from layerwise.engine.tensor import DTYPE

ScalarFn = Callable[[Dict[str, Var]], Var]


def _evaluate(f: ScalarFn, params: Mapping[str, np.ndarray]) -> float:
    tape = Tape()
    handles = {name: tape.param(name, value) for name, value in params.items()}
    return float(np.asarray(f(handles).value).reshape(-1)[0])


def grad_check(
    f: ScalarFn,
    params: Mapping[str, np.ndarray],
    epsilon: Optional[float] = None,
) -> float:
    """Worst relative error between tape gradients and central differences.

    f receives one Var per parameter (all on a fresh tape) and must return a
    scalar Var. Relative error per coordinate is |a − n| / max(|a|, |n|, floor).
    """
    epsilon = settings.GRAD_CHECK_EPSILON if epsilon is None else epsilon
    if epsilon <= 0:
        raise ContractError(f"grad_check epsilon must be positive, got {epsilon}")
    floor = settings.GRAD_CHECK_FLOOR

    base = {name: np.array(value, dtype=DTYPE) for name, value in params.items()}
    tape = Tape()
    handles = {name: tape.param(name, value) for name, value in base.items()}
    analytic = backward(tape, f(handles))

    worst = 0.0
    for name, value in base.items():
        flat = value.reshape(-1)
        grad = analytic[name].reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + epsilon
            plus = _evaluate(f, base)
            flat[i] = original - epsilon
            minus = _evaluate(f, base)
            flat[i] = original

            numeric = (plus - minus) / (2.0 * epsilon)
            denominator = max(abs(grad[i]), abs(numeric), floor)
            worst = max(worst, abs(grad[i] - numeric) / denominator)
    return worst
