"""
First-order optimizers over named parameter arrays
"""

import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from layerwise.core.errors import ContractError
from layerwise.engine.tape import GradientMap
from layerwise.schemas.training import OptimizerConfig, OptimizerName

Params = Dict[str, np.ndarray]


@dataclass
class OptimizerState:
    """Per-parameter slots; a fresh state means no momentum history"""

    step: int = 0
    slots: Dict[str, Dict[str, np.ndarray]] = field(default_factory=dict)


def _check(params: Mapping[str, np.ndarray], grads: GradientMap) -> None:
    if set(params) != set(grads):
        missing = sorted(set(params) - set(grads))
        extra = sorted(set(grads) - set(params))
        raise ContractError(f"gradients do not match parameters (missing {missing}, unexpected {extra})")
    for name, value in params.items():
        if grads[name].shape != value.shape:
            raise ContractError(
                f"gradient for {name!r} has shape {grads[name].shape}, parameter has {value.shape}",
                details={"parameter": name},
            )


def optimizer_step(
    params: Mapping[str, np.ndarray],
    grads: GradientMap,
    state: Optional[OptimizerState],
    hyper: OptimizerConfig,
) -> Tuple[Params, OptimizerState]:
    """One update. Inputs are left untouched; new arrays are returned.

    sgd:  v ← g + momentum·v,  θ ← θ − lr·v
    adam: bias-corrected first and second moments
    """
    _check(params, grads)
    state = state or OptimizerState()
    step = state.step + 1
    slots = {name: dict(slot) for name, slot in state.slots.items()}
    updated: Params = {}

    for name, theta in params.items():
        g = grads[name]
        slot = slots.setdefault(name, {})
        if hyper.name == OptimizerName.SGD:
            velocity = g + hyper.momentum * slot["velocity"] if "velocity" in slot else g.copy()
            slot["velocity"] = velocity
            updated[name] = theta - hyper.lr * velocity
        else:
            m = slot.get("m", np.zeros_like(theta))
            v = slot.get("v", np.zeros_like(theta))
            m = hyper.beta1 * m + (1.0 - hyper.beta1) * g
            v = hyper.beta2 * v + (1.0 - hyper.beta2) * g * g
            slot["m"], slot["v"] = m, v
            m_hat = m / (1.0 - hyper.beta1 ** step)
            v_hat = v / (1.0 - hyper.beta2 ** step)
            updated[name] = theta - hyper.lr * m_hat / (np.sqrt(v_hat) + hyper.eps)

    return updated, OptimizerState(step=step, slots=slots)


def clip_global_norm(grads: GradientMap, max_norm: float) -> GradientMap:
    """Rescale all gradients together so their joint L2 norm is at most max_norm"""
    total = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads
    factor = max_norm / total
    return {name: g * factor for name, g in grads.items()}
