"""
Layered models: ordered layers, bottom (index 0, input side) to top (output head)
"""

from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from layerwise.core.errors import ConfigurationError, ContractError, DimensionError
from layerwise.engine import ops
from layerwise.engine.tape import Tape, Var
from layerwise.engine.tensor import same_bits
from layerwise.models.layers import Layer, LayerKind, LayerSpec, Mode, init_layer, layer_forward, parameter_shapes
from layerwise.models.rng import Rng
from layerwise.schemas.common import TaskKind

ModelState = List[Dict[str, np.ndarray]]
ParamValue = Union[Var, np.ndarray]


class ModelMetadata(BaseModel):
    model_config = ConfigDict(extra="forbid")

    task: TaskKind = TaskKind.CHAR_LM
    vocab_size: Optional[int] = None
    seed: int = 0
    trained_epochs: int = 0
    best_dev_error: Optional[float] = None
    metric: Optional[str] = None


def param_key(layer_index: int, name: str) -> str:
    return f"{layer_index}.{name}"


def validate_chain(specs: Sequence[LayerSpec]) -> None:
    """Adjacent dims must agree and the topmost layer must be an output head"""
    if not specs:
        raise ConfigurationError("a model needs at least one layer")
    for k in range(len(specs) - 1):
        below, above = specs[k], specs[k + 1]
        if below.output_dim != above.input_dim:
            raise ConfigurationError(
                f"layer {k} ({below.describe()}) feeds {below.output_dim} values "
                f"but layer {k + 1} ({above.describe()}) expects {above.input_dim}",
                details={"pair": [k, k + 1]},
            )
        if below.kind == LayerKind.OUTPUT:
            raise ConfigurationError(f"output head at layer {k} must be the topmost layer")
        if above.kind == LayerKind.EMBEDDING:
            raise ConfigurationError(f"embedding at layer {k + 1} can only be the bottom layer")
    if specs[-1].kind != LayerKind.OUTPUT:
        raise ConfigurationError(f"topmost layer must be an output head, got {specs[-1].kind.value}")


@dataclass
class LayeredModel:
    layers: List[Layer]
    metadata: ModelMetadata

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def specs(self) -> List[LayerSpec]:
        return [layer.spec for layer in self.layers]

    @property
    def frozen_flags(self) -> List[bool]:
        return [layer.frozen for layer in self.layers]

    @property
    def frozen_top(self) -> int:
        """Size of the frozen block at the top (0 when none)"""
        count = 0
        for layer in reversed(self.layers):
            if not layer.frozen:
                break
            count += 1
        return count

    def copy(self) -> "LayeredModel":
        return LayeredModel([layer.copy() for layer in self.layers], self.metadata.model_copy())

    def state(self) -> ModelState:
        return [{k: v.copy() for k, v in layer.params.items()} for layer in self.layers]

    def load_state(self, state: ModelState) -> None:
        if len(state) != self.n_layers:
            raise ContractError(f"state has {len(state)} layers, model has {self.n_layers}")
        for index, (layer, params) in enumerate(zip(self.layers, state)):
            expected = parameter_shapes(layer.spec)
            if set(params) != set(expected):
                raise ContractError(f"layer {index}: parameters {sorted(params)} do not match {sorted(expected)}")
            for name, shape in expected.items():
                if params[name].shape != shape:
                    raise DimensionError(f"load_state[{index}.{name}]", params[name].shape, shape)
            layer.params = {k: np.array(params[k], dtype=np.float64) for k in expected}

    def parameters(self) -> Iterator[Tuple[str, np.ndarray, bool]]:
        """(key, array, frozen) for every parameter, bottom to top"""
        for index, layer in enumerate(self.layers):
            for name, value in layer.params.items():
                yield param_key(index, name), value, layer.frozen

    def trainable_parameters(self) -> Dict[str, np.ndarray]:
        return {key: value for key, value, frozen in self.parameters() if not frozen}

    def set_parameter(self, key: str, value: np.ndarray) -> None:
        index, name = key.split(".", 1)
        self.layers[int(index)].params[name] = value

    def validate(self) -> None:
        validate_chain(self.specs)
        flags = self.frozen_flags
        # F..FT..T (classifier frozen) or T..TF..F (freeze-bottom control)
        if flags != sorted(flags) and flags != sorted(flags, reverse=True):
            raise ContractError(f"frozen layers must form one contiguous block at the top or bottom, got {flags}")

    def same_parameters(self, other: "LayeredModel", layers: Optional[Sequence[int]] = None) -> bool:
        indices = range(self.n_layers) if layers is None else layers
        for index in indices:
            mine, theirs = self.layers[index].params, other.layers[index].params
            if set(mine) != set(theirs) or not all(same_bits(mine[k], theirs[k]) for k in mine):
                return False
        return True


def build_model(
    specs: Sequence[LayerSpec],
    seed: int,
    task: TaskKind = TaskKind.CHAR_LM,
    vocab_size: Optional[int] = None,
) -> LayeredModel:
    """Pure function of (specs, seed): layer i draws from Rng(seed).child(i)"""
    specs = [s if isinstance(s, LayerSpec) else LayerSpec.model_validate(s) for s in specs]
    validate_chain(specs)
    root = Rng(seed)
    layers = [Layer(spec, init_layer(spec, root.child(index))) for index, spec in enumerate(specs)]
    return LayeredModel(layers, ModelMetadata(task=task, vocab_size=vocab_size, seed=seed))


def forward_with(
    model: LayeredModel,
    inputs: np.ndarray,
    params: Mapping[str, ParamValue],
    mode: Mode = Mode.EVAL,
    generator: Optional[np.random.Generator] = None,
):
    """Forward pass with explicit parameter values keyed by `param_key`.

    Returns logits as [N×classes]: one row per sample for sequence
    classification (the head reads the last time step), one row per token
    for language modelling.
    """
    x = inputs
    for index, layer in enumerate(model.layers):
        layer_params = {name: params[param_key(index, name)] for name in layer.params}
        if layer.spec.kind == LayerKind.OUTPUT and model.metadata.task == TaskKind.SEQ_CLASSIFY and len(x.shape) == 3:
            x = ops.time_step(x, x.shape[1] - 1)
        x = layer_forward(layer, x, mode, generator, layer_params)
    if len(x.shape) == 3:
        x = ops.reshape(x, (x.shape[0] * x.shape[1], x.shape[2]))
    return x


def forward(
    model: LayeredModel,
    inputs: np.ndarray,
    mode: Mode = Mode.EVAL,
    generator: Optional[np.random.Generator] = None,
    tape: Optional[Tape] = None,
):
    """Forward pass; with a tape, unfrozen parameters become differentiable leaves"""
    params: Dict[str, ParamValue] = {}
    for key, value, frozen in model.parameters():
        params[key] = tape.param(key, value) if tape is not None and not frozen else value
    return forward_with(model, inputs, params, mode, generator)


def flat_targets(targets: np.ndarray) -> np.ndarray:
    """Targets aligned with the rows `forward` returns"""
    return np.asarray(targets).reshape(-1)
