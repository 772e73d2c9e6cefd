"""
Layer kinds, initialization and forward rules

Recurrent layers consume [batch×time×dim] and start from a zero state.
LSTM gates are packed in the order input, forget, cell, output.
"""

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, PositiveInt, model_validator

from layerwise.core.errors import ContractError, DimensionError
from layerwise.engine import ops
from layerwise.engine.tape import Var
from layerwise.engine.tensor import DTYPE
from layerwise.models.rng import Purpose, Rng

Value = Union[Var, np.ndarray]

LSTM_FORGET_BIAS = 1.0


class LayerKind(str, Enum):
    EMBEDDING = "embedding"
    DENSE = "dense"
    TANH_RNN = "tanh_rnn"
    LSTM = "lstm"
    DROPOUT = "dropout"
    OUTPUT = "output"


class Activation(str, Enum):
    TANH = "tanh"
    RELU = "relu"
    NONE = "none"


class Mode(str, Enum):
    TRAIN = "train"
    EVAL = "eval"


class LayerSpec(BaseModel):
    """One freezable unit of a layered model"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: LayerKind
    input_dim: PositiveInt
    output_dim: PositiveInt
    activation: Activation = Activation.TANH
    rate: float = Field(default=0.0, ge=0.0, lt=1.0)

    @model_validator(mode="after")
    def check_kind_fields(self) -> "LayerSpec":
        if self.kind == LayerKind.DROPOUT and self.input_dim != self.output_dim:
            raise ValueError(f"dropout keeps its width, got {self.input_dim}→{self.output_dim}")
        if self.kind != LayerKind.DROPOUT and self.rate:
            raise ValueError(f"rate only applies to dropout layers, not {self.kind.value}")
        return self

    def describe(self) -> str:
        return f"{self.kind.value} {self.input_dim}→{self.output_dim}"


def parameter_shapes(spec: LayerSpec) -> Dict[str, Tuple[int, ...]]:
    """Parameter names and shapes, in serialization order"""
    n_in, n_out = spec.input_dim, spec.output_dim
    if spec.kind == LayerKind.EMBEDDING:
        return {"weight": (n_in, n_out)}
    if spec.kind in (LayerKind.DENSE, LayerKind.OUTPUT):
        return {"weight": (n_in, n_out), "bias": (n_out,)}
    if spec.kind == LayerKind.TANH_RNN:
        return {"w_input": (n_in, n_out), "w_hidden": (n_out, n_out), "bias": (n_out,)}
    if spec.kind == LayerKind.LSTM:
        return {"w_input": (n_in, 4 * n_out), "w_hidden": (n_out, 4 * n_out), "bias": (4 * n_out,)}
    return {}


@dataclass
class Layer:
    spec: LayerSpec
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    frozen: bool = False

    def copy(self) -> "Layer":
        return Layer(self.spec, {k: v.copy() for k, v in self.params.items()}, self.frozen)


def _glorot(generator: np.random.Generator, shape: Tuple[int, int]) -> np.ndarray:
    fan_in, fan_out = shape
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return generator.uniform(-bound, bound, size=shape).astype(DTYPE)


def init_layer(spec: LayerSpec, rng: Rng) -> Dict[str, np.ndarray]:
    """Fresh parameters: Glorot-uniform weights, zero biases, LSTM forget bias 1"""
    generator = rng.generator(Purpose.INIT)
    params: Dict[str, np.ndarray] = {}
    for name, shape in parameter_shapes(spec).items():
        if name == "bias":
            params[name] = np.zeros(shape, dtype=DTYPE)
        else:
            params[name] = _glorot(generator, shape)
    if spec.kind == LayerKind.LSTM:
        hidden = spec.output_dim
        params["bias"][hidden:2 * hidden] = LSTM_FORGET_BIAS
    return params


def _check_width(spec: LayerSpec, shape: Tuple[int, ...]) -> None:
    if not shape or shape[-1] != spec.input_dim:
        raise DimensionError(spec.kind.value, shape, (spec.input_dim,))


def _affine(x: Value, weight: Value, bias: Value):
    """xW + b for [batch×dim] or per time step of [batch×time×dim]"""
    shape = x.shape
    if len(shape) == 3:
        flat = ops.reshape(x, (shape[0] * shape[1], shape[2]))
        out = ops.add_bias(ops.matmul(flat, weight), bias)
        return ops.reshape(out, (shape[0], shape[1], out.shape[-1]))
    return ops.add_bias(ops.matmul(x, weight), bias)


def _activate(x: Value, activation: Activation):
    if activation == Activation.TANH:
        return ops.tanh(x)
    if activation == Activation.RELU:
        return ops.relu(x)
    return x


def _input_projection(x: Value, weight: Value):
    batch, steps, dim = x.shape
    flat = ops.matmul(ops.reshape(x, (batch * steps, dim)), weight)
    return ops.reshape(flat, (batch, steps, flat.shape[-1]))


def _tanh_rnn(spec: LayerSpec, x: Value, p: Mapping[str, Value]):
    batch, steps, _ = x.shape
    projected = _input_projection(x, p["w_input"])
    h = np.zeros((batch, spec.output_dim), dtype=DTYPE)
    outputs = []
    for t in range(steps):
        pre = ops.add(ops.time_step(projected, t), ops.matmul(h, p["w_hidden"]))
        h = ops.tanh(ops.add_bias(pre, p["bias"]))
        outputs.append(h)
    return ops.stack_steps(outputs)


def _lstm(spec: LayerSpec, x: Value, p: Mapping[str, Value]):
    batch, steps, _ = x.shape
    hidden = spec.output_dim
    projected = _input_projection(x, p["w_input"])
    h = np.zeros((batch, hidden), dtype=DTYPE)
    c = np.zeros((batch, hidden), dtype=DTYPE)
    outputs = []
    for t in range(steps):
        z = ops.add_bias(ops.add(ops.time_step(projected, t), ops.matmul(h, p["w_hidden"])), p["bias"])
        i = ops.sigmoid(ops.slice_cols(z, 0, hidden))
        f = ops.sigmoid(ops.slice_cols(z, hidden, 2 * hidden))
        g = ops.tanh(ops.slice_cols(z, 2 * hidden, 3 * hidden))
        o = ops.sigmoid(ops.slice_cols(z, 3 * hidden, 4 * hidden))
        c = ops.add(ops.mul(f, c), ops.mul(i, g))
        h = ops.mul(o, ops.tanh(c))
        outputs.append(h)
    return ops.stack_steps(outputs)


def layer_forward(
    layer: Layer,
    x: Value,
    mode: Mode,
    generator: Optional[np.random.Generator] = None,
    params: Optional[Mapping[str, Value]] = None,
):
    """Apply one layer. `params` overrides the stored arrays (e.g. tape Vars)."""
    spec = layer.spec
    p = layer.params if params is None else params

    if spec.kind == LayerKind.EMBEDDING:
        ids = np.asarray(x.value if isinstance(x, Var) else x)
        return ops.embedding_lookup(ids, p["weight"])

    if spec.kind == LayerKind.DROPOUT:
        _check_width(spec, x.shape)
        if mode == Mode.EVAL or spec.rate == 0.0:
            return x
        if generator is None:
            raise ContractError("dropout in train mode needs a generator")
        return ops.mul(x, ops.dropout_mask(tuple(x.shape), spec.rate, generator))

    _check_width(spec, tuple(x.shape))

    if spec.kind == LayerKind.DENSE:
        return _activate(_affine(x, p["weight"], p["bias"]), spec.activation)
    if spec.kind == LayerKind.OUTPUT:
        return _affine(x, p["weight"], p["bias"])

    if len(x.shape) != 3:
        raise DimensionError(spec.kind.value, tuple(x.shape), message=f"{spec.kind.value}: expected [batch×time×dim], got {tuple(x.shape)}")
    if spec.kind == LayerKind.TANH_RNN:
        return _tanh_rnn(spec, x, p)
    return _lstm(spec, x, p)
