"""Layer specs, random streams and layered models"""

from layerwise.models.layers import Activation, Layer, LayerKind, LayerSpec, Mode, init_layer, layer_forward
from layerwise.models.network import (
    LayeredModel,
    ModelMetadata,
    build_model,
    flat_targets,
    forward,
    forward_with,
    param_key,
    validate_chain,
)
from layerwise.models.rng import Purpose, Rng

__all__ = [
    "Activation",
    "Layer",
    "LayerKind",
    "LayerSpec",
    "LayeredModel",
    "Mode",
    "ModelMetadata",
    "Purpose",
    "Rng",
    "build_model",
    "flat_targets",
    "forward",
    "forward_with",
    "init_layer",
    "layer_forward",
    "param_key",
    "validate_chain",
]
