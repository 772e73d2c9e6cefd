"""
Binary checkpoints

Layout (all integers unsigned 32-bit little-endian):

    b"TDTC" | version | metadata length | metadata (UTF-8 JSON)
    then for every layer, for every parameter in manifest order:
    ndim | dims... | little-endian float64 data

The metadata JSON holds the layer specs, frozen flags, model metadata and a
manifest of (key, shape) so a reader knows the payload size up front.
"""

import json
import os
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from layerwise.core.errors import (
    CheckpointFormatError,
    CheckpointTruncatedError,
    CheckpointVersionError,
)
from layerwise.core.logging import get_struct_logger
from layerwise.models.layers import Layer, LayerSpec, parameter_shapes
from layerwise.models.network import LayeredModel, ModelMetadata, param_key, validate_chain

logger = get_struct_logger(__name__)

MAGIC = b"TDTC"
VERSION = 1
U32 = np.dtype("<u4")
F64 = np.dtype("<f8")

PathLike = Union[str, Path]


def _u32(value: int) -> bytes:
    return np.array([value], dtype=U32).tobytes()


def save_checkpoint(model: LayeredModel, metadata: Optional[ModelMetadata], path: PathLike) -> None:
    """Write model parameters bit-exactly; `metadata` defaults to the model's own"""
    metadata = metadata or model.metadata
    manifest = [[key, list(value.shape)] for key, value, _ in model.parameters()]
    header = {
        "specs": [spec.model_dump(mode="json") for spec in model.specs],
        "frozen": model.frozen_flags,
        "metadata": metadata.model_dump(mode="json"),
        "manifest": manifest,
    }
    meta_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    chunks = [MAGIC, _u32(VERSION), _u32(len(meta_bytes)), meta_bytes]
    for _, value, _ in model.parameters():
        chunks.append(_u32(value.ndim))
        chunks.append(np.asarray(value.shape, dtype=U32).tobytes())
        chunks.append(np.ascontiguousarray(value, dtype=F64).tobytes())

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)
    logger.debug("checkpoint_saved", path=str(path), parameters=len(manifest))


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.path = path
        self.offset = 0

    def take(self, size: int, expected_total: int) -> bytes:
        if self.offset + size > len(self.data):
            raise CheckpointTruncatedError(self.path, expected_total, len(self.data))
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def u32(self, expected_total: int) -> int:
        return int(np.frombuffer(self.take(4, expected_total), dtype=U32)[0])


def load_checkpoint(path: PathLike) -> Tuple[LayeredModel, ModelMetadata]:
    """Read a checkpoint; no model is returned unless the whole file parses"""
    path = Path(path)
    data = path.read_bytes()
    name = str(path)

    if len(data) < 4 or data[:4] != MAGIC:
        raise CheckpointFormatError(f"{name}: not a checkpoint (magic {data[:4]!r})", details={"path": name})
    reader = _Reader(data, name)
    reader.take(4, 12)
    version = reader.u32(12)
    if version != VERSION:
        raise CheckpointVersionError(
            f"{name}: unsupported checkpoint version {version} (supported: {VERSION})",
            details={"path": name, "version": version},
        )
    meta_length = reader.u32(12)
    header_total = 12 + meta_length
    try:
        header = json.loads(reader.take(meta_length, header_total).decode("utf-8"))
        specs = [LayerSpec.model_validate(s) for s in header["specs"]]
        metadata = ModelMetadata.model_validate(header["metadata"])
        frozen = [bool(f) for f in header["frozen"]]
        manifest = [(str(key), tuple(int(d) for d in shape)) for key, shape in header["manifest"]]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError, ValidationError) as exc:
        raise CheckpointFormatError(f"{name}: unreadable metadata ({exc})", details={"path": name}) from exc

    validate_chain(specs)
    if len(frozen) != len(specs):
        raise CheckpointFormatError(f"{name}: {len(frozen)} frozen flags for {len(specs)} layers")
    expected_manifest = [
        (param_key(index, pname), shape)
        for index, spec in enumerate(specs)
        for pname, shape in parameter_shapes(spec).items()
    ]
    if manifest != expected_manifest:
        raise CheckpointFormatError(f"{name}: parameter manifest does not match the layer specs")

    expected_total = header_total + sum(4 + 4 * len(shape) + 8 * int(np.prod(shape)) for _, shape in manifest)
    if len(data) < expected_total:
        raise CheckpointTruncatedError(name, expected_total, len(data))
    if len(data) > expected_total:
        raise CheckpointFormatError(f"{name}: {len(data) - expected_total} trailing bytes after payload")

    params = [dict() for _ in specs]
    for key, shape in manifest:
        ndim = reader.u32(expected_total)
        dims = tuple(int(d) for d in np.frombuffer(reader.take(4 * ndim, expected_total), dtype=U32))
        if dims != shape:
            raise CheckpointFormatError(f"{name}: {key} stored with shape {dims}, manifest says {shape}")
        count = int(np.prod(shape))
        values = np.frombuffer(reader.take(8 * count, expected_total), dtype=F64).astype(np.float64).reshape(shape)
        index, pname = key.split(".", 1)
        params[int(index)][pname] = values

    model = LayeredModel([Layer(spec, p, f) for spec, p, f in zip(specs, params, frozen)], metadata.model_copy())
    logger.debug("checkpoint_loaded", path=name, layers=len(specs))
    return model, metadata
