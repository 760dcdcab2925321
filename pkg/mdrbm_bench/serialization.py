"""Parameter container shared by every model.

Layout::

    b"MDRBMPAR" | u32 LE version | u32 LE header length | JSON header | blocks as '<f8'

The JSON header carries the model kind, free-form metadata and the name and shape of every
block in file order.
"""

import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError

from .baselines import ElmDrbmModel, MlpParams
from .core_math import FloatArray, ParamSet
from .drbm import DrbmParams
from .errors import DataFormatError, UsageError
from .gbrbm import GbrbmParams
from .mdrbm import MdrbmModel
from .pelm import PelmParams

logger = logging.getLogger(__name__)

MAGIC = b"MDRBMPAR"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<8sII")

Model = Union[DrbmParams, PelmParams, GbrbmParams, MdrbmModel, ElmDrbmModel, MlpParams]


class BlockSpec(BaseModel):
    name: str
    shape: List[int] = Field(description="Array shape; the payload holds prod(shape) float64 values")


class ContainerHeader(BaseModel):
    """Structured-text part of a container file."""

    kind: str = Field(description="Model kind tag")
    meta: Dict[str, Any] = Field(default_factory=dict)
    blocks: List[BlockSpec] = Field(default_factory=list)


@dataclass
class ParamContainer:
    """Named float64 blocks plus a kind tag and metadata."""

    kind: str
    blocks: Dict[str, FloatArray]
    meta: Dict[str, Any] = field(default_factory=dict)


def encode_container(container: ParamContainer) -> bytes:
    header = ContainerHeader(
        kind=container.kind,
        meta=container.meta,
        blocks=[BlockSpec(name=name, shape=list(np.shape(v))) for name, v in container.blocks.items()],
    )
    header_bytes = json.dumps(header.model_dump(mode="json"), sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)), header_bytes]
    for value in container.blocks.values():
        parts.append(np.ascontiguousarray(value, dtype="<f8").tobytes())
    return b"".join(parts)


def decode_container(raw: bytes, source: str = "<bytes>") -> ParamContainer:
    if len(raw) < _PREFIX.size:
        raise DataFormatError(f"{source}: truncated container header")
    magic, version, header_length = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise DataFormatError(f"{source}: bad magic {magic!r}, not a parameter container")
    if version != FORMAT_VERSION:
        raise DataFormatError(f"{source}: unsupported container version {version}")
    start = _PREFIX.size
    try:
        header = ContainerHeader.model_validate_json(raw[start : start + header_length])
    except ValidationError as e:
        raise DataFormatError(f"{source}: invalid container header: {e}") from e

    offset = start + header_length
    blocks: Dict[str, FloatArray] = {}
    for spec in header.blocks:
        count = int(np.prod(spec.shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(raw):
            raise DataFormatError(f"{source}: block '{spec.name}' runs past the end of the file")
        blocks[spec.name] = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).astype(np.float64).reshape(
            spec.shape
        )
        offset = end
    if offset != len(raw):
        raise DataFormatError(f"{source}: {len(raw) - offset} trailing bytes after the last block")
    return ParamContainer(kind=header.kind, blocks=blocks, meta=header.meta)


def save_container(path: Union[str, Path], container: ParamContainer) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_container(container))


def load_container(path: Union[str, Path]) -> ParamContainer:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataFormatError(f"cannot read {path}: {e}") from e
    return decode_container(raw, source=str(path))


def _prefixed(prefix: str, params: ParamSet) -> Dict[str, FloatArray]:
    return {f"{prefix}.{name}": value for name, value in params.items()}


def _unprefixed(prefix: str, blocks: Dict[str, FloatArray]) -> ParamSet:
    head = f"{prefix}."
    return {name[len(head) :]: value for name, value in blocks.items() if name.startswith(head)}


def _pelm_blocks(theta0: PelmParams) -> Tuple[Dict[str, FloatArray], Dict[str, Any]]:
    blocks = _prefixed("pelm", {"b0": theta0.b0, "w0": theta0.w0})
    return blocks, {"provenance": theta0.provenance, "source": theta0.source}


def to_container(model: Model, meta: Optional[Dict[str, Any]] = None) -> ParamContainer:
    """Tag a model with its kind and flatten it into named blocks."""
    extra: Dict[str, Any] = {}
    if isinstance(model, DrbmParams):
        kind, blocks = "drbm", _prefixed("drbm", model.as_dict())
    elif isinstance(model, PelmParams):
        kind, (blocks, extra) = "pelm", _pelm_blocks(model)
    elif isinstance(model, GbrbmParams):
        kind, blocks = "gbrbm", _prefixed("gbrbm", model.as_dict())
    elif isinstance(model, (MdrbmModel, ElmDrbmModel)):
        kind = "mdrbm" if isinstance(model, MdrbmModel) else "drbm+elm"
        blocks, extra = _pelm_blocks(model.pelm)
        blocks.update(_prefixed("drbm", model.drbm.as_dict()))
    elif isinstance(model, MlpParams):
        kind, blocks = "4nn", _prefixed("4nn", model.as_dict())
    else:
        raise UsageError(f"cannot serialize object of type {type(model).__name__}")
    return ParamContainer(kind=kind, blocks=blocks, meta={**(meta or {}), **extra})


def from_container(container: ParamContainer) -> Model:
    """Rebuild a model from its blocks, validating the layer widths."""
    blocks = container.blocks
    try:
        if container.kind in ("pelm", "mdrbm", "drbm+elm"):
            pelm_blocks = _unprefixed("pelm", blocks)
            theta0 = PelmParams(
                b0=pelm_blocks["b0"],
                w0=pelm_blocks["w0"],
                provenance=container.meta.get("provenance", "manual"),
                source=str(container.meta.get("source", "")),
            )
            if container.kind == "pelm":
                return theta0
            params = DrbmParams.from_dict(_unprefixed("drbm", blocks))
            if container.kind == "mdrbm":
                return MdrbmModel(pelm=theta0, drbm=params)
            return ElmDrbmModel(pelm=theta0, drbm=params)
        if container.kind == "drbm":
            return DrbmParams.from_dict(_unprefixed("drbm", blocks))
        if container.kind == "gbrbm":
            return GbrbmParams.from_dict(_unprefixed("gbrbm", blocks))
        if container.kind == "4nn":
            return MlpParams.from_dict(_unprefixed("4nn", blocks))
    except KeyError as e:
        raise DataFormatError(f"container of kind '{container.kind}' is missing block {e}") from e
    except UsageError as e:
        raise DataFormatError(f"container of kind '{container.kind}' is inconsistent: {e}") from e
    raise DataFormatError(f"unknown model kind '{container.kind}'")


def save_model(path: Union[str, Path], model: Model, meta: Optional[Dict[str, Any]] = None) -> None:
    save_container(path, to_container(model, meta))
    logger.info(f"Saved {type(model).__name__} to {path}")


def load_model(path: Union[str, Path]) -> Model:
    return from_container(load_container(path))
