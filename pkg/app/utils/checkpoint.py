"""
GSMF checkpoint files.

Layout (little-endian):
  header      magic "GSMF", uint32 version, d, cond_dim, blocks, hidden width, float64 clamp
  perms       blocks x d uint32 permutation indices
  flow        float64 parameters in FlowModel.parameters() order
  embedder    uint32 attr_dim, cond_dim, anchors k; float64 gamma; k x attr_dim anchors;
              float64 parameters in SemanticEmbedder.parameters() order
  table       uint32 n_classes; int32 class ids; uint8 seen flags; float64 attributes
"""
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from pydantic import ValidationError

from app.core.flow import FlowModel, PermutationLayer
from app.core.layers import parameters_to_vector, vector_to_parameters
from app.core.semantics import AttributeTable, SemanticEmbedder
from app.core.tensor import Tensor
from app.errors import CheckpointError, ConfigError, ContractError
from app.logging_config import logger
from app.models import FlowConfig

MAGIC = b"GSMF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIId")
_EMBED_HEADER = struct.Struct("<IIId")


@dataclass
class Checkpoint:
    flow: FlowModel
    embedder: SemanticEmbedder
    table: AttributeTable


class _Reader:
    def __init__(self, data: bytes, path: str):
        self.data = data
        self.offset = 0
        self.path = path

    def unpack(self, fmt: struct.Struct) -> tuple:
        if self.offset + fmt.size > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        values = fmt.unpack_from(self.data, self.offset)
        self.offset += fmt.size
        return values

    @property
    def remaining(self) -> int:
        return len(self.data) - self.offset

    def array(self, dtype: str, count: int) -> np.ndarray:
        size = np.dtype(dtype).itemsize * count
        if self.offset + size > len(self.data):
            raise CheckpointError(f"{self.path}: truncated checkpoint")
        out = np.frombuffer(self.data, dtype=dtype, count=count, offset=self.offset)
        self.offset += size
        return out.copy()


def _mlp_size(sizes) -> int:
    return sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))


def _check_flow_header(reader: _Reader, dim: int, cond_dim: int, n_blocks: int, width: int, clamp: float) -> None:
    """Reject header values that cannot describe the bytes that follow."""
    if n_blocks > 0 and dim < 2:
        raise CheckpointError(f"{reader.path}: invalid flow header (d={dim} cannot hold a coupling block)")
    if dim < 1 or width < 1 or not math.isfinite(clamp) or clamp <= 0:
        raise CheckpointError(f"{reader.path}: invalid flow header (d={dim}, width={width}, clamp={clamp})")
    half = math.ceil(dim / 2)
    per_block = 4 * dim + 8 * 2 * _mlp_size([half + cond_dim, width, width, dim - half])
    if n_blocks * per_block > reader.remaining:
        raise CheckpointError(f"{reader.path}: truncated checkpoint")


def _check_embedder_header(reader: _Reader, attr_dim: int, cond_dim: int, k: int, gamma: float) -> None:
    if attr_dim < 1 or cond_dim < 1 or k < 1 or not math.isfinite(gamma) or gamma < 0:
        raise CheckpointError(
            f"{reader.path}: invalid embedder header (attr_dim={attr_dim}, cond_dim={cond_dim}, anchors={k})"
        )
    n_params = 2 * _mlp_size([attr_dim, cond_dim]) + _mlp_size([cond_dim, cond_dim])
    if 8 * (k * attr_dim + n_params) > reader.remaining:
        raise CheckpointError(f"{reader.path}: truncated checkpoint")


def save_checkpoint(path: Union[str, Path], flow: FlowModel, embedder: SemanticEmbedder, table: AttributeTable) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    parts = [
        _HEADER.pack(MAGIC, VERSION, flow.dim, flow.cond_dim, len(flow.blocks), flow.hidden_width, flow.clamp)
    ]
    for perm, _ in flow.blocks:
        parts.append(perm.perm.astype("<u4").tobytes())
    parts.append(parameters_to_vector(flow.parameters()).astype("<f8").tobytes())

    parts.append(_EMBED_HEADER.pack(embedder.attr_dim, embedder.cond_dim, embedder.anchors.rows, embedder.gamma))
    parts.append(embedder.anchors.values.astype("<f8").tobytes())
    parts.append(parameters_to_vector(embedder.parameters()).astype("<f8").tobytes())

    parts.append(struct.pack("<I", len(table.class_ids)))
    parts.append(np.array(table.class_ids, dtype="<i4").tobytes())
    parts.append(table.seen_mask.astype("u1").tobytes())
    parts.append(table.attributes.astype("<f8").tobytes())
    path.write_bytes(b"".join(parts))
    logger.info(f"Saved checkpoint to {path}")


def load_checkpoint(path: Union[str, Path]) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    reader = _Reader(path.read_bytes(), str(path))
    magic, version, dim, cond_dim, n_blocks, width, clamp = reader.unpack(_HEADER)
    if magic != MAGIC:
        raise CheckpointError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")

    _check_flow_header(reader, dim, cond_dim, n_blocks, width, clamp)
    try:
        config = FlowConfig(blocks=n_blocks, hidden_width=width, clamp=clamp)
        flow = FlowModel.build(dim, cond_dim, config, np.random.default_rng(0))
        for i in range(n_blocks):
            perm = reader.array("<u4", dim).astype(np.int64)
            flow.blocks[i] = (PermutationLayer(perm), flow.blocks[i][1])
        n_flow = sum(p.values.size for p in flow.parameters())
        vector_to_parameters(reader.array("<f8", n_flow), flow.parameters())

        attr_dim, emb_cond_dim, k, gamma = reader.unpack(_EMBED_HEADER)
        _check_embedder_header(reader, attr_dim, emb_cond_dim, k, gamma)
        anchors = Tensor(reader.array("<f8", k * attr_dim).reshape(k, attr_dim))
        embedder = SemanticEmbedder(attr_dim, emb_cond_dim, anchors, gamma)
        n_emb = sum(p.values.size for p in embedder.parameters())
        vector_to_parameters(reader.array("<f8", n_emb), embedder.parameters())

        (n_classes,) = reader.unpack(struct.Struct("<I"))
        class_ids = reader.array("<i4", n_classes).astype(np.int64)
        seen = reader.array("u1", n_classes).astype(bool)
        attrs = reader.array("<f8", n_classes * attr_dim).reshape(n_classes, attr_dim)
        table = AttributeTable(class_ids=tuple(class_ids.tolist()), attributes=attrs, seen_mask=seen)
    except ContractError as e:
        raise CheckpointError(f"{path}: inconsistent checkpoint: {e.detail}")
    except ValidationError as e:
        raise CheckpointError(f"{path}: invalid flow header: {e.errors()[0]['msg']}")
    if reader.offset != len(reader.data):
        raise CheckpointError(f"{path}: {len(reader.data) - reader.offset} trailing bytes")
    if emb_cond_dim != cond_dim:
        raise CheckpointError(f"{path}: embedder outputs {emb_cond_dim} dims but flow expects {cond_dim}")
    logger.info(f"Loaded checkpoint {path}: d={dim}, {n_blocks} blocks")
    return Checkpoint(flow=flow, embedder=embedder, table=table)
