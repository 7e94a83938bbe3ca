import struct

import numpy as np
import pytest

from app.core.flow import FlowModel
from app.core.layers import parameters_to_vector, randomize_parameters
from app.core.semantics import SemanticEmbedder
from app.core.tensor import Tensor, no_grad
from app.errors import CheckpointError, ConfigError
from app.models import FlowConfig, SemanticConfig
from app.utils.checkpoint import load_checkpoint, save_checkpoint


@pytest.fixture
def trained_models(small_benchmark, rng):
    dataset, _ = small_benchmark
    embedder = SemanticEmbedder.build(dataset.table, SemanticConfig(cond_dim=4, anchors=3), rng=rng)
    flow = FlowModel.build(dataset.dim, embedder.cond_dim, FlowConfig(blocks=3, hidden_width=8, clamp=1.5), rng)
    randomize_parameters(flow.parameters() + embedder.parameters(), rng, 0.2)
    return dataset, flow, embedder


def test_checkpoint_roundtrip_restores_models(tmp_path, trained_models, rng):
    dataset, flow, embedder = trained_models
    path = tmp_path / "model" / "checkpoint.gsmf"
    save_checkpoint(path, flow, embedder, dataset.table)
    restored = load_checkpoint(path)

    assert restored.table.class_ids == dataset.table.class_ids
    assert np.array_equal(restored.table.seen_mask, dataset.table.seen_mask)
    assert restored.flow.clamp == 1.5
    assert np.array_equal(parameters_to_vector(restored.flow.parameters()), parameters_to_vector(flow.parameters()))
    assert np.array_equal(restored.embedder.anchors.values, embedder.anchors.values)

    attrs = Tensor(dataset.table.attributes)
    x = Tensor(rng.normal(size=(len(attrs.values), dataset.dim)))
    with no_grad():
        expected = flow.forward(x, embedder.embed(attrs)).z.values
        actual = restored.flow.forward(x, restored.embedder.embed(attrs)).z.values
    assert np.array_equal(actual, expected)


def test_missing_checkpoint_is_config_error(tmp_path):
    with pytest.raises(ConfigError, match="checkpoint not found"):
        load_checkpoint(tmp_path / "absent.gsmf")


def test_corrupt_checkpoints_are_rejected(tmp_path, trained_models):
    dataset, flow, embedder = trained_models
    path = tmp_path / "checkpoint.gsmf"
    save_checkpoint(path, flow, embedder, dataset.table)
    data = path.read_bytes()

    (tmp_path / "magic.gsmf").write_bytes(b"NOPE" + data[4:])
    (tmp_path / "short.gsmf").write_bytes(data[:-10])
    (tmp_path / "long.gsmf").write_bytes(data + b"\x00")
    with pytest.raises(CheckpointError, match="bad magic"):
        load_checkpoint(tmp_path / "magic.gsmf")
    with pytest.raises(CheckpointError, match="truncated"):
        load_checkpoint(tmp_path / "short.gsmf")
    with pytest.raises(CheckpointError, match="trailing"):
        load_checkpoint(tmp_path / "long.gsmf")


def test_checkpoint_keeps_geometry_weight(tmp_path, trained_models):
    dataset, flow, embedder = trained_models
    embedder.gamma = 0.25
    path = tmp_path / "checkpoint.gsmf"
    save_checkpoint(path, flow, embedder, dataset.table)
    assert load_checkpoint(path).embedder.gamma == 0.25


def _patched(data: bytes, offset: int, fmt: str, value) -> bytes:
    out = bytearray(data)
    struct.pack_into(fmt, out, offset, value)
    return bytes(out)


@pytest.mark.parametrize(
    "offset, fmt, value, message",
    [
        (8, "<I", 0, "invalid flow header"),
        (20, "<I", 2 ** 31, "truncated"),
        (16, "<I", 2 ** 30, "truncated"),
        (24, "<d", 0.0, "invalid flow header"),
        (24, "<d", float("nan"), "invalid flow header"),
    ],
)
def test_corrupt_flow_header_is_checkpoint_error(tmp_path, trained_models, offset, fmt, value, message):
    dataset, flow, embedder = trained_models
    path = tmp_path / "checkpoint.gsmf"
    save_checkpoint(path, flow, embedder, dataset.table)
    path.write_bytes(_patched(path.read_bytes(), offset, fmt, value))
    with pytest.raises(CheckpointError, match=message):
        load_checkpoint(path)


@pytest.mark.parametrize(
    "field, fmt, value, message",
    [
        (0, "<I", 2 ** 31, "truncated"),
        (2, "<I", 0, "invalid embedder header"),
        (3, "<d", -1.0, "invalid embedder header"),
    ],
)
def test_corrupt_embedder_header_is_checkpoint_error(tmp_path, trained_models, field, fmt, value, message):
    dataset, flow, embedder = trained_models
    path = tmp_path / "checkpoint.gsmf"
    save_checkpoint(path, flow, embedder, dataset.table)
    start = 32 + 4 * flow.dim * len(flow.blocks) + 8 * parameters_to_vector(flow.parameters()).size
    path.write_bytes(_patched(path.read_bytes(), start + 4 * field, fmt, value))
    with pytest.raises(CheckpointError, match=message):
        load_checkpoint(path)
