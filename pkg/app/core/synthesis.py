"""
Unseen-class feature synthesis by inverting the trained flow.
"""
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from app.core.flow import FlowModel
from app.core.semantics import AttributeTable, SemanticEmbedder
from app.core.tensor import Tensor, no_grad
from app.errors import ContractError
from app.logging_config import logger
from app.models import SynthesisConfig


@dataclass(frozen=True)
class SyntheticFeatures:
    features: np.ndarray
    labels: np.ndarray
    flow_untrained: bool = False


def synthesize(
    flow: FlowModel,
    embedder: SemanticEmbedder,
    table: AttributeTable,
    cfg: SynthesisConfig,
    class_ids: Optional[Sequence[int]] = None,
) -> SyntheticFeatures:
    """
    For each class draw z ~ N(0, temperature^2 I) and decode
    flow_inverse(z, embed(attr)). Defaults to the unseen classes; each
    class uses its own RNG substream spawned from the seed.
    """
    class_ids = list(table.unseen_ids if class_ids is None else class_ids)
    if not class_ids:
        raise ContractError("synthesis needs at least one unseen class")
    untrained = flow.is_identity()
    if untrained:
        logger.warning("Synthesizing with an untrained (identity) flow")

    streams = np.random.SeedSequence(cfg.seed).spawn(len(class_ids))
    blocks = []
    with no_grad():
        for class_id, stream in zip(class_ids, streams):
            rng = np.random.default_rng(stream)
            z = cfg.latent_temperature * rng.standard_normal((cfg.per_class_count, flow.dim))
            attrs = np.repeat(table.attributes_for([class_id]), cfg.per_class_count, axis=0)
            cond = embedder.embed(Tensor(attrs))
            blocks.append(flow.inverse(Tensor(z), cond).values)
    features = np.vstack(blocks)
    labels = np.repeat(np.array(class_ids, dtype=np.int64), cfg.per_class_count)
    logger.info(f"Synthesized {len(labels)} features for {len(class_ids)} classes")
    return SyntheticFeatures(features=features, labels=labels, flow_untrained=untrained)
