"""
Class attributes and the relative positioning embedder.

Each attribute vector is described by its distances to a few anchors,
normalised to unit sum. The embedder maps attributes into the condition
space and is penalised when the same profile, measured among embedded
points and embedded anchors, drifts from the raw one.
"""
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from sklearn.cluster import KMeans

from app.core.layers import Linear
from app.core.tensor import Tensor, concat_cols, mul, sqrt, sub, sum_rows, tanh, tensor_sum
from app.errors import ContractError, DimensionError
from app.logging_config import logger
from app.models import SemanticConfig

PROFILE_EPS = 1e-12


@dataclass(frozen=True)
class AttributeTable:
    """Per-class attribute vectors with the seen/unseen split."""
    class_ids: Tuple[int, ...]
    attributes: np.ndarray
    seen_mask: np.ndarray

    def __post_init__(self):
        attrs = np.array(self.attributes, dtype=np.float64)
        mask = np.array(self.seen_mask, dtype=bool)
        ids = tuple(int(c) for c in self.class_ids)
        if attrs.ndim != 2 or attrs.shape[0] != len(ids) or mask.shape != (len(ids),):
            raise ContractError(
                f"attribute table shape mismatch: {len(ids)} ids, attributes {attrs.shape}, mask {mask.shape}"
            )
        if len(set(ids)) != len(ids):
            raise ContractError("attribute table has duplicate class ids")
        if not np.all(np.isfinite(attrs)):
            raise ContractError("attribute table has non-finite entries")
        attrs.flags.writeable = False
        mask.flags.writeable = False
        object.__setattr__(self, "class_ids", ids)
        object.__setattr__(self, "attributes", attrs)
        object.__setattr__(self, "seen_mask", mask)

    @property
    def attr_dim(self) -> int:
        return self.attributes.shape[1]

    @property
    def seen_ids(self) -> List[int]:
        return [c for c, s in zip(self.class_ids, self.seen_mask) if s]

    @property
    def unseen_ids(self) -> List[int]:
        return [c for c, s in zip(self.class_ids, self.seen_mask) if not s]

    def index_of(self, class_id: int) -> int:
        return self.class_ids.index(int(class_id))

    def attributes_for(self, class_ids: Sequence[int]) -> np.ndarray:
        rows = [self.index_of(c) for c in class_ids]
        return self.attributes[rows]

    def require_gzsl(self) -> None:
        if not self.seen_ids or not self.unseen_ids:
            raise ContractError("generalized zero-shot mode needs at least one seen and one unseen class")


def compute_anchors(table: AttributeTable, k: int, seed: int) -> Tensor:
    """
    Anchor 0 is the seen-class centroid; anchors 1..k-1 are seeded k-means
    centroids of the seen-class attributes.
    """
    seen = table.attributes_for(table.seen_ids)
    if k <= 0:
        raise ContractError("anchor count must be at least 1")
    if len(seen) == 0:
        raise ContractError("anchors need at least one seen class")
    if k > len(seen) + 1:
        raise ContractError(f"anchor count {k} exceeds seen classes + 1 ({len(seen) + 1})")
    anchors = [seen.mean(axis=0, keepdims=True)]
    if k > 1:
        km = KMeans(n_clusters=k - 1, n_init=10, random_state=seed).fit(seen)
        anchors.append(km.cluster_centers_)
    return Tensor(np.vstack(anchors))


def anchor_profile(points: Tensor, anchors: Sequence[Tensor]) -> Tensor:
    """Distances of each row to each anchor, normalised to unit row sum (m x k)."""
    columns = [
        sqrt(sum_rows(sub(points, anchor).square()) + PROFILE_EPS)
        for anchor in anchors
    ]
    distances = concat_cols(columns)
    return distances / sum_rows(distances)


class SemanticEmbedder:
    """
    Maps raw attributes to the flow's condition space:
    e(a) = a @ A + b + tanh(a @ W1 + b1) @ W2 + b2.

    A starts as the (rectangular) identity and W2 at zero, so with
    cond_dim == attr_dim the initial embedding is exactly the identity.
    """

    def __init__(
        self,
        attr_dim: int,
        cond_dim: int,
        anchors: Tensor,
        gamma: float = 1.0,
        rng: Optional[np.random.Generator] = None,
    ):
        if anchors.rows < 1:
            raise ContractError("embedder needs at least one anchor")
        if anchors.cols != attr_dim:
            raise DimensionError("embedder anchors", anchors.shape, (anchors.rows, attr_dim))
        if gamma < 0:
            raise ContractError(f"gamma must be non-negative, got {gamma}")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.attr_dim = attr_dim
        self.cond_dim = cond_dim
        self.anchors = anchors.detach()
        self.gamma = float(gamma)
        self.projection = Linear(attr_dim, cond_dim, rng, zero=True)
        self.projection.weight.values = np.eye(attr_dim, cond_dim)
        self.hidden = Linear(attr_dim, cond_dim, rng)
        self.output = Linear(cond_dim, cond_dim, rng, zero=True)

    @classmethod
    def build(
        cls,
        table: AttributeTable,
        config: Optional[SemanticConfig] = None,
        seed: int = 0,
        rng: Optional[np.random.Generator] = None,
    ) -> "SemanticEmbedder":
        config = config or SemanticConfig()
        k = config.anchors
        limit = len(table.seen_ids) + 1
        if k > limit:
            logger.warning(f"Anchor count {k} exceeds seen classes + 1, using {limit}")
            k = limit
        anchors = compute_anchors(table, k, seed)
        cond_dim = config.cond_dim or table.attr_dim
        return cls(table.attr_dim, cond_dim, anchors, config.gamma, rng)

    def embed(self, attrs: Tensor) -> Tensor:
        if attrs.cols != self.attr_dim:
            raise DimensionError("embed", attrs.shape, (attrs.rows, self.attr_dim))
        return self.projection(attrs) + self.output(tanh(self.hidden(attrs)))

    def embedded_anchors(self) -> List[Tensor]:
        return [self.embed(Tensor(self.anchors.values[j:j + 1])) for j in range(self.anchors.rows)]

    def geometry_loss(self, attrs: Tensor) -> Tensor:
        """
        Mean squared gap between raw and embedded anchor-relative profiles.
        Rows whose raw anchor distances are all zero are skipped.
        """
        if attrs.rows < 2:
            raise ContractError(f"geometry loss needs at least 2 classes, got {attrs.rows}")
        raw = attrs.detach()
        raw_anchors = [Tensor(self.anchors.values[j:j + 1]) for j in range(self.anchors.rows)]
        raw_sq = np.stack(
            [((raw.values - a.values) ** 2).sum(axis=1) for a in raw_anchors], axis=1
        )
        valid = raw_sq.sum(axis=1) > 0
        if not np.any(valid):
            raise ContractError("geometry loss: every row coincides with all anchors")
        raw_profile = anchor_profile(raw, raw_anchors)
        embedded_profile = anchor_profile(self.embed(attrs), self.embedded_anchors())
        gap = sub(embedded_profile, raw_profile).square()
        mask = Tensor(valid.astype(np.float64).reshape(-1, 1))
        return mul(tensor_sum(mul(gap, mask)), 1.0 / (int(valid.sum()) * self.anchors.rows))

    def parameters(self) -> List[Tensor]:
        return self.projection.parameters() + self.hidden.parameters() + self.output.parameters()
