"""
Conditional invertible flow: stacked (permutation, conditional affine coupling)
blocks mapping visual features to latent codes given a condition vector.

The condition is concatenated to the untouched half of every coupling input,
so the semantic signal enters both subnets of every layer.
"""
import math
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from app.core.layers import MLP
from app.core.tensor import (
    Tensor,
    concat_cols,
    exp,
    mul,
    slice_cols,
    sub,
    sum_rows,
    take_cols,
    tanh,
)
from app.errors import ContractError, DimensionError
from app.models import FlowConfig

LOG_2PI = math.log(2.0 * math.pi)


def _check_inputs(op: str, x: Tensor, cond: Tensor, dim: int, cond_dim: int) -> None:
    if x.cols != dim:
        raise DimensionError(f"{op} input", x.shape, (x.rows, dim))
    if cond.cols != cond_dim or cond.rows != x.rows:
        raise DimensionError(f"{op} condition", cond.shape, (x.rows, cond_dim))


class PermutationLayer:
    """Fixed permutation of feature dimensions; volume preserving."""

    def __init__(self, perm: np.ndarray):
        perm = np.asarray(perm, dtype=np.int64)
        if not np.array_equal(np.sort(perm), np.arange(perm.size)):
            raise ContractError("permutation must contain every index exactly once")
        self.perm = perm
        self.inverse_perm = np.argsort(perm)

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator) -> "PermutationLayer":
        return cls(rng.permutation(dim))

    def forward(self, x: Tensor) -> Tensor:
        return take_cols(x, self.perm)

    def inverse(self, y: Tensor) -> Tensor:
        return take_cols(y, self.inverse_perm)


class CouplingLayer:
    """
    Conditional affine coupling.

    y1 = x1
    y2 = x2 * exp(s(x1, c)) + t(x1, c),  s = clamp * tanh(raw / clamp)

    Both subnets end in a zero-initialised layer so a fresh layer is the identity.
    """

    def __init__(
        self,
        dim: int,
        cond_dim: int,
        hidden_width: int,
        clamp: float,
        rng: np.random.Generator,
    ):
        if dim < 2:
            raise ContractError(f"coupling needs at least 2 dimensions, got {dim}")
        if clamp <= 0:
            raise ContractError(f"clamp must be positive, got {clamp}")
        self.dim = dim
        self.cond_dim = cond_dim
        self.split_point = math.ceil(dim / 2)
        self.clamp = float(clamp)
        in_dim = self.split_point + cond_dim
        out_dim = dim - self.split_point
        self.scale_net = MLP([in_dim, hidden_width, hidden_width, out_dim], rng)
        self.shift_net = MLP([in_dim, hidden_width, hidden_width, out_dim], rng)

    def _scale_shift(self, x1: Tensor, cond: Tensor) -> Tuple[Tensor, Tensor]:
        h = concat_cols([x1, cond])
        raw = self.scale_net(h)
        s = mul(tanh(raw * (1.0 / self.clamp)), self.clamp)
        return s, self.shift_net(h)

    def forward(self, x: Tensor, cond: Tensor) -> Tuple[Tensor, Tensor]:
        """Return (y, logdet) with logdet the per-row sum of effective log-scales."""
        _check_inputs("coupling_forward", x, cond, self.dim, self.cond_dim)
        x1 = slice_cols(x, 0, self.split_point)
        x2 = slice_cols(x, self.split_point, self.dim)
        s, t = self._scale_shift(x1, cond)
        y2 = mul(x2, exp(s)) + t
        return concat_cols([x1, y2]), sum_rows(s)

    def inverse(self, y: Tensor, cond: Tensor) -> Tensor:
        _check_inputs("coupling_inverse", y, cond, self.dim, self.cond_dim)
        y1 = slice_cols(y, 0, self.split_point)
        y2 = slice_cols(y, self.split_point, self.dim)
        s, t = self._scale_shift(y1, cond)
        x2 = mul(sub(y2, t), exp(-s))
        return concat_cols([y1, x2])

    def log_scales(self, x: Tensor, cond: Tensor) -> Tensor:
        """Effective (clamped) log-scales for inspection."""
        s, _ = self._scale_shift(slice_cols(x, 0, self.split_point), cond)
        return s

    def parameters(self) -> List[Tensor]:
        return self.scale_net.parameters() + self.shift_net.parameters()

    def zero_condition_weights(self) -> None:
        for net in (self.scale_net, self.shift_net):
            first = net.layers[0].weight
            values = first.values.copy()
            values[self.split_point:, :] = 0.0
            first.values = values

    def clone(self) -> "CouplingLayer":
        other = CouplingLayer.__new__(CouplingLayer)
        other.dim = self.dim
        other.cond_dim = self.cond_dim
        other.split_point = self.split_point
        other.clamp = self.clamp
        other.scale_net = self.scale_net.clone()
        other.shift_net = self.shift_net.clone()
        return other


@dataclass
class FlowOutput:
    """Latent codes and the accumulated log |det dz/dx| per sample."""
    z: Tensor
    logdet: Tensor


class FlowModel:
    """Ordered stack of (PermutationLayer, CouplingLayer) blocks."""

    def __init__(
        self,
        dim: int,
        cond_dim: int,
        blocks: List[Tuple[PermutationLayer, CouplingLayer]],
        hidden_width: int,
        clamp: float,
    ):
        self.dim = dim
        self.cond_dim = cond_dim
        self.blocks = blocks
        self.hidden_width = hidden_width
        self.clamp = clamp

    @classmethod
    def build(
        cls,
        dim: int,
        cond_dim: int,
        config: Optional[FlowConfig] = None,
        rng: Optional[np.random.Generator] = None,
    ) -> "FlowModel":
        config = config or FlowConfig()
        rng = rng if rng is not None else np.random.default_rng(0)
        blocks = [
            (
                PermutationLayer.random(dim, rng),
                CouplingLayer(dim, cond_dim, config.hidden_width, config.clamp, rng),
            )
            for _ in range(config.blocks)
        ]
        return cls(dim, cond_dim, blocks, config.hidden_width, config.clamp)

    def forward(self, x: Tensor, cond: Tensor) -> FlowOutput:
        _check_inputs("flow_forward", x, cond, self.dim, self.cond_dim)
        logdet: Tensor = Tensor.zeros(x.rows, 1)
        for perm, coupling in self.blocks:
            x, block_logdet = coupling.forward(perm.forward(x), cond)
            logdet = logdet + block_logdet
        return FlowOutput(z=x, logdet=logdet)

    def inverse(self, z: Tensor, cond: Tensor) -> Tensor:
        _check_inputs("flow_inverse", z, cond, self.dim, self.cond_dim)
        for perm, coupling in reversed(self.blocks):
            z = perm.inverse(coupling.inverse(z, cond))
        return z

    def log_likelihood(self, x: Tensor, cond: Tensor) -> Tensor:
        """Per-sample log p(x | cond) under a standard normal prior, batch x 1."""
        out = self.forward(x, cond)
        log_prior = sum_rows(out.z.square()) * -0.5 - 0.5 * self.dim * LOG_2PI
        return log_prior + out.logdet

    def parameters(self) -> List[Tensor]:
        return [p for _, coupling in self.blocks for p in coupling.parameters()]

    def is_identity(self) -> bool:
        """True while every coupling output layer is still zero (untrained)."""
        for _, coupling in self.blocks:
            for net in (coupling.scale_net, coupling.shift_net):
                last = net.layers[-1]
                if np.any(last.weight.values) or np.any(last.bias.values):
                    return False
        return True

    def clone(self) -> "FlowModel":
        blocks = [(PermutationLayer(perm.perm.copy()), coupling.clone()) for perm, coupling in self.blocks]
        return FlowModel(self.dim, self.cond_dim, blocks, self.hidden_width, self.clamp)

    def without_conditioning(self) -> "FlowModel":
        """Copy whose subnets ignore the condition slice (degenerate baseline)."""
        other = self.clone()
        for _, coupling in other.blocks:
            coupling.zero_condition_weights()
        return other
