"""
Joint maximum-likelihood training of the flow and the semantic embedder.
"""
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from app.core.flow import FlowModel
from app.core.perturbation import perturb_batch
from app.core.semantics import SemanticEmbedder
from app.core.tensor import Tensor, backward, mul, tensor_mean, zero_grad
from app.errors import ContractError, TrainingDivergedError
from app.logging_config import logger
from app.models import RunConfig, TrainConfig, TrainSummary
from app.utils.data_io import Dataset


@dataclass
class TrainState:
    """Optimizer step counter, Adam moments and per-epoch loss history."""
    step: int = 0
    first_moments: List[np.ndarray] = field(default_factory=list)
    second_moments: List[np.ndarray] = field(default_factory=list)
    history: List[TrainSummary] = field(default_factory=list)


@dataclass
class LossTerms:
    total: Tensor
    nll: float
    geom: float


@dataclass
class TrainResult:
    state: TrainState
    flow: FlowModel
    embedder: SemanticEmbedder


def adam_step(state: TrainState, params: Sequence[Tensor], grads: Sequence[Optional[np.ndarray]], cfg: TrainConfig) -> None:
    """Bias-corrected Adam update of ``params`` in declared order."""
    if not state.first_moments:
        state.first_moments = [np.zeros_like(p.values) for p in params]
        state.second_moments = [np.zeros_like(p.values) for p in params]
    if len(state.first_moments) != len(params):
        raise ContractError("optimizer state does not match the parameter list")
    state.step += 1
    bc1 = 1.0 - cfg.adam_beta1 ** state.step
    bc2 = 1.0 - cfg.adam_beta2 ** state.step
    for i, (p, g) in enumerate(zip(params, grads)):
        if g is None:
            g = np.zeros_like(p.values)
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter shape {p.shape}")
        m = cfg.adam_beta1 * state.first_moments[i] + (1.0 - cfg.adam_beta1) * g
        v = cfg.adam_beta2 * state.second_moments[i] + (1.0 - cfg.adam_beta2) * (g * g)
        state.first_moments[i] = m
        state.second_moments[i] = v
        p.values = p.values - cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)


def clip_gradients(grads: List[Optional[np.ndarray]], max_norm: float) -> float:
    """Scale gradients in place of the list so their global norm is at most max_norm."""
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads if g is not None))
    if norm > max_norm:
        scale = max_norm / norm
        for i, g in enumerate(grads):
            if g is not None:
                grads[i] = g * scale
    return norm


def total_loss(
    flow: FlowModel,
    embedder: SemanticEmbedder,
    batch_x: Tensor,
    batch_attrs: Tensor,
    cfg: RunConfig,
    rng: np.random.Generator,
) -> LossTerms:
    """
    -mean log p(perturb(x) | embed(a)) + gamma * geometry_loss(unique batch classes)
    (+ prototype_weight * zero-latent decode error when enabled).
    """
    if batch_x.rows != batch_attrs.rows:
        raise ContractError(f"batch has {batch_x.rows} feature rows but {batch_attrs.rows} attribute rows")
    cond = embedder.embed(batch_attrs)
    x = perturb_batch(cfg.perturb, batch_x, rng)
    nll = -tensor_mean(flow.log_likelihood(x, cond))
    total = nll
    geom_value = 0.0
    gamma = cfg.gamma
    classes = np.unique(batch_attrs.values, axis=0)
    if gamma > 0 and len(classes) >= 2:
        geom = embedder.geometry_loss(Tensor(classes))
        geom_value = geom.item()
        total = total + mul(geom, gamma)
    if cfg.train.prototype_weight > 0:
        decoded = flow.inverse(Tensor.zeros(batch_x.rows, flow.dim), cond)
        proto = tensor_mean((decoded - batch_x).square().sum_rows())
        total = total + mul(proto, cfg.train.prototype_weight)
    return LossTerms(total=total, nll=nll.item(), geom=geom_value)


class Trainer:
    """Owns the optimizer state for one training run."""

    def __init__(self, flow: FlowModel, embedder: SemanticEmbedder, cfg: RunConfig):
        self.flow = flow
        self.embedder = embedder
        self.cfg = cfg
        # The checkpoint stores the weight the loss actually used.
        embedder.gamma = cfg.gamma
        self.params = flow.parameters() + embedder.parameters()
        self.state = TrainState()

    def _training_view(self, dataset: Dataset):
        # Only train_seen rows are ever indexed; unseen rows stay untouched.
        index = np.asarray(dataset.split.train_seen, dtype=np.int64)
        features = dataset.features[index]
        attrs = dataset.table.attributes_for(dataset.labels[index])
        return features, attrs

    def _write_log(self, path: Optional[str]) -> None:
        if not path:
            return
        log_path = Path(path)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        lines = ["epoch,nll,geom_loss,total"]
        lines += [f"{h.epoch},{h.nll!r},{h.geom_loss!r},{h.total!r}" for h in self.state.history]
        log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")

    def train(self, dataset: Dataset) -> TrainResult:
        tcfg = self.cfg.train
        if not dataset.table.seen_ids:
            raise ContractError("training needs at least one seen class")
        features, attrs = self._training_view(dataset)
        n = len(features)
        if n < tcfg.batch_size:
            raise ContractError(f"training needs at least batch_size={tcfg.batch_size} seen samples, got {n}")

        shuffle_rng = np.random.default_rng(tcfg.seed)
        noise_rng = np.random.default_rng(self.cfg.perturb.seed)
        logger.info(f"Training on {n} seen samples for {tcfg.epochs} epochs, batch {tcfg.batch_size}")

        for epoch in range(1, tcfg.epochs + 1):
            order = shuffle_rng.permutation(n)
            sums = np.zeros(3)
            batches = 0
            for start in range(0, n, tcfg.batch_size):
                rows = order[start:start + tcfg.batch_size]
                terms = self._step(Tensor(features[rows]), Tensor(attrs[rows]), noise_rng, epoch)
                sums += (terms.nll, terms.geom, terms.total.item())
                batches += 1
            nll, geom, total = (sums / batches).tolist()
            self.state.history.append(TrainSummary(epoch=epoch, nll=nll, geom_loss=geom, total=total))
            logger.info(f"Epoch {epoch}: nll={nll:.4f} geom={geom:.6f} total={total:.4f}")

        self._write_log(tcfg.log_path)
        return TrainResult(state=self.state, flow=self.flow, embedder=self.embedder)

    def _step(self, batch_x: Tensor, batch_attrs: Tensor, rng: np.random.Generator, epoch: int) -> LossTerms:
        zero_grad(self.params)
        terms = total_loss(self.flow, self.embedder, batch_x, batch_attrs, self.cfg, rng)
        loss = terms.total.item()
        if not math.isfinite(loss):
            logger.error(f"Loss diverged at step {self.state.step + 1}")
            raise TrainingDivergedError(self.state.step + 1, epoch, loss)
        backward(terms.total)
        grads = [p.grad for p in self.params]
        if self.cfg.train.grad_clip is not None:
            clip_gradients(grads, self.cfg.train.grad_clip)
        adam_step(self.state, self.params, grads, self.cfg.train)
        return terms


def train(dataset: Dataset, flow: FlowModel, embedder: SemanticEmbedder, cfg: RunConfig) -> TrainResult:
    return Trainer(flow, embedder, cfg).train(dataset)
