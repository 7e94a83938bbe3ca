"""
Single-layer softmax classifier trained by cross-entropy with Adam.
"""
from typing import Sequence

import numpy as np

from app.core.tensor import Tensor, backward, exp, log, mul, sum_rows, tensor_mean
from app.core.training import TrainState, adam_step
from app.errors import ContractError
from app.models import ClassifierConfig, TrainConfig


def cross_entropy(logits: Tensor, targets: np.ndarray) -> Tensor:
    """Mean negative log-softmax of the target column."""
    shift = Tensor(logits.values.max(axis=1, keepdims=True))
    shifted = logits - shift
    log_norm = log(sum_rows(exp(shifted)))
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(targets)), targets] = 1.0
    picked = sum_rows(mul(shifted, Tensor(onehot)))
    return tensor_mean(log_norm - picked)


class SoftmaxClassifier:
    """Zero-initialised linear softmax over an ordered list of class ids."""

    def __init__(self, dim: int, class_ids: Sequence[int]):
        if not class_ids:
            raise ContractError("classifier needs at least one class")
        self.class_ids = np.array(class_ids, dtype=np.int64)
        self.weight = Tensor.zeros(dim, len(class_ids), requires_grad=True)
        self.bias = Tensor.zeros(1, len(class_ids), requires_grad=True)

    def logits(self, x: Tensor) -> Tensor:
        return x @ self.weight + self.bias

    def predict_index(self, features: np.ndarray) -> np.ndarray:
        scores = features @ self.weight.values + self.bias.values
        return scores.argmax(axis=1)

    def predict(self, features: np.ndarray) -> np.ndarray:
        return self.class_ids[self.predict_index(features)]

    def parameters(self):
        return [self.weight, self.bias]


def train_classifier(
    features: np.ndarray,
    labels: np.ndarray,
    class_ids: Sequence[int],
    cfg: ClassifierConfig,
) -> SoftmaxClassifier:
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if features.size == 0 or len(labels) == 0:
        raise ContractError("classifier training set is empty")
    lookup = {int(c): i for i, c in enumerate(class_ids)}
    try:
        targets = np.array([lookup[int(c)] for c in labels], dtype=np.int64)
    except KeyError as e:
        raise ContractError(f"label {e.args[0]} is outside the classifier label space")

    clf = SoftmaxClassifier(features.shape[1], class_ids)
    params = clf.parameters()
    state = TrainState()
    opt = TrainConfig(learning_rate=cfg.learning_rate, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    n = len(labels)
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            rows = order[start:start + cfg.batch_size]
            for p in params:
                p.zero_grad()
            loss = cross_entropy(clf.logits(Tensor(features[rows])), targets[rows])
            backward(loss)
            adam_step(state, params, [p.grad for p in params], opt)
    return clf
